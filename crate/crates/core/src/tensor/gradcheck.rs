//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst per-input relative error `‖a − n‖ / max(‖a‖, ‖n‖)`.
    pub max_rel: f64,
    /// Index of the input attaining `max_rel`.
    pub worst_input: usize,
    /// Number of scalar components compared.
    pub checked: usize,
}

/// Compare the tape gradient of the scalar `f(inputs)` with central
/// differences of step `h`.
///
/// With `per_input = Some(n)`, at most `n` components per input (chosen by
/// `seed`) are compared; otherwise every component is.
pub fn gradient_check<F>(inputs: &[Tensor], f: F, h: f64, per_input: Option<usize>, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = inputs.to_vec();
    let mut report = GradCheck {
        max_rel: 0.0,
        worst_input: 0,
        checked: 0,
    };
    for i in 0..inputs.len() {
        let n = inputs[i].len();
        let idx: Vec<usize> = match per_input {
            Some(k) if k < n => {
                let mut s = sample(&mut rng, n, k).into_vec();
                s.sort_unstable();
                s
            }
            _ => (0..n).collect(),
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for j in idx {
            let x0 = work[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let num = (up - down) / (2.0 * h);
            let a = analytic[i][j];
            diff += (a - num) * (a - num);
            na += a * a;
            nn += num * num;
            report.checked += 1;
        }
        let denom = f64::max(na, nn).sqrt();
        let rel = if denom > 0.0 { diff.sqrt() / denom } else { 0.0 };
        if rel > report.max_rel {
            report.max_rel = rel;
            report.worst_input = i;
        }
    }
    Ok(report)
}
