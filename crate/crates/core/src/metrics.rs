//! Depth accuracy metrics and the CSV rows they are reported in.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to predicted inverse depth before inverting it.
pub const INV_DEPTH_FLOOR: f64 = 1e-3;

/// Depth reported for an inverse-depth prediction.
pub fn depth_from_inverse(z: f64) -> f64 {
    1.0 / z.max(INV_DEPTH_FLOOR)
}

/// The masked `(d, d̂)` pairs, validated positive.
fn pairs<'a>(d: &'a [f64], d_hat: &'a [f64], mask: Option<&'a [bool]>) -> Result<Vec<(f64, f64)>> {
    if d.len() != d_hat.len() || mask.is_some_and(|m| m.len() != d.len()) {
        return Err(Error::Evaluation(format!(
            "length mismatch: {} ground truth, {} predicted, mask {:?}",
            d.len(),
            d_hat.len(),
            mask.map(<[bool]>::len)
        )));
    }
    let mut out = Vec::with_capacity(d.len());
    for i in 0..d.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let (a, b) = (d[i], d_hat[i]);
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Evaluation(format!("non-positive depth at pixel {i}: {a} / {b}")));
        }
        out.push((a, b));
    }
    if out.is_empty() {
        return Err(Error::Evaluation("no pixels to evaluate".into()));
    }
    Ok(out)
}

pub fn abs_inv(d: &[f64], d_hat: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let p = pairs(d, d_hat, mask)?;
    Ok(p.iter().map(|(a, b)| (1.0 / a - 1.0 / b).abs()).sum::<f64>() / p.len() as f64)
}

pub fn abs_rel(d: &[f64], d_hat: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let p = pairs(d, d_hat, mask)?;
    Ok(p.iter().map(|(a, b)| (a - b).abs() / a).sum::<f64>() / p.len() as f64)
}

/// Scale-invariant RMSE of `ln(d/d̂)` in variance form.
pub fn s_rmse(d: &[f64], d_hat: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let p = pairs(d, d_hat, mask)?;
    let n = p.len() as f64;
    let e: Vec<f64> = p.iter().map(|(a, b)| (a / b).ln()).collect();
    let mean = e.iter().sum::<f64>() / n;
    // centred second moment; algebraically mean(e²) - mean(e)², but exact
    // zero for constant log-ratios
    let var = e.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.max(0.0).sqrt())
}

/// `|1/d - 1/d̂|` for every pixel (no mask, no averaging).
pub fn abs_inv_per_pixel(d: &[f64], d_hat: &[f64]) -> Result<Vec<f64>> {
    pairs(d, d_hat, None)?;
    Ok(d.iter().zip(d_hat).map(|(a, b)| (1.0 / a - 1.0 / b).abs()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub abs_inv: f64,
    pub abs_rel: f64,
    pub s_rmse: f64,
    pub n_pixels: usize,
}

impl MetricsRecord {
    pub fn compute(d: &[f64], d_hat: &[f64], mask: Option<&[bool]>) -> Result<Self> {
        let n_pixels = pairs(d, d_hat, mask)?.len();
        Ok(MetricsRecord {
            abs_inv: abs_inv(d, d_hat, mask)?,
            abs_rel: abs_rel(d, d_hat, mask)?,
            s_rmse: s_rmse(d, d_hat, mask)?,
            n_pixels,
        })
    }

    /// Pixel-weighted mean of several records.
    pub fn pooled(records: &[MetricsRecord]) -> Result<Self> {
        let n: usize = records.iter().map(|r| r.n_pixels).sum();
        if n == 0 {
            return Err(Error::Evaluation("no records to pool".into()));
        }
        let avg = |f: fn(&MetricsRecord) -> f64| records.iter().map(|r| f(r) * r.n_pixels as f64).sum::<f64>() / n as f64;
        Ok(MetricsRecord {
            abs_inv: avg(|r| r.abs_inv),
            abs_rel: avg(|r| r.abs_rel),
            s_rmse: avg(|r| r.s_rmse),
            n_pixels: n,
        })
    }
}

/// One line of a metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub split: String,
    pub n_labels: String,
    pub abs_inv: f64,
    pub abs_rel: f64,
    pub s_rmse: f64,
    pub n_pixels: usize,
}

impl MetricsRow {
    pub fn new(run_id: impl Into<String>, split: impl Into<String>, n_labels: impl ToString, m: &MetricsRecord) -> Self {
        MetricsRow {
            run_id: run_id.into(),
            split: split.into(),
            n_labels: n_labels.to_string(),
            abs_inv: m.abs_inv,
            abs_rel: m.abs_rel,
            s_rmse: m.s_rmse,
            n_pixels: m.n_pixels,
        }
    }
}

pub const METRICS_HEADER: &str = "run_id,split,n_labels,abs_inv,abs_rel,s_rmse,n_pixels";

/// Write rows with the fixed header. Floats use the shortest representation
/// that round-trips, so identical values give identical bytes.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(',')).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Format(format!("unexpected metrics header `{}`", header.join(","))));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(abs_inv(&[1.0, 2.0], &[2.0, 4.0], None).unwrap(), 0.375);
        assert_eq!(abs_rel(&[1.0, 2.0], &[2.0, 1.0], None).unwrap(), 0.75);
        let s = s_rmse(&[1.0, 4.0], &[2.0, 2.0], None).unwrap();
        assert!((s - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(s_rmse(&[1.0, 3.0, 7.0], &[2.0, 6.0, 14.0], None).unwrap(), 0.0);
    }

    #[test]
    fn identical_maps_score_zero() {
        let d = [0.5, 1.5, 3.0];
        let m = MetricsRecord::compute(&d, &d, None).unwrap();
        assert_eq!((m.abs_inv, m.abs_rel, m.s_rmse, m.n_pixels), (0.0, 0.0, 0.0, 3));
    }

    #[test]
    fn mask_and_errors() {
        let d = [1.0, -1.0, 2.0];
        assert!(matches!(abs_inv(&d, &d, None), Err(Error::Evaluation(_))));
        let mask = [true, false, true];
        assert_eq!(abs_inv(&d, &[1.0, 5.0, 2.0], Some(&mask)).unwrap(), 0.0);
        assert!(abs_rel(&d, &d, Some(&[false; 3])).is_err());
        assert!(s_rmse(&[1.0], &[1.0, 2.0], None).is_err());
    }

    #[test]
    fn depth_guard() {
        assert_eq!(depth_from_inverse(0.5), 2.0);
        assert_eq!(depth_from_inverse(-3.0), 1000.0);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let m = MetricsRecord {
            abs_inv: 0.1,
            abs_rel: 1.0 / 3.0,
            s_rmse: 1e-300,
            n_pixels: 17,
        };
        let rows = vec![MetricsRow::new("run-a", "test", "dense", &m), MetricsRow::new("run-a", "test", 1, &m)];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("{METRICS_HEADER}\n")));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);
        let mut empty = Vec::new();
        write_metrics_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{METRICS_HEADER}\n"));
    }
}
