/// Cyclic Jacobi eigen-decomposition of a symmetric `N×N` matrix.
///
/// Returns eigenvalues in ascending order and the matching unit
/// eigenvectors as the columns of the second result (`vecs[row][col]`).
pub fn jacobi_eigen_symmetric<const N: usize>(mut a: [[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..N)
            .flat_map(|p| ((p + 1)..N).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-300 || off <= f64::EPSILON * 1e-3 * scale {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← Jᵀ A J on rows/cols p, q
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: [usize; N] = std::array::from_fn(|i| i);
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let vals = std::array::from_fn(|i| a[order[i]][order[i]]);
    let mut vecs = [[0.0; N]; N];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..N {
            vecs[row][col] = v[row][src];
        }
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_matrix_is_its_own_decomposition() {
        let (vals, _) = jacobi_eigen_symmetric([[3.0, 0.0], [0.0, -1.0]]);
        assert_eq!(vals, [-1.0, 3.0]);
    }

    #[test]
    fn known_two_by_two() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3 with vectors (1,-1)/√2, (1,1)/√2
        let (vals, vecs) = jacobi_eigen_symmetric([[2.0, 1.0], [1.0, 2.0]]);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        assert!((vecs[0][0].abs() - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((vecs[0][0] + vecs[1][0]).abs() < 1e-14);
    }

    #[test]
    fn random_symmetric_residuals_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mut a = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in i..4 {
                    let x = rng.random_range(-10.0..10.0);
                    a[i][j] = x;
                    a[j][i] = x;
                }
            }
            let (vals, vecs) = jacobi_eigen_symmetric(a);
            let norm_a: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
            for c in 0..4 {
                for r in 0..4 {
                    let av: f64 = (0..4).map(|k| a[r][k] * vecs[k][c]).sum();
                    assert!((av - vals[c] * vecs[r][c]).abs() <= 1e-12 * norm_a);
                }
                for c2 in 0..4 {
                    let d: f64 = (0..4).map(|k| vecs[k][c] * vecs[k][c2]).sum();
                    let expect = if c == c2 { 1.0 } else { 0.0 };
                    assert!((d - expect).abs() < 1e-12);
                }
            }
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
