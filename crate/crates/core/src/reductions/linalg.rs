//! Dense helpers on row-major `Vec<f64>` matrices, backed by nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn mat(a: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, a)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Eigendecomposition of the symmetric `n x n` matrix `a`. Returns
/// eigenvalues in decreasing order and the matching eigenvectors as the
/// columns of a row-major `n x n` matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::InvalidArgument(format!("expected {} entries, got {}", n * n, a.len())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite matrix entry"));
    }
    let eig = mat(a, n, n).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + dst] = eig.eigenvectors[(k, src)];
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
pub fn identity(n: usize) -> Vec<f64> {
    row_major(&DMatrix::identity(n, n))
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `a (n x k) · b (k x m)`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    row_major(&(mat(a, n, k) * mat(b, k, m)))
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    mat(a, rows, cols).as_slice().to_vec()
}

/// Solve `X g = rhs` for `X` (`rows x n`) with `g` symmetric positive
/// definite; `None` when the Cholesky factorization fails.
pub fn solve_spd_right(g: &[f64], n: usize, rhs: &[f64], rows: usize) -> Option<Vec<f64>> {
    let chol = mat(g, n, n).cholesky()?;
    // X g = R with g symmetric  <=>  g Xᵀ = Rᵀ
    let xt = chol.solve(&mat(rhs, rows, n).transpose());
    xt.iter().all(|v| v.is_finite()).then(|| xt.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.random_range(-1.0..1.0);
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        a
    }

    #[test]
    fn eigen_reconstructs_and_is_orthogonal() {
        for (n, seed) in [(1, 0), (2, 1), (5, 2), (12, 3), (30, 4)] {
            let a = random_symmetric(n, seed);
            let (w, u) = symmetric_eigen(&a, n).unwrap();
            assert!(w.windows(2).all(|p| p[0] >= p[1]));
            let mut ul = u.clone();
            for i in 0..n {
                for j in 0..n {
                    ul[i * n + j] *= w[j];
                }
            }
            let rec = matmul(&ul, &transpose(&u, n, n), n, n, n);
            let diff: Vec<f64> = rec.iter().zip(&a).map(|(x, y)| x - y).collect();
            assert!(frobenius(&diff) / frobenius(&a) < 1e-12, "n={n}");
            let utu = matmul(&transpose(&u, n, n), &u, n, n, n);
            let eye = identity(n);
            assert!(utu.iter().zip(&eye).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn eigen_diagonal_and_repeated() {
        let (w, _) = symmetric_eigen(&[3.0, 0.0, 0.0, 3.0], 2).unwrap();
        assert!(w.iter().all(|v| (v - 3.0).abs() < 1e-14));
        let (w, _) = symmetric_eigen(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_solve() {
        let g = [4.0, 2.0, 2.0, 3.0];
        let x = solve_spd_right(&g, 2, &[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let back = matmul(&x, &g, 2, 2, 2);
        for (b, r) in back.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((b - r).abs() < 1e-12);
        }
        assert!(solve_spd_right(&[1.0, 2.0, 2.0, 1.0], 2, &[1.0, 0.0], 1).is_none());
    }
}
