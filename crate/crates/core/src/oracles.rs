//! Brute-force reference solvers for the test suites.
//!
//! These share no code with the production paths they check: the spectrum
//! oracle diagonalizes the Gram matrix with a two-sided cyclic Jacobi
//! eigensolver, and the allocation oracle bisects the clamped budget
//! function instead of running the fixpoint solve.

use rand::Rng;

use crate::spectral::FoldedMatrix;

/// Eigenvalues of the smaller Gram matrix (`MᵀM` or `MMᵀ`), descending.
#[must_use]
pub fn gram_eigenvalues(matrix: &FoldedMatrix) -> Vec<f64> {
    let (r, c) = (matrix.rows(), matrix.cols());
    let n = r.min(c);
    let mut g = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            g[a * n + b] = if c <= r {
                (0..r).map(|k| matrix.get(k, a) * matrix.get(k, b)).sum()
            } else {
                (0..c).map(|k| matrix.get(a, k) * matrix.get(b, k)).sum()
            };
        }
    }
    let mut eig = symmetric_jacobi_eigenvalues(g, n);
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// Singular values derived as square roots of the Gram eigenvalues.
#[must_use]
pub fn eigen_singular_values(matrix: &FoldedMatrix) -> Vec<f64> {
    gram_eigenvalues(matrix)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

/// Classic cyclic Jacobi on a dense symmetric matrix.
fn symmetric_jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-32 * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J with J the (p, q) rotation.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Continuous filter budget `Σ min(ceiling, λ_min·AFIE_max/AFIE_l)·c_l`.
#[must_use]
pub fn clamped_budget(lambda_min: f64, afie: &[f64], filters: &[usize], ceiling: f64) -> f64 {
    let max = afie.iter().copied().fold(f64::MIN, f64::max);
    afie.iter()
        .zip(filters)
        .map(|(a, c)| {
            let r = if *a > 0.0 {
                lambda_min * max / a
            } else {
                f64::INFINITY
            };
            r.min(ceiling) * *c as f64
        })
        .sum()
}

/// Bisects `λ_min` so that the clamped budget meets `global_ratio · Σ c_l`.
#[must_use]
pub fn bisect_lambda_min(afie: &[f64], filters: &[usize], global_ratio: f64, ceiling: f64) -> f64 {
    let target = global_ratio * filters.iter().sum::<usize>() as f64;
    let (mut lo, mut hi) = (0.0f64, ceiling);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clamped_budget(mid, afie, filters, ceiling) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Dense product `a · b`.
#[must_use]
pub fn matmul(a: &FoldedMatrix, b: &FoldedMatrix) -> FoldedMatrix {
    assert_eq!(a.cols(), b.rows(), "inner extents differ");
    FoldedMatrix::from_fn(a.rows(), b.cols(), |r, c| {
        (0..a.cols()).map(|k| a.get(r, k) * b.get(k, c)).sum()
    })
    .expect("finite product")
}

/// Random `n × n` orthogonal matrix: modified Gram-Schmidt on uniform noise.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> FoldedMatrix {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut ok = true;
        for j in 0..n {
            for k in 0..j {
                let d: f64 = cols[j].iter().zip(&cols[k]).map(|(x, y)| x * y).sum();
                let basis = cols[k].clone();
                cols[j]
                    .iter_mut()
                    .zip(&basis)
                    .for_each(|(x, y)| *x -= d * y);
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
        if ok {
            return FoldedMatrix::from_fn(n, n, |r, c| cols[c][r]).expect("finite");
        }
    }
}
