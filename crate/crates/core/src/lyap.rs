//! Dense Lyapunov solves with low-rank factors, SVD column compression and
//! positive-definiteness repair.

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative tolerance for [`truncate_lr`]: double-precision unit roundoff.
pub const MACHINE_TAU: f64 = 1.1102e-16;

/// Default `epsilon_scale` for [`nearest_spd`].
pub const DEFAULT_SPD_EPSILON: f64 = 1e-10;

/// Tall factor `R` standing for the positive semidefinite matrix `R R^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    pub factor: DMatrix<f64>,
    pub tolerance_used: f64,
}

impl LowRankFactor {
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.factor.nrows()
    }

    /// Dense `R R^T`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Frobenius norm of `A X + X A^T + G G^T` (or the transposed form).
pub fn lyapunov_residual(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    transpose: bool,
) -> f64 {
    let ax = if transpose { a.transpose() * x } else { a * x };
    (&ax + ax.transpose() + g * g.transpose()).norm()
}

/// Solves `M X + X M^H = C` for upper-triangular `M` by column back-substitution.
fn triangular_lyapunov(
    t: &DMatrix<Complex<f64>>,
    c: &DMatrix<Complex<f64>>,
) -> Result<DMatrix<Complex<f64>>> {
    let n = t.nrows();
    let mut y = DMatrix::<Complex<f64>>::zeros(n, n);
    let mut rhs = vec![Complex::new(0.0, 0.0); n];
    for j in (0..n).rev() {
        rhs.copy_from_slice(c.column(j).as_slice());
        for k in (j + 1)..n {
            let coef = t[(j, k)].conj();
            if coef != Complex::new(0.0, 0.0) {
                for (r, yk) in rhs.iter_mut().zip(y.column(k).iter()) {
                    *r -= coef * yk;
                }
            }
        }
        let shift = t[(j, j)].conj();
        for k in (0..n).rev() {
            let denom = t[(k, k)] + shift;
            if denom.norm() == 0.0 {
                return Err(Error::Numerical(
                    "singular Lyapunov operator (eigenvalues sum to zero)".into(),
                ));
            }
            let yk = rhs[k] / denom;
            y[(k, j)] = yk;
            for (r, tv) in rhs[..k].iter_mut().zip(t.column(k).iter()) {
                *r -= tv * yk;
            }
        }
    }
    Ok(y)
}

/// Complex triangular Schur form `M = U T U^*`, obtained from the real
/// quasi-triangular form by rotating away each 2x2 block.
fn complex_schur(m: DMatrix<f64>) -> Result<(DMatrix<Complex<f64>>, DMatrix<Complex<f64>>)> {
    let n = m.nrows();
    let schur = nalgebra_lapack::Schur::try_new(m)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    let (q, tr) = schur.unpack();
    let mut u = q.map(|v| Complex::new(v, 0.0));
    let mut t = tr.map(|v| Complex::new(v, 0.0));
    for k in (0..n.saturating_sub(1)).rev() {
        let sub = t[(k + 1, k)];
        if sub == Complex::new(0.0, 0.0) {
            continue;
        }
        // eigenvalue of the 2x2 block, measured from its lower diagonal entry
        let (p, q2, r, s) = (t[(k, k)], t[(k, k + 1)], sub, t[(k + 1, k + 1)]);
        let half = (p - s) * 0.5;
        let mu = half + (half * half + q2 * r).sqrt();
        let norm = (mu.norm_sqr() + r.norm_sqr()).sqrt();
        let (c, sn) = (mu / norm, r / norm);
        // G = [c^* s^*; -s c], unitary
        let g = [[c.conj(), sn.conj()], [-sn, c]];
        for j in k..n {
            let (x, y) = (t[(k, j)], t[(k + 1, j)]);
            t[(k, j)] = g[0][0] * x + g[0][1] * y;
            t[(k + 1, j)] = g[1][0] * x + g[1][1] * y;
        }
        for i in 0..n {
            if i <= k + 1 {
                let (x, y) = (t[(i, k)], t[(i, k + 1)]);
                t[(i, k)] = x * g[0][0].conj() + y * g[0][1].conj();
                t[(i, k + 1)] = x * g[1][0].conj() + y * g[1][1].conj();
            }
            let (x, y) = (u[(i, k)], u[(i, k + 1)]);
            u[(i, k)] = x * g[0][0].conj() + y * g[0][1].conj();
            u[(i, k + 1)] = x * g[1][0].conj() + y * g[1][1].conj();
        }
        t[(k + 1, k)] = Complex::new(0.0, 0.0);
    }
    Ok((u, t))
}

/// Dense solution of `A X + X A^T + G G^T = 0` (or `A^T X + X A + G G^T = 0`
/// when `transpose` is set) by complex Schur decomposition and triangular
/// back-substitution. The result is symmetrized.
pub fn solve_lyapunov_dense(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    transpose: bool,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || g.nrows() != n {
        return Err(Error::dims(format!(
            "Lyapunov solve with A {:?} and G {:?}",
            a.shape(),
            g.shape()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let m = if transpose { a.transpose() } else { a.clone() };
    let (u, t) = complex_schur(m)?;
    let max_re = (0..n)
        .map(|i| t[(i, i)].re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_re >= 0.0 {
        return Err(Error::Unstable {
            max_real_part: max_re,
            hint: "the Lyapunov operator needs a Hurwitz matrix".into(),
        });
    }
    let ggt = (g * g.transpose()).map(|v| Complex::new(-v, 0.0));
    let rhs = u.adjoint() * ggt * &u;
    let y = triangular_lyapunov(&t, &rhs)?;
    let x = (&u * y * u.adjoint()).map(|v| v.re);
    Ok((&x + x.transpose()) * 0.5)
}

/// Low-rank factor of the Lyapunov solution.
///
/// Negative eigenvalues of the dense solution are clamped to zero, the factor
/// is `V sqrt(Λ)` and it is compressed with [`truncate_lr`] at `tau`.
pub fn solve_lyapunov_lr_with_tau(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    transpose: bool,
    tau: f64,
) -> Result<LowRankFactor> {
    let n = a.nrows();
    let x = solve_lyapunov_dense(a, g, transpose)?;
    if g.iter().all(|v| *v == 0.0) {
        return Ok(LowRankFactor {
            factor: DMatrix::zeros(n, 0),
            tolerance_used: tau,
        });
    }
    let eig = SymmetricEigen::try_new(x, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition failed".into()))?;
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.0).collect();
    let mut factor = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        factor.set_column(c, &(eig.eigenvectors.column(i) * s));
    }
    truncate_lr(&factor, tau)
}

/// [`solve_lyapunov_lr_with_tau`] at the machine-precision tolerance.
pub fn solve_lyapunov_lr(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    transpose: bool,
) -> Result<LowRankFactor> {
    solve_lyapunov_lr_with_tau(a, g, transpose, MACHINE_TAU)
}

/// SVD column compression: keeps `U Σ_l` for the leading singular values with
/// `σ_i^2 > τ σ_1^2`.
pub fn truncate_lr(r: &DMatrix<f64>, tau: f64) -> Result<LowRankFactor> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!(
            "tolerance {tau} must be nonnegative"
        )));
    }
    let n = r.nrows();
    let empty = || LowRankFactor {
        factor: DMatrix::zeros(n, 0),
        tolerance_used: tau,
    };
    if r.ncols() == 0 || n == 0 || r.iter().all(|v| *v == 0.0) {
        return Ok(empty());
    }
    // R R^T only depends on the triangular factor of R^T = Q T.
    let work = if r.ncols() > n {
        r.transpose().qr().r().transpose()
    } else {
        r.clone()
    };
    let svd = work.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return left vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s1 = svd.singular_values[order[0]];
    if s1 == 0.0 {
        return Ok(empty());
    }
    let keep: Vec<usize> = order
        .iter()
        .copied()
        .enumerate()
        .take_while(|&(pos, i)| {
            let s = svd.singular_values[i];
            pos == 0 || (s > 0.0 && s * s > tau * s1 * s1)
        })
        .map(|(_, i)| i)
        .collect();
    let mut factor = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        factor.set_column(c, &(u.column(i) * svd.singular_values[i]));
    }
    Ok(LowRankFactor {
        factor,
        tolerance_used: tau,
    })
}

/// Nearest symmetric positive semidefinite matrix (via the polar factor of
/// the symmetric part) plus `epsilon_scale * ||X||_2 * I`.
pub fn nearest_spd(x: &DMatrix<f64>, epsilon_scale: f64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if x.ncols() != n {
        return Err(Error::dims(format!(
            "nearest_spd needs a square matrix, got {:?}",
            x.shape()
        )));
    }
    if n == 0 {
        return Ok(x.clone());
    }
    let sym = (x + x.transpose()) * 0.5;
    // B = U Σ V^T  ⇒  polar factor (B^T B)^{1/2} = V Σ V^T
    let svd = sym.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right vectors".into()))?;
    let polar = v_t.transpose() * DMatrix::from_diagonal(&svd.singular_values) * &v_t;
    let norm2 = x.clone().svd(false, false).singular_values.max();
    let eps = epsilon_scale * norm2;
    let mut out = (sym + polar) * 0.5;
    let out_t = out.transpose();
    out = (&out + out_t) * 0.5;
    for i in 0..n {
        out[(i, i)] += eps;
    }
    Ok(out)
}

/// Lower-triangular `L` with `L L^T = P`.
pub fn cholesky_factor(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::dims(format!(
            "Cholesky of non-square {:?}",
            p.shape()
        )));
    }
    let asym = (p - p.transpose()).amax();
    if asym > 1e-12 * p.amax() {
        return Err(Error::Numerical(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    nalgebra::Cholesky::new(p.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn complex_schur_is_triangular_and_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // clustered, non-normal eigenvalues are what stalls plain complex QR
        let mut a = random_matrix(&mut rng, 12, 12);
        for i in 0..6 {
            a.row_mut(i).fill(0.0);
            a[(i, i)] = -0.005;
        }
        for m in [a, random_matrix(&mut rng, 9, 9)] {
            let (u, t) = complex_schur(m.clone()).unwrap();
            let n = m.nrows();
            for j in 0..n {
                for i in j + 1..n {
                    assert_eq!(t[(i, j)], Complex::new(0.0, 0.0));
                }
            }
            let eye = DMatrix::<Complex<f64>>::identity(n, n);
            assert!((u.adjoint() * &u - eye).norm() < 1e-13);
            let back = (&u * &t * u.adjoint()).map(|v| v.re);
            assert!((back - &m).norm() < 1e-12 * m.norm());
        }
    }

    #[test]
    fn identity_case() {
        let a = -DMatrix::<f64>::identity(3, 3);
        let g = DMatrix::<f64>::identity(3, 3) * 2f64.sqrt();
        let lr = solve_lyapunov_lr(&a, &g, false).unwrap();
        assert!((lr.gram() - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn diagonal_case_residual() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0]));
        let g = DMatrix::from_element(2, 1, 1.0);
        for transpose in [false, true] {
            let lr = solve_lyapunov_lr(&a, &g, transpose).unwrap();
            assert!(lyapunov_residual(&a, &lr.gram(), &g, transpose) <= 1e-10);
        }
        // X = [[1/2, 1/3], [1/3, 1/4]]
        let x = solve_lyapunov_dense(&a, &g, false).unwrap();
        assert!((x[(0, 1)] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_empty_factor() {
        let a = -DMatrix::<f64>::identity(4, 4);
        let lr = solve_lyapunov_lr(&a, &DMatrix::zeros(4, 2), false).unwrap();
        assert_eq!(lr.rank(), 0);
        assert_eq!(lr.nrows(), 4);
    }

    #[test]
    fn unstable_matrix_is_rejected() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.0]));
        let err = solve_lyapunov_lr(&a, &DMatrix::identity(2, 2), false).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }

    #[test]
    fn nonnormal_with_complex_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let a = random_matrix(&mut rng, n, n) * 3.0 - DMatrix::identity(n, n) * 8.0;
        let g = random_matrix(&mut rng, n, 3);
        for transpose in [false, true] {
            let lr = solve_lyapunov_lr(&a, &g, transpose).unwrap();
            let bound = 1e-8 * (&g * g.transpose()).norm().max(1.0);
            assert!(lyapunov_residual(&a, &lr.gram(), &g, transpose) <= bound);
        }
    }

    #[test]
    fn duplicated_column_truncates_to_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_matrix(&mut rng, 6, 1);
        let r = DMatrix::from_columns(&[v.column(0), v.column(0)]);
        let t = truncate_lr(&r, MACHINE_TAU).unwrap();
        assert_eq!(t.rank(), 1);
        assert!((t.gram() - &v * v.transpose() * 2.0).amax() <= 1e-12);
    }

    #[test]
    fn orthogonal_factor_is_kept_whole() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_matrix(&mut rng, 5, 5).qr().q() * 3.0;
        let t = truncate_lr(&q, 0.5).unwrap();
        assert_eq!(t.rank(), 5);
        assert!((t.gram() - &q * q.transpose()).amax() <= 1e-13 * 9.0);
    }

    #[test]
    fn truncation_of_zero_and_wide_matrices() {
        assert_eq!(
            truncate_lr(&DMatrix::zeros(3, 4), MACHINE_TAU)
                .unwrap()
                .rank(),
            0
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wide = random_matrix(&mut rng, 4, 30);
        let t = truncate_lr(&wide, 0.0).unwrap();
        assert_eq!(t.rank(), 4);
        let rrt = &wide * wide.transpose();
        assert!((t.gram() - &rrt).amax() <= 1e-12 * rrt.amax());
        assert!(truncate_lr(&wide, -1.0).is_err());
    }

    #[test]
    fn truncation_drops_small_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_matrix(&mut rng, 4, 4).qr().q();
        let s = nalgebra::DVector::from_vec(vec![1.0, 1e-3, 1e-9, 1e-12]);
        let r = &q * DMatrix::from_diagonal(&s);
        // σ^2 > τ σ1^2 with τ = 1e-10 keeps 1 and 1e-3 only
        let t = truncate_lr(&r, 1e-10).unwrap();
        assert_eq!(t.rank(), 2);
        assert!((t.gram() - &r * r.transpose()).norm() <= 1e-15);
    }

    #[test]
    fn spd_input_only_gains_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_matrix(&mut rng, 5, 5);
        let p = &m * m.transpose() + DMatrix::identity(5, 5);
        let out = nearest_spd(&p, 1e-10).unwrap();
        let norm2 = p.clone().svd(false, false).singular_values.max();
        let expect = &p + DMatrix::identity(5, 5) * (1e-10 * norm2);
        assert!((out - expect).amax() <= 1e-12 * norm2);
    }

    #[test]
    fn indefinite_diagonal() {
        let x = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        let out = nearest_spd(&x, 1e-10).unwrap();
        assert!((out[(0, 0)] - (1.0 + 1e-10)).abs() < 1e-15);
        assert!((out[(1, 1)] - 1e-10).abs() < 1e-15);
        assert_eq!(out[(0, 1)], 0.0);
        assert!(nearest_spd(&DMatrix::zeros(2, 3), 1e-10).is_err());
    }

    #[test]
    fn nearest_spd_matches_eigenvalue_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let m = random_matrix(&mut rng, 6, 6);
            let x = &m + m.transpose();
            let out = nearest_spd(&x, 1e-10).unwrap();
            let eig = SymmetricEigen::new(x.clone());
            let clipped = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)))
                * eig.eigenvectors.transpose();
            let eps = 1e-10 * x.clone().svd(false, false).singular_values.max();
            let expect = clipped + DMatrix::identity(6, 6) * eps;
            assert!((&out - expect).amax() <= 1e-10);
            let min_eig = SymmetricEigen::new(out).eigenvalues.min();
            // zero eigenvalues of the PSD part carry roundoff of order u * ||X||
            assert!(min_eig >= eps * (1.0 - 1e-4));
            assert!(min_eig > 0.0);
        }
    }

    #[test]
    fn nearest_spd_is_idempotent_up_to_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_matrix(&mut rng, 5, 5);
        let x = &m + m.transpose();
        let once = nearest_spd(&x, 1e-10).unwrap();
        let twice = nearest_spd(&once, 1e-10).unwrap();
        let eps = 1e-10 * x.clone().svd(false, false).singular_values.max();
        let diff = &twice - &once;
        assert!(diff.amax() <= 2.0 * eps * 1.01 + 1e-14);
    }

    #[test]
    fn cholesky_cases() {
        assert_eq!(
            cholesky_factor(&DMatrix::identity(3, 3)).unwrap(),
            DMatrix::identity(3, 3)
        );
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]);
        let l = cholesky_factor(&p).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_factor(&bad), Err(Error::Numerical(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_matrix(&mut rng, 8, 8);
        let p = &m * m.transpose() + DMatrix::identity(8, 8) * 0.1;
        let l = cholesky_factor(&p).unwrap();
        assert!((&l * l.transpose() - &p).norm() <= 1e-12 * p.norm());
    }
}
