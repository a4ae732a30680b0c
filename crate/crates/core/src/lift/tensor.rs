//! Three-mode tensors stored through their mode-1 matricization.
//!
//! Kronecker convention: `x ⊗ y` places `x_a * y_b` at position `a * n + b`
//! (0-based). A tensor `T(i1, i2, i3)` of shape `n1 x n2 x n3` has mode-1
//! matricization `H[i1, i3 * n2 + i2] = T(i1, i2, i3)`, so `H (x ⊗ y)`
//! contracts mode 3 with `x` and mode 2 with `y`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A cubic tensor `n x n x n` acting as a quadratic operator.
pub trait QuadraticTensor: Send + Sync {
    fn dim(&self) -> usize;

    /// `out = H (x ⊗ y)`.
    fn apply_into(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// `out = H^(2) (x ⊗ w)`, i.e. `out[i2] = sum T(i1, i2, i3) x[i3] w[i1]`.
    fn apply_mode2_into(&self, x: &[f64], w: &[f64], out: &mut [f64]);

    fn apply(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.apply_into(x.as_slice(), y.as_slice(), out.as_mut_slice());
        out
    }

    fn apply_mode2(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.apply_mode2_into(x.as_slice(), w.as_slice(), out.as_mut_slice());
        out
    }

    /// Dense mode-1 matricization, `n x n^2`. Only sensible for small `n`.
    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut dense = DMatrix::zeros(n, n * n);
        let mut ea = vec![0.0; n];
        let mut eb = vec![0.0; n];
        let mut col = vec![0.0; n];
        for a in 0..n {
            ea[a] = 1.0;
            for b in 0..n {
                eb[b] = 1.0;
                self.apply_into(&ea, &eb, &mut col);
                dense.column_mut(a * n + b).copy_from_slice(&col);
                eb[b] = 0.0;
            }
            ea[a] = 0.0;
        }
        dense
    }

    /// `H (I ⊗ x) + H (x ⊗ I)`, the Jacobian of `x ↦ H (x ⊗ x)`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply_into(&e, x.as_slice(), &mut left);
            self.apply_into(x.as_slice(), &e, &mut right);
            for i in 0..n {
                jac[(i, j)] = left[i] + right[i];
            }
            e[j] = 0.0;
        }
        jac
    }
}

/// Tensor held as an explicit `n x n^2` mode-1 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    mode1: DMatrix<f64>,
}

impl DenseTensor {
    pub fn new(mode1: DMatrix<f64>) -> Result<Self> {
        let n = mode1.nrows();
        if mode1.ncols() != n * n {
            return Err(Error::dims(format!(
                "mode-1 matrix is {}x{}, expected {n}x{}",
                n,
                mode1.ncols(),
                n * n
            )));
        }
        Ok(DenseTensor { mode1 })
    }

    pub fn zeros(n: usize) -> Self {
        DenseTensor {
            mode1: DMatrix::zeros(n, n * n),
        }
    }

    pub fn mode1(&self) -> &DMatrix<f64> {
        &self.mode1
    }

    pub fn into_mode1(self) -> DMatrix<f64> {
        self.mode1
    }
}

impl QuadraticTensor for DenseTensor {
    fn dim(&self) -> usize {
        self.mode1.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        let data = self.mode1.as_slice();
        for (a, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            for (b, &yb) in y.iter().enumerate() {
                let coef = xa * yb;
                if coef == 0.0 {
                    continue;
                }
                let col = &data[(a * n + b) * n..(a * n + b + 1) * n];
                for (o, h) in out.iter_mut().zip(col) {
                    *o += coef * h;
                }
            }
        }
    }

    fn apply_mode2_into(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let data = self.mode1.as_slice();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i3, &x3) in x.iter().enumerate() {
            if x3 == 0.0 {
                continue;
            }
            for (i2, o) in out.iter_mut().enumerate() {
                let col = &data[(i3 * n + i2) * n..(i3 * n + i2 + 1) * n];
                let dot: f64 = col.iter().zip(w).map(|(h, wv)| h * wv).sum();
                *o += x3 * dot;
            }
        }
    }
}

fn check_dims(m: &DMatrix<f64>, dims: [usize; 3], k: usize) -> Result<()> {
    let expected = match k {
        1 => (dims[0], dims[1] * dims[2]),
        2 => (dims[1], dims[0] * dims[2]),
        3 => (dims[2], dims[0] * dims[1]),
        _ => return Err(Error::invalid(format!("mode {k} is not one of 1, 2, 3"))),
    };
    if m.shape() != expected {
        return Err(Error::dims(format!(
            "mode-{k} matricization of a {dims:?} tensor must be {expected:?}, got {:?}",
            m.shape()
        )));
    }
    Ok(())
}

/// Position of `T(i1, i2, i3)` in the mode-`k` matricization.
fn unfolded_index(idx: [usize; 3], dims: [usize; 3], k: usize) -> (usize, usize) {
    let [i1, i2, i3] = idx;
    match k {
        1 => (i1, i2 + i3 * dims[1]),
        2 => (i2, i1 + i3 * dims[0]),
        _ => (i3, i1 + i2 * dims[0]),
    }
}

fn remap(src: &DMatrix<f64>, dims: [usize; 3], from: usize, to: usize) -> DMatrix<f64> {
    let (rows, cols) = match to {
        1 => (dims[0], dims[1] * dims[2]),
        2 => (dims[1], dims[0] * dims[2]),
        _ => (dims[2], dims[0] * dims[1]),
    };
    let mut out = DMatrix::zeros(rows, cols);
    for i3 in 0..dims[2] {
        for i2 in 0..dims[1] {
            for i1 in 0..dims[0] {
                let idx = [i1, i2, i3];
                out[unfolded_index(idx, dims, to)] = src[unfolded_index(idx, dims, from)];
            }
        }
    }
    out
}

/// Mode-`k` matricization of a tensor of shape `dims`, given its mode-1
/// matricization. Mode 1 returns a copy.
pub fn mode_k_unfold(mode1: &DMatrix<f64>, k: usize, dims: [usize; 3]) -> Result<DMatrix<f64>> {
    if !(1..=3).contains(&k) {
        return Err(Error::invalid(format!("mode {k} is not one of 1, 2, 3")));
    }
    check_dims(mode1, dims, 1)?;
    Ok(remap(mode1, dims, 1, k))
}

/// Inverse of [`mode_k_unfold`]: recovers the mode-1 matricization.
pub fn mode_k_fold(unfolded: &DMatrix<f64>, k: usize, dims: [usize; 3]) -> Result<DMatrix<f64>> {
    check_dims(unfolded, dims, k)?;
    Ok(remap(unfolded, dims, k, 1))
}

/// Which matricization multiplies the Kronecker product of factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KronMode {
    /// `H (R ⊗ S)`
    Mode1,
    /// `H^(2) (R ⊗ S)`
    Mode2,
}

/// Evaluates `H (R ⊗ S)` or `H^(2) (R ⊗ S)` column pair by column pair.
///
/// Column `a * q + b` of the `n x (r q)` result is the tensor contracted with
/// `R[:, a]` and `S[:, b]`; `R ⊗ S` itself is never formed.
pub fn kron_factor_product<T: QuadraticTensor + ?Sized>(
    h: &T,
    mode: KronMode,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = h.dim();
    if r.nrows() != n || s.nrows() != n {
        return Err(Error::dims(format!(
            "factors have {} and {} rows, tensor dimension is {n}",
            r.nrows(),
            s.nrows()
        )));
    }
    let (rc, qc) = (r.ncols(), s.ncols());
    let mut out = DMatrix::zeros(n, rc * qc);
    if n == 0 || rc * qc == 0 {
        return Ok(out);
    }
    out.as_mut_slice()
        .par_chunks_mut(n * qc)
        .enumerate()
        .for_each(|(a, block)| {
            let ra = r.column(a);
            for (b, col) in block.chunks_mut(n).enumerate() {
                let sb = s.column(b);
                match mode {
                    KronMode::Mode1 => h.apply_into(ra.as_slice(), sb.as_slice(), col),
                    KronMode::Mode2 => h.apply_mode2_into(ra.as_slice(), sb.as_slice(), col),
                }
            }
        });
    Ok(out)
}

/// Galerkin/Petrov–Galerkin projection `W^T H (V ⊗ V)` as a dense
/// `n_r x n_r^2` mode-1 matrix.
pub fn project_hessian<T: QuadraticTensor + ?Sized>(
    h: &T,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = h.dim();
    if w.nrows() != n || v.nrows() != n || w.ncols() != v.ncols() {
        return Err(Error::dims(format!(
            "projection bases are {:?} and {:?}, tensor dimension is {n}",
            w.shape(),
            v.shape()
        )));
    }
    let nr = v.ncols();
    if nr > n {
        return Err(Error::dims(format!("reduced size {nr} exceeds {n}")));
    }
    let hv = kron_factor_product(h, KronMode::Mode1, v, v)?;
    Ok(w.transpose() * hv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> DMatrix<f64> {
        DMatrix::from_fn(3, 8, |i, j| (j * 3 + i + 1) as f64)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn mode2_fixture() {
        let m2 = mode_k_unfold(&fixture(), 2, [3, 4, 2]).unwrap();
        let expect = DMatrix::from_row_slice(
            4,
            6,
            &[
                1., 2., 3., 13., 14., 15., 4., 5., 6., 16., 17., 18., 7., 8., 9., 19., 20., 21.,
                10., 11., 12., 22., 23., 24.,
            ],
        );
        assert_eq!(m2, expect);
    }

    #[test]
    fn mode3_fixture() {
        let m3 = mode_k_unfold(&fixture(), 3, [3, 4, 2]).unwrap();
        let expect = DMatrix::from_fn(2, 12, |i, j| (i * 12 + j + 1) as f64);
        assert_eq!(m3, expect);
    }

    #[test]
    fn mode1_is_identity_and_bad_mode_rejected() {
        assert_eq!(mode_k_unfold(&fixture(), 1, [3, 4, 2]).unwrap(), fixture());
        assert!(matches!(
            mode_k_unfold(&fixture(), 4, [3, 4, 2]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            mode_k_unfold(&fixture(), 2, [3, 3, 3]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn dense_apply_matches_kronecker_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 5;
        let h = DenseTensor::new(random_matrix(&mut rng, n, n * n)).unwrap();
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let kron = x.kronecker(&y);
        let expect = h.mode1() * kron;
        assert!((h.apply(&x, &y) - expect).norm() < 1e-13);
    }

    #[test]
    fn dense_mode2_matches_unfolding() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4;
        let h = DenseTensor::new(random_matrix(&mut rng, n, n * n)).unwrap();
        let h2 = mode_k_unfold(h.mode1(), 2, [n, n, n]).unwrap();
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let expect = h2 * x.kronecker(&w);
        assert!((h.apply_mode2(&x, &w) - expect).norm() < 1e-13);
    }

    #[test]
    fn zero_factors_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = DenseTensor::new(random_matrix(&mut rng, 4, 16)).unwrap();
        let r = random_matrix(&mut rng, 4, 2);
        let z = DMatrix::zeros(4, 3);
        for mode in [KronMode::Mode1, KronMode::Mode2] {
            assert_eq!(
                kron_factor_product(&h, mode, &r, &z).unwrap(),
                DMatrix::zeros(4, 6)
            );
            assert_eq!(
                kron_factor_product(&h, mode, &z, &r).unwrap(),
                DMatrix::zeros(4, 6)
            );
        }
    }

    #[test]
    fn identity_projection_densifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = DenseTensor::new(random_matrix(&mut rng, 3, 9)).unwrap();
        let i = DMatrix::identity(3, 3);
        let hr = project_hessian(&h, &i, &i).unwrap();
        assert!((hr - h.mode1()).norm() < 1e-15);
        let hz =
            project_hessian(&h, &DMatrix::zeros(3, 2), &random_matrix(&mut rng, 3, 2)).unwrap();
        assert_eq!(hz, DMatrix::zeros(2, 4));
    }

    proptest! {
        #[test]
        fn fold_inverts_unfold(seed in any::<u64>(), d1 in 1usize..5, d2 in 1usize..5, d3 in 1usize..5, k in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, d1, d2 * d3);
            let u = mode_k_unfold(&m, k, [d1, d2, d3]).unwrap();
            prop_assert_eq!(mode_k_fold(&u, k, [d1, d2, d3]).unwrap(), m);
        }
    }
}
