use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::hessian::{Hessian, LiftedHessian};
use super::tensor::QuadraticTensor;
use crate::error::{Error, Result};
use crate::netparams::NetworkParameters;

/// Lifted state `[delta; omega; s; c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState {
    pub x: DVector<f64>,
}

impl LiftedState {
    pub fn n_o(&self) -> usize {
        self.x.len() / 4
    }

    pub fn delta(&self) -> DVector<f64> {
        self.x.rows(0, self.n_o()).into_owned()
    }

    pub fn omega(&self) -> DVector<f64> {
        self.x.rows(self.n_o(), self.n_o()).into_owned()
    }
}

/// `x = [delta; omega; sin(delta); cos(delta)]`.
pub fn lift_state(delta: &DVector<f64>, omega: &DVector<f64>) -> Result<LiftedState> {
    let n = delta.len();
    if omega.len() != n {
        return Err(Error::dims(format!(
            "delta has length {n} but omega has length {}",
            omega.len()
        )));
    }
    let x = DVector::from_fn(4 * n, |i, _| match i / n.max(1) {
        0 => delta[i],
        1 => omega[i - n],
        2 => delta[i - 2 * n].sin(),
        _ => delta[i - 3 * n].cos(),
    });
    Ok(LiftedState { x })
}

/// `x' = A x + H (x ⊗ x) + B u`, `y = C (origin + x)`.
///
/// `origin` is zero for an unshifted system and the shift point after
/// [`shift_system`]; `x0` is the initial state in the system's own coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSystem {
    pub a: DMatrix<f64>,
    pub h: Hessian,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub origin: DVector<f64>,
}

impl QuadraticSystem {
    pub fn new(
        a: DMatrix<f64>,
        h: Hessian,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        x0: DVector<f64>,
        origin: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n
            || h.dim() != n
            || b.nrows() != n
            || c.ncols() != n
            || x0.len() != n
            || origin.len() != n
        {
            return Err(Error::dims(format!(
                "inconsistent system: A {:?}, H dim {}, B {:?}, C {:?}, x0 {}, origin {}",
                a.shape(),
                h.dim(),
                b.shape(),
                c.shape(),
                x0.len(),
                origin.len()
            )));
        }
        Ok(QuadraticSystem {
            a,
            h,
            b,
            c,
            x0,
            origin,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Right-hand side into a caller-owned buffer of length `n`.
    pub fn rhs_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.h.apply_into(x, x, out);
        let n = self.n();
        let a = self.a.as_slice();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (o, aij) in out.iter_mut().zip(&a[j * n..(j + 1) * n]) {
                    *o += aij * xj;
                }
            }
        }
        let b = self.b.as_slice();
        for (k, &uk) in u.iter().enumerate() {
            if uk != 0.0 {
                for (o, bik) in out.iter_mut().zip(&b[k * n..(k + 1) * n]) {
                    *o += bik * uk;
                }
            }
        }
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * (&self.origin + x)
    }

    /// Sparse triplet dump of A, B and C (1-based `row col value` lines).
    pub fn dump_triplets(&self) -> String {
        let mut out = String::new();
        for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
            let _ = writeln!(out, "# {name} {} {}", m.nrows(), m.ncols());
            for c in 0..m.ncols() {
                for r in 0..m.nrows() {
                    let v = m[(r, c)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{} {} {:e}", r + 1, c + 1, v);
                    }
                }
            }
        }
        out
    }
}

/// Mean-phase-angle output row `[1/n_o 1^T, 0, 0, 0]`.
pub fn mean_angle_output(n_o: usize) -> DMatrix<f64> {
    DMatrix::from_fn(
        1,
        4 * n_o,
        |_, j| if j < n_o { 1.0 / n_o as f64 } else { 0.0 },
    )
}

/// Quadratic lifting of the swing model with the constant drive as the single
/// input column `B = [0; F; 0; 0]` (driven by `u = 1`).
pub fn build_quadratic(params: &NetworkParameters) -> Result<QuadraticSystem> {
    params.validate()?;
    let n_o = params.n_o();
    let n = 4 * n_o;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    for i in 0..n_o {
        a[(i, n_o + i)] = 1.0;
        a[(n_o + i, n_o + i)] = -params.d[i] / (2.0 * params.j[i]);
        b[(n_o + i, 0)] = params.omega_r / (2.0 * params.j[i]) * params.f[i];
    }
    let x0 = lift_state(&DVector::zeros(n_o), &DVector::zeros(n_o))?.x;
    QuadraticSystem::new(
        a,
        Hessian::Lifted(LiftedHessian::new(params)),
        b,
        mean_angle_output(n_o),
        x0,
        DVector::zeros(n),
    )
}

/// Quadratic right-hand side `A x + H (x ⊗ x) + B u`.
pub fn quadratic_rhs(
    sys: &QuadraticSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != sys.n() || u.len() != sys.m() {
        return Err(Error::dims(format!(
            "state length {} / input length {} for a system with n = {}, m = {}",
            x.len(),
            u.len(),
            sys.n(),
            sys.m()
        )));
    }
    let mut out = DVector::zeros(sys.n());
    sys.rhs_into(x.as_slice(), u.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// Re-expresses the system in `x̄ = x - x0` so that `x̄(0) = 0`.
///
/// `Ā = A + H (I ⊗ x0) + H (x0 ⊗ I)`, `B̄ = [B, A x0 + H (x0 ⊗ x0)]`; the new
/// input is `[u; 1]`.
pub fn shift_system(sys: &QuadraticSystem, x0: &DVector<f64>) -> Result<QuadraticSystem> {
    let n = sys.n();
    if x0.len() != n {
        return Err(Error::dims(format!(
            "shift point has length {} for a system of size {n}",
            x0.len()
        )));
    }
    let a_bar = &sys.a + sys.h.jacobian(x0);
    let b0 = &sys.a * x0 + sys.h.apply(x0, x0);
    let mut b_bar = DMatrix::zeros(n, sys.m() + 1);
    b_bar.columns_mut(0, sys.m()).copy_from(&sys.b);
    b_bar.set_column(sys.m(), &b0);
    QuadraticSystem::new(
        a_bar,
        sys.h.clone(),
        b_bar,
        sys.c.clone(),
        &sys.x0 - x0,
        &sys.origin + x0,
    )
}
