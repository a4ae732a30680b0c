//! Structured Hessian of the lifted swing model.
//!
//! With the lifted state ordered `[delta; omega; s; c]` (blocks of length
//! `n_o`), the quadratic terms are
//!
//! ```text
//! omega_i' ∋ w_i * sum_j ( -hc_ij s_i c_j + hc_ij c_i s_j + hs_ij c_i c_j + hs_ij s_i s_j )
//! s_i'     ∋  c_i omega_i
//! c_i'     ∋ -s_i omega_i
//! ```
//!
//! where `w_i = omega_R / (2 J_i)`, `hs_ij = K_ij sin(gamma_ij)` and
//! `hc_ij = K_ij cos(gamma_ij)`. Only these `O(n_o^2)` coefficients are stored.

use nalgebra::DMatrix;

use super::tensor::{DenseTensor, QuadraticTensor};
use crate::netparams::NetworkParameters;

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedHessian {
    n_o: usize,
    scale: Vec<f64>,
    hs: DMatrix<f64>,
    hc: DMatrix<f64>,
    symmetrized: bool,
}

impl LiftedHessian {
    /// Symmetric Hessian, `H (u ⊗ v) = H (v ⊗ u)`.
    pub fn new(params: &NetworkParameters) -> Self {
        Self::build(params, true)
    }

    /// One-sided placement of every bilinear term (the first Kronecker factor
    /// carries the own-oscillator variable). Same `H (x ⊗ x)`, not symmetric.
    pub fn unsymmetrized(params: &NetworkParameters) -> Self {
        Self::build(params, false)
    }

    fn build(params: &NetworkParameters, symmetrized: bool) -> Self {
        let n = params.n_o();
        let scale = params
            .j
            .iter()
            .map(|j| params.omega_r / (2.0 * j))
            .collect();
        let mut hs = DMatrix::zeros(n, n);
        let mut hc = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (k, g) = (params.k[(i, j)], params.gamma[(i, j)]);
                    hs[(i, j)] = k * g.sin();
                    hc[(i, j)] = k * g.cos();
                }
            }
        }
        LiftedHessian {
            n_o: n,
            scale,
            hs,
            hc,
            symmetrized,
        }
    }

    pub fn n_o(&self) -> usize {
        self.n_o
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrized
    }

    /// `out += alpha * B(u, v)` for the one-sided bilinear form.
    fn one_sided_add(&self, u: &[f64], v: &[f64], alpha: f64, out: &mut [f64]) {
        let n = self.n_o;
        let (us, uc) = (&u[2 * n..3 * n], &u[3 * n..]);
        let (vs, vc, vw) = (&v[2 * n..3 * n], &v[3 * n..], &v[n..2 * n]);
        for i in 0..n {
            let (mut on_s, mut on_c) = (0.0, 0.0);
            for j in 0..n {
                let (hs, hc) = (self.hs[(i, j)], self.hc[(i, j)]);
                on_s += -hc * vc[j] + hs * vs[j];
                on_c += hc * vs[j] + hs * vc[j];
            }
            out[n + i] += alpha * self.scale[i] * (us[i] * on_s + uc[i] * on_c);
            out[2 * n + i] += alpha * uc[i] * vw[i];
            out[3 * n + i] -= alpha * us[i] * vw[i];
        }
    }

    /// Gradient in `v` of `w^T B(x, v)`, accumulated into `out`.
    fn grad_second_add(&self, x: &[f64], w: &[f64], alpha: f64, out: &mut [f64]) {
        let n = self.n_o;
        let (xs, xc) = (&x[2 * n..3 * n], &x[3 * n..]);
        for i in 0..n {
            let a = alpha * w[n + i] * self.scale[i];
            if a != 0.0 {
                for j in 0..n {
                    let (hs, hc) = (self.hs[(i, j)], self.hc[(i, j)]);
                    out[3 * n + j] += a * (-hc * xs[i] + hs * xc[i]);
                    out[2 * n + j] += a * (hs * xs[i] + hc * xc[i]);
                }
            }
            out[n + i] += alpha * (w[2 * n + i] * xc[i] - w[3 * n + i] * xs[i]);
        }
    }

    /// Gradient in `v` of `w^T B(v, x)`, accumulated into `out`.
    fn grad_first_add(&self, x: &[f64], w: &[f64], alpha: f64, out: &mut [f64]) {
        let n = self.n_o;
        let (xs, xc, xw) = (&x[2 * n..3 * n], &x[3 * n..], &x[n..2 * n]);
        for i in 0..n {
            let a = alpha * w[n + i] * self.scale[i];
            if a != 0.0 {
                let (mut on_s, mut on_c) = (0.0, 0.0);
                for j in 0..n {
                    let (hs, hc) = (self.hs[(i, j)], self.hc[(i, j)]);
                    on_s += -hc * xc[j] + hs * xs[j];
                    on_c += hc * xs[j] + hs * xc[j];
                }
                out[2 * n + i] += a * on_s;
                out[3 * n + i] += a * on_c;
            }
            out[3 * n + i] += alpha * w[2 * n + i] * xw[i];
            out[2 * n + i] -= alpha * w[3 * n + i] * xw[i];
        }
    }
}

impl QuadraticTensor for LiftedHessian {
    fn dim(&self) -> usize {
        4 * self.n_o
    }

    fn apply_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.symmetrized {
            self.one_sided_add(x, y, 0.5, out);
            self.one_sided_add(y, x, 0.5, out);
        } else {
            self.one_sided_add(x, y, 1.0, out);
        }
    }

    // H^(2)(x ⊗ w)[k] = d/dv_k of w^T H(x ⊗ v)
    fn apply_mode2_into(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.symmetrized {
            self.grad_second_add(x, w, 0.5, out);
            self.grad_first_add(x, w, 0.5, out);
        } else {
            self.grad_second_add(x, w, 1.0, out);
        }
    }
}

/// Quadratic term of a system: structured for lifted grids, dense otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    Lifted(LiftedHessian),
    Dense(DenseTensor),
}

impl Hessian {
    pub fn zeros(n: usize) -> Self {
        Hessian::Dense(DenseTensor::zeros(n))
    }
}

impl QuadraticTensor for Hessian {
    fn dim(&self) -> usize {
        match self {
            Hessian::Lifted(h) => h.dim(),
            Hessian::Dense(h) => h.dim(),
        }
    }

    fn apply_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            Hessian::Lifted(h) => h.apply_into(x, y, out),
            Hessian::Dense(h) => h.apply_into(x, y, out),
        }
    }

    fn apply_mode2_into(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        match self {
            Hessian::Lifted(h) => h.apply_mode2_into(x, w, out),
            Hessian::Dense(h) => h.apply_mode2_into(x, w, out),
        }
    }
}
