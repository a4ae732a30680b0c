use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gramians::GramianConfig;
use crate::lift::{project_hessian, DenseTensor, Hessian, QuadraticSystem, QuadraticTensor};
use crate::sim::{integrate, Dynamics, InputSchedule, IntegratorOptions};

use super::projection::ProjectionPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReductionMethod {
    BalancedTruncation,
    Pod,
}

impl fmt::Display for ReductionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReductionMethod::BalancedTruncation => "bt",
            ReductionMethod::Pod => "pod",
        })
    }
}

impl FromStr for ReductionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bt" => Ok(ReductionMethod::BalancedTruncation),
            "pod" => Ok(ReductionMethod::Pod),
            other => Err(Error::invalid(format!(
                "unknown method '{other}' (expected bt or pod)"
            ))),
        }
    }
}

/// Projected quadratic model `x̂' = A_r x̂ + H_r (x̂ ⊗ x̂) + B_r ū - [ω̂_s; 0; 0; 0]`
/// with output `ŷ = C x0 + C_r x̂`.
///
/// `x̂` approximates `W^T (x - x0)` where `x0` is the shift point of the full
/// lifted model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedQuadraticModel {
    /// Reduced operators; `h` is dense and `origin`/`x0` are zero.
    pub system: QuadraticSystem,
    pub projections: ProjectionPair,
    pub x0_full: DVector<f64>,
    pub output_offset: DVector<f64>,
    /// Subtracted from the reduced angle equations; empty for unstructured bases.
    pub omega_s_hat: DVector<f64>,
    pub method: ReductionMethod,
    pub gramian_config: Option<GramianConfig>,
}

/// `A_r = W^T A V`, `B_r = W^T B`, `C_r = C V` and `H_r = W^T H (V ⊗ V)`
/// for a shifted lifted system.
pub fn assemble_reduced(
    sys: &QuadraticSystem,
    proj: ProjectionPair,
    method: ReductionMethod,
) -> Result<ReducedQuadraticModel> {
    let n = sys.n();
    if proj.full_dim() != n || proj.w.shape() != proj.v.shape() {
        return Err(Error::dims(format!(
            "bases V {:?}, W {:?} for a system of size {n}",
            proj.v.shape(),
            proj.w.shape()
        )));
    }
    let nr = proj.reduced_dim();
    let wt = proj.w.transpose();
    let a_r = &wt * &sys.a * &proj.v;
    let b_r = &wt * &sys.b;
    let c_r = &sys.c * &proj.v;
    let h_r = DenseTensor::new(project_hessian(&sys.h, &proj.w, &proj.v)?)?;
    let system = QuadraticSystem::new(
        a_r,
        Hessian::Dense(h_r),
        b_r,
        c_r,
        DVector::zeros(nr),
        DVector::zeros(nr),
    )?;
    let omega_s_hat = DVector::zeros(proj.block_rank().unwrap_or(0));
    Ok(ReducedQuadraticModel {
        system,
        output_offset: &sys.c * &sys.origin,
        x0_full: sys.origin.clone(),
        projections: proj,
        omega_s_hat,
        method,
        gramian_config: None,
    })
}

impl ReducedQuadraticModel {
    pub fn n_r(&self) -> usize {
        self.system.n()
    }

    pub fn n_full(&self) -> usize {
        self.x0_full.len()
    }

    pub fn a_r(&self) -> &DMatrix<f64> {
        &self.system.a
    }

    pub fn b_r(&self) -> &DMatrix<f64> {
        &self.system.b
    }

    pub fn c_r(&self) -> &DMatrix<f64> {
        &self.system.c
    }

    pub fn h_r(&self) -> DMatrix<f64> {
        match &self.system.h {
            Hessian::Dense(d) => d.mode1().clone(),
            other => other.to_dense(),
        }
    }

    /// `W^T (x - x0)` for a full lifted state `x`.
    pub fn reduce_state(&self, x_full: &DVector<f64>) -> Result<DVector<f64>> {
        if x_full.len() != self.n_full() {
            return Err(Error::dims(format!(
                "full state has length {}, expected {}",
                x_full.len(),
                self.n_full()
            )));
        }
        Ok(self.projections.w.transpose() * (x_full - &self.x0_full))
    }

    /// `x0 + V x̂`.
    pub fn reconstruct(&self, xr: &DVector<f64>) -> DVector<f64> {
        &self.x0_full + &self.projections.v * xr
    }

    pub fn rhs_into(&self, xr: &[f64], u: &[f64], out: &mut [f64]) {
        self.system.rhs_into(xr, u, out);
        for (o, w) in out.iter_mut().zip(self.omega_s_hat.iter()) {
            *o -= w;
        }
    }

    pub fn rhs(&self, xr: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_r());
        self.rhs_into(xr.as_slice(), u.as_slice(), out.as_mut_slice());
        out
    }

    pub fn output(&self, xr: &DVector<f64>) -> DVector<f64> {
        &self.output_offset + self.c_r() * xr
    }

    /// Largest coupling of the reduced angles into any equation, relative to
    /// the operator scale. Zero for block-structured bases.
    pub fn angle_coupling(&self) -> Result<f64> {
        let r = self.block_rank()?;
        let nr = self.n_r();
        let a = self.a_r();
        let h = self.h_r();
        let mut worst: f64 = a.columns(0, r).amax();
        for i3 in 0..nr {
            for i2 in 0..nr {
                if i2 < r || i3 < r {
                    worst = worst.max(h.column(i3 * nr + i2).amax());
                }
            }
        }
        Ok(worst / a.amax().max(h.amax()).max(f64::MIN_POSITIVE))
    }

    /// Deviation of the reduced angle rows from `δ̂' = ω̂`, ignoring the
    /// constant input column (which carries the initial frequencies).
    pub fn angle_row_error(&self) -> Result<f64> {
        let r = self.block_rank()?;
        let nr = self.n_r();
        let a = self.a_r();
        let mut target = DMatrix::zeros(r, nr);
        target.view_mut((0, r), (r, r)).fill_with_identity();
        let mut worst = (a.rows(0, r) - target).amax();
        let h = self.h_r();
        worst = worst.max(h.rows(0, r).amax());
        let b = self.b_r();
        if b.ncols() > 1 {
            worst = worst.max(b.view((0, 0), (r, b.ncols() - 1)).amax());
        }
        Ok(worst)
    }

    fn block_rank(&self) -> Result<usize> {
        self.projections
            .block_rank()
            .ok_or_else(|| Error::invalid("model has no per-variable block structure"))
    }
}

/// A reduced model driven by an input schedule, started from `x̂(0)`.
#[derive(Debug, Clone)]
pub struct ReducedDynamics<'a> {
    pub model: &'a ReducedQuadraticModel,
    pub input: InputSchedule,
}

impl<'a> ReducedDynamics<'a> {
    pub fn new(model: &'a ReducedQuadraticModel, input: InputSchedule) -> Result<Self> {
        if input.len() != model.system.m() {
            return Err(Error::dims(format!(
                "input has {} entries, reduced model expects {}",
                input.len(),
                model.system.m()
            )));
        }
        Ok(ReducedDynamics { model, input })
    }
}

impl Dynamics for ReducedDynamics<'_> {
    fn dim(&self) -> usize {
        self.model.n_r()
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.model.rhs_into(x, self.input.at(t).as_slice(), out);
    }

    fn output_dim(&self) -> usize {
        self.model.output_offset.len()
    }

    fn output(&self, x: &[f64], y: &mut [f64]) {
        let c = self.model.c_r();
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.model.output_offset[i] + (0..x.len()).map(|j| c[(i, j)] * x[j]).sum::<f64>();
        }
    }

    fn lifted_state(&self, x: &[f64]) -> Option<DVector<f64>> {
        if self.model.n_full().is_multiple_of(4) {
            Some(self.model.reconstruct(&DVector::from_column_slice(x)))
        } else {
            None
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.input.switch_times()
    }
}

// Stiff reduced models are better handed to Newton than integrated for long.
const SETTLE_MAX_STEPS: usize = 500_000;

/// Settings of [`steady_state_adjust`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    pub horizon: f64,
    pub tol: f64,
    pub max_newton_iterations: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        SteadyStateOptions {
            horizon: 100.0,
            tol: 1e-8,
            max_newton_iterations: 100,
        }
    }
}

/// Residual of the angle-free subsystem and the angle rows at `x̂`.
fn split_rhs(
    model: &ReducedQuadraticModel,
    xr: &DVector<f64>,
    u: &DVector<f64>,
    r: usize,
) -> (DVector<f64>, DVector<f64>) {
    let mut f = DVector::zeros(model.n_r());
    model
        .system
        .rhs_into(xr.as_slice(), u.as_slice(), f.as_mut_slice());
    let nr = model.n_r();
    (f.rows(r, nr - r).into_owned(), f.rows(0, r).into_owned())
}

/// Minimum-norm least-squares solution of `[J; sqrt(mu) I] d = [-g; 0]`.
fn damped_step(jac: &DMatrix<f64>, g: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let k = jac.ncols();
    let mut stacked = DMatrix::zeros(jac.nrows() + k, k);
    stacked.rows_mut(0, jac.nrows()).copy_from(jac);
    let mut rhs = DVector::zeros(jac.nrows() + k);
    rhs.rows_mut(0, g.len()).copy_from(&(-g));
    if mu > 0.0 {
        for i in 0..k {
            stacked[(jac.nrows() + i, i)] = mu.sqrt();
        }
    }
    let svd = stacked.svd(true, true);
    let cutoff = 1e-13 * svd.singular_values.max();
    svd.solve(&rhs, cutoff).ok()
}

fn newton_refine(
    model: &ReducedQuadraticModel,
    start: DVector<f64>,
    u: &DVector<f64>,
    r: usize,
    opts: &SteadyStateOptions,
) -> (DVector<f64>, f64) {
    let nr = model.n_r();
    let mut x = start;
    let mut g = split_rhs(model, &x, u, r).0;
    let mut res = g.norm();
    for _ in 0..opts.max_newton_iterations {
        if res <= opts.tol {
            break;
        }
        let jac_full = &model.system.a + model.system.h.jacobian(&x);
        let jac = jac_full.view((r, r), (nr - r, nr - r)).into_owned();
        let scale = jac.norm().max(f64::MIN_POSITIVE);
        // Gauss–Newton first (pseudo-inverse, since the Jacobian may be
        // singular), then increasingly damped steps with backtracking.
        let mut improved = false;
        'damping: for mu in [0.0, 1e-12, 1e-9, 1e-6, 1e-3, 1.0] {
            let Some(step) = damped_step(&jac, &g, mu * scale * scale) else {
                continue;
            };
            let mut t = 1.0;
            for _ in 0..20 {
                let mut trial = x.clone();
                for i in 0..nr - r {
                    trial[r + i] += t * step[i];
                }
                let g_trial = split_rhs(model, &trial, u, r).0;
                let res_trial = g_trial.norm();
                if res_trial.is_finite() && res_trial < (1.0 - 1e-4 * t) * res {
                    x = trial;
                    g = g_trial;
                    res = res_trial;
                    improved = true;
                    break 'damping;
                }
                t *= 0.5;
            }
        }
        if !improved {
            break;
        }
    }
    (x, res)
}

/// Computes the steady reduced frequency `ω̂_s` under `nominal_u` and
/// returns a copy of `model` whose angle equations read `δ̂' = ω̂ - ω̂_s`.
///
/// The angle-free subsystem is integrated from `x̂ = 0` to `opts.horizon`; if
/// its right-hand side is not yet below `opts.tol`, a damped Newton iteration
/// continues from the endpoint. `ω̂_s` is the angle-row right-hand side at the
/// steady state, so it includes any constant contribution of the initial
/// frequencies; it is set to zero when its norm is below `opts.tol`.
pub fn steady_state_adjust(
    model: &ReducedQuadraticModel,
    nominal_u: &DVector<f64>,
    opts: &SteadyStateOptions,
) -> Result<ReducedQuadraticModel> {
    let r = model.block_rank()?;
    if nominal_u.len() != model.system.m() {
        return Err(Error::dims(format!(
            "nominal input has {} entries, model expects {}",
            nominal_u.len(),
            model.system.m()
        )));
    }
    if !(opts.horizon > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::invalid("horizon and tolerance must be positive"));
    }
    let coupling = model.angle_coupling()?;
    if coupling > 1e-10 {
        return Err(Error::Numerical(format!(
            "reduced right-hand side depends on the reduced angles (relative coupling {coupling:e})"
        )));
    }
    let nr = model.n_r();
    let dynamics = ReducedDynamics::new(model, InputSchedule::constant(nominal_u.clone()))?;
    let settle_opts = IntegratorOptions {
        output_grid: 2,
        max_steps: SETTLE_MAX_STEPS,
        ..IntegratorOptions::with_tolerances(1e-10, 1e-12)
    };
    let endpoint = match integrate(
        &dynamics,
        &DVector::zeros(nr),
        (0.0, opts.horizon),
        &settle_opts,
    ) {
        Ok(tr) => tr.final_state(),
        Err(Error::SimulationFailure { time, reason }) => {
            log::warn!(
                "steady-state integration failed at t = {time}: {reason}; trying Newton from zero"
            );
            DVector::zeros(nr)
        }
        Err(e) => return Err(e),
    };
    let (g, _) = split_rhs(model, &endpoint, nominal_u, r);
    let endpoint_res = g.norm();
    let steady = if endpoint_res <= opts.tol {
        endpoint
    } else {
        let (x, res) = newton_refine(model, endpoint, nominal_u, r, opts);
        log::debug!("steady-state refinement: residual {endpoint_res:e} -> {res:e}");
        if res > opts.tol {
            return Err(Error::Convergence(format!(
                "no reduced steady state: residual {endpoint_res:e} after {} s, {res:e} after refinement (tol {:e})",
                opts.horizon, opts.tol
            )));
        }
        x
    };
    let (_, angle_rows) = split_rhs(model, &steady, nominal_u, r);
    let mut adjusted = model.clone();
    // frequencies that already settle to zero need no shift
    adjusted.omega_s_hat = if angle_rows.norm() <= opts.tol {
        DVector::zeros(r)
    } else {
        angle_rows
    };
    Ok(adjusted)
}
