//! Time integration of original, lifted, shifted and reduced models, and the
//! error metrics used to compare them.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lift::QuadraticSystem;
use crate::swing::SwingModel;

/// An autonomous-between-breakpoints ODE `x' = f(t, x)` with outputs.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn output_dim(&self) -> usize;

    fn output(&self, x: &[f64], y: &mut [f64]);

    /// Reconstructed lifted state `[delta; omega; s; c]`, when the model has one.
    fn lifted_state(&self, _x: &[f64]) -> Option<DVector<f64>> {
        None
    }

    /// Times at which the vector field is discontinuous; steps never cross them.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Piecewise-constant input `u(t) = values[k]` for `t >= starts[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSchedule {
    starts: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl InputSchedule {
    pub fn constant(u: DVector<f64>) -> Self {
        InputSchedule {
            starts: vec![f64::NEG_INFINITY],
            values: vec![u],
        }
    }

    /// Adds a switch to `u` at time `t`; switches must be added in increasing time.
    pub fn then_at(mut self, t: f64, u: DVector<f64>) -> Result<Self> {
        let last = *self.starts.last().expect("schedule is never empty");
        if !(t > last) || u.len() != self.values[0].len() {
            return Err(Error::invalid(format!(
                "input switch at t = {t} must come after {last} with {} entries",
                self.values[0].len()
            )));
        }
        self.starts.push(t);
        self.values.push(u);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn at(&self, t: f64) -> &DVector<f64> {
        let k = self.starts.partition_point(|s| *s <= t).saturating_sub(1);
        &self.values[k]
    }

    pub fn switch_times(&self) -> Vec<f64> {
        self.starts[1..].to_vec()
    }
}

/// Quadratic system driven by an input schedule.
#[derive(Debug, Clone)]
pub struct QuadraticModel<'a> {
    pub sys: &'a QuadraticSystem,
    pub input: InputSchedule,
}

impl<'a> QuadraticModel<'a> {
    pub fn new(sys: &'a QuadraticSystem, input: InputSchedule) -> Result<Self> {
        if input.len() != sys.m() {
            return Err(Error::dims(format!(
                "input has {} entries, system expects {}",
                input.len(),
                sys.m()
            )));
        }
        Ok(QuadraticModel { sys, input })
    }
}

impl Dynamics for QuadraticModel<'_> {
    fn dim(&self) -> usize {
        self.sys.n()
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.sys.rhs_into(x, self.input.at(t).as_slice(), out);
    }

    fn output_dim(&self) -> usize {
        self.sys.p()
    }

    fn output(&self, x: &[f64], y: &mut [f64]) {
        let full = &self.sys.origin + DVector::from_column_slice(x);
        y.copy_from_slice((&self.sys.c * full).as_slice());
    }

    fn lifted_state(&self, x: &[f64]) -> Option<DVector<f64>> {
        if self.sys.n().is_multiple_of(4) {
            Some(&self.sys.origin + DVector::from_column_slice(x))
        } else {
            None
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.input.switch_times()
    }
}

impl Dynamics for SwingModel<'_> {
    fn dim(&self) -> usize {
        SwingModel::dim(self)
    }

    fn rhs(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        self.rhs_into(x, out);
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn output(&self, x: &[f64], y: &mut [f64]) {
        let n = self.params.n_o();
        y[0] = x[..n].iter().sum::<f64>() / n as f64;
    }

    fn lifted_state(&self, x: &[f64]) -> Option<DVector<f64>> {
        let n = self.params.n_o();
        Some(DVector::from_fn(4 * n, |i, _| match i / n {
            0 | 1 => x[i],
            2 => x[i - 2 * n].sin(),
            _ => x[i - 3 * n].cos(),
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Number of points of the uniform output grid, endpoints included.
    pub output_grid: usize,
    pub max_steps: usize,
    /// State magnitude treated as blow-up.
    pub blowup: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-8,
            atol: 1e-10,
            output_grid: 201,
            max_steps: 10_000_000,
            blowup: 1e8,
        }
    }
}

impl IntegratorOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        IntegratorOptions {
            rtol,
            atol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub rtol: f64,
    pub atol: f64,
}

/// Samples of a simulation on a uniform grid. Row `k` of `states`/`outputs`
/// belongs to `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    /// Reconstructed lifted states, one per row, when the model exposes them.
    pub lifted: Option<DMatrix<f64>>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn final_state(&self) -> DVector<f64> {
        self.states.row(self.states.nrows() - 1).transpose()
    }

    /// Snapshot matrix with one state per column.
    pub fn snapshot_matrix(&self) -> DMatrix<f64> {
        self.states.transpose()
    }
}

// Dormand–Prince 5(4) tableau with Hairer's dense output.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

struct Stepper<'m> {
    model: &'m dyn Dynamics,
    n: usize,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
    cont: [Vec<f64>; 5],
    evals: usize,
    // stage times are kept strictly inside the current smooth segment
    segment_end: f64,
}

impl<'m> Stepper<'m> {
    fn new(model: &'m dyn Dynamics) -> Self {
        let n = model.dim();
        let z = || vec![0.0; n];
        Stepper {
            model,
            n,
            k: [z(), z(), z(), z(), z(), z(), z()],
            tmp: z(),
            y1: z(),
            cont: [z(), z(), z(), z(), z()],
            evals: 0,
            segment_end: f64::INFINITY,
        }
    }

    fn eval(&mut self, t: f64, stage: usize) {
        let t = t.min(self.segment_end.next_down());
        let (tmp, k) = (&self.tmp, &mut self.k[stage]);
        self.model.rhs(t, tmp, k);
        self.evals += 1;
    }

    /// One trial step from `(t, y)` with `k[0] = f(t, y)` already set.
    /// Returns the scaled error norm; the candidate is left in `y1`/`k[6]`.
    fn attempt(&mut self, t: f64, y: &[f64], h: f64, rtol: f64, atol: f64) -> f64 {
        for s in 1..7 {
            for i in 0..self.n {
                let mut acc = 0.0;
                for (j, a) in A[s].iter().enumerate().take(s) {
                    acc += a * self.k[j][i];
                }
                self.tmp[i] = y[i] + h * acc;
            }
            self.eval(t + C[s] * h, s);
        }
        // stage 7 was evaluated at the 5th-order solution
        self.y1.copy_from_slice(&self.tmp);
        let mut err = 0.0;
        for i in 0..self.n {
            let mut e = 0.0;
            for (s, es) in E.iter().enumerate() {
                e += es * self.k[s][i];
            }
            let sc = atol + rtol * y[i].abs().max(self.y1[i].abs());
            err += (h * e / sc).powi(2);
        }
        (err / self.n.max(1) as f64).sqrt()
    }

    fn prepare_dense(&mut self, y: &[f64], h: f64) {
        for i in 0..self.n {
            let ydiff = self.y1[i] - y[i];
            let bspl = h * self.k[0][i] - ydiff;
            self.cont[0][i] = y[i];
            self.cont[1][i] = ydiff;
            self.cont[2][i] = bspl;
            self.cont[3][i] = ydiff - h * self.k[6][i] - bspl;
            let mut d = 0.0;
            for (s, ds) in D.iter().enumerate() {
                d += ds * self.k[s][i];
            }
            self.cont[4][i] = h * d;
        }
    }

    fn dense(&self, theta: f64, out: &mut [f64]) {
        let s1 = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            let c = |j: usize| self.cont[j][i];
            *o = c(0) + theta * (c(1) + s1 * (c(2) + theta * (c(3) + s1 * c(4))));
        }
    }
}

fn weighted_rms(v: &[f64], y: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter()
        .zip(y)
        .map(|(a, b)| (a / (atol + rtol * b.abs())).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Adaptive Dormand–Prince 5(4) integration sampled on a uniform grid of
/// `opts.output_grid` points spanning `t_span`.
///
/// Failing to make progress (step size underflow, non-finite or exploding
/// states, step budget exhausted) yields [`Error::SimulationFailure`] with the
/// time reached.
pub fn integrate(
    model: &dyn Dynamics,
    x0: &DVector<f64>,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let n = model.dim();
    let (t0, t1) = t_span;
    if x0.len() != n {
        return Err(Error::dims(format!(
            "initial state has length {} for dimension {n}",
            x0.len()
        )));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::invalid("rtol and atol must be positive"));
    }
    if !(t1 > t0) || opts.output_grid < 2 {
        return Err(Error::invalid(
            "need t_end > t_start and at least two output points",
        ));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state is not finite"));
    }
    let grid: Vec<f64> = (0..opts.output_grid)
        .map(|k| {
            if k + 1 == opts.output_grid {
                t1
            } else {
                t0 + (t1 - t0) * k as f64 / (opts.output_grid - 1) as f64
            }
        })
        .collect();
    let p = model.output_dim();
    let mut states = DMatrix::zeros(grid.len(), n);
    let mut outputs = DMatrix::zeros(grid.len(), p);
    let mut ybuf = vec![0.0; p];
    let mut record =
        |row: usize, x: &[f64], states: &mut DMatrix<f64>, outputs: &mut DMatrix<f64>| {
            for (j, v) in x.iter().enumerate() {
                states[(row, j)] = *v;
            }
            model.output(x, &mut ybuf);
            for (j, v) in ybuf.iter().enumerate() {
                outputs[(row, j)] = *v;
            }
        };

    let mut stops: Vec<f64> = model
        .breakpoints()
        .into_iter()
        .filter(|b| *b > t0 && *b < t1)
        .collect();
    stops.push(t1);

    let mut st = Stepper::new(model);
    let mut stats = IntegratorStats {
        rtol: opts.rtol,
        atol: opts.atol,
        ..Default::default()
    };
    let mut t = t0;
    let mut y: Vec<f64> = x0.as_slice().to_vec();
    record(0, &y, &mut states, &mut outputs);
    let mut next_out = 1;
    let mut h = 0.0;

    for &stop in &stops {
        // fresh derivative at the start of every smooth segment
        st.segment_end = stop;
        st.tmp.copy_from_slice(&y);
        st.eval(t, 0);
        if h == 0.0 {
            h = initial_step(&mut st, t, &y, stop - t, opts);
        }
        let mut last_rejected = false;
        while t < stop {
            let remaining = stop - t;
            let hmin = 16.0 * f64::EPSILON * t.abs().max(1.0);
            if h >= remaining || remaining - h < hmin {
                h = remaining;
            }
            if h < hmin {
                return Err(Error::SimulationFailure {
                    time: t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(Error::SimulationFailure {
                    time: t,
                    reason: format!("step budget of {} exhausted", opts.max_steps),
                });
            }
            let err = st.attempt(t, &y, h, opts.rtol, opts.atol);
            if !err.is_finite() {
                stats.rejected += 1;
                h *= 0.1;
                last_rejected = true;
                continue;
            }
            if err <= 1.0 {
                stats.accepted += 1;
                st.prepare_dense(&y, h);
                let t_new = if h == remaining { stop } else { t + h };
                while next_out < grid.len() && grid[next_out] <= t_new {
                    let theta = ((grid[next_out] - t) / h).clamp(0.0, 1.0);
                    let mut xs = vec![0.0; n];
                    st.dense(theta, &mut xs);
                    if grid[next_out] == t_new {
                        xs.copy_from_slice(&st.y1);
                    }
                    record(next_out, &xs, &mut states, &mut outputs);
                    next_out += 1;
                }
                t = t_new;
                y.copy_from_slice(&st.y1);
                let k6 = st.k[6].clone();
                st.k[0].copy_from_slice(&k6);
                if y.iter().any(|v| !v.is_finite() || v.abs() > opts.blowup) {
                    return Err(Error::SimulationFailure {
                        time: t,
                        reason: "state blew up".into(),
                    });
                }
                let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, if last_rejected { 1.0 } else { 10.0 });
                h *= fac;
                last_rejected = false;
            } else {
                stats.rejected += 1;
                h *= (0.9 * err.powf(-0.2)).max(0.2);
                last_rejected = true;
            }
        }
    }
    while next_out < grid.len() {
        record(next_out, &y, &mut states, &mut outputs);
        next_out += 1;
    }
    stats.rhs_evals = st.evals;
    let lifted = if model.lifted_state(x0.as_slice()).is_some() {
        let rows: Vec<_> = (0..grid.len())
            .map(|r| {
                let x: Vec<f64> = states.row(r).iter().copied().collect();
                model
                    .lifted_state(&x)
                    .expect("lifted state availability is fixed")
                    .transpose()
            })
            .collect();
        Some(DMatrix::from_rows(&rows))
    } else {
        None
    };
    Ok(Trajectory {
        times: grid,
        states,
        outputs,
        lifted,
        stats,
    })
}

fn initial_step(st: &mut Stepper, t: f64, y: &[f64], span: f64, opts: &IntegratorOptions) -> f64 {
    let d0 = weighted_rms(y, y, opts.rtol, opts.atol);
    let d1 = weighted_rms(&st.k[0], y, opts.rtol, opts.atol);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span);
    let f0 = st.k[0].clone();
    for i in 0..st.n {
        st.tmp[i] = y[i] + h0 * f0[i];
    }
    st.eval(t + h0, 1);
    let diff: Vec<f64> = st.k[1].iter().zip(&f0).map(|(a, b)| (a - b) / h0).collect();
    let d2 = weighted_rms(&diff, y, opts.rtol, opts.atol);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Discrepancy between a reference and an approximating simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    /// `sqrt(∫ ||y - ŷ||^2 dt)`
    pub l2_output_error: f64,
    /// `sqrt(∫ ||s∘s + c∘c - 1||^2 dt)` of the approximating model.
    pub pti_l2: f64,
    pub max_abs_output_error: f64,
}

/// Composite trapezoid rule on a (not necessarily uniform) grid.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Pythagorean-identity violation of lifted states (one per row), in L2 over time.
pub fn pti_l2(times: &[f64], lifted: &DMatrix<f64>) -> f64 {
    let n_o = lifted.ncols() / 4;
    let sq: Vec<f64> = (0..lifted.nrows())
        .map(|r| {
            (0..n_o)
                .map(|i| {
                    let s = lifted[(r, 2 * n_o + i)];
                    let c = lifted[(r, 3 * n_o + i)];
                    (s * s + c * c - 1.0).powi(2)
                })
                .sum::<f64>()
        })
        .collect();
    trapezoid(times, &sq).max(0.0).sqrt()
}

/// Output and identity errors of `approx` against `reference` on a shared grid.
pub fn compare(reference: &Trajectory, approx: &Trajectory) -> Result<ErrorReport> {
    if reference.times.len() != approx.times.len()
        || reference
            .times
            .iter()
            .zip(&approx.times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::dims("trajectories are sampled on different grids"));
    }
    if reference.outputs.ncols() != approx.outputs.ncols() {
        return Err(Error::dims("trajectories have different output counts"));
    }
    let diff = &reference.outputs - &approx.outputs;
    let sq: Vec<f64> = diff.row_iter().map(|r| r.norm_squared()).collect();
    let l2 = trapezoid(&reference.times, &sq).max(0.0).sqrt();
    let pti = match (&approx.lifted, &reference.lifted) {
        (Some(l), _) | (None, Some(l)) => pti_l2(&approx.times, l),
        (None, None) => 0.0,
    };
    Ok(ErrorReport {
        l2_output_error: l2,
        pti_l2: pti,
        max_abs_output_error: diff.amax(),
    })
}

/// Which columns [`write_trajectory_csv`] emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvColumns {
    Outputs,
    States,
}

/// Writes `# columns: ...` followed by a `t,...` header and one row per sample.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, cols: CsvColumns, mut w: W) -> Result<()> {
    let (m, prefix, what) = match cols {
        CsvColumns::Outputs => (&traj.outputs, "y", "model outputs"),
        CsvColumns::States => (&traj.states, "x", "state vector entries"),
    };
    let names: Vec<String> = (1..=m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    writeln!(
        w,
        "# columns: t (s), then {what} {prefix}1..{prefix}{} in model order",
        m.ncols()
    )?;
    writeln!(w, "t,{}", names.join(","))?;
    for (r, t) in traj.times.iter().enumerate() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{t:e},{}", row.join(","))?;
    }
    Ok(())
}
