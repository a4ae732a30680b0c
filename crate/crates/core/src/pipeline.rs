//! End-to-end experiment runs: reduce a network, simulate the full and the
//! reduced model under a scenario, and tabulate errors.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gramians::{approx_gramians, GramianConfig, GramianPair};
use crate::lift::{build_quadratic, lift_state, shift_system, QuadraticSystem};
use crate::netparams::NetworkParameters;
use crate::reduce::{
    assemble_reduced, bt_projections, pod_reduce, steady_state_adjust, PodVariant, ReducedDynamics,
    ReducedQuadraticModel, ReductionMethod, SteadyStateOptions,
};
use crate::sim::{
    compare, integrate, ErrorReport, InputSchedule, IntegratorOptions, QuadraticModel, Trajectory,
};

/// Label of the network model family; carried along as metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    #[default]
    En,
    Sm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::En => "EN",
            ModelKind::Sm => "SM",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EN" => Ok(ModelKind::En),
            "SM" => Ok(ModelKind::Sm),
            _ => Err(Error::invalid(format!(
                "unknown model kind '{s}' (expected EN or SM)"
            ))),
        }
    }
}

/// A 1-based index paired with a value, parsed from `i:value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexedValue {
    pub index: usize,
    pub value: f64,
}

impl FromStr for IndexedValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (i, v) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("expected 'index:value', got '{s}'")))?;
        let index: usize = i
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad index '{i}' in '{s}'")))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad value '{v}' in '{s}'")))?;
        if index == 0 {
            return Err(Error::invalid(format!(
                "indices are 1-based, got 0 in '{s}'"
            )));
        }
        if !value.is_finite() {
            return Err(Error::invalid(format!("value in '{s}' is not finite")));
        }
        Ok(IndexedValue { index, value })
    }
}

/// Everything that determines one reduce-and-compare run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_kind: ModelKind,
    pub method: ReductionMethod,
    pub n_r: usize,
    pub gramians: GramianConfig,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub output_grid: usize,
    /// Sets the initial angle of one oscillator (radians).
    pub perturb_x0: Option<IndexedValue>,
    /// Scales one entry of the input `[u; 1]`.
    pub perturb_u: Option<IndexedValue>,
    /// Common initial frequency of all oscillators, used for the reduction
    /// shift point and the test scenario.
    pub initial_frequency: f64,
    pub seed: u64,
    pub pod_variant: PodVariant,
    /// Snapshot count of the POD training run over `[0, t_end]`.
    pub pod_samples: usize,
    /// `None` skips the steady-state adjustment.
    pub steady_state: Option<SteadyStateOptions>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model_kind: ModelKind::En,
            method: ReductionMethod::BalancedTruncation,
            n_r: 4,
            gramians: GramianConfig::default(),
            t_end: 2.0,
            rtol: 1e-8,
            atol: 1e-10,
            output_grid: 201,
            perturb_x0: None,
            perturb_u: None,
            initial_frequency: 0.0,
            seed: 0,
            pod_variant: PodVariant::Global,
            pod_samples: 201,
            steady_state: Some(SteadyStateOptions::default()),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 {
            return Err(Error::invalid("reduced size must be positive"));
        }
        if self.method == ReductionMethod::BalancedTruncation && !self.n_r.is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "balanced truncation needs a reduced size divisible by 4, got {}",
                self.n_r
            )));
        }
        self.gramians.validate()?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid(format!(
                "end time {} must be positive",
                self.t_end
            )));
        }
        if !self.initial_frequency.is_finite() {
            return Err(Error::invalid("initial frequency must be finite"));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.output_grid < 2 || self.pod_samples < 2 {
            return Err(Error::invalid("output grids need at least two points"));
        }
        if let Some(p) = self.perturb_u {
            if p.index > 2 {
                return Err(Error::invalid(format!(
                    "input index {} out of range; the input is [u; 1]",
                    p.index
                )));
            }
        }
        Ok(())
    }

    /// Checks that depend on the network size.
    pub fn validate_for(&self, params: &NetworkParameters) -> Result<()> {
        self.validate()?;
        let n = 4 * params.n_o();
        if self.n_r > n {
            return Err(Error::invalid(format!(
                "reduced size {} exceeds the lifted dimension {n}",
                self.n_r
            )));
        }
        if let Some(p) = self.perturb_x0 {
            if p.index > params.n_o() {
                return Err(Error::invalid(format!(
                    "oscillator index {} out of range 1..={}",
                    p.index,
                    params.n_o()
                )));
            }
        }
        Ok(())
    }

    fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions {
            output_grid: self.output_grid,
            ..IntegratorOptions::with_tolerances(self.rtol, self.atol)
        }
    }

    /// Input `[u; 1]` of the test scenario.
    pub fn scenario_input(&self) -> DVector<f64> {
        let mut u = nominal_input();
        if let Some(p) = self.perturb_u {
            u[p.index - 1] *= p.value;
        }
        u
    }

    /// Initial lifted state of the test scenario.
    pub fn scenario_state(&self, params: &NetworkParameters) -> Result<DVector<f64>> {
        let n_o = params.n_o();
        let mut delta = DVector::zeros(n_o);
        if let Some(p) = self.perturb_x0 {
            if p.index > n_o {
                return Err(Error::invalid(format!(
                    "oscillator index {} out of range",
                    p.index
                )));
            }
            delta[p.index - 1] = p.value;
        }
        Ok(lift_state(&delta, &DVector::from_element(n_o, self.initial_frequency))?.x)
    }
}

/// Training input `[1; 1]`.
pub fn nominal_input() -> DVector<f64> {
    DVector::from_element(2, 1.0)
}

/// Lifted model of `params` shifted to zero angles and the common frequency
/// `omega0`.
pub fn shifted_system(params: &NetworkParameters, omega0: f64) -> Result<QuadraticSystem> {
    let n_o = params.n_o();
    let mut full = build_quadratic(params)?;
    full.x0 = lift_state(&DVector::zeros(n_o), &DVector::from_element(n_o, omega0))?.x;
    let x0 = full.x0.clone();
    shift_system(&full, &x0)
}

/// What happened to the steady-state adjustment of a reduction.
#[derive(Debug, Clone, PartialEq)]
pub enum SteadyStateStatus {
    NotRequested,
    NotApplicable,
    Adjusted,
    Failed(String),
}

impl fmt::Display for SteadyStateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SteadyStateStatus::NotRequested => f.write_str("skipped"),
            SteadyStateStatus::NotApplicable => f.write_str("not applicable"),
            SteadyStateStatus::Adjusted => f.write_str("adjusted"),
            SteadyStateStatus::Failed(m) => write!(f, "failed: {m}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reduction {
    pub model: ReducedQuadraticModel,
    pub gramians: Option<GramianPair>,
    pub steady_state: SteadyStateStatus,
}

/// Builds the reduced model prescribed by `cfg`.
///
/// A failed steady-state adjustment is logged and leaves the model unadjusted.
pub fn reduce_network(params: &NetworkParameters, cfg: &RunConfig) -> Result<Reduction> {
    cfg.validate_for(params)?;
    let sys = shifted_system(params, cfg.initial_frequency)?;
    let (model, gramians) = match cfg.method {
        ReductionMethod::BalancedTruncation => {
            let gram = approx_gramians(&sys, &cfg.gramians)?;
            let proj = bt_projections(&gram, cfg.n_r)?;
            if proj.repaired.iter().any(|&r| r) {
                log::info!(
                    "frequency-block Gramians repaired to SPD: {:?}",
                    proj.repaired
                );
            }
            let mut model = assemble_reduced(&sys, proj, ReductionMethod::BalancedTruncation)?;
            model.gramian_config = Some(cfg.gramians);
            (model, Some(gram))
        }
        ReductionMethod::Pod => {
            let training = QuadraticModel::new(&sys, InputSchedule::constant(nominal_input()))?;
            let opts = IntegratorOptions {
                output_grid: cfg.pod_samples,
                ..IntegratorOptions::with_tolerances(cfg.rtol, cfg.atol)
            };
            let snapshots = integrate(&training, &sys.x0, (0.0, cfg.t_end), &opts)?;
            (
                pod_reduce(&sys, &snapshots, cfg.n_r, cfg.pod_variant)?,
                None,
            )
        }
    };
    let (model, steady_state) = match (&cfg.steady_state, model.projections.is_block_structured()) {
        (None, _) => (model, SteadyStateStatus::NotRequested),
        (Some(_), false) => (model, SteadyStateStatus::NotApplicable),
        (Some(opts), true) => match steady_state_adjust(&model, &nominal_input(), opts) {
            Ok(adjusted) => (adjusted, SteadyStateStatus::Adjusted),
            Err(e) => {
                log::warn!("steady-state adjustment skipped: {e}");
                (model, SteadyStateStatus::Failed(e.to_string()))
            }
        },
    };
    Ok(Reduction {
        model,
        gramians,
        steady_state,
    })
}

/// Full-order lifted simulation of the test scenario.
pub fn simulate_full(params: &NetworkParameters, cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate_for(params)?;
    let sys = shifted_system(params, cfg.initial_frequency)?;
    let x = cfg.scenario_state(params)? - &sys.origin;
    let model = QuadraticModel::new(&sys, InputSchedule::constant(cfg.scenario_input()))?;
    integrate(&model, &x, (0.0, cfg.t_end), &cfg.integrator())
}

/// Reduced simulation of the test scenario, started from `W^T (x - x0)`.
pub fn simulate_reduced(
    params: &NetworkParameters,
    model: &ReducedQuadraticModel,
    cfg: &RunConfig,
) -> Result<Trajectory> {
    let xr = model.reduce_state(&cfg.scenario_state(params)?)?;
    let dynamics = ReducedDynamics::new(model, InputSchedule::constant(cfg.scenario_input()))?;
    integrate(&dynamics, &xr, (0.0, cfg.t_end), &cfg.integrator())
}

/// Result of one reduce-and-compare run; `failure` mirrors a missing data point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: ReductionMethod,
    pub alpha: Option<f64>,
    pub terms: Option<usize>,
    pub n_r: usize,
    pub report: Option<ErrorReport>,
    pub failure: Option<String>,
}

impl RunRecord {
    fn new(cfg: &RunConfig) -> Self {
        let bt = cfg.method == ReductionMethod::BalancedTruncation;
        RunRecord {
            method: cfg.method,
            alpha: bt.then_some(cfg.gramians.alpha),
            terms: bt.then_some(cfg.gramians.terms),
            n_r: cfg.n_r,
            report: None,
            failure: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Simulates `model` and compares it to a precomputed full-order reference.
pub fn evaluate(
    params: &NetworkParameters,
    model: &ReducedQuadraticModel,
    reference: &Trajectory,
    cfg: &RunConfig,
) -> Result<(RunRecord, Option<Trajectory>)> {
    let mut record = RunRecord::new(cfg);
    match simulate_reduced(params, model, cfg) {
        Ok(tr) => {
            record.report = Some(compare(reference, &tr)?);
            Ok((record, Some(tr)))
        }
        Err(e @ Error::SimulationFailure { .. }) => {
            record.failure = Some(e.to_string());
            Ok((record, None))
        }
        Err(e) => Err(e),
    }
}

/// Reduces and evaluates once. Failures of the reduction or of the reduced
/// simulation are recorded in the result; invalid configurations are errors.
pub fn run_once(
    params: &NetworkParameters,
    reference: &Trajectory,
    cfg: &RunConfig,
) -> Result<RunRecord> {
    cfg.validate_for(params)?;
    let reduction = match reduce_network(params, cfg) {
        Ok(r) => r,
        Err(e) => {
            let mut record = RunRecord::new(cfg);
            log::warn!("{} n_r = {}: reduction failed: {e}", cfg.method, cfg.n_r);
            record.failure = Some(e.to_string());
            return Ok(record);
        }
    };
    let (record, _) = evaluate(params, &reduction.model, reference, cfg)?;
    if let Some(f) = &record.failure {
        log::warn!("{} n_r = {}: {f}", cfg.method, cfg.n_r);
    }
    Ok(record)
}

/// Axes of a parameter sweep. POD runs ignore `alphas` and `terms`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub methods: Vec<ReductionMethod>,
    pub alphas: Vec<f64>,
    pub terms: Vec<usize>,
    pub n_rs: Vec<usize>,
}

impl SweepGrid {
    /// All run configurations in output order, validated up front.
    pub fn configs(&self, base: &RunConfig, params: &NetworkParameters) -> Result<Vec<RunConfig>> {
        if self.methods.is_empty()
            || self.alphas.is_empty()
            || self.terms.is_empty()
            || self.n_rs.is_empty()
        {
            return Err(Error::invalid("every sweep axis needs at least one value"));
        }
        let mut out = Vec::new();
        for &method in &self.methods {
            for &n_r in &self.n_rs {
                match method {
                    ReductionMethod::BalancedTruncation => {
                        for &alpha in &self.alphas {
                            for &terms in &self.terms {
                                out.push(RunConfig {
                                    method,
                                    n_r,
                                    gramians: GramianConfig {
                                        alpha,
                                        terms,
                                        ..base.gramians
                                    },
                                    ..base.clone()
                                });
                            }
                        }
                    }
                    ReductionMethod::Pod => out.push(RunConfig {
                        method,
                        n_r,
                        ..base.clone()
                    }),
                }
            }
        }
        for cfg in &out {
            cfg.validate_for(params)?;
        }
        Ok(out)
    }
}

/// Runs every grid point on a pool of `jobs` threads; rows keep grid order.
pub fn sweep(
    params: &NetworkParameters,
    base: &RunConfig,
    grid: &SweepGrid,
    jobs: usize,
) -> Result<Vec<RunRecord>> {
    let configs = grid.configs(base, params)?;
    let reference = simulate_full(params, base)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| run_once(params, &reference, cfg))
            .collect()
    })
}

#[derive(Serialize)]
struct MetricsRow {
    method: String,
    alpha: Option<f64>,
    #[serde(rename = "N")]
    terms: Option<usize>,
    nr: usize,
    l2_output_error: Option<f64>,
    pti_l2: Option<f64>,
    max_abs_output_error: Option<f64>,
    failed: bool,
}

/// Long-format metrics table, one row per run; missing values are empty fields.
pub fn write_metrics_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(MetricsRow {
            method: r.method.to_string(),
            alpha: r.alpha,
            terms: r.terms,
            nr: r.n_r,
            l2_output_error: r.report.map(|e| e.l2_output_error),
            pti_l2: r.report.map(|e| e.pti_l2),
            max_abs_output_error: r.report.map(|e| e.max_abs_output_error),
            failed: r.failed(),
        })
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numerical(format!("CSV serialization failed: {other:?}")),
    }
}

/// `quantity,index,value` table describing a reduction.
pub fn write_diagnostics_csv<W: Write>(red: &Reduction, cfg: &RunConfig, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["quantity", "index", "value"])
        .map_err(csv_error)?;
    let mut row = |q: &str, i: usize, v: String| out.serialize((q, i, v)).map_err(csv_error);
    let model = &red.model;
    let proj = &model.projections;
    row("model_kind", 0, cfg.model_kind.to_string())?;
    row("method", 0, model.method.to_string())?;
    row("n_full", 0, model.n_full().to_string())?;
    row("n_r", 0, model.n_r().to_string())?;
    if let Some(g) = &model.gramian_config {
        row("alpha", 0, g.alpha.to_string())?;
        row("N", 0, g.terms.to_string())?;
        row("tau", 0, g.tau.to_string())?;
    }
    for (i, s) in proj.singular_values.iter().enumerate() {
        row("singular_value", i + 1, s.to_string())?;
    }
    if let Some(gram) = &red.gramians {
        row("reachability_rank", 0, gram.p_factor.rank().to_string())?;
        row("observability_rank", 0, gram.q_factor.rank().to_string())?;
        for d in &gram.diagnostics {
            row("term_rank_reachability", d.term, d.rank_r.to_string())?;
            row("term_rank_observability", d.term, d.rank_s.to_string())?;
        }
    }
    row("repaired_reachability", 0, proj.repaired[0].to_string())?;
    row("repaired_observability", 0, proj.repaired[1].to_string())?;
    row(
        "biorthogonality_error",
        0,
        proj.biorthogonality_error().to_string(),
    )?;
    if let Ok(e) = model.angle_row_error() {
        row("angle_row_error", 0, e.to_string())?;
    }
    row("steady_state", 0, red.steady_state.to_string())?;
    for (i, w) in model.omega_s_hat.iter().enumerate() {
        row("omega_s_hat", i + 1, w.to_string())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netparams::synth_grid;

    fn small() -> NetworkParameters {
        synth_grid(4, 3, 0.8).unwrap()
    }

    #[test]
    fn indexed_values_parse() {
        let p: IndexedValue = "1:0.1".parse().unwrap();
        assert_eq!(
            p,
            IndexedValue {
                index: 1,
                value: 0.1
            }
        );
        assert!("0:1".parse::<IndexedValue>().is_err());
        assert!("3".parse::<IndexedValue>().is_err());
        assert!("a:1".parse::<IndexedValue>().is_err());
        assert!("2:nan".parse::<IndexedValue>().is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = RunConfig {
            n_r: 6,
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        let pod = RunConfig {
            n_r: 6,
            method: ReductionMethod::Pod,
            ..RunConfig::default()
        };
        pod.validate().unwrap();
        let even = RunConfig {
            gramians: GramianConfig {
                terms: 4,
                ..GramianConfig::default()
            },
            ..RunConfig::default()
        };
        assert!(even.validate().is_err());
        let big = RunConfig {
            n_r: 20,
            ..RunConfig::default()
        };
        assert!(big.validate_for(&small()).is_err());
        let far = RunConfig {
            perturb_x0: Some(IndexedValue {
                index: 5,
                value: 0.1,
            }),
            ..RunConfig::default()
        };
        assert!(far.validate_for(&small()).is_err());
    }

    #[test]
    fn scenario_perturbations() {
        let cfg = RunConfig {
            perturb_x0: Some(IndexedValue {
                index: 2,
                value: 0.1,
            }),
            perturb_u: Some(IndexedValue {
                index: 1,
                value: 1.1,
            }),
            ..RunConfig::default()
        };
        let x = cfg.scenario_state(&small()).unwrap();
        assert_eq!(x[1], 0.1);
        assert_eq!(x[8 + 1], 0.1f64.sin());
        assert_eq!(x[12 + 1], 0.1f64.cos());
        assert_eq!(cfg.scenario_input().as_slice(), &[1.1, 1.0]);
    }

    #[test]
    fn full_order_run_matches_reference() {
        let p = small();
        let cfg = RunConfig {
            n_r: 16,
            perturb_x0: Some(IndexedValue {
                index: 1,
                value: 0.1,
            }),
            ..RunConfig::default()
        };
        let reference = simulate_full(&p, &cfg).unwrap();
        let rec = run_once(&p, &reference, &cfg).unwrap();
        assert!(!rec.failed(), "{:?}", rec.failure);
        assert!(
            rec.report.unwrap().l2_output_error <= 1e-5,
            "{:?}",
            rec.report
        );
    }

    #[test]
    fn sweep_rejects_even_terms_and_flags_rank_failures() {
        let p = small();
        let base = RunConfig::default();
        let grid = SweepGrid {
            methods: vec![ReductionMethod::BalancedTruncation],
            alphas: vec![5e-3],
            terms: vec![2],
            n_rs: vec![4],
        };
        assert!(sweep(&p, &base, &grid, 2).is_err());

        let grid = SweepGrid {
            methods: vec![ReductionMethod::BalancedTruncation, ReductionMethod::Pod],
            alphas: vec![5e-3],
            terms: vec![1, 3],
            n_rs: vec![4, 16],
        };
        let rows = sweep(&p, &base, &grid, 2).unwrap();
        assert_eq!(rows.len(), 2 * 2 + 2);
        assert_eq!(rows[0].terms, Some(1));
        assert_eq!(rows[4].method, ReductionMethod::Pod);
        assert_eq!(rows[4].alpha, None);
        assert!(rows.iter().all(|r| r.failed() != r.report.is_some()));

        let mut text = Vec::new();
        write_metrics_csv(&rows, &mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text
            .starts_with("method,alpha,N,nr,l2_output_error,pti_l2,max_abs_output_error,failed\n"));
        assert_eq!(text.lines().count(), rows.len() + 1);
        let again = sweep(&p, &base, &grid, 1).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn diagnostics_table() {
        let p = small();
        let cfg = RunConfig {
            n_r: 8,
            ..RunConfig::default()
        };
        let red = reduce_network(&p, &cfg).unwrap();
        let mut text = Vec::new();
        write_diagnostics_csv(&red, &cfg, &mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.lines().any(|l| l.starts_with("singular_value,1,")));
        assert!(text.lines().any(|l| l == "N,0,3"));
        assert!(text.contains("steady_state,0,"));
    }
}
