//! Truncated low-rank series approximations of the reachability and
//! observability Gramians of a quadratic system with zero initial state.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lift::{kron_factor_product, KronMode, QuadraticSystem, QuadraticTensor};
use crate::lyap::{solve_lyapunov_lr_with_tau, truncate_lr, LowRankFactor, MACHINE_TAU};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramianConfig {
    /// Stabilizing shift: the series is computed with `A - alpha I`.
    pub alpha: f64,
    /// Number of series terms kept; odd.
    pub terms: usize,
    /// Column-compression tolerance.
    pub tau: f64,
}

impl Default for GramianConfig {
    fn default() -> Self {
        GramianConfig {
            alpha: 5e-3,
            terms: 3,
            tau: MACHINE_TAU,
        }
    }
}

impl GramianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!(
                "shift alpha = {} must be positive",
                self.alpha
            )));
        }
        if self.terms == 0 || self.terms.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "number of terms N = {} must be odd and at least 1",
                self.terms
            )));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::invalid(format!(
                "tau = {} must be nonnegative",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Per-term record of the series computation.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDiagnostics {
    pub term: usize,
    pub rank_r: usize,
    pub rank_s: usize,
    pub rhs_rank_k: usize,
    pub rhs_rank_l: usize,
}

/// Low-rank factors with `P_T = X X^T` and `Q_T = Z Z^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramianPair {
    pub p_factor: LowRankFactor,
    pub q_factor: LowRankFactor,
    pub config: GramianConfig,
    pub diagnostics: Vec<TermDiagnostics>,
}

impl GramianPair {
    pub fn reachability(&self) -> DMatrix<f64> {
        self.p_factor.gram()
    }

    pub fn observability(&self) -> DMatrix<f64> {
        self.q_factor.gram()
    }
}

fn concat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn compressed_concat(a: &DMatrix<f64>, b: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    Ok(truncate_lr(&concat(a, b), tau)?.factor)
}

fn with_alpha_hint(e: Error, alpha: f64) -> Error {
    match e {
        Error::Unstable { max_real_part, .. } => Error::Unstable {
            max_real_part,
            hint: format!("A - alpha I is not stable at alpha = {alpha:e}; use a larger alpha"),
        },
        other => other,
    }
}

/// Factors of one series term: `R̃_i` for `i = 1, 3, ...`, stored at `i / 2`.
struct Chain {
    terms: Vec<DMatrix<f64>>,
    accumulated: DMatrix<f64>,
    rhs_ranks: Vec<usize>,
}

/// Builds one chain. `first` is `B̄` (or `C^T`), `partner` supplies the right
/// Kronecker factor for the higher-term right-hand sides (`None` means the
/// chain's own terms, as for the reachability series).
fn run_chain(
    a_alpha: &DMatrix<f64>,
    h: &dyn QuadraticTensor,
    first: &DMatrix<f64>,
    transpose: bool,
    mode: KronMode,
    left: Option<&[DMatrix<f64>]>,
    cfg: &GramianConfig,
) -> Result<Chain> {
    let tau = cfg.tau;
    let solve = |g: &DMatrix<f64>| {
        solve_lyapunov_lr_with_tau(a_alpha, g, transpose, tau)
            .map_err(|e| with_alpha_hint(e, cfg.alpha))
    };
    let r1 = solve(first)?.factor;
    let mut terms = vec![r1.clone()];
    let mut accumulated = r1;
    let mut rhs_ranks = vec![first.ncols()];
    let n = a_alpha.nrows();
    for i in (3..=cfg.terms).step_by(2) {
        let mut rhs: Option<DMatrix<f64>> = None;
        for k in (1..=i - 2).step_by(2) {
            // reachability factors on the left, this chain's term on the right
            let lf = match left {
                Some(l) => &l[k / 2],
                None => &terms[k / 2],
            };
            let rf = &terms[(i - k - 1) / 2];
            let delta = kron_factor_product(h, mode, lf, rf)?;
            rhs = Some(match rhs {
                None => truncate_lr(&delta, tau)?.factor,
                Some(prev) => compressed_concat(&prev, &delta, tau)?,
            });
        }
        let rhs = rhs.unwrap_or_else(|| DMatrix::zeros(n, 0));
        rhs_ranks.push(rhs.ncols());
        let ri = solve(&rhs)?.factor;
        accumulated = compressed_concat(&accumulated, &ri, tau)?;
        terms.push(ri);
    }
    Ok(Chain {
        terms,
        accumulated,
        rhs_ranks,
    })
}

/// Truncated series Gramians of a system whose initial state is zero.
///
/// The reachability chain runs first because the observability right-hand
/// sides pair its factors with the observability factors.
pub fn approx_gramians(sys: &QuadraticSystem, cfg: &GramianConfig) -> Result<GramianPair> {
    cfg.validate()?;
    let n = sys.n();
    if n == 0 {
        return Err(Error::invalid("system has dimension zero"));
    }
    if sys.x0.iter().any(|v| *v != 0.0) {
        return Err(Error::invalid(
            "Gramian series needs a zero initial state; shift the system first",
        ));
    }
    let a_alpha = &sys.a - DMatrix::identity(n, n) * cfg.alpha;
    let h = &sys.h;
    let p_chain = run_chain(&a_alpha, h, &sys.b, false, KronMode::Mode1, None, cfg)?;
    let q_chain = run_chain(
        &a_alpha,
        h,
        &sys.c.transpose(),
        true,
        KronMode::Mode2,
        Some(&p_chain.terms),
        cfg,
    )?;
    let diagnostics: Vec<TermDiagnostics> = (0..p_chain.terms.len())
        .map(|t| TermDiagnostics {
            term: 2 * t + 1,
            rank_r: p_chain.terms[t].ncols(),
            rank_s: q_chain.terms[t].ncols(),
            rhs_rank_k: p_chain.rhs_ranks[t],
            rhs_rank_l: q_chain.rhs_ranks[t],
        })
        .collect();
    for d in &diagnostics {
        log::debug!(
            "gramian term {}: rank R {} rank S {} rhs ranks {} / {}",
            d.term,
            d.rank_r,
            d.rank_s,
            d.rhs_rank_k,
            d.rhs_rank_l
        );
    }
    Ok(GramianPair {
        p_factor: LowRankFactor {
            factor: p_chain.accumulated,
            tolerance_used: cfg.tau,
        },
        q_factor: LowRankFactor {
            factor: q_chain.accumulated,
            tolerance_used: cfg.tau,
        },
        config: *cfg,
        diagnostics,
    })
}
