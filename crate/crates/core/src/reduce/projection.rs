use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gramians::GramianPair;
use crate::lyap::{cholesky_factor, nearest_spd, DEFAULT_SPD_EPSILON};

/// Petrov–Galerkin bases `V`, `W` (each `n x n_r`).
///
/// Block-structured pairs carry the shared per-variable blocks and satisfy
/// `V = blkdiag(V_b, V_b, V_b, V_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// Number of oscillators `n_o`; the full state has `4 n_o` entries.
    pub block_size: usize,
    pub v_block: Option<DMatrix<f64>>,
    pub w_block: Option<DMatrix<f64>>,
    /// Singular values the basis was ranked by, nonincreasing.
    pub singular_values: DVector<f64>,
    /// Whether the reachability / observability block needed SPD repair.
    pub repaired: [bool; 2],
}

impl ProjectionPair {
    pub fn reduced_dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn full_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn is_block_structured(&self) -> bool {
        self.v_block.is_some()
    }

    /// Size of each reduced variable block, when block structured.
    pub fn block_rank(&self) -> Option<usize> {
        self.v_block.as_ref().map(|b| b.ncols())
    }

    /// Largest deviation of `W^T V` from the identity.
    pub fn biorthogonality_error(&self) -> f64 {
        let r = self.reduced_dim();
        (self.w.transpose() * &self.v - DMatrix::identity(r, r)).amax()
    }

    /// Repeats four copies of the per-variable blocks along the diagonal.
    pub fn from_blocks(
        v_block: DMatrix<f64>,
        w_block: DMatrix<f64>,
        singular_values: DVector<f64>,
    ) -> Result<Self> {
        if v_block.shape() != w_block.shape() {
            return Err(Error::dims(format!(
                "blocks are {:?} and {:?}",
                v_block.shape(),
                w_block.shape()
            )));
        }
        let n_o = v_block.nrows();
        Ok(ProjectionPair {
            v: blkdiag4(&v_block),
            w: blkdiag4(&w_block),
            block_size: n_o,
            v_block: Some(v_block),
            w_block: Some(w_block),
            singular_values,
            repaired: [false, false],
        })
    }
}

pub(crate) fn blkdiag4(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = b.shape();
    let mut out = DMatrix::zeros(4 * n, 4 * r);
    for k in 0..4 {
        out.view_mut((k * n, k * r), (n, r)).copy_from(b);
    }
    out
}

fn upper_cholesky(p: &DMatrix<f64>, which: &str) -> Result<(DMatrix<f64>, bool)> {
    match cholesky_factor(p) {
        Ok(l) => Ok((l.transpose(), false)),
        Err(_) => {
            log::info!("{which} frequency block is not positive definite; repairing");
            let fixed = nearest_spd(p, DEFAULT_SPD_EPSILON)?;
            let l = cholesky_factor(&fixed).map_err(|_| {
                Error::Numerical(format!(
                    "{which} frequency block is zero; nothing to balance"
                ))
            })?;
            Ok((l.transpose(), true))
        }
    }
}

/// Square-root balanced truncation on the frequency blocks of the Gramians,
/// applied identically to all four variable groups.
pub fn bt_projections(gram: &GramianPair, n_r: usize) -> Result<ProjectionPair> {
    let n = gram.p_factor.nrows();
    if !n.is_multiple_of(4) || n == 0 {
        return Err(Error::dims(format!(
            "Gramians of size {n} are not from a lifted grid model"
        )));
    }
    if n_r == 0 || !n_r.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "reduced size {n_r} must be a positive multiple of 4"
        )));
    }
    let n_o = n / 4;
    let r = n_r / 4;
    let freq_block = |f: &DMatrix<f64>| {
        let rows = f.rows(n_o, n_o);
        let b = rows * rows.transpose();
        (&b + b.transpose()) * 0.5
    };
    let p_w = freq_block(&gram.p_factor.factor);
    let q_w = freq_block(&gram.q_factor.factor);
    let (r_w, rep_p) = upper_cholesky(&p_w, "reachability")?;
    let (s_w, rep_q) = upper_cholesky(&q_w, "observability")?;
    let svd = (&r_w * s_w.transpose()).svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::Numerical(
                "SVD did not return singular vectors".into(),
            ))
        }
    };
    let mut order: Vec<usize> = (0..n_o).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = DVector::from_iterator(n_o, order.iter().map(|&i| svd.singular_values[i]));
    let s1 = sv[0];
    let rank = sv
        .iter()
        .filter(|s| **s > s1 * n_o as f64 * f64::EPSILON && **s > 0.0)
        .count();
    if r > rank {
        return Err(Error::Rank {
            what: format!("balanced truncation of {n_o} oscillators (n_r = 4 x block rank)"),
            requested: n_r,
            max: 4 * rank,
        });
    }
    let mut u_r = DMatrix::zeros(n_o, r);
    let mut v_r = DMatrix::zeros(n_o, r);
    for (c, &i) in order.iter().take(r).enumerate() {
        let scale = 1.0 / svd.singular_values[i].sqrt();
        u_r.set_column(c, &(u.column(i) * scale));
        v_r.set_column(c, &(v_t.row(i).transpose() * scale));
    }
    let v_block = r_w.transpose() * u_r;
    let w_block = s_w.transpose() * v_r;
    let mut pair = ProjectionPair::from_blocks(v_block, w_block, sv)?;
    pair.repaired = [rep_p, rep_q];
    Ok(pair)
}
