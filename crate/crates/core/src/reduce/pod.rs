use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lift::QuadraticSystem;
use crate::sim::Trajectory;

use super::model::{assemble_reduced, ReducedQuadraticModel, ReductionMethod};
use super::projection::ProjectionPair;

/// How snapshot bases are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PodVariant {
    /// One basis for the whole state.
    #[default]
    Global,
    /// One basis for the oscillator index, shared by all four variable groups.
    BlockDiagonal,
}

fn left_singular(m: DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let svd = m.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return left vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut basis = DMatrix::zeros(u.nrows(), k);
    for (c, &i) in order.iter().take(k).enumerate() {
        basis.set_column(c, &u.column(i));
    }
    let sv = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    Ok((basis, sv))
}

/// Galerkin projection (`W = V`) onto the leading left singular vectors of
/// the snapshot matrix of a simulation of `sys`.
pub fn pod_reduce(
    sys: &QuadraticSystem,
    snapshots: &Trajectory,
    n_r: usize,
    variant: PodVariant,
) -> Result<ReducedQuadraticModel> {
    let n = sys.n();
    let x = snapshots.snapshot_matrix();
    if x.nrows() != n {
        return Err(Error::dims(format!(
            "snapshots have {} states, system has {n}",
            x.nrows()
        )));
    }
    if n_r == 0 {
        return Err(Error::invalid("reduced size must be positive"));
    }
    let count = x.ncols();
    let proj = match variant {
        PodVariant::Global => {
            let max = count.min(n);
            if n_r > max {
                return Err(Error::Rank {
                    what: format!("POD basis from {count} snapshots of a {n}-state system"),
                    requested: n_r,
                    max,
                });
            }
            let (v, sv) = left_singular(x, n_r)?;
            ProjectionPair {
                w: v.clone(),
                v,
                block_size: n / 4,
                v_block: None,
                w_block: None,
                singular_values: sv,
                repaired: [false, false],
            }
        }
        PodVariant::BlockDiagonal => {
            if !n.is_multiple_of(4) || !n_r.is_multiple_of(4) {
                return Err(Error::invalid(format!(
                    "block POD needs n ({n}) and n_r ({n_r}) divisible by 4"
                )));
            }
            let n_o = n / 4;
            let mut stacked = DMatrix::zeros(n_o, 4 * count);
            for k in 0..4 {
                stacked
                    .columns_mut(k * count, count)
                    .copy_from(&x.rows(k * n_o, n_o));
            }
            let r = n_r / 4;
            let max = n_o.min(4 * count);
            if r > max {
                return Err(Error::Rank {
                    what: format!("block POD basis for {n_o} oscillators"),
                    requested: n_r,
                    max: 4 * max,
                });
            }
            let (vb, sv) = left_singular(stacked, r)?;
            ProjectionPair::from_blocks(vb.clone(), vb, sv)?
        }
    };
    assemble_reduced(sys, proj, ReductionMethod::Pod)
}
