use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramians::GramianConfig;
use crate::lift::{DenseTensor, Hessian, QuadraticSystem};

use super::model::{ReducedQuadraticModel, ReductionMethod};
use super::projection::ProjectionPair;

const FORMAT: &str = "gridmor-reduced-model";
const VERSION: u32 = 1;

/// Dense matrix, row-major.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixRecord {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixRecord {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn into_matrix(self, name: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Parse(format!(
                "{name}: {} values for a {}x{} matrix",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GramianRecord {
    alpha: f64,
    terms: usize,
    tau: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReducedRecord {
    format: String,
    version: u32,
    method: String,
    n_r: usize,
    n_full: usize,
    block_size: usize,
    gramians: Option<GramianRecord>,
    a_r: MatrixRecord,
    /// Mode-1 layout, `n_r x n_r^2`.
    h_r: MatrixRecord,
    b_r: MatrixRecord,
    c_r: MatrixRecord,
    v: MatrixRecord,
    w: MatrixRecord,
    v_block: Option<MatrixRecord>,
    w_block: Option<MatrixRecord>,
    singular_values: Vec<f64>,
    repaired: [bool; 2],
    x0: Vec<f64>,
    output_offset: Vec<f64>,
    omega_s_hat: Vec<f64>,
}

/// Serializes a reduced model as JSON text.
pub fn write_reduced(model: &ReducedQuadraticModel) -> String {
    let p = &model.projections;
    let rec = ReducedRecord {
        format: FORMAT.into(),
        version: VERSION,
        method: model.method.to_string(),
        n_r: model.n_r(),
        n_full: model.n_full(),
        block_size: p.block_size,
        gramians: model.gramian_config.map(|g| GramianRecord {
            alpha: g.alpha,
            terms: g.terms,
            tau: g.tau,
        }),
        a_r: MatrixRecord::from_matrix(model.a_r()),
        h_r: MatrixRecord::from_matrix(&model.h_r()),
        b_r: MatrixRecord::from_matrix(model.b_r()),
        c_r: MatrixRecord::from_matrix(model.c_r()),
        v: MatrixRecord::from_matrix(&p.v),
        w: MatrixRecord::from_matrix(&p.w),
        v_block: p.v_block.as_ref().map(MatrixRecord::from_matrix),
        w_block: p.w_block.as_ref().map(MatrixRecord::from_matrix),
        singular_values: p.singular_values.as_slice().to_vec(),
        repaired: p.repaired,
        x0: model.x0_full.as_slice().to_vec(),
        output_offset: model.output_offset.as_slice().to_vec(),
        omega_s_hat: model.omega_s_hat.as_slice().to_vec(),
    };
    serde_json::to_string_pretty(&rec).expect("reduced model record always serializes")
}

/// Parses the output of [`write_reduced`].
pub fn read_reduced(text: &str) -> Result<ReducedQuadraticModel> {
    let rec: ReducedRecord = serde_json::from_str(text).map_err(|e| {
        Error::Parse(format!(
            "reduced model, line {} column {}: {e}",
            e.line(),
            e.column()
        ))
    })?;
    if rec.format != FORMAT || rec.version != VERSION {
        return Err(Error::Parse(format!(
            "unsupported reduced model format {} version {}",
            rec.format, rec.version
        )));
    }
    let method: ReductionMethod = rec.method.parse()?;
    let a = rec.a_r.into_matrix("a_r")?;
    let h = DenseTensor::new(rec.h_r.into_matrix("h_r")?)?;
    let b = rec.b_r.into_matrix("b_r")?;
    let c = rec.c_r.into_matrix("c_r")?;
    let nr = rec.n_r;
    let system = QuadraticSystem::new(
        a,
        Hessian::Dense(h),
        b,
        c,
        DVector::zeros(nr),
        DVector::zeros(nr),
    )
    .map_err(|e| Error::Parse(format!("reduced model operators: {e}")))?;
    let projections = ProjectionPair {
        v: rec.v.into_matrix("v")?,
        w: rec.w.into_matrix("w")?,
        block_size: rec.block_size,
        v_block: rec.v_block.map(|m| m.into_matrix("v_block")).transpose()?,
        w_block: rec.w_block.map(|m| m.into_matrix("w_block")).transpose()?,
        singular_values: DVector::from_vec(rec.singular_values),
        repaired: rec.repaired,
    };
    let x0 = DVector::from_vec(rec.x0);
    let consistent = system.n() == nr
        && projections.v.shape() == (rec.n_full, nr)
        && projections.w.shape() == (rec.n_full, nr)
        && x0.len() == rec.n_full
        && rec.output_offset.len() == system.p()
        && rec.omega_s_hat.len() == projections.block_rank().unwrap_or(0);
    if !consistent {
        return Err(Error::Parse(
            "reduced model fields have inconsistent sizes".into(),
        ));
    }
    Ok(ReducedQuadraticModel {
        system,
        projections,
        x0_full: x0,
        output_offset: DVector::from_vec(rec.output_offset),
        omega_s_hat: DVector::from_vec(rec.omega_s_hat),
        method,
        gramian_config: rec.gramians.map(|g| GramianConfig {
            alpha: g.alpha,
            terms: g.terms,
            tau: g.tau,
        }),
    })
}

pub fn save_reduced(model: &ReducedQuadraticModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_reduced(model))?;
    Ok(())
}

pub fn load_reduced(path: impl AsRef<Path>) -> Result<ReducedQuadraticModel> {
    read_reduced(&fs::read_to_string(path)?)
}
