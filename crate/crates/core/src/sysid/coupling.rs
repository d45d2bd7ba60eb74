#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FitResult, FittedModel};
use crate::error::{Error, Result};
use crate::model::{EntryClass, StateSpaceModel, StructureMask};

/// Magnitude statistics of one matrix split by the structure hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixCoupling {
    pub nonzero_mean: f64,
    pub nonzero_std: f64,
    pub zero_mean: f64,
    pub zero_std: f64,
    /// `zero_mean / nonzero_mean`
    pub ratio: f64,
    pub n_nonzero: usize,
    pub n_zero: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub a: MatrixCoupling,
    pub b: MatrixCoupling,
    pub c: MatrixCoupling,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn matrix_stats(m: &DMatrix<f64>, mask: &DMatrix<EntryClass>, rows: &[usize], name: &str) -> Result<MatrixCoupling> {
    if m.shape() != mask.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{name}: matrix {:?} vs mask {:?}",
            m.shape(),
            mask.shape()
        )));
    }
    let (mut nonzero, mut zero) = (Vec::new(), Vec::new());
    for &r in rows {
        for c in 0..m.ncols() {
            let v = m[(r, c)].abs();
            if mask[(r, c)].expected_zero() {
                zero.push(v);
            } else {
                nonzero.push(v);
            }
        }
    }
    let (nonzero_mean, nonzero_std) = mean_std(&nonzero);
    let (zero_mean, zero_std) = mean_std(&zero);
    Ok(MatrixCoupling {
        nonzero_mean,
        nonzero_std,
        zero_mean,
        zero_std,
        ratio: if nonzero_mean > 0.0 { zero_mean / nonzero_mean } else { f64::INFINITY },
        n_nonzero: nonzero.len(),
        n_zero: zero.len(),
    })
}

/// Statistics of `|entries|` of `model`, restricted to `c_rows` of `C`.
pub fn coupling_stats(model: &StateSpaceModel, mask: &StructureMask, c_rows: &[usize]) -> Result<CouplingReport> {
    let all = |m: &DMatrix<f64>| (0..m.nrows()).collect::<Vec<_>>();
    if let Some(&r) = c_rows.iter().find(|&&r| r >= model.c.nrows()) {
        return Err(Error::DimensionMismatch(format!("C row {r} out of range")));
    }
    Ok(CouplingReport {
        a: matrix_stats(&model.a, &mask.a, &all(&model.a), "A")?,
        b: matrix_stats(&model.b, &mask.b, &all(&model.b), "B")?,
        c: matrix_stats(&model.c, &mask.c, c_rows, "C")?,
    })
}

/// Aggregates an unstructured fit by the expected-zero mask.
pub fn coupling_report(fit: &FitResult, mask: &StructureMask) -> Result<CouplingReport> {
    match &fit.model {
        FittedModel::Unstructured { model, output_rows } => coupling_stats(model, mask, output_rows),
        FittedModel::Structured { .. } => Err(Error::DimensionMismatch(
            "coupling report needs an unstructured fit".into(),
        )),
    }
}
