#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::structured::{fit_all_axes, predict_position};
use super::{rms_percent_error, FitOptions, FitResult, MIN_FIT_SECONDS};
use crate::error::{invalid, Error, Result};
use crate::model::FollowerParams;
use crate::record::SessionRecord;

/// Per-segment fits of a record split into equal consecutive pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnalysis {
    pub n_segments: usize,
    pub segment_samples: usize,
    /// `fits[segment][axis]`
    pub fits: Vec<Vec<FitResult>>,
    /// Percent change of `k/m` from segment `s` to `s + 1`, `[s][axis]`.
    pub stiffness_change_percent: Vec<Vec<f64>>,
    /// Percent change of `b/m` from segment `s` to `s + 1`, `[s][axis]`.
    pub damping_change_percent: Vec<Vec<f64>>,
    /// RMS percent error of the first segment's model on each segment, `[s][axis]`.
    pub first_model_rms_percent: Vec<Vec<f64>>,
    /// `first_model_rms_percent` minus the segment's own fit error, in
    /// percentage points.
    pub first_model_rms_delta: Vec<Vec<f64>>,
}

fn percent_change(from: f64, to: f64) -> f64 {
    100.0 * (to - from) / from
}

/// Splits `record` into `n_segments` equal pieces (dropping any remainder),
/// fits each axis of each piece independently and compares the pieces.
pub fn segment_analysis(
    record: &SessionRecord,
    n_segments: usize,
    init: &[FollowerParams],
    opts: &FitOptions,
) -> Result<SegmentAnalysis> {
    if n_segments == 0 {
        return Err(invalid("n_segments", "must be at least 1"));
    }
    let seg = record.len() / n_segments;
    let required = (MIN_FIT_SECONDS * record.rate_hz).ceil() as usize;
    if seg < required {
        return Err(Error::TooShort { required: required * n_segments, actual: record.len() });
    }
    let pieces: Vec<SessionRecord> = (0..n_segments).map(|s| record.slice(s * seg, (s + 1) * seg)).collect();
    let fits = pieces
        .iter()
        .map(|p| fit_all_axes(p, init, opts))
        .collect::<Result<Vec<_>>>()?;
    let params = |s: usize, axis: usize| -> Result<FollowerParams> {
        fits[s][axis]
            .params()
            .copied()
            .ok_or_else(|| Error::Degenerate(format!("segment {s} axis {axis} has no structured parameters")))
    };

    let k = record.n_channels();
    let mut stiffness_change_percent = Vec::new();
    let mut damping_change_percent = Vec::new();
    for s in 0..n_segments.saturating_sub(1) {
        let mut ks = Vec::with_capacity(k);
        let mut bs = Vec::with_capacity(k);
        for axis in 0..k {
            let (a, b) = (params(s, axis)?, params(s + 1, axis)?);
            ks.push(percent_change(a.stiffness_per_mass(), b.stiffness_per_mass()));
            bs.push(percent_change(a.damping_per_mass(), b.damping_per_mass()));
        }
        stiffness_change_percent.push(ks);
        damping_change_percent.push(bs);
    }

    let mut first_model_rms_percent = Vec::with_capacity(n_segments);
    let mut first_model_rms_delta = Vec::with_capacity(n_segments);
    for (s, piece) in pieces.iter().enumerate() {
        let mut rms = Vec::with_capacity(k);
        let mut delta = Vec::with_capacity(k);
        for axis in 0..k {
            let predicted = predict_position(piece, axis, &params(0, axis)?, opts.initial_state)?;
            let e = rms_percent_error(&piece.output.pos[axis], &predicted)?;
            rms.push(e);
            delta.push(e - fits[s][axis].rms_percent_error[0]);
        }
        first_model_rms_percent.push(rms);
        first_model_rms_delta.push(delta);
    }

    Ok(SegmentAnalysis {
        n_segments,
        segment_samples: seg,
        fits,
        stiffness_change_percent,
        damping_change_percent,
        first_model_rms_percent,
        first_model_rms_delta,
    })
}
