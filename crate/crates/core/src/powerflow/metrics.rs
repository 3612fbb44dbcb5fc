use serde::{Deserialize, Serialize};

use super::{mismatch, GridCase, Injections, Layout, PowerFlowState, PfSample, YBus};
use crate::error::{ensure_dim, Result};
use crate::nn::Normalizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    /// Mean squared error against the solved target, in normalized units.
    pub mse: f64,
    /// Max absolute active-power mismatch (MW).
    pub mapm: f64,
    /// Max absolute reactive-power mismatch (MVAr).
    pub mrpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfMetrics {
    pub mse: f64,
    pub mapm: f64,
    pub mrpm: f64,
    pub samples: Vec<SampleMetrics>,
}

pub fn sample_metrics(
    case: &GridCase,
    ybus: &YBus,
    norm: &Normalizer,
    sample: &PfSample,
    prediction: &[f64],
) -> Result<SampleMetrics> {
    let layout = Layout::new(case);
    ensure_dim("prediction", layout.len(), prediction.len())?;
    let inj = Injections::from_vector(&layout, case.buses.len(), &sample.input)?;
    let mut state = PowerFlowState::flat_start(case);
    state.set_unknowns(&layout, prediction);
    let (dp, dq) = mismatch(&layout, ybus, &inj, &state);
    let zp = norm.normalize(prediction);
    let zt = norm.normalize(&sample.target);
    let mse = zp.iter().zip(&zt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / zp.len() as f64;
    let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs())) * case.base_mva;
    Ok(SampleMetrics {
        mse,
        mapm: peak(&dp),
        mrpm: peak(&dq),
    })
}

/// Per-sample metrics and their means.
pub fn metrics(
    case: &GridCase,
    ybus: &YBus,
    norm: &Normalizer,
    samples: &[PfSample],
    predictions: &[Vec<f64>],
) -> Result<PfMetrics> {
    ensure_dim("prediction count", samples.len(), predictions.len())?;
    let per: Vec<SampleMetrics> = samples
        .iter()
        .zip(predictions)
        .map(|(s, p)| sample_metrics(case, ybus, norm, s, p))
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    Ok(PfMetrics {
        mse: per.iter().map(|m| m.mse).sum::<f64>() / n,
        mapm: per.iter().map(|m| m.mapm).sum::<f64>() / n,
        mrpm: per.iter().map(|m| m.mrpm).sum::<f64>() / n,
        samples: per,
    })
}
