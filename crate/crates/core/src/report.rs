//! JSON reports. Complex numbers are written as `[re, im]` pairs; non-finite
//! reals (the `ω` of a zero eigenvalue) become `null`.

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::dmd::{continuous_eigs, AmplitudeMode, DmdDiagnostics, DmdModel, StageTimings};
use crate::sensing::SensingParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub method: String,
    pub k: usize,
    pub n_pixels: usize,
    pub n_frames: usize,
    pub frame_interval: f64,
    pub lambdas: Vec<c64>,
    pub omegas: Vec<(Option<f64>, Option<f64>)>,
    pub amplitude_magnitudes: Vec<f64>,
    pub singular_values: Vec<f64>,
    /// `|b_j λ_j^t|` for each mode `j` (rows) and frame `t` (columns).
    pub temporal_amplitudes: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sensing: Option<SensingParams>,
    pub amplitude_mode: AmplitudeMode,
    pub timings: StageTimings,
    pub diagnostics: DmdDiagnostics,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl ModelReport {
    pub fn from_model(model: &DmdModel) -> Self {
        let temporal_amplitudes = model
            .lambdas
            .iter()
            .zip(&model.amplitudes)
            .map(|(&l, &b)| {
                let mut v = b;
                (0..model.n_frames)
                    .map(|_| {
                        let out = v.norm();
                        v *= l;
                        out
                    })
                    .collect()
            })
            .collect();
        Self {
            method: if model.is_compressed() { "compressed".into() } else { "exact".into() },
            k: model.rank(),
            n_pixels: model.n_pixels(),
            n_frames: model.n_frames,
            frame_interval: model.frame_interval,
            lambdas: model.lambdas.clone(),
            omegas: continuous_eigs(model).iter().map(|w| (finite(w.re), finite(w.im))).collect(),
            amplitude_magnitudes: model.amplitudes.iter().map(|b| b.norm()).collect(),
            singular_values: model.singular_values.clone(),
            temporal_amplitudes,
            sensing: model.sensing.clone(),
            amplitude_mode: model.amplitude_mode,
            timings: model.timings,
            diagnostics: model.diagnostics.clone(),
        }
    }
}

/// Schemas for every report kind, shipped with the crate.
pub mod schema {
    pub const MODEL_REPORT: &str = include_str!("../schemas/model_report.schema.json");
    pub const RUN_REPORT: &str = include_str!("../schemas/run_report.schema.json");
    pub const EVAL_REPORT: &str = include_str!("../schemas/eval_report.schema.json");
    pub const BENCH_REPORT: &str = include_str!("../schemas/bench_report.schema.json");
}
