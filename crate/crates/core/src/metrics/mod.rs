//! Evaluation criteria: Dice overlap, target registration error, 95%
//! Hausdorff surface distance, and non-diffeomorphic volume.

mod dice;
mod hd95;
mod ndv;
mod tre;

pub use dice::{dice, DiceScores};
pub use hd95::hd95;
pub use ndv::ndv;
pub use tre::tre;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Per-pair evaluation record. Metrics whose annotations are missing stay
/// absent (never zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pair_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice_per_class: Option<BTreeMap<u32, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tre_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hd95_mm: Option<f64>,
    pub ndv_percent: f64,
    /// Similarity of fixed vs. warped moving, when image data was loaded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lncc: Option<f64>,
}

/// Mean and spread of one metric over the evaluated pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// `mean ± std` with four decimals.
    pub formatted: String,
}

impl MetricSummary {
    fn over(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            count: values.len(),
            formatted: format!("{mean:.4} ± {std:.4}"),
        })
    }
}

/// Aggregate over all evaluated pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tre_mm: Option<MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hd95_mm: Option<MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndv_percent: Option<MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lncc: Option<MetricSummary>,
}

/// Merge per-pair reports into mean ± std rows, skipping absent metrics.
pub fn aggregate(reports: &[MetricsReport]) -> AggregateReport {
    fn collect(reports: &[MetricsReport], f: impl Fn(&MetricsReport) -> Option<f64>) -> Vec<f64> {
        reports.iter().filter_map(f).collect()
    }
    AggregateReport {
        pairs: reports.len(),
        dice: MetricSummary::over(&collect(reports, |r| r.dice_mean)),
        tre_mm: MetricSummary::over(&collect(reports, |r| r.tre_mm)),
        hd95_mm: MetricSummary::over(&collect(reports, |r| r.hd95_mm)),
        ndv_percent: MetricSummary::over(&collect(reports, |r| Some(r.ndv_percent))),
        lncc: MetricSummary::over(&collect(reports, |r| r.lncc)),
    }
}
