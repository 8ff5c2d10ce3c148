use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::evaluate;
use super::trainer::train;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::NetConfig;

/// The five component variants, from the plain U-Net to the full model.
pub fn ablation_variants(base: &NetConfig) -> Vec<NetConfig> {
    [
        (false, false, false),
        (true, false, false),
        (true, true, false),
        (true, false, true),
        (true, true, true),
    ]
    .into_iter()
    .map(|(cls, ag, sm)| NetConfig {
        classification_branch: cls,
        attention_gates: ag,
        stacked_module: sm,
        ..base.clone()
    })
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: MetricReport,
}

/// Train every variant with the same data, seed, and schedule, and evaluate
/// each on `val`.
pub fn run_ablation(
    cfg: &TrainConfig,
    train_clips: &[Sample],
    val_clips: &[Sample],
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for net in ablation_variants(&cfg.net) {
        let variant = net.variant_name();
        progress(&variant);
        let c = TrainConfig {
            net,
            ..cfg.clone()
        };
        let out = train(&c, train_clips, val_clips, |_| {})?;
        let report = evaluate(&out.net, &out.params, val_clips, None, false)?.report;
        rows.push(AblationRow { variant, report });
    }
    Ok(rows)
}

/// `variant,iou,dice,accuracy`; metrics a variant cannot produce are empty.
pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from("variant,iou,dice,accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.variant,
            fmt(r.report.iou),
            fmt(r.report.dice),
            fmt(r.report.accuracy)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
