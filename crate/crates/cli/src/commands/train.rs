use p300_core::epochs::extract_epochs;
use p300_core::eval::fit_on_blocks;
use p300_core::model::{Condition, Label};
use p300_core::riemann::MdmModel;
use rayon::prelude::*;
use serde::Serialize;

use super::Ctx;
use crate::error::{usage_msg, CliResult, ResultExt};
use crate::inputs;
use crate::run::num;

#[derive(Serialize)]
struct SavedModel<'a> {
    subject_id: &'a str,
    condition: Condition,
    window_seconds: f64,
    sample_rate: f64,
    latency_ms: f64,
    train_blocks: Vec<u8>,
    n_target: usize,
    n_nontarget: usize,
    model: MdmModel,
}

/// Fits one spatial filter plus MDM classifier per recording on the chosen
/// blocks (all blocks by default).
pub fn run(ctx: &mut Ctx, paths: &[std::path::PathBuf], blocks: &[u8]) -> CliResult<()> {
    let cfg = ctx.cfg;
    let loaded = inputs::load_all(paths, cfg, true)?;
    let window = cfg.classifier.window_seconds;
    let fitted = loaded
        .par_iter()
        .map(|l| {
            let set = extract_epochs(&l.recording, window, &cfg.latency)
                .ctx(format!("epoching {}", l.path.display()))?
                .set;
            let available = set.block_ids();
            let train: Vec<u8> = if blocks.is_empty() { available.clone() } else { blocks.to_vec() };
            if let Some(b) = train.iter().find(|b| !available.contains(b)) {
                return Err(usage_msg(format!("block {b} is not in {}", l.path.display())));
            }
            let trained = fit_on_blocks(&set, &train, cfg.classifier.n_components, cfg.classifier.feature_mode)
                .ctx(format!("training on {}", l.path.display()))?;
            let in_train = |label: Label| set.in_blocks(&train).filter(|e| e.label == label).count();
            Ok(SavedModel {
                subject_id: l.recording.subject_id(),
                condition: l.recording.condition(),
                window_seconds: window,
                sample_rate: set.sample_rate,
                latency_ms: cfg.latency.latency_ms(l.recording.condition()),
                n_target: in_train(Label::Target),
                n_nontarget: in_train(Label::NonTarget),
                train_blocks: trained.train_blocks,
                model: trained.model,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut summary = Vec::new();
    let mut eigen = Vec::new();
    for (l, m) in loaded.iter().zip(&fitted) {
        ctx.run.write_json(&format!("models/{}.model.json", l.stem), m)?;
        summary.push(vec![
            l.stem.clone(),
            m.subject_id.to_string(),
            m.condition.to_string(),
            m.train_blocks.len().to_string(),
            m.n_target.to_string(),
            m.n_nontarget.to_string(),
            m.model.filter.n_components.to_string(),
        ]);
        for (k, v) in m.model.filter.eigenvalues.iter().enumerate() {
            eigen.push(vec![m.subject_id.to_string(), m.condition.to_string(), k.to_string(), num(*v)]);
        }
    }
    ctx.run.write_csv(
        "models/summary.csv",
        &["input", "subject", "condition", "n_train_blocks", "n_target", "n_nontarget", "n_components"],
        &summary,
    )?;
    ctx.run.write_csv("models/eigenvalues.csv", &["subject", "condition", "component", "eigenvalue"], &eigen)
}
