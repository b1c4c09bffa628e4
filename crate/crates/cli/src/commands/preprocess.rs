use p300_core::io::{save_recording_with, RecordingFormat, SampleType, SaveOptions};
use p300_core::signal::preprocess;
use rayon::prelude::*;

use super::Ctx;
use crate::error::{write_err, CliResult, ResultExt};
use crate::inputs;
use crate::run::num;

/// Filters and decimates every input into `preprocessed/<stem>.bin` (f64).
pub fn run(ctx: &mut Ctx, paths: &[std::path::PathBuf]) -> CliResult<()> {
    let cfg = ctx.cfg;
    let loaded = inputs::load_all(paths, cfg, false)?;
    let rows = loaded
        .par_iter()
        .map(|l| {
            let out = preprocess(&l.recording, &cfg.preprocess).ctx(format!("preprocessing {}", l.path.display()))?;
            let dest = ctx.run.path(&format!("preprocessed/{}.bin", l.stem))?;
            save_recording_with(&out, &dest, RecordingFormat::ColumnarBinary, SaveOptions { sample_type: SampleType::F64le })
                .map_err(write_err)?;
            Ok(vec![
                l.stem.clone(),
                out.subject_id().to_string(),
                out.condition().to_string(),
                num(l.recording.sample_rate()),
                num(out.sample_rate()),
                out.n_samples().to_string(),
                out.events().len().to_string(),
            ])
        })
        .collect::<CliResult<Vec<_>>>()?;
    ctx.run.write_csv(
        "preprocessed/summary.csv",
        &["input", "subject", "condition", "rate_in_hz", "rate_out_hz", "n_samples", "n_events"],
        &rows,
    )
}
