use p300_core::epochs::{average_epochs, extract_epochs, LabelFilter};
use p300_core::model::Label;

use super::{time_ms, Ctx};
use crate::error::{CliResult, ResultExt};
use crate::inputs;
use crate::run::num;

/// Epoch counts per recording and the class averages in long format.
pub fn run(ctx: &mut Ctx, paths: &[std::path::PathBuf]) -> CliResult<()> {
    let cfg = ctx.cfg;
    let window = cfg.classifier.window_seconds;
    let loaded = inputs::load_all(paths, cfg, true)?;
    let mut counts = Vec::new();
    let mut averages = Vec::new();
    for l in &loaded {
        let rec = &l.recording;
        let ex = extract_epochs(rec, window, &cfg.latency).ctx(format!("epoching {}", l.path.display()))?;
        let set = &ex.set;
        counts.push(vec![
            l.stem.clone(),
            rec.subject_id().to_string(),
            rec.condition().to_string(),
            num(window),
            rec.events().len().to_string(),
            set.count(Label::Target).to_string(),
            set.count(Label::NonTarget).to_string(),
            ex.dropped.to_string(),
            ex.shift_samples.to_string(),
        ]);
        for label in [Label::Target, Label::NonTarget] {
            if set.count(label) == 0 {
                continue;
            }
            let avg = average_epochs(set, LabelFilter::Only(label))?;
            for (ch, name) in set.channel_labels.iter().enumerate() {
                for j in 0..avg.ncols() {
                    averages.push(vec![
                        rec.subject_id().to_string(),
                        rec.condition().to_string(),
                        label.as_str().to_string(),
                        name.clone(),
                        j.to_string(),
                        num(time_ms(j, set.sample_rate)),
                        num(avg[(ch, j)]),
                    ]);
                }
            }
        }
    }
    ctx.run.write_csv(
        "epochs/counts.csv",
        &[
            "input",
            "subject",
            "condition",
            "window_s",
            "n_events",
            "n_target",
            "n_nontarget",
            "dropped",
            "shift_samples",
        ],
        &counts,
    )?;
    ctx.run.write_csv(
        "epochs/averages.csv",
        &["subject", "condition", "label", "channel", "sample", "time_ms", "value_uv"],
        &averages,
    )
}
