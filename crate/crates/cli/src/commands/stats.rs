use super::erp::{paired_test, sign_str, subject_waves};
use super::{time_ms, Ctx};
use crate::error::{usage_msg, CliResult};
use crate::inputs;
use crate::run::num;

/// Paired cluster permutation test between the two conditions.
pub fn run(ctx: &mut Ctx, paths: &[std::path::PathBuf]) -> CliResult<()> {
    let cfg = ctx.cfg;
    let seed = cfg.require_seed("stats")?;
    let loaded = inputs::load_all(paths, cfg, true)?;
    let data = subject_waves(&loaded, cfg)?;
    if data.conditions.len() != 2 {
        return Err(usage_msg("stats needs recordings from both conditions"));
    }
    let result = paired_test(&data, cfg, seed)?.expect("two conditions");
    let fs = data.sample_rate;
    let labels = &data.channel_labels;

    let summary: Vec<Vec<String>> = result
        .clusters
        .iter()
        .map(|c| {
            let (a, b) = c.cluster.sample_range();
            let chans: Vec<&str> = c.cluster.channels().iter().map(|&i| labels[i].as_str()).collect();
            vec![
                c.id.to_string(),
                sign_str(c.cluster.sign).to_string(),
                num(c.cluster.mass),
                num(c.p_value),
                c.significant.to_string(),
                num(time_ms(a, fs)),
                num(time_ms(b, fs)),
                c.cluster.cells.len().to_string(),
                chans.join(" "),
            ]
        })
        .collect();
    let mask: Vec<Vec<String>> = result
        .mask_rows()
        .into_iter()
        .map(|(ch, t, id)| vec![labels[ch].clone(), t.to_string(), id.to_string()])
        .collect();
    let mut tmap = Vec::new();
    for (ch, label) in labels.iter().enumerate() {
        for j in 0..result.tmap.ncols() {
            tmap.push(vec![label.clone(), j.to_string(), num(time_ms(j, fs)), num(result.tmap[(ch, j)])]);
        }
    }
    ctx.run.write_json("stats/clusters.json", &result)?;
    ctx.run.write_csv(
        "stats/clusters.csv",
        &["cluster_id", "sign", "mass", "p_value", "significant", "start_ms", "end_ms", "n_cells", "channels"],
        &summary,
    )?;
    ctx.run.write_csv("stats/cluster_mask.csv", &["channel", "sample", "cluster_id"], &mask)?;
    ctx.run.write_csv("stats/tmap.csv", &["channel", "sample", "time_ms", "t"], &tmap)?;
    log::info!(
        "{} clusters, {} significant",
        result.clusters.len(),
        result.significant().count()
    );
    Ok(())
}
