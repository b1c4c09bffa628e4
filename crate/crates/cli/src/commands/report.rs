use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::EvalSummary;
use super::Ctx;
use crate::error::{usage_msg, CliResult};
use crate::run::digest_file;

#[derive(Debug, Serialize, Deserialize)]
struct SourceManifest {
    command: String,
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct Source {
    run: String,
    command: String,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EpochCount {
    input: String,
    subject: String,
    condition: String,
    n_events: usize,
    n_target: usize,
    n_nontarget: usize,
    dropped: usize,
    shift_samples: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClusterLine {
    cluster_id: usize,
    sign: String,
    mass: f64,
    p_value: f64,
    significant: bool,
    start_ms: f64,
    end_ms: f64,
    n_cells: usize,
    channels: String,
}

#[derive(Debug, Serialize)]
struct Classification {
    run: String,
    condition: String,
    fraction: f64,
    r: usize,
    hr: f64,
    ba: f64,
    auc: f64,
    itr: f64,
}

#[derive(Debug, Default, Serialize)]
struct ReportSummary {
    sources: Vec<Source>,
    epochs: Vec<EpochCount>,
    clusters: Vec<ClusterLine>,
    classification: Vec<Classification>,
}

struct Reader<'a, 'b> {
    ctx: &'a mut Ctx<'b>,
    dir: PathBuf,
}

impl Reader<'_, '_> {
    fn bytes(&mut self, rel: &str) -> CliResult<Option<Vec<u8>>> {
        let path = self.dir.join(rel);
        if !path.is_file() {
            return Ok(None);
        }
        self.ctx.inputs.push(digest_file(&path, path.display().to_string())?);
        std::fs::read(&path)
            .map(Some)
            .map_err(|e| usage_msg(format!("cannot read {}: {e}", path.display())))
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self, rel: &str) -> CliResult<Option<T>> {
        let Some(bytes) = self.bytes(rel)? else { return Ok(None) };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| usage_msg(format!("invalid {}: {e}", self.dir.join(rel).display())))
    }

    fn csv<T: for<'de> Deserialize<'de>>(&mut self, rel: &str) -> CliResult<Vec<T>> {
        let Some(bytes) = self.bytes(rel)? else { return Ok(Vec::new()) };
        csv::Reader::from_reader(&bytes[..])
            .deserialize()
            .collect::<Result<Vec<T>, _>>()
            .map_err(|e| usage_msg(format!("invalid {}: {e}", self.dir.join(rel).display())))
    }
}

fn collect(ctx: &mut Ctx, dir: &Path, summary: &mut ReportSummary) -> CliResult<()> {
    let run = dir.display().to_string();
    let mut r = Reader {
        ctx,
        dir: dir.to_path_buf(),
    };
    let manifest: SourceManifest = r
        .json("manifest.json")?
        .ok_or_else(|| usage_msg(format!("{run} is not a run directory (no manifest.json)")))?;
    summary.sources.push(Source {
        run: run.clone(),
        command: manifest.command,
        seed: manifest.seed,
    });
    summary.epochs.extend(r.csv::<EpochCount>("epochs/counts.csv")?);
    summary.clusters.extend(r.csv::<ClusterLine>("stats/clusters.csv")?);
    if let Some(eval) = r.json::<EvalSummary>("eval/summary.json")? {
        let at = |cond, rr, metric: &str| {
            eval.grand_average
                .iter()
                .find(|g| g.condition == cond && g.r == rr && g.fraction == eval.plot_fraction && g.metric == metric)
                .map(|g| g.mean)
                .unwrap_or(f64::NAN)
        };
        let mut conditions: Vec<_> = eval.grand_average.iter().map(|g| g.condition).collect();
        conditions.dedup();
        for c in conditions {
            for &rr in &eval.repetitions {
                summary.classification.push(Classification {
                    run: run.clone(),
                    condition: c.to_string(),
                    fraction: eval.plot_fraction,
                    r: rr,
                    hr: at(c, rr, "hr"),
                    ba: at(c, rr, "ba"),
                    auc: at(c, rr, "auc"),
                    itr: at(c, rr, "itr"),
                });
            }
        }
    }
    Ok(())
}

fn markdown(s: &ReportSummary) -> String {
    let mut md = String::from("# P300 run report\n\n## Sources\n\n");
    for src in &s.sources {
        let seed = src.seed.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
        let _ = writeln!(md, "- `{}`: {} (seed {seed})", src.run, src.command);
    }
    if !s.epochs.is_empty() {
        md.push_str("\n## Epochs\n\n| subject | condition | events | TA | NT | dropped | shift |\n|---|---|---|---|---|---|---|\n");
        for e in &s.epochs {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                e.subject, e.condition, e.n_events, e.n_target, e.n_nontarget, e.dropped, e.shift_samples
            );
        }
    }
    if !s.clusters.is_empty() {
        md.push_str("\n## Clusters\n\n| id | sign | mass | p | significant | window (ms) | channels |\n|---|---|---|---|---|---|---|\n");
        for c in &s.clusters {
            let _ = writeln!(
                md,
                "| {} | {} | {:.2} | {:.4} | {} | {:.1} to {:.1} | {} |",
                c.cluster_id, c.sign, c.mass, c.p_value, c.significant, c.start_ms, c.end_ms, c.channels
            );
        }
    }
    if !s.classification.is_empty() {
        md.push_str("\n## Classification (grand average)\n\n| condition | fraction | r | HR | BA | AUC | ITR |\n|---|---|---|---|---|---|---|\n");
        for c in &s.classification {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.2} |",
                c.condition, c.fraction, c.r, c.hr, c.ba, c.auc, c.itr
            );
        }
    }
    md
}

/// Collects the tables of earlier runs into one summary.
pub fn run(ctx: &mut Ctx, dirs: &[PathBuf]) -> CliResult<()> {
    if dirs.is_empty() {
        return Err(usage_msg("report needs at least one run directory"));
    }
    let mut summary = ReportSummary::default();
    for d in dirs {
        if !d.is_dir() {
            return Err(usage_msg(format!("run directory not found: {}", d.display())));
        }
        collect(ctx, d, &mut summary)?;
    }
    ctx.run.write_json("report/summary.json", &summary)?;
    ctx.run.write_bytes("report/report.md", markdown(&summary).as_bytes())
}
