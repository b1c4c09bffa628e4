use std::collections::BTreeMap;

use p300_core::epochs::extract_epochs;
use p300_core::eval::{training_curve, Metric, MetricsReport};
use p300_core::model::{Condition, REPETITIONS_PER_BLOCK};
use serde::{Deserialize, Serialize};

use super::Ctx;
use crate::error::{CliResult, ResultExt};
use crate::inputs;
use crate::plot::{Chart, Series, PALETTE};
use crate::run::num;

/// Across-subject mean of one metric at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrandRow {
    pub condition: Condition,
    pub fraction: f64,
    pub n_train_blocks: usize,
    pub r: usize,
    pub metric: String,
    pub mean: f64,
    /// Standard error across subjects; absent with one subject.
    pub se: Option<f64>,
    pub n_subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub repetitions: Vec<usize>,
    pub n_random_sets: usize,
    pub plot_fraction: f64,
    pub grand_average: Vec<GrandRow>,
}

fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

const METRICS: [&str; 4] = ["hr", "ba", "auc", "itr"];

fn metric_value(row: &p300_core::eval::MetricRow, metric: &str) -> f64 {
    match metric {
        "hr" => row.mean(Metric::Hr),
        "ba" => row.mean(Metric::Ba),
        "auc" => row.mean(Metric::Auc),
        _ => row.itr,
    }
}

fn grand_rows(reports: &[MetricsReport]) -> Vec<GrandRow> {
    let mut by_condition: BTreeMap<Condition, Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        by_condition.entry(r.condition).or_default().push(r);
    }
    let mut out = Vec::new();
    for (condition, reps) in by_condition {
        for (i, row) in reps[0].rows.iter().enumerate() {
            for metric in METRICS {
                let values: Vec<f64> = reps.iter().map(|r| metric_value(&r.rows[i], metric)).collect();
                let (mean, se) = mean_se(&values);
                out.push(GrandRow {
                    condition,
                    fraction: row.fraction,
                    n_train_blocks: row.n_train_blocks,
                    r: row.r,
                    metric: metric.to_string(),
                    mean,
                    se,
                    n_subjects: values.len(),
                });
            }
        }
    }
    out
}

fn nearest(values: &[f64], target: f64) -> f64 {
    values
        .iter()
        .copied()
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
        .expect("nonempty grid")
}

fn metric_title(metric: &str) -> &'static str {
    match metric {
        "hr" => "hit rate",
        "ba" => "balanced accuracy",
        "auc" => "ROC AUC",
        _ => "ITR (bits/min)",
    }
}

fn plots(ctx: &Ctx, grand: &[GrandRow], plot_fraction: f64, first_r: usize) -> CliResult<()> {
    let conditions: Vec<Condition> = {
        let mut c: Vec<Condition> = grand.iter().map(|g| g.condition).collect();
        c.dedup();
        c
    };
    for metric in METRICS {
        let rows = |c: Condition| grand.iter().filter(move |g| g.condition == c && g.metric == metric);
        let y_range = (metric != "itr").then_some((0.0, 1.0));
        let mut vs_r = Vec::new();
        let mut vs_train = Vec::new();
        for (ci, &c) in conditions.iter().enumerate() {
            let color = PALETTE[ci % PALETTE.len()];
            let at_f: Vec<&GrandRow> = rows(c).filter(|g| g.fraction == plot_fraction).collect();
            let mut s = Series::line(
                c.to_string(),
                at_f.iter().map(|g| g.r as f64).collect(),
                at_f.iter().map(|g| g.mean).collect(),
                color,
            );
            s.band = at_f.iter().map(|g| g.se).collect();
            s.markers = true;
            vs_r.push(s);
            let at_r: Vec<&GrandRow> = rows(c).filter(|g| g.r == first_r).collect();
            // training size in target epochs: 10 per block
            let mut s = Series::line(
                c.to_string(),
                at_r.iter().map(|g| (g.n_train_blocks * 2 * REPETITIONS_PER_BLOCK) as f64).collect(),
                at_r.iter().map(|g| g.mean).collect(),
                color,
            );
            s.band = at_r.iter().map(|g| g.se).collect();
            s.markers = true;
            vs_train.push(s);
        }
        let chart = Chart {
            title: format!("{} vs repetitions (training fraction {})", metric_title(metric), num(plot_fraction)),
            x_label: "repetitions r".into(),
            y_label: metric_title(metric).into(),
            series: vs_r,
            spans: vec![],
            y_range,
        };
        ctx.run.write_bytes(&format!("eval/{metric}_vs_r.svg"), chart.to_svg().as_bytes())?;
        let chart = Chart {
            title: format!("{} vs training size (r = {first_r})", metric_title(metric)),
            x_label: "target training epochs".into(),
            y_label: metric_title(metric).into(),
            series: vs_train,
            spans: vec![],
            y_range,
        };
        ctx.run.write_bytes(&format!("eval/{metric}_vs_training.svg"), chart.to_svg().as_bytes())?;
    }
    Ok(())
}

/// Repeated random-split training curves per recording, with grand
/// averages across subjects per condition.
pub fn run(ctx: &mut Ctx, paths: &[std::path::PathBuf]) -> CliResult<()> {
    let cfg = ctx.cfg;
    let seed = cfg.require_seed("eval")?;
    let cv = cfg.cv_config(seed);
    cv.validate()?;
    log::info!(
        "evaluating with seed {seed}, {} random sets per fraction",
        cv.n_random_sets
    );
    let loaded = inputs::load_all(paths, cfg, true)?;
    let mut reports = Vec::new();
    for l in &loaded {
        let set = extract_epochs(&l.recording, cfg.classifier.window_seconds, &cfg.latency)
            .ctx(format!("epoching {}", l.path.display()))?
            .set;
        let report = training_curve(&set, &cv, l.recording.subject_id()).ctx(format!("evaluating {}", l.path.display()))?;
        reports.push(report);
    }

    let mut rows = Vec::new();
    let mut areas = Vec::new();
    for rep in &reports {
        let id = |v: &mut Vec<String>| {
            v.insert(0, rep.condition.to_string());
            v.insert(0, rep.subject_id.clone());
        };
        for row in &rep.rows {
            for (metric, mean, se) in [
                ("hr", row.hr_mean, Some(row.hr_se)),
                ("ba", row.ba_mean, Some(row.ba_se)),
                ("auc", row.auc_mean, Some(row.auc_se)),
                ("itr", row.itr, None),
            ] {
                let mut v = vec![
                    num(row.fraction),
                    row.n_train_blocks.to_string(),
                    row.r.to_string(),
                    metric.to_string(),
                    num(mean),
                    se.map(num).unwrap_or_default(),
                ];
                id(&mut v);
                rows.push(v);
            }
        }
        for (axis, list) in [("fraction", &rep.curve_auc_over_fraction), ("r", &rep.curve_auc_over_r)] {
            for a in list {
                let mut v = vec![axis.to_string(), num(a.at), a.metric.as_str().to_string(), num(a.area)];
                id(&mut v);
                areas.push(v);
            }
        }
    }
    ctx.run.write_csv(
        "eval/metrics.csv",
        &["subject", "condition", "fraction", "n_train_blocks", "r", "metric", "mean", "se"],
        &rows,
    )?;
    ctx.run.write_csv("eval/curve_auc.csv", &["subject", "condition", "axis", "at", "metric", "area"], &areas)?;

    let grand = grand_rows(&reports);
    let grand_csv: Vec<Vec<String>> = grand
        .iter()
        .map(|g| {
            vec![
                g.condition.to_string(),
                num(g.fraction),
                g.n_train_blocks.to_string(),
                g.r.to_string(),
                g.metric.clone(),
                num(g.mean),
                g.se.map(num).unwrap_or_default(),
                g.n_subjects.to_string(),
            ]
        })
        .collect();
    ctx.run.write_csv(
        "eval/grand_average.csv",
        &["condition", "fraction", "n_train_blocks", "r", "metric", "mean", "se", "n_subjects"],
        &grand_csv,
    )?;
    ctx.run.write_json("eval/reports.json", &reports)?;
    let plot_fraction = nearest(&cv.fractions, cfg.cv.plot_fraction);
    let summary = EvalSummary {
        seed,
        fractions: cv.fractions.clone(),
        repetitions: cv.repetitions.clone(),
        n_random_sets: cv.n_random_sets,
        plot_fraction,
        grand_average: grand,
    };
    ctx.run.write_json("eval/summary.json", &summary)?;
    plots(ctx, &summary.grand_average, plot_fraction, cv.repetitions[0])
}
