use p300_core::epochs::{
    average_epochs, difference_wave, extract_epochs, grand_average, peak_summary, DifferenceWave, LabelFilter,
    PeakWindow,
};
use p300_core::layout::ElectrodeLayout;
use p300_core::model::{Condition, Label};
use p300_core::stats::{permutation_test, ClusterResult, Sign};
use rayon::prelude::*;

use super::{time_ms, Ctx};
use crate::config::RunConfig;
use crate::error::{usage_msg, CliResult, ResultExt};
use crate::inputs::{self, Loaded};
use crate::plot::{Chart, Series, PALETTE};
use crate::run::num;

pub struct ConditionWaves {
    pub condition: Condition,
    pub subjects: Vec<String>,
    pub ta: Vec<DifferenceWave>,
    pub nt: Vec<DifferenceWave>,
    pub diff: Vec<DifferenceWave>,
}

pub struct ErpData {
    pub sample_rate: f64,
    pub channel_labels: Vec<String>,
    pub conditions: Vec<ConditionWaves>,
}

/// Per-subject class averages and difference waves over the ERP window.
pub fn subject_waves(loaded: &[Loaded], cfg: &RunConfig) -> CliResult<ErpData> {
    let grouped = inputs::by_condition(loaded)?;
    let first = &loaded[0].recording;
    let (sample_rate, channel_labels) = (first.sample_rate(), first.channel_labels().to_vec());
    if let Some(l) = loaded
        .iter()
        .find(|l| l.recording.sample_rate() != sample_rate || l.recording.channel_labels() != &channel_labels[..])
    {
        return Err(usage_msg(format!(
            "{} does not share the channel set and sample rate of {}",
            l.path.display(),
            loaded[0].path.display()
        )));
    }
    let mut conditions = Vec::new();
    for (condition, subjects) in grouped {
        let waves = subjects
            .par_iter()
            .map(|(_, l)| {
                let set = extract_epochs(&l.recording, cfg.erp.window_seconds, &cfg.latency)
                    .ctx(format!("epoching {}", l.path.display()))?
                    .set;
                let ta = average_epochs(&set, LabelFilter::Only(Label::Target))?;
                let nt = average_epochs(&set, LabelFilter::Only(Label::NonTarget))?;
                let diff = difference_wave(&set)?;
                Ok((DifferenceWave(ta), DifferenceWave(nt), diff))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let mut cw = ConditionWaves {
            condition,
            subjects: subjects.keys().cloned().collect(),
            ta: Vec::new(),
            nt: Vec::new(),
            diff: Vec::new(),
        };
        for (ta, nt, diff) in waves {
            cw.ta.push(ta);
            cw.nt.push(nt);
            cw.diff.push(diff);
        }
        conditions.push(cw);
    }
    Ok(ErpData {
        sample_rate,
        channel_labels,
        conditions,
    })
}

/// Cluster permutation test of PC against VR difference waves over the
/// subjects recorded in both conditions. `None` unless both are present.
pub fn paired_test(data: &ErpData, cfg: &RunConfig, seed: u64) -> CliResult<Option<ClusterResult>> {
    let [a, b] = match &data.conditions[..] {
        [a, b] => [a, b],
        _ => return Ok(None),
    };
    let common: Vec<&String> = a.subjects.iter().filter(|s| b.subjects.contains(s)).collect();
    if common.len() < 2 {
        return Err(usage_msg(format!(
            "the paired test needs at least two subjects recorded in both conditions, found {}",
            common.len()
        )));
    }
    let pick = |cw: &ConditionWaves| -> Vec<DifferenceWave> {
        common
            .iter()
            .map(|s| cw.diff[cw.subjects.iter().position(|x| x == *s).expect("common")].clone())
            .collect()
    };
    let layout = ElectrodeLayout::standard_16().for_channels(&data.channel_labels)?;
    log::info!(
        "cluster test {} vs {} on {} subjects, {} permutations, seed {seed}",
        a.condition,
        b.condition,
        common.len(),
        cfg.permutation.n_permutations
    );
    Ok(Some(permutation_test(&pick(a), &pick(b), &layout, &cfg.permutation_config(seed))?))
}

/// Contiguous sample runs of each significant cluster on one channel:
/// `(cluster id, first, last)`.
pub fn channel_spans(result: &ClusterResult, channel: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for c in result.significant() {
        let mut samples: Vec<usize> = c.cluster.cells.iter().filter(|(ch, _)| *ch == channel).map(|&(_, t)| t).collect();
        samples.sort_unstable();
        let mut iter = samples.into_iter();
        let Some(mut start) = iter.next() else { continue };
        let mut prev = start;
        for t in iter {
            if t != prev + 1 {
                out.push((c.id, start, prev));
                start = t;
            }
            prev = t;
        }
        out.push((c.id, start, prev));
    }
    out
}

pub fn sign_str(sign: Sign) -> &'static str {
    match sign {
        Sign::Positive => "positive",
        Sign::Negative => "negative",
    }
}

pub fn run(ctx: &mut Ctx, paths: &[std::path::PathBuf]) -> CliResult<()> {
    let cfg = ctx.cfg;
    let loaded = inputs::load_all(paths, cfg, true)?;
    let data = subject_waves(&loaded, cfg)?;
    let channels: Vec<(usize, String)> = cfg
        .erp
        .channels
        .iter()
        .map(|name| {
            data.channel_labels
                .iter()
                .position(|l| l == name)
                .map(|i| (i, name.clone()))
                .ok_or_else(|| usage_msg(format!("requested channel {name} is not in the recordings")))
        })
        .collect::<CliResult<_>>()?;
    let tested = if data.conditions.len() == 2 {
        let seed = cfg.require_seed("erp")?;
        paired_test(&data, cfg, seed)?
    } else {
        log::warn!("only one condition present; plotting without the comparison overlay");
        None
    };

    let fs = data.sample_rate;
    let mut ga_rows = Vec::new();
    let mut grand = Vec::new();
    for cw in &data.conditions {
        let mut per_wave = Vec::new();
        for (name, waves) in [("TA", &cw.ta), ("NT", &cw.nt), ("diff", &cw.diff)] {
            let ga = grand_average(waves)?;
            for (ch, label) in data.channel_labels.iter().enumerate() {
                for j in 0..ga.mean.ncols() {
                    ga_rows.push(vec![
                        cw.condition.to_string(),
                        name.to_string(),
                        label.clone(),
                        j.to_string(),
                        num(time_ms(j, fs)),
                        num(ga.mean[(ch, j)]),
                        if ga.stderr_defined { num(ga.stderr[(ch, j)]) } else { String::new() },
                        ga.n.to_string(),
                    ]);
                }
            }
            per_wave.push(ga);
        }
        grand.push(per_wave);
    }
    ctx.run.write_csv(
        "erp/grand_average.csv",
        &["condition", "wave", "channel", "sample", "time_ms", "mean_uv", "se_uv", "n_subjects"],
        &ga_rows,
    )?;

    let mut peak_rows = Vec::new();
    for cw in &data.conditions {
        for (subject, wave) in cw.subjects.iter().zip(&cw.diff) {
            for p in peak_summary(wave.matrix(), fs, &data.channel_labels, &PeakWindow::standard())? {
                peak_rows.push(vec![
                    subject.clone(),
                    cw.condition.to_string(),
                    p.component,
                    p.channel,
                    num(p.latency_ms),
                    num(p.amplitude_uv),
                ]);
            }
        }
    }
    ctx.run.write_csv(
        "erp/peaks.csv",
        &["subject", "condition", "component", "channel", "latency_ms", "amplitude_uv"],
        &peak_rows,
    )?;

    let mut sig_rows = Vec::new();
    for (ch, name) in &channels {
        let spans = tested.as_ref().map(|r| channel_spans(r, *ch)).unwrap_or_default();
        for &(id, a, b) in &spans {
            let c = tested.as_ref().and_then(|r| r.clusters.iter().find(|c| c.id == id)).expect("span of a tested cluster");
            sig_rows.push(vec![
                name.clone(),
                id.to_string(),
                sign_str(c.cluster.sign).to_string(),
                num(time_ms(a, fs)),
                num(time_ms(b, fs)),
                num(c.p_value),
            ]);
        }
        let mut series = Vec::new();
        for (ci, (cw, ga)) in data.conditions.iter().zip(&grand).enumerate() {
            for (wi, (wave, dashed)) in [("TA", false), ("NT", true)].into_iter().enumerate() {
                let g = &ga[wi];
                let x: Vec<f64> = (0..g.mean.ncols()).map(|j| time_ms(j, fs)).collect();
                let mut s = Series::line(
                    format!("{} {wave}", cw.condition),
                    x,
                    g.mean.row(*ch).iter().copied().collect(),
                    PALETTE[ci % PALETTE.len()],
                );
                s.dashed = dashed;
                if g.stderr_defined {
                    s.band = Some(g.stderr.row(*ch).iter().copied().collect());
                }
                series.push(s);
            }
        }
        let chart = Chart {
            title: format!("Grand average at {name}"),
            x_label: "time after stimulus (ms)".into(),
            y_label: "amplitude (µV)".into(),
            series,
            spans: spans.iter().map(|&(_, a, b)| (time_ms(a, fs), time_ms(b, fs))).collect(),
            y_range: None,
        };
        ctx.run.write_bytes(&format!("erp/{name}.svg"), chart.to_svg().as_bytes())?;
    }
    if let Some(result) = &tested {
        ctx.run.write_json("erp/clusters.json", result)?;
        ctx.run.write_csv(
            "erp/significance.csv",
            &["channel", "cluster_id", "sign", "start_ms", "end_ms", "p_value"],
            &sig_rows,
        )?;
    }
    Ok(())
}
