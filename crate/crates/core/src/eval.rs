//! Block-level cross-validation, repetition averaging, symbol selection and
//! the performance metrics (HR, BA, ROC-AUC, ITR).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epochs::mean_of;
use crate::error::{Error, Result};
use crate::model::{
    Condition, Epoch, EpochSet, FlashGroup, Label, FLASHES_PER_REPETITION, N_SYMBOLS, REPETITIONS_PER_BLOCK,
    TARGET_FLASHES_PER_REPETITION,
};
use crate::riemann::{FeatureMode, MdmModel};
use crate::spatial::DEFAULT_COMPONENTS;

pub const CLASSIFIER_WINDOW_SECONDS: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub fractions: Vec<f64>,
    pub n_random_sets: usize,
    pub repetitions: Vec<usize>,
    pub seed: u64,
    pub n_components: usize,
    pub feature_mode: FeatureMode,
    pub soa_ms: f64,
    pub feedback_pause_ms: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            fractions: (1..=9).map(|i| i as f64 / 10.0).collect(),
            n_random_sets: 100,
            repetitions: (1..=REPETITIONS_PER_BLOCK).collect(),
            seed: 0,
            n_components: DEFAULT_COMPONENTS,
            feature_mode: FeatureMode::Augmented,
            soa_ms: 130.0,
            feedback_pause_ms: 2000.0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.fractions.is_empty() || self.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return bad(format!("training fractions must lie in (0,1): {:?}", self.fractions));
        }
        if self.fractions.windows(2).any(|w| w[1] <= w[0]) {
            return bad("training fractions must be strictly increasing".into());
        }
        if self.n_random_sets == 0 {
            return bad("n_random_sets must be at least 1".into());
        }
        if self.repetitions.is_empty()
            || self.repetitions.iter().any(|&r| r == 0 || r > REPETITIONS_PER_BLOCK)
            || self.repetitions.windows(2).any(|w| w[1] <= w[0])
        {
            return bad(format!("repetitions must be increasing within 1..={REPETITIONS_PER_BLOCK}: {:?}", self.repetitions));
        }
        if self.n_components == 0 {
            return bad("n_components must be at least 1".into());
        }
        if !(self.soa_ms > 0.0) || !(self.feedback_pause_ms >= 0.0) {
            return bad("timing must be positive".into());
        }
        Ok(())
    }

    pub fn selection_seconds(&self, r: usize) -> f64 {
        (r * FLASHES_PER_REPETITION) as f64 * self.soa_ms / 1000.0 + self.feedback_pause_ms / 1000.0
    }
}

/// Number of training blocks for `fraction` of `n_blocks`: round half up,
/// clamped so both sides keep at least one block.
pub fn train_block_count(n_blocks: usize, fraction: f64) -> Result<usize> {
    if n_blocks < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 blocks to split, got {n_blocks}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("training fraction {fraction} outside (0,1)")));
    }
    Ok(((fraction * n_blocks as f64 + 0.5).floor() as usize).clamp(1, n_blocks - 1))
}

/// Random disjoint partition of `blocks` into sorted (train, test) ids.
pub fn split_blocks<R: Rng + ?Sized>(blocks: &[u8], fraction: f64, rng: &mut R) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut ids = blocks.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != blocks.len() {
        return Err(Error::InvalidArgument("duplicate block ids".into()));
    }
    let n_train = train_block_count(ids.len(), fraction)?;
    ids.shuffle(rng);
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Averages the first `r` repetitions of one block. The j-th target and j-th
/// nontarget of each repetition (in flash order) are averaged together,
/// giving 2 targets followed by 10 nontargets. Metadata other than the data
/// comes from the first repetition.
pub fn repetition_average(block: &[&Epoch], r: usize) -> Result<Vec<Epoch>> {
    if r == 0 || r > REPETITIONS_PER_BLOCK {
        return Err(Error::InvalidArgument(format!("r = {r} outside 1..={REPETITIONS_PER_BLOCK}")));
    }
    let first = block.first().ok_or_else(|| Error::EmptyInput("block has no epochs".into()))?;
    if block.iter().any(|e| e.block_index != first.block_index) {
        return Err(Error::InvalidArgument("epochs from more than one block".into()));
    }
    let n_nt = FLASHES_PER_REPETITION - TARGET_FLASHES_PER_REPETITION;
    let mut slots: Vec<Vec<&Epoch>> = Vec::with_capacity(r);
    for rep in 0..r as u8 {
        let mut in_rep: Vec<&Epoch> = block.iter().copied().filter(|e| e.repetition_index == rep).collect();
        in_rep.sort_by_key(|e| e.flash_index);
        let (ta, nt): (Vec<&Epoch>, Vec<&Epoch>) = in_rep.iter().partition(|e| e.label == Label::Target);
        if ta.len() != TARGET_FLASHES_PER_REPETITION || nt.len() != n_nt {
            return Err(Error::InvalidArgument(format!(
                "block {} repetition {rep}: {} targets and {} nontargets, expected {TARGET_FLASHES_PER_REPETITION} and {n_nt}",
                first.block_index,
                ta.len(),
                nt.len()
            )));
        }
        slots.push(ta.into_iter().chain(nt).collect());
    }
    Ok((0..FLASHES_PER_REPETITION)
        .map(|j| {
            let template = slots[0][j];
            Epoch {
                data: mean_of(slots.iter().map(|s| &s[j].data)).expect("r ≥ 1"),
                ..template.clone()
            }
        })
        .collect())
}

/// Symbol with the largest summed score over the flashes containing it;
/// ties go to the lowest index.
pub fn select_symbol(flashes: &[(FlashGroup, f64)]) -> u8 {
    let mut totals = [0.0f64; N_SYMBOLS];
    for (group, score) in flashes {
        for &s in group.symbols() {
            totals[s as usize] += score;
        }
    }
    let mut best = 0;
    for s in 1..N_SYMBOLS {
        if totals[s] > totals[best] {
            best = s;
        }
    }
    best as u8
}

/// Fraction of blocks whose selected symbol is the target. `blocks` holds
/// per-block target and the single-flash scores of the first `r`
/// repetitions.
pub fn hit_rate_from_scores(blocks: &[(u8, Vec<(FlashGroup, f64)>)]) -> Result<f64> {
    if blocks.is_empty() {
        return Err(Error::EmptyInput("no test blocks for hit rate".into()));
    }
    let hits = blocks.iter().filter(|(target, flashes)| select_symbol(flashes) == *target).count();
    Ok(hits as f64 / blocks.len() as f64)
}

/// ½(A/(A+B) + C/(C+D)) with A/B the correctly/incorrectly classified
/// nontargets and C/D the targets.
pub fn balanced_accuracy(a: usize, b: usize, c: usize, d: usize) -> Result<f64> {
    if a + b == 0 || c + d == 0 {
        return Err(Error::EmptyInput(format!("balanced accuracy with an empty class (A+B={}, C+D={})", a + b, c + d)));
    }
    Ok(0.5 * (a as f64 / (a + b) as f64 + c as f64 / (c + d) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub nt_correct: usize,
    pub nt_wrong: usize,
    pub ta_correct: usize,
    pub ta_wrong: usize,
}

impl Confusion {
    pub fn add(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::NonTarget, Label::NonTarget) => self.nt_correct += 1,
            (Label::NonTarget, Label::Target) => self.nt_wrong += 1,
            (Label::Target, Label::Target) => self.ta_correct += 1,
            (Label::Target, Label::NonTarget) => self.ta_wrong += 1,
        }
    }

    pub fn balanced_accuracy(&self) -> Result<f64> {
        balanced_accuracy(self.nt_correct, self.nt_wrong, self.ta_correct, self.ta_wrong)
    }
}

/// Mann–Whitney AUC: probability that a random target outscores a random
/// nontarget, ties counted ½.
pub fn roc_auc(scored: &[(f64, Label)]) -> Result<f64> {
    if scored.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_ta = scored.iter().filter(|(_, l)| l.is_target()).count();
    let n_nt = scored.len() - n_ta;
    if n_ta == 0 || n_nt == 0 {
        return Err(Error::EmptyInput(format!("ROC-AUC needs both classes ({n_ta} targets, {n_nt} nontargets)")));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&i, &j| scored[i].0.total_cmp(&scored[j].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * order[i..=j].iter().filter(|&&k| scored[k].1.is_target()).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_ta * (n_ta + 1)) as f64 / 2.0;
    Ok(u / (n_ta * n_nt) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Itr {
    pub bits_per_minute: f64,
    /// Accuracy was below chance; the rate is reported as 0.
    pub below_chance: bool,
}

/// Wolpaw information transfer rate in bits per minute for `n` symbols,
/// accuracy `p` and `t` seconds per selection.
pub fn itr(n: usize, p: f64, t: f64) -> Result<Itr> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("ITR needs N ≥ 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("accuracy {p} outside [0,1]")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("selection time must be positive, got {t}")));
    }
    let nf = n as f64;
    if p < 1.0 / nf {
        return Ok(Itr {
            bits_per_minute: 0.0,
            below_chance: true,
        });
    }
    let xlog2 = |x: f64| if x > 0.0 { x * x.log2() } else { 0.0 };
    let q = 1.0 - p;
    let wrong = if q > 0.0 { q * (q / (nf - 1.0)).log2() } else { 0.0 };
    let bits = (nf.log2() + xlog2(p) + wrong).max(0.0);
    Ok(Itr {
        bits_per_minute: bits * 60.0 / t,
        below_chance: false,
    })
}

/// Model together with the blocks it was fitted on.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: MdmModel,
    pub train_blocks: Vec<u8>,
}

pub fn fit_on_blocks(set: &EpochSet, train_blocks: &[u8], n_components: usize, mode: FeatureMode) -> Result<TrainedModel> {
    let (ta, nt): (Vec<&Epoch>, Vec<&Epoch>) = set.in_blocks(train_blocks).partition(|e| e.label == Label::Target);
    let ta: Vec<_> = ta.iter().map(|e| &e.data).collect();
    let nt: Vec<_> = nt.iter().map(|e| &e.data).collect();
    Ok(TrainedModel {
        model: MdmModel::fit(&ta, &nt, n_components, mode)?,
        train_blocks: train_blocks.to_vec(),
    })
}

fn check_isolation(trained: &TrainedModel, test_blocks: &[u8]) -> Result<()> {
    if let Some(b) = test_blocks.iter().find(|b| trained.train_blocks.contains(b)) {
        return Err(Error::Leakage(format!("test block {b} was used for training")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionMetrics {
    pub r: usize,
    pub hr: f64,
    pub ba: f64,
    pub auc: f64,
}

fn group_blocks<'a>(set: &'a EpochSet, blocks: &'a [u8]) -> BTreeMap<u8, Vec<&'a Epoch>> {
    let mut out: BTreeMap<u8, Vec<&Epoch>> = BTreeMap::new();
    for e in set.in_blocks(blocks) {
        out.entry(e.block_index).or_default().push(e);
    }
    out
}

/// HR for the first `r` repetitions of each test block.
pub fn hit_rate(trained: &TrainedModel, set: &EpochSet, test_blocks: &[u8], r: usize) -> Result<f64> {
    Ok(evaluate(trained, set, test_blocks, &[r])?[0].hr)
}

/// HR from summed single-flash scores; BA and ROC-AUC on
/// repetition-averaged test epochs.
pub fn evaluate(trained: &TrainedModel, set: &EpochSet, test_blocks: &[u8], rs: &[usize]) -> Result<Vec<RepetitionMetrics>> {
    check_isolation(trained, test_blocks)?;
    let blocks = group_blocks(set, test_blocks);
    if blocks.is_empty() {
        return Err(Error::EmptyInput("no test epochs".into()));
    }
    let mut single: BTreeMap<u8, Vec<(u8, FlashGroup, f64)>> = BTreeMap::new();
    for (&b, epochs) in &blocks {
        let scores = epochs
            .iter()
            .map(|e| Ok((e.repetition_index, e.flash_group, trained.model.score_epoch(&e.data)?)))
            .collect::<Result<Vec<_>>>()?;
        single.insert(b, scores);
    }
    rs.iter()
        .map(|&r| {
            let per_block: Vec<(u8, Vec<(FlashGroup, f64)>)> = blocks
                .iter()
                .map(|(b, epochs)| {
                    let flashes = single[b]
                        .iter()
                        .filter(|(rep, _, _)| (*rep as usize) < r)
                        .map(|&(_, g, s)| (g, s))
                        .collect();
                    (epochs[0].target_symbol, flashes)
                })
                .collect();
            let hr = hit_rate_from_scores(&per_block)?;
            let mut confusion = Confusion::default();
            let mut scored = Vec::new();
            for epochs in blocks.values() {
                for avg in repetition_average(epochs, r)? {
                    let s = trained.model.score_epoch(&avg.data)?;
                    confusion.add(avg.label, Label::from_is_target(s > 0.0));
                    scored.push((s, avg.label));
                }
            }
            Ok(RepetitionMetrics {
                r,
                hr,
                ba: confusion.balanced_accuracy()?,
                auc: roc_auc(&scored)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub fraction: f64,
    pub n_train_blocks: usize,
    pub r: usize,
    pub hr_mean: f64,
    pub hr_se: f64,
    pub ba_mean: f64,
    pub ba_se: f64,
    pub auc_mean: f64,
    pub auc_se: f64,
    /// From the mean hit rate.
    pub itr: f64,
    pub itr_below_chance: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hr,
    Ba,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Hr, Metric::Ba, Metric::Auc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Hr => "hr",
            Metric::Ba => "ba",
            Metric::Auc => "auc",
        }
    }
}

impl MetricRow {
    pub fn mean(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Hr => self.hr_mean,
            Metric::Ba => self.ba_mean,
            Metric::Auc => self.auc_mean,
        }
    }
}

/// Trapezoidal area of one metric curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveArea {
    pub metric: Metric,
    /// Training fraction for areas over `r`, or `r` for areas over fraction.
    pub at: f64,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subject_id: String,
    pub condition: Condition,
    pub seed: u64,
    pub n_random_sets: usize,
    pub rows: Vec<MetricRow>,
    /// Area over the training-fraction axis, one per metric and `r`.
    pub curve_auc_over_fraction: Vec<CurveArea>,
    /// Area over the repetition axis, one per metric and training fraction.
    pub curve_auc_over_r: Vec<CurveArea>,
}

impl MetricsReport {
    pub fn row(&self, fraction_index: usize, r: usize) -> Option<&MetricRow> {
        let fraction = self.fractions().get(fraction_index).copied()?;
        self.rows.iter().find(|row| row.fraction == fraction && row.r == r)
    }

    pub fn fractions(&self) -> Vec<f64> {
        let mut f: Vec<f64> = self.rows.iter().map(|r| r.fraction).collect();
        f.dedup();
        f
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0).sum()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Independent rng for the `set`-th random split of the `fraction`-th
/// training size.
pub fn task_rng(seed: u64, fraction_index: usize, set_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((fraction_index as u64) << 32) | set_index as u64);
    rng
}

/// Metrics over random block splits at every training fraction. Tasks run in
/// parallel on the current rayon pool; results are reduced in a fixed order.
pub fn training_curve(set: &EpochSet, cfg: &CvConfig, subject_id: &str) -> Result<MetricsReport> {
    cfg.validate()?;
    let blocks = set.block_ids();
    let condition = set
        .epochs
        .first()
        .map(|e| e.condition)
        .ok_or_else(|| Error::EmptyInput("no epochs".into()))?;
    let tasks: Vec<(usize, usize)> = (0..cfg.fractions.len())
        .flat_map(|fi| (0..cfg.n_random_sets).map(move |si| (fi, si)))
        .collect();
    let results: Vec<Vec<RepetitionMetrics>> = tasks
        .par_iter()
        .map(|&(fi, si)| {
            let mut rng = task_rng(cfg.seed, fi, si);
            let (train, test) = split_blocks(&blocks, cfg.fractions[fi], &mut rng)?;
            let trained = fit_on_blocks(set, &train, cfg.n_components, cfg.feature_mode)?;
            evaluate(&trained, set, &test, &cfg.repetitions)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (fi, &fraction) in cfg.fractions.iter().enumerate() {
        let chunk = &results[fi * cfg.n_random_sets..(fi + 1) * cfg.n_random_sets];
        for (ri, &r) in cfg.repetitions.iter().enumerate() {
            let pick = |f: fn(&RepetitionMetrics) -> f64| chunk.iter().map(|m| f(&m[ri])).collect::<Vec<_>>();
            let (hr_mean, hr_se) = mean_se(&pick(|m| m.hr));
            let (ba_mean, ba_se) = mean_se(&pick(|m| m.ba));
            let (auc_mean, auc_se) = mean_se(&pick(|m| m.auc));
            let rate = itr(N_SYMBOLS, hr_mean, cfg.selection_seconds(r))?;
            rows.push(MetricRow {
                fraction,
                n_train_blocks: train_block_count(blocks.len(), fraction)?,
                r,
                hr_mean,
                hr_se,
                ba_mean,
                ba_se,
                auc_mean,
                auc_se,
                itr: rate.bits_per_minute,
                itr_below_chance: rate.below_chance,
            });
        }
    }

    let nr = cfg.repetitions.len();
    let at = |fi: usize, ri: usize| &rows[fi * nr + ri];
    let mut over_fraction = Vec::new();
    let mut over_r = Vec::new();
    for metric in Metric::ALL {
        for (ri, &r) in cfg.repetitions.iter().enumerate() {
            let y: Vec<f64> = (0..cfg.fractions.len()).map(|fi| at(fi, ri).mean(metric)).collect();
            over_fraction.push(CurveArea {
                metric,
                at: r as f64,
                area: trapezoid(&cfg.fractions, &y),
            });
        }
        let xr: Vec<f64> = cfg.repetitions.iter().map(|&r| r as f64).collect();
        for (fi, &fraction) in cfg.fractions.iter().enumerate() {
            let y: Vec<f64> = (0..nr).map(|ri| at(fi, ri).mean(metric)).collect();
            over_r.push(CurveArea {
                metric,
                at: fraction,
                area: trapezoid(&xr, &y),
            });
        }
    }
    Ok(MetricsReport {
        subject_id: subject_id.to_string(),
        condition,
        seed: cfg.seed,
        n_random_sets: cfg.n_random_sets,
        rows,
        curve_auc_over_fraction: over_fraction,
        curve_auc_over_r: over_r,
    })
}
