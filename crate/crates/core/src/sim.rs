//! Session simulator: stimulus combinatorics, feedback draws and synthetic
//! EEG with Gaussian-bump ERP components over pink background noise.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::epochs::{ms_to_samples, DifferenceWave, LatencyTable};
use crate::error::{Error, Result};
use crate::layout::ElectrodeLayout;
use crate::model::{
    Condition, FlashGroup, Recording, TagEvent, BLOCKS_PER_SESSION, FLASHES_PER_REPETITION, GROUP_SIZE,
    N_SYMBOLS, REPETITIONS_PER_BLOCK,
};

pub const FEEDBACK_CORRECT_PROBABILITY: f64 = 0.7;
pub const SIM_SAMPLE_RATE: f64 = 512.0;
/// Background noise RMS in µV when the SNR is finite.
pub const NOISE_RMS_UV: f64 = 10.0;
/// Templates are truncated to this many milliseconds after the response onset.
pub const TEMPLATE_SUPPORT_MS: f64 = 1000.0;

pub type Repetition = [FlashGroup; FLASHES_PER_REPETITION];

/// Two independent uniform partitions of the 36 symbols into groups of six,
/// all twelve groups shuffled into presentation order.
pub fn gen_repetition<R: Rng + ?Sized>(rng: &mut R) -> Repetition {
    let mut groups = Vec::with_capacity(FLASHES_PER_REPETITION);
    for _ in 0..2 {
        let mut symbols: Vec<u8> = (0..N_SYMBOLS as u8).collect();
        symbols.shuffle(rng);
        for chunk in symbols.chunks(GROUP_SIZE) {
            let arr: [u8; GROUP_SIZE] = chunk.try_into().expect("chunk of six");
            groups.push(FlashGroup::new(arr).expect("distinct symbols"));
        }
    }
    groups.shuffle(rng);
    groups.try_into().expect("twelve groups")
}

/// Symbols placed at random in a 6×6 grid, flashed by rows and by columns,
/// so any two groups from different halves share exactly one symbol. Unlike
/// [`gen_repetition`], a single repetition identifies every symbol.
pub fn gen_row_column_repetition<R: Rng + ?Sized>(rng: &mut R) -> Repetition {
    let mut grid: Vec<u8> = (0..N_SYMBOLS as u8).collect();
    grid.shuffle(rng);
    let mut groups = Vec::with_capacity(FLASHES_PER_REPETITION);
    for i in 0..GROUP_SIZE {
        let row: [u8; GROUP_SIZE] = std::array::from_fn(|j| grid[i * GROUP_SIZE + j]);
        let col: [u8; GROUP_SIZE] = std::array::from_fn(|j| grid[j * GROUP_SIZE + i]);
        groups.push(FlashGroup::new(row).expect("distinct symbols"));
        groups.push(FlashGroup::new(col).expect("distinct symbols"));
    }
    groups.shuffle(rng);
    groups.try_into().expect("twelve groups")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    RandomPartitions,
    RowColumn,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-partitions" => Ok(ScheduleKind::RandomPartitions),
            "row-column" => Ok(ScheduleKind::RowColumn),
            other => Err(Error::InvalidArgument(format!("unknown schedule kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionTiming {
    pub soa_ms: f64,
    pub feedback_pause_ms: f64,
    pub lead_in_ms: f64,
    pub tail_ms: f64,
}

impl Default for SessionTiming {
    fn default() -> Self {
        SessionTiming {
            soa_ms: 130.0,
            feedback_pause_ms: 2000.0,
            lead_in_ms: 1000.0,
            tail_ms: 1500.0,
        }
    }
}

impl SessionTiming {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.soa_ms.is_finite() && self.soa_ms > 0.0)
            || !ok(self.feedback_pause_ms)
            || !ok(self.lead_in_ms)
            || !ok(self.tail_ms)
        {
            return Err(Error::InvalidArgument(format!("invalid session timing {self:?}")));
        }
        Ok(())
    }

    /// Seconds per symbol selection with `r` repetitions.
    pub fn selection_seconds(&self, r: usize) -> f64 {
        (r * FLASHES_PER_REPETITION) as f64 * self.soa_ms / 1000.0 + self.feedback_pause_ms / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Correct,
    Incorrect,
}

pub fn draw_feedback<R: Rng + ?Sized>(rng: &mut R, p_correct: f64) -> Result<Feedback> {
    let dist = Bernoulli::new(p_correct)
        .map_err(|_| Error::InvalidArgument(format!("feedback probability {p_correct} outside [0,1]")))?;
    Ok(if dist.sample(rng) { Feedback::Correct } else { Feedback::Incorrect })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub target_symbol: u8,
    pub repetitions: Vec<Repetition>,
    pub feedback: Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSchedule {
    pub blocks: Vec<BlockSchedule>,
    pub timing: SessionTiming,
}

pub fn gen_session<R: Rng + ?Sized>(rng: &mut R, timing: SessionTiming) -> Result<SessionSchedule> {
    gen_session_with(rng, timing, ScheduleKind::RandomPartitions)
}

pub fn gen_session_with<R: Rng + ?Sized>(rng: &mut R, timing: SessionTiming, kind: ScheduleKind) -> Result<SessionSchedule> {
    timing.validate()?;
    let repetition = match kind {
        ScheduleKind::RandomPartitions => gen_repetition::<R>,
        ScheduleKind::RowColumn => gen_row_column_repetition::<R>,
    };
    let blocks = (0..BLOCKS_PER_SESSION)
        .map(|_| {
            let target_symbol = rng.random_range(0..N_SYMBOLS as u8);
            let repetitions = (0..REPETITIONS_PER_BLOCK).map(|_| repetition(rng)).collect();
            let feedback = draw_feedback(rng, FEEDBACK_CORRECT_PROBABILITY)?;
            Ok(BlockSchedule {
                target_symbol,
                repetitions,
                feedback,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let schedule = SessionSchedule { blocks, timing };
    schedule.validate()?;
    Ok(schedule)
}

impl SessionSchedule {
    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        if self.blocks.len() != BLOCKS_PER_SESSION {
            return Err(Error::InvalidRecording(format!("{} blocks, expected {BLOCKS_PER_SESSION}", self.blocks.len())));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            if block.repetitions.len() != REPETITIONS_PER_BLOCK {
                return Err(Error::InvalidRecording(format!(
                    "block {b} has {} repetitions",
                    block.repetitions.len()
                )));
            }
            let mut target_flashes = 0;
            for rep in &block.repetitions {
                let mut counts = [0u8; N_SYMBOLS];
                for g in rep {
                    for &s in g.symbols() {
                        counts[s as usize] += 1;
                    }
                }
                if counts.iter().any(|&c| c != 2) {
                    return Err(Error::InvalidRecording(format!(
                        "block {b}: a symbol is not flashed exactly twice in a repetition"
                    )));
                }
                target_flashes += rep.iter().filter(|g| g.contains(block.target_symbol)).count();
            }
            if target_flashes != 2 * REPETITIONS_PER_BLOCK {
                return Err(Error::InvalidRecording(format!("block {b}: target flashed {target_flashes} times")));
            }
        }
        Ok(())
    }

    pub fn n_flashes(&self) -> usize {
        self.blocks.len() * REPETITIONS_PER_BLOCK * FLASHES_PER_REPETITION
    }

    fn onset_ms(&self, block: usize, flash_in_block: usize) -> f64 {
        let t = &self.timing;
        let block_ms = (REPETITIONS_PER_BLOCK * FLASHES_PER_REPETITION) as f64 * t.soa_ms + t.feedback_pause_ms;
        t.lead_in_ms + block as f64 * block_ms + flash_in_block as f64 * t.soa_ms
    }

    pub fn events(&self, sample_rate: f64) -> Result<Vec<TagEvent>> {
        let mut out = Vec::with_capacity(self.n_flashes());
        for (b, block) in self.blocks.iter().enumerate() {
            for (k, rep) in block.repetitions.iter().enumerate() {
                for (f, group) in rep.iter().enumerate() {
                    let ms = self.onset_ms(b, k * FLASHES_PER_REPETITION + f);
                    let idx = ms_to_samples(ms, sample_rate) as usize;
                    out.push(TagEvent::new(idx, *group, block.target_symbol, b as u8, k as u8)?);
                }
            }
        }
        Ok(out)
    }

    pub fn n_samples(&self, sample_rate: f64) -> usize {
        let last = self.onset_ms(self.blocks.len() - 1, REPETITIONS_PER_BLOCK * FLASHES_PER_REPETITION - 1);
        ms_to_samples(last + self.timing.tail_ms, sample_rate) as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErpComponent {
    pub name: String,
    pub amplitude_uv: f64,
    pub latency_ms: f64,
    /// Gaussian standard deviation.
    pub width_ms: f64,
    /// Present (scaled) on nontarget flashes too.
    pub early: bool,
    pub spatial_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErpTemplates {
    pub components: Vec<ErpComponent>,
    /// Factor applied to early components on nontarget flashes.
    pub nontarget_scale: f64,
}

/// Gaussian falloff with planar distance from `centre` on the standard layout.
pub fn spatial_weights(layout: &ElectrodeLayout, centre: &str, spread: f64) -> Result<Vec<f64>> {
    let c = layout
        .index_of(centre)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown electrode {centre:?}")))?;
    let [cx, cy] = layout.position(c);
    Ok((0..layout.len())
        .map(|i| {
            let [x, y] = layout.position(i);
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            (-d2 / (2.0 * spread * spread)).exp()
        })
        .collect())
}

impl ErpTemplates {
    /// Qualitative component shapes for each condition. The VR set has a
    /// larger, wider P200, a stronger N100 and a weaker, later P300.
    pub fn for_condition(condition: Condition) -> Self {
        let layout = ElectrodeLayout::standard_16();
        let comp = |name: &str, amp: f64, lat: f64, width: f64, early: bool, centre: &str| ErpComponent {
            name: name.into(),
            amplitude_uv: amp,
            latency_ms: lat,
            width_ms: width,
            early,
            spatial_weights: spatial_weights(&layout, centre, 0.35).expect("standard electrode"),
        };
        let components = match condition {
            Condition::Pc => vec![
                comp("N100", -3.0, 115.0, 20.0, true, "OZ"),
                comp("P200", 4.0, 200.0, 30.0, true, "CZ"),
                comp("P300", 8.0, 380.0, 60.0, false, "PZ"),
                comp("N700", -4.0, 560.0, 60.0, false, "FZ"),
            ],
            Condition::Vr => vec![
                comp("N100", -4.0, 100.0, 20.0, true, "OZ"),
                comp("P200", 6.0, 220.0, 40.0, true, "CZ"),
                comp("P300", 6.5, 400.0, 60.0, false, "PZ"),
                comp("N700", -3.0, 560.0, 75.0, false, "FZ"),
            ],
        };
        ErpTemplates {
            components,
            nontarget_scale: 0.5,
        }
    }

    pub fn validate(&self, n_channels: usize) -> Result<()> {
        for c in &self.components {
            if !(c.width_ms > 0.0) || !c.latency_ms.is_finite() || !c.amplitude_uv.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid template component {}", c.name)));
            }
            if !(0.0..TEMPLATE_SUPPORT_MS).contains(&c.latency_ms) {
                return Err(Error::InvalidArgument(format!(
                    "component {} latency {} ms outside the template support",
                    c.name, c.latency_ms
                )));
            }
            if c.spatial_weights.len() != n_channels {
                return Err(Error::ShapeMismatch(format!(
                    "component {} has {} spatial weights for {n_channels} channels",
                    c.name,
                    c.spatial_weights.len()
                )));
            }
        }
        if !self.nontarget_scale.is_finite() {
            return Err(Error::InvalidArgument("nontarget scale must be finite".into()));
        }
        Ok(())
    }

    /// Largest absolute component amplitude, the peak that the SNR refers to.
    pub fn reference_peak(&self) -> f64 {
        self.components.iter().map(|c| c.amplitude_uv.abs()).fold(0.0, f64::max)
    }

    /// Channels × samples response to one flash, starting at the response
    /// onset, sampled over the template support.
    pub fn response(&self, is_target: bool, sample_rate: f64) -> DMatrix<f64> {
        let n_ch = self.components.first().map_or(0, |c| c.spatial_weights.len());
        let n_t = ms_to_samples(TEMPLATE_SUPPORT_MS, sample_rate) as usize;
        let mut out = DMatrix::zeros(n_ch, n_t);
        for c in &self.components {
            let scale = match (is_target, c.early) {
                (true, _) => 1.0,
                (false, true) => self.nontarget_scale,
                (false, false) => continue,
            };
            for t in 0..n_t {
                let ms = t as f64 * 1000.0 / sample_rate;
                let g = scale * c.amplitude_uv * (-(ms - c.latency_ms).powi(2) / (2.0 * c.width_ms * c.width_ms)).exp();
                for (ch, w) in c.spatial_weights.iter().enumerate() {
                    out[(ch, t)] += g * w;
                }
            }
        }
        out
    }
}

/// Pink-ish noise from white noise through Paul Kellet's economy filter,
/// normalized to unit RMS.
pub fn pink_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n.max(1) as f64;
    let rms = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        for v in &mut out {
            *v = (*v - mean) / rms;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subject_id: String,
    pub condition: Condition,
    pub sample_rate: f64,
    pub noise_rms_uv: f64,
    /// Delay between tag and response onset; defaults to the condition's
    /// tagging latency.
    pub latency_ms: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subject_id: "sim".into(),
            condition: Condition::Pc,
            sample_rate: SIM_SAMPLE_RATE,
            noise_rms_uv: NOISE_RMS_UV,
            latency_ms: None,
        }
    }
}

impl SynthConfig {
    pub fn latency_ms(&self) -> f64 {
        self.latency_ms
            .unwrap_or_else(|| LatencyTable::default().latency_ms(self.condition))
    }
}

/// Synthetic 16-channel recording. With finite `snr` the largest template
/// peak equals `snr × noise_rms`; `snr = ∞` gives the nominal templates
/// without noise; `snr = 0` gives noise only.
pub fn synth_recording<R: Rng + ?Sized>(
    schedule: &SessionSchedule,
    templates: &ErpTemplates,
    snr: f64,
    config: &SynthConfig,
    rng: &mut R,
) -> Result<Recording> {
    if snr.is_nan() || snr < 0.0 {
        return Err(Error::InvalidArgument(format!("snr must be ≥ 0, got {snr}")));
    }
    schedule.validate()?;
    let layout = ElectrodeLayout::standard_16();
    templates.validate(layout.len())?;
    let fs = config.sample_rate;
    let max_latency = templates.components.iter().map(|c| c.latency_ms).fold(0.0, f64::max);
    if max_latency > schedule.timing.soa_ms {
        log::debug!(
            "template latency {max_latency} ms exceeds the {} ms inter-flash interval; responses overlap",
            schedule.timing.soa_ms
        );
    }

    let n = schedule.n_samples(fs);
    let (noise_scale, erp_scale) = if snr.is_infinite() {
        (0.0, 1.0)
    } else {
        let peak = templates.reference_peak();
        let erp = if peak > 0.0 { snr * config.noise_rms_uv / peak } else { 0.0 };
        (config.noise_rms_uv, erp)
    };
    let mut samples: Vec<Vec<f64>> = (0..layout.len())
        .map(|_| {
            if noise_scale > 0.0 {
                pink_noise(rng, n).into_iter().map(|v| v * noise_scale).collect()
            } else {
                vec![0.0; n]
            }
        })
        .collect();

    let events = schedule.events(fs)?;
    if erp_scale > 0.0 {
        let offset = ms_to_samples(config.latency_ms(), fs);
        let responses = [templates.response(false, fs), templates.response(true, fs)];
        for ev in &events {
            let resp = &responses[ev.is_target as usize];
            let start = ev.sample_index as i64 + offset;
            for t in 0..resp.ncols() {
                let idx = start + t as i64;
                if idx < 0 || idx as usize >= n {
                    continue;
                }
                for (ch, row) in samples.iter_mut().enumerate() {
                    row[idx as usize] += erp_scale * resp[(ch, t)];
                }
            }
        }
    }
    Recording::new(
        config.subject_id.clone(),
        config.condition,
        fs,
        layout.labels().to_vec(),
        samples,
        events,
    )
}

/// Gaussian bump added to one condition's difference waves, centred in
/// `[start_ms, end_ms]` with σ a quarter of the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedEffect {
    pub start_ms: f64,
    pub end_ms: f64,
    pub amplitude_uv: f64,
    pub centre: String,
    pub spread: f64,
}

impl Default for InjectedEffect {
    fn default() -> Self {
        InjectedEffect {
            start_ms: 150.0,
            end_ms: 310.0,
            amplitude_uv: 3.0,
            centre: "CZ".into(),
            spread: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectWaveConfig {
    pub n_subjects: usize,
    pub sample_rate: f64,
    pub window_seconds: f64,
    /// RMS of the residual noise on each averaged difference wave.
    pub noise_uv: f64,
    /// Relative standard deviation of each subject's ERP amplitude.
    pub amplitude_jitter: f64,
}

impl Default for SubjectWaveConfig {
    fn default() -> Self {
        SubjectWaveConfig {
            n_subjects: 21,
            sample_rate: 128.0,
            window_seconds: 1.0,
            noise_uv: 1.0,
            amplitude_jitter: 0.3,
        }
    }
}

/// Paired per-subject difference waves for two conditions sharing the same
/// templates and subject amplitude. `effect`, if any, is added to the
/// second condition only.
pub fn synth_subject_waves<R: Rng + ?Sized>(
    templates: &ErpTemplates,
    effect: Option<&InjectedEffect>,
    cfg: &SubjectWaveConfig,
    rng: &mut R,
) -> Result<(Vec<DifferenceWave>, Vec<DifferenceWave>)> {
    let layout = ElectrodeLayout::standard_16();
    templates.validate(layout.len())?;
    if cfg.n_subjects < 2 || !(cfg.noise_uv >= 0.0) || !(cfg.amplitude_jitter >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid subject wave config {cfg:?}")));
    }
    let fs = cfg.sample_rate;
    let n_t = crate::model::window_samples(cfg.window_seconds, fs);
    let full = templates.response(true, fs) - templates.response(false, fs);
    let base = DMatrix::from_fn(layout.len(), n_t, |c, t| if t < full.ncols() { full[(c, t)] } else { 0.0 });
    let bump = match effect {
        None => DMatrix::zeros(layout.len(), n_t),
        Some(e) => {
            if !(e.end_ms > e.start_ms) {
                return Err(Error::InvalidArgument("effect window is empty".into()));
            }
            let w = spatial_weights(&layout, &e.centre, e.spread)?;
            let (mid, sigma) = ((e.start_ms + e.end_ms) / 2.0, (e.end_ms - e.start_ms) / 4.0);
            DMatrix::from_fn(layout.len(), n_t, |c, t| {
                let ms = t as f64 * 1000.0 / fs;
                e.amplitude_uv * w[c] * (-(ms - mid).powi(2) / (2.0 * sigma * sigma)).exp()
            })
        }
    };
    let noise = |rng: &mut R| {
        let rows: Vec<Vec<f64>> = (0..layout.len()).map(|_| pink_noise(rng, n_t)).collect();
        DMatrix::from_fn(layout.len(), n_t, |c, t| cfg.noise_uv * rows[c][t])
    };
    let (mut a, mut b) = (Vec::with_capacity(cfg.n_subjects), Vec::with_capacity(cfg.n_subjects));
    for _ in 0..cfg.n_subjects {
        let z: f64 = StandardNormal.sample(rng);
        let scale = 1.0 + cfg.amplitude_jitter * z;
        let subject = &base * scale;
        a.push(DifferenceWave(&subject + noise(rng)));
        b.push(DifferenceWave(&subject + &bump + noise(rng)));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epochs::{difference_wave, extract_epochs};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn repetition_flashes_every_symbol_twice() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let rep = gen_repetition(&mut rng);
            let mut counts = [0; N_SYMBOLS];
            for g in &rep {
                for &s in g.symbols() {
                    counts[s as usize] += 1;
                }
            }
            assert!(counts.iter().all(|&c| c == 2));
            for target in 0..N_SYMBOLS as u8 {
                assert_eq!(rep.iter().filter(|g| g.contains(target)).count(), 2);
            }
        }
    }

    #[test]
    fn row_column_groups_meet_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let rep = gen_row_column_repetition(&mut rng);
            for target in 0..N_SYMBOLS as u8 {
                let mine: Vec<&FlashGroup> = rep.iter().filter(|g| g.contains(target)).collect();
                assert_eq!(mine.len(), 2);
                let shared = mine[0].symbols().iter().filter(|s| mine[1].contains(**s)).count();
                assert_eq!(shared, 1);
            }
        }
        let s = gen_session_with(&mut rng, SessionTiming::default(), ScheduleKind::RowColumn).unwrap();
        assert!(s.validate().is_ok());
    }

    #[test]
    fn pair_cooccurrence_matches_uniform_partitions() {
        // In a uniform partition into groups of six a given pair shares a
        // group with probability 5/35; two partitions per repetition.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n_rep = 10_000;
        let mut counts: HashMap<(u8, u8), u64> = HashMap::new();
        for _ in 0..n_rep {
            for g in gen_repetition(&mut rng) {
                let s = g.symbols();
                for i in 0..GROUP_SIZE {
                    for j in i + 1..GROUP_SIZE {
                        *counts.entry((s[i], s[j])).or_default() += 1;
                    }
                }
            }
        }
        let p = 1.0 / 7.0;
        let trials = 2.0 * n_rep as f64;
        let (e, var) = (trials * p, trials * p * (1.0 - p));
        let n_pairs = N_SYMBOLS * (N_SYMBOLS - 1) / 2;
        let chi2: f64 = (0..N_SYMBOLS as u8)
            .flat_map(|a| (a + 1..N_SYMBOLS as u8).map(move |b| (a, b)))
            .map(|k| (counts.get(&k).copied().unwrap_or(0) as f64 - e).powi(2) / var)
            .sum();
        let df = (n_pairs - 1) as f64;
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let cdf = ChiSquared::new(df).unwrap().cdf(chi2);
        assert!(cdf > 0.001 && cdf < 0.999, "chi2 {chi2} df {df} cdf {cdf}");
    }

    #[test]
    fn session_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = gen_session(&mut rng, SessionTiming::default()).unwrap();
        assert_eq!(s.blocks.len(), 12);
        assert_eq!(s.blocks.iter().map(|b| b.repetitions.len()).sum::<usize>(), 60);
        assert_eq!(s.n_flashes(), 720);
        let events = s.events(SIM_SAMPLE_RATE).unwrap();
        assert_eq!(events.len(), 720);
        for b in 0..12u8 {
            assert_eq!(events.iter().filter(|e| e.block_index == b && e.is_target).count(), 10);
        }
        let again = gen_session(&mut ChaCha8Rng::seed_from_u64(3), SessionTiming::default()).unwrap();
        assert_eq!(s, again);
        assert!(gen_session(&mut rng, SessionTiming { soa_ms: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn event_timing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = gen_session(&mut rng, SessionTiming::default()).unwrap();
        let ev = s.events(512.0).unwrap();
        assert_eq!(ev[0].sample_index, 512);
        assert_eq!(ev[1].sample_index - ev[0].sample_index, 67);
        // one SOA plus the feedback pause separates blocks
        let last = ms_to_samples(1000.0 + 59.0 * 130.0, 512.0) as usize;
        let next = ms_to_samples(1000.0 + 60.0 * 130.0 + 2000.0, 512.0) as usize;
        assert_eq!((ev[59].sample_index, ev[60].sample_index), (last, next));
    }

    #[test]
    fn feedback_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let correct = (0..n)
            .filter(|_| draw_feedback(&mut rng, FEEDBACK_CORRECT_PROBABILITY).unwrap() == Feedback::Correct)
            .count();
        assert!((correct as f64 / n as f64 - 0.7).abs() < 0.005);
        assert!((0..1000).all(|_| draw_feedback(&mut rng, 1.0).unwrap() == Feedback::Correct));
        assert!(draw_feedback(&mut rng, 1.5).is_err());
        let a: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| draw_feedback(&mut r, 0.7).unwrap()).collect()
        };
        let b: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| draw_feedback(&mut r, 0.7).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn pink_noise_is_normalized_and_low_heavy() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = pink_noise(&mut rng, 1 << 14);
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
        // lag-1 autocorrelation far above white noise
        let ac = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / x.len() as f64;
        assert!(ac > 0.5);
    }

    #[test]
    fn noiseless_difference_wave_recovers_templates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let timing = SessionTiming {
            soa_ms: 1000.0,
            feedback_pause_ms: 0.0,
            lead_in_ms: 200.0,
            tail_ms: 1200.0,
        };
        let schedule = gen_session(&mut rng, timing).unwrap();
        let templates = ErpTemplates::for_condition(Condition::Vr);
        let cfg = SynthConfig {
            condition: Condition::Vr,
            ..Default::default()
        };
        let rec = synth_recording(&schedule, &templates, f64::INFINITY, &cfg, &mut rng).unwrap();
        let ex = extract_epochs(&rec, 1.0, &LatencyTable::default()).unwrap();
        assert_eq!(ex.dropped, 0);
        assert_eq!(ex.shift_samples, 60);
        let wave = difference_wave(&ex.set).unwrap();
        let expected = templates.response(true, 512.0) - templates.response(false, 512.0);
        assert!((wave.matrix() - expected).abs().max() < 1e-9);
    }

    #[test]
    fn zero_snr_has_no_erp_and_matches_noise_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let schedule = gen_session(&mut rng, SessionTiming::default()).unwrap();
        let templates = ErpTemplates::for_condition(Condition::Pc);
        let cfg = SynthConfig::default();
        let a = synth_recording(&schedule, &templates, 0.0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let empty = ErpTemplates {
            components: vec![],
            nontarget_scale: 0.5,
        };
        let b = synth_recording(&schedule, &empty, 0.0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.samples(), b.samples());
        let ch = a.channel(0);
        let rms = (ch.iter().map(|v| v * v).sum::<f64>() / ch.len() as f64).sqrt();
        assert!((rms - NOISE_RMS_UV).abs() < 1e-9);
        assert_eq!(a.events().len(), 720);
        assert!(synth_recording(&schedule, &templates, -1.0, &cfg, &mut rng).is_err());
    }

    #[test]
    fn snr_sets_peak_amplitude() {
        let templates = ErpTemplates::for_condition(Condition::Pc);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let timing = SessionTiming { soa_ms: 1000.0, ..Default::default() };
        let schedule = gen_session(&mut rng, timing).unwrap();
        let cfg = SynthConfig::default();
        let noisy = synth_recording(&schedule, &templates, 2.0, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let noise = synth_recording(&schedule, &templates, 0.0, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let pz = noisy.channel_index("PZ").unwrap();
        let ev = noisy.events().iter().find(|e| e.is_target).unwrap();
        let onset = ev.sample_index + ms_to_samples(cfg.latency_ms(), 512.0) as usize;
        let erp: Vec<f64> = (onset..onset + 512).map(|i| noisy.channel(pz)[i] - noise.channel(pz)[i]).collect();
        let peak = erp.iter().cloned().fold(f64::MIN, f64::max);
        // P300 is the largest component and is centred on PZ
        assert!((peak - 2.0 * NOISE_RMS_UV).abs() < 0.05, "{peak}");
    }

    #[test]
    fn subject_waves_share_subject_amplitude() {
        let t = ErpTemplates::for_condition(Condition::Pc);
        let cfg = SubjectWaveConfig { noise_uv: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (a, b) = synth_subject_waves(&t, None, &cfg, &mut rng).unwrap();
        assert_eq!(a.len(), 21);
        assert_eq!(a[0].matrix().shape(), (16, 128));
        assert!(a.iter().zip(&b).all(|(x, y)| x == y));
        let effect = InjectedEffect::default();
        let (a, b) = synth_subject_waves(&t, Some(&effect), &cfg, &mut rng).unwrap();
        let cz = ElectrodeLayout::standard_16().index_of("CZ").unwrap();
        let d = b[0].matrix() - a[0].matrix();
        // 230 ms is the bump centre at 128 Hz (sample 29.44)
        assert!((d[(cz, 29)] - 3.0).abs() < 0.05);
        assert!(d[(cz, 0)].abs() < 1e-3);
        assert!(synth_subject_waves(&t, None, &SubjectWaveConfig { n_subjects: 1, ..Default::default() }, &mut rng).is_err());
    }

    #[test]
    fn template_validation() {
        let mut t = ErpTemplates::for_condition(Condition::Pc);
        assert!(t.validate(16).is_ok());
        assert!(t.validate(8).is_err());
        t.components[0].width_ms = 0.0;
        assert!(t.validate(16).is_err());
        let mut t = ErpTemplates::for_condition(Condition::Pc);
        t.components[2].latency_ms = 1200.0;
        assert!(t.validate(16).is_err());
    }

    #[test]
    fn synthetic_recording_round_trips_through_io() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let schedule = gen_session(&mut rng, SessionTiming::default()).unwrap();
        let rec = synth_recording(&schedule, &ErpTemplates::for_condition(Condition::Pc), 1.0, &SynthConfig::default(), &mut rng).unwrap();
        let counts = rec.session_counts().unwrap();
        assert_eq!(counts.targets, 120);
        assert_eq!(counts.nontargets, 600);
    }
}
