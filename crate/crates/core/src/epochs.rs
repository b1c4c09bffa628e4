//! Latency-corrected epoch extraction, averaging and ERP summaries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{window_samples, Condition, Epoch, EpochSet, Label, Recording};

/// Mean display-to-tag latency per condition, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyTable {
    pub pc_ms: f64,
    pub pc_sd_ms: f64,
    pub vr_ms: f64,
    pub vr_sd_ms: f64,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            pc_ms: 38.1,
            pc_sd_ms: 5.3,
            vr_ms: 117.23,
            vr_sd_ms: 5.81,
        }
    }
}

impl LatencyTable {
    pub fn zero() -> Self {
        LatencyTable {
            pc_ms: 0.0,
            pc_sd_ms: 0.0,
            vr_ms: 0.0,
            vr_sd_ms: 0.0,
        }
    }

    pub fn latency_ms(&self, condition: Condition) -> f64 {
        match condition {
            Condition::Pc => self.pc_ms,
            Condition::Vr => self.vr_ms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.pc_ms, self.vr_ms, self.pc_sd_ms, self.vr_sd_ms]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidArgument(format!("latencies must be >= 0: {self:?}")));
        }
        Ok(())
    }

    /// Epoch onset shift in samples for `condition` at `sample_rate`.
    pub fn shift_samples(&self, condition: Condition, sample_rate: f64) -> i64 {
        ms_to_samples(self.latency_ms(condition), sample_rate)
    }
}

/// Milliseconds to samples, rounding half away from zero.
pub fn ms_to_samples(ms: f64, sample_rate: f64) -> i64 {
    (ms * sample_rate / 1000.0).round() as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub set: EpochSet,
    /// Events whose window ran past the end (or before the start) of the
    /// recording.
    pub dropped: usize,
    pub shift_samples: i64,
}

/// Cuts `window_seconds` of data starting `latency` after every tag.
/// Windows that do not fit inside the recording are dropped and counted.
pub fn extract_epochs(rec: &Recording, window_seconds: f64, latency: &LatencyTable) -> Result<Extraction> {
    latency.validate()?;
    if !(window_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "window must be positive, got {window_seconds} s"
        )));
    }
    let fs = rec.sample_rate();
    let len = window_samples(window_seconds, fs);
    let shift = latency.shift_samples(rec.condition(), fs);
    let n = rec.n_samples() as i64;

    // Position of each event within its (block, repetition).
    let mut flash_pos = Vec::with_capacity(rec.events().len());
    let mut last_key = None;
    let mut pos = 0u8;
    for ev in rec.events() {
        let key = (ev.block_index, ev.repetition_index);
        if last_key == Some(key) {
            pos += 1;
        } else {
            pos = 0;
            last_key = Some(key);
        }
        flash_pos.push(pos);
    }

    let mut epochs = Vec::with_capacity(rec.events().len());
    let mut dropped = 0;
    for (ev, &flash_index) in rec.events().iter().zip(&flash_pos) {
        let start = ev.sample_index as i64 + shift;
        if start < 0 || start + len as i64 > n {
            dropped += 1;
            continue;
        }
        let start = start as usize;
        let data = DMatrix::from_fn(rec.n_channels(), len, |c, t| rec.channel(c)[start + t]);
        epochs.push(Epoch {
            data,
            label: ev.label(),
            block_index: ev.block_index,
            repetition_index: ev.repetition_index,
            flash_index,
            flash_group: ev.flash_group,
            target_symbol: ev.target_symbol,
            condition: rec.condition(),
        });
    }
    if dropped > 0 {
        log::warn!(
            "{}/{}: dropped {dropped} of {} epochs overrunning the recording",
            rec.subject_id(),
            rec.condition(),
            rec.events().len()
        );
    }
    Ok(Extraction {
        set: EpochSet {
            epochs,
            window_seconds,
            sample_rate: fs,
            channel_labels: rec.channel_labels().to_vec(),
        },
        dropped,
        shift_samples: shift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFilter {
    Only(Label),
    All,
}

impl LabelFilter {
    fn accepts(self, label: Label) -> bool {
        match self {
            LabelFilter::Only(l) => l == label,
            LabelFilter::All => true,
        }
    }
}

/// Elementwise arithmetic mean of the selected epochs.
pub fn average_epochs(set: &EpochSet, filter: LabelFilter) -> Result<DMatrix<f64>> {
    mean_of(set.epochs.iter().filter(|e| filter.accepts(e.label)).map(|e| &e.data))
        .ok_or_else(|| Error::EmptyInput(format!("no epochs match {filter:?}")))
}

pub(crate) fn mean_of<'a>(mats: impl Iterator<Item = &'a DMatrix<f64>>) -> Option<DMatrix<f64>> {
    let mut count = 0usize;
    let mut acc: Option<DMatrix<f64>> = None;
    for m in mats {
        count += 1;
        match acc.as_mut() {
            Some(a) => *a += m,
            None => acc = Some(m.clone()),
        }
    }
    acc.map(|a| a / count as f64)
}

/// `mean(TA) − mean(NT)` for one subject and condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceWave(pub DMatrix<f64>);

impl DifferenceWave {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn difference_wave(set: &EpochSet) -> Result<DifferenceWave> {
    let ta = average_epochs(set, LabelFilter::Only(Label::Target))?;
    let nt = average_epochs(set, LabelFilter::Only(Label::NonTarget))?;
    Ok(DifferenceWave(ta - nt))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrandAverage {
    pub mean: DMatrix<f64>,
    /// Per-cell `sd / sqrt(n)`; all zeros when `n == 1`.
    pub stderr: DMatrix<f64>,
    pub n: usize,
    /// False when `n == 1`, where the standard error is undefined.
    pub stderr_defined: bool,
}

pub fn grand_average(waves: &[DifferenceWave]) -> Result<GrandAverage> {
    let first = waves
        .first()
        .ok_or_else(|| Error::EmptyInput("grand average of zero waves".into()))?;
    let shape = first.0.shape();
    if let Some(w) = waves.iter().find(|w| w.0.shape() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "wave shapes {:?} and {:?}",
            shape,
            w.0.shape()
        )));
    }
    let n = waves.len();
    let mean = mean_of(waves.iter().map(|w| &w.0)).expect("nonempty");
    if n == 1 {
        return Ok(GrandAverage {
            stderr: DMatrix::zeros(shape.0, shape.1),
            mean,
            n,
            stderr_defined: false,
        });
    }
    let mut ss = DMatrix::<f64>::zeros(shape.0, shape.1);
    for w in waves {
        let d = &w.0 - &mean;
        ss += d.component_mul(&d);
    }
    let stderr = ss.map(|v| (v / (n - 1) as f64).sqrt() / (n as f64).sqrt());
    Ok(GrandAverage {
        mean,
        stderr,
        n,
        stderr_defined: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakWindow {
    pub component: String,
    pub start_ms: f64,
    pub end_ms: f64,
    pub polarity: Polarity,
}

impl PeakWindow {
    pub fn new(component: &str, start_ms: f64, end_ms: f64, polarity: Polarity) -> Self {
        PeakWindow {
            component: component.to_string(),
            start_ms,
            end_ms,
            polarity,
        }
    }

    /// Windows for the N100, P200, P300 and N700 components.
    pub fn standard() -> Vec<PeakWindow> {
        vec![
            PeakWindow::new("N100", 70.0, 150.0, Polarity::Negative),
            PeakWindow::new("P200", 150.0, 300.0, Polarity::Positive),
            PeakWindow::new("P300", 300.0, 500.0, Polarity::Positive),
            PeakWindow::new("N700", 550.0, 850.0, Polarity::Negative),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub component: String,
    pub channel: String,
    pub latency_ms: f64,
    pub amplitude_uv: f64,
}

/// Extremum per window and channel. Sample `j` sits at `1000·j/fs` ms; the
/// window covers every sample inside `[start_ms, end_ms]`. Ties resolve to
/// the earliest sample.
pub fn peak_summary(
    wave: &DMatrix<f64>,
    sample_rate: f64,
    channel_labels: &[String],
    windows: &[PeakWindow],
) -> Result<Vec<PeakRow>> {
    if channel_labels.len() != wave.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} channels",
            channel_labels.len(),
            wave.nrows()
        )));
    }
    let span_ms = (wave.ncols().saturating_sub(1)) as f64 * 1000.0 / sample_rate;
    let mut rows = Vec::new();
    for w in windows {
        if !(w.start_ms >= 0.0 && w.end_ms <= span_ms + 1e-9 && w.start_ms <= w.end_ms) {
            return Err(Error::InvalidArgument(format!(
                "window {} [{}, {}] ms outside epoch span [0, {span_ms}] ms",
                w.component, w.start_ms, w.end_ms
            )));
        }
        let first = (w.start_ms * sample_rate / 1000.0 - 1e-9).ceil() as usize;
        let last = (w.end_ms * sample_rate / 1000.0 + 1e-9).floor() as usize;
        if first > last {
            return Err(Error::InvalidArgument(format!(
                "window {} contains no samples",
                w.component
            )));
        }
        for (c, label) in channel_labels.iter().enumerate() {
            let mut best = first;
            for t in first + 1..=last {
                let better = match w.polarity {
                    Polarity::Positive => wave[(c, t)] > wave[(c, best)],
                    Polarity::Negative => wave[(c, t)] < wave[(c, best)],
                };
                if better {
                    best = t;
                }
            }
            rows.push(PeakRow {
                component: w.component.clone(),
                channel: label.clone(),
                latency_ms: best as f64 * 1000.0 / sample_rate,
                amplitude_uv: wave[(c, best)],
            });
        }
    }
    Ok(rows)
}
