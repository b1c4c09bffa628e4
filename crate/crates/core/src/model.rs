//! Domain data model: recordings, tag events, epochs.
//!
//! Everything here is immutable once constructed. Constructors validate the
//! structural invariants so downstream stages can rely on them.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symbols in the 6×6 speller matrix, indexed row-major 0..36.
pub const N_SYMBOLS: usize = 36;
pub const GROUP_SIZE: usize = 6;
pub const FLASHES_PER_REPETITION: usize = 12;
pub const TARGET_FLASHES_PER_REPETITION: usize = 2;
pub const REPETITIONS_PER_BLOCK: usize = 5;
pub const BLOCKS_PER_SESSION: usize = 12;
pub const EVENTS_PER_SESSION: usize =
    BLOCKS_PER_SESSION * REPETITIONS_PER_BLOCK * FLASHES_PER_REPETITION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "PC")]
    Pc,
    #[serde(rename = "VR")]
    Vr,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Pc => "PC",
            Condition::Vr => "VR",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PC" => Ok(Condition::Pc),
            "VR" => Ok(Condition::Vr),
            other => Err(Error::InvalidArgument(format!(
                "unknown condition {other:?} (expected PC or VR)"
            ))),
        }
    }
}

/// Target (TA) or nontarget (NT) flash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "TA")]
    Target,
    #[serde(rename = "NT")]
    NonTarget,
}

impl Label {
    pub fn from_is_target(is_target: bool) -> Self {
        if is_target {
            Label::Target
        } else {
            Label::NonTarget
        }
    }

    pub fn is_target(self) -> bool {
        self == Label::Target
    }

    pub fn swapped(self) -> Self {
        match self {
            Label::Target => Label::NonTarget,
            Label::NonTarget => Label::Target,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Target => "TA",
            Label::NonTarget => "NT",
        }
    }
}

/// Six distinct symbol indices, stored sorted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct FlashGroup([u8; GROUP_SIZE]);

impl FlashGroup {
    pub fn new(symbols: [u8; GROUP_SIZE]) -> Result<Self> {
        let mut sorted = symbols;
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "flash group {symbols:?} contains a repeated symbol"
            )));
        }
        if let Some(&bad) = sorted.iter().find(|&&s| s as usize >= N_SYMBOLS) {
            return Err(Error::InvalidArgument(format!(
                "symbol {bad} outside 0..{N_SYMBOLS}"
            )));
        }
        Ok(FlashGroup(sorted))
    }

    pub fn symbols(&self) -> &[u8; GROUP_SIZE] {
        &self.0
    }

    pub fn contains(&self, symbol: u8) -> bool {
        self.0.binary_search(&symbol).is_ok()
    }
}

impl TryFrom<Vec<u8>> for FlashGroup {
    type Error = Error;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        let arr: [u8; GROUP_SIZE] = v.as_slice().try_into().map_err(|_| {
            Error::InvalidArgument(format!(
                "flash group needs {GROUP_SIZE} symbols, got {}",
                v.len()
            ))
        })?;
        FlashGroup::new(arr)
    }
}

impl From<FlashGroup> for Vec<u8> {
    fn from(g: FlashGroup) -> Self {
        g.0.to_vec()
    }
}

/// One tagged flash onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagEvent {
    pub sample_index: usize,
    pub flash_group: FlashGroup,
    pub target_symbol: u8,
    pub is_target: bool,
    pub block_index: u8,
    pub repetition_index: u8,
}

impl TagEvent {
    /// Builds an event with `is_target` derived from group membership.
    pub fn new(
        sample_index: usize,
        flash_group: FlashGroup,
        target_symbol: u8,
        block_index: u8,
        repetition_index: u8,
    ) -> Result<Self> {
        let ev = TagEvent {
            sample_index,
            flash_group,
            target_symbol,
            is_target: flash_group.contains(target_symbol),
            block_index,
            repetition_index,
        };
        ev.validate()?;
        Ok(ev)
    }

    pub fn label(&self) -> Label {
        Label::from_is_target(self.is_target)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_symbol as usize >= N_SYMBOLS {
            return Err(Error::InvalidRecording(format!(
                "target symbol {} outside 0..{N_SYMBOLS}",
                self.target_symbol
            )));
        }
        if self.is_target != self.flash_group.contains(self.target_symbol) {
            return Err(Error::InvalidRecording(format!(
                "event at sample {}: is_target={} disagrees with flash group {:?} / target {}",
                self.sample_index,
                self.is_target,
                self.flash_group.symbols(),
                self.target_symbol
            )));
        }
        if self.block_index as usize >= BLOCKS_PER_SESSION {
            return Err(Error::InvalidRecording(format!(
                "block index {} outside 0..{BLOCKS_PER_SESSION}",
                self.block_index
            )));
        }
        if self.repetition_index as usize >= REPETITIONS_PER_BLOCK {
            return Err(Error::InvalidRecording(format!(
                "repetition index {} outside 0..{REPETITIONS_PER_BLOCK}",
                self.repetition_index
            )));
        }
        Ok(())
    }
}

/// Multichannel EEG in microvolts with its tag events.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    subject_id: String,
    condition: Condition,
    sample_rate: f64,
    channel_labels: Vec<String>,
    samples: Vec<Vec<f64>>,
    events: Vec<TagEvent>,
}

impl Recording {
    /// `samples` is channel-major: one row per channel.
    pub fn new(
        subject_id: impl Into<String>,
        condition: Condition,
        sample_rate: f64,
        channel_labels: Vec<String>,
        samples: Vec<Vec<f64>>,
        events: Vec<TagEvent>,
    ) -> Result<Self> {
        let rec = Recording {
            subject_id: subject_id.into(),
            condition,
            sample_rate,
            channel_labels,
            samples,
            events,
        };
        rec.validate()?;
        Ok(rec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::InvalidRecording(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.samples.len() != self.channel_labels.len() {
            return Err(Error::ChannelMismatch {
                declared: self.channel_labels.len(),
                found: self.samples.len(),
            });
        }
        let n = self.n_samples();
        if let Some((i, row)) = self.samples.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::InvalidRecording(format!(
                "channel {} has {} samples, expected {n}",
                self.channel_labels[i],
                row.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for label in &self.channel_labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidRecording(format!(
                    "duplicate channel label {label:?}"
                )));
            }
        }
        for w in self.events.windows(2) {
            if w[1].sample_index <= w[0].sample_index {
                return Err(Error::InvalidRecording(format!(
                    "events not strictly increasing at samples {} -> {}",
                    w[0].sample_index, w[1].sample_index
                )));
            }
        }
        for ev in &self.events {
            if ev.sample_index >= n {
                return Err(Error::EventOutOfRange {
                    sample_index: ev.sample_index,
                    n_samples: n,
                });
            }
            ev.validate()?;
        }
        Ok(())
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.samples[index]
    }

    pub fn events(&self) -> &[TagEvent] {
        &self.events
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channel_labels
            .iter()
            .position(|l| l.eq_ignore_ascii_case(label))
    }

    /// Checks the block/repetition accounting of a speller session: every
    /// (block, repetition) present holds 12 flashes, 2 of them targets, and
    /// the target symbol is fixed within a block.
    pub fn session_counts(&self) -> Result<SessionCounts> {
        session_counts(&self.events)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCounts {
    pub blocks: usize,
    pub repetitions: usize,
    pub events: usize,
    pub targets: usize,
    pub nontargets: usize,
}

pub fn session_counts(events: &[TagEvent]) -> Result<SessionCounts> {
    let mut per_rep: BTreeMap<(u8, u8), (usize, usize)> = BTreeMap::new();
    let mut block_target: BTreeMap<u8, u8> = BTreeMap::new();
    for ev in events {
        let slot = per_rep
            .entry((ev.block_index, ev.repetition_index))
            .or_default();
        slot.0 += 1;
        slot.1 += usize::from(ev.is_target);
        let t = *block_target.entry(ev.block_index).or_insert(ev.target_symbol);
        if t != ev.target_symbol {
            return Err(Error::InvalidRecording(format!(
                "block {} mixes target symbols {t} and {}",
                ev.block_index, ev.target_symbol
            )));
        }
    }
    for (&(block, rep), &(n, n_target)) in &per_rep {
        if n != FLASHES_PER_REPETITION || n_target != TARGET_FLASHES_PER_REPETITION {
            return Err(Error::InvalidRecording(format!(
                "block {block} repetition {rep}: {n} flashes ({n_target} targets), expected \
                 {FLASHES_PER_REPETITION} ({TARGET_FLASHES_PER_REPETITION} targets)"
            )));
        }
    }
    let targets = events.iter().filter(|e| e.is_target).count();
    Ok(SessionCounts {
        blocks: block_target.len(),
        repetitions: per_rep.len(),
        events: events.len(),
        targets,
        nontargets: events.len() - targets,
    })
}

/// A fixed window of EEG following one tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    /// `n_channels × n_window_samples`, microvolts.
    pub data: DMatrix<f64>,
    pub label: Label,
    pub block_index: u8,
    pub repetition_index: u8,
    /// Position of the flash within its repetition (0..12).
    pub flash_index: u8,
    pub flash_group: FlashGroup,
    pub target_symbol: u8,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub epochs: Vec<Epoch>,
    pub window_seconds: f64,
    pub sample_rate: f64,
    pub channel_labels: Vec<String>,
}

impl EpochSet {
    pub fn n_window_samples(&self) -> usize {
        window_samples(self.window_seconds, self.sample_rate)
    }

    pub fn count(&self, label: Label) -> usize {
        self.epochs.iter().filter(|e| e.label == label).count()
    }

    /// Epochs whose block is in `blocks`.
    pub fn in_blocks<'a>(&'a self, blocks: &'a [u8]) -> impl Iterator<Item = &'a Epoch> + 'a {
        self.epochs
            .iter()
            .filter(move |e| blocks.contains(&e.block_index))
    }

    pub fn block_ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.epochs.iter().map(|e| e.block_index).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Window length in samples, rounded half away from zero.
pub fn window_samples(window_seconds: f64, sample_rate: f64) -> usize {
    (window_seconds * sample_rate).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(s: [u8; 6]) -> FlashGroup {
        FlashGroup::new(s).unwrap()
    }

    #[test]
    fn flash_group_sorted_and_validated() {
        let g = group([5, 1, 3, 2, 4, 0]);
        assert_eq!(g.symbols(), &[0, 1, 2, 3, 4, 5]);
        assert!(g.contains(3));
        assert!(!g.contains(6));
        assert!(FlashGroup::new([0, 0, 1, 2, 3, 4]).is_err());
        assert!(FlashGroup::new([0, 1, 2, 3, 4, 36]).is_err());
        assert!(FlashGroup::try_from(vec![1, 2, 3]).is_err());
    }

    #[test]
    fn event_target_flag_derived() {
        let ev = TagEvent::new(10, group([0, 1, 2, 3, 4, 5]), 3, 0, 0).unwrap();
        assert!(ev.is_target);
        let ev = TagEvent::new(10, group([0, 1, 2, 3, 4, 5]), 30, 0, 0).unwrap();
        assert!(!ev.is_target);
        let mut bad = ev;
        bad.is_target = true;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn recording_rejects_bad_shapes() {
        let labels = vec!["A".to_string(), "B".to_string()];
        assert!(matches!(
            Recording::new("s", Condition::Pc, 128.0, labels.clone(), vec![vec![0.0; 4]], vec![]),
            Err(Error::ChannelMismatch { .. })
        ));
        assert!(Recording::new(
            "s",
            Condition::Pc,
            0.0,
            labels.clone(),
            vec![vec![0.0; 4]; 2],
            vec![]
        )
        .is_err());
        assert!(Recording::new(
            "s",
            Condition::Pc,
            128.0,
            vec!["A".into(), "A".into()],
            vec![vec![0.0; 4]; 2],
            vec![]
        )
        .is_err());
        let ev = TagEvent::new(4, group([0, 1, 2, 3, 4, 5]), 0, 0, 0).unwrap();
        assert!(matches!(
            Recording::new("s", Condition::Pc, 128.0, labels.clone(), vec![vec![0.0; 4]; 2], vec![ev]),
            Err(Error::EventOutOfRange { sample_index: 4, n_samples: 4 })
        ));
        let e1 = TagEvent::new(2, group([0, 1, 2, 3, 4, 5]), 0, 0, 0).unwrap();
        let e0 = TagEvent::new(1, group([0, 1, 2, 3, 4, 5]), 0, 0, 0).unwrap();
        assert!(Recording::new("s", Condition::Pc, 128.0, labels, vec![vec![0.0; 4]; 2], vec![e1, e0]).is_err());
    }

    #[test]
    fn condition_parse() {
        assert_eq!("vr".parse::<Condition>().unwrap(), Condition::Vr);
        assert!("xr".parse::<Condition>().is_err());
    }

    #[test]
    fn window_rounding() {
        assert_eq!(window_samples(1.0, 128.0), 128);
        assert_eq!(window_samples(0.6, 128.0), 77);
    }
}
