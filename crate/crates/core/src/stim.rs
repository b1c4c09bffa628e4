//! Decoding of the supplementary stimulus channel recorded alongside the EEG.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::model::{FlashGroup, TagEvent, FLASHES_PER_REPETITION, REPETITIONS_PER_BLOCK};

/// What a stimulus code stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StimCode {
    pub flash_group: FlashGroup,
    pub target_symbol: u8,
}

pub type StimSchedule = HashMap<u32, StimCode>;

/// One event per nonzero code, at that sample. Block and repetition
/// indices follow from the ordinal of the onset in the canonical
/// 12 flashes/repetition, 5 repetitions/block layout.
pub fn decode_stim_channel(raw: &[u32], schedule: &StimSchedule) -> Result<Vec<TagEvent>> {
    let onsets: Vec<(usize, u32)> = raw
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0)
        .map(|(i, &c)| (i, c))
        .collect();
    decode_stim_onsets(&onsets, schedule)
}

/// Sparse form: `(sample_index, code)` pairs in any order.
pub fn decode_stim_onsets(onsets: &[(usize, u32)], schedule: &StimSchedule) -> Result<Vec<TagEvent>> {
    let mut sorted = onsets.to_vec();
    sorted.sort_by_key(|&(i, _)| i);
    let mut seen = BTreeSet::new();
    let mut events = Vec::with_capacity(sorted.len());
    for (ordinal, &(sample_index, code)) in sorted.iter().enumerate() {
        if !seen.insert(sample_index) {
            return Err(Error::DuplicateOnset(sample_index));
        }
        let entry = schedule
            .get(&code)
            .ok_or(Error::UnknownStimCode { code, sample_index })?;
        let repetition = ordinal / FLASHES_PER_REPETITION;
        let block = repetition / REPETITIONS_PER_BLOCK;
        events.push(TagEvent::new(
            sample_index,
            entry.flash_group,
            entry.target_symbol,
            u8::try_from(block).map_err(|_| Error::InvalidArgument("too many onsets".into()))?,
            (repetition % REPETITIONS_PER_BLOCK) as u8,
        )?);
    }
    Ok(events)
}
