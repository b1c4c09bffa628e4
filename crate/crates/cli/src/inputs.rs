use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use p300_core::io::{events_path, header_path, load_recording, RecordingFormat};
use p300_core::model::{Condition, Recording};
use p300_core::signal::preprocess;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{usage_msg, CliResult, ResultExt};
use crate::run::{digest_file, FileDigest};

/// A recording together with the file it came from.
pub struct Loaded {
    pub path: PathBuf,
    pub stem: String,
    pub recording: Recording,
}

fn is_recording(path: &Path) -> bool {
    RecordingFormat::from_path(path).is_some() && header_path(path).is_file()
}

/// Expands directories into the recordings they contain (data files with a
/// header sidecar), sorted by path. Every explicit file must exist.
pub fn resolve(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| usage_msg(format!("cannot list {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && is_recording(f))
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(usage_msg(format!("no recordings found in {}", p.display())));
            }
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(usage_msg(format!("input not found: {}", p.display())));
        }
    }
    if out.is_empty() {
        return Err(usage_msg("no inputs given"));
    }
    Ok(out)
}

/// Digests of the data file and its sidecars.
pub fn digests(path: &Path) -> CliResult<Vec<FileDigest>> {
    let mut files = vec![path.to_path_buf(), header_path(path)];
    let events = events_path(path);
    if events.is_file() {
        files.push(events);
    }
    files
        .iter()
        .filter(|f| f.is_file())
        .map(|f| digest_file(f, f.display().to_string()))
        .collect()
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn load_raw(path: &Path) -> CliResult<Recording> {
    let format = RecordingFormat::from_path(path)
        .ok_or_else(|| usage_msg(format!("unrecognised recording extension: {}", path.display())))?;
    load_recording(path, format).ctx(format!("loading {}", path.display()))
}

/// Recordings at the configured analysis rate are used as they are; anything
/// else goes through the preprocessing chain first.
pub fn load_analysis(path: &Path, cfg: &RunConfig) -> CliResult<Recording> {
    let rec = load_raw(path)?;
    if rec.sample_rate() == cfg.preprocess.target_rate {
        return Ok(rec);
    }
    log::debug!("preprocessing {} ({} Hz)", path.display(), rec.sample_rate());
    preprocess(&rec, &cfg.preprocess).ctx(format!("preprocessing {}", path.display()))
}

/// Loads every path in parallel, keeping input order and dropping
/// conditions the config excludes.
pub fn load_all(paths: &[PathBuf], cfg: &RunConfig, analysis: bool) -> CliResult<Vec<Loaded>> {
    let loaded: Vec<Loaded> = paths
        .par_iter()
        .map(|p| {
            let recording = if analysis { load_analysis(p, cfg)? } else { load_raw(p)? };
            Ok(Loaded {
                path: p.clone(),
                stem: stem(p),
                recording,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let kept: Vec<Loaded> = loaded.into_iter().filter(|l| cfg.keeps(l.recording.condition())).collect();
    if kept.is_empty() {
        return Err(usage_msg("no recordings left after the condition filter"));
    }
    let mut stems = std::collections::BTreeSet::new();
    for l in &kept {
        if !stems.insert(l.stem.clone()) {
            return Err(usage_msg(format!("two inputs share the file name {:?}", l.stem)));
        }
    }
    Ok(kept)
}

/// Recordings by condition, then by subject id.
pub fn by_condition(loaded: &[Loaded]) -> CliResult<BTreeMap<Condition, BTreeMap<String, &Loaded>>> {
    let mut out: BTreeMap<Condition, BTreeMap<String, &Loaded>> = BTreeMap::new();
    for l in loaded {
        let slot = out.entry(l.recording.condition()).or_default();
        if slot.insert(l.recording.subject_id().to_string(), l).is_some() {
            return Err(usage_msg(format!(
                "subject {} has more than one {} recording",
                l.recording.subject_id(),
                l.recording.condition()
            )));
        }
    }
    Ok(out)
}
