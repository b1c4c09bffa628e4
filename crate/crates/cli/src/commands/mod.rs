use crate::config::RunConfig;
use crate::run::{FileDigest, RunDir};

pub mod epoch;
pub mod erp;
pub mod eval;
pub mod preprocess;
pub mod report;
pub mod simulate;
pub mod stats;
pub mod train;

/// What a command sees: the effective config, its staged run directory and
/// the list of inputs it read (for the manifest).
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub run: &'a RunDir,
    pub inputs: Vec<FileDigest>,
}

pub fn time_ms(sample: usize, sample_rate: f64) -> f64 {
    1000.0 * sample as f64 / sample_rate
}
