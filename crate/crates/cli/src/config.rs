use std::path::{Path, PathBuf};

use p300_core::epochs::LatencyTable;
use p300_core::eval::{CvConfig, CLASSIFIER_WINDOW_SECONDS};
use p300_core::io::SampleType;
use p300_core::model::Condition;
use p300_core::riemann::FeatureMode;
use p300_core::signal::PreprocessConfig;
use p300_core::sim::{ScheduleKind, SessionTiming, NOISE_RMS_UV, SIM_SAMPLE_RATE};
use p300_core::spatial::DEFAULT_COMPONENTS;
use p300_core::stats::{PermutationConfig, CLUSTER_ALPHA, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS};
use serde::{Deserialize, Serialize};

use crate::error::{usage_msg, CliResult};

/// Declarative run configuration. Relative paths in a config file resolve
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    /// Conditions to keep; empty keeps all.
    pub conditions: Vec<Condition>,
    pub preprocess: PreprocessConfig,
    pub latency: LatencyTable,
    pub classifier: ClassifierSection,
    pub cv: CvSection,
    pub erp: ErpSection,
    pub permutation: PermutationSection,
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output_dir: None,
            inputs: Vec::new(),
            conditions: Vec::new(),
            preprocess: PreprocessConfig::default(),
            latency: LatencyTable::default(),
            classifier: ClassifierSection::default(),
            cv: CvSection::default(),
            erp: ErpSection::default(),
            permutation: PermutationSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub window_seconds: f64,
    pub n_components: usize,
    pub feature_mode: FeatureMode,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            window_seconds: CLASSIFIER_WINDOW_SECONDS,
            n_components: DEFAULT_COMPONENTS,
            feature_mode: FeatureMode::Augmented,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub fractions: Vec<f64>,
    pub n_random_sets: usize,
    pub repetitions: Vec<usize>,
    pub soa_ms: f64,
    pub feedback_pause_ms: f64,
    /// Training fraction shown in the metric-vs-r plots (nearest listed).
    pub plot_fraction: f64,
}

impl Default for CvSection {
    fn default() -> Self {
        let cv = CvConfig::default();
        CvSection {
            fractions: cv.fractions,
            n_random_sets: cv.n_random_sets,
            repetitions: cv.repetitions,
            soa_ms: cv.soa_ms,
            feedback_pause_ms: cv.feedback_pause_ms,
            plot_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErpSection {
    pub window_seconds: f64,
    pub channels: Vec<String>,
}

impl Default for ErpSection {
    fn default() -> Self {
        ErpSection {
            window_seconds: 1.0,
            channels: vec!["CZ".into(), "PZ".into(), "OZ".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationSection {
    pub n_permutations: usize,
    pub alpha: f64,
    pub cluster_alpha: f64,
}

impl Default for PermutationSection {
    fn default() -> Self {
        PermutationSection {
            n_permutations: DEFAULT_PERMUTATIONS,
            alpha: DEFAULT_ALPHA,
            cluster_alpha: CLUSTER_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_subjects: usize,
    pub snr: Vec<f64>,
    pub schedule: ScheduleKind,
    pub timing: SessionTiming,
    pub sample_rate: f64,
    pub noise_rms_uv: f64,
    pub sample_type: SampleType,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            n_subjects: 2,
            snr: vec![1.0],
            schedule: ScheduleKind::RandomPartitions,
            timing: SessionTiming::default(),
            sample_rate: SIM_SAMPLE_RATE,
            noise_rms_uv: NOISE_RMS_UV,
            sample_type: SampleType::F32le,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage_msg(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| usage_msg(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in &mut cfg.inputs {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = cfg.output_dir.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn require_seed(&self, command: &str) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| usage_msg(format!("`{command}` is stochastic and needs a seed (--seed or `seed` in the config)")))
    }

    pub fn keeps(&self, condition: Condition) -> bool {
        self.conditions.is_empty() || self.conditions.contains(&condition)
    }

    pub fn cv_config(&self, seed: u64) -> CvConfig {
        CvConfig {
            fractions: self.cv.fractions.clone(),
            n_random_sets: self.cv.n_random_sets,
            repetitions: self.cv.repetitions.clone(),
            seed,
            n_components: self.classifier.n_components,
            feature_mode: self.classifier.feature_mode,
            soa_ms: self.cv.soa_ms,
            feedback_pause_ms: self.cv.feedback_pause_ms,
        }
    }

    pub fn permutation_config(&self, seed: u64) -> PermutationConfig {
        PermutationConfig {
            n_permutations: self.permutation.n_permutations,
            alpha: self.permutation.alpha,
            cluster_alpha: self.permutation.cluster_alpha,
            seed,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.latency.validate()?;
        for w in [self.classifier.window_seconds, self.erp.window_seconds] {
            if !(w.is_finite() && w > 0.0) {
                return Err(usage_msg(format!("window length {w} s must be positive")));
            }
        }
        if self.permutation.n_permutations < 1 {
            return Err(usage_msg("n_permutations must be at least 1"));
        }
        if !(self.permutation.alpha > 0.0 && self.permutation.alpha <= 1.0) {
            return Err(usage_msg(format!("alpha {} outside (0, 1]", self.permutation.alpha)));
        }
        if !(self.permutation.cluster_alpha > 0.0 && self.permutation.cluster_alpha < 0.5) {
            return Err(usage_msg(format!("cluster_alpha {} outside (0, 0.5)", self.permutation.cluster_alpha)));
        }
        self.cv_config(0).validate()?;
        self.simulate.timing.validate()?;
        if let Some(s) = self.simulate.snr.iter().find(|s| !(**s >= 0.0)) {
            return Err(usage_msg(format!("SNR {s} must be >= 0")));
        }
        Ok(())
    }
}
