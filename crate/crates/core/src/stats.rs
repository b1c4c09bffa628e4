//! Paired cluster-based permutation test over channels × samples.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::epochs::DifferenceWave;
use crate::error::{Error, Result};
use crate::layout::ElectrodeLayout;
use crate::linalg::rows;

pub const CLUSTER_ALPHA: f64 = 0.025;
pub const DEFAULT_PERMUTATIONS: usize = 5000;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Per-subject paired differences, flattened channel-major per cell.
struct Paired {
    n_channels: usize,
    n_samples: usize,
    diffs: Vec<Vec<f64>>,
    sum_sq: Vec<f64>,
}

impl Paired {
    fn new(a: &[DifferenceWave], b: &[DifferenceWave]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(format!("{} vs {} subjects", a.len(), b.len())));
        }
        if a.len() < 2 {
            return Err(Error::InvalidArgument(format!("paired test needs n ≥ 2 subjects, got {}", a.len())));
        }
        let shape = a[0].0.shape();
        if let Some(w) = a.iter().chain(b).find(|w| w.0.shape() != shape) {
            return Err(Error::ShapeMismatch(format!("wave shape {:?} vs {shape:?}", w.0.shape())));
        }
        let (n_channels, n_samples) = shape;
        let cells = n_channels * n_samples;
        let diffs: Vec<Vec<f64>> = a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let mut d = Vec::with_capacity(cells);
                for c in 0..n_channels {
                    for t in 0..n_samples {
                        d.push(x.0[(c, t)] - y.0[(c, t)]);
                    }
                }
                d
            })
            .collect();
        let mut sum_sq = vec![0.0; cells];
        for d in &diffs {
            for (s, v) in sum_sq.iter_mut().zip(d) {
                *s += v * v;
            }
        }
        Ok(Paired {
            n_channels,
            n_samples,
            diffs,
            sum_sq,
        })
    }

    fn n(&self) -> usize {
        self.diffs.len()
    }

    /// t-values for the given per-subject signs. A cell with no spread gets
    /// `None` when its mean is nonzero.
    fn tvalues(&self, signs: &[f64]) -> Vec<Option<f64>> {
        let n = self.n() as f64;
        let mut sums = vec![0.0; self.sum_sq.len()];
        for (d, s) in self.diffs.iter().zip(signs) {
            for (acc, v) in sums.iter_mut().zip(d) {
                *acc += s * v;
            }
        }
        sums.iter()
            .zip(&self.sum_sq)
            .map(|(&sum, &ss)| {
                let mean = sum / n;
                let var = ((ss - n * mean * mean) / (n - 1.0)).max(0.0);
                // spread indistinguishable from rounding in the sum of squares
                if var <= 1e-24 * (ss / n).max(f64::MIN_POSITIVE) {
                    return if mean.abs() <= 1e-12 * (ss / n).sqrt() { Some(0.0) } else { None };
                }
                Some(mean / (var / n).sqrt())
            })
            .collect()
    }
}

fn to_matrix(values: &[f64], n_channels: usize, n_samples: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_channels, n_samples, |c, t| values[c * n_samples + t])
}

/// Paired t statistic of `A − B` across subjects for every cell.
pub fn paired_tmap(a: &[DifferenceWave], b: &[DifferenceWave]) -> Result<DMatrix<f64>> {
    let p = Paired::new(a, b)?;
    let t = p.tvalues(&vec![1.0; p.n()]);
    if let Some(i) = t.iter().position(Option::is_none) {
        return Err(Error::DegenerateVariance {
            channel: i / p.n_samples,
            sample: i % p.n_samples,
        });
    }
    Ok(to_matrix(&t.into_iter().map(|v| v.unwrap()).collect::<Vec<_>>(), p.n_channels, p.n_samples))
}

/// Two-sided critical t value for a per-tail `cluster_alpha` with `n − 1`
/// degrees of freedom.
pub fn cluster_threshold(n_subjects: usize, cluster_alpha: f64) -> Result<f64> {
    if n_subjects < 2 {
        return Err(Error::InvalidArgument(format!("need n ≥ 2 subjects, got {n_subjects}")));
    }
    if !(cluster_alpha > 0.0 && cluster_alpha < 0.5) {
        return Err(Error::InvalidArgument(format!("cluster alpha {cluster_alpha} outside (0, 0.5)")));
    }
    let dist = StudentsT::new(0.0, 1.0, (n_subjects - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - cluster_alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub sign: Sign,
    /// (channel, sample) members in scan order.
    pub cells: Vec<(usize, usize)>,
    /// Sum of member t-values.
    pub mass: f64,
}

impl Cluster {
    pub fn sample_range(&self) -> (usize, usize) {
        let lo = self.cells.iter().map(|c| c.1).min().unwrap_or(0);
        let hi = self.cells.iter().map(|c| c.1).max().unwrap_or(0);
        (lo, hi)
    }

    pub fn channels(&self) -> Vec<usize> {
        let mut ch: Vec<usize> = self.cells.iter().map(|c| c.0).collect();
        ch.sort_unstable();
        ch.dedup();
        ch
    }
}

fn check_layout(layout: &ElectrodeLayout, n_channels: usize) -> Result<()> {
    if layout.is_empty() {
        return Err(Error::InvalidArgument("empty electrode layout".into()));
    }
    if layout.len() != n_channels {
        return Err(Error::ShapeMismatch(format!(
            "layout has {} electrodes, t-map {n_channels} channels",
            layout.len()
        )));
    }
    Ok(())
}

/// Connected suprathreshold regions, positive (`t > threshold`) and negative
/// (`t < −threshold`) separately. Cells connect to the previous and next
/// sample on the same channel and to layout neighbours at the same sample.
pub fn form_clusters(tmap: &DMatrix<f64>, layout: &ElectrodeLayout, threshold: f64) -> Result<Vec<Cluster>> {
    check_layout(layout, tmap.nrows())?;
    let values: Vec<f64> = (0..tmap.nrows())
        .flat_map(|c| (0..tmap.ncols()).map(move |t| (c, t)))
        .map(|(c, t)| tmap[(c, t)])
        .collect();
    Ok(clusters_flat(&values, tmap.nrows(), tmap.ncols(), layout, threshold))
}

fn clusters_flat(values: &[f64], n_channels: usize, n_samples: usize, layout: &ElectrodeLayout, threshold: f64) -> Vec<Cluster> {
    let sign_of = |v: f64| {
        if v > threshold {
            Some(Sign::Positive)
        } else if v < -threshold {
            Some(Sign::Negative)
        } else {
            None
        }
    };
    let mut seen = vec![false; values.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..values.len() {
        if seen[start] {
            continue;
        }
        let Some(sign) = sign_of(values[start]) else { continue };
        seen[start] = true;
        queue.push_back(start);
        let mut cells = Vec::new();
        let mut mass = 0.0;
        while let Some(i) = queue.pop_front() {
            let (c, t) = (i / n_samples, i % n_samples);
            cells.push((c, t));
            mass += values[i];
            let mut visit = |j: usize| {
                if !seen[j] && sign_of(values[j]) == Some(sign) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if t > 0 {
                visit(i - 1);
            }
            if t + 1 < n_samples {
                visit(i + 1);
            }
            for &nb in layout.neighbors(c) {
                visit(nb * n_samples + t);
            }
        }
        cells.sort_unstable();
        out.push(Cluster { sign, cells, mass });
    }
    debug_assert!(out.iter().all(|c| c.cells.iter().all(|&(ch, _)| ch < n_channels)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermutationConfig {
    pub n_permutations: usize,
    pub alpha: f64,
    pub cluster_alpha: f64,
    pub seed: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            n_permutations: DEFAULT_PERMUTATIONS,
            alpha: DEFAULT_ALPHA,
            cluster_alpha: CLUSTER_ALPHA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestedCluster {
    pub id: usize,
    #[serde(flatten)]
    pub cluster: Cluster,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub n_subjects: usize,
    pub threshold: f64,
    pub config: PermutationConfig,
    #[serde(with = "rows")]
    pub tmap: DMatrix<f64>,
    pub clusters: Vec<TestedCluster>,
    /// Largest |cluster mass| of each permutation, in permutation order.
    pub null_max_mass: Vec<f64>,
}

impl ClusterResult {
    pub fn significant(&self) -> impl Iterator<Item = &TestedCluster> {
        self.clusters.iter().filter(|c| c.significant)
    }

    pub fn any_significant(&self) -> bool {
        self.significant().next().is_some()
    }

    /// (channel, sample, cluster id) for every member of every cluster.
    pub fn mask_rows(&self) -> Vec<(usize, usize, usize)> {
        let mut rows: Vec<_> = self
            .clusters
            .iter()
            .flat_map(|c| c.cluster.cells.iter().map(move |&(ch, t)| (ch, t, c.id)))
            .collect();
        rows.sort_unstable();
        rows
    }

    /// Sample span covered by the significant clusters.
    pub fn significant_span(&self) -> Option<(usize, usize)> {
        self.significant()
            .map(|c| c.cluster.sample_range())
            .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }
}

/// `(1 + #{null ≥ |mass|}) / (1 + n_perm)`.
pub fn cluster_p_value(mass: f64, null_max_mass: &[f64]) -> f64 {
    let exceed = null_max_mass.iter().filter(|&&m| m >= mass.abs()).count();
    (1 + exceed) as f64 / (1 + null_max_mass.len()) as f64
}

fn permutation_signs(seed: u64, k: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Cluster test with a max-|mass| null from random per-subject sign flips of
/// `A − B`. Permutations run on the current rayon pool.
pub fn permutation_test(
    a: &[DifferenceWave],
    b: &[DifferenceWave],
    layout: &ElectrodeLayout,
    config: &PermutationConfig,
) -> Result<ClusterResult> {
    if config.n_permutations < 1 {
        return Err(Error::InvalidArgument("n_permutations must be at least 1".into()));
    }
    if !(config.alpha > 0.0 && config.alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {} outside (0,1]", config.alpha)));
    }
    let tmap = paired_tmap(a, b)?;
    let p = Paired::new(a, b)?;
    check_layout(layout, p.n_channels)?;
    let threshold = cluster_threshold(p.n(), config.cluster_alpha)?;
    let observed = form_clusters(&tmap, layout, threshold)?;

    let null_max_mass: Vec<f64> = (0..config.n_permutations)
        .into_par_iter()
        .map(|k| {
            let signs = permutation_signs(config.seed, k, p.n());
            let t: Vec<f64> = p.tvalues(&signs).into_iter().map(|v| v.unwrap_or(0.0)).collect();
            clusters_flat(&t, p.n_channels, p.n_samples, layout, threshold)
                .iter()
                .map(|c| c.mass.abs())
                .fold(0.0, f64::max)
        })
        .collect();

    let clusters = observed
        .into_iter()
        .enumerate()
        .map(|(id, cluster)| {
            let p_value = cluster_p_value(cluster.mass, &null_max_mass);
            TestedCluster {
                id,
                significant: p_value <= config.alpha,
                p_value,
                cluster,
            }
        })
        .collect();
    Ok(ClusterResult {
        n_subjects: p.n(),
        threshold,
        config: *config,
        tmap,
        clusters,
        null_max_mass,
    })
}
