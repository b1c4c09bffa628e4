//! Electrode positions and the spatial neighbour graph used for clustering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STANDARD_16: &str = include_str!("../data/layout_16.json");

/// Versioned layout file as shipped in `data/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub name: String,
    pub version: u32,
    pub neighbor_radius: f64,
    pub min_neighbors: usize,
    pub electrodes: Vec<ElectrodePosition>,
    pub adjacency: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodePosition {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeLayout {
    labels: Vec<String>,
    positions: Vec<[f64; 2]>,
    neighbors: Vec<Vec<usize>>,
}

impl ElectrodeLayout {
    /// Builds a layout from an explicit undirected edge list (pairs of indices).
    pub fn new(labels: Vec<String>, positions: Vec<[f64; 2]>, edges: &[(usize, usize)]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("electrode layout has no labels".into()));
        }
        if positions.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels but {} positions",
                labels.len(),
                positions.len()
            )));
        }
        let n = labels.len();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!(
                    "self-adjacency on {}",
                    labels[a]
                )));
            }
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(ElectrodeLayout {
            labels,
            positions,
            neighbors,
        })
    }

    /// Neighbours iff planar distance < `radius`, or the other electrode is
    /// among the `min_neighbors` nearest (ties within 1e-6 included).
    pub fn from_positions(
        labels: Vec<String>,
        positions: Vec<[f64; 2]>,
        radius: f64,
        min_neighbors: usize,
    ) -> Result<Self> {
        let n = positions.len();
        let dist = |a: usize, b: usize| {
            let (pa, pb) = (positions[a], positions[b]);
            (pa[0] - pb[0]).hypot(pa[1] - pb[1])
        };
        let mut edges = Vec::new();
        for a in 0..n {
            let mut d: Vec<f64> = (0..n).filter(|&b| b != a).map(|b| dist(a, b)).collect();
            d.sort_by(f64::total_cmp);
            let kth = if min_neighbors == 0 {
                f64::NEG_INFINITY
            } else {
                d.get(min_neighbors - 1).copied().unwrap_or(f64::INFINITY)
            };
            for b in (0..n).filter(|&b| b != a) {
                let dab = dist(a, b);
                if dab < radius || dab <= kth + 1e-6 {
                    edges.push((a.min(b), a.max(b)));
                }
            }
        }
        ElectrodeLayout::new(labels, positions, &edges)
    }

    pub fn from_config(cfg: &LayoutConfig) -> Result<Self> {
        let labels: Vec<String> = cfg.electrodes.iter().map(|e| e.label.clone()).collect();
        let positions = cfg.electrodes.iter().map(|e| [e.x, e.y]).collect();
        let index = |l: &str| {
            labels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| Error::InvalidArgument(format!("adjacency names unknown electrode {l}")))
        };
        let edges = cfg
            .adjacency
            .iter()
            .map(|(a, b)| Ok((index(a)?, index(b)?)))
            .collect::<Result<Vec<_>>>()?;
        ElectrodeLayout::new(labels, positions, &edges)
    }

    pub fn standard_config() -> LayoutConfig {
        serde_json::from_str(STANDARD_16).expect("bundled layout parses")
    }

    /// The 16-electrode montage: FP1, FP2, FC5, FC6, FZ, T7, CZ, T8, P7, P3,
    /// PZ, P4, P8, O1, OZ, O2.
    pub fn standard_16() -> Self {
        ElectrodeLayout::from_config(&Self::standard_config()).expect("bundled layout is valid")
    }

    /// Every pair of channels adjacent.
    pub fn fully_connected(labels: Vec<String>) -> Result<Self> {
        let n = labels.len();
        let edges: Vec<_> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        ElectrodeLayout::new(labels, vec![[0.0, 0.0]; n], &edges)
    }

    /// No spatial adjacency at all; clusters then only grow in time.
    pub fn disconnected(labels: Vec<String>) -> Result<Self> {
        let n = labels.len();
        ElectrodeLayout::new(labels, vec![[0.0, 0.0]; n], &[])
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn position(&self, index: usize) -> [f64; 2] {
        self.positions[index]
    }

    pub fn neighbors(&self, index: usize) -> &[usize] {
        &self.neighbors[index]
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.eq_ignore_ascii_case(label))
    }

    /// Restricts and reorders the layout to match `channel_labels`.
    pub fn for_channels(&self, channel_labels: &[String]) -> Result<Self> {
        let map = channel_labels
            .iter()
            .map(|l| {
                self.index_of(l).ok_or_else(|| {
                    Error::InvalidArgument(format!("channel {l} is not in the electrode layout"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut edges = Vec::new();
        for (i, &a) in map.iter().enumerate() {
            for (j, &b) in map.iter().enumerate().skip(i + 1) {
                if self.are_adjacent(a, b) {
                    edges.push((i, j));
                }
            }
        }
        ElectrodeLayout::new(
            channel_labels.to_vec(),
            map.iter().map(|&a| self.positions[a]).collect(),
            &edges,
        )
    }
}
