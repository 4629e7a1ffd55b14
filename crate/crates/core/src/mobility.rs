//! Trajectory policies for mobile clients.
//!
//! `Static` and `Random` are the baselines. `Dam` and `Dcm` are the
//! distribution-aware policies: a mobile client scores candidate locations by
//! how different the class mix it would see there is from the mix at its
//! current location, samples a destination proportionally, and walks towards
//! it under the per-round displacement limit `R_m` until it arrives.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClassHistogram;
use crate::topology::{disk_points, grid_points, GridPos};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MobilityMode {
    Static,
    Random,
    Dam,
    Dcm,
}

impl MobilityMode {
    pub const ALL: [MobilityMode; 4] = [
        MobilityMode::Static,
        MobilityMode::Random,
        MobilityMode::Dam,
        MobilityMode::Dcm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MobilityMode::Static => "static",
            MobilityMode::Random => "random",
            MobilityMode::Dam => "dam",
            MobilityMode::Dcm => "dcm",
        }
    }

    pub fn is_distribution_aware(self) -> bool {
        matches!(self, MobilityMode::Dam | MobilityMode::Dcm)
    }
}

impl fmt::Display for MobilityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MobilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(MobilityMode::Static),
            "random" => Ok(MobilityMode::Random),
            "dam" => Ok(MobilityMode::Dam),
            "dcm" => Ok(MobilityMode::Dcm),
            other => Err(Error::invalid(format!(
                "unknown mobility mode `{other}` (expected static, random, dam or dcm)"
            ))),
        }
    }
}

/// Position and pending destination of one mobile client.
#[derive(Debug, Clone, PartialEq)]
pub struct MobileState {
    pub client: usize,
    pub current: GridPos,
    pub destination: Option<GridPos>,
    /// Set while a sampled destination has not been reached yet.
    pub in_transit: bool,
    /// Maximum displacement per round.
    pub max_step: f64,
}

impl MobileState {
    pub fn new(client: usize, current: GridPos, max_step: f64) -> Self {
        MobileState {
            client,
            current,
            destination: None,
            in_transit: false,
            max_step,
        }
    }

    pub fn is_valid(&self) -> bool {
        let transit_ok = !self.in_transit || matches!(self.destination, Some(d) if d != self.current);
        transit_ok && self.max_step > 0.0
    }
}

/// Class proportions observed by a mobile client at a location.
///
/// An all-zero vector is the sentinel for "no data in range".
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Self {
        ClassDistribution(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn is_empty_sentinel(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

/// Greedy cover of the static clients, in construction order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterSet {
    pub centers: Vec<GridPos>,
}

impl ClusterSet {
    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }
}

/// Uniform draw over `{ L in grid : ||L - current|| <= R_m }`.
pub fn random_step<R: Rng + ?Sized>(state: &MobileState, grid: u32, rng: &mut R) -> GridPos {
    let feasible = disk_points(state.current, state.max_step, grid);
    feasible[rng.random_range(0..feasible.len())]
}

/// Greedy set cover: repeatedly take the grid point (lexicographically first
/// among ties) that covers the most still-uncovered static clients.
pub fn cluster_centers(static_locs: &[GridPos], comm_radius: f64, grid: u32) -> ClusterSet {
    let mut uncovered: Vec<GridPos> = static_locs.to_vec();
    let mut centers = Vec::new();
    while !uncovered.is_empty() {
        let mut best = None;
        let mut best_count = 0usize;
        for cand in grid_points(grid) {
            let count = uncovered.iter().filter(|&&s| s.within(cand, comm_radius)).count();
            if count > best_count {
                best_count = count;
                best = Some(cand);
            }
        }
        // Every uncovered client covers itself, so a point is always found.
        let center = best.expect("uncovered static client lies on the grid");
        uncovered.retain(|&s| !s.within(center, comm_radius));
        centers.push(center);
    }
    ClusterSet { centers }
}

/// Pooled class proportions of the static clients within `R_c` of `location`
/// (at their initial positions) together with the mobile client's own data.
pub fn location_distribution(
    location: GridPos,
    static_locs: &[GridPos],
    static_histograms: &[ClassHistogram],
    own_histogram: &ClassHistogram,
    comm_radius: f64,
) -> Result<ClassDistribution> {
    if static_locs.len() != static_histograms.len() {
        return Err(Error::invalid(format!(
            "{} static locations but {} histograms",
            static_locs.len(),
            static_histograms.len()
        )));
    }
    let classes = own_histogram.counts.len();
    let mut pooled: Vec<u64> = own_histogram.counts.clone();
    for (loc, hist) in static_locs.iter().zip(static_histograms) {
        if hist.counts.len() != classes {
            return Err(Error::invalid("histograms disagree on class count"));
        }
        if loc.within(location, comm_radius) {
            for (acc, &c) in pooled.iter_mut().zip(&hist.counts) {
                *acc += c;
            }
        }
    }
    let total: u64 = pooled.iter().sum();
    if total == 0 {
        return Ok(ClassDistribution(vec![0.0; classes]));
    }
    Ok(ClassDistribution(
        pooled.iter().map(|&c| c as f64 / total as f64).collect(),
    ))
}

/// Euclidean distance between two class distributions.
pub fn distribution_distance(a: &ClassDistribution, b: &ClassDistribution) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(Error::invalid(format!(
            "distribution lengths differ: {} vs {}",
            a.0.len(),
            b.0.len()
        )));
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Simple normalisation `p_k = d_k / sum(d)`, uniform when every distance is 0.
pub fn destination_probabilities(candidates: &[GridPos], distances: &[f64]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate destinations"));
    }
    if candidates.len() != distances.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} distances",
            candidates.len(),
            distances.len()
        )));
    }
    if distances.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
        return Err(Error::invalid("distances must be finite and nonnegative"));
    }
    let total: f64 = distances.iter().sum();
    if total == 0.0 {
        let u = 1.0 / candidates.len() as f64;
        return Ok(vec![u; candidates.len()]);
    }
    Ok(distances.iter().map(|&d| d / total).collect())
}

/// One constrained move towards `dest`: jump there when within `R_m`,
/// otherwise to the feasible point closest to `dest` (lexicographic ties).
pub fn constrained_step(state: &MobileState, dest: GridPos, grid: u32) -> (GridPos, bool) {
    if dest.within(state.current, state.max_step) {
        return (dest, true);
    }
    let next = disk_points(state.current, state.max_step, grid)
        .into_iter()
        .min_by_key(|l| (l.dist_sq(dest), *l))
        .expect("current location is always feasible");
    (next, next == dest)
}

/// Per-client lookup of [`location_distribution`] over every grid point,
/// computed once from the initial static placement.
#[derive(Debug, Clone)]
pub struct DistributionTable {
    grid: u32,
    by_location: Vec<ClassDistribution>,
}

impl DistributionTable {
    pub fn build(
        grid: u32,
        static_locs: &[GridPos],
        static_histograms: &[ClassHistogram],
        own_histogram: &ClassHistogram,
        comm_radius: f64,
    ) -> Result<Self> {
        let by_location = grid_points(grid)
            .map(|loc| location_distribution(loc, static_locs, static_histograms, own_histogram, comm_radius))
            .collect::<Result<Vec<_>>>()?;
        Ok(DistributionTable { grid, by_location })
    }

    pub fn at(&self, loc: GridPos) -> &ClassDistribution {
        &self.by_location[loc.index(self.grid)]
    }

    pub fn distance(&self, a: GridPos, b: GridPos) -> f64 {
        // Same length by construction.
        distribution_distance(self.at(a), self.at(b)).unwrap_or(0.0)
    }
}

/// Read-only inputs to [`mobility_step`].
#[derive(Debug, Clone, Copy)]
pub struct MobilityContext<'a> {
    pub grid: u32,
    pub round: usize,
    pub clusters: Option<&'a ClusterSet>,
    pub distributions: Option<&'a DistributionTable>,
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Round-off left `u` past the last cumulative sum: take the last
    // candidate with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Advance one mobile client by one round under `mode`.
pub fn mobility_step<R: Rng + ?Sized>(
    state: &MobileState,
    mode: MobilityMode,
    ctx: &MobilityContext<'_>,
    rng: &mut R,
) -> Result<MobileState> {
    match mode {
        MobilityMode::Static => Ok(state.clone()),
        MobilityMode::Random => {
            let next = random_step(state, ctx.grid, rng);
            Ok(MobileState {
                current: next,
                destination: None,
                in_transit: false,
                ..state.clone()
            })
        }
        MobilityMode::Dam | MobilityMode::Dcm => {
            let table = ctx
                .distributions
                .ok_or_else(|| Error::config("mobility.mode", "distribution-aware mode needs a distribution table"))?;
            let persisted = state.destination.filter(|_| state.in_transit && ctx.round > 0);
            let dest = match persisted {
                Some(d) => d,
                None => {
                    let candidates: Vec<GridPos> = if mode == MobilityMode::Dam {
                        grid_points(ctx.grid).collect()
                    } else {
                        match ctx.clusters {
                            Some(c) if !c.is_empty() => c.centers.clone(),
                            _ => {
                                return Err(Error::config(
                                    "mobility.mode",
                                    "DCM requires at least one cluster center (no static clients)",
                                ))
                            }
                        }
                    };
                    let distances: Vec<f64> = candidates.iter().map(|&c| table.distance(c, state.current)).collect();
                    let probs = destination_probabilities(&candidates, &distances)?;
                    candidates[sample_index(&probs, rng)]
                }
            };
            let (next, reached) = constrained_step(state, dest, ctx.grid);
            Ok(MobileState {
                current: next,
                destination: if reached { None } else { Some(dest) },
                in_transit: !reached,
                ..state.clone()
            })
        }
    }
}
