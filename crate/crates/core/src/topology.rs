//! Client placement on the grid, radius neighbourhoods, and the
//! Metropolis-Hastings mixing matrix.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance used when validating that an input matrix is doubly stochastic.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Spectral gaps below this are reported as exactly zero.
const SPECTRAL_ZERO: f64 = 1e-12;

/// One-based lattice coordinate `(p, q)` with `1 <= p, q <= G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPos {
    pub p: u32,
    pub q: u32,
}

impl GridPos {
    pub const fn new(p: u32, q: u32) -> Self {
        GridPos { p, q }
    }

    pub fn dist_sq(self, other: GridPos) -> u64 {
        let dp = self.p.abs_diff(other.p) as u64;
        let dq = self.q.abs_diff(other.q) as u64;
        dp * dp + dq * dq
    }

    pub fn dist(self, other: GridPos) -> f64 {
        (self.dist_sq(other) as f64).sqrt()
    }

    /// Closed-disk membership: `||self - other|| <= radius`, compared on
    /// squared distances so integer lattices incur no sqrt error.
    pub fn within(self, other: GridPos, radius: f64) -> bool {
        if radius.is_infinite() {
            return true;
        }
        (self.dist_sq(other) as f64) <= radius * radius
    }

    pub fn on_grid(self, grid: u32) -> bool {
        (1..=grid).contains(&self.p) && (1..=grid).contains(&self.q)
    }

    /// Row-major index of this position on a `grid x grid` lattice.
    pub fn index(self, grid: u32) -> usize {
        ((self.p - 1) * grid + (self.q - 1)) as usize
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.p, self.q)
    }
}

/// All lattice points in lexicographic `(p, q)` order.
pub fn grid_points(grid: u32) -> impl Iterator<Item = GridPos> {
    (1..=grid).flat_map(move |p| (1..=grid).map(move |q| GridPos::new(p, q)))
}

/// Lattice points within `radius` of `center`, lexicographic order.
pub fn disk_points(center: GridPos, radius: f64, grid: u32) -> Vec<GridPos> {
    let reach = if radius.is_finite() {
        radius.max(0.0).floor() as u32
    } else {
        grid
    };
    let lo_p = center.p.saturating_sub(reach).max(1);
    let hi_p = center.p.saturating_add(reach).min(grid);
    let lo_q = center.q.saturating_sub(reach).max(1);
    let hi_q = center.q.saturating_add(reach).min(grid);
    let mut out = Vec::new();
    for p in lo_p..=hi_p {
        for q in lo_q..=hi_q {
            let pos = GridPos::new(p, q);
            if pos.within(center, radius) {
                out.push(pos);
            }
        }
    }
    out
}

pub fn random_position<R: Rng + ?Sized>(grid: u32, rng: &mut R) -> GridPos {
    GridPos::new(rng.random_range(1..=grid), rng.random_range(1..=grid))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyConfig {
    /// Grid side length `G`.
    pub grid: u32,
    /// Client count `N`.
    pub clients: usize,
    /// Communication radius `R_c`; `f64::INFINITY` gives the fully connected graph.
    pub comm_radius: f64,
}

impl TopologyConfig {
    pub fn new(grid: u32, clients: usize, comm_radius: f64) -> Result<Self> {
        let cfg = TopologyConfig {
            grid,
            clients,
            comm_radius,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 1 {
            return Err(Error::invalid("grid side must be >= 1"));
        }
        if self.clients < 1 {
            return Err(Error::invalid("client count must be >= 1"));
        }
        if self.comm_radius.is_nan() || self.comm_radius < 0.0 {
            return Err(Error::invalid("communication radius must be >= 0 or infinite"));
        }
        Ok(())
    }

    pub fn is_fully_connected(&self) -> bool {
        self.comm_radius.is_infinite()
    }
}

/// `{ j != i : ||L_i - L_j|| <= radius }`, ascending indices.
pub fn neighbors(locations: &[GridPos], i: usize, radius: f64) -> Result<Vec<usize>> {
    if i >= locations.len() {
        return Err(Error::invalid(format!(
            "client index {i} out of range for {} clients",
            locations.len()
        )));
    }
    let li = locations[i];
    Ok(locations
        .iter()
        .enumerate()
        .filter(|&(j, &lj)| j != i && li.within(lj, radius))
        .map(|(j, _)| j)
        .collect())
}

/// Undirected edge list `(i, j)` with `i < j`, sorted.
pub fn edge_set(locations: &[GridPos], radius: f64) -> Vec<(usize, usize)> {
    let n = locations.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if locations[i].within(locations[j], radius) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Doubly stochastic, symmetric `N x N` consensus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix(DMatrix<f64>);

impl MixingMatrix {
    /// Wraps an arbitrary matrix after checking it is square, nonnegative and
    /// doubly stochastic within [`STOCHASTIC_TOL`].
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        check_doubly_stochastic(&m, STOCHASTIC_TOL)?;
        Ok(MixingMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        MixingMatrix(DMatrix::identity(n, n))
    }

    /// The exact-averaging matrix `11^T / N`.
    pub fn averaging(n: usize) -> Self {
        MixingMatrix(DMatrix::from_element(n, n, 1.0 / n as f64))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn stochastic_error(&self) -> f64 {
        let n = self.size();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            worst = worst
                .max((self.0.row(k).sum() - 1.0).abs())
                .max((self.0.column(k).sum() - 1.0).abs());
        }
        worst
    }

    pub fn is_symmetric(&self) -> bool {
        self.0 == self.0.transpose()
    }
}

fn check_doubly_stochastic(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "mixing matrix must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|&w| !(w >= -tol)) {
        return Err(Error::invalid("mixing matrix has negative or NaN entries"));
    }
    for k in 0..m.nrows() {
        let r = m.row(k).sum();
        let c = m.column(k).sum();
        if (r - 1.0).abs() > tol || (c - 1.0).abs() > tol {
            return Err(Error::invalid(format!(
                "mixing matrix is not doubly stochastic (row {k} sums to {r}, column {k} to {c})"
            )));
        }
    }
    Ok(())
}

/// Metropolis-Hastings weights over the radius graph:
/// `w_ij = 1 / (1 + max(d_i, d_j))` on edges and `w_ii = 1 - sum_j w_ij`.
pub fn build_mixing_matrix(locations: &[GridPos], radius: f64) -> MixingMatrix {
    let n = locations.len();
    let edges = edge_set(locations, radius);
    let mut degree = vec![0usize; n];
    for &(i, j) in &edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in &edges {
        let v = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix(w)
}

/// `p = 1 - lambda_2(W^T W)`, clamped to `[0, 1]`.
///
/// A single client has nothing to mix and reports `p = 1`.
pub fn spectral_mixing_param(w: &MixingMatrix) -> Result<f64> {
    check_doubly_stochastic(&w.0, STOCHASTIC_TOL)?;
    let n = w.size();
    if n <= 1 {
        return Ok(1.0);
    }
    let gram = w.0.transpose() * &w.0;
    let mut eig: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let p = (1.0 - eig[1]).clamp(0.0, 1.0);
    Ok(if p < SPECTRAL_ZERO { 0.0 } else { p })
}

/// Both sides of the contraction inequality
/// `||M W - M_bar||_F^2 <= (1 - p) ||M - M_bar||_F^2`.
pub fn contraction_check(m: &DMatrix<f64>, w: &MixingMatrix) -> Result<(f64, f64)> {
    if m.ncols() != w.size() {
        return Err(Error::invalid(format!(
            "matrix has {} columns but mixing matrix is {}x{}",
            m.ncols(),
            w.size(),
            w.size()
        )));
    }
    let p = spectral_mixing_param(w)?;
    let mean = column_mean_matrix(m);
    let lhs = (m * &w.0 - &mean).norm_squared();
    let rhs = (1.0 - p) * (m - &mean).norm_squared();
    Ok((lhs, rhs))
}

/// `M (11^T / N)`: every column replaced by the column mean.
pub fn column_mean_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    if n == 0 {
        return m.clone();
    }
    let mean = m.column_mean();
    DMatrix::from_fn(m.nrows(), n, |r, _| mean[r])
}

/// Connected components of an undirected graph on `n` nodes.
pub fn component_count(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        stack.push(s);
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pos(p: u32, q: u32) -> GridPos {
        GridPos::new(p, q)
    }

    #[test]
    fn neighbors_examples() {
        assert!(neighbors(&[pos(1, 1)], 0, 5.0).unwrap().is_empty());
        assert_eq!(neighbors(&[pos(1, 1), pos(1, 2)], 0, 1.0).unwrap(), vec![1]);
        // sqrt(8) > 2
        assert!(neighbors(&[pos(1, 1), pos(3, 3)], 0, 2.0).unwrap().is_empty());
        assert_eq!(
            neighbors(&[pos(1, 1), pos(18, 18), pos(9, 9)], 0, f64::INFINITY).unwrap(),
            vec![1, 2]
        );
        assert!(matches!(
            neighbors(&[pos(1, 1)], 1, 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn colocated_clients_are_neighbors() {
        assert_eq!(neighbors(&[pos(4, 4), pos(4, 4)], 1, 0.0).unwrap(), vec![0]);
    }

    #[test]
    fn mixing_matrix_fixtures() {
        let single = build_mixing_matrix(&[pos(2, 2)], 1.0);
        assert_eq!(single.as_matrix(), &DMatrix::from_element(1, 1, 1.0));

        let pair = build_mixing_matrix(&[pos(1, 1), pos(1, 2)], 1.0);
        assert_eq!(pair.as_matrix(), &DMatrix::from_element(2, 2, 0.5));

        // chain 1-2-3 with degrees 1, 2, 1
        let chain = build_mixing_matrix(&[pos(1, 1), pos(1, 2), pos(1, 3)], 1.0);
        let third = 1.0 / 3.0;
        assert_eq!(chain.get(0, 1), third);
        assert_eq!(chain.get(1, 2), third);
        assert_eq!(chain.get(0, 2), 0.0);
        assert!((chain.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((chain.get(2, 2) - 2.0 / 3.0).abs() < 1e-15);
        assert!((chain.get(1, 1) - third).abs() < 1e-15);
        assert!(chain.stochastic_error() < 1e-12);
    }

    #[test]
    fn spectral_param_examples() {
        let avg = MixingMatrix::averaging(4);
        assert!((spectral_mixing_param(&avg).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spectral_mixing_param(&MixingMatrix::identity(4)).unwrap(), 0.0);
        let pair = build_mixing_matrix(&[pos(1, 1), pos(1, 2)], 1.0);
        assert!((spectral_mixing_param(&pair).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_param_rejects_non_stochastic() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 1.0]);
        assert!(MixingMatrix::from_matrix(m.clone()).is_err());
        assert!(spectral_mixing_param(&MixingMatrix(m)).is_err());
    }

    #[test]
    fn contraction_examples() {
        let w = build_mixing_matrix(&[pos(1, 1), pos(1, 2), pos(1, 3)], 1.0);
        let same = DMatrix::from_fn(3, 3, |r, _| r as f64 + 0.5);
        let (lhs, rhs) = contraction_check(&same, &w).unwrap();
        assert!(lhs.abs() < 1e-24 && rhs.abs() < 1e-24);

        let m = DMatrix::from_fn(3, 4, |r, c| (r * 7 + c * 3) as f64 % 5.0);
        let (lhs, _) = contraction_check(&m, &MixingMatrix::averaging(4)).unwrap();
        assert!(lhs < 1e-24);

        let chain_m = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 2.0, 1.1, 0.4, -0.7, 5.0, 0.0, 1.0]);
        let (lhs, rhs) = contraction_check(&chain_m, &w).unwrap();
        assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");

        assert!(contraction_check(&DMatrix::zeros(2, 5), &w).is_err());
    }

    #[test]
    fn disconnected_graph_has_zero_gap() {
        let locs = [pos(1, 1), pos(1, 2), pos(9, 9), pos(9, 10)];
        let w = build_mixing_matrix(&locs, 1.0);
        assert_eq!(spectral_mixing_param(&w).unwrap(), 0.0);
        let connected = build_mixing_matrix(&locs[..2], 1.0);
        assert!(spectral_mixing_param(&connected).unwrap() > 0.0);
    }

    fn placement() -> impl Strategy<Value = (u32, Vec<(u32, u32)>, f64)> {
        (
            1u32..=18,
            1usize..=10,
            prop_oneof![Just(f64::INFINITY), (0u32..=5).prop_map(f64::from)],
        )
            .prop_flat_map(|(g, n, r)| (Just(g), prop::collection::vec((1..=g, 1..=g), n), Just(r)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn mixing_matrix_invariants((_g, raw, r) in placement()) {
            let locs: Vec<GridPos> = raw.iter().map(|&(p, q)| pos(p, q)).collect();
            let w = build_mixing_matrix(&locs, r);
            prop_assert!(w.is_symmetric());
            prop_assert!(w.stochastic_error() < 1e-12);
            prop_assert!(w.as_matrix().iter().all(|&x| x >= 0.0));
            for i in 0..locs.len() {
                let nb = neighbors(&locs, i, r).unwrap();
                for j in 0..locs.len() {
                    if j != i && !nb.contains(&j) {
                        prop_assert_eq!(w.get(i, j), 0.0);
                    }
                }
            }
            let p = spectral_mixing_param(&w).unwrap();
            let comps = component_count(locs.len(), &edge_set(&locs, r));
            prop_assert_eq!(p == 0.0, comps >= 2);
        }

        #[test]
        fn contraction_holds((_g, raw, r) in placement(), seed in any::<u64>(), d in 1usize..5) {
            let locs: Vec<GridPos> = raw.iter().map(|&(p, q)| pos(p, q)).collect();
            let w = build_mixing_matrix(&locs, r);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(d, locs.len(), |_, _| rng.random_range(-3.0..3.0));
            let (lhs, rhs) = contraction_check(&m, &w).unwrap();
            prop_assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn disk_points_matches_filter() {
        for &(c, r) in &[(pos(2, 2), 1.0), (pos(1, 1), 3.0), (pos(9, 9), 5.0), (pos(3, 3), 0.5)] {
            let fast = disk_points(c, r, 18);
            let slow: Vec<_> = grid_points(18).filter(|x| x.within(c, r)).collect();
            assert_eq!(fast, slow);
        }
        assert_eq!(disk_points(pos(2, 2), f64::INFINITY, 3).len(), 9);
    }
}
