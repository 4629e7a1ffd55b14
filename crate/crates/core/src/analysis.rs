//! Numerical checks of the consensus and convergence theory over recorded
//! runs: the unrolled-model identity, the mixing-product bound, windowed
//! connectivity detection, heterogeneity estimates and the optimisation-error
//! bound.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::Dataset;
use crate::model::{Classifier, ModelKind};
use crate::topology::{component_count, MixingMatrix};
use crate::training::{GradientMatrix, RunHistory, StackedModels};
use crate::{Error, Result};

pub use crate::training::consensus_distance;

/// The constant `C` of the mixing-product bound.
pub const PRODUCT_BOUND_C: f64 = 4.0;

/// Undirected edge sets, one per round, over `nodes` vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSetSequence {
    pub nodes: usize,
    pub rounds: Vec<Vec<(usize, usize)>>,
}

impl EdgeSetSequence {
    pub fn new(nodes: usize, rounds: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        for (t, edges) in rounds.iter().enumerate() {
            if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= nodes || j >= nodes) {
                return Err(Error::invalid(format!(
                    "round {t} edge ({i},{j}) references a node outside 0..{nodes}"
                )));
            }
        }
        Ok(EdgeSetSequence { nodes, rounds })
    }

    pub fn from_history(history: &RunHistory) -> Self {
        EdgeSetSequence {
            nodes: history.initial_locations.len(),
            rounds: history.edge_sets(),
        }
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Whether the union of rounds `start..end` is connected.
    pub fn window_connected(&self, start: usize, end: usize) -> bool {
        let union: Vec<(usize, usize)> = self.rounds[start..end].iter().flatten().copied().collect();
        component_count(self.nodes, &union) <= 1
    }

    /// Whether every complete window `[kB, (k+1)B)` has a connected union.
    /// A window size longer than the horizon does not qualify.
    pub fn is_b_connected(&self, b: usize) -> bool {
        if b == 0 || b > self.len() {
            return false;
        }
        (0..self.len() / b).all(|k| self.window_connected(k * b, (k + 1) * b))
    }
}

/// Smallest window size `B <= max_b` for which every complete window of the
/// sequence has a connected union graph.
pub fn detect_b(seq: &EdgeSetSequence, max_b: usize) -> Option<usize> {
    (1..=max_b.min(seq.len())).find(|&b| seq.is_b_connected(b))
}

fn check_square_chain(ws: &[MixingMatrix], n: usize) -> Result<()> {
    if let Some((k, w)) = ws.iter().enumerate().find(|(_, w)| w.size() != n) {
        return Err(Error::invalid(format!(
            "mixing matrix {k} is {}x{}, expected {n}x{n}",
            w.size(),
            w.size()
        )));
    }
    Ok(())
}

/// Ordered product `W^(0) W^(1) ... W^(B-1)`.
pub fn mixing_product(ws: &[MixingMatrix]) -> Result<DMatrix<f64>> {
    let first = ws.first().ok_or_else(|| Error::invalid("empty mixing sequence"))?;
    check_square_chain(ws, first.size())?;
    Ok(ws[1..]
        .iter()
        .fold(first.as_matrix().clone(), |acc, w| acc * w.as_matrix()))
}

/// `X^(t)` expressed from `X^(t-B)` and the intervening gradients:
/// `X_start * prod_k W^(k) - eta * sum_k G^(k) * prod_{j>=k} W^(j)`.
pub fn unroll_models(
    x_start: &StackedModels,
    ws: &[MixingMatrix],
    gs: &[GradientMatrix],
    eta: f64,
) -> Result<StackedModels> {
    if ws.is_empty() || ws.len() != gs.len() {
        return Err(Error::invalid(format!(
            "need B >= 1 matching mixing and gradient matrices, got {} and {}",
            ws.len(),
            gs.len()
        )));
    }
    let n = x_start.ncols();
    check_square_chain(ws, n)?;
    if let Some(k) = gs.iter().position(|g| g.shape() != x_start.shape()) {
        return Err(Error::invalid(format!(
            "gradient matrix {k} has shape {:?}, expected {:?}",
            gs[k].shape(),
            x_start.shape()
        )));
    }
    // suffix[k] = W^(k) ... W^(B-1)
    let b = ws.len();
    let mut suffix = vec![DMatrix::identity(n, n); b + 1];
    for k in (0..b).rev() {
        suffix[k] = ws[k].as_matrix() * &suffix[k + 1];
    }
    let mut out = x_start * &suffix[0];
    for k in 0..b {
        out -= (&gs[k] * &suffix[k]) * eta;
    }
    Ok(out)
}

/// `||psi - 11^T/N||_F^2` for the ordered product `psi` of the window.
pub fn psi_deviation(ws: &[MixingMatrix]) -> Result<f64> {
    let psi = mixing_product(ws)?;
    let n = psi.nrows();
    Ok(psi.map(|v| v - 1.0 / n as f64).norm_squared())
}

/// `ln(lambda^(2B))` with `lambda = (1 - N^(-NB))^(1/B)`, i.e.
/// `2 ln(1 - N^(-NB))`, evaluated without forming `N^(-NB)` directly.
pub fn log_lambda_2b(n: usize, b: usize) -> f64 {
    if n <= 1 {
        return f64::NEG_INFINITY;
    }
    let log_tail = -((n * b) as f64) * (n as f64).ln();
    2.0 * (-log_tail.exp()).ln_1p()
}

/// `C^2 N^2 lambda^(2B)` with `C = 4`.
pub fn mixing_product_bound(n: usize, b: usize) -> Result<f64> {
    if n < 1 || b < 1 {
        return Err(Error::invalid("N and B must both be >= 1"));
    }
    let c2n2 = (PRODUCT_BOUND_C * n as f64).powi(2);
    Ok(c2n2 * log_lambda_2b(n, b).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heterogeneity {
    /// `tau_i = max_t ||g_i - g_bar||^2`.
    pub tau: Vec<f64>,
    pub tau_hat: f64,
    /// Per-client `sigma_i^2` estimates.
    pub sigma_sq: Vec<f64>,
    pub sigma_bar_sq: f64,
}

/// Heterogeneity and variance constants measured from a gradient history.
///
/// `full_history`, when given, holds full-shard gradients at the same
/// parameters as `history`; without it (full-batch training) the sampling
/// variance is exactly zero.
pub fn estimate_heterogeneity(
    history: &[GradientMatrix],
    full_history: Option<&[GradientMatrix]>,
) -> Result<Heterogeneity> {
    let first = history
        .first()
        .ok_or_else(|| Error::invalid("empty gradient history"))?;
    let n = first.ncols();
    if let Some(full) = full_history {
        if full.len() != history.len() {
            return Err(Error::invalid("full-batch history length differs"));
        }
    }
    let mut tau = vec![0.0f64; n];
    let mut sigma_sq = vec![0.0f64; n];
    for (t, g) in history.iter().enumerate() {
        if g.shape() != first.shape() {
            return Err(Error::invalid(format!("gradient matrix {t} changes shape")));
        }
        let mean = g.column_mean();
        for (ti, col) in tau.iter_mut().zip(g.column_iter()) {
            *ti = ti.max((col - &mean).norm_squared());
        }
        if let Some(full) = full_history {
            for ((si, col), fcol) in sigma_sq.iter_mut().zip(g.column_iter()).zip(full[t].column_iter()) {
                *si = si.max((col - fcol).norm_squared());
            }
        }
    }
    Ok(Heterogeneity {
        tau_hat: tau.iter().sum(),
        sigma_bar_sq: sigma_sq.iter().sum::<f64>() / n.max(1) as f64,
        tau,
        sigma_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    /// Smoothness constant `L`.
    pub smoothness: f64,
    pub eta: f64,
    pub sigma_bar_sq: f64,
    pub tau_hat: f64,
    /// Mixing parameter `p`.
    pub p: f64,
    /// Connectivity window `B`.
    pub b: usize,
    pub n: usize,
    pub t: usize,
    /// `||x_bar^(0) - x*||^2`.
    pub init_dist_sq: f64,
}

/// `A_0 = (1 + 2/p)(2/p) tau_hat ((1-p)/p + C^2 N^2 lambda^(2B))`.
pub fn a0(p: f64, tau_hat: f64, n: usize, b: usize) -> Result<f64> {
    if !(p > 0.0) || p > 1.0 {
        return Err(Error::Premise(format!("mixing parameter p = {p} must lie in (0, 1]")));
    }
    Ok((1.0 + 2.0 / p) * (2.0 / p) * tau_hat * ((1.0 - p) / p + mixing_product_bound(n, b)?))
}

/// Right-hand side of the consensus-control inequality:
/// `||X^(t) - X_bar^(t)||_F^2 <= eta^2 A_0`.
pub fn consensus_bound(p: f64, eta: f64, tau_hat: f64, n: usize, b: usize) -> Result<f64> {
    Ok(eta * eta * a0(p, tau_hat, n, b)?)
}

/// Evaluates the optimisation-error bound; returns `(bound, A_0)`.
pub fn optimization_bound(params: &BoundParams) -> Result<(f64, f64)> {
    let BoundParams {
        smoothness: l,
        eta,
        sigma_bar_sq,
        tau_hat,
        p,
        b,
        n,
        t,
        init_dist_sq,
    } = *params;
    if !(l > 0.0) || !(eta > 0.0) {
        return Err(Error::Premise("L and eta must be positive".into()));
    }
    if eta > 1.0 / (2.0 * l) {
        return Err(Error::Premise(format!(
            "eta = {eta} exceeds 1/(2L) = {}",
            1.0 / (2.0 * l)
        )));
    }
    if [sigma_bar_sq, tau_hat, init_dist_sq].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid(
            "variance, heterogeneity and distance terms must be >= 0",
        ));
    }
    let a0 = a0(p, tau_hat, n, b)?;
    let n_f = n as f64;
    let inner = init_dist_sq / (t as f64 + 1.0)
        + eta * eta * sigma_bar_sq / n_f
        + l * eta.powi(3) / n_f * (2.0 * l * eta + 1.0) * a0;
    Ok((inner / (2.0 * eta * (1.0 - 2.0 * l * eta)), a0))
}

/// One named comparison `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl Check {
    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            lhs,
            rhs,
            pass: lhs <= rhs + tol,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisReport {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl AnalysisReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.checks {
            w.serialize(c)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let passed = self.checks.iter().filter(|c| c.pass).count();
        let _ = writeln!(s, "{passed}/{} checks passed", self.checks.len());
        for c in &self.checks {
            let _ = writeln!(
                s,
                "[{}] {}: lhs = {:.6e}, rhs = {:.6e}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.lhs,
                c.rhs
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

/// Proxy for the global minimiser: full-batch gradient descent with step
/// `1/L` on the pooled data until the gradient norm drops below `tol` or the
/// iteration budget runs out. Returns the parameters and final gradient norm.
pub fn centralized_optimum(
    model: &Classifier,
    theta0: &nalgebra::DVector<f64>,
    data: &Dataset,
    smoothness: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(nalgebra::DVector<f64>, f64)> {
    let mut theta = theta0.clone();
    let step = 1.0 / smoothness;
    let mut norm = f64::INFINITY;
    for _ in 0..max_iters {
        let (_, g) = model.loss_and_gradient(&theta, data)?;
        norm = g.norm();
        if norm < tol {
            break;
        }
        theta -= g * step;
    }
    Ok((theta, norm))
}

/// Post-hoc theory checks over a traced run.
///
/// `shards` are the client datasets (for the global objective), `eta` the
/// run's step size.
pub fn analyze_run(history: &RunHistory, model: &Classifier, shards: &[Dataset], eta: f64) -> Result<AnalysisReport> {
    let trace = history
        .trace
        .as_ref()
        .ok_or_else(|| Error::invalid("analysis needs a run recorded with its trace"))?;
    let n = history.initial_locations.len();
    let rounds = trace.mixing.len();
    let mut report = AnalysisReport::default();

    let worst_stochastic = trace.mixing.iter().map(|w| w.stochastic_error()).fold(0.0, f64::max);
    report
        .checks
        .push(Check::le("mixing_doubly_stochastic", worst_stochastic, 1e-12, 0.0));
    let asym = trace.mixing.iter().filter(|w| !w.is_symmetric()).count();
    report.checks.push(Check::le("mixing_symmetric", asym as f64, 0.0, 0.0));

    // per-round contraction with the round's own p; worst excess over the rhs
    let mut worst_excess = f64::NEG_INFINITY;
    for (t, w) in trace.mixing.iter().enumerate() {
        let x_half = &trace.models[t] - &trace.gradients[t] * eta;
        let (lhs, rhs) = crate::topology::contraction_check(&x_half, w)?;
        worst_excess = worst_excess.max(lhs - rhs);
    }
    report
        .checks
        .push(Check::le("mixing_contraction", worst_excess, 0.0, 1e-9));

    let min_p = history.min_mixing_param();
    let edges = EdgeSetSequence::from_history(history);
    let b = detect_b(&edges, rounds);
    report.notes.push(format!("measured min p = {min_p:.6e}"));
    report.notes.push(match b {
        Some(b) => format!("detected B = {b}"),
        None => "no B-connectivity window found over the horizon".into(),
    });

    // unrolled identity over every complete window of the detected (or unit) size
    let window = b.unwrap_or(1).min(rounds.max(1));
    let mut worst_rel: f64 = 0.0;
    for k in 0..rounds / window {
        let (s, e) = (k * window, (k + 1) * window);
        let unrolled = unroll_models(&trace.models[s], &trace.mixing[s..e], &trace.gradients[s..e], eta)?;
        let actual = &trace.models[e];
        let rel = (&unrolled - actual).norm() / actual.norm().max(f64::MIN_POSITIVE);
        worst_rel = worst_rel.max(rel);
    }
    report
        .checks
        .push(Check::le("unrolled_models_identity", worst_rel, 1e-10, 0.0));

    if let Some(b) = b {
        let bound = mixing_product_bound(n, b)?;
        let worst = (0..rounds / b)
            .map(|k| psi_deviation(&trace.mixing[k * b..(k + 1) * b]))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        report.checks.push(Check::le("mixing_product_bound", worst, bound, 0.0));
    }

    let het = estimate_heterogeneity(&trace.gradients, trace.full_gradients.as_deref())?;
    report.notes.push(format!(
        "tau_hat = {:.6e}, sigma_bar^2 = {:.6e}",
        het.tau_hat, het.sigma_bar_sq
    ));

    if min_p > 0.0 {
        let b_used = b.unwrap_or(1);
        let rhs = consensus_bound(min_p, eta, het.tau_hat, n, b_used)?;
        let worst = trace.models.iter().map(consensus_distance).fold(0.0, f64::max);
        report.checks.push(Check::le("consensus_control", worst, rhs, 0.0));
    } else {
        report
            .notes
            .push("some round has p = 0; consensus-control check skipped".into());
    }

    if model.kind == ModelKind::SoftmaxRegression && eta > 0.0 {
        let nonempty: Vec<&Dataset> = shards.iter().filter(|s| !s.is_empty()).collect();
        if !nonempty.is_empty() {
            let l = nonempty
                .iter()
                .map(|s| Classifier::softmax_smoothness_bound(s))
                .fold(0.0, f64::max);
            let objective = |theta: &nalgebra::DVector<f64>| -> Result<f64> {
                let mut total = 0.0;
                for s in &nonempty {
                    total += model.loss(theta, s)?;
                }
                Ok(total / nonempty.len() as f64)
            };
            // pooled data with equal client weights is approximated by the
            // concatenation; the minimiser proxy only needs to be close
            let mut features = Vec::new();
            let mut labels = Vec::new();
            for s in &nonempty {
                features.extend(s.features.row_iter().map(|r| r.into_owned()));
                labels.extend_from_slice(&s.labels);
            }
            let pooled = Dataset::new(DMatrix::from_rows(&features), labels, model.num_classes)?;
            let theta0 = trace.models[0].column(0).into_owned();
            let (x_star, grad_norm) = centralized_optimum(model, &theta0, &pooled, l, 1e-8, 5000)?;
            let f_star = objective(&x_star)?;
            report.notes.push(format!(
                "minimiser proxy reached gradient norm {grad_norm:.3e}; f* ~ {f_star:.6e}"
            ));
            let mut gap_sum = 0.0;
            for x in &trace.models {
                let xbar = x.column_mean();
                gap_sum += objective(&xbar)? - f_star;
            }
            let lhs = gap_sum / trace.models.len() as f64;
            let init = (trace.models[0].column_mean() - &x_star).norm_squared();
            let params = BoundParams {
                smoothness: l,
                eta,
                sigma_bar_sq: het.sigma_bar_sq,
                tau_hat: het.tau_hat,
                p: min_p,
                b: b.unwrap_or(1),
                n,
                t: rounds,
                init_dist_sq: init,
            };
            match optimization_bound(&params) {
                Ok((bound, _)) => {
                    report
                        .checks
                        .push(Check::le("optimization_error_bound", lhs, bound, 0.0));
                    report
                        .notes
                        .push("optimization_error_bound is observational: x* is a proxy and the bound is loose".into());
                }
                Err(e) => report.notes.push(format!("optimization bound not evaluated: {e}")),
            }
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_mixing_matrix, GridPos};

    #[test]
    fn detect_b_examples() {
        let connected = EdgeSetSequence::new(3, vec![vec![(0, 1), (1, 2)]; 4]).unwrap();
        assert_eq!(detect_b(&connected, 4), Some(1));
        let split = EdgeSetSequence::new(3, vec![vec![(0, 1)]; 6]).unwrap();
        assert_eq!(detect_b(&split, 6), None);
        let alt = EdgeSetSequence::new(
            3,
            (0..6).map(|t| vec![if t % 2 == 0 { (0, 1) } else { (1, 2) }]).collect(),
        )
        .unwrap();
        assert_eq!(detect_b(&alt, 6), Some(2));
        assert!(EdgeSetSequence::new(2, vec![vec![(0, 2)]]).is_err());
    }

    #[test]
    fn b_connectivity_is_closed_under_multiples() {
        let alt = EdgeSetSequence::new(4, (0..24).map(|t| vec![[(0, 1), (1, 2), (2, 3)][t % 3]]).collect()).unwrap();
        let b = detect_b(&alt, 24).unwrap();
        assert_eq!(b, 3);
        for m in 1..=(24 / b) {
            assert!(alt.is_b_connected(b * m));
        }
    }

    #[test]
    fn unroll_examples() {
        let x = DMatrix::from_fn(2, 3, |r, c| (r + 2 * c) as f64);
        let g = DMatrix::from_fn(2, 3, |r, c| (r * c) as f64 - 0.5);
        let w = build_mixing_matrix(&[GridPos::new(1, 1), GridPos::new(1, 2), GridPos::new(1, 3)], 1.0);
        let one = unroll_models(&x, std::slice::from_ref(&w), std::slice::from_ref(&g), 0.1).unwrap();
        assert!((one - (&x - &g * 0.1) * w.as_matrix()).amax() < 1e-15);

        let ids = vec![MixingMatrix::identity(3); 4];
        assert_eq!(unroll_models(&x, &ids, &vec![g.clone(); 4], 0.0).unwrap(), x);
        assert!(unroll_models(&x, &ids, &[g], 0.1).is_err());
    }

    #[test]
    fn psi_examples() {
        assert!(psi_deviation(&[MixingMatrix::averaging(3), MixingMatrix::averaging(3)]).unwrap() < 1e-30);
        assert!((psi_deviation(&[MixingMatrix::identity(2)]).unwrap() - 1.0).abs() < 1e-15);
        assert!(psi_deviation(&[]).is_err());
        assert!(psi_deviation(&[MixingMatrix::identity(2), MixingMatrix::identity(3)]).is_err());
    }

    #[test]
    fn product_bound_examples() {
        assert_eq!(mixing_product_bound(1, 3).unwrap(), 0.0);
        assert!((mixing_product_bound(2, 1).unwrap() - 36.0).abs() < 1e-12);
        // huge N*B: lambda^(2B) rounds to 1 without overflow
        assert!((mixing_product_bound(50, 40).unwrap() - 16.0 * 2500.0).abs() < 1e-9);
    }

    #[test]
    fn heterogeneity_examples() {
        let same = DMatrix::from_column_slice(2, 3, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let h = estimate_heterogeneity(&[same.clone(), same], None).unwrap();
        assert_eq!(h.tau_hat, 0.0);
        assert_eq!(h.sigma_bar_sq, 0.0);

        let g = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let h = estimate_heterogeneity(&[g.clone(), g], None).unwrap();
        assert_eq!(h.tau, vec![1.0, 1.0]);
        assert_eq!(h.tau_hat, 2.0);
        assert!(estimate_heterogeneity(&[], None).is_err());
    }

    #[test]
    fn optimization_bound_fixture() {
        let params = BoundParams {
            smoothness: 1.0,
            eta: 0.25,
            sigma_bar_sq: 0.0,
            tau_hat: 2.0,
            p: 1.0,
            b: 1,
            n: 2,
            t: 9,
            init_dist_sq: 1.0,
        };
        let (bound, a0) = optimization_bound(&params).unwrap();
        assert!((a0 - 432.0).abs() < 1e-9);
        assert!((bound - 20.65).abs() < 1e-9);
    }

    #[test]
    fn optimization_bound_premises() {
        let base = BoundParams {
            smoothness: 1.0,
            eta: 0.25,
            sigma_bar_sq: 0.0,
            tau_hat: 0.0,
            p: 0.5,
            b: 2,
            n: 4,
            t: 9,
            init_dist_sq: 3.0,
        };
        assert!(matches!(
            optimization_bound(&BoundParams { eta: 0.6, ..base }),
            Err(Error::Premise(_))
        ));
        assert!(matches!(
            optimization_bound(&BoundParams { p: 0.0, ..base }),
            Err(Error::Premise(_))
        ));
        // only the initial-distance term survives
        let (a, _) = optimization_bound(&base).unwrap();
        assert!((a - 3.0 / (2.0 * 0.25 * 0.5 * 10.0)).abs() < 1e-12);
        let (b, _) = optimization_bound(&BoundParams { t: 19, ..base }).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
    }
}
