//! Quick oracle suite behind the `check` subcommand.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::analysis::{
    mixing_product_bound, optimization_bound, psi_deviation, unroll_models, AnalysisReport, BoundParams, Check,
    EdgeSetSequence,
};
use crate::data::synthetic_dataset;
use crate::model::{Classifier, ModelKind};
use crate::seed;
use crate::topology::{build_mixing_matrix, component_count, edge_set, random_position, GridPos};
use crate::Result;

fn placements(rng: &mut seed::Rng, n: usize, grid: u32) -> Vec<GridPos> {
    (0..n).map(|_| random_position(grid, rng)).collect()
}

fn mixing_checks(report: &mut AnalysisReport, rng: &mut seed::Rng) {
    let chain = [GridPos::new(1, 1), GridPos::new(1, 2), GridPos::new(1, 3)];
    let w = build_mixing_matrix(&chain, 1.0);
    let hand = DMatrix::from_row_slice(
        3,
        3,
        &[
            2.0 / 3.0,
            1.0 / 3.0,
            0.0,
            1.0 / 3.0,
            1.0 / 3.0,
            1.0 / 3.0,
            0.0,
            1.0 / 3.0,
            2.0 / 3.0,
        ],
    );
    report.checks.push(Check::le(
        "three_chain_weights",
        (w.as_matrix() - hand).amax(),
        1e-15,
        0.0,
    ));

    let radii = [1.0, 2.0, 3.0, 4.0, 5.0, f64::INFINITY];
    let (mut worst, mut asym) = (0.0f64, 0usize);
    for k in 0..200 {
        let n = rng.random_range(1..=20);
        let grid = rng.random_range(1..=18);
        let w = build_mixing_matrix(&placements(rng, n, grid), radii[k % radii.len()]);
        worst = worst.max(w.stochastic_error());
        asym += usize::from(!w.is_symmetric());
    }
    report
        .checks
        .push(Check::le("mixing_doubly_stochastic", worst, 1e-12, 0.0));
    report.checks.push(Check::le("mixing_symmetric", asym as f64, 0.0, 0.0));
}

fn unroll_checks(report: &mut AnalysisReport, rng: &mut seed::Rng) -> Result<()> {
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let (d, n, b) = (
            rng.random_range(1..=5),
            rng.random_range(1..=8),
            rng.random_range(1..=6),
        );
        let eta = if rng.random::<bool>() { 0.1 } else { 0.0 };
        let grid = 6;
        let x0 = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
        let ws: Vec<_> = (0..b)
            .map(|_| build_mixing_matrix(&placements(rng, n, grid), 2.0))
            .collect();
        let gs: Vec<_> = (0..b)
            .map(|_| DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let mut x = x0.clone();
        for (w, g) in ws.iter().zip(&gs) {
            x = (&x - g * eta) * w.as_matrix();
        }
        let u = unroll_models(&x0, &ws, &gs, eta)?;
        worst = worst.max((&u - &x).norm() / x.norm().max(f64::MIN_POSITIVE));
    }
    report
        .checks
        .push(Check::le("unrolled_models_identity", worst, 1e-10, 0.0));
    Ok(())
}

fn product_bound_checks(report: &mut AnalysisReport, rng: &mut seed::Rng) -> Result<()> {
    let mut worst_gap = f64::NEG_INFINITY;
    let mut tried = 0;
    while tried < 50 {
        let (n, b) = (rng.random_range(2..=5), rng.random_range(1..=3));
        let locs: Vec<Vec<GridPos>> = (0..b).map(|_| placements(rng, n, 4)).collect();
        let seq = EdgeSetSequence {
            nodes: n,
            rounds: locs.iter().map(|l| edge_set(l, 1.5)).collect(),
        };
        let union: Vec<(usize, usize)> = seq.rounds.iter().flatten().copied().collect();
        if component_count(n, &union) != 1 {
            continue;
        }
        tried += 1;
        let ws: Vec<_> = locs.iter().map(|l| build_mixing_matrix(l, 1.5)).collect();
        worst_gap = worst_gap.max(psi_deviation(&ws)? - mixing_product_bound(n, b)?);
    }
    report
        .checks
        .push(Check::le("mixing_product_bound", worst_gap, 0.0, 0.0));
    Ok(())
}

fn bound_fixture(report: &mut AnalysisReport) -> Result<()> {
    let (bound, a0) = optimization_bound(&BoundParams {
        smoothness: 1.0,
        eta: 0.25,
        sigma_bar_sq: 0.0,
        tau_hat: 2.0,
        p: 1.0,
        b: 1,
        n: 2,
        t: 9,
        init_dist_sq: 1.0,
    })?;
    report
        .checks
        .push(Check::le("bound_fixture_a0", (a0 - 432.0).abs(), 1e-9, 0.0));
    report
        .checks
        .push(Check::le("bound_fixture_value", (bound - 20.65).abs(), 1e-9, 0.0));
    Ok(())
}

fn gradient_checks(report: &mut AnalysisReport, rng: &mut seed::Rng) -> Result<()> {
    let ds = synthetic_dataset(3, 4, 10, 1.0, 11);
    for (name, kind) in [
        ("softmax_gradient", ModelKind::SoftmaxRegression),
        ("mlp_gradient", ModelKind::Mlp { hidden: 5 }),
    ] {
        let model = Classifier::new(kind, 4, 3);
        let theta = DVector::from_fn(model.num_params(), |_, _| rng.random_range(-1.0..1.0));
        let (_, g) = model.loss_and_gradient(&theta, &ds)?;
        let mut worst = 0.0f64;
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let fd = (model.loss(&plus, &ds)? - model.loss(&minus, &ds)?) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3));
        }
        report.checks.push(Check::le(name, worst, 1e-6, 0.0));
    }
    Ok(())
}

/// Runs the oracle checks from `seed`.
pub fn self_check(seed_base: u64) -> Result<AnalysisReport> {
    let mut rng = seed::stream(seed_base, &[]);
    let mut report = AnalysisReport::default();
    mixing_checks(&mut report, &mut rng);
    unroll_checks(&mut report, &mut rng)?;
    product_bound_checks(&mut report, &mut rng)?;
    bound_fixture(&mut report)?;
    gradient_checks(&mut report, &mut rng)?;
    Ok(report)
}
