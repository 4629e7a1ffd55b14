//! The decentralized round loop: local gradient step on every client,
//! Metropolis-Hastings consensus over the current radius graph, evaluation,
//! then mobility, which determines the next round's graph.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::data::{dirichlet_partition, label_histogram, ClassHistogram, Dataset, PartitionSpec};
use crate::mobility::{
    cluster_centers, mobility_step, ClusterSet, DistributionTable, MobileState, MobilityContext, MobilityMode,
};
use crate::model::{Classifier, ModelKind};
use crate::seed::{self, tag};
use crate::topology::{
    build_mixing_matrix, column_mean_matrix, edge_set, random_position, spectral_mixing_param, GridPos, MixingMatrix,
    TopologyConfig,
};
use crate::{Error, Result};

/// `d x N`, column `i` is client `i`'s parameters.
pub type StackedModels = DMatrix<f64>;
/// `d x N`, column `i` is client `i`'s stochastic gradient.
pub type GradientMatrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    /// Sampled without replacement from the client's shard every round.
    MiniBatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub rounds: usize,
    pub batch: BatchMode,
    pub model: ModelKind,
    /// Seed of the shared initial model.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::config("training.eta", "learning rate must be finite and >= 0"));
        }
        if self.rounds < 1 {
            return Err(Error::config("training.T", "at least one round is required"));
        }
        if self.batch == BatchMode::MiniBatch(0) {
            return Err(Error::config("training.batch", "batch size must be positive"));
        }
        if let ModelKind::Mlp { hidden: 0 } = self.model {
            return Err(Error::config("training.hidden", "hidden width must be positive"));
        }
        Ok(())
    }
}

pub fn compute_gradient(model: &Classifier, theta: &DVector<f64>, batch: &Dataset) -> Result<DVector<f64>> {
    Ok(model.loss_and_gradient(theta, batch)?.1)
}

/// `theta - eta * grad(theta)`.
pub fn local_update(model: &Classifier, theta: &DVector<f64>, batch: &Dataset, eta: f64) -> Result<DVector<f64>> {
    let g = compute_gradient(model, theta, batch)?;
    Ok(theta - g * eta)
}

/// `X_half * W`: column `i` becomes `sum_j w_ji x_j` (`W` is symmetric).
pub fn consensus_update(x_half: &StackedModels, w: &MixingMatrix) -> Result<StackedModels> {
    if x_half.ncols() != w.size() {
        return Err(Error::invalid(format!(
            "{} stacked models but mixing matrix of size {}",
            x_half.ncols(),
            w.size()
        )));
    }
    Ok(x_half * w.as_matrix())
}

/// `||X - X_bar||_F^2`.
pub fn consensus_distance(x: &StackedModels) -> f64 {
    (x - column_mean_matrix(x)).norm_squared()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_client: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Test accuracy of every client model.
pub fn evaluate(model: &Classifier, x: &StackedModels, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::invalid("evaluation needs a nonempty test set"));
    }
    let per_client = x
        .column_iter()
        .map(|col| model.accuracy(&col.into_owned(), test))
        .collect::<Result<Vec<_>>>()?;
    let n = per_client.len().max(1) as f64;
    Ok(Evaluation {
        mean: per_client.iter().sum::<f64>() / n,
        min: per_client.iter().copied().fold(f64::INFINITY, f64::min),
        max: per_client.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        per_client,
    })
}

/// Everything that defines one simulated run besides the data and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup {
    pub topology: TopologyConfig,
    pub mode: MobilityMode,
    pub train: TrainConfig,
    pub partition: PartitionSpec,
    /// Mobility constraint `R_m`.
    pub max_step: f64,
    /// `|C_m|`.
    pub num_mobile: usize,
}

impl ExperimentSetup {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.train.validate()?;
        self.partition.validate()?;
        if self.partition.clients != self.topology.clients {
            return Err(Error::config("data", "partition client count differs from topology.N"));
        }
        if self.num_mobile > self.topology.clients {
            return Err(Error::config(
                "mobility.C_m",
                format!(
                    "{} mobile clients exceed the {} clients in the network",
                    self.num_mobile, self.topology.clients
                ),
            ));
        }
        if self.mode != MobilityMode::Static && !(self.max_step > 0.0) {
            return Err(Error::config("mobility.R_m", "mobility constraint must be positive"));
        }
        if self.mode == MobilityMode::Dcm && self.num_mobile == self.topology.clients {
            return Err(Error::config(
                "mobility.C_m",
                "DCM needs at least one static client to build cluster centers",
            ));
        }
        Ok(())
    }
}

/// Per-round record. Accuracies are measured on the post-consensus models.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_acc: f64,
    pub min_acc: f64,
    pub max_acc: f64,
    /// Mean local training loss at the pre-update models.
    pub mean_loss: f64,
    pub consensus_dist: f64,
    pub num_edges: usize,
    pub mixing_param: f64,
    pub edges: Vec<(usize, usize)>,
}

/// Full matrices of a run, kept only when requested.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    /// Client locations used to build `W^(t)`.
    pub locations: Vec<Vec<GridPos>>,
    pub mixing: Vec<MixingMatrix>,
    /// `X^(0) ..= X^(T)`.
    pub models: Vec<StackedModels>,
    pub gradients: Vec<GradientMatrix>,
    /// Full-shard gradients at the same parameters; present for mini-batch runs.
    pub full_gradients: Option<Vec<GradientMatrix>>,
}

#[derive(Debug, Clone)]
pub struct RunHistory {
    pub rounds: Vec<RoundMetrics>,
    pub initial_locations: Vec<GridPos>,
    pub mobile_clients: Vec<usize>,
    pub clusters: Option<ClusterSet>,
    pub shards: Vec<Vec<usize>>,
    pub trace: Option<RunTrace>,
}

impl RunHistory {
    /// `(round, accuracy)` of the best mean accuracy; earliest round on ties.
    pub fn max_mean_accuracy(&self) -> (usize, f64) {
        self.rounds.iter().fold((0, f64::NEG_INFINITY), |best, r| {
            if r.mean_acc > best.1 {
                (r.round, r.mean_acc)
            } else {
                best
            }
        })
    }

    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.mean_acc)
    }

    pub fn min_mixing_param(&self) -> f64 {
        self.rounds.iter().map(|r| r.mixing_param).fold(f64::INFINITY, f64::min)
    }

    pub fn edge_sets(&self) -> Vec<Vec<(usize, usize)>> {
        self.rounds.iter().map(|r| r.edges.clone()).collect()
    }
}

/// Column order of the per-round CSV.
pub const ROUND_CSV_HEADER: [&str; 8] = [
    "trial",
    "round",
    "mean_acc",
    "min_acc",
    "max_acc",
    "mean_loss",
    "consensus_dist",
    "num_edges",
];

#[derive(Serialize)]
struct RoundRow {
    trial: usize,
    round: usize,
    mean_acc: f64,
    min_acc: f64,
    max_acc: f64,
    mean_loss: f64,
    consensus_dist: f64,
    num_edges: usize,
}

/// Appends `rounds` as CSV rows; the header is written when `header` is set.
pub fn write_rounds_csv<W: Write>(out: W, runs: &[(usize, &[RoundMetrics])], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        w.write_record(ROUND_CSV_HEADER)?;
    }
    for &(trial, rounds) in runs {
        for r in rounds {
            w.serialize(RoundRow {
                trial,
                round: r.round,
                mean_acc: r.mean_acc,
                min_acc: r.min_acc,
                max_acc: r.max_acc,
                mean_loss: r.mean_loss,
                consensus_dist: r.consensus_dist,
                num_edges: r.num_edges,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

struct MobileClient {
    state: MobileState,
    rng: seed::Rng,
    table: Option<DistributionTable>,
}

fn client_batch(shard: &Dataset, mode: BatchMode, seed_base: u64, client: usize, round: usize) -> Option<Dataset> {
    match mode {
        BatchMode::Full => None,
        BatchMode::MiniBatch(b) if b >= shard.len() => None,
        BatchMode::MiniBatch(b) => {
            let mut rng = seed::stream(seed_base, &[tag::BATCH, client as u64, round as u64]);
            let mut idx = rand::seq::index::sample(&mut rng, shard.len(), b).into_vec();
            idx.sort_unstable();
            Some(shard.subset(&idx))
        }
    }
}

/// Runs one trial. The environment (placement, mobile set, mini-batches,
/// mobility streams) is drawn from `seed`; the data split from
/// `setup.partition.seed`; the shared initial model from `setup.train.seed`.
pub fn run_experiment(
    setup: &ExperimentSetup,
    train: &Dataset,
    test: &Dataset,
    seed_base: u64,
    record_trace: bool,
) -> Result<RunHistory> {
    setup.validate()?;
    if train.dim() != test.dim() {
        return Err(Error::invalid("train and test feature dimensions differ"));
    }
    let n = setup.topology.clients;
    let grid = setup.topology.grid;
    let radius = setup.topology.comm_radius;
    let classes = train.num_classes.max(test.num_classes);
    let model = Classifier::new(setup.train.model, train.dim(), classes);

    let mut place_rng = seed::stream(seed_base, &[tag::PLACEMENT]);
    let initial: Vec<GridPos> = (0..n).map(|_| random_position(grid, &mut place_rng)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed_base, &[tag::MOBILE_SET]));
    let moving = if setup.mode == MobilityMode::Static {
        0
    } else {
        setup.num_mobile
    };
    let mut mobile_clients: Vec<usize> = order[..moving].to_vec();
    mobile_clients.sort_unstable();
    let static_clients: Vec<usize> = (0..n).filter(|i| !mobile_clients.contains(i)).collect();

    let shards_idx = if train.is_empty() {
        vec![Vec::new(); n]
    } else {
        dirichlet_partition(&train.labels, &setup.partition)?
    };
    let shards: Vec<Dataset> = shards_idx.iter().map(|s| train.subset(s)).collect();
    let histograms: Vec<ClassHistogram> = shards
        .iter()
        .map(|s| label_histogram(&s.labels, classes))
        .collect::<Result<_>>()?;

    let static_locs: Vec<GridPos> = static_clients.iter().map(|&i| initial[i]).collect();
    let static_hists: Vec<ClassHistogram> = static_clients.iter().map(|&i| histograms[i].clone()).collect();
    let clusters = (setup.mode == MobilityMode::Dcm).then(|| cluster_centers(&static_locs, radius, grid));
    let mut movers = mobile_clients
        .iter()
        .map(|&i| {
            let table = if setup.mode.is_distribution_aware() {
                Some(DistributionTable::build(
                    grid,
                    &static_locs,
                    &static_hists,
                    &histograms[i],
                    radius,
                )?)
            } else {
                None
            };
            Ok(MobileClient {
                state: MobileState::new(i, initial[i], setup.max_step),
                rng: seed::stream(seed_base, &[tag::MOBILITY, i as u64]),
                table,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let theta0 = model.init(&mut seed::stream(setup.train.seed, &[tag::INIT]));
    let mut x = StackedModels::from_fn(theta0.len(), n, |r, _| theta0[r]);
    let mut locations = initial.clone();
    let eta = setup.train.eta;
    let minibatch = matches!(setup.train.batch, BatchMode::MiniBatch(_));
    let mut trace = record_trace.then(|| RunTrace {
        full_gradients: minibatch.then(Vec::new),
        ..RunTrace::default()
    });
    let mut rounds = Vec::with_capacity(setup.train.rounds);

    for t in 0..setup.train.rounds {
        let w = build_mixing_matrix(&locations, radius);
        let edges = edge_set(&locations, radius);
        let p = spectral_mixing_param(&w)?;

        let mut grads = GradientMatrix::zeros(x.nrows(), n);
        let mut full_grads = trace
            .as_ref()
            .filter(|_| minibatch)
            .map(|_| GradientMatrix::zeros(x.nrows(), n));
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (i, shard) in shards.iter().enumerate() {
            if shard.is_empty() {
                continue;
            }
            let theta = x.column(i).into_owned();
            let sampled = client_batch(shard, setup.train.batch, seed_base, i, t);
            let (loss, g) = model.loss_and_gradient(&theta, sampled.as_ref().unwrap_or(shard))?;
            loss_sum += loss;
            loss_count += 1;
            grads.set_column(i, &g);
            if let Some(fg) = full_grads.as_mut() {
                let full = if sampled.is_some() {
                    compute_gradient(&model, &theta, shard)?
                } else {
                    g
                };
                fg.set_column(i, &full);
            }
        }
        let x_half = &x - &grads * eta;
        let x_next = consensus_update(&x_half, &w)?;

        let eval = evaluate(&model, &x_next, test)?;
        rounds.push(RoundMetrics {
            round: t,
            mean_acc: eval.mean,
            min_acc: eval.min,
            max_acc: eval.max,
            mean_loss: if loss_count > 0 {
                loss_sum / loss_count as f64
            } else {
                0.0
            },
            consensus_dist: consensus_distance(&x_next),
            num_edges: edges.len(),
            mixing_param: p,
            edges,
        });
        if let Some(tr) = trace.as_mut() {
            tr.locations.push(locations.clone());
            tr.mixing.push(w);
            tr.models.push(std::mem::replace(&mut x, x_next));
            tr.gradients.push(grads);
            if let (Some(all), Some(fg)) = (tr.full_gradients.as_mut(), full_grads) {
                all.push(fg);
            }
        } else {
            x = x_next;
        }

        for mover in &mut movers {
            let ctx = MobilityContext {
                grid,
                round: t,
                clusters: clusters.as_ref(),
                distributions: mover.table.as_ref(),
            };
            mover.state = mobility_step(&mover.state, setup.mode, &ctx, &mut mover.rng)?;
            locations[mover.state.client] = mover.state.current;
        }
    }
    if let Some(tr) = trace.as_mut() {
        tr.models.push(x);
    }

    Ok(RunHistory {
        rounds,
        initial_locations: initial,
        mobile_clients,
        clusters,
        shards: shards_idx,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_dataset;

    fn setup(mode: MobilityMode, radius: f64, rounds: usize, eta: f64) -> ExperimentSetup {
        ExperimentSetup {
            topology: TopologyConfig {
                grid: 8,
                clients: 6,
                comm_radius: radius,
            },
            mode,
            train: TrainConfig {
                eta,
                rounds,
                batch: BatchMode::Full,
                model: ModelKind::SoftmaxRegression,
                seed: 1,
            },
            partition: PartitionSpec {
                alpha: 0.5,
                clients: 6,
                seed: 2,
            },
            max_step: 2.0,
            num_mobile: 2,
        }
    }

    fn data() -> (Dataset, Dataset) {
        (
            synthetic_dataset(3, 4, 240, 4.0, 1),
            synthetic_dataset(3, 4, 90, 4.0, 2),
        )
    }

    #[test]
    fn consensus_examples() {
        let x = DMatrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(consensus_update(&x, &MixingMatrix::identity(4)).unwrap(), x);
        let avg = consensus_update(&x, &MixingMatrix::averaging(4)).unwrap();
        assert!((avg - column_mean_matrix(&x)).amax() < 1e-12);
        assert!(consensus_update(&x, &MixingMatrix::identity(3)).is_err());
    }

    #[test]
    fn consensus_preserves_mean() {
        let locs = [
            GridPos::new(1, 1),
            GridPos::new(1, 2),
            GridPos::new(2, 2),
            GridPos::new(5, 5),
        ];
        let w = build_mixing_matrix(&locs, 1.5);
        let x = DMatrix::from_fn(5, 4, |r, c| ((r + 1) * (c + 3)) as f64 % 7.0 - 2.0);
        let after = consensus_update(&x, &w).unwrap();
        assert!((after.column_mean() - x.column_mean()).amax() < 1e-12);
        assert!(consensus_distance(&after) <= consensus_distance(&x) + 1e-12);
    }

    #[test]
    fn consensus_distance_example() {
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((consensus_distance(&x) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn local_update_examples() {
        let (train, _) = data();
        let model = Classifier::new(ModelKind::SoftmaxRegression, 4, 3);
        let theta = DVector::from_fn(model.num_params(), |i, _| i as f64 * 0.01);
        assert_eq!(local_update(&model, &theta, &train, 0.0).unwrap(), theta);
        let g = compute_gradient(&model, &theta, &train).unwrap();
        let stepped = local_update(&model, &theta, &train, 0.1).unwrap();
        assert!((stepped - (&theta - g * 0.1)).amax() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_models() {
        let (train, test) = data();
        for mode in MobilityMode::ALL {
            let h = run_experiment(&setup(mode, 2.0, 3, 0.0), &train, &test, 5, true).unwrap();
            let tr = h.trace.unwrap();
            for x in &tr.models {
                assert_eq!(x, &tr.models[0]);
            }
            assert!(h.rounds.iter().all(|r| r.consensus_dist == 0.0));
        }
    }

    #[test]
    fn static_mode_has_constant_edges() {
        let (train, test) = data();
        let h = run_experiment(&setup(MobilityMode::Static, 3.0, 6, 0.1), &train, &test, 9, true).unwrap();
        assert!(h.rounds.iter().all(|r| r.edges == h.rounds[0].edges));
        let tr = h.trace.unwrap();
        assert!(tr.mixing.iter().all(|w| w == &tr.mixing[0]));
    }

    #[test]
    fn fully_connected_averages_each_round() {
        let (train, test) = data();
        let mut s = setup(MobilityMode::Random, f64::INFINITY, 5, 0.2);
        s.topology.clients = 4;
        s.partition.clients = 4;
        let h = run_experiment(&s, &train, &test, 3, true).unwrap();
        for x in &h.trace.as_ref().unwrap().models {
            assert!((x - column_mean_matrix(x)).amax() < 1e-10);
        }
        let w = &h.trace.unwrap().mixing[0];
        assert!((w.as_matrix() - MixingMatrix::averaging(4).as_matrix()).amax() < 1e-15);
    }

    #[test]
    fn runs_are_deterministic() {
        let (train, test) = data();
        for mode in MobilityMode::ALL {
            let s = setup(mode, 2.0, 8, 0.1);
            let a = run_experiment(&s, &train, &test, 17, false).unwrap();
            let b = run_experiment(&s, &train, &test, 17, false).unwrap();
            assert_eq!(a.rounds, b.rounds);
        }
    }

    #[test]
    fn mean_is_preserved_by_every_consensus_step() {
        let (train, test) = data();
        let mut s = setup(MobilityMode::Dam, 2.5, 10, 0.3);
        s.train.batch = BatchMode::MiniBatch(8);
        let h = run_experiment(&s, &train, &test, 4, true).unwrap();
        let tr = h.trace.unwrap();
        assert!(tr.full_gradients.as_ref().is_some_and(|f| f.len() == 10));
        for t in 0..10 {
            let half = &tr.models[t] - &tr.gradients[t] * 0.3;
            assert!((tr.models[t + 1].column_mean() - half.column_mean()).amax() < 1e-10);
        }
    }

    #[test]
    fn dcm_without_static_clients_fails() {
        let (train, test) = data();
        let mut s = setup(MobilityMode::Dcm, 2.0, 2, 0.1);
        s.num_mobile = 6;
        assert!(matches!(
            run_experiment(&s, &train, &test, 0, false),
            Err(Error::Config { .. })
        ));
        s.num_mobile = 7;
        s.mode = MobilityMode::Random;
        assert!(matches!(
            run_experiment(&s, &train, &test, 0, false),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn rounds_csv_header() {
        let mut buf = Vec::new();
        write_rounds_csv(&mut buf, &[], true).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            "trial,round,mean_acc,min_acc,max_acc,mean_loss,consensus_dist,num_edges"
        );
    }
}
