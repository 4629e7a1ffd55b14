//! Configured experiment runs: config parsing, Monte Carlo suites, artifact
//! writing and the command-line entry points.

pub mod config;
pub mod selfcheck;
pub mod suite;
pub mod svg;

use std::path::Path;

pub use config::{load_config, parse_config, DataSource, ExperimentConfig, SweepParam, SweepPoint};
pub use selfcheck::self_check;
pub use suite::{compare_modes, run_suite, run_suite_with_data, ComparisonRow, SuiteReport, TrialSummary};

use crate::analysis::{analyze_run, AnalysisReport};
use crate::model::Classifier;
use crate::training::run_experiment;
use crate::{Error, Result};

/// Records trial `trial` of the first sweep point with its full trace and
/// runs the post-hoc theory checks; writes `analysis.csv` and
/// `analysis.txt` into `out_dir`.
pub fn analyze(cfg: &ExperimentConfig, trial: usize, out_dir: &Path) -> Result<AnalysisReport> {
    cfg.validate()?;
    let point = cfg
        .expand_sweep()
        .into_iter()
        .next()
        .expect("expansion yields at least one point");
    let pc = point.config;
    let (train, test) = pc.load_data()?;
    let setup = pc.setup(trial);
    let history = run_experiment(&setup, &train, &test, pc.trial_seed(trial), true)?;
    let model = Classifier::new(setup.train.model, train.dim(), train.num_classes.max(test.num_classes));
    let shards: Vec<_> = history.shards.iter().map(|s| train.subset(s)).collect();
    let mut report = analyze_run(&history, &model, &shards, setup.train.eta)?;
    report
        .notes
        .insert(0, format!("setting {}, trial {trial}", point.label));

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("analysis.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    report.write_csv(file)?;
    let txt = out_dir.join("analysis.txt");
    std::fs::write(&txt, report.summary()).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}
