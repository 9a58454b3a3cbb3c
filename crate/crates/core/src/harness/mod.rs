//! Experiment orchestration: the single-seed comparison table, the anchor
//! budget sweep and the multi-seed reliability run.
//!
//! Every random draw comes from a stream labeled by its purpose under the run
//! seed, and each (method, anchor budget) cell uses its own streams, so a cell
//! never changes when another cell is added, removed or fails.

mod config;

use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ExperimentConfig, Method, MultiseedConfig, SweepConfig};

use crate::baselines::{constant_corrector, fit_transport};
use crate::bayes::{ols_fit, sample_posterior, LinearCorrector};
use crate::data::{load_dataset, split, ColumnMap, Dataset, Split};
use crate::error::{Error, Result};
use crate::flow;
use crate::metrics::{full_report, mean, sample_sd, MetricsReport};
use crate::rng::RngStream;
use crate::synth::synthesize_judges;
use crate::Corrector;

/// Metrics of one method at one anchor budget on the shared test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub method: Method,
    /// Anchor budget; 0 for the uncorrected judge.
    pub anchors: usize,
    pub mean_error: f64,
    pub mae: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman: Option<f64>,
    pub kl_sym: f64,
}

impl Row {
    fn new(method: Method, anchors: usize, m: &MetricsReport) -> Self {
        Self {
            method,
            anchors,
            mean_error: m.mean_error,
            mae: m.mae,
            pearson: m.pearson,
            spearman: m.spearman,
            kl_sym: m.kl_sym,
        }
    }
}

/// A cell that could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub method: Method,
    pub anchors: usize,
    pub error: String,
}

/// Result of a single-seed run over methods and anchor budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_digest: String,
    pub seed: u64,
    pub rows: Vec<Row>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CellFailure>,
}

impl RunReport {
    pub fn row(&self, method: Method, anchors: usize) -> Option<&Row> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.anchors == anchors)
    }
}

/// Mean and sample standard deviation of one metric over successful seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    pub n_ok: usize,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| Self {
            mean: mean(values),
            sd: (values.len() >= 2).then(|| sample_sd(values)),
            n_ok: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub anchors: usize,
    pub mean_error: Summary,
    pub mae: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman: Option<Summary>,
    pub kl_sym: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRows {
    pub seed: u64,
    pub rows: Vec<Row>,
}

/// Aggregate of many seeds, with every per-seed row kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiseedReport {
    pub config_digest: String,
    pub base_seed: u64,
    pub n_seeds: usize,
    pub fast_bayes: bool,
    pub cells: Vec<CellSummary>,
    pub seeds: Vec<SeedRows>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CellFailure>,
}

impl MultiseedReport {
    pub fn cell(&self, method: Method, anchors: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.anchors == anchors)
    }
}

/// Root of every stream in a run; cells use `hmc` and `flow` children
/// indexed by anchor budget.
pub fn root_stream(seed: u64) -> RngStream {
    RngStream::new(seed, "judgecal")
}

/// The dataset for one seed: ingested or synthetic references, with judge
/// scores synthesized when the source has none.
///
/// Per seed the verbose pattern and the bias noise are re-drawn; synthetic
/// references are re-drawn too unless `data.reference_seed` pins them.
pub fn build_dataset(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let root = root_stream(seed);
    let references: Vec<(String, f64, Option<u32>)> = match &config.data.path {
        Some(path) => {
            let d = load_dataset(path, &ColumnMap::default())?;
            if !d.is_empty() && d.pairs.iter().all(|p| p.judge.is_some()) {
                return Ok(d);
            }
            d.pairs
                .iter()
                .map(|p| (p.item_id.clone(), p.reference, p.rubric_id))
                .collect()
        }
        None => {
            if config.data.n_items == 0 {
                return Err(Error::Config("data.n_items must be positive".into()));
            }
            let ref_seed = config.data.reference_seed.unwrap_or(seed);
            let mut rng = root_stream(ref_seed).child("reference").rng();
            (0..config.data.n_items)
                .map(|i| (i.to_string(), config.data.reference.sample(&mut rng), None))
                .collect()
        }
    };
    synthesize_judges(
        &references,
        &config.synth,
        &root.child("verbose"),
        &root.child("bias-noise"),
    )
}

/// Dataset and split for one seed.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Split)> {
    let dataset = build_dataset(config, seed)?;
    let s = split(&dataset, &config.split, &root_stream(seed).child("split"))?;
    Ok((dataset, s))
}

/// Fits `method` on `anchors` and corrects the test judges.
///
/// `fast_bayes` swaps MCMC for the least-squares line.
pub fn correct_test(
    config: &ExperimentConfig,
    seed: u64,
    method: Method,
    anchors: &Dataset,
    test_judges: &[f64],
    fast_bayes: bool,
) -> Result<Vec<f64>> {
    let root = root_stream(seed);
    let k = anchors.len() as u64;
    Ok(match method {
        Method::Raw => test_judges.to_vec(),
        Method::Constant => constant_corrector(anchors)?.correct_all(test_judges),
        Method::Transport => fit_transport(anchors)?.correct_all(test_judges),
        Method::Bayes if fast_bayes => {
            LinearCorrector::from_ols(&ols_fit(anchors)?).correct_all(test_judges)
        }
        Method::Bayes => {
            let stream = root.child("hmc").substream(k);
            let (trace, _) = sample_posterior(anchors, &config.priors, &config.sampler, &stream)?;
            LinearCorrector::from_trace(&trace).correct_all(test_judges)
        }
        Method::Flow => {
            let stream = root.child("flow").substream(k);
            let model = flow::train(anchors, &config.flow, &stream, false)?;
            let rubrics = vec![None; test_judges.len()];
            model.predict(test_judges, &rubrics)?
        }
    })
}

/// Runs every (method, budget) cell for one seed. The uncorrected judge gets
/// a single row with budget 0.
fn run_cells(
    config: &ExperimentConfig,
    seed: u64,
    methods: &[Method],
    budgets: &[usize],
    from_pool: bool,
    fast_bayes: bool,
) -> Result<(Vec<Row>, Vec<CellFailure>)> {
    let (_, s) = prepare(config, seed)?;
    let test_judges = s.test.judges()?;
    let test_refs = s.test.references();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &method in methods {
        let cells: Vec<usize> = if method == Method::Raw {
            vec![0]
        } else {
            budgets.to_vec()
        };
        for k in cells {
            let anchors = if from_pool || method == Method::Raw {
                s.train_pool.prefix(k)
            } else {
                let i = config
                    .split
                    .nested_anchor_sizes
                    .iter()
                    .position(|&n| n == k);
                match i {
                    Some(i) => s.anchors[i].clone(),
                    None => s.train_pool.prefix(k),
                }
            };
            let result = correct_test(config, seed, method, &anchors, &test_judges, fast_bayes)
                .and_then(|corrected| full_report(&corrected, &test_refs));
            match result {
                Ok(m) => rows.push(Row::new(method, k, &m)),
                Err(e) => failures.push(CellFailure {
                    seed: None,
                    method,
                    anchors: k,
                    error: e.to_string(),
                }),
            }
        }
    }
    Ok((rows, failures))
}

/// The single-seed comparison: every configured method at every configured
/// anchor budget, all scored on the same held-out test set.
pub fn run_table1(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let (rows, failures) = run_cells(
        config,
        config.seed,
        &config.methods,
        &config.anchor_sizes,
        false,
        false,
    )?;
    Ok(RunReport {
        config_digest: config.digest(),
        seed: config.seed,
        rows,
        failures,
    })
}

/// Fits the sweep methods on pool prefixes of each grid size.
pub fn run_sweep(config: &ExperimentConfig, grid: &[usize]) -> Result<RunReport> {
    config.validate()?;
    if let Some(k) = grid
        .iter()
        .find(|&&k| k > config.split.n_train_pool || k == 0)
    {
        return Err(Error::Config(format!(
            "sweep size {k} must lie in 1..={}",
            config.split.n_train_pool
        )));
    }
    let (rows, failures) = run_cells(
        config,
        config.seed,
        &config.sweep.methods,
        grid,
        true,
        false,
    )?;
    Ok(RunReport {
        config_digest: config.digest(),
        seed: config.seed,
        rows,
        failures,
    })
}

/// Re-runs the pipeline over seeds `config.seed .. config.seed + n_seeds`
/// and summarizes each cell. Flow cells run only with `include_flow`.
pub fn run_multiseed(
    config: &ExperimentConfig,
    n_seeds: usize,
    fast_bayes: bool,
    include_flow: bool,
) -> Result<MultiseedReport> {
    config.validate()?;
    if n_seeds < 2 {
        return Err(Error::Config("multiseed needs at least 2 seeds".into()));
    }
    let methods: Vec<Method> = config
        .methods
        .iter()
        .copied()
        .filter(|&m| include_flow || m != Method::Flow)
        .collect();
    let mut seeds = Vec::with_capacity(n_seeds);
    let mut failures = Vec::new();
    for i in 0..n_seeds {
        let seed = config.seed.wrapping_add(i as u64);
        match run_cells(
            config,
            seed,
            &methods,
            &config.anchor_sizes,
            false,
            fast_bayes,
        ) {
            Ok((rows, cell_failures)) => {
                failures.extend(cell_failures.into_iter().map(|f| CellFailure {
                    seed: Some(seed),
                    ..f
                }));
                seeds.push(SeedRows { seed, rows });
            }
            Err(e) => {
                for &method in &methods {
                    failures.push(CellFailure {
                        seed: Some(seed),
                        method,
                        anchors: 0,
                        error: e.to_string(),
                    });
                }
                seeds.push(SeedRows {
                    seed,
                    rows: Vec::new(),
                });
            }
        }
    }
    let mut cells = Vec::new();
    for &method in &methods {
        let budgets: Vec<usize> = if method == Method::Raw {
            vec![0]
        } else {
            config.anchor_sizes.clone()
        };
        for k in budgets {
            let rows: Vec<&Row> = seeds
                .iter()
                .flat_map(|s| s.rows.iter())
                .filter(|r| r.method == method && r.anchors == k)
                .collect();
            let pick = |f: fn(&Row) -> f64| -> Vec<f64> { rows.iter().map(|r| f(r)).collect() };
            let pick_opt = |f: fn(&Row) -> Option<f64>| -> Vec<f64> {
                rows.iter().filter_map(|r| f(r)).collect()
            };
            let Some(mean_error) = Summary::of(&pick(|r| r.mean_error)) else {
                continue;
            };
            cells.push(CellSummary {
                method,
                anchors: k,
                mean_error,
                mae: Summary::of(&pick(|r| r.mae)).expect("same rows"),
                pearson: Summary::of(&pick_opt(|r| r.pearson)),
                spearman: Summary::of(&pick_opt(|r| r.spearman)),
                kl_sym: Summary::of(&pick(|r| r.kl_sym)).expect("same rows"),
            });
        }
    }
    Ok(MultiseedReport {
        config_digest: config.digest(),
        base_seed: config.seed,
        n_seeds,
        fast_bayes,
        cells,
        seeds,
        failures,
    })
}

#[derive(Serialize)]
struct TableCsvRow<'a> {
    method: &'a str,
    anchors: usize,
    mean_error: f64,
    mae: f64,
    pearson: Option<f64>,
    spearman: Option<f64>,
    kl_sym: f64,
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    anchor_size: usize,
    method: &'a str,
    mean_error: f64,
    mae: f64,
    pearson: Option<f64>,
    kl_sym: f64,
}

fn to_csv<T: Serialize>(rows: impl Iterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `method,anchors,mean_error,mae,pearson,spearman,kl_sym`, one line per row.
pub fn table_csv(report: &RunReport) -> Result<String> {
    to_csv(report.rows.iter().map(|r| TableCsvRow {
        method: r.method.name(),
        anchors: r.anchors,
        mean_error: r.mean_error,
        mae: r.mae,
        pearson: r.pearson,
        spearman: r.spearman,
        kl_sym: r.kl_sym,
    }))
}

/// Plot data: `anchor_size,method,mean_error,mae,pearson,kl_sym`, ordered by
/// budget then method.
pub fn sweep_csv(report: &RunReport) -> Result<String> {
    let mut rows: Vec<&Row> = report.rows.iter().collect();
    rows.sort_by_key(|r| (r.anchors, r.method));
    to_csv(rows.into_iter().map(|r| SweepCsvRow {
        anchor_size: r.anchors,
        method: r.method.name(),
        mean_error: r.mean_error,
        mae: r.mae,
        pearson: r.pearson,
        kl_sym: r.kl_sym,
    }))
}
