//! `judgecal` command-line tool.
//!
//! Exit status is 0 on success, 1 for usage or configuration errors and 2
//! when a run fails. Output files are written only after the whole command
//! has succeeded, each through a temporary file and a rename.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use judgecal::bayes::{
    self, beta_canary, ols_fit, sample_posterior, Canary, Diagnostics, Draw, IntervalKind, OlsFit,
    PosteriorTrace,
};
use judgecal::data::{load_dataset, write_dataset, ColumnMap, Dataset};
use judgecal::flow::{self, mc_correct_dataset, FlowModel};
use judgecal::harness::{
    self, run_multiseed, run_sweep, run_table1, sweep_csv, table_csv, ExperimentConfig,
};
use judgecal::metrics::{full_report, MetricsReport};
use judgecal::report::{render_report, write_atomic};

#[derive(Parser)]
#[command(
    name = "judgecal",
    version,
    about = "Calibrate automatic-judge scores against reference scores"
)]
struct Cli {
    /// Experiment config file (flat `key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run seed; overrides `seed` from the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as CSV (synth.csv).
    Synth,
    /// Sample the Bayesian linear corrector (bayes_trace.json, bayes_fit.json).
    FitBayes(FitArgs),
    /// Train the flow corrector (flow_weights.json, flow_fit.json).
    FitFlow(FitArgs),
    /// Score a fitted model on a CSV with judge and reference columns
    /// (evaluation.json, corrected.csv).
    Evaluate(EvalArgs),
    /// Every method at every anchor budget on one seed (table1.json, table1.csv).
    Table1,
    /// Metrics against anchor budget (sweep.json, sweep.csv). Needs --config.
    Sweep {
        /// Comma-separated anchor budgets; defaults to `sweep.grid`.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
    },
    /// Summaries over consecutive seeds (multiseed.json).
    Multiseed {
        #[arg(long)]
        n_seeds: Option<usize>,
        /// Also train the flow on every seed.
        #[arg(long)]
        include_flow: bool,
        /// Sample the posterior instead of using the least-squares line.
        #[arg(long)]
        mcmc: bool,
    },
}

#[derive(Args)]
struct FitArgs {
    /// Fit on every row of this CSV instead of the synthetic anchors.
    #[arg(long, value_name = "CSV")]
    data: Option<PathBuf>,
    /// Synthetic anchor budget (a prefix of the training pool).
    #[arg(long, conflicts_with = "data")]
    anchors: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// CSV with judge and reference columns.
    #[arg(long, value_name = "CSV")]
    data: PathBuf,
    /// A bayes_trace.json or flow_weights.json file.
    #[arg(long, value_name = "JSON")]
    model: PathBuf,
    /// Dropout passes per item for flow uncertainty.
    #[arg(long, default_value_t = 40)]
    mc_passes: usize,
}

enum Failure {
    Usage(String),
    Run(judgecal::Error),
}

impl From<judgecal::Error> for Failure {
    fn from(e: judgecal::Error) -> Self {
        Failure::Run(e)
    }
}

type Outputs = Vec<(&'static str, Vec<u8>)>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli).and_then(|outputs| write_outputs(&cli.out, &outputs).map_err(Failure::Run)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli, required: bool) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            ExperimentConfig::from_file(path).map_err(|e| Failure::Usage(e.to_string()))?
        }
        None if required => {
            return Err(Failure::Usage(
                "this command requires --config <PATH>".into(),
            ));
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outputs, Failure> {
    match &cli.command {
        Command::Synth => {
            let cfg = load_config(cli, false)?;
            let d = harness::build_dataset(&cfg, cfg.seed)?;
            let mut buf = Vec::new();
            write_dataset(&d, &mut buf)?;
            Ok(vec![("synth.csv", buf)])
        }
        Command::FitBayes(args) => fit_bayes(&load_config(cli, false)?, args),
        Command::FitFlow(args) => fit_flow(&load_config(cli, false)?, args),
        Command::Evaluate(args) => evaluate(args, cli.seed.unwrap_or(0)),
        Command::Table1 => {
            let report = run_table1(&load_config(cli, false)?)?;
            Ok(vec![
                ("table1.json", render_report(&report)?.into_bytes()),
                ("table1.csv", table_csv(&report)?.into_bytes()),
            ])
        }
        Command::Sweep { grid } => {
            let cfg = load_config(cli, true)?;
            let grid = grid.clone().unwrap_or_else(|| cfg.sweep.grid.clone());
            let report = run_sweep(&cfg, &grid)?;
            Ok(vec![
                ("sweep.json", render_report(&report)?.into_bytes()),
                ("sweep.csv", sweep_csv(&report)?.into_bytes()),
            ])
        }
        Command::Multiseed {
            n_seeds,
            include_flow,
            mcmc,
        } => {
            let cfg = load_config(cli, false)?;
            let n = n_seeds.unwrap_or(cfg.multiseed.n_seeds);
            let fast = cfg.multiseed.fast_bayes && !mcmc;
            let flow = cfg.multiseed.include_flow || *include_flow;
            let report = run_multiseed(&cfg, n, fast, flow)?;
            Ok(vec![(
                "multiseed.json",
                render_report(&report)?.into_bytes(),
            )])
        }
    }
}

/// Anchors from `--data`, or the synthetic pool prefix for the run seed.
fn fit_anchors(cfg: &ExperimentConfig, args: &FitArgs) -> Result<Dataset, Failure> {
    if let Some(path) = &args.data {
        return Ok(load_dataset(path, &ColumnMap::default())?);
    }
    let k = args
        .anchors
        .or_else(|| cfg.split.nested_anchor_sizes.first().copied())
        .unwrap_or(100);
    if k == 0 || k > cfg.split.n_train_pool {
        return Err(Failure::Usage(format!(
            "--anchors must lie in 1..={}",
            cfg.split.n_train_pool
        )));
    }
    let (_, split) = harness::prepare(cfg, cfg.seed)?;
    Ok(split.train_pool.prefix(k))
}

#[derive(Serialize)]
struct BayesFit {
    anchors: usize,
    posterior_mean: Draw,
    ols: OlsSummary,
    divergences: usize,
    diagnostics: Diagnostics,
    canary: Canary,
}

#[derive(Serialize)]
struct OlsSummary {
    alpha: f64,
    beta: f64,
    residual_sd: f64,
}

impl From<OlsFit> for OlsSummary {
    fn from(f: OlsFit) -> Self {
        Self {
            alpha: f.alpha,
            beta: f.beta,
            residual_sd: f.residual_sd,
        }
    }
}

fn fit_bayes(cfg: &ExperimentConfig, args: &FitArgs) -> Result<Outputs, Failure> {
    let anchors = fit_anchors(cfg, args)?;
    let stream = harness::root_stream(cfg.seed)
        .child("hmc")
        .substream(anchors.len() as u64);
    let (trace, diagnostics) = sample_posterior(&anchors, &cfg.priors, &cfg.sampler, &stream)?;
    let fit = BayesFit {
        anchors: anchors.len(),
        posterior_mean: trace.posterior_mean(),
        ols: ols_fit(&anchors)?.into(),
        divergences: trace.divergences,
        diagnostics,
        canary: beta_canary(&trace, 0.3, 0.05),
    };
    let mut trace_json = trace.to_json()?;
    trace_json.push('\n');
    Ok(vec![
        ("bayes_trace.json", trace_json.into_bytes()),
        ("bayes_fit.json", render_report(&fit)?.into_bytes()),
    ])
}

#[derive(Serialize)]
struct FlowFit {
    anchors: usize,
    epochs: usize,
    n_params: usize,
    initial_loss: f64,
    final_loss: f64,
}

fn fit_flow(cfg: &ExperimentConfig, args: &FitArgs) -> Result<Outputs, Failure> {
    let anchors = fit_anchors(cfg, args)?;
    let stream = harness::root_stream(cfg.seed)
        .child("flow")
        .substream(anchors.len() as u64);
    let rubric_aware = !anchors.is_empty() && anchors.pairs.iter().all(|p| p.rubric_id.is_some());
    let (model, history) = flow::train_with_history(&anchors, &cfg.flow, &stream, rubric_aware)?;
    let fit = FlowFit {
        anchors: anchors.len(),
        epochs: history.len(),
        n_params: model.n_params(),
        initial_loss: history[0],
        final_loss: history[history.len() - 1],
    };
    let mut weights = model.to_json()?;
    weights.push('\n');
    Ok(vec![
        ("flow_weights.json", weights.into_bytes()),
        ("flow_fit.json", render_report(&fit)?.into_bytes()),
    ])
}

#[derive(Serialize)]
struct Evaluation {
    model: &'static str,
    metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    canary: Option<Canary>,
}

#[derive(Serialize)]
struct CorrectedRow<'a> {
    item_id: &'a str,
    judge: f64,
    reference: f64,
    corrected: f64,
    lo: Option<f64>,
    hi: Option<f64>,
    sigma: Option<f64>,
}

fn evaluate(args: &EvalArgs, seed: u64) -> Result<Outputs, Failure> {
    let data = load_dataset(&args.data, &ColumnMap::default())?;
    let judges = data.judges()?;
    let refs = data.references();
    let text = std::fs::read_to_string(&args.model).map_err(|e| {
        Failure::Run(judgecal::Error::InvalidInput(format!(
            "cannot read {}: {e}",
            args.model.display()
        )))
    })?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(judgecal::Error::from)?;
    let mut rows = Vec::with_capacity(data.len());
    let (name, corrected, canary) = if doc.get("layers").is_some() {
        let model = FlowModel::from_json(&text)?;
        let rubrics: Vec<Option<u32>> = data.pairs.iter().map(|p| p.rubric_id).collect();
        let corrected = model.predict(&judges, &rubrics)?;
        let mc = if model.dropout_rate > 0.0 && args.mc_passes >= 2 {
            let stream = harness::root_stream(seed).child("mc-dropout");
            Some(mc_correct_dataset(&model, &data, args.mc_passes, &stream)?)
        } else {
            None
        };
        for (i, p) in data.pairs.iter().enumerate() {
            rows.push(CorrectedRow {
                item_id: &p.item_id,
                judge: judges[i],
                reference: p.reference,
                corrected: corrected[i],
                lo: None,
                hi: None,
                sigma: mc.as_ref().map(|m| m[i].sigma_hat),
            });
        }
        ("flow", corrected, None)
    } else if doc.get("alpha").is_some() {
        let trace = PosteriorTrace::from_json(&text)?;
        let mut corrected = Vec::with_capacity(data.len());
        for (i, p) in data.pairs.iter().enumerate() {
            let c = bayes::correct(judges[i], &trace, IntervalKind::Predictive);
            corrected.push(c.y_hat);
            rows.push(CorrectedRow {
                item_id: &p.item_id,
                judge: judges[i],
                reference: p.reference,
                corrected: c.y_hat,
                lo: Some(c.lo),
                hi: Some(c.hi),
                sigma: None,
            });
        }
        ("bayes", corrected, Some(beta_canary(&trace, 0.3, 0.05)))
    } else {
        return Err(Failure::Usage(format!(
            "{} is neither a bayes trace nor flow weights",
            args.model.display()
        )));
    };
    let evaluation = Evaluation {
        model: name,
        metrics: full_report(&corrected, &refs)?,
        canary,
    };
    let mut w = csv_writer();
    for r in &rows {
        w.serialize(r).map_err(judgecal::Error::from)?;
    }
    let csv = w
        .into_inner()
        .map_err(|e| Failure::Run(judgecal::Error::InvalidInput(format!("csv buffer: {e}"))))?;
    Ok(vec![
        ("evaluation.json", render_report(&evaluation)?.into_bytes()),
        ("corrected.csv", csv),
    ])
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn write_outputs(dir: &Path, outputs: &Outputs) -> judgecal::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| judgecal::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (name, bytes) in outputs {
        write_atomic(&dir.join(name), bytes)?;
    }
    Ok(())
}
