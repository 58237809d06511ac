use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use umis::bn::{fixtures, random_bn};
use umis::dataset::{compute_priors, training_batch, write_batch_csv, EncodingMode};
use umis::harness::{
    architecture_sweep, beta_sweep, build_test_set, ess_csv, evaluate_model, fig1_csv, pathology, pathology_csv,
    table1_csv, ArchConfig, BetaSweepOptions, SweepResult,
};
use umis::io_util::write_atomic;
use umis::proposals::{estimate, weighted_samples, write_weights_csv, ProposalKind, ProposalSpec, RunReport};
use umis::um::{load_model, save_model, train, AdamConfig, MlpModel, TrainConfig};
use umis::{rng, BayesianNetwork, Error, PartialState, Result, Workers};

/// Amortised inference for binary Bayesian networks.
#[derive(Debug, Parser)]
#[command(name = "umis", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
struct Global {
    /// Base seed for every random stream in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Number of work units; results depend on this value, not on threading.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Include wall-clock timings in reports (makes outputs non-reproducible).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a network file: a random network or a built-in fixture.
    GenNet(GenNetArgs),
    /// Draw ancestral samples, or masked training rows with --masked.
    Sample(SampleArgs),
    /// Train a marginalizer on a network.
    Train(TrainArgs),
    /// Estimate posterior marginals by importance sampling.
    Infer(InferArgs),
    /// Score a trained model against exact posteriors.
    Eval(EvalArgs),
    /// Run one of the experiment sweeps end to end.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Fixture {
    Chain3,
    #[value(name = "appendixB")]
    AppendixB,
}

#[derive(Debug, Args)]
struct GenNetArgs {
    #[arg(long, conflicts_with_all = ["nodes", "max_parents", "edge_prob"])]
    fixture: Option<Fixture>,
    #[arg(long, default_value_t = 15)]
    nodes: usize,
    #[arg(long, default_value_t = 3)]
    max_parents: usize,
    #[arg(long, default_value_t = 0.3)]
    edge_prob: f64,
    /// Output file [default: <out-dir>/network.json]
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Encoding {
    TwoBit,
    FlagPlusPrior,
}

impl From<Encoding> for EncodingMode {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::TwoBit => EncodingMode::TwoBit,
            Encoding::FlagPlusPrior => EncodingMode::FlagPlusPrior,
        }
    }
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Write encoded masked inputs and targets instead of raw samples.
    #[arg(long)]
    masked: bool,
    #[arg(long, value_enum, default_value = "flag-plus-prior")]
    encoding: Encoding,
    /// Output file [default: <out-dir>/samples.csv]
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct TrainOpts {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "256")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 20_000)]
    iterations: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, value_enum, default_value = "flag-plus-prior")]
    encoding: Encoding,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            iterations: self.iterations,
            batch_size: self.batch_size,
            encoding: self.encoding.into(),
            seed,
            dropout: self.dropout,
            adam: AdamConfig { lr: self.learning_rate, ..AdamConfig::default() },
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    network: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    /// Score the trained model on this many exact test cases.
    #[arg(long, value_name = "CASES")]
    eval_against_exact: Option<usize>,
    /// Model file [default: <out-dir>/model.umnn]
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Proposal {
    Prior,
    Marginal,
    Sequential,
    Hybrid,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    network: PathBuf,
    /// Trained model; required by every proposal except prior unless --oracle.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Evidence as NAME=0 or NAME=1; repeatable.
    #[arg(short, long = "evidence", value_name = "NAME=0|1")]
    evidence: Vec<String>,
    #[arg(long, value_enum, default_value = "prior")]
    proposal: Proposal,
    #[arg(long, default_value_t = 0.25)]
    beta: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = umis::proposals::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Use exact conditionals in place of the model.
    #[arg(long)]
    oracle: bool,
    /// Also write per-sample log-weights to this CSV.
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    cases: usize,
    /// Average errors over all nodes, including observed ones.
    #[arg(long)]
    all_nodes: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Which {
    Table1,
    Fig1,
    Ess,
    Pathology,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ExperimentArgs {
    #[arg(value_enum)]
    which: Which,
    /// Network file [default: a random network generated from the seed]
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, default_value_t = 18)]
    nodes: usize,
    /// Trained model for fig1/ess; trained from scratch when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.25,0.5,1")]
    betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1000,5000,25000,200000")]
    checkpoints: Vec<usize>,
    /// Samples for the pathology comparison.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long)]
    all_nodes: bool,
}

fn out_path(global: &Global, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| global.out_dir.join(default))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn parse_evidence(bn: &BayesianNetwork, pairs: &[String]) -> Result<PartialState> {
    let mut state = PartialState::unobserved(bn.len());
    for pair in pairs {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("evidence `{pair}` is not NAME=0|1")))?;
        let node = bn.node_by_name(name.trim()).ok_or_else(|| Error::UnknownNode(name.trim().to_string()))?;
        let v = match value.trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::InvalidConfig(format!("evidence value `{other}` for {name} must be 0 or 1"))),
        };
        state = state.with(node, v);
    }
    Ok(state)
}

fn gen_net(g: &Global, a: &GenNetArgs) -> Result<()> {
    let bn = match a.fixture {
        Some(Fixture::Chain3) => fixtures::chain3(),
        Some(Fixture::AppendixB) => fixtures::appendix_b(),
        None => random_bn(a.nodes, a.max_parents, a.edge_prob, g.seed)?,
    };
    let path = out_path(g, &a.output, "network.json");
    write_text(&path, &bn.to_json()?)?;
    println!("wrote {} ({} nodes)", path.display(), bn.len());
    Ok(())
}

fn sample(g: &Global, a: &SampleArgs) -> Result<()> {
    let bn = BayesianNetwork::load(&a.network)?;
    let mut r = rng::seeded(g.seed);
    let mut buf = Vec::new();
    if a.masked {
        let batch = training_batch(&bn, a.count, a.encoding.into(), compute_priors(&bn), &mut r);
        write_batch_csv(&bn, &batch, &mut buf)?;
    } else {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(bn.nodes().iter().map(|n| n.name.as_str()))?;
        for _ in 0..a.count {
            let x = bn.ancestral_sample(&mut r);
            w.write_record(x.values().iter().map(|&v| if v { "1" } else { "0" }))?;
        }
        w.flush()?;
        drop(w);
    }
    let path = out_path(g, &a.output, "samples.csv");
    write_atomic(&path, &buf)?;
    println!("wrote {} ({} rows)", path.display(), a.count);
    Ok(())
}

fn workers(g: &Global) -> Workers {
    Workers::threaded(g.workers)
}

fn test_cases(bn: &BayesianNetwork, cases: usize, seed: u64) -> Result<Vec<umis::harness::EvidenceCase>> {
    build_test_set(bn, cases, &mut rng::derived(seed, 7))
}

fn train_cmd(g: &Global, a: &TrainArgs) -> Result<()> {
    let bn = BayesianNetwork::load(&a.network)?;
    let cases = a.eval_against_exact.map(|n| test_cases(&bn, n, g.seed)).transpose()?;
    let (model, report) = train(&bn, &a.opts.config(g.seed), cases.as_deref(), &workers(g))?;
    let path = out_path(g, &a.model, "model.umnn");
    save_model(&model, &path)?;
    write_text(&g.out_dir.join("loss.csv"), &report.loss_csv())?;
    match report.loss_curve.last() {
        Some((it, loss)) => println!("final loss {loss:.6} at iteration {it}"),
        None => println!("no training iterations run"),
    }
    if let Some(m) = &report.eval {
        println!("mae {:.6} max_ae {:.6} pearson {:.6} over {} cases", m.mae, m.max_ae, m.pearson, m.cases);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn load_optional(path: &Option<PathBuf>) -> Result<Option<MlpModel>> {
    path.as_ref().map(load_model).transpose()
}

fn infer(g: &Global, a: &InferArgs) -> Result<()> {
    let bn = BayesianNetwork::load(&a.network)?;
    let evidence = parse_evidence(&bn, &a.evidence)?;
    let kind = match a.proposal {
        Proposal::Prior => ProposalKind::Prior,
        Proposal::Marginal => ProposalKind::MarginalProduct,
        Proposal::Sequential => ProposalKind::Sequential,
        Proposal::Hybrid => ProposalKind::Hybrid { beta: a.beta },
    };
    let mut spec = ProposalSpec::new(kind);
    spec.epsilon_clamp = a.epsilon;
    if a.oracle {
        spec = spec.with_oracle();
    }
    let model = load_optional(&a.model)?;
    let w = workers(g);
    let start = Instant::now();
    let result = estimate(&bn, &evidence, &spec, model.as_ref(), a.samples, g.seed, &w)?;
    let mut report = RunReport::new(&bn, spec, g.seed, w.count(), &result);
    if g.timing {
        report.wall_time_ms = Some(millis(start));
    }
    if let Some(path) = &a.weights_out {
        let samples = weighted_samples(&bn, &evidence, &spec, model.as_ref(), a.samples, g.seed, &w)?;
        let mut buf = Vec::new();
        write_weights_csv(&samples, &mut buf)?;
        write_atomic(path, &buf)?;
    }
    print!("{}", to_json(&report)?);
    Ok(())
}

fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let bn = BayesianNetwork::load(&a.network)?;
    let model = load_model(&a.model)?;
    let cases = test_cases(&bn, a.cases, g.seed)?;
    let m = evaluate_model(&model, &cases, !a.all_nodes)?;
    print!("{}", to_json(&m)?);
    Ok(())
}

#[derive(Serialize)]
struct ExperimentReport<'a> {
    version: &'static str,
    global: &'a Global,
    args: &'a ExperimentArgs,
    network_nodes: usize,
    artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    results: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_ms: Option<f64>,
}

fn experiment(g: &Global, a: &ExperimentArgs) -> Result<()> {
    let start = Instant::now();
    let w = workers(g);
    let mut artifacts = Vec::new();
    let mut emit = |name: &str, text: &str| -> Result<()> {
        write_text(&g.out_dir.join(name), text)?;
        artifacts.push(name.to_string());
        Ok(())
    };
    let (network_nodes, results) = if let Which::Pathology = a.which {
        let r = pathology(a.samples, g.seed, &w)?;
        emit("pathology.csv", &pathology_csv(&r))?;
        println!("copy factor {} variance ratio {:.3e}", r.copy_factor, r.variance_ratio);
        (3, serde_json::to_value(r)?)
    } else {
        let bn = match &a.network {
            Some(p) => BayesianNetwork::load(p)?,
            None => random_bn(a.nodes, 3, 0.3, g.seed)?,
        };
        let cases = test_cases(&bn, a.cases, g.seed)?;
        let cfg = a.train.config(g.seed);
        let sweep: SweepResult = match a.which {
            Which::Table1 => {
                let r = architecture_sweep(&bn, &cases, &ArchConfig::desk_grid(), &cfg, a.all_nodes, &w)?;
                emit("table1.csv", &table1_csv(&r))?;
                r
            }
            _ => {
                let model = match load_optional(&a.model)? {
                    Some(m) => m,
                    None => train(&bn, &cfg, None, &w)?.0,
                };
                let opts = BetaSweepOptions {
                    betas: a.betas.clone(),
                    sample_counts: a.checkpoints.clone(),
                    seed: rng::derive_seed(g.seed, 8),
                    all_nodes: a.all_nodes,
                    oracle_reference: true,
                };
                let r = beta_sweep(&bn, &model, &cases, &opts, &w)?;
                if let Which::Fig1 = a.which {
                    emit("fig1.csv", &fig1_csv(&r))?;
                } else {
                    emit("ess.csv", &ess_csv(&r))?;
                }
                r
            }
        };
        for row in &sweep.rows {
            println!("{:<24} mae {:.5} max_ae {:.5} pearson {:.5}", row_label(row), row.mae, row.max_ae, row.pearson);
        }
        (bn.len(), serde_json::to_value(&sweep)?)
    };
    let report = ExperimentReport {
        version: env!("CARGO_PKG_VERSION"),
        global: g,
        args: a,
        network_nodes,
        artifacts,
        results: Some(results),
        wall_time_ms: g.timing.then(|| millis(start)),
    };
    write_text(&g.out_dir.join("report.json"), &to_json(&report)?)?;
    Ok(())
}

fn row_label(row: &umis::harness::SweepRow) -> String {
    match (row.encoding, row.beta) {
        (Some(e), _) => format!("{} {}", row.label, e.label()),
        (None, Some(b)) => format!("beta={b} M={}", row.n_samples),
        (None, None) => format!("{} M={}", row.label, row.n_samples),
    }
}

fn run(cli: &Cli) -> Result<()> {
    if !matches!(cli.command, Command::Infer(_) | Command::Eval(_)) {
        fs::create_dir_all(&cli.global.out_dir)?;
    }
    match &cli.command {
        Command::GenNet(a) => gen_net(&cli.global, a),
        Command::Sample(a) => sample(&cli.global, a),
        Command::Train(a) => train_cmd(&cli.global, a),
        Command::Infer(a) => infer(&cli.global, a),
        Command::Eval(a) => eval(&cli.global, a),
        Command::Experiment(a) => experiment(&cli.global, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
