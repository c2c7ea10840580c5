//! Command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use semleak_core::generation::RunPlan;
use semleak_core::humaneval::{AnnotationPair, AnnotationSession, PairSource};
use semleak_core::mockbench::{run_calibration, MockLeakConfig};
use semleak_core::postprocess::PostprocessPolicy;
use semleak_core::report::one_decimal;
use semleak_core::stats::DEFAULT_EPSILON_SLACK;

use crate::annotate::{self, SessionRegistry};
use crate::bundle_io::{self, DEFAULT_BINS};
use crate::config::{load_backend_config, load_model_config, token_from_env};
use crate::http::RetryPolicy;
use crate::lint::lint_suite;
use crate::pipeline::{self, RunSetup};
use crate::scoring::pair_generations;
use crate::store::read_records;
use crate::stub::{StubEmbedder, StubModel, StubModelOptions};
use crate::suite_io::load_suite;

#[derive(Debug, Parser)]
#[command(
    name = "semleak",
    version,
    about = "Measure semantic leakage in text-generation models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect generations, score them and write reports.
    Run(RunArgs),
    /// Re-score stored generations without contacting the models.
    Score(RunArgs),
    /// Render tables and plot data from a stored bundle.
    Report(ReportArgs),
    /// Human-evaluation sessions.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Run the offline calibration bench.
    Mock(MockArgs),
    /// Serve the mock model and hash embeddings over HTTP.
    Stub(StubArgs),
    /// Check a suite file.
    Validate {
        #[arg(long)]
        suite: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Model endpoint config (TOML or JSON); repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Similarity backend config (TOML or JSON); repeatable.
    #[arg(long = "backend", required = true)]
    pub backends: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub temperatures: Option<Vec<f64>>,
    #[arg(long)]
    pub samples: Option<u32>,
    #[arg(long, default_value_t = 0.0)]
    pub tie_epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON_SLACK)]
    pub epsilon_slack: f64,
    /// Post-processing policy (TOML or JSON); defaults apply otherwise.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value = "semleak-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Directory for rendered files; only the table is printed when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    /// Leak strength.
    #[arg(long, default_value_t = 0.7)]
    pub p: f64,
    /// Tie fraction; defaults to 1 - p.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Synthetic instances.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct StubArgs {
    /// Suite whose prompts the mock model recognizes.
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub p: f64,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "127.0.0.1:8700")]
    pub addr: String,
    /// Repeat the prompt at the start of each reply.
    #[arg(long)]
    pub echo: bool,
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Build a session from stored generations of one model and temperature.
    Create(CreateArgs),
    /// Serve sessions over HTTP.
    Serve {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8800")]
        addr: String,
    },
    /// Write a session's labels as JSON lines.
    Export {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge JSON-lines labels into a session.
    Import {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Human Leak-Rate, agreement, and agreement with automatic scores.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct CreateArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Run store file(s) holding the generations.
    #[arg(long = "generations", required = true)]
    pub generations: Vec<PathBuf>,
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub temperature: f64,
    #[arg(long)]
    pub session_id: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep at most this many pairs, in suite order.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Give each annotator their own item order.
    #[arg(long)]
    pub per_annotator_order: bool,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Directory the session file is written to.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Pair scores from a run, for human-vs-automatic agreement.
    #[arg(long)]
    pub pair_scores: Option<PathBuf>,
    /// Backend whose scores to compare against.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long, default_value_t = DEFAULT_EPSILON_SLACK)]
    pub epsilon_slack: f64,
    /// Report Leak-Rate for annotators who have not finished.
    #[arg(long)]
    pub allow_partial: bool,
}

fn load_policy(path: Option<&Path>) -> anyhow::Result<PostprocessPolicy> {
    let Some(path) = path else {
        return Ok(PostprocessPolicy::default());
    };
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let policy: PostprocessPolicy = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    policy.validate()?;
    Ok(policy)
}

fn setup_from(args: &RunArgs) -> anyhow::Result<RunSetup> {
    let suite = load_suite(&args.suite)?;
    let models = args
        .models
        .iter()
        .map(|p| load_model_config(p))
        .collect::<Result<Vec<_>, _>>()?;
    let backends = args
        .backends
        .iter()
        .map(|p| load_backend_config(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut plan = RunPlan::default();
    if let Some(t) = &args.temperatures {
        plan.temperatures = t.clone();
    }
    if let Some(s) = args.samples {
        plan.samples_per_cell = s;
    }
    plan.validate()?;
    if [args.tie_epsilon, args.epsilon_slack].iter().any(|e| e.is_nan() || *e < 0.0) {
        bail!("--tie-epsilon and --epsilon-slack must be non-negative");
    }
    Ok(RunSetup {
        suite,
        models,
        backends,
        plan,
        policy: load_policy(args.policy.as_deref())?,
        tie_epsilon: args.tie_epsilon,
        epsilon_slack: args.epsilon_slack,
        seed: args.seed,
        out_dir: args.out.clone(),
    })
}

async fn run_or_score(args: RunArgs, collect: bool) -> anyhow::Result<ExitCode> {
    let setup = setup_from(&args)?;
    let mut failed_cells = 0;
    if collect {
        let tokens = setup
            .models
            .iter()
            .map(|m| token_from_env(m.auth_token_env.as_deref()))
            .collect::<Result<Vec<_>, _>>()?;
        for (model, s) in pipeline::collect_all(&setup, &tokens, RetryPolicy::default()).await? {
            println!(
                "{model}: {} cells, {} cached, {} new, {} failed",
                s.requested,
                s.cached,
                s.new_records,
                s.failures.len()
            );
            for f in &s.failures {
                println!("  failed {}: {}", f.key, f.error);
            }
            failed_cells += s.failures.len();
        }
    }
    let backend_tokens = setup
        .backends
        .iter()
        .map(|b| token_from_env(b.auth_token_env.as_deref()))
        .collect::<Result<Vec<_>, _>>()?;
    let run = pipeline::score_stored(&setup, &backend_tokens).await?;
    if !run.unpaired.is_empty() {
        println!(
            "{} generations without a partner were skipped",
            run.unpaired.len()
        );
    }
    for (backend, f) in &run.embed_failures {
        println!(
            "  {backend}: cannot embed {:?} with {}: {}",
            f.text, f.model, f.error
        );
    }
    if run.pair_scores.is_empty() {
        bail!("no scorable pairs; nothing to report");
    }
    let files = pipeline::write_run_outputs(&setup.out_dir, &run, args.bins)?;
    print!(
        "{}",
        semleak_core::report::render_leak_table(&run.bundle)?.text
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    if failed_cells > 0 {
        println!("{failed_cells} cells failed; rerun to retry them");
    }
    Ok(ExitCode::SUCCESS)
}

fn report(args: ReportArgs) -> anyhow::Result<ExitCode> {
    let bundle = bundle_io::read_bundle(&args.bundle)?;
    let table = semleak_core::report::render_leak_table(&bundle)?;
    print!("{}", table.text);
    if let Some(dir) = &args.out {
        for f in bundle_io::write_report_files(dir, &bundle, args.bins)? {
            println!("wrote {}", f.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn mock(args: MockArgs) -> anyhow::Result<ExitCode> {
    let q = args.q.unwrap_or(1.0 - args.p);
    let config = MockLeakConfig::new(args.p, q, args.noise, args.seed)?;
    let out = run_calibration(args.n, &config, &PostprocessPolicy::default())?;
    let t = out.tally;
    let n = t.n() as f64;
    let mean = out.observed / 100.0;
    let second = (t.leaks as f64 + 0.25 * t.ties as f64) / n;
    let se = 100.0 * ((second - mean * mean).max(0.0) / n).sqrt();
    println!(
        "Leak-Rate {} ± {}",
        one_decimal(out.observed),
        one_decimal(se)
    );
    println!(
        "expected {} ± {} ({}), n = {}, leaks {} ties {} non-leaks {}",
        one_decimal(out.expected.leak_rate),
        one_decimal(out.expected.std_error),
        if out.expected.closed_form {
            "closed form"
        } else {
            "Monte Carlo"
        },
        args.n,
        t.leaks,
        t.ties,
        t.non_leaks
    );
    if let Some(p) = out.p_value {
        println!("one-sided p = {p:.3e}");
    }
    Ok(ExitCode::SUCCESS)
}

async fn stub(args: StubArgs) -> anyhow::Result<ExitCode> {
    let suite = load_suite(&args.suite)?;
    let config = MockLeakConfig::new(args.p, args.q.unwrap_or(1.0 - args.p), 0.0, args.seed)?;
    let options = StubModelOptions {
        echo_prompt: args.echo,
        ..Default::default()
    };
    let model = Arc::new(StubModel::new(&suite, config, options));
    let router = model
        .router()
        .merge(Arc::new(StubEmbedder::default()).router());
    let listener = tokio::net::TcpListener::bind(&args.addr)
        .await
        .with_context(|| format!("binding {}", args.addr))?;
    println!("stub listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown())
        .await?;
    Ok(ExitCode::SUCCESS)
}

async fn shutdown() {
    let _ = tokio::signal::ctrl_c().await;
}

fn validate(suite: &Path) -> anyhow::Result<ExitCode> {
    let suite = load_suite(suite)?;
    let warnings = lint_suite(&suite);
    for w in &warnings {
        println!("warning: {}: {}", w.instance_id, w.message);
    }
    println!(
        "{}: {} instances, {} warnings",
        suite.name(),
        suite.len(),
        warnings.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn create_session(args: CreateArgs) -> anyhow::Result<ExitCode> {
    let suite = load_suite(&args.suite)?;
    let policy = load_policy(args.policy.as_deref())?;
    let mut records = Vec::new();
    for p in &args.generations {
        records.extend(read_records(p)?);
    }
    records.retain(|r| r.coords.model_id == args.model && r.coords.temperature == args.temperature);
    let pairing = pair_generations(&suite, &records, &policy);
    let mut pairs: Vec<AnnotationPair> = pairing
        .pairs
        .into_iter()
        .filter(|p| !p.test_text.trim().is_empty() && !p.control_text.trim().is_empty())
        .map(|p| AnnotationPair {
            concept: suite
                .get(&p.instance_id)
                .expect("paired from suite")
                .concept
                .clone(),
            test_gen: p.test_text,
            control_gen: p.control_text,
            source: PairSource {
                instance_id: p.instance_id,
                model_id: p.model_id,
                temperature: p.temperature,
                sample_index: p.sample_index,
            },
        })
        .collect();
    if let Some(limit) = args.limit {
        pairs.truncate(limit);
    }
    let session =
        AnnotationSession::create(&args.session_id, pairs, args.seed, args.per_annotator_order)?;
    let path = annotate::session_path(&args.out, &args.session_id);
    annotate::save_session(&path, &session)?;
    println!(
        "session {} with {} items written to {}",
        session.session_id,
        session.items.len(),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

async fn serve(sessions: &Path, addr: &str) -> anyhow::Result<ExitCode> {
    let reg = SessionRegistry::load_dir(sessions)?;
    if reg.session_ids().is_empty() {
        bail!("no sessions in {}", sessions.display());
    }
    let ids = reg.session_ids().join(", ");
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    println!(
        "serving sessions [{ids}] on http://{}",
        listener.local_addr()?
    );
    axum::serve(listener, Arc::new(reg).router())
        .with_graceful_shutdown(shutdown())
        .await?;
    Ok(ExitCode::SUCCESS)
}

fn stats(args: StatsArgs) -> anyhow::Result<ExitCode> {
    let session = annotate::load_session(&args.session)?;
    println!(
        "session {}: {} items",
        session.session_id,
        session.items.len()
    );
    let mut complete = Vec::new();
    for a in &session.annotators {
        match session.human_leak_rate(a, args.allow_partial) {
            Ok(r) => {
                println!(
                    "{a}: Leak-Rate {} ({} of {} labeled)",
                    one_decimal(r.leak_rate),
                    r.labeled,
                    r.total
                );
                if r.labeled == r.total {
                    complete.push(a.clone());
                }
            }
            Err(e) => println!("{a}: {e}"),
        }
    }
    for (i, a) in complete.iter().enumerate() {
        for b in &complete[i + 1..] {
            match session.agreement(a, b) {
                Ok(tau) => println!("tau-b {a} vs {b}: {tau:.4}"),
                Err(e) => println!("tau-b {a} vs {b}: {e}"),
            }
        }
    }
    if let Some(path) = &args.pair_scores {
        let mut scores = bundle_io::read_pair_scores(path)?;
        if let Some(b) = &args.backend {
            scores.retain(|s| &s.backend_id == b);
        }
        for a in &complete {
            match session.human_vs_auto(a, &scores, args.epsilon_slack) {
                Ok(tau) => println!(
                    "tau-b {a} vs automatic (epsilon {}): {tau:.4}",
                    args.epsilon_slack
                ),
                Err(e) => println!("tau-b {a} vs automatic: {e}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run_or_score(args, true).await,
        Command::Score(args) => run_or_score(args, false).await,
        Command::Report(args) => report(args),
        Command::Mock(args) => mock(args),
        Command::Stub(args) => stub(args).await,
        Command::Validate { suite } => validate(&suite),
        Command::Annotate(cmd) => match cmd {
            AnnotateCommand::Create(args) => create_session(args),
            AnnotateCommand::Serve { sessions, addr } => serve(&sessions, &addr).await,
            AnnotateCommand::Export { session, out } => {
                let s = annotate::load_session(&session)?;
                annotate::write_labels(&out, &s.labels)?;
                println!("{} labels written to {}", s.labels.len(), out.display());
                Ok(ExitCode::SUCCESS)
            }
            AnnotateCommand::Import { session, labels } => {
                let mut s = annotate::load_session(&session)?;
                let records = annotate::read_labels(&labels)?;
                let added = s.import_labels(&records)?;
                annotate::save_session(&session, &s)?;
                println!(
                    "{added} labels imported, {} already present",
                    records.len() - added
                );
                Ok(ExitCode::SUCCESS)
            }
            AnnotateCommand::Stats(args) => stats(args),
        },
    }
}
