mod exit;
mod report;
mod runspec;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use liahr::corpus::{
    convert_csv, load_corpus, write_corpus, CsvLabels, CsvOptions, LabelMap, LabelSpace, Split,
};
use liahr::engine::{self, corpus_hash, plan_prompts, write_manifest, write_verdicts, RunManifest};
use liahr::gateway::Gateway;
use liahr::pipeline::{apply_pipeline, NamedLog, PipelineInputs, PipelineMode, PipelineOptions};
use liahr::prompt::PromptMode;
use liahr::properties::{self, PropertyReport, RunLog, Thresholds};
use liahr::stats::{self, Alternative, ContingencyTable2x2, TestResult};
use liahr_review::{AppState, ReviewStore};
use serde_json::json;

use crate::exit::{ConfigError, TransportFailure};
use crate::runspec::{Overrides, RunSpec};

#[derive(Parser)]
#[command(
    name = "liahr",
    version,
    about = "Verify and rectify subjective annotation labels with in-context probes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run LiaHR verification over a corpus.
    Verify(RunArgs),
    /// Run the reasonableness baseline.
    Baseline(RunArgs),
    /// Run plain in-context prediction.
    Icl(RunArgs),
    /// Evaluate harness properties from finished runs.
    Properties(PropertiesArgs),
    /// Apply a correction pipeline to a corpus.
    Correct(CorrectArgs),
    /// Significance tests from counts.
    Stats {
        #[command(subcommand)]
        test: StatsCommand,
    },
    /// Serve the review queue and its web client.
    Serve(ServeArgs),
    /// Print the summary tables of a finished run.
    Report(ReportArgs),
    /// Check a corpus file against a label space.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        space: PathBuf,
    },
    /// Convert a CSV export into a corpus file.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Write into this directory instead of a new timestamped one.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Render prompts only; no backend is contacted.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct PropertiesArgs {
    #[arg(long)]
    space: PathBuf,
    /// LiaHR run with gold query labels.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// LiaHR run with random or flipped query labels.
    #[arg(long)]
    random: Option<PathBuf>,
    /// ICL run on the same queries.
    #[arg(long)]
    icl: Option<PathBuf>,
    /// LiaHR runs with annotator or alternative query labels.
    #[arg(long)]
    perspective: Vec<PathBuf>,
    /// Runs that differ only in query position.
    #[arg(long)]
    position: Vec<PathBuf>,
    /// Also report per-label copy rates of the gold run.
    #[arg(long)]
    per_label: bool,
    /// Thresholds as JSON; defaults apply to omitted fields.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Write properties.{json,md,csv} here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrectArgs {
    /// original, replaced, replaced_trn, filtered, bsl_filtered or predictions.
    #[arg(long)]
    mode: PipelineMode,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    liahr: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    icl: Option<PathBuf>,
    /// Also change test-split labels in replaced and predictions modes.
    #[arg(long)]
    include_test: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Yates-corrected chi-square test of independence on a 2x2 table.
    Chi2 {
        /// Row-major counts a,b,c,d.
        #[arg(long, value_delimiter = ',', required = true)]
        table: Vec<u64>,
    },
    /// Exact binomial test of k successes in n trials against p = 1/2.
    Binom {
        k: u64,
        n: u64,
        /// One-sided upper tail instead of the doubled tail.
        #[arg(long)]
        greater: bool,
    },
    /// Chi-square goodness of fit.
    Gof {
        #[arg(long, value_delimiter = ',')]
        observed: Vec<u64>,
        /// Expected proportions or counts; rescaled to the observed total.
        #[arg(long, value_delimiter = ',')]
        expected: Vec<f64>,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    space: PathBuf,
    /// Review state directory.
    #[arg(long)]
    store: PathBuf,
    /// LiaHR run directories whose flagged verdicts are queued.
    #[arg(long)]
    verdicts: Vec<PathBuf>,
    /// Where exports are written.
    #[arg(long)]
    export: PathBuf,
    /// Static files of the web client.
    #[arg(long)]
    ui: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Seed of the candidate presentation order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Show which candidate is the gold label in item payloads (debugging only).
    #[arg(long)]
    unseal: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    format: Format,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "text")]
    text_column: String,
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long)]
    split_column: Option<String>,
    /// Column holding delimited label names.
    #[arg(long, conflicts_with = "one_hot")]
    labels_column: Option<String>,
    #[arg(long, default_value = ",")]
    sep: char,
    /// One 0/1 column per label, named after the label.
    #[arg(long)]
    one_hot: bool,
    /// JSON object mapping raw label names to space labels (or null to drop).
    #[arg(long)]
    label_map: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Verify(a) => cmd_run(PromptMode::Liahr, a),
        Command::Baseline(a) => cmd_run(PromptMode::Baseline, a),
        Command::Icl(a) => cmd_run(PromptMode::Icl, a),
        Command::Properties(a) => cmd_properties(a),
        Command::Correct(a) => cmd_correct(a),
        Command::Stats { test } => cmd_stats(test),
        Command::Serve(a) => cmd_serve(a),
        Command::Report(a) => cmd_report(a),
        Command::Validate { corpus, space } => cmd_validate(&corpus, &space),
        Command::Convert(a) => cmd_convert(a),
    }
}

fn load_space(path: &Path) -> Result<LabelSpace> {
    LabelSpace::load(path).with_context(|| format!("loading label space {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// A fresh `<output>/<name>-<utc time>` directory, suffixed on collision.
fn run_dir(spec: &RunSpec, explicit: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(dir) = explicit {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        return Ok(dir);
    }
    std::fs::create_dir_all(&spec.output)
        .with_context(|| format!("creating {}", spec.output.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{}-{stamp}", spec.display_name());
    for i in 0.. {
        let name = if i == 0 {
            base.clone()
        } else {
            format!("{base}-{i}")
        };
        let dir = spec.output.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn cmd_run(mode: PromptMode, args: RunArgs) -> Result<()> {
    let spec = runspec::load_with(&args.config, &args.overrides)?;
    if spec.run.mode != mode {
        bail!(ConfigError(format!(
            "{} describes a {} run; use the matching subcommand",
            args.config.display(),
            spec.run.mode
        )));
    }
    let space = load_space(&spec.space)?;
    let corpus = load_corpus(&spec.corpus, &space)
        .with_context(|| format!("loading corpus {}", spec.corpus.display()))?;
    spec.run.validate(&corpus)?;
    let dir = run_dir(&spec, args.out_dir)?;
    write(&dir.join("runspec.toml"), &spec.to_toml())?;

    if args.dry_run {
        let prompts = plan_prompts(&corpus, &spec.run)?;
        let prompt_dir = dir.join("prompts");
        std::fs::create_dir_all(&prompt_dir)?;
        let mut index = String::new();
        for (seed, p) in &prompts {
            let file = format!("{seed}_{}.txt", p.plan.query);
            write(&prompt_dir.join(&file), &p.text)?;
            let entry = json!({"seed": seed, "example_id": p.plan.query, "fingerprint": p.fingerprint, "file": file});
            index.push_str(&entry.to_string());
            index.push('\n');
        }
        write(&dir.join("prompts.jsonl"), &index)?;
        println!("rendered {} prompts into {}", prompts.len(), dir.display());
        return Ok(());
    }

    let gateway = Gateway::from_config(&spec.backend, corpus.space())?;
    let output = engine::run(&corpus, &spec.run, &gateway)?;
    let manifest = RunManifest::new(&output, &spec.run, &corpus, gateway.model_id());
    let log_path = dir.join("verdicts.jsonl");
    let file =
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    write_verdicts(BufWriter::new(file), &output.verdicts, corpus.space())?;
    write_manifest(dir.join("manifest.json"), &manifest)?;
    let md = report::run_markdown(&manifest);
    write(&dir.join("summary.md"), &md)?;
    write(&dir.join("summary.csv"), &report::run_csv(&manifest))?;
    println!("{md}\nwrote {}", dir.display());
    if !output.is_complete() {
        let failed: Vec<String> = output
            .seeds
            .iter()
            .filter(|s| s.error.is_some())
            .map(|s| s.seed.to_string())
            .collect();
        bail!(TransportFailure(format!(
            "seeds {} stopped early; partial results are in {}",
            failed.join(", "),
            dir.display()
        )));
    }
    Ok(())
}

fn load_run(dir: &Path, space: &LabelSpace) -> Result<RunLog> {
    RunLog::load(dir, space).with_context(|| format!("loading run {}", dir.display()))
}

fn cmd_properties(args: PropertiesArgs) -> Result<()> {
    let space = load_space(&args.space)?;
    let th: Thresholds = match &args.thresholds {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
        }
        None => Thresholds::default(),
    };
    let load = |p: &Option<PathBuf>| p.as_deref().map(|d| load_run(d, &space)).transpose();
    let gold = load(&args.gold)?;
    let random = load(&args.random)?;
    let icl = load(&args.icl)?;
    let mut reports: Vec<PropertyReport> = Vec::new();
    if let (Some(g), Some(i)) = (&gold, &icl) {
        reports.push(properties::nonconformity(g, i, &th)?);
    }
    if let (Some(g), Some(r)) = (&gold, &random) {
        reports.push(properties::noise_rejection(g, r, &th)?);
    }
    if let Some(r) = &random {
        reports.push(properties::rectification(r, &th)?);
    }
    if !args.perspective.is_empty() {
        let mut runs = Vec::new();
        runs.extend(gold.clone());
        for p in &args.perspective {
            runs.push(load_run(p, &space)?);
        }
        runs.extend(random.clone());
        reports.push(properties::diversity(&runs, &space, &th)?);
    }
    if !args.position.is_empty() {
        let runs = args
            .position
            .iter()
            .map(|p| load_run(p, &space))
            .collect::<Result<Vec<_>>>()?;
        reports.push(properties::position_report(&runs, &th)?);
    }
    if args.per_label {
        let g = gold
            .as_ref()
            .ok_or_else(|| ConfigError("--per-label needs --gold".into()))?;
        reports.push(properties::per_label_rates(g, &space, &th)?);
    }
    if reports.is_empty() {
        bail!(ConfigError(
            "nothing to evaluate; pass --gold with --random or --icl, --random, --perspective or --position".into()
        ));
    }
    let md = report::properties_markdown(&reports);
    println!("{md}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        write(
            &out.join("properties.json"),
            &serde_json::to_string_pretty(&reports)?,
        )?;
        write(&out.join("properties.md"), &md)?;
        write(
            &out.join("properties.csv"),
            &report::properties_csv(&reports),
        )?;
    }
    Ok(())
}

fn named(x: &Option<(String, RunLog)>) -> Option<NamedLog<'_>> {
    x.as_ref().map(|(name, log)| NamedLog {
        name: name.as_str(),
        verdicts: &log.verdicts,
    })
}

fn cmd_correct(args: CorrectArgs) -> Result<()> {
    let space = load_space(&args.space)?;
    let corpus = load_corpus(&args.corpus, &space)?;
    let hash = corpus_hash(&corpus);
    let load = |p: &Option<PathBuf>| -> Result<Option<(String, RunLog)>> {
        let Some(dir) = p else { return Ok(None) };
        let log = load_run(dir, &space)?;
        if log.corpus_hash != hash {
            log::warn!(
                "{} was produced from a different corpus file",
                dir.display()
            );
        }
        Ok(Some((dir.display().to_string(), log)))
    };
    let (liahr, baseline, icl) = (load(&args.liahr)?, load(&args.baseline)?, load(&args.icl)?);
    let inputs = PipelineInputs {
        liahr: named(&liahr),
        baseline: named(&baseline),
        icl: named(&icl),
    };
    let options = PipelineOptions {
        exclude_test: !args.include_test,
    };
    let (out_corpus, manifest) = apply_pipeline(&corpus, args.mode, &inputs, &options)?;
    std::fs::create_dir_all(&args.out)?;
    write_corpus(&out_corpus, args.out.join("corpus.jsonl"))?;
    write(
        &args.out.join("changes.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    let table = manifest.summary_table();
    write(&args.out.join("changes.md"), &table)?;
    println!("{table}\nwrote {}", args.out.display());
    Ok(())
}

fn print_test(r: &TestResult) {
    let df = r.df.map(|d| format!(" df = {d}")).unwrap_or_default();
    println!(
        "{}: statistic = {:.4}{df} p = {:.2e}",
        r.method, r.statistic, r.p_value
    );
}

fn cmd_stats(test: StatsCommand) -> Result<()> {
    let result = match test {
        StatsCommand::Chi2 { table } => {
            if table.len() != 4 {
                bail!(ConfigError(format!(
                    "--table needs four counts, got {}",
                    table.len()
                )));
            }
            let t = ContingencyTable2x2([[table[0], table[1]], [table[2], table[3]]]);
            stats::chi2_independence_yates(&t)?
        }
        StatsCommand::Binom { k, n, greater } => {
            let alt = if greater {
                Alternative::Greater
            } else {
                Alternative::TwoSidedDoubled
            };
            stats::binomial_test(k, n, alt)?
        }
        StatsCommand::Gof { observed, expected } => {
            stats::chi2_goodness_of_fit(&observed, &expected)?
        }
    };
    print_test(&result);
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let space = load_space(&args.space)?;
    let corpus = load_corpus(&args.corpus, &space)?;
    let store = ReviewStore::open(&args.store, space.clone(), args.seed)?;
    for dir in &args.verdicts {
        let run = load_run(dir, &space)?;
        if run.corpus_hash != corpus_hash(&corpus) {
            log::warn!(
                "{} was produced from a different corpus file",
                dir.display()
            );
        }
        let added = store.enqueue(&run.verdicts, &corpus)?;
        println!("queued {added} items from {}", dir.display());
    }
    let progress = store.progress();
    println!("{} items, {} pending", progress.total, progress.pending);
    let state = AppState {
        store: Arc::new(store),
        corpus: Arc::new(corpus),
        export_dir: args.export,
        unsealed: args.unseal,
    };
    let app = liahr_review::router(state, args.ui);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .map_err(|e| ConfigError(format!("cannot bind {}: {e}", args.addr)))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let manifest = engine::read_manifest(args.run.join("manifest.json"))
        .with_context(|| format!("reading run {}", args.run.display()))?;
    let text = match args.format {
        Format::Md => report::run_markdown(&manifest),
        Format::Csv => report::run_csv(&manifest),
        Format::Json => serde_json::to_string_pretty(&manifest.summary)? + "\n",
    };
    print!("{text}");
    Ok(())
}

fn cmd_validate(corpus: &Path, space: &Path) -> Result<()> {
    let space = load_space(space)?;
    let corpus = load_corpus(corpus, &space)?;
    let counts: Vec<String> = Split::ALL
        .iter()
        .map(|s| format!("{s} {}", corpus.in_split(*s).count()))
        .collect();
    println!("ok: {} examples ({})", corpus.len(), counts.join(", "));
    println!("content hash: {}", corpus_hash(&corpus));
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> Result<()> {
    let space = load_space(&args.space)?;
    let labels = match (&args.labels_column, args.one_hot) {
        (Some(column), false) => CsvLabels::Delimited {
            column: column.clone(),
            sep: args.sep,
        },
        (None, true) => CsvLabels::OneHot {
            columns: space.labels.clone(),
        },
        _ => bail!(ConfigError(
            "pass either --labels-column or --one-hot".into()
        )),
    };
    let label_map = match &args.label_map {
        Some(p) => Some(LabelMap::from_json(
            &std::fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?,
        )?),
        None => None,
    };
    let options = CsvOptions {
        id_column: args.id_column,
        text_column: args.text_column,
        labels,
        split_column: args.split_column,
        label_map,
    };
    let file = File::open(&args.csv).with_context(|| format!("opening {}", args.csv.display()))?;
    let corpus = convert_csv(file, &space, &options, &args.csv.display().to_string())?;
    write_corpus(&corpus, &args.out)?;
    println!("wrote {} examples to {}", corpus.len(), args.out.display());
    Ok(())
}
