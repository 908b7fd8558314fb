mod workdir;

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use leveler_core::corpus::{self, Split};
use leveler_core::harness::{self, BenchEnv, RunSpec, ScatterKind};
use leveler_core::metrics;
use leveler_core::prompting::PromptTemplates;
use leveler_core::providers::{
    self, CassetteTransport, Embedder, HttpEmbedder, HttpTransport, LexicalEmbedder, MockScript, OfflineTransport,
    Provider, ProviderConfig, RecordingTransport, Transport,
};
use leveler_core::textproc::DEFAULT_SMOOTHING;
use leveler_service::{AppState, ServiceConfig, Workbench};
use serde::Deserialize;
use tracing_subscriber::EnvFilter;

use workdir::{Workdir, FREQ_FILE, MODEL_FILE};

#[derive(Parser)]
#[command(name = "leveler", version, about = "Readability-controlled rewriting workbench")]
struct Cli {
    /// Workbench directory holding corpus, bank and runs.
    #[arg(long, global = true, env = "LEVELER_WORKDIR", default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus preparation.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Score a text file ("-" reads stdin).
    Score {
        file: PathBuf,
        /// Directory with model.txt and freq.tsv; defaults to the workdir model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fit the scorer to a labeled archive and write it to the workdir model.
    Calibrate {
        archive: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
        smoothing: f64,
    },
    /// Benchmark runs.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Export a run's scatter data.
    Scatter {
        #[arg(long)]
        run: String,
        /// Also render score and shift plots as SVG.
        #[arg(long)]
        svg: bool,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// JSON array of provider configs `/generate` may use. Defaults to
        /// the offline oracle and echo mocks.
        #[arg(long)]
        providers: Option<PathBuf>,
        /// Browser origin allowed by CORS; any origin when omitted.
        #[arg(long)]
        origin: Option<String>,
        #[arg(long, default_value_t = 30)]
        snapshot_secs: u64,
        #[command(flatten)]
        net: NetArgs,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Read a JSONL archive, scoring unscored articles.
    Ingest { archive: PathBuf },
    /// Split topic sets into train/valid/test.
    Split {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write ordered pairs for every split.
    Pairs,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run a benchmark spec.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Print a saved run's report table.
    Report {
        #[arg(long)]
        run: String,
        #[arg(long)]
        json: bool,
    },
}

/// Where provider HTTP traffic goes. Without flags, no request leaves the
/// process.
#[derive(Args, Clone, Default)]
struct NetArgs {
    /// Allow live network calls.
    #[arg(long)]
    live: bool,
    /// Append live exchanges to this cassette.
    #[arg(long, requires = "live")]
    record: Option<PathBuf>,
    /// Replay exchanges from this cassette.
    #[arg(long, conflicts_with = "live")]
    cassette: Option<PathBuf>,
}

impl NetArgs {
    fn transport(&self) -> Result<Arc<dyn Transport>> {
        Ok(match (&self.cassette, self.live, &self.record) {
            (Some(path), _, _) => Arc::new(CassetteTransport::load(path)?),
            (None, true, Some(path)) => Arc::new(RecordingTransport::new(Arc::new(HttpTransport), path.clone())),
            (None, true, None) => Arc::new(HttpTransport),
            (None, false, _) => Arc::new(OfflineTransport),
        })
    }
}

/// A run spec plus an optional embedding service. Without one, embedding
/// metrics use the built-in lexical embedder.
#[derive(Deserialize)]
struct BenchFile {
    #[serde(flatten)]
    spec: RunSpec,
    #[serde(default)]
    embedding: Option<ProviderConfig>,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let wd = Workdir::new(&cli.workdir);
    match cli.command {
        Command::Corpus(c) => corpus_cmd(&wd, c),
        Command::Score { file, model } => {
            let scorer = match model {
                Some(dir) => workdir::load_scorer(&dir)?,
                None => wd.scorer()?,
            };
            let text = if file.as_os_str() == "-" {
                io::read_to_string(io::stdin())?
            } else {
                fs::read_to_string(&file).with_context(|| file.display().to_string())?
            };
            let report = scorer.score(&text)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Calibrate { archive, out, smoothing } => {
            let records = corpus::read_records(open(&archive)?)?;
            let (freq, cal) = corpus::fit_scorer(&records, smoothing)?;
            let out = out.unwrap_or_else(|| wd.model_dir());
            fs::create_dir_all(&out)?;
            fs::write(out.join(FREQ_FILE), freq.to_tsv())?;
            fs::write(out.join(MODEL_FILE), cal.model.to_string())?;
            println!("{}", serde_json::to_string_pretty(&cal)?);
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Bench(BenchCmd::Run { spec, net }) => bench_run(&wd, &spec, &net),
        Command::Bench(BenchCmd::Report { run, json }) => {
            let record = wd.runs().load(&run)?;
            let reports = record.reports();
            let mut out = io::stdout().lock();
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&reports)?)?;
            } else {
                metrics::write_reports_csv(&reports, &mut out)?;
            }
            Ok(())
        }
        Command::Scatter { run, svg, out } => scatter(&wd, &run, svg, out),
        Command::Serve {
            port,
            host,
            providers,
            origin,
            snapshot_secs,
            net,
        } => serve(&wd, &host, port, providers, origin, snapshot_secs, &net),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| path.display().to_string())?,
    ))
}

fn corpus_cmd(wd: &Workdir, c: CorpusCmd) -> Result<()> {
    match c {
        CorpusCmd::Ingest { archive } => {
            let scorer = wd.scorer()?;
            let ingested = corpus::ingest(open(&archive)?, &scorer)?;
            let path = wd.write_articles(&ingested.articles)?;
            let r = &ingested.report;
            for s in &r.skipped {
                eprintln!("warning: line {} (set {}, article {}): {}", s.line, s.set_id, s.article_id, s.reason);
            }
            println!(
                "{} records, {} articles in {} sets, {} skipped -> {}",
                r.records,
                r.articles,
                r.sets,
                r.warning_count(),
                path.display()
            );
        }
        CorpusCmd::Split { seed } => {
            let m = corpus::split_by_set(&wd.articles()?, seed)?;
            let path = wd.write_manifest(&m)?;
            println!(
                "{} train, {} valid, {} test sets -> {}",
                m.train.len(),
                m.valid.len(),
                m.test.len(),
                path.display()
            );
        }
        CorpusCmd::Pairs => {
            let articles = wd.articles()?;
            let m = wd.manifest()?;
            for split in [Split::Train, Split::Valid, Split::Test] {
                let pairs = corpus::pairs_for_split(&articles, &m, split);
                let path = wd.write_pairs(split, &pairs)?;
                println!("{split}: {} pairs -> {}", pairs.len(), path.display());
            }
        }
    }
    Ok(())
}

fn bench_run(wd: &Workdir, spec_path: &Path, net: &NetArgs) -> Result<()> {
    let file: BenchFile = serde_json::from_reader(open(spec_path)?).with_context(|| spec_path.display().to_string())?;
    let spec = file.spec;
    spec.validate()?;
    let transport = net.transport()?;
    let clients: Vec<Arc<dyn Provider>> = spec
        .providers
        .iter()
        .map(|c| providers::build_provider(c, transport.clone()))
        .collect::<Result<_, _>>()?;
    let embedder: Box<dyn Embedder> = match file.embedding {
        Some(cfg) => Box::new(HttpEmbedder::new(cfg, transport.clone())?),
        None => Box::new(LexicalEmbedder::default()),
    };
    let scorer = wd.scorer()?;
    let templates = PromptTemplates::bundled();
    let bank = wd.bank()?;
    let corpus = wd.corpus()?;
    let env = BenchEnv {
        scorer: &scorer,
        templates: &templates,
        embedder: Some(embedder.as_ref()),
        bank: &bank,
    };
    let record = harness::run_benchmark(&spec, &corpus, &clients, &env)?;
    let dir = wd.runs().save(&record)?;
    metrics::write_reports_csv(&record.reports(), io::stdout().lock())?;
    eprintln!("{} new candidates; run saved to {}", record.new_candidates, dir.display());
    Ok(())
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
        .collect()
}

fn scatter(wd: &Workdir, run_id: &str, svg: bool, out: Option<PathBuf>) -> Result<()> {
    let runs = wd.runs();
    let record = runs.load(run_id)?;
    let out = out.unwrap_or_else(|| runs.run_dir(run_id));
    fs::create_dir_all(&out)?;
    let series = harness::export_scatter(&record);
    let csv = out.join("scatter.csv");
    harness::write_scatter_csv(&series, File::create(&csv)?)?;
    println!("{}", csv.display());
    if svg {
        for s in &series {
            for (kind, name) in [(ScatterKind::Score, "score"), (ScatterKind::Shift, "shift")] {
                let path = out.join(format!("{}-{}-{name}.svg", slug(&s.provider), slug(&s.method.to_string())));
                fs::write(&path, harness::scatter_svg(s, kind))?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn default_providers() -> Vec<ProviderConfig> {
    vec![
        ProviderConfig::mock("oracle", MockScript::oracle()),
        ProviderConfig::mock("echo", MockScript::echo_source()),
    ]
}

fn serve(
    wd: &Workdir,
    host: &str,
    port: u16,
    providers: Option<PathBuf>,
    origin: Option<String>,
    snapshot_secs: u64,
    net: &NetArgs,
) -> Result<()> {
    let providers: Vec<ProviderConfig> = match providers {
        Some(p) => serde_json::from_reader(open(&p)?).with_context(|| p.display().to_string())?,
        None => default_providers(),
    };
    for p in &providers {
        p.validate()?;
    }
    if snapshot_secs == 0 {
        bail!("--snapshot-secs must be positive");
    }
    let wb = Workbench {
        scorer: wd.scorer()?,
        templates: PromptTemplates::bundled(),
        corpus: wd.corpus()?,
        bank: Arc::new(wd.bank()?),
        runs: wd.runs(),
        providers,
        transport: net.transport()?,
        embedder: Some(Arc::new(LexicalEmbedder::default())),
    };
    let config = ServiceConfig {
        snapshot_path: Some(wd.path("sessions.jsonl")),
        snapshot_interval: std::time::Duration::from_secs(snapshot_secs),
        cors_origin: origin,
        ..Default::default()
    };
    let state = AppState::new(wb, config);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        leveler_service::serve(listener, state).await?;
        anyhow::Ok(())
    })
}
