use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use doiminer_core::pipeline::{self, AssignMode, RunConfig, Stage, StageRecord};
use doiminer_core::synth::{self, SynthSpec, Topology};
use doiminer_core::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "doiminer", version, about = "Find domains of interaction in dyadic conversation corpora")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Log verbosity (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding all artifacts.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Corpus format: jsonl or csv.
    #[arg(long, global = true)]
    format: Option<String>,
    #[arg(long, global = true)]
    skip_malformed: bool,
    #[arg(long, global = true)]
    stopwords: Option<PathBuf>,
    #[arg(long, global = true)]
    ground_truth: Option<PathBuf>,
    #[arg(long, global = true)]
    doi_labels: Option<PathBuf>,
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    /// Candidate ranks, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long, global = true)]
    ngram_max: Option<usize>,
    /// Bucket assignment: hard or soft.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<AssignMode>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    restarts: Option<usize>,
    #[arg(long, global = true)]
    no_eval: bool,
    #[arg(long, global = true)]
    no_analysis: bool,
}

fn parse_mode(s: &str) -> std::result::Result<AssignMode, String> {
    match s {
        "hard" => Ok(AssignMode::Hard),
        "soft" => Ok(AssignMode::Soft),
        _ => Err(format!("expected hard or soft, got {s:?}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the corpus.
    Ingest,
    /// Build the vocabulary and term-document matrix.
    Prep,
    /// Select k and factorize the term-document matrix.
    Factorize,
    /// Assign buckets and build the conversation graph.
    Graph,
    /// Partition the conversation graph into communities.
    Detect,
    /// Form DoIs and assign messages to them.
    Assign,
    /// Score assignments against ground truth.
    Evaluate,
    /// Network analyses per DoI.
    Analyze,
    /// All stages in order.
    Run,
    /// Print a summary of a run directory.
    Report {
        /// Run directory; defaults to the configured output directory.
        dir: Option<PathBuf>,
    },
    /// Write the resolved configuration as TOML.
    Config,
    /// Generate a synthetic corpus with planted domains.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML generator spec; flags override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for corpus.jsonl, labels.csv and manifest.json.
    #[arg(long = "dir", short = 'd')]
    dir: PathBuf,
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    dyads: Option<usize>,
    #[arg(long)]
    reciprocation: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    mean_conv_len: Option<f64>,
    /// Route opening status messages to this many hub users.
    #[arg(long)]
    star_hubs: Option<usize>,
    #[arg(long)]
    status_decay: Option<f64>,
    #[arg(long)]
    survival_bias: bool,
    #[arg(long)]
    quasi_natural: bool,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(s) = o.seed {
        c.seed = s;
    }
    if let Some(p) = &o.out {
        c.paths.output_dir = p.clone();
    }
    if c.paths.output_dir.as_os_str().is_empty() {
        c.paths.output_dir = PathBuf::from("run");
    }
    if o.corpus.is_some() {
        c.paths.corpus = o.corpus.clone();
    }
    if o.format.is_some() {
        c.paths.format = o.format.clone();
    }
    c.paths.skip_malformed |= o.skip_malformed;
    if o.stopwords.is_some() {
        c.prep.stopwords_path = o.stopwords.clone();
    }
    if o.ground_truth.is_some() {
        c.paths.ground_truth = o.ground_truth.clone();
    }
    if o.doi_labels.is_some() {
        c.paths.doi_labels = o.doi_labels.clone();
    }
    if o.lexicon.is_some() {
        c.paths.lexicon = o.lexicon.clone();
    }
    if let Some(g) = &o.k_grid {
        c.factorize.k_grid = g.clone();
    }
    if let Some(n) = o.ngram_max {
        c.prep.ngram_max = n;
    }
    if let Some(m) = o.mode {
        c.assign.mode = m;
    }
    if let Some(t) = o.theta {
        c.assign.theta = t;
    }
    if let Some(r) = o.restarts {
        c.spinglass.restarts = r;
    }
    if o.no_eval {
        c.eval.enabled = false;
    }
    if o.no_analysis {
        c.analyze.enabled = false;
    }
    c.validate()?;
    Ok(c)
}

fn print_record(rec: &StageRecord) {
    let counts = serde_json::to_string(&rec.counts).unwrap_or_default();
    println!("{:<10} {:<8} {:>7} ms  {}", rec.stage.name(), rec.status, rec.millis, counts);
}

fn synth_command(args: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => SynthSpec::default(),
    };
    if let Some(v) = args.domains {
        spec.domains = v;
    }
    if let Some(v) = args.users {
        spec.users = v;
    }
    if let Some(v) = args.dyads {
        spec.dyads = v;
    }
    if let Some(v) = args.reciprocation {
        spec.reciprocation = v;
    }
    if let Some(v) = args.overlap {
        spec.overlap = v;
    }
    if let Some(v) = args.mean_conv_len {
        spec.mean_conv_len = v;
    }
    if let Some(h) = args.star_hubs {
        spec.topology = Topology::StatusStar { hubs: h };
    }
    if args.status_decay.is_some() {
        spec.status_decay = args.status_decay;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.survival_bias |= args.survival_bias;
    spec.quasi_natural |= args.quasi_natural;
    let corpus = synth::generate(&spec)?;
    corpus.write_files(&args.dir)?;
    println!(
        "wrote {} messages in {} dyads to {}",
        corpus.stats.message_count,
        corpus.stats.dyad_count,
        args.dir.display()
    );
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let stage = match &cli.command {
        Command::Synth(args) => return synth_command(args, cli.overrides.seed),
        Command::Ingest => Stage::Ingest,
        Command::Prep => Stage::Prep,
        Command::Factorize => Stage::Factorize,
        Command::Graph => Stage::Graph,
        Command::Detect => Stage::Detect,
        Command::Assign => Stage::Assign,
        Command::Evaluate => Stage::Evaluate,
        Command::Analyze => Stage::Analyze,
        Command::Run => {
            let config = load_config(cli)?;
            let manifest = pipeline::run_pipeline(&config)?;
            for rec in &manifest.stages {
                print_record(rec);
            }
            println!();
            print!("{}", pipeline::report(&config.paths.output_dir)?);
            return Ok(());
        }
        Command::Report { dir } => {
            let dir = match dir {
                Some(d) => d.clone(),
                None => load_config(cli)?.paths.output_dir,
            };
            print!("{}", pipeline::report(&dir)?);
            return Ok(());
        }
        Command::Config => {
            print!("{}", load_config(cli)?.to_toml()?);
            return Ok(());
        }
    };
    let config = load_config(cli)?;
    let rec = pipeline::run_stage(stage, &config, &config.paths.output_dir)?;
    print_record(&rec);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
