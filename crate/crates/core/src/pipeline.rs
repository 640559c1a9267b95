//! Staged end-to-end runs over a run directory.
//!
//! Every stage reads its inputs from artifacts of earlier stages in the run
//! directory and writes its own, so any stage can be rerun in isolation.
//! `manifest.json` records the resolved config, artifact digests, counts and
//! timings.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::community::{self, Partition, SpinglassConfig};
use crate::convgraph::{self, AssignmentMap, ConversationGraph};
use crate::corpus::{self, InputFormat, LoadOptions, Message, MessageStore};
use crate::doi::{self, DoiModel};
use crate::error::{Error, Result};
use crate::eval::{self, GroundTruth, MatchMode};
use crate::matrix::{CscMatrix, DenseMatrix};
use crate::netanalysis::{self, AnalysisConfig, Lexicon, Metadata};
use crate::nmf::{self, BucketList, KSelection, NmfConfig};
use crate::rng::substream_seed;
use crate::textprep::{self, PrepConfig, Preprocessor, Vocabulary};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// "jsonl" or "csv"; inferred from the corpus extension when absent.
    pub format: Option<String>,
    pub skip_malformed: bool,
    pub ground_truth: Option<PathBuf>,
    /// `doi,label` CSV attached to the DoI model.
    pub doi_labels: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub neighbors: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub kinship: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorizeConfig {
    #[serde(flatten)]
    pub nmf: NmfConfig,
    pub k_grid: Vec<usize>,
    pub holdout_fraction: f64,
    /// Terms listed per bucket and per DoI.
    pub top_terms: usize,
}

impl Default for FactorizeConfig {
    fn default() -> Self {
        FactorizeConfig {
            nmf: NmfConfig::default(),
            k_grid: vec![2, 4, 6, 8, 10, 12, 15, 20],
            holdout_fraction: 0.1,
            top_terms: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMode {
    #[default]
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignConfig {
    pub mode: AssignMode,
    /// Relative bucket threshold in soft mode.
    pub theta: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            mode: AssignMode::Soft,
            theta: 0.5,
        }
    }
}

impl AssignConfig {
    pub fn effective_theta(&self) -> f64 {
        match self.mode {
            AssignMode::Hard => 1.0,
            AssignMode::Soft => self.theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub enabled: bool,
    pub match_mode: MatchMode,
    pub baseline_trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            enabled: true,
            match_mode: MatchMode::Soft,
            baseline_trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub enabled: bool,
    #[serde(flatten)]
    pub analysis: AnalysisConfig,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            enabled: true,
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub prep: PrepConfig,
    pub factorize: FactorizeConfig,
    pub spinglass: SpinglassConfig,
    pub assign: AssignConfig,
    pub eval: EvalConfig,
    pub analyze: AnalyzeConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Stage seeds derived from the global seed.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.factorize.nmf.seed = substream_seed(self.seed, "nmf");
        c.spinglass.seed = substream_seed(self.seed, "spinglass");
        c.analyze.analysis.assortativity.seed = substream_seed(self.seed, "rewire");
        c
    }

    /// Every configured input path must exist.
    pub fn check_paths(&self) -> Result<()> {
        let p = &self.paths;
        let inputs = [
            &p.corpus,
            &p.ground_truth,
            &p.doi_labels,
            &p.lexicon,
            &p.neighbors,
            &p.groups,
            &p.items,
            &p.kinship,
            &self.prep.stopwords_path,
        ];
        for path in inputs.into_iter().flatten() {
            if !path.exists() {
                return Err(Error::Config(format!("input {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.prep.validate()?;
        self.factorize.nmf.validate()?;
        self.spinglass.validate()?;
        if self.factorize.k_grid.is_empty() {
            return Err(Error::Config("factorize.k_grid must not be empty".into()));
        }
        if !(self.factorize.holdout_fraction > 0.0 && self.factorize.holdout_fraction < 0.5) {
            return Err(Error::Config("factorize.holdout_fraction must lie in (0, 0.5)".into()));
        }
        if !(self.assign.theta > 0.0 && self.assign.theta <= 1.0) {
            return Err(Error::Config("assign.theta must lie in (0, 1]".into()));
        }
        if self.factorize.top_terms == 0 {
            return Err(Error::Config("factorize.top_terms must be >= 1".into()));
        }
        if self.eval.baseline_trials == 0 {
            return Err(Error::Config("eval.baseline_trials must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Prep,
    Factorize,
    Graph,
    Detect,
    Assign,
    Evaluate,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Prep,
        Stage::Factorize,
        Stage::Graph,
        Stage::Detect,
        Stage::Assign,
        Stage::Evaluate,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Prep => "prep",
            Stage::Factorize => "factorize",
            Stage::Graph => "graph",
            Stage::Detect => "detect",
            Stage::Assign => "assign",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// "ok", "skipped" or "failed".
    pub status: String,
    pub artifacts: Vec<ArtifactRecord>,
    pub counts: BTreeMap<String, Value>,
    pub millis: u128,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(dir.join(MANIFEST))?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|s| s.stage != rec.stage);
        self.stages.push(rec);
        self.stages.sort_by_key(|s| s.stage);
    }

    /// Artifact path → digest over all recorded stages.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| s.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())))
            .collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path)?;
    std::io::copy(&mut f, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

/// Output of one stage before it is recorded.
struct StageOutput {
    artifacts: Vec<&'static str>,
    counts: BTreeMap<String, Value>,
    skipped: bool,
}

impl StageOutput {
    fn new(artifacts: Vec<&'static str>) -> Self {
        StageOutput {
            artifacts,
            counts: BTreeMap::new(),
            skipped: false,
        }
    }

    fn count(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.counts.insert(key.to_owned(), value.into());
        self
    }

    fn skipped(reason: &str) -> Self {
        let mut s = StageOutput::new(Vec::new());
        s.skipped = true;
        s.counts.insert("reason".into(), reason.into());
        s
    }
}

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::MissingArtifact(p))
    }
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(require(dir, name)?)?))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    Ok(serde_json::from_reader(open(dir, name)?)?)
}

fn read_messages(dir: &Path) -> Result<Vec<Message>> {
    Ok(corpus::read_messages(open(dir, "messages.jsonl")?, InputFormat::Jsonl, LoadOptions::default(), "messages.jsonl")?.messages)
}

fn read_vocabulary(dir: &Path) -> Result<Vocabulary> {
    let mut entries = Vec::new();
    for (i, line) in open(dir, "vocabulary.tsv")?.lines().enumerate().skip(1) {
        let line = line?;
        let parsed = line.split_once('\t').and_then(|(t, df)| Some((t.to_owned(), df.parse().ok()?)));
        entries.push(parsed.ok_or_else(|| Error::parse("vocabulary.tsv", i + 1, "expected term<TAB>df"))?);
    }
    Ok(Vocabulary::new(entries))
}

fn read_lines(dir: &Path, name: &str) -> Result<Vec<String>> {
    open(dir, name)?.lines().map(|l| l.map_err(Error::from)).collect()
}

#[derive(Serialize, Deserialize)]
struct BucketLine {
    message_id: String,
    buckets: BucketList,
}

fn read_buckets(dir: &Path) -> Result<AssignmentMap> {
    let mut out = AssignmentMap::new();
    for (i, line) in open(dir, "buckets.jsonl")?.lines().enumerate() {
        let line = line?;
        let b: BucketLine = serde_json::from_str(&line).map_err(|e| Error::parse("buckets.jsonl", i + 1, e))?;
        out.insert(b.message_id, b.buckets);
    }
    Ok(out)
}

fn read_model(dir: &Path) -> Result<DoiModel> {
    read_json(dir, "dois.json")
}

/// Runs one stage against `dir`, updating the manifest.
pub fn run_stage(stage: Stage, config: &RunConfig, dir: &Path) -> Result<StageRecord> {
    let config = config.resolved();
    config.validate()?;
    config.check_paths()?;
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::read(dir).unwrap_or_else(|_| Manifest {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: config.seed,
        config: config.clone(),
        stages: Vec::new(),
    });
    manifest.seed = config.seed;
    manifest.config = config.clone();
    let start = Instant::now();
    let result = execute(stage, &config, dir);
    let millis = start.elapsed().as_millis();
    let rec = match result {
        Ok(out) => {
            let mut artifacts = Vec::with_capacity(out.artifacts.len());
            for name in &out.artifacts {
                let p = dir.join(name);
                artifacts.push(ArtifactRecord {
                    path: (*name).to_owned(),
                    sha256: sha256_file(&p)?,
                    bytes: fs::metadata(&p)?.len(),
                });
            }
            StageRecord {
                stage,
                status: if out.skipped { "skipped" } else { "ok" }.into(),
                artifacts,
                counts: out.counts,
                millis,
                error: None,
            }
        }
        Err(e) => {
            manifest.record(StageRecord {
                stage,
                status: "failed".into(),
                artifacts: Vec::new(),
                counts: BTreeMap::new(),
                millis,
                error: Some(e.to_string()),
            });
            manifest.write(dir)?;
            return Err(Error::Stage {
                stage: stage.name(),
                source: Box::new(e),
            });
        }
    };
    log::info!("stage {} {} in {} ms", stage.name(), rec.status, millis);
    manifest.record(rec.clone());
    manifest.write(dir)?;
    Ok(rec)
}

/// All stages in order; stops at the first failure.
pub fn run_pipeline(config: &RunConfig) -> Result<Manifest> {
    let dir = config.paths.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(dir.join(MANIFEST));
    for stage in Stage::ALL {
        run_stage(stage, config, &dir)?;
    }
    Manifest::read(&dir)
}

fn execute(stage: Stage, c: &RunConfig, dir: &Path) -> Result<StageOutput> {
    match stage {
        Stage::Ingest => ingest(c, dir),
        Stage::Prep => prep(c, dir),
        Stage::Factorize => factorize(c, dir),
        Stage::Graph => graph(c, dir),
        Stage::Detect => detect(c, dir),
        Stage::Assign => assign(c, dir),
        Stage::Evaluate => evaluate(c, dir),
        Stage::Analyze => analyze(c, dir),
    }
}

fn ingest(c: &RunConfig, dir: &Path) -> Result<StageOutput> {
    let path = c
        .paths
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("paths.corpus is required".into()))?;
    let format = match &c.paths.format {
        Some(f) => f.parse()?,
        None => InputFormat::from_path(path)
            .ok_or_else(|| Error::Config(format!("cannot infer corpus format of {}", path.display())))?,
    };
    let report = corpus::load_messages(
        path,
        format,
        LoadOptions {
            skip_malformed: c.paths.skip_malformed,
        },
    )?;
    let dyads = corpus::build_dyads(&report.messages);
    let stats = corpus::corpus_stats(&report.messages, &dyads, |t| textprep::raw_tokens(t).len())?;
    let mut out = create(dir, "messages.jsonl")?;
    corpus::write_jsonl(&report.messages, &mut out)?;
    out.flush()?;
    write_json(dir, "corpus_stats.json", &stats)?;
    Ok(StageOutput::new(vec!["messages.jsonl", "corpus_stats.json"])
        .count("messages", report.messages.len())
        .count("dyads", dyads.len())
        .count("self_messages_skipped", report.self_messages_skipped)
        .count("malformed_lines", report.malformed_lines))
}

fn prep(c: &RunConfig, dir: &Path) -> Result<StageOutput> {
    let messages = read_messages(dir)?;
    let pre = Preprocessor::from_config(c.prep.clone())?;
    let docs: Vec<(String, Vec<String>)> = messages.iter().map(|m| (m.id.clone(), pre.terms(&m.text))).collect();
    let terms: Vec<Vec<String>> = docs.iter().map(|d| d.1.clone()).collect();
    let vocab = textprep::build_vocabulary(&terms, pre.config())?;
    let tdm = textprep::vectorize(&docs, &vocab);
    if tdm.matrix.ncols() == 0 {
        return Err(Error::Degenerate("no message retains an in-vocabulary term".into()));
    }
    let mut v = create(dir, "vocabulary.tsv")?;
    writeln!(v, "term\tdf")?;
    for i in 0..vocab.len() {
        writeln!(v, "{}\t{}", vocab.term(i), vocab.doc_freq(i))?;
    }
    v.flush()?;
    let mut g = create(dir, "tdm.txt")?;
    tdm.matrix.write_triplets(&mut g)?;
    g.flush()?;
    let mut cols = create(dir, "columns.txt")?;
    for id in &tdm.columns {
        writeln!(cols, "{id}")?;
    }
    cols.flush()?;
    let info = json!({
        "vocabulary": vocab.len(),
        "columns": tdm.columns.len(),
        "dropped": tdm.dropped.len(),
        "drop_fraction": tdm.drop_fraction(),
        "dropped_ids": tdm.dropped,
    });
    write_json(dir, "prep.json", &info)?;
    Ok(StageOutput::new(vec!["vocabulary.tsv", "tdm.txt", "columns.txt", "prep.json"])
        .count("vocabulary", vocab.len())
        .count("columns", tdm.columns.len())
        .count("drop_fraction", tdm.drop_fraction()))
}

fn factorize(c: &RunConfig, dir: &Path) -> Result<StageOutput> {
    let gamma = CscMatrix::read_triplets(open(dir, "tdm.txt")?, "tdm.txt")?;
    let max_k = gamma.nrows().min(gamma.ncols()).saturating_sub(1);
    let grid: Vec<usize> = c.factorize.k_grid.iter().copied().filter(|&k| k >= 1 && k <= max_k).collect();
    if grid.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no k in {:?} is below min(m, n) = {}",
            c.factorize.k_grid,
            max_k + 1
        )));
    }
    let selection: KSelection = if grid.len() == 1 {
        KSelection {
            k: grid[0],
            errors: Vec::new(),
            heldout_entries: 0,
            heldout_norm: 0.0,
        }
    } else {
        nmf::select_k(&gamma, &grid, c.factorize.holdout_fraction, &c.factorize.nmf)?
    };
    let f = nmf::factorize(&gamma, selection.k, &c.factorize.nmf)?;
    write_json(dir, "k_selection.json", &selection)?;
    let mut w = create(dir, "w.txt")?;
    f.w.write_triplets(0.0, &mut w)?;
    w.flush()?;
    let mut h = create(dir, "h.txt")?;
    f.h.write_triplets(0.0, &mut h)?;
    h.flush()?;
    let info = json!({
        "k": f.k,
        "iterations": f.iterations,
        "final_error": f.final_error,
        "relative_error": f.final_error / gamma.frobenius_norm_sq().sqrt(),
        "objective_trace": f.objective_trace,
    });
    write_json(dir, "factorization.json", &info)?;
    Ok(StageOutput::new(vec!["k_selection.json", "w.txt", "h.txt", "factorization.json"])
        .count("k", f.k)
        .count("iterations", f.iterations)
        .count("final_error", f.final_error))
}

fn graph(c: &RunConfig, dir: &Path) -> Result<StageOutput> {
    let h = DenseMatrix::read_triplets(open(dir, "h.txt")?, "h.txt")?;
    let w = DenseMatrix::read_triplets(open(dir, "w.txt")?, "w.txt")?;
    let columns = read_lines(dir, "columns.txt")?;
    if columns.len() != h.cols() {
        return Err(Error::Degenerate(format!("H has {} columns for {} messages", h.cols(), columns.len())));
    }
    let vocab = read_vocabulary(dir)?;
    let lists = nmf::bucket_assignments(&h, c.assign.effective_theta())?;
    let mut out = create(dir, "buckets.jsonl")?;
    for (id, buckets) in columns.iter().zip(&lists) {
        serde_json::to_writer(
            &mut out,
            &BucketLine {
                message_id: id.clone(),
                buckets: buckets.clone(),
            },
        )?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let assignments: AssignmentMap = columns.into_iter().zip(lists).collect();
    let messages = read_messages(dir)?;
    let dyads = corpus::build_dyads(&messages);
    let store = MessageStore::new(messages)?;
    let transitions = convgraph::extract_transitions(&dyads, &store);
    let k = h.rows();
    let g = convgraph::build_graph(&transitions, &assignments, k)?;
    let top: Vec<Vec<String>> = (0..k)
        .map(|b| {
            nmf::top_terms(&w, &vocab, b, c.factorize.top_terms.min(vocab.len()))
                .map(|t| t.into_iter().map(|(term, _)| term).collect())
        })
        .collect::<Result<_>>()?;
    let mut e = create(dir, "graph_edges.tsv")?;
    g.write_edges(&mut e)?;
    e.flush()?;
    let mut n = create(dir, "graph_nodes.tsv")?;
    g.write_nodes(&top, &mut n)?;
    n.flush()?;
    Ok(StageOutput::new(vec!["buckets.jsonl", "graph_edges.tsv", "graph_nodes.tsv"])
        .count("transitions", transitions.len())
        .count("skipped_transitions", g.skipped)
        .count("edges", g.edge_count())
        .count("total_weight", g.total_weight()))
}

fn read_graph(dir: &Path) -> Result<ConversationGraph> {
    ConversationGraph::read_tsv(open(dir, "graph_edges.tsv")?, open(dir, "graph_nodes.tsv")?)
}

fn detect(c: &RunConfig, dir: &Path) -> Result<StageOutput> {
    let g = read_graph(dir)?;
    let u = community::symmetrize(&g);
    let p = community::spinglass(&u, &c.spinglass)?;
    let q = community::modularity(&u, &p.membership)?;
    let mut out = create(dir, "partition.tsv")?;
    p.write_tsv(&mut out)?;
    out.flush()?;
    write_json(
        dir,
        "communities.json",
        &json!({
            "count": p.count,
            "hamiltonian": p.hamiltonian,
            "modularity": q,
            "seed": p.seed,
            "uphill_moves": p.uphill_moves,
        }),
    )?;
    Ok(StageOutput::new(vec!["partition.tsv", "communities.json"])
        .count("communities", p.count)
        .count("modularity", q))
}

fn assign(c: &RunConfig, dir: &Path) -> Result<StageOutput> {
    let partition = Partition::read_tsv(open(dir, "partition.tsv")?)?;
    let w = DenseMatrix::read_triplets(open(dir, "w.txt")?, "w.txt")?;
    let vocab = read_vocabulary(dir)?;
    let mut model = doi::form_dois(&partition, &w, &vocab, c.factorize.top_terms)?;
    if let Some(path) = &c.paths.doi_labels {
        model.set_labels(&DoiModel::read_labels(File::open(path)?)?)?;
    }
    let buckets = read_buckets(dir)?;
    let assignments = doi::assign_messages(&buckets, &model)?;
    write_json(dir, "dois.json", &model)?;
    let mut out = create(dir, "assignments.jsonl")?;
    doi::write_assignments(&assignments, &model, &mut out)?;
    out.flush()?;
    let multi = assignments.iter().filter(|a| a.dois.len() > 1).count();
    Ok(StageOutput::new(vec!["dois.json", "assignments.jsonl"])
        .count("dois", model.len())
        .count("messages", assignments.len())
        .count("multi_assigned", multi))
}

/// Labels of the model, or labels voted from the ground truth when the
/// model carries none.
fn labeled_model(dir: &Path) -> Result<DoiModel> {
    let mut model = read_model(dir)?;
    let labels_path = dir.join("doi_labels.csv");
    if model.dois.iter().all(|d| d.label.is_none()) && labels_path.exists() {
        model.set_labels(&DoiModel::read_labels(File::open(labels_path)?)?)?;
    }
    Ok(model)
}

fn evaluate(c: &RunConfig, dir: &Path) -> Result<StageOutput> {
    let Some(truth_path) = c.paths.ground_truth.as_ref().filter(|_| c.eval.enabled) else {
        return Ok(StageOutput::skipped("no ground truth or evaluation disabled"));
    };
    let truth = GroundTruth::read_csv(File::open(truth_path)?)?;
    let assignments = doi::read_assignments(open(dir, "assignments.jsonl")?)?;
    let mut model = read_model(dir)?;
    let mut artifacts = vec!["match_report.json"];
    if model.dois.iter().all(|d| d.label.is_none()) {
        let voted = eval::majority_labels(&assignments, &truth);
        model.set_labels(&voted)?;
        let mut w = csv::Writer::from_writer(File::create(dir.join("doi_labels.csv"))?);
        w.write_record(["doi", "label"])?;
        for (id, label) in &voted {
            w.write_record([id.to_string(), label.clone()])?;
        }
        w.flush()?;
        artifacts.push("doi_labels.csv");
    }
    let lists = eval::label_lists(&assignments, &model);
    let report = eval::match_assignments(&lists, &truth, c.eval.match_mode)?;
    let alphabet: Vec<String> = truth.alphabet().into_iter().collect();
    let sizes: Vec<usize> = lists.values().map(Vec::len).filter(|&n| n > 0).collect();
    let baseline = eval::random_baseline(
        &truth,
        &alphabet,
        &sizes,
        c.eval.baseline_trials,
        substream_seed(c.seed, "baseline"),
        c.eval.match_mode,
    )?;
    let kappa = if truth.annotators.len() >= 2 { Some(truth.kappa()?) } else { None };
    let labels: BTreeMap<usize, String> = (0..model.len()).map(|d| (d, model.label(d))).collect();
    write_json(
        dir,
        "match_report.json",
        &json!({
            "mode": c.eval.match_mode,
            "algorithm": report,
            "random_baseline": baseline,
            "kappa": kappa,
            "doi_labels": labels,
        }),
    )?;
    let mut out = StageOutput::new(artifacts)
        .count("perfect", report.perfect)
        .count("precision", report.precision)
        .count("scored", report.scored);
    out.counts.insert("baseline_perfect".into(), baseline.perfect.into());
    Ok(out)
}

fn analyze(c: &RunConfig, dir: &Path) -> Result<StageOutput> {
    if !c.analyze.enabled {
        return Ok(StageOutput::skipped("analysis disabled"));
    }
    let messages = read_messages(dir)?;
    let assignments = doi::read_assignments(open(dir, "assignments.jsonl")?)?;
    let model = labeled_model(dir)?;
    let read_sets = |p: &Option<PathBuf>| -> Result<Option<BTreeMap<String, std::collections::BTreeSet<String>>>> {
        p.as_ref().map(|p| Metadata::read_memberships(File::open(p)?)).transpose()
    };
    let metadata = Metadata {
        neighbors: read_sets(&c.paths.neighbors)?,
        groups: read_sets(&c.paths.groups)?,
        items: read_sets(&c.paths.items)?,
        kinship: c
            .paths
            .kinship
            .as_ref()
            .map(|p| Metadata::read_kinship(File::open(p)?))
            .transpose()?,
    };
    let lexicon = c
        .paths
        .lexicon
        .as_ref()
        .map(|p| Lexicon::parse(&fs::read_to_string(p)?))
        .transpose()?;
    let report = netanalysis::analyze(&messages, &assignments, &model, &metadata, lexicon.as_ref(), &c.analyze.analysis)?;
    write_json(dir, "analysis.json", &report)?;
    report.write_tsvs(dir)?;
    Ok(StageOutput::new(vec![
        "analysis.json",
        "fig3_distributions.tsv",
        "fig4_evolution.tsv",
        "fig5_reciprocity.tsv",
        "fig6_lorenz.tsv",
        "fig7_assortativity.tsv",
    ])
    .count("users", report.users)
    .count("dyads", report.dyads))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

/// One-page text summary of a run directory.
pub fn report(dir: &Path) -> Result<String> {
    let manifest = Manifest::read(dir)?;
    let selection: KSelection = read_json(dir, "k_selection.json")?;
    let model = labeled_model(dir)?;
    let mut s = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(s, "run: {} (seed {})", dir.display(), manifest.seed);
    for st in &manifest.stages {
        let _ = writeln!(s, "  {:<10} {:<8} {:>7} ms", st.stage.name(), st.status, st.millis);
    }
    let _ = writeln!(s, "\nselected k = {}", selection.k);
    for (k, e) in &selection.errors {
        let _ = writeln!(s, "  k = {k:<4} held-out error {e:.4}");
    }
    let _ = writeln!(s, "\n{} domains of interaction", model.len());
    for d in &model.dois {
        let terms: Vec<&str> = d.top_terms.iter().map(|(t, _)| t.as_str()).collect();
        let _ = writeln!(s, "  [{}] {} buckets {:?}: {}", d.id, model.label(d.id), d.buckets, terms.join(", "));
    }
    let ran = |stage: Stage| manifest.stages.iter().any(|s| s.stage == stage && s.status == "ok");
    if ran(Stage::Evaluate) {
        let m: Value = read_json(dir, "match_report.json")?;
        let _ = writeln!(s, "\nmatch ({} mode)", m["mode"].as_str().unwrap_or("?"));
        for (name, key) in [("algorithm", "algorithm"), ("random", "random_baseline")] {
            let r = &m[key];
            let _ = writeln!(
                s,
                "  {name:<9} perfect {:.3}  first {:.3}  partial {:.3}  none {:.3}  precision {:.3}",
                r["perfect"].as_f64().unwrap_or(f64::NAN),
                r["first"].as_f64().unwrap_or(f64::NAN),
                r["partial"].as_f64().unwrap_or(f64::NAN),
                r["none"].as_f64().unwrap_or(f64::NAN),
                r["precision"].as_f64().unwrap_or(f64::NAN),
            );
        }
        if let Some(k) = m["kappa"].as_f64() {
            let _ = writeln!(s, "  annotator kappa {k:.3}");
        }
    }
    if ran(Stage::Analyze) {
        let a: netanalysis::AnalysisReport = read_json(dir, "analysis.json")?;
        let _ = writeln!(
            s,
            "\nnetwork: {} users, {} dyads, {} messages, reciprocity {}",
            a.users,
            a.dyads,
            a.messages,
            fmt_opt(a.reciprocity)
        );
        let _ = writeln!(
            s,
            "  {:<12} {:>6} {:>6} {:>6} {:>6} {:>6} {:>7} {:>7} {:>6} {:>7} {:>7}",
            "doi", "nodes", "dyads", "msgs", "recip", "share", "sigma_n", "conv", "gini", "assort", "stderr"
        );
        for d in &a.dois {
            let _ = writeln!(
                s,
                "  {:<12} {:>6.3} {:>6.3} {:>6.3} {:>6} {:>6.3} {:>7.3} {:>7.2} {:>6} {:>7} {:>7}",
                d.label,
                d.coverage.nodes,
                d.coverage.dyads,
                d.coverage.messages,
                fmt_opt(d.reciprocity),
                d.tie_share,
                d.strength.sigma_n,
                d.strength.conv_len,
                fmt_opt(d.lorenz.as_ref().map(|l| l.gini)),
                fmt_opt(d.assortativity.as_ref().map(|x| x.r)),
                fmt_opt(d.assortativity.as_ref().map(|x| x.stderr)),
            );
        }
        if let Some(fit) = &a.reciprocity_fit {
            let _ = writeln!(s, "  reciprocity vs length: slope {:.4}, intercept {:.4}", fit.slope, fit.intercept);
        }
    }
    Ok(s)
}
