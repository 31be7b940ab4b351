//! End-to-end orchestration over a run directory:
//!
//! ```text
//! runs/<name>/
//!   config            resolved configuration (canonical text)
//!   corpus/{train,dev,test}.tsv
//!   checkpoints/      baseline-seed<N>.nkcp, student-<mode>-seed<N>.nkcp
//!   datastore.nkds
//!   neighbors.nknc
//!   reports/          CSV tables and text summaries
//! ```
//!
//! Every artifact is deterministic given the configuration: re-running a
//! stage overwrites files with identical bytes. Derived artifacts embed the
//! CRC of their inputs (checkpoints carry the corpus CRC, the neighbor cache
//! carries the datastore CRC) and mismatches are hard errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use dnkd_core::corpus::BOS_TOKEN;
use dnkd_core::corpus::{make_corpus, CorpusError, ParallelCorpus};
use dnkd_core::datastore::{Datastore, DatastoreError, KeyRecord, Origin};
use dnkd_core::distill::{grad_norm_report, DistillError, Regime};
use dnkd_core::seq2seq::{extract_keys, forward, LossMode, Parameters, Seq2SeqError};
use dnkd_core::teacher::{teacher_distribution, NeighborCache, TeacherError, Temperature};
use dnkd_core::train::{evaluate, train_from, EvalMetrics, TrainError, TrainOptions, TrainOutcome};

use crate::config::{ExperimentConfig, SweepAxis};
use crate::formats::{
    corpus_crc, load_checkpoint, load_corpus, load_datastore, load_neighbor_cache, save_checkpoint,
    save_corpus, save_datastore, save_neighbor_cache, FormatError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input {path}: {hint}")]
    MissingInput { path: PathBuf, hint: &'static str },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "neighbor cache was built from datastore {cache:#010x}, but the datastore file is {datastore:#010x}"
    )]
    CacheChecksumMismatch { cache: u32, datastore: u32 },
    #[error("neighbor cache holds k = {cache_k}, configuration needs k = {needed}")]
    CacheTooSmall { cache_k: usize, needed: usize },
    #[error("the {which} corpus is empty")]
    EmptyCorpus { which: &'static str },
    #[error("datastore has {entries} entries but the corpus has {expected} target tokens")]
    CountMismatch { entries: usize, expected: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
    #[error(transparent)]
    CorpusGen(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] DatastoreError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), source }
}

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config")
    }

    pub fn corpus_path(&self, split: &str) -> PathBuf {
        self.root.join("corpus").join(format!("{split}.tsv"))
    }

    pub fn checkpoint_path(&self, label: &str, seed: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("{label}-seed{seed}.nkcp"))
    }

    pub fn datastore_path(&self) -> PathBuf {
        self.root.join("datastore.nkds")
    }

    pub fn cache_path(&self) -> PathBuf {
        self.root.join("neighbors.nknc")
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    fn ensure_layout(&self) -> Result<(), PipelineError> {
        for dir in [
            self.root.clone(),
            self.root.join("corpus"),
            self.root.join("checkpoints"),
            self.root.join("reports"),
        ] {
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        Ok(())
    }
}

/// Write the canonical resolved config into the run directory.
pub fn write_resolved_config(run: &RunDir, cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    run.ensure_layout()?;
    let path = run.config_path();
    fs::write(&path, cfg.to_text()).map_err(|e| io_err(&path, e))
}

fn write_file(path: &Path, content: &str) -> Result<(), PipelineError> {
    fs::write(path, content).map_err(|e| io_err(path, e))
}

fn load_split(run: &RunDir, split: &str) -> Result<ParallelCorpus, PipelineError> {
    let path = run.corpus_path(split);
    if !path.exists() {
        return Err(PipelineError::MissingInput { path, hint: "run gen-corpus first" });
    }
    Ok(load_corpus(&path)?)
}

fn load_checkpoint_or_hint(
    path: &Path,
    hint: &'static str,
) -> Result<(Parameters, BTreeMap<String, String>), PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingInput { path: path.to_path_buf(), hint });
    }
    Ok(load_checkpoint(path)?)
}

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub train_target_tokens: usize,
    pub train_crc: u32,
}

pub fn gen_corpus_stage(
    run: &RunDir,
    cfg: &ExperimentConfig,
) -> Result<CorpusSummary, PipelineError> {
    write_resolved_config(run, cfg)?;
    let splits = make_corpus(&cfg.task)?;
    save_corpus(&splits.train, &run.corpus_path("train"))?;
    save_corpus(&splits.dev, &run.corpus_path("dev"))?;
    save_corpus(&splits.test, &run.corpus_path("test"))?;
    Ok(CorpusSummary {
        train_sentences: splits.train.len(),
        dev_sentences: splits.dev.len(),
        test_sentences: splits.test.len(),
        train_target_tokens: splits.train.total_target_tokens(),
        train_crc: corpus_crc(&splits.train),
    })
}

// ---------------------------------------------------------------------------
// training stages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SeedEval {
    pub seed: u64,
    pub metrics: EvalMetrics,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub per_seed: Vec<SeedEval>,
    pub median_bleu: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl EvalReport {
    fn build(label: &str, per_seed: Vec<SeedEval>) -> Self {
        let bleus: Vec<f64> = per_seed.iter().map(|s| s.metrics.bleu).collect();
        Self { label: label.to_string(), per_seed, median_bleu: median(&bleus) }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,test_bleu,token_accuracy,exact_match,best_epoch\n");
        for s in &self.per_seed {
            out.push_str(&format!(
                "{},{:.4},{:.6},{:.6},{}\n",
                s.seed,
                s.metrics.bleu,
                s.metrics.token_accuracy,
                s.metrics.exact_match,
                s.best_epoch
            ));
        }
        out.push_str(&format!("median,{:.4},,,\n", self.median_bleu));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} test evaluation\n", self.label);
        for s in &self.per_seed {
            out.push_str(&format!(
                "seed {:>3}: BLEU {:7.3}  token-acc {:.4}  exact {:.4}  (best epoch {})\n",
                s.seed,
                s.metrics.bleu,
                s.metrics.token_accuracy,
                s.metrics.exact_match,
                s.best_epoch
            ));
        }
        out.push_str(&format!("median BLEU: {:.3}\n", self.median_bleu));
        out
    }
}

fn history_csv(outcome: &TrainOutcome) -> String {
    let mut out = String::from("epoch,train_loss,dev_loss,dev_bleu\n");
    for e in &outcome.history {
        out.push_str(&format!(
            "{},{:.8},{:.8},{:.4}\n",
            e.epoch, e.train_loss, e.dev_loss, e.dev_bleu
        ));
    }
    out
}

fn train_opts(cfg: &ExperimentConfig, mode: LossMode) -> Result<TrainOptions, PipelineError> {
    Ok(TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        mode,
        weights: cfg.weights()?,
        k: cfg.k,
    })
}

struct SeedRun {
    seed: u64,
    outcome: TrainOutcome,
    metrics: EvalMetrics,
}

/// Train one model per seed (in parallel) and evaluate on the test split.
fn run_seeds(
    cfg: &ExperimentConfig,
    mode: LossMode,
    init_from: Option<&BTreeMap<u64, Parameters>>,
    corpora: &Corpora,
    cache: Option<&NeighborCache>,
) -> Result<Vec<SeedRun>, PipelineError> {
    let opts = train_opts(cfg, mode)?;
    let results: Vec<Result<SeedRun, PipelineError>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let init = match init_from {
                Some(map) => map
                    .get(&seed)
                    .cloned()
                    .ok_or(PipelineError::Other(format!("no baseline for seed {seed}")))?,
                None => Parameters::init(&cfg.model_config(seed))?,
            };
            let outcome = train_from(init, &corpora.train, &corpora.dev, cache, &opts)?;
            let metrics = evaluate(&outcome.params, &corpora.test)?;
            Ok(SeedRun { seed, outcome, metrics })
        })
        .collect();
    results.into_iter().collect()
}

struct Corpora {
    train: ParallelCorpus,
    dev: ParallelCorpus,
    test: ParallelCorpus,
}

fn load_corpora(run: &RunDir) -> Result<Corpora, PipelineError> {
    let train = load_split(run, "train")?;
    if train.is_empty() {
        return Err(PipelineError::EmptyCorpus { which: "train" });
    }
    Ok(Corpora { train, dev: load_split(run, "dev")?, test: load_split(run, "test")? })
}

fn checkpoint_meta(
    label: &str,
    mode: LossMode,
    corpus_crc: u32,
    best_epoch: usize,
) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("label".to_string(), label.to_string());
    meta.insert("mode".to_string(), mode.to_string());
    meta.insert("corpus_crc32".to_string(), format!("{corpus_crc:#010x}"));
    meta.insert("best_epoch".to_string(), best_epoch.to_string());
    meta
}

fn persist_runs(
    run: &RunDir,
    label: &str,
    mode: LossMode,
    corpus_crc: u32,
    seed_runs: &[SeedRun],
) -> Result<EvalReport, PipelineError> {
    for sr in seed_runs {
        let meta = checkpoint_meta(label, mode, corpus_crc, sr.outcome.best_epoch);
        save_checkpoint(&sr.outcome.params, &meta, &run.checkpoint_path(label, sr.seed))?;
        write_file(
            &run.report_path(&format!("history-{label}-seed{}.csv", sr.seed)),
            &history_csv(&sr.outcome),
        )?;
    }
    let report = EvalReport::build(
        label,
        seed_runs
            .iter()
            .map(|sr| SeedEval {
                seed: sr.seed,
                metrics: sr.metrics,
                best_epoch: sr.outcome.best_epoch,
            })
            .collect(),
    );
    write_file(&run.report_path(&format!("{label}.csv")), &report.to_csv())?;
    write_file(&run.report_path(&format!("{label}.txt")), &report.to_text())?;
    Ok(report)
}

/// Train the cross-entropy baseline for every seed; the first seed's
/// checkpoint later feeds the datastore build.
pub fn baseline_stage(run: &RunDir, cfg: &ExperimentConfig) -> Result<EvalReport, PipelineError> {
    write_resolved_config(run, cfg)?;
    let corpora = load_corpora(run)?;
    let crc = corpus_crc(&corpora.train);
    let seed_runs = run_seeds(cfg, LossMode::Ce, None, &corpora, None)?;
    persist_runs(run, "baseline", LossMode::Ce, crc, &seed_runs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreSummary {
    pub entries: usize,
    pub expected_tokens: usize,
    pub crc: u32,
}

/// Extract keys from the first-seed baseline checkpoint over the training
/// corpus and persist the datastore. The entry count must equal the corpus'
/// target-token total.
pub fn build_store_stage(
    run: &RunDir,
    cfg: &ExperimentConfig,
) -> Result<StoreSummary, PipelineError> {
    write_resolved_config(run, cfg)?;
    let train = load_split(run, "train")?;
    if train.is_empty() {
        return Err(PipelineError::EmptyCorpus { which: "train" });
    }
    let seed = cfg.seeds[0];
    let (params, _) = load_checkpoint_or_hint(
        &run.checkpoint_path("baseline", seed),
        "run train-baseline first",
    )?;
    let records = extract_keys(&params, &train)?;
    let mut store = Datastore::new(params.config.hidden_dim, params.config.vocab_size_tgt)?;
    store.ingest(&records)?;
    let expected = train.total_target_tokens();
    if store.len() != expected {
        return Err(PipelineError::CountMismatch { entries: store.len(), expected });
    }
    let crc = save_datastore(&store, &run.datastore_path())?;
    Ok(StoreSummary { entries: store.len(), expected_tokens: expected, crc })
}

/// Build a neighbor cache by querying the datastore with its own keys, in
/// parallel per position; the assembled cache is identical to the
/// sequential computation.
pub fn parallel_neighbor_cache(
    store: &Datastore,
    records: &[KeyRecord],
    k: usize,
    self_exclude: bool,
) -> Result<NeighborCache, PipelineError> {
    let results: Result<Vec<(Origin, Vec<(f64, u32)>)>, DatastoreError> = records
        .par_iter()
        .map(|rec| {
            let exclude = if self_exclude { Some(rec.origin) } else { None };
            store.query(&rec.key, k, exclude).map(|ns| (rec.origin, ns.pairs()))
        })
        .collect();
    let mut positions = BTreeMap::new();
    for (origin, pairs) in results? {
        if positions.insert(origin, pairs).is_some() {
            return Err(PipelineError::Other(format!("duplicate origin {origin}")));
        }
    }
    Ok(NeighborCache::from_parts(k, 0, positions))
}

fn store_records(store: &Datastore) -> Vec<KeyRecord> {
    (0..store.len())
        .map(|i| KeyRecord {
            origin: store.origin(i),
            key: store.key(i).to_vec(),
            value: store.value(i),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheSummary {
    pub positions: usize,
    pub k: usize,
    pub datastore_crc: u32,
}

pub fn build_cache_stage(
    run: &RunDir,
    cfg: &ExperimentConfig,
) -> Result<CacheSummary, PipelineError> {
    write_resolved_config(run, cfg)?;
    let path = run.datastore_path();
    if !path.exists() {
        return Err(PipelineError::MissingInput { path, hint: "run build-store first" });
    }
    let (store, store_crc) = load_datastore(&path)?;
    let records = store_records(&store);
    let mut cache = parallel_neighbor_cache(&store, &records, cfg.k, cfg.self_exclude)?;
    cache.set_store_checksum(store_crc);
    save_neighbor_cache(&cache, &run.cache_path())?;
    Ok(CacheSummary { positions: cache.len(), k: cache.k(), datastore_crc: store_crc })
}

/// Load datastore CRC and neighbor cache, enforcing the provenance chain.
fn load_cache_checked(run: &RunDir, needed_k: usize) -> Result<NeighborCache, PipelineError> {
    let ds_path = run.datastore_path();
    if !ds_path.exists() {
        return Err(PipelineError::MissingInput { path: ds_path, hint: "run build-store first" });
    }
    let (_, store_crc) = load_datastore(&ds_path)?;
    let cache_path = run.cache_path();
    if !cache_path.exists() {
        return Err(PipelineError::MissingInput {
            path: cache_path,
            hint: "run build-cache first",
        });
    }
    let cache = load_neighbor_cache(&cache_path)?;
    if cache.store_checksum() != store_crc {
        return Err(PipelineError::CacheChecksumMismatch {
            cache: cache.store_checksum(),
            datastore: store_crc,
        });
    }
    if cache.k() < needed_k {
        return Err(PipelineError::CacheTooSmall { cache_k: cache.k(), needed: needed_k });
    }
    Ok(cache)
}

/// Train students (NKD or DNKD) against the frozen datastore/cache.
pub fn student_stage(
    run: &RunDir,
    cfg: &ExperimentConfig,
    mode: LossMode,
) -> Result<EvalReport, PipelineError> {
    write_resolved_config(run, cfg)?;
    let corpora = load_corpora(run)?;
    let crc = corpus_crc(&corpora.train);
    let cache = load_cache_checked(run, cfg.k)?;
    let init_from = if cfg.init_from_baseline {
        let mut map = BTreeMap::new();
        for &seed in &cfg.seeds {
            let (params, _) = load_checkpoint_or_hint(
                &run.checkpoint_path("baseline", seed),
                "run train-baseline first (init_from_baseline is on)",
            )?;
            map.insert(seed, params);
        }
        Some(map)
    } else {
        None
    };
    let label = format!("student-{mode}");
    let seed_runs = run_seeds(cfg, mode, init_from.as_ref(), &corpora, Some(&cache))?;
    persist_runs(run, &label, mode, crc, &seed_runs)
}

/// Evaluate an arbitrary checkpoint on the test split.
pub fn evaluate_stage(run: &RunDir, checkpoint: &Path) -> Result<EvalMetrics, PipelineError> {
    let test = load_split(run, "test")?;
    let (params, _) = load_checkpoint_or_hint(checkpoint, "train a model first")?;
    let metrics = evaluate(&params, &test)?;
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".to_string());
    let text = format!(
        "checkpoint {}\nBLEU {:.3}\ntoken accuracy {:.4}\nexact match {:.4}\n",
        stem, metrics.bleu, metrics.token_accuracy, metrics.exact_match
    );
    run.ensure_layout()?;
    write_file(&run.report_path(&format!("evaluate-{stem}.txt")), &text)?;
    write_file(
        &run.report_path(&format!("evaluate-{stem}.csv")),
        &format!(
            "bleu,token_accuracy,exact_match\n{:.4},{:.6},{:.6}\n",
            metrics.bleu, metrics.token_accuracy, metrics.exact_match
        ),
    )?;
    Ok(metrics)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub value: f64,
    pub seed: u64,
    pub bleu: Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    /// (value, median BLEU over succeeded seeds), per value.
    pub medians: Vec<(f64, Option<f64>)>,
    /// Mean teacher entropy over all cached positions, per τ value (τ axis
    /// only).
    pub mean_entropy: Vec<(f64, f64)>,
}

fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::K => c.k = value as usize,
        SweepAxis::Beta => c.beta = value,
        SweepAxis::Tau => c.tau = value,
    }
    c
}

/// One full student run per (value, seed); failures are recorded per cell
/// and the sweep continues. The neighbor cache is reused unchanged across
/// β and τ values (retrieval does not depend on them) and truncated per
/// position for smaller k.
pub fn sweep_stage(
    run: &RunDir,
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<SweepReport, PipelineError> {
    if values.len() < 2 {
        return Err(PipelineError::Other("a sweep needs at least 2 values".to_string()));
    }
    write_resolved_config(run, cfg)?;
    let corpora = load_corpora(run)?;
    let max_k = match axis {
        SweepAxis::K => values.iter().fold(0usize, |m, &v| m.max(v as usize)),
        _ => cfg.k,
    };
    let cache = load_cache_checked(run, max_k)?;

    let grid: Vec<(f64, u64)> =
        values.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(value, seed)| {
            let cell_cfg = apply_axis(cfg, axis, value);
            let bleu = (|| -> Result<f64, PipelineError> {
                let opts = train_opts(&cell_cfg, LossMode::Dnkd)?;
                let init = Parameters::init(&cell_cfg.model_config(seed))?;
                let outcome = train_from(init, &corpora.train, &corpora.dev, Some(&cache), &opts)?;
                Ok(evaluate(&outcome.params, &corpora.test)?.bleu)
            })()
            .map_err(|e| e.to_string());
            SweepCell { value, seed, bleu }
        })
        .collect();

    let medians: Vec<(f64, Option<f64>)> = values
        .iter()
        .map(|&v| {
            let ok: Vec<f64> = cells
                .iter()
                .filter(|c| c.value == v)
                .filter_map(|c| c.bleu.as_ref().ok().copied())
                .collect();
            (v, if ok.is_empty() { None } else { Some(median(&ok)) })
        })
        .collect();

    let mean_entropy = if axis == SweepAxis::Tau {
        values
            .iter()
            .map(|&tau_value| {
                let tau = Temperature::new(tau_value).map_err(PipelineError::Teacher)?;
                let mut total = 0.0;
                let mut count = 0usize;
                for (_, pairs) in cache.iter() {
                    let used = &pairs[..cfg.k.min(pairs.len())];
                    let dist = teacher_distribution(used, tau, cfg.task.vocab_size_tgt)?;
                    total += dnkd_core::teacher::entropy(&dist);
                    count += 1;
                }
                Ok((tau_value, total / count as f64))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?
    } else {
        Vec::new()
    };

    let report = SweepReport { axis, cells, medians, mean_entropy };
    write_file(&run.report_path(&format!("sweep-{axis}.csv")), &sweep_csv(cfg, &report))?;
    Ok(report)
}

fn sweep_csv(cfg: &ExperimentConfig, report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# sweep axis: {}\n", report.axis));
    out.push_str(&format!(
        "# fixed: k={} beta={} tau={} lambda={} alpha={}\n",
        cfg.k, cfg.beta, cfg.tau, cfg.lambda, cfg.alpha
    ));
    if report.axis == SweepAxis::K {
        out.push_str(
            "# full-scale reference (not reproducible at this scale): BLEU peaks at 24.79 with k = 8\n",
        );
    }
    out.push_str("value,seed,test_bleu,status\n");
    for c in &report.cells {
        match &c.bleu {
            Ok(b) => out.push_str(&format!("{},{},{:.4},ok\n", c.value, c.seed, b)),
            Err(e) => {
                out.push_str(&format!("{},{},,failed: {}\n", c.value, c.seed, e.replace(',', ";")))
            }
        }
    }
    for (v, m) in &report.medians {
        match m {
            Some(m) => out.push_str(&format!("{},median,{:.4},ok\n", v, m)),
            None => out.push_str(&format!("{},median,,all seeds failed\n", v)),
        }
    }
    for (v, h) in &report.mean_entropy {
        out.push_str(&format!("{},mean_teacher_entropy,{:.6},ok\n", v, h));
    }
    out
}

// ---------------------------------------------------------------------------
// gradient report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GradPositionReport {
    pub origin: Origin,
    pub regime: Regime,
    pub p_target_teacher: f64,
    pub nontarget_ratio: Option<f64>,
    /// (token, is_target, nkd_norm, dnkd_norm), top 8 by decoupled norm.
    pub top: Vec<(u32, bool, f64, f64)>,
    /// max |DNKD/NKD − β/(1−p_t)| over non-target-term gradients.
    pub max_ratio_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReportSummary {
    pub positions: Vec<GradPositionReport>,
}

/// Sample training positions from each regime and compare per-token
/// gradient norms of the coupled vs decoupled distillation losses.
pub fn grad_report_stage(
    run: &RunDir,
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    per_regime: usize,
) -> Result<GradReportSummary, PipelineError> {
    write_resolved_config(run, cfg)?;
    let train = load_split(run, "train")?;
    let cache = load_cache_checked(run, cfg.k)?;
    let default_path = run.checkpoint_path("baseline", cfg.seeds[0]);
    let ckpt_path = checkpoint.unwrap_or(&default_path);
    let (params, _) = load_checkpoint_or_hint(ckpt_path, "run train-baseline first")?;
    let w = cfg.weights()?;

    let mut boosted = 0usize;
    let mut suppressed = 0usize;
    let mut positions = Vec::new();
    'outer: for (si, pair) in train.pairs.iter().enumerate() {
        let mut prefix = Vec::with_capacity(pair.tgt.len() + 1);
        prefix.push(BOS_TOKEN);
        prefix.extend_from_slice(&pair.tgt);
        let trace = forward(&params, &pair.src, &prefix)?;
        for (j, &target) in pair.tgt.iter().enumerate() {
            let origin = Origin::new(si as u32, j as u32);
            let Some(pairs) = cache.get(origin) else { continue };
            let used = &pairs[..cfg.k.min(pairs.len())];
            let teacher = teacher_distribution(used, w.tau, cfg.task.vocab_size_tgt)?;
            let report = grad_norm_report(&teacher, &trace.logits[j], target, &w)?;
            let want = match report.regime {
                Regime::NonTargetBoosted => &mut boosted,
                Regime::NonTargetSuppressed => &mut suppressed,
            };
            if *want >= per_regime {
                continue;
            }
            *want += 1;
            let mut max_ratio_error = 0.0f64;
            if let Some(ratio) = report.nontarget_ratio {
                for row in &report.rows {
                    if !row.is_target && row.nkd_nontarget_norm > 1e-300 {
                        let r = row.dnkd_nontarget_norm / row.nkd_nontarget_norm;
                        max_ratio_error = max_ratio_error.max((r - ratio).abs());
                    }
                }
            }
            positions.push(GradPositionReport {
                origin,
                regime: report.regime,
                p_target_teacher: report.p_target_teacher,
                nontarget_ratio: report.nontarget_ratio,
                top: report
                    .rows
                    .iter()
                    .take(8)
                    .map(|r| (r.token, r.is_target, r.nkd_norm, r.dnkd_norm))
                    .collect(),
                max_ratio_error,
            });
            if boosted >= per_regime && suppressed >= per_regime {
                break 'outer;
            }
        }
    }

    let summary = GradReportSummary { positions };
    write_file(&run.report_path("grad-report.csv"), &grad_report_csv(&summary))?;
    write_file(&run.report_path("grad-report.txt"), &grad_report_text(cfg, &summary))?;
    Ok(summary)
}

fn grad_report_csv(summary: &GradReportSummary) -> String {
    let mut out = String::from("sentence,position,token_id,nkd_norm,dnkd_norm,regime\n");
    for p in &summary.positions {
        for &(token, _, nkd, dnkd) in &p.top {
            out.push_str(&format!(
                "{},{},{},{:.10},{:.10},{}\n",
                p.origin.sentence, p.origin.position, token, nkd, dnkd, p.regime
            ));
        }
    }
    out
}

fn grad_report_text(cfg: &ExperimentConfig, summary: &GradReportSummary) -> String {
    let mut out = format!(
        "per-token gradient norms of the distillation losses (top 8 per position)\nbeta = {}\n\n",
        cfg.beta
    );
    for p in &summary.positions {
        out.push_str(&format!(
            "position {} regime {} p_t^teacher {:.4} ratio {} (max deviation {:.2e})\n",
            p.origin,
            p.regime,
            p.p_target_teacher,
            match p.nontarget_ratio {
                Some(r) => format!("{r:.4}"),
                None => "n/a".to_string(),
            },
            p.max_ratio_error
        ));
        for &(token, is_target, nkd, dnkd) in &p.top {
            out.push_str(&format!(
                "  token {:>4}{} nkd {:.8} dnkd {:.8}\n",
                token,
                if is_target { " (target)" } else { "         " },
                nkd,
                dnkd
            ));
        }
        out.push('\n');
    }
    out
}
