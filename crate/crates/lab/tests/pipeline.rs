//! Pipeline integration tests over temporary run directories.

use std::fs;
use std::path::Path;

use tempfile::TempDir;

use dnkd_core::seq2seq::LossMode;
use dnkd_lab::config::{ExperimentConfig, SweepAxis};
use dnkd_lab::formats::{load_checkpoint, load_corpus};
use dnkd_lab::pipeline::{
    baseline_stage, build_cache_stage, build_store_stage, gen_corpus_stage, grad_report_stage,
    student_stage, sweep_stage, PipelineError, RunDir,
};

/// Small but non-trivial configuration: quick to train, still ambiguous.
fn small_cfg() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.task.num_train = 150;
    cfg.task.num_dev = 30;
    cfg.task.num_test = 30;
    cfg.epochs = 2;
    cfg.seeds = vec![1];
    cfg
}

fn run_stages(root: &Path, cfg: &ExperimentConfig) {
    let run = RunDir::new(root);
    gen_corpus_stage(&run, cfg).unwrap();
    baseline_stage(&run, cfg).unwrap();
    build_store_stage(&run, cfg).unwrap();
    build_cache_stage(&run, cfg).unwrap();
}

#[test]
fn stages_require_their_inputs() {
    let tmp = TempDir::new().unwrap();
    let run = RunDir::new(tmp.path().join("run"));
    let cfg = small_cfg();
    // no corpus yet
    assert!(matches!(baseline_stage(&run, &cfg).unwrap_err(), PipelineError::MissingInput { .. }));
    gen_corpus_stage(&run, &cfg).unwrap();
    // no baseline checkpoint yet
    assert!(matches!(
        build_store_stage(&run, &cfg).unwrap_err(),
        PipelineError::MissingInput { .. }
    ));
    baseline_stage(&run, &cfg).unwrap();
    // no datastore yet
    assert!(matches!(
        build_cache_stage(&run, &cfg).unwrap_err(),
        PipelineError::MissingInput { .. }
    ));
    build_store_stage(&run, &cfg).unwrap();
    // no cache yet
    assert!(matches!(
        student_stage(&run, &cfg, LossMode::Dnkd).unwrap_err(),
        PipelineError::MissingInput { .. }
    ));
}

#[test]
fn empty_corpus_cannot_build_a_store() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("run");
    let cfg = small_cfg();
    run_stages(&root, &cfg);
    let run = RunDir::new(&root);
    fs::write(run.corpus_path("train"), "").unwrap();
    assert!(matches!(
        build_store_stage(&run, &cfg).unwrap_err(),
        PipelineError::EmptyCorpus { which: "train" }
    ));
}

#[test]
fn datastore_count_matches_independent_token_count() {
    let tmp = TempDir::new().unwrap();
    let run = RunDir::new(tmp.path().join("run"));
    let cfg = small_cfg();
    gen_corpus_stage(&run, &cfg).unwrap();
    baseline_stage(&run, &cfg).unwrap();
    let summary = build_store_stage(&run, &cfg).unwrap();
    // independent counting pass over the on-disk file
    let text = fs::read_to_string(run.corpus_path("train")).unwrap();
    let mut tokens = 0usize;
    for line in text.lines() {
        let tgt = line.split('\t').nth(1).unwrap();
        tokens += tgt.split_whitespace().count();
    }
    assert_eq!(summary.entries, tokens);
}

#[test]
fn cache_checksum_mismatch_is_a_hard_error() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("run");
    let cfg = small_cfg();
    run_stages(&root, &cfg);
    let run = RunDir::new(&root);
    // rebuild the datastore from a different checkpoint: new CRC, stale cache
    let mut other = cfg.clone();
    other.seeds = vec![99];
    baseline_stage(&run, &other).unwrap();
    build_store_stage(&run, &other).unwrap();
    let err = student_stage(&run, &cfg, LossMode::Nkd).unwrap_err();
    assert!(matches!(err, PipelineError::CacheChecksumMismatch { .. }), "got {err}");
}

#[test]
fn cache_k_must_cover_config_k() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("run");
    let mut cfg = small_cfg();
    cfg.k = 2;
    run_stages(&root, &cfg);
    let run = RunDir::new(&root);
    let mut bigger = cfg.clone();
    bigger.k = 8;
    assert!(matches!(
        student_stage(&run, &bigger, LossMode::Dnkd).unwrap_err(),
        PipelineError::CacheTooSmall { cache_k: 2, needed: 8 }
    ));
    // a smaller k than cached is fine: uses the nearest prefix
    let mut smaller = cfg.clone();
    smaller.k = 1;
    student_stage(&run, &smaller, LossMode::Dnkd).unwrap();
}

#[test]
fn pipeline_is_bitwise_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_cfg();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for root in [&a, &b] {
        run_stages(root, &cfg);
        student_stage(&RunDir::new(root), &cfg, LossMode::Dnkd).unwrap();
    }
    for rel in [
        "config",
        "corpus/train.tsv",
        "corpus/dev.tsv",
        "corpus/test.tsv",
        "checkpoints/baseline-seed1.nkcp",
        "checkpoints/student-dnkd-seed1.nkcp",
        "datastore.nkds",
        "neighbors.nknc",
        "reports/baseline.csv",
        "reports/student-dnkd.csv",
        "reports/history-student-dnkd-seed1.csv",
    ] {
        let x = fs::read(a.join(rel)).unwrap();
        let y = fs::read(b.join(rel)).unwrap();
        assert_eq!(x, y, "artifact {rel} differs between identical runs");
    }
}

#[test]
fn rerunning_overwrites_with_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("run");
    let cfg = small_cfg();
    run_stages(&root, &cfg);
    let before = fs::read(root.join("datastore.nkds")).unwrap();
    let run = RunDir::new(&root);
    build_store_stage(&run, &cfg).unwrap();
    let after = fs::read(root.join("datastore.nkds")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn lambda_one_student_matches_baseline_trajectory() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("run");
    let mut cfg = small_cfg();
    cfg.epochs = 3;
    run_stages(&root, &cfg);
    let run = RunDir::new(&root);
    let mut collapse = cfg.clone();
    collapse.lambda = 1.0;
    student_stage(&run, &collapse, LossMode::Dnkd).unwrap();

    let (base, _) = load_checkpoint(&run.checkpoint_path("baseline", 1)).unwrap();
    let (student, _) = load_checkpoint(&run.checkpoint_path("student-dnkd", 1)).unwrap();
    assert_eq!(base, student, "λ=1 trajectory must match the CE baseline bitwise");
    let h_base = fs::read_to_string(run.report_path("history-baseline-seed1.csv")).unwrap();
    let h_student = fs::read_to_string(run.report_path("history-student-dnkd-seed1.csv")).unwrap();
    assert_eq!(h_base, h_student);
}

#[test]
fn sweep_reuses_cache_and_reports_entropy() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("run");
    let mut cfg = small_cfg();
    cfg.epochs = 1;
    run_stages(&root, &cfg);
    let run = RunDir::new(&root);
    let cache_before = fs::read(root.join("neighbors.nknc")).unwrap();
    let report = sweep_stage(&run, &cfg, SweepAxis::Tau, &[1.0, 100.0]).unwrap();
    assert_eq!(fs::read(root.join("neighbors.nknc")).unwrap(), cache_before);
    assert_eq!(report.medians.len(), 2);
    assert_eq!(report.mean_entropy.len(), 2);
    let h1 = report.mean_entropy[0].1;
    let h100 = report.mean_entropy[1].1;
    assert!(
        h100 > h1,
        "mean teacher entropy must rise with temperature: tau=1 gives {h1}, tau=100 gives {h100}"
    );
    let csv = fs::read_to_string(run.report_path("sweep-tau.csv")).unwrap();
    assert!(csv.contains("mean_teacher_entropy"));

    // k sweep has the reference header line and two value rows
    let kreport = sweep_stage(&run, &cfg, SweepAxis::K, &[1.0, 8.0]).unwrap();
    assert_eq!(kreport.medians.len(), 2);
    let kcsv = fs::read_to_string(run.report_path("sweep-k.csv")).unwrap();
    assert!(kcsv.contains("24.79"));
    assert!(kcsv.lines().filter(|l| l.ends_with(",ok") && l.contains("median")).count() >= 1);
}

#[test]
fn sweep_records_cell_failures_and_continues() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("run");
    let mut cfg = small_cfg();
    cfg.epochs = 1;
    run_stages(&root, &cfg);
    let run = RunDir::new(&root);
    // k = 20 exceeds the cached k = 8: that cell fails, k = 2 succeeds
    let report = sweep_stage(&run, &cfg, SweepAxis::K, &[2.0, 20.0]);
    match report {
        Err(PipelineError::CacheTooSmall { .. }) => {} // max k validated up front
        Ok(_) => panic!("k beyond the cache should not silently succeed"),
        Err(e) => panic!("unexpected error {e}"),
    }
    // beta = -1 is an invalid weight: recorded as a failed cell
    let report = sweep_stage(&run, &cfg, SweepAxis::Beta, &[0.3, -1.0]).unwrap();
    let failed: Vec<_> = report.cells.iter().filter(|c| c.bleu.is_err()).collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().all(|c| c.value == -1.0));
    assert!(report.medians.iter().any(|(v, m)| *v == 0.3 && m.is_some()));
    assert!(report.medians.iter().any(|(v, m)| *v == -1.0 && m.is_none()));
}

#[test]
fn grad_report_covers_regimes_present() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("run");
    let cfg = small_cfg();
    run_stages(&root, &cfg);
    let run = RunDir::new(&root);
    let summary = grad_report_stage(&run, &cfg, None, 3).unwrap();
    assert!(!summary.positions.is_empty());
    for p in &summary.positions {
        assert!(p.top.len() <= 8);
        assert!(p.max_ratio_error <= 1e-9, "ratio deviation {}", p.max_ratio_error);
    }
    let csv = fs::read_to_string(run.report_path("grad-report.csv")).unwrap();
    assert!(csv.starts_with("sentence,position,token_id,nkd_norm,dnkd_norm,regime"));
}

#[test]
fn zero_epoch_baseline_equals_untrained_evaluation() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("run");
    let mut cfg = small_cfg();
    cfg.epochs = 0;
    let run = RunDir::new(&root);
    gen_corpus_stage(&run, &cfg).unwrap();
    let report = baseline_stage(&run, &cfg).unwrap();
    // untrained model evaluated directly must agree
    let test = load_corpus(&run.corpus_path("test")).unwrap();
    let params = dnkd_core::seq2seq::Parameters::init(&cfg.model_config(cfg.seeds[0])).unwrap();
    let direct = dnkd_core::train::evaluate(&params, &test).unwrap();
    assert_eq!(report.per_seed[0].metrics, direct);
    assert_eq!(report.per_seed[0].best_epoch, 0);
}
