//! Self-check suites: decomposition identity, kNN oracle equivalence,
//! gradient fidelity, gradient-norm ratios, and teacher-distribution
//! properties. Each check carries its own independent oracle (brute-force
//! scan or central finite differences) and reports a pass/fail line.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dnkd_core::corpus::{ParallelCorpus, SentencePair};
use dnkd_core::datastore::{Datastore, Origin};
use dnkd_core::distill::{
    cross_entropy_smoothed, decomposition_check, dnkd_loss, grad_norm_report, nkd_loss,
    LossWeights, Regime,
};
use dnkd_core::seq2seq::{
    extract_keys, loss_and_grads, DistillContext, LossMode, ModelConfig, Parameters,
};
use dnkd_core::teacher::{
    entropy, precompute_neighbor_cache, teacher_distribution, SparseDistribution, Temperature,
};

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{}: {} ({:.2}s) — {}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.detail
        )
    }
}

fn outcome(name: &'static str, start: Instant, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn random_logits(rng: &mut ChaCha8Rng, v: usize) -> Vec<f64> {
    (0..v).map(|_| rng.random_range(-3.0..3.0)).collect()
}

fn random_teacher(rng: &mut ChaCha8Rng, v: u32) -> SparseDistribution {
    let k = rng.random_range(1..=8usize);
    let neighbors: Vec<(f64, u32)> =
        (0..k).map(|_| (rng.random_range(0.0..30.0), rng.random_range(0..v))).collect();
    let tau = Temperature::new(rng.random_range(1.0..100.0)).unwrap();
    teacher_distribution(&neighbors, tau, v).unwrap()
}

fn central_diff(f: impl Fn(&[f64]) -> f64, z: &[f64]) -> Vec<f64> {
    (0..z.len())
        .map(|i| {
            let mut zp = z.to_vec();
            zp[i] += FD_STEP;
            let mut zm = z.to_vec();
            zm[i] -= FD_STEP;
            (f(&zp) - f(&zm)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Decomposition identity KL(p‖s) = KL_b + (1 − p_t)·KL_nt over 1,000
/// random (teacher, logits, target) instances, V ∈ {2..64}.
pub fn check_eq6_identity() -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let mut max_residual = 0.0f64;
    for _ in 0..1000 {
        let v = rng.random_range(2..=64usize);
        let z = random_logits(&mut rng, v);
        let teacher = random_teacher(&mut rng, v as u32);
        let target = rng.random_range(0..v as u32);
        let r = decomposition_check(&teacher, &z, target).unwrap();
        max_residual = max_residual.max(r);
    }
    outcome(
        "decomposition identity",
        start,
        max_residual <= 1e-9,
        format!("max residual {max_residual:.3e} over 1000 instances (tolerance 1e-9)"),
    )
}

/// Exact top-k equivalence against a brute-force scan: 10,000 random 32-dim
/// entries (with duplicated keys to exercise the tie rule), 100 queries,
/// k = 8.
pub fn check_knn_oracle() -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let dim = 32;
    let mut store = Datastore::new(dim, 100).unwrap();
    let mut keys: Vec<Vec<f32>> = Vec::new();
    for i in 0..10_000u32 {
        let key: Vec<f32> = if i >= 9000 {
            // duplicate an earlier key: exact distance ties
            keys[rng.random_range(0..keys.len())].clone()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
        };
        store.add_entry(&key, i % 100, Origin::new(i, 0)).unwrap();
        keys.push(key);
    }
    let mut mismatches = 0usize;
    for _ in 0..100 {
        let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        // oracle: score everything, sort by (distance, insertion index)
        let mut scored: Vec<(f64, u32)> = (0..store.len())
            .map(|i| {
                let mut d = 0.0f64;
                for (a, b) in q.iter().zip(store.key(i)) {
                    let t = *a as f64 - *b as f64;
                    d += t * t;
                }
                (d, i as u32)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got = store.query(&q, 8, None).unwrap();
        let same =
            got.neighbors.len() == 8
                && got.neighbors.iter().zip(&scored[..8]).all(|(n, (d, idx))| {
                    n.distance == *d && n.origin == store.origin(*idx as usize)
                });
        if !same {
            mismatches += 1;
        }
    }
    outcome(
        "knn oracle equivalence",
        start,
        mismatches == 0,
        format!("{mismatches} of 100 queries disagreed with the brute-force oracle"),
    )
}

/// Analytic logit gradients of the three losses vs central differences,
/// 200 random instances each, relative error ≤ 1e-4.
pub fn check_logit_gradients() -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let v = rng.random_range(2..32usize);
        let z = random_logits(&mut rng, v);
        let target = rng.random_range(0..v as u32);
        let teacher = random_teacher(&mut rng, v as u32);
        let eps = [0.0, 0.1, 0.3][i % 3];
        let w = LossWeights {
            lambda: rng.random_range(0.0..1.0),
            beta: rng.random_range(0.0..1.0),
            ..LossWeights::default()
        };

        let (_, g_ce) = cross_entropy_smoothed(&z, target, eps).unwrap();
        let n_ce = central_diff(|zz| cross_entropy_smoothed(zz, target, eps).unwrap().0, &z);
        worst = worst.max(max_rel_err(&g_ce, &n_ce));

        let (_, g_nkd) = nkd_loss(&teacher, &z).unwrap();
        let n_nkd = central_diff(|zz| nkd_loss(&teacher, zz).unwrap().0, &z);
        worst = worst.max(max_rel_err(&g_nkd, &n_nkd));

        let b = dnkd_loss(&teacher, &z, target, &w).unwrap();
        let n_dnkd = central_diff(|zz| dnkd_loss(&teacher, zz, target, &w).unwrap().total, &z);
        worst = worst.max(max_rel_err(&b.grad, &n_dnkd));
    }
    outcome(
        "logit gradient fidelity",
        start,
        worst <= 1e-4,
        format!("max relative error {worst:.3e} over 200 instances × 3 losses (tolerance 1e-4)"),
    )
}

fn two_sentence_batch() -> (ModelConfig, ParallelCorpus) {
    let cfg = ModelConfig::new(40, 52, 4242);
    let corpus = ParallelCorpus {
        pairs: vec![
            SentencePair { src: vec![3, 17, 8, 22, 5, 31], tgt: vec![12, 40, 7, 25, 9, 4] },
            SentencePair { src: vec![19, 2, 36, 11], tgt: vec![33, 8, 50, 21] },
        ],
    };
    (cfg, corpus)
}

/// End-to-end parameter gradients on a 2-sentence batch with the default
/// architecture, checked on a 1% parameter sample in CE and DNKD modes.
pub fn check_param_gradients() -> CheckOutcome {
    let start = Instant::now();
    let (cfg, corpus) = two_sentence_batch();
    let params = Parameters::init(&cfg).unwrap();
    let records = extract_keys(&params, &corpus).unwrap();
    let mut store = Datastore::new(cfg.hidden_dim, cfg.vocab_size_tgt).unwrap();
    store.ingest(&records).unwrap();
    let cache = precompute_neighbor_cache(&store, &records, 4, false).unwrap();
    let w = LossWeights::default();

    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for mode in [LossMode::Ce, LossMode::Dnkd] {
        let needs_cache = matches!(mode, LossMode::Nkd | LossMode::Dnkd);
        let loss_of = |p: &Parameters| -> f64 {
            let ctx = DistillContext { cache: &cache, k: 4 };
            let d = if needs_cache { Some(&ctx) } else { None };
            loss_and_grads(p, &corpus, &[0, 1], mode, d, &w).unwrap().0
        };
        let ctx = DistillContext { cache: &cache, k: 4 };
        let dctx = if needs_cache { Some(&ctx) } else { None };
        let (_, grads) = loss_and_grads(&params, &corpus, &[0, 1], mode, dctx, &w).unwrap();
        let grad_data: Vec<Vec<f64>> = grads.data().iter().map(|t| (*t).clone()).collect();

        let mut flat = 0usize;
        for ti in 0..grad_data.len() {
            for ei in 0..grad_data[ti].len() {
                flat += 1;
                if flat % 100 != 0 {
                    continue;
                }
                let mut pp = params.clone();
                pp.data_mut()[ti][ei] += FD_STEP;
                let up = loss_of(&pp);
                let mut pm = params.clone();
                pm.data_mut()[ti][ei] -= FD_STEP;
                let down = loss_of(&pm);
                let numeric = (up - down) / (2.0 * FD_STEP);
                let analytic = grad_data[ti][ei];
                worst = worst
                    .max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3));
                checked += 1;
            }
        }
    }
    outcome(
        "parameter gradient fidelity",
        start,
        worst <= 1e-4,
        format!(
            "max relative error {worst:.3e} over {checked} sampled parameters (tolerance 1e-4)"
        ),
    )
}

/// The decoupled/coupled non-target gradient ratio equals β/(1 − p_t^kNN)
/// in both regimes, and the non-target term's gradient on the target logit
/// is exactly zero.
pub fn check_grad_norm_ratios() -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(204);
    let v = 12u32;
    let mut worst = 0.0f64;
    let mut exact_zero = true;
    let mut regimes_seen = (false, false);
    for _ in 0..200 {
        let z = random_logits(&mut rng, v as usize);
        let target = rng.random_range(0..v);
        let rest: f64 = rng.random_range(0.02..0.9);
        let other1 = (target + 1) % v;
        let other2 = (target + 2) % v;
        let pairs = [
            (-(1.0 - rest).ln(), target),
            (-(rest * 0.7).ln(), other1),
            (-(rest * 0.3).ln(), other2),
        ];
        let teacher = teacher_distribution(&pairs, Temperature::new(1.0).unwrap(), v).unwrap();
        let w = LossWeights::default();
        let report = grad_norm_report(&teacher, &z, target, &w).unwrap();
        match report.regime {
            Regime::NonTargetBoosted => regimes_seen.0 = true,
            Regime::NonTargetSuppressed => regimes_seen.1 = true,
        }
        let ratio = w.beta / (1.0 - report.p_target_teacher);
        for row in &report.rows {
            if row.is_target {
                if row.dnkd_nontarget_norm != 0.0 || row.nkd_nontarget_norm != 0.0 {
                    exact_zero = false;
                }
            } else if row.nkd_nontarget_norm > 1e-300 {
                worst = worst.max((row.dnkd_nontarget_norm / row.nkd_nontarget_norm - ratio).abs());
            }
        }
    }
    let passed = worst <= 1e-9 && exact_zero && regimes_seen.0 && regimes_seen.1;
    outcome(
        "gradient-norm ratio",
        start,
        passed,
        format!(
            "max ratio deviation {worst:.3e} (tolerance 1e-9), target-logit gradient exactly zero: {exact_zero}, both regimes covered: {}",
            regimes_seen.0 && regimes_seen.1
        ),
    )
}

/// Teacher distribution properties: normalization within 1e-9, entropy
/// non-decreasing over the τ grid {1, 10, 100, 1e4} on 1,000 neighbor sets
/// with distinct tokens, and the τ → 0 / τ → ∞ limits within 1e-6.
pub fn check_teacher_properties() -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(205);
    let mut max_norm_err = 0.0f64;
    let mut max_monotone_violation = 0.0f64;
    let mut max_limit_err = 0.0f64;
    for _ in 0..1000 {
        // normalization on sets with repeated tokens
        let n = rng.random_range(1..=10);
        let dup: Vec<(f64, u32)> =
            (0..n).map(|_| (rng.random_range(0.0..500.0), rng.random_range(0..16u32))).collect();
        let d =
            teacher_distribution(&dup, Temperature::new(rng.random_range(0.5..200.0)).unwrap(), 16)
                .unwrap();
        let sum: f64 = d.support().iter().map(|&(_, p)| p).sum();
        max_norm_err = max_norm_err.max((sum - 1.0).abs());

        // monotone entropy needs distinct tokens
        let m = rng.random_range(2..=8usize);
        let mut tokens: Vec<u32> = (0..16).collect();
        for i in (1..tokens.len()).rev() {
            tokens.swap(i, rng.random_range(0..=i));
        }
        let distinct: Vec<(f64, u32)> =
            tokens[..m].iter().map(|&t| (rng.random_range(0.0..300.0), t)).collect();
        let mut last = -1.0f64;
        for tau in [1.0, 10.0, 100.0, 1e4] {
            let h = entropy(
                &teacher_distribution(&distinct, Temperature::new(tau).unwrap(), 16).unwrap(),
            );
            max_monotone_violation = max_monotone_violation.max(last - h);
            last = h;
        }

        // limits: flat at tau -> inf, point mass at tau -> 0 (unique min)
        let flat = teacher_distribution(&dup, Temperature::new(1e9).unwrap(), 16).unwrap();
        for &(token, p) in flat.support() {
            let count = dup.iter().filter(|&&(_, t)| t == token).count();
            max_limit_err = max_limit_err.max((p - count as f64 / dup.len() as f64).abs());
        }
        let min_d = dup.iter().map(|&(d, _)| d).fold(f64::INFINITY, f64::min);
        if dup.iter().filter(|&&(d, _)| d == min_d).count() == 1 {
            let sharp = teacher_distribution(&dup, Temperature::new(1e-9).unwrap(), 16).unwrap();
            let nearest = dup.iter().find(|&&(d, _)| d == min_d).unwrap().1;
            max_limit_err = max_limit_err.max((sharp.prob(nearest) - 1.0).abs());
        }
    }
    let passed = max_norm_err <= 1e-9 && max_monotone_violation <= 1e-9 && max_limit_err <= 1e-6;
    outcome(
        "teacher properties",
        start,
        passed,
        format!(
            "normalization err {max_norm_err:.2e} (≤1e-9), monotonicity violation {max_monotone_violation:.2e} (≤1e-9), limit err {max_limit_err:.2e} (≤1e-6)"
        ),
    )
}

/// All suites in order.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        check_eq6_identity(),
        check_knn_oracle(),
        check_logit_gradients(),
        check_param_gradients(),
        check_grad_norm_ratios(),
        check_teacher_properties(),
    ]
}
