//! Loss mathematics for non-parametric knowledge distillation.
//!
//! Everything here operates on one position's logits in f64 and returns both
//! the loss value and its exact analytic gradient over the logits. The KL
//! direction is teacher‖student throughout.
//!
//! The distillation loss KL(p‖s) over the full vocabulary decomposes exactly
//! into a binary part over {target, rest} plus the non-target part weighted
//! by the teacher's non-target mass:
//!
//! ```text
//! KL(p‖s) = KL(b_p‖b_s) + (1 − p_t) · KL(p̂‖ŝ)
//! ```
//!
//! The decoupled objective replaces the coupling factor (1 − p_t) with a
//! free weight β and adds a weight α on the binary part:
//!
//! ```text
//! L = λ·CE + (1 − λ)·(α·KL(b_p‖b_s) + β·KL(p̂‖ŝ))
//! ```

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::teacher::{SparseDistribution, Temperature};

#[derive(Debug, Clone, PartialEq)]
pub enum DistillError {
    EmptyLogits,
    NonFiniteLogit(f64),
    TargetOutOfRange { target: u32, vocab_size: usize },
    VocabMismatch { teacher: u32, logits: usize },
    VocabTooSmall { vocab_size: usize },
    SmoothingOutOfRange(f64),
    InvalidWeight { name: &'static str, value: f64 },
}

impl fmt::Display for DistillError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyLogits => write!(f, "logits vector is empty"),
            Self::NonFiniteLogit(v) => write!(f, "non-finite logit {v}"),
            Self::TargetOutOfRange { target, vocab_size } => {
                write!(f, "target {target} out of vocab range {vocab_size}")
            }
            Self::VocabMismatch { teacher, logits } => {
                write!(f, "teacher vocab {teacher} does not match logits length {logits}")
            }
            Self::VocabTooSmall { vocab_size } => {
                write!(f, "vocab size {vocab_size} too small, need at least 2")
            }
            Self::SmoothingOutOfRange(v) => write!(f, "label smoothing {v} outside [0, 1)"),
            Self::InvalidWeight { name, value } => write!(f, "invalid weight {name} = {value}"),
        }
    }
}

impl core::error::Error for DistillError {}

/// Loss mixing weights of the decoupled objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Mix between cross-entropy and distillation, in [0, 1].
    pub lambda: f64,
    /// Weight of the binary (target vs rest) distillation term.
    pub alpha: f64,
    /// Weight of the non-target distillation term.
    pub beta: f64,
    /// Label smoothing for the cross-entropy term, in [0, 1).
    pub label_smoothing: f64,
    /// Teacher softmax temperature.
    pub tau: Temperature,
}

impl LossWeights {
    pub fn new(
        lambda: f64,
        alpha: f64,
        beta: f64,
        label_smoothing: f64,
        tau: Temperature,
    ) -> Result<Self, DistillError> {
        if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
            return Err(DistillError::InvalidWeight { name: "lambda", value: lambda });
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(DistillError::InvalidWeight { name: "alpha", value: alpha });
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(DistillError::InvalidWeight { name: "beta", value: beta });
        }
        if !(label_smoothing.is_finite() && (0.0..1.0).contains(&label_smoothing)) {
            return Err(DistillError::SmoothingOutOfRange(label_smoothing));
        }
        Ok(Self { lambda, alpha, beta, label_smoothing, tau })
    }
}

impl Default for LossWeights {
    /// λ = 0.5, α = 1.0, β = 0.3, smoothing = 0.1, τ = 100.
    fn default() -> Self {
        Self {
            lambda: 0.5,
            alpha: 1.0,
            beta: 0.3,
            label_smoothing: 0.1,
            tau: Temperature::new(100.0).expect("100 is a valid temperature"),
        }
    }
}

/// Full loss report for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Label-smoothed cross-entropy against the ground truth.
    pub ce: f64,
    /// KL between the binary (target, rest) decompositions.
    pub binary_kl: f64,
    /// KL between the renormalized non-target distributions.
    pub nontarget_kl: f64,
    /// The coupled distillation loss KL(p‖s) over the full support.
    pub nkd: f64,
    /// λ·ce + (1 − λ)·(α·binary_kl + β·nontarget_kl).
    pub total: f64,
    /// Exact gradient of `total` over the logits; sums to zero.
    pub grad: Vec<f64>,
}

/// Binary/non-target split of a softmax distribution.
///
/// `nontarget[i]` is the renormalized probability of the i-th vocabulary
/// item with the target skipped (original index order, length V − 1).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDecomposition {
    pub p_target: f64,
    pub p_rest: f64,
    pub nontarget: Vec<f64>,
}

/// Teacher-side binary/non-target split. `nontarget` is `None` when the
/// teacher puts (numerically) all mass on the target, in which case the
/// non-target distribution is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherDecomposition {
    pub p_target: f64,
    pub nontarget: Option<Vec<(u32, f64)>>,
}

fn validate_logits(z: &[f64]) -> Result<(), DistillError> {
    if z.is_empty() {
        return Err(DistillError::EmptyLogits);
    }
    for &v in z {
        if !v.is_finite() {
            return Err(DistillError::NonFiniteLogit(v));
        }
    }
    Ok(())
}

fn validate_target(z: &[f64], target: u32) -> Result<usize, DistillError> {
    let t = target as usize;
    if t >= z.len() {
        return Err(DistillError::TargetOutOfRange { target, vocab_size: z.len() });
    }
    Ok(t)
}

/// log-sum-exp with max shift.
fn lse(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|&v| libm::exp(v - m)).sum();
    m + libm::log(s)
}

/// log-sum-exp over all entries except index `skip`.
fn lse_excluding(z: &[f64], skip: usize) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (i, &v) in z.iter().enumerate() {
        if i != skip && v > m {
            m = v;
        }
    }
    let mut s = 0.0;
    for (i, &v) in z.iter().enumerate() {
        if i != skip {
            s += libm::exp(v - m);
        }
    }
    m + libm::log(s)
}

/// Shift-invariant log-softmax; the exponentials of the result sum to 1.
pub fn log_softmax(z: &[f64]) -> Result<Vec<f64>, DistillError> {
    validate_logits(z)?;
    let l = lse(z);
    Ok(z.iter().map(|&v| v - l).collect())
}

/// Label-smoothed cross-entropy and its gradient p^ST − q, where q puts
/// 1 − eps on the target and eps/(V − 1) on every other token.
pub fn cross_entropy_smoothed(
    z: &[f64],
    target: u32,
    eps: f64,
) -> Result<(f64, Vec<f64>), DistillError> {
    validate_logits(z)?;
    let t = validate_target(z, target)?;
    if !(eps.is_finite() && (0.0..1.0).contains(&eps)) {
        return Err(DistillError::SmoothingOutOfRange(eps));
    }
    if z.len() < 2 && eps > 0.0 {
        return Err(DistillError::VocabTooSmall { vocab_size: z.len() });
    }
    let logp = log_softmax(z)?;
    let off = if z.len() > 1 { eps / (z.len() - 1) as f64 } else { 0.0 };
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for (j, &lp) in logp.iter().enumerate() {
        let q = if j == t { 1.0 - eps } else { off };
        loss -= q * lp;
        grad.push(libm::exp(lp) - q);
    }
    Ok((loss, grad))
}

/// Student-side binary/non-target decomposition of softmax(z).
pub fn binary_decompose(z: &[f64], target: u32) -> Result<BinaryDecomposition, DistillError> {
    validate_logits(z)?;
    if z.len() < 2 {
        return Err(DistillError::VocabTooSmall { vocab_size: z.len() });
    }
    let t = validate_target(z, target)?;
    let lse_all = lse(z);
    let lse_nt = lse_excluding(z, t);
    let p_target = libm::exp(z[t] - lse_all);
    let p_rest = libm::exp(lse_nt - lse_all);
    let nontarget: Vec<f64> = z
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != t)
        .map(|(_, &v)| libm::exp(v - lse_nt))
        .collect();
    Ok(BinaryDecomposition { p_target, p_rest, nontarget })
}

/// Teacher-side decomposition: target mass plus the renormalized non-target
/// support. Undefined (None) when 1 − p_t falls below 1e-12.
pub fn teacher_decompose(teacher: &SparseDistribution, target: u32) -> TeacherDecomposition {
    let p_target = teacher.prob(target);
    let rest_mass = 1.0 - p_target;
    if rest_mass < 1e-12 {
        return TeacherDecomposition { p_target, nontarget: None };
    }
    let nontarget: Vec<(u32, f64)> = teacher
        .support()
        .iter()
        .filter(|&&(y, _)| y != target)
        .map(|&(y, p)| (y, p / rest_mass))
        .collect();
    TeacherDecomposition { p_target, nontarget: Some(nontarget) }
}

/// The coupled distillation loss KL(p^kNN‖p^ST) and its gradient
/// p^ST − p^kNN over the logits.
pub fn nkd_loss(teacher: &SparseDistribution, z: &[f64]) -> Result<(f64, Vec<f64>), DistillError> {
    validate_logits(z)?;
    if teacher.vocab_size() as usize != z.len() {
        return Err(DistillError::VocabMismatch { teacher: teacher.vocab_size(), logits: z.len() });
    }
    let logp = log_softmax(z)?;
    let mut loss = 0.0;
    let mut grad: Vec<f64> = logp.iter().map(|&lp| libm::exp(lp)).collect();
    for &(y, p) in teacher.support() {
        let y = y as usize;
        loss += p * (libm::log(p) - logp[y]);
        grad[y] -= p;
    }
    Ok((loss, grad))
}

struct DistillParts {
    binary_kl: f64,
    nontarget_kl: f64,
    /// Gradient of the binary KL over the logits.
    grad_binary: Vec<f64>,
    /// Gradient of the non-target KL over the logits; exactly zero on the
    /// target logit.
    grad_nontarget: Vec<f64>,
    p_target_teacher: f64,
}

/// Shared computation of the two decoupled KL terms and their gradients.
fn distill_parts(
    teacher: &SparseDistribution,
    z: &[f64],
    target: u32,
) -> Result<DistillParts, DistillError> {
    if teacher.vocab_size() as usize != z.len() {
        return Err(DistillError::VocabMismatch { teacher: teacher.vocab_size(), logits: z.len() });
    }
    if z.len() < 2 {
        return Err(DistillError::VocabTooSmall { vocab_size: z.len() });
    }
    let t = validate_target(z, target)?;
    let lse_all = lse(z);
    let lse_nt = lse_excluding(z, t);
    let ln_pt_s = z[t] - lse_all;
    let ln_rest_s = lse_nt - lse_all;
    let pt_s = libm::exp(ln_pt_s);

    let td = teacher_decompose(teacher, target);
    let pt_k = td.p_target;

    // binary KL with the 0·log 0 convention on both ends
    let mut binary_kl = 0.0;
    if pt_k > 0.0 {
        binary_kl += pt_k * (libm::log(pt_k) - ln_pt_s);
    }
    if pt_k < 1.0 {
        binary_kl += (1.0 - pt_k) * (libm::log(1.0 - pt_k) - ln_rest_s);
    }

    // grad of the binary KL: (p_t^ST − p_t^kNN) on the target logit,
    // −(p_t^ST − p_t^kNN)·ŝ_j elsewhere
    let coeff = pt_s - pt_k;
    let mut grad_binary = vec![0.0; z.len()];
    for (j, g) in grad_binary.iter_mut().enumerate() {
        if j == t {
            *g = coeff;
        } else {
            *g = -coeff * libm::exp(z[j] - lse_nt);
        }
    }

    // non-target KL over the teacher's renormalized support; its gradient is
    // ŝ − p̂^kNN on non-target logits and exactly zero on the target logit
    let mut nontarget_kl = 0.0;
    let mut grad_nontarget = vec![0.0; z.len()];
    if let Some(hat) = &td.nontarget {
        for (j, g) in grad_nontarget.iter_mut().enumerate() {
            if j != t {
                *g = libm::exp(z[j] - lse_nt);
            }
        }
        for &(y, p) in hat {
            let y = y as usize;
            nontarget_kl += p * (libm::log(p) - (z[y] - lse_nt));
            grad_nontarget[y] -= p;
        }
    }

    Ok(DistillParts {
        binary_kl,
        nontarget_kl,
        grad_binary,
        grad_nontarget,
        p_target_teacher: pt_k,
    })
}

/// The decoupled objective λ·CE + (1 − λ)·(α·KL_b + β·KL_nt) with its exact
/// gradient over the logits. At λ = 1 the total and gradient are exactly the
/// cross-entropy ones.
pub fn dnkd_loss(
    teacher: &SparseDistribution,
    z: &[f64],
    target: u32,
    w: &LossWeights,
) -> Result<LossBreakdown, DistillError> {
    let (ce, grad_ce) = cross_entropy_smoothed(z, target, w.label_smoothing)?;
    let parts = distill_parts(teacher, z, target)?;
    let (nkd, _) = nkd_loss(teacher, z)?;

    let (total, grad) = if w.lambda == 1.0 {
        (ce, grad_ce)
    } else {
        let total = w.lambda * ce
            + (1.0 - w.lambda) * (w.alpha * parts.binary_kl + w.beta * parts.nontarget_kl);
        let grad = grad_ce
            .iter()
            .zip(&parts.grad_binary)
            .zip(&parts.grad_nontarget)
            .map(|((&gc, &gb), &gn)| {
                w.lambda * gc + (1.0 - w.lambda) * (w.alpha * gb + w.beta * gn)
            })
            .collect();
        (total, grad)
    };

    Ok(LossBreakdown {
        ce,
        binary_kl: parts.binary_kl,
        nontarget_kl: parts.nontarget_kl,
        nkd,
        total,
        grad,
    })
}

/// |KL(p‖s) − [KL_b + (1 − p_t^kNN)·KL_nt]|, the residual of the exact
/// decomposition identity.
pub fn decomposition_check(
    teacher: &SparseDistribution,
    z: &[f64],
    target: u32,
) -> Result<f64, DistillError> {
    let (lhs, _) = nkd_loss(teacher, z)?;
    let parts = distill_parts(teacher, z, target)?;
    let rhs = parts.binary_kl + (1.0 - parts.p_target_teacher) * parts.nontarget_kl;
    Ok(libm::fabs(lhs - rhs))
}

/// Which side of the decoupling threshold a position falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// (1 − p_t^kNN) ≤ β: decoupling boosts the non-target gradients.
    NonTargetBoosted,
    /// (1 − p_t^kNN) > β: decoupling suppresses the non-target gradients.
    NonTargetSuppressed,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonTargetBoosted => write!(f, "boosted"),
            Self::NonTargetSuppressed => write!(f, "suppressed"),
        }
    }
}

/// Per-token gradient magnitudes of the two distillation objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct GradNormRow {
    pub token: u32,
    pub is_target: bool,
    /// |∂ KL(p‖s) / ∂z_j|, the coupled loss.
    pub nkd_norm: f64,
    /// |∂ (α·KL_b + β·KL_nt) / ∂z_j|, the decoupled loss.
    pub dnkd_norm: f64,
    /// |contribution of the non-target term inside the coupled loss|,
    /// i.e. (1 − p_t^kNN)·|∂KL_nt/∂z_j|.
    pub nkd_nontarget_norm: f64,
    /// β·|∂KL_nt/∂z_j|.
    pub dnkd_nontarget_norm: f64,
}

/// Gradient-norm comparison of the coupled vs decoupled distillation parts
/// at one position, rows sorted by descending decoupled norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GradNormReport {
    pub regime: Regime,
    pub p_target_teacher: f64,
    pub beta: f64,
    /// β / (1 − p_t^kNN); `None` when the teacher is a point mass on the
    /// target.
    pub nontarget_ratio: Option<f64>,
    pub rows: Vec<GradNormRow>,
}

/// Compare per-logit gradient norms of the coupled and decoupled
/// distillation losses (the CE term is excluded from both).
pub fn grad_norm_report(
    teacher: &SparseDistribution,
    z: &[f64],
    target: u32,
    w: &LossWeights,
) -> Result<GradNormReport, DistillError> {
    let parts = distill_parts(teacher, z, target)?;
    let (_, grad_nkd) = nkd_loss(teacher, z)?;
    let t = target as usize;
    let rest = 1.0 - parts.p_target_teacher;
    let regime =
        if rest <= w.beta { Regime::NonTargetBoosted } else { Regime::NonTargetSuppressed };
    let nontarget_ratio = if rest > 0.0 { Some(w.beta / rest) } else { None };

    let mut rows: Vec<GradNormRow> = (0..z.len())
        .map(|j| {
            let gn = parts.grad_nontarget[j];
            GradNormRow {
                token: j as u32,
                is_target: j == t,
                nkd_norm: libm::fabs(grad_nkd[j]),
                dnkd_norm: libm::fabs(w.alpha * parts.grad_binary[j] + w.beta * gn),
                nkd_nontarget_norm: libm::fabs(rest * gn),
                dnkd_nontarget_norm: libm::fabs(w.beta * gn),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.dnkd_norm.total_cmp(&a.dnkd_norm).then(a.token.cmp(&b.token)));

    Ok(GradNormReport {
        regime,
        p_target_teacher: parts.p_target_teacher,
        beta: w.beta,
        nontarget_ratio,
        rows,
    })
}
