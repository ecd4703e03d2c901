//! The three training losses — cross-entropy, KL distillation, and the
//! sorted-Wasserstein distillation loss — with analytic gradients over
//! student logits.
//!
//! The distillation term pads the shorter distribution with exact zeros,
//! sorts both sides in descending order, and sums absolute differences.
//! Under a 0-1 transport cost over sorted supports this equals twice the
//! exact optimal-transport value, which is what the `ot` module's oracles
//! verify. All arithmetic is `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::distributions::{
    pad_to, softmax_temp, sort_desc, sorted_desc_values, LogitVector, ProbVector,
};
use crate::{Error, Result};

/// Trade-off weight between cross-entropy and the distillation term.
pub const DEFAULT_LAMBDA: f64 = 1.5;

/// Softmax temperature applied to both teacher and student logits.
pub const DEFAULT_TAU: f64 = 1.0;

/// Probabilities are clamped here before `ln` so degenerate untrained
/// models cannot produce infinities.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Which objective the gradient covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Cross-entropy alone.
    CeOnly,
    /// Cross-entropy plus `lambda` times the KL distillation term.
    CeKl,
    /// Cross-entropy plus `lambda` times the sorted-Wasserstein term.
    CeUld,
}

/// Everything one aligned time step carries into the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLossInput {
    pub student_logits: LogitVector,
    /// Absent for raw-text training.
    pub teacher_logits: Option<LogitVector>,
    /// Index into the student vocabulary.
    pub gold_token: usize,
    pub tau: f64,
    pub lambda: f64,
}

impl StepLossInput {
    pub fn new(
        student_logits: LogitVector,
        teacher_logits: Option<LogitVector>,
        gold_token: usize,
        tau: f64,
        lambda: f64,
    ) -> Result<Self> {
        if gold_token >= student_logits.len() {
            return Err(Error::parameter(format!(
                "gold token {gold_token} out of range for student support {}",
                student_logits.len()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::parameter(format!(
                "lambda must be a non-negative finite real, got {lambda}"
            )));
        }
        Ok(StepLossInput {
            student_logits,
            teacher_logits,
            gold_token,
            tau,
            lambda,
        })
    }
}

/// Per-step loss decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepLoss {
    pub ce: f64,
    pub w1: f64,
    pub kl: Option<f64>,
    pub total: f64,
}

/// A sequence loss with its per-step breakdown. `total` is always
/// `ce + lambda * (w1 or kl)` for the mode that produced it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossReport {
    pub ce: f64,
    pub w1: f64,
    pub kl: Option<f64>,
    pub total: f64,
    pub per_step: Vec<StepLoss>,
}

/// Cross-entropy at one step: `-ln p[gold]`, with the probability clamped
/// below at [`CE_PROB_FLOOR`].
pub fn ce_step(student_probs: &ProbVector, gold_token: usize) -> Result<f64> {
    let probs = student_probs.probs();
    if gold_token >= probs.len() {
        return Err(Error::parameter(format!(
            "gold token {gold_token} out of range for support {}",
            probs.len()
        )));
    }
    Ok(-(probs[gold_token].max(CE_PROB_FLOOR).ln()))
}

/// KL divergence `sum q ln(q/p)` of teacher `q` from student `p`, with the
/// convention `0 * ln(0/x) = 0`. Requires a shared support; teacher mass on
/// a zero-probability student entry is the absolute-continuity failure that
/// makes KL unusable across padded vocabularies.
pub fn kl_step(teacher_probs: &ProbVector, student_probs: &ProbVector) -> Result<f64> {
    if teacher_probs.len() != student_probs.len() {
        return Err(Error::SupportMismatch {
            left: teacher_probs.len(),
            right: student_probs.len(),
        });
    }
    let mut total = 0.0;
    for (i, (&q, &p)) in teacher_probs
        .probs()
        .iter()
        .zip(student_probs.probs())
        .enumerate()
    {
        if q == 0.0 {
            continue;
        }
        if p == 0.0 {
            return Err(Error::AbsoluteContinuity { index: i });
        }
        total += q * (q / p).ln();
    }
    Ok(total)
}

/// The closed-form distillation distance: pad the shorter distribution with
/// zeros, sort both in descending order, and sum absolute differences.
/// Always in `[0, 2]`; supports may differ in length.
pub fn uld_w1_step(student_probs: &ProbVector, teacher_probs: &ProbVector) -> f64 {
    let n = student_probs.len().max(teacher_probs.len());
    let padded;
    let p = if student_probs.len() < n {
        padded = pad_to(student_probs, n).expect("padding up");
        padded.probs()
    } else {
        student_probs.probs()
    };
    let padded_q;
    let q = if teacher_probs.len() < n {
        padded_q = pad_to(teacher_probs, n).expect("padding up");
        padded_q.probs()
    } else {
        teacher_probs.probs()
    };
    let ps = sorted_desc_values(p);
    let qs = sorted_desc_values(q);
    ps.iter().zip(&qs).map(|(a, b)| (a - b).abs()).sum()
}

fn teacher_distribution(step: &StepLossInput) -> Result<ProbVector> {
    let logits = step.teacher_logits.as_ref().ok_or_else(|| {
        Error::input("step is missing teacher logits required by the distillation term")
    })?;
    softmax_temp(logits, step.tau)
}

fn sequence_report<F>(steps: &[StepLossInput], lambda: f64, mut term: F) -> Result<LossReport>
where
    F: FnMut(&StepLossInput, &ProbVector) -> Result<(f64, Option<f64>)>,
{
    if steps.is_empty() {
        return Err(Error::degenerate("loss over an empty step list"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::parameter(format!(
            "lambda must be a non-negative finite real, got {lambda}"
        )));
    }
    let mut per_step = Vec::with_capacity(steps.len());
    let mut ce_total = 0.0;
    let mut w1_total = 0.0;
    let mut kl_total: Option<f64> = None;
    for step in steps {
        let student = softmax_temp(&step.student_logits, step.tau)?;
        let ce = ce_step(&student, step.gold_token)?;
        let (w1, kl) = term(step, &student)?;
        let distill = match kl {
            Some(k) => k,
            None => w1,
        };
        let total = ce + lambda * distill;
        ce_total += ce;
        w1_total += w1;
        if let Some(k) = kl {
            *kl_total.get_or_insert(0.0) += k;
        }
        per_step.push(StepLoss { ce, w1, kl, total });
    }
    let distill_total = match kl_total {
        Some(k) => k,
        None => w1_total,
    };
    Ok(LossReport {
        ce: ce_total,
        w1: w1_total,
        kl: kl_total,
        total: ce_total + lambda * distill_total,
        per_step,
    })
}

/// Sequence loss `sum_t CE(t) + lambda * sum_t W1(t)` over steps already
/// aligned (and truncated to the shorter tokenization) by the caller.
pub fn uld_sequence(steps: &[StepLossInput], lambda: f64) -> Result<LossReport> {
    sequence_report(steps, lambda, |step, student| {
        let teacher = teacher_distribution(step)?;
        Ok((uld_w1_step(student, &teacher), None))
    })
}

/// Sequence loss `sum_t CE(t) + lambda * sum_t KL(t)`. Teacher and student
/// must share one vocabulary; the per-step sorted-Wasserstein value is
/// reported alongside for comparison.
pub fn kl_sequence(steps: &[StepLossInput], lambda: f64) -> Result<LossReport> {
    sequence_report(steps, lambda, |step, student| {
        let teacher = teacher_distribution(step)?;
        let kl = kl_step(&teacher, student)?;
        Ok((uld_w1_step(student, &teacher), Some(kl)))
    })
}

/// Analytic gradient of the selected objective with respect to the student
/// logits. Teacher probabilities are constants: no gradient flows to the
/// teacher.
///
/// The distillation subgradient freezes the sort permutations at the
/// stable-sort result and uses `sign(0) = 0`, so the value is deterministic
/// even at ties.
pub fn loss_grad(mode: LossMode, input: &StepLossInput) -> Result<Vec<f64>> {
    let student = softmax_temp(&input.student_logits, input.tau)?;
    let teacher = match (mode, &input.teacher_logits) {
        (LossMode::CeOnly, _) => None,
        (_, logits) => Some(teacher_distribution_from(logits.as_ref(), input.tau)?),
    };
    loss_grad_from_probs(
        mode,
        &student,
        teacher.as_ref(),
        input.gold_token,
        input.tau,
        input.lambda,
    )
}

/// [`loss_grad`] with the softmaxes already applied; the training loop uses
/// this to reuse teacher distributions precomputed once per frozen teacher.
pub fn loss_grad_from_probs(
    mode: LossMode,
    student: &ProbVector,
    teacher: Option<&ProbVector>,
    gold_token: usize,
    tau: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = student.len();
    if gold_token >= n {
        return Err(Error::parameter(format!(
            "gold token {gold_token} out of range for student support {n}"
        )));
    }
    let p = student.probs();

    // CE part: (softmax(z/tau) - onehot(gold)) / tau.
    let mut grad: Vec<f64> = p.iter().map(|&pi| pi / tau).collect();
    grad[gold_token] -= 1.0 / tau;

    let require_teacher = || {
        teacher.ok_or_else(|| {
            Error::input("distillation gradient needs the teacher distribution")
        })
    };
    match mode {
        LossMode::CeOnly => {}
        LossMode::CeKl => {
            let teacher = require_teacher()?;
            if teacher.len() != n {
                return Err(Error::SupportMismatch {
                    left: teacher.len(),
                    right: n,
                });
            }
            let q = teacher.probs();
            for k in 0..n {
                grad[k] += lambda * (p[k] - q[k]) / tau;
            }
        }
        LossMode::CeUld => {
            let teacher = require_teacher()?;
            let signs = uld_sign_vector(student, teacher);
            let dot: f64 = signs.iter().zip(p).map(|(s, pi)| s * pi).sum();
            for k in 0..n {
                grad[k] += lambda * p[k] * (signs[k] - dot) / tau;
            }
        }
    }
    Ok(grad)
}

fn teacher_distribution_from(logits: Option<&LogitVector>, tau: f64) -> Result<ProbVector> {
    let logits = logits.ok_or_else(|| {
        Error::input("step is missing teacher logits required by the distillation term")
    })?;
    softmax_temp(logits, tau)
}

/// Per-student-coordinate signs of `p_sorted - q_sorted` under the frozen
/// sort alignment, mapped back to original student indices. Padded slots
/// belong to no student coordinate and contribute nothing.
fn uld_sign_vector(student: &ProbVector, teacher: &ProbVector) -> Vec<f64> {
    let ns = student.len();
    let n = ns.max(teacher.len());
    let p_pad = pad_to(student, n).expect("padding up");
    let q_pad = pad_to(teacher, n).expect("padding up");
    let (p_sorted, p_perm) = sort_desc(&p_pad);
    let q_sorted = sorted_desc_values(q_pad.probs());

    let mut signs = vec![0.0; ns];
    for (rank, &src) in p_perm.order().iter().enumerate() {
        if src < ns {
            let diff = p_sorted.probs()[rank] - q_sorted[rank];
            signs[src] = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
    }
    signs
}
