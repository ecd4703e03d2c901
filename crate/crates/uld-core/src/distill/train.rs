//! Student training under the four objectives: raw text, the closed-form
//! sorted-Wasserstein distillation loss, KL distillation, and exact
//! transport under a configurable cost matrix.
//!
//! The teacher is frozen throughout, so every example's teacher
//! distributions are computed once up front. Training is single-threaded
//! and seeded; identical configurations reproduce metric logs bit for bit.
//! When `lambda` is zero the distillation term is skipped entirely, which
//! makes a zero-lambda run of any mode execute exactly the raw-text code
//! path.
//!
//! With the uniform 0-1 cost the exact-transport mode optimizes the same
//! objective as the closed form: over sorted padded supports the transport
//! value is exactly half the sorted-difference sum, so the term enters the
//! total doubled and the gradient reuses the closed-form sign route. The
//! recorded per-step transport value stays the raw solver cost. Edit- and
//! embedding-distance kinds optimize the plain transport cost with an
//! envelope gradient through the optimal plan's dual potentials.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::{pad_to, softmax_scaled, sort_desc, LogitVector, ProbVector};
use crate::losses::{
    ce_step, kl_step, loss_grad_from_probs, uld_w1_step, LossMode, StepLossInput, DEFAULT_LAMBDA,
    DEFAULT_TAU,
};
use crate::model::TinyCausalLm;
use crate::ot::{
    embedding_l2_cost_matrix, exact_ot, levenshtein_cost_matrix, transport_duals, CostKind,
    CostMatrix,
};
use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

use super::corpus::{CorpusItem, Split};

/// Which objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Cross-entropy on the answer tokens only.
    Raw,
    /// Cross-entropy plus the closed-form sorted-Wasserstein term.
    Uld,
    /// Cross-entropy plus KL; requires identical vocabularies.
    Kl,
    /// Cross-entropy plus exact transport under a cost matrix.
    UldCosted,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Raw => "raw",
            TrainMode::Uld => "uld",
            TrainMode::Kl => "kl",
            TrainMode::UldCosted => "uld_costed",
        }
    }
}

/// Training hyperparameters. The one-cycle schedule is fully determined by
/// `max_lr`: it warms up linearly from `max_lr / 2` over the first 30% of
/// steps and cosine-decays to `max_lr / 10`.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub lambda: f64,
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub mode: TrainMode,
    /// Fraction of the train split actually used, selected by seeded
    /// shuffle.
    pub dataset_fraction: f64,
    /// Cost matrix for [`TrainMode::UldCosted`].
    pub cost_kind: CostKind,
    /// Validation cadence in optimizer steps; 0 picks 200 scaled down
    /// proportionally for runs shorter than 2000 steps.
    pub eval_every: usize,
    /// Generation budget when producing teacher answers and evaluating.
    pub max_new_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            epochs: 5,
            batch_size: 8,
            max_lr: 3e-3,
            mode: TrainMode::Uld,
            dataset_fraction: 1.0,
            cost_kind: CostKind::Uniform01,
            eval_every: 0,
            max_new_tokens: 12,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::parameter(format!(
                "lambda must be non-negative and finite, got {}",
                self.lambda
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::parameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::parameter("epochs and batch_size must be positive"));
        }
        if !(self.max_lr > 0.0) || !self.max_lr.is_finite() {
            return Err(Error::parameter(format!(
                "max_lr must be positive, got {}",
                self.max_lr
            )));
        }
        if !(self.dataset_fraction > 0.0 && self.dataset_fraction <= 1.0) {
            return Err(Error::parameter(format!(
                "dataset_fraction must be in (0, 1], got {}",
                self.dataset_fraction
            )));
        }
        Ok(())
    }
}

/// One logged evaluation row. Serialized as JSON lines with exactly these
/// field names.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRecord {
    pub step: u64,
    pub split: String,
    pub ce: f64,
    pub uld_w1: Option<f64>,
    pub kl: Option<f64>,
    pub total: f64,
    pub lr: f64,
    pub seed: u64,
}

/// Per-optimizer-step training trace: batch-mean cross-entropy and
/// distillation term.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step: u64,
    pub ce: f64,
    pub transport: Option<f64>,
    pub total: f64,
}

/// Telemetry of one training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
    pub step_trace: Vec<StepTrace>,
}

/// The frozen teacher side of a distillation run.
pub struct DistillContext<'a> {
    pub teacher: &'a TinyCausalLm,
    pub teacher_tok: &'a Tokenizer,
    pub student_tok: &'a Tokenizer,
}

/// One-cycle learning rate at `step` of `total_steps`: linear warmup from
/// `max_lr / 2` to `max_lr` over the first 30% of steps, then cosine decay
/// to `max_lr / 10`.
pub fn one_cycle_lr(step: usize, total_steps: usize, max_lr: f64) -> f64 {
    let initial = max_lr / 2.0;
    let min_lr = initial / 5.0;
    let warmup = ((total_steps as f64) * 0.3).ceil().max(1.0) as usize;
    if step < warmup {
        initial + (max_lr - initial) * (step as f64 / warmup as f64)
    } else {
        let span = (total_steps.saturating_sub(warmup)).max(1) as f64;
        let t = (step - warmup) as f64 / span;
        min_lr + 0.5 * (max_lr - min_lr) * (1.0 + (core::f64::consts::PI * t).cos())
    }
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    const BETA1: f32 = 0.9;
    const BETA2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(model: &TinyCausalLm) -> Self {
        let shapes: Vec<usize> = model.named_params().map(|(_, _, d)| d.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut TinyCausalLm, grads: &[Vec<f32>], lr: f32) {
        self.t += 1;
        let bias1 = 1.0 - Self::BETA1.powi(self.t);
        let bias2 = 1.0 - Self::BETA2.powi(self.t);
        for idx in 0..grads.len() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let data = model.param_data_mut(idx);
            for ((w, &g), (mi, vi)) in data
                .iter_mut()
                .zip(&grads[idx])
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * g;
                *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        }
    }
}

/// Longest teacher-generated answer kept, in characters. Subword tokens can
/// be long, so an unconverged teacher could otherwise push sequences past
/// the student's context window.
pub const MAX_ANSWER_CHARS: usize = 24;

/// Replaces train- and validation-split answers with the frozen teacher's
/// greedy generations; test items keep their gold answers. Generated
/// answers are clipped to [`MAX_ANSWER_CHARS`].
pub fn teacher_answers(
    teacher: &TinyCausalLm,
    teacher_tok: &Tokenizer,
    items: &[CorpusItem],
    max_new: usize,
) -> Result<Vec<CorpusItem>> {
    let specials = teacher_tok.vocab().specials();
    items
        .iter()
        .map(|item| {
            if item.split == Split::Test {
                return Ok(item.clone());
            }
            let mut prompt_ids = vec![specials.begin];
            prompt_ids.extend(teacher_tok.encode(&item.prompt()).ids);
            let generated = teacher.greedy_generate(&prompt_ids, max_new, specials.end)?;
            let answer = teacher_tok.decode(&generated[prompt_ids.len()..]);
            let clipped: String = answer.trim().chars().take(MAX_ANSWER_CHARS).collect();
            let mut out = item.clone();
            out.answer = String::from(clipped.trim_end());
            Ok(out)
        })
        .collect()
}

/// Token-level view of one example for a given tokenizer: `[bos]` +
/// prompt + answer + `[eos]`, with the answer region location.
fn encode_example(tok: &Tokenizer, item: &CorpusItem) -> (Vec<usize>, usize) {
    let specials = tok.vocab().specials();
    let mut ids = vec![specials.begin];
    ids.extend(tok.encode(&item.prompt()).ids);
    let answer_start = ids.len();
    ids.extend(tok.encode(&format!(" {}", item.answer)).ids);
    ids.push(specials.end);
    (ids, answer_start)
}

/// A pre-tokenized example with the frozen teacher's per-step
/// distributions. `steps` is the minimum of the two answer-region lengths.
struct PreparedExample {
    student_ids: Vec<usize>,
    answer_start: usize,
    steps: usize,
    teacher_probs: Option<Vec<ProbVector>>,
}

fn prepare_example(
    item: &CorpusItem,
    ctx: &DistillContext<'_>,
    tau: f64,
    with_teacher: bool,
) -> Result<PreparedExample> {
    if item.answer.is_empty() {
        return Err(Error::degenerate("example has an empty answer"));
    }
    let (student_ids, answer_start) = encode_example(ctx.student_tok, item);
    let student_steps = student_ids.len() - answer_start;

    if !with_teacher {
        return Ok(PreparedExample {
            student_ids,
            answer_start,
            steps: student_steps,
            teacher_probs: None,
        });
    }

    let (teacher_ids, teacher_answer_start) = encode_example(ctx.teacher_tok, item);
    let teacher_steps = teacher_ids.len() - teacher_answer_start;
    let steps = student_steps.min(teacher_steps);
    let rows = ctx.teacher.forward(&teacher_ids)?;
    let teacher_probs = (0..steps)
        .map(|k| {
            let row = &rows[teacher_answer_start - 1 + k];
            let logits: Vec<f64> = row.iter().map(|&x| x as f64).collect();
            ProbVector::new(softmax_scaled(&logits, tau))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedExample {
        student_ids,
        answer_start,
        steps,
        teacher_probs: Some(teacher_probs),
    })
}

/// Pairs step `t` of the student's tokenization of `answer` with step `t`
/// of the teacher's, truncating to the shorter answer region. Both models
/// run teacher-forced on prompt + answer in their own tokenizations; the
/// gold token comes from the student side.
pub fn align_steps(
    prompt: &str,
    answer: &str,
    ctx: &DistillContext<'_>,
    student: &TinyCausalLm,
    tau: f64,
    lambda: f64,
) -> Result<Vec<StepLossInput>> {
    if answer.is_empty() {
        return Err(Error::degenerate("cannot align an empty answer"));
    }
    let specials_s = ctx.student_tok.vocab().specials();
    let mut student_ids = vec![specials_s.begin];
    student_ids.extend(ctx.student_tok.encode(prompt).ids);
    let student_answer_start = student_ids.len();
    student_ids.extend(ctx.student_tok.encode(&format!(" {answer}")).ids);
    student_ids.push(specials_s.end);

    let specials_t = ctx.teacher_tok.vocab().specials();
    let mut teacher_ids = vec![specials_t.begin];
    teacher_ids.extend(ctx.teacher_tok.encode(prompt).ids);
    let teacher_answer_start = teacher_ids.len();
    teacher_ids.extend(ctx.teacher_tok.encode(&format!(" {answer}")).ids);
    teacher_ids.push(specials_t.end);

    let steps = (student_ids.len() - student_answer_start)
        .min(teacher_ids.len() - teacher_answer_start);
    let student_rows = student.forward(&student_ids)?;
    let teacher_rows = ctx.teacher.forward(&teacher_ids)?;

    (0..steps)
        .map(|k| {
            let to_f64 = |row: &[f32]| row.iter().map(|&x| x as f64).collect::<Vec<f64>>();
            StepLossInput::new(
                LogitVector::new(to_f64(&student_rows[student_answer_start - 1 + k]))?,
                Some(LogitVector::new(to_f64(
                    &teacher_rows[teacher_answer_start - 1 + k],
                ))?),
                student_ids[student_answer_start + k],
                tau,
                lambda,
            )
        })
        .collect()
}

/// Envelope gradient of the transport cost through the optimal plan's dual
/// potentials, routed through the student softmax Jacobian.
fn costed_grad_terms(
    student: &ProbVector,
    teacher: &ProbVector,
    cost: &CostMatrix,
) -> Result<(f64, Vec<f64>)> {
    let plan = exact_ot(student, teacher, cost)?;
    let (duals, _) = transport_duals(&plan, cost);
    Ok((plan.cost(), duals))
}

fn route_through_softmax(grad: &mut [f64], p: &[f64], s: &[f64], weight: f64, tau: f64) {
    let dot: f64 = s.iter().zip(p).map(|(si, pi)| si * pi).sum();
    for k in 0..grad.len() {
        grad[k] += weight * p[k] * (s[k] - dot) / tau;
    }
}

struct ExampleOutcome {
    ce: f64,
    transport: Option<f64>,
    grads: Vec<Vec<f32>>,
}

/// Forward, per-step loss gradients at the answer positions, backward.
fn train_example(
    student: &TinyCausalLm,
    example: &PreparedExample,
    mode: TrainMode,
    lambda: f64,
    tau: f64,
    cost: Option<&CostMatrix>,
) -> Result<ExampleOutcome> {
    let mut pass = student.forward_pass(&example.student_ids, true)?;
    let vocab = student.config().vocab_size;
    let logits = pass.tape.value(pass.logits).to_vec();
    let mut seed = vec![0.0f32; logits.len()];
    let mut ce_sum = 0.0;
    let mut transport_sum = if matches!(mode, TrainMode::Raw) {
        None
    } else {
        Some(0.0)
    };

    for k in 0..example.steps {
        let row_index = example.answer_start - 1 + k;
        let gold = example.student_ids[example.answer_start + k];
        let row: Vec<f64> = logits[row_index * vocab..(row_index + 1) * vocab]
            .iter()
            .map(|&x| x as f64)
            .collect();
        let p = ProbVector::new(softmax_scaled(&row, tau))?;
        ce_sum += ce_step(&p, gold)?;
        let teacher = example
            .teacher_probs
            .as_ref()
            .map(|probs| &probs[k]);

        let grad_row = match mode {
            TrainMode::Raw => {
                loss_grad_from_probs(LossMode::CeOnly, &p, None, gold, tau, lambda)?
            }
            TrainMode::Uld => {
                let q = teacher.expect("teacher prepared for uld mode");
                *transport_sum.as_mut().unwrap() += uld_w1_step(&p, q);
                loss_grad_from_probs(LossMode::CeUld, &p, Some(q), gold, tau, lambda)?
            }
            TrainMode::Kl => {
                let q = teacher.expect("teacher prepared for kl mode");
                *transport_sum.as_mut().unwrap() += kl_step(q, &p)?;
                loss_grad_from_probs(LossMode::CeKl, &p, Some(q), gold, tau, lambda)?
            }
            TrainMode::UldCosted => {
                let q = teacher.expect("teacher prepared for costed mode");
                let cost = cost.expect("cost matrix prepared for costed mode");
                match cost.kind() {
                    CostKind::Uniform01 => {
                        // Identical objective to the closed form: the
                        // solver value is recorded, the sign route trains.
                        let n = p.len().max(q.len());
                        let (ps, _) = sort_desc(&pad_to(&p, n)?);
                        let (qs, _) = sort_desc(&pad_to(q, n)?);
                        let plan = exact_ot(&ps, &qs, cost)?;
                        *transport_sum.as_mut().unwrap() += plan.cost();
                        loss_grad_from_probs(LossMode::CeUld, &p, Some(q), gold, tau, lambda)?
                    }
                    _ => {
                        let (value, duals) = costed_grad_terms(&p, q, cost)?;
                        *transport_sum.as_mut().unwrap() += value;
                        let mut grad =
                            loss_grad_from_probs(LossMode::CeOnly, &p, None, gold, tau, lambda)?;
                        route_through_softmax(&mut grad, p.probs(), &duals, lambda, tau);
                        grad
                    }
                }
            }
        };
        for (k2, &g) in grad_row.iter().enumerate() {
            seed[row_index * vocab + k2] = g as f32;
        }
    }

    pass.tape.backward_with_seed(pass.logits, &seed)?;
    let grads = pass
        .param_nodes
        .iter()
        .map(|&node| {
            pass.tape
                .grad(node)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; 0])
        })
        .collect();
    Ok(ExampleOutcome {
        ce: ce_sum,
        transport: transport_sum,
        grads,
    })
}

/// Per-sequence objective value implied by the mode.
fn objective(mode: TrainMode, ce: f64, transport: Option<f64>, lambda: f64) -> f64 {
    match (mode, transport) {
        (TrainMode::Raw, _) | (_, None) => ce,
        (TrainMode::Uld, Some(w)) | (TrainMode::Kl, Some(w)) => ce + lambda * w,
        // Sorted uniform 0-1 transport is half the closed form.
        (TrainMode::UldCosted, Some(w)) => ce + lambda * 2.0 * w,
    }
}

struct Validation {
    ce: f64,
    w1: f64,
    kl: Option<f64>,
}

/// Mean per-sequence validation losses. The sorted-Wasserstein value is
/// computed in every mode; KL only when the vocabularies are identical and
/// every step stays absolutely continuous.
fn validate(
    student: &TinyCausalLm,
    examples: &[PreparedExample],
    tau: f64,
    same_vocab: bool,
) -> Result<Validation> {
    let mut ce_total = 0.0;
    let mut w1_total = 0.0;
    let mut kl_total = Some(0.0);
    for example in examples {
        let rows = student.forward(&example.student_ids)?;
        let teacher = example.teacher_probs.as_ref().expect("validation teacher");
        for k in 0..example.steps {
            let row = &rows[example.answer_start - 1 + k];
            let gold = example.student_ids[example.answer_start + k];
            let logits: Vec<f64> = row.iter().map(|&x| x as f64).collect();
            let p = ProbVector::new(softmax_scaled(&logits, tau))?;
            ce_total += ce_step(&p, gold)?;
            w1_total += uld_w1_step(&p, &teacher[k]);
            if same_vocab {
                if let Some(total) = kl_total.as_mut() {
                    match kl_step(&teacher[k], &p) {
                        Ok(v) => *total += v,
                        Err(_) => kl_total = None,
                    }
                }
            }
        }
    }
    let n = examples.len().max(1) as f64;
    Ok(Validation {
        ce: ce_total / n,
        w1: w1_total / n,
        kl: if same_vocab { kl_total.map(|k| k / n) } else { None },
    })
}

fn check_model_tokenizer(model: &TinyCausalLm, tok: &Tokenizer, who: &str) -> Result<()> {
    if model.config().vocab_size != tok.vocab().size() {
        return Err(Error::parameter(format!(
            "{who} model vocabulary {} does not match its tokenizer's {}",
            model.config().vocab_size,
            tok.vocab().size()
        )));
    }
    Ok(())
}

fn build_cost_matrix(
    cfg: &TrainConfig,
    ctx: &DistillContext<'_>,
    student: &TinyCausalLm,
) -> Result<CostMatrix> {
    match cfg.cost_kind {
        CostKind::Uniform01 => {
            let n = ctx
                .student_tok
                .vocab()
                .size()
                .max(ctx.teacher_tok.vocab().size());
            Ok(CostMatrix::uniform01(n))
        }
        CostKind::Levenshtein => Ok(levenshtein_cost_matrix(
            ctx.student_tok.vocab(),
            ctx.teacher_tok.vocab(),
        )),
        // Shared space: both models' own tied embeddings; the constructor
        // rejects mismatched dimensions.
        CostKind::EmbeddingL2 => {
            embedding_l2_cost_matrix(&student.embedding_rows(), &ctx.teacher.embedding_rows())
        }
        CostKind::Custom => Err(Error::parameter(
            "custom cost matrices have no pipeline source",
        )),
    }
}

/// Trains a student under `cfg` on the train split of `corpus`. Validation
/// cross-entropy and sorted-Wasserstein losses are logged every evaluation
/// interval in every mode.
pub fn train_student(
    cfg: &TrainConfig,
    corpus: &[CorpusItem],
    ctx: &DistillContext<'_>,
    student: TinyCausalLm,
) -> Result<(TinyCausalLm, RunMetrics)> {
    if cfg.mode == TrainMode::UldCosted {
        return train_student_costed(cfg, corpus, ctx, student);
    }
    train_student_inner(cfg, corpus, ctx, student, None)
}

/// [`train_student`] with the distillation term replaced by exact optimal
/// transport under the configured cost matrix.
pub fn train_student_costed(
    cfg: &TrainConfig,
    corpus: &[CorpusItem],
    ctx: &DistillContext<'_>,
    student: TinyCausalLm,
) -> Result<(TinyCausalLm, RunMetrics)> {
    if cfg.mode != TrainMode::UldCosted {
        return Err(Error::parameter(
            "train_student_costed requires the costed mode",
        ));
    }
    let cost = if cfg.lambda > 0.0 {
        Some(build_cost_matrix(cfg, ctx, &student)?)
    } else {
        None
    };
    train_student_inner(cfg, corpus, ctx, student, cost)
}

fn train_student_inner(
    cfg: &TrainConfig,
    corpus: &[CorpusItem],
    ctx: &DistillContext<'_>,
    mut student: TinyCausalLm,
    cost: Option<CostMatrix>,
) -> Result<(TinyCausalLm, RunMetrics)> {
    cfg.validate()?;
    check_model_tokenizer(&student, ctx.student_tok, "student")?;
    check_model_tokenizer(ctx.teacher, ctx.teacher_tok, "teacher")?;

    let same_vocab = ctx.student_tok.vocab().tokens() == ctx.teacher_tok.vocab().tokens();
    if cfg.mode == TrainMode::Kl && cfg.lambda > 0.0 && !same_vocab {
        return Err(Error::SupportMismatch {
            left: ctx.teacher_tok.vocab().size(),
            right: ctx.student_tok.vocab().size(),
        });
    }

    // Eq. 1 with lambda = 0 is the raw-text objective; run exactly that
    // code path so the metric logs match a raw run bit for bit.
    let mode = if cfg.lambda == 0.0 {
        TrainMode::Raw
    } else {
        cfg.mode
    };
    let needs_teacher = !matches!(mode, TrainMode::Raw);

    let usable: Vec<&CorpusItem> = corpus
        .iter()
        .filter(|it| it.split == Split::Train && !it.answer.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(Error::degenerate("no usable training items"));
    }

    // Seeded shuffle, then the leading ceil(fraction * N) items.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(101);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    shuffle(&mut order, &mut rng);
    let keep = ((cfg.dataset_fraction * usable.len() as f64).ceil() as usize)
        .clamp(1, usable.len());
    order.truncate(keep);

    let train_examples: Vec<PreparedExample> = order
        .iter()
        .map(|&i| prepare_example(usable[i], ctx, cfg.tau, needs_teacher))
        .collect::<Result<Vec<_>>>()?;
    let val_examples: Vec<PreparedExample> = corpus
        .iter()
        .filter(|it| it.split == Split::Val && !it.answer.is_empty())
        .map(|it| prepare_example(it, ctx, cfg.tau, true))
        .collect::<Result<Vec<_>>>()?;

    let n = train_examples.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let eval_every = if cfg.eval_every > 0 {
        cfg.eval_every
    } else if total_steps >= 2000 {
        200
    } else {
        (total_steps / 10).max(1)
    };

    let mut adam = Adam::new(&student);
    let mut metrics = RunMetrics::default();
    let mut step: u64 = 0;
    let mut since_eval_ce = 0.0;
    let mut since_eval_transport = 0.0;
    let mut since_eval_has_transport = false;
    let mut since_eval_examples = 0usize;

    let grad_shapes: Vec<usize> = student.named_params().map(|(_, _, d)| d.len()).collect();

    for _epoch in 0..cfg.epochs {
        let mut epoch_order: Vec<usize> = (0..n).collect();
        shuffle(&mut epoch_order, &mut rng);
        for batch in epoch_order.chunks(cfg.batch_size) {
            let lr = one_cycle_lr(step as usize, total_steps, cfg.max_lr);
            let mut batch_grads: Vec<Vec<f32>> =
                grad_shapes.iter().map(|&len| vec![0.0f32; len]).collect();
            let mut batch_ce = 0.0;
            let mut batch_transport = 0.0;
            let mut batch_has_transport = false;
            let mut batch_total = 0.0;
            for &ex_idx in batch {
                let outcome = train_example(
                    &student,
                    &train_examples[ex_idx],
                    mode,
                    cfg.lambda,
                    cfg.tau,
                    cost.as_ref(),
                )?;
                batch_ce += outcome.ce;
                if let Some(t) = outcome.transport {
                    batch_transport += t;
                    batch_has_transport = true;
                }
                batch_total += objective(mode, outcome.ce, outcome.transport, cfg.lambda);
                for (acc, g) in batch_grads.iter_mut().zip(&outcome.grads) {
                    for (a, &gi) in acc.iter_mut().zip(g) {
                        *a += gi;
                    }
                }
            }
            // Mean over sequences of per-sequence sums.
            let scale = 1.0 / batch.len() as f32;
            for g in &mut batch_grads {
                for x in g.iter_mut() {
                    *x *= scale;
                }
            }
            adam.step(&mut student, &batch_grads, lr as f32);
            step += 1;

            let denom = batch.len() as f64;
            metrics.step_trace.push(StepTrace {
                step,
                ce: batch_ce / denom,
                transport: batch_has_transport.then_some(batch_transport / denom),
                total: batch_total / denom,
            });
            since_eval_ce += batch_ce;
            if batch_has_transport {
                since_eval_transport += batch_transport;
                since_eval_has_transport = true;
            }
            since_eval_examples += batch.len();

            if step % eval_every as u64 == 0 || step == total_steps as u64 {
                let denom = since_eval_examples.max(1) as f64;
                let train_ce = since_eval_ce / denom;
                let train_transport = since_eval_has_transport
                    .then_some(since_eval_transport / denom);
                let (train_w1, train_kl) = match mode {
                    TrainMode::Kl => (None, train_transport),
                    _ => (train_transport, None),
                };
                let train_total = objective(mode, train_ce, train_transport, cfg.lambda);
                metrics.records.push(MetricRecord {
                    step,
                    split: String::from("train"),
                    ce: train_ce,
                    uld_w1: train_w1,
                    kl: train_kl,
                    total: train_total,
                    lr,
                    seed: cfg.seed,
                });

                let val = validate(&student, &val_examples, cfg.tau, same_vocab)?;
                let val_total = match mode {
                    TrainMode::Kl => val.ce + cfg.lambda * val.kl.unwrap_or(0.0),
                    TrainMode::Raw => val.ce + 0.0 * val.w1,
                    _ => val.ce + cfg.lambda * val.w1,
                };
                metrics.records.push(MetricRecord {
                    step,
                    split: String::from("val"),
                    ce: val.ce,
                    uld_w1: Some(val.w1),
                    kl: val.kl,
                    total: val_total,
                    lr,
                    seed: cfg.seed,
                });

                since_eval_ce = 0.0;
                since_eval_transport = 0.0;
                since_eval_has_transport = false;
                since_eval_examples = 0;
            }
        }
    }

    Ok((student, metrics))
}

/// Fisher-Yates with the run's seeded stream.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// One row of the lambda-ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub lambda: f64,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

/// One full training run per lambda with a shared seed and shared (frozen)
/// teacher answers; reports the final token-level F1 on the test split.
pub fn ablate_lambda(
    lambdas: &[f64],
    base: &TrainConfig,
    corpus: &[CorpusItem],
    ctx: &DistillContext<'_>,
    student_template: &TinyCausalLm,
) -> Result<Vec<AblationRow>> {
    if lambdas.is_empty() {
        return Err(Error::parameter("lambda list must not be empty"));
    }
    if !lambdas.iter().any(|&l| l == 0.0) {
        return Err(Error::parameter(
            "lambda list must include 0 as the raw-text baseline",
        ));
    }
    let test_items: Vec<CorpusItem> = corpus
        .iter()
        .filter(|it| it.split == Split::Test)
        .cloned()
        .collect();
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let mut cfg = base.clone();
        cfg.lambda = lambda;
        cfg.mode = TrainMode::Uld;
        let (trained, _) = train_student(&cfg, corpus, ctx, student_template.clone())?;
        let report = super::eval::evaluate(
            &trained,
            ctx.student_tok,
            &test_items,
            cfg.max_new_tokens,
        )?;
        rows.push(AblationRow {
            lambda,
            metric: String::from("token_f1"),
            value: report.token_f1,
            seed: cfg.seed,
        });
    }
    Ok(rows)
}
