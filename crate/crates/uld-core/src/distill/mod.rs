//! The end-to-end distillation pipeline at desk scale: generate a
//! synthetic QA corpus, train a teacher, replace train/val answers with
//! teacher generations, align cross-tokenizer sequences step by step, train
//! students under the raw-text / sorted-Wasserstein / KL objectives, and
//! evaluate.

pub mod corpus;
pub mod eval;
pub mod train;

pub use corpus::{gen_corpus, training_text, CorpusItem, Split, ALPHABET};
pub use eval::{evaluate, token_f1, EvalReport};
pub use train::{
    ablate_lambda, align_steps, one_cycle_lr, teacher_answers, train_student,
    train_student_costed, AblationRow, DistillContext, MetricRecord, RunMetrics, StepTrace,
    TrainConfig, TrainMode,
};
