//! Synthetic corpora with planted ground truth, benchmark-format
//! evaluation, ablation modes, and parameter sweeps.

pub mod corpus;
pub mod eval;

pub use corpus::{
    generate_corpus, load_corpus, Corpus, CorpusQuestion, CorpusVideo, GroundTruthEntry,
    QuestionKind, QuestionPlan, SyntheticCorpusSpec,
};
pub use eval::{
    amortization_check, run_eval, sweep, AmortizationReport, EvalMode, EvalReport,
    QuestionOutcome, SweepParameter,
};
