//! HTTP query service, EM/F1 evaluation and benchmarking.

mod bench;
mod eval;
mod http;

pub use bench::{benchmark, evaluate, percentile_nearest_rank, BenchConfig, EvalReport, LatencyStats, Prediction};
pub use eval::{eval_em_f1, exact_match, f1_score, normalize_answer, score_question, EmF1, QuestionScore};
pub use http::{router, serve, QueryRequest, QueryResponse, ServiceState, Timings};
