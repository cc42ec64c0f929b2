//! Prompt optimization with textual gradients.
//!
//! A task prompt is scored on labelled examples, its errors are turned into
//! natural-language critiques ("gradients") by a language model, the model
//! rewrites the prompt against each critique, and a beam search with
//! best-arm-identification selection keeps the most promising rewrites.
//!
//! Everything talks to a model through [`llm::Backend`]. The
//! [`llm::SimBackend`] stands in for a real model offline and has a known
//! optimum, which the tests rely on.

pub mod bandits;
pub mod config;
pub mod data;
pub mod eval;
pub mod expansion;
pub mod llm;
pub mod optimizer;
pub mod report;
pub mod runner;
pub mod seed;
pub mod selection;
pub mod templates;

pub use bandits::{bench_bandits, BanditBenchConfig, BanditBenchReport};
pub use config::Config;
pub use data::{CandidateId, Dataset, FewShotSet, Label, LabeledExample, Lineage, Origin, PromptCandidate};
pub use eval::{f1_score, MetricScore, Prediction, PredictionRecord};
pub use expansion::{ExpansionConfig, TextGradient};
pub use llm::{Backend, BackendError, CompletionRequest, CompletionResponse, SimBackend, SimProfile};
pub use optimizer::{optimize, Mode, RunConfig, RunData, RunReport};
pub use selection::{Algorithm, ScoreLedger, SelectionConfig};
pub use templates::{MetaPromptSet, TaskPreset};
