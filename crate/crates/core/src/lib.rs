//! Pragmatic-inference moral reasoning toolkit: dataset ingestion, prompt
//! and corpus construction, teacher-driven inference chains, evaluation and
//! ground-truth intervention.

pub mod corpus;
pub mod dataset;
pub mod evalkit;
pub mod foundations;
pub mod intervene;
pub mod prompts;
pub mod teacher;

pub use corpus::{emit_corpus, validate_corpus, CorpusError, CorpusManifest, EmitMeta, ValidationReport};
pub use dataset::{Agreement, ColumnSchema, DatasetError, DatasetStats, Judgment, MicRecord};
pub use evalkit::{parse_prediction, EvalError, EvalReport, Layout, MfcAccuracy, Prediction, ScoringMode};
pub use foundations::{parse_foundations, FoundationError, FoundationSet, MoralFoundation, ALL_FOUNDATIONS};
pub use intervene::{run_intervention, splice_ground_truth, InterventionError, InterventionOutcome};
pub use prompts::{Setting, SftRecord, TaskKind};
pub use teacher::{
    ClientPolicy, CompletionClient, CompletionRequest, DecodingParams, Endpoint, EndpointConfig,
    HttpEndpoint, InferenceChain, ResponseCache, TeacherError,
};
