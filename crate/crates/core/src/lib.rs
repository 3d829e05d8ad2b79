//! Offline evaluation harness for hybrid music recommendation.
//!
//! The crate ingests precomputed, track-level audio embeddings together with
//! implicit-feedback listening logs, reproduces a temporal evaluation
//! protocol, trains three recommenders of increasing complexity and scores
//! them with top-K ranking metrics:
//!
//! * [`knn`]: profile-mean nearest neighbours over the raw embeddings.
//! * [`shallow`]: a two-tower network with a frozen pretrained item tower,
//!   cosine scoring and max-margin hinge loss over sampled negative users.
//! * [`seqrec`]: a small bidirectional transformer trained with masked item
//!   prediction, fed by a frozen pretrained item table through a learned
//!   projection.
//!
//! Everything is deterministic given a seed: training is single-threaded and
//! only read-only inference is parallelised.

pub mod checkpoint;
pub mod config;
pub mod domain;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod knn;
pub mod optim;
pub mod pipeline;
pub mod ranking;
pub mod report;
pub mod seqrec;
pub mod shallow;
pub mod split;
pub mod synth;
pub mod tensor;

pub use domain::{build_id_maps, build_seen_sets, EmbeddingTable, Event, IdMap, InteractionLog, SeenSets};
pub use error::{Error, Result};
pub use eval::{metrics_at_k, MetricReport, MetricValues, RelevanceSets};
pub use ranking::Ranking;
pub use split::{DatasetSplit, SplitConfig};
