//! Interactive theme discovery over embedded text corpora.
//!
//! A corpus of instances (text, embedding, categorical concepts) is partitioned
//! for inspection, experts instantiate themes from good/bad exemplars and
//! explanatory phrases, and a weighted-rule mapper assigns instances to themes
//! or leaves them unassigned. Each mapping round is followed by re-partitioning
//! of the leftovers and a battery of coverage/quality analytics.
//!
//! The modules map onto the moving parts of a session:
//!
//! - [`store`]: instances, concept schema, assignment state, audit trail.
//! - [`index`]: cosine primitives, exact k-NN search, embedder clients,
//!   theme scoring.
//! - [`partition`]: spherical k-means, density-based clustering, member ranking.
//! - [`themes`]: theme registry and all intervention operations.
//! - [`mapper`]: training-data construction, rule-weight learning, MAP
//!   inference and the nearest-neighbour baseline.
//! - [`analytics`]: coverage, purity, quartile slices, overlap and shift
//!   matrices, evaluation reports, explanations.
//! - [`session`]: iteration lifecycle, mapping jobs, journal and snapshots.
//!
//! [`synth`] generates planted corpora; [`benchmark`] scripts a two-iteration
//! session over one.

pub mod analytics;
pub mod benchmark;
pub mod config;
pub mod index;
pub mod journal;
pub mod mapper;
pub mod partition;
pub mod report;
pub mod session;
pub mod store;
pub mod synth;
pub mod themes;

pub use config::SessionConfig;
pub use index::{cosine, Embedder, EmbedIndex, NeighborFilter, NeighborHit};
pub use mapper::{MappingResult, RuleWeightModel, TrainingSet};
pub use partition::Partition;
pub use session::Session;
pub use store::{Assignment, ConceptSchema, CorpusStats, CorpusStore, Instance, InstanceId, Record};
pub use themes::{Polarity, Theme, ThemeId, ThemeRegistry};
