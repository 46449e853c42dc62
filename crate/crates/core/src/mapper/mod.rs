//! Weighted-rule mapping of instances to themes.
//!
//! Four rule families drive the mapper:
//!
//! - theme rules (`Inst(i) => Theme(i,t)`): a per-theme scorer over the
//!   instance's max-similarity to every theme;
//! - concept rules (`Inst(i) => Concept(i,c)`): per-concept value prototypes,
//!   consulted only to impute a missing concept value;
//! - concept-theme rules (`Inst(i) & Concept(i,c) => Theme(i,t)`): one learned
//!   affinity per (concept value, theme);
//! - exclusivity (`Theme(i,t) & t != t' => !Theme(i,t')`): enforced
//!   structurally, every instance receives at most one theme.
//!
//! Because every rule grounds on a single instance, the MAP assignment
//! factorizes and is computed as a per-instance thresholded argmax.

mod infer;
mod learn;
mod training;

pub use infer::{infer, infer_with_progress, nns_baseline, InferenceScope};
pub use learn::{learn_weights, ConceptRule, LearnConfig, RuleWeightModel, ThemeRule, MODEL_FORMAT_VERSION};
pub use training::{generate_training_data, RowProvenance, RowSource, TrainingRow, TrainingSet, DEFAULT_NEIGHBORS};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{theme_similarity, EmbedIndex, IndexError};
use crate::store::{Assignment, CorpusStore, InstanceId};
use crate::themes::{Theme, ThemeId, ThemeRegistry};

pub const DEFAULT_TAU: f64 = 0.6;

#[derive(Debug, Error)]
pub enum MapperError {
    #[error("no theme has a good example or explanatory phrase")]
    NoPositiveExemplars,
    #[error("training data is degenerate: {0}")]
    Degenerate(String),
    #[error("themes without positive exemplars cannot be scored: {0:?}")]
    Unscoreable(Vec<ThemeId>),
    #[error("model was trained for a different theme set (mismatched: {0:?}); retrain first")]
    ModelStale(Vec<ThemeId>),
    #[error("store is not ready: {0} instances lack embeddings")]
    NotReady(usize),
    #[error("unsupported model format version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },
    #[error("tau must lie in [0, 1] (got {0})")]
    BadTau(f64),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Format(#[from] serde_json::Error),
}

/// Read-only view of an instance needed by the mapper.
#[derive(Clone, Debug)]
pub struct InstanceView {
    pub id: InstanceId,
    pub row: usize,
    pub concepts: BTreeMap<String, String>,
    pub assignment: Assignment,
    pub corrected: bool,
}

/// Immutable inputs for training and inference, detached from the live store
/// so a mapping job can run while readers continue.
#[derive(Clone, Debug)]
pub struct MappingContext {
    pub index: Arc<EmbedIndex>,
    pub instances: Vec<InstanceView>,
    pub themes: Vec<Theme>,
    pub schema: crate::store::ConceptSchema,
    pub iteration: u32,
}

impl MappingContext {
    pub fn from_store(store: &CorpusStore, themes: &ThemeRegistry, iteration: u32) -> Result<Self, MapperError> {
        let pending = store.pending_ids().len();
        if pending > 0 {
            return Err(MapperError::NotReady(pending));
        }
        let index = store.index();
        let instances = store
            .instances()
            .iter()
            .map(|inst| InstanceView {
                id: inst.id.clone(),
                row: index.row_of(&inst.id).expect("ready store indexes every instance"),
                concepts: inst.concepts.clone(),
                assignment: inst.assignment.clone(),
                corrected: inst.concept_corrected(),
            })
            .collect();
        Ok(Self {
            index,
            instances,
            themes: themes.themes().cloned().collect(),
            schema: store.schema().clone(),
            iteration: iteration.max(1),
        })
    }

    pub fn embedding(&self, view: &InstanceView) -> &[f32] {
        self.index.vector(view.row)
    }

    pub fn theme(&self, id: ThemeId) -> Option<&Theme> {
        self.themes.iter().find(|t| t.id == id)
    }

    pub fn unscoreable(&self) -> Vec<ThemeId> {
        self.themes.iter().filter(|t| !t.is_scoreable()).map(|t| t.id).collect()
    }

    pub(crate) fn clamps(&self) -> BTreeMap<&str, ThemeId> {
        let mut out = BTreeMap::new();
        for t in &self.themes {
            for id in t.good_instances() {
                out.insert(id.as_str(), t.id);
            }
        }
        out
    }
}

/// Max-similarity of `embedding` to each theme, in the given order.
pub fn similarity_features(embedding: &[f32], themes: &[&Theme]) -> Result<Vec<f64>, IndexError> {
    themes.iter().map(|t| theme_similarity(embedding, t)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMethod {
    /// Learned weighted rules over similarity and concepts.
    NeSy,
    /// Thresholded max-cosine only.
    Nns,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMapping {
    pub id: InstanceId,
    pub theme: Option<ThemeId>,
    /// Confidence of the best theme (also recorded for unassigned instances).
    pub score: f64,
    /// Cosine to the assigned theme's centroid.
    pub centroid_similarity: Option<f64>,
    /// Expert good-mark forced this assignment.
    #[serde(default)]
    pub clamped: bool,
}

/// One iteration's instance-to-theme snapshot over the whole corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingResult {
    pub iteration: u32,
    pub method: MappingMethod,
    pub tau: f64,
    pub entries: Vec<InstanceMapping>,
}

impl MappingResult {
    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn mapped(&self) -> usize {
        self.entries.iter().filter(|e| e.theme.is_some()).count()
    }

    pub fn unmapped(&self) -> usize {
        self.total() - self.mapped()
    }

    pub fn label_of(&self, id: &str) -> Option<Option<ThemeId>> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.theme)
    }

    /// Member ids per theme.
    pub fn members_by_theme(&self) -> BTreeMap<ThemeId, BTreeSet<InstanceId>> {
        let mut out: BTreeMap<ThemeId, BTreeSet<InstanceId>> = BTreeMap::new();
        for e in &self.entries {
            if let Some(t) = e.theme {
                out.entry(t).or_default().insert(e.id.clone());
            }
        }
        out
    }

    pub fn mapped_set(&self) -> BTreeSet<InstanceId> {
        self.entries.iter().filter(|e| e.theme.is_some()).map(|e| e.id.clone()).collect()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Similarities are clamped away from 0 and 1 before entering log-odds space.
pub const SIMILARITY_CLAMP: f64 = 1e-4;

pub(crate) fn similarity_logit(s: f64) -> f64 {
    let p = s.clamp(SIMILARITY_CLAMP, 1.0 - SIMILARITY_CLAMP);
    (p / (1.0 - p)).ln()
}
