//! Coverage and quality lenses over mapping results.
//!
//! Everything here is a pure function of committed [`MappingResult`]s plus a
//! read-only view of concept values.

mod evaluation;
mod explain;

pub use evaluation::{
    evaluation_report, stratified_sample, ConfusionMatrix, EvaluationReport, F1Average, GoldLabel, SliceScore,
};
pub use explain::{
    global_state, local_explanation, project_2d, ConceptHistogram, GlobalState, LabelShare, LocalExplanation,
    ProjectedPoint, TokenCount, DEFAULT_STOPWORDS,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapper::MappingResult;
use crate::store::{ConceptSchema, CorpusStore, InstanceId};
use crate::themes::ThemeId;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("the mapping covers no instances")]
    EmptyCorpus,
    #[error("no instance is mapped")]
    NothingMapped,
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("the schema defines no concepts")]
    NoConcepts,
    #[error("quartile slices need at least 4 mapped instances (got {0})")]
    TooFewMapped(usize),
    #[error("mapped instance `{0}` has no centroid similarity")]
    MissingSimilarity(InstanceId),
    #[error("the two mappings cover different corpora")]
    CorpusMismatch,
    #[error("gold judgment references unknown instance `{0}`")]
    UnknownGoldId(InstanceId),
    #[error("gold judgment references unmapped instance `{0}`")]
    UnmappedGoldId(InstanceId),
}

/// Read access to observed concept values.
pub trait ConceptSource {
    fn concept_value(&self, id: &str, concept: &str) -> Option<&str>;
}

impl ConceptSource for CorpusStore {
    fn concept_value(&self, id: &str, concept: &str) -> Option<&str> {
        self.get_instance(id).ok()?.concepts.get(concept).map(String::as_str)
    }
}

impl ConceptSource for BTreeMap<InstanceId, BTreeMap<String, String>> {
    fn concept_value(&self, id: &str, concept: &str) -> Option<&str> {
        self.get(id)?.get(concept).map(String::as_str)
    }
}

/// Row/column label of shift and distribution tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Theme(ThemeId),
    Unknown,
}

impl From<Option<ThemeId>> for Label {
    fn from(t: Option<ThemeId>) -> Self {
        t.map_or(Label::Unknown, Label::Theme)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Theme(t) => write!(f, "{t}"),
            Label::Unknown => f.write_str("Unknown"),
        }
    }
}

/// Percentage of instances mapped to some theme.
pub fn coverage(result: &MappingResult) -> Result<f64, AnalyticsError> {
    if result.total() == 0 {
        return Err(AnalyticsError::EmptyCorpus);
    }
    Ok(100.0 * result.mapped() as f64 / result.total() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThemePurity {
    pub theme: ThemeId,
    pub size: usize,
    /// Most common value; ties go to the lexicographically smallest.
    pub modal_value: Option<String>,
    pub modal_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub concept: String,
    pub purity: f64,
    /// Mapped instances.
    pub n: usize,
    pub themes: Vec<ThemePurity>,
}

/// `100/N · Σ_t max_v |t ∩ v|` over mapped instances. Members without a
/// value for the concept count toward `N` but toward no value.
pub fn concept_purity(
    result: &MappingResult,
    schema: &ConceptSchema,
    concepts: &dyn ConceptSource,
    concept: &str,
) -> Result<PurityReport, AnalyticsError> {
    if !schema.concepts.contains_key(concept) {
        return Err(AnalyticsError::UnknownConcept(concept.to_string()));
    }
    let n = result.mapped();
    if n == 0 {
        return Err(AnalyticsError::NothingMapped);
    }
    let mut themes = Vec::new();
    let mut total = 0;
    for (theme, members) in result.members_by_theme() {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for id in &members {
            if let Some(v) = concepts.concept_value(id, concept) {
                *counts.entry(v).or_default() += 1;
            }
        }
        let mut modal: Option<(&str, usize)> = None;
        for (v, c) in counts {
            if modal.is_none_or(|(_, m)| c > m) {
                modal = Some((v, c));
            }
        }
        let modal_count = modal.map_or(0, |(_, c)| c);
        total += modal_count;
        themes.push(ThemePurity {
            theme,
            size: members.len(),
            modal_value: modal.map(|(v, _)| v.to_string()),
            modal_count,
        });
    }
    Ok(PurityReport { concept: concept.to_string(), purity: 100.0 * total as f64 / n as f64, n, themes })
}

/// Unweighted mean of [`concept_purity`] over every schema concept.
pub fn avg_concept_purity(
    result: &MappingResult,
    schema: &ConceptSchema,
    concepts: &dyn ConceptSource,
) -> Result<f64, AnalyticsError> {
    if schema.concepts.is_empty() {
        return Err(AnalyticsError::NoConcepts);
    }
    let mut sum = 0.0;
    for name in schema.concepts.keys() {
        sum += concept_purity(result, schema, concepts, name)?.purity;
    }
    Ok(sum / schema.concepts.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slice {
    Q1,
    Q2,
    Q3,
    All,
}

impl Slice {
    pub const ALL: [Slice; 4] = [Slice::Q1, Slice::Q2, Slice::Q3, Slice::All];
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Slice::Q1 => "Q1",
            Slice::Q2 => "Q2",
            Slice::Q3 => "Q3",
            Slice::All => "All",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicedInstance {
    pub id: InstanceId,
    pub theme: ThemeId,
    pub similarity: f64,
}

/// Cumulative slices of the mapped instances by similarity to their theme's
/// centroid. `Q1` holds the most similar quarter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuartileSlices {
    /// Mapped instances, most similar first (ties by id).
    pub instances: Vec<SlicedInstance>,
    /// Similarity cut-offs for Q1, Q2, Q3.
    pub thresholds: [f64; 3],
}

impl QuartileSlices {
    pub fn threshold(&self, slice: Slice) -> f64 {
        match slice {
            Slice::Q1 => self.thresholds[0],
            Slice::Q2 => self.thresholds[1],
            Slice::Q3 => self.thresholds[2],
            Slice::All => f64::NEG_INFINITY,
        }
    }

    pub fn contains(&self, slice: Slice, similarity: f64) -> bool {
        similarity >= self.threshold(slice)
    }

    pub fn members(&self, slice: Slice) -> BTreeSet<InstanceId> {
        self.instances
            .iter()
            .filter(|i| self.contains(slice, i.similarity))
            .map(|i| i.id.clone())
            .collect()
    }

    pub fn size(&self, slice: Slice) -> usize {
        self.instances.iter().filter(|i| self.contains(slice, i.similarity)).count()
    }

    /// Most inclusive-first slice an instance falls in.
    pub fn slice_of(&self, similarity: f64) -> Slice {
        Slice::ALL.into_iter().find(|&s| self.contains(s, similarity)).unwrap_or(Slice::All)
    }
}

/// Nearest-rank quartiles: with similarities sorted in descending order, the
/// `Qk` cut-off is the value at rank `ceil(k/4 · n)`.
pub fn quartile_slices(result: &MappingResult) -> Result<QuartileSlices, AnalyticsError> {
    let mut instances = Vec::new();
    for e in &result.entries {
        if let Some(theme) = e.theme {
            let similarity = e.centroid_similarity.ok_or_else(|| AnalyticsError::MissingSimilarity(e.id.clone()))?;
            instances.push(SlicedInstance { id: e.id.clone(), theme, similarity });
        }
    }
    let n = instances.len();
    if n < 4 {
        return Err(AnalyticsError::TooFewMapped(n));
    }
    instances.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.id.cmp(&b.id)));
    let cut = |q: usize| {
        let rank = (q * n).div_ceil(4);
        instances[rank.max(1) - 1].similarity
    };
    let thresholds = [cut(1), cut(2), cut(3)];
    Ok(QuartileSlices { instances, thresholds })
}

/// Szymkiewicz–Simpson coefficient; 0 when either set is empty.
pub fn overlap<T: Ord>(x: &BTreeSet<T>, y: &BTreeSet<T>) -> f64 {
    let m = x.len().min(y.len());
    if m == 0 {
        return 0.0;
    }
    x.intersection(y).count() as f64 / m as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl OverlapMatrix {
    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.rows.iter().position(|l| l == row)?;
        let c = self.cols.iter().position(|l| l == col)?;
        Some(self.values[r][c])
    }
}

/// Overlap of every labelled set in `a` with every labelled set in `b`.
/// Either side may be externally produced (e.g. topic-model clusters).
pub fn overlap_matrix(
    a: &BTreeMap<String, BTreeSet<InstanceId>>,
    b: &BTreeMap<String, BTreeSet<InstanceId>>,
) -> OverlapMatrix {
    OverlapMatrix {
        rows: a.keys().cloned().collect(),
        cols: b.keys().cloned().collect(),
        values: a.values().map(|x| b.values().map(|y| overlap(x, y)).collect()).collect(),
    }
}

/// Member sets of a mapping keyed by the theme's display label.
pub fn theme_sets(result: &MappingResult) -> BTreeMap<String, BTreeSet<InstanceId>> {
    result.members_by_theme().into_iter().map(|(t, m)| (t.to_string(), m)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftMatrix {
    /// Shared row (previous) and column (next) labels; `Unknown` last.
    pub labels: Vec<Label>,
    /// Percentages of the full population.
    pub values: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    pub n: usize,
}

impl ShiftMatrix {
    pub fn get(&self, from: Label, to: Label) -> Option<f64> {
        let r = self.labels.iter().position(|&l| l == from)?;
        let c = self.labels.iter().position(|&l| l == to)?;
        Some(self.values[r][c])
    }

    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum()
    }
}

/// How instances moved between two mappings of the same corpus.
pub fn shift_matrix(prev: &MappingResult, next: &MappingResult) -> Result<ShiftMatrix, AnalyticsError> {
    let before: BTreeMap<&str, Label> = prev.entries.iter().map(|e| (e.id.as_str(), e.theme.into())).collect();
    let after: BTreeMap<&str, Label> = next.entries.iter().map(|e| (e.id.as_str(), e.theme.into())).collect();
    if before.len() != prev.entries.len() || after.len() != next.entries.len() || !before.keys().eq(after.keys()) {
        return Err(AnalyticsError::CorpusMismatch);
    }
    let n = before.len();
    if n == 0 {
        return Err(AnalyticsError::EmptyCorpus);
    }
    let labels: Vec<Label> = before
        .values()
        .chain(after.values())
        .copied()
        .chain([Label::Unknown])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos = |l: &Label| labels.binary_search(l).expect("label collected above");
    let mut counts = vec![vec![0usize; labels.len()]; labels.len()];
    for (id, from) in &before {
        counts[pos(from)][pos(&after[id])] += 1;
    }
    let values = counts
        .iter()
        .map(|row| row.iter().map(|&c| 100.0 * c as f64 / n as f64).collect())
        .collect();
    Ok(ShiftMatrix { labels, values, counts, n })
}
