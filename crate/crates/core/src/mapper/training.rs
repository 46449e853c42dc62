//! Training data built from expert feedback.
//!
//! Every exemplar contributes its `K` nearest corpus instances with the
//! exemplar's polarity: good examples and explanatory phrases yield positives,
//! bad examples negatives for their own theme. Each theme additionally gets a
//! seeded sample of other themes' positives as negatives, as many as it has
//! positives. When one instance collects both polarities for one theme, the
//! label of the closer exemplar wins.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{similarity_features, MapperError, MappingContext};
use crate::themes::{Exemplar, ExemplarSource, Theme, ThemeId};

pub const DEFAULT_NEIGHBORS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowSource {
    Instance { id: String },
    Phrase { theme: ThemeId, text: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowProvenance {
    ExpertExemplar,
    NeighborOfExemplar,
    CrossThemeNegative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub source: RowSource,
    pub theme: ThemeId,
    pub positive: bool,
    pub provenance: RowProvenance,
    /// Max-similarity to each theme of the owning [`TrainingSet`], in its order.
    pub similarities: Vec<f64>,
    /// Observed concept values, plus exemplar annotations where the row had none.
    pub concepts: BTreeMap<String, String>,
    pub embedding: Vec<f32>,
    pub weight: f64,
    /// Similarity to the exemplar that produced the row.
    pub anchor_similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub themes: Vec<ThemeId>,
    pub rows: Vec<TrainingRow>,
}

impl TrainingSet {
    pub fn rows_for(&self, theme: ThemeId) -> impl Iterator<Item = &TrainingRow> {
        self.rows.iter().filter(move |r| r.theme == theme)
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.positive).count()
    }

    pub fn negatives(&self) -> usize {
        self.rows.len() - self.positives()
    }
}

/// Row weight for instances whose concepts an expert corrected.
const CORRECTED_WEIGHT: f64 = 2.0;

struct Candidate {
    source: RowSource,
    theme: ThemeId,
    positive: bool,
    provenance: RowProvenance,
    anchor_similarity: f64,
    embedding: Vec<f32>,
    base_concepts: BTreeMap<String, String>,
    exemplar_concepts: BTreeMap<String, String>,
    corrected: bool,
}

pub fn generate_training_data(
    ctx: &MappingContext,
    neighbors: usize,
    seed: u64,
) -> Result<TrainingSet, MapperError> {
    let themes: Vec<&Theme> = ctx.themes.iter().filter(|t| t.is_scoreable()).collect();
    if themes.is_empty() {
        return Err(MapperError::NoPositiveExemplars);
    }
    let theme_ids: Vec<ThemeId> = themes.iter().map(|t| t.id).collect();
    let by_id: BTreeMap<&str, &super::InstanceView> =
        ctx.instances.iter().map(|v| (v.id.as_str(), v)).collect();

    let mut candidates: Vec<Candidate> = Vec::new();
    for theme in &themes {
        let exemplars = theme
            .good_examples
            .iter()
            .chain(&theme.explanatory_phrases)
            .map(|e| (e, true))
            .chain(theme.bad_examples.iter().map(|e| (e, false)));
        for (exemplar, positive) in exemplars {
            collect_exemplar(ctx, &by_id, theme.id, exemplar, positive, neighbors, &mut candidates)?;
        }
    }

    // one label per (source, theme): closest anchor wins, positives win exact ties
    let mut best: BTreeMap<(RowSource, ThemeId), Candidate> = BTreeMap::new();
    for c in candidates {
        let key = (c.source.clone(), c.theme);
        match best.get(&key) {
            Some(prev)
                if prev.anchor_similarity > c.anchor_similarity
                    || (prev.anchor_similarity == c.anchor_similarity && (prev.positive || !c.positive)) => {}
            _ => {
                best.insert(key, c);
            }
        }
    }

    let mut rows: Vec<TrainingRow> = Vec::with_capacity(best.len());
    for c in best.values() {
        rows.push(to_row(&themes, c, c.theme, c.positive, c.provenance)?);
    }

    let mut cross = Vec::new();
    for (ti, &theme) in theme_ids.iter().enumerate() {
        let n_pos = rows.iter().filter(|r| r.theme == theme && r.positive).count();
        let labelled: HashSet<&RowSource> = rows.iter().filter(|r| r.theme == theme).map(|r| &r.source).collect();
        let mut seen = HashSet::new();
        let mut pool: Vec<&Candidate> = best
            .values()
            .filter(|c| c.positive && c.theme != theme && !labelled.contains(&c.source))
            .filter(|c| seen.insert(&c.source))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(ti as u64 + 1)));
        pool.shuffle(&mut rng);
        for c in pool.into_iter().take(n_pos) {
            cross.push(to_row(&themes, c, theme, false, RowProvenance::CrossThemeNegative)?);
        }
    }
    rows.extend(cross);
    rows.sort_by(|a, b| a.theme.cmp(&b.theme).then_with(|| a.source.cmp(&b.source)));
    Ok(TrainingSet { themes: theme_ids, rows })
}

fn collect_exemplar(
    ctx: &MappingContext,
    by_id: &BTreeMap<&str, &super::InstanceView>,
    theme: ThemeId,
    exemplar: &Exemplar,
    positive: bool,
    neighbors: usize,
    out: &mut Vec<Candidate>,
) -> Result<(), MapperError> {
    let own_instance = match &exemplar.source {
        ExemplarSource::Instance(id) => Some(id.as_str()),
        ExemplarSource::Phrase(text) => {
            out.push(Candidate {
                source: RowSource::Phrase { theme, text: text.clone() },
                theme,
                positive,
                provenance: RowProvenance::ExpertExemplar,
                anchor_similarity: 1.0,
                embedding: exemplar.embedding.clone(),
                base_concepts: exemplar.concepts.clone(),
                exemplar_concepts: BTreeMap::new(),
                corrected: !exemplar.concepts.is_empty(),
            });
            None
        }
    };
    if neighbors == 0 {
        return Ok(());
    }
    let hits = ctx.index.search(&exemplar.embedding, neighbors, |_| true)?;
    for hit in hits {
        let Some(view) = by_id.get(hit.id.as_str()) else { continue };
        let is_self = own_instance == Some(hit.id.as_str());
        out.push(Candidate {
            source: RowSource::Instance { id: hit.id.clone() },
            theme,
            positive,
            provenance: if is_self { RowProvenance::ExpertExemplar } else { RowProvenance::NeighborOfExemplar },
            anchor_similarity: hit.similarity,
            embedding: ctx.index.vector(view.row).to_vec(),
            base_concepts: view.concepts.clone(),
            exemplar_concepts: exemplar.concepts.clone(),
            corrected: view.corrected,
        });
    }
    Ok(())
}

fn to_row(
    themes: &[&Theme],
    c: &Candidate,
    theme: ThemeId,
    positive: bool,
    provenance: RowProvenance,
) -> Result<TrainingRow, MapperError> {
    let mut concepts = c.base_concepts.clone();
    for (k, v) in &c.exemplar_concepts {
        concepts.entry(k.clone()).or_insert_with(|| v.clone());
    }
    Ok(TrainingRow {
        source: c.source.clone(),
        theme,
        positive,
        provenance,
        similarities: similarity_features(&c.embedding, themes)?,
        concepts,
        embedding: c.embedding.clone(),
        weight: if c.corrected { CORRECTED_WEIGHT } else { 1.0 },
        anchor_similarity: c.anchor_similarity,
    })
}
