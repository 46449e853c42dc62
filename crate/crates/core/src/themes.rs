//! Theme registry and the intervention operations experts perform on it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::normalized_mean;
use crate::store::{Assignment, CorpusStore, InstanceId, StoreError, ThemeCatalog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThemeId(pub u64);

impl fmt::Display for ThemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Good,
    Bad,
}

/// Identity of an exemplar: a corpus instance or an authored phrase (by exact text).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ExemplarSource {
    Instance(InstanceId),
    Phrase(String),
}

impl fmt::Display for ExemplarSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExemplarSource::Instance(id) => write!(f, "instance `{id}`"),
            ExemplarSource::Phrase(p) => write!(f, "phrase \"{p}\""),
        }
    }
}

/// A good/bad example or explanatory phrase with its resolved embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub source: ExemplarSource,
    pub embedding: Vec<f32>,
    #[serde(default)]
    pub concepts: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theme {
    pub id: ThemeId,
    pub name: String,
    pub good_examples: Vec<Exemplar>,
    pub bad_examples: Vec<Exemplar>,
    pub explanatory_phrases: Vec<Exemplar>,
    pub created_iteration: u32,
    pub centroid: Option<Vec<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Good,
    Bad,
    Phrase,
}

impl Theme {
    fn new(id: ThemeId, name: String, created_iteration: u32) -> Self {
        Self {
            id,
            name,
            good_examples: Vec::new(),
            bad_examples: Vec::new(),
            explanatory_phrases: Vec::new(),
            created_iteration,
            centroid: None,
        }
    }

    /// Good examples followed by explanatory phrases.
    pub fn positive_exemplars(&self) -> impl Iterator<Item = &Exemplar> {
        self.good_examples.iter().chain(&self.explanatory_phrases)
    }

    pub fn positive_embeddings(&self) -> impl Iterator<Item = &[f32]> {
        self.positive_exemplars().map(|e| e.embedding.as_slice())
    }

    pub fn is_scoreable(&self) -> bool {
        !self.good_examples.is_empty() || !self.explanatory_phrases.is_empty()
    }

    /// Instance ids the experts marked good; these are clamped during mapping.
    pub fn good_instances(&self) -> impl Iterator<Item = &InstanceId> {
        self.good_examples.iter().filter_map(|e| match &e.source {
            ExemplarSource::Instance(id) => Some(id),
            ExemplarSource::Phrase(_) => None,
        })
    }

    fn locate(&self, source: &ExemplarSource) -> Option<(Slot, usize)> {
        let find = |list: &[Exemplar]| list.iter().position(|e| &e.source == source);
        find(&self.good_examples)
            .map(|i| (Slot::Good, i))
            .or_else(|| find(&self.bad_examples).map(|i| (Slot::Bad, i)))
            .or_else(|| find(&self.explanatory_phrases).map(|i| (Slot::Phrase, i)))
    }

    pub fn exemplar(&self, source: &ExemplarSource) -> Option<&Exemplar> {
        self.locate(source).map(|(slot, i)| match slot {
            Slot::Good => &self.good_examples[i],
            Slot::Bad => &self.bad_examples[i],
            Slot::Phrase => &self.explanatory_phrases[i],
        })
    }

    fn exemplar_mut(&mut self, source: &ExemplarSource) -> Option<&mut Exemplar> {
        self.locate(source).map(move |(slot, i)| match slot {
            Slot::Good => &mut self.good_examples[i],
            Slot::Bad => &mut self.bad_examples[i],
            Slot::Phrase => &mut self.explanatory_phrases[i],
        })
    }

    fn recompute_centroid(&mut self) {
        let dim = self.positive_embeddings().next().map_or(0, <[f32]>::len);
        self.centroid = normalized_mean(self.positive_embeddings(), dim);
    }
}

#[derive(Debug, Error)]
pub enum ThemeError {
    #[error("theme name must not be empty")]
    EmptyName,
    #[error("a theme named `{0}` already exists")]
    DuplicateName(String),
    #[error("unknown theme {0}")]
    UnknownTheme(ThemeId),
    #[error("phrase must not be empty")]
    EmptyPhrase,
    #[error("{exemplar} is already a {existing:?} example of {theme}; remove it first")]
    PolarityConflict {
        theme: ThemeId,
        exemplar: ExemplarSource,
        existing: Polarity,
    },
    #[error("instance `{instance}` is already a good example of {other}")]
    GoodElsewhere { instance: InstanceId, other: ThemeId },
    #[error("{exemplar} is not an exemplar of {theme}")]
    NotPresent { theme: ThemeId, exemplar: ExemplarSource },
    #[error("exemplar embedding has dimension {found}, corpus uses {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("unsupported feedback file version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed feedback file: {0}")]
    Format(#[from] serde_json::Error),
}

/// What to add as an exemplar; phrase embeddings are resolved by the caller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExemplarInput {
    Instance { id: InstanceId },
    Phrase { text: String, embedding: Vec<f32> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThemeRegistry {
    themes: BTreeMap<ThemeId, Theme>,
    next_id: u64,
}

impl ThemeCatalog for ThemeRegistry {
    fn contains_theme(&self, theme: ThemeId) -> bool {
        self.themes.contains_key(&theme)
    }
}

pub const FEEDBACK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FeedbackFile {
    format_version: u32,
    registry: ThemeRegistry,
}

impl ThemeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.themes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.themes.is_empty()
    }

    pub fn get(&self, id: ThemeId) -> Result<&Theme, ThemeError> {
        self.themes.get(&id).ok_or(ThemeError::UnknownTheme(id))
    }

    /// Live themes in id order.
    pub fn themes(&self) -> impl Iterator<Item = &Theme> {
        self.themes.values()
    }

    pub fn ids(&self) -> Vec<ThemeId> {
        self.themes.keys().copied().collect()
    }

    pub fn by_name(&self, name: &str) -> Option<&Theme> {
        self.themes.values().find(|t| t.name == name)
    }

    pub fn unscoreable(&self) -> Vec<ThemeId> {
        self.themes.values().filter(|t| !t.is_scoreable()).map(|t| t.id).collect()
    }

    /// Instance id to theme for every good-instance mark.
    pub fn clamps(&self) -> BTreeMap<InstanceId, ThemeId> {
        let mut out = BTreeMap::new();
        for t in self.themes.values() {
            for id in t.good_instances() {
                out.insert(id.clone(), t.id);
            }
        }
        out
    }

    fn check_name(&self, name: &str, except: Option<ThemeId>) -> Result<String, ThemeError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(ThemeError::EmptyName);
        }
        if self.themes.values().any(|t| t.name == name && Some(t.id) != except) {
            return Err(ThemeError::DuplicateName(name.to_string()));
        }
        Ok(name.to_string())
    }

    fn theme_mut(&mut self, id: ThemeId) -> Result<&mut Theme, ThemeError> {
        self.themes.get_mut(&id).ok_or(ThemeError::UnknownTheme(id))
    }

    pub fn create_theme(&mut self, name: &str, iteration: u32) -> Result<&Theme, ThemeError> {
        let name = self.check_name(name, None)?;
        let id = ThemeId(self.next_id);
        self.next_id += 1;
        Ok(self.themes.entry(id).or_insert(Theme::new(id, name, iteration)))
    }

    pub fn rename_theme(&mut self, id: ThemeId, name: &str) -> Result<&Theme, ThemeError> {
        let name = self.check_name(name, Some(id))?;
        let theme = self.theme_mut(id)?;
        theme.name = name;
        Ok(theme)
    }

    /// Removes the theme and returns how many instances went back to Unassigned.
    pub fn delete_theme(&mut self, id: ThemeId, store: &mut CorpusStore) -> Result<usize, ThemeError> {
        self.themes.remove(&id).ok_or(ThemeError::UnknownTheme(id))?;
        Ok(store.release_theme(id))
    }

    pub fn add_exemplar(
        &mut self,
        store: &mut CorpusStore,
        id: ThemeId,
        polarity: Polarity,
        input: ExemplarInput,
        iteration: u32,
    ) -> Result<&Theme, ThemeError> {
        let (exemplar, instance) = match input {
            ExemplarInput::Instance { id: inst_id } => {
                let inst = store.get_instance(&inst_id)?;
                if inst.embedding.is_empty() {
                    return Err(StoreError::NotReady(1).into());
                }
                (
                    Exemplar {
                        source: ExemplarSource::Instance(inst_id.clone()),
                        embedding: inst.embedding.clone(),
                        concepts: BTreeMap::new(),
                    },
                    Some(inst_id),
                )
            }
            ExemplarInput::Phrase { text, embedding } => {
                if text.trim().is_empty() {
                    return Err(ThemeError::EmptyPhrase);
                }
                (
                    Exemplar {
                        source: ExemplarSource::Phrase(text),
                        embedding: checked_embedding(store, &embedding)?,
                        concepts: BTreeMap::new(),
                    },
                    None,
                )
            }
        };
        if let (Some(inst_id), Polarity::Good) = (&instance, polarity) {
            if let Some(other) = self
                .themes
                .values()
                .find(|t| t.id != id && t.good_instances().any(|g| g == inst_id))
            {
                return Err(ThemeError::GoodElsewhere { instance: inst_id.clone(), other: other.id });
            }
        }
        let theme = self.themes.get(&id).ok_or(ThemeError::UnknownTheme(id))?;
        match theme.locate(&exemplar.source) {
            Some((Slot::Good | Slot::Phrase, _)) if polarity == Polarity::Bad => {
                return Err(ThemeError::PolarityConflict {
                    theme: id,
                    exemplar: exemplar.source,
                    existing: Polarity::Good,
                })
            }
            Some((Slot::Bad, _)) if polarity == Polarity::Good => {
                return Err(ThemeError::PolarityConflict {
                    theme: id,
                    exemplar: exemplar.source,
                    existing: Polarity::Bad,
                })
            }
            Some(_) => return self.get(id),
            _ => {}
        }
        if let (Some(inst_id), Polarity::Good) = (&instance, polarity) {
            let catalog = BTreeSet::from([id]);
            store.set_assignment(
                inst_id,
                Assignment::Assigned { theme: id, score: 1.0, iteration: iteration.max(1) },
                &catalog,
            )?;
        }
        let theme = self.theme_mut(id)?;
        match polarity {
            Polarity::Good => theme.good_examples.push(exemplar),
            Polarity::Bad => theme.bad_examples.push(exemplar),
        }
        theme.recompute_centroid();
        Ok(theme)
    }

    /// Adds a natural-language explanation of the theme; it scores like a good example.
    pub fn add_explanatory_phrase(
        &mut self,
        store: &CorpusStore,
        id: ThemeId,
        text: &str,
        embedding: Vec<f32>,
    ) -> Result<&Theme, ThemeError> {
        if text.trim().is_empty() {
            return Err(ThemeError::EmptyPhrase);
        }
        let embedding = checked_embedding(store, &embedding)?;
        let source = ExemplarSource::Phrase(text.to_string());
        match self.get(id)?.locate(&source) {
            Some((Slot::Bad, _)) => {
                return Err(ThemeError::PolarityConflict { theme: id, exemplar: source, existing: Polarity::Bad })
            }
            Some(_) => return self.get(id),
            None => {}
        }
        let theme = self.theme_mut(id)?;
        theme.explanatory_phrases.push(Exemplar { source, embedding, concepts: BTreeMap::new() });
        theme.recompute_centroid();
        Ok(theme)
    }

    /// Removes a good/bad example or explanatory phrase. Instances keep any
    /// assignment they already have.
    pub fn remove_exemplar(&mut self, id: ThemeId, source: &ExemplarSource) -> Result<&Theme, ThemeError> {
        let theme = self.theme_mut(id)?;
        match theme.locate(source) {
            None => {
                return Err(ThemeError::NotPresent { theme: id, exemplar: source.clone() });
            }
            Some((Slot::Good, i)) => {
                theme.good_examples.remove(i);
            }
            Some((Slot::Bad, i)) => {
                theme.bad_examples.remove(i);
            }
            Some((Slot::Phrase, i)) => {
                theme.explanatory_phrases.remove(i);
            }
        }
        theme.recompute_centroid();
        Ok(theme)
    }

    /// Stores expert concept values on an exemplar. For instance exemplars the
    /// corpus record is corrected as well.
    pub fn set_exemplar_concepts(
        &mut self,
        store: &mut CorpusStore,
        id: ThemeId,
        source: &ExemplarSource,
        concepts: &BTreeMap<String, String>,
        timestamp_ms: u64,
    ) -> Result<&Exemplar, ThemeError> {
        let theme = self.themes.get(&id).ok_or(ThemeError::UnknownTheme(id))?;
        if theme.exemplar(source).is_none() {
            return Err(ThemeError::NotPresent { theme: id, exemplar: source.clone() });
        }
        store.schema().check_map(concepts)?;
        if let ExemplarSource::Instance(inst) = source {
            store.upsert_concepts_at(inst, concepts, timestamp_ms)?;
        }
        let exemplar = self
            .theme_mut(id)?
            .exemplar_mut(source)
            .expect("exemplar located above");
        for (c, v) in concepts {
            exemplar.concepts.insert(c.clone(), v.clone());
        }
        Ok(exemplar)
    }

    pub fn save_feedback(&self, path: &Path) -> Result<(), ThemeError> {
        let file = FeedbackFile { format_version: FEEDBACK_FORMAT_VERSION, registry: self.clone() };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_feedback(path: &Path) -> Result<Self, ThemeError> {
        let bytes = std::fs::read(path)?;
        let file: FeedbackFile = serde_json::from_slice(&bytes)?;
        if file.format_version > FEEDBACK_FORMAT_VERSION {
            return Err(ThemeError::Version { found: file.format_version, supported: FEEDBACK_FORMAT_VERSION });
        }
        Ok(file.registry)
    }
}

fn checked_embedding(store: &CorpusStore, embedding: &[f32]) -> Result<Vec<f32>, ThemeError> {
    if let Some(dim) = store.dim() {
        if embedding.len() != dim {
            return Err(ThemeError::Dimension { expected: dim, found: embedding.len() });
        }
    }
    crate::index::normalize(embedding).ok_or(ThemeError::Dimension { expected: embedding.len(), found: 0 })
}
