//! Corpus storage: instances, the concept schema, assignment state and the
//! concept audit trail.
//!
//! Embeddings are L2-normalized on the way in, so every similarity downstream
//! is a plain dot product. Records that arrive without an embedding are kept
//! in a pending queue until an [`Embedder`] resolves them; the store is not
//! [ready](CorpusStore::is_ready) until that queue is empty.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{normalize, EmbedError, EmbedIndex, Embedder};
use crate::themes::ThemeId;

pub type InstanceId = String;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate instance id `{0}`")]
    DuplicateId(InstanceId),
    #[error("record {record} (`{id}`): concept `{concept}` {reason}")]
    ConceptViolation {
        record: usize,
        id: InstanceId,
        concept: String,
        reason: String,
    },
    #[error("concept `{concept}` {reason}")]
    SchemaViolation { concept: String, reason: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("record {record} (`{id}`): embedding has dimension {found}, store expects {expected}")]
    DimensionMismatch {
        record: usize,
        id: InstanceId,
        expected: usize,
        found: usize,
    },
    #[error("record {record} (`{id}`): embedding has zero norm")]
    ZeroEmbedding { record: usize, id: InstanceId },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown instance `{0}`")]
    UnknownInstance(InstanceId),
    #[error("unknown theme {0}")]
    UnknownTheme(ThemeId),
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("store is not ready: {0} instances still lack embeddings")]
    NotReady(usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Annotated,
    #[default]
    Predicted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub values: Vec<String>,
    #[serde(default)]
    pub provenance: Provenance,
}

/// Categorical concepts an instance may carry, with their allowed values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptSchema {
    pub concepts: BTreeMap<String, ConceptSpec>,
}

impl ConceptSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_concept<I, S>(mut self, name: &str, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.concepts.insert(
            name.to_string(),
            ConceptSpec {
                values: values.into_iter().map(Into::into).collect(),
                provenance: Provenance::Predicted,
            },
        );
        self
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        for (name, spec) in &self.concepts {
            if name.is_empty() {
                return Err(StoreError::InvalidSchema("empty concept name".into()));
            }
            if spec.values.len() < 2 {
                return Err(StoreError::InvalidSchema(format!(
                    "concept `{name}` needs at least two allowed values"
                )));
            }
            let distinct: BTreeSet<&String> = spec.values.iter().collect();
            if distinct.len() != spec.values.len() {
                return Err(StoreError::InvalidSchema(format!(
                    "concept `{name}` lists a value twice"
                )));
            }
        }
        Ok(())
    }

    pub fn check(&self, concept: &str, value: &str) -> Result<(), String> {
        match self.concepts.get(concept) {
            None => Err("is not in the schema".to_string()),
            Some(spec) if !spec.values.iter().any(|v| v == value) => {
                Err(format!("has value `{value}` outside the allowed set"))
            }
            Some(_) => Ok(()),
        }
    }

    pub fn check_map(&self, concepts: &BTreeMap<String, String>) -> Result<(), StoreError> {
        for (c, v) in concepts {
            self.check(c, v).map_err(|reason| StoreError::SchemaViolation {
                concept: c.clone(),
                reason,
            })?;
        }
        Ok(())
    }

    /// `(concept, value)` pairs in one-hot layout order.
    pub fn value_layout(&self) -> Vec<(String, String)> {
        self.concepts
            .iter()
            .flat_map(|(c, spec)| spec.values.iter().map(move |v| (c.clone(), v.clone())))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Assignment {
    Unassigned,
    Assigned {
        theme: ThemeId,
        score: f64,
        iteration: u32,
    },
}

impl Assignment {
    pub fn theme(&self) -> Option<ThemeId> {
        match self {
            Assignment::Unassigned => None,
            Assignment::Assigned { theme, .. } => Some(*theme),
        }
    }

    pub fn is_assigned(&self) -> bool {
        matches!(self, Assignment::Assigned { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub text: String,
    /// Unit-norm embedding; empty while the instance waits for the embedder.
    pub embedding: Vec<f32>,
    pub concepts: BTreeMap<String, String>,
    pub assignment: Assignment,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
    /// Concepts whose value was set or corrected by an expert.
    #[serde(default)]
    pub corrected: BTreeSet<String>,
}

impl Instance {
    pub fn concept_corrected(&self) -> bool {
        !self.corrected.is_empty()
    }

    pub fn provenance(&self, concept: &str, schema: &ConceptSchema) -> Option<Provenance> {
        if !self.concepts.contains_key(concept) {
            return None;
        }
        if self.corrected.contains(concept) {
            return Some(Provenance::Annotated);
        }
        schema.concepts.get(concept).map(|s| s.provenance)
    }
}

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: InstanceId,
    pub text: String,
    #[serde(default)]
    pub concepts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    #[serde(default, alias = "meta", skip_serializing_if = "BTreeMap::is_empty")]
    pub source_meta: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestMode {
    /// Any id already in the store is an error.
    #[default]
    Strict,
    /// Records whose id is already stored are skipped.
    DedupOnId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub instance: InstanceId,
    pub concept: String,
    pub old: Option<String>,
    pub new: String,
    pub timestamp_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub instance_count: usize,
    pub embedding_dim: usize,
    pub concept_histograms: BTreeMap<String, BTreeMap<String, usize>>,
    pub assigned_count: usize,
    pub unassigned_count: usize,
    pub pending_embeddings: usize,
}

/// Implemented by anything that can answer whether a theme id is live.
pub trait ThemeCatalog {
    fn contains_theme(&self, theme: ThemeId) -> bool;
}

impl ThemeCatalog for BTreeSet<ThemeId> {
    fn contains_theme(&self, theme: ThemeId) -> bool {
        self.contains(&theme)
    }
}

/// Serializable state of a [`CorpusStore`]; the index and id map are rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub schema: ConceptSchema,
    pub dim: Option<usize>,
    pub instances: Vec<Instance>,
    pub audits: Vec<AuditEntry>,
}

#[derive(Clone, Debug)]
pub struct CorpusStore {
    schema: ConceptSchema,
    dim: Option<usize>,
    instances: Vec<Instance>,
    positions: HashMap<InstanceId, usize>,
    audits: Vec<AuditEntry>,
    index: Arc<EmbedIndex>,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl CorpusStore {
    pub fn new(schema: ConceptSchema) -> Result<Self, StoreError> {
        schema.validate()?;
        Ok(Self {
            schema,
            dim: None,
            instances: Vec::new(),
            positions: HashMap::new(),
            audits: Vec::new(),
            index: Arc::new(EmbedIndex::empty(0)),
        })
    }

    /// Fixes the embedding dimension before any record arrives.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self.index = Arc::new(EmbedIndex::empty(dim));
        self
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn audits(&self) -> &[AuditEntry] {
        &self.audits
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    /// Current immutable index snapshot; cheap to clone and share.
    pub fn index(&self) -> Arc<EmbedIndex> {
        Arc::clone(&self.index)
    }

    pub fn get_instance(&self, id: &str) -> Result<&Instance, StoreError> {
        self.position(id)
            .map(|p| &self.instances[p])
            .ok_or_else(|| StoreError::UnknownInstance(id.to_string()))
    }

    pub fn pending_ids(&self) -> Vec<InstanceId> {
        self.instances
            .iter()
            .filter(|i| i.embedding.is_empty())
            .map(|i| i.id.clone())
            .collect()
    }

    pub fn is_ready(&self) -> bool {
        self.instances.iter().all(|i| !i.embedding.is_empty())
    }

    pub fn unassigned_ids(&self) -> Vec<InstanceId> {
        self.instances
            .iter()
            .filter(|i| !i.assignment.is_assigned())
            .map(|i| i.id.clone())
            .collect()
    }

    pub fn stats(&self) -> CorpusStats {
        let mut concept_histograms: BTreeMap<String, BTreeMap<String, usize>> = self
            .schema
            .concepts
            .keys()
            .map(|c| (c.clone(), BTreeMap::new()))
            .collect();
        let mut assigned = 0;
        let mut pending = 0;
        for inst in &self.instances {
            for (c, v) in &inst.concepts {
                *concept_histograms
                    .entry(c.clone())
                    .or_default()
                    .entry(v.clone())
                    .or_insert(0) += 1;
            }
            if inst.assignment.is_assigned() {
                assigned += 1;
            }
            if inst.embedding.is_empty() {
                pending += 1;
            }
        }
        CorpusStats {
            instance_count: self.instances.len(),
            embedding_dim: self.dim.unwrap_or(0),
            concept_histograms,
            assigned_count: assigned,
            unassigned_count: self.instances.len() - assigned,
            pending_embeddings: pending,
        }
    }

    /// Parses line-delimited JSON records and ingests them atomically.
    pub fn ingest<R: BufRead>(&mut self, reader: R, mode: IngestMode) -> Result<CorpusStats, StoreError> {
        let records = parse_records(reader)?;
        self.ingest_records(records, mode)
    }

    /// Validates every record first; nothing is stored if any record is rejected.
    pub fn ingest_records(&mut self, records: Vec<Record>, mode: IngestMode) -> Result<CorpusStats, StoreError> {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut dim = self.dim;
        let mut accepted = Vec::with_capacity(records.len());
        for (n, rec) in records.iter().enumerate() {
            let record_no = n + 1;
            if !seen.insert(rec.id.as_str()) {
                return Err(StoreError::DuplicateId(rec.id.clone()));
            }
            if self.positions.contains_key(&rec.id) {
                match mode {
                    IngestMode::Strict => return Err(StoreError::DuplicateId(rec.id.clone())),
                    IngestMode::DedupOnId => continue,
                }
            }
            for (c, v) in &rec.concepts {
                self.schema
                    .check(c, v)
                    .map_err(|reason| StoreError::ConceptViolation {
                        record: record_no,
                        id: rec.id.clone(),
                        concept: c.clone(),
                        reason,
                    })?;
            }
            let embedding = match &rec.embedding {
                None => Vec::new(),
                Some(e) => {
                    let expected = *dim.get_or_insert(e.len());
                    if e.len() != expected || e.is_empty() {
                        return Err(StoreError::DimensionMismatch {
                            record: record_no,
                            id: rec.id.clone(),
                            expected,
                            found: e.len(),
                        });
                    }
                    normalize(e).ok_or_else(|| StoreError::ZeroEmbedding {
                        record: record_no,
                        id: rec.id.clone(),
                    })?
                }
            };
            accepted.push(Instance {
                id: rec.id.clone(),
                text: rec.text.clone(),
                embedding,
                concepts: rec.concepts.clone(),
                assignment: Assignment::Unassigned,
                source_meta: rec.source_meta.clone(),
                corrected: BTreeSet::new(),
            });
        }
        self.dim = dim;
        for inst in accepted {
            self.positions.insert(inst.id.clone(), self.instances.len());
            self.instances.push(inst);
        }
        self.rebuild_index();
        Ok(self.stats())
    }

    /// Embeds every pending instance through `embedder`; returns how many were resolved.
    pub fn resolve_pending(&mut self, embedder: &dyn Embedder) -> Result<usize, StoreError> {
        let pending: Vec<usize> = (0..self.instances.len())
            .filter(|&p| self.instances[p].embedding.is_empty())
            .collect();
        if pending.is_empty() {
            return Ok(0);
        }
        let texts: Vec<String> = pending.iter().map(|&p| self.instances[p].text.clone()).collect();
        let vectors = embedder.embed(&texts)?;
        let resolved: Vec<(InstanceId, Vec<f32>)> = pending
            .iter()
            .zip(vectors)
            .map(|(&p, v)| (self.instances[p].id.clone(), v))
            .collect();
        self.set_embeddings(resolved)
    }

    /// Installs externally computed embeddings (used by resolve and journal replay).
    pub fn set_embeddings(&mut self, vectors: Vec<(InstanceId, Vec<f32>)>) -> Result<usize, StoreError> {
        let mut staged = Vec::with_capacity(vectors.len());
        let mut dim = self.dim;
        for (n, (id, v)) in vectors.into_iter().enumerate() {
            let p = self.position(&id).ok_or_else(|| StoreError::UnknownInstance(id.clone()))?;
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected || v.is_empty() {
                return Err(StoreError::DimensionMismatch {
                    record: n + 1,
                    id,
                    expected,
                    found: v.len(),
                });
            }
            let unit = normalize(&v).ok_or(StoreError::ZeroEmbedding { record: n + 1, id })?;
            staged.push((p, unit));
        }
        self.dim = dim;
        let count = staged.len();
        for (p, unit) in staged {
            self.instances[p].embedding = unit;
        }
        self.rebuild_index();
        Ok(count)
    }

    pub fn upsert_concepts(
        &mut self,
        id: &str,
        edits: &BTreeMap<String, String>,
    ) -> Result<&Instance, StoreError> {
        self.upsert_concepts_at(id, edits, now_ms())
    }

    /// Applies concept edits with an explicit timestamp. Unchanged values are
    /// skipped; every real change appends one audit entry and marks the
    /// concept as expert-annotated on this instance.
    pub fn upsert_concepts_at(
        &mut self,
        id: &str,
        edits: &BTreeMap<String, String>,
        timestamp_ms: u64,
    ) -> Result<&Instance, StoreError> {
        let p = self
            .position(id)
            .ok_or_else(|| StoreError::UnknownInstance(id.to_string()))?;
        self.schema.check_map(edits)?;
        for (c, v) in edits {
            let inst = &mut self.instances[p];
            let old = inst.concepts.get(c).cloned();
            if old.as_deref() == Some(v.as_str()) {
                continue;
            }
            inst.concepts.insert(c.clone(), v.clone());
            inst.corrected.insert(c.clone());
            let seq = self.audits.len() as u64;
            self.audits.push(AuditEntry {
                seq,
                instance: id.to_string(),
                concept: c.clone(),
                old,
                new: v.clone(),
                timestamp_ms,
            });
        }
        Ok(&self.instances[p])
    }

    pub fn set_assignment(
        &mut self,
        id: &str,
        assignment: Assignment,
        themes: &dyn ThemeCatalog,
    ) -> Result<(), StoreError> {
        if let Assignment::Assigned { theme, score, iteration } = &assignment {
            if !themes.contains_theme(*theme) {
                return Err(StoreError::UnknownTheme(*theme));
            }
            if !(0.0..=1.0).contains(score) {
                return Err(StoreError::InvalidAssignment(format!("score {score} outside [0, 1]")));
            }
            if *iteration < 1 {
                return Err(StoreError::InvalidAssignment("iteration must be >= 1".into()));
            }
        }
        let p = self
            .position(id)
            .ok_or_else(|| StoreError::UnknownInstance(id.to_string()))?;
        self.instances[p].assignment = assignment;
        Ok(())
    }

    /// Moves every instance assigned to `theme` back to Unassigned.
    pub fn release_theme(&mut self, theme: ThemeId) -> usize {
        let mut released = 0;
        for inst in &mut self.instances {
            if inst.assignment.theme() == Some(theme) {
                inst.assignment = Assignment::Unassigned;
                released += 1;
            }
        }
        released
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            schema: self.schema.clone(),
            dim: self.dim,
            instances: self.instances.clone(),
            audits: self.audits.clone(),
        }
    }

    pub fn from_snapshot(snapshot: StoreSnapshot) -> Result<Self, StoreError> {
        snapshot.schema.validate()?;
        let mut positions = HashMap::with_capacity(snapshot.instances.len());
        for (p, inst) in snapshot.instances.iter().enumerate() {
            if positions.insert(inst.id.clone(), p).is_some() {
                return Err(StoreError::DuplicateId(inst.id.clone()));
            }
        }
        let mut store = Self {
            schema: snapshot.schema,
            dim: snapshot.dim,
            instances: snapshot.instances,
            positions,
            audits: snapshot.audits,
            index: Arc::new(EmbedIndex::empty(0)),
        };
        store.rebuild_index();
        Ok(store)
    }

    fn rebuild_index(&mut self) {
        self.index = Arc::new(EmbedIndex::build(self.dim.unwrap_or(0), &self.instances));
    }
}

/// Parses a line-delimited JSON corpus; blank lines are skipped.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<Record>, StoreError> {
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}
