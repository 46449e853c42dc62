//! The guided session: explore, intervene, map, commit and re-partition.
//!
//! Every mutation is expressed as an [`Event`], applied to the in-memory
//! state and then appended to the journal when the session is backed by a
//! directory. Replaying the journal on top of the last snapshot reproduces
//! the state exactly. Mapping runs on a background thread against an
//! immutable copy of the inputs; while it runs, interventions are refused.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    self, AnalyticsError, EvaluationReport, GlobalState, GoldLabel, LocalExplanation, OverlapMatrix, PurityReport,
    ShiftMatrix, Slice,
};
use crate::config::{ConfigError, SessionConfig};
use crate::index::{
    nearest_neighbors, query_text, CachedEmbedder, EmbedError, Embedder, IndexError, NeighborFilter, NeighborHit,
    QueryError,
};
use crate::journal::{write_atomic, Journal, JournalError};
use crate::mapper::{
    generate_training_data, infer_with_progress, learn_weights, nns_baseline, InferenceScope, InstanceMapping,
    MapperError, MappingContext, MappingMethod, MappingResult, RuleWeightModel,
};
use crate::partition::{
    default_min_cluster_size, density_partition, kmeans_partition, rank_members_scored, Partition, PartitionError,
    RankOrder,
};
use crate::store::{Assignment, CorpusStats, CorpusStore, Instance, InstanceId, StoreError, StoreSnapshot};
use crate::themes::{Exemplar, ExemplarInput, ExemplarSource, Polarity, Theme, ThemeError, ThemeId, ThemeRegistry};

pub const SESSION_FORMAT_VERSION: u32 = 1;

const SNAPSHOT_FILE: &str = "snapshot.json";
const JOURNAL_FILE: &str = "journal.jsonl";
/// Journal length that triggers compaction into a fresh snapshot.
const COMPACT_EVERY: usize = 256;
/// Finished, uncommitted jobs kept around for comparison.
const KEEP_FINISHED_JOBS: usize = 8;

pub type JobId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Exploring,
    Mapping,
    Committed,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("`{operation}` is not allowed while a mapping job is running")]
    PhaseConflict { operation: String },
    #[error("unknown mapping job {0}")]
    UnknownJob(JobId),
    #[error("mapping job {0} is still running")]
    JobRunning(JobId),
    #[error("mapping job {id} failed: {message}")]
    JobFailed { id: JobId, message: String },
    #[error("mapping job {0} was computed before later edits; run mapping again")]
    StaleJob(JobId),
    #[error("unknown partition {0}")]
    UnknownPartition(usize),
    #[error("iteration {0} has no committed mapping")]
    UnknownIteration(u32),
    #[error("no embedder is configured; {0}")]
    NoEmbedder(String),
    #[error("session file version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("session file is corrupt: {0}")]
    Corrupt(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Theme(#[from] ThemeError),
    #[error(transparent)]
    Mapper(#[from] MapperError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<QueryError> for SessionError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::EmptyText => SessionError::Invalid("query text is empty".into()),
            QueryError::Embed(e) => SessionError::Embed(e),
            QueryError::Index(e) => SessionError::Index(e),
        }
    }
}

impl SessionError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        use SessionError::*;
        match self {
            PhaseConflict { .. } => "phase_conflict",
            UnknownJob(_) | UnknownPartition(_) | UnknownIteration(_) => "not_found",
            JobRunning(_) => "job_running",
            JobFailed { .. } => "job_failed",
            StaleJob(_) => "stale_job",
            NoEmbedder(_) => "embedder_required",
            Version { .. } => "version_mismatch",
            Corrupt(_) => "corrupt_file",
            Invalid(_) | Config(_) => "invalid_request",
            Store(e) => match e {
                StoreError::UnknownInstance(_) | StoreError::UnknownTheme(_) => "not_found",
                StoreError::DuplicateId(_) => "conflict",
                StoreError::NotReady(_) => "not_ready",
                StoreError::Embed(_) => "embedder_unavailable",
                StoreError::Io(_) => "io_error",
                _ => "invalid_request",
            },
            Theme(e) => match e {
                ThemeError::UnknownTheme(_) | ThemeError::NotPresent { .. } => "not_found",
                ThemeError::DuplicateName(_) | ThemeError::PolarityConflict { .. } | ThemeError::GoodElsewhere { .. } => {
                    "conflict"
                }
                ThemeError::Store(StoreError::UnknownInstance(_)) => "not_found",
                _ => "invalid_request",
            },
            Mapper(e) => match e {
                MapperError::Unscoreable(_) => "unscoreable_theme",
                MapperError::ModelStale(_) => "stale_model",
                MapperError::NotReady(_) => "not_ready",
                MapperError::Degenerate(_) => "degenerate_training_data",
                _ => "invalid_request",
            },
            Partition(_) | Analytics(_) | Index(_) => "invalid_request",
            Embed(e) if e.is_retryable() => "embedder_unavailable",
            Embed(_) => "embedder_error",
            Journal(_) | Io(_) => "io_error",
        }
    }
}

/// How to (re-)partition the unassigned instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PartitionMethod {
    Kmeans { k: usize, seed: u64 },
    Density { min_cluster_size: usize },
}

/// Exemplar reference as supplied by a client; phrases are embedded by the
/// session unless an embedding is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExemplarRef {
    Instance { id: InstanceId },
    Phrase { text: String, embedding: Option<Vec<f32>> },
}

/// One state transition; the journal stores these verbatim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    UpsertConcepts { id: InstanceId, edits: BTreeMap<String, String>, timestamp_ms: u64 },
    SetAssignment { id: InstanceId, assignment: Assignment },
    CreateTheme { name: String },
    RenameTheme { theme: ThemeId, name: String },
    DeleteTheme { theme: ThemeId },
    AddExemplar { theme: ThemeId, polarity: Polarity, input: ExemplarInput },
    AddPhrase { theme: ThemeId, text: String, embedding: Vec<f32> },
    RemoveExemplar { theme: ThemeId, source: ExemplarSource },
    SetExemplarConcepts { theme: ThemeId, source: ExemplarSource, concepts: BTreeMap<String, String>, timestamp_ms: u64 },
    Repartition { method: PartitionMethod },
    Commit { job: JobId, result: MappingResult, model: Option<RuleWeightModel> },
}

impl Event {
    /// Events that change mapping inputs make earlier mapping jobs stale.
    fn changes_mapping_inputs(&self) -> bool {
        !matches!(self, Event::Repartition { .. } | Event::RenameTheme { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub format_version: u32,
    pub config: SessionConfig,
    pub iteration: u32,
    pub phase: Phase,
    pub store: StoreSnapshot,
    pub themes: ThemeRegistry,
    pub partitions: Vec<Partition>,
    /// Committed mapping of iteration `i` at position `i - 1`.
    pub history: Vec<MappingResult>,
    pub model: Option<RuleWeightModel>,
    pub committed_jobs: BTreeSet<JobId>,
    pub next_job: JobId,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingRequest {
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub scope: InferenceScope,
    /// Overrides the configured threshold for this run.
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Nesy,
    Nns,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed { message: String },
    Committed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: JobId,
    pub method: Method,
    #[serde(flatten)]
    pub state: JobState,
    pub progress: usize,
    pub total: usize,
    pub mapped: Option<usize>,
    pub coverage: Option<f64>,
    pub training_rows: Option<usize>,
}

struct JobOutput {
    result: MappingResult,
    model: Option<RuleWeightModel>,
    training_rows: Option<usize>,
}

struct Job {
    method: Method,
    revision: u64,
    progress: Arc<AtomicUsize>,
    total: usize,
    handle: Option<JoinHandle<Result<JobOutput, MapperError>>>,
    outcome: Option<Result<JobOutput, String>>,
}

impl Job {
    fn running(&self) -> bool {
        self.handle.as_ref().is_some_and(|h| !h.is_finished())
    }

    fn settle(&mut self) {
        if let Some(h) = self.handle.take() {
            self.outcome = Some(match h.join() {
                Ok(Ok(out)) => Ok(out),
                Ok(Err(e)) => Err(e.to_string()),
                Err(_) => Err("mapping thread panicked".into()),
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitOutcome {
    pub job: JobId,
    /// Iteration after the commit.
    pub iteration: u32,
    pub mapped: usize,
    pub unassigned: usize,
    pub partitions: usize,
    /// The job had been committed before; nothing changed.
    pub already_committed: bool,
}

/// Which mapping an analytics request refers to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ResultRef {
    /// Assignments as currently committed in the store.
    #[default]
    Current,
    /// Committed mapping of an iteration.
    Iteration(u32),
    /// Finished but not necessarily committed job.
    Job(JobId),
    /// Everything unassigned (the state before the first mapping).
    Initial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuartileSummary {
    pub thresholds: [f64; 3],
    /// Sizes of Q1, Q2, Q3 and All.
    pub sizes: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub iteration: u32,
    pub method: MappingMethod,
    pub total: usize,
    pub mapped: usize,
    pub unmapped: usize,
    pub coverage: f64,
    pub purity: Vec<PurityReport>,
    pub avg_purity: Option<f64>,
    pub quartiles: Option<QuartileSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub iteration: u32,
    pub phase: Phase,
    pub partitions: usize,
    pub themes: usize,
    pub config: SessionConfig,
    pub running_job: Option<JobId>,
}

pub struct Session {
    config: SessionConfig,
    store: CorpusStore,
    themes: ThemeRegistry,
    iteration: u32,
    resting_phase: Phase,
    partitions: Vec<Partition>,
    history: Vec<MappingResult>,
    model: Option<RuleWeightModel>,
    committed_jobs: BTreeSet<JobId>,
    next_job: JobId,
    jobs: BTreeMap<JobId, Job>,
    revision: u64,
    embedder: Option<Arc<CachedEmbedder<Box<dyn Embedder>>>>,
    stopwords: BTreeSet<String>,
    persistence: Option<Persistence>,
}

struct Persistence {
    dir: PathBuf,
    journal: Journal<Event>,
}

fn iteration_seed(seed: u64, iteration: u32) -> u64 {
    // splitmix64 of (seed, iteration)
    let mut z = seed.wrapping_add((iteration as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Session {
    /// Starts a session over an ingested corpus. Records still lacking
    /// embeddings are resolved with `embedder`.
    pub fn new(
        config: SessionConfig,
        mut store: CorpusStore,
        embedder: Option<Box<dyn Embedder>>,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        let embedder = embedder.map(|e| Arc::new(CachedEmbedder::new(e)));
        let pending = store.pending_ids().len();
        if pending > 0 {
            match &embedder {
                Some(e) => {
                    store.resolve_pending(e.as_ref())?;
                }
                None => {
                    return Err(SessionError::NoEmbedder(format!("{pending} records lack embeddings")));
                }
            }
        }
        let stopwords = config.load_stopwords()?.into_iter().collect();
        let mut session = Self {
            config,
            store,
            themes: ThemeRegistry::new(),
            iteration: 1,
            resting_phase: Phase::Exploring,
            partitions: Vec::new(),
            history: Vec::new(),
            model: None,
            committed_jobs: BTreeSet::new(),
            next_job: 1,
            jobs: BTreeMap::new(),
            revision: 0,
            embedder,
            stopwords,
            persistence: None,
        };
        session.partitions = session.repartition_unassigned()?;
        Ok(session)
    }

    /// Like [`Session::new`], persisting to `dir` (snapshot plus journal).
    pub fn create(
        dir: &Path,
        config: SessionConfig,
        store: CorpusStore,
        embedder: Option<Box<dyn Embedder>>,
    ) -> Result<Self, SessionError> {
        let mut session = Self::new(config, store, embedder)?;
        session.attach(dir)?;
        Ok(session)
    }

    /// Reopens a directory-backed session, replaying the journal over the
    /// last snapshot. A torn final journal entry is discarded.
    pub fn open(dir: &Path, embedder: Option<Box<dyn Embedder>>) -> Result<Self, SessionError> {
        let bytes = std::fs::read(dir.join(SNAPSHOT_FILE))?;
        let mut session = Self::from_snapshot_bytes(&bytes, embedder)?;
        let (journal, replay) = Journal::open(&dir.join(JOURNAL_FILE))?;
        for event in replay.events {
            session.apply(&event)?;
        }
        session.persistence = Some(Persistence { dir: dir.to_path_buf(), journal });
        Ok(session)
    }

    /// Starts persisting this session to `dir`, writing a fresh snapshot.
    pub fn attach(&mut self, dir: &Path) -> Result<(), SessionError> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join(SNAPSHOT_FILE), &self.snapshot_bytes()?)?;
        let (mut journal, _) = Journal::open(&dir.join(JOURNAL_FILE))?;
        journal.truncate()?;
        self.persistence = Some(Persistence { dir: dir.to_path_buf(), journal });
        Ok(())
    }

    /// Folds the journal into a new snapshot.
    pub fn compact(&mut self) -> Result<(), SessionError> {
        let bytes = self.snapshot_bytes()?;
        if let Some(p) = &mut self.persistence {
            write_atomic(&p.dir.join(SNAPSHOT_FILE), &bytes)?;
            p.journal.truncate()?;
        }
        Ok(())
    }

    // ----- snapshots -------------------------------------------------------

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            format_version: SESSION_FORMAT_VERSION,
            config: self.config.clone(),
            iteration: self.iteration,
            phase: self.resting_phase,
            store: self.store.snapshot(),
            themes: self.themes.clone(),
            partitions: self.partitions.clone(),
            history: self.history.clone(),
            model: self.model.clone(),
            committed_jobs: self.committed_jobs.clone(),
            next_job: self.next_job,
        }
    }

    fn snapshot_bytes(&self) -> Result<Vec<u8>, SessionError> {
        serde_json::to_vec(&self.snapshot()).map_err(|e| SessionError::Corrupt(e.to_string()))
    }

    /// Writes the full committed state to `path`. A running job is not part
    /// of the export.
    pub fn export(&self, path: &Path) -> Result<(), SessionError> {
        write_atomic(path, &self.snapshot_bytes()?)?;
        Ok(())
    }

    /// Restores a session exported by [`Session::export`].
    pub fn import(path: &Path, embedder: Option<Box<dyn Embedder>>) -> Result<Self, SessionError> {
        Self::from_snapshot_bytes(&std::fs::read(path)?, embedder)
    }

    fn from_snapshot_bytes(bytes: &[u8], embedder: Option<Box<dyn Embedder>>) -> Result<Self, SessionError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_slice(bytes).map_err(|e| SessionError::Corrupt(e.to_string()))?;
        if header.format_version > SESSION_FORMAT_VERSION {
            return Err(SessionError::Version { found: header.format_version, supported: SESSION_FORMAT_VERSION });
        }
        let snap: SessionSnapshot = serde_json::from_slice(bytes).map_err(|e| SessionError::Corrupt(e.to_string()))?;
        Self::from_snapshot(snap, embedder)
    }

    pub fn from_snapshot(snap: SessionSnapshot, embedder: Option<Box<dyn Embedder>>) -> Result<Self, SessionError> {
        snap.config.validate()?;
        let stopwords = snap.config.load_stopwords()?.into_iter().collect();
        Ok(Self {
            store: CorpusStore::from_snapshot(snap.store)?,
            config: snap.config,
            themes: snap.themes,
            iteration: snap.iteration.max(1),
            resting_phase: if snap.phase == Phase::Mapping { Phase::Exploring } else { snap.phase },
            partitions: snap.partitions,
            history: snap.history,
            model: snap.model,
            committed_jobs: snap.committed_jobs,
            next_job: snap.next_job,
            jobs: BTreeMap::new(),
            revision: 0,
            embedder: embedder.map(|e| Arc::new(CachedEmbedder::new(e))),
            stopwords,
            persistence: None,
        })
    }

    // ----- event application ---------------------------------------------

    fn record(&mut self, event: Event) -> Result<(), SessionError> {
        self.apply(&event)?;
        let mut due = false;
        if let Some(p) = &mut self.persistence {
            p.journal.append(&event)?;
            due = p.journal.len() >= COMPACT_EVERY || matches!(event, Event::Commit { .. });
        }
        if due {
            self.compact()?;
        }
        Ok(())
    }

    fn apply(&mut self, event: &Event) -> Result<(), SessionError> {
        match event {
            Event::UpsertConcepts { id, edits, timestamp_ms } => {
                self.store.upsert_concepts_at(id, edits, *timestamp_ms)?;
            }
            Event::SetAssignment { id, assignment } => {
                self.store.set_assignment(id, assignment.clone(), &self.themes)?;
            }
            Event::CreateTheme { name } => {
                self.themes.create_theme(name, self.iteration)?;
            }
            Event::RenameTheme { theme, name } => {
                self.themes.rename_theme(*theme, name)?;
            }
            Event::DeleteTheme { theme } => {
                self.themes.delete_theme(*theme, &mut self.store)?;
            }
            Event::AddExemplar { theme, polarity, input } => {
                self.themes.add_exemplar(&mut self.store, *theme, *polarity, input.clone(), self.iteration)?;
            }
            Event::AddPhrase { theme, text, embedding } => {
                self.themes.add_explanatory_phrase(&self.store, *theme, text, embedding.clone())?;
            }
            Event::RemoveExemplar { theme, source } => {
                self.themes.remove_exemplar(*theme, source)?;
            }
            Event::SetExemplarConcepts { theme, source, concepts, timestamp_ms } => {
                self.themes.set_exemplar_concepts(&mut self.store, *theme, source, concepts, *timestamp_ms)?;
            }
            Event::Repartition { method } => {
                self.partitions = self.run_partition_method(method)?;
            }
            Event::Commit { job, result, model } => {
                self.apply_commit(*job, result, model.clone())?;
            }
        }
        if event.changes_mapping_inputs() {
            self.revision += 1;
            if !matches!(event, Event::Commit { .. }) {
                self.resting_phase = Phase::Exploring;
            }
        }
        Ok(())
    }

    fn apply_commit(
        &mut self,
        job: JobId,
        result: &MappingResult,
        model: Option<RuleWeightModel>,
    ) -> Result<(), SessionError> {
        if result.entries.len() != self.store.len() {
            return Err(SessionError::Invalid("mapping does not cover the corpus".into()));
        }
        // validate everything before touching the store
        for e in &result.entries {
            self.store.get_instance(&e.id)?;
            if let Some(t) = e.theme {
                self.themes.get(t)?;
            }
        }
        for e in &result.entries {
            let assignment = match e.theme {
                Some(theme) => Assignment::Assigned { theme, score: e.score.clamp(0.0, 1.0), iteration: result.iteration },
                None => Assignment::Unassigned,
            };
            self.store.set_assignment(&e.id, assignment, &self.themes)?;
        }
        self.history.push(result.clone());
        if model.is_some() {
            self.model = model;
        }
        self.committed_jobs.insert(job);
        self.next_job = self.next_job.max(job + 1);
        self.iteration += 1;
        self.partitions = self.repartition_unassigned()?;
        self.resting_phase = Phase::Committed;
        Ok(())
    }

    /// k-means over the unassigned remainder with the configured `k` and a
    /// seed derived from the iteration. `k` shrinks to the population size.
    fn repartition_unassigned(&self) -> Result<Vec<Partition>, SessionError> {
        self.run_partition_method(&PartitionMethod::Kmeans {
            k: self.config.k,
            seed: iteration_seed(self.config.seed, self.iteration),
        })
    }

    fn run_partition_method(&self, method: &PartitionMethod) -> Result<Vec<Partition>, SessionError> {
        let ids = self.store.unassigned_ids();
        let index = self.store.index();
        Ok(match method {
            PartitionMethod::Kmeans { k, seed } => match ids.len() {
                0 => Vec::new(),
                1 => vec![Partition::from_rows(0, &[index.row_of(&ids[0]).expect("indexed")], &index, false)],
                n => kmeans_partition(&index, &ids, (*k).min(n), *seed)?,
            },
            PartitionMethod::Density { min_cluster_size } => density_partition(&index, &ids, *min_cluster_size)?,
        })
    }

    // ----- read access -----------------------------------------------------

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn store(&self) -> &CorpusStore {
        &self.store
    }

    pub fn themes(&self) -> &ThemeRegistry {
        &self.themes
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn model(&self) -> Option<&RuleWeightModel> {
        self.model.as_ref()
    }

    pub fn history(&self) -> &[MappingResult] {
        &self.history
    }

    pub fn running_job(&self) -> Option<JobId> {
        self.jobs.iter().find(|(_, j)| j.running()).map(|(id, _)| *id)
    }

    pub fn phase(&self) -> Phase {
        if self.running_job().is_some() {
            Phase::Mapping
        } else {
            self.resting_phase
        }
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            iteration: self.iteration,
            phase: self.phase(),
            partitions: self.partitions.len(),
            themes: self.themes.len(),
            config: self.config.clone(),
            running_job: self.running_job(),
        }
    }

    pub fn stats(&self) -> CorpusStats {
        self.store.stats()
    }

    pub fn instance(&self, id: &str) -> Result<&Instance, SessionError> {
        Ok(self.store.get_instance(id)?)
    }

    pub fn unassigned_ids(&self) -> Vec<InstanceId> {
        self.store.unassigned_ids()
    }

    pub fn theme(&self, id: ThemeId) -> Result<&Theme, SessionError> {
        Ok(self.themes.get(id)?)
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn partition(&self, id: usize) -> Result<&Partition, SessionError> {
        self.partitions.iter().find(|p| p.id == id).ok_or(SessionError::UnknownPartition(id))
    }

    /// Members of a partition with their cosine to its centroid.
    pub fn ranked_members(&self, id: usize, order: RankOrder) -> Result<Vec<(InstanceId, f64)>, SessionError> {
        Ok(rank_members_scored(self.partition(id)?, &self.store.index(), order)?)
    }

    /// Members of a theme ranked by cosine to the theme centroid.
    pub fn ranked_theme_members(&self, theme: ThemeId, order: RankOrder) -> Result<Vec<(InstanceId, f64)>, SessionError> {
        let t = self.themes.get(theme)?;
        let Some(centroid) = &t.centroid else { return Ok(Vec::new()) };
        let members: Vec<InstanceId> = self
            .store
            .instances()
            .iter()
            .filter(|i| i.assignment.theme() == Some(theme))
            .map(|i| i.id.clone())
            .collect();
        let p = Partition { id: 0, members, centroid: centroid.clone(), cohesion: 0.0, noise: false };
        Ok(rank_members_scored(&p, &self.store.index(), order)?)
    }

    pub fn neighbors_of(&self, id: &str, k: usize, filter: NeighborFilter) -> Result<Vec<NeighborHit>, SessionError> {
        let query = self.store.get_instance(id)?.embedding.clone();
        self.neighbors_of_vector(&query, k, filter)
    }

    pub fn neighbors_of_vector(
        &self,
        query: &[f32],
        k: usize,
        filter: NeighborFilter,
    ) -> Result<Vec<NeighborHit>, SessionError> {
        Ok(nearest_neighbors(&self.store.index(), self.store.instances(), query, k, filter)?)
    }

    pub fn query_text(&self, text: &str, k: usize, filter: NeighborFilter) -> Result<Vec<NeighborHit>, SessionError> {
        let embedder = self.embedder()?;
        Ok(query_text(embedder.as_ref(), &self.store.index(), self.store.instances(), text, k, filter)?)
    }

    fn embedder(&self) -> Result<&Arc<CachedEmbedder<Box<dyn Embedder>>>, SessionError> {
        self.embedder
            .as_ref()
            .ok_or_else(|| SessionError::NoEmbedder("text must be embedded by an encoder service".into()))
    }

    /// Number of texts actually sent to the encoder (cache misses).
    pub fn embedder_calls(&self) -> usize {
        self.embedder.as_ref().map_or(0, |e| e.miss_count())
    }

    // ----- interventions ---------------------------------------------------

    fn intervention(&mut self, operation: &str) -> Result<(), SessionError> {
        if self.running_job().is_some() {
            return Err(SessionError::PhaseConflict { operation: operation.into() });
        }
        Ok(())
    }

    pub fn create_theme(&mut self, name: &str) -> Result<Theme, SessionError> {
        self.intervention("create_theme")?;
        self.record(Event::CreateTheme { name: name.to_string() })?;
        Ok(self.themes.by_name(name.trim()).expect("just created").clone())
    }

    pub fn rename_theme(&mut self, theme: ThemeId, name: &str) -> Result<Theme, SessionError> {
        self.intervention("rename_theme")?;
        self.record(Event::RenameTheme { theme, name: name.to_string() })?;
        Ok(self.themes.get(theme)?.clone())
    }

    /// Deletes the theme; returns how many instances went back to Unassigned.
    pub fn delete_theme(&mut self, theme: ThemeId) -> Result<usize, SessionError> {
        self.intervention("delete_theme")?;
        self.themes.get(theme)?;
        let released = self.store.instances().iter().filter(|i| i.assignment.theme() == Some(theme)).count();
        self.record(Event::DeleteTheme { theme })?;
        Ok(released)
    }

    pub fn add_exemplar(&mut self, theme: ThemeId, polarity: Polarity, source: ExemplarRef) -> Result<Theme, SessionError> {
        self.intervention("add_exemplar")?;
        let input = match source {
            ExemplarRef::Instance { id } => ExemplarInput::Instance { id },
            ExemplarRef::Phrase { text, embedding } => {
                let embedding = self.resolve_phrase(&text, embedding)?;
                ExemplarInput::Phrase { text, embedding }
            }
        };
        self.record(Event::AddExemplar { theme, polarity, input })?;
        Ok(self.themes.get(theme)?.clone())
    }

    pub fn add_phrase(&mut self, theme: ThemeId, text: &str, embedding: Option<Vec<f32>>) -> Result<Theme, SessionError> {
        self.intervention("add_phrase")?;
        let embedding = self.resolve_phrase(text, embedding)?;
        self.record(Event::AddPhrase { theme, text: text.to_string(), embedding })?;
        Ok(self.themes.get(theme)?.clone())
    }

    fn resolve_phrase(&self, text: &str, embedding: Option<Vec<f32>>) -> Result<Vec<f32>, SessionError> {
        if text.trim().is_empty() {
            return Err(ThemeError::EmptyPhrase.into());
        }
        match embedding {
            Some(e) => Ok(e),
            None => {
                let mut v = self.embedder()?.embed(&[text.to_string()])?;
                v.pop().ok_or_else(|| EmbedError::BadResponse("no vector returned".into()).into())
            }
        }
    }

    pub fn remove_exemplar(&mut self, theme: ThemeId, source: ExemplarSource) -> Result<Theme, SessionError> {
        self.intervention("remove_exemplar")?;
        self.record(Event::RemoveExemplar { theme, source })?;
        Ok(self.themes.get(theme)?.clone())
    }

    pub fn set_exemplar_concepts(
        &mut self,
        theme: ThemeId,
        source: ExemplarSource,
        concepts: BTreeMap<String, String>,
    ) -> Result<Exemplar, SessionError> {
        self.intervention("set_exemplar_concepts")?;
        if concepts.is_empty() {
            let t = self.themes.get(theme)?;
            return t
                .exemplar(&source)
                .cloned()
                .ok_or_else(|| ThemeError::NotPresent { theme, exemplar: source.clone() }.into());
        }
        let timestamp_ms = crate::store::now_ms();
        self.record(Event::SetExemplarConcepts { theme, source: source.clone(), concepts, timestamp_ms })?;
        Ok(self.themes.get(theme)?.exemplar(&source).expect("exemplar exists").clone())
    }

    pub fn upsert_concepts(&mut self, id: &str, edits: BTreeMap<String, String>) -> Result<Instance, SessionError> {
        self.intervention("upsert_concepts")?;
        if !edits.is_empty() {
            self.store.get_instance(id)?;
            self.store.schema().check_map(&edits)?;
            let timestamp_ms = crate::store::now_ms();
            self.record(Event::UpsertConcepts { id: id.to_string(), edits, timestamp_ms })?;
        }
        Ok(self.store.get_instance(id)?.clone())
    }

    pub fn set_assignment(&mut self, id: &str, assignment: Assignment) -> Result<Instance, SessionError> {
        self.intervention("set_assignment")?;
        self.record(Event::SetAssignment { id: id.to_string(), assignment })?;
        Ok(self.store.get_instance(id)?.clone())
    }

    /// Replaces the active partitions. Defaults: configured `k` with an
    /// iteration-derived seed; density minimum size from the population.
    pub fn repartition(&mut self, method: Option<PartitionMethod>) -> Result<&[Partition], SessionError> {
        let method = match method {
            Some(PartitionMethod::Density { min_cluster_size: 0 }) => PartitionMethod::Density {
                min_cluster_size: default_min_cluster_size(self.store.unassigned_ids().len()),
            },
            Some(m) => m,
            None => PartitionMethod::Kmeans { k: self.config.k, seed: iteration_seed(self.config.seed, self.iteration) },
        };
        self.record(Event::Repartition { method })?;
        Ok(&self.partitions)
    }

    // ----- mapping ---------------------------------------------------------

    /// Launches a mapping job on a background thread.
    pub fn start_mapping(&mut self, request: MappingRequest) -> Result<JobId, SessionError> {
        if let Some(id) = self.running_job() {
            return Err(SessionError::PhaseConflict { operation: format!("start_mapping (job {id} is running)") });
        }
        let tau = request.tau.unwrap_or(self.config.tau);
        if !(0.0..=1.0).contains(&tau) {
            return Err(MapperError::BadTau(tau).into());
        }
        let ctx = MappingContext::from_store(&self.store, &self.themes, self.iteration)?;
        let unscoreable = ctx.unscoreable();
        if !unscoreable.is_empty() {
            return Err(MapperError::Unscoreable(unscoreable).into());
        }
        if ctx.themes.is_empty() {
            return Err(MapperError::NoPositiveExemplars.into());
        }
        // only the most recent finished jobs stay inspectable
        let finished: Vec<JobId> = self.jobs.iter().filter(|(_, j)| !j.running()).map(|(&id, _)| id).collect();
        for id in finished.iter().take(finished.len().saturating_sub(KEEP_FINISHED_JOBS - 1)) {
            self.jobs.remove(id);
        }

        let id = self.next_job;
        self.next_job += 1;
        let progress = Arc::new(AtomicUsize::new(0));
        let total = ctx.instances.len();
        let method = request.method;
        let scope = request.scope;
        let neighbors = self.config.neighbors;
        let seed = iteration_seed(self.config.seed, self.iteration);
        let learn = crate::mapper::LearnConfig { tau, ..self.config.learn_config() };
        let iteration = self.iteration;
        let counter = Arc::clone(&progress);
        let handle = std::thread::Builder::new()
            .name(format!("mapping-{id}"))
            .spawn(move || -> Result<JobOutput, MapperError> {
                match method {
                    Method::Nesy => {
                        let data = generate_training_data(&ctx, neighbors, seed)?;
                        let model = learn_weights(&data, &ctx.schema, &learn)?;
                        let result = infer_with_progress(&model, &ctx, scope, Some(&counter))?;
                        Ok(JobOutput { result, model: Some(model), training_rows: Some(data.rows.len()) })
                    }
                    Method::Nns => {
                        let result = nns_baseline(&ctx, tau, iteration)?;
                        counter.store(total, Ordering::Relaxed);
                        Ok(JobOutput { result, model: None, training_rows: None })
                    }
                }
            })?;
        self.jobs.insert(
            id,
            Job { method, revision: self.revision, progress, total, handle: Some(handle), outcome: None },
        );
        Ok(id)
    }

    fn job_mut(&mut self, id: JobId) -> Result<&mut Job, SessionError> {
        self.jobs.get_mut(&id).ok_or(SessionError::UnknownJob(id))
    }

    pub fn job_status(&mut self, id: JobId) -> Result<JobStatus, SessionError> {
        let committed = self.committed_jobs.contains(&id);
        let Some(job) = self.jobs.get_mut(&id) else {
            if committed {
                return Ok(JobStatus {
                    id,
                    method: Method::Nesy,
                    state: JobState::Committed,
                    progress: 0,
                    total: 0,
                    mapped: None,
                    coverage: None,
                    training_rows: None,
                });
            }
            return Err(SessionError::UnknownJob(id));
        };
        if !job.running() {
            job.settle();
        }
        let (state, mapped, coverage, training_rows) = match &job.outcome {
            None => (JobState::Running, None, None, None),
            Some(Err(message)) => (JobState::Failed { message: message.clone() }, None, None, None),
            Some(Ok(out)) => (
                if committed { JobState::Committed } else { JobState::Succeeded },
                Some(out.result.mapped()),
                analytics::coverage(&out.result).ok(),
                out.training_rows,
            ),
        };
        Ok(JobStatus {
            id,
            method: job.method,
            state,
            progress: job.progress.load(Ordering::Relaxed),
            total: job.total,
            mapped,
            coverage,
            training_rows,
        })
    }

    /// Blocks until the job finishes.
    pub fn wait_job(&mut self, id: JobId) -> Result<JobStatus, SessionError> {
        if !self.committed_jobs.contains(&id) {
            self.job_mut(id)?.settle();
        }
        self.job_status(id)
    }

    /// Result of a finished job.
    pub fn job_result(&mut self, id: JobId) -> Result<&MappingResult, SessionError> {
        let job = self.job_mut(id)?;
        if job.running() {
            return Err(SessionError::JobRunning(id));
        }
        job.settle();
        match job.outcome.as_ref().expect("settled") {
            Ok(out) => Ok(&out.result),
            Err(message) => Err(SessionError::JobFailed { id, message: message.clone() }),
        }
    }

    /// Runs a mapping job to completion and returns its id.
    pub fn run_mapping(&mut self, request: MappingRequest) -> Result<JobId, SessionError> {
        let id = self.start_mapping(request)?;
        match self.wait_job(id)?.state {
            JobState::Failed { message } => Err(SessionError::JobFailed { id, message }),
            _ => Ok(id),
        }
    }

    /// Writes the job's assignments to the store, advances the iteration and
    /// re-partitions the unassigned remainder. Committing the same job again
    /// changes nothing.
    pub fn commit(&mut self, id: JobId) -> Result<CommitOutcome, SessionError> {
        if self.committed_jobs.contains(&id) {
            return Ok(self.commit_outcome(id, true));
        }
        let revision = self.revision;
        let job = self.job_mut(id)?;
        if job.running() {
            return Err(SessionError::JobRunning(id));
        }
        job.settle();
        if job.revision != revision {
            return Err(SessionError::StaleJob(id));
        }
        let (result, model) = match job.outcome.as_ref().expect("settled") {
            Ok(out) => (out.result.clone(), out.model.clone()),
            Err(message) => return Err(SessionError::JobFailed { id, message: message.clone() }),
        };
        self.record(Event::Commit { job: id, result, model })?;
        if let Some(j) = self.jobs.get_mut(&id) {
            // mapping inputs changed by the commit itself; keep the job visible
            j.revision = self.revision;
        }
        Ok(self.commit_outcome(id, false))
    }

    fn commit_outcome(&self, job: JobId, already_committed: bool) -> CommitOutcome {
        let stats = self.store.stats();
        CommitOutcome {
            job,
            iteration: self.iteration,
            mapped: stats.assigned_count,
            unassigned: stats.unassigned_count,
            partitions: self.partitions.len(),
            already_committed,
        }
    }

    // ----- analytics -------------------------------------------------------

    /// Mapping view of the committed store assignments.
    pub fn current_result(&self) -> MappingResult {
        let index = self.store.index();
        let entries = self
            .store
            .instances()
            .iter()
            .map(|inst| {
                let theme = inst.assignment.theme();
                let centroid_similarity = theme.and_then(|t| {
                    let c = self.themes.get(t).ok()?.centroid.as_ref()?;
                    Some(crate::index::dot(index.vector_of(&inst.id)?, c))
                });
                let score = match inst.assignment {
                    Assignment::Assigned { score, .. } => score,
                    Assignment::Unassigned => 0.0,
                };
                let clamped = theme.is_some_and(|t| {
                    self.themes.get(t).is_ok_and(|th| th.good_instances().any(|g| *g == inst.id))
                });
                InstanceMapping { id: inst.id.clone(), theme, score, centroid_similarity, clamped }
            })
            .collect();
        MappingResult {
            iteration: self.iteration.saturating_sub(1).max(1),
            method: self.history.last().map_or(MappingMethod::NeSy, |r| r.method),
            tau: self.history.last().map_or(self.config.tau, |r| r.tau),
            entries,
        }
    }

    fn initial_result(&self) -> MappingResult {
        MappingResult {
            iteration: 1,
            method: MappingMethod::NeSy,
            tau: self.config.tau,
            entries: self
                .store
                .instances()
                .iter()
                .map(|i| InstanceMapping {
                    id: i.id.clone(),
                    theme: None,
                    score: 0.0,
                    centroid_similarity: None,
                    clamped: false,
                })
                .collect(),
        }
    }

    pub fn resolve(&mut self, which: ResultRef) -> Result<MappingResult, SessionError> {
        match which {
            ResultRef::Current => Ok(self.current_result()),
            ResultRef::Initial => Ok(self.initial_result()),
            ResultRef::Iteration(i) => self
                .history
                .get((i as usize).wrapping_sub(1))
                .cloned()
                .ok_or(SessionError::UnknownIteration(i)),
            ResultRef::Job(id) => Ok(self.job_result(id)?.clone()),
        }
    }

    pub fn metrics_of(&self, result: &MappingResult) -> Result<MetricsSummary, SessionError> {
        let coverage = analytics::coverage(result)?;
        let schema = self.store.schema();
        let mut purity = Vec::new();
        if result.mapped() > 0 {
            for concept in schema.concepts.keys() {
                purity.push(analytics::concept_purity(result, schema, &self.store, concept)?);
            }
        }
        let avg_purity =
            (!purity.is_empty()).then(|| purity.iter().map(|p| p.purity).sum::<f64>() / purity.len() as f64);
        let quartiles = analytics::quartile_slices(result).ok().map(|q| QuartileSummary {
            thresholds: q.thresholds,
            sizes: Slice::ALL.map(|s| q.size(s)),
        });
        Ok(MetricsSummary {
            iteration: result.iteration,
            method: result.method,
            total: result.total(),
            mapped: result.mapped(),
            unmapped: result.unmapped(),
            coverage,
            purity,
            avg_purity,
            quartiles,
        })
    }

    pub fn metrics(&mut self, which: ResultRef) -> Result<MetricsSummary, SessionError> {
        let r = self.resolve(which)?;
        self.metrics_of(&r)
    }

    pub fn shift(&mut self, prev: ResultRef, next: ResultRef) -> Result<ShiftMatrix, SessionError> {
        let a = self.resolve(prev)?;
        let b = self.resolve(next)?;
        Ok(analytics::shift_matrix(&a, &b)?)
    }

    pub fn overlap(&mut self, a: ResultRef, b: ResultRef) -> Result<OverlapMatrix, SessionError> {
        let a = self.resolve(a)?;
        let b = self.resolve(b)?;
        Ok(analytics::overlap_matrix(&analytics::theme_sets(&a), &analytics::theme_sets(&b)))
    }

    /// Overlap of a mapping with externally produced clusters (e.g. topics).
    pub fn overlap_with(
        &mut self,
        a: ResultRef,
        clusters: &BTreeMap<String, BTreeSet<InstanceId>>,
    ) -> Result<OverlapMatrix, SessionError> {
        let a = self.resolve(a)?;
        Ok(analytics::overlap_matrix(&analytics::theme_sets(&a), clusters))
    }

    pub fn quartiles(&mut self, which: ResultRef) -> Result<analytics::QuartileSlices, SessionError> {
        let r = self.resolve(which)?;
        Ok(analytics::quartile_slices(&r)?)
    }

    pub fn evaluation(
        &mut self,
        which: ResultRef,
        gold: &BTreeMap<InstanceId, GoldLabel>,
    ) -> Result<EvaluationReport, SessionError> {
        let r = self.resolve(which)?;
        let q = analytics::quartile_slices(&r)?;
        Ok(analytics::evaluation_report(&r, &q, gold)?)
    }

    /// Judgment sample spread over themes and proximity bands.
    pub fn evaluation_sample(&mut self, which: ResultRef, n: usize, seed: u64) -> Result<Vec<InstanceId>, SessionError> {
        let q = self.quartiles(which)?;
        Ok(analytics::stratified_sample(&q, n, seed))
    }

    pub fn local_explanation(
        &self,
        theme: ThemeId,
        max_tokens: usize,
        digest: usize,
    ) -> Result<LocalExplanation, SessionError> {
        let t = self.themes.get(theme)?;
        let members: BTreeSet<InstanceId> = self
            .store
            .instances()
            .iter()
            .filter(|i| i.assignment.theme() == Some(theme))
            .map(|i| i.id.clone())
            .collect();
        Ok(analytics::local_explanation(&self.store, t, &members, &self.stopwords, max_tokens, digest))
    }

    pub fn global_state(&self, sample: Option<usize>) -> GlobalState {
        analytics::global_state(
            &self.store,
            &self.themes,
            &self.partitions,
            sample.unwrap_or(self.config.projection_sample),
            self.config.seed,
        )
    }
}
