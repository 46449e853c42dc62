//! Scripted two-iteration session over a planted corpus.
//!
//! Iteration 1 introduces the first few planted themes, each with good
//! exemplars taken closest to the planted center and one bad exemplar taken
//! from the nearest outsider. Iteration 2 adds the remaining themes. Both
//! iterations are mapped with the weighted-rule mapper and committed; in
//! iteration 2 the similarity-only baseline is also run at the coverage the
//! rule mapper reached, so purities can be compared at equal coverage.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::analytics::{Label, ShiftMatrix};
use crate::config::SessionConfig;
use crate::index::dot;
use crate::mapper::InferenceScope;
use crate::session::{ExemplarRef, MappingRequest, Method, MetricsSummary, ResultRef, Session, SessionError};
use crate::store::{CorpusStore, IngestMode};
use crate::synth::{generate, SynthConfig, SynthCorpus};
use crate::themes::{Polarity, ThemeId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub corpus: SynthConfig,
    pub session: SessionConfig,
    /// Planted themes introduced in iteration 1; the rest follow in iteration 2.
    pub first_round: usize,
    pub good_per_theme: usize,
    pub bad_per_theme: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            corpus: SynthConfig::default(),
            session: SessionConfig::default(),
            first_round: 4,
            good_per_theme: 3,
            bad_per_theme: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutcome {
    pub first: MetricsSummary,
    pub second: MetricsSummary,
    /// Baseline in iteration 2 with its threshold set to match `second`'s coverage.
    pub baseline: MetricsSummary,
    pub baseline_tau: f64,
    /// Iteration 1 to iteration 2.
    pub shift: ShiftMatrix,
    pub new_themes: Vec<ThemeId>,
    /// Percent of the corpus moving from Unknown into a new theme.
    pub unknown_to_new: f64,
    /// Percent of the corpus landing in a new theme from anywhere.
    pub into_new: f64,
}

impl BenchmarkOutcome {
    pub fn purity_gap(&self) -> f64 {
        self.second.avg_purity.unwrap_or(0.0) - self.baseline.avg_purity.unwrap_or(0.0)
    }
}

/// Builds the session with the planted corpus ingested.
pub fn prepare(config: &BenchmarkConfig) -> Result<(Session, SynthCorpus), SessionError> {
    let corpus = generate(&config.corpus);
    let mut store = CorpusStore::new(corpus.schema.clone())?;
    store.ingest_records(corpus.records.clone(), IngestMode::Strict)?;
    let session = Session::new(config.session.clone(), store, None)?;
    Ok((session, corpus))
}

/// Creates a theme for planted theme `t` with the scripted feedback.
pub fn add_planted_theme(
    session: &mut Session,
    corpus: &SynthCorpus,
    t: usize,
    good: usize,
    bad: usize,
) -> Result<ThemeId, SessionError> {
    let id = session.create_theme(&format!("planted-{t}"))?.id;
    let taken: BTreeSet<String> = session.themes().themes().flat_map(|th| th.good_instances().cloned()).collect();
    for r in corpus.ranked_members(t).into_iter().filter(|r| !taken.contains(&r.id)).take(good) {
        session.add_exemplar(id, Polarity::Good, ExemplarRef::Instance { id: r.id.clone() })?;
    }
    // nearest instances to the center that do not belong to the theme
    let center = &corpus.centers[t];
    let mut outsiders: Vec<(f64, &str)> = corpus
        .records
        .iter()
        .filter(|r| corpus.truth[&r.id] != Some(t) && !taken.contains(&r.id))
        .map(|r| (dot(r.embedding.as_deref().expect("inline embeddings"), center), r.id.as_str()))
        .collect();
    outsiders.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    for (_, oid) in outsiders.into_iter().take(bad) {
        session.add_exemplar(id, Polarity::Bad, ExemplarRef::Instance { id: oid.to_string() })?;
    }
    Ok(id)
}

/// Runs both iterations on a prepared session.
pub fn run_iterations(
    session: &mut Session,
    corpus: &SynthCorpus,
    config: &BenchmarkConfig,
) -> Result<BenchmarkOutcome, SessionError> {
    let planted = config.corpus.themes;
    let first_round = config.first_round.min(planted);
    for t in 0..first_round {
        add_planted_theme(session, corpus, t, config.good_per_theme, config.bad_per_theme)?;
    }
    let job = session.run_mapping(MappingRequest::default())?;
    session.commit(job)?;
    let first = session.metrics(ResultRef::Iteration(1))?;

    let mut new_themes = Vec::new();
    for t in first_round..planted {
        new_themes.push(add_planted_theme(session, corpus, t, config.good_per_theme, config.bad_per_theme)?);
    }
    let nesy = session.run_mapping(MappingRequest { scope: InferenceScope::Full, ..MappingRequest::default() })?;
    let mapped = session.job_result(nesy)?.mapped();

    // baseline threshold: the mapped-th largest baseline score
    let probe = session.run_mapping(MappingRequest { method: Method::Nns, tau: Some(0.0), ..MappingRequest::default() })?;
    let mut scores: Vec<f64> = session.job_result(probe)?.entries.iter().map(|e| e.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let baseline_tau = match mapped {
        0 => 1.0 + f64::EPSILON,
        m => scores[m.min(scores.len()) - 1],
    };
    let nns = session.run_mapping(MappingRequest {
        method: Method::Nns,
        tau: Some(baseline_tau.min(1.0)),
        ..MappingRequest::default()
    })?;
    let baseline = session.metrics(ResultRef::Job(nns))?;

    session.commit(nesy)?;
    let second = session.metrics(ResultRef::Iteration(2))?;
    let shift = session.shift(ResultRef::Iteration(1), ResultRef::Iteration(2))?;
    let new_labels: Vec<Label> = new_themes.iter().map(|&t| Label::Theme(t)).collect();
    let unknown_to_new = new_labels.iter().filter_map(|&l| shift.get(Label::Unknown, l)).sum();
    let into_new = shift
        .labels
        .iter()
        .flat_map(|&from| new_labels.iter().map(move |&to| (from, to)))
        .filter_map(|(from, to)| shift.get(from, to))
        .sum();
    Ok(BenchmarkOutcome { first, second, baseline, baseline_tau, shift, new_themes, unknown_to_new, into_new })
}

pub fn run(config: &BenchmarkConfig) -> Result<(Session, BenchmarkOutcome), SessionError> {
    let (mut session, corpus) = prepare(config)?;
    let outcome = run_iterations(&mut session, &corpus, config)?;
    Ok((session, outcome))
}
