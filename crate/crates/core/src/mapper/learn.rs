//! Rule-weight learning.
//!
//! Each theme gets an L2-regularized logistic scorer. The log-odds of the
//! instance's own similarity to the theme enter as a fixed offset, so a theme
//! with nothing learned scores exactly its similarity; the learned part is a
//! weight per other-theme similarity and one affinity per concept value.
//! Training minimizes the row-weighted mean loss with damped Newton steps,
//! which is deterministic and insensitive to duplicating the data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sigmoid, similarity_logit, MapperError, TrainingSet, DEFAULT_TAU};
use crate::index::{dot, normalized_mean};
use crate::store::ConceptSchema;
use crate::themes::ThemeId;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    /// L2 penalty on every learned weight.
    pub l2: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub tau: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self { l2: 0.01, max_iterations: 100, tolerance: 1e-10, tau: DEFAULT_TAU }
    }
}

/// Theme rule: weights over the similarity to every theme (own entry is the
/// fixed offset and stays 0 here).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThemeRule {
    pub theme: ThemeId,
    pub similarity_weights: Vec<f64>,
    /// False when the theme lacked positives or negatives and fell back to
    /// plain similarity.
    pub trained: bool,
}

/// Concept rule: one unit prototype per value; a missing value is imputed as
/// the value whose prototype is most similar to the instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptRule {
    pub concept: String,
    pub values: Vec<String>,
    pub prototypes: Vec<Option<Vec<f32>>>,
}

impl ConceptRule {
    pub fn impute(&self, embedding: &[f32]) -> Option<&str> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.prototypes.iter().enumerate() {
            if let Some(p) = p {
                let s = dot(embedding, p);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
        }
        best.map(|(i, _)| self.values[i].as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleWeightModel {
    pub format_version: u32,
    /// Column order for similarities and affinities.
    pub themes: Vec<ThemeId>,
    /// `(concept, value)` one-hot layout.
    pub concept_values: Vec<(String, String)>,
    pub theme_rules: Vec<ThemeRule>,
    /// `affinity[value][theme]`: weight of `Concept(i,c) => Theme(i,t)`.
    pub affinity: Vec<Vec<f64>>,
    pub concept_rules: Vec<ConceptRule>,
    pub tau: f64,
}

impl RuleWeightModel {
    pub fn theme_index(&self, theme: ThemeId) -> Option<usize> {
        self.themes.iter().position(|&t| t == theme)
    }

    pub fn value_index(&self, concept: &str, value: &str) -> Option<usize> {
        self.concept_values.iter().position(|(c, v)| c == concept && v == value)
    }

    pub fn affinity_of(&self, concept: &str, value: &str, theme: ThemeId) -> Option<f64> {
        Some(self.affinity[self.value_index(concept, value)?][self.theme_index(theme)?])
    }

    /// Observed values clamp; missing values come from the concept rules.
    pub fn resolve_concepts(&self, observed: &BTreeMap<String, String>, embedding: &[f32]) -> Vec<f64> {
        let mut x = vec![0.0; self.concept_values.len()];
        for rule in &self.concept_rules {
            let value = observed
                .get(&rule.concept)
                .map(String::as_str)
                .or_else(|| rule.impute(embedding));
            if let Some(j) = value.and_then(|v| self.value_index(&rule.concept, v)) {
                x[j] = 1.0;
            }
        }
        x
    }

    /// Log-odds that the instance belongs to each theme.
    pub fn log_odds(&self, similarities: &[f64], concepts: &[f64]) -> Vec<f64> {
        (0..self.themes.len())
            .map(|t| {
                let mut z = similarity_logit(similarities[t]);
                for (s, w) in similarities.iter().zip(&self.theme_rules[t].similarity_weights) {
                    z += s * w;
                }
                for (x, row) in concepts.iter().zip(&self.affinity) {
                    z += x * row[t];
                }
                z
            })
            .collect()
    }

    pub fn scores(&self, similarities: &[f64], concepts: &[f64]) -> Vec<f64> {
        self.log_odds(similarities, concepts).into_iter().map(sigmoid).collect()
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn save(&self, path: &Path) -> Result<(), MapperError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MapperError> {
        let model: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if model.format_version > MODEL_FORMAT_VERSION {
            return Err(MapperError::Version { found: model.format_version, supported: MODEL_FORMAT_VERSION });
        }
        Ok(model)
    }
}

pub fn learn_weights(
    data: &TrainingSet,
    schema: &ConceptSchema,
    config: &LearnConfig,
) -> Result<RuleWeightModel, MapperError> {
    if !(0.0..=1.0).contains(&config.tau) {
        return Err(MapperError::BadTau(config.tau));
    }
    if data.rows.is_empty() {
        return Err(MapperError::Degenerate("no training rows".into()));
    }
    if data.positives() == 0 || data.negatives() == 0 {
        let which = if data.positives() == 0 { "positive" } else { "negative" };
        return Err(MapperError::Degenerate(format!("every row is {}; no {which} rows", if which == "positive" { "negative" } else { "positive" })));
    }

    let concept_values = schema.value_layout();
    let concept_rules = concept_prototypes(data, schema);
    let n_themes = data.themes.len();
    let mut model = RuleWeightModel {
        format_version: MODEL_FORMAT_VERSION,
        themes: data.themes.clone(),
        concept_values,
        theme_rules: data
            .themes
            .iter()
            .map(|&t| ThemeRule { theme: t, similarity_weights: vec![0.0; n_themes], trained: false })
            .collect(),
        affinity: Vec::new(),
        concept_rules,
        tau: config.tau,
    };
    model.affinity = vec![vec![0.0; n_themes]; model.concept_values.len()];

    let one_hots: Vec<Vec<f64>> = data
        .rows
        .iter()
        .map(|r| model.resolve_concepts(&r.concepts, &r.embedding))
        .collect();

    for (ti, &theme) in data.themes.iter().enumerate() {
        let rows: Vec<usize> = (0..data.rows.len()).filter(|&i| data.rows[i].theme == theme).collect();
        let has_pos = rows.iter().any(|&i| data.rows[i].positive);
        let has_neg = rows.iter().any(|&i| !data.rows[i].positive);
        if !(has_pos && has_neg) {
            continue;
        }
        let others: Vec<usize> = (0..n_themes).filter(|&t| t != ti).collect();
        let features: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| {
                let r = &data.rows[i];
                others.iter().map(|&t| r.similarities[t]).chain(one_hots[i].iter().copied()).collect()
            })
            .collect();
        let offsets: Vec<f64> = rows.iter().map(|&i| similarity_logit(data.rows[i].similarities[ti])).collect();
        let labels: Vec<f64> = rows.iter().map(|&i| if data.rows[i].positive { 1.0 } else { 0.0 }).collect();
        let weights: Vec<f64> = rows.iter().map(|&i| data.rows[i].weight).collect();
        let beta = fit_logistic(&features, &offsets, &labels, &weights, config);

        let rule = &mut model.theme_rules[ti];
        rule.trained = true;
        for (k, &t) in others.iter().enumerate() {
            rule.similarity_weights[t] = beta[k];
        }
        for (j, row) in model.affinity.iter_mut().enumerate() {
            row[ti] = beta[others.len() + j];
        }
    }
    Ok(model)
}

fn concept_prototypes(data: &TrainingSet, schema: &ConceptSchema) -> Vec<ConceptRule> {
    // count each source once even though it may label several themes
    let mut seen = BTreeSet::new();
    let unique: Vec<_> = data.rows.iter().filter(|r| seen.insert(&r.source)).collect();
    let dim = unique.first().map_or(0, |r| r.embedding.len());
    schema
        .concepts
        .iter()
        .map(|(concept, spec)| ConceptRule {
            concept: concept.clone(),
            values: spec.values.clone(),
            prototypes: spec
                .values
                .iter()
                .map(|v| {
                    let members = unique
                        .iter()
                        .filter(|r| r.concepts.get(concept) == Some(v))
                        .map(|r| r.embedding.as_slice());
                    normalized_mean(members, dim)
                })
                .collect(),
        })
        .collect()
}

fn mean_loss(x: &[Vec<f64>], offsets: &[f64], y: &[f64], w: &[f64], beta: &[f64], l2: f64) -> f64 {
    let total_w: f64 = w.iter().sum();
    let mut loss = 0.0;
    for i in 0..x.len() {
        let eta = offsets[i] + x[i].iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        // log(1 + e^eta) - y * eta, computed stably
        let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
        loss += w[i] * (softplus - y[i] * eta);
    }
    loss / total_w + 0.5 * l2 * beta.iter().map(|b| b * b).sum::<f64>()
}

fn fit_logistic(x: &[Vec<f64>], offsets: &[f64], y: &[f64], w: &[f64], config: &LearnConfig) -> Vec<f64> {
    let p = x.first().map_or(0, Vec::len);
    let mut beta = vec![0.0; p];
    if p == 0 {
        return beta;
    }
    let total_w: f64 = w.iter().sum();
    let mut loss = mean_loss(x, offsets, y, w, &beta, config.l2);
    for _ in 0..config.max_iterations {
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for i in 0..x.len() {
            let eta = offsets[i] + x[i].iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            let mu = sigmoid(eta);
            let g = w[i] * (mu - y[i]) / total_w;
            let h = w[i] * mu * (1.0 - mu) / total_w;
            for a in 0..p {
                grad[a] += g * x[i][a];
                if x[i][a] != 0.0 {
                    for b in 0..p {
                        hess[(a, b)] += h * x[i][a] * x[i][b];
                    }
                }
            }
        }
        for a in 0..p {
            grad[a] += config.l2 * beta[a];
            hess[(a, a)] += config.l2;
        }
        let step = match hess.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let decrease = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().enumerate().map(|(a, b)| b - t * step[a]).collect();
            let trial_loss = mean_loss(x, offsets, y, w, &trial, config.l2);
            if trial_loss <= loss - 1e-4 * t * decrease {
                beta = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || t * step.amax() < config.tolerance {
            break;
        }
    }
    beta
}
