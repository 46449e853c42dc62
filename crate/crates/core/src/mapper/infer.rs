use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    similarity_features, InstanceMapping, InstanceView, MapperError, MappingContext, MappingMethod, MappingResult,
    RuleWeightModel,
};
use crate::index::dot;
use crate::store::Assignment;
use crate::themes::{Theme, ThemeId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceScope {
    #[default]
    Full,
    /// Only unassigned instances are re-scored; the rest keep their assignment.
    Unassigned,
}

pub fn infer(model: &RuleWeightModel, ctx: &MappingContext, scope: InferenceScope) -> Result<MappingResult, MapperError> {
    infer_with_progress(model, ctx, scope, None)
}

/// Like [`infer`], counting finished instances into `progress`.
pub fn infer_with_progress(
    model: &RuleWeightModel,
    ctx: &MappingContext,
    scope: InferenceScope,
    progress: Option<&AtomicUsize>,
) -> Result<MappingResult, MapperError> {
    if !(0.0..=1.0).contains(&model.tau) {
        return Err(MapperError::BadTau(model.tau));
    }
    let themes = scoreable_themes(ctx)?;
    let live: BTreeSet<ThemeId> = themes.iter().map(|t| t.id).collect();
    let trained: BTreeSet<ThemeId> = model.themes.iter().copied().collect();
    if live != trained {
        return Err(MapperError::ModelStale(live.symmetric_difference(&trained).copied().collect()));
    }
    // model column order
    let ordered: Vec<&Theme> = model
        .themes
        .iter()
        .map(|id| *themes.iter().find(|t| t.id == *id).expect("theme sets are equal"))
        .collect();
    let clamps = ctx.clamps();

    let entries = ctx
        .instances
        .par_iter()
        .map(|view| {
            let out = if scope == InferenceScope::Unassigned && view.assignment.is_assigned() {
                Ok(carry_over(ctx, view))
            } else if let Some(&theme) = clamps.get(view.id.as_str()) {
                Ok(InstanceMapping {
                    id: view.id.clone(),
                    theme: Some(theme),
                    score: 1.0,
                    centroid_similarity: centroid_similarity(ctx, view, theme),
                    clamped: true,
                })
            } else {
                score_instance(model, ctx, &ordered, view)
            };
            if let Some(p) = progress {
                p.fetch_add(1, Ordering::Relaxed);
            }
            out
        })
        .collect::<Result<Vec<_>, MapperError>>()?;
    Ok(MappingResult { iteration: ctx.iteration, method: MappingMethod::NeSy, tau: model.tau, entries })
}

fn score_instance(
    model: &RuleWeightModel,
    ctx: &MappingContext,
    themes: &[&Theme],
    view: &InstanceView,
) -> Result<InstanceMapping, MapperError> {
    let embedding = ctx.embedding(view);
    let sims = similarity_features(embedding, themes)?;
    let concepts = model.resolve_concepts(&view.concepts, embedding);
    let scores = model.scores(&sims, &concepts);
    let best = argmax(&scores, &sims);
    Ok(decide(ctx, view, Some(model.themes[best]), scores[best], model.tau))
}

/// Index of the best score; ties go to the higher raw similarity, then the
/// earlier column.
fn argmax(scores: &[f64], sims: &[f64]) -> usize {
    let mut best = 0;
    for t in 1..scores.len() {
        if scores[t] > scores[best] || (scores[t] == scores[best] && sims[t] > sims[best]) {
            best = t;
        }
    }
    best
}

fn decide(ctx: &MappingContext, view: &InstanceView, theme: Option<ThemeId>, score: f64, tau: f64) -> InstanceMapping {
    let theme = theme.filter(|_| score >= tau);
    InstanceMapping {
        id: view.id.clone(),
        theme,
        score,
        centroid_similarity: theme.and_then(|t| centroid_similarity(ctx, view, t)),
        clamped: false,
    }
}

fn carry_over(ctx: &MappingContext, view: &InstanceView) -> InstanceMapping {
    match view.assignment {
        Assignment::Assigned { theme, score, .. } => InstanceMapping {
            id: view.id.clone(),
            theme: Some(theme),
            score,
            centroid_similarity: centroid_similarity(ctx, view, theme),
            clamped: false,
        },
        Assignment::Unassigned => {
            InstanceMapping { id: view.id.clone(), theme: None, score: 0.0, centroid_similarity: None, clamped: false }
        }
    }
}

fn centroid_similarity(ctx: &MappingContext, view: &InstanceView, theme: ThemeId) -> Option<f64> {
    let centroid = ctx.theme(theme)?.centroid.as_ref()?;
    Some(dot(ctx.embedding(view), centroid))
}

fn scoreable_themes(ctx: &MappingContext) -> Result<Vec<&Theme>, MapperError> {
    let unscoreable = ctx.unscoreable();
    if !unscoreable.is_empty() {
        return Err(MapperError::Unscoreable(unscoreable));
    }
    if ctx.themes.is_empty() {
        return Err(MapperError::NoPositiveExemplars);
    }
    Ok(ctx.themes.iter().collect())
}

/// Thresholded max-cosine mapping with no concept features and no clamps.
/// The score is the best similarity clipped to `[0, 1]`.
pub fn nns_baseline(ctx: &MappingContext, tau: f64, iteration: u32) -> Result<MappingResult, MapperError> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(MapperError::BadTau(tau));
    }
    let themes = scoreable_themes(ctx)?;
    let entries = ctx
        .instances
        .par_iter()
        .map(|view| {
            let sims = similarity_features(ctx.embedding(view), &themes)?;
            let best = argmax(&sims, &sims);
            Ok(decide(ctx, view, Some(themes[best].id), sims[best].clamp(0.0, 1.0), tau))
        })
        .collect::<Result<Vec<_>, MapperError>>()?;
    Ok(MappingResult { iteration: iteration.max(1), method: MappingMethod::Nns, tau, entries })
}
