use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnalyticsError, QuartileSlices, Slice};
use crate::mapper::MappingResult;
use crate::store::InstanceId;
use crate::themes::ThemeId;

/// Expert judgment for a mapped instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Theme(ThemeId),
    /// Belongs to none of the themes.
    Other,
}

impl fmt::Display for GoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoldLabel::Theme(t) => write!(f, "{t}"),
            GoldLabel::Other => f.write_str("Other"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Average {
    #[default]
    Micro,
    Macro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceScore {
    pub slice: Slice,
    /// Judged instances inside the slice.
    pub support: usize,
    /// Percentages; `None` on an empty slice.
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
}

impl SliceScore {
    pub fn f1(&self, average: F1Average) -> Option<f64> {
        match average {
            F1Average::Micro => self.micro_f1,
            F1Average::Macro => self.macro_f1,
        }
    }
}

/// Gold labels (rows) against predicted themes (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rows: Vec<GoldLabel>,
    pub cols: Vec<ThemeId>,
    pub counts: Vec<Vec<usize>>,
    /// Each column divided by its total.
    pub normalized: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub slices: Vec<SliceScore>,
    pub confusion: ConfusionMatrix,
}

impl EvaluationReport {
    pub fn slice(&self, slice: Slice) -> &SliceScore {
        self.slices.iter().find(|s| s.slice == slice).expect("every slice is scored")
    }
}

/// F1 of the mapping against expert judgments on every cumulative slice.
pub fn evaluation_report(
    result: &MappingResult,
    slices: &QuartileSlices,
    gold: &BTreeMap<InstanceId, GoldLabel>,
) -> Result<EvaluationReport, AnalyticsError> {
    let entries: BTreeMap<&str, _> = result.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut judged: Vec<(ThemeId, GoldLabel, f64)> = Vec::with_capacity(gold.len());
    for (id, &label) in gold {
        let entry = entries.get(id.as_str()).ok_or_else(|| AnalyticsError::UnknownGoldId(id.clone()))?;
        let theme = entry.theme.ok_or_else(|| AnalyticsError::UnmappedGoldId(id.clone()))?;
        let sim = entry.centroid_similarity.ok_or_else(|| AnalyticsError::MissingSimilarity(id.clone()))?;
        judged.push((theme, label, sim));
    }

    let scores = Slice::ALL
        .into_iter()
        .map(|slice| {
            let pairs: Vec<(ThemeId, GoldLabel)> = judged
                .iter()
                .filter(|(_, _, s)| slices.contains(slice, *s))
                .map(|&(p, g, _)| (p, g))
                .collect();
            let (micro, mac) = f1_scores(&pairs);
            SliceScore { slice, support: pairs.len(), micro_f1: micro, macro_f1: mac }
        })
        .collect();

    let rows: Vec<GoldLabel> = judged.iter().map(|j| j.1).collect::<BTreeSet<_>>().into_iter().collect();
    let cols: Vec<ThemeId> = judged.iter().map(|j| j.0).collect::<BTreeSet<_>>().into_iter().collect();
    let mut counts = vec![vec![0usize; cols.len()]; rows.len()];
    for (p, g, _) in &judged {
        let r = rows.binary_search(g).expect("collected");
        let c = cols.binary_search(p).expect("collected");
        counts[r][c] += 1;
    }
    let col_totals: Vec<usize> = (0..cols.len()).map(|c| counts.iter().map(|r| r[c]).sum()).collect();
    let normalized = counts
        .iter()
        .map(|row| row.iter().zip(&col_totals).map(|(&n, &t)| n as f64 / t as f64).collect())
        .collect();
    Ok(EvaluationReport { slices: scores, confusion: ConfusionMatrix { rows, cols, counts, normalized } })
}

/// Micro and macro F1 (as percentages) over every label that occurs as a
/// prediction or a judgment.
fn f1_scores(pairs: &[(ThemeId, GoldLabel)]) -> (Option<f64>, Option<f64>) {
    if pairs.is_empty() {
        return (None, None);
    }
    // (tp, fp, fn) per label
    let mut tally: BTreeMap<GoldLabel, (usize, usize, usize)> = BTreeMap::new();
    for &(p, g) in pairs {
        let predicted = GoldLabel::Theme(p);
        if predicted == g {
            tally.entry(g).or_default().0 += 1;
        } else {
            tally.entry(predicted).or_default().1 += 1;
            tally.entry(g).or_default().2 += 1;
        }
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let (tp, fp, fn_) = tally.values().fold((0, 0, 0), |a, t| (a.0 + t.0, a.1 + t.1, a.2 + t.2));
    let micro = 100.0 * f1(tp, fp, fn_);
    let macro_ = 100.0 * tally.values().map(|&(a, b, c)| f1(a, b, c)).sum::<f64>() / tally.len() as f64;
    (Some(micro), Some(macro_))
}

/// Up to `n` mapped instances spread evenly over themes and proximity
/// bands: cells (theme, band) are visited round-robin, each drawing from a
/// seeded shuffle of its members.
pub fn stratified_sample(slices: &QuartileSlices, n: usize, seed: u64) -> Vec<InstanceId> {
    let mut cells: BTreeMap<(ThemeId, Slice), Vec<InstanceId>> = BTreeMap::new();
    for inst in &slices.instances {
        cells.entry((inst.theme, slices.slice_of(inst.similarity))).or_default().push(inst.id.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<Vec<InstanceId>> = cells
        .into_values()
        .map(|mut ids| {
            ids.sort();
            ids.shuffle(&mut rng);
            ids.reverse();
            ids
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n && queues.iter().any(|q| !q.is_empty()) {
        for q in queues.iter_mut() {
            if out.len() == n {
                break;
            }
            if let Some(id) = q.pop() {
                out.push(id);
            }
        }
    }
    out
}
