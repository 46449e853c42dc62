use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Label;
use crate::index::{dot, normalized_mean, tokenize};
use crate::partition::{balance, BalanceStats, Partition};
use crate::store::{CorpusStore, InstanceId};
use crate::themes::{Theme, ThemeRegistry};

/// Built-in English stopwords for token explanations.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "being", "but", "by", "can", "could", "did", "do", "does", "doing", "don", "for", "from", "get",
    "got", "had", "has", "have", "he", "her", "here", "him", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "just", "like", "me", "more", "most", "my", "no", "not", "now", "of", "on", "one", "only", "or",
    "other", "our", "out", "over", "rt", "s", "she", "should", "so", "some", "such", "t", "than", "that", "the",
    "their", "them", "then", "there", "these", "they", "this", "those", "to", "too", "up", "us", "very", "was",
    "we", "were", "what", "when", "where", "which", "while", "who", "why", "will", "with", "would", "you", "your",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub token: String,
    pub count: usize,
    /// Members containing the token.
    pub doc_freq: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptHistogram {
    pub concept: String,
    /// Value counts over members that carry the concept.
    pub counts: BTreeMap<String, usize>,
    /// Value shares in percent of all members.
    pub percent: BTreeMap<String, f64>,
    pub missing: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub members: usize,
    /// Most widespread tokens first (then by count, then alphabetically).
    pub tokens: Vec<TokenCount>,
    pub concepts: Vec<ConceptHistogram>,
    /// Members closest to the theme centroid, with their cosine.
    pub top: Vec<(InstanceId, f64)>,
    /// Members farthest from the centroid, farthest first.
    pub bottom: Vec<(InstanceId, f64)>,
}

/// Word frequencies, concept distributions and a nearest/farthest digest for
/// the given members of `theme`.
pub fn local_explanation(
    store: &CorpusStore,
    theme: &Theme,
    members: &BTreeSet<InstanceId>,
    stopwords: &BTreeSet<String>,
    max_tokens: usize,
    digest: usize,
) -> LocalExplanation {
    let found: Vec<&crate::store::Instance> = members.iter().filter_map(|id| store.get_instance(id).ok()).collect();

    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for inst in &found {
        let mut seen = BTreeSet::new();
        for tok in tokenize(&inst.text) {
            if stopwords.contains(&tok) {
                continue;
            }
            let entry = counts.entry(tok.clone()).or_default();
            entry.0 += 1;
            if seen.insert(tok) {
                entry.1 += 1;
            }
        }
    }
    let mut tokens: Vec<TokenCount> =
        counts.into_iter().map(|(token, (count, doc_freq))| TokenCount { token, count, doc_freq }).collect();
    tokens.sort_by(|a, b| b.doc_freq.cmp(&a.doc_freq).then(b.count.cmp(&a.count)).then_with(|| a.token.cmp(&b.token)));
    tokens.truncate(max_tokens);

    let concepts = store
        .schema()
        .concepts
        .keys()
        .map(|concept| {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            let mut missing = 0;
            for inst in &found {
                match inst.concepts.get(concept) {
                    Some(v) => *counts.entry(v.clone()).or_default() += 1,
                    None => missing += 1,
                }
            }
            let percent = counts
                .iter()
                .map(|(v, &c)| (v.clone(), 100.0 * c as f64 / found.len() as f64))
                .collect();
            ConceptHistogram { concept: concept.clone(), counts, percent, missing }
        })
        .collect();

    let index = store.index();
    let vectors: Vec<(&InstanceId, &[f32])> =
        found.iter().filter_map(|i| Some((&i.id, index.vector_of(&i.id)?))).collect();
    let centroid = theme
        .centroid
        .clone()
        .or_else(|| normalized_mean(vectors.iter().map(|(_, v)| *v), index.dim()));
    let mut scored: Vec<(InstanceId, f64)> = match &centroid {
        Some(c) => vectors.iter().map(|(id, v)| ((*id).clone(), dot(v, c))).collect(),
        None => Vec::new(),
    };
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let top = scored.iter().take(digest).cloned().collect();
    let mut bottom = scored.clone();
    bottom.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    bottom.truncate(digest);

    LocalExplanation { members: found.len(), tokens, concepts, top, bottom }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub label: Label,
    pub name: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: InstanceId,
    pub label: Label,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    /// Every live theme plus `Unknown`.
    pub distribution: Vec<LabelShare>,
    pub coverage: f64,
    pub balance: BalanceStats,
    pub projection: Vec<ProjectedPoint>,
}

/// Corpus-wide view of the committed assignments.
pub fn global_state(
    store: &CorpusStore,
    themes: &ThemeRegistry,
    partitions: &[Partition],
    sample_size: usize,
    seed: u64,
) -> GlobalState {
    let n = store.len();
    let mut counts: BTreeMap<Label, usize> = themes.ids().into_iter().map(|t| (Label::Theme(t), 0)).collect();
    counts.insert(Label::Unknown, 0);
    for inst in store.instances() {
        *counts.entry(inst.assignment.theme().into()).or_default() += 1;
    }
    let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
    let distribution = counts
        .iter()
        .map(|(&label, &count)| LabelShare {
            label,
            name: match label {
                Label::Theme(t) => themes.get(t).map(|th| th.name.clone()).unwrap_or_else(|_| t.to_string()),
                Label::Unknown => "Unknown".into(),
            },
            count,
            percent: pct(count),
        })
        .collect();
    let assigned = n - counts[&Label::Unknown];

    let index = store.index();
    let mut picked: Vec<usize> = if n <= sample_size {
        (0..n).collect()
    } else {
        sample(&mut ChaCha8Rng::seed_from_u64(seed), n, sample_size).into_vec()
    };
    picked.sort_unstable();
    let points: Vec<(&crate::store::Instance, &[f32])> = picked
        .iter()
        .map(|&p| &store.instances()[p])
        .filter_map(|inst| Some((inst, index.vector_of(&inst.id)?)))
        .collect();
    let coords = project_2d(&points.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    let projection = points
        .iter()
        .zip(coords)
        .map(|((inst, _), (x, y))| ProjectedPoint { id: inst.id.clone(), label: inst.assignment.theme().into(), x, y })
        .collect();

    GlobalState { distribution, coverage: pct(assigned), balance: balance(partitions), projection }
}

/// Coordinates on the two leading principal axes of the centered points.
/// Each axis is oriented so its largest-magnitude coordinate is positive.
pub fn project_2d(points: &[&[f32]]) -> Vec<(f64, f64)> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let d = points[0].len();
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, p) in points.iter().enumerate() {
        for (j, &v) in p.iter().enumerate() {
            x[(i, j)] = v as f64;
        }
    }
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    // eigen-decompose whichever of X^T X and X X^T is smaller
    let coords: DMatrix<f64> = if d <= n {
        let eig = SymmetricEigen::new(x.transpose() * &x);
        let axes = leading(&eig, 2);
        let mut v = DMatrix::<f64>::zeros(d, 2);
        for (k, &a) in axes.iter().enumerate() {
            v.set_column(k, &eig.eigenvectors.column(a));
        }
        &x * v
    } else {
        let eig = SymmetricEigen::new(&x * x.transpose());
        let axes = leading(&eig, 2);
        let mut c = DMatrix::<f64>::zeros(n, 2);
        for (k, &a) in axes.iter().enumerate() {
            let scale = eig.eigenvalues[a].max(0.0).sqrt();
            c.set_column(k, &(eig.eigenvectors.column(a) * scale));
        }
        c
    };
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|i| (coords[(i, 0)], if coords.ncols() > 1 { coords[(i, 1)] } else { 0.0 }))
        .collect();
    for axis in 0..2 {
        let get = |p: &(f64, f64)| if axis == 0 { p.0 } else { p.1 };
        let pivot = out.iter().map(get).fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            for p in out.iter_mut() {
                if axis == 0 {
                    p.0 = -p.0;
                } else {
                    p.1 = -p.1;
                }
            }
        }
    }
    out
}

fn leading(eig: &SymmetricEigen<f64, nalgebra::Dyn>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}
