#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use themescope::index::normalize;
use themescope::mapper::{
    generate_training_data, learn_weights, ConceptRule, InstanceMapping, LearnConfig, MappingContext, MappingMethod,
    MappingResult, RuleWeightModel, ThemeRule, MODEL_FORMAT_VERSION,
};
use themescope::store::IngestMode;
use themescope::themes::ExemplarInput;
use themescope::{ConceptSchema, CorpusStore, InstanceId, Polarity, Record, ThemeId, ThemeRegistry};

pub mod invariants;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        if let Some(u) = normalize(&gaussian(rng, dim)) {
            return u;
        }
    }
}

/// `center + spread * noise`, normalized.
pub fn near(rng: &mut ChaCha8Rng, center: &[f32], spread: f32) -> Vec<f32> {
    let v: Vec<f32> = center.iter().zip(gaussian(rng, center.len())).map(|(c, g)| c + spread * g).collect();
    normalize(&v).unwrap_or_else(|| center.to_vec())
}

pub fn dot64(u: &[f32], v: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..u.len() {
        s += u[i] as f64 * v[i] as f64;
    }
    s
}

pub fn concept(c: usize) -> String {
    format!("c{c}")
}

pub fn value(v: usize) -> String {
    format!("v{v}")
}

pub fn schema(concepts: usize, values: usize) -> ConceptSchema {
    let mut s = ConceptSchema::new();
    for c in 0..concepts {
        s = s.with_concept(&concept(c), (0..values).map(value));
    }
    s
}

pub fn id(i: usize) -> InstanceId {
    format!("i{i:03}")
}

pub fn store_of(schema: ConceptSchema, records: Vec<Record>) -> CorpusStore {
    let mut store = CorpusStore::new(schema).expect("valid schema");
    store.ingest_records(records, IngestMode::Strict).expect("valid records");
    store
}

pub fn record(i: usize, embedding: Vec<f32>, concepts: BTreeMap<String, String>) -> Record {
    Record { id: id(i), text: format!("instance {i}"), concepts, embedding: Some(embedding), source_meta: BTreeMap::new() }
}

// ----- mapper fixtures --------------------------------------------------

pub struct MapperFixture {
    pub store: CorpusStore,
    pub themes: ThemeRegistry,
    pub centers: Vec<Vec<f32>>,
}

impl MapperFixture {
    pub fn context(&self) -> MappingContext {
        MappingContext::from_store(&self.store, &self.themes, 1).expect("ready store")
    }

    pub fn good_marks(&self) -> BTreeMap<InstanceId, ThemeId> {
        self.themes.clamps()
    }
}

#[derive(Clone, Debug)]
pub struct MapperShape {
    pub n: usize,
    pub themes: usize,
    pub concepts: usize,
    pub values: usize,
    pub dim: usize,
    pub missing: f64,
    pub goods: usize,
    pub phrases: bool,
    pub bads: bool,
}

impl MapperShape {
    pub fn small(n: usize, themes: usize, concepts: usize) -> Self {
        Self { n, themes, concepts, values: 2, dim: 4, missing: 0.25, goods: 1, phrases: true, bads: true }
    }
}

/// Instances scattered around one center per theme, with concept values
/// loosely tied to the theme and some left missing.
pub fn mapper_fixture(seed: u64, shape: &MapperShape) -> MapperFixture {
    let mut r = rng(seed);
    let centers: Vec<Vec<f32>> = (0..shape.themes).map(|_| unit(&mut r, shape.dim)).collect();
    let mut records = Vec::new();
    for i in 0..shape.n {
        let t = r.random_range(0..shape.themes);
        let embedding = if r.random_bool(0.8) { near(&mut r, &centers[t], 0.5) } else { unit(&mut r, shape.dim) };
        let mut concepts = BTreeMap::new();
        for c in 0..shape.concepts {
            if r.random_bool(shape.missing) {
                continue;
            }
            let v = if r.random_bool(0.7) { (t + c) % shape.values } else { r.random_range(0..shape.values) };
            concepts.insert(concept(c), value(v));
        }
        records.push(record(i, embedding, concepts));
    }
    let mut store = store_of(schema(shape.concepts, shape.values), records);
    let mut themes = ThemeRegistry::new();
    let mut used = BTreeSet::new();
    for (t, center) in centers.iter().enumerate() {
        let tid = themes.create_theme(&format!("theme {t}"), 1).expect("unique").id;
        let mut ranked: Vec<(f64, InstanceId)> =
            store.instances().iter().map(|inst| (dot64(&inst.embedding, center), inst.id.clone())).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let mut goods = 0;
        for (_, iid) in &ranked {
            if goods == shape.goods {
                break;
            }
            if used.insert(iid.clone()) {
                themes
                    .add_exemplar(&mut store, tid, Polarity::Good, ExemplarInput::Instance { id: iid.clone() }, 1)
                    .expect("fresh good example");
                goods += 1;
            }
        }
        if shape.phrases && (goods == 0 || r.random_bool(0.5)) {
            let e = near(&mut r, center, 0.3);
            themes.add_explanatory_phrase(&store, tid, &format!("phrase for {t}"), e).expect("phrase");
        }
        if shape.bads && r.random_bool(0.6) {
            if let Some((_, iid)) = ranked.iter().rev().find(|(_, i)| !used.contains(i)) {
                used.insert(iid.clone());
                themes
                    .add_exemplar(&mut store, tid, Polarity::Bad, ExemplarInput::Instance { id: iid.clone() }, 1)
                    .expect("bad example");
            }
        }
    }
    MapperFixture { store, themes, centers }
}

/// Model trained on the fixture's own feedback.
pub fn learned_model(f: &MapperFixture, neighbors: usize, tau: f64) -> Option<RuleWeightModel> {
    let ctx = f.context();
    let data = generate_training_data(&ctx, neighbors, 11).ok()?;
    learn_weights(&data, f.store.schema(), &LearnConfig { tau, ..LearnConfig::default() }).ok()
}

/// Model with arbitrary weights over the fixture's themes and schema.
pub fn random_model(r: &mut ChaCha8Rng, ctx: &MappingContext, tau: f64) -> RuleWeightModel {
    let themes: Vec<ThemeId> = ctx.themes.iter().map(|t| t.id).collect();
    let concept_values = ctx.schema.value_layout();
    let dim = ctx.index.dim();
    let theme_rules = themes
        .iter()
        .enumerate()
        .map(|(i, &t)| ThemeRule {
            theme: t,
            similarity_weights: (0..themes.len())
                .map(|j| if i == j { 0.0 } else { r.random_range(-3.0..3.0) })
                .collect(),
            trained: true,
        })
        .collect();
    let affinity = concept_values
        .iter()
        .map(|_| themes.iter().map(|_| r.random_range(-3.0..3.0)).collect())
        .collect();
    let concept_rules = ctx
        .schema
        .concepts
        .iter()
        .map(|(name, spec)| ConceptRule {
            concept: name.clone(),
            values: spec.values.clone(),
            prototypes: spec.values.iter().map(|_| r.random_bool(0.85).then(|| unit(r, dim))).collect(),
        })
        .collect();
    RuleWeightModel {
        format_version: MODEL_FORMAT_VERSION,
        themes,
        concept_values,
        theme_rules,
        affinity,
        concept_rules,
        tau,
    }
}

// ----- inference oracle -------------------------------------------------

fn logit_clamped(s: f64) -> f64 {
    let p = s.clamp(1e-4, 1.0 - 1e-4);
    p.ln() - (1.0 - p).ln()
}

/// Potential of labelling instance `i` with each theme (model column order)
/// relative to leaving it unassigned.
pub fn oracle_potentials(model: &RuleWeightModel, ctx: &MappingContext, i: usize) -> Vec<f64> {
    let view = &ctx.instances[i];
    let x = ctx.embedding(view);
    let sims: Vec<f64> = model
        .themes
        .iter()
        .map(|tid| {
            let theme = ctx.theme(*tid).expect("model theme is live");
            theme
                .good_examples
                .iter()
                .chain(&theme.explanatory_phrases)
                .map(|e| dot64(x, &e.embedding))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mut active = BTreeSet::new();
    for rule in &model.concept_rules {
        let chosen = match view.concepts.get(&rule.concept) {
            Some(v) => Some(v.clone()),
            None => {
                let mut best: Option<(usize, f64)> = None;
                for (k, p) in rule.prototypes.iter().enumerate() {
                    if let Some(p) = p {
                        let s = dot64(x, p);
                        if best.is_none() || s > best.unwrap().1 {
                            best = Some((k, s));
                        }
                    }
                }
                best.map(|(k, _)| rule.values[k].clone())
            }
        };
        if let Some(v) = chosen {
            active.insert((rule.concept.clone(), v));
        }
    }
    let threshold = model.tau.ln() - (1.0 - model.tau).ln();
    (0..model.themes.len())
        .map(|t| {
            let mut z = logit_clamped(sims[t]);
            for (j, s) in sims.iter().enumerate() {
                z += model.theme_rules[t].similarity_weights[j] * s;
            }
            for (j, cv) in model.concept_values.iter().enumerate() {
                if active.contains(cv) {
                    z += model.affinity[j][t];
                }
            }
            z - threshold
        })
        .collect()
}

/// Exhaustive search over every joint labelling (themes then Unassigned per
/// instance); good-marked instances may only take their theme. The first
/// maximum in enumeration order wins.
pub fn enumerate_map(model: &RuleWeightModel, ctx: &MappingContext) -> Vec<Option<ThemeId>> {
    let n = ctx.instances.len();
    let t = model.themes.len();
    let clamps = ctx.themes.iter().flat_map(|th| th.good_instances().map(move |i| (i.clone(), th.id)));
    let clamps: BTreeMap<InstanceId, ThemeId> = clamps.collect();
    // candidate labels per instance: Some(column) or None
    let options: Vec<Vec<(Option<usize>, f64)>> = (0..n)
        .map(|i| {
            let id = &ctx.instances[i].id;
            if let Some(th) = clamps.get(id) {
                let col = model.themes.iter().position(|x| x == th).expect("clamped theme in model");
                return vec![(Some(col), 0.0)];
            }
            let pot = oracle_potentials(model, ctx, i);
            (0..t).map(|c| (Some(c), pot[c])).chain([(None, 0.0)]).collect()
        })
        .collect();
    let total: usize = options.iter().map(Vec::len).product();
    let mut best_score = f64::NEG_INFINITY;
    let mut best = vec![0usize; n];
    let mut digits = vec![0usize; n];
    for _ in 0..total {
        let score: f64 = (0..n).map(|i| options[i][digits[i]].1).sum();
        if score > best_score {
            best_score = score;
            best = digits.clone();
        }
        // odometer, last instance fastest
        for i in (0..n).rev() {
            digits[i] += 1;
            if digits[i] < options[i].len() {
                break;
            }
            digits[i] = 0;
        }
    }
    (0..n).map(|i| options[i][best[i]].0.map(|c| model.themes[c])).collect()
}

// ----- metric fixtures and oracles --------------------------------------

pub struct MetricFixture {
    pub result: MappingResult,
    pub concepts: BTreeMap<InstanceId, BTreeMap<String, String>>,
    pub schema: ConceptSchema,
}

/// Random mapping of up to 200 instances over up to 6 themes and 3 concepts.
/// Similarities are sometimes quantized so ties occur.
pub fn metric_fixture(seed: u64) -> MetricFixture {
    let mut r = rng(seed);
    let n = r.random_range(1..=200);
    let themes = r.random_range(1..=6u64);
    let n_concepts = r.random_range(1..=3);
    let n_values = r.random_range(2..=4);
    let mapped_share = r.random_range(0.0..=1.0);
    let quantize = r.random_bool(0.4);
    let schema = schema(n_concepts, n_values);
    let mut concepts = BTreeMap::new();
    let entries = (0..n)
        .map(|i| {
            let theme = r.random_bool(mapped_share).then(|| ThemeId(r.random_range(0..themes)));
            let mut sim: f64 = r.random_range(-0.2..1.0);
            if quantize {
                sim = (sim * 10.0).round() / 10.0;
            }
            let mut cs = BTreeMap::new();
            for c in 0..n_concepts {
                if r.random_bool(0.9) {
                    let v = match theme {
                        Some(t) if r.random_bool(0.5) => (t.0 as usize) % n_values,
                        _ => r.random_range(0..n_values),
                    };
                    cs.insert(concept(c), value(v));
                }
            }
            concepts.insert(id(i), cs);
            InstanceMapping {
                id: id(i),
                theme,
                score: r.random_range(0.0..=1.0),
                centroid_similarity: theme.map(|_| sim),
                clamped: false,
            }
        })
        .collect();
    MetricFixture {
        result: MappingResult { iteration: 1, method: MappingMethod::NeSy, tau: 0.5, entries },
        concepts,
        schema,
    }
}

/// Same corpus, labels moved at random.
pub fn reshuffled(seed: u64, base: &MappingResult) -> MappingResult {
    let mut r = rng(seed);
    let themes = r.random_range(1..=6u64);
    let mut next = base.clone();
    for e in &mut next.entries {
        if r.random_bool(0.5) {
            e.theme = r.random_bool(0.7).then(|| ThemeId(r.random_range(0..themes)));
            e.centroid_similarity = e.theme.map(|_| r.random_range(0.0..1.0));
        }
    }
    next
}

pub fn oracle_coverage(result: &MappingResult) -> f64 {
    let mut mapped = 0;
    for e in &result.entries {
        if e.theme.is_some() {
            mapped += 1;
        }
    }
    mapped as f64 * 100.0 / result.entries.len() as f64
}

/// Sum over themes of the largest same-value count, over all mapped instances.
pub fn oracle_purity(f: &MetricFixture, concept: &str) -> f64 {
    let mut by_theme: BTreeMap<ThemeId, Vec<&str>> = BTreeMap::new();
    let mut n = 0usize;
    for e in &f.result.entries {
        if let Some(t) = e.theme {
            n += 1;
            let v = f.concepts[&e.id].get(concept).map_or("", String::as_str);
            by_theme.entry(t).or_default().push(v);
        }
    }
    let mut total = 0usize;
    for values in by_theme.values() {
        let mut best = 0;
        for candidate in values.iter().filter(|v| !v.is_empty()) {
            let c = values.iter().filter(|v| *v == candidate).count();
            best = best.max(c);
        }
        total += best;
    }
    total as f64 / n as f64 * 100.0
}

pub fn oracle_avg_purity(f: &MetricFixture) -> f64 {
    let names: Vec<&String> = f.schema.concepts.keys().collect();
    names.iter().map(|c| oracle_purity(f, c)).sum::<f64>() / names.len() as f64
}

/// Sort by similarity, cut at the nearest-rank positions, then take every
/// instance at least as similar as the cut.
pub fn oracle_quartiles(result: &MappingResult) -> [BTreeSet<InstanceId>; 4] {
    let mut sims: Vec<(f64, &InstanceId)> =
        result.entries.iter().filter(|e| e.theme.is_some()).map(|e| (e.centroid_similarity.unwrap(), &e.id)).collect();
    sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let n = sims.len();
    let cut = |k: usize| {
        let rank = ((k * n) as f64 / 4.0).ceil() as usize;
        sims[rank - 1].0
    };
    let take = |threshold: f64| sims.iter().filter(|(s, _)| *s >= threshold).map(|(_, i)| (*i).clone()).collect();
    [take(cut(1)), take(cut(2)), take(cut(3)), sims.iter().map(|(_, i)| (*i).clone()).collect()]
}

pub fn oracle_overlap(x: &BTreeSet<InstanceId>, y: &BTreeSet<InstanceId>) -> f64 {
    let smaller = x.len().min(y.len());
    if smaller == 0 {
        return 0.0;
    }
    let mut common = 0;
    for a in x {
        for b in y {
            if a == b {
                common += 1;
            }
        }
    }
    common as f64 / smaller as f64
}

pub fn labelled_sets(result: &MappingResult) -> BTreeMap<String, BTreeSet<InstanceId>> {
    let mut out: BTreeMap<String, BTreeSet<InstanceId>> = BTreeMap::new();
    for e in &result.entries {
        if let Some(t) = e.theme {
            out.entry(t.to_string()).or_default().insert(e.id.clone());
        }
    }
    out
}

/// Count of instances per (previous, next) label, Unknown as `None`.
pub fn oracle_shift_counts(
    prev: &MappingResult,
    next: &MappingResult,
) -> BTreeMap<(Option<ThemeId>, Option<ThemeId>), usize> {
    let mut out = BTreeMap::new();
    for a in &prev.entries {
        let b = next.entries.iter().find(|b| b.id == a.id).expect("same corpus");
        *out.entry((a.theme, b.theme)).or_default() += 1;
    }
    out
}

pub fn pick<'a, T>(r: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    items.choose(r).expect("non-empty")
}
