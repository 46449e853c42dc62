//! Property suites shared by the property tests and the acceptance harness.
//! Each runs a deterministic proptest runner for the requested case count.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};
use rand::Rng;

use themescope::analytics::{
    concept_purity, evaluation_report, overlap, overlap_matrix, quartile_slices, shift_matrix, stratified_sample,
    GoldLabel, Label, Slice,
};
use themescope::index::{nearest_neighbors, normalize, theme_similarity, EmbedIndex};
use themescope::mapper::{
    generate_training_data, infer, learn_weights, nns_baseline, InferenceScope, LearnConfig, RuleWeightModel,
};
use themescope::partition::{density_partition, kmeans_partition, SphericalKMeans};
use themescope::store::IngestMode;
use themescope::synth::{generate, SynthConfig};
use themescope::themes::{ExemplarInput, ExemplarSource};
use themescope::{cosine, CorpusStore, InstanceId, NeighborFilter, Polarity, ThemeRegistry};

use super::*;

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

/// A model for the fixture: learned when the feedback allows it, random otherwise.
fn some_model(f: &MapperFixture, seed: u64, tau: f64) -> RuleWeightModel {
    if seed % 3 != 0 {
        if let Some(m) = learned_model(f, 10, tau) {
            return m;
        }
    }
    random_model(&mut rng(seed ^ 0x5eed), &f.context(), tau)
}

fn fixture_strategy() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 6usize..40, 1usize..4, 0usize..3)
}

pub fn threshold_monotonicity(cases: u32) -> Result<(), String> {
    check(cases, (fixture_strategy(), 0.0f64..=1.0, 0.0f64..=1.0), |((seed, n, t, c), a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let f = mapper_fixture(seed, &MapperShape::small(n, t, c));
        let ctx = f.context();
        let model = some_model(&f, seed, lo);
        let at_lo = infer(&model, &ctx, InferenceScope::Full).unwrap().mapped_set();
        let at_hi = infer(&model.clone().with_tau(hi), &ctx, InferenceScope::Full).unwrap().mapped_set();
        prop_assert!(at_hi.is_subset(&at_lo), "NeSy mapped set grew from tau {lo} to {hi}");
        let nns_lo = nns_baseline(&ctx, lo, 1).unwrap().mapped_set();
        let nns_hi = nns_baseline(&ctx, hi, 1).unwrap().mapped_set();
        prop_assert!(nns_hi.is_subset(&nns_lo), "NNs mapped set grew from tau {lo} to {hi}");
        Ok(())
    })
}

pub fn exclusivity(cases: u32) -> Result<(), String> {
    check(cases, (fixture_strategy(), 0.0f64..=1.0, any::<bool>()), |((seed, n, t, c), tau, unassigned)| {
        let f = mapper_fixture(seed, &MapperShape::small(n, t, c));
        let ctx = f.context();
        let scope = if unassigned { InferenceScope::Unassigned } else { InferenceScope::Full };
        let nesy = infer(&some_model(&f, seed, tau), &ctx, scope).unwrap();
        let nns = nns_baseline(&ctx, tau, 1).unwrap();
        for result in [&nesy, &nns] {
            let ids: Vec<&InstanceId> = result.entries.iter().map(|e| &e.id).collect();
            let corpus: Vec<&InstanceId> = f.store.instances().iter().map(|i| &i.id).collect();
            prop_assert_eq!(ids, corpus);
            let groups = result.members_by_theme();
            let total: usize = groups.values().map(BTreeSet::len).sum();
            let union: BTreeSet<InstanceId> = groups.values().flatten().cloned().collect();
            prop_assert_eq!(total, union.len(), "an instance sits in two themes");
            prop_assert_eq!(union, result.mapped_set());
            prop_assert_eq!(result.mapped() + result.unmapped(), result.total());
        }
        if scope == InferenceScope::Full {
            for e in nesy.entries.iter().chain(&nns.entries) {
                if e.theme.is_some() {
                    prop_assert!(e.score >= tau, "{} assigned with score {} below tau {}", e.id, e.score, tau);
                }
            }
        }
        Ok(())
    })
}

pub fn clamp_dominance(cases: u32) -> Result<(), String> {
    check(cases, (fixture_strategy(), 0.0f64..=1.0, any::<bool>()), |((seed, n, t, c), tau, unassigned)| {
        let f = mapper_fixture(seed, &MapperShape { goods: 2, ..MapperShape::small(n, t, c) });
        let ctx = f.context();
        let scope = if unassigned { InferenceScope::Unassigned } else { InferenceScope::Full };
        let result = infer(&some_model(&f, seed, tau), &ctx, scope).unwrap();
        for (iid, theme) in f.good_marks() {
            let e = result.entries.iter().find(|e| e.id == iid).unwrap();
            prop_assert_eq!(e.theme, Some(theme));
            prop_assert_eq!(e.score, 1.0);
        }
        Ok(())
    })
}

#[derive(Clone, Debug)]
enum CentroidOp {
    Good(usize),
    Bad(usize),
    GoodPhrase(usize),
    Explanation(usize),
    Remove(usize),
}

fn centroid_op() -> impl Strategy<Value = CentroidOp> {
    prop_oneof![
        (0usize..10).prop_map(CentroidOp::Good),
        (0usize..10).prop_map(CentroidOp::Bad),
        (0usize..4).prop_map(CentroidOp::GoodPhrase),
        (0usize..4).prop_map(CentroidOp::Explanation),
        (0usize..20).prop_map(CentroidOp::Remove),
    ]
}

pub fn centroid_correctness(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), prop::collection::vec(centroid_op(), 1..25)), |(seed, ops)| {
        let mut r = rng(seed);
        let dim = 5;
        let records = (0..10).map(|i| record(i, unit(&mut r, dim), BTreeMap::new())).collect();
        let mut store = store_of(schema(0, 2), records);
        let phrases: Vec<Vec<f32>> = (0..4).map(|_| unit(&mut r, dim)).collect();
        let mut themes = ThemeRegistry::new();
        let tid = themes.create_theme("t", 1).unwrap().id;
        // expected positive exemplars, tracked independently of the registry
        let mut positives: BTreeMap<ExemplarSource, Vec<f32>> = BTreeMap::new();
        let mut touched: Vec<ExemplarSource> = Vec::new();
        for op in ops {
            match op {
                CentroidOp::Good(i) | CentroidOp::Bad(i) => {
                    let good = matches!(op, CentroidOp::Good(_));
                    let polarity = if good { Polarity::Good } else { Polarity::Bad };
                    let input = ExemplarInput::Instance { id: id(i) };
                    let ok = themes.add_exemplar(&mut store, tid, polarity, input, 1).is_ok();
                    let source = ExemplarSource::Instance(id(i));
                    if ok && good {
                        let e = store.get_instance(&id(i)).unwrap().embedding.clone();
                        positives.entry(source.clone()).or_insert(e);
                    }
                    touched.push(source);
                }
                CentroidOp::GoodPhrase(k) => {
                    let input = ExemplarInput::Phrase { text: format!("p{k}"), embedding: phrases[k].clone() };
                    if themes.add_exemplar(&mut store, tid, Polarity::Good, input, 1).is_ok() {
                        positives.entry(ExemplarSource::Phrase(format!("p{k}"))).or_insert(phrases[k].clone());
                    }
                    touched.push(ExemplarSource::Phrase(format!("p{k}")));
                }
                CentroidOp::Explanation(k) => {
                    if themes.add_explanatory_phrase(&store, tid, &format!("p{k}"), phrases[k].clone()).is_ok() {
                        positives.entry(ExemplarSource::Phrase(format!("p{k}"))).or_insert(phrases[k].clone());
                    }
                    touched.push(ExemplarSource::Phrase(format!("p{k}")));
                }
                CentroidOp::Remove(k) => {
                    if let Some(source) = touched.get(k % touched.len().max(1)).cloned() {
                        if themes.remove_exemplar(tid, &source).is_ok() {
                            positives.remove(&source);
                        }
                    }
                }
            }
            let theme = themes.get(tid).unwrap();
            let live: BTreeSet<ExemplarSource> = theme.positive_exemplars().map(|e| e.source.clone()).collect();
            prop_assert_eq!(&live, &positives.keys().cloned().collect::<BTreeSet<_>>());
            match &theme.centroid {
                None => prop_assert!(positives.is_empty()),
                Some(c) => {
                    let mut mean = vec![0f64; dim];
                    for e in positives.values() {
                        for (m, x) in mean.iter_mut().zip(e) {
                            *m += *x as f64;
                        }
                    }
                    let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
                    for (got, m) in c.iter().zip(&mean) {
                        prop_assert!((*got as f64 - m / norm).abs() < 1e-6, "centroid {c:?} vs mean {mean:?}");
                    }
                }
            }
        }
        Ok(())
    })
}

pub fn slice_nesting(cases: u32) -> Result<(), String> {
    check(cases, any::<u64>(), |seed| {
        let f = metric_fixture(seed);
        let Ok(q) = quartile_slices(&f.result) else {
            prop_assert!(f.result.mapped() < 4);
            return Ok(());
        };
        let sets = Slice::ALL.map(|s| q.members(s));
        for w in sets.windows(2) {
            prop_assert!(w[0].is_subset(&w[1]));
        }
        prop_assert_eq!(&sets[3], &f.result.mapped_set());
        let sims: BTreeSet<u64> = q.instances.iter().map(|i| i.similarity.to_bits()).collect();
        if sims.len() == q.instances.len() {
            for w in sets.windows(2) {
                prop_assert!(w[0].len() < w[1].len(), "distinct similarities must give strict nesting");
            }
        }
        // evaluation support follows the same nesting
        let mut r = rng(seed);
        let gold: BTreeMap<InstanceId, GoldLabel> = f
            .result
            .entries
            .iter()
            .filter(|e| e.theme.is_some())
            .map(|e| {
                let label = if r.random_bool(0.7) { GoldLabel::Theme(e.theme.unwrap()) } else { GoldLabel::Other };
                (e.id.clone(), label)
            })
            .collect();
        let report = evaluation_report(&f.result, &q, &gold).unwrap();
        for (k, s) in Slice::ALL.iter().enumerate() {
            prop_assert_eq!(report.slice(*s).support, sets[k].len());
        }
        Ok(())
    })
}

pub fn determinism(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 2usize..5), |(seed, k)| {
        let synth = SynthConfig { dim: 8, themes: 3, per_theme: 12, background: 6, seed, ..SynthConfig::default() };
        let corpus = generate(&synth);
        prop_assert_eq!(&corpus, &generate(&synth));

        let mut store = CorpusStore::new(corpus.schema.clone()).unwrap();
        store.ingest_records(corpus.records.clone(), IngestMode::Strict).unwrap();
        let index = store.index();
        let ids = store.unassigned_ids();
        let a = kmeans_partition(&index, &ids, k, seed).unwrap();
        prop_assert_eq!(&a, &kmeans_partition(&index, &ids, k, seed).unwrap());
        let d = density_partition(&index, &ids, 4).unwrap();
        prop_assert_eq!(&d, &density_partition(&index, &ids, 4).unwrap());

        let mut themes = ThemeRegistry::new();
        for t in 0..2 {
            let tid = themes.create_theme(&format!("t{t}"), 1).unwrap().id;
            let first = corpus.ranked_members(t)[0].id.clone();
            themes.add_exemplar(&mut store, tid, Polarity::Good, ExemplarInput::Instance { id: first }, 1).unwrap();
        }
        let ctx = themescope::mapper::MappingContext::from_store(&store, &themes, 1).unwrap();
        let data = generate_training_data(&ctx, 8, seed).unwrap();
        prop_assert_eq!(&data, &generate_training_data(&ctx, 8, seed).unwrap());
        let model = learn_weights(&data, store.schema(), &LearnConfig::default()).unwrap();
        prop_assert_eq!(&model, &learn_weights(&data, store.schema(), &LearnConfig::default()).unwrap());
        let result = infer(&model, &ctx, InferenceScope::Full).unwrap();
        prop_assert_eq!(&result, &infer(&model, &ctx, InferenceScope::Full).unwrap());
        if let Ok(q) = quartile_slices(&result) {
            prop_assert_eq!(stratified_sample(&q, 10, seed), stratified_sample(&q, 10, seed));
        }
        Ok(())
    })
}

pub fn inference_oracle(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 1usize..=8, 1usize..=3, 0usize..=2, 0.02f64..0.98), |(seed, n, t, c, tau)| {
        let f = mapper_fixture(seed, &MapperShape { goods: 1, ..MapperShape::small(n.max(t), t, c) });
        let ctx = f.context();
        let model = match seed % 2 {
            0 => learned_model(&f, 4, tau).unwrap_or_else(|| random_model(&mut rng(seed), &ctx, tau)),
            _ => random_model(&mut rng(seed), &ctx, tau),
        };
        let got: Vec<_> = infer(&model, &ctx, InferenceScope::Full).unwrap().entries.iter().map(|e| e.theme).collect();
        prop_assert_eq!(got, enumerate_map(&model, &ctx));
        Ok(())
    })
}

pub fn knn_exactness(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 1usize..150, 1usize..20, 2usize..8), |(seed, n, k, dim)| {
        let mut r = rng(seed);
        // quantized vectors produce exact ties
        let vectors: Vec<(InstanceId, Vec<f32>)> = (0..n)
            .map(|i| {
                let v = unit(&mut r, dim);
                let v = if i % 3 == 0 { normalize(&v.iter().map(|x| x.round()).collect::<Vec<_>>()).unwrap_or(v) } else { v };
                (id(i), v)
            })
            .collect();
        let index = EmbedIndex::from_vectors(dim, &vectors).unwrap();
        let query = unit(&mut r, dim);
        let hits = index.search(&query, k, |_| true).unwrap();
        // the index stores normalized copies; score against the same copies
        let q = normalize(&query).unwrap();
        let stored: Vec<Vec<f32>> = vectors.iter().map(|(_, v)| normalize(v).unwrap()).collect();
        let mut oracle: Vec<(f64, &InstanceId)> =
            vectors.iter().zip(&stored).map(|((i, _), v)| (dot64(&q, v), i)).collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        oracle.truncate(k);
        prop_assert_eq!(hits.len(), oracle.len());
        for (h, (s, i)) in hits.iter().zip(&oracle) {
            prop_assert!((h.similarity - s).abs() < 1e-12);
            prop_assert_eq!(&h.id, *i);
        }
        Ok(())
    })
}

pub fn store_knn_filter(cases: u32) -> Result<(), String> {
    check(cases, (fixture_strategy(), 1usize..12), |((seed, n, t, c), k)| {
        let f = mapper_fixture(seed, &MapperShape::small(n, t, c));
        let query = unit(&mut rng(seed), 4);
        let hits = nearest_neighbors(&f.store.index(), f.store.instances(), &query, k, NeighborFilter::Unassigned)
            .unwrap();
        let pool: Vec<_> = f.store.instances().iter().filter(|i| !i.assignment.is_assigned()).collect();
        prop_assert_eq!(hits.len(), k.min(pool.len()));
        for h in &hits {
            prop_assert!(pool.iter().any(|i| i.id == h.id));
        }
        Ok(())
    })
}

pub fn cosine_symmetry(cases: u32) -> Result<(), String> {
    check(cases, (prop::collection::vec(-10.0f32..10.0, 1..16), any::<u64>()), |(u, seed)| {
        let v = gaussian(&mut rng(seed), u.len());
        match (cosine(&u, &v), cosine(&v, &u)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "asymmetric failure"),
        }
        Ok(())
    })
}

pub fn monotone_scoring(cases: u32) -> Result<(), String> {
    check(cases, (fixture_strategy(), any::<u64>()), |((seed, n, t, c), extra)| {
        let mut f = mapper_fixture(seed, &MapperShape::small(n, t, c));
        let tid = f.themes.ids()[0];
        let before: Vec<f64> = f
            .store
            .instances()
            .iter()
            .map(|i| theme_similarity(&i.embedding, f.themes.get(tid).unwrap()).unwrap())
            .collect();
        let e = unit(&mut rng(extra), 4);
        f.themes.add_explanatory_phrase(&f.store, tid, "one more phrase", e).unwrap();
        for (inst, b) in f.store.instances().iter().zip(before) {
            prop_assert!(theme_similarity(&inst.embedding, f.themes.get(tid).unwrap()).unwrap() >= b);
        }
        Ok(())
    })
}

pub fn concept_sensitivity(cases: u32) -> Result<(), String> {
    check(cases, (fixture_strategy(), 0usize..40), |((seed, n, t, c), pick)| {
        let f = mapper_fixture(seed, &MapperShape::small(n, t.max(2), c.max(1)));
        let ctx = f.context();
        let model = some_model(&f, seed, 0.5);
        let view = &ctx.instances[pick % ctx.instances.len()];
        let x = ctx.embedding(view);
        let themes: Vec<&themescope::Theme> = model.themes.iter().map(|id| ctx.theme(*id).unwrap()).collect();
        let sims = themescope::mapper::similarity_features(x, &themes).unwrap();
        let name = concept(pick % c.max(1));
        let best_for = |col: usize| {
            (0..2)
                .map(value)
                .max_by(|a, b| {
                    let wa = model.affinity_of(&name, a, model.themes[col]).unwrap();
                    let wb = model.affinity_of(&name, b, model.themes[col]).unwrap();
                    wa.total_cmp(&wb)
                })
                .unwrap()
        };
        let (ta, tb) = (0, 1);
        let score_with = |v: &str| {
            let mut observed = view.concepts.clone();
            observed.insert(name.clone(), v.to_string());
            model.scores(&sims, &model.resolve_concepts(&observed, x))
        };
        let from = score_with(&best_for(ta));
        let to = score_with(&best_for(tb));
        prop_assert!(to[ta] <= from[ta] + 1e-12);
        prop_assert!(to[tb] >= from[tb] - 1e-12);
        Ok(())
    })
}

pub fn purity_bounds(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 1usize..80, 1usize..5, 2usize..5), |(seed, n, themes, values)| {
        // total concept, every theme non-empty
        let mut r = rng(seed);
        let mut f = metric_fixture(seed);
        f.schema = schema(1, values);
        f.result.entries.truncate(n);
        let n = f.result.entries.len();
        for (i, e) in f.result.entries.iter_mut().enumerate() {
            e.theme = Some(themescope::ThemeId((i % themes) as u64));
            f.concepts.insert(e.id.clone(), BTreeMap::from([(concept(0), value(r.random_range(0..values)))]));
        }
        let p = concept_purity(&f.result, &f.schema, &f.concepts, &concept(0)).unwrap();
        prop_assert!(p.purity <= 100.0 + 1e-9);
        if n >= themes {
            prop_assert!(p.purity >= 100.0 / values as f64 - 1e-9);
        }
        if themes == 1 {
            prop_assert!((p.purity - 100.0 * p.themes[0].modal_count as f64 / n as f64).abs() < 1e-9);
        }
        Ok(())
    })
}

pub fn overlap_properties(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), any::<u64>()), |(a, b)| {
        let x = labelled_sets(&metric_fixture(a).result);
        let y = labelled_sets(&reshuffled(b, &metric_fixture(a).result));
        let m = overlap_matrix(&x, &y);
        let t = overlap_matrix(&y, &x);
        for (i, r) in m.rows.iter().enumerate() {
            for (j, col) in m.cols.iter().enumerate() {
                let v = m.values[i][j];
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v, t.get(col, r).unwrap());
            }
        }
        for s in x.values().filter(|s| !s.is_empty()) {
            prop_assert_eq!(overlap(s, s), 1.0);
        }
        Ok(())
    })
}

pub fn shift_properties(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), any::<u64>()), |(a, b)| {
        let prev = metric_fixture(a).result;
        let next = reshuffled(b, &prev);
        let s = shift_matrix(&prev, &next).unwrap();
        prop_assert!((s.total() - 100.0).abs() <= 1e-9);
        let same = shift_matrix(&prev, &prev).unwrap();
        for (i, l) in same.labels.iter().enumerate() {
            let marginal = prev.entries.iter().filter(|e| Label::from(e.theme) == *l).count();
            prop_assert!((same.values[i][i] - 100.0 * marginal as f64 / prev.total() as f64).abs() <= 1e-9);
            let off: f64 = (0..same.labels.len()).filter(|&j| j != i).map(|j| same.values[i][j]).sum();
            prop_assert_eq!(off, 0.0);
        }
        // row sums give the previous marginals, column sums the next ones
        for (i, l) in s.labels.iter().enumerate() {
            let row: usize = s.counts[i].iter().sum();
            let col: usize = s.counts.iter().map(|r| r[i]).sum();
            prop_assert_eq!(row, prev.entries.iter().filter(|e| Label::from(e.theme) == *l).count());
            prop_assert_eq!(col, next.entries.iter().filter(|e| Label::from(e.theme) == *l).count());
        }
        Ok(())
    })
}

pub fn partition_coverage(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 2usize..60, 2usize..6, 2usize..8), |(seed, n, k, min_size)| {
        let mut r = rng(seed);
        let vectors: Vec<(InstanceId, Vec<f32>)> = (0..n).map(|i| (id(i), unit(&mut r, 4))).collect();
        let index = EmbedIndex::from_vectors(4, &vectors).unwrap();
        let ids: Vec<InstanceId> = vectors.iter().map(|(i, _)| i.clone()).collect();
        let all: BTreeSet<&InstanceId> = ids.iter().collect();
        if n >= k {
            let run = SphericalKMeans::new(k).seed(seed).run(&index, &ids).unwrap();
            prop_assert_eq!(run.partitions.len(), k);
            let mut seen = BTreeSet::new();
            for p in &run.partitions {
                prop_assert!(!p.members.is_empty());
                let norm = p.centroid.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-6);
                for m in &p.members {
                    prop_assert!(seen.insert(m), "member in two partitions");
                }
            }
            prop_assert_eq!(seen, all.clone());
            for w in run.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "objective rose: {:?}", run.objective_trace);
            }
        }
        let density = density_partition(&index, &ids, min_size).unwrap();
        let mut seen = BTreeSet::new();
        for p in &density {
            for m in &p.members {
                prop_assert!(seen.insert(m));
            }
        }
        prop_assert_eq!(seen, all);
        prop_assert!(density.iter().filter(|p| p.noise).count() <= 1);
        Ok(())
    })
}

pub fn name_uniqueness(cases: u32) -> Result<(), String> {
    let op = (0u8..3, 0usize..5, 0usize..6);
    check(cases, prop::collection::vec(op, 1..40), |ops| {
        let mut store = store_of(schema(0, 2), Vec::new());
        let mut reg = ThemeRegistry::new();
        for (kind, name, target) in ops {
            let name = format!("name{name}");
            let ids = reg.ids();
            match kind {
                0 => {
                    let _ = reg.create_theme(&name, 1);
                }
                1 if !ids.is_empty() => {
                    let _ = reg.rename_theme(ids[target % ids.len()], &name);
                }
                _ if !ids.is_empty() => {
                    let _ = reg.delete_theme(ids[target % ids.len()], &mut store);
                }
                _ => {}
            }
            let names: Vec<String> = reg.themes().map(|t| t.name.clone()).collect();
            let unique: BTreeSet<&String> = names.iter().collect();
            prop_assert_eq!(unique.len(), names.len());
        }
        Ok(())
    })
}

pub fn audit_replay(cases: u32) -> Result<(), String> {
    let edit = (0usize..10, 0usize..3, 0usize..3);
    check(cases, (any::<u64>(), prop::collection::vec(edit, 0..30)), |(seed, edits)| {
        let mut r = rng(seed);
        let records: Vec<Record> = (0..10)
            .map(|i| {
                let mut concepts = BTreeMap::new();
                for c in 0..3 {
                    if r.random_bool(0.6) {
                        concepts.insert(concept(c), value(r.random_range(0..3)));
                    }
                }
                record(i, unit(&mut r, 3), concepts)
            })
            .collect();
        let original: BTreeMap<InstanceId, BTreeMap<String, String>> =
            records.iter().map(|rec| (rec.id.clone(), rec.concepts.clone())).collect();
        let mut store = store_of(schema(3, 3), records);
        for (i, c, v) in edits {
            store.upsert_concepts(&id(i), &BTreeMap::from([(concept(c), value(v))])).unwrap();
        }
        let mut replayed = original;
        for a in store.audits() {
            let current = replayed.get_mut(&a.instance).unwrap();
            prop_assert_eq!(current.get(&a.concept), a.old.as_ref());
            current.insert(a.concept.clone(), a.new.clone());
        }
        for inst in store.instances() {
            prop_assert_eq!(&replayed[&inst.id], &inst.concepts);
        }
        Ok(())
    })
}

pub fn ingest_idempotence(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 0usize..40), |(seed, n)| {
        let mut r = rng(seed);
        let records: Vec<Record> = (0..n)
            .map(|i| {
                let raw: Vec<f32> = gaussian(&mut r, 4).iter().map(|x| x * 3.0).collect();
                record(i, raw, BTreeMap::from([(concept(0), value(i % 2))]))
            })
            .collect();
        let mut store = CorpusStore::new(schema(1, 2)).unwrap();
        let first = store.ingest_records(records.clone(), IngestMode::DedupOnId).unwrap();
        let second = store.ingest_records(records, IngestMode::DedupOnId).unwrap();
        prop_assert_eq!(serde_json::to_vec(&first).unwrap(), serde_json::to_vec(&second).unwrap());
        for inst in store.instances() {
            let norm = inst.embedding.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
        }
        Ok(())
    })
}

pub fn delete_releases(cases: u32) -> Result<(), String> {
    check(cases, fixture_strategy(), |(seed, n, t, c)| {
        let mut f = mapper_fixture(seed, &MapperShape::small(n, t, c));
        let victim = f.themes.ids()[0];
        let held: BTreeSet<InstanceId> = f
            .store
            .instances()
            .iter()
            .filter(|i| i.assignment.theme() == Some(victim))
            .map(|i| i.id.clone())
            .collect();
        let released = f.themes.delete_theme(victim, &mut f.store).unwrap();
        prop_assert_eq!(released, held.len());
        let unassigned: BTreeSet<InstanceId> = f.store.unassigned_ids().into_iter().collect();
        prop_assert!(held.is_subset(&unassigned));
        prop_assert!(f.store.instances().iter().all(|i| i.assignment.theme() != Some(victim)));
        Ok(())
    })
}

/// The six suites required for acceptance, by name.
pub fn required() -> Vec<(&'static str, fn(u32) -> Result<(), String>)> {
    vec![
        ("threshold monotonicity", threshold_monotonicity),
        ("exclusivity", exclusivity),
        ("clamp dominance", clamp_dominance),
        ("centroid correctness", centroid_correctness),
        ("slice nesting", slice_nesting),
        ("determinism under fixed seeds", determinism),
    ]
}
