//! Hand-worked and independently computed values.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use themescope::analytics::{
    concept_purity, coverage, evaluation_report, local_explanation, quartile_slices, shift_matrix, GoldLabel, Label,
    Slice,
};
use themescope::index::{theme_similarity, EmbedIndex};
use themescope::mapper::{
    generate_training_data, infer, learn_weights, nns_baseline, InferenceScope, InstanceMapping, LearnConfig,
    MappingContext, MappingMethod, MappingResult, DEFAULT_NEIGHBORS,
};
use themescope::partition::{density_partition, kmeans_partition, rank_members_scored, RankOrder};
use themescope::themes::ExemplarInput;
use themescope::{cosine, InstanceId, Partition, Polarity, ThemeId, ThemeRegistry};

use common::*;

fn mapping(entries: Vec<(usize, Option<u64>, f64)>) -> MappingResult {
    MappingResult {
        iteration: 1,
        method: MappingMethod::NeSy,
        tau: 0.5,
        entries: entries
            .into_iter()
            .map(|(i, t, sim)| InstanceMapping {
                id: id(i),
                theme: t.map(ThemeId),
                score: 0.9,
                centroid_similarity: t.map(|_| sim),
                clamped: false,
            })
            .collect(),
    }
}

#[test]
fn cosine_of_diagonal() {
    let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
    assert!((c - 0.7071067811865476).abs() < 1e-12, "{c}");
    assert!((cosine(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-7);
    assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
}

#[test]
fn theme_similarity_takes_row_max() {
    let s = 1.0 / 3f32.sqrt();
    let queries: [[f32; 3]; 5] = [[0.6, 0.8, 0.0], [0.0, 0.0, 1.0], [s, s, s], [-1.0, 0.0, 0.0], [0.6, 0.0, 0.8]];
    let mut records = vec![record(0, vec![1.0, 0.0, 0.0], BTreeMap::new())];
    records.extend(queries.iter().enumerate().map(|(i, q)| record(i + 1, q.to_vec(), BTreeMap::new())));
    let mut store = store_of(schema(0, 2), records);
    let mut themes = ThemeRegistry::new();
    let t = themes.create_theme("axes", 1).unwrap().id;
    themes.add_exemplar(&mut store, t, Polarity::Good, ExemplarInput::Instance { id: id(0) }, 1).unwrap();
    themes.add_explanatory_phrase(&store, t, "second axis", vec![0.0, 1.0, 0.0]).unwrap();
    themes.add_explanatory_phrase(&store, t, "third axis", vec![0.0, 0.0, 1.0]).unwrap();
    // rows: max over the three exemplar cosines
    let expected = [0.8, 1.0, 0.5773502691896258, 0.0, 0.8];
    let theme = themes.get(t).unwrap();
    for (i, want) in expected.iter().enumerate() {
        let got = theme_similarity(&store.get_instance(&id(i + 1)).unwrap().embedding, theme).unwrap();
        assert!((got - want).abs() < 1e-6, "row {i}: {got} vs {want}");
    }
}

fn blobs(seed: u64, sizes: &[usize], dim: usize, spread: f32) -> (EmbedIndex, Vec<InstanceId>, Vec<BTreeSet<InstanceId>>) {
    let mut r = rng(seed);
    let mut vectors = Vec::new();
    let mut groups = Vec::new();
    for (b, &size) in sizes.iter().enumerate() {
        let mut center = vec![0.0f32; dim];
        center[b] = 1.0;
        let mut group = BTreeSet::new();
        for _ in 0..size {
            let i = vectors.len();
            vectors.push((id(i), near(&mut r, &center, spread)));
            group.insert(id(i));
        }
        groups.push(group);
    }
    let ids = vectors.iter().map(|(i, _)| i.clone()).collect();
    (EmbedIndex::from_vectors(dim, &vectors).unwrap(), ids, groups)
}

#[test]
fn kmeans_recovers_planted_blobs() {
    let (index, ids, groups) = blobs(3, &[20, 20], 6, 0.1);
    for seed in 0..5 {
        let parts = kmeans_partition(&index, &ids, 2, seed).unwrap();
        let found: BTreeSet<BTreeSet<InstanceId>> =
            parts.iter().map(|p| p.members.iter().cloned().collect()).collect();
        assert_eq!(found, groups.iter().cloned().collect());
    }
}

#[test]
fn kmeans_with_k_equal_to_population_gives_singletons() {
    let (index, ids, _) = blobs(4, &[3, 2], 4, 0.3);
    let parts = kmeans_partition(&index, &ids, ids.len(), 1).unwrap();
    assert_eq!(parts.len(), 5);
    assert!(parts.iter().all(|p| p.len() == 1));
    assert!(kmeans_partition(&index, &ids[..1], 2, 1).is_err());
}

#[test]
fn density_clusters_leave_outliers_as_noise() {
    let (index, _, groups) = blobs(5, &[30, 30, 1, 1, 1, 1, 1], 8, 0.05);
    let ids: Vec<InstanceId> = (0..65).map(id).collect();
    let outliers: BTreeSet<InstanceId> = (60..65).map(id).collect();
    let parts = density_partition(&index, &ids, 5).unwrap();
    let clusters: BTreeSet<BTreeSet<InstanceId>> =
        parts.iter().filter(|p| !p.noise).map(|p| p.members.iter().cloned().collect()).collect();
    assert_eq!(clusters, groups[..2].iter().cloned().collect());
    let noise: BTreeSet<InstanceId> = parts.iter().filter(|p| p.noise).flat_map(|p| p.members.clone()).collect();
    assert!(outliers.is_subset(&noise));
}

#[test]
fn density_on_identical_points_and_single_instance() {
    let same: Vec<(InstanceId, Vec<f32>)> = (0..10).map(|i| (id(i), vec![0.0, 1.0, 0.0])).collect();
    let index = EmbedIndex::from_vectors(3, &same).unwrap();
    let ids: Vec<InstanceId> = same.iter().map(|(i, _)| i.clone()).collect();
    let parts = density_partition(&index, &ids, 5).unwrap();
    let covered: usize = parts.iter().map(Partition::len).sum();
    assert_eq!(covered, 10);
    assert_eq!(parts.len(), 1);

    let one = density_partition(&index, &ids[..1], 5).unwrap();
    assert_eq!(one.len(), 1);
    assert!(one[0].noise);
    assert!(density_partition(&index, &ids, 1).is_err());
}

#[test]
fn member_ranking_matches_sorted_cosines() {
    let mut r = rng(9);
    let mut vectors: Vec<(InstanceId, Vec<f32>)> = (0..50).map(|i| (id(i), unit(&mut r, 5))).collect();
    // duplicates force ties
    for i in [10, 20, 30] {
        vectors[i + 1].1 = vectors[i].1.clone();
    }
    let index = EmbedIndex::from_vectors(5, &vectors).unwrap();
    let centroid = unit(&mut r, 5);
    let partition = Partition {
        id: 0,
        members: vectors.iter().map(|(i, _)| i.clone()).collect(),
        centroid: centroid.clone(),
        cohesion: 0.0,
        noise: false,
    };
    let mut oracle: Vec<(f64, InstanceId)> =
        vectors.iter().map(|(i, _)| (dot64(index.vector_of(i).unwrap(), &centroid), i.clone())).collect();
    oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let closest = rank_members_scored(&partition, &index, RankOrder::ClosestFirst).unwrap();
    assert_eq!(closest.iter().map(|c| &c.0).collect::<Vec<_>>(), oracle.iter().map(|o| &o.1).collect::<Vec<_>>());
    oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let farthest = rank_members_scored(&partition, &index, RankOrder::FarthestFirst).unwrap();
    assert_eq!(farthest.iter().map(|c| &c.0).collect::<Vec<_>>(), oracle.iter().map(|o| &o.1).collect::<Vec<_>>());
}

#[test]
fn six_by_two_by_one_matches_enumeration() {
    for seed in 0..30 {
        let f = mapper_fixture(seed, &MapperShape::small(6, 2, 1));
        let ctx = f.context();
        let model = learned_model(&f, 3, 0.5).unwrap_or_else(|| random_model(&mut rng(seed), &ctx, 0.5));
        let got: Vec<_> = infer(&model, &ctx, InferenceScope::Full).unwrap().entries.iter().map(|e| e.theme).collect();
        assert_eq!(got, enumerate_map(&model, &ctx), "seed {seed}");
    }
}

/// Two themes on orthogonal axes; concept value v0 only in theme 0, v1 only in theme 1.
fn separable() -> (MapperFixture, Vec<ThemeId>) {
    let mut r = rng(21);
    let centers = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
    let records = (0..40)
        .map(|i| {
            let t = i % 2;
            record(i, near(&mut r, &centers[t], 0.3), BTreeMap::from([(concept(0), value(t))]))
        })
        .collect();
    let mut store = store_of(schema(1, 2), records);
    let mut themes = ThemeRegistry::new();
    let mut ids = Vec::new();
    for t in 0..2 {
        let tid = themes.create_theme(&format!("axis {t}"), 1).unwrap().id;
        for g in [t, t + 2] {
            themes.add_exemplar(&mut store, tid, Polarity::Good, ExemplarInput::Instance { id: id(g) }, 1).unwrap();
        }
        themes
            .add_exemplar(&mut store, tid, Polarity::Bad, ExemplarInput::Instance { id: id(5 - t) }, 1)
            .unwrap();
        ids.push(tid);
    }
    (MapperFixture { store, themes, centers }, ids)
}

#[test]
fn learned_affinity_prefers_the_theme_value() {
    let (f, ids) = separable();
    let data = generate_training_data(&f.context(), 8, 1).unwrap();
    let model = learn_weights(&data, f.store.schema(), &LearnConfig::default()).unwrap();
    for (t, &tid) in ids.iter().enumerate() {
        let own = model.affinity_of(&concept(0), &value(t), tid).unwrap();
        let other = model.affinity_of(&concept(0), &value(1 - t), tid).unwrap();
        assert!(own > other, "theme {t}: {own} <= {other}");
    }
}

#[test]
fn duplicated_training_rows_change_nothing() {
    let (f, _) = separable();
    let ctx = f.context();
    let data = generate_training_data(&ctx, 8, 1).unwrap();
    let mut doubled = data.clone();
    doubled.rows.extend(data.rows.clone());
    let a = learn_weights(&data, f.store.schema(), &LearnConfig::default()).unwrap();
    let b = learn_weights(&doubled, f.store.schema(), &LearnConfig::default()).unwrap();
    let themes = |m| infer(m, &ctx, InferenceScope::Full).unwrap().entries.into_iter().map(|e| e.theme).collect::<Vec<_>>();
    assert_eq!(themes(&a), themes(&b));
}

#[test]
fn single_theme_without_concepts_equals_baseline() {
    for seed in 0..20 {
        let f = mapper_fixture(seed, &MapperShape { bads: false, ..MapperShape::small(25, 1, 0) });
        let ctx = f.context();
        for tau in [0.05, 0.3, 0.5, 0.8, 0.95] {
            let model = random_model(&mut rng(seed), &ctx, tau);
            let nesy: Vec<_> = infer(&model, &ctx, InferenceScope::Full).unwrap().entries.iter().map(|e| e.theme).collect();
            let nns: Vec<_> = nns_baseline(&ctx, tau, 1).unwrap().entries.iter().map(|e| e.theme).collect();
            assert_eq!(nesy, nns, "seed {seed} tau {tau}");
        }
    }
}

#[test]
fn purity_by_hand() {
    // theme 0: x x x x y, theme 1: y y y y x -> (4 + 4) / 10
    let values = ["x", "x", "x", "x", "y", "y", "y", "y", "y", "x"];
    let result = mapping((0..10).map(|i| (i, Some((i / 5) as u64), 0.5)).collect());
    let s = themescope::ConceptSchema::new().with_concept("c", ["x", "y"]);
    let concepts: BTreeMap<InstanceId, BTreeMap<String, String>> =
        (0..10).map(|i| (id(i), BTreeMap::from([("c".to_string(), values[i].to_string())]))).collect();
    assert_eq!(concept_purity(&result, &s, &concepts, "c").unwrap().purity, 80.0);

    // one theme of four, a single member carries a value
    let result = mapping((0..6).map(|i| (i, (i < 4).then_some(0), 0.5)).collect());
    let concepts: BTreeMap<InstanceId, BTreeMap<String, String>> = (0..6)
        .map(|i| {
            let cs = if i == 0 || i == 5 { BTreeMap::from([("c".to_string(), "x".to_string())]) } else { BTreeMap::new() };
            (id(i), cs)
        })
        .collect();
    let p = concept_purity(&result, &s, &concepts, "c").unwrap();
    assert_eq!(p.n, 4);
    assert_eq!(p.purity, 25.0);
}

#[test]
fn coverage_and_quartiles_by_hand() {
    let result = mapping((0..1000).map(|i| (i, (i < 543).then_some(1), 1.0 - i as f64 / 1000.0)).collect());
    assert!((coverage(&result).unwrap() - 54.3).abs() < 1e-9);
    // 8 mapped with distinct similarities: Q1 is the top 2
    let result = mapping((0..8).map(|i| (i, Some(0), 0.9 - 0.1 * i as f64)).collect());
    let q = quartile_slices(&result).unwrap();
    assert_eq!(q.members(Slice::Q1), BTreeSet::from([id(0), id(1)]));
    assert_eq!(q.size(Slice::Q1) as f64 / q.size(Slice::All) as f64, 0.25);
    assert_eq!(q.size(Slice::Q2), 4);
    assert_eq!(q.size(Slice::Q3), 6);
}

#[test]
fn shift_matrix_by_hand() {
    // 8 in theme 1, 4 in theme 2, 8 unknown before
    let prev: Vec<Option<u64>> =
        (0..20).map(|i| if i < 8 { Some(1) } else if i < 12 { Some(2) } else { None }).collect();
    let next: Vec<Option<u64>> = (0..20)
        .map(|i| match i {
            0..=5 => Some(1),
            6..=7 => None,
            8..=11 => Some(2),
            12..=14 => Some(1),
            15..=16 => Some(3),
            _ => None,
        })
        .collect();
    let a = mapping(prev.iter().enumerate().map(|(i, &t)| (i, t, 0.5)).collect());
    let b = mapping(next.iter().enumerate().map(|(i, &t)| (i, t, 0.5)).collect());
    let s = shift_matrix(&a, &b).unwrap();
    let t = |x| Label::Theme(ThemeId(x));
    assert_eq!(s.labels, vec![t(1), t(2), t(3), Label::Unknown]);
    let expected = [
        (t(1), t(1), 30.0),
        (t(1), Label::Unknown, 10.0),
        (t(2), t(2), 20.0),
        (Label::Unknown, t(1), 15.0),
        (Label::Unknown, t(3), 10.0),
        (Label::Unknown, Label::Unknown, 15.0),
    ];
    for from in &s.labels {
        for to in &s.labels {
            let want = expected.iter().find(|e| e.0 == *from && e.1 == *to).map_or(0.0, |e| e.2);
            assert_eq!(s.get(*from, *to), Some(want), "{from} -> {to}");
        }
    }
    assert_eq!(s.total(), 100.0);
}

#[test]
fn f1_over_thirty_judgments() {
    // 30 mapped over themes 1..3; 21 judged correct, 6 Other, 3 the wrong theme
    let result = mapping((0..30).map(|i| (i, Some((i % 3) as u64 + 1), 1.0 - i as f64 / 100.0)).collect());
    let gold: BTreeMap<InstanceId, GoldLabel> = (0..30)
        .map(|i| {
            let predicted = (i % 3) as u64 + 1;
            let label = match i {
                0..=20 => GoldLabel::Theme(ThemeId(predicted)),
                21..=26 => GoldLabel::Other,
                _ => GoldLabel::Theme(ThemeId(predicted % 3 + 1)),
            };
            (id(i), label)
        })
        .collect();
    let q = quartile_slices(&result).unwrap();
    let report = evaluation_report(&result, &q, &gold).unwrap();
    let all = report.slice(Slice::All);
    assert_eq!(all.support, 30);
    assert!((all.micro_f1.unwrap() - 70.0).abs() < 1e-9);

    // macro oracle: per-label tp/fp/fn over themes 1..3 and Other
    let mut tally: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new();
    for e in &result.entries {
        let p = e.theme.unwrap().to_string();
        let g = gold[&e.id].to_string();
        if p == g {
            tally.entry(p).or_default().0 += 1.0;
        } else {
            tally.entry(p).or_default().1 += 1.0;
            tally.entry(g).or_default().2 += 1.0;
        }
    }
    let macro_f1 = 100.0 * tally.values().map(|(tp, fp, fn_)| 2.0 * tp / (2.0 * tp + fp + fn_)).sum::<f64>()
        / tally.len() as f64;
    assert!((all.macro_f1.unwrap() - macro_f1).abs() < 1e-9);

    // Q1 holds the 8 most similar, all judged correct
    let q1 = report.slice(Slice::Q1);
    assert_eq!(q1.support, 8);
    assert_eq!(q1.micro_f1, Some(100.0));
}

#[test]
fn concept_histogram_counts() {
    let values = [Some("v0"), Some("v0"), Some("v1"), None, Some("v0")];
    let records = (0..5)
        .map(|i| {
            let cs = values[i].map(|v| (concept(0), v.to_string())).into_iter().collect();
            record(i, unit(&mut rng(i as u64), 3), cs)
        })
        .collect();
    let mut store = store_of(schema(1, 2), records);
    let mut themes = ThemeRegistry::new();
    let t = themes.create_theme("all", 1).unwrap().id;
    themes.add_exemplar(&mut store, t, Polarity::Good, ExemplarInput::Instance { id: id(0) }, 1).unwrap();
    let members: BTreeSet<InstanceId> = (0..5).map(id).collect();
    let e = local_explanation(&store, themes.get(t).unwrap(), &members, &BTreeSet::new(), 10, 2);
    assert_eq!(e.members, 5);
    let h = &e.concepts[0];
    assert_eq!(h.counts, BTreeMap::from([("v0".to_string(), 3), ("v1".to_string(), 1)]));
    assert_eq!(h.percent["v0"], 60.0);
    assert_eq!(h.percent["v1"], 20.0);
    assert_eq!(h.missing, 1);
    let tok = e.tokens.iter().find(|t| t.token == "instance").unwrap();
    assert_eq!((tok.count, tok.doc_freq), (5, 5));
    assert_eq!(e.top.len(), 2);
    assert_eq!(e.top[0].0, id(0));
}

#[test]
fn one_exemplar_over_five_instances_gives_five_positives() {
    let mut r = rng(2);
    let records = (0..5).map(|i| record(i, unit(&mut r, 4), BTreeMap::new())).collect();
    let mut store = store_of(schema(0, 2), records);
    let mut themes = ThemeRegistry::new();
    let t = themes.create_theme("only", 1).unwrap().id;
    themes.add_exemplar(&mut store, t, Polarity::Good, ExemplarInput::Instance { id: id(3) }, 1).unwrap();
    let ctx = MappingContext::from_store(&store, &themes, 1).unwrap();
    let data = generate_training_data(&ctx, DEFAULT_NEIGHBORS, 0).unwrap();
    assert_eq!(data.rows.len(), 5);
    assert_eq!(data.positives(), 5);
    assert_eq!(data.negatives(), 0);
}
