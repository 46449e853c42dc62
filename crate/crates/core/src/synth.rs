//! Planted corpora: themes as embedding blobs with theme-correlated concepts.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::index::normalize;
use crate::store::{ConceptSchema, InstanceId, Record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub themes: usize,
    pub per_theme: usize,
    /// Instances belonging to no theme, drawn uniformly on the sphere.
    pub background: usize,
    /// Per-coordinate standard deviation of the blob noise before normalization.
    pub spread: f32,
    pub concepts: usize,
    pub values_per_concept: usize,
    /// Probability that a theme member carries its theme's preferred value.
    pub concept_correlation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            themes: 6,
            per_theme: 150,
            background: 300,
            spread: 0.22,
            concepts: 2,
            values_per_concept: 3,
            concept_correlation: 0.8,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub schema: ConceptSchema,
    pub records: Vec<Record>,
    /// Planted theme index per instance; `None` for background.
    pub truth: BTreeMap<InstanceId, Option<usize>>,
    pub centers: Vec<Vec<f32>>,
    /// `preferred[theme][concept]` value name.
    pub preferred: Vec<Vec<String>>,
}

impl SynthCorpus {
    pub fn members_of(&self, theme: usize) -> Vec<&Record> {
        self.records.iter().filter(|r| self.truth[&r.id] == Some(theme)).collect()
    }

    /// Members of `theme` ordered by closeness to its center, closest first.
    pub fn ranked_members(&self, theme: usize) -> Vec<&Record> {
        let c = &self.centers[theme];
        let mut m = self.members_of(theme);
        let sim = |r: &Record| crate::index::dot(r.embedding.as_deref().expect("inline"), c);
        m.sort_by(|a, b| sim(b).total_cmp(&sim(a)).then_with(|| a.id.cmp(&b.id)));
        m
    }

    /// The corpus as JSON lines, ready for ingestion.
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
    }
}

pub fn concept_name(c: usize) -> String {
    format!("concept{c}")
}

pub fn value_name(v: usize) -> String {
    format!("v{v}")
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let g: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Some(u) = normalize(&g) {
            return u;
        }
    }
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let values: Vec<String> = (0..config.values_per_concept).map(value_name).collect();
    let mut schema = ConceptSchema::new();
    for c in 0..config.concepts {
        schema = schema.with_concept(&concept_name(c), values.iter().cloned());
    }
    let centers: Vec<Vec<f32>> = (0..config.themes).map(|_| gaussian_unit(&mut rng, config.dim)).collect();
    let preferred: Vec<Vec<String>> = (0..config.themes)
        .map(|t| {
            let m = config.values_per_concept;
            (0..config.concepts).map(|c| value_name((t + c * (t / m)) % m)).collect()
        })
        .collect();
    let vocab = |t: usize| -> Vec<String> { (0..8).map(|w| format!("topic{t}word{w}")).collect() };
    let common = ["people", "today", "news", "think", "said", "time", "world", "new"];

    let mut records = Vec::new();
    let mut truth = BTreeMap::new();
    let total = config.themes * config.per_theme + config.background;
    let width = total.to_string().len();
    let mut order: Vec<Option<usize>> = (0..config.themes)
        .flat_map(|t| std::iter::repeat_n(Some(t), config.per_theme))
        .chain(std::iter::repeat_n(None, config.background))
        .collect();
    // interleave so ids carry no information about the planted theme
    order.shuffle(&mut rng);
    for (i, planted) in order.into_iter().enumerate() {
        let id = format!("doc{i:0width$}");
        let embedding = match planted {
            Some(t) => {
                let noisy: Vec<f32> = centers[t]
                    .iter()
                    .map(|&x| {
                        let g: f32 = StandardNormal.sample(&mut rng);
                        x + config.spread * g
                    })
                    .collect();
                normalize(&noisy).unwrap_or_else(|| centers[t].clone())
            }
            None => gaussian_unit(&mut rng, config.dim),
        };
        let mut concepts = BTreeMap::new();
        for c in 0..config.concepts {
            let value = match planted {
                Some(t) if rng.random::<f64>() < config.concept_correlation => preferred[t][c].clone(),
                Some(t) => {
                    let others: Vec<&String> = values.iter().filter(|v| **v != preferred[t][c]).collect();
                    (*others.choose(&mut rng).expect("at least two values")).clone()
                }
                None => values.choose(&mut rng).expect("values").clone(),
            };
            concepts.insert(concept_name(c), value);
        }
        let mut words: Vec<String> = Vec::new();
        for _ in 0..6 {
            match planted {
                Some(t) if rng.random::<f64>() < 0.7 => words.push(vocab(t).choose(&mut rng).expect("vocab").clone()),
                _ => words.push(common.choose(&mut rng).expect("common").to_string()),
            }
        }
        let text = words.join(" ");
        truth.insert(id.clone(), planted);
        records.push(Record { id, text, concepts, embedding: Some(embedding), source_meta: BTreeMap::new() });
    }
    SynthCorpus { config: config.clone(), schema, records, truth, centers, preferred }
}
