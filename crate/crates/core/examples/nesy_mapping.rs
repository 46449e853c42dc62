//! The mapper pipeline without a session: training data from exemplar
//! neighbourhoods, rule-weight learning, inference, and the similarity-only
//! baseline for comparison.

use themescope::analytics::{avg_concept_purity, coverage};
use themescope::mapper::{
    generate_training_data, infer, learn_weights, nns_baseline, InferenceScope, LearnConfig, MappingContext,
};
use themescope::store::IngestMode;
use themescope::synth::{generate, SynthConfig};
use themescope::themes::ExemplarInput;
use themescope::{CorpusStore, Polarity, ThemeRegistry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SynthConfig::default());
    let mut store = CorpusStore::new(corpus.schema.clone())?;
    store.ingest_records(corpus.records.clone(), IngestMode::Strict)?;
    let mut themes = ThemeRegistry::new();
    for t in 0..corpus.config.themes {
        let id = themes.create_theme(&format!("theme-{t}"), 1)?.id;
        for r in corpus.ranked_members(t).into_iter().take(3) {
            themes.add_exemplar(&mut store, id, Polarity::Good, ExemplarInput::Instance { id: r.id.clone() }, 1)?;
        }
    }

    let ctx = MappingContext::from_store(&store, &themes, 1)?;
    let data = generate_training_data(&ctx, 100, 7)?;
    println!("training rows: {} positive, {} negative", data.positives(), data.negatives());
    let model = learn_weights(&data, store.schema(), &LearnConfig::default())?;
    for (v, (concept, value)) in model.concept_values.iter().enumerate() {
        let row: Vec<String> = model.affinity[v].iter().map(|w| format!("{w:+.2}")).collect();
        println!("  affinity {concept}={value}: {}", row.join(" "));
    }

    let nesy = infer(&model, &ctx, InferenceScope::Full)?;
    let schema = store.schema();
    println!("NeSy: coverage {:.1}%, avg purity {:.2}", coverage(&nesy)?, avg_concept_purity(&nesy, schema, &store)?);

    for tau in [0.3, 0.5, 0.7] {
        let nns = nns_baseline(&ctx, tau, 1)?;
        println!("NNs tau {tau}: coverage {:.1}%, avg purity {:.2}", coverage(&nns)?, avg_concept_purity(&nns, schema, &store)?);
    }

    let path = std::env::temp_dir().join("themescope-model.json");
    model.save(&path)?;
    println!("model written to {}", path.display());
    Ok(())
}
