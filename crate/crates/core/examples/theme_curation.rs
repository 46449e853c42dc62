//! Theme interventions: create, add good/bad exemplars and phrases, annotate
//! exemplar concepts, remove, rename, delete.

use std::collections::BTreeMap;

use themescope::index::{theme_similarity, HashingEmbedder};
use themescope::session::{ExemplarRef, Session};
use themescope::store::IngestMode;
use themescope::synth::{generate, SynthConfig};
use themescope::themes::ExemplarSource;
use themescope::{CorpusStore, Polarity, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SynthConfig { per_theme: 30, background: 30, ..SynthConfig::default() });
    let mut store = CorpusStore::new(corpus.schema.clone())?;
    store.ingest_records(corpus.records.clone(), IngestMode::Strict)?;
    let embedder = HashingEmbedder::new(corpus.config.dim);
    let mut session = Session::new(SessionConfig::default(), store, Some(Box::new(embedder)))?;

    let theme = session.create_theme("GotTheVax")?;
    let members = corpus.ranked_members(0);
    for r in members.iter().take(2) {
        session.add_exemplar(theme.id, Polarity::Good, ExemplarRef::Instance { id: r.id.clone() })?;
    }
    let outsider = corpus.ranked_members(1)[0].id.clone();
    session.add_exemplar(theme.id, Polarity::Bad, ExemplarRef::Instance { id: outsider.clone() })?;
    session.add_phrase(theme.id, "finally got the shot", Some(corpus.centers[0].clone()))?;

    let t = session.theme(theme.id)?.clone();
    println!("{}: {} good, {} bad, {} phrases", t.name, t.good_examples.len(), t.bad_examples.len(), t.explanatory_phrases.len());
    let probe = session.instance(&members[5].id)?.embedding.clone();
    println!("similarity of a member: {:.3}", theme_similarity(&probe, &t)?);
    println!("good exemplar is assigned: {:?}", session.instance(&members[0].id)?.assignment);

    // the same instance cannot be good and bad at once
    let clash = session.add_exemplar(theme.id, Polarity::Good, ExemplarRef::Instance { id: outsider.clone() });
    println!("conflict: {}", clash.unwrap_err());

    let source = ExemplarSource::Instance(members[0].id.clone());
    let concepts = BTreeMap::from([("concept0".to_string(), corpus.preferred[0][0].clone())]);
    session.set_exemplar_concepts(theme.id, source, concepts)?;
    println!("annotated exemplar concepts: {:?}", session.instance(&members[0].id)?.concepts);

    session.remove_exemplar(theme.id, ExemplarSource::Instance(outsider))?;
    session.rename_theme(theme.id, "Got the vax")?;
    let released = session.delete_theme(theme.id)?;
    println!("deleted theme released {released} instances; unassigned now {}", session.unassigned_ids().len());
    Ok(())
}
