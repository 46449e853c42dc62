//! Nearest-neighbour and free-text queries against a hashed-token embedder.

use themescope::index::{cosine, HashingEmbedder};
use themescope::session::Session;
use themescope::store::IngestMode;
use themescope::synth::{generate, SynthConfig};
use themescope::{CorpusStore, NeighborFilter, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SynthConfig { per_theme: 40, background: 60, ..SynthConfig::default() });
    // drop the planted vectors so the session embeds the texts itself
    let records = corpus.records.iter().cloned().map(|mut r| {
        r.embedding = None;
        r
    });
    let mut store = CorpusStore::new(corpus.schema.clone())?;
    store.ingest_records(records.collect(), IngestMode::Strict)?;
    let session = Session::new(SessionConfig::default(), store, Some(Box::new(HashingEmbedder::new(128))))?;
    println!("embedded {} texts", session.embedder_calls());

    let probe = &corpus.records[0];
    println!("neighbours of {} ({:?}):", probe.id, probe.text);
    for hit in session.neighbors_of(&probe.id, 5, NeighborFilter::All)? {
        let text = &session.instance(&hit.id)?.text;
        println!("  {:.3}  {}  {}", hit.similarity, hit.id, text);
    }

    let query = "topic2word1 topic2word5 topic2word3";
    println!("query {query:?}:");
    for hit in session.query_text(query, 5, NeighborFilter::Unassigned)? {
        println!("  {:.3}  {}  {}", hit.similarity, hit.id, session.instance(&hit.id)?.text);
    }
    let before = session.embedder_calls();
    session.query_text(query, 5, NeighborFilter::Unassigned)?;
    println!("repeat query served from cache: {}", session.embedder_calls() == before);

    println!("cosine((1,1),(1,0)) = {:.4}", cosine(&[1.0, 1.0], &[1.0, 0.0])?);
    Ok(())
}
