//! Ingests line-delimited records, embeds the ones without vectors and prints
//! corpus statistics. A schema violation is rejected with the record number.

use std::collections::BTreeMap;

use themescope::index::HashingEmbedder;
use themescope::store::IngestMode;
use themescope::{ConceptSchema, CorpusStore};

const CORPUS: &str = r#"{"id":"t1","text":"Got my second shot today, arm is sore but worth it","concepts":{"stance":"pro"}}
{"id":"t2","text":"Natural immunity works better than any vaccine","concepts":{"stance":"anti"}}
{"id":"t3","text":"Clinic opens Monday for boosters","concepts":{"stance":"neutral"},"meta":{"region":"midwest"}}
{"id":"t4","text":"Mandates are government overreach","concepts":{"stance":"anti","frame":"liberty"}}
{"id":"t5","text":"Protect the vulnerable, get vaccinated","concepts":{"stance":"pro","frame":"care"}}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = ConceptSchema::new()
        .with_concept("stance", ["pro", "anti", "neutral"])
        .with_concept("frame", ["care", "liberty", "fairness"]);

    let mut store = CorpusStore::new(schema.clone())?;
    store.ingest(CORPUS.as_bytes(), IngestMode::Strict)?;
    println!("pending embeddings: {}", store.pending_ids().len());
    store.resolve_pending(&HashingEmbedder::new(64))?;
    let stats = store.stats();
    println!("{}", serde_json::to_string_pretty(&stats)?);

    // ingesting the same lines again with dedup leaves the stats untouched
    store.ingest(CORPUS.as_bytes(), IngestMode::DedupOnId)?;
    assert_eq!(store.stats(), stats);

    store.upsert_concepts("t3", &BTreeMap::from([("stance".to_string(), "pro".to_string())]))?;
    println!("audit trail: {:?}", store.audits());

    let bad = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\",\"concepts\":{\"stance\":\"maybe\"}}\n";
    let mut fresh = CorpusStore::new(schema)?;
    match fresh.ingest(bad.as_bytes(), IngestMode::Strict) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("schema violation must be rejected"),
    }
    Ok(())
}
