//! A persisted session directory: work is journaled as it happens, survives
//! a restart, and exports to a single file.

use themescope::benchmark::{add_planted_theme, BenchmarkConfig};
use themescope::session::{MappingRequest, ResultRef, Session};
use themescope::store::IngestMode;
use themescope::synth::generate;
use themescope::CorpusStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = BenchmarkConfig::default();
    let corpus = generate(&config.corpus);
    let dir = tempfile_dir()?;

    {
        let mut store = CorpusStore::new(corpus.schema.clone())?;
        store.ingest_records(corpus.records.clone(), IngestMode::Strict)?;
        let mut session = Session::create(&dir, config.session.clone(), store, None)?;
        println!("iteration {} with {} partitions", session.iteration(), session.partitions().len());
        for t in 0..3 {
            add_planted_theme(&mut session, &corpus, t, 3, 1)?;
        }
        let job = session.start_mapping(MappingRequest::default())?;
        while let Some(running) = session.running_job() {
            let status = session.job_status(running)?;
            println!("job {}: {}/{}", status.id, status.progress, status.total);
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
        let outcome = session.commit(job)?;
        println!("committed: {outcome:?}");
        // theme added after the commit, still only in the journal
        add_planted_theme(&mut session, &corpus, 3, 3, 1)?;
    }

    let mut session = Session::open(&dir, None)?;
    println!("reopened at iteration {} with {} themes", session.iteration(), session.themes().len());
    let metrics = session.metrics(ResultRef::Current)?;
    println!("coverage {:.1}%", metrics.coverage);

    let export = dir.join("export.json");
    session.export(&export)?;
    let imported = Session::import(&export, None)?;
    println!("import matches: {}", imported.snapshot() == session.snapshot());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("themescope-session-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
