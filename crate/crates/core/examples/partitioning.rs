//! Spherical k-means and density-based partitions of a planted corpus, with
//! members ranked by closeness to their centroid.

use themescope::partition::{balance, density_partition, kmeans_partition, rank_members_scored, RankOrder};
use themescope::store::IngestMode;
use themescope::synth::{generate, SynthConfig};
use themescope::CorpusStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SynthConfig { themes: 4, per_theme: 80, background: 40, ..SynthConfig::default() });
    let mut store = CorpusStore::new(corpus.schema.clone())?;
    store.ingest_records(corpus.records.clone(), IngestMode::Strict)?;
    let index = store.index();
    let ids = store.unassigned_ids();

    let parts = kmeans_partition(&index, &ids, 4, 17)?;
    println!("k-means, k=4:");
    for p in &parts {
        let planted = p.members.iter().filter_map(|id| corpus.truth[id]).fold([0usize; 4], |mut acc, t| {
            acc[t] += 1;
            acc
        });
        println!("  partition {}: {} members, cohesion {:.3}, planted counts {:?}", p.id, p.len(), p.cohesion, planted);
    }
    println!("  balance: {:?}", balance(&parts));

    let top = rank_members_scored(&parts[0], &index, RankOrder::ClosestFirst)?;
    println!("closest to centroid of partition 0:");
    for (id, sim) in top.iter().take(3) {
        println!("  {sim:.3}  {id}  {}", store.get_instance(id)?.text);
    }

    println!("density-based, min_cluster_size=15:");
    for p in density_partition(&index, &ids, 15)? {
        let background = p.members.iter().filter(|id| corpus.truth[*id].is_none()).count();
        let tag = if p.noise { " (noise)" } else { "" };
        println!("  partition {}{tag}: {} members, {} background", p.id, p.len(), background);
    }
    Ok(())
}
