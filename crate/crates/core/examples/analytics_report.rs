//! Every analytics lens on a committed mapping: coverage, purity, quartile
//! slices, evaluation against (simulated) expert judgments, overlap with
//! external clusters, explanations, and a report directory.

use std::collections::{BTreeMap, BTreeSet};

use themescope::analytics::{F1Average, GoldLabel, Slice};
use themescope::benchmark::{add_planted_theme, prepare, BenchmarkConfig};
use themescope::report::{write_report, ReportBundle};
use themescope::session::{MappingRequest, ResultRef};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = BenchmarkConfig::default();
    let (mut session, corpus) = prepare(&config)?;
    let mut planted = BTreeMap::new();
    for t in 0..corpus.config.themes {
        planted.insert(add_planted_theme(&mut session, &corpus, t, 3, 1)?, t);
    }
    let job = session.run_mapping(MappingRequest::default())?;
    session.commit(job)?;

    let metrics = session.metrics(ResultRef::Iteration(1))?;
    println!("coverage {:.1}%  avg purity {:.2}", metrics.coverage, metrics.avg_purity.unwrap_or(0.0));
    for p in &metrics.purity {
        println!("  purity[{}] = {:.2} over {} mapped", p.concept, p.purity, p.n);
    }

    // judgments for a stratified sample, answered from the planted truth
    let sample = session.evaluation_sample(ResultRef::Iteration(1), 200, 3)?;
    let gold: BTreeMap<_, _> = sample
        .into_iter()
        .map(|id| {
            let label = corpus.truth[&id]
                .and_then(|t| planted.iter().find(|(_, &p)| p == t).map(|(&th, _)| GoldLabel::Theme(th)))
                .unwrap_or(GoldLabel::Other);
            (id, label)
        })
        .collect();
    let eval = session.evaluation(ResultRef::Iteration(1), &gold)?;
    for s in Slice::ALL {
        let score = eval.slice(s);
        let f = |a| score.f1(a).map_or("-".to_string(), |v| format!("{v:.1}"));
        println!("  {s}: support {:>3}  micro-F1 {}  macro-F1 {}", score.support, f(F1Average::Micro), f(F1Average::Macro));
    }

    // overlap with the planted grouping standing in for external topics
    let mut topics: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (id, t) in &corpus.truth {
        if let Some(t) = t {
            topics.entry(format!("topic{t}")).or_default().insert(id.clone());
        }
    }
    let overlap = session.overlap_with(ResultRef::Iteration(1), &topics)?;

    let first = *planted.keys().next().expect("themes exist");
    let explanation = session.local_explanation(first, 5, 3)?;
    println!("theme {first}: top tokens {:?}", explanation.tokens.iter().map(|t| &t.token).collect::<Vec<_>>());
    let global = session.global_state(Some(200));
    println!("global: {} projected points, balance {:?}", global.projection.len(), global.balance);

    let shift = session.shift(ResultRef::Initial, ResultRef::Iteration(1))?;
    let dir = std::env::temp_dir().join("themescope-report");
    let names = session.themes().themes().map(|t| (t.id, t.name.clone())).collect();
    let bundle = ReportBundle {
        metrics: Some(&metrics),
        shift: Some(&shift),
        overlap: Some(&overlap),
        evaluation: Some(&eval),
        theme_names: names,
    };
    let manifest = write_report(&dir, &bundle)?;
    println!("report in {}: {:?}", dir.display(), manifest.files.iter().map(|f| &f.name).collect::<Vec<_>>());
    Ok(())
}
