//! Two scripted iterations over a planted corpus: four themes first, the
//! remaining two after the first commit.
//!
//!     cargo run --release --example synthetic_benchmark [spread] [seed]

use themescope::analytics::Label;
use themescope::benchmark::{run, BenchmarkConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut config = BenchmarkConfig::default();
    if let Some(s) = args.next() {
        config.corpus.spread = s.parse()?;
    }
    if let Some(s) = args.next() {
        config.corpus.seed = s.parse()?;
    }
    let started = std::time::Instant::now();
    let (session, out) = run(&config)?;

    let purity = |m: &themescope::session::MetricsSummary| m.avg_purity.unwrap_or(0.0);
    println!("iteration 1 (NeSy, tau {}): coverage {:.1}%  purity {:.2}", config.session.tau, out.first.coverage, purity(&out.first));
    println!("iteration 2 (NeSy, tau {}): coverage {:.1}%  purity {:.2}", config.session.tau, out.second.coverage, purity(&out.second));
    println!(
        "iteration 2 (NNs, tau {:.4}):  coverage {:.1}%  purity {:.2}",
        out.baseline_tau,
        out.baseline.coverage,
        purity(&out.baseline)
    );
    println!("purity gap NeSy - NNs: {:+.2}", out.purity_gap());
    println!();
    println!("shift iteration 1 -> 2 (% of corpus):");
    let name = |l: &Label| match l {
        Label::Theme(t) => session.theme(*t).map(|th| th.name.clone()).unwrap_or_else(|_| t.to_string()),
        Label::Unknown => "Unknown".into(),
    };
    print!("{:>12}", "");
    for l in &out.shift.labels {
        print!("{:>11}", name(l));
    }
    println!();
    for (l, row) in out.shift.labels.iter().zip(&out.shift.values) {
        print!("{:>12}", name(l));
        for v in row {
            print!("{v:>11.2}");
        }
        println!();
    }
    println!();
    println!("Unknown -> new themes: {:.2}% of {:.2}% entering them", out.unknown_to_new, out.into_new);
    println!("partitions after commit: {}", session.partitions().len());
    println!("elapsed: {:.2?}", started.elapsed());
    Ok(())
}
