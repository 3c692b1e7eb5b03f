//! Collaborative vs local vs centralized training on a synthetic benchmark.
//!
//! Builds a shared rel store, trains all three regimes with the same budget,
//! and prints per-round averages plus the final comparison.
//!
//! Run: `cargo run --release --example train_federated`

use corag::benchmark::{build_variant, partition_qa, BenchmarkSpec, StoreFractions, Variant};
use corag::federation::{run, Mode, RoundConfig, Session};
use corag::index::{Bm25Index, Bm25Params};
use corag::synth::{generate, SynthSpec};
use corag::taxonomy::{categorize_all, RankWindow};
use corag::Corpus;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 42;
    let (passages, qas) = generate(&SynthSpec {
        passages: 5000,
        qa: 400,
        clients: 8,
        seed,
        distractors: 8,
        ..Default::default()
    })?;
    let corpus = Corpus::from_passages(passages)?;
    println!("corpus: {} passages, {} qa pairs", corpus.len(), qas.len());

    let arcs: Vec<Arc<corag::Passage>> = corpus.iter().cloned().collect();
    let index = Bm25Index::build(&arcs, Bm25Params::default())?;
    let spec = BenchmarkSpec {
        clients: 8,
        shots: 16,
        seed,
        fractions: StoreFractions { train_wiki: 0.7, split_wiki: 0.1, test_wiki: 0.005 },
        ..Default::default()
    };
    let partition = partition_qa(&qas, &spec)?;
    let taxonomy = categorize_all(&qas, &index, &corpus, RankWindow::default());
    let assignment = build_variant(Variant::Rel, &taxonomy, &partition, &corpus, &spec)?;

    let mut reports = Vec::new();
    for mode in [Mode::Local, Mode::Collaborative, Mode::Centralized] {
        let config = RoundConfig { mode, ..Default::default() };
        let started = std::time::Instant::now();
        let session = Session::prepare(&corpus, &partition, &assignment, config)?;
        let report = run(&session)?;
        println!(
            "\n{} ({}), {:.1}s:",
            report.mode,
            report.aggregation,
            started.elapsed().as_secs_f64()
        );
        for round in &report.rounds {
            println!(
                "  round {:>2}: avg EM {:6.2}  avg F1 {:6.2}",
                round.round,
                100.0 * round.avg_em,
                100.0 * round.avg_f1
            );
        }
        println!(
            "  best: {:.2} EM at round {}",
            100.0 * report.best_avg_em,
            report.best_round
        );
        reports.push(report);
    }

    println!();
    print!("{}", corag::cli::render_comparison(&reports));
    Ok(())
}
