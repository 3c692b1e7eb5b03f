//! Build a BM25 index over a synthetic corpus and run top-k searches.
//!
//! Run: `cargo run --release --example build_and_search`

use corag::index::{Bm25Index, Bm25Params};
use corag::synth::{generate, SynthSpec};
use corag::{normalize, Corpus, Passage};
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (passages, qas) = generate(&SynthSpec {
        passages: 1000,
        qa: 60,
        clients: 4,
        seed: 7,
        ..Default::default()
    })?;
    let corpus = Corpus::from_passages(passages)?;
    let arcs: Vec<Arc<Passage>> = corpus.iter().cloned().collect();
    let index = Bm25Index::build(&arcs, Bm25Params::default())?;
    println!(
        "indexed {} passages, avg length {:.1} tokens",
        index.n_docs(),
        index.avg_doc_len()
    );

    // Search with the first few questions.
    for qa in qas.iter().take(3) {
        println!("\nquery: {}", qa.question);
        let ranked = index.search(&normalize(&qa.question), 5);
        for (rank, (id, score)) in ranked.entries.iter().enumerate() {
            let passage = corpus.get(id).unwrap();
            let holds = corag::contains_answer(passage, &qa.answers);
            println!(
                "  {}. {id} score {score:>7.3} answer={} | {}",
                rank + 1,
                if holds { "yes" } else { "no " },
                &passage.text[..passage.text.len().min(64)]
            );
        }
    }

    // The binary cache round-trips bit-exactly.
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("index.bin");
    index.save_cache(&path)?;
    let reloaded = Bm25Index::load_cache(&path)?;
    let query = normalize(&qas[0].question);
    assert_eq!(index.search(&query, 5), reloaded.search(&query, 5));
    println!("\ncache round-trip: search results identical");
    Ok(())
}
