//! Categorize passages per QA pair into relevant / hard-negative /
//! irrelevant, and union the per-client relevant sets.
//!
//! Run: `cargo run --release --example categorize_passages`

use corag::index::{Bm25Index, Bm25Params};
use corag::synth::{generate, SynthSpec};
use corag::taxonomy::{categorize_all, RankWindow};
use corag::{Corpus, Passage};
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (passages, qas) = generate(&SynthSpec {
        passages: 1500,
        qa: 100,
        clients: 4,
        seed: 11,
        ..Default::default()
    })?;
    let corpus = Corpus::from_passages(passages)?;
    let arcs: Vec<Arc<Passage>> = corpus.iter().cloned().collect();
    let index = Bm25Index::build(&arcs, Bm25Params::default())?;

    let window = RankWindow::default();
    let taxonomy = categorize_all(&qas, &index, &corpus, window);
    println!(
        "categorized {} qa pairs (relevant = top-{} answer-bearing, hard negatives to rank {})",
        taxonomy.len(),
        window.top_r,
        window.hn_hi
    );

    // Distribution of category sizes.
    let mut relevant_total = 0;
    let mut hard_total = 0;
    for entry in taxonomy.iter() {
        relevant_total += entry.relevant.len();
        hard_total += entry.hard_negative.len();
    }
    println!(
        "avg per qa: {:.2} relevant, {:.1} hard negatives, rest of the {}-passage store irrelevant",
        relevant_total as f64 / taxonomy.len() as f64,
        hard_total as f64 / taxonomy.len() as f64,
        corpus.len()
    );

    // One concrete pair.
    let qa = &qas[0];
    let entry = taxonomy.get(&qa.id).unwrap();
    println!("\n{}: {:?}", qa.id, qa.question);
    println!("  relevant:      {:?}", entry.relevant);
    println!(
        "  hard negative: {:?}{}",
        &entry.hard_negative[..entry.hard_negative.len().min(6)],
        if entry.hard_negative.len() > 6 { " ..." } else { "" }
    );

    // Union of relevant passages over one client's QA.
    let client_qa: Vec<&str> = qas.iter().filter(|q| q.client == 0).map(|q| q.id.as_str()).collect();
    let union = taxonomy.union_relevant(client_qa.iter().copied())?;
    println!(
        "\nclient 0 holds {} qa pairs with {} distinct relevant passages",
        client_qa.len(),
        union.len()
    );
    Ok(())
}
