//! Build the four train-store variants (rel / irr / rel1 / split) and check
//! their defining properties.
//!
//! Run: `cargo run --release --example store_variants`

use corag::benchmark::{
    build_variant, partition_qa, BenchmarkSpec, StoreFractions, TrainStores, Variant,
};
use corag::index::{Bm25Index, Bm25Params};
use corag::synth::{generate, SynthSpec};
use corag::taxonomy::{categorize_all, RankWindow};
use corag::{Corpus, Passage};
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (passages, qas) = generate(&SynthSpec {
        passages: 3000,
        qa: 180,
        clients: 4,
        seed: 13,
        ..Default::default()
    })?;
    let corpus = Corpus::from_passages(passages)?;
    let arcs: Vec<Arc<Passage>> = corpus.iter().cloned().collect();
    let index = Bm25Index::build(&arcs, Bm25Params::default())?;

    let spec = BenchmarkSpec {
        clients: 4,
        shots: 12,
        seed: 13,
        fractions: StoreFractions { train_wiki: 0.6, split_wiki: 0.1, test_wiki: 0.01 },
        ..Default::default()
    };
    let partition = partition_qa(&qas, &spec)?;
    let taxonomy = categorize_all(&qas, &index, &corpus, RankWindow::default());
    let train_relevant = taxonomy.union_relevant(partition.all_train_ids())?;
    println!(
        "{} passages, {} train qa across {} clients, {} train-relevant passages",
        corpus.len(),
        spec.clients * spec.shots,
        spec.clients,
        train_relevant.len()
    );

    for variant in [Variant::Rel, Variant::Irr, Variant::Rel1, Variant::Split] {
        let assignment = build_variant(variant.clone(), &taxonomy, &partition, &corpus, &spec)?;
        let description = match &assignment.train {
            TrainStores::Shared(store) => format!("shared store of {} passages", store.len()),
            TrainStores::PerClient(stores) => format!(
                "per-client stores of {:?} passages",
                stores.iter().map(|s| s.len()).collect::<Vec<_>>()
            ),
        };
        println!("\nvariant {variant}: {description}");
        match (&variant, &assignment.train) {
            (Variant::Rel, TrainStores::Shared(store)) => {
                println!("  carries all train-relevant: {}", train_relevant.is_subset(store));
            }
            (Variant::Irr, TrainStores::Shared(store)) => {
                println!("  excludes all train-relevant: {}", store.is_disjoint(&train_relevant));
            }
            (Variant::Rel1, TrainStores::PerClient(stores)) => {
                let last = spec.clients - 1;
                println!(
                    "  only the last client sees the relevant union: {}",
                    train_relevant.is_subset(&stores[last])
                        && stores[..last].iter().all(|s| s.is_disjoint(&train_relevant))
                );
            }
            (Variant::Split, TrainStores::PerClient(stores)) => {
                let own_relevant_everywhere = (0..spec.clients).all(|client| {
                    taxonomy
                        .union_relevant(partition.train_ids(client))
                        .map(|own| own.is_subset(&stores[client]))
                        .unwrap_or(false)
                });
                println!("  each client keeps its own relevant set: {own_relevant_everywhere}");
            }
            _ => {}
        }
        let disjoint = (0..spec.clients)
            .all(|c| assignment.train_store(c).is_disjoint(&assignment.test[c]));
        println!(
            "  per-client train/test disjoint: {disjoint}; test stores: {:?} passages",
            assignment.test.iter().map(|s| s.len()).collect::<Vec<_>>()
        );
    }

    // Manifests serialize deterministically.
    let dir = tempfile::tempdir()?;
    let assignment = build_variant(Variant::Split, &taxonomy, &partition, &corpus, &spec)?;
    let path = dir.path().join("stores.json");
    assignment.save(&path)?;
    println!(
        "\nwrote a split manifest ({} bytes) that reloads identically: {}",
        std::fs::metadata(&path)?.len(),
        corag::benchmark::StoreAssignment::load(&path)? == assignment
    );
    Ok(())
}
