//! Enumerate pure-strategy equilibria of the participation game: each client
//! decides whether to contribute its passages to the shared store.
//!
//! Run: `cargo run --release --example participation_game`

use corag::incentives::{
    enumerate_base, participation_condition, performance, shared_store, utility, ActionProfile,
    GameSpec, PlayerSpec,
};
use std::collections::BTreeSet;

fn ids(prefix: &str, range: std::ops::Range<usize>) -> BTreeSet<String> {
    range.map(|i| format!("{prefix}{i}")).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three clients over a 30-passage universe. Player 0 owns mostly
    // passages relevant to the others; player 2 owns hard negatives.
    let universe: BTreeSet<String> = ids("p", 0..30);
    let player = |owned: BTreeSet<String>, relevant: BTreeSet<String>, hn: BTreeSet<String>, cost: f64| {
        let irrelevant: BTreeSet<String> = universe
            .iter()
            .filter(|id| !relevant.contains(*id) && !hn.contains(*id))
            .cloned()
            .collect();
        PlayerSpec { owned, relevant, hard_negative: hn, irrelevant, cost }
    };
    let spec = GameSpec {
        n: 3,
        players: vec![
            player(ids("p", 0..10), ids("p", 10..18), ids("p", 25..30), 1.0),
            player(ids("p", 10..20), ids("p", 0..8), ids("p", 25..30), 1.0),
            player(ids("p", 20..30), ids("p", 0..6), ids("p", 8..14), 4.0),
        ],
        alpha: 1.0,
        beta: 0.5,
        gamma: 0.75,
        rho: 0.0,
        k_access: 1.0,
        lambda_v: 0.0,
        lambda_w: 0.0,
    };
    for warning in spec.validate()? {
        println!("warning: {warning}");
    }

    println!("payoffs per action profile (rows: player):");
    for bits in 0..8u64 {
        let profile = ActionProfile::from_bits(bits, 3);
        let shared = shared_store(&spec, &profile);
        let payoffs: Vec<String> = (0..3)
            .map(|i| format!("{:+.2}", utility(&spec, i, &profile)))
            .collect();
        println!(
            "  a={:?} shared store {:>2} passages, payoffs [{}]",
            profile.0,
            shared.len(),
            payoffs.join(", ")
        );
    }

    let equilibria = enumerate_base(&spec)?;
    println!("\npure-strategy equilibria: {:?}", equilibria.iter().map(|p| p.0.clone()).collect::<Vec<_>>());

    // Why nobody moves: joining costs c_i while the shared store is free to
    // consume, so the stated participation inequality concerns the gain from
    // everyone else's passages versus the cost.
    for i in 0..3 {
        let others = ActionProfile(vec![1, 1, 1]).with_action(i, 0);
        let would_gain = {
            let mut pool = spec.players[i].owned.clone();
            pool.extend(shared_store(&spec, &others));
            performance(&spec, i, &pool) - performance(&spec, i, &spec.players[i].owned)
        };
        println!(
            "player {i}: gain from others' contributions {:.2} vs cost {:.2} -> participation condition {}",
            would_gain,
            spec.players[i].cost,
            participation_condition(&spec, i, &others)
        );
    }
    Ok(())
}
