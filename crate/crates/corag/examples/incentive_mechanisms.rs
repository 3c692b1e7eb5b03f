//! Incentive mechanisms on top of the participation game: contribution
//! rewards, tiered access, and reputation, plus a reward-strength sweep.
//!
//! Run: `cargo run --release --example incentive_mechanisms`

use corag::incentives::{
    access_level, enumerate_base, enumerate_modified, modified_utility, reputation, reward,
    ActionProfile, GameSpec, PlayerSpec,
};
use std::collections::BTreeSet;

fn ids(range: std::ops::Range<usize>) -> BTreeSet<String> {
    range.map(|i| format!("p{i}")).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Costs make free-riding the only base-game equilibrium; the mechanisms
    // change that.
    let universe = ids(0..24);
    let player = |owned: BTreeSet<String>, relevant: BTreeSet<String>, hn: BTreeSet<String>, cost: f64| {
        let irrelevant: BTreeSet<String> = universe
            .iter()
            .filter(|id| !relevant.contains(*id) && !hn.contains(*id))
            .cloned()
            .collect();
        PlayerSpec { owned, relevant, hard_negative: hn, irrelevant, cost }
    };
    let mut spec = GameSpec {
        n: 3,
        players: vec![
            player(ids(0..8), ids(8..16), ids(20..24), 2.0),
            player(ids(8..16), ids(0..8), ids(20..24), 2.0),
            player(ids(16..24), ids(0..4), ids(6..10), 2.0),
        ],
        alpha: 1.0,
        beta: 0.5,
        gamma: 0.75,
        rho: 0.0,
        k_access: 1.0,
        lambda_v: 0.5,
        lambda_w: 0.5,
    };
    spec.validate()?;

    let base = enumerate_base(&spec)?;
    println!(
        "base game equilibria: {:?}",
        base.iter().map(|p| p.0.clone()).collect::<Vec<_>>()
    );

    let all = ActionProfile(vec![1, 1, 1]);
    println!("\nmechanism readings at the all-contribute profile:");
    for i in 0..3 {
        println!(
            "  player {i}: reward(rho=1) {:.2}, access {:.2}, reputation {:+.2}",
            reward(&GameSpec { rho: 1.0, ..spec.clone() }, i, &all),
            access_level(&spec, i, &all),
            reputation(&spec, i),
        );
    }

    println!("\nreward-strength sweep (modified game):");
    println!("{:>6} {:>12} {:>18}", "rho", "equilibria", "max participants");
    for step in 0..=10 {
        let rho = step as f64 * 0.05;
        let swept = GameSpec { rho, ..spec.clone() };
        let equilibria = enumerate_modified(&swept)?;
        let max_participants = equilibria.iter().map(|p| p.participant_count()).max().unwrap_or(0);
        println!("{rho:>6.2} {:>12} {max_participants:>18}", equilibria.len());
    }

    // At a strong enough reward, full participation is an equilibrium.
    let strong = GameSpec { rho: 0.5, ..spec.clone() };
    let equilibria = enumerate_modified(&strong)?;
    if equilibria.contains(&all) {
        let payoffs: Vec<String> = (0..3)
            .map(|i| format!("{:+.2}", modified_utility(&strong, i, &all)))
            .collect();
        println!("\nat rho=0.5 everyone contributing is stable with payoffs [{}]", payoffs.join(", "));
    }
    Ok(())
}
