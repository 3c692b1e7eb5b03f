//! The client participation game and its incentive mechanisms.
//!
//! Each client owns a passage set and chooses whether to contribute it to a
//! shared store. Payoffs weigh the performance effect of the passages gained
//! (relevant helps, hard negatives hurt, irrelevant mildly helps) against a
//! contribution cost. The module enumerates pure-strategy Nash equilibria
//! exhaustively and layers three mechanisms on top: contribution rewards,
//! tiered access, and reputation.

use crate::benchmark::{StoreAssignment, TrainStores};
use crate::corpus::PassageId;
use crate::taxonomy::StoreTaxonomy;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid game spec: {0}")]
    Invalid(String),
    #[error("profile length {got} does not match {expected} players")]
    ProfileLength { got: usize, expected: usize },
    #[error("{n} players exceeds the exhaustive enumeration cap of {cap}; reduce N or use best-response dynamics externally")]
    TooManyPlayers { n: usize, cap: usize },
    #[error("game io: {0}")]
    Io(String),
}

/// Exhaustive enumeration bound: 2^N profiles are evaluated.
pub const ENUMERATION_CAP: usize = 20;

/// One player's passage sets and contribution cost. `relevant`,
/// `hard_negative`, and `irrelevant` partition the universe from this
/// player's perspective; `owned` is what the player can contribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSpec {
    #[serde(rename = "P")]
    pub owned: BTreeSet<PassageId>,
    #[serde(rename = "R")]
    pub relevant: BTreeSet<PassageId>,
    #[serde(rename = "HN")]
    pub hard_negative: BTreeSet<PassageId>,
    #[serde(rename = "IR")]
    pub irrelevant: BTreeSet<PassageId>,
    #[serde(rename = "c")]
    pub cost: f64,
}

/// A participation game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub players: Vec<PlayerSpec>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub k_access: f64,
    pub lambda_v: f64,
    pub lambda_w: f64,
}

impl GameSpec {
    /// Every passage id referenced anywhere in the spec.
    pub fn universe(&self) -> BTreeSet<PassageId> {
        let mut ids = BTreeSet::new();
        for p in &self.players {
            ids.extend(p.owned.iter().cloned());
            ids.extend(p.relevant.iter().cloned());
            ids.extend(p.hard_negative.iter().cloned());
            ids.extend(p.irrelevant.iter().cloned());
        }
        ids
    }

    /// Structural validation. Returns soft warnings (the coefficient
    /// ordering `alpha > gamma > beta` is advisory, not enforced).
    pub fn validate(&self) -> Result<Vec<String>, GameError> {
        if self.n != self.players.len() {
            return Err(GameError::Invalid(format!(
                "N = {} but {} players are given",
                self.n,
                self.players.len()
            )));
        }
        if self.players.is_empty() {
            return Err(GameError::Invalid("at least one player required".into()));
        }
        for (i, p) in self.players.iter().enumerate() {
            if p.cost < 0.0 || !p.cost.is_finite() {
                return Err(GameError::Invalid(format!(
                    "player {i} cost must be finite and >= 0"
                )));
            }
        }
        for v in [self.alpha, self.beta, self.gamma] {
            if !(v > 0.0) {
                return Err(GameError::Invalid(
                    "alpha, beta, gamma must all be positive".into(),
                ));
            }
        }
        if !(self.rho >= 0.0 && self.k_access > 0.0 && self.lambda_v >= 0.0 && self.lambda_w >= 0.0)
        {
            return Err(GameError::Invalid(
                "need rho >= 0, k_access > 0, lambda_v >= 0, lambda_w >= 0".into(),
            ));
        }
        let universe = self.universe();
        for (i, p) in self.players.iter().enumerate() {
            if !p.relevant.is_disjoint(&p.hard_negative)
                || !p.relevant.is_disjoint(&p.irrelevant)
                || !p.hard_negative.is_disjoint(&p.irrelevant)
            {
                return Err(GameError::Invalid(format!(
                    "player {i}: relevant/hard-negative/irrelevant sets overlap"
                )));
            }
            let mut union = p.relevant.clone();
            union.extend(p.hard_negative.iter().cloned());
            union.extend(p.irrelevant.iter().cloned());
            if union != universe {
                return Err(GameError::Invalid(format!(
                    "player {i}: relevant/hard-negative/irrelevant must partition the universe"
                )));
            }
        }
        let mut warnings = Vec::new();
        if !(self.alpha > self.gamma && self.gamma > self.beta) {
            warnings.push(format!(
                "coefficient ordering alpha > gamma > beta does not hold \
                 (alpha={}, gamma={}, beta={})",
                self.alpha, self.gamma, self.beta
            ));
        }
        Ok(warnings)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), GameError> {
        let body = serde_json::to_string_pretty(self).map_err(|e| GameError::Io(e.to_string()))?;
        std::fs::write(path, body).map_err(|e| GameError::Io(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GameError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| GameError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&body).map_err(|e| GameError::Io(e.to_string()))
    }
}

/// A binary contribution vector: `a[i] = 1` means player `i` contributes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionProfile(pub Vec<u8>);

impl ActionProfile {
    pub fn from_bits(bits: u64, n: usize) -> Self {
        ActionProfile((0..n).map(|i| ((bits >> i) & 1) as u8).collect())
    }

    pub fn contributes(&self, player: usize) -> bool {
        self.0[player] == 1
    }

    pub fn with_action(&self, player: usize, action: u8) -> Self {
        let mut next = self.clone();
        next.0[player] = action;
        next
    }

    pub fn participants(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == 1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn participant_count(&self) -> usize {
        self.0.iter().filter(|a| **a == 1).count()
    }
}

/// Union of contributed passage sets.
pub fn shared_store(spec: &GameSpec, profile: &ActionProfile) -> BTreeSet<PassageId> {
    let mut store = BTreeSet::new();
    for (i, p) in spec.players.iter().enumerate() {
        if profile.contributes(i) {
            store.extend(p.owned.iter().cloned());
        }
    }
    store
}

/// Approximate performance of player `i`'s model trained on `passages`:
/// `alpha*|relevant| - beta*|hard_negative| + gamma*|irrelevant|`.
pub fn performance(spec: &GameSpec, player: usize, passages: &BTreeSet<PassageId>) -> f64 {
    let p = &spec.players[player];
    let relevant = passages.intersection(&p.relevant).count() as f64;
    let hard_negative = passages.intersection(&p.hard_negative).count() as f64;
    let irrelevant = passages.intersection(&p.irrelevant).count() as f64;
    spec.alpha * relevant - spec.beta * hard_negative + spec.gamma * irrelevant
}

/// Base-game payoff:
/// `f_i(P_i u P_shared(a)) - f_i(P_i) - c_i * a_i`.
pub fn utility(spec: &GameSpec, player: usize, profile: &ActionProfile) -> f64 {
    let p = &spec.players[player];
    let mut combined = p.owned.clone();
    combined.extend(shared_store(spec, profile));
    let gained = performance(spec, player, &combined) - performance(spec, player, &p.owned);
    let cost = if profile.contributes(player) { p.cost } else { 0.0 };
    gained - cost
}

/// True iff no player can improve their payoff by unilaterally flipping
/// their action.
pub fn is_nash<F>(spec: &GameSpec, profile: &ActionProfile, payoff: &F) -> bool
where
    F: Fn(&GameSpec, usize, &ActionProfile) -> f64,
{
    for player in 0..spec.players.len() {
        let current = payoff(spec, player, profile);
        let flipped = profile.with_action(player, 1 - profile.0[player]);
        if payoff(spec, player, &flipped) > current {
            return false;
        }
    }
    true
}

/// All pure-strategy equilibria under `payoff`, in ascending binary order
/// (player 0 is the least significant bit).
pub fn enumerate_nash<F>(spec: &GameSpec, payoff: &F) -> Result<Vec<ActionProfile>, GameError>
where
    F: Fn(&GameSpec, usize, &ActionProfile) -> f64,
{
    let n = spec.players.len();
    if n > ENUMERATION_CAP {
        return Err(GameError::TooManyPlayers { n, cap: ENUMERATION_CAP });
    }
    let mut out = Vec::new();
    for bits in 0..(1u64 << n) {
        let profile = ActionProfile::from_bits(bits, n);
        if is_nash(spec, &profile, payoff) {
            out.push(profile);
        }
    }
    Ok(out)
}

/// Equilibria of the base game.
pub fn enumerate_base(spec: &GameSpec) -> Result<Vec<ActionProfile>, GameError> {
    enumerate_nash(spec, &utility)
}

/// Equilibria of the modified game (mechanisms active).
pub fn enumerate_modified(spec: &GameSpec) -> Result<Vec<ActionProfile>, GameError> {
    enumerate_nash(spec, &modified_utility)
}

/// Participation condition for player `i` against the others' actions:
/// does joining at least repay the contribution cost?
pub fn participation_condition(
    spec: &GameSpec,
    player: usize,
    others: &ActionProfile,
) -> bool {
    let joined = others.with_action(player, 1);
    let p = &spec.players[player];
    let mut combined = p.owned.clone();
    combined.extend(shared_store(spec, &joined));
    let gain = performance(spec, player, &combined) - performance(spec, player, &p.owned);
    gain >= p.cost
}

/// Contribution reward: participating players earn in proportion to the
/// quality of what they own and the number of other participants.
pub fn reward(spec: &GameSpec, player: usize, profile: &ActionProfile) -> f64 {
    if !profile.contributes(player) {
        return 0.0;
    }
    let p = &spec.players[player];
    let quality = p.relevant.intersection(&p.owned).count() as f64
        + spec.gamma * p.irrelevant.intersection(&p.owned).count() as f64;
    let others = profile.participant_count() - 1;
    spec.rho * quality * others as f64
}

/// Tiered access level in [0, 1]: the player's store size relative to
/// `k_access` times the mean participant store size. No participants means
/// no shared store to access (0); a zero mean grants full access to anyone
/// holding passages.
pub fn access_level(spec: &GameSpec, player: usize, profile: &ActionProfile) -> f64 {
    let participants = profile.participants();
    if participants.is_empty() {
        return 0.0;
    }
    let avg = participants
        .iter()
        .map(|&j| spec.players[j].owned.len() as f64)
        .sum::<f64>()
        / participants.len() as f64;
    let own = spec.players[player].owned.len() as f64;
    if avg == 0.0 {
        return if own > 0.0 { 1.0 } else { 0.0 };
    }
    (own / (spec.k_access * avg)).min(1.0)
}

/// Reputation score: proportion of owned passages that are relevant minus
/// beta times the proportion that are hard negatives. Zero for an empty
/// store.
pub fn reputation(spec: &GameSpec, player: usize) -> f64 {
    let p = &spec.players[player];
    let total = p.owned.len() as f64;
    if total == 0.0 {
        return 0.0;
    }
    let relevant = p.relevant.intersection(&p.owned).count() as f64;
    let hard_negative = p.hard_negative.intersection(&p.owned).count() as f64;
    (relevant - spec.beta * hard_negative) / total
}

/// Modified-game payoff: base utility plus reward plus linear valuations of
/// access level and reputation.
pub fn modified_utility(spec: &GameSpec, player: usize, profile: &ActionProfile) -> f64 {
    utility(spec, player, profile)
        + reward(spec, player, profile)
        + spec.lambda_v * access_level(spec, player, profile)
        + spec.lambda_w * reputation(spec, player)
}

/// Coefficients and mechanism parameters for building a game from pipeline
/// artifacts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GameCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub k_access: f64,
    pub lambda_v: f64,
    pub lambda_w: f64,
}

impl Default for GameCoefficients {
    fn default() -> Self {
        GameCoefficients {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.75,
            rho: 0.0,
            k_access: 1.0,
            lambda_v: 0.0,
            lambda_w: 0.0,
        }
    }
}

/// Builds a game instance from a taxonomy and a store assignment.
///
/// Player `i`'s relevant set is the union over their train QA; hard
/// negatives are the remaining unioned hard negatives; irrelevant is the
/// rest of the corpus. For shared train stores the store is sliced into
/// disjoint per-player contributions (round-robin over the sorted ids), so
/// the all-ones profile reassembles exactly the shared store.
pub fn game_from_taxonomy(
    taxonomy: &StoreTaxonomy,
    assignment: &StoreAssignment,
    train_qa_ids: &[Vec<String>],
    universe: &BTreeSet<PassageId>,
    coefficients: &GameCoefficients,
    costs: &[f64],
) -> Result<GameSpec, GameError> {
    let n = train_qa_ids.len();
    if costs.len() != n {
        return Err(GameError::Invalid(format!(
            "{} costs for {n} players",
            costs.len()
        )));
    }
    if assignment.clients() != n {
        return Err(GameError::Invalid(format!(
            "assignment has {} clients, expected {n}",
            assignment.clients()
        )));
    }

    let owned: Vec<BTreeSet<PassageId>> = match &assignment.train {
        TrainStores::Shared(store) => {
            let mut slices = vec![BTreeSet::new(); n];
            for (idx, id) in store.iter().enumerate() {
                slices[idx % n].insert(id.clone());
            }
            slices
        }
        TrainStores::PerClient(stores) => stores.clone(),
    };

    let mut players = Vec::with_capacity(n);
    for (player, qa_ids) in train_qa_ids.iter().enumerate() {
        let relevant = taxonomy
            .union_relevant(qa_ids.iter().map(String::as_str))
            .map_err(|e| GameError::Invalid(e.to_string()))?;
        let hard_negative: BTreeSet<PassageId> = taxonomy
            .union_hard_negative(qa_ids.iter().map(String::as_str))
            .map_err(|e| GameError::Invalid(e.to_string()))?
            .difference(&relevant)
            .cloned()
            .collect();
        for id in owned[player].iter() {
            if !universe.contains(id) {
                return Err(GameError::Invalid(format!(
                    "player {player} owns passage `{id}` outside the universe"
                )));
            }
        }
        let irrelevant: BTreeSet<PassageId> = universe
            .iter()
            .filter(|id| !relevant.contains(*id) && !hard_negative.contains(*id))
            .cloned()
            .collect();
        players.push(PlayerSpec {
            owned: owned[player].clone(),
            relevant,
            hard_negative,
            irrelevant,
            cost: costs[player],
        });
    }

    Ok(GameSpec {
        n,
        players,
        alpha: coefficients.alpha,
        beta: coefficients.beta,
        gamma: coefficients.gamma,
        rho: coefficients.rho,
        k_access: coefficients.k_access,
        lambda_v: coefficients.lambda_v,
        lambda_w: coefficients.lambda_w,
    })
}
