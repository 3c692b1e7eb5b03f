//! Benchmark construction: client QA splits, disjoint train/test passage
//! stores, and the rel / irr / rel1 / split store variants plus custom
//! composition stores.
//!
//! Test stores are built first (per client: relevant passages for the
//! client's test QA plus a seeded corpus sample); train sampling pools then
//! exclude every test-store passage, which is what enforces per-client
//! train/test disjointness. Test samples are drawn from the corpus minus the
//! union of train-relevant passages so the two sides cannot collide through
//! the samples.

use crate::corpus::{Corpus, PassageId, QAPair};
use crate::seeding::{sample_items, substream};
use crate::taxonomy::StoreTaxonomy;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("insufficient qa data: need at least {required} pairs ({detail}), got {got}")]
    InsufficientQa {
        required: usize,
        got: usize,
        detail: String,
    },
    #[error("corpus too small: {what} needs {needed} passages but only {available} remain after exclusions")]
    CorpusTooSmall {
        what: String,
        needed: usize,
        available: usize,
    },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Taxonomy(#[from] crate::taxonomy::TaxonomyError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("manifest io: {0}")]
    Io(String),
}

/// Corpus sampling fractions for the store builders.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StoreFractions {
    pub train_wiki: f64,
    pub split_wiki: f64,
    pub test_wiki: f64,
}

impl Default for StoreFractions {
    fn default() -> Self {
        StoreFractions { train_wiki: 0.8, split_wiki: 0.1, test_wiki: 0.025 }
    }
}

/// Benchmark shape: client count, per-client shots, seed, and split/store
/// fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub clients: usize,
    pub shots: usize,
    pub seed: u64,
    /// Fraction of the non-train QA pool that becomes the dev split; the
    /// rest is the test split.
    pub dev_fraction: f64,
    pub fractions: StoreFractions,
    /// When true, the rel variant samples its corpus fraction from the pool
    /// with train-relevant passages excluded (they are unioned back in
    /// afterwards either way).
    pub rel_sample_excludes_relevant: bool,
    /// When true, each client's test store also carries the hard negatives
    /// of its test QA. At corpus scale a fractional sample supplies the
    /// confusable neighborhood by volume; a desk-scale sample almost never
    /// does, which would make test retrieval trivially easy.
    pub test_include_hard_negatives: bool,
    /// Cap on hard negatives carried per test QA (highest-ranked first).
    pub test_hard_negatives_per_qa: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            clients: 8,
            shots: 16,
            seed: 42,
            dev_fraction: 0.7,
            fractions: StoreFractions::default(),
            rel_sample_excludes_relevant: false,
            test_include_hard_negatives: true,
            test_hard_negatives_per_qa: 10,
        }
    }
}

impl BenchmarkSpec {
    fn validate(&self) -> Result<(), BenchmarkError> {
        if self.clients == 0 {
            return Err(BenchmarkError::InvalidSpec("clients must be >= 1".into()));
        }
        if self.shots == 0 {
            return Err(BenchmarkError::InvalidSpec("shots must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(BenchmarkError::InvalidSpec("dev_fraction must be in [0,1)".into()));
        }
        for (name, f) in [
            ("train_wiki", self.fractions.train_wiki),
            ("split_wiki", self.fractions.split_wiki),
            ("test_wiki", self.fractions.test_wiki),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(BenchmarkError::InvalidSpec(format!(
                    "fraction {name} must be in (0,1], got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-client train/dev/test QA splits. Client fields on the contained pairs
/// are rewritten to the assigned client.
#[derive(Debug, Clone, PartialEq)]
pub struct QaPartition {
    pub train: Vec<Vec<QAPair>>,
    pub dev: Vec<Vec<QAPair>>,
    pub test: Vec<Vec<QAPair>>,
}

impl QaPartition {
    pub fn clients(&self) -> usize {
        self.train.len()
    }

    pub fn train_ids(&self, client: usize) -> Vec<&str> {
        self.train[client].iter().map(|qa| qa.id.as_str()).collect()
    }

    pub fn all_train_ids(&self) -> Vec<&str> {
        self.train.iter().flatten().map(|qa| qa.id.as_str()).collect()
    }

    pub fn test_ids(&self, client: usize) -> Vec<&str> {
        self.test[client].iter().map(|qa| qa.id.as_str()).collect()
    }

    pub fn all_ids(&self) -> Vec<&str> {
        self.train
            .iter()
            .chain(&self.dev)
            .chain(&self.test)
            .flatten()
            .map(|qa| qa.id.as_str())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchmarkError> {
        let file = SplitsFile {
            train: ids_by_client(&self.train),
            dev: ids_by_client(&self.dev),
            test: ids_by_client(&self.test),
        };
        let body =
            serde_json::to_string_pretty(&file).map_err(|e| BenchmarkError::Io(e.to_string()))?;
        std::fs::write(path, body).map_err(|e| BenchmarkError::Io(e.to_string()))
    }

    /// Rebuilds a partition from a splits file plus the QA pool it was
    /// computed from.
    pub fn load(path: &Path, qa: &[QAPair]) -> Result<Self, BenchmarkError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| BenchmarkError::Io(format!("{}: {e}", path.display())))?;
        let file: SplitsFile =
            serde_json::from_str(&body).map_err(|e| BenchmarkError::Io(e.to_string()))?;
        let by_id: BTreeMap<&str, &QAPair> = qa.iter().map(|q| (q.id.as_str(), q)).collect();
        let resolve = |groups: &BTreeMap<String, Vec<String>>| -> Result<Vec<Vec<QAPair>>, BenchmarkError> {
            let mut out: Vec<Vec<QAPair>> = vec![Vec::new(); groups.len()];
            for (client_key, ids) in groups {
                let client: usize = client_key.parse().map_err(|_| {
                    BenchmarkError::Io(format!("bad client key `{client_key}` in splits file"))
                })?;
                if client >= out.len() {
                    out.resize(client + 1, Vec::new());
                }
                for id in ids {
                    let qa = by_id.get(id.as_str()).ok_or_else(|| {
                        BenchmarkError::Io(format!("splits file references unknown qa `{id}`"))
                    })?;
                    let mut qa = (*qa).clone();
                    qa.client = client;
                    out[client].push(qa);
                }
            }
            Ok(out)
        };
        Ok(QaPartition {
            train: resolve(&file.train)?,
            dev: resolve(&file.dev)?,
            test: resolve(&file.test)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    train: BTreeMap<String, Vec<String>>,
    dev: BTreeMap<String, Vec<String>>,
    test: BTreeMap<String, Vec<String>>,
}

fn ids_by_client(groups: &[Vec<QAPair>]) -> BTreeMap<String, Vec<String>> {
    groups
        .iter()
        .enumerate()
        .map(|(c, qas)| (c.to_string(), qas.iter().map(|q| q.id.clone()).collect()))
        .collect()
}

/// Seeded uniform QA split: exactly `shots` train pairs per client, then the
/// remainder divided into dev and test and dealt evenly across clients
/// (leftovers beyond an even split stay unassigned). Incoming client labels
/// are ignored; the partition is the authoritative assignment.
pub fn partition_qa(qa: &[QAPair], spec: &BenchmarkSpec) -> Result<QaPartition, BenchmarkError> {
    spec.validate()?;
    let m = spec.clients;
    let min_required = m * spec.shots + 2 * m;
    if qa.len() < min_required {
        return Err(BenchmarkError::InsufficientQa {
            required: min_required,
            got: qa.len(),
            detail: format!(
                "{m} clients x {} train shots plus at least one dev and one test pair per client",
                spec.shots
            ),
        });
    }

    let mut shuffled: Vec<QAPair> = qa.to_vec();
    shuffled.sort_by(|a, b| a.id.cmp(&b.id));
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut substream(spec.seed, "partition"));

    let train_total = m * spec.shots;
    let remainder = shuffled.len() - train_total;
    let dev_total = (spec.dev_fraction * remainder as f64).floor() as usize;
    let test_total = remainder - dev_total;
    let dev_per_client = dev_total / m;
    let test_per_client = test_total / m;
    if dev_per_client == 0 || test_per_client == 0 {
        return Err(BenchmarkError::InsufficientQa {
            required: min_required,
            got: qa.len(),
            detail: format!(
                "dev/test split of the {remainder} non-train pairs leaves an empty split for some client"
            ),
        });
    }

    let mut cursor = shuffled.into_iter();
    let mut take_group = |per_client: usize, m: usize| -> Vec<Vec<QAPair>> {
        (0..m)
            .map(|client| {
                (&mut cursor)
                    .take(per_client)
                    .map(|mut qa| {
                        qa.client = client;
                        qa
                    })
                    .collect()
            })
            .collect()
    };
    let train = take_group(spec.shots, m);
    let dev = take_group(dev_per_client, m);
    let test = take_group(test_per_client, m);
    Ok(QaPartition { train, dev, test })
}

/// Train store composition variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Variant {
    Rel,
    Irr,
    Rel1,
    Split,
    Custom(String),
}

impl Variant {
    pub fn as_str(&self) -> &str {
        match self {
            Variant::Rel => "rel",
            Variant::Irr => "irr",
            Variant::Rel1 => "rel1",
            Variant::Split => "split",
            Variant::Custom(s) => s,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "rel" => Variant::Rel,
            "irr" => Variant::Irr,
            "rel1" => Variant::Rel1,
            "split" => Variant::Split,
            other => Variant::Custom(other.to_string()),
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Train stores: one shared store or one per client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainStores {
    Shared(BTreeSet<PassageId>),
    PerClient(Vec<BTreeSet<PassageId>>),
}

/// The materialized store assignment for one variant: per-client train views
/// and per-client test stores, already disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreAssignment {
    pub variant: Variant,
    pub seed: u64,
    pub train: TrainStores,
    pub test: Vec<BTreeSet<PassageId>>,
}

impl StoreAssignment {
    pub fn clients(&self) -> usize {
        self.test.len()
    }

    /// The train store client `i` retrieves from.
    pub fn train_store(&self, client: usize) -> &BTreeSet<PassageId> {
        match &self.train {
            TrainStores::Shared(store) => store,
            TrainStores::PerClient(stores) => &stores[client],
        }
    }

    /// Union of all clients' train stores (the centralized pool).
    pub fn train_union(&self) -> BTreeSet<PassageId> {
        match &self.train {
            TrainStores::Shared(store) => store.clone(),
            TrainStores::PerClient(stores) => {
                stores.iter().flat_map(|s| s.iter().cloned()).collect()
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchmarkError> {
        let train = match &self.train {
            TrainStores::Shared(store) => TrainManifest::Shared {
                shared: store.iter().cloned().collect(),
            },
            TrainStores::PerClient(stores) => TrainManifest::PerClient {
                per_client: stores
                    .iter()
                    .enumerate()
                    .map(|(c, s)| (c.to_string(), s.iter().cloned().collect()))
                    .collect(),
            },
        };
        let file = ManifestFile {
            variant: self.variant.as_str().to_string(),
            seed: self.seed,
            train,
            test: self
                .test
                .iter()
                .enumerate()
                .map(|(c, s)| (c.to_string(), s.iter().cloned().collect()))
                .collect(),
        };
        let body =
            serde_json::to_string_pretty(&file).map_err(|e| BenchmarkError::Io(e.to_string()))?;
        std::fs::write(path, body).map_err(|e| BenchmarkError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchmarkError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| BenchmarkError::Io(format!("{}: {e}", path.display())))?;
        let file: ManifestFile =
            serde_json::from_str(&body).map_err(|e| BenchmarkError::Io(e.to_string()))?;
        let train = match file.train {
            TrainManifest::Shared { shared } => TrainStores::Shared(shared.into_iter().collect()),
            TrainManifest::PerClient { per_client } => {
                let mut stores: Vec<BTreeSet<PassageId>> = vec![BTreeSet::new(); per_client.len()];
                for (key, ids) in per_client {
                    let client: usize = key.parse().map_err(|_| {
                        BenchmarkError::Io(format!("bad client key `{key}` in manifest"))
                    })?;
                    if client >= stores.len() {
                        stores.resize(client + 1, BTreeSet::new());
                    }
                    stores[client] = ids.into_iter().collect();
                }
                TrainStores::PerClient(stores)
            }
        };
        let mut test: Vec<BTreeSet<PassageId>> = vec![BTreeSet::new(); file.test.len()];
        for (key, ids) in file.test {
            let client: usize = key
                .parse()
                .map_err(|_| BenchmarkError::Io(format!("bad client key `{key}` in manifest")))?;
            if client >= test.len() {
                test.resize(client + 1, BTreeSet::new());
            }
            test[client] = ids.into_iter().collect();
        }
        Ok(StoreAssignment {
            variant: file.variant.parse().expect("variant parse is infallible"),
            seed: file.seed,
            train,
            test,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    variant: String,
    seed: u64,
    train: TrainManifest,
    test: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TrainManifest {
    Shared { shared: Vec<String> },
    PerClient { per_client: BTreeMap<String, Vec<String>> },
}

struct StoreContext<'a> {
    corpus_ids: Vec<PassageId>,
    relevant_train_all: BTreeSet<PassageId>,
    relevant_train_per: Vec<BTreeSet<PassageId>>,
    test: Vec<BTreeSet<PassageId>>,
    test_union: BTreeSet<PassageId>,
    spec: &'a BenchmarkSpec,
}

fn floor_fraction(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).floor() as usize
}

fn prepare_context<'a>(
    taxonomy: &StoreTaxonomy,
    partition: &QaPartition,
    corpus: &Corpus,
    spec: &'a BenchmarkSpec,
) -> Result<StoreContext<'a>, BenchmarkError> {
    spec.validate()?;
    if partition.clients() != spec.clients {
        return Err(BenchmarkError::InvalidSpec(format!(
            "partition has {} clients, spec says {}",
            partition.clients(),
            spec.clients
        )));
    }
    let corpus_ids = corpus.sorted_ids();
    let n = corpus_ids.len();

    let relevant_train_all = taxonomy.union_relevant(partition.all_train_ids())?;
    let relevant_train_per: Vec<BTreeSet<PassageId>> = (0..spec.clients)
        .map(|c| taxonomy.union_relevant(partition.train_ids(c)))
        .collect::<Result<_, _>>()?;

    // Test stores first: per-client test-relevant passages plus a seeded
    // sample drawn away from the train-relevant union.
    let n_test_sample = floor_fraction(spec.fractions.test_wiki, n);
    let test_pool: Vec<PassageId> = corpus_ids
        .iter()
        .filter(|id| !relevant_train_all.contains(*id))
        .cloned()
        .collect();
    if test_pool.len() < n_test_sample {
        return Err(BenchmarkError::CorpusTooSmall {
            what: "test store sample".into(),
            needed: n_test_sample,
            available: test_pool.len(),
        });
    }
    let mut test = Vec::with_capacity(spec.clients);
    for client in 0..spec.clients {
        let mut store = taxonomy.union_relevant(partition.test_ids(client))?;
        if spec.test_include_hard_negatives {
            for qa_id in partition.test_ids(client) {
                let entry = taxonomy
                    .get(qa_id)
                    .ok_or_else(|| crate::taxonomy::TaxonomyError::UnknownQa(qa_id.to_string()))?;
                // Train-relevant passages stay out of test stores so the
                // train stores keep them (train/test disjointness wins).
                store.extend(
                    entry
                        .hard_negative
                        .iter()
                        .filter(|id| !relevant_train_all.contains(*id))
                        .take(spec.test_hard_negatives_per_qa)
                        .cloned(),
                );
            }
        }
        let mut rng = substream(spec.seed, &format!("store:test:{client}"));
        store.extend(sample_items(&test_pool, n_test_sample, &mut rng));
        test.push(store);
    }
    let test_union: BTreeSet<PassageId> =
        test.iter().flat_map(|s| s.iter().cloned()).collect();

    Ok(StoreContext {
        corpus_ids,
        relevant_train_all,
        relevant_train_per,
        test,
        test_union,
        spec,
    })
}

impl StoreContext<'_> {
    /// Corpus ids not claimed by any test store.
    fn train_pool(&self) -> Vec<PassageId> {
        self.corpus_ids
            .iter()
            .filter(|id| !self.test_union.contains(*id))
            .cloned()
            .collect()
    }

    fn sample_pool(
        &self,
        pool: &[PassageId],
        fraction: f64,
        what: &str,
        stream: &str,
    ) -> Result<BTreeSet<PassageId>, BenchmarkError> {
        let needed = floor_fraction(fraction, self.corpus_ids.len());
        if pool.len() < needed {
            return Err(BenchmarkError::CorpusTooSmall {
                what: what.into(),
                needed,
                available: pool.len(),
            });
        }
        let mut rng = substream(self.spec.seed, stream);
        Ok(sample_items(pool, needed, &mut rng).into_iter().collect())
    }

    fn irr_store(&self) -> Result<BTreeSet<PassageId>, BenchmarkError> {
        let pool: Vec<PassageId> = self
            .train_pool()
            .into_iter()
            .filter(|id| !self.relevant_train_all.contains(id))
            .collect();
        self.sample_pool(&pool, self.spec.fractions.train_wiki, "irr store", "store:irr")
    }
}

/// Builds the store assignment for one variant. The taxonomy must cover all
/// train and test QA ids in the partition.
pub fn build_variant(
    variant: Variant,
    taxonomy: &StoreTaxonomy,
    partition: &QaPartition,
    corpus: &Corpus,
    spec: &BenchmarkSpec,
) -> Result<StoreAssignment, BenchmarkError> {
    let ctx = prepare_context(taxonomy, partition, corpus, spec)?;
    let train = match &variant {
        Variant::Rel => {
            let pool: Vec<PassageId> = if spec.rel_sample_excludes_relevant {
                ctx.train_pool()
                    .into_iter()
                    .filter(|id| !ctx.relevant_train_all.contains(id))
                    .collect()
            } else {
                ctx.train_pool()
            };
            let mut store =
                ctx.sample_pool(&pool, spec.fractions.train_wiki, "rel store", "store:rel")?;
            store.extend(ctx.relevant_train_all.iter().cloned());
            // Cross-assigned passages (train-relevant but claimed by a test
            // store) stay excluded to preserve disjointness.
            let store: BTreeSet<PassageId> =
                store.difference(&ctx.test_union).cloned().collect();
            TrainStores::Shared(store)
        }
        Variant::Irr => TrainStores::Shared(ctx.irr_store()?),
        Variant::Rel1 => {
            let irr = ctx.irr_store()?;
            let mut stores = vec![irr.clone(); spec.clients];
            let last = spec.clients - 1;
            let mut enriched = irr;
            enriched.extend(ctx.relevant_train_all.iter().cloned());
            stores[last] = enriched.difference(&ctx.test[last]).cloned().collect();
            TrainStores::PerClient(stores)
        }
        Variant::Split => {
            let pool = ctx.train_pool();
            let mut stores = Vec::with_capacity(spec.clients);
            for client in 0..spec.clients {
                let sample = ctx.sample_pool(
                    &pool,
                    spec.fractions.split_wiki,
                    "split store",
                    &format!("store:split:{client}"),
                )?;
                let mut store = ctx.relevant_train_per[client].clone();
                store.extend(sample);
                stores.push(store.difference(&ctx.test[client]).cloned().collect());
            }
            TrainStores::PerClient(stores)
        }
        Variant::Custom(name) => {
            return Err(BenchmarkError::InvalidSpec(format!(
                "custom variant `{name}` must be built with build_composition"
            )));
        }
    };
    Ok(StoreAssignment { variant, seed: spec.seed, train, test: ctx.test })
}

/// Composition selectors for custom train stores derived from the rel
/// store's relevant / hard-negative / irrelevant partition (aggregated over
/// all clients' train QA).
#[derive(Debug, Clone, PartialEq)]
pub enum CompositionSelector {
    /// Keep all relevant passages; uniformly subsample the rest to the given
    /// fraction, preserving the hard-negative/irrelevant proportion.
    StorePct(f64),
    OnlyRelevant,
    HardNegIrrelevant,
    RelevantHardNeg,
    RelevantIrrelevant,
    Top1RelevantIrrelevant,
}

impl CompositionSelector {
    pub fn label(&self) -> String {
        match self {
            CompositionSelector::StorePct(p) => format!("pct:{p}"),
            CompositionSelector::OnlyRelevant => "only-relevant".into(),
            CompositionSelector::HardNegIrrelevant => "hn+irr".into(),
            CompositionSelector::RelevantHardNeg => "rel+hn".into(),
            CompositionSelector::RelevantIrrelevant => "rel+irr".into(),
            CompositionSelector::Top1RelevantIrrelevant => "top1-rel+irr".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self, BenchmarkError> {
        Ok(match s {
            "only-relevant" => CompositionSelector::OnlyRelevant,
            "hn+irr" => CompositionSelector::HardNegIrrelevant,
            "rel+hn" => CompositionSelector::RelevantHardNeg,
            "rel+irr" => CompositionSelector::RelevantIrrelevant,
            "top1-rel+irr" => CompositionSelector::Top1RelevantIrrelevant,
            other => {
                let Some(pct) = other.strip_prefix("pct:") else {
                    return Err(BenchmarkError::InvalidSpec(format!(
                        "unknown composition `{other}` (expected only-relevant, hn+irr, rel+hn, rel+irr, top1-rel+irr, or pct:<fraction>)"
                    )));
                };
                let value: f64 = pct.parse().map_err(|_| {
                    BenchmarkError::InvalidSpec(format!("bad composition fraction `{pct}`"))
                })?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(BenchmarkError::InvalidSpec(format!(
                        "composition fraction {value} must be in [0,1]"
                    )));
                }
                CompositionSelector::StorePct(value)
            }
        })
    }
}

/// Builds a shared custom train store by recomposing the rel store. Test
/// stores are the standard per-client test stores.
pub fn build_composition(
    selector: &CompositionSelector,
    taxonomy: &StoreTaxonomy,
    partition: &QaPartition,
    corpus: &Corpus,
    spec: &BenchmarkSpec,
) -> Result<StoreAssignment, BenchmarkError> {
    let rel = build_variant(Variant::Rel, taxonomy, partition, corpus, spec)?;
    let TrainStores::Shared(rel_store) = &rel.train else {
        unreachable!("rel variant is shared");
    };
    let train_ids = partition.all_train_ids();
    let relevant: BTreeSet<PassageId> = taxonomy
        .union_relevant(train_ids.iter().copied())?
        .intersection(rel_store)
        .cloned()
        .collect();
    let hard_negative: BTreeSet<PassageId> = taxonomy
        .union_hard_negative(train_ids.iter().copied())?
        .difference(&relevant)
        .cloned()
        .collect::<BTreeSet<_>>()
        .intersection(rel_store)
        .cloned()
        .collect();
    let irrelevant: BTreeSet<PassageId> = rel_store
        .iter()
        .filter(|id| !relevant.contains(*id) && !hard_negative.contains(*id))
        .cloned()
        .collect();

    let store: BTreeSet<PassageId> = match selector {
        CompositionSelector::OnlyRelevant => relevant,
        CompositionSelector::HardNegIrrelevant => {
            hard_negative.union(&irrelevant).cloned().collect()
        }
        CompositionSelector::RelevantHardNeg => relevant.union(&hard_negative).cloned().collect(),
        CompositionSelector::RelevantIrrelevant => relevant.union(&irrelevant).cloned().collect(),
        CompositionSelector::Top1RelevantIrrelevant => {
            let top1: BTreeSet<PassageId> = taxonomy
                .union_top1_relevant(train_ids.iter().copied())?
                .intersection(rel_store)
                .cloned()
                .collect();
            top1.union(&irrelevant).cloned().collect()
        }
        CompositionSelector::StorePct(p) => {
            let hn_pool: Vec<PassageId> = hard_negative.iter().cloned().collect();
            let irr_pool: Vec<PassageId> = irrelevant.iter().cloned().collect();
            let n_hn = (p * hn_pool.len() as f64).floor() as usize;
            let n_irr = (p * irr_pool.len() as f64).floor() as usize;
            let mut store = relevant;
            let mut rng = substream(spec.seed, "store:comp:pct:hn");
            store.extend(sample_items(&hn_pool, n_hn, &mut rng));
            let mut rng = substream(spec.seed, "store:comp:pct:irr");
            store.extend(sample_items(&irr_pool, n_irr, &mut rng));
            store
        }
    };

    Ok(StoreAssignment {
        variant: Variant::Custom(selector.label()),
        seed: spec.seed,
        train: TrainStores::Shared(store),
        test: rel.test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::index::{Bm25Index, Bm25Params};
    use crate::taxonomy::{categorize_all, RankWindow};
    use std::sync::Arc;

    fn dummy_qa(n: usize) -> Vec<QAPair> {
        (0..n)
            .map(|i| QAPair {
                id: format!("q{i:05}"),
                question: format!("question {i}"),
                answers: vec![format!("answer {i}")],
                client: 0,
            })
            .collect()
    }

    #[test]
    fn partition_counts_and_disjointness() {
        let qa = dummy_qa(100);
        let spec = BenchmarkSpec { clients: 2, shots: 16, seed: 7, ..Default::default() };
        let part = partition_qa(&qa, &spec).unwrap();
        assert_eq!(part.train[0].len(), 16);
        assert_eq!(part.train[1].len(), 16);
        let train_ids: BTreeSet<&str> = part.all_train_ids().into_iter().collect();
        for qa in part.dev.iter().chain(&part.test).flatten() {
            assert!(!train_ids.contains(qa.id.as_str()));
        }
        // All three splits pairwise disjoint.
        let all = part.all_ids();
        let dedup: BTreeSet<&str> = all.iter().copied().collect();
        assert_eq!(all.len(), dedup.len());
    }

    #[test]
    fn partition_is_deterministic() {
        let qa = dummy_qa(200);
        let spec = BenchmarkSpec { clients: 4, shots: 8, seed: 99, ..Default::default() };
        assert_eq!(partition_qa(&qa, &spec).unwrap(), partition_qa(&qa, &spec).unwrap());
    }

    #[test]
    fn partition_reassigns_client_field() {
        let qa = dummy_qa(60);
        let spec = BenchmarkSpec { clients: 3, shots: 4, seed: 1, ..Default::default() };
        let part = partition_qa(&qa, &spec).unwrap();
        for (client, group) in part.train.iter().enumerate() {
            assert!(group.iter().all(|qa| qa.client == client));
        }
    }

    #[test]
    fn per_client_test_size_is_floor_of_total() {
        let qa = dummy_qa(10_000);
        let spec = BenchmarkSpec { clients: 8, shots: 64, seed: 42, ..Default::default() };
        let part = partition_qa(&qa, &spec).unwrap();
        let remainder = 10_000 - 8 * 64;
        let dev_total = (spec.dev_fraction * remainder as f64).floor() as usize;
        let test_total = remainder - dev_total;
        for client in 0..8 {
            assert_eq!(part.test[client].len(), test_total / 8);
        }
    }

    #[test]
    fn insufficient_data_error_states_requirements() {
        let qa = dummy_qa(10);
        let spec = BenchmarkSpec { clients: 4, shots: 8, seed: 1, ..Default::default() };
        let err = partition_qa(&qa, &spec).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("40") && msg.contains("10"), "got: {msg}");
    }

    fn small_benchmark() -> (Corpus, Vec<QAPair>, StoreTaxonomy, QaPartition, BenchmarkSpec) {
        let (passages, qas) = crate::synth::generate(&crate::synth::SynthSpec {
            passages: 1200,
            qa: 60,
            clients: 4,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let corpus = Corpus::from_passages(passages).unwrap();
        let arcs: Vec<Arc<Passage>> = corpus.iter().cloned().collect();
        let index = Bm25Index::build(&arcs, Bm25Params::default()).unwrap();
        let spec = BenchmarkSpec {
            clients: 4,
            shots: 6,
            seed: 11,
            fractions: StoreFractions { train_wiki: 0.6, split_wiki: 0.1, test_wiki: 0.01 },
            ..Default::default()
        };
        let partition = partition_qa(&qas, &spec).unwrap();
        let taxonomy = categorize_all(&qas, &index, &corpus, RankWindow::default());
        (corpus, qas, taxonomy, partition, spec)
    }

    #[test]
    fn rel_contains_all_train_relevant() {
        let (corpus, _, taxonomy, partition, spec) = small_benchmark();
        let assignment =
            build_variant(Variant::Rel, &taxonomy, &partition, &corpus, &spec).unwrap();
        let relevant = taxonomy.union_relevant(partition.all_train_ids()).unwrap();
        let TrainStores::Shared(store) = &assignment.train else { panic!("rel is shared") };
        assert!(relevant.is_subset(store));
    }

    #[test]
    fn irr_excludes_all_train_relevant() {
        let (corpus, _, taxonomy, partition, spec) = small_benchmark();
        let assignment =
            build_variant(Variant::Irr, &taxonomy, &partition, &corpus, &spec).unwrap();
        let relevant = taxonomy.union_relevant(partition.all_train_ids()).unwrap();
        let TrainStores::Shared(store) = &assignment.train else { panic!("irr is shared") };
        assert!(store.is_disjoint(&relevant));
        let expected = (spec.fractions.train_wiki * corpus.len() as f64).floor() as usize;
        assert_eq!(store.len(), expected);
    }

    #[test]
    fn rel1_gives_relevant_to_last_client_only() {
        let (corpus, _, taxonomy, partition, spec) = small_benchmark();
        let assignment =
            build_variant(Variant::Rel1, &taxonomy, &partition, &corpus, &spec).unwrap();
        let irr = build_variant(Variant::Irr, &taxonomy, &partition, &corpus, &spec).unwrap();
        let TrainStores::Shared(irr_store) = &irr.train else { panic!() };
        let TrainStores::PerClient(stores) = &assignment.train else { panic!() };
        for store in &stores[..spec.clients - 1] {
            assert_eq!(store, irr_store);
        }
        let relevant = taxonomy.union_relevant(partition.all_train_ids()).unwrap();
        let last = &stores[spec.clients - 1];
        assert!(irr_store.is_subset(last));
        // Last client's store carries the relevant union (minus its own test
        // store, which is empty of train-relevant passages on synthetic data).
        assert!(relevant.is_subset(last));
    }

    #[test]
    fn split_covers_own_relevant_and_respects_disjointness() {
        let (corpus, _, taxonomy, partition, spec) = small_benchmark();
        let assignment =
            build_variant(Variant::Split, &taxonomy, &partition, &corpus, &spec).unwrap();
        for client in 0..spec.clients {
            let own = taxonomy.union_relevant(partition.train_ids(client)).unwrap();
            let store = assignment.train_store(client);
            assert!(own.is_subset(store), "client {client} split store misses own relevant");
            assert!(store.is_disjoint(&assignment.test[client]));
        }
    }

    #[test]
    fn all_variants_disjoint_and_test_covers_relevant() {
        let (corpus, _, taxonomy, partition, spec) = small_benchmark();
        for variant in [Variant::Rel, Variant::Irr, Variant::Rel1, Variant::Split] {
            let assignment =
                build_variant(variant.clone(), &taxonomy, &partition, &corpus, &spec).unwrap();
            for client in 0..spec.clients {
                assert!(
                    assignment.train_store(client).is_disjoint(&assignment.test[client]),
                    "variant {variant} client {client} train/test overlap"
                );
                let test_relevant =
                    taxonomy.union_relevant(partition.test_ids(client)).unwrap();
                assert!(
                    test_relevant.is_subset(&assignment.test[client]),
                    "variant {variant} client {client} test store misses relevant"
                );
            }
        }
    }

    #[test]
    fn manifests_are_byte_identical_across_reruns() {
        let (corpus, _, taxonomy, partition, spec) = small_benchmark();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        build_variant(Variant::Split, &taxonomy, &partition, &corpus, &spec)
            .unwrap()
            .save(&a)
            .unwrap();
        build_variant(Variant::Split, &taxonomy, &partition, &corpus, &spec)
            .unwrap()
            .save(&b)
            .unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn manifest_roundtrip() {
        let (corpus, _, taxonomy, partition, spec) = small_benchmark();
        let assignment =
            build_variant(Variant::Rel1, &taxonomy, &partition, &corpus, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stores.json");
        assignment.save(&path).unwrap();
        assert_eq!(StoreAssignment::load(&path).unwrap(), assignment);
    }

    #[test]
    fn splits_file_roundtrip() {
        let qa = dummy_qa(80);
        let spec = BenchmarkSpec { clients: 4, shots: 5, seed: 3, ..Default::default() };
        let part = partition_qa(&qa, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("splits.json");
        part.save(&path).unwrap();
        let loaded = QaPartition::load(&path, &qa).unwrap();
        assert_eq!(loaded, part);
    }

    #[test]
    fn composition_stores_recompose_the_rel_store() {
        let (corpus, _, taxonomy, partition, spec) = small_benchmark();
        let rel = build_variant(Variant::Rel, &taxonomy, &partition, &corpus, &spec).unwrap();
        let TrainStores::Shared(rel_store) = &rel.train else { panic!() };
        let relevant: BTreeSet<PassageId> = taxonomy
            .union_relevant(partition.all_train_ids())
            .unwrap()
            .intersection(rel_store)
            .cloned()
            .collect();

        let only_rel = build_composition(
            &CompositionSelector::OnlyRelevant,
            &taxonomy,
            &partition,
            &corpus,
            &spec,
        )
        .unwrap();
        let TrainStores::Shared(only_rel_store) = &only_rel.train else { panic!() };
        assert_eq!(only_rel_store, &relevant);

        let rel_irr = build_composition(
            &CompositionSelector::RelevantIrrelevant,
            &taxonomy,
            &partition,
            &corpus,
            &spec,
        )
        .unwrap();
        let hn_irr = build_composition(
            &CompositionSelector::HardNegIrrelevant,
            &taxonomy,
            &partition,
            &corpus,
            &spec,
        )
        .unwrap();
        let rel_hn = build_composition(
            &CompositionSelector::RelevantHardNeg,
            &taxonomy,
            &partition,
            &corpus,
            &spec,
        )
        .unwrap();
        let TrainStores::Shared(rel_irr_store) = &rel_irr.train else { panic!() };
        let TrainStores::Shared(hn_irr_store) = &hn_irr.train else { panic!() };
        let TrainStores::Shared(rel_hn_store) = &rel_hn.train else { panic!() };
        // rel+irr and rel+hn partition the rel store around the relevant set.
        assert!(relevant.is_subset(rel_irr_store));
        assert!(relevant.is_subset(rel_hn_store));
        assert!(hn_irr_store.is_disjoint(&relevant));
        let reunion: BTreeSet<PassageId> =
            rel_irr_store.union(rel_hn_store).cloned().collect();
        assert_eq!(&reunion, rel_store);

        // pct:1 keeps everything, pct:0 keeps only relevant.
        let full = build_composition(
            &CompositionSelector::StorePct(1.0),
            &taxonomy,
            &partition,
            &corpus,
            &spec,
        )
        .unwrap();
        let TrainStores::Shared(full_store) = &full.train else { panic!() };
        assert_eq!(full_store, rel_store);
        let none = build_composition(
            &CompositionSelector::StorePct(0.0),
            &taxonomy,
            &partition,
            &corpus,
            &spec,
        )
        .unwrap();
        let TrainStores::Shared(none_store) = &none.train else { panic!() };
        assert_eq!(none_store, &relevant);
    }

    #[test]
    fn composition_selector_parsing() {
        assert_eq!(
            CompositionSelector::parse("rel+irr").unwrap(),
            CompositionSelector::RelevantIrrelevant
        );
        assert_eq!(
            CompositionSelector::parse("pct:0.5").unwrap(),
            CompositionSelector::StorePct(0.5)
        );
        assert!(CompositionSelector::parse("bogus").is_err());
        assert!(CompositionSelector::parse("pct:1.5").is_err());
    }
}
