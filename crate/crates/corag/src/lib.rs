//! Desk-scale simulator for collaborative retrieval-augmented question
//! answering.
//!
//! The crate builds BM25 passage stores, categorizes passages relative to QA
//! pairs, trains a surrogate retriever+reader under a federated protocol with
//! shared stores, evaluates few-shot QA with EM/F1, and analyzes the client
//! participation game with its incentive mechanisms.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --example build_and_search      # corpus + BM25 index + top-k search
//! cargo run --example categorize_passages   # relevant / hard-negative / irrelevant
//! cargo run --example store_variants        # rel / irr / rel1 / split store manifests
//! cargo run --example train_federated       # collaborative vs local vs centralized
//! cargo run --example store_composition     # store composition and subsampling sweep
//! cargo run --example participation_game    # pure-strategy equilibria of the base game
//! cargo run --example incentive_mechanisms  # rewards, tiered access, reputation
//! ```
//!
//! The same functionality is scriptable through the `corag` binary; see the
//! README for the command pipeline.

pub mod benchmark;
pub mod cli;
pub mod corpus;
pub mod federation;
pub mod incentives;
pub mod index;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod synth;
pub mod taxonomy;

pub use corpus::{contains_answer, normalize, normalize_metric, Corpus, Passage, QAPair, TokenSeq};
pub use index::{Bm25Index, Bm25Params, RankedList};
pub use metrics::{exact_match, f1, Aggregation, EvalResult};
pub use model::ModelParams;
pub use taxonomy::{RankWindow, StoreTaxonomy, TaxonomyEntry};
