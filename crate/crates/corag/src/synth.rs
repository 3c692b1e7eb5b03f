//! Synthetic corpus generator for retrieval experiments.
//!
//! Each QA pair asks which entry a unique subject token is filed under; the
//! answer is a different unique token. The generator plants, per QA pair:
//! one answer-bearing entry (subject + topics + the answer repeated), a
//! block of lexically similar answer-free distractors (same subject, same
//! topics, decoy entity) that become hard negatives by construction, and a
//! couple of longer "echo" passages that carry the answer with both topic
//! words but without the subject, so they rank below the distractors and
//! land in the hard-negative band. Echoes keep every store variant trainable:
//! even stores stripped of all relevant passages retain reachable answer
//! evidence. Remaining passages are topic-free filler.

use crate::corpus::{Passage, QAPair};
use crate::seeding::substream;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least {required} passages for {qa} qa pairs ({per_qa} per pair), got {got}")]
    TooSmall {
        required: usize,
        got: usize,
        qa: usize,
        per_qa: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub passages: usize,
    pub qa: usize,
    pub clients: usize,
    pub seed: u64,
    /// Answer-free lookalikes planted per QA pair.
    pub distractors: usize,
    /// Long answer-bearing passages per QA pair that rank below the
    /// distractors (hard negatives that keep answer-free stores trainable).
    pub echoes: usize,
    /// Words per filler passage.
    pub filler_words: usize,
    /// Extra unique filler words inside each entry passage.
    pub entry_filler: usize,
    /// How often the entity recurs inside its entry passage (its term
    /// frequency); higher values separate entities from topic words.
    pub entity_mentions: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            passages: 5000,
            qa: 200,
            clients: 8,
            seed: 42,
            distractors: 5,
            echoes: 2,
            filler_words: 20,
            entry_filler: 2,
            entity_mentions: 3,
        }
    }
}

// Entity adjectives all start at 'd' or later; the question-template words
// below all start with 'a'..'c'. Untrained readers that end up with ties
// therefore emit a template word (never an entity), so exact match stays an
// earned signal rather than a tie-break accident.
const ADJECTIVES: [&str; 48] = [
    "dappled", "dove", "dun", "dusky", "ebony", "fabled", "faded", "fallow", "fawn", "flaxen",
    "frosted", "gilded", "glassy", "golden", "granite", "hazel", "hollow", "iron", "ivory",
    "jade", "jet", "khaki", "lilac", "lunar", "marble", "maroon", "mauve", "misty", "mottled",
    "navy", "ochre", "olive", "onyx", "opal", "pale", "pewter", "plum", "quiet", "russet",
    "sable", "saffron", "scarlet", "sepia", "silver", "slate", "smoky", "tawny", "velvet",
];

const NOUNS: [&str; 48] = [
    "anchor", "anvil", "arrow", "badger", "banner", "beacon", "bellows", "bison", "bridge",
    "candle", "chalice", "cipher", "comet", "compass", "crane", "falcon", "fiddle", "flint",
    "gable", "galleon", "gannet", "harbor", "heron", "kestrel", "kettle", "ladder", "lantern",
    "locket", "loom", "magpie", "marten", "mill", "oriole", "osprey", "otter", "plough",
    "quill", "raven", "saddle", "sextant", "shutter", "spindle", "sparrow", "thimble",
    "trellis", "vault", "weasel", "wren",
];

const TOPICS: [&str; 40] = [
    "archival", "botanical", "cartographic", "ceramic", "coastal", "colonial", "culinary",
    "customs", "dairy", "dockyard", "equine", "festival", "fiscal", "foundry", "garrison",
    "glacial", "guild", "harvest", "herbarium", "horological", "lapidary", "maritime",
    "medicinal", "mercantile", "mineral", "monastic", "municipal", "nautical", "orchard",
    "ornithological", "pastoral", "postal", "quarry", "railway", "riverine", "saline",
    "textile", "tidal", "vineyard", "viticultural",
];

// Filler vocabulary is disjoint from the adjective, noun, topic, and
// template word lists so filler passages never match query terms.
const FILLER: [&str; 64] = [
    "account", "addendum", "afternoon", "agenda", "alcove", "annex", "appendix", "assembly",
    "attic", "auditor", "balance", "basement", "bundle", "cabinet", "calendar", "carton",
    "cellar", "chamber", "clerk", "closet", "committee", "corridor", "courier", "crate",
    "cupboard", "custodian", "desk", "dispatch", "dossier", "drawer", "envelope", "errand",
    "evening", "folder", "footnote", "foyer", "hallway", "inkwell", "inventory", "janitor",
    "journal", "keeper", "ledger", "lobby", "locker", "mailing", "margin", "memo", "morning",
    "notebook", "pantry", "parcel", "porter", "postscript", "roster", "satchel", "schedule",
    "shelf", "stairwell", "stamp", "steward", "summary", "vestibule", "warden",
];

/// Generates `spec.passages` passages and `spec.qa` QA pairs. Deterministic
/// for a given spec.
pub fn generate(spec: &SynthSpec) -> Result<(Vec<Passage>, Vec<QAPair>), SynthError> {
    if spec.clients == 0 {
        return Err(SynthError::Invalid("clients must be >= 1".into()));
    }
    if spec.qa == 0 {
        return Err(SynthError::Invalid("qa count must be >= 1".into()));
    }
    let per_qa = 1 + spec.distractors + spec.echoes;
    let required = spec.qa * per_qa;
    if spec.passages < required {
        return Err(SynthError::TooSmall {
            required,
            got: spec.passages,
            qa: spec.qa,
            per_qa,
        });
    }
    // Reserve a block of adjective/noun pairs that are never used as
    // answers; distractors draw their lookalike pairs from it so no
    // distractor ever contains any QA's answer. Another block supplies the
    // per-QA subject tokens.
    let decoy_pool = 64usize;
    let grid = ADJECTIVES.len() * NOUNS.len();
    if 2 * spec.qa + decoy_pool > grid {
        return Err(SynthError::Invalid(format!(
            "qa count {} exceeds the {} unique answer/subject pairs available",
            spec.qa,
            (grid - decoy_pool) / 2
        )));
    }

    let mut rng = substream(spec.seed, "synth");
    let mut pair_indices: Vec<usize> = (0..grid).collect();
    pair_indices.shuffle(&mut rng);
    let answer_pairs = &pair_indices[..spec.qa];
    let subject_pairs = &pair_indices[spec.qa..2 * spec.qa];
    let decoy_pairs = &pair_indices[grid - decoy_pool..];

    // Entities are single tokens (adjective+noun concatenated), so each
    // answer is one unique word that never appears in filler or decoys.
    let entity = |idx: usize| -> String {
        format!("{}{}", ADJECTIVES[idx / NOUNS.len()], NOUNS[idx % NOUNS.len()])
    };
    {
        let mut seen = std::collections::HashSet::new();
        for idx in 0..grid {
            if !seen.insert(entity(idx)) {
                return Err(SynthError::Invalid(format!(
                    "entity lexicon collision on `{}`",
                    entity(idx)
                )));
            }
        }
    }
    // Filler words are sampled without replacement so every non-entity token
    // in a passage has term frequency 1. Entry passages stay dense (a small
    // fixed cap) so their vocabularies are dominated by the entity and topic
    // terms; the corpus bulk lives in the filler passages.
    let filler_count = spec.filler_words.min(FILLER.len());
    let entry_filler_count = spec.entry_filler.min(FILLER.len());
    let filler_text = |rng: &mut rand_chacha::ChaCha12Rng, n: usize| -> String {
        let mut pool: Vec<&str> = FILLER.to_vec();
        pool.shuffle(rng);
        pool[..n.min(pool.len())].join(" ")
    };
    let connectors = [
        "entry", "item", "note", "mark", "line", "page", "leaf", "slip", "tag", "card",
    ];
    if spec.entity_mentions == 0 || spec.entity_mentions > connectors.len() + 1 {
        return Err(SynthError::Invalid(format!(
            "entity_mentions must be in 1..={}",
            connectors.len() + 1
        )));
    }

    let id_width = spec.passages.to_string().len().max(5);
    let mut passages = Vec::with_capacity(spec.passages);
    let mut qas = Vec::with_capacity(spec.qa);
    let mut next_passage = 0usize;
    let mut push_passage = |passages: &mut Vec<Passage>, title: Option<String>, text: String| {
        let id = format!("p{:0width$}", next_passage, width = id_width);
        next_passage += 1;
        passages.push(Passage { id, title, text });
    };

    // The true entry repeats its subject once more than a distractor does,
    // which is the one retrieval cue separating them.
    let entry_text = |subject: &str,
                      token: &str,
                      t1: &str,
                      t2: &str,
                      subject_tf: usize,
                      filler: &str|
     -> String {
        let mut text = format!("{subject} filed as {token} under {t1} {t2} catalog");
        if subject_tf > 1 {
            text.push_str(&format!(" {subject} docket"));
        }
        for connector in connectors.iter().take(spec.entity_mentions - 1) {
            text.push_str(&format!(" {token} {connector}"));
        }
        text.push(' ');
        text.push_str(filler);
        text
    };

    // Topic pairs are unique per QA so no foreign entry ever matches both of
    // a question's topics; the retrieval neighborhood of a question is then
    // exactly its own entries and echoes plus weak single-topic matches.
    let mut topic_pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..TOPICS.len() {
        for b in (a + 1)..TOPICS.len() {
            topic_pairs.push((a, b));
        }
    }
    if spec.qa > topic_pairs.len() {
        return Err(SynthError::Invalid(format!(
            "qa count {} exceeds the {} unique topic pairs available",
            spec.qa,
            topic_pairs.len()
        )));
    }
    topic_pairs.shuffle(&mut rng);

    for (qa_idx, (&answer_idx, &subject_idx)) in
        answer_pairs.iter().zip(subject_pairs).enumerate()
    {
        let answer = entity(answer_idx);
        let subject = entity(subject_idx);
        let (t1_idx, t2_idx) = topic_pairs[qa_idx];
        let (t1, t2) = (TOPICS[t1_idx], TOPICS[t2_idx]);
        let question = format!("amid {t1} {t2} annals best citation about {subject}");

        // Planted relevant passage: the only subject-bearing passage that
        // also contains the answer, so it outranks its distractors.
        let planted_filler = filler_text(&mut rng, entry_filler_count);
        push_passage(
            &mut passages,
            Some(format!("{t1} {t2} catalog")),
            entry_text(&subject, &answer, t1, t2, 2, &planted_filler),
        );

        // Distractors: same subject, topics, and template, decoy entity.
        for _ in 0..spec.distractors {
            let decoy = entity(decoy_pairs[rng.gen_range(0..decoy_pairs.len())]);
            let distractor_filler = filler_text(&mut rng, entry_filler_count);
            push_passage(
                &mut passages,
                Some(format!("{t1} {t2} catalog")),
                entry_text(&subject, &decoy, t1, t2, 1, &distractor_filler),
            );
        }

        // Echoes: answer-bearing, both topics, no subject, padded long so
        // they rank in the hard-negative band rather than the top ranks.
        for _ in 0..spec.echoes {
            let echo_filler = filler_text(&mut rng, (entry_filler_count + 14).min(FILLER.len()));
            push_passage(
                &mut passages,
                Some(format!("{t1} {t2} shelves")),
                format!("{answer} appears across {t1} {t2} shelves {echo_filler}"),
            );
        }

        qas.push(QAPair {
            id: format!("q{qa_idx:04}"),
            question,
            answers: vec![answer],
            client: qa_idx % spec.clients,
        });
    }

    // Filler passages: no template words, no topics, no entities.
    while passages.len() < spec.passages {
        let body = filler_text(&mut rng, filler_count);
        let title = if passages.len() % 2 == 0 {
            Some(format!("{} bundle", FILLER[passages.len() % FILLER.len()]))
        } else {
            None
        };
        push_passage(&mut passages, title, body);
    }

    Ok((passages, qas))
}
