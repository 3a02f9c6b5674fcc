//! Corpus finalization and analysis: voting, agreement, splitting,
//! label correlation, summary statistics and synthetic corpora.

mod corr;
mod kappa;
mod split;
mod stats;
mod synth;
mod vote;

pub use corr::{correlation_matrix, CorrelationMatrix};
pub use kappa::{counts_from_triples, fleiss_kappa, KappaResult};
pub use split::{split_corpus, split_sizes, SplitOutcome, MIN_CONVERSATIONS, SWAP_CANDIDATES};
pub use stats::{dataset_stats, word_count, DatasetStats};
pub use synth::{
    empirical_joint, l1_distance, synth_corpus, transition_test, Prototypes, SynthConfig, SynthOutput, TransitionTest,
    PRIMARY_INTENT,
};
pub use vote::{
    majority_vote, parse_triples_csv, resolve, triple_indices, vote_triples, AnnotationTriple, Vocabulary, Vote,
    VoteOutcome,
};
