//! Corpus ingestion, the member/nonmember split protocol, overlap auditing
//! and per-snippet code features.

pub mod features;
pub mod overlap;
pub mod snippet;
pub mod splits;
pub mod synth;

pub use features::{extract_features, reserved_words, CodeFeatures, CodeLexer, FeatureName, TfIdfModel, TokenSplitter};
pub use overlap::{check_no_overlap, OverlapReport};
pub use snippet::{load_corpus, write_corpus, CodeSnippet, Language, MembershipLabel};
pub use splits::{build_splits, LabeledSnippet, Setting, SplitBundle, SplitSizes};
