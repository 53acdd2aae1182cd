//! Separability scoring, method ranking and synthetic test pages.

mod fisher;
mod rank;
mod synth;

pub use fisher::{fisher_score, FisherResult, FISHER_CAP, FISHER_EPSILON};
pub use rank::{rank_methods, EntryError, ReportEntry, SeparabilityReport};
pub use synth::{synth_palimpsest, SyntheticSpec, DEFAULT_SYNTH_SEED};
