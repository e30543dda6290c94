//! Harm taxonomy management, multi-annotator incident annotation, and
//! inter-annotator agreement.
//!
//! The crate is organized around five pieces:
//!
//! * [`taxonomy`]: the versioned two-level harms taxonomy (nine harm types,
//!   69 specific harms in the bundled seed) with validation, lookup, diff,
//!   and a coverage comparison against other taxonomies.
//! * [`incidents`]: incident records ingested from CSV or JSON.
//! * [`annotation`]: annotation rounds and multi-label annotations, each
//!   harm marked actual or potential.
//! * [`agreement`]: Krippendorff's alpha with nominal and MASI distances.
//! * [`report`]: per-incident Sankey graphs and round summaries.
//!
//! [`Platform`] combines them with a durable journal file.
//!
//! ```
//! use harmlens::taxonomy;
//!
//! let seed = taxonomy::seed();
//! assert_eq!(seed.harm_types.len(), 9);
//! assert_eq!(seed.specific_harm_count(), 69);
//!
//! let addiction = taxonomy::lookup(seed, "psychological", Some("addiction")).unwrap();
//! assert_eq!(addiction.definition, "Emotional or material dependence on technology or a technology system.");
//! ```

pub mod agreement;
pub mod annotation;
pub mod incidents;
pub mod journal;
pub mod platform;
pub mod report;
pub mod taxonomy;

pub use agreement::{krippendorff_alpha, masi_distance, AgreementReport, Masi, Mode, Nominal, ReliabilityData, StatusHandling};
pub use annotation::{Annotation, HarmSelection, HarmStatus, Round, Submission};
pub use incidents::{Incident, IngestFormat};
pub use platform::{CiParams, Platform, PlatformError};
pub use report::{RoundSummary, SankeyGraph};
pub use taxonomy::Taxonomy;

// The guide's code blocks run as doctests, one module per chapter.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/taxonomy.md")]
    mod taxonomy {}
    #[doc = include_str!("../../../book/src/incidents.md")]
    mod incidents {}
    #[doc = include_str!("../../../book/src/rounds.md")]
    mod rounds {}
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
    #[doc = include_str!("../../../book/src/storage.md")]
    mod storage {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
