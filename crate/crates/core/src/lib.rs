//! Private aggregation of teacher votes.
//!
//! An ensemble of teachers, each trained on a disjoint slice of sensitive
//! data, labels public queries. Labels are released through the noisy-max
//! mechanism ([`mechanism`]) and every release is charged to a moments
//! accountant ([`accountant`]) that turns the running total into an
//! `(epsilon, delta)` guarantee. The [`oracle`] module recomputes the
//! mechanism's exact output distribution by quadrature so every bound can be
//! checked on small instances, and [`simulation`] drives synthetic ensembles.
//! [`interface`] holds the file formats and the command-line front end.

pub mod accountant;
pub mod error;
pub mod interface;
pub mod mechanism;
pub mod oracle;
pub mod rng;
pub mod simulation;

pub use accountant::{
    compose, data_dependent_moment, data_independent_moment, delta_for_eps, eps_for_delta,
    per_query_moment, q_threshold, q_upper_bound, strong_composition_eps, Guarantee, LambdaGrid,
    LedgerMetadata, Method, MomentSource, MomentTotals, PrivacyLedger, QueryMoment,
};
pub use error::{Error, Result};
pub use mechanism::{
    gap, laplace_inverse_cdf, noisy_argmax, plurality, tally_votes, MechanismParams, NoisyMax,
    VoteHistogram,
};

/// Version stamped into every file this crate writes.
pub const FORMAT_VERSION: u32 = 1;
