//! Rate-preserving conversion of transmit and receive filters between the
//! MIMO multiple access channel (MAC) and the MIMO broadcast channel (BC).
//!
//! Two filter-based dualities are provided, one with successive
//! interference cancellation / dirty-paper coding ([`duality_sic`]) and one
//! for purely linear transceivers ([`duality_linear`]). Both decorrelate
//! every user's link so its streams can be decoded separately, then solve a
//! Z-matrix system for per-stream scalings that keep every SINR and the
//! total transmit power unchanged. [`duality_covariance`] implements the
//! classical serial covariance conversion as a cross-check, and
//! [`harness`] drives scenarios, verification and benchmarks for the CLI.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod duality_covariance;
pub mod duality_linear;
pub mod duality_sic;
pub mod error;
pub mod filter_duality;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod rates;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use filter_duality::{BcReceivers, BcToMac, MacToBc, Parallelism};
pub use model::{
    BcFilterSet, CMat, ChannelSet, CovarianceSet, Domain, MacFilterSet, RateReport,
    ScalingSolution, System, SystemDimensions, C64,
};
pub use rates::InterferenceMode;
