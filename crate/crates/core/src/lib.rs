//! Achievable-rate analysis and coded simulation for labeled multidimensional
//! constellations over the vector AWGN channel.
//!
//! * [`constellation`] and [`registry`]: labeled point sets, Cartesian Gray
//!   products, file I/O, minimum distance and asymptotic gains.
//! * [`channel`]: AWGN noise, SNR conversions and seeded substreams.
//! * [`quadrature`] and [`rates`]: MI, per-bit MI, GMI and Shannon capacity.
//! * [`labeling`]: relabeling and pairwise-swap GMI optimization.
//! * [`demapper`]: exact, max-log and per-dimension LLR computation.
//! * [`ldpc`]: alist codes, systematic encoding and belief propagation.
//! * [`simulation`]: the coded bit-wise receiver BER harness.

pub mod channel;
pub mod constellation;
pub mod demapper;
pub mod error;
pub mod labeling;
pub mod ldpc;
pub mod quadrature;
pub mod rates;
pub mod registry;
pub mod simulation;

pub use error::{Error, Result};
