//! Joint transmit beamforming and dual-surface phase-shift optimization for
//! a multi-user downlink assisted by two reconfigurable intelligent surfaces.
//!
//! The optimizer alternates a WMMSE beamforming stage ([`beamformer`]) with
//! a majorization-minimization phase stage ([`phaseopt`]); [`optimizer`]
//! drives the outer loop and [`baselines`] provides the fixed and random
//! phase comparisons. [`bench`] runs Monte-Carlo campaigns to CSV.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod beamformer;
pub mod bench;
pub mod error;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod phaseopt;
pub mod selftest;

pub use error::{Error, Result};
pub use model::{BeamPair, ChannelSet, PhasePair, SystemConfig};
pub use numerics::{CMatrix, C64};
