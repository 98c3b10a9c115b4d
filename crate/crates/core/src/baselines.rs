//! Reference phase schemes. Each keeps its phases fixed and still optimizes
//! the beamformers.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ChannelSet, PhasePair, SystemConfig};
use crate::optimizer::{init_for_phases, optimize, AlternatingConfig, OptimizeOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    /// Zero phase on every element.
    FixedPhase,
    /// Independent uniform phase per element.
    AllRandom,
    /// One uniform phase per surface, shared by its elements.
    SameRandom,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [
        BaselineKind::FixedPhase,
        BaselineKind::AllRandom,
        BaselineKind::SameRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::FixedPhase => "fixed",
            BaselineKind::AllRandom => "all-random",
            BaselineKind::SameRandom => "same-random",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

pub fn baseline_phases<R: Rng + ?Sized>(kind: BaselineKind, n: usize, rng: &mut R) -> Result<PhasePair> {
    if n == 0 {
        return Err(Error::Config("surfaces need at least one element".into()));
    }
    match kind {
        BaselineKind::FixedPhase => Ok(PhasePair::ones(n)),
        BaselineKind::AllRandom => {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
            PhasePair::from_angles(&a, &b)
        }
        BaselineKind::SameRandom => {
            let a = rng.random_range(0.0..TAU);
            let b = rng.random_range(0.0..TAU);
            PhasePair::from_angles(&vec![a; n], &vec![b; n])
        }
    }
}

/// Beamforming-only optimization with phases fixed by `kind`.
pub fn run_baseline<R: Rng + ?Sized>(
    kind: BaselineKind,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    alt: &AlternatingConfig,
    rng: &mut R,
) -> Result<OptimizeOutcome> {
    let ph = baseline_phases(kind, ch.elements(), rng)?;
    run_with_phases(ch, cfg, alt, &ph)
}

/// Beamforming-only optimization for given phases.
pub fn run_with_phases(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    alt: &AlternatingConfig,
    ph: &PhasePair,
) -> Result<OptimizeOutcome> {
    let alt = AlternatingConfig {
        phase_stage: false,
        ..alt.clone()
    };
    optimize(ch, cfg, &alt, init_for_phases(ch, cfg, ph)?)
}
