//! Outer alternating loop: beamformers for fixed phases, then phases for
//! fixed beamformers, until the objective stops improving.

use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::baselines::{baseline_phases, BaselineKind};
use crate::beamformer::{beamforming_stage, BeamformingConfig};
use crate::error::{Error, Result};
use crate::model::{
    effective_channels, ee_from_sum_rate, sinr_and_rate, total_power, BeamPair, ChannelSet,
    PhasePair, RateReport, SystemConfig,
};
use crate::numerics::{CMatrix, C64};
use crate::phaseopt::{phase_stage, PhaseConfig};

/// Quantity the outer loop tracks for convergence and best-iterate selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Sum rate over consumed power.
    #[default]
    EnergyEfficiency,
    SumRate,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ee" | "energy-efficiency" => Ok(Objective::EnergyEfficiency),
            "rate" | "sum-rate" | "sumrate" => Ok(Objective::SumRate),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternatingConfig {
    pub n_max: usize,
    /// Stop once the relative objective change drops below this.
    pub eps: f64,
    pub beamforming: BeamformingConfig,
    pub phase: PhaseConfig,
    pub objective: Objective,
    /// With the phase stage off the phases stay at their initial values.
    pub phase_stage: bool,
    /// Number of starts; extra starts use uniformly random phases.
    pub restarts: usize,
}

impl Default for AlternatingConfig {
    fn default() -> Self {
        Self {
            n_max: 200,
            eps: 1e-4,
            beamforming: BeamformingConfig::default(),
            phase: PhaseConfig::default(),
            objective: Objective::EnergyEfficiency,
            phase_stage: true,
            restarts: 1,
        }
    }
}

impl AlternatingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.beamforming.max_iter == 0 || !(self.beamforming.tol > 0.0) {
            return Err(Error::Config("beamforming stage needs max_iter >= 1 and tol > 0".into()));
        }
        if !(self.phase.tol > 0.0) || !(self.phase.bisection_eps > 0.0) {
            return Err(Error::Config("phase stage tolerances must be > 0".into()));
        }
        Ok(())
    }
}

/// Figures of merit at one (beams, phases) point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: RateReport,
    pub ee: f64,
    /// Total consumed power in watts.
    pub power: f64,
}

impl Evaluation {
    pub fn objective(&self, which: Objective) -> f64 {
        match which {
            Objective::EnergyEfficiency => self.ee,
            Objective::SumRate => self.report.sum_rate,
        }
    }
}

pub fn evaluate(
    ch: &ChannelSet,
    ph: &PhasePair,
    bp: &BeamPair,
    cfg: &SystemConfig,
) -> Result<Evaluation> {
    let report = sinr_and_rate(ch, ph, bp, cfg)?;
    let ee = ee_from_sum_rate(report.sum_rate, bp, cfg);
    Ok(Evaluation {
        ee,
        power: total_power(bp, cfg),
        report,
    })
}

/// One outer iteration, evaluated after the phase stage.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub sum_rate: f64,
    pub ee: f64,
    pub power: f64,
    pub min_rate: f64,
    pub objective: f64,
    /// Best objective seen so far, including the initial point.
    pub best_objective: f64,
    /// Sum rate and EE of the best iterate so far.
    pub best_sum_rate: f64,
    pub best_ee: f64,
    /// Users below the QoS threshold after the beamforming stage.
    pub qos_violations: usize,
    /// The phase stage fell back to an unconstrained step.
    pub phase_infeasible: bool,
    pub beamforming_iterations: usize,
    pub phase_iterations: usize,
    pub wall: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Objective at the initial point.
    pub initial_objective: f64,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn best_objective(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_objective, |r| r.best_objective)
    }

    /// Best-so-far `(sum rate, EE)` after each iteration, padded with the
    /// last value up to `len` entries.
    pub fn best_curve(&self, len: usize) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .records
            .iter()
            .map(|r| (r.best_sum_rate, r.best_ee))
            .collect();
        let last = out.last().copied().unwrap_or((f64::NAN, f64::NAN));
        out.resize(len.max(out.len()), last);
        out.truncate(len);
        out
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub beams: BeamPair,
    pub phases: PhasePair,
    pub trace: IterationTrace,
    /// Evaluation of the returned iterate.
    pub evaluation: Evaluation,
}

/// Matched-filter beams `v_sk ∝ h̄_sk^H` for phases `ph`, scaled to full power.
fn matched_filter(ch: &ChannelSet, cfg: &SystemConfig, ph: &PhasePair) -> Result<BeamPair> {
    let eff = effective_channels(ch, ph)?;
    let mut v1 = eff.h1.adjoint();
    let mut v2 = eff.h2.adjoint();
    let power = v1.frob_norm_sqr() + v2.frob_norm_sqr();
    if !(power > 0.0) || !power.is_finite() {
        // degenerate channels: user k gets antenna k mod M
        let (m, k) = (ch.antennas(), ch.users());
        let mut e = CMatrix::zeros(m, k).into_inner();
        for j in 0..k {
            e[(j % m, j)] = C64::new(1.0, 0.0);
        }
        v1 = CMatrix::wrap(e.clone());
        v2 = CMatrix::wrap(e);
    }
    let power = v1.frob_norm_sqr() + v2.frob_norm_sqr();
    let s = C64::new((cfg.p_max / power).sqrt(), 0.0);
    Ok(BeamPair {
        v1: v1.scale(s),
        v2: v2.scale(s),
    })
}

/// All-ones phases and matched-filter beams scaled to full power.
pub fn default_init(ch: &ChannelSet, cfg: &SystemConfig) -> (BeamPair, PhasePair) {
    let ph = PhasePair::ones(ch.elements());
    let bp = matched_filter(ch, cfg, &ph).expect("all-ones phases match the channel size");
    (bp, ph)
}

/// Matched-filter start for given phases.
pub fn init_for_phases(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    ph: &PhasePair,
) -> Result<(BeamPair, PhasePair)> {
    Ok((matched_filter(ch, cfg, ph)?, ph.clone()))
}

/// Alternating optimization from `init`. Returns the best iterate by the
/// configured objective, which need not be the last one.
pub fn optimize(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    alt: &AlternatingConfig,
    init: (BeamPair, PhasePair),
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    alt.validate()?;
    ch.check(cfg)?;
    let (mut beams, mut phases) = init;
    if !beams.is_power_feasible(cfg.p_max) {
        return Err(Error::Infeasible(format!(
            "initial beams use {:.6e} W, budget is {:.6e} W",
            beams.transmit_power(),
            cfg.p_max
        )));
    }
    let first = evaluate(ch, &phases, &beams, cfg)?;
    let mut best_obj = first.objective(alt.objective);
    let mut best = (beams.clone(), phases.clone(), first);
    let mut trace = IterationTrace {
        initial_objective: best_obj,
        ..Default::default()
    };
    let mut prev_obj = best_obj;

    for iteration in 1..=alt.n_max {
        let start = Instant::now();
        let bf = beamforming_stage(ch, &phases, &beams, cfg, &alt.beamforming)
            .map_err(|e| e.at_stage(iteration, "beamforming"))?;
        beams = bf.beams;
        let mut consider = |bp: &BeamPair, ph: &PhasePair| -> Result<Evaluation> {
            let ev = evaluate(ch, ph, bp, cfg)?;
            let obj = ev.objective(alt.objective);
            if obj > best_obj {
                best_obj = obj;
                best = (bp.clone(), ph.clone(), ev.clone());
            }
            Ok(ev)
        };
        let mut ev = consider(&beams, &phases)?;
        let (mut phase_iterations, mut phase_infeasible) = (0, false);
        if alt.phase_stage {
            let out = phase_stage(ch, &beams, &bf.state, &phases, cfg, &alt.phase)
                .map_err(|e| e.at_stage(iteration, "phase"))?;
            phases = out.phases;
            phase_iterations = out.trace.iterations;
            phase_infeasible = out.trace.infeasible;
            ev = consider(&beams, &phases)?;
        }
        let obj = ev.objective(alt.objective);
        trace.records.push(IterationRecord {
            sum_rate: ev.report.sum_rate,
            ee: ev.ee,
            power: ev.power,
            min_rate: ev.report.min_rate(),
            objective: obj,
            best_objective: best_obj,
            best_sum_rate: best.2.report.sum_rate,
            best_ee: best.2.ee,
            qos_violations: bf.trace.qos_violations,
            phase_infeasible,
            beamforming_iterations: bf.trace.iterations,
            phase_iterations,
            wall: start.elapsed(),
        });
        let change = (obj - prev_obj).abs();
        prev_obj = obj;
        if change <= alt.eps * obj.abs().max(f64::MIN_POSITIVE) {
            trace.converged = true;
            break;
        }
    }
    let (beams, phases, evaluation) = best;
    Ok(OptimizeOutcome {
        beams,
        phases,
        trace,
        evaluation,
    })
}

/// [`optimize`] from the default start plus `alt.restarts − 1` random-phase
/// starts drawn from `cfg.rng_seed`; keeps the best outcome.
pub fn solve(ch: &ChannelSet, cfg: &SystemConfig, alt: &AlternatingConfig) -> Result<OptimizeOutcome> {
    alt.validate()?;
    let mut best = optimize(ch, cfg, alt, default_init(ch, cfg))?;
    for restart in 1..alt.restarts {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(restart as u64);
        let ph = baseline_phases(BaselineKind::AllRandom, ch.elements(), &mut rng)?;
        let (bp, _) = init_for_phases(ch, cfg, &ph)?;
        let out = optimize(ch, cfg, alt, (bp, ph))?;
        if out.evaluation.objective(alt.objective) > best.evaluation.objective(alt.objective) {
            best = out;
        }
    }
    Ok(best)
}
