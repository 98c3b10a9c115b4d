//! Quick invariant checks run by `risopt selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{LN_2, TAU};

use crate::baselines::run_with_phases;
use crate::beamformer::{beamforming_stage, BeamformingConfig};
use crate::bench::{run_rows, Campaign, Scale};
use crate::error::Result;
use crate::model::{draw_channels, sinr_and_rate, PhasePair, SystemConfig, UNIT_MODULUS_TOL};
use crate::optimizer::{default_init, solve, AlternatingConfig, Objective};
use crate::phaseopt::{build_quadratics, mm_linearize, PhaseCoupling};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn desk(seed: u64) -> SystemConfig {
    SystemConfig {
        rng_seed: seed,
        ..Scale::Desk.base_config()
    }
}

fn random_phases(rng: &mut ChaCha8Rng, n: usize) -> Result<PhasePair> {
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
    PhasePair::from_angles(&a, &b)
}

fn rate_identity() -> Result<Check> {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let cfg = desk(seed);
        let ch = draw_channels(&cfg, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ph = random_phases(&mut rng, cfg.n)?;
        let init = default_init(&ch, &cfg).0;
        let out = beamforming_stage(&ch, &ph, &init, &cfg, &BeamformingConfig::default())?;
        let rate = sinr_and_rate(&ch, &ph, &out.beams, &cfg)?.sum_rate;
        let from_weights: f64 = out.state.q.iter().map(|q| q.ln()).sum::<f64>() / LN_2;
        worst = worst.max((rate - from_weights).abs());
    }
    Ok(Check {
        name: "rate equals sum of log weights",
        passed: worst <= 1e-8,
        detail: format!("max deviation {worst:.3e}"),
    })
}

fn majorizer() -> Result<Check> {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..5 {
        let cfg = desk(seed);
        let ch = draw_channels(&cfg, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let ph_n = random_phases(&mut rng, cfg.n)?;
        let init = default_init(&ch, &cfg).0;
        let bf = beamforming_stage(&ch, &ph_n, &init, &cfg, &BeamformingConfig::default())?;
        let pq = build_quadratics(&ch, &bf.beams, &bf.state, &cfg, PhaseCoupling::Joint)?;
        let mm = mm_linearize(&pq, &ph_n)?;
        let scale = pq.objective(&ph_n).abs().max(1.0);
        worst = worst.max((mm.surrogate(&ph_n) - pq.objective(&ph_n)).abs() / scale);
        for _ in 0..20 {
            let ph = random_phases(&mut rng, cfg.n)?;
            worst = worst.max((pq.objective(&ph) - mm.surrogate(&ph)) / scale);
        }
    }
    Ok(Check {
        name: "phase majorizer touches and bounds",
        passed: worst <= 1e-8,
        detail: format!("worst normalized gap {worst:.3e}"),
    })
}

fn feasibility() -> Result<Check> {
    let alt = AlternatingConfig {
        n_max: 10,
        ..Default::default()
    };
    let mut ok = true;
    for seed in 0..3 {
        let cfg = desk(seed);
        let ch = draw_channels(&cfg, 0);
        let out = solve(&ch, &cfg, &alt)?;
        ok &= out.beams.transmit_power() <= cfg.p_max * (1.0 + 1e-6);
        ok &= out
            .phases
            .stacked()
            .iter()
            .all(|z| (z.norm() - 1.0).abs() <= UNIT_MODULUS_TOL);
    }
    Ok(Check {
        name: "optimizer output is feasible",
        passed: ok,
        detail: "power budget and unit modulus on 3 draws".into(),
    })
}

fn rotation() -> Result<Check> {
    let alt = AlternatingConfig {
        n_max: 20,
        objective: Objective::SumRate,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let cfg = desk(seed);
        let ch = draw_channels(&cfg, 0);
        let fixed = run_with_phases(&ch, &cfg, &alt, &PhasePair::ones(cfg.n))?;
        let rotated = PhasePair::from_angles(&vec![1.3; cfg.n], &vec![-0.4; cfg.n])?;
        let same = run_with_phases(&ch, &cfg, &alt, &rotated)?;
        worst = worst.max((fixed.evaluation.report.sum_rate - same.evaluation.report.sum_rate).abs());
    }
    Ok(Check {
        name: "common surface rotation leaves rate unchanged",
        passed: worst <= 1e-6,
        detail: format!("max rate gap {worst:.3e}"),
    })
}

fn determinism() -> Result<Check> {
    let mut c = Campaign::preset(4, Scale::Desk, 7)?;
    c.draws = 2;
    c.alt.n_max = 3;
    c.grid = vec![0.0, 20.0];
    let a = run_rows(&c)?;
    let b = run_rows(&c)?;
    let same = a.len() == b.len()
        && a.iter().zip(&b).all(|(x, y)| {
            x.sum_rate.to_bits() == y.sum_rate.to_bits() && x.ee.to_bits() == y.ee.to_bits()
        });
    Ok(Check {
        name: "campaign rows are reproducible",
        passed: same,
        detail: format!("{} rows", a.len()),
    })
}

/// Runs every check; an `Err` means a check could not be evaluated at all.
pub fn run() -> Result<Vec<Check>> {
    Ok(vec![
        rate_identity()?,
        majorizer()?,
        feasibility()?,
        rotation()?,
        determinism()?,
    ])
}
