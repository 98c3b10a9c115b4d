//! Transmit beamforming with the reflection phases held fixed.
//!
//! Each sweep of [`beamforming_stage`] performs block-coordinate ascent on
//! the weighted-MSE objective `Σ_k (ln q_k − q_k e_k)`:
//!
//! 1. MMSE decoder `u_k = s̄_k / J_k` ([`update_decoder`]),
//! 2. weight `q_k = 1 / e_k` ([`update_weight`]),
//! 3. regularized beamformers `(A + μI)⁻¹ h̄_k^H u_k q_k` with the power
//!    multiplier `μ` found by bisection ([`solve_power_dual`]).
//!
//! The default [`BeamformerUpdate::Joint`] treats `[v_1k; v_2k]` as one
//! 2M-vector over the stacked channel `[h̄_1k h̄_2k]`, which is the exact
//! minimizer for coherent combining. [`BeamformerUpdate::PerSurface`] keeps
//! the surfaces decoupled (no cross term between `v_1` and `v_2`).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{effective_channels, BeamPair, ChannelSet, EffectiveChannels, PhasePair, SystemConfig};
use crate::numerics::{hermitian_eig, CMatrix, HermitianEig, C64};

/// Relative residual `|f(μ) − P_max| / P_max` accepted by the power bisection.
pub const POWER_DUAL_TOL: f64 = 1e-8;
/// Iteration cap of the power bisection.
pub const POWER_DUAL_MAX_ITER: usize = 200;
/// Eigenvalues below this fraction of the largest are treated as zero.
const NULL_EIGENVALUE_REL: f64 = 1e-12;
/// Weights on null eigenvectors below this fraction of the total are rounding noise.
const NULL_WEIGHT_REL: f64 = 1e-18;
/// Most negative eigenvalue (relative to the largest) accepted as PSD.
const PSD_TOL_REL: f64 = 1e-9;

/// Coupling between the two surfaces' beamformers in the update step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BeamformerUpdate {
    #[default]
    Joint,
    PerSurface,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingConfig {
    pub max_iter: usize,
    /// Stop when the objective changes by less than `tol·max(|obj|, 1)`.
    pub tol: f64,
    pub update: BeamformerUpdate,
}

impl Default for BeamformingConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-4,
            update: BeamformerUpdate::Joint,
        }
    }
}

/// Auxiliary WMMSE variables for every user.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    /// Scalar MMSE decoders.
    pub u: Vec<C64>,
    /// Weights, `1 / e`.
    pub q: Vec<f64>,
    /// Mean square errors at `u`.
    pub e: Vec<f64>,
    /// Power multiplier of the last beamformer update.
    pub mu: f64,
}

impl WmmseState {
    /// Decoder and weight at their closed-form optima for `bp`.
    pub fn at(eff: &EffectiveChannels, bp: &BeamPair, sigma2: f64) -> Result<Self> {
        let (u, e) = decoder_and_mse(&eff.amplitudes(bp), sigma2);
        let q = update_weight(&e)?;
        Ok(Self { u, q, e, mu: 0.0 })
    }

    /// `Σ_k (ln q_k − q_k e_k)`.
    pub fn objective(&self) -> f64 {
        self.q
            .iter()
            .zip(&self.e)
            .map(|(&q, &e)| q.ln() - q * e)
            .sum()
    }

    /// Number of users whose surrogate `ln q_k − q_k e_k` is below `r`.
    pub fn qos_violations(&self, r: f64) -> usize {
        self.q
            .iter()
            .zip(&self.e)
            .filter(|(&q, &e)| q.ln() - q * e < r)
            .count()
    }
}

/// MSE of user `k` for decoder `u_k`:
/// `|u_k^* s̄_k − 1|² + |u_k|² (Σ_{j≠k} |s̄_{k,j}|² + σ²)`.
pub fn mse(u_k: C64, h1k: &[C64], h2k: &[C64], bp: &BeamPair, k: usize, sigma2: f64) -> f64 {
    let amplitude = |j: usize| -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (m, (&a, &b)) in h1k.iter().zip(h2k).enumerate() {
            s += a * bp.v1[(m, j)] + b * bp.v2[(m, j)];
        }
        s
    };
    let users = bp.v1.cols();
    let interference: f64 = (0..users)
        .filter(|&j| j != k)
        .map(|j| amplitude(j).norm_sqr())
        .sum();
    (u_k.conj() * amplitude(k) - 1.0).norm_sqr() + u_k.norm_sqr() * (interference + sigma2)
}

/// Returns `(u, e)` from the K×K amplitude matrix. `e` is evaluated as
/// `(I_k + σ²) / J_k`, which equals `1 − |s̄_k|²/J_k` without cancellation.
fn decoder_and_mse(amp: &DMatrix<C64>, sigma2: f64) -> (Vec<C64>, Vec<f64>) {
    let k = amp.nrows();
    let mut u = Vec::with_capacity(k);
    let mut e = Vec::with_capacity(k);
    for user in 0..k {
        let signal = amp[(user, user)];
        let interference: f64 = (0..k)
            .filter(|&j| j != user)
            .map(|j| amp[(user, j)].norm_sqr())
            .sum();
        let j_total = signal.norm_sqr() + interference + sigma2;
        u.push(signal / j_total);
        e.push((interference + sigma2) / j_total);
    }
    (u, e)
}

/// MMSE decoders `u_k = s̄_k / (Σ_j |s̄_{k,j}|² + σ²)`.
pub fn update_decoder(
    ch: &ChannelSet,
    ph: &PhasePair,
    bp: &BeamPair,
    cfg: &SystemConfig,
) -> Result<Vec<C64>> {
    let eff = effective_channels(ch, ph)?;
    Ok(decoder_and_mse(&eff.amplitudes(bp), cfg.sigma2).0)
}

/// `q_k = 1 / e_k`.
pub fn update_weight(e: &[f64]) -> Result<Vec<f64>> {
    e.iter()
        .map(|&ek| {
            if ek > 0.0 && ek.is_finite() {
                Ok(1.0 / ek)
            } else {
                Err(Error::Numerical {
                    message: format!("mean square error {ek} is not positive"),
                    min_eigenvalue: f64::NAN,
                })
            }
        })
        .collect()
}

struct DualBlock {
    eig: HermitianEig,
    /// `T^H · rhs`.
    projected: DMatrix<C64>,
    /// False for null directions whose weight is rounding noise.
    active: Vec<bool>,
}

/// Transmit power `f(μ) = Σ_i [M]_ii / (λ_i + μ)²` as a function of the
/// multiplier, over one or more diagonalized blocks.
pub struct PowerDual {
    blocks: Vec<DualBlock>,
    total_weight: f64,
}

impl PowerDual {
    /// Diagonalizes each `(A, rhs)` pair; `A` must be Hermitian PSD and
    /// `rhs` have one column per user.
    pub fn new(blocks: &[(&CMatrix, &CMatrix)]) -> Result<Self> {
        let mut out = Vec::with_capacity(blocks.len());
        let mut total_weight = 0.0;
        for &(a, rhs) in blocks {
            if a.rows() != rhs.rows() {
                return Err(Error::Dimension(format!(
                    "power dual block is {}x{} but rhs has {} rows",
                    a.rows(),
                    a.cols(),
                    rhs.rows()
                )));
            }
            let mut eig = hermitian_eig(a)?;
            let top = eig.max_eigenvalue().max(0.0);
            if eig.min_eigenvalue() < -PSD_TOL_REL * top.max(1.0) {
                return Err(Error::Numerical {
                    message: "power dual matrix is not positive semidefinite".into(),
                    min_eigenvalue: eig.min_eigenvalue(),
                });
            }
            for l in &mut eig.eigenvalues {
                *l = l.max(0.0);
            }
            let projected = eig.eigenvectors.adjoint().into_inner() * &**rhs;
            total_weight += projected.iter().map(|z| z.norm_sqr()).sum::<f64>();
            out.push(DualBlock {
                active: vec![true; eig.eigenvalues.len()],
                eig,
                projected,
            });
        }
        // Drop null-space directions that only carry rounding noise; the
        // right-hand side lies in the range of A in exact arithmetic.
        let top = out
            .iter()
            .map(|b| b.eig.max_eigenvalue())
            .fold(0.0, f64::max);
        for block in &mut out {
            for i in 0..block.eig.eigenvalues.len() {
                let lambda = block.eig.eigenvalues[i];
                let w = row_weight(&block.projected, i);
                if lambda <= NULL_EIGENVALUE_REL * top && w <= NULL_WEIGHT_REL * total_weight {
                    block.active[i] = false;
                }
            }
        }
        Ok(Self {
            blocks: out,
            total_weight,
        })
    }

    /// Diagonal of `M = T^H (Σ rhs rhs^H) T` paired with the eigenvalues.
    pub fn terms(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for (i, &l) in b.eig.eigenvalues.iter().enumerate() {
                if b.active[i] {
                    out.push((l, row_weight(&b.projected, i)));
                }
            }
        }
        out
    }

    /// Transmit power at multiplier `mu`.
    pub fn power(&self, mu: f64) -> f64 {
        self.terms()
            .into_iter()
            .map(|(l, w)| {
                let d = l + mu;
                if d > 0.0 {
                    w / (d * d)
                } else if w > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Bisection bracket `sqrt(Σ [M]_ii / P_max)`.
    pub fn mu_max(&self, p_max: f64) -> f64 {
        (self.total_weight / p_max).sqrt()
    }

    /// Smallest `μ ≥ 0` meeting the power budget: 0 when the budget is
    /// slack, otherwise the root of `f(μ) = P_max` in `(0, μ_max]`.
    pub fn solve(&self, p_max: f64) -> Result<f64> {
        if self.power(0.0) <= p_max {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0, self.mu_max(p_max));
        let mut residual = f64::INFINITY;
        for _ in 0..POWER_DUAL_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            let p = self.power(mid);
            residual = (p - p_max).abs() / p_max;
            if residual <= POWER_DUAL_TOL {
                return Ok(mid);
            }
            if p > p_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::Convergence {
            what: "power multiplier bisection",
            iterations: POWER_DUAL_MAX_ITER,
            residual,
        })
    }

    /// Beamformers `(A + μI)⁻¹ rhs` per block, computed in the eigenbasis.
    fn apply(&self, mu: f64) -> Vec<DMatrix<C64>> {
        self.blocks
            .iter()
            .map(|b| {
                let mut scaled = b.projected.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    let d = b.eig.eigenvalues[i] + mu;
                    let s = if b.active[i] && d > 0.0 { 1.0 / d } else { 0.0 };
                    row *= C64::new(s, 0.0);
                }
                &*b.eig.eigenvectors * scaled
            })
            .collect()
    }
}

fn row_weight(m: &DMatrix<C64>, i: usize) -> f64 {
    m.row(i).iter().map(|z| z.norm_sqr()).sum()
}

/// Multiplier for the two-block power equation with `A1`, `A2` Hermitian
/// PSD and right-hand sides `rhs1`, `rhs2` (one column per user).
pub fn solve_power_dual(
    a1: &CMatrix,
    a2: &CMatrix,
    rhs1: &CMatrix,
    rhs2: &CMatrix,
    p_max: f64,
) -> Result<f64> {
    PowerDual::new(&[(a1, rhs1), (a2, rhs2)])?.solve(p_max)
}

/// `A = Σ_k q_k |u_k|² h_k^H h_k` and `rhs = [h_k^H u_k q_k]_k` for the
/// rows `h_k` of `h`.
fn quadratic_terms(h: &DMatrix<C64>, state: &WmmseState) -> (CMatrix, CMatrix) {
    let k = h.nrows();
    let mut weighted = h.clone();
    let mut rhs_rows = h.clone();
    for user in 0..k {
        let w = (state.q[user] * state.u[user].norm_sqr()).sqrt();
        weighted.row_mut(user).scale_mut(w);
        let coeff = (state.u[user] * state.q[user]).conj();
        for z in rhs_rows.row_mut(user).iter_mut() {
            *z *= coeff;
        }
    }
    let a = weighted.adjoint() * &weighted;
    (CMatrix::wrap(a), CMatrix::wrap(rhs_rows.adjoint()))
}

/// The matrices entering the beamformer update for the given coupling.
pub fn update_matrices(
    eff: &EffectiveChannels,
    state: &WmmseState,
    update: BeamformerUpdate,
) -> Vec<(CMatrix, CMatrix)> {
    match update {
        BeamformerUpdate::Joint => vec![quadratic_terms(&eff.stacked(), state)],
        BeamformerUpdate::PerSurface => vec![
            quadratic_terms(&eff.h1, state),
            quadratic_terms(&eff.h2, state),
        ],
    }
}

fn beamformers_for(
    eff: &EffectiveChannels,
    state: &WmmseState,
    p_max: f64,
    update: BeamformerUpdate,
) -> Result<(BeamPair, f64)> {
    let mats = update_matrices(eff, state, update);
    let refs: Vec<(&CMatrix, &CMatrix)> = mats.iter().map(|(a, r)| (a, r)).collect();
    let dual = PowerDual::new(&refs)?;
    let mu = dual.solve(p_max)?;
    let mut parts = dual.apply(mu);
    let bp = match update {
        BeamformerUpdate::Joint => BeamPair::from_stacked(&parts[0]),
        BeamformerUpdate::PerSurface => {
            let v2 = parts.pop().expect("two blocks");
            let v1 = parts.pop().expect("two blocks");
            BeamPair {
                v1: CMatrix::wrap(v1),
                v2: CMatrix::wrap(v2),
            }
        }
    };
    Ok((bp, mu))
}

/// Beamformers for fixed decoders and weights, with the power multiplier
/// chosen so the budget holds. Returns the beams and `μ`.
pub fn update_beamformers(
    ch: &ChannelSet,
    ph: &PhasePair,
    state: &WmmseState,
    cfg: &SystemConfig,
    update: BeamformerUpdate,
) -> Result<(BeamPair, f64)> {
    let eff = effective_channels(ch, ph)?;
    if state.u.len() != cfg.k || state.q.len() != cfg.k {
        return Err(Error::Dimension(format!(
            "WMMSE state has {} users, config has {}",
            state.u.len(),
            cfg.k
        )));
    }
    beamformers_for(&eff, state, cfg.p_max, update)
}

/// Per-stage convergence record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeamformingTrace {
    /// Objective `Σ(ln q − q e)` at the initial beams and after every sweep.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Users below the QoS surrogate threshold at the final iterate.
    pub qos_violations: usize,
}

#[derive(Debug, Clone)]
pub struct BeamformingOutcome {
    pub beams: BeamPair,
    pub state: WmmseState,
    pub trace: BeamformingTrace,
}

/// Alternates decoder, weight and beamformer updates until the objective
/// settles or `bf.max_iter` sweeps have run.
pub fn beamforming_stage(
    ch: &ChannelSet,
    ph: &PhasePair,
    bp_init: &BeamPair,
    cfg: &SystemConfig,
    bf: &BeamformingConfig,
) -> Result<BeamformingOutcome> {
    ch.check(cfg)?;
    let eff = effective_channels(ch, ph)?;
    let mut beams = bp_init.clone();
    let mut state = WmmseState::at(&eff, &beams, cfg.sigma2)?;
    let mut trace = BeamformingTrace {
        objective: vec![state.objective()],
        ..Default::default()
    };
    for _ in 0..bf.max_iter {
        let (next, mu) = beamformers_for(&eff, &state, cfg.p_max, bf.update)?;
        beams = next;
        let prev = state.objective();
        state = WmmseState::at(&eff, &beams, cfg.sigma2)?;
        state.mu = mu;
        let obj = state.objective();
        trace.objective.push(obj);
        trace.iterations += 1;
        if (obj - prev).abs() <= bf.tol * prev.abs().max(1.0) {
            trace.converged = true;
            break;
        }
    }
    trace.qos_violations = state.qos_violations(cfg.r);
    Ok(BeamformingOutcome {
        beams,
        state,
        trace,
    })
}
