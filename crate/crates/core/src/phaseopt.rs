//! Reflection-phase optimization with the beamformers held fixed.
//!
//! With `V`, `u`, `q` fixed, the weighted MSE is a quadratic form in the
//! stacked phase vector `φ = [φ1; φ2]`:
//!
//! ```text
//! f(φ) = φ^H Ψ φ − 2 Re[φ^H c*],     Σ_k q_k e_k = f(φ) + const
//! ```
//!
//! The diagonal blocks of `Ψ` are `Σ_k A_sk ⊙ B_s^T` with
//! `A_sk = q_k|u_k|² g_sk^H g_sk` and `B_s = H_s V_s V_s^H H_s^H`. Under
//! [`PhaseCoupling::Joint`] the off-diagonal block `Σ_k A_12k ⊙ B_21^T`
//! carries the cross term between the surfaces; under
//! [`PhaseCoupling::PerSurface`] it is dropped.
//!
//! Each iteration of [`phase_stage`] linearizes the most violated QoS
//! constraint around the current phases ([`sca_threshold`]), replaces
//! `φ^H Ψ φ` by its largest-eigenvalue majorizer ([`mm_linearize`]) and
//! solves the resulting unit-modulus problem in closed form with a scalar
//! multiplier found by bisection ([`multiplier_bisection`]).

use nalgebra::DMatrix;

use crate::beamformer::WmmseState;
use crate::error::{Error, Result};
use crate::model::{BeamPair, ChannelSet, PhasePair, SystemConfig};
use crate::numerics::{hadamard, hermitian_eig, CMatrix, C64};

/// Cap on doublings of the upper multiplier bracket.
pub const MULTIPLIER_MAX_DOUBLINGS: usize = 60;
/// Cap on bisection steps for the multiplier.
pub const MULTIPLIER_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseCoupling {
    /// Keep the surface-1/surface-2 cross term (coherent combining).
    #[default]
    Joint,
    /// Block-diagonal quadratic form, one majorizer per surface.
    PerSurface,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub max_iter: usize,
    /// Stop when the weighted MSE changes by at most `tol` relatively.
    pub tol: f64,
    /// Relative bracket width at which the multiplier bisection stops.
    pub bisection_eps: f64,
    pub coupling: PhaseCoupling,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-5,
            bisection_eps: 1e-12,
            coupling: PhaseCoupling::Joint,
        }
    }
}

/// Quadratic and linear coefficients of the phase subproblem, stacked as
/// `[surface 1; surface 2]`.
#[derive(Debug, Clone)]
pub struct PhaseQuadratics {
    n: usize,
    psi: CMatrix,
    psi_k: Vec<CMatrix>,
    c: Vec<C64>,
    c_k: Vec<Vec<C64>>,
    constant: f64,
    coupling: PhaseCoupling,
}

fn quad_form(m: &CMatrix, x: &[C64]) -> f64 {
    let n = x.len();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = C64::new(0.0, 0.0);
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        acc += x[i].conj() * row;
    }
    acc.re
}

/// `2 Re[x^H y]`.
fn two_re_inner(x: &[C64], y: &[C64]) -> f64 {
    2.0 * x.iter().zip(y).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
}

fn conj(v: &[C64]) -> Vec<C64> {
    v.iter().map(|z| z.conj()).collect()
}

fn matvec(m: &CMatrix, x: &[C64]) -> Vec<C64> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m[(i, j)] * x[j]).sum())
        .collect()
}

impl PhaseQuadratics {
    pub fn elements(&self) -> usize {
        self.n
    }

    pub fn users(&self) -> usize {
        self.psi_k.len()
    }

    pub fn coupling(&self) -> PhaseCoupling {
        self.coupling
    }

    /// Aggregate 2N×2N matrix `Ψ`.
    pub fn psi(&self) -> &CMatrix {
        &self.psi
    }

    pub fn psi_user(&self, k: usize) -> &CMatrix {
        &self.psi_k[k]
    }

    /// Aggregate stacked linear coefficient `c`.
    pub fn c(&self) -> &[C64] {
        &self.c
    }

    pub fn c_user(&self, k: usize) -> &[C64] {
        &self.c_k[k]
    }

    fn block(m: &CMatrix, n: usize, surface: usize) -> CMatrix {
        let o = surface * n;
        CMatrix::wrap(m.view((o, o), (n, n)).into_owned())
    }

    /// `Ψ1 = Σ_k A_1k ⊙ B_1^T`.
    pub fn psi1(&self) -> CMatrix {
        Self::block(&self.psi, self.n, 0)
    }

    pub fn psi2(&self) -> CMatrix {
        Self::block(&self.psi, self.n, 1)
    }

    pub fn psi1_user(&self, k: usize) -> CMatrix {
        Self::block(&self.psi_k[k], self.n, 0)
    }

    pub fn psi2_user(&self, k: usize) -> CMatrix {
        Self::block(&self.psi_k[k], self.n, 1)
    }

    pub fn c1(&self) -> &[C64] {
        &self.c[..self.n]
    }

    pub fn c2(&self) -> &[C64] {
        &self.c[self.n..]
    }

    /// `Σ_k q_k (1 + |u_k|² σ²)`, the part of the weighted MSE that does
    /// not depend on the phases.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// `f(φ) = φ^H Ψ φ − 2 Re[φ^H c*]`.
    pub fn objective(&self, ph: &PhasePair) -> f64 {
        let phi = ph.stacked();
        quad_form(&self.psi, &phi) - two_re_inner(&phi, &conj(&self.c))
    }

    /// `Σ_k q_k e_k` at `ph`.
    pub fn weighted_mse(&self, ph: &PhasePair) -> f64 {
        self.objective(ph) + self.constant
    }

    /// QoS left-hand side of user `k`: `2 Re[φ^H c_k*] − φ^H Ψ_k φ`.
    pub fn constraint_lhs(&self, k: usize, ph: &PhasePair) -> f64 {
        let phi = ph.stacked();
        two_re_inner(&phi, &conj(&self.c_k[k])) - quad_form(&self.psi_k[k], &phi)
    }
}

/// Builds `Ψ`, `Ψ_k`, `c`, `c_k` from the channels, beamformers and WMMSE
/// auxiliaries.
pub fn build_quadratics(
    ch: &ChannelSet,
    bp: &BeamPair,
    state: &WmmseState,
    cfg: &SystemConfig,
    coupling: PhaseCoupling,
) -> Result<PhaseQuadratics> {
    ch.check(cfg)?;
    if bp.v1.shape() != (cfg.m, cfg.k) || bp.v2.shape() != (cfg.m, cfg.k) {
        return Err(Error::Dimension(format!(
            "beamformers are {:?}, expected {}x{}",
            bp.v1.shape(),
            cfg.m,
            cfg.k
        )));
    }
    if state.u.len() != cfg.k || state.q.len() != cfg.k {
        return Err(Error::Dimension(format!(
            "WMMSE state has {} users, config has {}",
            state.u.len(),
            cfg.k
        )));
    }
    let n = cfg.n;
    // H_s V_s: column j is the surface-s incidence for stream j
    let hv1 = ch.h1.matmul(&bp.v1)?;
    let hv2 = ch.h2.matmul(&bp.v2)?;
    let b11 = hv1.matmul(&hv1.adjoint())?;
    let b22 = hv2.matmul(&hv2.adjoint())?;
    let b21 = hv2.matmul(&hv1.adjoint())?;
    let (b11t, b22t, b21t) = (b11.transpose(), b22.transpose(), b21.transpose());

    let mut psi = DMatrix::<C64>::zeros(2 * n, 2 * n);
    let mut c = vec![C64::new(0.0, 0.0); 2 * n];
    let mut psi_k = Vec::with_capacity(cfg.k);
    let mut c_k = Vec::with_capacity(cfg.k);
    let mut constant = 0.0;

    for k in 0..cfg.k {
        let (u, q) = (state.u[k], state.q[k]);
        let w = C64::new(q * u.norm_sqr(), 0.0);
        let g1 = CMatrix::wrap(ch.g1.view((k, 0), (1, ch.g1.cols())).into_owned());
        let g2 = CMatrix::wrap(ch.g2.view((k, 0), (1, ch.g2.cols())).into_owned());
        let a11 = g1.adjoint().matmul(&g1)?.scale(w);
        let a22 = g2.adjoint().matmul(&g2)?.scale(w);
        let mut user = DMatrix::<C64>::zeros(2 * n, 2 * n);
        user.view_mut((0, 0), (n, n))
            .copy_from(&*hadamard(&a11, &b11t)?);
        user.view_mut((n, n), (n, n))
            .copy_from(&*hadamard(&a22, &b22t)?);
        if coupling == PhaseCoupling::Joint {
            let a12 = g1.adjoint().matmul(&g2)?.scale(w);
            let cross = hadamard(&a12, &b21t)?;
            user.view_mut((0, n), (n, n)).copy_from(&*cross);
            user.view_mut((n, 0), (n, n)).copy_from(&cross.adjoint());
        }
        // diag(H_s v_sk q_k u_k^* g_sk)
        let coeff = u.conj() * q;
        let ck: Vec<C64> = (0..n)
            .map(|i| hv1[(i, k)] * coeff * ch.g1[(k, i)])
            .chain((0..n).map(|i| hv2[(i, k)] * coeff * ch.g2[(k, i)]))
            .collect();

        psi += &user;
        for (acc, z) in c.iter_mut().zip(&ck) {
            *acc += z;
        }
        constant += q * (1.0 + u.norm_sqr() * cfg.sigma2);
        psi_k.push(CMatrix::wrap(user));
        c_k.push(ck);
    }
    Ok(PhaseQuadratics {
        n,
        psi: CMatrix::wrap(psi),
        psi_k,
        c,
        c_k,
        constant,
        coupling,
    })
}

/// Linearized QoS constraint `2 Re[φ^H d] ≥ R̂` of one user around `φⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaLinearization {
    pub user: usize,
    /// Stacked `d = c_k* − Ψ_k φⁿ`.
    pub d: Vec<C64>,
    /// `R − φⁿ^H Ψ_k φⁿ`.
    pub r_hat: f64,
}

impl ScaLinearization {
    /// Linearized left-hand side `2 Re[φ^H d] + φⁿ^H Ψ_k φⁿ`, comparable
    /// with [`PhaseQuadratics::constraint_lhs`].
    pub fn lhs(&self, ph: &PhasePair, r: f64) -> f64 {
        two_re_inner(&ph.stacked(), &self.d) + (r - self.r_hat)
    }
}

pub fn sca_threshold(pq: &PhaseQuadratics, ph_n: &PhasePair, k: usize, r: f64) -> ScaLinearization {
    let phi = ph_n.stacked();
    let psi_phi = matvec(&pq.psi_k[k], &phi);
    let d = pq.c_k[k]
        .iter()
        .zip(&psi_phi)
        .map(|(c, p)| c.conj() - p)
        .collect();
    let r_hat = r - quad_form(&pq.psi_k[k], &phi);
    ScaLinearization { user: k, d, r_hat }
}

/// Tangent majorizer `g(φ|φⁿ) = N Σ_s λ_s − 2 Re[φ^H t] + const`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmLinearization {
    /// Stacked `t = c* + (Λ − Ψ) φⁿ`.
    pub t: Vec<C64>,
    /// Largest eigenvalue used for each surface (equal under joint coupling).
    pub lambda_max: [f64; 2],
    constant: f64,
    n: usize,
}

impl MmLinearization {
    /// Value of the majorizer at unit-modulus `ph`.
    pub fn surrogate(&self, ph: &PhasePair) -> f64 {
        self.n as f64 * (self.lambda_max[0] + self.lambda_max[1])
            - two_re_inner(&ph.stacked(), &self.t)
            + self.constant
    }
}

/// Largest eigenvalues of `Ψ`, computed once per phase stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Majorizer {
    lambda_max: [f64; 2],
}

impl Majorizer {
    pub fn new(pq: &PhaseQuadratics) -> Result<Self> {
        let lambda_max = match pq.coupling {
            PhaseCoupling::Joint => {
                let l = hermitian_eig(&pq.psi)?.max_eigenvalue().max(0.0);
                [l, l]
            }
            PhaseCoupling::PerSurface => [
                hermitian_eig(&pq.psi1())?.max_eigenvalue().max(0.0),
                hermitian_eig(&pq.psi2())?.max_eigenvalue().max(0.0),
            ],
        };
        Ok(Self { lambda_max })
    }

    pub fn lambda_max(&self) -> [f64; 2] {
        self.lambda_max
    }

    pub fn linearize(&self, pq: &PhaseQuadratics, ph_n: &PhasePair) -> MmLinearization {
        let phi = ph_n.stacked();
        let n = pq.n;
        let psi_phi = matvec(&pq.psi, &phi);
        // (Λ − Ψ) φⁿ
        let shifted: Vec<C64> = (0..2 * n)
            .map(|i| phi[i] * self.lambda_max[i / n] - psi_phi[i])
            .collect();
        let t = pq
            .c
            .iter()
            .zip(&shifted)
            .map(|(c, s)| c.conj() + s)
            .collect();
        let constant = phi
            .iter()
            .zip(&shifted)
            .map(|(p, s)| (p.conj() * s).re)
            .sum();
        MmLinearization {
            t,
            lambda_max: self.lambda_max,
            constant,
            n,
        }
    }
}

/// Majorizer of `f` at `ph_n`.
pub fn mm_linearize(pq: &PhaseQuadratics, ph_n: &PhasePair) -> Result<MmLinearization> {
    Ok(Majorizer::new(pq)?.linearize(pq, ph_n))
}

/// `φ_n = exp(j·arg(t_n + x d_n))`, the unit-modulus maximizer of
/// `2 Re[φ^H (t + x d)]`. A zero argument maps to phase 0.
pub fn phase_closed_form(t: &[C64], d: &[C64], x: f64) -> Result<PhasePair> {
    if t.len() != d.len() || !t.len().is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "closed-form phases need equal even lengths, got {} and {}",
            t.len(),
            d.len()
        )));
    }
    if !(x >= 0.0) {
        return Err(Error::Config(format!("multiplier must be >= 0, got {x}")));
    }
    let stacked: Vec<C64> = t
        .iter()
        .zip(d)
        .map(|(&a, &b)| {
            let z = a + b * x;
            if z.norm() > 0.0 {
                z / z.norm()
            } else {
                C64::new(1.0, 0.0)
            }
        })
        .collect();
    Ok(PhasePair::from_stacked(&stacked))
}

/// `Y(x) = 2 Re[φ(x)^H d]`.
pub fn linearized_value(ph: &PhasePair, d: &[C64]) -> f64 {
    two_re_inner(&ph.stacked(), d)
}

/// Smallest multiplier `x ≥ 0` whose closed-form phases satisfy
/// `Y(x) ≥ R̂`, located by bisection once a doubling bracket is found.
pub fn multiplier_bisection(
    t: &[C64],
    d: &[C64],
    r_hat: f64,
    eps: f64,
) -> Result<(f64, PhasePair)> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("bisection accuracy must be > 0, got {eps}")));
    }
    let y = |x: f64| -> Result<(f64, PhasePair)> {
        let ph = phase_closed_form(t, d, x)?;
        Ok((linearized_value(&ph, d), ph))
    };
    let (y0, ph0) = y(0.0)?;
    if y0 >= r_hat {
        return Ok((0.0, ph0));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut upper = y(hi)?;
    let mut doublings = 0;
    while upper.0 < r_hat {
        if doublings == MULTIPLIER_MAX_DOUBLINGS {
            return Err(Error::Infeasible(format!(
                "linearized QoS target {r_hat:.6e} unreachable, Y({hi:e}) = {:.6e}",
                upper.0
            )));
        }
        lo = hi;
        hi *= 2.0;
        upper = y(hi)?;
        doublings += 1;
    }
    for _ in 0..MULTIPLIER_MAX_ITER {
        if hi - lo <= eps * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let probe = y(mid)?;
        if probe.0 >= r_hat {
            hi = mid;
            upper = probe;
        } else {
            lo = mid;
        }
    }
    Ok((hi, upper.1))
}

/// Per-iteration record of the phase stage. Index 0 is the initial point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTrace {
    /// `f(φⁿ)`.
    pub objective: Vec<f64>,
    /// `Σ_k q_k e_k` at `φⁿ`.
    pub weighted_mse: Vec<f64>,
    /// `min_k (lhs_k(φⁿ) − R)`; negative when some user violates the QoS target.
    pub min_slack: Vec<f64>,
    /// Multiplier used to reach each iterate (0 for the initial point).
    pub multiplier: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the linearized constraint could not be met and an
    /// unconstrained MM step was taken instead.
    pub infeasible: bool,
}

#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub phases: PhasePair,
    pub trace: PhaseTrace,
}

fn min_slack(pq: &PhaseQuadratics, ph: &PhasePair, r: f64) -> (usize, f64) {
    (0..pq.users())
        .map(|k| (k, pq.constraint_lhs(k, ph) - r))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::INFINITY))
}

/// Majorization-minimization over the phases with the QoS constraint of
/// the most violated user linearized at every iterate.
pub fn phase_stage(
    ch: &ChannelSet,
    bp: &BeamPair,
    state: &WmmseState,
    ph_init: &PhasePair,
    cfg: &SystemConfig,
    pc: &PhaseConfig,
) -> Result<PhaseOutcome> {
    let pq = build_quadratics(ch, bp, state, cfg, pc.coupling)?;
    phase_stage_on(&pq, ph_init, cfg.r, pc)
}

/// [`phase_stage`] on prebuilt quadratics.
pub fn phase_stage_on(
    pq: &PhaseQuadratics,
    ph_init: &PhasePair,
    r: f64,
    pc: &PhaseConfig,
) -> Result<PhaseOutcome> {
    if ph_init.len() != pq.elements() {
        return Err(Error::Dimension(format!(
            "initial phases have {} elements, quadratics have {}",
            ph_init.len(),
            pq.elements()
        )));
    }
    let majorizer = Majorizer::new(pq)?;
    let mut phases = ph_init.clone();
    let mut trace = PhaseTrace::default();
    let record = |trace: &mut PhaseTrace, ph: &PhasePair, x: f64| {
        let f = pq.objective(ph);
        trace.objective.push(f);
        trace.weighted_mse.push(f + pq.constant());
        trace.min_slack.push(min_slack(pq, ph, r).1);
        trace.multiplier.push(x);
    };
    record(&mut trace, &phases, 0.0);

    for _ in 0..pc.max_iter {
        let (worst, _) = min_slack(pq, &phases, r);
        let sca = sca_threshold(pq, &phases, worst, r);
        let mm = majorizer.linearize(pq, &phases);
        let (x, next) = match multiplier_bisection(&mm.t, &sca.d, sca.r_hat, pc.bisection_eps) {
            Ok(found) => found,
            Err(Error::Infeasible(_)) => {
                trace.infeasible = true;
                (0.0, phase_closed_form(&mm.t, &sca.d, 0.0)?)
            }
            Err(e) => return Err(e),
        };
        let prev = *trace.weighted_mse.last().expect("initial record");
        phases = next;
        record(&mut trace, &phases, x);
        trace.iterations += 1;
        let cur = *trace.weighted_mse.last().expect("just pushed");
        if (cur - prev).abs() <= pc.tol * prev.abs().max(f64::MIN_POSITIVE) {
            trace.converged = true;
            break;
        }
    }
    Ok(PhaseOutcome { phases, trace })
}
