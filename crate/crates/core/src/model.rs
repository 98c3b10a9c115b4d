//! System model: configuration, Rayleigh channel draws, effective channels,
//! per-user SINR and rate, and the power / energy-efficiency objective.

use std::f64::consts::LN_2;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, C64};

/// Unit-modulus tolerance for phase vectors.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;
/// Slack allowed on the transmit power budget, relative to `P_max`.
pub const POWER_FEASIBILITY_TOL: f64 = 1e-6;

/// Converts a power in dB to linear units, `10^(dB/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// How the two reflected paths combine at a user's antenna.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Combining {
    /// `|h1 v1 + h2 v2|^2`, the amplitude sum seen by the MSE decoder.
    #[default]
    Coherent,
    /// `|h1 v1|^2 + |h2 v2|^2`, power sum per surface.
    Incoherent,
}

impl FromStr for Combining {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coherent" => Ok(Self::Coherent),
            "incoherent" => Ok(Self::Incoherent),
            other => Err(Error::Config(format!("unknown combining mode `{other}`"))),
        }
    }
}

impl fmt::Display for Combining {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Coherent => "coherent",
            Self::Incoherent => "incoherent",
        })
    }
}

/// Scalar parameters of the downlink system.
///
/// Powers are linear watts. `r` is the QoS threshold applied to the
/// weighted-MSE surrogate of each subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// BS antennas.
    pub m: usize,
    /// Single-antenna users.
    pub k: usize,
    /// Reflecting elements per surface.
    pub n: usize,
    pub p_max: f64,
    pub sigma2: f64,
    pub r: f64,
    /// Inverse power-amplifier efficiency.
    pub beta: f64,
    /// Static power per user terminal.
    pub p_u: f64,
    /// Static BS power.
    pub p_b: f64,
    /// Static power per reflecting element.
    pub p_n_b: f64,
    pub rng_seed: u64,
    pub combining: Combining,
    /// Number of surfaces whose element power is counted (1 or 2).
    pub ris_power_surfaces: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m: 8,
            k: 8,
            n: 16,
            p_max: db_to_linear(60.0),
            sigma2: 1.0,
            r: 6.6,
            beta: 1.25,
            p_u: 0.1,
            p_b: 1.0,
            p_n_b: 0.01,
            rng_seed: 0,
            combining: Combining::Coherent,
            ris_power_surfaces: 2,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.k == 0 || self.n == 0 {
            return fail(format!(
                "M, K, N must be >= 1 (got M={}, K={}, N={})",
                self.m, self.k, self.n
            ));
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return fail(format!("P_max must be positive, got {}", self.p_max));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return fail(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !(self.r.is_finite() && self.r >= 0.0) {
            return fail(format!("R must be >= 0, got {}", self.r));
        }
        if !(self.beta.is_finite() && self.beta >= 1.0) {
            return fail(format!("beta must be >= 1, got {}", self.beta));
        }
        for (name, v) in [("P_U", self.p_u), ("P_B", self.p_b), ("P_n_b", self.p_n_b)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(1..=2).contains(&self.ris_power_surfaces) {
            return fail(format!(
                "ris_power_surfaces must be 1 or 2, got {}",
                self.ris_power_surfaces
            ));
        }
        Ok(())
    }

    /// Static power `K·P_U + P_B + S·N·P_n_b` with `S` powered surfaces.
    pub fn static_power(&self) -> f64 {
        self.k as f64 * self.p_u
            + self.p_b
            + (self.ris_power_surfaces * self.n) as f64 * self.p_n_b
    }

    /// Applies `key = value` lines on top of `self`. Keys are the field
    /// names (`M`, `K`, `N`, `P_max`, `sigma2`, `R`, `beta`, `P_U`, `P_B`,
    /// `P_n_b`, `rng_seed`, `combining`, `ris_power_surfaces`) matched
    /// case-insensitively; `P_max_dB` is accepted as a dB alternative.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();
            let bad = |e: &dyn fmt::Display| {
                Error::Config(format!("line {}: `{key}`: {e}", lineno + 1))
            };
            let float = || value.parse::<f64>().map_err(|e| bad(&e));
            let count = || value.parse::<usize>().map_err(|e| bad(&e));
            match key.as_str() {
                "m" => self.m = count()?,
                "k" => self.k = count()?,
                "n" => self.n = count()?,
                "p_max" => self.p_max = float()?,
                "p_max_db" => self.p_max = db_to_linear(float()?),
                "sigma2" => self.sigma2 = float()?,
                "r" => self.r = float()?,
                "beta" => self.beta = float()?,
                "p_u" => self.p_u = float()?,
                "p_b" => self.p_b = float()?,
                "p_n_b" => self.p_n_b = float()?,
                "rng_seed" => self.rng_seed = value.parse::<u64>().map_err(|e| bad(&e))?,
                "combining" => self.combining = value.parse()?,
                "ris_power_surfaces" => self.ris_power_surfaces = count()?,
                _ => return Err(bad(&"unknown key")),
            }
        }
        Ok(())
    }

    /// Parses a config file over the defaults and validates the result.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_kv_str(&text)
    }

    /// Renders the config in the `key = value` format read by [`Self::apply_kv`].
    pub fn to_kv_string(&self) -> String {
        format!(
            "M = {}\nK = {}\nN = {}\nP_max = {:e}\nsigma2 = {:e}\nR = {}\nbeta = {}\n\
             P_U = {}\nP_B = {}\nP_n_b = {}\nrng_seed = {}\ncombining = {}\nris_power_surfaces = {}\n",
            self.m,
            self.k,
            self.n,
            self.p_max,
            self.sigma2,
            self.r,
            self.beta,
            self.p_u,
            self.p_b,
            self.p_n_b,
            self.rng_seed,
            self.combining,
            self.ris_power_surfaces
        )
    }
}

/// BS→RIS and RIS→user channel blocks for both surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// N×M, BS to surface 1.
    pub h1: CMatrix,
    /// N×M, BS to surface 2.
    pub h2: CMatrix,
    /// K×N, row k is surface 1 to user k.
    pub g1: CMatrix,
    /// K×N, row k is surface 2 to user k.
    pub g2: CMatrix,
}

impl ChannelSet {
    pub fn new(h1: CMatrix, h2: CMatrix, g1: CMatrix, g2: CMatrix) -> Result<Self> {
        let (n, m) = (h1.rows(), h1.cols());
        let k = g1.rows();
        if h2.shape() != (n, m) || g1.shape() != (k, n) || g2.shape() != (k, n) {
            return Err(Error::Dimension(format!(
                "inconsistent channel blocks: H1 {:?}, H2 {:?}, G1 {:?}, G2 {:?}",
                h1.shape(),
                h2.shape(),
                g1.shape(),
                g2.shape()
            )));
        }
        Ok(Self { h1, h2, g1, g2 })
    }

    pub fn antennas(&self) -> usize {
        self.h1.cols()
    }

    pub fn elements(&self) -> usize {
        self.h1.rows()
    }

    pub fn users(&self) -> usize {
        self.g1.rows()
    }

    pub(crate) fn check(&self, cfg: &SystemConfig) -> Result<()> {
        if (self.antennas(), self.users(), self.elements()) != (cfg.m, cfg.k, cfg.n) {
            return Err(Error::Dimension(format!(
                "channels are M={}, K={}, N={} but config says M={}, K={}, N={}",
                self.antennas(),
                self.users(),
                self.elements(),
                cfg.m,
                cfg.k,
                cfg.n
            )));
        }
        Ok(())
    }
}

/// Draws i.i.d. CN(0, 1) channels.
///
/// The generator is ChaCha20 keyed by `cfg.rng_seed` on stream
/// `draw_index`, filled in the order H1, H2, G1, G2 (row-major), so any
/// draw can be regenerated independently of the others.
pub fn draw_channels(cfg: &SystemConfig, draw_index: u64) -> ChannelSet {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(draw_index);
    let mut block = |rows: usize, cols: usize| {
        let entries: Vec<C64> = (0..rows * cols)
            .map(|_| complex_gaussian(&mut rng))
            .collect();
        CMatrix::wrap(DMatrix::from_row_slice(rows, cols, &entries))
    };
    let h1 = block(cfg.n, cfg.m);
    let h2 = block(cfg.n, cfg.m);
    let g1 = block(cfg.k, cfg.n);
    let g2 = block(cfg.k, cfg.n);
    ChannelSet { h1, h2, g1, g2 }
}

/// One circularly-symmetric complex Gaussian sample with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Unit-modulus reflection coefficients of both surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePair {
    phi1: Vec<C64>,
    phi2: Vec<C64>,
}

impl PhasePair {
    pub fn new(phi1: Vec<C64>, phi2: Vec<C64>) -> Result<Self> {
        if phi1.len() != phi2.len() {
            return Err(Error::Dimension(format!(
                "phase vectors have lengths {} and {}",
                phi1.len(),
                phi2.len()
            )));
        }
        for (i, z) in phi1.iter().chain(&phi2).enumerate() {
            if !((z.norm() - 1.0).abs() <= UNIT_MODULUS_TOL) {
                return Err(Error::Shape(format!(
                    "phase entry {i} has modulus {}, expected 1",
                    z.norm()
                )));
            }
        }
        Ok(Self { phi1, phi2 })
    }

    /// Zero phase on every element.
    pub fn ones(n: usize) -> Self {
        Self {
            phi1: vec![C64::new(1.0, 0.0); n],
            phi2: vec![C64::new(1.0, 0.0); n],
        }
    }

    pub fn from_angles(theta1: &[f64], theta2: &[f64]) -> Result<Self> {
        let polar = |t: &[f64]| t.iter().map(|&a| C64::from_polar(1.0, a)).collect();
        Self::new(polar(theta1), polar(theta2))
    }

    /// Splits a stacked `[phi1; phi2]` vector.
    pub(crate) fn from_stacked(stacked: &[C64]) -> Self {
        let n = stacked.len() / 2;
        Self {
            phi1: stacked[..n].to_vec(),
            phi2: stacked[n..].to_vec(),
        }
    }

    pub fn stacked(&self) -> Vec<C64> {
        self.phi1.iter().chain(&self.phi2).copied().collect()
    }

    pub fn phi1(&self) -> &[C64] {
        &self.phi1
    }

    pub fn phi2(&self) -> &[C64] {
        &self.phi2
    }

    pub fn len(&self) -> usize {
        self.phi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi1.is_empty()
    }
}

/// Transmit beamformers for the two surfaces; column k serves user k.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPair {
    /// M×K, routed via surface 1.
    pub v1: CMatrix,
    /// M×K, routed via surface 2.
    pub v2: CMatrix,
}

impl BeamPair {
    pub fn new(v1: CMatrix, v2: CMatrix) -> Result<Self> {
        if v1.shape() != v2.shape() {
            return Err(Error::Dimension(format!(
                "beamformers have shapes {:?} and {:?}",
                v1.shape(),
                v2.shape()
            )));
        }
        Ok(Self { v1, v2 })
    }

    pub fn zeros(m: usize, k: usize) -> Self {
        Self {
            v1: CMatrix::zeros(m, k),
            v2: CMatrix::zeros(m, k),
        }
    }

    /// `‖V1‖_F² + ‖V2‖_F²`.
    pub fn transmit_power(&self) -> f64 {
        self.v1.frob_norm_sqr() + self.v2.frob_norm_sqr()
    }

    pub fn is_power_feasible(&self, p_max: f64) -> bool {
        self.transmit_power() <= p_max * (1.0 + POWER_FEASIBILITY_TOL)
    }

    /// Splits a stacked 2M×K matrix `[V1; V2]`.
    pub(crate) fn from_stacked(w: &DMatrix<C64>) -> Self {
        let m = w.nrows() / 2;
        Self {
            v1: CMatrix::wrap(w.rows(0, m).into_owned()),
            v2: CMatrix::wrap(w.rows(m, m).into_owned()),
        }
    }
}

/// Composite channels `h̄_{1k} = g_{1k} Φ1 H1` and `h̄_{2k}`, one row per user.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    /// K×M.
    pub h1: CMatrix,
    /// K×M.
    pub h2: CMatrix,
}

impl EffectiveChannels {
    /// Row k of `[h̄1 h̄2]`, the 1×2M channel seen by a stacked beamformer.
    pub(crate) fn stacked(&self) -> DMatrix<C64> {
        let (k, m) = self.h1.shape();
        let mut h = DMatrix::zeros(k, 2 * m);
        h.columns_mut(0, m).copy_from(&*self.h1);
        h.columns_mut(m, m).copy_from(&*self.h2);
        h
    }

    /// K×K matrix of received amplitudes `s̄_{k,j} = h̄_{1k} v_{1j} + h̄_{2k} v_{2j}`.
    pub fn amplitudes(&self, bp: &BeamPair) -> DMatrix<C64> {
        &*self.h1 * &*bp.v1 + &*self.h2 * &*bp.v2
    }
}

fn scaled_columns(g: &CMatrix, phi: &[C64]) -> DMatrix<C64> {
    let mut out = (**g).clone();
    for (mut col, &p) in out.column_iter_mut().zip(phi) {
        col *= p;
    }
    out
}

pub fn effective_channels(ch: &ChannelSet, ph: &PhasePair) -> Result<EffectiveChannels> {
    if ph.len() != ch.elements() {
        return Err(Error::Dimension(format!(
            "phase vectors have {} elements, surfaces have {}",
            ph.len(),
            ch.elements()
        )));
    }
    let h1 = scaled_columns(&ch.g1, ph.phi1()) * &*ch.h1;
    let h2 = scaled_columns(&ch.g2, ph.phi2()) * &*ch.h2;
    Ok(EffectiveChannels {
        h1: CMatrix::wrap(h1),
        h2: CMatrix::wrap(h2),
    })
}

/// Per-user link quality for one (channels, phases, beamformers) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    /// `log2(1 + SINR_k)` in bits/s/Hz.
    pub rate: Vec<f64>,
    pub sum_rate: f64,
}

impl RateReport {
    pub fn min_rate(&self) -> f64 {
        self.rate.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Sum of `ln(1 + SINR_k)`.
    pub fn sum_rate_nats(&self) -> f64 {
        self.sum_rate * LN_2
    }
}

fn check_beams(bp: &BeamPair, cfg: &SystemConfig) -> Result<()> {
    if bp.v1.shape() != (cfg.m, cfg.k) || bp.v2.shape() != (cfg.m, cfg.k) {
        return Err(Error::Dimension(format!(
            "beamformers are {:?}, expected {}x{}",
            bp.v1.shape(),
            cfg.m,
            cfg.k
        )));
    }
    Ok(())
}

/// SINR and rate of each user under `cfg.combining`.
pub fn sinr_and_rate(
    ch: &ChannelSet,
    ph: &PhasePair,
    bp: &BeamPair,
    cfg: &SystemConfig,
) -> Result<RateReport> {
    ch.check(cfg)?;
    check_beams(bp, cfg)?;
    let eff = effective_channels(ch, ph)?;
    // power[k][j]: power of stream j at user k
    let power: DMatrix<f64> = match cfg.combining {
        Combining::Coherent => eff.amplitudes(bp).map(|z| z.norm_sqr()),
        Combining::Incoherent => {
            (&*eff.h1 * &*bp.v1).map(|z| z.norm_sqr())
                + (&*eff.h2 * &*bp.v2).map(|z| z.norm_sqr())
        }
    };
    let mut sinr = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        let signal = power[(k, k)];
        let interference: f64 = (0..cfg.k).filter(|&j| j != k).map(|j| power[(k, j)]).sum();
        sinr.push(signal / (interference + cfg.sigma2));
    }
    let rate: Vec<f64> = sinr.iter().map(|s| (1.0 + s).log2()).collect();
    let sum_rate = rate.iter().sum();
    Ok(RateReport {
        sinr,
        rate,
        sum_rate,
    })
}

/// `beta·‖V‖² + K·P_U + P_B + S·N·P_n_b` in watts.
pub fn total_power(bp: &BeamPair, cfg: &SystemConfig) -> f64 {
    cfg.beta * bp.transmit_power() + cfg.static_power()
}

/// Sum rate over `‖V1‖² + ‖V2‖² + P_static`.
pub fn ee_objective(
    ch: &ChannelSet,
    ph: &PhasePair,
    bp: &BeamPair,
    cfg: &SystemConfig,
) -> Result<f64> {
    let report = sinr_and_rate(ch, ph, bp, cfg)?;
    Ok(ee_from_sum_rate(report.sum_rate, bp, cfg))
}

pub(crate) fn ee_from_sum_rate(sum_rate: f64, bp: &BeamPair, cfg: &SystemConfig) -> f64 {
    sum_rate / (bp.transmit_power() + cfg.static_power())
}
