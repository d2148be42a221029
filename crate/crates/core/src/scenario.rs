//! Physical world: array geometry, BS→IRS channels, target response and the
//! active-IRS power/echo model.
//!
//! Frame conventions:
//! - the BS carries a half-wavelength ULA along the x-axis;
//! - every IRS is a UPA in the y–z plane (horizontal axis ŷ, vertical axis ẑ,
//!   boresight x̂). A direction `u` maps to `cos θ = u·ẑ`,
//!   `sin θ cos φ = u·ŷ` and `sin θ sin φ = u·x̂`.
//! - element `n = k·N_h + m` sits at vertical index `k`, horizontal index `m`,
//!   which is the ordering of `a_v ⊗ a_h`.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, cr, diag_mat, scale_cols, scale_rows, CMat, CVec, J};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const STREAM_CHANNEL: u64 = 0x4348_414e;
const STREAM_BETA: u64 = 0x4245_5441;

/// All physical and system constants of one sensing scenario.
///
/// JSON field names follow the symbols used throughout the crate
/// (`M`, `N_h`, `P_t`, ...). Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N_h")]
    pub n_h: usize,
    #[serde(rename = "N_v")]
    pub n_v: usize,
    #[serde(rename = "L")]
    pub l: usize,
    /// Maximum BS transmit power (W).
    #[serde(rename = "P_t")]
    pub p_t: f64,
    /// Maximum per-IRS transmit power (W).
    #[serde(rename = "P_s")]
    pub p_s: f64,
    pub a_max: f64,
    pub sigma_r_dbm: f64,
    pub sigma_b_dbm: f64,
    /// Radar dwell time in symbols, split evenly over the IRS slots.
    #[serde(rename = "T_c")]
    pub t_c: usize,
    #[serde(rename = "K_db")]
    pub k_db: f64,
    pub carrier_hz: f64,
    /// Element spacings (m); half a wavelength when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_v: Option<f64>,
    pub bs_pos: [f64; 3],
    pub irs_pos: Vec<[f64; 3]>,
    pub target_pos: [f64; 3],
    pub rcs_m2: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// Two active IRSs serving a target in the BS's blind zone.
    fn default() -> Self {
        Self {
            m: 16,
            n_h: 4,
            n_v: 4,
            l: 2,
            p_t: 20.0,
            p_s: 0.1,
            a_max: 8.0,
            sigma_r_dbm: -80.0,
            sigma_b_dbm: -80.0,
            t_c: 100,
            k_db: 5.0,
            carrier_hz: 3.5e9,
            d_h: None,
            d_v: None,
            bs_pos: [0.0, 0.0, 0.0],
            irs_pos: vec![[-5.0, 10.0, 0.0], [-5.0, 20.0, 0.0]],
            target_pos: [5.0, 15.0, 0.0],
            rcs_m2: 1.0,
            seed: 1,
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn spacing_h(&self) -> f64 {
        self.d_h.unwrap_or(0.5 * self.wavelength())
    }

    pub fn spacing_v(&self) -> f64 {
        self.d_v.unwrap_or(0.5 * self.wavelength())
    }

    pub fn n(&self) -> usize {
        self.n_h * self.n_v
    }

    pub fn sigma_r2(&self) -> f64 {
        dbm_to_watts(self.sigma_r_dbm)
    }

    pub fn sigma_b2(&self) -> f64 {
        dbm_to_watts(self.sigma_b_dbm)
    }

    /// Symbols per IRS slot, `T_c / L`.
    pub fn slot_len(&self) -> usize {
        self.t_c / self.l
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.m < 1 || self.n_h < 1 || self.n_v < 1 || self.l < 1 {
            return bad("M, N_h, N_v and L must be at least 1");
        }
        if !(self.p_t > 0.0 && self.p_s > 0.0) {
            return bad("P_t and P_s must be positive");
        }
        if !(self.a_max >= 1.0) {
            return bad("a_max must be at least 1");
        }
        if self.t_c == 0 || self.t_c % self.l != 0 {
            return bad("T_c must be a positive multiple of L");
        }
        if !(self.carrier_hz > 0.0) || !(self.rcs_m2 > 0.0) {
            return bad("carrier_hz and rcs_m2 must be positive");
        }
        if !(self.spacing_h() > 0.0 && self.spacing_v() > 0.0) {
            return bad("element spacings must be positive");
        }
        if self.irs_pos.len() != self.l {
            return Err(Error::InvalidConfig(format!(
                "irs_pos has {} entries but L = {}",
                self.irs_pos.len(),
                self.l
            )));
        }
        let mut all = vec![self.bs_pos, self.target_pos];
        all.extend(self.irs_pos.iter().copied());
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if distance(all[i], all[j]) == 0.0 {
                    return bad("all positions must be distinct");
                }
            }
        }
        Ok(())
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// (θ, φ) of direction `from → to` in the IRS frame.
pub fn upa_angles(from: [f64; 3], to: [f64; 3]) -> (f64, f64) {
    let d = sub(to, from);
    let r = distance(to, from);
    let (ux, uy, uz) = (d[0] / r, d[1] / r, d[2] / r);
    (uz.clamp(-1.0, 1.0).acos(), ux.atan2(uy))
}

/// splitmix64 finaliser, used to derive independent RNG streams.
pub fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, stream, index))
}

/// Sample from CN(0, 1).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Steering vector of the IRS together with its angular derivatives.
#[derive(Debug, Clone)]
pub struct SteeringBundle {
    pub a: CVec,
    pub da_theta: CVec,
    pub da_phi: CVec,
    /// Purely imaginary generators with `da = zeta ⊙ a`.
    pub zeta_theta: CVec,
    pub zeta_phi: CVec,
}

impl SteeringBundle {
    pub fn a_diag(&self) -> CMat {
        diag_mat(&self.a)
    }
}

/// Just the steering vector `a_v(θ) ⊗ a_h(θ, φ)`.
pub fn steering_vector(theta: f64, phi: f64, cfg: &ScenarioConfig) -> CVec {
    let lambda = cfg.wavelength();
    let kv = 2.0 * PI * cfg.spacing_v() / lambda * theta.cos();
    let kh = 2.0 * PI * cfg.spacing_h() / lambda * theta.sin() * phi.cos();
    CVec::from_fn(cfg.n(), |n, _| {
        let (k, m) = ((n / cfg.n_h) as f64, (n % cfg.n_h) as f64);
        (J * (kv * k + kh * m)).exp()
    })
}

pub fn steering_bundle(theta: f64, phi: f64, cfg: &ScenarioConfig) -> SteeringBundle {
    let lambda = cfg.wavelength();
    let gh = 2.0 * PI * cfg.spacing_h() / lambda;
    let gv = 2.0 * PI * cfg.spacing_v() / lambda;
    let a = steering_vector(theta, phi, cfg);
    let n = cfg.n();
    let zeta_theta = CVec::from_fn(n, |i, _| {
        let (k, m) = ((i / cfg.n_h) as f64, (i % cfg.n_h) as f64);
        J * (gh * theta.cos() * phi.cos() * m - gv * theta.sin() * k)
    });
    let zeta_phi = CVec::from_fn(n, |i, _| {
        let m = (i % cfg.n_h) as f64;
        -J * gh * theta.sin() * phi.sin() * m
    });
    let da_theta = zeta_theta.component_mul(&a);
    let da_phi = zeta_phi.component_mul(&a);
    SteeringBundle { a, da_theta, da_phi, zeta_theta, zeta_phi }
}

/// Half-wavelength BS ULA response along the x-axis towards direction `u`.
fn bs_steering(cfg: &ScenarioConfig, toward: [f64; 3]) -> CVec {
    let d = sub(toward, cfg.bs_pos);
    let cos_x = d[0] / distance(toward, cfg.bs_pos);
    CVec::from_fn(cfg.m, |m, _| (J * PI * m as f64 * cos_x).exp())
}

/// BS → IRS channel `G` (N × M, linear amplitude units).
#[derive(Debug, Clone)]
pub struct Channel {
    pub g: CMat,
}

/// Free-space power gain `(λ / 4πd)^2`.
pub fn free_space_gain(cfg: &ScenarioConfig, d: f64) -> f64 {
    (cfg.wavelength() / (4.0 * PI * d)).powi(2)
}

/// Deterministic LoS part of the BS → IRS channel (unit-modulus entries).
pub fn los_channel(cfg: &ScenarioConfig, irs_index: usize) -> CMat {
    let irs = cfg.irs_pos[irs_index];
    let (theta, phi) = upa_angles(irs, cfg.bs_pos);
    let a_irs = steering_vector(theta, phi, cfg);
    let a_bs = bs_steering(cfg, irs);
    &a_irs * a_bs.adjoint()
}

pub fn generate_channel(cfg: &ScenarioConfig, irs_index: usize) -> Channel {
    let irs = cfg.irs_pos[irs_index];
    let pl = free_space_gain(cfg, distance(irs, cfg.bs_pos));
    let k = 10f64.powf(cfg.k_db / 10.0);
    let w_los = (k / (k + 1.0)).sqrt();
    let w_nlos = (1.0 / (k + 1.0)).sqrt();
    let los = los_channel(cfg, irs_index);
    let mut rng = rng_for(cfg.seed, STREAM_CHANNEL, irs_index as u64);
    let nlos = CMat::from_fn(cfg.n(), cfg.m, |_, _| complex_gaussian(&mut rng));
    Channel { g: (los * cr(w_los) + nlos * cr(w_nlos)) * cr(pl.sqrt()) }
}

/// Ground-truth target parameters seen from one IRS.
#[derive(Debug, Clone, Copy)]
pub struct TargetParams {
    pub theta: f64,
    pub phi: f64,
    pub beta: Complex64,
}

pub fn target_params(cfg: &ScenarioConfig, irs_index: usize) -> Result<TargetParams> {
    let irs = cfg.irs_pos[irs_index];
    let d = distance(irs, cfg.target_pos);
    if d == 0.0 {
        return Err(Error::ColocatedTarget(irs_index));
    }
    let (theta, phi) = upa_angles(irs, cfg.target_pos);
    let lambda = cfg.wavelength();
    let gain2 = lambda * lambda * cfg.rcs_m2 / ((4.0 * PI).powi(3) * d.powi(4));
    let mut rng = rng_for(cfg.seed, STREAM_BETA, irs_index as u64);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    Ok(TargetParams { theta, phi, beta: Complex64::from_polar(gain2.sqrt(), phase) })
}

/// Per-IRS reflection coefficients `ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectCoeffs {
    pub psi: CVec,
}

impl ReflectCoeffs {
    pub fn new(psi: CVec) -> Self {
        Self { psi }
    }

    pub fn zeros(n: usize) -> Self {
        Self { psi: CVec::zeros(n) }
    }

    pub fn max_amplitude(&self) -> f64 {
        self.psi.iter().fold(0.0f64, |a, z| a.max(z.norm()))
    }

    pub fn diag(&self) -> CMat {
        diag_mat(&self.psi)
    }

    pub fn gram(&self) -> CMat {
        &self.psi * self.psi.adjoint()
    }
}

/// Transmit sample covariance of one IRS slot.
#[derive(Debug, Clone)]
pub struct TransmitCovariance {
    pub r: CMat,
}

impl TransmitCovariance {
    pub fn isotropic(m: usize, power: f64) -> Self {
        Self { r: CMat::identity(m, m) * cr(power / m as f64) }
    }

    pub fn power(&self) -> f64 {
        crate::linalg::real_trace(&self.r)
    }
}

/// Round-trip response `E = β a a^T`.
pub fn target_response(bundle: &SteeringBundle, tp: &TargetParams) -> CMat {
    (&bundle.a * bundle.a.transpose()) * tp.beta
}

/// Left-hand side of the per-IRS power constraint, in watts.
///
/// Evaluates the four terms literally with `Ψ = diag(ψ)` and the full
/// response matrix: amplified echo, amplified first-hop noise, amplified
/// incident signal and the two noise injections.
pub fn irs_power_used(
    psi: &ReflectCoeffs,
    r_s: &TransmitCovariance,
    ch: &Channel,
    bundle: &SteeringBundle,
    tp: &TargetParams,
    sigma_r2: f64,
) -> Result<f64> {
    let n = ch.g.nrows();
    if psi.psi.len() != n || bundle.a.len() != n || r_s.r.nrows() != ch.g.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "psi {} / steering {} / G {}x{} / R_s {}",
            psi.psi.len(),
            bundle.a.len(),
            n,
            ch.g.ncols(),
            r_s.r.nrows()
        )));
    }
    let big_psi = psi.diag();
    let pep = &big_psi * target_response(bundle, tp) * &big_psi;
    let incident = &ch.g * &r_s.r * ch.g.adjoint();
    let t1 = (&pep * &incident * pep.adjoint()).trace().re;
    let t2 = sigma_r2 * (&pep * pep.adjoint()).trace().re;
    let t3 = (&big_psi * &incident * big_psi.adjoint()).trace().re;
    let t4 = 2.0 * sigma_r2 * (&big_psi * big_psi.adjoint()).trace().re;
    Ok(t1 + t2 + t3 + t4)
}

/// Quartic and quadratic parts of the IRS power as a function of a common
/// amplitude scale α: `power(αψ) = quartic·α⁴ + quadratic·α²`.
pub fn power_scaling_parts(
    psi: &ReflectCoeffs,
    r_s: &TransmitCovariance,
    ch: &Channel,
    bundle: &SteeringBundle,
    tp: &TargetParams,
    sigma_r2: f64,
) -> (f64, f64) {
    let p = psi.psi.component_mul(&bundle.a);
    let p2 = p.norm_squared();
    let gp = ch.g.transpose() * &p;
    // p^T G R G^H p^*
    let echo_in = (gp.transpose() * &r_s.r * gp.conjugate())[(0, 0)].re;
    let quartic = tp.beta.norm_sqr() * p2 * (echo_in + sigma_r2 * p2);
    let incident = &ch.g * &r_s.r * ch.g.adjoint();
    let mut quadratic = 2.0 * sigma_r2 * psi.psi.norm_squared();
    for (i, z) in psi.psi.iter().enumerate() {
        quadratic += z.norm_sqr() * incident[(i, i)].re;
    }
    (quartic, quadratic)
}

/// Largest α with `power(αψ) ≤ cap`.
pub fn amplitude_for_power(quartic: f64, quadratic: f64, cap: f64) -> f64 {
    let x = if quartic <= 0.0 {
        if quadratic <= 0.0 {
            return f64::INFINITY;
        }
        cap / quadratic
    } else {
        // α² solves quartic·x² + quadratic·x − cap = 0
        2.0 * cap / (quadratic + (quadratic * quadratic + 4.0 * quartic * cap).sqrt())
    };
    x.sqrt()
}

/// Received block at the BS for one slot, with explicit noise draws.
pub fn simulate_echo<R: Rng + ?Sized>(
    ch: &Channel,
    bundle: &SteeringBundle,
    tp: &TargetParams,
    psi: &ReflectCoeffs,
    s: &CMat,
    sigma_r2: f64,
    sigma_b2: f64,
    rng: &mut R,
) -> Result<CMat> {
    let (n, m) = ch.g.shape();
    if s.nrows() != m || psi.psi.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "S has {} rows for M = {}, psi has {} entries for N = {}",
            s.nrows(),
            m,
            psi.psi.len(),
            n
        )));
    }
    let t = s.ncols();
    let gt_psi = scale_cols(&ch.g.transpose(), &psi.psi);
    let e_psi_g = target_response(bundle, tp) * scale_rows(&psi.psi, &ch.g);
    let mut noise = |rows: usize, var: f64| {
        let sd = var.sqrt();
        CMat::from_fn(rows, t, |_, _| complex_gaussian(rng) * sd)
    };
    let z1 = noise(n, sigma_r2);
    let z2 = noise(n, sigma_r2);
    let z = noise(m, sigma_b2);
    let e_psi = target_response(bundle, tp) * psi.diag();
    Ok(&gt_psi * (e_psi_g * s + e_psi * z1 + z2) + z)
}

/// Everything the optimisers need about one IRS.
#[derive(Debug, Clone)]
pub struct IrsSite {
    pub index: usize,
    pub channel: Channel,
    pub target: TargetParams,
    pub bundle: SteeringBundle,
}

/// Whether the IRSs amplify (with thermal noise and a power budget) or are
/// ideal unit-modulus passive reflectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IrsModel {
    Active,
    Passive,
}

/// A fully instantiated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub sites: Vec<IrsSite>,
    pub model: IrsModel,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut sites = Vec::with_capacity(cfg.l);
        for l in 0..cfg.l {
            let target = target_params(&cfg, l)?;
            let bundle = steering_bundle(target.theta, target.phi, &cfg);
            sites.push(IrsSite { index: l, channel: generate_channel(&cfg, l), target, bundle });
        }
        Ok(Self { cfg, sites, model: IrsModel::Active })
    }

    pub fn passive(mut self) -> Self {
        self.model = IrsModel::Passive;
        self
    }

    /// IRS thermal noise power actually in effect (zero for passive IRSs).
    pub fn sigma_r2(&self) -> f64 {
        match self.model {
            IrsModel::Active => self.cfg.sigma_r2(),
            IrsModel::Passive => 0.0,
        }
    }

    pub fn sigma_b2(&self) -> f64 {
        self.cfg.sigma_b2()
    }

    pub fn a_max(&self) -> f64 {
        match self.model {
            IrsModel::Active => self.cfg.a_max,
            IrsModel::Passive => 1.0,
        }
    }

    /// Whether the per-IRS power budget is enforced.
    pub fn has_power_cap(&self) -> bool {
        self.model == IrsModel::Active
    }

    pub fn power_used(&self, l: usize, psi: &ReflectCoeffs, r_s: &TransmitCovariance) -> f64 {
        let site = &self.sites[l];
        irs_power_used(psi, r_s, &site.channel, &site.bundle, &site.target, self.sigma_r2())
            .expect("scenario dimensions are consistent")
    }

    pub fn fim_context(&self) -> crate::fim::FimContext {
        crate::fim::FimContext {
            slot_len: self.cfg.slot_len() as f64,
            sigma_r2: self.sigma_r2(),
            sigma_b2: self.sigma_b2(),
        }
    }
}

/// Uniform-phase reflection vector with unit amplitude.
pub fn random_phases<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    DVector::from_fn(n, |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::fro_norm;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig { m: 4, n_h: 4, n_v: 4, ..ScenarioConfig::default() }
    }

    #[test]
    fn broadside_steering_is_all_ones() {
        let cfg = small_cfg();
        let b = steering_bundle(PI / 2.0, PI / 2.0, &cfg);
        for z in b.a.iter() {
            assert!((z - cr(1.0)).norm() < 1e-12);
        }
        let gh = 2.0 * PI * cfg.spacing_h() / cfg.wavelength();
        for i in 0..cfg.n() {
            let m = (i % cfg.n_h) as f64;
            assert!((b.zeta_phi[i] - (-J * gh * m)).norm() < 1e-12);
        }
        assert_eq!(b.zeta_phi[0], c(0.0, 0.0));
    }

    #[test]
    fn steering_has_kronecker_structure_and_unit_modulus() {
        let cfg = ScenarioConfig { n_h: 3, n_v: 5, ..small_cfg() };
        let (theta, phi) = (1.1, -0.7);
        let b = steering_bundle(theta, phi, &cfg);
        let lambda = cfg.wavelength();
        let av = CVec::from_fn(cfg.n_v, |k, _| {
            (J * 2.0 * PI * cfg.spacing_v() * k as f64 / lambda * theta.cos()).exp()
        });
        let ah = CVec::from_fn(cfg.n_h, |m, _| {
            (J * 2.0 * PI * cfg.spacing_h() * m as f64 / lambda * theta.sin() * phi.cos()).exp()
        });
        let kron = av.kronecker(&ah);
        assert!((kron - &b.a).norm() < 1e-12);
        for i in 0..cfg.n() {
            assert!((b.a[i].norm() - 1.0).abs() < 1e-12);
            assert!(b.zeta_theta[i].re == 0.0 && b.zeta_phi[i].re == 0.0);
            assert!((b.da_theta[i] - b.zeta_theta[i] * b.a[i]).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_derivatives_match_central_differences() {
        let cfg = small_cfg();
        let mut rng = rng_for(7, 1, 0);
        for _ in 0..20 {
            let theta = rng.random_range(0.2..3.0);
            let phi = rng.random_range(-3.0..3.0);
            let b = steering_bundle(theta, phi, &cfg);
            let h = 1e-6;
            let fd_t = (steering_vector(theta + h, phi, &cfg) - steering_vector(theta - h, phi, &cfg))
                / cr(2.0 * h);
            let fd_p = (steering_vector(theta, phi + h, &cfg) - steering_vector(theta, phi - h, &cfg))
                / cr(2.0 * h);
            assert!((&fd_t - &b.da_theta).norm() / b.da_theta.norm() < 1e-6);
            assert!((&fd_p - &b.da_phi).norm() / b.da_phi.norm().max(1e-300) < 1e-6);
        }
    }

    #[test]
    fn channel_is_deterministic_and_los_limited() {
        let cfg = small_cfg();
        let g1 = generate_channel(&cfg, 1);
        let g2 = generate_channel(&cfg, 1);
        assert_eq!(g1.g, g2.g);
        let other = generate_channel(&ScenarioConfig { seed: 2, ..cfg.clone() }, 1);
        assert_ne!(g1.g, other.g);

        let los_cfg = ScenarioConfig { k_db: 200.0, ..cfg.clone() };
        let g = generate_channel(&los_cfg, 0).g;
        let pl = free_space_gain(&cfg, distance(cfg.irs_pos[0], cfg.bs_pos));
        let los = los_channel(&cfg, 0) * cr(pl.sqrt());
        assert!(fro_norm(&(&g - los)) / fro_norm(&g) < 1e-4);
    }

    #[test]
    fn channel_power_moment() {
        let cfg = ScenarioConfig { m: 4, n_h: 2, n_v: 2, ..ScenarioConfig::default() };
        let pl = free_space_gain(&cfg, distance(cfg.irs_pos[0], cfg.bs_pos));
        let trials = 1000;
        let mean: f64 = (0..trials)
            .map(|s| {
                let g = generate_channel(&ScenarioConfig { seed: s, ..cfg.clone() }, 0).g;
                g.norm_squared() / (cfg.n() * cfg.m) as f64 / pl
            })
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn target_geometry() {
        let cfg = ScenarioConfig::default();
        assert!((distance(cfg.irs_pos[0], cfg.target_pos) - 125f64.sqrt()).abs() < 1e-12);
        let tp = target_params(&cfg, 0).unwrap();
        assert!(tp.theta > 0.0 && tp.theta < PI && tp.phi > -PI && tp.phi <= PI);
        assert!(tp.beta.norm() > 0.0);

        // doubling the distance: |β|² drops by 16
        let far = ScenarioConfig { target_pos: [15.0, 20.0, 0.0], ..cfg.clone() };
        let near = target_params(&cfg, 0).unwrap().beta.norm_sqr();
        let d_near = distance(cfg.irs_pos[0], cfg.target_pos);
        let d_far = distance(far.irs_pos[0], far.target_pos);
        assert!((d_far / d_near - 2.0).abs() < 1e-12);
        let ratio = target_params(&far, 0).unwrap().beta.norm_sqr() / near;
        assert!((ratio - 1.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn colocated_target_is_rejected() {
        let cfg = ScenarioConfig { target_pos: [-5.0, 10.0, 0.0], ..ScenarioConfig::default() };
        assert!(matches!(target_params(&cfg, 0), Err(Error::ColocatedTarget(0))));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let text = serde_json::to_string(&ScenarioConfig::default()).unwrap();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(back, ScenarioConfig::default());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["T_c"] = serde_json::json!(101);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn power_edge_cases() {
        let sc = Scenario::new(small_cfg()).unwrap();
        let site = &sc.sites[0];
        let r = TransmitCovariance::isotropic(4, 1.0);
        let zero = ReflectCoeffs::zeros(16);
        assert_eq!(sc.power_used(0, &zero, &r), 0.0);

        let mut rng = rng_for(3, 0, 0);
        let psi = ReflectCoeffs::new(CVec::from_fn(16, |_, _| complex_gaussian(&mut rng) * 2.0));
        let no_tx = TransmitCovariance { r: CMat::zeros(4, 4) };
        let tp0 = TargetParams { beta: c(0.0, 0.0), ..site.target };
        let p = irs_power_used(&psi, &no_tx, &site.channel, &site.bundle, &tp0, 1e-3).unwrap();
        assert!((p - 2e-3 * psi.psi.norm_squared()).abs() < 1e-15 * p.max(1.0));

        // scaling decomposition and global phase invariance
        let (q4, q2) = power_scaling_parts(&psi, &r, &site.channel, &site.bundle, &site.target, 1e-3);
        let full = irs_power_used(&psi, &r, &site.channel, &site.bundle, &site.target, 1e-3).unwrap();
        assert!(((q4 + q2) - full).abs() < 1e-10 * full);
        let rot = ReflectCoeffs::new(psi.psi.map(|z| z * Complex64::from_polar(1.0, 0.9)));
        let full_rot =
            irs_power_used(&rot, &r, &site.channel, &site.bundle, &site.target, 1e-3).unwrap();
        assert!((full - full_rot).abs() < 1e-12 * full);
        let alpha = amplitude_for_power(q4, q2, 0.5 * full);
        let scaled = ReflectCoeffs::new(psi.psi.map(|z| z * alpha));
        let p_half =
            irs_power_used(&scaled, &r, &site.channel, &site.bundle, &site.target, 1e-3).unwrap();
        assert!((p_half - 0.5 * full).abs() < 1e-10 * full);
    }

    #[test]
    fn echo_without_noise_is_deterministic() {
        let sc = Scenario::new(small_cfg()).unwrap();
        let site = &sc.sites[0];
        let mut rng = rng_for(5, 0, 0);
        let psi = ReflectCoeffs::new(random_phases(16, &mut rng));
        let s = CMat::from_fn(4, 50, |_, _| complex_gaussian(&mut rng));
        let y = simulate_echo(&site.channel, &site.bundle, &site.target, &psi, &s, 0.0, 0.0, &mut rng)
            .unwrap();
        let big = psi.diag();
        let expect = site.channel.g.transpose()
            * &big
            * target_response(&site.bundle, &site.target)
            * &big
            * &site.channel.g
            * &s;
        assert!(fro_norm(&(y - &expect)) <= 1e-12 * fro_norm(&expect));
        let bad = CMat::zeros(3, 50);
        assert!(simulate_echo(&site.channel, &site.bundle, &site.target, &psi, &bad, 0.0, 0.0, &mut rng)
            .is_err());
    }

    #[test]
    fn echo_noise_moments() {
        let sc = Scenario::new(small_cfg()).unwrap();
        let site = &sc.sites[0];
        let mut rng = rng_for(11, 0, 0);
        let t = 10_000;
        let s = CMat::zeros(4, t);
        let zero = ReflectCoeffs::zeros(16);
        let sb2 = 2.0;
        let y = simulate_echo(&site.channel, &site.bundle, &site.target, &zero, &s, 1.0, sb2, &mut rng)
            .unwrap();
        let cov = &y * y.adjoint() / cr(t as f64);
        let dev = fro_norm(&(cov - CMat::identity(4, 4) * cr(sb2)));
        assert!(dev < 0.05 * sb2 * 2.0, "deviation {dev}");
    }
}
