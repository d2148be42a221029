//! Lifted (`Θ = ψψ^H`) forms of the FIM trace terms and of the IRS power,
//! their gradients, and the first-order surrogates built from them.
//!
//! Two scalar functionals appear everywhere:
//! `T(P) = tr(P Θ^T) = Σ P_ij Θ_ij` and `S(X) = tr(X Θ)`. Both are
//! holomorphic in the entries of `Θ`; gradients are taken entrywise, so
//! `∂T(P) = P` and `∂S(X) = X^T`, and a first-order model reads
//! `Q(Θ₀) + Σ_ij ∇_ij (Θ − Θ₀)_ij`.

use nalgebra::Matrix4;
use num_complex::Complex64;

use crate::error::Result;
use crate::fim::{AffineFim, Fim, FimTerms};
use crate::linalg::{cr, herm_inverse, hermitian_part, scale_cols, scale_rows, trace_prod, trace_prod_t, CMat, CVec, J};
use crate::error::Error;
use crate::fim::noise_covariance;
use crate::scenario::{ReflectCoeffs, Scenario, TransmitCovariance};

fn t_of(p: &CMat, theta: &CMat) -> Complex64 {
    trace_prod_t(p, theta)
}

fn s_of(x: &CMat, theta: &CMat) -> Complex64 {
    trace_prod(x, theta)
}

/// Everything one SCA iteration needs about IRS `l`, frozen at a base point.
#[derive(Debug, Clone)]
pub struct ScaState {
    pub base: CMat,
    pub r1: CMat,
    pub r2: CMat,
    pub z_theta: CVec,
    pub z_phi: CVec,
    pub beta: Complex64,
    pub factor: f64,
    pub sigma_r2: f64,
    pub p_s: f64,
    pub a_max: f64,
    pub power_cap: bool,
    /// Diagonal of `G R_s G^H`.
    pub incident: Vec<f64>,
    pub iteration: usize,
    pub last_crb: f64,
    // T-side factors
    zt_r1: CMat,
    r1_zth: CMat,
    zt_r1_zth: CMat,
    zp_r1: CMat,
    r1_zph: CMat,
    zp_r1_zph: CMat,
    zp_r1_zth: CMat,
    // S-side factors
    zth_r2_zt: CMat,
    zth_r2: CMat,
    r2_zt: CMat,
    zph_r2_zp: CMat,
    zph_r2: CMat,
    r2_zp: CMat,
    zth_r2_zp: CMat,
}

/// Gradients of the six lifted trace terms, same layout as [`FimTerms`].
#[derive(Debug, Clone)]
pub struct QGradients {
    pub tt: CMat,
    pub pp: CMat,
    pub tp: CMat,
    pub tb: CMat,
    pub pb: CMat,
    pub bb: CMat,
}

impl QGradients {
    pub fn as_array(&self) -> [&CMat; 6] {
        [&self.tt, &self.pp, &self.tp, &self.tb, &self.pb, &self.bb]
    }
}

impl ScaState {
    /// Builds the state for IRS `l` around `psi`, with `R_w` frozen at `psi`.
    pub fn new(sc: &Scenario, l: usize, psi: &ReflectCoeffs, r_s: &TransmitCovariance) -> Result<Self> {
        let site = &sc.sites[l];
        let a = &site.bundle.a;
        let g = &site.channel.g;
        let r_w = noise_covariance(&site.channel, psi, sc.sigma_r2(), sc.sigma_b2());
        let w = herm_inverse(&r_w).ok_or(Error::SingularNoiseCov)?;
        let ag = scale_rows(a, g);
        let r1 = hermitian_part(&(&ag * &r_s.r * ag.adjoint()));
        let agc = ag.conjugate();
        let r2 = hermitian_part(&(&agc * &w * ag.transpose()));
        let incident_m = g * &r_s.r * g.adjoint();
        let incident = (0..g.nrows()).map(|i| incident_m[(i, i)].re).collect();
        let mut st = Self::from_parts(psi.gram(), r1, r2, site.bundle.zeta_theta.clone(), site.bundle.zeta_phi.clone());
        st.beta = site.target.beta;
        st.factor = sc.fim_context().factor();
        st.sigma_r2 = sc.sigma_r2();
        st.p_s = sc.cfg.p_s;
        st.a_max = sc.a_max();
        st.power_cap = sc.has_power_cap();
        st.incident = incident;
        Ok(st)
    }

    /// State from raw matrices; scenario scalars default to a unit problem.
    pub fn from_parts(base: CMat, r1: CMat, r2: CMat, z_theta: CVec, z_phi: CVec) -> Self {
        let zt_c = z_theta.conjugate();
        let zp_c = z_phi.conjugate();
        let zt_r1 = scale_rows(&z_theta, &r1);
        let zp_r1 = scale_rows(&z_phi, &r1);
        let zth_r2 = scale_rows(&zt_c, &r2);
        let zph_r2 = scale_rows(&zp_c, &r2);
        let n = r1.nrows();
        Self {
            r1_zth: scale_cols(&r1, &zt_c),
            zt_r1_zth: scale_cols(&zt_r1, &zt_c),
            r1_zph: scale_cols(&r1, &zp_c),
            zp_r1_zph: scale_cols(&zp_r1, &zp_c),
            zp_r1_zth: scale_cols(&zp_r1, &zt_c),
            zth_r2_zt: scale_cols(&zth_r2, &z_theta),
            r2_zt: scale_cols(&r2, &z_theta),
            zph_r2_zp: scale_cols(&zph_r2, &z_phi),
            r2_zp: scale_cols(&r2, &z_phi),
            zth_r2_zp: scale_cols(&zth_r2, &z_phi),
            zt_r1,
            zp_r1,
            zth_r2,
            zph_r2,
            base,
            r1,
            r2,
            z_theta,
            z_phi,
            beta: cr(1.0),
            factor: 1.0,
            sigma_r2: 0.0,
            p_s: 1.0,
            a_max: 1.0,
            power_cap: false,
            incident: vec![0.0; n],
            iteration: 0,
            last_crb: f64::INFINITY,
        }
    }

    pub fn n(&self) -> usize {
        self.r1.nrows()
    }
}

/// The six lifted trace terms at `Θ`.
pub fn q_terms(theta: &CMat, st: &ScaState) -> FimTerms {
    let t_r1 = t_of(&st.r1, theta);
    let s_r2 = s_of(&st.r2, theta);
    let t_zt_r1 = t_of(&st.zt_r1, theta);
    let t_r1_zth = t_of(&st.r1_zth, theta);
    let t_zp_r1 = t_of(&st.zp_r1, theta);
    let t_r1_zph = t_of(&st.r1_zph, theta);
    let s_zth_r2 = s_of(&st.zth_r2, theta);
    let s_zph_r2 = s_of(&st.zph_r2, theta);
    let s_r2_zt = s_of(&st.r2_zt, theta);
    let s_r2_zp = s_of(&st.r2_zp, theta);
    FimTerms {
        tt: t_r1 * s_of(&st.zth_r2_zt, theta)
            + t_zt_r1 * s_zth_r2
            + t_r1_zth * s_r2_zt
            + t_of(&st.zt_r1_zth, theta) * s_r2,
        pp: t_r1 * s_of(&st.zph_r2_zp, theta)
            + t_zp_r1 * s_zph_r2
            + t_r1_zph * s_r2_zp
            + t_of(&st.zp_r1_zph, theta) * s_r2,
        tp: t_r1 * s_of(&st.zth_r2_zp, theta)
            + t_zp_r1 * s_zth_r2
            + t_r1_zth * s_r2_zp
            + t_of(&st.zp_r1_zth, theta) * s_r2,
        tb: t_r1 * s_zth_r2 + t_r1_zth * s_r2,
        pb: t_r1 * s_zph_r2 + t_r1_zph * s_r2,
        bb: t_r1 * s_r2,
    }
}

/// Entrywise gradients of the six trace terms with `R_w` held fixed.
pub fn q_gradients(theta: &CMat, st: &ScaState) -> QGradients {
    let tr = |p: &CMat| t_of(p, theta);
    let sr = |x: &CMat| s_of(x, theta);
    let r2t = st.r2.transpose();
    let zt_c = st.z_theta.conjugate();
    let zp_c = st.z_phi.conjugate();
    // Z^T R2^T Z'^* and friends, written out as in the derivation
    let zt_r2t_ztc = scale_cols(&scale_rows(&st.z_theta, &r2t), &zt_c);
    let zp_r2t_zpc = scale_cols(&scale_rows(&st.z_phi, &r2t), &zp_c);
    let zp_r2t_ztc = scale_cols(&scale_rows(&st.z_phi, &r2t), &zt_c);
    let r2t_ztc = scale_cols(&r2t, &zt_c);
    let r2t_zpc = scale_cols(&r2t, &zp_c);
    let zt_r2t = scale_rows(&st.z_theta, &r2t);
    let zp_r2t = scale_rows(&st.z_phi, &r2t);

    let t_r1 = tr(&st.r1);
    let s_r2 = sr(&st.r2);

    let tt = &st.r1 * sr(&st.zth_r2_zt)
        + &zt_r2t_ztc * t_r1
        + &st.zt_r1 * sr(&st.zth_r2)
        + &r2t_ztc * tr(&st.zt_r1)
        + &st.r1_zth * sr(&st.r2_zt)
        + &zt_r2t * tr(&st.r1_zth)
        + &st.zt_r1_zth * s_r2
        + &r2t * tr(&st.zt_r1_zth);
    let pp = &st.r1 * sr(&st.zph_r2_zp)
        + &zp_r2t_zpc * t_r1
        + &st.zp_r1 * sr(&st.zph_r2)
        + &r2t_zpc * tr(&st.zp_r1)
        + &st.r1_zph * sr(&st.r2_zp)
        + &zp_r2t * tr(&st.r1_zph)
        + &st.zp_r1_zph * s_r2
        + &r2t * tr(&st.zp_r1_zph);
    let tp = &st.r1 * sr(&st.zth_r2_zp)
        + &zp_r2t_ztc * t_r1
        + &st.zp_r1 * sr(&st.zth_r2)
        + &r2t_ztc * tr(&st.zp_r1)
        + &st.r1_zth * sr(&st.r2_zp)
        + &zp_r2t * tr(&st.r1_zth)
        + &st.zp_r1_zth * s_r2
        + &r2t * tr(&st.zp_r1_zth);
    let tb = &st.r1 * sr(&st.zth_r2) + &r2t_ztc * t_r1 + &st.r1_zth * s_r2 + &r2t * tr(&st.r1_zth);
    let pb = &st.r1 * sr(&st.zph_r2) + &r2t_zpc * t_r1 + &st.r1_zph * s_r2 + &r2t * tr(&st.r1_zph);
    let bb = &st.r1 * s_r2 + &r2t * t_r1;
    QGradients { tt, pp, tp, tb, pb, bb }
}

/// FIM obtained from the lifted trace terms at `Θ` (with `R_w` frozen).
pub fn lifted_fim(theta: &CMat, st: &ScaState) -> Fim {
    q_terms(theta, st).assemble(st.beta, st.factor)
}

/// Complex weights that turn a trace term into a FIM entry, with the entry's
/// position and index into the [`FimTerms`] layout.
fn entry_weights(beta: Complex64) -> [(usize, usize, usize, Complex64); 9] {
    let b2 = cr(beta.norm_sqr());
    let bc = beta.conj();
    [
        (0, 0, 0, b2),
        (1, 1, 1, b2),
        (0, 1, 2, b2),
        (0, 2, 3, bc),
        (0, 3, 3, J * bc),
        (1, 2, 4, bc),
        (1, 3, 4, J * bc),
        (2, 2, 5, cr(1.0)),
        (3, 3, 5, cr(1.0)),
    ]
}

/// First-order surrogate FIM around the state's base point, as an affine
/// function of `Θ`.
pub fn surrogate_affine(st: &ScaState) -> AffineFim {
    let q0 = q_terms(&st.base, st).as_array();
    let grads = q_gradients(&st.base, st);
    let g = grads.as_array();
    let mut offset = Matrix4::zeros();
    let mut basis = Vec::with_capacity(9);
    for (p, q, k, w) in entry_weights(st.beta) {
        let lin0 = trace_prod_t(g[k], &st.base);
        let c0 = st.factor * (w * (q0[k] - lin0)).re;
        offset[(p, q)] = c0;
        if p != q {
            offset[(q, p)] = c0;
        }
        let d = hermitian_part(&(g[k].transpose() * (w * st.factor)));
        basis.push((p, q, d));
    }
    AffineFim { offset, basis }
}

/// Surrogate FIM evaluated at `Θ`.
pub fn surrogate_fim(theta: &CMat, st: &ScaState) -> Fim {
    let q0 = q_terms(&st.base, st).as_array();
    let grads = q_gradients(&st.base, st);
    let g = grads.as_array();
    let delta = theta - &st.base;
    let mut f = Matrix4::zeros();
    for (p, q, k, w) in entry_weights(st.beta) {
        let v = st.factor * (w * (q0[k] + trace_prod_t(g[k], &delta))).re;
        f[(p, q)] = v;
        f[(q, p)] = v;
    }
    Fim { f }
}

/// The bilinear echo term `tr(R₁Θ^T)·tr(Θ)` and its gradient.
pub fn echo_power_term(theta: &CMat, st: &ScaState) -> (f64, CMat) {
    let t_r1 = t_of(&st.r1, theta);
    let tr = theta.trace();
    let n = st.n();
    let grad = CMat::identity(n, n) * t_r1 + &st.r1 * tr;
    ((t_r1 * tr).re, grad)
}

/// `tr(Θ)²` and its gradient.
pub fn noise_power_term(theta: &CMat, st: &ScaState) -> (f64, CMat) {
    let tr = theta.trace();
    let n = st.n();
    ((tr * tr).re, CMat::identity(n, n) * (tr * 2.0))
}

/// Exact IRS power written in terms of `Θ`.
pub fn power_theta_form(theta: &CMat, st: &ScaState) -> f64 {
    let b2 = st.beta.norm_sqr();
    let (c1, _) = echo_power_term(theta, st);
    let (c2, _) = noise_power_term(theta, st);
    let direct: f64 = (0..st.n()).map(|i| st.incident[i] * theta[(i, i)].re).sum();
    b2 * c1 + st.sigma_r2 * b2 * c2 + direct + 2.0 * st.sigma_r2 * theta.trace().re
}

/// Linearised IRS power as `Re tr(W Θ) ≤ bound` with PSD `W`.
pub fn power_constraint_row(st: &ScaState) -> (CMat, f64) {
    let b2 = st.beta.norm_sqr();
    let (c1, g1) = echo_power_term(&st.base, st);
    let (c2, g2) = noise_power_term(&st.base, st);
    let lin = &g1 * cr(b2) + &g2 * cr(st.sigma_r2 * b2);
    let n = st.n();
    let mut w = hermitian_part(&lin.transpose());
    for i in 0..n {
        w[(i, i)] += cr(st.incident[i] + 2.0 * st.sigma_r2);
    }
    // constant part of the linearisation: c(Θ₀) − ⟨∇c, Θ₀⟩
    let konst = b2 * (c1 - trace_prod_t(&g1, &st.base).re)
        + st.sigma_r2 * b2 * (c2 - trace_prod_t(&g2, &st.base).re);
    (w, st.p_s - konst)
}

/// Linearised IRS power minus `P_s` at `Θ` (watts; `≤ 0` is feasible).
pub fn linearized_power_constraint(theta: &CMat, st: &ScaState) -> f64 {
    let b2 = st.beta.norm_sqr();
    let (c1, g1) = echo_power_term(&st.base, st);
    let (c2, g2) = noise_power_term(&st.base, st);
    let delta = theta - &st.base;
    let c1_lin = c1 + trace_prod_t(&g1, &delta).re;
    let c2_lin = c2 + trace_prod_t(&g2, &delta).re;
    let direct: f64 = (0..st.n()).map(|i| st.incident[i] * theta[(i, i)].re).sum();
    b2 * c1_lin + st.sigma_r2 * b2 * c2_lin + direct + 2.0 * st.sigma_r2 * theta.trace().re - st.p_s
}
