//! Fisher information for the per-IRS parameter vector
//! `(θ, φ, Re β, Im β)` and the resulting CRB.
//!
//! Two independent routes are provided: the closed form built from the
//! `C_θ`, `C_φ`, `H` matrices, and a finite-difference oracle that only ever
//! evaluates the noiseless echo mean.

use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    cr, herm_inverse, hermitian_part, inner, psd_sqrt, scale_cols, trace_prod, CMat, CVec, J,
};
use crate::scenario::{steering_vector, Channel, ReflectCoeffs, ScenarioConfig, SteeringBundle, TargetParams, TransmitCovariance};

/// Noise and timing constants that enter every FIM.
#[derive(Debug, Clone, Copy)]
pub struct FimContext {
    /// Symbols per IRS slot.
    pub slot_len: f64,
    pub sigma_r2: f64,
    pub sigma_b2: f64,
}

impl FimContext {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self { slot_len: cfg.slot_len() as f64, sigma_r2: cfg.sigma_r2(), sigma_b2: cfg.sigma_b2() }
    }

    /// Common factor `2 T_c / L`.
    pub fn factor(&self) -> f64 {
        2.0 * self.slot_len
    }
}

/// Real symmetric 4×4 FIM ordered (θ, φ, Re β, Im β).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fim {
    pub f: Matrix4<f64>,
}

impl Fim {
    pub fn zeros() -> Self {
        Self { f: Matrix4::zeros() }
    }

    pub fn crb(&self) -> f64 {
        crb(self)
    }

    pub fn rel_diff(&self, other: &Fim) -> f64 {
        (self.f - other.f).norm() / self.f.norm().max(other.f.norm()).max(f64::MIN_POSITIVE)
    }
}

/// `tr(F⁻¹)`, or `+∞` when `F` is numerically singular.
///
/// The inverse is taken on the Jacobi-scaled matrix `D⁻¹FD⁻¹` with
/// `D = diag(√F_ii)`: the four parameters live on wildly different scales, and
/// the scaled matrix has a unit diagonal so the singularity test is
/// scale-free.
pub fn crb(fim: &Fim) -> f64 {
    let f = &fim.f;
    if !f.iter().all(|x| x.is_finite()) {
        return f64::INFINITY;
    }
    let mut d = [0.0; 4];
    for i in 0..4 {
        if !(f[(i, i)] > 0.0) {
            return f64::INFINITY;
        }
        d[i] = f[(i, i)].sqrt();
    }
    let scaled = Matrix4::from_fn(|i, j| 0.5 * (f[(i, j)] + f[(j, i)]) / (d[i] * d[j]));
    let eig = SymmetricEigen::new(scaled);
    let lmin = eig.eigenvalues.min();
    if !(lmin > 1e-14 * 4.0) {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for i in 0..4 {
        let mut inv_ii = 0.0;
        for k in 0..4 {
            let u = eig.eigenvectors[(i, k)];
            inv_ii += u * u / eig.eigenvalues[k];
        }
        total += inv_ii / (d[i] * d[i]);
    }
    total
}

/// `F⁻¹` through the same scaled route as [`crb`]; `None` when singular.
pub fn fim_inverse(fim: &Fim) -> Option<Matrix4<f64>> {
    let f = &fim.f;
    let mut d = [0.0; 4];
    for i in 0..4 {
        if !(f[(i, i)] > 0.0) || !f[(i, i)].is_finite() {
            return None;
        }
        d[i] = f[(i, i)].sqrt();
    }
    let scaled = Matrix4::from_fn(|i, j| 0.5 * (f[(i, j)] + f[(j, i)]) / (d[i] * d[j]));
    let eig = SymmetricEigen::new(scaled);
    if !(eig.eigenvalues.min() > 1e-14 * 4.0) {
        return None;
    }
    let inv_scaled = eig.eigenvectors
        * Matrix4::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
        * eig.eigenvectors.transpose();
    Some(Matrix4::from_fn(|i, j| inv_scaled[(i, j)] / (d[i] * d[j])))
}

/// The six trace terms that make up a FIM, before the `β` weighting:
/// `tt = tr(C_θ^H W C_θ R)`, `tp = tr(C_θ^H W C_φ R)`,
/// `tb = tr(C_θ^H W H R)`, `bb = tr(H^H W H R)` and so on, with `W = R_w⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FimTerms {
    pub tt: Complex64,
    pub pp: Complex64,
    pub tp: Complex64,
    pub tb: Complex64,
    pub pb: Complex64,
    pub bb: Complex64,
}

impl FimTerms {
    pub fn as_array(&self) -> [Complex64; 6] {
        [self.tt, self.pp, self.tp, self.tb, self.pb, self.bb]
    }

    /// Weights the terms by `β` and the common factor into a real FIM.
    pub fn assemble(&self, beta: Complex64, factor: f64) -> Fim {
        let b2 = beta.norm_sqr();
        let bc = beta.conj();
        let mut f = Matrix4::zeros();
        f[(0, 0)] = factor * b2 * self.tt.re;
        f[(1, 1)] = factor * b2 * self.pp.re;
        f[(0, 1)] = factor * b2 * self.tp.re;
        f[(0, 2)] = factor * (bc * self.tb).re;
        f[(0, 3)] = factor * (J * bc * self.tb).re;
        f[(1, 2)] = factor * (bc * self.pb).re;
        f[(1, 3)] = factor * (J * bc * self.pb).re;
        f[(2, 2)] = factor * self.bb.re;
        f[(3, 3)] = factor * self.bb.re;
        for i in 0..4 {
            for j in 0..i {
                f[(i, j)] = f[(j, i)];
            }
        }
        Fim { f }
    }
}

#[derive(Debug, Clone)]
pub struct FimIntermediates {
    pub c_theta: CMat,
    pub c_phi: CMat,
    pub h: CMat,
    pub r_w: CMat,
    pub r_w_inv: CMat,
}

/// `σ_r² G^T Ψ Ψ^H G^* + σ_b² I`.
pub fn noise_covariance(ch: &Channel, psi: &ReflectCoeffs, sigma_r2: f64, sigma_b2: f64) -> CMat {
    let m = ch.g.ncols();
    let b = scale_cols(&ch.g.transpose(), &psi.psi);
    let mut r_w = (&b * b.adjoint()) * cr(sigma_r2);
    for i in 0..m {
        r_w[(i, i)] += cr(sigma_b2);
    }
    hermitian_part(&r_w)
}

pub fn intermediates(
    bundle: &SteeringBundle,
    ch: &Channel,
    psi: &ReflectCoeffs,
    ctx: &FimContext,
) -> Result<FimIntermediates> {
    let n = ch.g.nrows();
    if psi.psi.len() != n || bundle.a.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "psi {} / steering {} for N = {}",
            psi.psi.len(),
            bundle.a.len(),
            n
        )));
    }
    let gt = ch.g.transpose();
    let g = &gt * psi.psi.component_mul(&bundle.a);
    let g_t = &gt * psi.psi.component_mul(&bundle.da_theta);
    let g_p = &gt * psi.psi.component_mul(&bundle.da_phi);
    let sym = |x: &CVec, y: &CVec| x * y.transpose() + y * x.transpose();
    let r_w = noise_covariance(ch, psi, ctx.sigma_r2, ctx.sigma_b2);
    let r_w_inv = herm_inverse(&r_w).ok_or(Error::SingularNoiseCov)?;
    Ok(FimIntermediates {
        c_theta: sym(&g_t, &g),
        c_phi: sym(&g_p, &g),
        h: &g * g.transpose(),
        r_w,
        r_w_inv,
    })
}

pub fn fim_terms(im: &FimIntermediates, r_s: &TransmitCovariance) -> FimTerms {
    let w = &im.r_w_inv;
    let wct = w * &im.c_theta;
    let wcp = w * &im.c_phi;
    let wh = w * &im.h;
    let ct_h = im.c_theta.adjoint();
    let cp_h = im.c_phi.adjoint();
    let r = &r_s.r;
    FimTerms {
        tt: trace_prod(&ct_h, &(&wct * r)),
        pp: trace_prod(&cp_h, &(&wcp * r)),
        tp: trace_prod(&ct_h, &(&wcp * r)),
        tb: trace_prod(&ct_h, &(&wh * r)),
        pb: trace_prod(&cp_h, &(&wh * r)),
        bb: trace_prod(&im.h.adjoint(), &(&wh * r)),
    }
}

/// Same terms as [`fim_terms`], using that `C_θ`, `C_φ` and `H` are sums of
/// rank-one products of `g = G^T(ψ∘a)`, `g_θ` and `g_φ`. Only matrix-vector
/// work remains besides one Cholesky factorisation of `R_w`.
pub fn fim_terms_rank(
    bundle: &SteeringBundle,
    ch: &Channel,
    psi: &ReflectCoeffs,
    r_s: &TransmitCovariance,
    ctx: &FimContext,
) -> Result<FimTerms> {
    let n = ch.g.nrows();
    if psi.psi.len() != n || bundle.a.len() != n {
        return Err(Error::DimensionMismatch(format!("psi {} / steering {} for N = {}", psi.psi.len(), bundle.a.len(), n)));
    }
    let gt = ch.g.transpose();
    let v = [
        &gt * psi.psi.component_mul(&bundle.a),
        &gt * psi.psi.component_mul(&bundle.da_theta),
        &gt * psi.psi.component_mul(&bundle.da_phi),
    ];
    let r_w = noise_covariance(ch, psi, ctx.sigma_r2, ctx.sigma_b2);
    let chol = r_w.cholesky().ok_or(Error::SingularNoiseCov)?;
    let wv: Vec<CVec> = v.iter().map(|x| chol.solve(x)).collect();
    let rv: Vec<CVec> = v.iter().map(|x| &r_s.r * x.conjugate()).collect();
    // p[a][b] = v_a^H W v_b, q[a][b] = v_a^T R conj(v_b)
    let p = |a: usize, b: usize| v[a].dotc(&wv[b]);
    let q = |a: usize, b: usize| v[a].dot(&rv[b]);
    // (u, v) pairs of each matrix written as Σ u v^T
    const G: usize = 0;
    const GT: usize = 1;
    const GP: usize = 2;
    let c_theta: &[(usize, usize)] = &[(GT, G), (G, GT)];
    let c_phi: &[(usize, usize)] = &[(GP, G), (G, GP)];
    let h: &[(usize, usize)] = &[(G, G)];
    // tr(A^H W B R) = Σ (u^H W s)(t^T R conj(v)) over A's (u, v) and B's (s, t)
    let term = |a: &[(usize, usize)], b: &[(usize, usize)]| {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(u, w) in a {
            for &(s, t) in b {
                acc += p(u, s) * q(t, w);
            }
        }
        acc
    };
    Ok(FimTerms {
        tt: term(c_theta, c_theta),
        pp: term(c_phi, c_phi),
        tp: term(c_theta, c_phi),
        tb: term(c_theta, h),
        pb: term(c_phi, h),
        bb: term(h, h),
    })
}

/// Closed-form FIM.
pub fn fim_closed_form(
    bundle: &SteeringBundle,
    tp: &TargetParams,
    ch: &Channel,
    psi: &ReflectCoeffs,
    r_s: &TransmitCovariance,
    ctx: &FimContext,
) -> Result<Fim> {
    Ok(fim_terms_rank(bundle, ch, psi, r_s, ctx)?.assemble(tp.beta, ctx.factor()))
}

/// Finite-difference FIM from the definition, using only the echo mean.
///
/// The symbol block is `S = √T · R_s^{1/2}`, whose sample covariance is
/// exactly `R_s`; zero-padding columns would contribute nothing.
pub fn fim_oracle(
    tp: &TargetParams,
    ch: &Channel,
    psi: &ReflectCoeffs,
    r_s: &TransmitCovariance,
    cfg: &ScenarioConfig,
    ctx: &FimContext,
    h: f64,
) -> Result<Fim> {
    let r_w = noise_covariance(ch, psi, ctx.sigma_r2, ctx.sigma_b2);
    let w = herm_inverse(&r_w).ok_or(Error::SingularNoiseCov)?;
    let s = psd_sqrt(&r_s.r) * cr(ctx.slot_len.sqrt());
    let mean = |xi: [f64; 4]| -> CMat {
        let a = steering_vector(xi[0], xi[1], cfg);
        let beta = Complex64::new(xi[2], xi[3]);
        let p = psi.psi.component_mul(&a);
        let u = ch.g.transpose() * &p;
        (&u * (u.transpose() * &s)) * beta
    };
    let xi0 = [tp.theta, tp.phi, tp.beta.re, tp.beta.im];
    let derivs: Vec<CMat> = (0..4)
        .map(|k| {
            let mut up = xi0;
            let mut dn = xi0;
            up[k] += h;
            dn[k] -= h;
            (mean(up) - mean(dn)) / cr(2.0 * h)
        })
        .collect();
    let mut f = Matrix4::zeros();
    for p in 0..4 {
        let wp = &w * &derivs[p];
        for q in p..4 {
            // 2 Re tr(D_q^H W D_p)
            let v = 2.0 * inner(&derivs[q], &wp);
            f[(p, q)] = v;
            f[(q, p)] = v;
        }
    }
    Ok(Fim { f })
}

/// A FIM that is affine in a Hermitian matrix variable `X`:
/// `F_pq(X) = offset_pq + Re tr(D_pq X)` with Hermitian `D_pq`.
#[derive(Debug, Clone)]
pub struct AffineFim {
    pub offset: Matrix4<f64>,
    /// Upper-triangular entries `(p, q, D_pq)`, `p ≤ q`.
    pub basis: Vec<(usize, usize, CMat)>,
}

impl AffineFim {
    pub fn dim(&self) -> usize {
        self.basis.first().map_or(0, |(_, _, d)| d.nrows())
    }

    pub fn eval(&self, x: &CMat) -> Fim {
        let mut f = self.offset;
        for (p, q, d) in &self.basis {
            let v = inner(d, x);
            f[(*p, *q)] += v;
            if p != q {
                f[(*q, *p)] += v;
            }
        }
        Fim { f }
    }

    /// `tr(F(X)⁻¹)` and its gradient `−Σ (F⁻²)_pq D_pq`, or `None` when
    /// `F(X)` is not safely positive definite.
    pub fn crb_and_gradient(&self, x: &CMat) -> Option<(f64, CMat)> {
        let fim = self.eval(x);
        let inv = fim_inverse(&fim)?;
        let inv2 = inv * inv;
        let n = x.nrows();
        let mut grad = CMat::zeros(n, n);
        for (p, q, d) in &self.basis {
            let w = if p == q { inv2[(*p, *q)] } else { inv2[(*p, *q)] + inv2[(*q, *p)] };
            grad -= d * cr(w);
        }
        Some((inv.trace(), grad))
    }
}

/// Transmit-side affine FIM: `F(R)` for fixed reflection coefficients.
pub fn tx_affine_fim(im: &FimIntermediates, beta: Complex64, factor: f64) -> AffineFim {
    let w = &im.r_w_inv;
    let ct_h = im.c_theta.adjoint();
    let cp_h = im.c_phi.adjoint();
    let wct = w * &im.c_theta;
    let wcp = w * &im.c_phi;
    let wh = w * &im.h;
    let b2 = beta.norm_sqr();
    let bc = beta.conj();
    let tb = &ct_h * &wh;
    let pb = &cp_h * &wh;
    let bb = hermitian_part(&(im.h.adjoint() * &wh)) * cr(factor);
    let basis = vec![
        (0, 0, hermitian_part(&(&ct_h * &wct)) * cr(factor * b2)),
        (1, 1, hermitian_part(&(&cp_h * &wcp)) * cr(factor * b2)),
        (0, 1, hermitian_part(&(&ct_h * &wcp)) * cr(factor * b2)),
        (0, 2, hermitian_part(&(&tb * (bc * factor)))),
        (0, 3, hermitian_part(&(&tb * (J * bc * factor)))),
        (1, 2, hermitian_part(&(&pb * (bc * factor)))),
        (1, 3, hermitian_part(&(&pb * (J * bc * factor)))),
        (2, 2, bb.clone()),
        (3, 3, bb),
    ];
    AffineFim { offset: Matrix4::zeros(), basis }
}
