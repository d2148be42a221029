#![allow(dead_code)]

use std::f64::consts::PI;

use irs_crb::convexsolver::{FirstOrderSolver, SolverOptions};
use irs_crb::linalg::{c, cr, inner, CMat, CVec};
use irs_crb::rbf::{surrogate_fim, ScaState, SiteEval};
use irs_crb::scenario::{random_phases, rng_for, ReflectCoeffs, Scenario, ScenarioConfig, TransmitCovariance};
use irs_crb::txbf::{build_tx_problem, TxProblem};

/// `[[x, z], [z̄, y]]` with `z = ρ√(xy)·e^{jφ}`, PSD for `ρ ∈ [0, 1]`.
pub fn herm2(x: f64, y: f64, rho: f64, phi: f64) -> CMat {
    let z = c(0.0, phi).exp() * (rho * (x * y).max(0.0).sqrt());
    CMat::from_row_slice(2, 2, &[cr(x), z, z.conj(), cr(y)])
}

/// Exhaustive grid over a box followed by a compass search with halving
/// steps. `steps[i]` grid intervals along axis `i`; infeasible points return
/// `+∞`.
pub fn grid_then_refine(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], steps: &[usize]) -> (f64, Vec<f64>) {
    let d = lo.len();
    let mut best = (f64::INFINITY, lo.to_vec());
    let mut idx = vec![0usize; d];
    loop {
        let p: Vec<f64> = (0..d).map(|i| lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / steps[i] as f64).collect();
        let v = f(&p);
        if v < best.0 {
            best = (v, p);
        }
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] <= steps[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    let mut h: Vec<f64> = (0..d).map(|i| (hi[i] - lo[i]) / steps[i] as f64).collect();
    let (mut fb, mut xb) = best;
    while h.iter().zip(lo.iter().zip(hi)).any(|(s, (l, u))| *s > 1e-9 * (u - l)) {
        let mut moved = false;
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut p = xb.clone();
                p[i] = (p[i] + sign * h[i]).clamp(lo[i], hi[i]);
                let v = f(&p);
                if v < fb {
                    fb = v;
                    xb = p;
                    moved = true;
                }
            }
        }
        if !moved {
            h.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    (fb, xb)
}

/// Single-IRS, two-antenna scenario with a power-fitted random reflection
/// vector, so the IRS power constraint is tight at isotropic transmission.
pub fn tx_instance(seed: u64) -> (Scenario, Vec<ReflectCoeffs>) {
    let cfg = ScenarioConfig {
        m: 2,
        n_h: 2,
        n_v: 2,
        l: 1,
        irs_pos: vec![[-5.0, 10.0, 0.0]],
        seed,
        ..ScenarioConfig::default()
    };
    let sc = Scenario::new(cfg).unwrap();
    let iso = TransmitCovariance::isotropic(2, sc.cfg.p_t);
    let raw: CVec = random_phases(sc.cfg.n(), &mut rng_for(seed, 77, 0));
    let psi = SiteEval::new(&sc, 0, &iso).fit(&raw).unwrap();
    (sc, vec![psi])
}

/// Brute-force minimum of the single-block transmit problem with `M = 2`.
/// The direction is gridded over the unit-trace face (`a` in steps of 0.01,
/// correlation modulus in steps of 0.01, phase in 100 steps); since the CRB
/// scales as `1/t` along a ray the best feasible trace `t` is exact.
pub fn tx_grid_optimum(prob: &TxProblem) -> f64 {
    assert_eq!(prob.blocks.len(), 1);
    let block = &prob.blocks[0];
    let f = |p: &[f64]| {
        let s = herm2(p[0], 1.0 - p[0], p[1], p[2]);
        let mut t = prob.p_t;
        if let Some((w, budget)) = &block.power_cap {
            let load = inner(w, &s);
            if load > 0.0 {
                t = t.min(budget / load);
            }
        }
        block.fim.eval(&(s * cr(t))).crb()
    };
    grid_then_refine(&f, &[0.0, 0.0, 0.0], &[1.0, 1.0, 2.0 * PI], &[100, 100, 100]).0
}

pub fn tx_problem(seed: u64) -> (Scenario, TxProblem) {
    let (sc, psi) = tx_instance(seed);
    let prob = build_tx_problem(&sc, &psi).unwrap();
    (sc, prob)
}

pub fn solver() -> FirstOrderSolver {
    FirstOrderSolver::new(SolverOptions::default())
}

/// Synthetic three-element lifted problem with random Hermitian factors,
/// diagonal cap 1 and no power constraint. Two elements are not enough: the
/// steering vector and its two derivatives are then linearly dependent and
/// every FIM is singular.
pub fn sdr_instance(seed: u64) -> ScaState {
    use irs_crb::scenario::complex_gaussian;
    let n = 3;
    let mut r = rng_for(seed, 91, 0);
    let psd = |rng: &mut _| {
        let a = CMat::from_fn(n, n + 1, |_, _| complex_gaussian(rng));
        &a * a.adjoint()
    };
    let r1 = psd(&mut r);
    let r2 = psd(&mut r);
    let zt = CVec::from_fn(n, |i, _| c(0.0, i as f64 + 0.3 * complex_gaussian(&mut r).re));
    let zp = CVec::from_fn(n, |i, _| c(0.0, (i * i) as f64 - 1.0 + 0.3 * complex_gaussian(&mut r).re));
    let psi = random_phases(n, &mut r) * cr(0.7);
    let mut st = ScaState::from_parts(&psi * psi.adjoint(), r1, r2, zt, zp);
    st.beta = complex_gaussian(&mut r);
    st
}

/// `s_i s_j u_i·u_j^H` with `U` the lower-triangular Cholesky factor of a
/// correlation matrix, parametrised by angles: every 3×3 PSD matrix with
/// diagonal `s²` is reachable.
pub fn psd3(p: &[f64]) -> CMat {
    let s = [p[0], p[1], p[2]];
    let (a, g) = (p[3], p[4]);
    let (t, u, g1, g2) = (p[5], p[6], p[7], p[8]);
    let ph = |x: f64| c(0.0, x).exp();
    let rows = [
        [cr(1.0), cr(0.0), cr(0.0)],
        [ph(g) * a.cos(), cr(a.sin()), cr(0.0)],
        [ph(g1) * (t.sin() * u.cos()), ph(g2) * (t.sin() * u.sin()), cr(t.cos())],
    ];
    CMat::from_fn(3, 3, |i, j| {
        let d: num_complex::Complex64 = (0..3).map(|k| rows[i][k] * rows[j][k].conj()).sum();
        d * (s[i] * s[j])
    })
}

/// Brute-force minimum of the surrogate CRB over all 3×3 PSD matrices with
/// diagonal caps.
pub fn sdr_psd_search(st: &ScaState) -> f64 {
    let cap = st.a_max;
    let hp = PI / 2.0;
    let f = |p: &[f64]| surrogate_fim(&psd3(p), st).crb();
    grid_then_refine(
        &f,
        &[0.0; 9],
        &[cap, cap, cap, hp, 2.0 * PI, hp, hp, 2.0 * PI, 2.0 * PI],
        &[3, 3, 3, 3, 6, 3, 3, 6, 6],
    )
    .0
}

/// Best surrogate CRB over rank-one `Θ = ψψ^H` with `ψ` on an amplitude ×
/// phase grid (first phase fixed, the CRB ignores a global phase).
pub fn sdr_rank_one_grid(st: &ScaState) -> f64 {
    let cap = st.a_max;
    let f = |p: &[f64]| {
        let psi = CVec::from_vec(vec![cr(p[0]), c(0.0, p[3]).exp() * p[1], c(0.0, p[4]).exp() * p[2]]);
        surrogate_fim(&(&psi * psi.adjoint()), st).crb()
    };
    let mut best = f64::INFINITY;
    let steps = [10usize, 10, 10, 24, 24];
    let hi = [cap, cap, cap, 2.0 * PI, 2.0 * PI];
    let mut idx = [0usize; 5];
    'outer: loop {
        let p: Vec<f64> = (0..5).map(|i| hi[i] * idx[i] as f64 / steps[i] as f64).collect();
        best = best.min(f(&p));
        for k in 0..5 {
            idx[k] += 1;
            if idx[k] <= steps[k] {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
    best
}
