//! SCA loop for one IRS: solve the relaxed surrogate problem, recover a
//! reflection vector by Gaussian randomisation, move the base point.

use rand::Rng;

use crate::convexsolver::{AffineConstraint, Objective, PsdProgram, PsdSolver, SolveReport};
use crate::error::{Error, Result};
use crate::fim::{fim_closed_form, AffineFim};
use crate::linalg::{cr, herm_eig, real_trace, CMat, CVec};
use crate::rbf::lift::{power_constraint_row, surrogate_affine, ScaState};
use crate::scenario::{amplitude_for_power, complex_gaussian, random_phases, rng_for, ReflectCoeffs, Scenario, TransmitCovariance};

const STREAM_RANDOMIZE: u64 = 0x5241_4e44;

#[derive(Debug, Clone, Copy)]
pub struct ScaOptions {
    pub n_rand: usize,
    pub max_sca: usize,
    pub tol: f64,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self { n_rand: 200, max_sca: 15, tol: 1e-3 }
    }
}

/// Exact evaluation of reflection candidates for one IRS with its slot
/// covariance fixed.
pub struct SiteEval<'a> {
    pub sc: &'a Scenario,
    pub l: usize,
    pub r_s: &'a TransmitCovariance,
    incident: CMat,
}

impl<'a> SiteEval<'a> {
    pub fn new(sc: &'a Scenario, l: usize, r_s: &'a TransmitCovariance) -> Self {
        let g = &sc.sites[l].channel.g;
        let incident = g * &r_s.r * g.adjoint();
        Self { sc, l, r_s, incident }
    }

    pub fn crb(&self, psi: &ReflectCoeffs) -> f64 {
        let site = &self.sc.sites[self.l];
        match fim_closed_form(&site.bundle, &site.target, &site.channel, psi, self.r_s, &self.sc.fim_context()) {
            Ok(f) => f.crb(),
            Err(_) => f64::INFINITY,
        }
    }

    /// Quartic and quadratic coefficients of the IRS power under `ψ → αψ`.
    fn power_parts(&self, psi: &CVec) -> (f64, f64) {
        let site = &self.sc.sites[self.l];
        let sigma_r2 = self.sc.sigma_r2();
        let p = psi.component_mul(&site.bundle.a);
        let p2 = p.norm_squared();
        let echo = (p.transpose() * &self.incident * p.conjugate())[(0, 0)].re;
        let quartic = site.target.beta.norm_sqr() * p2 * (echo + sigma_r2 * p2);
        let mut quadratic = 2.0 * sigma_r2 * psi.norm_squared();
        for (i, z) in psi.iter().enumerate() {
            quadratic += z.norm_sqr() * self.incident[(i, i)].re;
        }
        (quartic, quadratic)
    }

    pub fn power(&self, psi: &ReflectCoeffs) -> f64 {
        let (q4, q2) = self.power_parts(&psi.psi);
        q4 + q2
    }

    pub fn is_feasible(&self, psi: &ReflectCoeffs) -> bool {
        let amp_ok = psi.max_amplitude() <= self.sc.a_max() * (1.0 + 1e-12);
        let unit_ok = self.sc.has_power_cap()
            || psi.psi.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-9);
        let power_ok = !self.sc.has_power_cap() || self.power(psi) <= self.sc.cfg.p_s * (1.0 + 1e-9);
        amp_ok && unit_ok && power_ok
    }

    /// Maps a raw direction onto the feasible set: unit modulus for passive
    /// IRSs; otherwise peak amplitude `a_max`, shrunk to power equality if
    /// that overshoots the budget.
    pub fn fit(&self, raw: &CVec) -> Option<ReflectCoeffs> {
        let peak = raw.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        if !(peak > 0.0) || !peak.is_finite() {
            return None;
        }
        if !self.sc.has_power_cap() {
            return Some(ReflectCoeffs::new(raw.map(|z| if z.norm() > 0.0 { z / z.norm() } else { cr(1.0) })));
        }
        let psi = raw * cr(self.sc.a_max() / peak);
        let (q4, q2) = self.power_parts(&psi);
        let alpha = amplitude_for_power(q4, q2, self.sc.cfg.p_s).min(1.0);
        if !(alpha > 0.0) {
            return None;
        }
        Some(ReflectCoeffs::new(psi * cr(alpha)))
    }
}

/// Random phases with a common amplitude: `a_max`, or less if that would
/// exceed the IRS power budget.
pub fn initial_psi<R: Rng + ?Sized>(ev: &SiteEval, rng: &mut R) -> ReflectCoeffs {
    let phases = random_phases(ev.sc.cfg.n(), rng);
    ev.fit(&phases).expect("unit-modulus vector is never degenerate")
}

struct SurrogateCrb {
    fim: AffineFim,
}

impl Objective for SurrogateCrb {
    fn value_and_gradient(&self, xs: &[CMat]) -> Option<(f64, Vec<CMat>)> {
        let (v, g) = self.fim.crb_and_gradient(&xs[0])?;
        Some((v, vec![g]))
    }
}

/// Relaxed surrogate problem: minimise `tr(F̂(Θ)⁻¹)` over `Θ ⪰ 0` with the
/// diagonal capped at `a_max²` and the linearised power constraint.
pub fn solve_sdr(st: &ScaState, solver: &dyn PsdSolver) -> Result<(CMat, SolveReport)> {
    let obj = SurrogateCrb { fim: surrogate_affine(st) };
    let n = st.n();
    let scale = real_trace(&st.base).max(st.a_max * st.a_max);
    let mut prog = PsdProgram::new(vec![n], &obj, scale);
    prog.diag_caps = vec![Some(st.a_max * st.a_max)];
    if st.power_cap {
        let (w, bound) = power_constraint_row(st);
        prog.constraints.push(AffineConstraint::le(vec![(0, w)], bound));
    }
    let rep = solver.solve(&prog, Some(std::slice::from_ref(&st.base)))?;
    Ok((rep.solution[0].clone(), rep))
}

fn phase_only(v: &CVec) -> CVec {
    v.map(|z| if z.norm() > 0.0 { z / z.norm() } else { cr(0.0) })
}

/// Draws `ψ = Θ*^{1/2} r`, fits each draw to the feasible set and keeps the
/// best exact CRB. Each draw is also tried with its amplitudes equalised, and
/// the principal eigenvector of `Θ*` is tried first. Falls back to
/// `incumbent` unless a candidate beats it.
pub fn gaussian_randomize<R: Rng + ?Sized>(
    theta_star: &CMat,
    n_rand: usize,
    rng: &mut R,
    ev: &SiteEval,
    incumbent: &ReflectCoeffs,
) -> Result<(ReflectCoeffs, f64)> {
    let (vals, vecs) = herm_eig(theta_star);
    let n = vals.len();
    let root = CMat::from_fn(n, n, |i, k| vecs[(i, k)] * vals[k].max(0.0).sqrt());
    let incumbent_ok = ev.is_feasible(incumbent);
    let mut best = incumbent.clone();
    let mut best_crb = if incumbent_ok { ev.crb(incumbent) } else { f64::INFINITY };
    let mut found = incumbent_ok;
    let mut consider = |raw: &CVec, best: &mut ReflectCoeffs, best_crb: &mut f64| {
        let mut tries = vec![raw.clone()];
        if ev.sc.has_power_cap() {
            tries.push(phase_only(raw));
        }
        for t in tries {
            let Some(cand) = ev.fit(&t) else { continue };
            let crb = ev.crb(&cand);
            if crb < *best_crb {
                *best = cand;
                *best_crb = crb;
                found = true;
            }
        }
    };
    let principal = vecs.column(n - 1).into_owned() * cr(vals[n - 1].max(0.0).sqrt());
    consider(&principal, &mut best, &mut best_crb);
    for _ in 0..n_rand {
        let r = CVec::from_fn(n, |_, _| complex_gaussian(rng));
        consider(&(&root * r), &mut best, &mut best_crb);
    }
    if !found {
        return Err(Error::NoFeasibleCandidate(ev.l));
    }
    Ok((best, best_crb))
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub psi: ReflectCoeffs,
    pub crb: f64,
    /// Exact CRB before the first and after every iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Runs SCA for IRS `l` from a feasible `init`; the exact CRB never increases.
/// `stream` separates the random draws of different callers (e.g. AO rounds).
pub fn sca_loop(
    sc: &Scenario,
    l: usize,
    r_s: &TransmitCovariance,
    init: &ReflectCoeffs,
    solver: &dyn PsdSolver,
    opts: &ScaOptions,
    stream: u64,
) -> Result<ScaOutcome> {
    let ev = SiteEval::new(sc, l, r_s);
    let mut psi = init.clone();
    let mut crb = if ev.is_feasible(&psi) { ev.crb(&psi) } else { f64::INFINITY };
    let mut history = vec![crb];
    let mut iterations = 0;
    for i in 0..opts.max_sca {
        iterations = i + 1;
        let mut st = ScaState::new(sc, l, &psi, r_s)?;
        st.iteration = i;
        st.last_crb = crb;
        let theta_star = match solve_sdr(&st, solver) {
            Ok((t, _)) => t,
            Err(Error::Infeasible { .. }) => psi.gram(),
            Err(e) => return Err(e),
        };
        let mut rng = rng_for(sc.cfg.seed, STREAM_RANDOMIZE ^ stream.rotate_left(17), (l as u64) << 32 | i as u64);
        let (next, next_crb) = gaussian_randomize(&theta_star, opts.n_rand, &mut rng, &ev, &psi)?;
        let gain = if crb.is_finite() { (crb - next_crb) / crb } else { f64::INFINITY };
        psi = next;
        crb = next_crb;
        history.push(crb);
        if gain < opts.tol {
            break;
        }
    }
    Ok(ScaOutcome { psi, crb, history, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexsolver::{FirstOrderSolver, SolverOptions};
    use crate::linalg::fro_norm;
    use crate::rbf::lift::{linearized_power_constraint, surrogate_fim};
    use crate::scenario::ScenarioConfig;

    fn small(seed: u64) -> (Scenario, TransmitCovariance) {
        let sc = Scenario::new(ScenarioConfig { m: 4, n_h: 2, n_v: 2, seed, ..ScenarioConfig::default() }).unwrap();
        let r = TransmitCovariance::isotropic(4, sc.cfg.p_t);
        (sc, r)
    }

    fn solver() -> FirstOrderSolver {
        FirstOrderSolver::new(SolverOptions { tol: 1e-5, ..SolverOptions::default() })
    }

    #[test]
    fn sdr_descends_and_respects_caps() {
        let (sc, r) = small(2);
        let ev = SiteEval::new(&sc, 0, &r);
        let psi = initial_psi(&ev, &mut rng_for(2, 1, 0));
        let st = ScaState::new(&sc, 0, &psi, &r).unwrap();
        let (th, rep) = solve_sdr(&st, &solver()).unwrap();
        let at_base = surrogate_fim(&st.base, &st).crb();
        assert!(surrogate_fim(&th, &st).crb() <= at_base + 1e-8 * at_base);
        assert!(rep.objective < at_base);
        for i in 0..4 {
            assert!(th[(i, i)].re <= sc.cfg.a_max.powi(2) + 1e-9);
        }
        assert!(linearized_power_constraint(&th, &st) <= 1e-7 * sc.cfg.p_s);
    }

    #[test]
    fn rank_one_input_is_recovered() {
        let (sc, r) = small(3);
        let ev = SiteEval::new(&sc, 0, &r);
        let psi = initial_psi(&ev, &mut rng_for(3, 1, 0));
        let infeasible = ReflectCoeffs::new(psi.psi.map(|z| z * 100.0));
        let (best, crb) = gaussian_randomize(&psi.gram(), 5, &mut rng_for(3, 2, 0), &ev, &infeasible).unwrap();
        assert!(crb <= ev.crb(&psi) * (1.0 + 1e-9));
        assert!(ev.is_feasible(&best));
        // same direction up to a complex scale; the amplitude fit may rescale it
        let ph = best.psi.dotc(&psi.psi);
        let aligned = &best.psi * (ph / ph.norm() / best.psi.norm());
        let unit = psi.psi.normalize();
        let d = fro_norm(&CMat::from_column_slice(4, 1, (aligned - &unit).as_slice()));
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn rejected_draw_keeps_incumbent() {
        let (sc, r) = small(4);
        let ev = SiteEval::new(&sc, 0, &r);
        let inc = initial_psi(&ev, &mut rng_for(4, 1, 0));
        let (best, crb) = gaussian_randomize(&CMat::zeros(4, 4), 1, &mut rng_for(4, 2, 0), &ev, &inc).unwrap();
        assert_eq!(best, inc);
        assert_eq!(crb, ev.crb(&inc));
        let bad = ReflectCoeffs::new(inc.psi.map(|z| z * 100.0));
        assert!(matches!(
            gaussian_randomize(&CMat::zeros(4, 4), 3, &mut rng_for(4, 2, 1), &ev, &bad),
            Err(Error::NoFeasibleCandidate(0))
        ));
    }

    #[test]
    fn randomization_never_loses_to_incumbent() {
        let (sc, r) = small(5);
        let ev = SiteEval::new(&sc, 1, &r);
        for k in 0..20 {
            let mut rng = rng_for(5, 9, k);
            let inc = initial_psi(&ev, &mut rng);
            let a = CMat::from_fn(4, 4, |_, _| complex_gaussian(&mut rng));
            let (_, crb) = gaussian_randomize(&(&a * a.adjoint()), 10, &mut rng, &ev, &inc).unwrap();
            assert!(crb <= ev.crb(&inc));
        }
    }

    #[test]
    fn sca_is_monotone_and_feasible() {
        let (sc, r) = small(6);
        let ev = SiteEval::new(&sc, 0, &r);
        let init = initial_psi(&ev, &mut rng_for(6, 1, 0));
        let once = sca_loop(&sc, 0, &r, &init, &solver(), &ScaOptions { tol: 1e9, ..ScaOptions::default() }, 0).unwrap();
        assert_eq!(once.iterations, 1);
        assert!(once.crb <= ev.crb(&init));
        let out = sca_loop(&sc, 0, &r, &init, &solver(), &ScaOptions { n_rand: 50, ..ScaOptions::default() }, 0).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(ev.is_feasible(&out.psi));
        assert_eq!(out.crb, ev.crb(&out.psi));
    }
}
