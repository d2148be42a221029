//! Transmit-covariance design for fixed reflection coefficients.
//!
//! With `ψ` fixed each FIM is linear in its slot covariance `R_l` and the IRS
//! power constraint is affine in `R_l`, so the min-max CRB problem is convex.
//! The max over IRSs is smoothed by a log-sum-exp whose temperature is
//! annealed down to a small fraction of the current max.

use crate::convexsolver::{AffineConstraint, Objective, PsdProgram, PsdSolver, SolveStatus};
use crate::error::{Error, Result};
use crate::fim::{crb, intermediates, tx_affine_fim, AffineFim};
use crate::linalg::{cr, hermitian_part, inner, real_trace, CMat};
use crate::scenario::{ReflectCoeffs, Scenario, TransmitCovariance};

/// Temperatures of the log-sum-exp smoothing, relative to the current max CRB.
pub const ANNEAL: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone)]
pub struct TxBlock {
    pub fim: AffineFim,
    /// `(W_l, budget_l)` with the IRS power constraint `Re tr(W_l R_l) ≤ budget_l`.
    pub power_cap: Option<(CMat, f64)>,
}

#[derive(Debug, Clone)]
pub struct TxProblem {
    pub blocks: Vec<TxBlock>,
    pub p_t: f64,
}

impl TxProblem {
    pub fn crbs(&self, rs: &[CMat]) -> Vec<f64> {
        self.blocks.iter().zip(rs).map(|(b, r)| crb(&b.fim.eval(r))).collect()
    }

    pub fn max_crb(&self, rs: &[CMat]) -> f64 {
        self.crbs(rs).into_iter().fold(0.0, f64::max)
    }

    /// Largest constraint violation in watts (PSD violation as the most
    /// negative eigenvalue).
    pub fn violation(&self, rs: &[CMat]) -> f64 {
        let l = rs.len() as f64;
        let total: f64 = rs.iter().map(real_trace).sum::<f64>() / l;
        let mut worst = (total - self.p_t).max(0.0);
        for (b, r) in self.blocks.iter().zip(rs) {
            worst = worst.max(-crate::linalg::min_eigenvalue(r));
            if let Some((w, budget)) = &b.power_cap {
                worst = worst.max(inner(w, r) - budget);
            }
        }
        worst
    }

    fn program<'a>(&self, objective: &'a dyn Objective) -> PsdProgram<'a> {
        let l = self.blocks.len();
        let dims = self.blocks.iter().map(|b| b.fim.dim()).collect();
        let mut prog = PsdProgram::new(dims, objective, self.p_t);
        let bs = (0..l)
            .map(|k| {
                let m = self.blocks[k].fim.dim();
                (k, CMat::identity(m, m) * cr(1.0 / l as f64))
            })
            .collect();
        prog.constraints.push(AffineConstraint::le(bs, self.p_t));
        for (k, b) in self.blocks.iter().enumerate() {
            if let Some((w, budget)) = &b.power_cap {
                prog.constraints.push(AffineConstraint::le(vec![(k, w.clone())], *budget));
            }
        }
        prog
    }
}

/// `W_l` and the `R`-free part of the IRS power for fixed `ψ`.
pub fn power_cap_terms(sc: &Scenario, l: usize, psi: &ReflectCoeffs) -> (CMat, f64) {
    let site = &sc.sites[l];
    let sigma_r2 = sc.sigma_r2();
    let b2 = site.target.beta.norm_sqr();
    let p = psi.psi.component_mul(&site.bundle.a);
    let p2 = p.norm_squared();
    let gp = site.channel.g.transpose() * &p;
    let echo = gp.conjugate() * gp.transpose() * cr(b2 * p2);
    let pg = crate::linalg::scale_rows(&psi.psi, &site.channel.g);
    let w = hermitian_part(&(echo + pg.adjoint() * &pg));
    let fixed = sigma_r2 * b2 * p2 * p2 + 2.0 * sigma_r2 * psi.psi.norm_squared();
    (w, fixed)
}

pub fn build_tx_problem(sc: &Scenario, psi: &[ReflectCoeffs]) -> Result<TxProblem> {
    if psi.len() != sc.sites.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reflection vectors for {} IRSs",
            psi.len(),
            sc.sites.len()
        )));
    }
    let ctx = sc.fim_context();
    let mut blocks = Vec::with_capacity(psi.len());
    for (l, site) in sc.sites.iter().enumerate() {
        let im = intermediates(&site.bundle, &site.channel, &psi[l], &ctx)?;
        let fim = tx_affine_fim(&im, site.target.beta, ctx.factor());
        let m = fim.dim();
        if !crb(&fim.eval(&CMat::identity(m, m))).is_finite() {
            return Err(Error::DegeneratePsi(l));
        }
        let power_cap = if sc.has_power_cap() {
            let (w, fixed) = power_cap_terms(sc, l, &psi[l]);
            let budget = sc.cfg.p_s - fixed;
            if budget <= 0.0 {
                return Err(Error::InfeasiblePsi { irs: l, budget });
            }
            Some((w, budget))
        } else {
            None
        };
        blocks.push(TxBlock { fim, power_cap });
    }
    Ok(TxProblem { blocks, p_t: sc.cfg.p_t })
}

/// Log-sum-exp of the per-block CRBs with temperature `tau`.
struct SmoothMax<'a> {
    prob: &'a TxProblem,
    tau: f64,
}

impl Objective for SmoothMax<'_> {
    fn value_and_gradient(&self, xs: &[CMat]) -> Option<(f64, Vec<CMat>)> {
        let mut vals = Vec::with_capacity(xs.len());
        let mut grads = Vec::with_capacity(xs.len());
        for (b, x) in self.prob.blocks.iter().zip(xs) {
            let (v, g) = b.fim.crb_and_gradient(x)?;
            vals.push(v);
            grads.push(g);
        }
        let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = vals.iter().map(|v| ((v - top) / self.tau).exp()).collect();
        let sum: f64 = weights.iter().sum();
        let value = top + self.tau * sum.ln();
        for (g, w) in grads.iter_mut().zip(&weights) {
            *g *= cr(w / sum);
        }
        Some((value, grads))
    }
}

#[derive(Debug, Clone)]
pub struct TxSolution {
    pub r_s: Vec<TransmitCovariance>,
    pub crbs: Vec<f64>,
    pub max_crb: f64,
    pub status: SolveStatus,
    /// Whether the warm start was kept because the solver did not improve it.
    pub kept_warm_start: bool,
}

/// Solves the transmit subproblem, never returning anything worse than a
/// feasible warm start.
pub fn solve_tx(
    prob: &TxProblem,
    solver: &dyn PsdSolver,
    warm_start: &[TransmitCovariance],
) -> Result<TxSolution> {
    let warm: Vec<CMat> = warm_start.iter().map(|r| r.r.clone()).collect();
    let warm_ok = prob.violation(&warm) <= 1e-9 * prob.p_t;
    let warm_max = if warm_ok { prob.max_crb(&warm) } else { f64::INFINITY };

    let mut x = warm.clone();
    let mut status = SolveStatus::Converged;
    for rel in ANNEAL {
        let current = prob.max_crb(&x);
        let tau = if current.is_finite() { rel * current } else { rel };
        let obj = SmoothMax { prob, tau };
        let prog = prob.program(&obj);
        let rep = solver.solve(&prog, Some(&x))?;
        if rep.status != SolveStatus::Converged {
            status = rep.status;
        }
        x = rep.solution;
    }
    let solved_ok = prob.violation(&x) <= 1e-7 * prob.p_t;
    let solved_max = prob.max_crb(&x);
    let (r, kept) = if solved_ok && solved_max <= warm_max {
        (x, false)
    } else if warm_ok {
        (warm, true)
    } else if solved_ok {
        (x, false)
    } else {
        return Err(Error::Infeasible { residual: prob.violation(&x) });
    };
    let crbs = prob.crbs(&r);
    let max_crb = crbs.iter().cloned().fold(0.0, f64::max);
    Ok(TxSolution {
        r_s: r.into_iter().map(|r| TransmitCovariance { r }).collect(),
        crbs,
        max_crb,
        status,
        kept_warm_start: kept,
    })
}

pub fn isotropic_start(sc: &Scenario) -> Vec<TransmitCovariance> {
    (0..sc.cfg.l).map(|_| TransmitCovariance::isotropic(sc.cfg.m, sc.cfg.p_t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexsolver::FirstOrderSolver;
    use crate::linalg::fro_norm;
    use crate::scenario::{random_phases, rng_for, ScenarioConfig};

    fn setup(cfg: ScenarioConfig) -> (Scenario, Vec<ReflectCoeffs>) {
        let sc = Scenario::new(cfg).unwrap();
        let psi = (0..sc.cfg.l)
            .map(|l| {
                let mut rng = rng_for(sc.cfg.seed, 5, l as u64);
                ReflectCoeffs::new(random_phases(sc.cfg.n(), &mut rng) * cr(2.0))
            })
            .collect();
        (sc, psi)
    }

    fn small() -> ScenarioConfig {
        ScenarioConfig { m: 4, n_h: 2, n_v: 2, ..ScenarioConfig::default() }
    }

    #[test]
    fn power_cap_terms_reproduce_irs_power() {
        let (sc, psi) = setup(small());
        let r = TransmitCovariance::isotropic(4, 3.0);
        let (w, fixed) = power_cap_terms(&sc, 1, &psi[1]);
        let direct = sc.power_used(1, &psi[1], &r);
        assert!((inner(&w, &r.r) + fixed - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn zero_reflection_is_degenerate() {
        let (sc, mut psi) = setup(small());
        psi[0] = ReflectCoeffs::zeros(4);
        assert!(matches!(build_tx_problem(&sc, &psi), Err(Error::DegeneratePsi(0))));
    }

    #[test]
    fn solve_improves_isotropic_and_is_idempotent() {
        let (sc, psi) = setup(small());
        let prob = build_tx_problem(&sc, &psi).unwrap();
        let solver = FirstOrderSolver::default();
        let iso = isotropic_start(&sc);
        let iso_max = prob.max_crb(&iso.iter().map(|r| r.r.clone()).collect::<Vec<_>>());
        let sol = solve_tx(&prob, &solver, &iso).unwrap();
        assert!(sol.max_crb <= iso_max);
        let rs: Vec<CMat> = sol.r_s.iter().map(|r| r.r.clone()).collect();
        assert!(prob.violation(&rs) <= 1e-7 * prob.p_t);
        let again = solve_tx(&prob, &solver, &sol.r_s).unwrap();
        assert!((again.max_crb - sol.max_crb).abs() <= 1e-8 * sol.max_crb);
    }

    #[test]
    fn more_power_never_hurts() {
        let (sc, psi) = setup(small());
        let solver = FirstOrderSolver::default();
        let prob = build_tx_problem(&sc, &psi).unwrap();
        let base = solve_tx(&prob, &solver, &isotropic_start(&sc)).unwrap();
        let sc2 = Scenario::new(ScenarioConfig { p_t: 2.0 * sc.cfg.p_t, ..sc.cfg.clone() }).unwrap();
        let prob2 = build_tx_problem(&sc2, &psi).unwrap();
        let doubled = solve_tx(&prob2, &solver, &base.r_s).unwrap();
        assert!(doubled.max_crb <= base.max_crb);
    }

    #[test]
    fn common_scaling_leaves_direction_unchanged() {
        let (sc, psi) = setup(small());
        let k: f64 = 10.0;
        let db = 10.0 * k.log10();
        let scaled_cfg = ScenarioConfig {
            p_t: sc.cfg.p_t * k,
            p_s: sc.cfg.p_s * k,
            sigma_r_dbm: sc.cfg.sigma_r_dbm + db,
            sigma_b_dbm: sc.cfg.sigma_b_dbm + db,
            ..sc.cfg.clone()
        };
        let sc2 = Scenario::new(scaled_cfg).unwrap();
        let solver = FirstOrderSolver::default();
        let a = solve_tx(&build_tx_problem(&sc, &psi).unwrap(), &solver, &isotropic_start(&sc)).unwrap();
        let b = solve_tx(&build_tx_problem(&sc2, &psi).unwrap(), &solver, &isotropic_start(&sc2)).unwrap();
        for (ra, rb) in a.r_s.iter().zip(&b.r_s) {
            let na = &ra.r / cr(fro_norm(&ra.r));
            let nb = &rb.r / cr(fro_norm(&rb.r));
            assert!(fro_norm(&(na - nb)) < 1e-4, "{}", fro_norm(&(&ra.r / cr(fro_norm(&ra.r)) - &rb.r / cr(fro_norm(&rb.r)))));
        }
    }
}
