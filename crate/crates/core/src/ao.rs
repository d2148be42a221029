//! Alternating optimisation between the transmit covariances and the
//! reflection coefficients.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convexsolver::{FirstOrderSolver, SolverOptions};
use crate::error::{Error, Result};
use crate::rbf::{initial_psi, sca_loop, ScaOptions, SiteEval};
use crate::scenario::{rng_for, ReflectCoeffs, Scenario, TransmitCovariance};
use crate::txbf::{build_tx_problem, isotropic_start, solve_tx};

const STREAM_INIT: u64 = 0x494e_4954;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Alternate transmit and reflective design.
    Joint,
    /// Optimise only the transmit covariances; reflections stay random.
    TxOnly,
    /// Optimise only the reflections under isotropic transmission.
    RbfOnly,
    /// Joint design with ideal passive (unit-modulus, noiseless) IRSs.
    Passive,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Joint, Mode::TxOnly, Mode::RbfOnly, Mode::Passive];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::TxOnly => "tx_only",
            Mode::RbfOnly => "rbf_only",
            Mode::Passive => "passive",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        match key.as_str() {
            "joint" => Ok(Mode::Joint),
            "tx_only" | "tx" => Ok(Mode::TxOnly),
            "rbf_only" | "rbf" => Ok(Mode::RbfOnly),
            "passive" | "passive_baseline" => Ok(Mode::Passive),
            _ => Err(format!("unknown mode `{s}` (expected joint, tx_only, rbf_only or passive)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AoOptions {
    pub mode: Mode,
    pub max_outer: usize,
    pub rel_tol: f64,
    pub sca: ScaOptions,
    pub solver: SolverOptions,
    /// Solver settings for the relaxed reflection problems. These only seed
    /// the randomisation, so a looser tolerance is enough.
    pub rbf_solver: SolverOptions,
    /// How many times a degenerate reflection vector is re-drawn.
    pub restarts: usize,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Joint,
            max_outer: 30,
            rel_tol: 1e-3,
            sca: ScaOptions::default(),
            solver: SolverOptions::default(),
            rbf_solver: SolverOptions { tol: 1e-4, ..SolverOptions::default() },
            restarts: 3,
        }
    }
}

impl AoOptions {
    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoRecord {
    pub iteration: usize,
    pub after_tx: Option<f64>,
    pub after_rbf: Option<f64>,
    pub crbs: Vec<f64>,
    /// `(1/L) Σ tr R_l − P_t` (W).
    pub bs_power_residual: f64,
    /// Per-IRS power used minus `P_s` (W); empty for passive IRSs.
    pub irs_power_residual: Vec<f64>,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoTrace {
    pub mode: Mode,
    pub initial_max_crb: f64,
    pub records: Vec<AoRecord>,
    pub converged: bool,
}

impl AoTrace {
    /// Every recorded max-CRB in order: the initial point, then each
    /// half-step.
    pub fn max_crb_sequence(&self) -> Vec<f64> {
        let mut seq = vec![self.initial_max_crb];
        for r in &self.records {
            seq.extend(r.after_tx);
            seq.extend(r.after_rbf);
        }
        seq
    }
}

#[derive(Debug, Clone)]
pub struct AoResult {
    pub r_s: Vec<TransmitCovariance>,
    pub psi: Vec<ReflectCoeffs>,
    pub crbs: Vec<f64>,
    pub max_crb: f64,
    pub iterations: usize,
    pub trace: AoTrace,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

fn crbs_of(sc: &Scenario, r_s: &[TransmitCovariance], psi: &[ReflectCoeffs]) -> Vec<f64> {
    (0..sc.cfg.l).map(|l| SiteEval::new(sc, l, &r_s[l]).crb(&psi[l])).collect()
}

fn residuals(sc: &Scenario, r_s: &[TransmitCovariance], psi: &[ReflectCoeffs]) -> (f64, Vec<f64>) {
    let bs = r_s.iter().map(|r| r.power()).sum::<f64>() / r_s.len() as f64 - sc.cfg.p_t;
    let irs = if sc.has_power_cap() {
        (0..sc.cfg.l).map(|l| sc.power_used(l, &psi[l], &r_s[l]) - sc.cfg.p_s).collect()
    } else {
        Vec::new()
    };
    (bs, irs)
}

/// Runs the optimisation for `base` in the requested mode.
pub fn run_ao(base: &Scenario, opts: &AoOptions) -> Result<AoResult> {
    let sc = if opts.mode == Mode::Passive { base.clone().passive() } else { base.clone() };
    let solver = FirstOrderSolver::new(opts.solver);
    let rbf_solver = FirstOrderSolver::new(opts.rbf_solver);
    let l_count = sc.cfg.l;
    let mut r_s = isotropic_start(&sc);
    let mut psi: Vec<ReflectCoeffs> = (0..l_count)
        .map(|l| {
            let mut rng = rng_for(sc.cfg.seed, STREAM_INIT, l as u64);
            initial_psi(&SiteEval::new(&sc, l, &r_s[l]), &mut rng)
        })
        .collect();
    let mut redraws = 0u64;
    let mut crbs = crbs_of(&sc, &r_s, &psi);
    // a blind IRS cannot be fixed by either half-step; draw again
    while crbs.iter().any(|c| !c.is_finite()) {
        if redraws as usize >= opts.restarts * l_count {
            return Err(Error::InfeasibleScenario("no reflection vector with finite CRB".into()));
        }
        redraws += 1;
        for l in 0..l_count {
            if !crbs[l].is_finite() {
                let mut rng = rng_for(sc.cfg.seed, STREAM_INIT, (redraws << 16) | l as u64);
                psi[l] = initial_psi(&SiteEval::new(&sc, l, &r_s[l]), &mut rng);
            }
        }
        crbs = crbs_of(&sc, &r_s, &psi);
    }

    let mut trace = AoTrace { mode: opts.mode, initial_max_crb: max_of(&crbs), records: Vec::new(), converged: false };
    let do_tx = matches!(opts.mode, Mode::Joint | Mode::TxOnly | Mode::Passive);
    let do_rbf = matches!(opts.mode, Mode::Joint | Mode::RbfOnly | Mode::Passive);
    let outer = if opts.mode == Mode::TxOnly { opts.max_outer.min(1) } else { opts.max_outer };

    let mut iterations = 0;
    for k in 0..outer {
        iterations = k + 1;
        let started = Instant::now();
        let before = max_of(&crbs);
        let mut rec = AoRecord {
            iteration: k,
            after_tx: None,
            after_rbf: None,
            crbs: Vec::new(),
            bs_power_residual: 0.0,
            irs_power_residual: Vec::new(),
            wall_ms: 0.0,
            notes: Vec::new(),
        };
        if do_tx {
            match build_tx_problem(&sc, &psi).and_then(|p| solve_tx(&p, &solver, &r_s)) {
                Ok(sol) => {
                    r_s = sol.r_s;
                    crbs = crbs_of(&sc, &r_s, &psi);
                }
                Err(e) => rec.notes.push(format!("transmit step: {e}")),
            }
            rec.after_tx = Some(max_of(&crbs));
        }
        if do_rbf {
            let outcomes: Vec<Result<_>> = (0..l_count)
                .into_par_iter()
                .map(|l| sca_loop(&sc, l, &r_s[l], &psi[l], &rbf_solver, &opts.sca, k as u64))
                .collect();
            for (l, out) in outcomes.into_iter().enumerate() {
                match out {
                    Ok(o) if o.crb <= crbs[l] => {
                        psi[l] = o.psi;
                        crbs[l] = o.crb;
                    }
                    Ok(_) => {}
                    Err(e) => rec.notes.push(format!("reflection step, IRS {}: {e}", l + 1)),
                }
            }
            rec.after_rbf = Some(max_of(&crbs));
        }
        let (bs, irs) = residuals(&sc, &r_s, &psi);
        rec.bs_power_residual = bs;
        rec.irs_power_residual = irs;
        rec.crbs = crbs.clone();
        rec.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        trace.records.push(rec);
        let after = max_of(&crbs);
        if (before - after) <= opts.rel_tol * before {
            trace.converged = true;
            break;
        }
    }
    if opts.mode == Mode::TxOnly {
        trace.converged = true;
    }
    Ok(AoResult { max_crb: max_of(&crbs), crbs, r_s, psi, iterations, trace })
}
