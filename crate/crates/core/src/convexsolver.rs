//! Smooth convex minimisation over Hermitian PSD matrix variables with affine
//! constraints and optional diagonal caps.
//!
//! The default backend is monotone FISTA with backtracking. Projections onto
//! `{PSD ∩ diag caps ∩ affine}` solve the small dual problem by Newton's
//! method, with Dykstra's alternating projections as a fallback.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{cr, fro_norm, herm_eig, hermitian_part, inner, psd_project, CMat};
use crate::scenario::complex_gaussian;

/// A smooth convex objective over a list of Hermitian matrices.
///
/// Returns `None` when the point lies outside the objective's domain.
/// Gradients are with respect to the real inner product `Re tr(G^H X)`.
pub trait Objective: Sync {
    fn value_and_gradient(&self, xs: &[CMat]) -> Option<(f64, Vec<CMat>)>;

    fn value(&self, xs: &[CMat]) -> Option<f64> {
        self.value_and_gradient(xs).map(|(v, _)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
}

/// `Σ_k Re tr(C_k X_k) {≤, =} bound` with Hermitian `C_k`.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    pub coeffs: Vec<(usize, CMat)>,
    pub bound: f64,
    pub sense: Sense,
}

impl AffineConstraint {
    pub fn le(coeffs: Vec<(usize, CMat)>, bound: f64) -> Self {
        Self { coeffs, bound, sense: Sense::Le }
    }

    pub fn eq(coeffs: Vec<(usize, CMat)>, bound: f64) -> Self {
        Self { coeffs, bound, sense: Sense::Eq }
    }

    pub fn lhs(&self, xs: &[CMat]) -> f64 {
        self.coeffs.iter().map(|(k, c)| inner(c, &xs[*k])).sum()
    }

    fn norm2(&self) -> f64 {
        self.coeffs.iter().map(|(_, c)| c.norm_squared()).sum()
    }

    /// Signed excess, `lhs − bound` (clamped at zero for `≤`).
    pub fn violation(&self, xs: &[CMat]) -> f64 {
        let r = self.lhs(xs) - self.bound;
        match self.sense {
            Sense::Le => r.max(0.0),
            Sense::Eq => r.abs(),
        }
    }
}

pub struct PsdProgram<'a> {
    pub dims: Vec<usize>,
    pub objective: &'a dyn Objective,
    pub constraints: Vec<AffineConstraint>,
    /// Upper bounds on the diagonal entries of each variable.
    pub diag_caps: Vec<Option<f64>>,
    /// Typical magnitude of the variables; tolerances are relative to it.
    pub scale: f64,
}

impl<'a> PsdProgram<'a> {
    pub fn new(dims: Vec<usize>, objective: &'a dyn Objective, scale: f64) -> Self {
        let diag_caps = vec![None; dims.len()];
        Self { dims, objective, constraints: Vec::new(), diag_caps, scale }
    }

    /// Largest violation of any constraint, measured as a distance in
    /// variable space (affine rows are normalised to unit coefficient norm).
    pub fn max_violation(&self, xs: &[CMat]) -> f64 {
        let mut worst = 0.0f64;
        for x in xs {
            let (vals, _) = herm_eig(x);
            worst = worst.max(-vals[0]);
            worst = worst.max(fro_norm(&(x - x.adjoint())) * 0.5);
        }
        for (x, cap) in xs.iter().zip(&self.diag_caps) {
            if let Some(cap) = cap {
                for i in 0..x.nrows() {
                    worst = worst.max(x[(i, i)].re - cap);
                }
            }
        }
        for con in &self.constraints {
            let n = con.norm2().sqrt();
            if n > 0.0 {
                worst = worst.max(con.violation(xs) / n);
            } else {
                worst = worst.max(con.violation(xs));
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    IterLimit,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<CMat>,
    pub objective: f64,
    pub iterations: usize,
    /// Relative gradient-mapping norm at the returned point.
    pub stationarity: f64,
    pub violation: f64,
    pub status: SolveStatus,
    /// Objective after every accepted iteration.
    pub history: Vec<f64>,
}

/// Pluggable backend for [`PsdProgram`]s.
pub trait PsdSolver: Sync {
    fn solve(&self, prog: &PsdProgram, start: Option<&[CMat]>) -> Result<SolveReport>;
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub dykstra_iters: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 5000, dykstra_iters: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FirstOrderSolver {
    pub opts: SolverOptions,
}

impl FirstOrderSolver {
    pub fn new(opts: SolverOptions) -> Self {
        Self { opts }
    }
}

fn norm_all(xs: &[CMat]) -> f64 {
    xs.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn dist_all(a: &[CMat], b: &[CMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt()
}

fn inner_all(a: &[CMat], b: &[CMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| inner(x, y)).sum()
}

fn axpy(x: &[CMat], alpha: f64, d: &[CMat]) -> Vec<CMat> {
    x.iter().zip(d).map(|(x, d)| x + d * cr(alpha)).collect()
}

/// A linear functional of the variables with its bound, in unit-norm form.
struct Functional {
    /// Per-variable coefficient matrices; `None` where the variable is absent.
    coeffs: Vec<Option<CMat>>,
    bound: f64,
    sense: Sense,
}

impl Functional {
    fn eval(&self, xs: &[CMat]) -> f64 {
        self.coeffs.iter().zip(xs).filter_map(|(c, x)| c.as_ref().map(|c| inner(c, x))).sum()
    }
}

/// Eigendecomposition of one shifted block and its PSD part.
struct BlockEig {
    vals: Vec<f64>,
    vecs: CMat,
}

impl BlockEig {
    fn new(m: &CMat) -> Self {
        let (vals, vecs) = herm_eig(m);
        Self { vals: vals.iter().copied().collect(), vecs }
    }

    fn psd_part(&self) -> CMat {
        let n = self.vals.len();
        let scaled = CMat::from_fn(n, n, |i, k| self.vecs[(i, k)] * self.vals[k].max(0.0));
        hermitian_part(&(scaled * self.vecs.adjoint()))
    }

    fn pos_norm2(&self) -> f64 {
        self.vals.iter().map(|v| v.max(0.0).powi(2)).sum()
    }

    /// Divided differences of `max(·, 0)` over eigenvalue pairs.
    fn omega(&self) -> CMat {
        let n = self.vals.len();
        CMat::from_fn(n, n, |p, q| {
            let (a, b) = (self.vals[p], self.vals[q]);
            let v = if a > 0.0 && b > 0.0 {
                1.0
            } else if a <= 0.0 && b <= 0.0 {
                0.0
            } else {
                (a.max(0.0) - b.max(0.0)) / (a - b)
            };
            cr(v)
        })
    }
}

/// Euclidean projection onto `{X_b ⪰ 0} ∩ diag caps ∩ affine rows`.
///
/// Every constraint other than the PSD cones is a linear functional, so the
/// projection is `X(y) = P_psd(Y − Σ_j y_j C_j)` for the optimal multipliers
/// `y`. These are found by a projected semismooth Newton method on the dual;
/// Dykstra's alternating projections serve as the fallback.
pub struct Projector<'p, 'a> {
    prog: &'p PsdProgram<'a>,
    /// Constraints rescaled to unit coefficient norm.
    rows: Vec<AffineConstraint>,
    funcs: Vec<Functional>,
    max_iter: usize,
}

const NEWTON_ITERS: usize = 60;

impl<'p, 'a> Projector<'p, 'a> {
    pub fn new(prog: &'p PsdProgram<'a>, max_iter: usize) -> Self {
        let rows: Vec<AffineConstraint> = prog
            .constraints
            .iter()
            .filter_map(|c| {
                let n = c.norm2().sqrt();
                if n == 0.0 {
                    return None;
                }
                Some(AffineConstraint {
                    coeffs: c.coeffs.iter().map(|(k, m)| (*k, m / cr(n))).collect(),
                    bound: c.bound / n,
                    sense: c.sense,
                })
            })
            .collect();
        let nb = prog.dims.len();
        let mut funcs = Vec::new();
        for r in &rows {
            let mut coeffs: Vec<Option<CMat>> = vec![None; nb];
            for (k, m) in &r.coeffs {
                let hm = hermitian_part(m);
                coeffs[*k] = Some(match coeffs[*k].take() {
                    Some(prev) => prev + hm,
                    None => hm,
                });
            }
            funcs.push(Functional { coeffs, bound: r.bound, sense: r.sense });
        }
        for (b, cap) in prog.diag_caps.iter().enumerate() {
            if let Some(cap) = cap {
                let n = prog.dims[b];
                for i in 0..n {
                    let mut coeffs: Vec<Option<CMat>> = vec![None; nb];
                    let mut e = CMat::zeros(n, n);
                    e[(i, i)] = cr(1.0);
                    coeffs[b] = Some(e);
                    funcs.push(Functional { coeffs, bound: *cap, sense: Sense::Le });
                }
            }
        }
        Self { prog, rows, funcs, max_iter }
    }

    /// Projects `x0` onto the feasible set.
    pub fn project(&self, x0: &[CMat]) -> Vec<CMat> {
        self.project_warm(x0, &mut None)
    }

    /// Like [`Projector::project`], but starts from the multipliers left in
    /// `warm` by an earlier call and stores the final ones there. Nearby
    /// inputs then need one or two Newton steps.
    pub fn project_warm(&self, x0: &[CMat], warm: &mut Option<Vec<f64>>) -> Vec<CMat> {
        let y: Vec<CMat> = x0.iter().map(hermitian_part).collect();
        if self.funcs.is_empty() {
            return y.iter().map(psd_project).collect();
        }
        let tol = 1e-12 * (norm_all(&y) + self.prog.scale);
        let start = match warm.take() {
            Some(w) if w.len() == self.funcs.len() => w,
            _ => vec![0.0; self.funcs.len()],
        };
        match self.newton(&y, start, tol) {
            Some((x, mult)) => {
                *warm = Some(mult);
                x
            }
            None => self.dykstra(&y),
        }
    }

    fn shifted(&self, y: &[CMat], mult: &[f64]) -> Vec<BlockEig> {
        y.iter()
            .enumerate()
            .map(|(b, yb)| {
                let mut m = yb.clone();
                for (f, &w) in self.funcs.iter().zip(mult) {
                    if w != 0.0 {
                        if let Some(c) = &f.coeffs[b] {
                            m -= c * cr(w);
                        }
                    }
                }
                BlockEig::new(&m)
            })
            .collect()
    }

    /// Dual objective (to be minimised) up to a constant.
    fn dual_value(&self, eigs: &[BlockEig], mult: &[f64]) -> f64 {
        0.5 * eigs.iter().map(BlockEig::pos_norm2).sum::<f64>()
            + self.funcs.iter().zip(mult).map(|(f, w)| f.bound * w).sum::<f64>()
    }

    fn clamp(&self, mult: &mut [f64]) {
        for (f, w) in self.funcs.iter().zip(mult.iter_mut()) {
            if f.sense == Sense::Le && *w < 0.0 {
                *w = 0.0;
            }
        }
    }

    /// Constraint residuals `a_j(X) − b_j` and the projected-gradient norm.
    fn residuals(&self, xs: &[CMat], mult: &[f64]) -> (Vec<f64>, f64) {
        let r: Vec<f64> = self.funcs.iter().map(|f| f.eval(xs) - f.bound).collect();
        let pg = self
            .funcs
            .iter()
            .zip(mult)
            .zip(&r)
            .map(|((f, &w), &rj)| match f.sense {
                Sense::Le => (w - (w + rj).max(0.0)).abs(),
                Sense::Eq => rj.abs(),
            })
            .fold(0.0, f64::max);
        (r, pg)
    }

    /// Generalised Hessian of the dual, `A ∂P_psd A^*`.
    fn hessian(&self, eigs: &[BlockEig]) -> nalgebra::DMatrix<f64> {
        let m = self.funcs.len();
        let mut h = nalgebra::DMatrix::<f64>::zeros(m, m);
        for (b, e) in eigs.iter().enumerate() {
            let omega = e.omega();
            let rotated: Vec<Option<CMat>> = self
                .funcs
                .iter()
                .map(|f| f.coeffs[b].as_ref().map(|c| e.vecs.adjoint() * c * &e.vecs))
                .collect();
            for j in 0..m {
                let Some(cj) = &rotated[j] else { continue };
                let wj = cj.component_mul(&omega);
                for k in j..m {
                    let Some(ck) = &rotated[k] else { continue };
                    let v = inner(ck, &wj);
                    h[(j, k)] += v;
                    if k != j {
                        h[(k, j)] += v;
                    }
                }
            }
        }
        h
    }

    fn newton(&self, y: &[CMat], mut mult: Vec<f64>, tol: f64) -> Option<(Vec<CMat>, Vec<f64>)> {
        let m = self.funcs.len();
        let lipschitz = m as f64;
        self.clamp(&mut mult);
        let mut eigs = self.shifted(y, &mult);
        let mut fval = self.dual_value(&eigs, &mult);
        for _ in 0..NEWTON_ITERS {
            let xs: Vec<CMat> = eigs.iter().map(BlockEig::psd_part).collect();
            let (r, pg) = self.residuals(&xs, &mult);
            if pg <= tol {
                return Some((xs, mult));
            }
            let eps = pg.min(1e-3 * (norm_all(y) + self.prog.scale));
            let active: Vec<bool> = self
                .funcs
                .iter()
                .zip(&mult)
                .zip(&r)
                .map(|((f, &w), &rj)| f.sense == Sense::Le && w <= eps && rj < 0.0)
                .collect();
            let free: Vec<usize> = (0..m).filter(|&j| !active[j]).collect();
            let mut dir = vec![0.0; m];
            for j in 0..m {
                if active[j] {
                    dir[j] = r[j] / lipschitz;
                }
            }
            if !free.is_empty() {
                let h = self.hessian(&eigs);
                let reg = (pg / (norm_all(y) + self.prog.scale)).clamp(1e-14, 1e-2);
                let nf = free.len();
                let hf = nalgebra::DMatrix::from_fn(nf, nf, |i, k| h[(free[i], free[k])] + if i == k { reg } else { 0.0 });
                let rhs = nalgebra::DVector::from_fn(nf, |i, _| r[free[i]]);
                let sol = match hf.cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => rhs / lipschitz,
                };
                for (i, &j) in free.iter().enumerate() {
                    dir[j] = sol[i];
                }
            }
            // Armijo search along the projected arc, then a plain projected
            // gradient step if the Newton direction stalls
            let mut accepted = None;
            let mut alpha = 1.0;
            for _ in 0..30 {
                let mut trial: Vec<f64> = mult.iter().zip(&dir).map(|(w, d)| w + alpha * d).collect();
                self.clamp(&mut trial);
                let te = self.shifted(y, &trial);
                let tv = self.dual_value(&te, &trial);
                let decrease: f64 = r.iter().zip(trial.iter().zip(&mult)).map(|(rj, (t, w))| rj * (t - w)).sum();
                // the slack absorbs rounding once the decrease is below it
                if tv <= fval - 1e-4 * decrease + 8.0 * f64::EPSILON * fval.abs() {
                    accepted = Some((trial, te, tv));
                    break;
                }
                alpha *= 0.5;
            }
            let (trial, te, tv) = match accepted {
                Some(a) => a,
                None => {
                    let mut trial: Vec<f64> = mult.iter().zip(&r).map(|(w, rj)| w + rj / lipschitz).collect();
                    self.clamp(&mut trial);
                    let te = self.shifted(y, &trial);
                    let tv = self.dual_value(&te, &trial);
                    (trial, te, tv)
                }
            };
            mult = trial;
            eigs = te;
            fval = tv;
        }
        let xs: Vec<CMat> = eigs.iter().map(BlockEig::psd_part).collect();
        let (_, pg) = self.residuals(&xs, &mult);
        (pg <= 1e3 * tol).then_some((xs, mult))
    }

    fn project_row(row: &AffineConstraint, xs: &mut [CMat]) {
        let r = row.lhs(xs) - row.bound;
        let step = match row.sense {
            Sense::Le => r.max(0.0),
            Sense::Eq => r,
        };
        if step != 0.0 {
            for (k, c) in &row.coeffs {
                xs[*k] -= c * cr(step);
            }
        }
    }

    fn project_caps(&self, xs: &mut [CMat]) {
        for (x, cap) in xs.iter_mut().zip(&self.prog.diag_caps) {
            if let Some(cap) = cap {
                for i in 0..x.nrows() {
                    if x[(i, i)].re > *cap {
                        x[(i, i)].re = *cap;
                    }
                }
            }
        }
    }

    /// Dykstra's alternating projections. The result is exactly PSD and
    /// satisfies the remaining sets up to the cycle budget.
    pub fn dykstra(&self, x0: &[CMat]) -> Vec<CMat> {
        let y: Vec<CMat> = x0.iter().map(hermitian_part).collect();
        let n_sets = self.rows.len() + 2;
        let zeros: Vec<CMat> = y.iter().map(|m| CMat::zeros(m.nrows(), m.ncols())).collect();
        let mut incr = vec![zeros; n_sets];
        let mut x = y.clone();
        let tol = 1e-12 * (norm_all(&y) + self.prog.scale);
        for _ in 0..self.max_iter {
            let prev = x.clone();
            for s in 0..n_sets {
                let mut z: Vec<CMat> = x.iter().zip(&incr[s]).map(|(a, b)| a + b).collect();
                let before = z.clone();
                if s < self.rows.len() {
                    Self::project_row(&self.rows[s], &mut z);
                } else if s == self.rows.len() {
                    self.project_caps(&mut z);
                } else {
                    z = z.iter().map(psd_project).collect();
                }
                incr[s] = before.iter().zip(&z).map(|(b, a)| b - a).collect();
                x = z;
            }
            if dist_all(&x, &prev) <= tol {
                break;
            }
        }
        x
    }
}

impl FirstOrderSolver {
    /// Starting from a scaled identity, looks for any feasible point.
    pub fn feasibility_presolve(&self, prog: &PsdProgram) -> Result<Vec<CMat>> {
        let start: Vec<CMat> = prog
            .dims
            .iter()
            .map(|&n| CMat::identity(n, n) * cr(prog.scale / n as f64))
            .collect();
        self.make_feasible(prog, &start)
    }

    fn make_feasible(&self, prog: &PsdProgram, start: &[CMat]) -> Result<Vec<CMat>> {
        if prog.max_violation(start) <= 1e-12 * prog.scale {
            return Ok(start.to_vec());
        }
        let x = Projector::new(prog, self.opts.dykstra_iters).project(start);
        let x = polish(prog, x);
        let residual = prog.max_violation(&x);
        if residual > 1e-6 * prog.scale {
            return Err(Error::Infeasible { residual });
        }
        Ok(x)
    }
}

/// Shrinks `x` toward zero just enough to remove residual violations of
/// `≤` rows with nonnegative bounds and of the diagonal caps. Only applied when
/// every row has that form, since scaling then preserves feasibility.
fn polish(prog: &PsdProgram, x: Vec<CMat>) -> Vec<CMat> {
    let scalable = prog.constraints.iter().all(|c| c.sense == Sense::Le && c.bound >= 0.0)
        && prog.diag_caps.iter().all(|c| c.is_none_or(|v| v >= 0.0));
    let mut x: Vec<CMat> = x.iter().map(psd_project).collect();
    if !scalable {
        return x;
    }
    let mut alpha = 1.0f64;
    for c in &prog.constraints {
        let lhs = c.lhs(&x);
        if lhs > c.bound {
            alpha = alpha.min(c.bound / lhs);
        }
    }
    for (m, cap) in x.iter().zip(&prog.diag_caps) {
        if let Some(cap) = cap {
            for i in 0..m.nrows() {
                if m[(i, i)].re > *cap {
                    alpha = alpha.min(cap / m[(i, i)].re);
                }
            }
        }
    }
    if alpha < 1.0 {
        for m in x.iter_mut() {
            *m *= cr(alpha);
        }
    }
    x
}

impl PsdSolver for FirstOrderSolver {
    fn solve(&self, prog: &PsdProgram, start: Option<&[CMat]>) -> Result<SolveReport> {
        let opts = &self.opts;
        let proj = Projector::new(prog, opts.dykstra_iters);
        let mut x = match start {
            Some(s) => self.make_feasible(prog, s)?,
            None => self.feasibility_presolve(prog)?,
        };
        let (mut fx, mut gx) = match prog.objective.value_and_gradient(&x) {
            Some(v) => v,
            None => {
                x = self.feasibility_presolve(prog)?;
                prog.objective.value_and_gradient(&x).ok_or(Error::Infeasible { residual: f64::NAN })?
            }
        };
        let scale = prog.scale.max(f64::MIN_POSITIVE);
        if norm_all(&gx) == 0.0 {
            // Stationary start: nudge to a nearby feasible point.
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let nudged: Vec<CMat> = x
                .iter()
                .map(|m| {
                    let n = m.nrows();
                    let r = CMat::from_fn(n, n, |_, _| complex_gaussian(&mut rng));
                    m + hermitian_part(&(&r * r.adjoint())) * cr(1e-3 * scale / n as f64)
                })
                .collect();
            let nudged = polish(prog, proj.project(&nudged));
            if let Some((f, g)) = prog.objective.value_and_gradient(&nudged) {
                if norm_all(&g) > 0.0 {
                    x = nudged;
                    fx = f;
                    gx = g;
                }
            }
        }
        let mut history = vec![fx];
        let gnorm = norm_all(&gx);
        if gnorm == 0.0 {
            let violation = prog.max_violation(&x);
            return Ok(SolveReport {
                solution: x,
                objective: fx,
                iterations: 0,
                stationarity: 0.0,
                violation,
                status: SolveStatus::Converged,
                history,
            });
        }
        let mut t = 0.1 * norm_all(&x).max(scale) / gnorm;
        let mut y = x.clone();
        let (mut fy, mut gy) = (fx, gx.clone());
        let mut theta = 1.0f64;
        let mut warm = None;
        let mut stationarity = f64::INFINITY;
        let mut status = SolveStatus::IterLimit;
        let mut iterations = 0;
        let t_floor = 1e-20 * t;

        'outer: for k in 0..opts.max_iter {
            iterations = k + 1;
            // backtracking proximal-gradient step from y
            let (z, fz) = loop {
                let z = proj.project_warm(&axpy(&y, -t, &gy), &mut warm);
                if let Some(fz) = prog.objective.value(&z) {
                    let d: Vec<CMat> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
                    let model = fy + inner_all(&gy, &d) + inner_all(&d, &d) / (2.0 * t);
                    if fz <= model + 1e-12 * fy.abs() {
                        break (z, fz);
                    }
                }
                t *= 0.5;
                if t < t_floor {
                    break 'outer;
                }
            };
            let step = dist_all(&z, &y) / norm_all(&y).max(scale);
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let x_prev = x.clone();
            let improved = fz <= fx;
            if improved {
                x = z.clone();
                fx = fz;
            }
            history.push(fx);

            if step < opts.tol {
                // confirm with a plain step from the incumbent
                let gx_now = prog.objective.value_and_gradient(&x).map(|v| v.1);
                if let Some(g) = gx_now {
                    let zx = proj.project_warm(&axpy(&x, -t, &g), &mut warm);
                    stationarity = dist_all(&zx, &x) / norm_all(&x).max(scale);
                    if let Some(fzx) = prog.objective.value(&zx) {
                        if fzx < fx {
                            x = zx;
                            fx = fzx;
                            *history.last_mut().unwrap() = fx;
                        }
                    }
                    if stationarity < opts.tol {
                        status = SolveStatus::Converged;
                        break;
                    }
                }
            }

            // monotone FISTA extrapolation, restarting when z did not improve
            let mut next_y = if improved {
                let mom = (theta - 1.0) / theta_next;
                x.iter().zip(&x_prev).map(|(a, b)| a + (a - b) * cr(mom)).collect::<Vec<_>>()
            } else {
                let w = theta / theta_next;
                x.iter().zip(&z).map(|(a, zz)| a + (zz - a) * cr(w)).collect::<Vec<_>>()
            };
            theta = if improved { theta_next } else { 1.0 };
            let mut eval = prog.objective.value_and_gradient(&next_y);
            if eval.is_none() {
                next_y = x.clone();
                theta = 1.0;
                eval = prog.objective.value_and_gradient(&next_y);
            }
            match eval {
                Some((f, g)) => {
                    y = next_y;
                    fy = f;
                    gy = g;
                }
                None => break,
            }
            t *= 1.2;
        }

        let x = polish(prog, x);
        let objective = prog.objective.value(&x).unwrap_or(fx);
        let violation = prog.max_violation(&x);
        if status == SolveStatus::Converged && violation > 1e-7 * scale {
            status = SolveStatus::IterLimit;
        }
        if stationarity.is_infinite() {
            if let Some((_, g)) = prog.objective.value_and_gradient(&x) {
                let zx = proj.project(&axpy(&x, -t, &g));
                stationarity = dist_all(&zx, &x) / norm_all(&x).max(scale);
            }
        }
        Ok(SolveReport { solution: x, objective, iterations, stationarity, violation, status, history })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{herm_inverse, real_trace};

    struct Trace;
    impl Objective for Trace {
        fn value_and_gradient(&self, xs: &[CMat]) -> Option<(f64, Vec<CMat>)> {
            let n = xs[0].nrows();
            Some((real_trace(&xs[0]), vec![CMat::identity(n, n)]))
        }
    }

    /// `tr((X + I)⁻¹)`
    struct InvShift;
    impl Objective for InvShift {
        fn value_and_gradient(&self, xs: &[CMat]) -> Option<(f64, Vec<CMat>)> {
            let n = xs[0].nrows();
            let inv = herm_inverse(&(&xs[0] + CMat::identity(n, n)))?;
            let g = -(&inv * &inv);
            Some((real_trace(&inv), vec![g]))
        }
    }

    #[test]
    fn trace_with_diag_caps_goes_to_zero() {
        let obj = Trace;
        let mut prog = PsdProgram::new(vec![3], &obj, 1.0);
        prog.diag_caps = vec![Some(1.0)];
        let rep = FirstOrderSolver::default().solve(&prog, None).unwrap();
        assert!(rep.objective.abs() < 1e-6, "{}", rep.objective);
        assert!(rep.violation < 1e-9);
    }

    #[test]
    fn symmetric_power_split() {
        let obj = InvShift;
        let p = 3.0;
        let mut prog = PsdProgram::new(vec![2], &obj, p);
        prog.constraints.push(AffineConstraint::le(vec![(0, CMat::identity(2, 2))], p));
        let start = vec![CMat::from_row_slice(2, 2, &[cr(0.2), cr(0.1), cr(0.1), cr(0.1)])];
        let rep = FirstOrderSolver::default().solve(&prog, Some(&start)).unwrap();
        let expect = 2.0 / (1.0 + p / 2.0);
        assert!((rep.objective - expect).abs() < 1e-6 * expect, "{} vs {}", rep.objective, expect);
        assert!(fro_norm(&(&rep.solution[0] - CMat::identity(2, 2) * cr(p / 2.0))) < 1e-3);
        assert_eq!(rep.status, SolveStatus::Converged);
        for w in rep.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn presolve_cases() {
        let obj = Trace;
        let prog = PsdProgram::new(vec![3], &obj, 3.0);
        let x = FirstOrderSolver::default().feasibility_presolve(&prog).unwrap();
        assert_eq!(x[0], CMat::identity(3, 3));

        let mut bad = PsdProgram::new(vec![2], &obj, 1.0);
        bad.constraints.push(AffineConstraint::le(vec![(0, CMat::identity(2, 2))], -1.0));
        assert!(matches!(
            FirstOrderSolver::default().feasibility_presolve(&bad),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn dykstra_lands_in_every_set_and_is_idempotent() {
        let obj = Trace;
        let mut prog = PsdProgram::new(vec![3], &obj, 1.0);
        prog.diag_caps = vec![Some(0.5)];
        let w = CMat::from_row_slice(3, 3, &[cr(2.0), cr(0.3), cr(0.0), cr(0.3), cr(1.0), cr(0.1), cr(0.0), cr(0.1), cr(0.5)]);
        prog.constraints.push(AffineConstraint::le(vec![(0, w)], 0.8));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = CMat::from_fn(3, 3, |_, _| complex_gaussian(&mut rng));
        let y = vec![hermitian_part(&(&a * cr(2.0)))];
        let proj = Projector::new(&prog, 2000);
        let p1 = proj.project(&y);
        assert!(prog.max_violation(&p1) < 1e-9);
        let p2 = proj.project(&p1);
        assert!(dist_all(&p1, &p2) < 1e-12);
    }

    fn two_block_program(obj: &dyn Objective) -> PsdProgram<'_> {
        let mut prog = PsdProgram::new(vec![3, 3], obj, 2.0);
        prog.diag_caps = vec![Some(0.7), None];
        prog.constraints.push(AffineConstraint::eq(vec![(0, CMat::identity(3, 3)), (1, CMat::identity(3, 3))], 2.0));
        let w = CMat::from_row_slice(3, 3, &[cr(1.0), cr(0.4), cr(0.0), cr(0.4), cr(2.0), cr(0.2), cr(0.0), cr(0.2), cr(0.5)]);
        prog.constraints.push(AffineConstraint::le(vec![(1, w)], 1.0));
        prog
    }

    #[test]
    fn newton_projection_matches_dykstra() {
        let obj = Trace;
        let prog = two_block_program(&obj);
        let proj = Projector::new(&prog, 20000);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let y: Vec<CMat> = (0..2)
                .map(|_| hermitian_part(&CMat::from_fn(3, 3, |_, _| complex_gaussian(&mut rng) * 1.5)))
                .collect();
            let a = proj.project(&y);
            let b = proj.dykstra(&y);
            assert!(prog.max_violation(&a) < 1e-9);
            assert!(dist_all(&a, &b) < 1e-6, "{}", dist_all(&a, &b));
            // obtuse-angle test against the start point of a feasible line
            let feasible: Vec<CMat> = vec![CMat::identity(3, 3) * cr(0.6), CMat::identity(3, 3) * cr(0.2 / 3.0)];
            assert!(prog.max_violation(&feasible) < 1e-15);
            let lhs: f64 = y.iter().zip(&a).zip(&feasible).map(|((y, p), z)| inner(&(y - p), &(z - p))).sum();
            assert!(lhs <= 1e-9, "{lhs}");
        }
    }

    #[test]
    fn warm_started_projection_agrees_with_cold() {
        let obj = Trace;
        let prog = two_block_program(&obj);
        let proj = Projector::new(&prog, 2000);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut warm = None;
        let mut y: Vec<CMat> = (0..2).map(|_| hermitian_part(&CMat::from_fn(3, 3, |_, _| complex_gaussian(&mut rng)))).collect();
        for _ in 0..5 {
            let a = proj.project_warm(&y, &mut warm);
            let b = proj.project(&y);
            assert!(dist_all(&a, &b) < 1e-10);
            y = y.iter().map(|m| m + hermitian_part(&CMat::from_fn(3, 3, |_, _| complex_gaussian(&mut rng) * 0.05))).collect();
        }
    }
}
