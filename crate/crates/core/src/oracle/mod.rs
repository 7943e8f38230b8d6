//! Independent reference solutions: centralized solves of the aggregated
//! problem, exhaustive grids for tiny instances, and KKT residuals.

mod barrier;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algo::{test_function_e, test_threshold, LambdaForm};
use crate::error::{Error, Result};
use crate::problem::{NodeProblem, ProblemInstance, ReferenceInfo, TestConstants};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const CENTRALIZED_TAG: &str = "centralized-log-barrier";
pub const APD_TAG: &str = "centralized-apd-backtracking";

/// Largest number of grid points a brute-force search may visit.
const GRID_POINT_CAP: f64 = 2e10;
/// Points on the segment searched by `refine_dual_bounds`.
const DUAL_BOUND_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: DVector<f64>,
    pub phi_star: f64,
    /// Multipliers of each node's constraints.
    pub theta_star: Vec<DVector<f64>>,
    pub kkt_residual: f64,
    pub method_tag: String,
    pub tolerance: f64,
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn info(&self) -> ReferenceInfo {
        ReferenceInfo {
            phi_star: self.phi_star,
            method_tag: self.method_tag.clone(),
            tolerance: self.tolerance,
            kkt_residual: self.kkt_residual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Iterations between residual checks.
    pub check_every: usize,
    /// Dual-to-primal step ratio.
    pub zeta: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            tol: DEFAULT_TOL,
            max_iters: 5_000_000,
            check_every: 50,
            zeta: 1.0,
        }
    }
}

/// The whole network's problem as one node: summed objective, stacked
/// constraints, summed l1 weight and the tightest box. The dual is only
/// kept nonnegative.
pub fn aggregate(instance: &ProblemInstance) -> Result<NodeProblem> {
    let first = instance
        .nodes
        .first()
        .ok_or_else(|| Error::InvalidProblem("instance has no nodes".into()))?;
    let mut agg = NodeProblem::quadratic(first.q.clone() * 0.0, first.lin.clone() * 0.0, 0.0);
    let mut radius = f64::INFINITY;
    let mut l1 = 0.0;
    for node in &instance.nodes {
        agg.q += &node.q;
        agg.lin += &node.lin;
        agg.offset += node.offset;
        agg.constraints.extend(node.constraints.iter().cloned());
        l1 += node.l1_weight;
        radius = radius.min(node.box_radius);
    }
    Ok(agg.with_l1(l1).with_box(radius))
}

fn split_duals(instance: &ProblemInstance, theta: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut offset = 0;
    instance
        .nodes
        .iter()
        .map(|node| {
            let m = node.num_constraints();
            let part = theta.rows(offset, m).into_owned();
            offset += m;
            part
        })
        .collect()
}

fn stack_duals(theta: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        theta.iter().map(|t| t.len()).sum(),
        theta.iter().flat_map(|t| t.iter().copied()),
    )
}

/// Max of the prox fixed-point gap at unit step, the largest constraint
/// violation (including negative multipliers), and the largest
/// complementarity product.
pub fn kkt_residual(instance: &ProblemInstance, x: &DVector<f64>, theta: &[DVector<f64>]) -> Result<f64> {
    if theta.len() != instance.num_nodes() {
        return Err(Error::LengthMismatch {
            expected: instance.num_nodes(),
            got: theta.len(),
        });
    }
    let agg = aggregate(instance)?;
    let theta = stack_duals(theta);
    if theta.len() != agg.num_constraints() {
        return Err(Error::LengthMismatch {
            expected: agg.num_constraints(),
            got: theta.len(),
        });
    }
    Ok(kkt_aggregate(&agg, x, &theta))
}

fn kkt_aggregate(agg: &NodeProblem, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let direction = agg.f_grad(x) + agg.g_jac_t_apply(x, theta);
    let stationarity = match agg.prox_phi(&(x - direction), 1.0) {
        Ok(p) => (x - p).norm(),
        Err(_) => f64::INFINITY,
    };
    let g = agg.g_value(x);
    let feasibility = g
        .iter()
        .chain(theta.iter().map(|t| -t).collect::<Vec<_>>().iter())
        .fold(0.0f64, |acc, v| acc.max(v.max(0.0)));
    let slackness = g
        .iter()
        .zip(theta.iter())
        .fold(0.0f64, |acc, (gv, t)| acc.max((gv * t).abs()));
    stationarity.max(feasibility).max(slackness)
}

/// Duality gap bound at which path following hands over to the polish.
const BARRIER_GAP: f64 = 1e-8;
/// Extra path-following steps allowed when the polish falls short.
const EXTRA_BARRIER_STEPS: usize = 4;

/// Reference optimum of the aggregated problem, accepted once the KKT
/// residual is at most `tol`.
///
/// A log-barrier interior-point method (with the l1 term split as
/// `x = u - v`, `u, v >= 0`) locates the optimal face; Newton's method on
/// the KKT equations of that face then removes the barrier bias.
pub fn solve_centralized(instance: &ProblemInstance, tol: f64) -> Result<ReferenceSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let agg = aggregate(instance)?;
    let n = agg.dim();
    let split = agg.l1_weight > 0.0;
    let x_start = strictly_feasible_point(&agg)?;
    let prog = smooth_program(&agg, split);
    let (mut y, mut t) = prog.solve(lift(&agg, &x_start, split), 1.0, BARRIER_GAP)?;

    let mut best = f64::INFINITY;
    for step in 0..=EXTRA_BARRIER_STEPS {
        let x = if split { y.rows(0, n) - y.rows(n, n) } else { y.clone() };
        let theta = prog.multipliers(&y, t);
        let mut candidates = vec![(x.clone(), theta.clone())];
        if let Some(p) = polish(&agg, &x, &theta) {
            candidates.push(p);
        }
        for (x, theta) in candidates {
            let res = kkt_aggregate(&agg, &x, &theta);
            if res <= tol {
                return Ok(ReferenceSolution {
                    phi_star: agg.objective(&x),
                    theta_star: split_duals(instance, &theta),
                    x_star: x,
                    kkt_residual: res,
                    method_tag: CENTRALIZED_TAG.into(),
                    tolerance: tol,
                    iterations: step,
                });
            }
            best = best.min(res);
        }
        (y, t) = prog.advance(y, t)?;
    }
    Err(Error::NoConvergence {
        best_residual: best,
        iters: EXTRA_BARRIER_STEPS,
    })
}

/// Newton's method on the KKT equations of the face guessed from a
/// near-optimal `(x, theta)`: constraints with `theta_k > -g_k(x)` are
/// active, near-zero coordinates stay at zero and coordinates at the box
/// boundary stay there.
fn polish(agg: &NodeProblem, x: &DVector<f64>, theta: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = agg.dim();
    let r = agg.box_radius;
    let scale = x.amax().max(1.0);
    let g = agg.g_value(x);
    let active: Vec<usize> = (0..g.len()).filter(|&k| theta[k] > -g[k]).collect();
    let mut x = x.clone();
    let mut free = Vec::new();
    for j in 0..n {
        if x[j].abs() <= 1e-6 * scale {
            x[j] = 0.0;
        } else if r.is_finite() && r - x[j].abs() <= 1e-6 * scale {
            x[j] = r.copysign(x[j]);
        } else {
            free.push(j);
        }
    }
    let signs: Vec<f64> = free.iter().map(|&j| x[j].signum()).collect();
    let mut th = DVector::zeros(g.len());
    for &k in &active {
        th[k] = theta[k];
    }
    let (nf, na) = (free.len(), active.len());
    if nf + na == 0 {
        return Some((x, th));
    }
    for _ in 0..30 {
        let stat = agg.f_grad(&x) + agg.g_jac_t_apply(&x, &th);
        let mut rhs = DVector::zeros(nf + na);
        for (a, &j) in free.iter().enumerate() {
            rhs[a] = stat[j] + agg.l1_weight * signs[a];
        }
        for (b, &k) in active.iter().enumerate() {
            rhs[nf + b] = agg.constraints[k].value(&x);
        }
        if rhs.amax() <= 1e-15 * scale {
            break;
        }
        let mut hess = agg.q.clone();
        for &k in &active {
            hess += &agg.constraints[k].a * th[k];
        }
        let mut jac = DMatrix::zeros(nf + na, nf + na);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                jac[(a, b)] = hess[(i, j)];
            }
        }
        for (b, &k) in active.iter().enumerate() {
            let grad_k = agg.constraints[k].gradient(&x);
            for (a, &j) in free.iter().enumerate() {
                jac[(a, nf + b)] = grad_k[j];
                jac[(nf + b, a)] = grad_k[j];
            }
        }
        let step = jac.lu().solve(&rhs)?;
        for (a, &j) in free.iter().enumerate() {
            x[j] -= step[a];
        }
        for (b, &k) in active.iter().enumerate() {
            th[k] -= step[nf + b];
        }
        if x.iter().chain(th.iter()).any(|v| !v.is_finite()) {
            return None;
        }
    }
    Some((x, th))
}

/// A point strictly inside the box and every constraint, from a phase-one
/// barrier problem `min s  s.t.  g_k(x) <= s`.
fn strictly_feasible_point(agg: &NodeProblem) -> Result<DVector<f64>> {
    phase_one(agg, false)
}

/// Phase one. With `deepest` the problem is solved to near optimality,
/// giving a point of (almost) maximal smallest slack; otherwise it stops
/// at the first strictly feasible point.
fn phase_one(agg: &NodeProblem, deepest: bool) -> Result<DVector<f64>> {
    let n = agg.dim();
    let x0 = DVector::zeros(n);
    let worst = agg
        .constraints
        .iter()
        .map(|c| c.value(&x0))
        .fold(f64::NEG_INFINITY, f64::max);
    if agg.constraints.is_empty() || (worst < 0.0 && !deepest) {
        return Ok(x0);
    }
    let r = agg.box_radius;
    let cons = agg
        .constraints
        .iter()
        .map(|c| {
            let mut a = DMatrix::zeros(n + 1, n + 1);
            a.view_mut((0, 0), (n, n)).copy_from(&c.a);
            let mut b = DVector::zeros(n + 1);
            b.rows_mut(0, n).copy_from(&c.b);
            b[n] = -1.0;
            barrier::QuadConstr { a, b, d: c.c }
        })
        .collect();
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let mut lo = DVector::from_element(n + 1, -r);
    let mut hi = DVector::from_element(n + 1, r);
    // keeps the slack bounded when the box is not
    lo[n] = -1e3 * (1.0 + worst.abs());
    hi[n] = f64::INFINITY;
    let prog = barrier::Program {
        p: DMatrix::zeros(n + 1, n + 1),
        c,
        cons,
        lo,
        hi,
    };
    let mut y = DVector::zeros(n + 1);
    y[n] = worst.abs() + 1.0;
    if deepest {
        let (y, _) = prog.solve(y, 1.0, 1e-6)?;
        if y[n] < 0.0 {
            return Ok(y.rows(0, n).into_owned());
        }
        return Err(Error::InvalidProblem(
            "constraints have no strictly feasible point".into(),
        ));
    }
    let mut t = 1.0;
    for _ in 0..40 {
        y = prog.center(y, t, &|y: &DVector<f64>| y[n] < 0.0)?;
        if y[n] < 0.0 {
            return Ok(y.rows(0, n).into_owned());
        }
        t *= 10.0;
    }
    Err(Error::InvalidProblem(
        "constraints have no strictly feasible point".into(),
    ))
}

/// The aggregated problem as a smooth program, in `(u, v)` when `split`.
fn smooth_program(agg: &NodeProblem, split: bool) -> barrier::Program {
    let n = agg.dim();
    let r = agg.box_radius;
    if !split {
        return barrier::Program {
            p: agg.q.clone(),
            c: agg.lin.clone(),
            cons: agg
                .constraints
                .iter()
                .map(|c| barrier::QuadConstr {
                    a: c.a.clone(),
                    b: c.b.clone(),
                    d: c.c,
                })
                .collect(),
            lo: DVector::from_element(n, -r),
            hi: DVector::from_element(n, r),
        };
    }
    // x = S y with S = [I, -I]
    let mut s = DMatrix::zeros(n, 2 * n);
    for j in 0..n {
        s[(j, j)] = 1.0;
        s[(j, n + j)] = -1.0;
    }
    let st = s.transpose();
    barrier::Program {
        p: &st * &agg.q * &s,
        c: &st * &agg.lin + DVector::from_element(2 * n, agg.l1_weight),
        cons: agg
            .constraints
            .iter()
            .map(|c| barrier::QuadConstr {
                a: &st * &c.a * &s,
                b: &st * &c.b,
                d: c.c,
            })
            .collect(),
        lo: DVector::zeros(2 * n),
        hi: DVector::from_element(2 * n, r),
    }
}

fn lift(agg: &NodeProblem, x: &DVector<f64>, split: bool) -> DVector<f64> {
    if !split {
        return x.clone();
    }
    let n = x.len();
    let r = agg.box_radius;
    let mut y = DVector::zeros(2 * n);
    for j in 0..n {
        let eps = if r.is_finite() {
            ((r - x[j].abs()) / 2.0).min(1.0)
        } else {
            1.0
        };
        y[j] = x[j].max(0.0) + eps;
        y[n + j] = (-x[j]).max(0.0) + eps;
    }
    y
}

/// Single-agent accelerated primal-dual iteration with backtracking on the
/// aggregated problem, run until the KKT residual drops below `opts.tol`.
/// Slow when the multipliers are large; used as a secondary check.
pub fn solve_centralized_apd(instance: &ProblemInstance, opts: OracleOptions) -> Result<ReferenceSolution> {
    let agg = aggregate(instance)?;
    let consts = TestConstants {
        delta: 0.1,
        c_alpha: 0.1,
        c_beta: 0.1,
        c_varsigma: 0.1,
    };
    let (rho, zeta) = (0.7, opts.zeta);
    let m = agg.num_constraints();
    let n = agg.dim();

    let mut x = agg.prox_phi(&node_mean_x0(instance, n), 1.0)?;
    let mut theta = DVector::zeros(m);
    let mut r = DVector::zeros(n);
    let mut r_prev = DVector::zeros(n);
    let mut tau: f64 = 1.0;
    let mut best = (f64::INFINITY, x.clone(), theta.clone());

    for k in 0..opts.max_iters {
        let grad = agg.f_grad(&x);
        // allow moderate step growth; acceptance is still tested
        let mut tau_tilde = (tau * 1.05).min(1e6);
        let mut contractions = 0;
        let (x_new, theta_new) = loop {
            let eta = tau / tau_tilde;
            let p = &r + (&r - &r_prev) * eta;
            let x_c = agg.prox_phi(&(&x - (&grad + p) * tau_tilde), tau_tilde)?;
            let theta_c = if m == 0 {
                theta.clone()
            } else {
                agg.project_dual(&(&theta + agg.g_value(&x_c) * (zeta * tau_tilde)))?
            };
            let e = test_function_e(
                &agg,
                &x,
                &theta,
                &x_c,
                &theta_c,
                tau_tilde,
                zeta,
                &consts,
                LambdaForm::Exact,
            );
            if e <= test_threshold(&x, &theta, &x_c, &theta_c, tau_tilde, zeta, consts.delta) {
                break (x_c, theta_c);
            }
            contractions += 1;
            if contractions > 500 {
                return Err(Error::BacktrackLimit {
                    node: 0,
                    iter: k,
                    limit: 500,
                });
            }
            tau_tilde *= rho;
        };
        tau = tau_tilde;
        r_prev = std::mem::replace(&mut r, agg.g_jac_t_apply(&x_new, &theta_new));
        x = x_new;
        theta = theta_new;
        if x.iter().chain(theta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iter: k,
                what: "centralized reference iterate".into(),
            });
        }

        if (k + 1) % opts.check_every == 0 {
            let res = kkt_aggregate(&agg, &x, &theta);
            if res < best.0 {
                best = (res, x.clone(), theta.clone());
            }
            if res <= opts.tol {
                return Ok(ReferenceSolution {
                    phi_star: agg.objective(&x),
                    theta_star: split_duals(instance, &theta),
                    x_star: x,
                    kkt_residual: res,
                    method_tag: APD_TAG.into(),
                    tolerance: opts.tol,
                    iterations: k + 1,
                });
            }
        }
    }
    log::warn!("centralized reference stalled at residual {:.3e}", best.0);
    Err(Error::NoConvergence {
        best_residual: best.0,
        iters: opts.max_iters,
    })
}

fn node_mean_x0(instance: &ProblemInstance, n: usize) -> DVector<f64> {
    instance.x0.iter().fold(DVector::zeros(n), |acc, x| acc + x) / instance.num_nodes() as f64
}

/// Solves the instance and stores the reference value in it.
pub fn attach_reference(instance: &mut ProblemInstance, tol: f64) -> Result<ReferenceSolution> {
    let sol = solve_centralized(instance, tol)?;
    instance.reference = Some(sol.info());
    Ok(sol)
}

/// Tightens every finite dual bound with the Lagrangian inequality
/// `sum_i theta_i*'(-g_i(x)) <= phi(x) - phi*`, valid at any feasible `x`.
/// For a node whose constraints all have slack at least `s_i(x) > 0` this
/// gives `2 ||theta_i*|| <= 2 (phi(x) - phi*) / s_i(x)`. The points `x` run
/// along the segment from `x*` to a point of maximal slack, and each node
/// keeps the smallest value found (or its old bound if that is smaller).
/// Returns the new bounds.
pub fn refine_dual_bounds(instance: &mut ProblemInstance, reference: &ReferenceSolution) -> Result<Vec<f64>> {
    let agg = aggregate(instance)?;
    if agg.constraints.is_empty() {
        return Ok(instance.nodes.iter().map(|nd| nd.dual_bound).collect());
    }
    let deep = phase_one(&agg, true)?;
    // slack in the reference value so that its own error cannot
    // invalidate the bound
    let phi_floor = reference.phi_star - 1e-9 * (1.0 + reference.phi_star.abs());
    let mut best: Vec<f64> = instance.nodes.iter().map(|nd| nd.dual_bound).collect();
    for step in 1..=DUAL_BOUND_SAMPLES {
        let lam = step as f64 / DUAL_BOUND_SAMPLES as f64;
        let x = &reference.x_star + (&deep - &reference.x_star) * lam;
        let gap = agg.objective(&x) - phi_floor;
        if !gap.is_finite() {
            continue;
        }
        for (node, b) in instance.nodes.iter().zip(best.iter_mut()) {
            if node.num_constraints() == 0 || !b.is_finite() && node.constraints.iter().all(|c| c.is_affine()) {
                continue;
            }
            let slack = node.g_value(&x).iter().fold(f64::INFINITY, |m, g| m.min(-g));
            if slack > 0.0 {
                *b = b.min(2.0 * gap.max(0.0) / slack);
            }
        }
    }
    for (node, &b) in instance.nodes.iter_mut().zip(best.iter()) {
        if b > 0.0 {
            node.dual_bound = b;
        }
    }
    Ok(instance.nodes.iter().map(|nd| nd.dual_bound).collect())
}

/// Flat copy of the aggregated data for fast pointwise evaluation.
struct FlatProblem {
    n: usize,
    q: Vec<f64>,
    lin: Vec<f64>,
    offset: f64,
    l1: f64,
    cons: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl FlatProblem {
    fn new(agg: &NodeProblem) -> Self {
        let n = agg.dim();
        let flat = |m: &nalgebra::DMatrix<f64>| (0..n * n).map(|k| m[(k / n, k % n)]).collect::<Vec<_>>();
        FlatProblem {
            n,
            q: flat(&agg.q),
            lin: agg.lin.iter().copied().collect(),
            offset: agg.offset,
            l1: agg.l1_weight,
            cons: agg
                .constraints
                .iter()
                .map(|c| (flat(&c.a), c.b.iter().copied().collect(), c.c))
                .collect(),
        }
    }

    fn quad(&self, m: &[f64], lin: &[f64], c: f64, x: &[f64]) -> f64 {
        let n = self.n;
        let mut v = c;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += m[i * n + j] * x[j];
            }
            v += 0.5 * x[i] * row + lin[i] * x[i];
        }
        v
    }

    /// Objective at a feasible point, `None` when a constraint fails.
    fn eval(&self, x: &[f64]) -> Option<f64> {
        for (a, b, c) in &self.cons {
            if self.quad(a, b, *c, x) > 0.0 {
                return None;
            }
        }
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        Some(self.quad(&self.q, &self.lin, self.offset, x) + self.l1 * l1)
    }
}

/// Index range `[lo, hi]` of the grid `origin + k * step` covering `[a, b]`.
fn grid_range(origin: f64, step: f64, a: f64, b: f64, max_k: i64) -> Option<(i64, i64)> {
    let lo = (((a - origin) / step).floor() as i64).max(0);
    let hi = (((b - origin) / step).ceil() as i64).min(max_k);
    (lo <= hi).then_some((lo, hi))
}

/// Bounding box of `{x : 0.5 x'Ax + b'x + c <= 0}` for positive definite `A`.
fn ellipsoid_box(agg: &NodeProblem, idx: usize) -> Option<Vec<(f64, f64)>> {
    let c = &agg.constraints[idx];
    let chol = c.a.clone().cholesky()?;
    let inv = chol.inverse();
    let center = -(&inv * &c.b);
    let level = 0.5 * center.dot(&(&c.a * &center)) - c.c;
    if level < 0.0 {
        return Some(vec![(f64::INFINITY, f64::NEG_INFINITY); agg.dim()]);
    }
    Some(
        (0..agg.dim())
            .map(|j| {
                let half = (2.0 * level * inv[(j, j)]).sqrt();
                (center[j] - half, center[j] + half)
            })
            .collect(),
    )
}

/// Minimum of the aggregated objective over the feasible points of the grid
/// `-R + k * step` covering the box `[-R, R]^n`, `n <= 3`. Only points in the
/// bounding box of the positive definite constraints are visited; the others
/// are infeasible.
pub fn brute_force_grid(instance: &ProblemInstance, step: f64) -> Result<f64> {
    let agg = aggregate(instance)?;
    let mut bounds = vec![(-agg.box_radius, agg.box_radius); agg.dim()];
    for idx in 0..agg.num_constraints() {
        if let Some(b) = ellipsoid_box(&agg, idx) {
            for (acc, (lo, hi)) in bounds.iter_mut().zip(b) {
                acc.0 = acc.0.max(lo);
                acc.1 = acc.1.min(hi);
            }
        }
    }
    grid_search(&agg, step, &bounds)
}

/// Same grid as [`brute_force_grid`] restricted to `center +- half_width`.
pub fn brute_force_window(
    instance: &ProblemInstance,
    center: &DVector<f64>,
    half_width: f64,
    step: f64,
) -> Result<f64> {
    let agg = aggregate(instance)?;
    if center.len() != agg.dim() {
        return Err(Error::LengthMismatch {
            expected: agg.dim(),
            got: center.len(),
        });
    }
    let bounds: Vec<(f64, f64)> = center.iter().map(|c| (c - half_width, c + half_width)).collect();
    grid_search(&agg, step, &bounds)
}

fn grid_search(agg: &NodeProblem, step: f64, bounds: &[(f64, f64)]) -> Result<f64> {
    let n = agg.dim();
    if !(1..=3).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "grid search needs 1 <= n <= 3, got {n}"
        )));
    }
    let radius = agg.box_radius;
    if !(step > 0.0 && step.is_finite()) || !radius.is_finite() {
        return Err(Error::InvalidParameter(
            "grid search needs a finite box and a positive step".into(),
        ));
    }
    let max_k = (2.0 * radius / step).round() as i64;
    let origin = -radius;
    let mut ranges = Vec::with_capacity(3);
    for &(a, b) in bounds {
        match grid_range(origin, step, a.max(-radius), b.min(radius), max_k) {
            Some(r) => ranges.push(r),
            None => return Err(Error::InvalidProblem("no grid point in the feasible region".into())),
        }
    }
    while ranges.len() < 3 {
        ranges.push((0, 0));
    }
    let points: f64 = ranges.iter().map(|(lo, hi)| (hi - lo + 1) as f64).product();
    if points > GRID_POINT_CAP {
        return Err(Error::InvalidParameter(format!(
            "grid has {points:.3e} points; use a coarser step"
        )));
    }

    let flat = FlatProblem::new(agg);
    let coord = |k: i64| origin + k as f64 * step;
    let best = (ranges[0].0..=ranges[0].1)
        .into_par_iter()
        .map(|k0| {
            let mut best = f64::INFINITY;
            let mut x = [coord(k0), 0.0, 0.0];
            for k1 in ranges[1].0..=ranges[1].1 {
                if n > 1 {
                    x[1] = coord(k1);
                }
                for k2 in ranges[2].0..=ranges[2].1 {
                    if n > 2 {
                        x[2] = coord(k2);
                    }
                    if let Some(v) = flat.eval(&x[..n]) {
                        best = best.min(v);
                    }
                }
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min);
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::InvalidProblem("no feasible grid point".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NetworkGraph;
    use crate::problem::QuadConstraint;
    use nalgebra::DMatrix;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn single(node: NodeProblem, x0: f64) -> ProblemInstance {
        ProblemInstance::new(vec![node], NetworkGraph::new(1, []).unwrap(), vec![dv(&[x0])], "test").unwrap()
    }

    /// f = 0.5 (x - 3)^2, g = x - 1 <= 0 on [-10, 10].
    fn constrained_1d() -> ProblemInstance {
        let node = NodeProblem::quadratic(DMatrix::from_element(1, 1, 1.0), dv(&[-3.0]), 4.5)
            .with_constraint(QuadConstraint::affine(dv(&[1.0]), -1.0))
            .with_box(10.0);
        single(node, 0.0)
    }

    #[test]
    fn soft_threshold_fixed_point() {
        let node = NodeProblem::quadratic(DMatrix::from_element(1, 1, 1.0), dv(&[0.0]), 0.0)
            .with_l1(1.0)
            .with_box(10.0);
        let sol = solve_centralized(&single(node, 5.0), 1e-10).unwrap();
        assert!(sol.x_star[0].abs() < 1e-10);
        assert!(sol.phi_star.abs() < 1e-10);
    }

    #[test]
    fn constrained_kkt_point() {
        let inst = constrained_1d();
        let sol = solve_centralized(&inst, 1e-10).unwrap();
        assert!((sol.x_star[0] - 1.0).abs() < 1e-9);
        assert!((sol.phi_star - 2.0).abs() < 1e-9);
        assert!((sol.theta_star[0][0] - 2.0).abs() < 1e-8);
        assert!(sol.kkt_residual <= 1e-10);
    }

    #[test]
    fn primal_dual_loop_agrees() {
        let inst = constrained_1d();
        let opts = OracleOptions {
            tol: 1e-10,
            ..OracleOptions::default()
        };
        let sol = solve_centralized_apd(&inst, opts).unwrap();
        assert!((sol.phi_star - 2.0).abs() < 1e-9);
        assert_eq!(sol.method_tag, APD_TAG);
    }

    #[test]
    fn kkt_examples() {
        let inst = constrained_1d();
        assert!(kkt_residual(&inst, &dv(&[1.0]), &[dv(&[2.0])]).unwrap() <= 1e-10);
        // interior stationary point
        let node = NodeProblem::quadratic(DMatrix::from_element(1, 1, 1.0), dv(&[-0.5]), 0.0).with_box(10.0);
        let free = single(node, 0.0);
        assert_eq!(kkt_residual(&free, &dv(&[0.5]), &[DVector::zeros(0)]).unwrap(), 0.0);
        // continuity
        let base = kkt_residual(&inst, &dv(&[1.0]), &[dv(&[2.0])]).unwrap();
        let moved = kkt_residual(&inst, &dv(&[1.0 + 1e-8]), &[dv(&[2.0 - 1e-8])]).unwrap();
        assert!((moved - base).abs() <= 1e-6);
    }

    #[test]
    fn grid_examples() {
        let node = NodeProblem::zero(1).with_l1(1.0).with_box(10.0);
        assert_eq!(brute_force_grid(&single(node, 0.0), 0.01).unwrap(), 0.0);
        let v = brute_force_grid(&constrained_1d(), 1e-3).unwrap();
        assert!((v - 2.0).abs() <= 1e-3);
        // the grid never beats the optimum
        assert!(v >= 2.0 - 1e-12);
    }

    #[test]
    fn grid_rejects_high_dimension() {
        let g = NetworkGraph::new(1, []).unwrap();
        let inst = ProblemInstance::new(
            vec![NodeProblem::zero(4).with_box(1.0)],
            g,
            vec![DVector::zeros(4)],
            "t",
        )
        .unwrap();
        assert!(brute_force_grid(&inst, 0.1).is_err());
    }

    #[test]
    fn ellipsoid_box_is_tight() {
        let node = NodeProblem::zero(2)
            .with_constraint(QuadConstraint::ellipsoid(
                DMatrix::identity(2, 2) * 2.0,
                &dv(&[1.0, -1.0]),
                1.0,
            ))
            .with_box(10.0);
        let b = ellipsoid_box(&node, 0).unwrap();
        // (x - c)'(x - c) <= 1
        assert!((b[0].0 - 0.0).abs() < 1e-12 && (b[0].1 - 2.0).abs() < 1e-12);
        assert!((b[1].0 + 2.0).abs() < 1e-12 && (b[1].1 - 0.0).abs() < 1e-12);
    }

    #[test]
    fn refined_dual_bounds_stay_valid() {
        let graph = NetworkGraph::build_small_world(4, 6, 3).unwrap();
        let mut inst = crate::generate::gen_qcqp(6, graph, 11).unwrap();
        let before: Vec<f64> = inst.nodes.iter().map(|nd| nd.dual_bound).collect();
        let sol = attach_reference(&mut inst, 1e-9).unwrap();
        let after = refine_dual_bounds(&mut inst, &sol).unwrap();
        for ((b0, b1), th) in before.iter().zip(&after).zip(&sol.theta_star) {
            assert!(*b1 <= *b0);
            assert!(*b1 >= 2.0 * th.norm(), "{b1} < 2 * {}", th.norm());
        }
    }
}
