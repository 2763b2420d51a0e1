//! Deterministic solvers for the two quadratic programs behind every
//! operation in the crate:
//!
//! * cone form: minimize `μᵀKμ − 2bᵀμ` over `μ ≥ 0`;
//! * simplex form: the same objective over `μ ≥ 0, Σμ = 1`.
//!
//! The method is a monotone accelerated projected gradient (step size from
//! the largest Gershgorin row sum of `K`) with periodic active-set
//! polishing: the unconstrained system restricted to the current support is
//! solved by dense Cholesky, negative entries are dropped, violated
//! first-order conditions are added, and the exact KKT residual of the
//! candidate decides acceptance. Identical inputs yield identical outputs
//! bit for bit.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::DiscreteMeasure;
use crate::kernel::{dot, KernelContext};
use crate::{Error, Result};

/// Feasible set of the quadratic program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSet {
    /// Nonnegative cone `μ ≥ 0`.
    Cone,
    /// Probability simplex `μ ≥ 0, Σμ = 1`.
    Simplex,
}

/// One quadratic program instance.
pub struct QpProblem<'a> {
    pub ctx: &'a KernelContext,
    /// Linear term: the objective is `μᵀKμ − 2bᵀμ`.
    pub b: Vec<f64>,
    pub constraint: ConstraintSet,
    /// KKT residual tolerance (absolute, potential units).
    pub tol: f64,
    pub max_iter: u64,
    /// Support detection floor, relative to total mass.
    pub mass_floor_rel: f64,
    /// Record a convergence trace (iteration, objective, kkt residual).
    pub collect_trace: bool,
}

impl<'a> QpProblem<'a> {
    pub fn cone(ctx: &'a KernelContext, b: Vec<f64>) -> Self {
        QpProblem {
            ctx,
            b,
            constraint: ConstraintSet::Cone,
            tol: 1e-8,
            max_iter: 200_000,
            mass_floor_rel: 1e-12,
            collect_trace: false,
        }
    }

    pub fn simplex(ctx: &'a KernelContext, b: Vec<f64>) -> Self {
        QpProblem {
            constraint: ConstraintSet::Simplex,
            ..QpProblem::cone(ctx, b)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.b.len() != self.ctx.len() {
            return Err(Error::InvalidParameter(String::from(
                "linear term length must equal node count",
            )));
        }
        if !self.b.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(String::from(
                "linear term must be finite",
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(String::from("tol must be positive")));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(String::from(
                "max_iter must be positive",
            )));
        }
        Ok(())
    }
}

/// One row of the convergence trace. The objective is the best value seen
/// so far, so the trace is monotone by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub objective: f64,
    pub kkt_residual: f64,
}

/// Solver output with its optimality certificate.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub masses: DiscreteMeasure,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Simplex dual value (the weighted-equilibrium constant); 0 for cone.
    pub multiplier: f64,
    pub iterations: u64,
    pub converged: bool,
    /// Indices with mass above the floor.
    pub support: Vec<usize>,
    pub trace: Vec<TraceRow>,
}

impl QpSolution {
    /// Max |x_i| over support nodes (0 when the support is empty).
    pub fn support_radius(&self) -> f64 {
        let cloud = self.masses.cloud();
        self.support
            .iter()
            .map(|&i| crate::math::norm(cloud.node(i)))
            .fold(0.0, f64::max)
    }
}

/// Solves the cone-constrained program.
pub fn minimize_cone(problem: &QpProblem) -> Result<QpSolution> {
    if problem.constraint != ConstraintSet::Cone {
        return Err(Error::InvalidParameter(String::from(
            "minimize_cone requires the cone constraint tag",
        )));
    }
    solve(problem)
}

/// Solves the simplex-constrained program.
pub fn minimize_simplex(problem: &QpProblem) -> Result<QpSolution> {
    if problem.constraint != ConstraintSet::Simplex {
        return Err(Error::InvalidParameter(String::from(
            "minimize_simplex requires the simplex constraint tag",
        )));
    }
    if problem.ctx.is_empty() {
        return Err(Error::EmptyCloud);
    }
    solve(problem)
}

/// Exact KKT residual and multiplier of a candidate, recomputed from
/// `(μ, K, b)` alone. Public so callers can certify solutions
/// independently of the solver's bookkeeping.
pub fn kkt_residual(
    ctx: &KernelContext,
    b: &[f64],
    masses: &[f64],
    constraint: ConstraintSet,
    mass_floor_rel: f64,
) -> (f64, f64) {
    let r = residual_vec(ctx, b, masses);
    let total: f64 = masses.iter().sum();
    let floor = mass_floor_rel * total.max(f64::MIN_POSITIVE);
    match constraint {
        ConstraintSet::Cone => {
            let mut viol = 0.0f64;
            for i in 0..r.len() {
                viol = viol.max(-r[i]);
                if masses[i] > floor {
                    viol = viol.max(r[i].abs());
                }
            }
            (viol.max(0.0), 0.0)
        }
        ConstraintSet::Simplex => {
            // mass-weighted mean of the residual estimates the dual value
            let c = dot(masses, &r) / total.max(f64::MIN_POSITIVE);
            let mut viol = 0.0f64;
            for i in 0..r.len() {
                viol = viol.max(c - r[i]);
                if masses[i] > floor {
                    viol = viol.max((r[i] - c).abs());
                }
            }
            (viol.max(0.0), c)
        }
    }
}

fn residual_vec(ctx: &KernelContext, b: &[f64], masses: &[f64]) -> Vec<f64> {
    let mut r = ctx.matvec(masses);
    for i in 0..r.len() {
        r[i] -= b[i];
    }
    r
}

fn objective(ctx: &KernelContext, b: &[f64], x: &[f64]) -> f64 {
    let kx = ctx.matvec(x);
    dot(x, &kx) - 2.0 * dot(b, x)
}

fn support_of(masses: &[f64], mass_floor_rel: f64) -> Vec<usize> {
    let total: f64 = masses.iter().sum();
    let floor = mass_floor_rel * total.max(f64::MIN_POSITIVE);
    (0..masses.len()).filter(|&i| masses[i] > floor).collect()
}

fn solve(problem: &QpProblem) -> Result<QpSolution> {
    problem.validate()?;
    let ctx = problem.ctx;
    let n = ctx.len();
    let b = &problem.b;
    let simplex = problem.constraint == ConstraintSet::Simplex;

    // Gershgorin bound on the largest eigenvalue; gradient Lipschitz
    // constant is twice that.
    let mut max_row = 0.0f64;
    for i in 0..n {
        let row = &ctx.matrix()[i * n..(i + 1) * n];
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        max_row = max_row.max(s);
    }
    let lip = 2.0 * max_row;
    let step = 1.0 / lip;

    let mut x = vec![0.0; n];
    if simplex {
        x.iter_mut().for_each(|v| *v = 1.0 / n as f64);
    }
    let mut kx = ctx.matvec(&x);
    let mut y = x.clone();
    let mut ky = kx.clone();
    let mut t = 1.0f64;
    let mut best = x.clone();
    let mut kbest = kx.clone();
    let mut best_f = dot(&x, &kx) - 2.0 * dot(b, &x);
    let mut iterations = 0u64;
    let mut trace = Vec::new();
    let check_every = 50u64;
    let polish_every = 500u64;

    let finish = |masses_vec: Vec<f64>,
                  iterations: u64,
                  converged: bool,
                  trace: Vec<TraceRow>,
                  problem: &QpProblem|
     -> Result<QpSolution> {
        let (resid, mult) = kkt_residual(
            ctx,
            b,
            &masses_vec,
            problem.constraint,
            problem.mass_floor_rel,
        );
        let obj = objective(ctx, b, &masses_vec);
        let support = support_of(&masses_vec, problem.mass_floor_rel);
        let masses = DiscreteMeasure::new(ctx.cloud().clone(), masses_vec)?;
        Ok(QpSolution {
            masses,
            objective: obj,
            kkt_residual: resid,
            multiplier: mult,
            iterations,
            converged,
            support,
            trace,
        })
    };

    // b = 0 on the cone: the vertex is optimal
    let (r0, _) = kkt_residual(ctx, b, &x, problem.constraint, problem.mass_floor_rel);
    if r0 <= problem.tol {
        if problem.collect_trace {
            trace.push(TraceRow {
                iteration: 0,
                objective: best_f,
                kkt_residual: r0,
            });
        }
        return finish(x, 0, true, trace, problem);
    }

    while iterations < problem.max_iter {
        for _ in 0..check_every {
            // gradient step at the extrapolated point; K y is maintained
            // by affine combination, so each iteration costs one matvec
            let mut xn = Vec::with_capacity(n);
            for i in 0..n {
                xn.push(y[i] - step * 2.0 * (ky[i] - b[i]));
            }
            project(&mut xn, simplex);
            let kxn = ctx.matvec(&xn);
            let f = dot(&xn, &kxn) - 2.0 * dot(b, &xn);
            let tn = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));
            let beta = (t - 1.0) / tn;
            for i in 0..n {
                y[i] = xn[i] + beta * (xn[i] - x[i]);
                ky[i] = (1.0 + beta) * kxn[i] - beta * kx[i];
            }
            x.copy_from_slice(&xn);
            kx.copy_from_slice(&kxn);
            t = tn;
            iterations += 1;
            if f < best_f {
                best_f = f;
                best.copy_from_slice(&x);
                kbest.copy_from_slice(&kx);
            } else if f > best_f + best_f.abs() * 1e-12 {
                // function restart keeps the momentum useful
                t = 1.0;
                x.copy_from_slice(&best);
                kx.copy_from_slice(&kbest);
                y.copy_from_slice(&best);
                ky.copy_from_slice(&kbest);
            }
            if iterations >= problem.max_iter {
                break;
            }
        }

        let (resid, _) = kkt_residual(ctx, b, &best, problem.constraint, problem.mass_floor_rel);
        if problem.collect_trace {
            trace.push(TraceRow {
                iteration: iterations,
                objective: best_f,
                kkt_residual: resid,
            });
        }
        if resid <= problem.tol {
            return finish(best, iterations, true, trace, problem);
        }
        if (iterations >= 100 && (iterations - 100) % polish_every == 0)
            || iterations + check_every >= problem.max_iter
        {
            if let Some(polished) = polish(ctx, b, &best, simplex, problem) {
                let f = objective(ctx, b, &polished);
                if problem.collect_trace {
                    let (pr, _) = kkt_residual(
                        ctx,
                        b,
                        &polished,
                        problem.constraint,
                        problem.mass_floor_rel,
                    );
                    trace.push(TraceRow {
                        iteration: iterations,
                        objective: f.min(best_f),
                        kkt_residual: pr,
                    });
                }
                return finish(polished, iterations, true, trace, problem);
            }
        }
    }
    finish(best, iterations, false, trace, problem)
}

fn project(x: &mut [f64], simplex: bool) {
    if !simplex {
        for v in x.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        return;
    }
    // Euclidean projection onto the probability simplex (sort + threshold)
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    let mut k = 0usize;
    for (i, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if v - t > 0.0 {
            tau = t;
            k = i + 1;
        }
    }
    debug_assert!(k > 0);
    for v in x.iter_mut() {
        *v = (*v - tau).max(0.0);
    }
    // renormalize the round-off so the mass constraint holds to 1e-15
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        let inv = 1.0 / s;
        for v in x.iter_mut() {
            *v *= inv;
        }
    }
}

/// Active-set polish: solve the equality-constrained system on the current
/// support, drop negative masses, add violated indices, and accept only if
/// the exact KKT residual meets the tolerance.
fn polish(
    ctx: &KernelContext,
    b: &[f64],
    seed: &[f64],
    simplex: bool,
    problem: &QpProblem,
) -> Option<Vec<f64>> {
    let n = ctx.len();
    // Seed selectively: growing an undersized support costs one small
    // factorization per round, while an oversized seed means factoring a
    // nearly full matrix just to drop most of it.
    let total: f64 = seed.iter().sum();
    let selective = 0.01 * total / n as f64;
    let mut support = support_of(seed, (selective / total.max(1e-300)).max(1e-10));
    if support.is_empty() {
        support = support_of(seed, 0.0);
    }
    if support.is_empty() {
        return None;
    }
    for _round in 0..40 {
        let m = support.len();
        // gather restricted matrix
        let mut a = vec![0.0; m * m];
        for (p, &i) in support.iter().enumerate() {
            for (q, &j) in support.iter().enumerate() {
                a[p * m + q] = ctx.entry(i, j);
            }
        }
        let chol = cholesky_in_place(&mut a, m)?;
        let _ = chol;
        let mut rhs_b: Vec<f64> = support.iter().map(|&i| b[i]).collect();
        cholesky_solve(&a, m, &mut rhs_b);
        let sol_sub: Vec<f64> = if simplex {
            let mut rhs_1 = vec![1.0; m];
            cholesky_solve(&a, m, &mut rhs_1);
            let sum_u: f64 = rhs_b.iter().sum();
            let sum_v: f64 = rhs_1.iter().sum();
            if sum_v.abs() < 1e-300 {
                return None;
            }
            let c = (sum_u - 1.0) / sum_v;
            rhs_b
                .iter()
                .zip(&rhs_1)
                .map(|(u, v)| u - c * v)
                .collect()
        } else {
            rhs_b
        };

        if let Some(worst) = sol_sub
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1))
        {
            // drop all nonpositive entries (keep at least one)
            let keep: Vec<usize> = support
                .iter()
                .enumerate()
                .filter(|(p, _)| sol_sub[*p] > 0.0)
                .map(|(_, &i)| i)
                .collect();
            if keep.is_empty() {
                support.remove(worst.0);
                if support.is_empty() {
                    return None;
                }
            } else {
                support = keep;
            }
            continue;
        }

        let mut x = vec![0.0; n];
        for (p, &i) in support.iter().enumerate() {
            x[i] = sol_sub[p];
        }
        let (resid, _) = kkt_residual(ctx, b, &x, problem.constraint, problem.mass_floor_rel);
        if resid <= problem.tol {
            return Some(x);
        }
        // add the violated indices and retry
        let r = residual_vec(ctx, b, &x);
        let threshold = if simplex {
            let total: f64 = x.iter().sum();
            dot(&x, &r) / total.max(f64::MIN_POSITIVE)
        } else {
            0.0
        };
        let mut added = false;
        for i in 0..n {
            if x[i] == 0.0 && r[i] < threshold - 0.1 * problem.tol {
                support.push(i);
                added = true;
            }
        }
        if !added {
            return None;
        }
        support.sort_unstable();
        support.dedup();
    }
    None
}

/// In-place lower Cholesky factorization; `None` when the matrix is not
/// numerically positive definite.
fn cholesky_in_place(a: &mut [f64], n: usize) -> Option<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let dj = libm::sqrt(d);
        a[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / dj;
        }
    }
    Some(())
}

/// Solves `L Lᵀ x = rhs` in place given the factor from
/// [`cholesky_in_place`].
fn cholesky_solve(l: &[f64], n: usize, rhs: &mut [f64]) {
    for i in 0..n {
        let mut v = rhs[i];
        for k in 0..i {
            v -= l[i * n + k] * rhs[k];
        }
        rhs[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in (i + 1)..n {
            v -= l[k * n + i] * rhs[k];
        }
        rhs[i] = v / l[i * n + i];
    }
}

/// Smallest eigenvalue of the kernel matrix by inverse power iteration on
/// the Cholesky factor. Intended for positive-definiteness checks in tests
/// (node counts ≤ 500).
pub fn smallest_eigenvalue(ctx: &KernelContext) -> Option<f64> {
    let n = ctx.len();
    let mut a = ctx.matrix().to_vec();
    cholesky_in_place(&mut a, n)?;
    // deterministic start with no symmetry the iteration could get stuck on
    let mut v: Vec<f64> = (0..n)
        .map(|i| 0.5 + crate::math::halton(i as u64 + 1, 2))
        .collect();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut w = v.clone();
        cholesky_solve(&a, n, &mut w);
        let norm = libm::sqrt(dot(&w, &w));
        if norm == 0.0 {
            return None;
        }
        for x in w.iter_mut() {
            *x /= norm;
        }
        // Rayleigh quotient on the original matrix
        let kv = ctx.matvec(&w);
        let new_lambda = dot(&w, &kv);
        let done = (new_lambda - lambda).abs() <= 1e-12 * new_lambda.abs().max(1e-300);
        lambda = new_lambda;
        v = w;
        if done {
            break;
        }
    }
    Some(lambda)
}
