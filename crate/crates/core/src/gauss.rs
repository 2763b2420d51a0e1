//! The weighted minimum-energy problem: minimize the Gauss functional
//! `I(μ) − 2q U^μ(z)` over probability measures on a discretized set,
//! probe the existence threshold `q ≥ H_z` over truncation ladders, verify
//! the closed-form representation of the minimizer, and scan support
//! compactness and vague continuity in `z`.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::geometry::{discretize, DiscreteMeasure, SetDescriptor};
use crate::kernel::{assemble_kernel, energy, energy_norm_diff, KernelContext};
use crate::math;
use crate::potential_ops::{equilibrium_measure_with_ctx, harmonic_measure};
use crate::solvers::{minimize_cone, minimize_simplex, QpProblem, TraceRow};
use crate::{Error, Result};

/// Attractive point field `f_{q,z}(y) = −q |z−y|^{α−n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    /// Field source location (must not be a node of the target cloud).
    pub z: Vec<f64>,
    /// Attractive mass, q > 0.
    pub q: f64,
    pub alpha: f64,
}

impl FieldSpec {
    pub fn new(z: Vec<f64>, q: f64, alpha: f64) -> Self {
        FieldSpec { z, q, alpha }
    }

    fn validate(&self, ctx: &KernelContext) -> Result<()> {
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::InvalidParameter(String::from("q must be positive")));
        }
        if self.alpha != ctx.alpha() {
            return Err(Error::InvalidParameter(String::from(
                "field alpha differs from kernel alpha",
            )));
        }
        if self.z.len() != ctx.dim() {
            return Err(Error::InvalidParameter(String::from(
                "field source dimension mismatch",
            )));
        }
        if ctx.cloud().find_node(&self.z).is_some() {
            return Err(Error::PointOnCloud);
        }
        Ok(())
    }

    /// `q · κ_α(x_i, z)` at every node: the linear term of the simplex QP.
    fn linear_term(&self, ctx: &KernelContext) -> Result<Vec<f64>> {
        let cloud = ctx.cloud();
        let exp = self.alpha - cloud.dim() as f64;
        let mut b = Vec::with_capacity(cloud.len());
        for i in 0..cloud.len() {
            let d = math::dist(&self.z, cloud.node(i));
            if d == 0.0 {
                return Err(Error::PointOnCloud);
            }
            b.push(self.q * math::powr(d, exp));
        }
        Ok(b)
    }
}

/// Minimizer report for one weighted problem.
#[derive(Debug, Clone)]
pub struct WeightedSolveReport {
    /// The minimizing probability measure λ.
    pub lambda: DiscreteMeasure,
    /// Gauss functional at the optimum, `w_{f}(A)`.
    pub value: f64,
    /// Weighted equilibrium constant `c_{A,f}` (the simplex dual value).
    pub constant: f64,
    /// Independent recomputation `I(λ) − q U^λ(z)`.
    pub constant_recomputed: f64,
    pub kkt_residual: f64,
    pub support_indices: Vec<usize>,
    /// Max |x_i| over support nodes.
    pub support_radius: f64,
    pub iterations: u64,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

/// Solves the weighted problem on an assembled kernel:
/// `minimize_simplex` with linear term `b_i = q κ_α(x_i, z)`.
pub fn solve_weighted(ctx: &KernelContext, field: &FieldSpec) -> Result<WeightedSolveReport> {
    solve_weighted_opts(ctx, field, false)
}

/// As [`solve_weighted`], optionally collecting a convergence trace.
pub fn solve_weighted_opts(
    ctx: &KernelContext,
    field: &FieldSpec,
    collect_trace: bool,
) -> Result<WeightedSolveReport> {
    field.validate(ctx)?;
    let b = field.linear_term(ctx)?;
    let mut problem = QpProblem::simplex(ctx, b);
    problem.collect_trace = collect_trace;
    let sol = minimize_simplex(&problem)?;
    let i_lambda = energy(ctx, &sol.masses)?;
    // U^λ(z) with the exact kernel (z is off the cloud)
    let u_at_z: f64 = {
        let exp = field.alpha - ctx.dim() as f64;
        let cloud = ctx.cloud();
        let mut s = 0.0;
        for i in 0..cloud.len() {
            s += sol.masses.masses()[i] * math::powr(math::dist(&field.z, cloud.node(i)), exp);
        }
        s
    };
    let support_radius = sol.support_radius();
    Ok(WeightedSolveReport {
        value: sol.objective,
        constant: sol.multiplier,
        constant_recomputed: i_lambda - field.q * u_at_z,
        kkt_residual: sol.kkt_residual,
        support_indices: sol.support.clone(),
        support_radius,
        iterations: sol.iterations,
        converged: sol.converged,
        trace: sol.trace,
        lambda: sol.masses,
    })
}

/// Measured constant against the closed-form `(H_z − q) / (H_z c(A))`,
/// which applies when `q < H_z` (finite-capacity sets).
#[derive(Debug, Clone, Copy)]
pub struct ConstantCheck {
    pub measured: f64,
    /// Closed-form value; `None` when `q ≥ H_z` makes it inapplicable.
    pub formula: Option<f64>,
    pub relative_gap: Option<f64>,
}

pub fn weighted_constant(
    report: &WeightedSolveReport,
    q: f64,
    h_z: f64,
    capacity: f64,
) -> ConstantCheck {
    if q < h_z && capacity > 0.0 && capacity.is_finite() {
        let formula = (h_z - q) / (h_z * capacity);
        let gap = (report.constant - formula).abs() / formula.abs().max(1e-300);
        ConstantCheck {
            measured: report.constant,
            formula: Some(formula),
            relative_gap: Some(gap),
        }
    } else {
        ConstantCheck {
            measured: report.constant,
            formula: None,
            relative_gap: None,
        }
    }
}

/// Which branch of the representation formula was checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FormulaBranch {
    /// `λ = q ε_z^A + c γ_A` with the measured constant as coefficient.
    BelowThreshold { coefficient: f64 },
    /// `λ = q ε_z^A` at `q = H_z`.
    AtThreshold,
}

/// Residuals of the representation formula.
#[derive(Debug, Clone)]
pub struct FormulaCheck {
    pub branch: FormulaBranch,
    /// `‖λ − rhs‖_K`.
    pub energy_norm_residual: f64,
    /// `‖λ‖_K`, for relative comparison.
    pub energy_norm_lambda: f64,
    pub relative_energy_residual: f64,
    /// `Σ_i |λ_i − rhs_i|` over nodes.
    pub total_variation: f64,
    /// Mass of the assembled right-hand side (should be ≈ 1).
    pub rhs_mass: f64,
}

/// Builds the right-hand side of the representation formula from the
/// harmonic measure and the equilibrium measure on the same cloud and
/// compares it with the computed minimizer. Requires `q ≤ H_z` (within
/// 0.1% at the threshold branch).
pub fn check_solution_formula(
    ctx: &KernelContext,
    field: &FieldSpec,
    h_z: f64,
    report: &WeightedSolveReport,
) -> Result<FormulaCheck> {
    field.validate(ctx)?;
    let harm = harmonic_measure(ctx, &field.z)?;
    let q = field.q;
    let (rhs, branch) = if q < h_z * (1.0 - 1e-3) {
        let eq = equilibrium_measure_with_ctx(ctx)?;
        let c = report.constant;
        let masses: Vec<f64> = harm
            .swept
            .masses()
            .iter()
            .zip(eq.gamma.masses())
            .map(|(e, g)| (q * e + c * g).max(0.0))
            .collect();
        (
            DiscreteMeasure::new(ctx.cloud().clone(), masses)?,
            FormulaBranch::BelowThreshold { coefficient: c },
        )
    } else if q <= h_z * (1.0 + 1e-3) {
        (harm.swept.scaled(q), FormulaBranch::AtThreshold)
    } else {
        return Err(Error::InvalidParameter(String::from(
            "representation formula requires q <= H_z",
        )));
    };
    let resid = energy_norm_diff(ctx, &report.lambda, &rhs)?;
    let lam_norm = libm::sqrt(energy(ctx, &report.lambda)?.max(0.0));
    let tv: f64 = report
        .lambda
        .masses()
        .iter()
        .zip(rhs.masses())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(FormulaCheck {
        branch,
        energy_norm_residual: resid,
        energy_norm_lambda: lam_norm,
        relative_energy_residual: resid / lam_norm.max(1e-300),
        total_variation: tv,
        rhs_mass: rhs.total_mass(),
    })
}

/// Outcome of an existence probe over a truncation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExistenceOutcome {
    Solvable,
    MassEscape,
    Inconclusive,
}

/// Raw evidence from one ladder rung.
#[derive(Debug, Clone, Copy)]
pub struct ExistenceRung {
    pub radius: f64,
    pub nodes: usize,
    /// Simplex optimum `w_R`.
    pub value: f64,
    /// Cone optimum with the same linear term (the unconstrained-mass
    /// lower bound `ŵ_R`).
    pub cone_value: f64,
    /// |Σ λ_i x_i|: distance of the mass centroid from the origin.
    pub support_centroid_radius: f64,
    pub support_radius: f64,
    /// Harmonic-measure mass of the truncation (for the `H_z` estimate).
    pub harmonic_mass: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ExistenceVerdict {
    pub verdict: ExistenceOutcome,
    pub rungs: Vec<ExistenceRung>,
    pub estimated_h: Option<f64>,
    pub q: f64,
}

/// Verdict thresholds (artifact conventions; raw rung data is always kept).
const CAUCHY_BAND: f64 = 0.01;
const SUPPORT_STABILITY: f64 = 0.10;
const ESCAPE_MIN_SLOPE: f64 = 0.15;
const ESCAPE_MIN_R2: f64 = 0.90;

/// Solves the weighted problem on each truncation `A ∩ {|x| ≤ R}` and
/// classifies the ladder: `solvable` when the values are Cauchy and the
/// support radius stabilizes, `mass_escape` when the support centroid
/// drifts linearly in `R` while the value keeps descending toward the
/// cone bound.
pub fn existence_probe(
    desc: &SetDescriptor,
    field: &FieldSpec,
    ladder: &[f64],
    resolution: u32,
) -> Result<ExistenceVerdict> {
    if ladder.len() < 2 {
        return Err(Error::LadderTooShort);
    }
    for w in ladder.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter(String::from(
                "ladder radii must be strictly increasing",
            )));
        }
    }
    let mut rungs = Vec::with_capacity(ladder.len());
    let mut h_data: Vec<(f64, f64)> = Vec::new();
    for &radius in ladder {
        let truncated = SetDescriptor::Truncate {
            inner: Box::new(desc.clone()),
            radius,
        };
        let cloud = Arc::new(discretize(&truncated, resolution)?);
        if cloud.is_empty() {
            continue;
        }
        let ctx = assemble_kernel(cloud.clone(), field.alpha)?;
        let report = solve_weighted(&ctx, field)?;
        let b = field.linear_term(&ctx)?;
        let cone = minimize_cone(&QpProblem::cone(&ctx, b))?;
        let harm = harmonic_measure(&ctx, &field.z)?;
        let centroid = {
            let mut c = alloc::vec![0.0; ctx.dim()];
            for i in 0..cloud.len() {
                let x = cloud.node(i);
                for d in 0..ctx.dim() {
                    c[d] += report.lambda.masses()[i] * x[d];
                }
            }
            math::norm(&c)
        };
        h_data.push((radius, harm.swept.total_mass()));
        rungs.push(ExistenceRung {
            radius,
            nodes: cloud.len(),
            value: report.value,
            cone_value: cone.objective,
            support_centroid_radius: centroid,
            support_radius: report.support_radius,
            harmonic_mass: harm.swept.total_mass(),
            converged: report.converged && cone.converged,
        });
    }
    if rungs.len() < 2 {
        return Err(Error::LadderTooShort);
    }
    let estimated_h = {
        let (r1, m1) = h_data[h_data.len() - 2];
        let (r2, m2) = h_data[h_data.len() - 1];
        let m_inf = if (m2 - m1).abs() < 1e-14 {
            m2
        } else {
            m2 + (m2 - m1) * r1 / (r2 - r1)
        };
        if m_inf > 0.0 {
            Some(1.0 / m_inf)
        } else {
            None
        }
    };

    let last = rungs[rungs.len() - 1];
    let prev = rungs[rungs.len() - 2];

    // mass escape: centroid drifts linearly outward while the value still
    // descends toward the cone bound
    let xs: Vec<f64> = rungs.iter().map(|r| r.radius).collect();
    let ys: Vec<f64> = rungs.iter().map(|r| r.support_centroid_radius).collect();
    let (slope, _icpt, r2) = linear_fit(&xs, &ys);
    let w_decreasing = rungs.windows(2).all(|w| w[1].value < w[0].value - 1e-14);
    let gap_first = rungs[0].value - rungs[0].cone_value;
    let gap_last = last.value - last.cone_value;
    let escape = slope >= ESCAPE_MIN_SLOPE
        && r2 >= ESCAPE_MIN_R2
        && w_decreasing
        && gap_last < gap_first;

    // solvable: Cauchy values and stable support radius on the last rungs
    let cauchy = (last.value - prev.value).abs() <= CAUCHY_BAND * last.value.abs().max(1.0);
    let stable = (last.support_radius - prev.support_radius).abs()
        <= SUPPORT_STABILITY * last.support_radius.abs().max(1e-12);
    let verdict = if escape {
        ExistenceOutcome::MassEscape
    } else if cauchy && stable {
        ExistenceOutcome::Solvable
    } else {
        ExistenceOutcome::Inconclusive
    };
    Ok(ExistenceVerdict {
        verdict,
        rungs,
        estimated_h,
        q: field.q,
    })
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..xs.len() {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy > 1e-24 {
        (sxy * sxy) / (sxx * syy)
    } else {
        0.0
    };
    (slope, my - slope * mx, r2)
}

/// Per-q rung data from a support scan.
#[derive(Debug, Clone)]
pub struct SupportScanRow {
    pub q: f64,
    /// (radius, support_radius, converged) per rung.
    pub rungs: Vec<(f64, f64, bool)>,
    /// Support radius at the largest rung.
    pub support_radius: f64,
    /// Last two rungs agree within 10%.
    pub stable: bool,
    /// Support radius nondecreasing across rungs with ≥ 1.5× total growth.
    pub growing: bool,
}

/// Scans support radii over a q-grid and a truncation ladder.
pub fn support_scan(
    desc: &SetDescriptor,
    z: &[f64],
    alpha: f64,
    q_grid: &[f64],
    ladder: &[f64],
    resolution: u32,
) -> Result<Vec<SupportScanRow>> {
    for w in q_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter(String::from(
                "q grid must be sorted ascending",
            )));
        }
    }
    // assemble each rung once, reuse across the q grid
    let mut ctxs = Vec::new();
    for &radius in ladder {
        let truncated = SetDescriptor::Truncate {
            inner: Box::new(desc.clone()),
            radius,
        };
        let cloud = Arc::new(discretize(&truncated, resolution)?);
        if cloud.is_empty() {
            continue;
        }
        ctxs.push((radius, assemble_kernel(cloud, alpha)?));
    }
    if ctxs.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rows = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let mut rungs = Vec::with_capacity(ctxs.len());
        for (radius, ctx) in &ctxs {
            let field = FieldSpec::new(z.to_vec(), q, alpha);
            let report = solve_weighted(ctx, &field)?;
            rungs.push((*radius, report.support_radius, report.converged));
        }
        let k = rungs.len();
        let stable = k >= 2
            && (rungs[k - 1].1 - rungs[k - 2].1).abs()
                <= SUPPORT_STABILITY * rungs[k - 1].1.abs().max(1e-12);
        let growing = k >= 2
            && rungs.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-9)
            && rungs[k - 1].1 >= 1.5 * rungs[0].1.max(1e-12);
        rows.push(SupportScanRow {
            q,
            support_radius: rungs[k - 1].1,
            stable,
            growing,
            rungs,
        });
    }
    Ok(rows)
}

/// q selection for a continuity scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContinuityMode {
    /// Per path point, `q = H_z` estimated on the given cloud as the
    /// reciprocal harmonic-measure mass.
    AtThreshold,
    /// Fixed `q` independent of z (vague continuity requires q ≤ 1 here).
    FixedQ(f64),
}

/// One step of a continuity scan.
#[derive(Debug, Clone)]
pub struct ContinuityStep {
    pub z: Vec<f64>,
    pub q_used: f64,
    /// Bounded-Lipschitz distance estimate to the previous step's measure.
    pub d_bl_prev: Option<f64>,
    pub value: f64,
    pub support_radius: f64,
}

/// Solves the weighted problem along a path of exterior source points and
/// reports consecutive bounded-Lipschitz distances.
pub fn continuity_scan(
    ctx: &KernelContext,
    desc: &SetDescriptor,
    z_path: &[Vec<f64>],
    mode: ContinuityMode,
) -> Result<Vec<ContinuityStep>> {
    if let ContinuityMode::FixedQ(q) = mode {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidParameter(String::from(
                "fixed-q continuity requires q in (0, 1]",
            )));
        }
    }
    for z in z_path {
        if desc.contains(z) {
            return Err(Error::InvalidParameter(String::from(
                "path point lies inside the set",
            )));
        }
    }
    let mut steps: Vec<ContinuityStep> = Vec::with_capacity(z_path.len());
    let mut prev_lambda: Option<DiscreteMeasure> = None;
    for z in z_path {
        let q = match mode {
            ContinuityMode::FixedQ(q) => q,
            ContinuityMode::AtThreshold => {
                let harm = harmonic_measure(ctx, z)?;
                1.0 / harm.swept.total_mass()
            }
        };
        let field = FieldSpec::new(z.clone(), q, ctx.alpha());
        let report = solve_weighted(ctx, &field)?;
        let d_bl = prev_lambda
            .as_ref()
            .map(|p| d_bl_estimate(p, &report.lambda));
        steps.push(ContinuityStep {
            z: z.clone(),
            q_used: q,
            d_bl_prev: d_bl,
            value: report.value,
            support_radius: report.support_radius,
        });
        prev_lambda = Some(report.lambda);
    }
    Ok(steps)
}

/// Upper estimate of the bounded-Lipschitz distance between two measures
/// on the same cloud: greedy nearest-deficit transport with per-unit cost
/// `min(distance, 2)` plus the capped total-mass difference. Deterministic.
pub fn d_bl_estimate(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    assert!(mu.same_cloud(nu), "d_BL estimate requires a common cloud");
    let cloud = mu.cloud();
    let n = cloud.len();
    let mut excess: Vec<(usize, f64)> = Vec::new();
    let mut deficit: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        let d = mu.masses()[i] - nu.masses()[i];
        if d > 0.0 {
            excess.push((i, d));
        } else if d < 0.0 {
            deficit.push((i, -d));
        }
    }
    excess.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cost = 0.0;
    for (i, mut e) in excess {
        while e > 1e-18 {
            // nearest remaining deficit
            let mut best: Option<(usize, f64)> = None;
            for (k, (j, d)) in deficit.iter().enumerate() {
                if *d <= 0.0 {
                    continue;
                }
                let dist = math::dist(cloud.node(i), cloud.node(*j));
                match best {
                    Some((_, bd)) if bd <= dist => {}
                    _ => best = Some((k, dist)),
                }
            }
            let Some((k, dist)) = best else {
                // unmatched mass pays the sup-norm cap
                cost += e;
                break;
            };
            let amount = e.min(deficit[k].1);
            cost += amount * dist.min(2.0);
            e -= amount;
            deficit[k].1 -= amount;
        }
    }
    // leftover deficit (total masses differ)
    cost += deficit.iter().map(|(_, d)| d.max(0.0)).sum::<f64>();
    cost
}
