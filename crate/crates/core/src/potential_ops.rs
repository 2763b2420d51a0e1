//! Potential-theoretic primitives built on the QP solvers: equilibrium
//! measures and capacity, inner balayage and harmonic measure, the
//! threshold `H_z`, and Wiener-type series classifiers.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::geometry::{
    annulus_decompose, discretize, AnnulusMode, DiscreteMeasure, PointCloud, Profile,
    SetDescriptor,
};
use crate::kernel::{assemble_kernel, potential_of_measure_at, KernelContext};
use crate::math;
use crate::solvers::{minimize_cone, QpProblem};
use crate::{Error, Result};

/// Equilibrium measure of a discretized compact set.
#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub gamma: DiscreteMeasure,
    /// Total mass of `gamma`; equals its energy and `-objective` within
    /// solver tolerance.
    pub capacity: f64,
    /// `(K γ)_i` at every node: ≥ 1 − tol everywhere, = 1 ± tol on support.
    pub potential_on_nodes: Vec<f64>,
    pub kkt_residual: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Computes the equilibrium measure by minimizing `I(μ) − 2μ(ℝⁿ)` over the
/// nonnegative cone (linear term = vector of ones); the KKT conditions
/// reproduce `U^γ ≥ 1` with equality on the support.
pub fn equilibrium_measure(cloud: Arc<PointCloud>, alpha: f64) -> Result<EquilibriumResult> {
    let ctx = assemble_kernel(cloud, alpha)?;
    equilibrium_measure_with_ctx(&ctx)
}

/// Same as [`equilibrium_measure`] on an already assembled kernel.
pub fn equilibrium_measure_with_ctx(ctx: &KernelContext) -> Result<EquilibriumResult> {
    let b = alloc::vec![1.0; ctx.len()];
    let sol = minimize_cone(&QpProblem::cone(ctx, b))?;
    let potential_on_nodes = ctx.matvec(sol.masses.masses());
    Ok(EquilibriumResult {
        capacity: sol.masses.total_mass(),
        potential_on_nodes,
        kkt_residual: sol.kkt_residual,
        objective: sol.objective,
        converged: sol.converged,
        gamma: sol.masses,
    })
}

/// Capacity of a discretized set: total mass of its equilibrium measure.
/// An empty cloud (empty set) has capacity 0.
pub fn capacity(cloud: Arc<PointCloud>, alpha: f64) -> Result<f64> {
    if cloud.is_empty() {
        return Ok(0.0);
    }
    Ok(equilibrium_measure(cloud, alpha)?.capacity)
}

/// Result of sweeping a measure onto a target cloud.
#[derive(Debug, Clone)]
pub struct BalayageResult {
    pub swept: DiscreteMeasure,
    pub source_mass: f64,
    /// swept mass / source mass; ≤ 1 + tol by the principle of positivity
    /// of mass.
    pub mass_ratio: f64,
    /// Max |U^swept − U^source| over *support* nodes: the discrete form of
    /// the equality of potentials nearly everywhere on the target.
    pub potential_match_residual: f64,
    /// Max one-sided deficiency `U^source − U^swept` over nodes the swept
    /// measure does not charge (a discretization indicator, not an error).
    pub max_offsupport_slack: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Inner balayage of `source` onto the target cloud of `ctx`:
/// the cone program with linear term `b_i = U^{source}(x_i)`.
///
/// If the source already lives on the target cloud, its node potentials are
/// taken from the kernel matrix (diagonal rule included), which makes the
/// projection an exact fixed point.
pub fn balayage(ctx: &KernelContext, source: &DiscreteMeasure) -> Result<BalayageResult> {
    let b = if Arc::ptr_eq(source.cloud(), ctx.cloud()) {
        ctx.matvec(source.masses())
    } else {
        let target = ctx.cloud();
        let mut b = Vec::with_capacity(target.len());
        for i in 0..target.len() {
            b.push(potential_of_measure_at(ctx.alpha(), source, target.node(i))?);
        }
        b
    };
    balayage_with_linear_term(ctx, b, source.total_mass())
}

/// Balayage of a point mass at `z` (harmonic measure when `mass` = 1).
pub fn balayage_point(ctx: &KernelContext, z: &[f64], mass: f64) -> Result<BalayageResult> {
    let target = ctx.cloud();
    if z.len() != target.dim() {
        return Err(Error::InvalidParameter(String::from(
            "source point dimension mismatch",
        )));
    }
    if target.find_node(z).is_some() {
        return Err(Error::PointOnCloud);
    }
    let exp = ctx.alpha() - target.dim() as f64;
    let mut b = Vec::with_capacity(target.len());
    for i in 0..target.len() {
        let d = math::dist(z, target.node(i));
        if d == 0.0 {
            return Err(Error::PointOnCloud);
        }
        b.push(mass * math::powr(d, exp));
    }
    balayage_with_linear_term(ctx, b, mass)
}

fn balayage_with_linear_term(
    ctx: &KernelContext,
    b: Vec<f64>,
    source_mass: f64,
) -> Result<BalayageResult> {
    let problem = QpProblem::cone(ctx, b);
    let sol = minimize_cone(&problem)?;
    let swept_pot = ctx.matvec(sol.masses.masses());
    let total = sol.masses.total_mass();
    let floor = problem.mass_floor_rel * total.max(f64::MIN_POSITIVE);
    let mut match_resid = 0.0f64;
    let mut slack = 0.0f64;
    for i in 0..ctx.len() {
        let diff = swept_pot[i] - problem.b[i];
        if sol.masses.masses()[i] > floor {
            match_resid = match_resid.max(diff.abs());
        } else {
            slack = slack.max(-diff);
        }
    }
    Ok(BalayageResult {
        source_mass,
        mass_ratio: if source_mass > 0.0 {
            total / source_mass
        } else {
            0.0
        },
        potential_match_residual: match_resid,
        max_offsupport_slack: slack.max(0.0),
        kkt_residual: sol.kkt_residual,
        converged: sol.converged,
        swept: sol.masses,
    })
}

/// Harmonic measure of the target cloud seen from `z`: balayage of the
/// unit point mass at `z`.
pub fn harmonic_measure(ctx: &KernelContext, z: &[f64]) -> Result<BalayageResult> {
    balayage_point(ctx, z, 1.0)
}

/// One rung of an `H_z` truncation ladder.
#[derive(Debug, Clone, Copy)]
pub struct HRung {
    pub radius: f64,
    pub nodes: usize,
    /// mass of the harmonic measure of the truncation.
    pub harmonic_mass: f64,
    /// `U^{γ}(z)` for the truncation's equilibrium measure.
    pub equilibrium_potential: f64,
}

/// The threshold `H_z`, computed two ways over a truncation ladder.
#[derive(Debug, Clone)]
pub struct HValueReport {
    /// Returned value: reciprocal of the extrapolated harmonic-measure mass.
    pub h: f64,
    pub h_mass_route: f64,
    /// Reciprocal of the extrapolated equilibrium potential at `z`.
    pub h_potential_route: f64,
    pub relative_gap: f64,
    pub rungs: Vec<HRung>,
    /// False when the ladder was too short to extrapolate.
    pub conclusive: bool,
}

/// Richardson extrapolation in 1/R from the last two distinct rungs;
/// falls back to the last value when the ladder saturated.
fn richardson(values: &[(f64, f64)]) -> f64 {
    if values.len() < 2 {
        return values.last().map_or(f64::NAN, |v| v.1);
    }
    let (r1, v1) = values[values.len() - 2];
    let (r2, v2) = values[values.len() - 1];
    if (v2 - v1).abs() < 1e-14 * v2.abs().max(1e-300) || (r2 - r1).abs() < 1e-12 * r2 {
        return v2;
    }
    v2 + (v2 - v1) * r1 / (r2 - r1)
}

/// Computes `H_z` for the set described by `desc` over the truncation
/// ladder: route (i) extrapolates the harmonic-measure mass, route (ii)
/// the equilibrium potential at `z`; both are reported and route (i) is
/// returned.
pub fn h_value(
    z: &[f64],
    desc: &SetDescriptor,
    alpha: f64,
    ladder: &[f64],
    resolution: u32,
) -> Result<HValueReport> {
    if ladder.is_empty() {
        return Err(Error::LadderTooShort);
    }
    for w in ladder.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter(String::from(
                "ladder radii must be strictly increasing",
            )));
        }
    }
    if desc.contains(z) {
        return Err(Error::InvalidParameter(String::from(
            "z must lie outside the discretized set",
        )));
    }
    let mut rungs: Vec<HRung> = Vec::new();
    let mut masses: Vec<(f64, f64)> = Vec::new();
    let mut potentials: Vec<(f64, f64)> = Vec::new();
    let mut last_nodes = 0usize;
    for &radius in ladder {
        let truncated = SetDescriptor::Truncate {
            inner: Box::new(desc.clone()),
            radius,
        };
        let cloud = Arc::new(discretize(&truncated, resolution)?);
        if cloud.is_empty() {
            continue;
        }
        if cloud.len() == last_nodes && !rungs.is_empty() {
            // ladder saturated (bounded set): rung repeats exactly
            let prev = *rungs.last().unwrap();
            rungs.push(HRung { radius, ..prev });
            continue;
        }
        last_nodes = cloud.len();
        let ctx = assemble_kernel(cloud.clone(), alpha)?;
        let harm = harmonic_measure(&ctx, z)?;
        let eq = equilibrium_measure_with_ctx(&ctx)?;
        let u_gamma_z = potential_of_measure_at(alpha, &eq.gamma, z)?;
        rungs.push(HRung {
            radius,
            nodes: cloud.len(),
            harmonic_mass: harm.swept.total_mass(),
            equilibrium_potential: u_gamma_z,
        });
        masses.push((radius, harm.swept.total_mass()));
        potentials.push((radius, u_gamma_z));
    }
    if rungs.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let conclusive = masses.len() >= 2 || rungs.len() >= 2;
    let m_inf = richardson(&masses);
    let u_inf = richardson(&potentials);
    let h_mass = 1.0 / m_inf;
    let h_pot = 1.0 / u_inf;
    Ok(HValueReport {
        h: h_mass,
        h_mass_route: h_mass,
        h_potential_route: h_pot,
        relative_gap: (h_mass - h_pot).abs() / h_mass.abs().max(1e-300),
        rungs,
        conclusive,
    })
}

/// Which Wiener-type series is being tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WienerMode {
    /// Irregularity of a boundary point: shrinking annuli, terms
    /// `c_j / q^{j(n−α)}`, convergence ⟺ the point is α-irregular.
    IrregularTest,
    /// Thinness at infinity: expanding annuli, terms `c_j / q^{j(n−α)}`.
    ThinAtInfinityTest,
    /// Ultrairregularity: shrinking annuli, terms `c_j / q^{2j(n−α)}`,
    /// convergence ⟺ the harmonic measure at the point has finite energy.
    UltraTest,
}

/// How one slice capacity was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceMethod {
    Qp,
    AnalyticSurrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesVerdict {
    Converging,
    Diverging,
    Inconclusive,
}

#[derive(Debug, Clone, Copy)]
pub struct WienerSlice {
    pub j: i32,
    pub capacity: f64,
    pub term: f64,
    pub partial_sum: f64,
    pub method: SliceMethod,
    pub nodes: usize,
}

#[derive(Debug, Clone)]
pub struct WienerReport {
    pub mode: WienerMode,
    pub ratio: f64,
    pub delta: f64,
    pub slices: Vec<WienerSlice>,
    pub verdict: SeriesVerdict,
}

/// Classifies the Wiener-type series for `desc` around `y`.
///
/// Per-slice capacities come from the QP on the slice discretization; when
/// the slice profile underflows double precision, the thin-cylinder
/// surrogate `c = L / (2 ln(L/ρ))` is used instead and tagged. The verdict
/// uses the tail ratio test with threshold `delta` over the last half of
/// the range, with one refinement: ratios inside the inconclusive band
/// together with non-vanishing terms mean the terms do not tend to zero,
/// which settles divergence.
#[allow(clippy::too_many_arguments)]
pub fn wiener_classify(
    desc: &SetDescriptor,
    y: &[f64],
    alpha: f64,
    ratio: f64,
    j_range: core::ops::RangeInclusive<i32>,
    mode: WienerMode,
    resolution: u32,
    delta: f64,
) -> Result<WienerReport> {
    let annulus_mode = match mode {
        WienerMode::IrregularTest | WienerMode::UltraTest => AnnulusMode::Shrinking,
        WienerMode::ThinAtInfinityTest => AnnulusMode::Expanding,
    };
    let n = desc.dim() as f64;
    if !(alpha > 0.0 && alpha <= 2.0 && alpha < n) {
        return Err(Error::InvalidParameter(String::from(
            "alpha must satisfy 0 < alpha <= 2 and alpha < n",
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(String::from(
            "delta must lie in (0,1)",
        )));
    }
    let slice_descs = annulus_decompose(desc, y, ratio, j_range.clone(), annulus_mode)?;
    let denominator_power = match mode {
        WienerMode::IrregularTest | WienerMode::ThinAtInfinityTest => 1.0,
        WienerMode::UltraTest => 2.0,
    };

    let mut slices = Vec::with_capacity(slice_descs.len());
    let mut partial = 0.0f64;
    // revolution bodies already adapt their axial grids to the slice scale
    // (log-spaced for cusps, length-proportional otherwise); grid-backed
    // sets need the grid spacing scaled to the slice width instead.
    let adaptive = has_grid_root(desc);
    let extent = desc.bounding_radius();
    for (sd, j) in slice_descs.iter().zip(j_range.clone()) {
        let (r_in, r_out) = match sd {
            SetDescriptor::AnnulusClip { r_in, r_out, .. } => (*r_in, *r_out),
            _ => unreachable!(),
        };
        let eff_res = if adaptive {
            let scale = extent.map_or(1.0, |e| (e / r_out).max(1.0));
            let scaled = resolution as f64 * scale;
            if scaled > 2_000_000.0 {
                2_000_000
            } else {
                scaled as u32
            }
        } else {
            resolution
        };
        let cloud = Arc::new(discretize(sd, eff_res)?);
        let (cap, method, nodes) = if cloud.is_empty() {
            match surrogate_capacity(desc, y, r_in, r_out) {
                Some(c) => (c, SliceMethod::AnalyticSurrogate, 0),
                None => (0.0, SliceMethod::Qp, 0),
            }
        } else {
            (
                capacity(cloud.clone(), alpha)?,
                SliceMethod::Qp,
                cloud.len(),
            )
        };
        let term = cap / libm::pow(ratio, denominator_power * j as f64 * (n - alpha));
        partial += term;
        slices.push(WienerSlice {
            j,
            capacity: cap,
            term,
            partial_sum: partial,
            method,
            nodes,
        });
    }

    let verdict = series_verdict(&slices, delta);
    Ok(WienerReport {
        mode,
        ratio,
        delta,
        slices,
        verdict,
    })
}

fn series_verdict(slices: &[WienerSlice], delta: f64) -> SeriesVerdict {
    if slices.len() < 2 {
        return SeriesVerdict::Inconclusive;
    }
    let window_start = slices.len() / 2;
    let tail = &slices[window_start.saturating_sub(1)..];
    let t_max = slices.iter().map(|s| s.term).fold(0.0f64, f64::max);
    if t_max == 0.0 {
        return SeriesVerdict::Converging;
    }
    let mut all_le = true;
    let mut all_ge_hi = true;
    let mut all_ge_lo = true;
    for w in tail.windows(2) {
        let (t0, t1) = (w[0].term, w[1].term);
        if t0 == 0.0 && t1 == 0.0 {
            all_ge_hi = false;
            all_ge_lo = false;
            continue;
        }
        if t0 == 0.0 {
            all_le = false;
            continue;
        }
        let r = t1 / t0;
        if !(r <= 1.0 - delta) {
            all_le = false;
        }
        if !(r >= 1.0 + delta) {
            all_ge_hi = false;
        }
        if !(r >= 1.0 - delta) {
            all_ge_lo = false;
        }
    }
    if all_le {
        SeriesVerdict::Converging
    } else if all_ge_hi {
        SeriesVerdict::Diverging
    } else if all_ge_lo && slices.last().unwrap().term >= 0.1 * t_max {
        // ratios hover around 1 and the terms are not vanishing: the series
        // cannot converge
        SeriesVerdict::Diverging
    } else {
        SeriesVerdict::Inconclusive
    }
}

/// True when any component of the descriptor is a grid-discretized body
/// (ball, shell, or sphere), whose grid spacing must be adapted to the
/// slice width.
fn has_grid_root(desc: &SetDescriptor) -> bool {
    match desc {
        SetDescriptor::Ball { .. }
        | SetDescriptor::Sphere { .. }
        | SetDescriptor::Shell { .. } => true,
        SetDescriptor::RotationBody { .. } | SetDescriptor::HalfCylinder { .. } => false,
        SetDescriptor::Union(members) => members.iter().any(has_grid_root),
        SetDescriptor::Truncate { inner, .. } => has_grid_root(inner),
        SetDescriptor::AnnulusClip { inner, .. } => has_grid_root(inner),
    }
}

/// Thin-cylinder capacity surrogate for a radial slice whose profile
/// underflows double precision: `c = L / (2 ln(L/ρ))`, with `ln ρ` taken
/// from the profile in closed form. Only available for revolution bodies
/// around the x₁-axis sliced about the origin.
fn surrogate_capacity(desc: &SetDescriptor, y: &[f64], r_in: f64, r_out: f64) -> Option<f64> {
    if math::norm(y) > 1e-12 {
        return None;
    }
    match desc {
        SetDescriptor::RotationBody {
            profile,
            x1_min,
            x1_max,
        } => {
            // slice in x1 terms: the radial band, up to the (tiny) profile
            // distortion
            let lo = r_in.max(*x1_min);
            let hi = r_out.min(*x1_max);
            if hi <= lo {
                return None;
            }
            let len = hi - lo;
            // max profile radius over the slice
            let log_rho = match profile {
                Profile::Cusp { .. } => profile.log_radius(hi),
                _ => profile.log_radius(lo),
            };
            let log_ratio = libm::log(len) - log_rho;
            if log_ratio <= 1.0 {
                return None; // not thin; surrogate invalid
            }
            Some(len / (2.0 * log_ratio))
        }
        SetDescriptor::Union(members) => {
            let mut total = 0.0;
            let mut any = false;
            for m in members {
                if let Some(c) = surrogate_capacity(m, y, r_in, r_out) {
                    total += c;
                    any = true;
                }
            }
            if any {
                Some(total)
            } else {
                None
            }
        }
        SetDescriptor::Truncate { inner, radius } => {
            surrogate_capacity(inner, y, r_in, r_out.min(*radius))
        }
        _ => None,
    }
}

/// Deterministic low-discrepancy probe points in the shell
/// `[1.2, 2.0] × bounding radius` around the origin, for potential
/// inequalities. Points that fall inside `avoid` are skipped.
pub fn probe_points(
    dim: usize,
    bounding_radius: f64,
    count: usize,
    avoid: &[&SetDescriptor],
) -> Vec<Vec<f64>> {
    let center = alloc::vec![0.0; dim];
    let r = bounding_radius.max(1e-6);
    let raw = math::halton_shell(count * 2, &center, 1.2 * r, 2.0 * r);
    let mut out = Vec::with_capacity(count);
    for p in raw {
        if avoid.iter().any(|d| d.contains(&p)) {
            continue;
        }
        out.push(p);
        if out.len() == count {
            break;
        }
    }
    out
}
