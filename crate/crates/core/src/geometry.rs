//! Set descriptors, quadrature point clouds, annulus decompositions for
//! Wiener-type sums, and Kelvin inversion of clouds and measures.
//!
//! Discretization conventions:
//! * volume bodies (balls, shells) use cell-centered grids with cut-cell
//!   boundary treatment: every cell that meets the set contributes its
//!   intersection measure, with the node at the intersection centroid;
//! * spheres use an offset Fibonacci lattice with a fixed polar repair
//!   table so the implicit cells are equal-area to well under 2%;
//! * bodies of revolution use ring layers where the profile radius is
//!   resolvable and collapse to an axial filament (full-ring cells) where
//!   it is not; profile values below `PROFILE_FLOOR` are not discretized
//!   at all and are handled analytically by the callers that need them.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Profile values below this are treated as analytically zero: the slice
/// exists but cannot be represented in double precision.
pub const PROFILE_FLOOR: f64 = 1e-300;

/// Equal-volume ball radius of a unit cube, `(3/4π)^{1/3}`.
const CUBE_EQ_RADIUS: f64 = 0.6203504908994001;
/// Equal-area disc radius of a unit square, `1/√π`.
const SQUARE_EQ_RADIUS: f64 = 0.5641895835477563;

/// Polar repair offsets for the Fibonacci sphere lattice, applied to the
/// first and last six nodes (z index and azimuth). The spiral's polar
/// neighborhood is scale-invariant, so one table serves every node count;
/// the values equalize the implicit cell areas near the poles.
const FIB_DZ: [f64; 6] = [-0.1427, 0.4220, 0.0486, -0.1211, -0.2606, 0.1631];
const FIB_DPHI: [f64; 6] = [-0.0578, 0.1184, 0.0099, -0.0254, 0.0733, 0.0193];

const GOLDEN_ANGLE: f64 = core::f64::consts::PI * 0.7639320225002102; // π(3−√5)

/// Rotation-body profile ρ(x₁).
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// ρ = x₁^{−s} with s ≥ 0 (constant radius for s = 0).
    Power { s: f64 },
    /// ρ = exp(−x₁^s) with s > 0.
    StretchedExp { s: f64 },
    /// ρ = exp(−x₁^{−β}) with β > 0: exponential cusp closing at the origin.
    Cusp { beta: f64 },
}

impl Profile {
    /// ln ρ(x₁); never underflows.
    pub fn log_radius(&self, x1: f64) -> f64 {
        match *self {
            Profile::Power { s } => -s * libm::log(x1),
            Profile::StretchedExp { s } => -libm::pow(x1, s),
            Profile::Cusp { beta } => -libm::pow(x1, -beta),
        }
    }

    /// ρ(x₁); may underflow to 0 for deep cusp slices.
    pub fn radius(&self, x1: f64) -> f64 {
        libm::exp(self.log_radius(x1))
    }

    /// dρ/dx₁, for the lateral-area slant factor.
    fn radius_slope(&self, x1: f64) -> f64 {
        let r = self.radius(x1);
        match *self {
            Profile::Power { s } => -s * libm::pow(x1, -s - 1.0),
            Profile::StretchedExp { s } => -s * libm::pow(x1, s - 1.0) * r,
            Profile::Cusp { beta } => beta * libm::pow(x1, -beta - 1.0) * r,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Profile::Power { s } => s >= 0.0 && s.is_finite(),
            Profile::StretchedExp { s } => s > 0.0 && s.is_finite(),
            Profile::Cusp { beta } => beta > 0.0 && beta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDescriptor(String::from(
                "profile exponent out of range",
            )))
        }
    }
}

/// Analytic description of a subset of ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub enum SetDescriptor {
    /// Solid ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Sphere surface.
    Sphere { center: Vec<f64>, radius: f64 },
    /// Solid shell `r_in ≤ |x−c| ≤ r_out`.
    Shell {
        center: Vec<f64>,
        r_in: f64,
        r_out: f64,
    },
    /// Body of revolution about the x₁-axis: `x₂²+x₃² ≤ ρ(x₁)²`,
    /// x₁ ∈ [x1_min, x1_max]; `x1_max` may be infinite (discretization then
    /// requires a `Truncate` wrapper). Represented by its boundary surface.
    RotationBody {
        profile: Profile,
        x1_min: f64,
        x1_max: f64,
    },
    /// Cylinder of constant radius about the x₁-axis (boundary surface),
    /// x₁ ∈ [x1_min, x1_max] with `x1_max` possibly infinite.
    HalfCylinder {
        radius: f64,
        x1_min: f64,
        x1_max: f64,
    },
    /// Union of descriptors of equal dimension and intrinsic dimension.
    Union(Vec<SetDescriptor>),
    /// Intersection with the origin-centered ball of the given radius.
    Truncate {
        inner: Box<SetDescriptor>,
        radius: f64,
    },
    /// Intersection with an annulus around `center`. `lo_open` selects the
    /// bracket: `(r_in, r_out]` when true, `[r_in, r_out)` when false.
    AnnulusClip {
        inner: Box<SetDescriptor>,
        center: Vec<f64>,
        r_in: f64,
        r_out: f64,
        lo_open: bool,
    },
}

/// Annulus decomposition direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnulusMode {
    /// ratio ∈ (0,1): slices `(q^{j+1}, q^j]` shrinking toward `y`.
    Shrinking,
    /// ratio ∈ (1,∞): slices `[q^j, q^{j+1})` expanding toward infinity.
    Expanding,
}

impl SetDescriptor {
    /// Ambient dimension n.
    pub fn dim(&self) -> usize {
        match self {
            SetDescriptor::Ball { center, .. }
            | SetDescriptor::Sphere { center, .. }
            | SetDescriptor::Shell { center, .. } => center.len(),
            SetDescriptor::RotationBody { .. } | SetDescriptor::HalfCylinder { .. } => 3,
            SetDescriptor::Union(members) => members.first().map_or(3, |m| m.dim()),
            SetDescriptor::Truncate { inner, .. } => inner.dim(),
            SetDescriptor::AnnulusClip { inner, .. } => inner.dim(),
        }
    }

    /// Validates radii, domains, and dimensional consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDescriptor(msg));
        match self {
            SetDescriptor::Ball { center, radius } | SetDescriptor::Sphere { center, radius } => {
                if !(center.len() == 2 || center.len() == 3) {
                    return bad(format!("dimension {} not supported", center.len()));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(String::from("radius must be positive and finite"));
                }
                Ok(())
            }
            SetDescriptor::Shell {
                center,
                r_in,
                r_out,
            } => {
                if !(center.len() == 2 || center.len() == 3) {
                    return bad(format!("dimension {} not supported", center.len()));
                }
                if !(r_in.is_finite() && *r_in >= 0.0 && r_out.is_finite() && r_out > r_in) {
                    return bad(String::from("shell radii must satisfy 0 <= r_in < r_out"));
                }
                Ok(())
            }
            SetDescriptor::RotationBody {
                profile,
                x1_min,
                x1_max,
            } => {
                profile.validate()?;
                if !(*x1_min > 0.0 || !matches!(profile, Profile::Cusp { .. }) && *x1_min >= 0.0) {
                    return bad(String::from("cusp domain must start at x1 > 0"));
                }
                if !(x1_max > x1_min) {
                    return bad(String::from("empty x1 interval"));
                }
                Ok(())
            }
            SetDescriptor::HalfCylinder {
                radius,
                x1_min,
                x1_max,
            } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(String::from("cylinder radius must be positive"));
                }
                if !(x1_max > x1_min && x1_min.is_finite()) {
                    return bad(String::from("empty x1 interval"));
                }
                Ok(())
            }
            SetDescriptor::Union(members) => {
                if members.is_empty() {
                    return bad(String::from("empty union"));
                }
                let d = members[0].dim();
                for m in members {
                    m.validate()?;
                    if m.dim() != d {
                        return bad(String::from("union members must share dimension"));
                    }
                }
                Ok(())
            }
            SetDescriptor::Truncate { inner, radius } => {
                inner.validate()?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(String::from("truncation radius must be positive"));
                }
                Ok(())
            }
            SetDescriptor::AnnulusClip {
                inner,
                center,
                r_in,
                r_out,
                ..
            } => {
                inner.validate()?;
                if center.len() != inner.dim() {
                    return bad(String::from("annulus center dimension mismatch"));
                }
                if !(*r_in >= 0.0 && r_out > r_in && r_out.is_finite()) {
                    return bad(String::from("annulus radii must satisfy 0 <= r_in < r_out"));
                }
                Ok(())
            }
        }
    }

    /// Membership predicate. Surfaces (spheres, revolution boundaries) use a
    /// relative tolerance of 1e−9 on the defining equation.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SetDescriptor::Ball { center, radius } => math::dist(x, center) <= *radius,
            SetDescriptor::Sphere { center, radius } => {
                (math::dist(x, center) - radius).abs() <= 1e-9 * radius.max(1.0)
            }
            SetDescriptor::Shell {
                center,
                r_in,
                r_out,
            } => {
                let r = math::dist(x, center);
                r >= *r_in && r <= *r_out
            }
            SetDescriptor::RotationBody {
                profile,
                x1_min,
                x1_max,
            } => {
                if x[0] < *x1_min || x[0] > *x1_max {
                    return false;
                }
                let rp = libm::hypot(x[1], x[2]);
                if rp == 0.0 {
                    return true;
                }
                libm::log(rp) <= profile.log_radius(x[0]) + 1e-12
            }
            SetDescriptor::HalfCylinder {
                radius,
                x1_min,
                x1_max,
            } => x[0] >= *x1_min && x[0] <= *x1_max && libm::hypot(x[1], x[2]) <= *radius,
            SetDescriptor::Union(members) => members.iter().any(|m| m.contains(x)),
            SetDescriptor::Truncate { inner, radius } => {
                math::norm(x) <= *radius && inner.contains(x)
            }
            SetDescriptor::AnnulusClip {
                inner,
                center,
                r_in,
                r_out,
                lo_open,
            } => {
                let r = math::dist(x, center);
                let in_band = if *lo_open {
                    r > *r_in && r <= *r_out
                } else {
                    r >= *r_in && r < *r_out
                };
                in_band && inner.contains(x)
            }
        }
    }

    /// An upper bound on `|x|` over the set, when finite.
    pub fn bounding_radius(&self) -> Option<f64> {
        match self {
            SetDescriptor::Ball { center, radius } | SetDescriptor::Sphere { center, radius } => {
                Some(math::norm(center) + radius)
            }
            SetDescriptor::Shell { center, r_out, .. } => Some(math::norm(center) + r_out),
            SetDescriptor::RotationBody {
                profile,
                x1_min,
                x1_max,
            } => {
                if !x1_max.is_finite() {
                    return None;
                }
                let rmax = profile.radius(*x1_min).max(profile.radius(*x1_max));
                Some(libm::hypot(x1_max.abs().max(x1_min.abs()), rmax))
            }
            SetDescriptor::HalfCylinder {
                radius,
                x1_min,
                x1_max,
            } => {
                if !x1_max.is_finite() {
                    return None;
                }
                Some(libm::hypot(x1_max.abs().max(x1_min.abs()), *radius))
            }
            SetDescriptor::Union(members) => {
                let mut r = 0.0f64;
                for m in members {
                    r = r.max(m.bounding_radius()?);
                }
                Some(r)
            }
            SetDescriptor::Truncate { inner, radius } => Some(
                inner
                    .bounding_radius()
                    .map_or(*radius, |r| r.min(*radius)),
            ),
            SetDescriptor::AnnulusClip {
                inner,
                center,
                r_out,
                ..
            } => {
                let clip = math::norm(center) + r_out;
                Some(inner.bounding_radius().map_or(clip, |r| r.min(clip)))
            }
        }
    }
}

/// Shape of the quadrature cell a node represents; drives the kernel
/// diagonal rule.
#[derive(Debug, Clone, PartialEq)]
pub enum CellKind {
    /// Isotropic d-dimensional ball cell of radius `cell_radius`.
    Iso { d: u8 },
    /// Flat rectangular surface patch with extents `a × b`.
    Rect { a: f64, b: f64 },
    /// Full cylindrical shell (ring band) of the given ring radius and
    /// axial length `2·cell_radius`; used by filament nodes.
    Ring { ring_radius: f64 },
}

/// Quadrature discretization of a set: nodes, cell measures, and cell
/// geometry. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    intrinsic_dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    cell_radius: Vec<f64>,
    cells: Vec<CellKind>,
}

impl PointCloud {
    pub fn new(
        dim: usize,
        intrinsic_dim: usize,
        nodes: Vec<f64>,
        weights: Vec<f64>,
        cell_radius: Vec<f64>,
        cells: Vec<CellKind>,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(String::from("dimension must be >= 2")));
        }
        let n = weights.len();
        if nodes.len() != n * dim || cell_radius.len() != n || cells.len() != n {
            return Err(Error::InvalidParameter(String::from(
                "inconsistent cloud field lengths",
            )));
        }
        for &w in &weights {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(String::from(
                    "weights must be positive and finite",
                )));
            }
        }
        for &c in &cell_radius {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidParameter(String::from(
                    "cell radii must be positive and finite",
                )));
            }
        }
        Ok(PointCloud {
            dim,
            intrinsic_dim,
            nodes,
            weights,
            cell_radius,
            cells,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension of the cell measure (1 = length, 2 = area, 3 = volume).
    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes_flat(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cell_radius(&self) -> &[f64] {
        &self.cell_radius
    }

    pub fn cells(&self) -> &[CellKind] {
        &self.cells
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Max |x| over nodes (0 for an empty cloud).
    pub fn bounding_radius(&self) -> f64 {
        (0..self.len())
            .map(|i| math::norm(self.node(i)))
            .fold(0.0, f64::max)
    }

    /// Full invariant check, including O(N²) pairwise distinctness.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                if self.node(i) == self.node(j) {
                    return Err(Error::InvalidParameter(format!(
                        "coincident nodes {i} and {j}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Index of a node exactly equal to `p`, if any.
    pub fn find_node(&self, p: &[f64]) -> Option<usize> {
        (0..self.len()).find(|&i| self.node(i) == p)
    }
}

/// Nonnegative mass vector over a cloud's nodes.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    cloud: Arc<PointCloud>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(cloud: Arc<PointCloud>, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != cloud.len() {
            return Err(Error::CloudMismatch);
        }
        for &m in &masses {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::InvalidParameter(String::from(
                    "masses must be nonnegative and finite",
                )));
            }
        }
        Ok(DiscreteMeasure { cloud, masses })
    }

    pub fn zero(cloud: Arc<PointCloud>) -> Self {
        let n = cloud.len();
        DiscreteMeasure {
            cloud,
            masses: vec![0.0; n],
        }
    }

    /// Unit point mass at node `i`.
    pub fn dirac(cloud: Arc<PointCloud>, i: usize) -> Self {
        let mut m = vec![0.0; cloud.len()];
        m[i] = 1.0;
        DiscreteMeasure { cloud, masses: m }
    }

    pub fn cloud(&self) -> &Arc<PointCloud> {
        &self.cloud
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn same_cloud(&self, other: &DiscreteMeasure) -> bool {
        Arc::ptr_eq(&self.cloud, &other.cloud)
    }

    /// Scales all masses by `factor ≥ 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        DiscreteMeasure {
            cloud: self.cloud.clone(),
            masses: self.masses.iter().map(|m| m * factor).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------------

struct CloudBuilder {
    dim: usize,
    intrinsic_dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    cell_radius: Vec<f64>,
    cells: Vec<CellKind>,
}

impl CloudBuilder {
    fn new(dim: usize, intrinsic_dim: usize) -> Self {
        CloudBuilder {
            dim,
            intrinsic_dim,
            nodes: Vec::new(),
            weights: Vec::new(),
            cell_radius: Vec::new(),
            cells: Vec::new(),
        }
    }

    fn push(&mut self, node: &[f64], weight: f64, cell_radius: f64, cell: CellKind) {
        self.nodes.extend_from_slice(node);
        self.weights.push(weight);
        self.cell_radius.push(cell_radius);
        self.cells.push(cell);
    }

    fn finish(self) -> Result<PointCloud> {
        PointCloud::new(
            self.dim,
            self.intrinsic_dim,
            self.nodes,
            self.weights,
            self.cell_radius,
            self.cells,
        )
    }
}

/// Discretizes a descriptor into a point cloud.
///
/// `resolution` scales linearly with node density: grids use `radius/res`
/// spacing, spheres get `2·res²` nodes, revolution bodies get `res` axial
/// cells per unit length (per octave for cusps). Unbounded descriptors must
/// be wrapped in `Truncate`. Refining `resolution` only adds nodes.
pub fn discretize(desc: &SetDescriptor, resolution: u32) -> Result<PointCloud> {
    desc.validate()?;
    if resolution < 1 {
        return Err(Error::InvalidParameter(String::from("resolution must be >= 1")));
    }
    let mut filters = Vec::new();
    let cloud = discretize_inner(desc, resolution, None, &mut filters)?;
    Ok(cloud)
}

/// Radial filters applied by Truncate / AnnulusClip wrappers.
#[derive(Clone)]
struct RadialFilter {
    center: Vec<f64>,
    r_in: f64,
    r_out: f64,
    lo_open: bool,
}

impl RadialFilter {
    fn keeps(&self, x: &[f64]) -> bool {
        let r = math::dist(x, &self.center);
        if self.lo_open {
            r > self.r_in && r <= self.r_out
        } else {
            r >= self.r_in && r < self.r_out
        }
    }
}

fn discretize_inner(
    desc: &SetDescriptor,
    resolution: u32,
    bound: Option<f64>,
    filters: &mut Vec<RadialFilter>,
) -> Result<PointCloud> {
    match desc {
        SetDescriptor::Truncate { inner, radius } => {
            let dim = inner.dim();
            filters.push(RadialFilter {
                center: vec![0.0; dim],
                r_in: 0.0,
                r_out: *radius,
                lo_open: false,
            });
            let eff = bound.map_or(*radius, |b| b.min(*radius));
            let out = discretize_inner(inner, resolution, Some(eff), filters);
            filters.pop();
            out
        }
        SetDescriptor::AnnulusClip {
            inner,
            center,
            r_in,
            r_out,
            lo_open,
        } => {
            let reach = math::norm(center) + r_out;
            filters.push(RadialFilter {
                center: center.clone(),
                r_in: *r_in,
                r_out: *r_out,
                lo_open: *lo_open,
            });
            let eff = bound.map_or(reach, |b| b.min(reach));
            let out = discretize_inner(inner, resolution, Some(eff), filters);
            filters.pop();
            out
        }
        SetDescriptor::Union(members) => {
            let mut clouds = Vec::with_capacity(members.len());
            for m in members {
                clouds.push(discretize_inner(m, resolution, bound, filters)?);
            }
            let dim = clouds[0].dim();
            let idim = clouds[0].intrinsic_dim();
            for c in &clouds {
                if c.intrinsic_dim() != idim && !c.is_empty() {
                    return Err(Error::InvalidDescriptor(String::from(
                        "union members must share intrinsic dimension",
                    )));
                }
            }
            let mut b = CloudBuilder::new(dim, idim);
            for c in clouds {
                for i in 0..c.len() {
                    b.push(c.node(i), c.weights()[i], c.cell_radius()[i], c.cells()[i].clone());
                }
            }
            let cloud = b.finish()?;
            cloud.validate().map_err(|_| {
                Error::InvalidDescriptor(String::from("union produced coincident nodes"))
            })?;
            Ok(cloud)
        }
        SetDescriptor::Ball { center, radius } => {
            grid_body(center, *radius, resolution, bound, filters, &|x| {
                math::dist(x, center) <= *radius
            })
        }
        SetDescriptor::Shell {
            center,
            r_in,
            r_out,
        } => grid_body(center, *r_out, resolution, bound, filters, &|x| {
            let r = math::dist(x, center);
            r >= *r_in && r <= *r_out
        }),
        SetDescriptor::Sphere { center, radius } => {
            sphere_cloud(center, *radius, resolution, filters)
        }
        SetDescriptor::RotationBody {
            profile,
            x1_min,
            x1_max,
        } => {
            let log_spaced = matches!(profile, Profile::Cusp { .. });
            revolution_cloud(
                &|x| profile.radius(x),
                &|x| profile.log_radius(x),
                &|x| profile.radius_slope(x),
                *x1_min,
                *x1_max,
                log_spaced,
                resolution,
                bound,
                filters,
            )
        }
        SetDescriptor::HalfCylinder {
            radius,
            x1_min,
            x1_max,
        } => revolution_cloud(
            &|_| *radius,
            &|_| libm::log(*radius),
            &|_| 0.0,
            *x1_min,
            *x1_max,
            false,
            resolution,
            bound,
            filters,
        ),
    }
}

fn passes(filters: &[RadialFilter], x: &[f64]) -> bool {
    filters.iter().all(|f| f.keeps(x))
}

/// Cut-cell volume grid: every grid cell meeting the predicate contributes
/// its intersection measure (5^dim subsampling) at the intersection
/// centroid. Cell radius is the equal-volume (equal-area in 2D) radius of
/// the full cell. Radial filters additionally clip the visited index
/// window, so deep annulus slices stay cheap.
fn grid_body(
    center: &[f64],
    extent: f64,
    resolution: u32,
    _bound: Option<f64>,
    filters: &[RadialFilter],
    inside: &dyn Fn(&[f64]) -> bool,
) -> Result<PointCloud> {
    let dim = center.len();
    let h = extent / resolution as f64;
    let half_diag = 0.5 * h * libm::sqrt(dim as f64);
    let k_max = resolution as i64 + 1;
    let sub = 5usize;
    let mut b = CloudBuilder::new(dim, dim);
    let eq_radius = if dim == 3 {
        CUBE_EQ_RADIUS * h
    } else {
        SQUARE_EQ_RADIUS * h
    };
    // index window per dimension from the filter boxes
    let mut k_lo = vec![-k_max; dim];
    let mut k_hi = vec![k_max; dim];
    for f in filters {
        for d in 0..dim {
            let lo = f.center[d] - f.r_out - h;
            let hi = f.center[d] + f.r_out + h;
            let klo = libm::floor((lo - center[d]) / h - 0.5) as i64;
            let khi = libm::ceil((hi - center[d]) / h + 0.5) as i64;
            k_lo[d] = k_lo[d].max(klo);
            k_hi[d] = k_hi[d].min(khi);
        }
    }
    for d in 0..dim {
        if k_lo[d] > k_hi[d] {
            return b.finish(); // window empty
        }
    }
    let mut idx = k_lo.clone();
    let mut sub_pt = vec![0.0; dim];
    let mut centroid = vec![0.0; dim];
    let mut cell_center = vec![0.0; dim];
    'outer: loop {
        for d in 0..dim {
            cell_center[d] = center[d] + (idx[d] as f64 + 0.5) * h;
        }
        // quick reject: cell cannot touch the body
        if math::dist(&cell_center, center) <= extent + half_diag {
            let mut cnt = 0usize;
            for d in 0..dim {
                centroid[d] = 0.0;
            }
            let total = sub.pow(dim as u32);
            for s in 0..total {
                let mut t = s;
                for d in 0..dim {
                    let o = (t % sub) as f64;
                    t /= sub;
                    sub_pt[d] = cell_center[d] + ((o + 0.5) / sub as f64 - 0.5) * h;
                }
                if inside(&sub_pt) {
                    cnt += 1;
                    for d in 0..dim {
                        centroid[d] += sub_pt[d];
                    }
                }
            }
            if cnt > 0 {
                let frac = cnt as f64 / total as f64;
                for d in 0..dim {
                    centroid[d] /= cnt as f64;
                }
                if passes(filters, &centroid) {
                    let w = frac * libm::pow(h, dim as f64);
                    b.push(&centroid, w, eq_radius, CellKind::Iso { d: dim as u8 });
                }
            }
        }
        // advance multi-index within the window
        for d in 0..dim {
            idx[d] += 1;
            if idx[d] <= k_hi[d] {
                continue 'outer;
            }
            idx[d] = k_lo[d];
        }
        break;
    }
    b.finish()
}

/// Offset Fibonacci lattice with polar repair; equal area weights.
fn sphere_cloud(
    center: &[f64],
    radius: f64,
    resolution: u32,
    filters: &[RadialFilter],
) -> Result<PointCloud> {
    let dim = center.len();
    let mut b = CloudBuilder::new(dim, dim - 1);
    if dim == 2 {
        let n = libm::ceil(2.0 * core::f64::consts::PI * radius * resolution as f64).max(8.0)
            as usize;
        let w = 2.0 * core::f64::consts::PI * radius / n as f64;
        for k in 0..n {
            let th = 2.0 * core::f64::consts::PI * (k as f64 + 0.5) / n as f64;
            let p = [
                center[0] + radius * libm::cos(th),
                center[1] + radius * libm::sin(th),
            ];
            if passes(filters, &p) {
                b.push(&p, w, 0.5 * w, CellKind::Iso { d: 1 });
            }
        }
        return b.finish();
    }
    let n = 2 * (resolution as usize) * (resolution as usize);
    let n = n.max(8);
    let area = 4.0 * core::f64::consts::PI * radius * radius / n as f64;
    let cr = 0.5 * libm::sqrt(area);
    let repair = FIB_DZ.len().min(n / 2);
    for k in 0..n {
        let mut t = k as f64 + 0.5;
        let mut phi = k as f64 * GOLDEN_ANGLE;
        if k < repair {
            t += FIB_DZ[k];
            phi += FIB_DPHI[k];
        }
        let mirror = n - 1 - k;
        if mirror < repair {
            t -= FIB_DZ[mirror];
            phi -= FIB_DPHI[mirror];
        }
        let z = (1.0 - 2.0 * t / n as f64).clamp(-1.0, 1.0);
        let rxy = libm::sqrt((1.0 - z * z).max(0.0));
        let p = [
            center[0] + radius * rxy * libm::cos(phi),
            center[1] + radius * rxy * libm::sin(phi),
            center[2] + radius * z,
        ];
        if passes(filters, &p) {
            b.push(&p, area, cr, CellKind::Iso { d: 2 });
        }
    }
    b.finish()
}

/// Lateral surface of a body of revolution, with end-cap discs at finite
/// native interval ends. Ring layers where the radius is resolvable,
/// axial filament nodes (full-ring cells) below that, nothing below
/// `PROFILE_FLOOR`.
#[allow(clippy::too_many_arguments)]
fn revolution_cloud(
    rho: &dyn Fn(f64) -> f64,
    log_rho: &dyn Fn(f64) -> f64,
    slope: &dyn Fn(f64) -> f64,
    x1_min: f64,
    x1_max: f64,
    log_spaced: bool,
    resolution: u32,
    bound: Option<f64>,
    filters: &[RadialFilter],
) -> Result<PointCloud> {
    let mut b = CloudBuilder::new(3, 2);
    let x_hi_native = x1_max;
    let x_hi = match bound {
        Some(bd) => x1_max.min(bd),
        None => x1_max,
    };
    if !x_hi.is_finite() {
        return Err(Error::InvalidDescriptor(String::from(
            "unbounded body requires a Truncate wrapper",
        )));
    }
    if x_hi <= x1_min {
        return b.finish(); // empty: truncation removed everything
    }
    let res = resolution as f64;

    // axial cell edges
    let mut edges: Vec<f64> = Vec::new();
    if log_spaced {
        // `resolution` cells per octave, anchored at the native upper end
        let g = libm::pow(2.0, -1.0 / res);
        let mut x = x_hi_native.min(x_hi);
        edges.push(x);
        while x > x1_min * (1.0 + 1e-12) {
            x = (x * g).max(x1_min);
            edges.push(x);
        }
        edges.reverse();
    } else {
        // uniform spacing 1/res anchored at the native lower end
        let h = 1.0 / res;
        let m = libm::ceil((x_hi - x1_min) / h).max(1.0) as usize;
        for k in 0..=m {
            edges.push((x1_min + k as f64 * h).min(x_hi));
        }
        edges.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    }

    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let h = hi - lo;
        if h <= 0.0 {
            continue;
        }
        let xm = 0.5 * (lo + hi);
        let lr = log_rho(xm);
        if lr < -690.0 {
            continue; // below PROFILE_FLOOR: analytic-only region
        }
        let r = rho(xm);
        if r < PROFILE_FLOOR {
            continue;
        }
        let slant = libm::sqrt(1.0 + slope(xm) * slope(xm));
        let band_area = 2.0 * core::f64::consts::PI * r * h * slant;
        let two_pi_r = 2.0 * core::f64::consts::PI * r;
        if r >= 0.25 * h {
            // resolvable ring of surface patches
            let m = ((two_pi_r / h) as usize).max(5);
            let patch_w = two_pi_r / m as f64;
            let phi0 = 0.618_033_988_749_895 * 2.0 * core::f64::consts::PI * (lo / h);
            for j in 0..m {
                let phi = phi0 + 2.0 * core::f64::consts::PI * j as f64 / m as f64;
                let p = [xm, r * libm::cos(phi), r * libm::sin(phi)];
                if passes(filters, &p) {
                    b.push(
                        &p,
                        band_area / m as f64,
                        0.5 * libm::sqrt(band_area / m as f64),
                        CellKind::Rect {
                            a: h * slant,
                            b: patch_w,
                        },
                    );
                }
            }
        } else {
            // filament node carrying the whole ring band
            let p = [xm, 0.0, 0.0];
            if passes(filters, &p) {
                b.push(&p, band_area, 0.5 * h, CellKind::Ring { ring_radius: r });
            }
        }
    }

    // end caps at native finite ends with resolvable radius
    let h_ref = if log_spaced { 0.0 } else { 1.0 / res };
    for (end, native) in [(x1_min, true), (x_hi, x_hi >= x_hi_native * (1.0 - 1e-12))] {
        if !native || log_spaced {
            continue;
        }
        let r_end = rho(end);
        if r_end < 0.25 * h_ref || !end.is_finite() {
            continue;
        }
        cap_disc(&mut b, end, r_end, h_ref, filters);
    }
    b.finish()
}

/// Cut-cell disc grid in the plane x₁ = x0 (cap face of a revolution body).
fn cap_disc(b: &mut CloudBuilder, x0: f64, radius: f64, h: f64, filters: &[RadialFilter]) {
    let k_max = libm::ceil(radius / h) as i64 + 1;
    let sub = 5i64;
    for ky in -k_max..k_max {
        for kz in -k_max..k_max {
            let cy = (ky as f64 + 0.5) * h;
            let cz = (kz as f64 + 0.5) * h;
            if libm::hypot(cy, cz) > radius + h {
                continue;
            }
            let mut cnt = 0usize;
            let (mut sy, mut sz) = (0.0, 0.0);
            for oy in 0..sub {
                for oz in 0..sub {
                    let py = cy + ((oy as f64 + 0.5) / sub as f64 - 0.5) * h;
                    let pz = cz + ((oz as f64 + 0.5) / sub as f64 - 0.5) * h;
                    if libm::hypot(py, pz) <= radius {
                        cnt += 1;
                        sy += py;
                        sz += pz;
                    }
                }
            }
            if cnt == 0 {
                continue;
            }
            let frac = cnt as f64 / (sub * sub) as f64;
            let p = [x0, sy / cnt as f64, sz / cnt as f64];
            if passes(filters, &p) {
                b.push(
                    &p,
                    frac * h * h,
                    0.5 * libm::sqrt(frac) * h,
                    CellKind::Iso { d: 2 },
                );
            }
        }
    }
}

/// Per-j annulus intersections `A_j = A ∩ {annulus around y}` for the
/// Wiener-type sums. Shrinking mode (`ratio ∈ (0,1)`) produces slices
/// `(q^{j+1}, q^j]`; expanding mode (`ratio ∈ (1,∞)`) produces
/// `[q^j, q^{j+1})`.
pub fn annulus_decompose(
    desc: &SetDescriptor,
    y: &[f64],
    ratio: f64,
    j_range: core::ops::RangeInclusive<i32>,
    mode: AnnulusMode,
) -> Result<Vec<SetDescriptor>> {
    desc.validate()?;
    if y.len() != desc.dim() {
        return Err(Error::InvalidParameter(String::from(
            "annulus center dimension mismatch",
        )));
    }
    match mode {
        AnnulusMode::Shrinking if !(ratio > 0.0 && ratio < 1.0) => {
            return Err(Error::InvalidParameter(String::from(
                "shrinking mode requires ratio in (0,1)",
            )));
        }
        AnnulusMode::Expanding if !(ratio > 1.0 && ratio.is_finite()) => {
            return Err(Error::InvalidParameter(String::from(
                "expanding mode requires ratio in (1,inf)",
            )));
        }
        _ => {}
    }
    let mut out = Vec::new();
    for j in j_range {
        let qj = libm::pow(ratio, j as f64);
        let qj1 = libm::pow(ratio, (j + 1) as f64);
        let (r_in, r_out, lo_open) = match mode {
            AnnulusMode::Shrinking => (qj1, qj, true),
            AnnulusMode::Expanding => (qj, qj1, false),
        };
        out.push(SetDescriptor::AnnulusClip {
            inner: Box::new(desc.clone()),
            center: y.to_vec(),
            r_in,
            r_out,
            lo_open,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Kelvin transformation
// ---------------------------------------------------------------------------

/// Inversion `x ↦ c + (x−c)/|x−c|²` of a cloud about `center`, with weights
/// scaled by the intrinsic-dimension Jacobian `r^{−2d}` and cell extents by
/// the local length scaling `r^{−2}`.
pub fn kelvin_invert_cloud(cloud: &PointCloud, center: &[f64]) -> Result<PointCloud> {
    if center.len() != cloud.dim() {
        return Err(Error::InvalidParameter(String::from(
            "inversion center dimension mismatch",
        )));
    }
    let d = cloud.intrinsic_dim() as f64;
    let mut b = CloudBuilder::new(cloud.dim(), cloud.intrinsic_dim());
    let mut img = vec![0.0; cloud.dim()];
    for i in 0..cloud.len() {
        let x = cloud.node(i);
        let r = math::dist(x, center);
        if r == 0.0 {
            return Err(Error::PointOnCloud);
        }
        let inv2 = 1.0 / (r * r);
        for k in 0..cloud.dim() {
            img[k] = center[k] + (x[k] - center[k]) * inv2;
        }
        let w = cloud.weights()[i] * libm::pow(r, -2.0 * d);
        let cr = cloud.cell_radius()[i] * inv2;
        let cell = match &cloud.cells()[i] {
            CellKind::Iso { d } => CellKind::Iso { d: *d },
            CellKind::Rect { a, b } => CellKind::Rect {
                a: a * inv2,
                b: b * inv2,
            },
            CellKind::Ring { ring_radius } => CellKind::Ring {
                ring_radius: ring_radius * inv2,
            },
        };
        b.push(&img, w, cr, cell);
    }
    b.finish()
}

/// Kelvin transform of a measure: masses are reweighted by
/// `|x−center|^{α−n}` and moved to the inverted cloud. The total mass of
/// the result equals `U^μ(center)` exactly.
pub fn kelvin_transform_measure(
    measure: &DiscreteMeasure,
    center: &[f64],
    alpha: f64,
) -> Result<DiscreteMeasure> {
    let cloud = measure.cloud();
    let n = cloud.dim() as f64;
    let inverted = Arc::new(kelvin_invert_cloud(cloud, center)?);
    let mut masses = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let r = math::dist(cloud.node(i), center);
        masses.push(measure.masses()[i] * math::powr(r, alpha - n));
    }
    DiscreteMeasure::new(inverted, masses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(r: f64) -> SetDescriptor {
        SetDescriptor::Ball {
            center: vec![0.0, 0.0, 0.0],
            radius: r,
        }
    }

    #[test]
    fn sphere_total_weight_is_area() {
        let s = SetDescriptor::Sphere {
            center: vec![0.0, 0.0, 0.0],
            radius: 1.0,
        };
        let c = discretize(&s, 16).unwrap();
        assert!(c.len() >= 512);
        let area = 4.0 * core::f64::consts::PI;
        assert!((c.total_weight() - area).abs() < 0.01 * area);
        c.validate().unwrap();
    }

    #[test]
    fn ball_total_weight_is_volume() {
        let c = discretize(&ball(1.0), 8).unwrap();
        let vol = 4.0 * core::f64::consts::PI / 3.0;
        assert!((c.total_weight() - vol).abs() < 0.02 * vol, "{}", c.total_weight());
        // refining increases node count
        let c2 = discretize(&ball(1.0), 16).unwrap();
        assert!(c2.len() > c.len());
    }

    #[test]
    fn truncated_ball_nodes_stay_inside() {
        let t = SetDescriptor::Truncate {
            inner: Box::new(ball(1.0)),
            radius: 0.5,
        };
        let c = discretize(&t, 8).unwrap();
        assert!(!c.is_empty());
        for i in 0..c.len() {
            assert!(math::norm(c.node(i)) <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn cusp_nodes_satisfy_membership() {
        let cusp = SetDescriptor::RotationBody {
            profile: Profile::Cusp { beta: 2.0 },
            x1_min: 0.3,
            x1_max: 1.0,
        };
        let c = discretize(&cusp, 8).unwrap();
        assert!(!c.is_empty());
        for i in 0..c.len() {
            let x = c.node(i);
            let rp2 = x[1] * x[1] + x[2] * x[2];
            let bound = libm::exp(-2.0 * libm::pow(x[0], -2.0));
            assert!(rp2 <= bound * (1.0 + 1e-9) + 1e-300);
        }
    }

    #[test]
    fn degenerate_descriptors_rejected() {
        let z = SetDescriptor::Ball {
            center: vec![0.0, 0.0, 0.0],
            radius: 0.0,
        };
        assert!(matches!(discretize(&z, 4), Err(Error::InvalidDescriptor(_))));
        let e = SetDescriptor::HalfCylinder {
            radius: 1.0,
            x1_min: 2.0,
            x1_max: 1.0,
        };
        assert!(e.validate().is_err());
    }

    #[test]
    fn annuli_radii_match_definition() {
        let slices = annulus_decompose(
            &ball(1.0),
            &[0.0, 0.0, 0.0],
            0.5,
            0..=2,
            AnnulusMode::Shrinking,
        )
        .unwrap();
        assert_eq!(slices.len(), 3);
        if let SetDescriptor::AnnulusClip { r_in, r_out, .. } = &slices[0] {
            assert!((r_out - 1.0).abs() < 1e-15 && (r_in - 0.5).abs() < 1e-15);
        } else {
            panic!("expected annulus clip");
        }
        if let SetDescriptor::AnnulusClip { r_in, r_out, .. } = &slices[2] {
            assert!((r_out - 0.25).abs() < 1e-15 && (r_in - 0.125).abs() < 1e-15);
        } else {
            panic!("expected annulus clip");
        }
    }

    #[test]
    fn annulus_slices_partition_band_nodes() {
        let desc = ball(1.0);
        let y = [0.0, 0.0, 0.0];
        let slices =
            annulus_decompose(&desc, &y, 0.5, 0..=2, AnnulusMode::Shrinking).unwrap();
        let mut total = 0;
        for s in &slices {
            total += discretize(s, 8).unwrap().len();
        }
        // band covered by the union of the three slices: radii (1/8, 1]
        let band = SetDescriptor::AnnulusClip {
            inner: Box::new(desc),
            center: y.to_vec(),
            r_in: 0.125,
            r_out: 1.0,
            lo_open: true,
        };
        assert_eq!(total, discretize(&band, 8).unwrap().len());
    }

    #[test]
    fn expanding_annuli_cover_half_cylinder() {
        let hc = SetDescriptor::HalfCylinder {
            radius: 1.0,
            x1_min: 1.0,
            x1_max: f64::INFINITY,
        };
        let slices = annulus_decompose(
            &hc,
            &[0.0, 0.0, 0.0],
            2.0,
            0..=3,
            AnnulusMode::Expanding,
        )
        .unwrap();
        let mut counts = Vec::new();
        for s in &slices {
            counts.push(discretize(s, 4).unwrap().len());
        }
        // later slices are longer, so hold at least as many nodes
        assert!(counts[3] > counts[1]);
    }

    #[test]
    fn kelvin_inversion_distances_and_involution() {
        let s = SetDescriptor::Sphere {
            center: vec![0.0, 0.0, 0.0],
            radius: 2.0,
        };
        let c = discretize(&s, 8).unwrap();
        let center = [0.0, 0.0, 0.0];
        let inv = kelvin_invert_cloud(&c, &center).unwrap();
        for i in 0..inv.len() {
            assert!((math::norm(inv.node(i)) - 0.5).abs() < 1e-12);
        }
        let back = kelvin_invert_cloud(&inv, &center).unwrap();
        let mut max_err = 0.0f64;
        for i in 0..c.len() {
            max_err = max_err.max(math::dist(c.node(i), back.node(i)));
        }
        assert!(max_err < 1e-12, "{max_err}");
        // weights restored too
        for i in 0..c.len() {
            assert!((c.weights()[i] - back.weights()[i]).abs() < 1e-12 * c.weights()[i]);
        }
    }

    #[test]
    fn unit_sphere_is_kelvin_fixed() {
        let s = SetDescriptor::Sphere {
            center: vec![0.0, 0.0, 0.0],
            radius: 1.0,
        };
        let c = discretize(&s, 6).unwrap();
        let inv = kelvin_invert_cloud(&c, &[0.0, 0.0, 0.0]).unwrap();
        for i in 0..c.len() {
            assert!(math::dist(c.node(i), inv.node(i)) < 1e-12);
        }
    }

    #[test]
    fn kelvin_measure_total_mass_is_potential_at_center() {
        // unit point mass at distance 1: transform has unit mass (alpha=2, n=3)
        let s = SetDescriptor::Sphere {
            center: vec![0.0, 0.0, 0.0],
            radius: 1.0,
        };
        let c = Arc::new(discretize(&s, 6).unwrap());
        let mu = DiscreteMeasure::dirac(c.clone(), 0);
        let t = kelvin_transform_measure(&mu, &[0.0, 0.0, 0.0], 2.0).unwrap();
        assert!((t.total_mass() - 1.0).abs() < 1e-12);
        // double transform restores masses
        let tt = kelvin_transform_measure(&t, &[0.0, 0.0, 0.0], 2.0).unwrap();
        for i in 0..c.len() {
            assert!((tt.masses()[i] - mu.masses()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn node_at_center_rejected() {
        let c = discretize(&ball(1.0), 4).unwrap();
        let at_node: Vec<f64> = c.node(0).to_vec();
        assert!(matches!(
            kelvin_invert_cloud(&c, &at_node),
            Err(Error::PointOnCloud)
        ));
    }

    #[test]
    fn profile_monotonicity() {
        let p = Profile::Power { s: 1.5 };
        let e = Profile::StretchedExp { s: 0.5 };
        let cu = Profile::Cusp { beta: 2.0 };
        let mut prev_p = f64::INFINITY;
        let mut prev_e = f64::INFINITY;
        let mut prev_c = 0.0;
        for k in 1..=20 {
            let x = 0.2 * k as f64 + 0.5;
            assert!(p.radius(x) < prev_p);
            assert!(e.radius(x) < prev_e);
            assert!(cu.radius(x) > prev_c);
            prev_p = p.radius(x);
            prev_e = e.radius(x);
            prev_c = cu.radius(x);
        }
    }

    #[test]
    fn half_cylinder_mixed_ring_filament() {
        // stretched-exponential body goes from resolvable rings to filament
        let rb = SetDescriptor::RotationBody {
            profile: Profile::StretchedExp { s: 0.5 },
            x1_min: 1.0,
            x1_max: f64::INFINITY,
        };
        let t = SetDescriptor::Truncate {
            inner: Box::new(rb),
            radius: 40.0,
        };
        let c = discretize(&t, 4).unwrap();
        let mut rings = 0;
        let mut rects = 0;
        for cell in c.cells() {
            match cell {
                CellKind::Ring { .. } => rings += 1,
                CellKind::Rect { .. } => rects += 1,
                _ => {}
            }
        }
        assert!(rings > 0 && rects > 0, "rings={rings} rects={rects}");
        c.validate().unwrap();
    }
}
