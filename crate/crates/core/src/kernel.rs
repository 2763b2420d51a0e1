//! Dense Riesz kernel matrices `κ_α(x,y) = |x−y|^{α−n}`, potentials, and
//! energies of discrete measures.
//!
//! Off-diagonal entries are exact kernel evaluations between nodes. The
//! diagonal carries the mean self-interaction of each node's quadrature
//! cell, so that the discrete energy is a consistent approximation of the
//! continuous one; the applied rule is recorded in [`DiagonalRule`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{CellKind, DiscreteMeasure, PointCloud};
use crate::math;
use crate::{Error, Result};

/// Default refusal cap for dense assembly.
pub const DEFAULT_NODE_CAP: usize = 20_000;

/// Documentation of how the matrix diagonal was regularized.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalRule {
    /// Scheme tag: "cell-mean" (mean self-interaction of the declared cell).
    pub scheme: &'static str,
    /// Mean self-interaction constants of unit-radius isotropic d-cells
    /// actually used, as (d, c_d).
    pub iso_constants: Vec<(u8, f64)>,
    /// Number of ring-shell (filament) cells priced by elliptic quadrature.
    pub ring_cells: usize,
    /// Number of rectangular patch cells priced by separable quadrature.
    pub rect_cells: usize,
}

/// Assembled symmetric kernel matrix for one cloud at one exponent.
#[derive(Debug, Clone)]
pub struct KernelContext {
    alpha: f64,
    cloud: Arc<PointCloud>,
    matrix: Vec<f64>,
    diagonal_rule: DiagonalRule,
}

/// Assembles the dense kernel matrix with the default node cap.
pub fn assemble_kernel(cloud: Arc<PointCloud>, alpha: f64) -> Result<KernelContext> {
    assemble_kernel_capped(cloud, alpha, DEFAULT_NODE_CAP)
}

/// Assembles the dense kernel matrix, refusing clouds above `node_cap`.
pub fn assemble_kernel_capped(
    cloud: Arc<PointCloud>,
    alpha: f64,
    node_cap: usize,
) -> Result<KernelContext> {
    let n = cloud.dim() as f64;
    if !(alpha > 0.0 && alpha <= 2.0 && alpha < n) {
        return Err(Error::InvalidParameter(String::from(
            "alpha must satisfy 0 < alpha <= 2 and alpha < n",
        )));
    }
    let count = cloud.len();
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    if count > node_cap {
        return Err(Error::TooManyNodes {
            nodes: count,
            cap: node_cap,
        });
    }
    let s = n - alpha; // kernel is r^{-s}
    let exp = alpha - n;
    let mut matrix = vec![0.0; count * count];
    for i in 0..count {
        let xi = cloud.node(i);
        for j in (i + 1)..count {
            let d = math::dist(xi, cloud.node(j));
            if d == 0.0 {
                return Err(Error::InvalidParameter(String::from(
                    "coincident nodes in cloud",
                )));
            }
            let v = math::powr(d, exp);
            matrix[i * count + j] = v;
            matrix[j * count + i] = v;
        }
    }

    // diagonal: mean self-interaction of each cell
    let mut iso_cache: BTreeMap<u8, f64> = BTreeMap::new();
    let mut shape_cache: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    let mut ring_cells = 0usize;
    let mut rect_cells = 0usize;
    for i in 0..count {
        let cr = cloud.cell_radius()[i];
        let v = match &cloud.cells()[i] {
            CellKind::Iso { d } => {
                if s >= *d as f64 {
                    return Err(Error::InvalidParameter(String::from(
                        "cell dimension too small for the kernel singularity (n - alpha >= d)",
                    )));
                }
                let c_d = *iso_cache
                    .entry(*d)
                    .or_insert_with(|| math::unit_ball_mean_pow(*d as usize, s));
                c_d * math::powr(cr, exp)
            }
            CellKind::Rect { a, b } => {
                if s >= 2.0 {
                    return Err(Error::InvalidParameter(String::from(
                        "rectangular cells require n - alpha < 2",
                    )));
                }
                rect_cells += 1;
                *shape_cache
                    .entry((a.to_bits(), b.to_bits()))
                    .or_insert_with(|| math::rect_mean_pow(*a, *b, s))
            }
            CellKind::Ring { ring_radius } => {
                if s >= 2.0 {
                    return Err(Error::InvalidParameter(String::from(
                        "ring cells require n - alpha < 2",
                    )));
                }
                ring_cells += 1;
                *shape_cache
                    .entry((ring_radius.to_bits(), cr.to_bits()))
                    .or_insert_with(|| math::ring_shell_mean_pow(*ring_radius, 2.0 * cr, s))
            }
        };
        matrix[i * count + i] = v;
    }

    let diagonal_rule = DiagonalRule {
        scheme: "cell-mean",
        iso_constants: iso_cache.into_iter().collect(),
        ring_cells,
        rect_cells,
    };
    Ok(KernelContext {
        alpha,
        cloud,
        matrix,
        diagonal_rule,
    })
}

impl KernelContext {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.cloud.dim()
    }

    pub fn cloud(&self) -> &Arc<PointCloud> {
        &self.cloud
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn diagonal_rule(&self) -> &DiagonalRule {
        &self.diagonal_rule
    }

    /// Row-major dense matrix storage.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.cloud.len() + j]
    }

    /// `K v` (dense, single-threaded, deterministic).
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.cloud.len();
        debug_assert_eq!(v.len(), n);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let row = &self.matrix[i * n..(i + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * v[j];
            }
            out[i] = s;
        }
        out
    }

    /// Checks that a measure lives on this context's cloud.
    fn check_measure(&self, m: &DiscreteMeasure) -> Result<()> {
        if Arc::ptr_eq(m.cloud(), &self.cloud) {
            Ok(())
        } else {
            Err(Error::CloudMismatch)
        }
    }
}

/// Potential `U^μ(p) = Σ_i κ_α(p, x_i) m_i` at each evaluation point.
/// Points that coincide exactly with a node use the diagonal rule there.
pub fn potential_at(
    ctx: &KernelContext,
    measure: &DiscreteMeasure,
    eval_points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    ctx.check_measure(measure)?;
    let n = ctx.len();
    let exp = ctx.alpha - ctx.cloud.dim() as f64;
    let mut out = Vec::with_capacity(eval_points.len());
    for p in eval_points {
        if p.len() != ctx.cloud.dim() {
            return Err(Error::InvalidParameter(String::from(
                "evaluation point dimension mismatch",
            )));
        }
        if let Some(i) = ctx.cloud.find_node(p) {
            let row = &ctx.matrix[i * n..(i + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * measure.masses()[j];
            }
            out.push(s);
        } else {
            let mut s = 0.0;
            for j in 0..n {
                let d = math::dist(p, ctx.cloud.node(j));
                s += measure.masses()[j] * math::powr(d, exp);
            }
            out.push(s);
        }
    }
    Ok(out)
}

/// Potential of a measure at a single point with the exact kernel (no
/// diagonal smoothing); the point must not carry a node of the measure's
/// cloud with positive mass.
pub fn potential_of_measure_at(alpha: f64, measure: &DiscreteMeasure, p: &[f64]) -> Result<f64> {
    let cloud = measure.cloud();
    let exp = alpha - cloud.dim() as f64;
    let mut s = 0.0;
    for j in 0..cloud.len() {
        let d = math::dist(p, cloud.node(j));
        if d == 0.0 {
            if measure.masses()[j] > 0.0 {
                return Err(Error::PointOnCloud);
            }
            continue;
        }
        s += measure.masses()[j] * math::powr(d, exp);
    }
    Ok(s)
}

/// Energy `I(μ) = μᵀ K μ`.
pub fn energy(ctx: &KernelContext, measure: &DiscreteMeasure) -> Result<f64> {
    mutual_energy(ctx, measure, measure)
}

/// Mutual energy `I(μ, ν) = μᵀ K ν` for measures on the same cloud.
pub fn mutual_energy(
    ctx: &KernelContext,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<f64> {
    ctx.check_measure(mu)?;
    ctx.check_measure(nu)?;
    let kv = ctx.matvec(nu.masses());
    Ok(dot(mu.masses(), &kv))
}

/// Energy seminorm of a signed difference `‖μ−ν‖_K = sqrt((μ−ν)ᵀK(μ−ν))`.
pub fn energy_norm_diff(
    ctx: &KernelContext,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<f64> {
    ctx.check_measure(mu)?;
    ctx.check_measure(nu)?;
    let d: Vec<f64> = mu
        .masses()
        .iter()
        .zip(nu.masses())
        .map(|(a, b)| a - b)
        .collect();
    let kd = ctx.matvec(&d);
    Ok(libm::sqrt(dot(&d, &kd).max(0.0)))
}

/// Mutual energy between measures on *different* clouds, with the exact
/// kernel for every pair. Rejects coincident node pairs that both carry
/// mass.
pub fn cross_energy(alpha: f64, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let (ca, cb) = (mu.cloud(), nu.cloud());
    if ca.dim() != cb.dim() {
        return Err(Error::InvalidParameter(String::from(
            "cross energy requires equal ambient dimension",
        )));
    }
    let exp = alpha - ca.dim() as f64;
    let mut s = 0.0;
    for i in 0..ca.len() {
        let mi = mu.masses()[i];
        if mi == 0.0 {
            continue;
        }
        let xi = ca.node(i);
        for j in 0..cb.len() {
            let nj = nu.masses()[j];
            if nj == 0.0 {
                continue;
            }
            let d = math::dist(xi, cb.node(j));
            if d == 0.0 {
                return Err(Error::PointOnCloud);
            }
            s += mi * nj * math::powr(d, exp);
        }
    }
    Ok(s)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellKind;

    fn tiny_cloud(nodes: &[[f64; 3]], cr: f64) -> Arc<PointCloud> {
        let flat: Vec<f64> = nodes.iter().flatten().copied().collect();
        let n = nodes.len();
        Arc::new(
            PointCloud::new(
                3,
                3,
                flat,
                vec![1.0; n],
                vec![cr; n],
                vec![CellKind::Iso { d: 3 }; n],
            )
            .unwrap(),
        )
    }

    #[test]
    fn two_nodes_at_distance_two() {
        let c = tiny_cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]], 0.1);
        let k = assemble_kernel(c, 2.0).unwrap();
        assert_eq!(k.entry(0, 1), 0.5);
        assert_eq!(k.entry(1, 0), 0.5);
    }

    #[test]
    fn newtonian_ball_cell_diagonal() {
        // 3-dimensional cell with cell_radius rho: K[0][0] = (6/5) / rho
        let c = tiny_cloud(&[[0.0, 0.0, 0.0]], 0.5);
        let k = assemble_kernel(c, 2.0).unwrap();
        assert!((k.entry(0, 0) - 2.4).abs() < 1e-9);
    }

    #[test]
    fn symmetry_is_exact() {
        let c = tiny_cloud(
            &[
                [0.0, 0.0, 0.0],
                [1.0, 0.25, -0.5],
                [-0.75, 2.0, 0.125],
                [0.5, -1.5, 3.0],
            ],
            0.2,
        );
        let k = assemble_kernel(c, 1.5).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(k.entry(i, j), k.entry(j, i));
            }
        }
    }

    #[test]
    fn alpha_domain_enforced() {
        let c = tiny_cloud(&[[0.0, 0.0, 0.0]], 0.1);
        assert!(assemble_kernel(c.clone(), 2.5).is_err());
        assert!(assemble_kernel(c.clone(), 0.0).is_err());
        assert!(assemble_kernel(c, 3.0).is_err());
    }

    #[test]
    fn point_kernel_potential() {
        let c = tiny_cloud(&[[0.0, 0.0, 0.0]], 0.1);
        let k = assemble_kernel(c.clone(), 2.0).unwrap();
        let mu = DiscreteMeasure::new(c, vec![1.0]).unwrap();
        let u = potential_at(&k, &mu, &[vec![2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(u[0], 0.5);
        let zero = DiscreteMeasure::zero(mu.cloud().clone());
        let uz = potential_at(&k, &zero, &[vec![2.0, 0.0, 0.0], vec![0.5, 0.5, 0.5]]).unwrap();
        assert!(uz.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energies_of_point_masses() {
        let c = tiny_cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 0.1);
        let k = assemble_kernel(c.clone(), 2.0).unwrap();
        // single unit mass: I = K[0][0]
        let mu = DiscreteMeasure::new(c.clone(), vec![1.0, 0.0]).unwrap();
        assert!((energy(&k, &mu).unwrap() - k.entry(0, 0)).abs() < 1e-14);
        // disjoint supports at distance 1, masses 2 and 3: I(mu,nu) = 6
        let a = DiscreteMeasure::new(c.clone(), vec![2.0, 0.0]).unwrap();
        let b = DiscreteMeasure::new(c, vec![0.0, 3.0]).unwrap();
        assert!((mutual_energy(&k, &a, &b).unwrap() - 6.0).abs() < 1e-14);
        assert_eq!(
            mutual_energy(&k, &a, &b).unwrap(),
            mutual_energy(&k, &b, &a).unwrap()
        );
    }

    #[test]
    fn mismatched_clouds_rejected() {
        let c1 = tiny_cloud(&[[0.0, 0.0, 0.0]], 0.1);
        let c2 = tiny_cloud(&[[1.0, 0.0, 0.0]], 0.1);
        let k = assemble_kernel(c1, 2.0).unwrap();
        let nu = DiscreteMeasure::new(c2, vec![1.0]).unwrap();
        assert!(matches!(energy(&k, &nu), Err(Error::CloudMismatch)));
    }

    #[test]
    fn node_cap_refusal() {
        let c = tiny_cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 0.1);
        assert!(matches!(
            assemble_kernel_capped(c, 2.0, 1),
            Err(Error::TooManyNodes { nodes: 2, cap: 1 })
        ));
    }

    #[test]
    fn potential_linearity() {
        let c = tiny_cloud(
            &[[0.0, 0.0, 0.0], [1.0, 0.5, 0.0], [0.0, -1.0, 2.0]],
            0.15,
        );
        let k = assemble_kernel(c.clone(), 2.0).unwrap();
        let mu = DiscreteMeasure::new(c.clone(), vec![1.0, 2.0, 0.5]).unwrap();
        let nu = DiscreteMeasure::new(c.clone(), vec![0.25, 0.0, 3.0]).unwrap();
        let combo = DiscreteMeasure::new(
            c,
            mu.masses()
                .iter()
                .zip(nu.masses())
                .map(|(a, b)| 2.0 * a + 0.5 * b)
                .collect(),
        )
        .unwrap();
        let pts = vec![vec![3.0, 1.0, -2.0], vec![0.3, 0.3, 0.3]];
        let um = potential_at(&k, &mu, &pts).unwrap();
        let un = potential_at(&k, &nu, &pts).unwrap();
        let uc = potential_at(&k, &combo, &pts).unwrap();
        for i in 0..pts.len() {
            assert!((uc[i] - (2.0 * um[i] + 0.5 * un[i])).abs() < 1e-12 * uc[i].abs().max(1.0));
        }
    }
}
