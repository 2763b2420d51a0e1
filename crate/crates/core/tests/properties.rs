//! Property and randomized-instance tests: energy-space inequalities,
//! Kelvin identities, balayage principles, solver certificates against
//! brute-force grids, and positive definiteness on small clouds.

use std::sync::Arc;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use riesz_core::geometry::{
    discretize, kelvin_transform_measure, CellKind, DiscreteMeasure, PointCloud, SetDescriptor,
};
use riesz_core::kernel::{
    assemble_kernel, cross_energy, energy, mutual_energy, potential_of_measure_at, KernelContext,
};
use riesz_core::potential_ops::{balayage, harmonic_measure, probe_points};
use riesz_core::solvers::{
    kkt_residual, minimize_cone, minimize_simplex, smallest_eigenvalue, ConstraintSet, QpProblem,
};

/// Deterministic random cloud with a minimum node separation.
fn random_cloud(rng: &mut StdRng, n: usize, center: [f64; 3], half: f64) -> Arc<PointCloud> {
    let mut nodes: Vec<[f64; 3]> = Vec::new();
    while nodes.len() < n {
        let p = [
            center[0] + rng.gen_range(-half..half),
            center[1] + rng.gen_range(-half..half),
            center[2] + rng.gen_range(-half..half),
        ];
        let ok = nodes.iter().all(|q| {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            d2 > (0.3 * half / (n as f64).cbrt()).powi(2)
        });
        if ok {
            nodes.push(p);
        }
    }
    let flat: Vec<f64> = nodes.iter().flatten().copied().collect();
    let spacing = half / (n as f64).cbrt();
    Arc::new(
        PointCloud::new(
            3,
            3,
            flat,
            vec![1.0; n],
            vec![0.3 * spacing; n],
            vec![CellKind::Iso { d: 3 }; n],
        )
        .unwrap(),
    )
}

fn fixed_ctx(seed: u64, n: usize) -> KernelContext {
    let mut rng = StdRng::seed_from_u64(seed);
    let cloud = random_cloud(&mut rng, n, [0.0; 3], 1.0);
    assemble_kernel(cloud, 2.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Cauchy–Schwarz in the energy inner product.
    #[test]
    fn cauchy_schwarz(masses_a in proptest::collection::vec(0.0f64..1.0, 12),
                      masses_b in proptest::collection::vec(0.0f64..1.0, 12)) {
        let ctx = fixed_ctx(7, 12);
        let mu = DiscreteMeasure::new(ctx.cloud().clone(), masses_a).unwrap();
        let nu = DiscreteMeasure::new(ctx.cloud().clone(), masses_b).unwrap();
        let iab = mutual_energy(&ctx, &mu, &nu).unwrap();
        let ia = energy(&ctx, &mu).unwrap();
        let ib = energy(&ctx, &nu).unwrap();
        prop_assert!(iab * iab <= ia * ib * (1.0 + 1e-12) + 1e-300);
    }

    /// Triangle inequality for the energy norm of signed differences.
    #[test]
    fn energy_norm_triangle(a in proptest::collection::vec(0.0f64..1.0, 10),
                            b in proptest::collection::vec(0.0f64..1.0, 10),
                            c in proptest::collection::vec(0.0f64..1.0, 10)) {
        let ctx = fixed_ctx(11, 10);
        let norm_diff = |x: &[f64], y: &[f64]| {
            let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
            let kd = ctx.matvec(&d);
            let mut s = 0.0;
            for i in 0..d.len() { s += d[i] * kd[i]; }
            s.max(0.0).sqrt()
        };
        let ab = norm_diff(&a, &b);
        let ac = norm_diff(&a, &c);
        let cb = norm_diff(&c, &b);
        prop_assert!(ab <= ac + cb + 1e-10);
    }

    /// Kelvin transform mass identity: total mass equals the potential of
    /// the original measure at the inversion center.
    #[test]
    fn kelvin_mass_identity(masses in proptest::collection::vec(0.0f64..1.0, 12),
                            cx in 2.5f64..4.0, cy in -1.0f64..1.0) {
        let ctx = fixed_ctx(13, 12);
        let mu = DiscreteMeasure::new(ctx.cloud().clone(), masses).unwrap();
        let center = [cx, cy, 0.0];
        let t = kelvin_transform_measure(&mu, &center, 2.0).unwrap();
        let u = potential_of_measure_at(2.0, &mu, &center).unwrap();
        prop_assert!((t.total_mass() - u).abs() <= 1e-8 * u.max(1e-300));
    }

    /// Double Kelvin transform restores the masses.
    #[test]
    fn kelvin_involution(masses in proptest::collection::vec(0.0f64..1.0, 10)) {
        let ctx = fixed_ctx(17, 10);
        let mu = DiscreteMeasure::new(ctx.cloud().clone(), masses).unwrap();
        let center = [3.0, 0.5, -0.25];
        let t = kelvin_transform_measure(&mu, &center, 2.0).unwrap();
        let tt = kelvin_transform_measure(&t, &center, 2.0).unwrap();
        for i in 0..mu.cloud().len() {
            prop_assert!((tt.masses()[i] - mu.masses()[i]).abs()
                <= 1e-10 * mu.masses()[i].max(1e-300));
        }
    }
}

/// Balayage principles on randomized source/target instances: mass
/// principle, potential domination at probes, and the symmetry identity.
#[test]
fn balayage_randomized_principles() {
    let mut rng = StdRng::seed_from_u64(40);
    for inst in 0..8 {
        let target = random_cloud(&mut rng, 60, [0.0; 3], 1.0);
        let source_cloud = random_cloud(&mut rng, 20, [4.0, 0.0, 0.0], 0.6);
        let ctx = assemble_kernel(target.clone(), 2.0).unwrap();
        let masses: Vec<f64> = (0..20).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sigma = DiscreteMeasure::new(source_cloud.clone(), masses).unwrap();
        let res = balayage(&ctx, &sigma).unwrap();
        assert!(res.converged, "instance {inst}");
        assert!(res.mass_ratio <= 1.0 + 1e-8, "instance {inst}: {}", res.mass_ratio);
        // domination at probes outside both supports
        for p in probe_points(3, 5.0, 100, &[]) {
            let us = potential_of_measure_at(2.0, &res.swept, &p).unwrap();
            let uo = potential_of_measure_at(2.0, &sigma, &p).unwrap();
            assert!(us <= uo + 1e-8, "instance {inst}: {us} > {uo}");
        }
        // symmetry: I(zeta^A, sigma) = I(zeta, sigma^A)
        let zeta_cloud = random_cloud(&mut rng, 15, [-3.5, 1.0, 0.0], 0.5);
        let zmasses: Vec<f64> = (0..15).map(|_| rng.gen_range(0.1..1.0)).collect();
        let zeta = DiscreteMeasure::new(zeta_cloud, zmasses).unwrap();
        let zswept = balayage(&ctx, &zeta).unwrap();
        let lhs = cross_energy(2.0, &zswept.swept, &sigma).unwrap();
        let rhs = cross_energy(2.0, &zeta, &res.swept).unwrap();
        assert!(
            (lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1e-300),
            "instance {inst}: {lhs} vs {rhs}"
        );
    }
}

/// Monotone convergence of balayage potentials under nested truncations.
#[test]
fn balayage_monotone_in_truncation() {
    let hc = SetDescriptor::HalfCylinder {
        radius: 1.0,
        x1_min: 1.0,
        x1_max: f64::INFINITY,
    };
    let z = [0.0, 0.0, 3.0];
    let probes = probe_points(3, 8.0, 20, &[]);
    let mut prev: Option<Vec<f64>> = None;
    for radius in [6.0, 12.0, 24.0] {
        let t = SetDescriptor::Truncate {
            inner: Box::new(hc.clone()),
            radius,
        };
        let cloud = Arc::new(discretize(&t, 3).unwrap());
        let ctx = assemble_kernel(cloud, 2.0).unwrap();
        let res = harmonic_measure(&ctx, &z).unwrap();
        let us: Vec<f64> = probes
            .iter()
            .map(|p| potential_of_measure_at(2.0, &res.swept, p).unwrap())
            .collect();
        if let Some(prev_us) = &prev {
            for (a, b) in prev_us.iter().zip(&us) {
                assert!(b + 1e-6 >= *a, "potential decreased under refinement: {a} -> {b}");
            }
        }
        prev = Some(us);
    }
}

/// Brute-force grid oracles: the solver objective is at least as good as
/// every feasible grid point (step 0.02), and the reported certificates
/// recompute exactly.
#[test]
fn brute_force_grid_equivalence() {
    let mut rng = StdRng::seed_from_u64(99);
    for &n in &[1usize, 2, 3, 4, 5, 6] {
        let ctx = fixed_ctx(100 + n as u64, n);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.5)).collect();

        // simplex
        let sol = minimize_simplex(&QpProblem::simplex(&ctx, b.clone())).unwrap();
        assert!(sol.converged);
        let (resid, mult) = kkt_residual(&ctx, &b, sol.masses.masses(), ConstraintSet::Simplex, 1e-12);
        assert!((resid - sol.kkt_residual).abs() <= 1e-12);
        assert!((mult - sol.multiplier).abs() <= 1e-12);
        let gmin = simplex_grid_min(&ctx, &b, 50);
        assert!(sol.objective <= gmin + 1e-6, "n={n}: {} vs {gmin}", sol.objective);

        // cone (masses land below ~0.5 for these instances)
        let solc = minimize_cone(&QpProblem::cone(&ctx, b.clone())).unwrap();
        assert!(solc.converged);
        let max_mass = solc
            .masses
            .masses()
            .iter()
            .fold(0.0f64, |a, &m| a.max(m));
        let box_hi = ((1.6 * max_mass / 0.02).ceil() as usize + 1).min(26);
        if (box_hi + 1).pow(n as u32) <= 40_000_000 {
            let gminc = cone_grid_min(&ctx, &b, box_hi);
            assert!(solc.objective <= gminc + 1e-6, "n={n}: {} vs {gminc}", solc.objective);
        }
    }
}

fn obj(ctx: &KernelContext, b: &[f64], x: &[f64]) -> f64 {
    let kx = ctx.matvec(x);
    let mut s = 0.0;
    for i in 0..x.len() {
        s += x[i] * kx[i] - 2.0 * b[i] * x[i];
    }
    s
}

/// Minimum objective over the simplex grid with `steps` subdivisions
/// (compositions of `steps` into n parts).
fn simplex_grid_min(ctx: &KernelContext, b: &[f64], steps: usize) -> f64 {
    let n = b.len();
    let mut best = f64::INFINITY;
    let mut counts = vec![0usize; n];
    fn rec(
        ctx: &KernelContext,
        b: &[f64],
        counts: &mut Vec<usize>,
        idx: usize,
        remaining: usize,
        steps: usize,
        best: &mut f64,
    ) {
        let n = b.len();
        if idx == n - 1 {
            counts[idx] = remaining;
            let x: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
            let f = obj(ctx, b, &x);
            if f < *best {
                *best = f;
            }
            return;
        }
        for c in 0..=remaining {
            counts[idx] = c;
            rec(ctx, b, counts, idx + 1, remaining - c, steps, best);
        }
    }
    rec(ctx, b, &mut counts, 0, steps, steps, &mut best);
    best
}

/// Minimum objective over the cone grid {0, 0.02, ..., 0.02·box_hi}^n.
fn cone_grid_min(ctx: &KernelContext, b: &[f64], box_hi: usize) -> f64 {
    let n = b.len();
    let total = (box_hi + 1).pow(n as u32);
    let mut best = f64::INFINITY;
    let mut x = vec![0.0; n];
    for mut code in 0..total {
        for slot in x.iter_mut() {
            *slot = (code % (box_hi + 1)) as f64 * 0.02;
            code /= box_hi + 1;
        }
        let f = obj(ctx, b, &x);
        if f < best {
            best = f;
        }
    }
    best
}

/// Kernel matrices of discretized sets stay positive definite (node
/// counts ≤ 500).
#[test]
fn kernel_positive_definite_on_discretizations() {
    let cases: Vec<(SetDescriptor, u32)> = vec![
        (
            SetDescriptor::Ball {
                center: vec![0.0, 0.0, 0.0],
                radius: 1.0,
            },
            4,
        ),
        (
            SetDescriptor::Sphere {
                center: vec![0.0, 0.0, 0.0],
                radius: 1.0,
            },
            14,
        ),
        (
            SetDescriptor::HalfCylinder {
                radius: 0.8,
                x1_min: 1.0,
                x1_max: 9.0,
            },
            2,
        ),
        (
            SetDescriptor::RotationBody {
                profile: riesz_core::geometry::Profile::StretchedExp { s: 0.5 },
                x1_min: 1.0,
                x1_max: 30.0,
            },
            2,
        ),
    ];
    for (desc, res) in cases {
        let cloud = Arc::new(discretize(&desc, res).unwrap());
        assert!(cloud.len() <= 500, "case {desc:?}: {} nodes", cloud.len());
        for alpha in [2.0, 1.5] {
            let ctx = assemble_kernel(cloud.clone(), alpha).unwrap();
            let lambda = smallest_eigenvalue(&ctx).expect("cholesky failed");
            assert!(lambda > 0.0, "{desc:?} alpha={alpha}: λmin = {lambda}");
        }
    }
}

/// Determinism across repeated runs, including discretization.
#[test]
fn end_to_end_determinism() {
    let desc = SetDescriptor::Ball {
        center: vec![0.0, 0.0, 0.0],
        radius: 1.0,
    };
    let run = || {
        let cloud = Arc::new(discretize(&desc, 5).unwrap());
        let ctx = assemble_kernel(cloud, 2.0).unwrap();
        let res = harmonic_measure(&ctx, &[2.0, 0.0, 0.0]).unwrap();
        (
            res.swept.total_mass().to_bits(),
            res.kkt_residual.to_bits(),
            res.swept.masses().to_vec(),
        )
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}
