//! Shared numeric utilities: stable norms, power evaluation, Gauss–Legendre
//! quadrature, Halton low-discrepancy points, and the cell self-interaction
//! integrals used by the kernel diagonal rules.

use alloc::vec;
use alloc::vec::Vec;

/// `x^y` with fast paths for the exponents that dominate kernel assembly
/// (`α−n = −1` is the Newtonian case in ℝ³).
#[inline]
pub fn powr(x: f64, y: f64) -> f64 {
    if y == -1.0 {
        1.0 / x
    } else if y == -2.0 {
        1.0 / (x * x)
    } else if y == 1.0 {
        x
    } else {
        libm::pow(x, y)
    }
}

/// Euclidean distance between two points given as coordinate slices.
///
/// Plain sqrt-of-squares in the normal range; rescaled (hypot-style) when
/// components are extreme enough to overflow or underflow when squared.
#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut maxc = 0.0f64;
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        let ad = d.abs();
        if ad > maxc {
            maxc = ad;
        }
        s += d * d;
    }
    if maxc > 1e-140 && maxc < 1e140 {
        return libm::sqrt(s);
    }
    if maxc == 0.0 {
        return 0.0;
    }
    let mut s2 = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y) / maxc;
        s2 += d * d;
    }
    maxc * libm::sqrt(s2)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    let zero = [0.0f64; 8];
    dist(a, &zero[..a.len()])
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Integral of `f` over `[a, b]` with an `n`-point Gauss–Legendre rule.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let m = 0.5 * (a + b);
    let mut s = 0.0;
    for i in 0..n {
        s += w[i] * f(m + c * x[i]);
    }
    c * s
}

/// Radical-inverse Halton value for `index` in the given prime base.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Deterministic low-discrepancy points filling the spherical shell
/// `radius ∈ [r_lo, r_hi]` around `center` (dimension 2 or 3).
pub fn halton_shell(count: usize, center: &[f64], r_lo: f64, r_hi: f64) -> Vec<Vec<f64>> {
    let dim = center.len();
    let mut pts = Vec::with_capacity(count);
    for i in 0..count {
        let idx = i as u64 + 1;
        let u = halton(idx, 2);
        let v = halton(idx, 3);
        let w = halton(idx, 5);
        let r = r_lo + (r_hi - r_lo) * u;
        let mut p = Vec::with_capacity(dim);
        if dim == 2 {
            let th = 2.0 * core::f64::consts::PI * v;
            p.push(center[0] + r * libm::cos(th));
            p.push(center[1] + r * libm::sin(th));
        } else {
            let z = 2.0 * v - 1.0;
            let th = 2.0 * core::f64::consts::PI * w;
            let rxy = libm::sqrt((1.0 - z * z).max(0.0));
            p.push(center[0] + r * rxy * libm::cos(th));
            p.push(center[1] + r * rxy * libm::sin(th));
            p.push(center[2] + r * z);
        }
        pts.push(p);
    }
    pts
}

// ---------------------------------------------------------------------------
// Cell self-interaction integrals (kernel diagonal rules).
// All means are of r^{-s} with s = n - α ∈ (0, n).
// ---------------------------------------------------------------------------

/// Mean of `|X−Y|^{−s}` for X, Y uniform in the unit d-ball, d ∈ {1,2,3}.
///
/// Uses the chord-length density `f_d(r)` on `[0,2]`; the substitution
/// `r = 2u^{2/(d−s)}` removes the integrable endpoint singularity.
/// Requires `s < d`.
pub fn unit_ball_mean_pow(d: usize, s: f64) -> f64 {
    assert!(s < d as f64, "self-interaction diverges for s >= d");
    let gamma = 2.0 / (d as f64 - s);
    let f_d = |r: f64| -> f64 {
        match d {
            1 => (2.0 - r) / 2.0,
            2 => {
                let half = r / 2.0;
                2.0 * r * (2.0 / core::f64::consts::PI)
                    * (libm::acos(half) - half * libm::sqrt((1.0 - half * half).max(0.0)))
            }
            3 => 3.0 * r * r - 2.25 * r * r * r + 0.1875 * r * r * r * r * r,
            _ => unreachable!(),
        }
    };
    integrate(
        |u| {
            let r = 2.0 * libm::pow(u, gamma);
            let dr = 2.0 * gamma * libm::pow(u, gamma - 1.0);
            powr(r, -s) * f_d(r) * dr
        },
        0.0,
        1.0,
        192,
    )
}

/// `E[exp(−t²u²)]` for `u` triangular on `[−w, w]` (difference of two
/// uniforms on a width-`w` interval).
fn tri_factor(w: f64, t: f64) -> f64 {
    let a = w * t;
    if a < 1e-6 {
        return 1.0 - a * a / 6.0;
    }
    libm::sqrt(core::f64::consts::PI) * libm::erf(a) / a - (1.0 - libm::exp(-a * a)) / (a * a)
}

/// Mean of `|X−Y|^{−s}` for X, Y uniform on an `a × b` rectangle, `s ∈ (0,2)`.
///
/// Separable representation: `r^{−s} = (2/Γ(s/2)) ∫ t^{s−1} e^{−r²t²} dt`.
pub fn rect_mean_pow(a: f64, b: f64, s: f64) -> f64 {
    assert!(s > 0.0 && s < 2.0);
    let scale = 2.0 / libm::tgamma(s / 2.0);
    // t = u/(1-u) maps (0,1) -> (0,inf)
    scale
        * integrate(
            |u| {
                let t = u / (1.0 - u);
                let jac = 1.0 / ((1.0 - u) * (1.0 - u));
                libm::pow(t, s - 1.0) * tri_factor(a, t) * tri_factor(b, t) * jac
            },
            0.0,
            1.0,
            384,
        )
}

/// Complete elliptic integral K(k) from the complementary modulus k',
/// by the arithmetic-geometric mean. Cancellation-free for k → 1.
fn ellip_k_from_comp(kp: f64) -> f64 {
    let mut a = 1.0f64;
    let mut b = kp;
    for _ in 0..60 {
        let an = 0.5 * (a + b);
        let bn = libm::sqrt(a * b);
        if (a - b).abs() < 1e-16 * a {
            a = an;
            break;
        }
        a = an;
        b = bn;
    }
    core::f64::consts::PI / (2.0 * a)
}

/// Angular mean of `(w² + 4a² sin²(θ/2))^{−s/2}` over θ ∈ [0, 2π):
/// the mean interaction of two coaxial radius-`a` rings at axial
/// separation `w`. Requires `w > 0` or `s < 1`.
pub fn ring_ring_mean_pow(w: f64, a: f64, s: f64) -> f64 {
    if a < 1e-12 * w.max(1e-300) {
        return powr(w, -s);
    }
    if s == 1.0 {
        // closed form via AGM
        let hyp = libm::sqrt(w * w + 4.0 * a * a);
        let kp = w / hyp;
        return 2.0 / core::f64::consts::PI * ellip_k_from_comp(kp) / hyp;
    }
    let f = |th: f64| -> f64 {
        let sh = 2.0 * a * libm::sin(0.5 * th);
        powr(libm::sqrt(w * w + sh * sh), -s)
    };
    // panel split resolving the near-origin peak when w << a
    let c = (w / a).clamp(1e-8, 0.5 * core::f64::consts::PI);
    let pi = core::f64::consts::PI;
    let i1 = integrate(f, 0.0, c, 64);
    let i2 = integrate(f, c, (8.0 * c).min(pi), 64);
    let i3 = if 8.0 * c < pi {
        integrate(f, 8.0 * c, pi, 64)
    } else {
        0.0
    };
    (i1 + i2 + i3) / pi
}

/// Mean of `|X−Y|^{−s}` for X, Y uniform on a cylindrical shell of radius
/// `a` and axial length `len` (a full ring-band cell). Requires `s < 2`.
///
/// The axial integral runs logarithmically from `w = len` down to
/// `w ≈ min(a, len)·e^{−20}`, so thin-wire cells with `a` many orders of
/// magnitude below `len` keep their full `ln(len/a)` contribution.
pub fn ring_shell_mean_pow(a: f64, len: f64, s: f64) -> f64 {
    assert!(s > 0.0 && s < 2.0);
    // axial separation density: (2/len²)(len − w) on [0, len];
    // substitute w = len·e^{−v}
    let v_max = libm::log(len / a.min(len)) + 20.0;
    2.0 * integrate(
        |v| {
            let w = len * libm::exp(-v);
            (len - w) / (len * len) * ring_ring_mean_pow(w, a, s) * w
        },
        0.0,
        v_max,
        256,
    )
}
