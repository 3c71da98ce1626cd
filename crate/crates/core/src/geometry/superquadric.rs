//! Superquadric primitives with linear tapering along the canonical z axis.
//!
//! The surface is
//!
//! ```text
//! r(η, ω) = (α_x c(η)^ε1 c(ω)^ε2,  α_y c(η)^ε1 s(ω)^ε2,  α_z s(η)^ε1)
//! ```
//!
//! with signed powers `sign(t)|t|^e`, after which x and y are scaled by
//! `1 + k_x z/α_z` and `1 + k_y z/α_z`. The inside-outside function `F`
//! undoes the taper before evaluating the usual implicit form, so `F = 1`
//! exactly on the tapered surface.
//!
//! Every scalar field comes in two flavours: a plain evaluation and a
//! `*_grad` variant returning the gradient with respect to the query point
//! and to the seven shape parameters (see [`SqParams`]).

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

pub const EPS_MIN: f64 = 0.1;
pub const EPS_MAX: f64 = 1.9;
pub const TAPER_LIMIT: f64 = 0.9;
/// Floor applied to every scale component by [`Superquadric::project`].
pub const ALPHA_MIN: f64 = 0.01;

/// Flat parameter vector `[α_x, α_y, α_z, ε1, ε2, k_x, k_y]`.
pub type SqParams = [f64; 7];

pub const N_PARAMS: usize = 7;

/// Smallest taper factor used when inverting the taper. Points whose factor
/// would fall below it lie outside the primitive's z extent.
const MIN_TAPER_FACTOR: f64 = 0.1;

/// Rays used to bound the acceptance weight of [`Superquadric::sample_surface_even`].
const EVEN_PROBES: usize = 4096;
const EVEN_WEIGHT_MARGIN: f64 = 1.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Superquadric {
    pub alpha: Vec3,
    pub eps: [f64; 2],
    pub taper: [f64; 2],
}

/// `sign(t) |t|^e`.
fn spow(t: f64, e: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.signum() * t.abs().powf(e)
    }
}

/// `p ln|t|` with the `t = 0` limit taken as zero.
fn xlog(p: f64, t: f64) -> f64 {
    if t == 0.0 || p == 0.0 {
        0.0
    } else {
        p * t.abs().ln()
    }
}

impl Superquadric {
    /// Builds a primitive, rejecting non-positive scales and clamping the shape
    /// and taper parameters into their admissible ranges.
    pub fn new(alpha: Vec3, eps: [f64; 2], taper: [f64; 2]) -> Result<Self> {
        if alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid(format!("superquadric scales must be positive, got {alpha:?}")));
        }
        let mut sq = Superquadric { alpha, eps, taper };
        sq.project();
        Ok(sq)
    }

    pub fn sphere(radius: f64) -> Self {
        Superquadric {
            alpha: Vec3::repeat(radius),
            eps: [1.0, 1.0],
            taper: [0.0, 0.0],
        }
    }

    pub fn ellipsoid(alpha: Vec3) -> Self {
        Superquadric {
            alpha,
            eps: [1.0, 1.0],
            taper: [0.0, 0.0],
        }
    }

    /// Clamps parameters back into the admissible set after an update.
    pub fn project(&mut self) {
        for a in self.alpha.iter_mut() {
            *a = a.max(ALPHA_MIN);
        }
        for e in &mut self.eps {
            *e = e.clamp(EPS_MIN, EPS_MAX);
        }
        for k in &mut self.taper {
            *k = k.clamp(-TAPER_LIMIT, TAPER_LIMIT);
        }
    }

    pub fn params(&self) -> SqParams {
        [
            self.alpha.x,
            self.alpha.y,
            self.alpha.z,
            self.eps[0],
            self.eps[1],
            self.taper[0],
            self.taper[1],
        ]
    }

    /// Inverse of [`Superquadric::params`]; performs no clamping.
    pub fn from_params(p: &SqParams) -> Self {
        Superquadric {
            alpha: Vec3::new(p[0], p[1], p[2]),
            eps: [p[3], p[4]],
            taper: [p[5], p[6]],
        }
    }

    pub fn surface_point(&self, eta: f64, omega: f64) -> Vec3 {
        let [e1, e2] = self.eps;
        let ce = spow(eta.cos(), e1);
        let se = spow(eta.sin(), e1);
        let cw = spow(omega.cos(), e2);
        let sw = spow(omega.sin(), e2);
        Vec3::new(
            self.alpha.x * ce * cw * (1.0 + self.taper[0] * se),
            self.alpha.y * ce * sw * (1.0 + self.taper[1] * se),
            self.alpha.z * se,
        )
    }

    /// Surface point plus its Jacobian: `jac[k]` is `∂r/∂params[k]`.
    pub fn surface_point_jacobian(&self, eta: f64, omega: f64) -> (Vec3, [Vec3; N_PARAMS]) {
        let [e1, e2] = self.eps;
        let [kx, ky] = self.taper;
        let a = self.alpha;
        let (c_eta, s_eta) = (eta.cos(), eta.sin());
        let (c_om, s_om) = (omega.cos(), omega.sin());
        let ce = spow(c_eta, e1);
        let se = spow(s_eta, e1);
        let cw = spow(c_om, e2);
        let sw = spow(s_om, e2);
        let d_ce = xlog(ce, c_eta);
        let d_se = xlog(se, s_eta);
        let d_cw = xlog(cw, c_om);
        let d_sw = xlog(sw, s_om);
        let fx = 1.0 + kx * se;
        let fy = 1.0 + ky * se;
        let x0 = a.x * ce * cw;
        let y0 = a.y * ce * sw;
        let point = Vec3::new(x0 * fx, y0 * fy, a.z * se);

        let jac = [
            Vec3::new(ce * cw * fx, 0.0, 0.0),
            Vec3::new(0.0, ce * sw * fy, 0.0),
            Vec3::new(0.0, 0.0, se),
            Vec3::new(
                a.x * cw * (d_ce * fx + ce * kx * d_se),
                a.y * sw * (d_ce * fy + ce * ky * d_se),
                a.z * d_se,
            ),
            Vec3::new(a.x * ce * d_cw * fx, a.y * ce * d_sw * fy, 0.0),
            Vec3::new(x0 * se, 0.0, 0.0),
            Vec3::new(0.0, y0 * se, 0.0),
        ];
        (point, jac)
    }

    /// `n` surface points on a jittered (η, ω) grid.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        if n == 0 {
            return Err(Error::invalid("surface sample count must be at least 1"));
        }
        let points = sample_angles(n, rng)
            .into_iter()
            .map(|(eta, omega)| self.surface_point(eta, omega))
            .collect();
        PointCloud::new(points)
    }

    /// `n` surface points spread uniformly by area. Rays from the centre in
    /// uniform directions hit the surface at radius `r`; each hit is kept
    /// with probability proportional to `r² / |n·d|`, its area per solid
    /// angle. Plain angle sampling bunches points at sharp edges.
    pub fn sample_surface_even<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        if n == 0 {
            return Err(Error::invalid("surface sample count must be at least 1"));
        }
        let hit = |rng: &mut R| {
            let d: Vec3 = loop {
                let v = Vec3::from_fn(|_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                if v.norm() > 1e-9 {
                    break v.normalize();
                }
            };
            let p = self.ray_hit(&d);
            let (_, g, _) = self.implicit_grad(&p);
            let w = p.norm_squared() * g.norm() / g.dot(&d).abs();
            (p, if w.is_finite() { w } else { 0.0 })
        };
        let probe: Vec<(Vec3, f64)> = (0..EVEN_PROBES).map(|_| hit(rng)).collect();
        let w_max = EVEN_WEIGHT_MARGIN * probe.iter().map(|h| h.1).fold(0.0, f64::max);
        if !(w_max > 0.0) {
            return Err(Error::invalid("surface has no measurable area"));
        }
        let mut points = Vec::with_capacity(n);
        let mut probe = probe.into_iter();
        while points.len() < n {
            let (p, w) = probe.next().unwrap_or_else(|| hit(rng));
            if rng.random::<f64>() * w_max < w {
                points.push(p);
            }
        }
        PointCloud::new(points)
    }

    /// Surface point along the unit direction `d` from the origin.
    fn ray_hit(&self, d: &Vec3) -> Vec3 {
        if self.taper == [0.0, 0.0] {
            // F scales as t^(2/ε1) along a ray
            return d * self.implicit(d).powf(-0.5 * self.eps[0]);
        }
        let (mut lo, mut hi) = (0.0, 4.0 * self.alpha.norm());
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if self.implicit(&(d * mid)) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        d * (0.5 * (lo + hi))
    }

    pub fn implicit(&self, x: &Vec3) -> f64 {
        self.implicit_parts(x).value
    }

    /// Inside-outside value with gradients `(F, ∂F/∂x, ∂F/∂params)`.
    pub fn implicit_grad(&self, x: &Vec3) -> (f64, Vec3, SqParams) {
        let parts = self.implicit_parts(x);
        let (gx, gp) = parts.backward(self);
        (parts.value, gx, gp)
    }

    /// Radially normalised indicator `H = F^ε1`: 1 on the surface, below 1
    /// inside, above 1 outside.
    pub fn indicator(&self, x: &Vec3) -> f64 {
        let f = self.implicit(x);
        if f == 0.0 {
            0.0
        } else {
            f.powf(self.eps[0])
        }
    }

    pub fn indicator_grad(&self, x: &Vec3) -> (f64, Vec3, SqParams) {
        let (f, gx, mut gp) = self.implicit_grad(x);
        if f == 0.0 {
            return (0.0, Vec3::zeros(), [0.0; N_PARAMS]);
        }
        let e1 = self.eps[0];
        let h = f.powf(e1);
        let scale = e1 * h / f;
        for g in gp.iter_mut() {
            *g *= scale;
        }
        gp[3] += h * f.ln();
        (h, gx * scale, gp)
    }

    /// Radial point-to-surface distance `||x|| |1 - F^(-ε1/2)|`. The origin
    /// maps to the smallest semi-axis.
    pub fn radial_distance(&self, x: &Vec3) -> f64 {
        self.radial_distance_grad(x).0
    }

    pub fn radial_distance_grad(&self, x: &Vec3) -> (f64, Vec3, SqParams) {
        let r = x.norm();
        if r == 0.0 {
            return (self.alpha.min(), Vec3::zeros(), [0.0; N_PARAMS]);
        }
        let (f, gfx, gfp) = self.implicit_grad(x);
        let e1 = self.eps[0];
        let g = f.powf(-0.5 * e1);
        let gap = 1.0 - g;
        let sign = if gap > 0.0 {
            1.0
        } else if gap < 0.0 {
            -1.0
        } else {
            0.0
        };
        // dG = G (-(ε1/2) dF/F - (1/2) ln F dε1)
        let dg_df = -0.5 * e1 * g / f;
        let mut gp = gfp.map(|v| -sign * r * dg_df * v);
        gp[3] += -sign * r * (-0.5 * g * f.ln());
        let gx = sign * (gap * x / r - r * dg_df * gfx);
        (r * gap.abs(), gx, gp)
    }

    fn implicit_parts(&self, p: &Vec3) -> ImplicitParts {
        let a = self.alpha;
        let [e1, e2] = self.eps;
        let [kx, ky] = self.taper;
        let raw_fx = 1.0 + kx * p.z / a.z;
        let raw_fy = 1.0 + ky * p.z / a.z;
        let fx = raw_fx.max(MIN_TAPER_FACTOR);
        let fy = raw_fy.max(MIN_TAPER_FACTOR);
        let u = p.x / (a.x * fx);
        let v = p.y / (a.y * fy);
        let w = p.z / a.z;
        let pu = u.abs().powf(2.0 / e2);
        let pv = v.abs().powf(2.0 / e2);
        let pw = w.abs().powf(2.0 / e1);
        let base = pu + pv;
        let b = if base > 0.0 { base.powf(e2 / e1) } else { 0.0 };
        ImplicitParts {
            value: b + pw,
            u,
            v,
            w,
            pu,
            pv,
            pw,
            base,
            b,
            fx,
            fy,
            fx_live: raw_fx > MIN_TAPER_FACTOR,
            fy_live: raw_fy > MIN_TAPER_FACTOR,
            z: p.z,
        }
    }
}

struct ImplicitParts {
    value: f64,
    u: f64,
    v: f64,
    w: f64,
    pu: f64,
    pv: f64,
    pw: f64,
    base: f64,
    b: f64,
    fx: f64,
    fy: f64,
    fx_live: bool,
    fy_live: bool,
    z: f64,
}

impl ImplicitParts {
    fn backward(&self, sq: &Superquadric) -> (Vec3, SqParams) {
        let a = sq.alpha;
        let [e1, e2] = sq.eps;
        let [kx, ky] = sq.taper;
        let &ImplicitParts { u, v, w, pu, pv, pw, base, b, fx, fy, z, .. } = self;

        let (f_u, f_v) = if base > 0.0 {
            let s = 2.0 / e1 * b / base;
            (
                if u != 0.0 { s * pu / u } else { 0.0 },
                if v != 0.0 { s * pv / v } else { 0.0 },
            )
        } else {
            (0.0, 0.0)
        };
        let f_w = if w != 0.0 { 2.0 / e1 * pw / w } else { 0.0 };

        let ln_base = if base > 0.0 { base.ln() } else { 0.0 };
        let f_e2 = if base > 0.0 {
            b / e1 * (ln_base - 2.0 / (e2 * base) * (xlog(pu, u) + xlog(pv, v)))
        } else {
            0.0
        };
        let f_e1 = -b * ln_base * e2 / (e1 * e1) - 2.0 / (e1 * e1) * xlog(pw, w);

        // taper factor partials (zero where the factor is clamped)
        let (dfx_dz, dfx_daz, dfx_dk) = if self.fx_live {
            (kx / a.z, -kx * z / (a.z * a.z), z / a.z)
        } else {
            (0.0, 0.0, 0.0)
        };
        let (dfy_dz, dfy_daz, dfy_dk) = if self.fy_live {
            (ky / a.z, -ky * z / (a.z * a.z), z / a.z)
        } else {
            (0.0, 0.0, 0.0)
        };
        let f_fx = -f_u * u / fx;
        let f_fy = -f_v * v / fy;

        let gx = Vec3::new(
            f_u / (a.x * fx),
            f_v / (a.y * fy),
            f_w / a.z + f_fx * dfx_dz + f_fy * dfy_dz,
        );
        let gp = [
            -f_u * u / a.x,
            -f_v * v / a.y,
            -f_w * w / a.z + f_fx * dfx_daz + f_fy * dfy_daz,
            f_e1,
            f_e2,
            f_fx * dfx_dk,
            f_fy * dfy_dk,
        ];
        (gx, gp)
    }
}

/// `n` (η, ω) pairs on a jittered grid covering `[-π/2, π/2] × [-π, π]`.
pub fn sample_angles<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let cols = ((2 * n) as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    (0..n)
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            let eta = -FRAC_PI_2 + PI * (i as f64 + rng.random::<f64>()) / rows as f64;
            let omega = -PI + 2.0 * PI * (j as f64 + rng.random::<f64>()) / cols as f64;
            (eta, omega)
        })
        .collect()
}
