//! Poincaré ball and Lorentz hyperboloid models of hyperbolic space with
//! curvature `c < 0`, plus a Euclidean mode in which similarity is the inner
//! product.
//!
//! Two layers live here. The checked API ([`distance`], [`exp_map`],
//! [`log_map`], ...) works on [`HyperPoint`]s and validates geometry and
//! domain invariants. The `*_raw` methods on [`Space`] work on plain slices
//! and are what the gradient tape calls in its inner loops.
//!
//! Notation: `k = |c|`, `s = sqrt(k)`. Poincaré points satisfy
//! `‖x‖ < 1/s`; Lorentz points satisfy `⟨x,x⟩_L = 1/c` with `x₀ > 0`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm_sq};
use crate::special::arcosh1p;

/// Relative margin kept between projected Poincaré points and the boundary.
pub const BOUNDARY_EPS: f64 = 1e-5;

/// Lower bound on `arg - 1` when differentiating `arcosh(arg)`.
pub const ACOSH_GRAD_FLOOR: f64 = 1e-15;

/// Cap on `s·‖v‖` for tangent vectors mapped from the Lorentz origin; keeps
/// `cosh` well inside `f64` range.
pub const LORENTZ_TANGENT_CAP: f64 = 20.0;

const MANIFOLD_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Curvature(f64);

impl Curvature {
    pub const UNIT: Curvature = Curvature(-1.0);

    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c < 0.0 {
            Ok(Curvature(c))
        } else {
            Err(Error::contract(format!("curvature must be finite and negative, got {c}")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `|c|`
    #[inline]
    pub fn magnitude(self) -> f64 {
        -self.0
    }

    /// `sqrt(|c|)`
    #[inline]
    pub fn sqrt_magnitude(self) -> f64 {
        libm::sqrt(-self.0)
    }

    /// Radius of the Poincaré ball, `1/sqrt(|c|)`.
    #[inline]
    pub fn radius(self) -> f64 {
        1.0 / self.sqrt_magnitude()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature::UNIT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum GeometryKind {
    Poincare,
    Lorentz,
    Euclidean,
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryKind::Poincare => "poincare",
            GeometryKind::Lorentz => "lorentz",
            GeometryKind::Euclidean => "euclidean",
        })
    }
}

impl FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poincare" => Ok(GeometryKind::Poincare),
            "lorentz" => Ok(GeometryKind::Lorentz),
            "euclidean" => Ok(GeometryKind::Euclidean),
            other => Err(Error::config(format!("unknown geometry `{other}`"))),
        }
    }
}

/// A geometry together with its curvature.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Space {
    Poincare(Curvature),
    Lorentz(Curvature),
    Euclidean,
}

impl Default for Space {
    fn default() -> Self {
        Space::Poincare(Curvature::UNIT)
    }
}

impl Space {
    pub fn new(kind: GeometryKind, curvature: f64) -> Result<Space> {
        Ok(match kind {
            GeometryKind::Poincare => Space::Poincare(Curvature::new(curvature)?),
            GeometryKind::Lorentz => Space::Lorentz(Curvature::new(curvature)?),
            GeometryKind::Euclidean => Space::Euclidean,
        })
    }

    pub fn kind(&self) -> GeometryKind {
        match self {
            Space::Poincare(_) => GeometryKind::Poincare,
            Space::Lorentz(_) => GeometryKind::Lorentz,
            Space::Euclidean => GeometryKind::Euclidean,
        }
    }

    pub fn curvature(&self) -> Option<Curvature> {
        match *self {
            Space::Poincare(c) | Space::Lorentz(c) => Some(c),
            Space::Euclidean => None,
        }
    }

    pub fn is_hyperbolic(&self) -> bool {
        !matches!(self, Space::Euclidean)
    }

    /// Number of stored coordinates for an intrinsic dimension.
    pub fn ambient_dim(&self, dim: usize) -> usize {
        match self {
            Space::Lorentz(_) => dim + 1,
            _ => dim,
        }
    }

    pub fn intrinsic_dim(&self, ambient: usize) -> usize {
        match self {
            Space::Lorentz(_) => ambient.saturating_sub(1),
            _ => ambient,
        }
    }

    pub fn origin(&self, dim: usize) -> Vec<f64> {
        let mut o = vec![0.0; self.ambient_dim(dim)];
        if let Space::Lorentz(c) = self {
            o[0] = c.radius();
        }
        o
    }

    /// Whether `coords` satisfies the domain invariant of this geometry.
    pub fn contains(&self, coords: &[f64]) -> bool {
        if !coords.iter().all(|x| x.is_finite()) {
            return false;
        }
        match *self {
            Space::Poincare(c) => libm::sqrt(norm_sq(coords)) < c.radius(),
            Space::Lorentz(c) => {
                if coords.len() < 2 || coords[0] <= 0.0 {
                    return false;
                }
                let q = lorentz_inner_raw(coords, coords);
                let scale = (coords[0] * coords[0]).max(1.0);
                (q - 1.0 / c.value()).abs() <= MANIFOLD_TOL * scale
            }
            Space::Euclidean => true,
        }
    }

    /// Geodesic distance between two stored points.
    pub fn distance_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Space::Poincare(c) => arcosh1p(poincare_t(c.magnitude(), x, y)) / c.sqrt_magnitude(),
            Space::Lorentz(c) => arcosh1p(lorentz_t(c.magnitude(), x, y)) / c.sqrt_magnitude(),
            Space::Euclidean => {
                let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                libm::sqrt(s)
            }
        }
    }

    /// Similarity score: negative distance in hyperbolic modes, inner product
    /// in Euclidean mode.
    #[inline]
    pub fn score_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Space::Euclidean => dot(x, y),
            _ => -self.distance_raw(x, y),
        }
    }

    /// A cheap key that orders pairs exactly as [`Space::score_raw`] does
    /// (it skips the monotone `arcosh`).
    #[inline]
    pub fn rank_key_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Space::Poincare(c) => -poincare_t(c.magnitude(), x, y),
            Space::Lorentz(c) => -lorentz_t(c.magnitude(), x, y),
            Space::Euclidean => dot(x, y),
        }
    }

    /// Returns the score and accumulates `upstream · ∂score/∂x` into `gx`
    /// and `upstream · ∂score/∂y` into `gy`.
    pub fn score_grad_raw(
        &self,
        x: &[f64],
        y: &[f64],
        upstream: f64,
        gx: &mut [f64],
        gy: &mut [f64],
    ) -> f64 {
        match *self {
            Space::Euclidean => {
                for i in 0..x.len() {
                    gx[i] += upstream * y[i];
                    gy[i] += upstream * x[i];
                }
                dot(x, y)
            }
            Space::Poincare(c) => {
                let k = c.magnitude();
                let s = c.sqrt_magnitude();
                let xx = norm_sq(x);
                let yy = norm_sq(y);
                let mut diff = 0.0;
                for i in 0..x.len() {
                    let d = x[i] - y[i];
                    diff += d * d;
                }
                let a = 1.0 - k * xx;
                let b = 1.0 - k * yy;
                let t = 2.0 * k * diff / (a * b);
                let dist = arcosh1p(t) / s;
                // score = -dist; d dist/dt = 1/(s·sqrt(t(t+2)))
                let tf = t.max(ACOSH_GRAD_FLOOR);
                let dscore_dt = -upstream / (s * libm::sqrt(tf * (tf + 2.0)));
                let pre = dscore_dt * 4.0 * k / (a * b);
                let cx = k * diff / a;
                let cy = k * diff / b;
                for i in 0..x.len() {
                    let d = x[i] - y[i];
                    gx[i] += pre * (d + cx * x[i]);
                    gy[i] += pre * (-d + cy * y[i]);
                }
                -dist
            }
            Space::Lorentz(c) => {
                let k = c.magnitude();
                let s = c.sqrt_magnitude();
                let t = lorentz_t(k, x, y);
                let dist = arcosh1p(t) / s;
                let tf = t.max(ACOSH_GRAD_FLOOR);
                let dscore_dt = -upstream / (s * libm::sqrt(tf * (tf + 2.0)));
                if t > 0.0 {
                    // t = (k/2)·⟨x−y, x−y⟩_L
                    let pre = dscore_dt * k;
                    let d0 = x[0] - y[0];
                    gx[0] += -pre * d0;
                    gy[0] += pre * d0;
                    for i in 1..x.len() {
                        let d = x[i] - y[i];
                        gx[i] += pre * d;
                        gy[i] -= pre * d;
                    }
                }
                -dist
            }
        }
    }

    /// Exponential map at the origin applied to a tangent vector given by
    /// its `dim` free components. `out` has `ambient_dim(dim)` entries.
    pub fn expmap0_raw(&self, v: &[f64], out: &mut [f64]) {
        match *self {
            Space::Euclidean => out.copy_from_slice(v),
            Space::Poincare(c) => {
                let s = c.sqrt_magnitude();
                let n = libm::sqrt(norm_sq(v));
                let u = s * n;
                let (ue, scale) = clipped(u, poincare_tangent_cap());
                // out = tanh(ue)/ (s n) · v
                let g = if u < 1e-8 { 1.0 - ue * ue / 3.0 } else { libm::tanh(ue) / ue * scale };
                for i in 0..v.len() {
                    out[i] = g * v[i];
                }
            }
            Space::Lorentz(c) => {
                let s = c.sqrt_magnitude();
                let n = libm::sqrt(norm_sq(v));
                let u = s * n;
                let (ue, scale) = clipped(u, LORENTZ_TANGENT_CAP);
                out[0] = libm::cosh(ue) / s;
                let h = if u < 1e-8 { 1.0 + ue * ue / 6.0 } else { libm::sinh(ue) / ue * scale };
                for i in 0..v.len() {
                    out[i + 1] = h * v[i];
                }
            }
        }
    }

    /// Accumulates the vector–Jacobian product of [`Space::expmap0_raw`]
    /// into `gv`.
    pub fn expmap0_backward_raw(&self, v: &[f64], gout: &[f64], gv: &mut [f64]) {
        match *self {
            Space::Euclidean => {
                for i in 0..v.len() {
                    gv[i] += gout[i];
                }
            }
            Space::Poincare(c) => {
                let s = c.sqrt_magnitude();
                let k = c.magnitude();
                let n = libm::sqrt(norm_sq(v));
                let u = s * n;
                let cap = poincare_tangent_cap();
                // out = g(u) v with g(u) = tanh(u)/u (or cap-clipped), u = s‖v‖
                // d out = g·dv + (g'(u)/u)·k·(v·dv)·v
                let (g, gp_over_u) = if u > cap {
                    let tc = libm::tanh(cap);
                    (tc / u, -tc / (u * u * u))
                } else if u < 1e-4 {
                    (1.0 - u * u / 3.0, -2.0 / 3.0 + 8.0 * u * u / 15.0)
                } else {
                    let th = libm::tanh(u);
                    (th / u, ((1.0 - th * th) / u - th / (u * u)) / u)
                };
                let proj = dot(gout, v);
                for i in 0..v.len() {
                    gv[i] += g * gout[i] + gp_over_u * k * proj * v[i];
                }
            }
            Space::Lorentz(c) => {
                let s = c.sqrt_magnitude();
                let k = c.magnitude();
                let n = libm::sqrt(norm_sq(v));
                let u = s * n;
                let cap = LORENTZ_TANGENT_CAP;
                let gspat = &gout[1..];
                let proj = dot(gspat, v);
                if u > cap {
                    // Radially clipped: out depends on v only through v/‖v‖.
                    let h = libm::sinh(cap) / cap * (cap / u);
                    // out_spatial = (sinh(cap)/(s‖v‖))·v ; out0 constant
                    for i in 0..v.len() {
                        gv[i] += h * gspat[i] - h * proj * v[i] / (n * n);
                    }
                    return;
                }
                let (h, hp_over_u, sh_over_u) = if u < 1e-4 {
                    (1.0 + u * u / 6.0, 1.0 / 3.0 + u * u / 30.0, 1.0 + u * u / 6.0)
                } else {
                    let sh = libm::sinh(u);
                    let ch = libm::cosh(u);
                    (sh / u, (ch * u - sh) / (u * u * u), sh / u)
                };
                // ∂out0/∂v = sinh(u)/s · ∂u/∂v = sinh(u)/s · k v/u = s·(sinh u/u)·v
                let g0 = gout[0] * s * sh_over_u;
                for i in 0..v.len() {
                    gv[i] += g0 * v[i] + h * gspat[i] + hp_over_u * k * proj * v[i];
                }
            }
        }
    }
}

#[inline]
fn poincare_tangent_cap() -> f64 {
    libm::atanh(1.0 - BOUNDARY_EPS)
}

/// Returns `(min(u, cap), cap/u or 1)`.
#[inline]
fn clipped(u: f64, cap: f64) -> (f64, f64) {
    if u > cap {
        (cap, cap / u)
    } else {
        (u, 1.0)
    }
}

/// `arcosh` argument minus one for the Poincaré distance.
#[inline]
fn poincare_t(k: f64, x: &[f64], y: &[f64]) -> f64 {
    let (mut diff, mut xx, mut yy) = ([0.0; 4], [0.0; 4], [0.0; 4]);
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for j in 0..4 {
            let d = a[j] - b[j];
            diff[j] += d * d;
            xx[j] += a[j] * a[j];
            yy[j] += b[j] * b[j];
        }
    }
    let sum = |v: [f64; 4]| (v[0] + v[1]) + (v[2] + v[3]);
    let (mut diff, mut xx, mut yy) = (sum(diff), sum(xx), sum(yy));
    for (a, b) in xr.iter().zip(yr) {
        diff += (a - b) * (a - b);
        xx += a * a;
        yy += b * b;
    }
    let a = 1.0 - k * xx;
    let b = 1.0 - k * yy;
    (2.0 * k * diff / (a * b)).max(0.0)
}

/// `arcosh` argument minus one for the Lorentz distance, computed as
/// `(k/2)·⟨x−y, x−y⟩_L`, which equals `c⟨x,y⟩_L − 1` on the manifold and is
/// exactly zero for coincident points.
#[inline]
fn lorentz_t(k: f64, x: &[f64], y: &[f64]) -> f64 {
    let d0 = x[0] - y[0];
    let mut acc = [0.0; 4];
    let (xc, yc) = (x[1..].chunks_exact(4), y[1..].chunks_exact(4));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for j in 0..4 {
            let d = a[j] - b[j];
            acc[j] += d * d;
        }
    }
    let mut q = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in xr.iter().zip(yr) {
        q += (a - b) * (a - b);
    }
    (0.5 * k * (q - d0 * d0)).max(0.0)
}

/// Lorentzian inner product `−x₀y₀ + Σ xᵢyᵢ` on raw slices.
#[inline]
pub fn lorentz_inner_raw(x: &[f64], y: &[f64]) -> f64 {
    -x[0] * y[0] + dot(&x[1..], &y[1..])
}

// ---------------------------------------------------------------------------
// Checked point types

#[derive(Clone, Debug, PartialEq)]
pub struct HyperPoint {
    space: Space,
    coords: Vec<f64>,
}

impl HyperPoint {
    pub fn new(space: Space, coords: Vec<f64>) -> Result<Self> {
        if let Space::Lorentz(_) = space {
            if coords.len() < 2 {
                return Err(Error::contract("lorentz points need at least 2 coordinates"));
            }
        }
        if !space.contains(&coords) {
            return Err(Error::contract(format!(
                "coordinates are not on the {} manifold",
                space.kind()
            )));
        }
        Ok(HyperPoint { space, coords })
    }

    pub fn origin(space: Space, dim: usize) -> Self {
        HyperPoint { space, coords: space.origin(dim) }
    }

    #[inline]
    pub fn space(&self) -> Space {
        self.space
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        self.space.intrinsic_dim(self.coords.len())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(norm_sq(&self.coords))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    at: HyperPoint,
    vec: Vec<f64>,
}

impl TangentVector {
    pub fn new(at: HyperPoint, vec: Vec<f64>) -> Result<Self> {
        if vec.len() != at.coords.len() {
            return Err(Error::contract("tangent vector length differs from its base point"));
        }
        if !vec.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("tangent vector has non-finite entries"));
        }
        if let Space::Lorentz(_) = at.space {
            let ip = lorentz_inner_raw(&at.coords, &vec);
            let scale = at.coords[0].abs().max(1.0) * libm::sqrt(norm_sq(&vec)).max(1.0);
            if ip.abs() > MANIFOLD_TOL * scale {
                return Err(Error::contract(format!("vector is not tangent: ⟨x, v⟩_L = {ip}")));
            }
        }
        Ok(TangentVector { at, vec })
    }

    pub fn zero(at: HyperPoint) -> Self {
        let n = at.coords.len();
        TangentVector { at, vec: vec![0.0; n] }
    }

    pub fn at(&self) -> &HyperPoint {
        &self.at
    }

    pub fn vec(&self) -> &[f64] {
        &self.vec
    }

    /// Norm under the Riemannian metric at the base point.
    pub fn riemannian_norm(&self) -> f64 {
        match self.at.space {
            Space::Poincare(c) => {
                conformal_factor_raw(c.magnitude(), &self.at.coords) * libm::sqrt(norm_sq(&self.vec))
            }
            Space::Lorentz(_) => libm::sqrt(lorentz_inner_raw(&self.vec, &self.vec).max(0.0)),
            Space::Euclidean => libm::sqrt(norm_sq(&self.vec)),
        }
    }
}

fn check_pair(x: &HyperPoint, y: &HyperPoint) -> Result<()> {
    if x.space != y.space {
        return Err(Error::contract(format!(
            "geometry mismatch: {:?} vs {:?}",
            x.space, y.space
        )));
    }
    if x.coords.len() != y.coords.len() {
        return Err(Error::contract(format!(
            "dimension mismatch: {} vs {}",
            x.coords.len(),
            y.coords.len()
        )));
    }
    Ok(())
}

pub fn distance(x: &HyperPoint, y: &HyperPoint) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.space.distance_raw(&x.coords, &y.coords))
}

pub fn similarity_score(x: &HyperPoint, y: &HyperPoint) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.space.score_raw(&x.coords, &y.coords))
}

pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::contract(format!(
            "lorentz inner product needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(lorentz_inner_raw(x, y))
}

#[inline]
fn conformal_factor_raw(k: f64, x: &[f64]) -> f64 {
    2.0 / (1.0 - k * norm_sq(x))
}

/// `λ_x = 2 / (1 + c‖x‖²)`.
pub fn conformal_factor(x: &HyperPoint) -> Result<f64> {
    match x.space {
        Space::Poincare(c) => Ok(conformal_factor_raw(c.magnitude(), &x.coords)),
        _ => Err(Error::contract("conformal factor is defined for the Poincaré ball only")),
    }
}

fn mobius_add_raw(k: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    let xy = dot(x, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let a = 1.0 + 2.0 * k * xy + k * yy;
    let b = 1.0 - k * xx;
    let den = 1.0 + 2.0 * k * xy + k * k * xx * yy;
    x.iter().zip(y).map(|(&xi, &yi)| (a * xi + b * yi) / den).collect()
}

/// Keeps a Poincaré point strictly inside the ball.
fn clamp_to_ball(c: Curvature, p: &mut [f64]) {
    let n = libm::sqrt(norm_sq(p));
    let max = (1.0 - BOUNDARY_EPS) * c.radius();
    if n >= c.radius() || !n.is_finite() {
        let f = max / n;
        for v in p.iter_mut() {
            *v *= f;
        }
    }
}

/// Möbius addition `x ⊕ y` in the Poincaré ball.
pub fn mobius_add(x: &HyperPoint, y: &HyperPoint) -> Result<HyperPoint> {
    check_pair(x, y)?;
    let Space::Poincare(c) = x.space else {
        return Err(Error::contract("Möbius addition is defined for the Poincaré ball only"));
    };
    let mut out = mobius_add_raw(c.magnitude(), &x.coords, &y.coords);
    clamp_to_ball(c, &mut out);
    Ok(HyperPoint { space: x.space, coords: out })
}

/// Gyration `gyr[u, v]w`, the closed form of `⊖(u⊕v) ⊕ (u ⊕ (v ⊕ w))`.
/// Linear in `w`, so it applies to tangent vectors of any length.
pub fn gyration(k: f64, u: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
    let uv = dot(u, v);
    let uw = dot(u, w);
    let vw = dot(v, w);
    let uu = norm_sq(u);
    let vv = norm_sq(v);
    let a = -k * k * uw * vv + k * vw + 2.0 * k * k * uv * vw;
    let b = -k * k * vw * uu - k * uw;
    let d = 1.0 + 2.0 * k * uv + k * k * uu * vv;
    (0..w.len()).map(|i| w[i] + 2.0 * (a * u[i] + b * v[i]) / d).collect()
}

pub fn exp_map(x: &HyperPoint, v: &TangentVector) -> Result<HyperPoint> {
    check_pair(x, &v.at)?;
    if x.coords != v.at.coords {
        return Err(Error::contract("tangent vector is anchored at a different point"));
    }
    let vn = libm::sqrt(norm_sq(&v.vec));
    if vn == 0.0 {
        return Ok(x.clone());
    }
    match x.space {
        Space::Euclidean => Ok(HyperPoint {
            space: x.space,
            coords: x.coords.iter().zip(&v.vec).map(|(a, b)| a + b).collect(),
        }),
        Space::Poincare(c) => {
            let k = c.magnitude();
            let s = c.sqrt_magnitude();
            let lam = conformal_factor_raw(k, &x.coords);
            let f = libm::tanh(s * lam * vn / 2.0) / (s * vn);
            let step: Vec<f64> = v.vec.iter().map(|a| a * f).collect();
            let mut out = mobius_add_raw(k, &x.coords, &step);
            clamp_to_ball(c, &mut out);
            Ok(HyperPoint { space: x.space, coords: out })
        }
        Space::Lorentz(c) => {
            let s = c.sqrt_magnitude();
            let nl = libm::sqrt(lorentz_inner_raw(&v.vec, &v.vec).max(0.0));
            if nl == 0.0 {
                return Ok(x.clone());
            }
            let u = s * nl;
            let ch = libm::cosh(u);
            let f = libm::sinh(u) / u;
            let mut out: Vec<f64> =
                x.coords.iter().zip(&v.vec).map(|(a, b)| ch * a + f * b).collect();
            restore_hyperboloid(c, &mut out);
            Ok(HyperPoint { space: x.space, coords: out })
        }
    }
}

pub fn log_map(x: &HyperPoint, y: &HyperPoint) -> Result<TangentVector> {
    check_pair(x, y)?;
    if x.coords == y.coords {
        return Ok(TangentVector::zero(x.clone()));
    }
    let vec = match x.space {
        Space::Euclidean => y.coords.iter().zip(&x.coords).map(|(a, b)| a - b).collect(),
        Space::Poincare(c) => {
            let k = c.magnitude();
            let s = c.sqrt_magnitude();
            let neg_x: Vec<f64> = x.coords.iter().map(|a| -a).collect();
            let m = mobius_add_raw(k, &neg_x, &y.coords);
            let mn = libm::sqrt(norm_sq(&m));
            if mn == 0.0 {
                return Ok(TangentVector::zero(x.clone()));
            }
            let lam = conformal_factor_raw(k, &x.coords);
            let f = 2.0 / (s * lam) * libm::atanh((s * mn).min(1.0 - 1e-16)) / mn;
            m.iter().map(|a| a * f).collect()
        }
        Space::Lorentz(c) => {
            let k = c.magnitude();
            let s = c.sqrt_magnitude();
            let t = lorentz_t(k, &x.coords, &y.coords);
            if t == 0.0 {
                return Ok(TangentVector::zero(x.clone()));
            }
            let z = 1.0 + t;
            // w = y − z·x is tangent at x with ‖w‖_L = sqrt(t(t+2)/k)
            let wn = libm::sqrt(t * (t + 2.0) / k);
            let d = arcosh1p(t) / s;
            x.coords.iter().zip(&y.coords).map(|(a, b)| d * (b - z * a) / wn).collect()
        }
    };
    Ok(TangentVector { at: x.clone(), vec })
}

pub fn parallel_transport(
    x: &HyperPoint,
    y: &HyperPoint,
    v: &TangentVector,
) -> Result<TangentVector> {
    check_pair(x, y)?;
    check_pair(x, &v.at)?;
    if x.coords == y.coords {
        return Ok(TangentVector { at: y.clone(), vec: v.vec.clone() });
    }
    let vec = match x.space {
        Space::Euclidean => v.vec.clone(),
        Space::Poincare(c) => {
            let k = c.magnitude();
            let neg_x: Vec<f64> = x.coords.iter().map(|a| -a).collect();
            let rot = gyration(k, &y.coords, &neg_x, &v.vec);
            let f = conformal_factor_raw(k, &x.coords) / conformal_factor_raw(k, &y.coords);
            rot.iter().map(|a| a * f).collect()
        }
        Space::Lorentz(c) => {
            let ip_yv = lorentz_inner_raw(&y.coords, &v.vec);
            let ip_xy = lorentz_inner_raw(&x.coords, &y.coords);
            let f = ip_yv / (1.0 / c.magnitude() - ip_xy);
            (0..v.vec.len()).map(|i| v.vec[i] + f * (x.coords[i] + y.coords[i])).collect()
        }
    };
    Ok(TangentVector { at: y.clone(), vec })
}

/// Lorentz → Poincaré: `p(x) = x_{1..n} / (1 + s·x₀)`.
pub fn to_poincare(x: &HyperPoint) -> Result<HyperPoint> {
    let Space::Lorentz(c) = x.space else {
        return Err(Error::contract("to_poincare expects a Lorentz point"));
    };
    Ok(HyperPoint { space: Space::Poincare(c), coords: lorentz_to_poincare_raw(c, &x.coords) })
}

/// [`to_poincare`] on raw ambient coordinates.
pub fn lorentz_to_poincare_raw(c: Curvature, x: &[f64]) -> Vec<f64> {
    let s = c.sqrt_magnitude();
    let den = 1.0 + s * x[0];
    let mut out: Vec<f64> = x[1..].iter().map(|a| a / den).collect();
    clamp_to_ball(c, &mut out);
    out
}

/// Poincaré → Lorentz: `(1/s)·(1 + k‖y‖², 2s·y) / (1 − k‖y‖²)`.
pub fn to_lorentz(y: &HyperPoint) -> Result<HyperPoint> {
    let Space::Poincare(c) = y.space else {
        return Err(Error::contract("to_lorentz expects a Poincaré point"));
    };
    let k = c.magnitude();
    let s = c.sqrt_magnitude();
    let yy = norm_sq(&y.coords);
    let den = 1.0 - k * yy;
    let mut out = Vec::with_capacity(y.coords.len() + 1);
    out.push((1.0 + k * yy) / (s * den));
    out.extend(y.coords.iter().map(|a| 2.0 * a / den));
    Ok(HyperPoint { space: Space::Lorentz(c), coords: out })
}

fn restore_hyperboloid(c: Curvature, x: &mut [f64]) {
    x[0] = libm::sqrt(1.0 / c.magnitude() + norm_sq(&x[1..]));
}

/// Forces arbitrary finite coordinates into the domain: Poincaré points
/// outside the ball are rescaled to norm `(1 − ε)/s`; Lorentz points get
/// `x₀` recomputed from their spatial part.
pub fn project_into_domain(coords: &[f64], space: Space) -> Result<HyperPoint> {
    if !coords.iter().all(|v| v.is_finite()) {
        return Err(Error::contract("cannot project non-finite coordinates"));
    }
    let mut out = coords.to_vec();
    match space {
        Space::Poincare(c) => clamp_to_ball(c, &mut out),
        Space::Lorentz(c) => {
            if out.len() < 2 {
                return Err(Error::contract("lorentz points need at least 2 coordinates"));
            }
            restore_hyperboloid(c, &mut out);
        }
        Space::Euclidean => {}
    }
    Ok(HyperPoint { space, coords: out })
}

/// Tangent vector at the origin from its free components (Lorentz vectors
/// get a zero time component).
pub fn origin_tangent(space: Space, v: &[f64]) -> TangentVector {
    let at = HyperPoint::origin(space, v.len());
    let vec = match space {
        Space::Lorentz(_) => {
            let mut w = vec![0.0];
            w.extend_from_slice(v);
            w
        }
        _ => v.to_vec(),
    };
    TangentVector { at, vec }
}
