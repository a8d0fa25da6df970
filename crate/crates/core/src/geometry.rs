//! Exact geometry of hypercones.
//!
//! A hypercone `C(v, α)` in `R^m` is the set of nonzero vectors making the
//! angle `α ∈ [0, π/2]` with the unit axis `v`. Every operation here keeps the
//! size (Euclidean norm) of its input and acts only on the direction.
//!
//! Angles between unit vectors are computed as `2·atan2(‖u − w‖, ‖u + w‖)`,
//! which stays accurate near `0` and `π` where `acos` of an inner product
//! loses half of its digits.

use core::sync::atomic::{AtomicUsize, Ordering};

use crate::prelude::*;

/// Sizes below this are treated as the apex.
pub const APEX_EPS: f64 = 1e-12;
/// Angular distance to the axis (or its antipode) below which a direction is
/// treated as aligned with it.
pub const ALIGN_EPS: f64 = 1e-9;

static DEGENERATE_ALIGNMENTS: AtomicUsize = AtomicUsize::new(0);

/// Number of times a degenerate axis alignment was replaced by the
/// deterministic fallback direction since process start.
pub fn degenerate_alignment_count() -> usize {
    DEGENERATE_ALIGNMENTS.load(Ordering::Relaxed)
}

/// Residual flavour: arc length (`(θ−α)·r`) or chord length
/// (`2·sin((θ−α)/2)·r`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum ResidualKind {
    #[default]
    Riemannian,
    Chordal,
}

impl ResidualKind {
    /// Residual for an angular deviation `delta` at size `size`.
    #[inline]
    pub fn residual(self, delta: f64, size: f64) -> f64 {
        match self {
            ResidualKind::Riemannian => delta * size,
            ResidualKind::Chordal => 2.0 * (0.5 * delta).sin() * size,
        }
    }

    /// Derivative of [`residual`](Self::residual) with respect to `delta`.
    #[inline]
    pub(crate) fn residual_slope(self, delta: f64, size: f64) -> f64 {
        match self {
            ResidualKind::Riemannian => size,
            ResidualKind::Chordal => (0.5 * delta).cos() * size,
        }
    }

    /// Angular deviation recovered from a residual; inverse of
    /// [`residual`](Self::residual).
    pub fn angle_increment(self, residual: f64, size: f64) -> Result<f64> {
        if !(size > 0.0) {
            return Err(PncError::domain(format!("size must be positive, got {size}")));
        }
        match self {
            ResidualKind::Riemannian => Ok(residual / size),
            ResidualKind::Chordal => crate::backfit::chordal_residual_adjust(residual, size),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::Riemannian => "riemannian",
            ResidualKind::Chordal => "chordal",
        }
    }
}

impl core::str::FromStr for ResidualKind {
    type Err = PncError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "riemannian" => Ok(ResidualKind::Riemannian),
            "chordal" => Ok(ResidualKind::Chordal),
            other => Err(PncError::param(format!("unknown residual kind {other:?} (expected riemannian or chordal)"))),
        }
    }
}

/// An observation in ambient space with its size and unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConePoint {
    ambient: Vector,
    size: f64,
    direction: Vector,
}

impl ConePoint {
    /// Wraps an ambient vector. The apex (size below [`APEX_EPS`]) is
    /// representable; its direction is the zero vector.
    pub fn new(ambient: Vector) -> Result<Self> {
        if ambient.len() < 2 {
            return Err(PncError::param(format!("cone points need at least 2 coordinates, got {}", ambient.len())));
        }
        if ambient.iter().any(|x| !x.is_finite()) {
            return Err(PncError::domain("non-finite coordinate"));
        }
        let size = ambient.norm();
        let direction = if size < APEX_EPS { Vector::zeros(ambient.len()) } else { &ambient / size };
        Ok(Self { ambient, size, direction })
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(Vector::from_column_slice(coords))
    }

    /// Point at `size` along `direction`; the direction is renormalised.
    pub fn from_polar(size: f64, direction: &Vector) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) {
            return Err(PncError::domain("zero direction"));
        }
        Self::new(direction * (size / n))
    }

    pub fn ambient(&self) -> &Vector {
        &self.ambient
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn direction(&self) -> &Vector {
        &self.direction
    }

    pub fn dim(&self) -> usize {
        self.ambient.len()
    }

    pub fn is_apex(&self) -> bool {
        self.size < APEX_EPS
    }

    pub fn into_ambient(self) -> Vector {
        self.ambient
    }

    fn require_not_apex(&self) -> Result<()> {
        if self.is_apex() {
            Err(PncError::Apex { column: 0, size: self.size })
        } else {
            Ok(())
        }
    }
}

/// One nested cone: unit axis and opening angle.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperconeStage {
    pub axis: Vector,
    pub opening: f64,
}

impl HyperconeStage {
    pub fn new(axis: Vector, opening: f64) -> Result<Self> {
        if axis.len() < 2 {
            return Err(PncError::param("cone axis needs at least 2 coordinates"));
        }
        let n = axis.norm();
        if !((n - 1.0).abs() <= 1e-10) {
            return Err(PncError::param(format!("cone axis must have unit norm, has norm {n}")));
        }
        if !(0.0..=FRAC_PI_2).contains(&opening) {
            return Err(PncError::param(format!("opening {opening} outside [0, π/2]")));
        }
        Ok(Self { axis, opening })
    }

    pub fn dim(&self) -> usize {
        self.axis.len()
    }
}

/// Angle in `[0, π]` between two unit vectors.
#[inline]
pub fn angle_between(u: &Vector, w: &Vector) -> f64 {
    unit_angle(u.as_slice(), w.as_slice())
}

#[inline]
pub(crate) fn unit_angle(u: &[f64], w: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut sum = 0.0;
    for (a, b) in u.iter().zip(w.iter()) {
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Cone metric between `(x, size1)` and `(y, size2)` whose base points are
/// `base_distance ∈ [0, π]` apart.
pub fn cone_distance(size1: f64, size2: f64, base_distance: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&base_distance) {
        return Err(PncError::domain(format!("base distance {base_distance} outside [0, π]")));
    }
    if !(size1 >= 0.0 && size2 >= 0.0) {
        return Err(PncError::domain("sizes must be nonnegative"));
    }
    // (s1 - s2)^2 + 4 s1 s2 sin^2(ρ/2) == s1^2 + s2^2 - 2 s1 s2 cos ρ, without
    // the cancellation for nearby points.
    let half = (0.5 * base_distance).sin();
    let gap = size1 - size2;
    Ok((gap * gap + 4.0 * size1 * size2 * half * half).sqrt())
}

/// Intrinsic distance between two points on a hypercone with the given
/// opening. An apex endpoint has no direction, so its base angle is taken as
/// zero and the distance is the size gap.
pub fn hypercone_geodesic_distance(p: &ConePoint, q: &ConePoint, opening: f64) -> Result<f64> {
    check_opening(opening)?;
    if p.dim() != q.dim() {
        return Err(PncError::DimensionMismatch {
            context: "hypercone_geodesic_distance",
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let theta = if p.is_apex() || q.is_apex() { 0.0 } else { base_sphere_angle(p.direction(), q.direction(), opening) };
    cone_distance(p.size(), q.size(), opening.sin() * theta)
}

/// Great-circle angle between the angular components of two unit directions
/// that make the same angle `opening` with a common axis. Each direction is
/// `cos α · v + sin α · b` with `b ⟂ v`, so
/// `‖u − w‖ = sin α · ‖b − b'‖` and the base angle follows from the chord.
fn base_sphere_angle(u: &Vector, w: &Vector, opening: f64) -> f64 {
    let s = opening.sin();
    if s <= 0.0 {
        return 0.0;
    }
    let chord = (u - w).norm() / s;
    let half = (0.5 * chord).clamp(0.0, 1.0);
    2.0 * half.asin()
}

fn check_opening(opening: f64) -> Result<()> {
    if !(0.0..=FRAC_PI_2).contains(&opening) {
        return Err(PncError::domain(format!("opening {opening} outside [0, π/2]")));
    }
    Ok(())
}

/// Rodrigues rotation taking a unit axis onto the last standard basis vector.
///
/// Stored as the pair `(c, γ)` so that it can be applied in `O(m)` without
/// forming the matrix.
#[derive(Debug, Clone)]
pub struct Rotation {
    dim: usize,
    /// Unit component of the axis orthogonal to `e_m`; `None` for identity.
    c: Option<Vector>,
    sin: f64,
    cos: f64,
}

impl Rotation {
    pub fn to_last_axis(axis: &Vector) -> Self {
        let m = axis.len();
        let vm = axis[m - 1];
        let mut c = axis.clone();
        c[m - 1] = 0.0;
        let cn = c.norm();
        if cn == 0.0 {
            if vm >= 0.0 {
                return Self { dim: m, c: None, sin: 0.0, cos: 1.0 };
            }
            // Axis is -e_m: half turn in the (e_1, e_m) plane.
            let mut e1 = Vector::zeros(m);
            e1[0] = 1.0;
            return Self { dim: m, c: Some(e1), sin: 0.0, cos: -1.0 };
        }
        c /= cn;
        let gamma = cn.atan2(vm);
        Self { dim: m, c: Some(c), sin: gamma.sin(), cos: gamma.cos() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `R · x`
    pub fn apply(&self, x: &Vector) -> Vector {
        self.apply_signed(x, 1.0)
    }

    /// `Rᵀ · x`
    pub fn apply_transpose(&self, x: &Vector) -> Vector {
        self.apply_signed(x, -1.0)
    }

    fn apply_signed(&self, x: &Vector, sign: f64) -> Vector {
        let Some(c) = &self.c else {
            return x.clone();
        };
        let m = self.dim;
        let xm = x[m - 1];
        let cx = c.dot(x);
        let s = sign * self.sin;
        let k = self.cos - 1.0;
        // R = I + sin γ (e_m cᵀ − c e_mᵀ) + (cos γ − 1)(e_m e_mᵀ + c cᵀ)
        let mut out = x + c * (k * cx - s * xm);
        out[m - 1] += s * cx + k * xm;
        out
    }

    pub fn matrix(&self) -> Matrix {
        let m = self.dim;
        let mut out = Matrix::identity(m, m);
        for j in 0..m {
            let col = self.apply(&out.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }
}

/// Orthogonal matrix `R` with `R · axis = e_m`.
pub fn rodrigues_rotation(axis: &Vector) -> Result<Matrix> {
    if axis.len() < 2 {
        return Err(PncError::param("rotation axis needs at least 2 coordinates"));
    }
    let n = axis.norm();
    if !((n - 1.0).abs() <= 1e-10) {
        return Err(PncError::param(format!("rotation axis must have unit norm, has norm {n}")));
    }
    Ok(Rotation::to_last_axis(axis).matrix())
}

/// Angle `θ` of a unit direction `u` from the unit axis `v`, and the unit
/// tangent direction `w ⟂ v` pointing from `v` toward `u`, so that
/// `u = cos θ · v + sin θ · w`.
///
/// Directions within [`ALIGN_EPS`] of `±v` have no tangent direction; they get
/// the first standard basis vector orthogonalised against `v` instead.
pub(crate) fn polar_about(u: &Vector, v: &Vector) -> (f64, Vector) {
    let along = u.dot(v);
    let mut t = u - v * along;
    let tn = t.norm();
    let theta = tn.atan2(along);
    if theta <= ALIGN_EPS || theta >= PI - ALIGN_EPS || tn == 0.0 {
        DEGENERATE_ALIGNMENTS.fetch_add(1, Ordering::Relaxed);
        return (theta, fallback_tangent(v));
    }
    t /= tn;
    (theta, t)
}

fn fallback_tangent(v: &Vector) -> Vector {
    for i in 0..v.len() {
        let mut e = Vector::zeros(v.len());
        e[i] = 1.0;
        let w = &e - v * v[i];
        let n = w.norm();
        if n > 1e-6 {
            return w / n;
        }
    }
    unreachable!("a unit vector in two or more dimensions has a nonzero orthogonal complement")
}

/// Slerp projection of `x` onto the cone, at the same size:
/// `r · (cos α · v + sin α · w)`, which equals
/// `r · (sin α · x/r + sin(θ − α) · v) / sin θ` for `θ ∈ (0, π)`.
pub fn project_to_cone(x: &ConePoint, stage: &HyperconeStage) -> Result<ConePoint> {
    x.require_not_apex()?;
    check_dims(x.dim(), stage.dim(), "project_to_cone")?;
    let (_, w) = polar_about(x.direction(), &stage.axis);
    let (s, c) = stage.opening.sin_cos();
    let dir = &stage.axis * c + w * s;
    ConePoint::new(dir * x.size())
}

/// Signed size-weighted distance of `x` from the cone; negative inside.
pub fn residual(x: &ConePoint, stage: &HyperconeStage, kind: ResidualKind) -> Result<f64> {
    x.require_not_apex()?;
    check_dims(x.dim(), stage.dim(), "residual")?;
    let theta = angle_between(x.direction(), &stage.axis);
    Ok(kind.residual(theta - stage.opening, x.size()))
}

/// Counterclockwise angle in `(−π, π]` from a planar axis to `x`.
pub fn signed_angle_2d(x: &ConePoint, axis: &Vector) -> Result<f64> {
    x.require_not_apex()?;
    if x.dim() != 2 || axis.len() != 2 {
        return Err(PncError::DimensionMismatch {
            context: "signed_angle_2d",
            expected: 2,
            found: x.dim().max(axis.len()),
        });
    }
    Ok(planar_angle(x.ambient(), axis))
}

#[inline]
pub(crate) fn planar_angle(x: &Vector, axis: &Vector) -> f64 {
    let det = axis[0] * x[1] - axis[1] * x[0];
    let dot = axis[0] * x[0] + axis[1] * x[1];
    det.atan2(dot)
}

/// Rotates `axis` onto `e_m`, drops the last coordinate, and rescales to the
/// original size. The result depends only on the direction of `x` about the
/// axis, never on the opening.
pub fn map_down(x: &ConePoint, axis: &Vector) -> Result<ConePoint> {
    x.require_not_apex()?;
    check_dims(x.dim(), axis.len(), "map_down")?;
    if x.dim() < 3 {
        return Err(PncError::param("map_down needs at least 3 coordinates"));
    }
    let rot = Rotation::to_last_axis(axis);
    let (_, w) = polar_about(x.direction(), axis);
    ConePoint::new(lower_direction(&rot, &w) * x.size())
}

/// First `m − 1` coordinates of `R·w`, renormalised; `R·w ⟂ e_m` for `w ⟂ v`.
pub(crate) fn lower_direction(rot: &Rotation, w: &Vector) -> Vector {
    let m = rot.dim();
    let rw = rot.apply(w);
    let low = rw.rows(0, m - 1).into_owned();
    let n = low.norm();
    low / n
}

fn check_dims(a: usize, b: usize, context: &'static str) -> Result<()> {
    if a != b {
        return Err(PncError::DimensionMismatch { context, expected: b, found: a });
    }
    Ok(())
}

/// Chart flattening a hypercone into a Euclidean sector.
///
/// The angular component of a point (its direction on the base sphere
/// `S^{m−2}`) is written in geodesic polar coordinates about a reference
/// direction; the polar angle is scaled by `sin α` and the size becomes the
/// radius. Distances to points on the reference ray are exact cone geodesic
/// distances. On a 3-D cone this is the familiar unrolled sector with the cut
/// opposite the reference; in higher dimensions the base sphere is curved and
/// no single chart is isometric for every pair, so for a given pair use
/// [`SectorChart::anchored_at`] one of its points.
#[derive(Debug, Clone)]
pub struct SectorChart {
    axis: Vector,
    opening: f64,
    rotation: Rotation,
    reference: Vector,
    reference_rotation: Rotation,
}

impl SectorChart {
    /// Chart whose reference ray has all base angles zero (the first
    /// coordinate direction after rotating the axis onto `e_m`).
    pub fn standard(axis: &Vector, opening: f64) -> Result<Self> {
        let m = axis.len();
        if m < 3 {
            return Err(PncError::param("sector charts need at least 3 coordinates"));
        }
        let mut reference = Vector::zeros(m - 1);
        reference[0] = 1.0;
        Self::with_reference(axis, opening, reference)
    }

    /// Chart centred on the angular position of `p`.
    pub fn anchored_at(axis: &Vector, opening: f64, p: &ConePoint) -> Result<Self> {
        let base = Self::standard(axis, opening)?;
        let reference = base.base_direction(p)?;
        Self::with_reference(axis, opening, reference)
    }

    fn with_reference(axis: &Vector, opening: f64, reference: Vector) -> Result<Self> {
        check_opening(opening)?;
        if !(opening > 0.0) {
            return Err(PncError::domain("a cone with zero opening has no sector"));
        }
        let n = axis.norm();
        if !((n - 1.0).abs() <= 1e-10) {
            return Err(PncError::param(format!("cone axis must have unit norm, has norm {n}")));
        }
        Ok(Self {
            axis: axis.clone(),
            opening,
            rotation: Rotation::to_last_axis(axis),
            reference_rotation: Rotation::to_last_axis(&reference),
            reference,
        })
    }

    /// Unit direction of `p` on the base sphere, in the rotated frame.
    fn base_direction(&self, p: &ConePoint) -> Result<Vector> {
        p.require_not_apex()?;
        check_dims(p.dim(), self.axis.len(), "flatten_to_sector")?;
        let angle = angle_between(p.direction(), &self.axis);
        if (angle - self.opening).abs() > 1e-8 {
            return Err(PncError::NotOnCone { angle, opening: self.opening });
        }
        let m = self.axis.len();
        let low = self.rotation.apply(p.direction()).rows(0, m - 1).into_owned();
        let n = low.norm();
        Ok(low / n)
    }

    /// Flattened coordinates of an on-cone point (length `m − 1`, norm `‖p‖`).
    pub fn flatten(&self, p: &ConePoint) -> Result<Vector> {
        let b = self.base_direction(p)?;
        let k = self.reference.len();
        let scale = self.opening.sin();
        let (theta, t) = if k == 1 {
            // Base sphere S^0: the two directions are ±reference.
            let theta = if b[0] * self.reference[0] >= 0.0 { 0.0 } else { PI };
            (theta, None)
        } else {
            let along = b.dot(&self.reference);
            let mut t = &b - &self.reference * along;
            let tn = t.norm();
            let theta = tn.atan2(along);
            if tn > 0.0 {
                t /= tn;
                (theta, Some(t))
            } else {
                (theta, None)
            }
        };
        let r = p.size();
        let (s, c) = (scale * theta).sin_cos();
        let mut out = Vector::zeros(k);
        out[0] = r * c;
        if let Some(t) = t {
            let local = self.reference_rotation.apply(&t);
            for i in 0..k - 1 {
                out[i + 1] = r * s * local[i];
            }
        } else if s != 0.0 && k > 1 {
            out[1] = r * s;
        }
        Ok(out)
    }
}

/// Flattens `p` with the standard chart of the cone `(axis, opening)`.
pub fn flatten_to_sector(p: &ConePoint, axis: &Vector, opening: f64) -> Result<Vector> {
    SectorChart::standard(axis, opening)?.flatten(p)
}
