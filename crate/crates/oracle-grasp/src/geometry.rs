//! Planar primitives shared by every pipeline stage.
//!
//! Coordinates are continuous image coordinates: x grows rightward, y grows
//! downward, and angles follow the same convention (degrees, measured from
//! the +x axis toward +y). Grasp orientations are undirected, so every angle
//! that leaves this module is normalized into `[0, 180)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative eigenvalue gap under which a point spread is treated as
/// isotropic and the principal direction is considered meaningless.
pub const ISOTROPY_REL_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("degenerate point set: need at least 2 points, got {0}")]
    DegeneratePointSet(usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("point has non-finite coordinates")]
    NonFinitePoint,
}

/// A location in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// An axis-aligned pixel rectangle covering the half-open spans
/// `[x0, x0 + width) x [y0, y0 + height)`. Width and height are always >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectMask {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl RectMask {
    pub fn new(x0: u32, y0: u32, width: u32, height: u32) -> Self {
        assert!(width >= 1 && height >= 1, "rect must cover at least 1 px");
        Self { x0, y0, width, height }
    }

    /// Exclusive right edge.
    pub fn x1(&self) -> u64 {
        self.x0 as u64 + self.width as u64
    }

    /// Exclusive bottom edge.
    pub fn y1(&self) -> u64 {
        self.y0 as u64 + self.height as u64
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn center(&self) -> Point {
        Point::new(
            self.x0 as f64 + self.width as f64 / 2.0,
            self.y0 as f64 + self.height as f64 / 2.0,
        )
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x0 as f64
            && p.x < self.x1() as f64
            && p.y >= self.y0 as f64
            && p.y < self.y1() as f64
    }
}

/// Intersection of two pixel rectangles, or `None` when they share no pixel.
/// Rectangles that only touch along an edge do not intersect (spans are
/// half-open).
pub fn rect_intersection(a: &RectMask, b: &RectMask) -> Option<RectMask> {
    let x0 = a.x0.max(b.x0) as u64;
    let y0 = a.y0.max(b.y0) as u64;
    let x1 = a.x1().min(b.x1());
    let y1 = a.y1().min(b.y1());
    if x1 > x0 && y1 > y0 {
        Some(RectMask::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
    } else {
        None
    }
}

/// Intersection-over-union of two pixel rectangles, in `[0, 1]`.
pub fn rect_iou(a: &RectMask, b: &RectMask) -> f64 {
    let inter = match rect_intersection(a, b) {
        Some(r) => r.area(),
        None => return 0.0,
    };
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Arithmetic mean of a point set.
pub fn centroid(points: &[Point]) -> Result<Point, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    for p in points {
        if !p.is_finite() {
            return Err(GeometryError::NonFinitePoint);
        }
        sx += p.x;
        sy += p.y;
    }
    let n = points.len() as f64;
    Ok(Point::new(sx / n, sy / n))
}

/// Largest distance from `center` to any point of the set.
pub fn max_spread(points: &[Point], center: &Point) -> Result<f64, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    Ok(points
        .iter()
        .map(|p| p.distance(center))
        .fold(0.0, f64::max))
}

/// Dominant spread direction of a point set.
///
/// `direction` is the unit eigenvector of the larger eigenvalue of the 2x2
/// population covariance (normalized by `n`, not `n - 1`). `anisotropy` is
/// the eigenvalue ratio; sets whose eigenvalues agree to within
/// [`ISOTROPY_REL_TOL`] (relative) are flagged `isotropic` and get the
/// deterministic direction `(1, 0)` with anisotropy exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAxis {
    pub direction: (f64, f64),
    /// Eigenvalues of the covariance, `lambda1 >= lambda2 >= 0`.
    pub eigenvalues: (f64, f64),
    pub anisotropy: f64,
    pub isotropic: bool,
}

pub fn principal_axis(points: &[Point]) -> Result<PrincipalAxis, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::DegeneratePointSet(points.len()));
    }
    let c = centroid(points)?;
    let n = points.len() as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p.x - c.x;
        let dy = p.y - c.y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    sxx /= n;
    sxy /= n;
    syy /= n;

    // Closed-form eigendecomposition of [[sxx, sxy], [sxy, syy]].
    let half_trace = (sxx + syy) / 2.0;
    let half_gap = ((sxx - syy) / 2.0).hypot(sxy);
    let lambda1 = half_trace + half_gap;
    let lambda2 = (half_trace - half_gap).max(0.0);

    if lambda1 <= 0.0 || (lambda1 - lambda2) <= ISOTROPY_REL_TOL * lambda1 {
        return Ok(PrincipalAxis {
            direction: (1.0, 0.0),
            eigenvalues: (lambda1, lambda2),
            anisotropy: 1.0,
            isotropic: true,
        });
    }

    let (vx, vy) = if sxy != 0.0 {
        (lambda1 - syy, sxy)
    } else if sxx >= syy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let norm = vx.hypot(vy);
    let anisotropy = lambda1 / (lambda2 + f64::EPSILON);
    Ok(PrincipalAxis {
        direction: (vx / norm, vy / norm),
        eigenvalues: (lambda1, lambda2),
        anisotropy,
        isotropic: false,
    })
}

/// Undirected angle of a vector in degrees, normalized into `[0, 180)`.
pub fn angle_from_vector(vx: f64, vy: f64) -> Result<f64, GeometryError> {
    if vx == 0.0 && vy == 0.0 {
        return Err(GeometryError::ZeroVector);
    }
    if !(vx.is_finite() && vy.is_finite()) {
        return Err(GeometryError::NonFinitePoint);
    }
    let deg = vy.atan2(vx).to_degrees().rem_euclid(180.0);
    // rem_euclid can land exactly on 180.0 for angles a hair below zero.
    Ok(if deg >= 180.0 { 0.0 } else { deg })
}

/// Distance between two undirected angles, in degrees. Always in `[0, 90]`.
pub fn angular_distance_mod180(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(180.0);
    d.min(180.0 - d)
}
