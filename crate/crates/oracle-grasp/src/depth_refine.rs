//! Depth-based grasp refinement.
//!
//! A gripper approaching along the camera axis first meets the surface
//! closest to the camera near the grasp point. Given the predicted point
//! `p`, this stage samples depths `z_j = (j / w) * z_p` between the camera
//! and the scene depth `z_p` at `p`, converts the gripper's physical
//! clearance radius into pixels at each sampled depth
//! (`r(z) = focal_px * radius_m / z`), and searches each disc of radius
//! `r(z_j)` around `p` for the minimal valid depth. The global minimum over
//! all discs relocates the grasp to the closest reachable surface; the
//! grasp orientation is never touched here.
//!
//! Pixel convention: pixel `(x, y)` sits at integer coordinates, and a disc
//! includes a pixel iff the pixel's distance to the disc center is at most
//! the radius. Tied minima resolve to the pixel nearest the disc center,
//! then in row-major order, so results are exactly reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("depth buffer length {got} does not match {width}x{height}")]
    BufferSizeMismatch { width: u32, height: u32, got: usize },
    #[error("invalid depth {0} (must be positive and finite)")]
    InvalidDepth(f64),
    #[error("focal length must be positive, got {0}")]
    InvalidFocal(f64),
    #[error("gripper radius must be positive, got {0}")]
    InvalidGripperRadius(f64),
    #[error("depth sample count must be at least 1")]
    InvalidSampleCount,
    #[error("grasp point ({x}, {y}) lies outside the {width}x{height} depth map")]
    PointOutsideImage { x: f64, y: f64, width: u32, height: u32 },
}

/// Sentinel values marking pixels with no depth reading.
const INVALID_MIN: u16 = 0;
const INVALID_MAX: u16 = u16::MAX;

/// Per-pixel depth in millimeters. Values 0 and 65535 mark invalid pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<u16>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<u16>) -> Result<Self, DepthError> {
        if data.len() != width as usize * height as usize {
            return Err(DepthError::BufferSizeMismatch { width, height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    /// Depth at a pixel, or `None` when out of bounds or invalid.
    pub fn get(&self, x: u32, y: u32) -> Option<u16> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let v = self.data[(y * self.width + x) as usize];
        if v == INVALID_MIN || v == INVALID_MAX {
            None
        } else {
            Some(v)
        }
    }
}

/// The only intrinsic the refinement needs: focal length in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
}

impl CameraIntrinsics {
    pub fn new(focal_px: f64) -> Result<Self, DepthError> {
        if !(focal_px.is_finite() && focal_px > 0.0) {
            return Err(DepthError::InvalidFocal(focal_px));
        }
        Ok(Self { focal_px })
    }
}

/// Physical clearance radius of the end effector, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperSpec {
    pub radius_m: f64,
}

impl GripperSpec {
    pub fn new(radius_m: f64) -> Result<Self, DepthError> {
        if !(radius_m.is_finite() && radius_m > 0.0) {
            return Err(DepthError::InvalidGripperRadius(radius_m));
        }
        Ok(Self { radius_m })
    }
}

/// Pixel radius subtended by a physical radius at depth `z_m` meters:
/// `focal_px * radius_m / z_m`. Monotonically shrinks as depth grows.
pub fn clearance_radius_px(focal_px: f64, radius_m: f64, z_m: f64) -> Result<f64, DepthError> {
    if !(focal_px.is_finite() && focal_px > 0.0) {
        return Err(DepthError::InvalidFocal(focal_px));
    }
    if !(radius_m.is_finite() && radius_m > 0.0) {
        return Err(DepthError::InvalidGripperRadius(radius_m));
    }
    if !(z_m.is_finite() && z_m > 0.0) {
        return Err(DepthError::InvalidDepth(z_m));
    }
    Ok(focal_px * radius_m / z_m)
}

/// Minimal valid depth within a disc, with its pixel location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscMin {
    pub depth_mm: u16,
    pub location: Point,
}

/// Scan the disc of `radius_px` around `center` for the smallest valid
/// depth. Ties resolve to the pixel nearest `center`, then row-major.
/// Returns `None` when the disc holds no valid pixel.
pub fn min_depth_in_disc(depth: &DepthMap, center: &Point, radius_px: f64) -> Option<DiscMin> {
    if radius_px < 0.0 || !radius_px.is_finite() {
        return None;
    }
    let x_lo = ((center.x - radius_px).ceil().max(0.0)) as i64;
    let x_hi = ((center.x + radius_px).floor()).min(depth.width as f64 - 1.0) as i64;
    let y_lo = ((center.y - radius_px).ceil().max(0.0)) as i64;
    let y_hi = ((center.y + radius_px).floor()).min(depth.height as f64 - 1.0) as i64;
    let r2 = radius_px * radius_px;

    let mut best: Option<(u16, f64, i64, i64)> = None;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dx = x as f64 - center.x;
            let dy = y as f64 - center.y;
            let d2 = dx * dx + dy * dy;
            if d2 > r2 {
                continue;
            }
            let Some(v) = depth.get(x as u32, y as u32) else { continue };
            let better = match best {
                None => true,
                Some((bv, bd2, _, _)) => v < bv || (v == bv && d2 < bd2),
            };
            // Row-major scan order settles exact (value, distance) ties.
            if better {
                best = Some((v, d2, x, y));
            }
        }
    }
    best.map(|(v, _, x, y)| DiscMin { depth_mm: v, location: Point::new(x as f64, y as f64) })
}

/// Outcome of [`refine_grasp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedGrasp {
    /// Refined grasp pixel (unchanged when `refined` is false).
    pub position: Point,
    /// Depth at the refined position, when any valid depth was found.
    pub depth_mm: Option<u16>,
    /// The reference depth `z_p` at the original point, when determinable.
    pub reference_depth_mm: Option<u16>,
    /// False when no disc held a valid depth and the input passed through.
    pub refined: bool,
}

/// Radius within which a fallback reference depth is searched when the
/// depth at the grasp point itself is invalid.
const REFERENCE_FALLBACK_RADIUS_PX: f64 = 5.0;

/// Relocate a grasp point onto the closest valid surface reachable within
/// the gripper's depth-dependent clearance. See the module docs for the
/// sampling scheme. The orientation of the grasp is not part of this
/// computation.
pub fn refine_grasp(
    depth: &DepthMap,
    p: &Point,
    intrinsics: &CameraIntrinsics,
    gripper: &GripperSpec,
    samples: u32,
) -> Result<RefinedGrasp, DepthError> {
    if samples == 0 {
        return Err(DepthError::InvalidSampleCount);
    }
    if p.x < 0.0 || p.y < 0.0 || p.x >= depth.width as f64 || p.y >= depth.height as f64 {
        return Err(DepthError::PointOutsideImage {
            x: p.x,
            y: p.y,
            width: depth.width,
            height: depth.height,
        });
    }

    let px = (p.x.round() as u32).min(depth.width - 1);
    let py = (p.y.round() as u32).min(depth.height - 1);
    let z_p = depth.get(px, py).or_else(|| {
        // Invalid reading under the grasp point: fall back to the largest
        // valid depth nearby, the most conservative reachable estimate.
        max_depth_in_disc(depth, p, REFERENCE_FALLBACK_RADIUS_PX)
    });
    let Some(z_p) = z_p else {
        return Ok(RefinedGrasp {
            position: *p,
            depth_mm: None,
            reference_depth_mm: None,
            refined: false,
        });
    };

    let z_p_m = z_p as f64 / 1000.0;
    let mut best: Option<DiscMin> = None;
    for j in 1..=samples {
        let z_j_m = (j as f64 / samples as f64) * z_p_m;
        let radius = clearance_radius_px(intrinsics.focal_px, gripper.radius_m, z_j_m)?;
        let Some(found) = min_depth_in_disc(depth, p, radius) else { continue };
        let take = match &best {
            None => true,
            // Strict: the earliest (largest-radius) disc wins ties, which
            // makes the result identical to a single search of the union.
            Some(b) => found.depth_mm < b.depth_mm,
        };
        if take {
            best = Some(found);
        }
    }

    match best {
        Some(found) => Ok(RefinedGrasp {
            position: found.location,
            depth_mm: Some(found.depth_mm),
            reference_depth_mm: Some(z_p),
            refined: true,
        }),
        None => Ok(RefinedGrasp {
            position: *p,
            depth_mm: Some(z_p),
            reference_depth_mm: Some(z_p),
            refined: false,
        }),
    }
}

fn max_depth_in_disc(depth: &DepthMap, center: &Point, radius_px: f64) -> Option<u16> {
    let x_lo = ((center.x - radius_px).ceil().max(0.0)) as i64;
    let x_hi = ((center.x + radius_px).floor()).min(depth.width as f64 - 1.0) as i64;
    let y_lo = ((center.y - radius_px).ceil().max(0.0)) as i64;
    let y_hi = ((center.y + radius_px).floor()).min(depth.height as f64 - 1.0) as i64;
    let r2 = radius_px * radius_px;
    let mut best: Option<u16> = None;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dx = x as f64 - center.x;
            let dy = y as f64 - center.y;
            if dx * dx + dy * dy > r2 {
                continue;
            }
            if let Some(v) = depth.get(x as u32, y as u32) {
                best = Some(best.map_or(v, |b| b.max(v)));
            }
        }
    }
    best
}
