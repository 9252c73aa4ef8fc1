//! Grid tiling, overlay rendering, and coordinate-frame bookkeeping.
//!
//! A [`GridSpec`] divides an image into `columns x rows` cells whose
//! boundaries sit at `round(i * W / columns)`, so the cells partition the
//! image exactly even when the divisions are fractional. Cells are indexed
//! row-major: index `i` is column `i % columns`, row `i / columns`.
//!
//! Later pipeline stages query cropped or rotated variants of the root
//! image. Every derived image carries a [`FrameTransform`] so points chosen
//! in the derived frame can be mapped back into root-image coordinates.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, RectMask};

mod font;

#[derive(Debug, Error, PartialEq)]
pub enum TilingError {
    #[error("grid must have at least one column and one row")]
    EmptyGrid,
    #[error("grid {columns}x{rows} does not fit image {width}x{height}")]
    GridLargerThanImage { columns: u32, rows: u32, width: u32, height: u32 },
    #[error("cell index out of bounds: {index} >= {cells}")]
    CellIndexOutOfBounds { index: usize, cells: usize },
    #[error("cannot derive a crop window from an empty mask set")]
    EmptyMaskSet,
    #[error("margin fraction must be finite and non-negative, got {0}")]
    InvalidMargin(f64),
}

/// A `columns x rows` grid over a specific image size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub columns: u32,
    pub rows: u32,
    pub image_width: u32,
    pub image_height: u32,
}

impl GridSpec {
    pub fn new(columns: u32, rows: u32, image_width: u32, image_height: u32) -> Result<Self, TilingError> {
        if columns == 0 || rows == 0 || image_width == 0 || image_height == 0 {
            return Err(TilingError::EmptyGrid);
        }
        if columns > image_width || rows > image_height {
            return Err(TilingError::GridLargerThanImage {
                columns,
                rows,
                width: image_width,
                height: image_height,
            });
        }
        Ok(Self { columns, rows, image_width, image_height })
    }

    pub fn cell_count(&self) -> usize {
        self.columns as usize * self.rows as usize
    }

    /// Column boundaries, `columns + 1` strictly increasing values from 0 to
    /// the image width.
    pub fn x_boundaries(&self) -> Vec<u32> {
        boundaries(self.columns, self.image_width)
    }

    /// Row boundaries, `rows + 1` strictly increasing values from 0 to the
    /// image height.
    pub fn y_boundaries(&self) -> Vec<u32> {
        boundaries(self.rows, self.image_height)
    }

    /// Row-major index of the cell containing `p`. Points outside the image
    /// are clamped to the nearest edge cell first.
    pub fn cell_index_containing(&self, p: &Point) -> usize {
        let col = span_index(&self.x_boundaries(), p.x);
        let row = span_index(&self.y_boundaries(), p.y);
        row * self.columns as usize + col
    }
}

fn boundaries(n: u32, len: u32) -> Vec<u32> {
    (0..=n)
        .map(|i| (i as f64 * len as f64 / n as f64).round() as u32)
        .collect()
}

fn span_index(bounds: &[u32], coord: f64) -> usize {
    let cells = bounds.len() - 1;
    for i in 0..cells {
        if coord < bounds[i + 1] as f64 {
            return i;
        }
    }
    cells - 1
}

/// All cells of the grid in row-major order. The cells are pairwise disjoint
/// and cover the image exactly; each dimension is within 1 px of the ideal
/// fractional cell size.
pub fn tile(grid: &GridSpec) -> Vec<RectMask> {
    let xs = grid.x_boundaries();
    let ys = grid.y_boundaries();
    let mut cells = Vec::with_capacity(grid.cell_count());
    for r in 0..grid.rows as usize {
        for c in 0..grid.columns as usize {
            cells.push(RectMask::new(
                xs[c],
                ys[r],
                xs[c + 1] - xs[c],
                ys[r + 1] - ys[r],
            ));
        }
    }
    cells
}

/// The mask of one cell by row-major index.
pub fn cell_mask(grid: &GridSpec, index: usize) -> Result<RectMask, TilingError> {
    if index >= grid.cell_count() {
        return Err(TilingError::CellIndexOutOfBounds { index, cells: grid.cell_count() });
    }
    let xs = grid.x_boundaries();
    let ys = grid.y_boundaries();
    let c = index % grid.columns as usize;
    let r = index / grid.columns as usize;
    Ok(RectMask::new(xs[c], ys[r], xs[c + 1] - xs[c], ys[r + 1] - ys[r]))
}

/// One step of a coordinate-frame derivation, applied root -> derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FrameStep {
    /// Derived frame is a translated window of the parent frame.
    Crop { dx: f64, dy: f64 },
    /// Derived frame is the parent rotated by `angle_deg` about the parent
    /// center onto an expanded canvas.
    Rotation {
        angle_deg: f64,
        center_x: f64,
        center_y: f64,
        offset_x: f64,
        offset_y: f64,
    },
}

impl FrameStep {
    fn forward(&self, p: Point) -> Point {
        match *self {
            FrameStep::Crop { dx, dy } => Point::new(p.x - dx, p.y - dy),
            FrameStep::Rotation { angle_deg, center_x, center_y, offset_x, offset_y } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let x = p.x - center_x;
                let y = p.y - center_y;
                Point::new(c * x - s * y + offset_x, s * x + c * y + offset_y)
            }
        }
    }

    fn backward(&self, p: Point) -> Point {
        match *self {
            FrameStep::Crop { dx, dy } => Point::new(p.x + dx, p.y + dy),
            FrameStep::Rotation { angle_deg, center_x, center_y, offset_x, offset_y } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let x = p.x - offset_x;
                let y = p.y - offset_y;
                Point::new(c * x + s * y + center_x, -s * x + c * y + center_y)
            }
        }
    }
}

/// Mapping between root-image coordinates and a derived frame (identity,
/// crop, rotation, or any composition of those).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    steps: Vec<FrameStep>,
}

impl FrameTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn crop(dx: f64, dy: f64) -> Self {
        Self { steps: vec![FrameStep::Crop { dx, dy }] }
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }

    /// Compose: first map through `self`, then through `next`.
    pub fn then(&self, next: &FrameTransform) -> Self {
        let mut steps = self.steps.clone();
        steps.extend(next.steps.iter().cloned());
        Self { steps }
    }

    /// Root frame -> derived frame.
    pub fn forward(&self, p: Point) -> Point {
        self.steps.iter().fold(p, |p, s| s.forward(p))
    }

    /// Derived frame -> root frame. Inverse of [`forward`](Self::forward)
    /// to within 1e-6 px.
    pub fn to_original_frame(&self, p: Point) -> Point {
        self.steps.iter().rev().fold(p, |p, s| s.backward(p))
    }
}

/// Crop rectangle derived from a set of masks, with the margin that was
/// applied to each side before clamping to the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    pub rect: RectMask,
    pub margin_px: u32,
}

/// Bounding box of the union of `masks`, expanded on every side by
/// `margin_frac` times the box diagonal, clamped to the image.
pub fn crop_window_from_masks(
    masks: &[RectMask],
    image_width: u32,
    image_height: u32,
    margin_frac: f64,
) -> Result<CropWindow, TilingError> {
    if masks.is_empty() {
        return Err(TilingError::EmptyMaskSet);
    }
    if !margin_frac.is_finite() || margin_frac < 0.0 {
        return Err(TilingError::InvalidMargin(margin_frac));
    }
    let x0 = masks.iter().map(|m| m.x0).min().unwrap() as i64;
    let y0 = masks.iter().map(|m| m.y0).min().unwrap() as i64;
    let x1 = masks.iter().map(|m| m.x1()).max().unwrap() as i64;
    let y1 = masks.iter().map(|m| m.y1()).max().unwrap() as i64;
    let diagonal = ((x1 - x0) as f64).hypot((y1 - y0) as f64);
    let margin = (margin_frac * diagonal).round() as i64;

    let cx0 = (x0 - margin).clamp(0, image_width as i64 - 1);
    let cy0 = (y0 - margin).clamp(0, image_height as i64 - 1);
    let cx1 = (x1 + margin).clamp(cx0 + 1, image_width as i64);
    let cy1 = (y1 + margin).clamp(cy0 + 1, image_height as i64);
    Ok(CropWindow {
        rect: RectMask::new(cx0 as u32, cy0 as u32, (cx1 - cx0) as u32, (cy1 - cy0) as u32),
        margin_px: margin as u32,
    })
}

/// Extract the pixels of a crop window together with its frame transform.
pub fn crop_image(image: &RgbImage, window: &CropWindow) -> (RgbImage, FrameTransform) {
    let r = window.rect;
    let view = image::imageops::crop_imm(image, r.x0, r.y0, r.width, r.height);
    (view.to_image(), FrameTransform::crop(r.x0 as f64, r.y0 as f64))
}

const ROTATION_FILL: Rgb<u8> = Rgb([128, 128, 128]);

/// Rotate an image by `angle_deg` about its center onto an expanded canvas
/// that loses no content. Out-of-source pixels are mid-gray. The returned
/// transform maps root-frame points into the rotated frame; its
/// [`FrameTransform::to_original_frame`] inverts that to within 1e-6 px.
pub fn rotate_image(image: &RgbImage, angle_deg: f64) -> (RgbImage, FrameTransform) {
    if angle_deg == 0.0 {
        return (image.clone(), FrameTransform::identity());
    }
    let (w, h) = (image.width() as f64, image.height() as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (s, c) = angle_deg.to_radians().sin_cos();

    let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
    let mapped: Vec<(f64, f64)> = corners
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = (x - cx, y - cy);
            (c * dx - s * dy, s * dx + c * dy)
        })
        .collect();
    let min_x = mapped.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = mapped.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = mapped.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = mapped.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    // Right-angle rotations give integer spans plus rounding dust; absorb
    // the dust so the ceiling doesn't inflate the canvas by a pixel.
    let out_w = ((max_x - min_x) - 1e-6).ceil().max(1.0) as u32;
    let out_h = ((max_y - min_y) - 1e-6).ceil().max(1.0) as u32;

    let transform = FrameTransform {
        steps: vec![FrameStep::Rotation {
            angle_deg,
            center_x: cx,
            center_y: cy,
            offset_x: -min_x,
            offset_y: -min_y,
        }],
    };

    let mut out = RgbImage::from_pixel(out_w, out_h, ROTATION_FILL);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let dst = Point::new(ox as f64 + 0.5, oy as f64 + 0.5);
            let src = transform.to_original_frame(dst);
            if src.x < 0.0 || src.x >= w || src.y < 0.0 || src.y >= h {
                continue;
            }
            out.put_pixel(ox, oy, sample_bilinear(image, src.x - 0.5, src.y - 0.5));
        }
    }
    (out, transform)
}

/// Bilinear sample at pixel-center coordinates, clamping taps to the image.
fn sample_bilinear(image: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let max_x = image.width() as i64 - 1;
    let max_y = image.height() as i64 - 1;
    let fx = x.floor();
    let fy = y.floor();
    let tx = x - fx;
    let ty = y - fy;
    let x0 = (fx as i64).clamp(0, max_x);
    let y0 = (fy as i64).clamp(0, max_y);
    let x1 = (x0 + 1).min(max_x);
    let y1 = (y0 + 1).min(max_y);
    let p00 = image.get_pixel(x0 as u32, y0 as u32);
    let p10 = image.get_pixel(x1 as u32, y0 as u32);
    let p01 = image.get_pixel(x0 as u32, y1 as u32);
    let p11 = image.get_pixel(x1 as u32, y1 as u32);
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let top = p00.0[ch] as f64 * (1.0 - tx) + p10.0[ch] as f64 * tx;
        let bot = p01.0[ch] as f64 * (1.0 - tx) + p11.0[ch] as f64 * tx;
        out[ch] = (top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// How grid overlays are drawn onto images sent to the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlayMode {
    /// Grid lines plus cell-index labels.
    Grid,
    /// Send the raw image untouched.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayStyle {
    pub mode: OverlayMode,
    pub line_rgb: [u8; 3],
    /// Line band width in pixels; 0 draws labels only.
    pub line_thickness: u32,
    pub draw_labels: bool,
    pub label_scale: u32,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            mode: OverlayMode::Grid,
            line_rgb: [255, 0, 0],
            line_thickness: 2,
            draw_labels: true,
            label_scale: 2,
        }
    }
}

/// An overlaid image plus the indices of cells too small for their label.
#[derive(Debug)]
pub struct OverlayOutput {
    pub image: RgbImage,
    pub skipped_labels: Vec<usize>,
}

/// Draw interior grid lines and per-cell labels (`index (col,row)` at each
/// cell's top-left, falling back to the bare index where the full form does
/// not fit). Image dimensions are preserved; cells too small to hold even
/// the bare index keep no label and are reported in `skipped_labels`.
pub fn render_grid_overlay(image: &RgbImage, grid: &GridSpec, style: &OverlayStyle) -> OverlayOutput {
    let mut out = image.clone();
    let color = Rgb(style.line_rgb);
    let t = style.line_thickness;
    let (w, h) = (image.width(), image.height());

    if t > 0 {
        let xs = grid.x_boundaries();
        for &bx in &xs[1..xs.len() - 1] {
            let start = (bx as i64 - (t / 2) as i64).clamp(0, w as i64 - 1) as u32;
            let end = (start + t).min(w);
            for y in 0..h {
                for x in start..end {
                    out.put_pixel(x, y, color);
                }
            }
        }
        let ys = grid.y_boundaries();
        for &by in &ys[1..ys.len() - 1] {
            let start = (by as i64 - (t / 2) as i64).clamp(0, h as i64 - 1) as u32;
            let end = (start + t).min(h);
            for y in start..end {
                for x in 0..w {
                    out.put_pixel(x, y, color);
                }
            }
        }
    }

    let mut skipped = Vec::new();
    if style.draw_labels {
        let scale = style.label_scale.max(1);
        let pad = t + 2;
        for (i, cell) in tile(grid).iter().enumerate() {
            let col = i % grid.columns as usize;
            let row = i / grid.columns as usize;
            let fits = |text: &str| {
                let (tw, th) = font::measure(text, scale);
                cell.width >= tw + 2 * pad && cell.height >= th + 2 * pad
            };
            let full = format!("{i} ({col},{row})");
            let text = if fits(&full) {
                full
            } else if fits(&i.to_string()) {
                i.to_string()
            } else {
                skipped.push(i);
                continue;
            };
            font::draw(&mut out, cell.x0 + pad, cell.y0 + pad, &text, scale, color);
        }
    }
    OverlayOutput { image: out, skipped_labels: skipped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boundaries_of_10_by_3_round_to_nearest() {
        let g = GridSpec::new(3, 3, 10, 10).unwrap();
        assert_eq!(g.x_boundaries(), vec![0, 3, 7, 10]);
    }

    #[test]
    fn tile_partitions_exactly() {
        for (u, v, w, h) in [(3, 3, 10, 10), (4, 7, 97, 53), (9, 9, 9, 9), (1, 1, 5, 8)] {
            let g = GridSpec::new(u, v, w, h).unwrap();
            let cells = tile(&g);
            assert_eq!(cells.len(), (u * v) as usize);
            let mut hits = vec![0u8; (w * h) as usize];
            for cell in &cells {
                for y in cell.y0..cell.y1() as u32 {
                    for x in cell.x0..cell.x1() as u32 {
                        hits[(y * w + x) as usize] += 1;
                    }
                }
            }
            assert!(hits.iter().all(|&c| c == 1), "grid {u}x{v} on {w}x{h}");
            for cell in &cells {
                assert!((cell.width as f64 - w as f64 / u as f64).abs() <= 1.0);
                assert!((cell.height as f64 - h as f64 / v as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn grid_must_fit_image() {
        assert!(matches!(
            GridSpec::new(9, 9, 4, 100),
            Err(TilingError::GridLargerThanImage { .. })
        ));
        assert_eq!(GridSpec::new(0, 3, 10, 10), Err(TilingError::EmptyGrid));
    }

    #[test]
    fn cell_mask_is_row_major() {
        let g = GridSpec::new(4, 3, 80, 60).unwrap();
        let m = cell_mask(&g, 5).unwrap();
        // index 5 -> col 1, row 1
        assert_eq!(m, RectMask::new(20, 20, 20, 20));
        assert!(matches!(
            cell_mask(&g, 12),
            Err(TilingError::CellIndexOutOfBounds { index: 12, cells: 12 })
        ));
    }

    #[test]
    fn cell_index_containing_inverts_cell_mask() {
        let g = GridSpec::new(5, 4, 123, 77).unwrap();
        for i in 0..g.cell_count() {
            let c = cell_mask(&g, i).unwrap().center();
            assert_eq!(g.cell_index_containing(&c), i);
        }
        // Out-of-image points clamp to edge cells.
        assert_eq!(g.cell_index_containing(&Point::new(-5.0, -5.0)), 0);
        assert_eq!(
            g.cell_index_containing(&Point::new(1e9, 1e9)),
            g.cell_count() - 1
        );
    }

    #[test]
    fn crop_window_zero_margin_is_bbox() {
        let masks = [RectMask::new(10, 20, 30, 10), RectMask::new(25, 5, 10, 40)];
        let w = crop_window_from_masks(&masks, 200, 200, 0.0).unwrap();
        assert_eq!(w.rect, RectMask::new(10, 5, 30, 40));
        assert_eq!(w.margin_px, 0);
    }

    #[test]
    fn crop_window_large_margin_clamps_to_image() {
        let masks = [RectMask::new(50, 50, 20, 20)];
        let w = crop_window_from_masks(&masks, 100, 100, 10.0).unwrap();
        assert_eq!(w.rect, RectMask::new(0, 0, 100, 100));
    }

    #[test]
    fn crop_window_default_margin_expands_by_diag_fraction() {
        let masks = [RectMask::new(100, 100, 30, 40)];
        // diagonal 50, margin 5
        let w = crop_window_from_masks(&masks, 500, 500, 0.1).unwrap();
        assert_eq!(w.margin_px, 5);
        assert_eq!(w.rect, RectMask::new(95, 95, 40, 50));
    }

    #[test]
    fn crop_window_requires_masks() {
        assert_eq!(
            crop_window_from_masks(&[], 10, 10, 0.1),
            Err(TilingError::EmptyMaskSet)
        );
    }

    #[test]
    fn rotate_by_zero_is_identity() {
        let img = RgbImage::from_fn(8, 6, |x, y| Rgb([x as u8, y as u8, 7]));
        let (rot, t) = rotate_image(&img, 0.0);
        assert_eq!(rot, img);
        assert!(t.is_identity());
    }

    #[test]
    fn rotate_by_90_swaps_canvas() {
        let img = RgbImage::new(40, 20);
        let (rot, t) = rotate_image(&img, 90.0);
        assert_eq!((rot.width(), rot.height()), (20, 40));
        // Center maps to center.
        let c = t.forward(Point::new(20.0, 10.0));
        assert!((c.x - 10.0).abs() < 1e-9 && (c.y - 20.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_keeps_all_content() {
        // A lone white pixel must survive any rotation somewhere on canvas.
        let mut img = RgbImage::new(30, 30);
        img.put_pixel(2, 27, Rgb([255, 255, 255]));
        for angle in [17.0, -33.0, 45.0, 160.0] {
            let (rot, t) = rotate_image(&img, angle);
            let p = t.forward(Point::new(2.5, 27.5));
            assert!(p.x >= 0.0 && p.x <= rot.width() as f64);
            assert!(p.y >= 0.0 && p.y <= rot.height() as f64);
            let px = rot.get_pixel(
                (p.x as u32).min(rot.width() - 1),
                (p.y as u32).min(rot.height() - 1),
            );
            assert!(px.0[0] > 60, "angle {angle}: lost the bright pixel");
        }
    }

    #[test]
    fn transforms_compose() {
        let crop = FrameTransform::crop(10.0, 5.0);
        let (_, rot) = rotate_image(&RgbImage::new(50, 40), -30.0);
        let chain = crop.then(&rot);
        let p = Point::new(33.0, 21.0);
        let fwd = chain.forward(p);
        let back = chain.to_original_frame(fwd);
        assert!(p.distance(&back) < 1e-9);
    }

    #[test]
    fn overlay_preserves_dims_and_paints_lines() {
        let img = RgbImage::from_pixel(90, 90, Rgb([10, 10, 10]));
        let g = GridSpec::new(3, 3, 90, 90).unwrap();
        let style = OverlayStyle::default();
        let out = render_grid_overlay(&img, &g, &style);
        assert_eq!((out.image.width(), out.image.height()), (90, 90));
        // Vertical boundary at x=30: band covers x=29..30.
        assert_eq!(*out.image.get_pixel(29, 50), Rgb([255, 0, 0]));
        assert_eq!(*out.image.get_pixel(30, 50), Rgb([255, 0, 0]));
        // A pixel well inside a cell, away from labels, is untouched.
        assert_eq!(*out.image.get_pixel(75, 75), Rgb([10, 10, 10]));
        assert!(out.skipped_labels.is_empty());
    }

    #[test]
    fn overlay_one_by_one_has_no_interior_lines() {
        let img = RgbImage::from_pixel(40, 40, Rgb([7, 7, 7]));
        let g = GridSpec::new(1, 1, 40, 40).unwrap();
        let style = OverlayStyle { draw_labels: false, ..OverlayStyle::default() };
        let out = render_grid_overlay(&img, &g, &style);
        assert_eq!(out.image, img);
    }

    #[test]
    fn overlay_zero_thickness_draws_labels_only() {
        let img = RgbImage::from_pixel(120, 120, Rgb([0, 0, 0]));
        let g = GridSpec::new(2, 2, 120, 120).unwrap();
        let style = OverlayStyle { line_thickness: 0, ..OverlayStyle::default() };
        let out = render_grid_overlay(&img, &g, &style);
        // No line pixels at the boundary column, outside the label area.
        assert_eq!(*out.image.get_pixel(60, 110), Rgb([0, 0, 0]));
        // But some label pixels exist near a cell origin.
        let mut any = false;
        for y in 0..20 {
            for x in 0..40 {
                if *out.image.get_pixel(x, y) != Rgb([0, 0, 0]) {
                    any = true;
                }
            }
        }
        assert!(any, "expected label pixels");
    }

    #[test]
    fn overlay_skips_labels_in_tiny_cells() {
        let img = RgbImage::from_pixel(27, 27, Rgb([0, 0, 0]));
        let g = GridSpec::new(9, 9, 27, 27).unwrap();
        let out = render_grid_overlay(&img, &g, &OverlayStyle::default());
        assert_eq!(out.skipped_labels.len(), 81);
    }

    proptest! {
        #[test]
        fn tiles_partition_for_all_grid_sizes(
            u in 1u32..10, v in 1u32..10, w in 10u32..140, h in 10u32..140,
        ) {
            let g = GridSpec::new(u, v, w, h).unwrap();
            let cells = tile(&g);
            let area: u64 = cells.iter().map(|c| c.area()).sum();
            prop_assert_eq!(area, w as u64 * h as u64);
            let mut hits = vec![0u8; (w * h) as usize];
            for cell in &cells {
                for y in cell.y0..cell.y1() as u32 {
                    for x in cell.x0..cell.x1() as u32 {
                        hits[(y * w + x) as usize] += 1;
                    }
                }
            }
            prop_assert!(hits.iter().all(|&c| c == 1));
        }

        #[test]
        fn frame_roundtrip_is_identity(
            angle in -180.0..180.0f64,
            dx in 0.0..200.0f64,
            dy in 0.0..200.0f64,
            px in -300.0..300.0f64,
            py in -300.0..300.0f64,
        ) {
            let (_, rot) = rotate_image(&RgbImage::new(64, 48), angle);
            let chain = FrameTransform::crop(dx, dy).then(&rot);
            let p = Point::new(px, py);
            let round = chain.to_original_frame(chain.forward(p));
            prop_assert!(p.distance(&round) < 1e-6);
        }
    }
}
