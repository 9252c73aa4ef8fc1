//! The grasp-prediction pipeline: iterative grid queries, candidate
//! accumulation, early stopping with a crop stage, overlap augmentation,
//! orientation refinement, and pose estimation.
//!
//! One prediction runs a budget of `k` grasp-region queries over a
//! schedule of progressively finer grids. After the first `m` queries the
//! spread of the chosen cell centers is tested against `rho` times the
//! image diagonal; agreement zooms into a cropped window around the
//! selected cells for `m` more queries and, if those agree too, stops
//! early. Overlapping candidate pairs (IoU above `gamma`) contribute
//! their intersection rectangles as extra candidates. When the final
//! center cloud is strongly elongated and tilted, the image is rotated to
//! align that axis with the grid and `m` additional queries refine the
//! cloud. The grasp point is the centroid of all candidate centers in
//! root-image coordinates; the orientation is the principal axis of the
//! centers. A depth map, when present, relocates the point onto the
//! closest reachable surface (never altering the orientation).

use std::fmt;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth_refine::{
    refine_grasp, CameraIntrinsics, DepthError, DepthMap, GripperSpec,
};
use crate::geometry::{
    angle_from_vector, centroid, max_spread, principal_axis, rect_intersection, rect_iou,
    GeometryError, Point, RectMask,
};
use crate::oracle::{
    query_grasp_region, query_scene_context, Oracle, OracleError, OracleTranscript, SceneContext,
};
use crate::tiling::{
    cell_mask, crop_image, crop_window_from_masks, render_grid_overlay, rotate_image,
    FrameTransform, GridSpec, OverlayMode, OverlayStyle, TilingError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error("image is {image_width}x{image_height} but depth map is {depth_width}x{depth_height}")]
    DepthDimensionMismatch {
        image_width: u32,
        image_height: u32,
        depth_width: u32,
        depth_height: u32,
    },
    #[error("no usable grasp candidates (every query slot was discarded)")]
    NoCandidates,
}

/// A pipeline failure carrying the transcript accumulated before the
/// error, so failed sessions remain auditable.
#[derive(Debug)]
pub struct PipelineFailure {
    pub error: PipelineError,
    pub transcript: OracleTranscript,
}

impl fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for PipelineFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// All tunables of one prediction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Grasp-region query budget for the main loop.
    pub k: u32,
    /// Early-stop window: queries before the first agreement test, crop
    /// queries after it, and rotated queries for orientation refinement.
    pub m: u32,
    /// IoU threshold above which a candidate pair's intersection joins
    /// the candidate set.
    pub gamma: f64,
    /// Agreement radius as a fraction of the image diagonal.
    pub rho: f64,
    /// Minimum absolute tilt (degrees) that triggers orientation
    /// refinement.
    pub alpha_min_deg: f64,
    /// Minimum eigenvalue ratio of the center cloud for orientation
    /// refinement; near-isotropic clouds have no meaningful axis.
    pub anisotropy_min: f64,
    /// Margin added around the crop window, as a fraction of the selected
    /// cells' bounding-box diagonal.
    pub crop_margin_frac: f64,
    /// Query slots spent in the crop stage (capped by the remaining
    /// budget).
    pub crop_iters: u32,
    /// Additional attempts when a reply cannot be parsed; the slot is
    /// discarded once they are spent.
    pub max_parse_retries: u32,
    /// Test agreement after every query from the m-th on, instead of only
    /// once after the first m.
    pub continuous_early_stop: bool,
    /// Ask the scene-context question first and feed it to every
    /// grasp-region prompt.
    pub use_scp: bool,
    pub use_orientation_refinement: bool,
    /// Require an EXPLANATION line in grasp-region replies.
    pub use_explanation: bool,
    pub use_depth_refinement: bool,
    /// Ordered `(columns, rows)` grid sizes, one per query slot; cycled if
    /// a run needs more slots than entries.
    pub grid_schedule: Vec<(u32, u32)>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 6,
            m: 3,
            gamma: 0.4,
            rho: 0.3,
            alpha_min_deg: 15.0,
            anisotropy_min: 2.0,
            crop_margin_frac: 0.10,
            crop_iters: 3,
            max_parse_retries: 2,
            continuous_early_stop: false,
            use_scp: true,
            use_orientation_refinement: true,
            use_explanation: true,
            use_depth_refinement: true,
            grid_schedule: default_grid_schedule(9).expect("default schedule is valid"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |msg: String| Err(PipelineError::Config(msg));
        if self.m < 1 {
            return err("m must be at least 1".into());
        }
        if self.m >= self.k {
            return err(format!("m ({}) must be smaller than k ({})", self.m, self.k));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return err(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.alpha_min_deg.is_finite() && self.alpha_min_deg >= 0.0) {
            return err(format!("alpha_min_deg must be non-negative, got {}", self.alpha_min_deg));
        }
        if !(self.anisotropy_min.is_finite() && self.anisotropy_min >= 1.0) {
            return err(format!("anisotropy_min must be at least 1, got {}", self.anisotropy_min));
        }
        if !(self.crop_margin_frac.is_finite() && self.crop_margin_frac >= 0.0) {
            return err(format!("crop_margin_frac must be non-negative, got {}", self.crop_margin_frac));
        }
        if self.crop_iters < 1 {
            return err("crop_iters must be at least 1".into());
        }
        if self.grid_schedule.len() < self.k as usize {
            return err(format!(
                "grid_schedule has {} entries but k = {} slots are needed",
                self.grid_schedule.len(),
                self.k
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &self.grid_schedule {
            if u < 2 || v < 2 {
                return err(format!("grid_schedule entry {u}x{v} is too coarse (minimum 2x2)"));
            }
            if !seen.insert((u, v)) {
                return err(format!("grid_schedule repeats entry {u}x{v}"));
            }
        }
        Ok(())
    }
}

/// The canonical grid schedule: square grids from 3x3 up to 9x9, then
/// rectangular sizes ordered by cell count (ties broken lexicographically),
/// truncated to `count` entries. At most 49 distinct sizes exist within
/// the 3..=9 range.
pub fn default_grid_schedule(count: u32) -> Result<Vec<(u32, u32)>, PipelineError> {
    const SPAN: std::ops::RangeInclusive<u32> = 3..=9;
    let max = (SPAN.end() - SPAN.start() + 1).pow(2);
    if count > max {
        return Err(PipelineError::Config(format!(
            "default grid schedule has at most {max} distinct entries, {count} requested"
        )));
    }
    let mut schedule: Vec<(u32, u32)> = SPAN.map(|g| (g, g)).collect();
    let mut rest: Vec<(u32, u32)> = SPAN
        .flat_map(|u| SPAN.map(move |v| (u, v)))
        .filter(|(u, v)| u != v)
        .collect();
    rest.sort_by_key(|&(u, v)| (u * v, u, v));
    schedule.extend(rest);
    schedule.truncate(count as usize);
    Ok(schedule)
}

/// Which image a candidate was chosen from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTag {
    Full,
    Crop,
    Rotated,
}

/// Whether a candidate came from an oracle choice or from the overlap of
/// two oracle choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    Oracle,
    Intersection,
}

/// One candidate grasp region. The mask lives in the coordinate frame it
/// was chosen in; `frame` maps that frame back to the root image, and
/// `center` is the mask's center already mapped to root coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub mask: RectMask,
    pub stage: StageTag,
    pub source: CandidateSource,
    pub frame: FrameTransform,
    pub center: Point,
}

/// Every candidate accumulated by one run, in acquisition order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    /// How many of the candidates are intersection-sourced.
    pub intersections_added: u32,
}

impl CandidateSet {
    pub fn centers(&self) -> Vec<Point> {
        self.candidates.iter().map(|c| c.center).collect()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Predicted grasp: pixel point plus undirected axis angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    pub p: Point,
    pub theta_deg: f64,
}

/// Append the intersection of every sufficiently overlapping unordered
/// pair of input masks (IoU strictly above `gamma`). A single pass over
/// the original pairs: appended intersections never cascade.
pub fn augment_intersections(masks: &[RectMask], gamma: f64) -> (Vec<RectMask>, u32) {
    let mut out = masks.to_vec();
    let mut added = 0;
    for j in 0..masks.len() {
        for k in (j + 1)..masks.len() {
            if rect_iou(&masks[j], &masks[k]) > gamma {
                if let Some(overlap) = rect_intersection(&masks[j], &masks[k]) {
                    out.push(overlap);
                    added += 1;
                }
            }
        }
    }
    (out, added)
}

/// True when every center lies within `rho * diagonal` of their mean.
pub fn early_stop_check(centers: &[Point], rho: f64, diagonal: f64) -> Result<bool, GeometryError> {
    let mean = centroid(centers)?;
    Ok(max_spread(centers, &mean)? < rho * diagonal)
}

/// Centroid-and-axis pose estimate over a candidate set. The point is the
/// rounded centroid of all centers, clamped to the image; the angle is
/// the principal axis of the centers. Returns the pose plus a
/// low-confidence flag: with fewer than two centers, or a near-isotropic
/// cloud, the angle defaults to 0 and the flag is set.
pub fn estimate_pose(
    set: &CandidateSet,
    image_width: u32,
    image_height: u32,
) -> Result<(GraspPose, bool), PipelineError> {
    let centers = set.centers();
    if centers.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    let mean = centroid(&centers)?;
    let p = Point::new(
        mean.x.round().clamp(0.0, (image_width - 1) as f64),
        mean.y.round().clamp(0.0, (image_height - 1) as f64),
    );
    let (theta_deg, low_confidence) = if centers.len() >= 2 {
        let axis = principal_axis(&centers)?;
        if !axis.isotropic && axis.anisotropy > 1.0 + 1e-6 {
            (angle_from_vector(axis.direction.0, axis.direction.1)?, false)
        } else {
            (0.0, true)
        }
    } else {
        (0.0, true)
    };
    Ok((GraspPose { p, theta_deg }, low_confidence))
}

/// Everything `run_candidate_loop` produces.
#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub pose: GraspPose,
    pub candidate_set: CandidateSet,
    pub early_stopped: bool,
    pub grp_queries_used: u32,
    pub orientation_refined: bool,
    pub low_confidence_orientation: bool,
}

struct LoopCtx<'a> {
    image: &'a RgbImage,
    oracle: &'a dyn Oracle,
    config: &'a PipelineConfig,
    overlay: &'a OverlayStyle,
    context: Option<&'a SceneContext>,
    transcript: &'a mut OracleTranscript,
    schedule_pos: usize,
    queries_used: u32,
    candidates: Vec<Candidate>,
}

impl LoopCtx<'_> {
    fn next_grid(&mut self, width: u32, height: u32) -> Result<GridSpec, PipelineError> {
        let schedule = &self.config.grid_schedule;
        let (u, v) = schedule[self.schedule_pos % schedule.len()];
        self.schedule_pos += 1;
        // Derived frames can be smaller than the coarsest grid; clamp so a
        // tiny crop still tiles.
        let u = u.min(width).max(1);
        let v = v.min(height).max(1);
        Ok(GridSpec::new(u, v, width, height)?)
    }

    /// Run one query slot against `stage_image`. The slot consumes one
    /// unit of budget regardless of outcome; unusable replies are retried
    /// up to `max_parse_retries` times and then the slot is discarded.
    fn run_slot(
        &mut self,
        stage_image: &RgbImage,
        frame: &FrameTransform,
        stage: StageTag,
    ) -> Result<(), PipelineError> {
        let grid = self.next_grid(stage_image.width(), stage_image.height())?;
        let sent = match self.overlay.mode {
            OverlayMode::Grid => render_grid_overlay(stage_image, &grid, self.overlay).image,
            OverlayMode::None => stage_image.clone(),
        };
        self.queries_used += 1;
        for attempt in 0..=self.config.max_parse_retries {
            match query_grasp_region(
                self.oracle,
                &sent,
                &grid,
                self.context,
                self.config.use_explanation,
                frame,
                self.transcript,
            ) {
                Ok(choice) => {
                    let mask = cell_mask(&grid, choice.cell_index)?;
                    let center = frame.to_original_frame(mask.center());
                    let w = self.image.width() as f64;
                    let h = self.image.height() as f64;
                    // Rotated canvases extend past the root image; a center
                    // mapping outside contributes nothing and is dropped.
                    if center.x < 0.0 || center.y < 0.0 || center.x >= w || center.y >= h {
                        return Ok(());
                    }
                    self.candidates.push(Candidate {
                        mask,
                        stage,
                        source: CandidateSource::Oracle,
                        frame: frame.clone(),
                        center,
                    });
                    return Ok(());
                }
                Err(e) if e.retryable() && attempt < self.config.max_parse_retries => continue,
                Err(e) if e.retryable() => return Ok(()), // retries spent, slot discarded
                Err(e) => return Err(e.into()),
            }
        }
        unreachable!("retry loop always returns");
    }

    /// Full-stage oracle candidates in acquisition order.
    fn full_candidates(&self) -> Vec<(RectMask, Point)> {
        self.candidates
            .iter()
            .filter(|c| c.stage == StageTag::Full && c.source == CandidateSource::Oracle)
            .map(|c| (c.mask, c.center))
            .collect()
    }

    fn crop_centers(&self) -> Vec<Point> {
        self.candidates
            .iter()
            .filter(|c| c.stage == StageTag::Crop && c.source == CandidateSource::Oracle)
            .map(|c| c.center)
            .collect()
    }
}

/// Crop around `window_masks`, spend `crop_slots` queries there, and
/// re-test agreement over the crop-stage centers alone.
fn crop_and_check(
    ctx: &mut LoopCtx<'_>,
    window_masks: &[RectMask],
    crop_slots: u32,
    diagonal: f64,
) -> Result<(bool, (RgbImage, FrameTransform)), PipelineError> {
    let (w, h) = (ctx.image.width(), ctx.image.height());
    let window = crop_window_from_masks(window_masks, w, h, ctx.config.crop_margin_frac)?;
    let (cropped, transform) = crop_image(ctx.image, &window);
    for _ in 0..crop_slots {
        ctx.run_slot(&cropped, &transform, StageTag::Crop)?;
    }
    let centers = ctx.crop_centers();
    let stopped = !centers.is_empty() && early_stop_check(&centers, ctx.config.rho, diagonal)?;
    Ok((stopped, (cropped, transform)))
}

/// Append intersection candidates for overlapping pairs within each
/// non-rotated stage. Pairs are drawn from the oracle-chosen candidates
/// present at call time (one pass, no cascading); rotated-stage masks
/// contribute centers only and are never intersected.
fn augment_candidates(candidates: &mut Vec<Candidate>, gamma: f64) -> u32 {
    let mut appended = Vec::new();
    for stage in [StageTag::Full, StageTag::Crop] {
        let group: Vec<&Candidate> = candidates
            .iter()
            .filter(|c| c.stage == stage && c.source == CandidateSource::Oracle)
            .collect();
        for a in 0..group.len() {
            for b in (a + 1)..group.len() {
                if rect_iou(&group[a].mask, &group[b].mask) > gamma {
                    if let Some(mask) = rect_intersection(&group[a].mask, &group[b].mask) {
                        let frame = group[a].frame.clone();
                        let center = frame.to_original_frame(mask.center());
                        appended.push(Candidate {
                            mask,
                            stage,
                            source: CandidateSource::Intersection,
                            frame,
                            center,
                        });
                    }
                }
            }
        }
    }
    let added = appended.len() as u32;
    candidates.extend(appended);
    added
}

/// The candidate-generation loop: scheduled grid queries with early
/// stopping, crop stage, overlap augmentation, optional orientation
/// refinement, and the final pose estimate.
pub fn run_candidate_loop(
    image: &RgbImage,
    oracle: &dyn Oracle,
    config: &PipelineConfig,
    overlay: &OverlayStyle,
    context: Option<&SceneContext>,
    transcript: &mut OracleTranscript,
) -> Result<LoopOutcome, PipelineError> {
    config.validate()?;
    let (width, height) = (image.width(), image.height());
    let diagonal = (width as f64).hypot(height as f64);
    let root = FrameTransform::identity();
    let mut ctx = LoopCtx {
        image,
        oracle,
        config,
        overlay,
        context,
        transcript,
        schedule_pos: 0,
        queries_used: 0,
        candidates: Vec::new(),
    };

    let mut early_stopped = false;
    let mut crop_stage: Option<(RgbImage, FrameTransform)> = None;

    if config.continuous_early_stop {
        // Agreement is tested after every query from the m-th onward, over
        // the last m full-stage centers; the first success enters the crop
        // stage (at most once).
        while ctx.queries_used < config.k && !early_stopped {
            ctx.run_slot(image, &root, StageTag::Full)?;
            if crop_stage.is_some() || ctx.queries_used < config.m || ctx.queries_used >= config.k {
                continue;
            }
            let full = ctx.full_candidates();
            if full.len() < config.m as usize {
                continue;
            }
            let recent = &full[full.len() - config.m as usize..];
            let centers: Vec<Point> = recent.iter().map(|&(_, c)| c).collect();
            if !early_stop_check(&centers, config.rho, diagonal)? {
                continue;
            }
            let masks: Vec<RectMask> = recent.iter().map(|&(m, _)| m).collect();
            let slots = config.crop_iters.min(config.k - ctx.queries_used);
            let (stopped, stage) = crop_and_check(&mut ctx, &masks, slots, diagonal)?;
            crop_stage = Some(stage);
            early_stopped = stopped;
        }
    } else {
        for _ in 0..config.m {
            ctx.run_slot(image, &root, StageTag::Full)?;
        }
        let full = ctx.full_candidates();
        let centers: Vec<Point> = full.iter().map(|&(_, c)| c).collect();
        if !centers.is_empty() && early_stop_check(&centers, config.rho, diagonal)? {
            let masks: Vec<RectMask> = full.iter().map(|&(m, _)| m).collect();
            let slots = config.crop_iters.min(config.k - config.m);
            let (stopped, stage) = crop_and_check(&mut ctx, &masks, slots, diagonal)?;
            crop_stage = Some(stage);
            early_stopped = stopped;
        }
        if !early_stopped {
            while ctx.queries_used < config.k {
                ctx.run_slot(image, &root, StageTag::Full)?;
            }
        }
    }

    let intersections_added = augment_candidates(&mut ctx.candidates, config.gamma);

    let mut orientation_refined = false;
    if config.use_orientation_refinement && !early_stopped && ctx.candidates.len() >= 2 {
        let centers: Vec<Point> = ctx.candidates.iter().map(|c| c.center).collect();
        let axis = principal_axis(&centers)?;
        if !axis.isotropic && axis.anisotropy >= config.anisotropy_min {
            let angle = angle_from_vector(axis.direction.0, axis.direction.1)?;
            // Undirected axis angle folded into (-90, 90]: the signed tilt
            // away from the grid's horizontal.
            let alpha = if angle > 90.0 { angle - 180.0 } else { angle };
            if alpha.abs() > config.alpha_min_deg {
                let (rotated, frame) = match &crop_stage {
                    Some((crop_image, crop_frame)) => {
                        let (img, step) = rotate_image(crop_image, -alpha);
                        (img, crop_frame.then(&step))
                    }
                    None => rotate_image(image, -alpha),
                };
                for _ in 0..config.m {
                    ctx.run_slot(&rotated, &frame, StageTag::Rotated)?;
                }
                orientation_refined = true;
            }
        }
    }

    let candidate_set = CandidateSet { candidates: ctx.candidates, intersections_added };
    let grp_queries_used = ctx.queries_used;
    let (pose, low_confidence_orientation) = estimate_pose(&candidate_set, width, height)?;
    Ok(LoopOutcome {
        pose,
        candidate_set,
        early_stopped,
        grp_queries_used,
        orientation_refined,
        low_confidence_orientation,
    })
}

/// Camera and gripper parameters for the depth-refinement stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRefineParams {
    pub intrinsics: CameraIntrinsics,
    pub gripper: GripperSpec,
    pub samples: u32,
}

/// Everything one prediction produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspResult {
    pub pose: GraspPose,
    /// The pose before depth refinement moved it, when it did.
    pub pre_refinement_pose: Option<GraspPose>,
    pub early_stopped: bool,
    /// Query slots consumed (parse retries do not consume extra slots).
    pub grp_queries_used: u32,
    pub orientation_refined: bool,
    /// Set when the orientation fell back to 0 degrees for lack of an
    /// elongated center cloud.
    pub low_confidence_orientation: bool,
    pub depth_refined: bool,
    /// Scene depth under the unrefined point, millimeters.
    pub reference_depth_mm: Option<u16>,
    /// Depth at the refined point, millimeters.
    pub refined_depth_mm: Option<u16>,
    pub candidate_set: CandidateSet,
    pub transcript: OracleTranscript,
}

/// Diagnostic block of a [`ResultDocument`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDiagnostics {
    pub early_stopped: bool,
    pub grp_queries_used: u32,
    pub orientation_refined: bool,
    pub low_confidence_orientation: bool,
    pub depth_refined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_refinement_pose: Option<GraspPose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_depth_mm: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_depth_mm: Option<u16>,
}

/// Pointer to the transcript backing a result document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRef {
    pub entry_count: usize,
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// The emitted form of a [`GraspResult`]: pose, diagnostics, candidates,
/// and a digest pointer to the transcript (stored separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub pose: GraspPose,
    pub diagnostics: ResultDiagnostics,
    pub candidates: Vec<Candidate>,
    pub intersections_added: u32,
    pub transcript_ref: TranscriptRef,
}

impl GraspResult {
    pub fn to_document(&self, transcript_path: Option<&str>) -> ResultDocument {
        ResultDocument {
            pose: self.pose,
            diagnostics: ResultDiagnostics {
                early_stopped: self.early_stopped,
                grp_queries_used: self.grp_queries_used,
                orientation_refined: self.orientation_refined,
                low_confidence_orientation: self.low_confidence_orientation,
                depth_refined: self.depth_refined,
                pre_refinement_pose: self.pre_refinement_pose,
                reference_depth_mm: self.reference_depth_mm,
                refined_depth_mm: self.refined_depth_mm,
            },
            candidates: self.candidate_set.candidates.clone(),
            intersections_added: self.candidate_set.intersections_added,
            transcript_ref: TranscriptRef {
                entry_count: self.transcript.len(),
                digest: self.transcript.digest(),
                path: transcript_path.map(str::to_string),
            },
        }
    }

    /// Pretty JSON rendering of [`GraspResult::to_document`], newline
    /// terminated. Byte-stable for byte-stable results.
    pub fn document_json(&self, transcript_path: Option<&str>) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_document(transcript_path))
            .expect("result documents serialize");
        text.push('\n');
        text
    }
}

/// Run one full prediction: scene context (unless ablated), the candidate
/// loop, and depth refinement when a depth map and parameters are given.
/// On failure the transcript gathered so far rides along in the error.
pub fn predict_grasp(
    image: &RgbImage,
    depth: Option<&DepthMap>,
    oracle: &dyn Oracle,
    config: &PipelineConfig,
    overlay: &OverlayStyle,
    depth_params: Option<&DepthRefineParams>,
) -> Result<GraspResult, PipelineFailure> {
    let mut transcript = OracleTranscript::default();

    if let Err(error) = config.validate() {
        return Err(PipelineFailure { error, transcript });
    }
    if image.width() == 0 || image.height() == 0 {
        return Err(PipelineFailure {
            error: PipelineError::Config("input image is empty".into()),
            transcript,
        });
    }
    if let Some(d) = depth {
        if d.width() != image.width() || d.height() != image.height() {
            return Err(PipelineFailure {
                error: PipelineError::DepthDimensionMismatch {
                    image_width: image.width(),
                    image_height: image.height(),
                    depth_width: d.width(),
                    depth_height: d.height(),
                },
                transcript,
            });
        }
    }

    let context = if config.use_scp {
        match query_scene_context(oracle, image, &mut transcript) {
            Ok(ctx) => Some(ctx),
            Err(e) => return Err(PipelineFailure { error: e.into(), transcript }),
        }
    } else {
        None
    };

    let outcome =
        match run_candidate_loop(image, oracle, config, overlay, context.as_ref(), &mut transcript) {
            Ok(o) => o,
            Err(error) => return Err(PipelineFailure { error, transcript }),
        };

    let mut result = GraspResult {
        pose: outcome.pose,
        pre_refinement_pose: None,
        early_stopped: outcome.early_stopped,
        grp_queries_used: outcome.grp_queries_used,
        orientation_refined: outcome.orientation_refined,
        low_confidence_orientation: outcome.low_confidence_orientation,
        depth_refined: false,
        reference_depth_mm: None,
        refined_depth_mm: None,
        candidate_set: outcome.candidate_set,
        transcript: OracleTranscript::default(),
    };

    if config.use_depth_refinement {
        if let (Some(depth_map), Some(params)) = (depth, depth_params) {
            match refine_grasp(
                depth_map,
                &result.pose.p,
                &params.intrinsics,
                &params.gripper,
                params.samples,
            ) {
                Ok(refined) => {
                    result.reference_depth_mm = refined.reference_depth_mm;
                    result.refined_depth_mm = refined.depth_mm;
                    result.depth_refined = refined.refined;
                    if refined.refined {
                        result.pre_refinement_pose = Some(result.pose);
                        // Depth refinement relocates the point only; the
                        // orientation is left untouched.
                        result.pose = GraspPose { p: refined.position, theta_deg: result.pose.theta_deg };
                    }
                }
                Err(e) => return Err(PipelineFailure { error: e.into(), transcript }),
            }
        }
    }

    result.transcript = transcript;
    Ok(result)
}
