//! Grasp evaluation metrics and batch reporting.
//!
//! An annotation set lists one or more acceptable grasps for an image plus
//! a bounding-circle diameter `d_px` used to normalize position error.
//! Position error is the distance from the prediction to the *nearest*
//! annotated grasp; NRMSE divides that by `d_px`, and the millimeter RMSE
//! multiplies by the set's `mm_per_px` scale when one is present.
//! Orientation error is the minimal angular distance modulo 180 degrees
//! against the annotation nearest in position (grasp axes are undirected).
//! Batch aggregates report mean and sample standard deviation per metric.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

use crate::geometry::{angular_distance_mod180, Point};
use crate::pipeline::GraspPose;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("annotation set for {0:?} has no grasps")]
    EmptyAnnotations(String),
    #[error("bounding-circle diameter must be positive, got {0}")]
    InvalidDiameter(f64),
    #[error("annotation set has no millimeter scale")]
    NoMetricScale,
    #[error("no predictions to evaluate")]
    EmptyPredictions,
    #[error("predictions without matching annotations: {}", .0.join(", "))]
    UnmatchedIds(Vec<String>),
}

/// One acceptable grasp: a pixel position and an axis angle in [0, 180).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspAnnotation {
    pub position: Point,
    pub theta_deg: f64,
}

/// All acceptable grasps for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub image_id: String,
    pub grasps: Vec<GraspAnnotation>,
    /// Diameter of the object's bounding circle in pixels.
    pub d_px: f64,
    /// Millimeters per pixel at the object plane, when calibrated.
    pub mm_per_px: Option<f64>,
}

impl AnnotationSet {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.grasps.is_empty() {
            return Err(EvalError::EmptyAnnotations(self.image_id.clone()));
        }
        if !(self.d_px.is_finite() && self.d_px > 0.0) {
            return Err(EvalError::InvalidDiameter(self.d_px));
        }
        if let Some(s) = self.mm_per_px {
            if !(s.is_finite() && s > 0.0) {
                return Err(EvalError::InvalidDiameter(s));
            }
        }
        Ok(())
    }

    /// The annotation closest in position to `p` (first wins ties).
    pub fn nearest(&self, p: &Point) -> Result<&GraspAnnotation, EvalError> {
        self.validate()?;
        let mut best = &self.grasps[0];
        let mut best_d = best.position.distance(p);
        for g in &self.grasps[1..] {
            let d = g.position.distance(p);
            if d < best_d {
                best = g;
                best_d = d;
            }
        }
        Ok(best)
    }
}

/// Distance to the nearest annotated grasp, normalized by `d_px`.
pub fn position_nrmse(pred: &Point, ann: &AnnotationSet) -> Result<f64, EvalError> {
    let nearest = ann.nearest(pred)?;
    Ok(nearest.position.distance(pred) / ann.d_px)
}

/// Distance to the nearest annotated grasp, in millimeters. Requires the
/// annotation set to carry a metric scale.
pub fn position_rmse_mm(pred: &Point, ann: &AnnotationSet) -> Result<f64, EvalError> {
    let scale = ann.mm_per_px.ok_or(EvalError::NoMetricScale)?;
    let nearest = ann.nearest(pred)?;
    Ok(nearest.position.distance(pred) * scale)
}

/// Angular distance (mod 180) between the predicted axis and the axis of
/// the annotation nearest to the predicted position.
pub fn orientation_error(pred: &Point, theta_deg: f64, ann: &AnnotationSet) -> Result<f64, EvalError> {
    let nearest = ann.nearest(pred)?;
    Ok(angular_distance_mod180(theta_deg, nearest.theta_deg))
}

/// Per-image metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image_id: String,
    pub nrmse: f64,
    pub nrmse_pct: f64,
    pub rmse_mm: Option<f64>,
    pub orientation_mae_deg: f64,
}

/// Mean and sample standard deviation of one metric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Aggregates over all rows. `rmse_mm` covers only rows with a scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub nrmse: MetricStat,
    pub nrmse_pct: MetricStat,
    pub rmse_mm: Option<MetricStat>,
    pub orientation_mae_deg: MetricStat,
}

/// Full evaluation report, serializable to JSON and a text table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregate: EvalAggregate,
}

/// Mean and sample standard deviation (n - 1 denominator; zero for n = 1).
pub fn mean_and_std(values: &[f64]) -> MetricStat {
    let n = values.len();
    if n == 0 {
        return MetricStat { mean: f64::NAN, std: f64::NAN, count: 0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        (ss / (n - 1) as f64).sqrt()
    };
    MetricStat { mean, std, count: n }
}

/// Score a batch of predictions against annotation sets matched by image
/// id. Every prediction must have a matching annotation set; unmatched ids
/// fail as a group so the caller sees the full list at once.
pub fn evaluate_batch(
    predictions: &[(String, GraspPose)],
    annotations: &[AnnotationSet],
) -> Result<EvalReport, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    let by_id: HashMap<&str, &AnnotationSet> =
        annotations.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let unmatched: Vec<String> = predictions
        .iter()
        .filter(|(id, _)| !by_id.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if !unmatched.is_empty() {
        return Err(EvalError::UnmatchedIds(unmatched));
    }

    let mut rows = Vec::with_capacity(predictions.len());
    for (id, pose) in predictions {
        let ann = by_id[id.as_str()];
        let nrmse = position_nrmse(&pose.p, ann)?;
        let rmse_mm = match ann.mm_per_px {
            Some(_) => Some(position_rmse_mm(&pose.p, ann)?),
            None => None,
        };
        let orient = orientation_error(&pose.p, pose.theta_deg, ann)?;
        rows.push(EvalRow {
            image_id: id.clone(),
            nrmse,
            nrmse_pct: nrmse * 100.0,
            rmse_mm,
            orientation_mae_deg: orient,
        });
    }

    let nrmse_all: Vec<f64> = rows.iter().map(|r| r.nrmse).collect();
    let pct_all: Vec<f64> = rows.iter().map(|r| r.nrmse_pct).collect();
    let mm_all: Vec<f64> = rows.iter().filter_map(|r| r.rmse_mm).collect();
    let orient_all: Vec<f64> = rows.iter().map(|r| r.orientation_mae_deg).collect();
    let aggregate = EvalAggregate {
        nrmse: mean_and_std(&nrmse_all),
        nrmse_pct: mean_and_std(&pct_all),
        rmse_mm: if mm_all.is_empty() { None } else { Some(mean_and_std(&mm_all)) },
        orientation_mae_deg: mean_and_std(&orient_all),
    };
    Ok(EvalReport { rows, aggregate })
}

impl EvalReport {
    /// Render an aligned text table with one row per image plus an
    /// aggregate line formatted as `mean ± std`.
    pub fn text_table(&self) -> String {
        let mut lines: Vec<[String; 4]> = Vec::new();
        for r in &self.rows {
            lines.push([
                r.image_id.clone(),
                format!("{:.4}", r.nrmse_pct),
                r.rmse_mm.map_or_else(|| "-".to_string(), |v| format!("{v:.3}")),
                format!("{:.3}", r.orientation_mae_deg),
            ]);
        }
        let agg = &self.aggregate;
        lines.push([
            format!("mean±std (n={})", agg.nrmse.count),
            format!("{:.4} ± {:.4}", agg.nrmse_pct.mean, agg.nrmse_pct.std),
            agg.rmse_mm
                .map_or_else(|| "-".to_string(), |s| format!("{:.3} ± {:.3}", s.mean, s.std)),
            format!("{:.3} ± {:.3}", agg.orientation_mae_deg.mean, agg.orientation_mae_deg.std),
        ]);

        let header = ["image", "nrmse %", "rmse mm", "orient deg"];
        let mut widths = [0usize; 4];
        for (i, h) in header.iter().enumerate() {
            widths[i] = h.chars().count();
        }
        for row in &lines {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let write_row = |out: &mut String, cells: [&str; 4], widths: &[usize; 4]| {
            for (i, cell) in cells.iter().enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                let _ = write!(out, "{cell:>w$}", w = widths[i]);
            }
            out.push('\n');
        };
        write_row(&mut out, header, &widths);
        for row in &lines {
            write_row(&mut out, [&row[0], &row[1], &row[2], &row[3]], &widths);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(id: &str, grasps: &[(f64, f64, f64)], d: f64, mm: Option<f64>) -> AnnotationSet {
        AnnotationSet {
            image_id: id.to_string(),
            grasps: grasps
                .iter()
                .map(|&(x, y, t)| GraspAnnotation { position: Point::new(x, y), theta_deg: t })
                .collect(),
            d_px: d,
            mm_per_px: mm,
        }
    }

    #[test]
    fn nrmse_worked_example() {
        // Distance 5 against nearest of two annotations, diameter 100.
        let ann = set("a", &[(10.0, 10.0, 0.0), (50.0, 50.0, 90.0)], 100.0, None);
        let e = position_nrmse(&Point::new(13.0, 14.0), &ann).unwrap();
        assert!((e - 0.05).abs() < 1e-12);
    }

    #[test]
    fn rmse_mm_uses_scale_or_errors() {
        let with = set("a", &[(0.0, 0.0, 0.0)], 10.0, Some(2.0));
        let without = set("a", &[(0.0, 0.0, 0.0)], 10.0, None);
        let p = Point::new(3.0, 4.0);
        assert!((position_rmse_mm(&p, &with).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(position_rmse_mm(&p, &without), Err(EvalError::NoMetricScale));
    }

    #[test]
    fn orientation_error_matches_nearest_position() {
        // Nearest annotation is the second one; its angle must be used.
        let ann = set("a", &[(0.0, 0.0, 10.0), (100.0, 0.0, 170.0)], 50.0, None);
        let e = orientation_error(&Point::new(90.0, 0.0), 0.0, &ann).unwrap();
        assert!((e - 10.0).abs() < 1e-12); // 0 vs 170 wraps to 10
    }

    #[test]
    fn empty_annotations_rejected() {
        let ann = set("a", &[], 50.0, None);
        assert!(matches!(
            position_nrmse(&Point::new(0.0, 0.0), &ann),
            Err(EvalError::EmptyAnnotations(_))
        ));
    }

    #[test]
    fn mean_and_std_frozen_values() {
        let s = mean_and_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((s.mean - 5.0).abs() < 1e-12);
        // Sample variance of the classic eight-point set is 32/7.
        assert!((s.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        let one = mean_and_std(&[3.5]);
        assert_eq!(one.std, 0.0);
        assert_eq!(one.count, 1);
    }

    #[test]
    fn batch_report_aggregates_and_table() {
        let anns = vec![
            set("a", &[(10.0, 10.0, 0.0)], 100.0, Some(1.0)),
            set("b", &[(20.0, 20.0, 90.0)], 200.0, None),
        ];
        let preds = vec![
            ("a".to_string(), GraspPose { p: Point::new(13.0, 14.0), theta_deg: 10.0 }),
            ("b".to_string(), GraspPose { p: Point::new(20.0, 30.0), theta_deg: 80.0 }),
        ];
        let rep = evaluate_batch(&preds, &anns).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!((rep.rows[0].nrmse - 0.05).abs() < 1e-12);
        assert!((rep.rows[1].nrmse - 0.05).abs() < 1e-12);
        assert!((rep.aggregate.nrmse.mean - 0.05).abs() < 1e-12);
        assert!((rep.aggregate.nrmse.std - 0.0).abs() < 1e-12);
        // Only one row carries a metric scale.
        let mm = rep.aggregate.rmse_mm.unwrap();
        assert_eq!(mm.count, 1);
        assert!((mm.mean - 5.0).abs() < 1e-12);
        assert_eq!(mm.std, 0.0);
        assert!((rep.aggregate.orientation_mae_deg.mean - 10.0).abs() < 1e-12);

        let table = rep.text_table();
        assert!(table.contains("image"));
        assert!(table.contains("mean±std (n=2)"));
        let widths: Vec<usize> =
            table.lines().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "table must be aligned");

        let json = serde_json::to_string(&rep).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn unmatched_ids_listed() {
        let anns = vec![set("a", &[(0.0, 0.0, 0.0)], 10.0, None)];
        let preds = vec![
            ("a".to_string(), GraspPose { p: Point::new(0.0, 0.0), theta_deg: 0.0 }),
            ("ghost".to_string(), GraspPose { p: Point::new(0.0, 0.0), theta_deg: 0.0 }),
        ];
        match evaluate_batch(&preds, &anns) {
            Err(EvalError::UnmatchedIds(ids)) => assert_eq!(ids, vec!["ghost".to_string()]),
            other => panic!("expected unmatched-id error, got {other:?}"),
        }
        assert_eq!(evaluate_batch(&[], &anns), Err(EvalError::EmptyPredictions));
    }
}
