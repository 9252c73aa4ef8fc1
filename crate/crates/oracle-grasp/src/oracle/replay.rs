//! Transcript-driven oracle: replays a recorded session verbatim.
//!
//! Each query is checked against the next recorded entry — kind, prompt,
//! grid, and the digest of the exact image bytes must match, otherwise the
//! replay fails loudly instead of returning a response for a different
//! question. Recorded replies (including their latency and timestamps) are
//! returned unchanged, so a replayed run reproduces the original
//! byte-for-byte. Content-level failures (garbled replies) are re-derived
//! by the caller's parser from the recorded raw response; backend-level
//! failures are re-raised as the errors they were.

use std::sync::Mutex;

use crate::oracle::{Oracle, OracleError, OracleReply, OracleRequest, OracleTranscript, TranscriptEntry};

/// An [`Oracle`] that answers from a recorded transcript.
pub struct ReplayOracle {
    entries: Vec<TranscriptEntry>,
    cursor: Mutex<usize>,
}

impl ReplayOracle {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Self { entries, cursor: Mutex::new(0) }
    }

    pub fn from_transcript(transcript: OracleTranscript) -> Self {
        Self::new(transcript.entries)
    }

    /// Index of the next entry to be consumed.
    pub fn position(&self) -> usize {
        *self.cursor.lock().expect("replay cursor lock")
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.position()
    }
}

/// Map a recorded backend-failure note back to the error it came from, so
/// a replayed failure aborts or retries exactly like the original. Texts
/// not produced by a backend failure return `None`: those entries carry a
/// raw response whose problem the caller's parser re-derives on its own.
fn recorded_backend_error(text: &str) -> Option<OracleError> {
    if let Some(rest) = text.strip_prefix("oracle transport failure: ") {
        return Some(OracleError::Transport(rest.to_string()));
    }
    if let Some(rest) = text.strip_prefix("malformed oracle reply: ") {
        return Some(OracleError::MalformedReply(rest.to_string()));
    }
    None
}

impl Oracle for ReplayOracle {
    fn backend_name(&self) -> &'static str {
        "replay"
    }

    fn query(&self, request: &OracleRequest<'_>) -> Result<OracleReply, OracleError> {
        let mut cursor = self.cursor.lock().expect("replay cursor lock");
        let index = *cursor;
        let entry = self
            .entries
            .get(index)
            .ok_or(OracleError::TranscriptExhausted)?;

        if entry.kind != request.kind {
            return Err(OracleError::TranscriptMismatch(format!(
                "entry {index}: recorded {:?} query, got {:?}",
                entry.kind, request.kind
            )));
        }
        if entry.prompt != request.prompt {
            return Err(OracleError::TranscriptMismatch(format!(
                "entry {index}: prompt differs from recording"
            )));
        }
        let request_grid = request.grid.copied();
        if entry.grid != request_grid {
            return Err(OracleError::TranscriptMismatch(format!(
                "entry {index}: grid differs from recording ({:?} vs {:?})",
                entry.grid, request_grid
            )));
        }
        if entry.image_digest != request.image_digest {
            return Err(OracleError::TranscriptMismatch(format!(
                "entry {index}: image digest differs from recording"
            )));
        }

        *cursor += 1;
        if let Some(text) = &entry.error {
            if let Some(err) = recorded_backend_error(text) {
                return Err(err);
            }
        }
        Ok(OracleReply {
            response: entry.response.clone(),
            latency_ms: entry.latency_ms,
            timestamp: entry.timestamp.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::oracle::scripted::ScriptedOracle;
    use crate::oracle::{query_grasp_region, query_scene_context, SceneContext};
    use crate::tiling::{FrameTransform, GridSpec};
    use image::RgbImage;

    /// Record a short scripted session, then replay it and compare the
    /// resulting transcripts byte for byte.
    #[test]
    fn replay_reproduces_recorded_session() {
        let image = RgbImage::from_pixel(60, 60, image::Rgb([9, 30, 200]));
        let grid = GridSpec::new(3, 3, 60, 60).unwrap();
        let frame = FrameTransform::identity();

        let scripted = ScriptedOracle::fixed(Point::new(30.0, 30.0));
        let mut recorded = crate::oracle::OracleTranscript::default();
        let ctx = query_scene_context(&scripted, &image, &mut recorded).unwrap();
        let choice =
            query_grasp_region(&scripted, &image, &grid, Some(&ctx), true, &frame, &mut recorded)
                .unwrap();
        assert_eq!(choice.cell_index, 4);

        let replay = ReplayOracle::from_transcript(recorded.clone());
        let mut replayed = crate::oracle::OracleTranscript::default();
        let ctx2 = query_scene_context(&replay, &image, &mut replayed).unwrap();
        let choice2 =
            query_grasp_region(&replay, &image, &grid, Some(&ctx2), true, &frame, &mut replayed)
                .unwrap();
        assert_eq!(ctx2, ctx);
        assert_eq!(choice2, choice);
        assert_eq!(replayed, recorded);
        assert_eq!(replayed.digest(), recorded.digest());
        assert_eq!(replay.remaining(), 0);
    }

    #[test]
    fn replay_exhausts_rather_than_fabricating() {
        let image = RgbImage::new(40, 40);
        let replay = ReplayOracle::new(Vec::new());
        let mut t = crate::oracle::OracleTranscript::default();
        let err = query_scene_context(&replay, &image, &mut t).unwrap_err();
        assert_eq!(err.to_string(), "transcript exhausted");
        // The failed attempt is still logged.
        assert_eq!(t.len(), 1);
        assert_eq!(t.entries[0].error.as_deref(), Some("transcript exhausted"));
    }

    #[test]
    fn replay_rejects_diverging_queries() {
        let image = RgbImage::new(60, 60);
        let grid = GridSpec::new(3, 3, 60, 60).unwrap();
        let frame = FrameTransform::identity();

        let scripted = ScriptedOracle::fixed(Point::new(10.0, 10.0));
        let mut recorded = crate::oracle::OracleTranscript::default();
        let ctx = query_scene_context(&scripted, &image, &mut recorded).unwrap();
        query_grasp_region(&scripted, &image, &grid, Some(&ctx), true, &frame, &mut recorded)
            .unwrap();

        // Wrong kind: ask a GRP where an SCP was recorded.
        let replay = ReplayOracle::from_transcript(recorded.clone());
        let mut t = crate::oracle::OracleTranscript::default();
        let err =
            query_grasp_region(&replay, &image, &grid, Some(&ctx), true, &frame, &mut t).unwrap_err();
        assert!(err.to_string().starts_with("transcript mismatch"));

        // Wrong prompt content: different context text.
        let replay = ReplayOracle::from_transcript(recorded.clone());
        let mut t = crate::oracle::OracleTranscript::default();
        query_scene_context(&replay, &image, &mut t).unwrap();
        let other = SceneContext::new("something else entirely").unwrap();
        let err = query_grasp_region(&replay, &image, &grid, Some(&other), true, &frame, &mut t)
            .unwrap_err();
        assert!(err.to_string().starts_with("transcript mismatch"));

        // Wrong image bytes.
        let replay = ReplayOracle::from_transcript(recorded);
        let mut t = crate::oracle::OracleTranscript::default();
        let different = RgbImage::from_pixel(60, 60, image::Rgb([255, 0, 0]));
        let err = query_scene_context(&replay, &different, &mut t).unwrap_err();
        assert!(err.to_string().starts_with("transcript mismatch"));
    }

    #[test]
    fn recorded_backend_failures_replay_as_failures() {
        assert!(matches!(
            recorded_backend_error("oracle transport failure: connection refused"),
            Some(OracleError::Transport(s)) if s == "connection refused"
        ));
        assert!(matches!(
            recorded_backend_error("malformed oracle reply: no choices"),
            Some(OracleError::MalformedReply(_))
        ));
        assert!(recorded_backend_error("unparseable response: junk").is_none());
        assert!(recorded_backend_error("cell out of range: index 9 in a 9-cell grid").is_none());
    }
}
