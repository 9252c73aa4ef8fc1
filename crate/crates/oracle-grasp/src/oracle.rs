//! Prompt construction, response parsing, transcripts, and oracle backends.
//!
//! The pipeline talks to a multimodal oracle through two fixed prompts: a
//! scene-context prompt (SCP) that asks for a one-sentence, grasp-focused
//! description of the object, and a grasp-region prompt (GRP) that shows a
//! grid-tiled image and asks for the best cell. Both prompt builders are
//! pure and byte-stable; the GRP parser is deliberately tolerant of format
//! drift in replies.
//!
//! Three interchangeable backends implement [`Oracle`]: a deterministic
//! [`scripted::ScriptedOracle`] for tests, a [`replay::ReplayOracle`] that
//! replays a recorded transcript verbatim, and an [`http::HttpOracle`] that
//! speaks the common multimodal chat-completion wire protocol.
//!
//! Every query — successful or not — appends exactly one entry to the
//! caller's [`OracleTranscript`], so a recorded session can be replayed
//! bit-for-bit and audited offline.

pub mod http;
pub mod replay;
pub mod scripted;

pub use http::{HttpOracle, HttpOracleConfig};
pub use replay::ReplayOracle;
pub use scripted::{ScriptedBehavior, ScriptedOracle};

use image::RgbImage;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::OnceLock;
use thiserror::Error;

use crate::io::encode_png;
use crate::tiling::{FrameTransform, GridSpec};

/// Schema version written into transcript headers.
pub const TRANSCRIPT_VERSION: u32 = 1;

/// Fixed timestamp used by deterministic backends so recorded transcripts
/// are byte-stable across runs.
pub const EPOCH_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("empty context")]
    EmptyContext,
    #[error("unparseable response: {0}")]
    Unparseable(String),
    #[error("cell out of range: index {index} in a {cells}-cell grid")]
    CellOutOfRange { index: usize, cells: usize },
    #[error("malformed oracle reply: {0}")]
    MalformedReply(String),
    #[error("oracle transport failure: {0}")]
    Transport(String),
    #[error("transcript exhausted")]
    TranscriptExhausted,
    #[error("transcript mismatch: {0}")]
    TranscriptMismatch(String),
    #[error("oracle endpoint not configured (set ORACLE_GRASP_ENDPOINT or [oracle.http] endpoint)")]
    EndpointNotConfigured,
    #[error("image encoding failed: {0}")]
    Encode(String),
}

impl OracleError {
    /// Whether the failing query may be retried with the same inputs.
    /// Content-level problems (garbled or out-of-range replies) are worth
    /// retrying; transport and bookkeeping failures are not.
    pub fn retryable(&self) -> bool {
        matches!(
            self,
            OracleError::Unparseable(_)
                | OracleError::CellOutOfRange { .. }
                | OracleError::MalformedReply(_)
        )
    }
}

/// One-sentence object description produced by the SCP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneContext {
    text: String,
}

impl SceneContext {
    pub fn new(text: impl Into<String>) -> Result<Self, OracleError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(OracleError::EmptyContext);
        }
        Ok(Self { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// A parsed GRP answer: the chosen cell plus its stated rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraspRegionChoice {
    pub cell_index: usize,
    pub explanation: String,
}

/// Which of the two prompts a query carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Scp,
    Grp,
}

/// One prompt/response exchange. `error` is set when the exchange failed
/// (transport fault or unusable reply) — the entry is still recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub kind: QueryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// SHA-256 of the exact PNG bytes sent with the prompt.
    pub image_digest: String,
    pub prompt: String,
    pub response: String,
    pub latency_ms: u64,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Metadata line written ahead of the entries in a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub version: u32,
    /// Digest of the full configuration the run used.
    pub config_digest: String,
    /// Backend name that produced the recording.
    pub oracle: String,
    /// Digest of the root input image file bytes.
    pub image_digest: String,
    /// Digest of the depth image file bytes, when a depth map was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_digest: Option<String>,
}

/// Ordered record of every oracle exchange in one prediction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleTranscript {
    pub entries: Vec<TranscriptEntry>,
}

impl OracleTranscript {
    pub fn push(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SHA-256 over the canonical JSON-lines encoding of the entries.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for entry in &self.entries {
            let line = serde_json::to_string(entry).expect("transcript entries serialize");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// A fully prepared query as handed to a backend.
pub struct OracleRequest<'a> {
    pub kind: QueryKind,
    pub prompt: &'a str,
    /// Decoded image, for backends that inspect pixels (scripted).
    pub image: &'a RgbImage,
    /// The exact encoded bytes sent over the wire, already digested.
    pub png_bytes: &'a [u8],
    pub image_digest: &'a str,
    /// Grid the image was tiled with (GRP only).
    pub grid: Option<&'a GridSpec>,
    /// Mapping from the sent image's frame back to the root image, so
    /// pixel-inspecting backends can reason in root coordinates.
    pub frame: Option<&'a FrameTransform>,
}

/// Raw backend reply plus timing metadata for the transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReply {
    pub response: String,
    pub latency_ms: u64,
    pub timestamp: String,
}

/// A multimodal oracle backend. Implementations must be safe for
/// concurrent queries from independent predictions.
pub trait Oracle: Send + Sync {
    /// Stable backend identifier recorded in transcript headers.
    fn backend_name(&self) -> &'static str;

    fn query(&self, request: &OracleRequest<'_>) -> Result<OracleReply, OracleError>;
}

const SCP_PROMPT: &str = "Please provide a short, concise description of the principal object \
present in the image, focusing on the parts of the object that could be used for grasping. If \
the object has a clear handle or grip, mention that; if not, describe a cylindrical or otherwise \
ergonomically graspable section of the object. Avoid extraneous details unrelated to how one \
might physically grasp the object. Keep your answer to one sentence.";

/// The scene-context prompt. Constant: identical bytes on every call.
pub fn build_scp() -> &'static str {
    SCP_PROMPT
}

/// The grasp-region prompt for a given grid. With a context, the prompt
/// opens with the context clause; without one the clause is dropped and
/// the sentence starts at "Analyze". The cell range is written as
/// `(0,0)` to `(columns, rows - 1)` with the grid's numbers substituted.
/// When `include_explanation` is false the EXPLANATION line is omitted
/// from the required output format.
pub fn build_grp(context: Option<&SceneContext>, grid: &GridSpec, include_explanation: bool) -> String {
    let mut p = String::with_capacity(1024);
    match context {
        Some(ctx) => {
            p.push_str("Based on the following image context: ");
            p.push_str(ctx.text());
            p.push_str(", analyze the provided image");
        }
        None => p.push_str("Analyze the provided image"),
    }
    p.push_str(" and determine the optimal grid cell, from (0,0) to (");
    p.push_str(&grid.columns.to_string());
    p.push_str(", ");
    p.push_str(&(grid.rows - 1).to_string());
    p.push_str(
        "), that corresponds to the best grasping area for the object. Focus exclusively on the \
object (ignore all background and surrounding elements).\n\
CONSIDER THE FOLLOWING:\n\
1. Prioritize areas that resemble handles or have handle-like features.\n\
2. If no handle is present, select the most stable area.\n\
3. Avoid areas that could interfere with the object's functionality.\n\
IMPORTANT:\n\
1. Your response MUST follow exactly the format below.\n\
2. DO NOT include any additional text, markdown formatting, or commentary.\n\
OUTPUT FORMAT:\n\
GRID_CELL: <cell_number>",
    );
    if include_explanation {
        p.push_str("\nEXPLANATION: <brief explanation of your choice>");
    }
    p
}

fn grid_cell_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^\s*\**\s*GRID_CELL\s*\**\s*[:=]\s*(?:\(\s*(\d+)\s*,\s*(\d+)\s*\)|(\d+))")
            .expect("static regex compiles")
    })
}

fn explanation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^\s*\**\s*EXPLANATION\s*\**\s*[:=]\s*(.*)$").expect("static regex compiles")
    })
}

/// Extract the chosen cell from a raw GRP reply.
///
/// Accepted forms: `GRID_CELL: 7` (linear index) and `GRID_CELL: (2,1)`
/// read as `(column, row)` and linearized row-major. Markdown fences and
/// surrounding chatter are ignored; the EXPLANATION line is captured
/// verbatim when present.
pub fn parse_grp_response(raw: &str, grid: &GridSpec) -> Result<GraspRegionChoice, OracleError> {
    let cleaned: String = raw
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");

    let caps = grid_cell_regex().captures(&cleaned).ok_or_else(|| {
        let preview: String = raw.chars().take(80).collect();
        OracleError::Unparseable(format!("no GRID_CELL field in {preview:?}"))
    })?;

    let cells = grid.cell_count();
    let cell_index = if let (Some(col), Some(row)) = (caps.get(1), caps.get(2)) {
        let col: usize = col.as_str().parse().map_err(|_| {
            OracleError::Unparseable(format!("cell coordinate too large in {:?}", &caps[0]))
        })?;
        let row: usize = row.as_str().parse().map_err(|_| {
            OracleError::Unparseable(format!("cell coordinate too large in {:?}", &caps[0]))
        })?;
        if col >= grid.columns as usize || row >= grid.rows as usize {
            return Err(OracleError::CellOutOfRange { index: row * grid.columns as usize + col, cells });
        }
        row * grid.columns as usize + col
    } else {
        let idx: usize = caps[3]
            .parse()
            .map_err(|_| OracleError::Unparseable(format!("cell index too large in {:?}", &caps[0])))?;
        if idx >= cells {
            return Err(OracleError::CellOutOfRange { index: idx, cells });
        }
        idx
    };

    let explanation = explanation_regex()
        .captures(&cleaned)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();

    Ok(GraspRegionChoice { cell_index, explanation })
}

/// Canonical reply text for a choice, mirroring the GRP output format.
/// `parse_grp_response(format_grp_response(c)) == c` for in-range cells.
pub fn format_grp_response(choice: &GraspRegionChoice, include_explanation: bool) -> String {
    if include_explanation {
        format!("GRID_CELL: {}\nEXPLANATION: {}", choice.cell_index, choice.explanation)
    } else {
        format!("GRID_CELL: {}", choice.cell_index)
    }
}

/// Run the SCP against a backend and parse the reply into a context.
/// Exactly one transcript entry is appended, success or not; a failed
/// exchange keeps whatever reply text arrived plus an error note, so
/// faults stay auditable. A reply that is empty after trimming is an
/// error ("empty context").
pub fn query_scene_context(
    oracle: &dyn Oracle,
    image: &RgbImage,
    transcript: &mut OracleTranscript,
) -> Result<SceneContext, OracleError> {
    let png = encode_png(image).map_err(|e| OracleError::Encode(e.to_string()))?;
    let digest = crate::io::image_digest(&png);
    let prompt = build_scp();
    let request = OracleRequest {
        kind: QueryKind::Scp,
        prompt,
        image,
        png_bytes: &png,
        image_digest: &digest,
        grid: None,
        frame: None,
    };
    match oracle.query(&request) {
        Ok(reply) => {
            let parsed = SceneContext::new(reply.response.trim());
            transcript.push(TranscriptEntry {
                kind: QueryKind::Scp,
                grid: None,
                image_digest: digest,
                prompt: prompt.to_string(),
                response: reply.response,
                latency_ms: reply.latency_ms,
                timestamp: reply.timestamp,
                error: parsed.as_ref().err().map(|e| e.to_string()),
            });
            parsed
        }
        Err(e) => {
            transcript.push(TranscriptEntry {
                kind: QueryKind::Scp,
                grid: None,
                image_digest: digest,
                prompt: prompt.to_string(),
                response: String::new(),
                latency_ms: 0,
                timestamp: EPOCH_TIMESTAMP.to_string(),
                error: Some(e.to_string()),
            });
            Err(e)
        }
    }
}

/// Run one GRP iteration: build the prompt for `grid`, dispatch the tiled
/// image, parse the reply. Exactly one transcript entry is appended,
/// success or not, with the raw reply preserved and an error note on
/// failure.
pub fn query_grasp_region(
    oracle: &dyn Oracle,
    image: &RgbImage,
    grid: &GridSpec,
    context: Option<&SceneContext>,
    include_explanation: bool,
    frame: &FrameTransform,
    transcript: &mut OracleTranscript,
) -> Result<GraspRegionChoice, OracleError> {
    let png = encode_png(image).map_err(|e| OracleError::Encode(e.to_string()))?;
    let digest = crate::io::image_digest(&png);
    let prompt = build_grp(context, grid, include_explanation);
    let request = OracleRequest {
        kind: QueryKind::Grp,
        prompt: &prompt,
        image,
        png_bytes: &png,
        image_digest: &digest,
        grid: Some(grid),
        frame: Some(frame),
    };
    match oracle.query(&request) {
        Ok(reply) => {
            let parsed = parse_grp_response(&reply.response, grid);
            transcript.push(TranscriptEntry {
                kind: QueryKind::Grp,
                grid: Some(*grid),
                image_digest: digest,
                prompt,
                response: reply.response,
                latency_ms: reply.latency_ms,
                timestamp: reply.timestamp,
                error: parsed.as_ref().err().map(|e| e.to_string()),
            });
            parsed
        }
        Err(e) => {
            transcript.push(TranscriptEntry {
                kind: QueryKind::Grp,
                grid: Some(*grid),
                image_digest: digest,
                prompt,
                response: String::new(),
                latency_ms: 0,
                timestamp: EPOCH_TIMESTAMP.to_string(),
                error: Some(e.to_string()),
            });
            Err(e)
        }
    }
}
