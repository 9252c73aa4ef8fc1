//! Deterministic oracle test double.
//!
//! Instead of interpreting prompts, the scripted backend computes its
//! answers geometrically from a configured behavior and synthesizes a
//! reply in the canonical GRP output format. Timestamps are fixed and
//! latency is zero so recorded transcripts are byte-stable across runs.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Point;
use crate::oracle::{Oracle, OracleError, OracleReply, OracleRequest, QueryKind, EPOCH_TIMESTAMP};

/// How the scripted backend picks grid cells.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedBehavior {
    /// Always the cell containing `target` (root-image coordinates).
    FixedTarget { target: Point },
    /// The cell containing `target` displaced by a fresh uniform sample
    /// from a disc of `radius` pixels on every query.
    NoisyTarget { target: Point, radius: f64 },
    /// Successive points along the segment `a`–`b`, spread evenly by a
    /// bit-reversal (van der Corput) sequence over the segment parameter:
    /// endpoints first, then midpoints of ever-finer dyadic intervals.
    LineTarget { a: Point, b: Point },
    /// A uniformly random cell each query; adversarial, never converges.
    RandomCell,
}

struct ScriptedState {
    rng: ChaCha8Rng,
    grp_slot: u64,
}

/// Deterministic [`Oracle`] whose answers come from a [`ScriptedBehavior`].
pub struct ScriptedOracle {
    behavior: ScriptedBehavior,
    context_text: String,
    state: Mutex<ScriptedState>,
}

const DEFAULT_CONTEXT: &str = "a plain object resting on a flat surface";

impl ScriptedOracle {
    pub fn new(behavior: ScriptedBehavior, seed: u64) -> Self {
        Self {
            behavior,
            context_text: DEFAULT_CONTEXT.to_string(),
            state: Mutex::new(ScriptedState { rng: ChaCha8Rng::seed_from_u64(seed), grp_slot: 0 }),
        }
    }

    pub fn fixed(target: Point) -> Self {
        Self::new(ScriptedBehavior::FixedTarget { target }, 0)
    }

    pub fn noisy(target: Point, radius: f64, seed: u64) -> Self {
        Self::new(ScriptedBehavior::NoisyTarget { target, radius }, seed)
    }

    pub fn line(a: Point, b: Point) -> Self {
        Self::new(ScriptedBehavior::LineTarget { a, b }, 0)
    }

    pub fn random_cells(seed: u64) -> Self {
        Self::new(ScriptedBehavior::RandomCell, seed)
    }

    /// Replace the canned scene-context reply.
    pub fn with_context(mut self, text: impl Into<String>) -> Self {
        self.context_text = text.into();
        self
    }
}

/// Base-2 van der Corput value of `n` (bit reversal into (0,1)).
fn van_der_corput(mut n: u64) -> f64 {
    let mut value = 0.0;
    let mut denom = 1.0;
    while n > 0 {
        denom *= 2.0;
        value += (n % 2) as f64 / denom;
        n /= 2;
    }
    value
}

/// Segment parameter for the i-th line query: both endpoints first, then
/// the dyadic midpoints (0, 1, 1/2, 1/4, 3/4, 1/8, 5/8, ...).
fn line_parameter(slot: u64) -> f64 {
    match slot {
        0 => 0.0,
        1 => 1.0,
        _ => van_der_corput(slot - 1),
    }
}

impl Oracle for ScriptedOracle {
    fn backend_name(&self) -> &'static str {
        "scripted"
    }

    fn query(&self, request: &OracleRequest<'_>) -> Result<OracleReply, OracleError> {
        let reply = |response: String| OracleReply {
            response,
            latency_ms: 0,
            timestamp: EPOCH_TIMESTAMP.to_string(),
        };

        match request.kind {
            QueryKind::Scp => Ok(reply(self.context_text.clone())),
            QueryKind::Grp => {
                let grid = request
                    .grid
                    .ok_or_else(|| OracleError::Transport("scripted GRP query without a grid".into()))?;
                let mut state = self.state.lock().expect("scripted state lock");
                let slot = state.grp_slot;
                state.grp_slot += 1;

                let cell_index = match &self.behavior {
                    ScriptedBehavior::RandomCell => state.rng.gen_range(0..grid.cell_count()),
                    behavior => {
                        let root_target = match behavior {
                            ScriptedBehavior::FixedTarget { target } => *target,
                            ScriptedBehavior::NoisyTarget { target, radius } => {
                                // Uniform over the disc: radius scaled by
                                // sqrt so area density is constant.
                                let r = radius * state.rng.gen::<f64>().sqrt();
                                let phi = state.rng.gen::<f64>() * std::f64::consts::TAU;
                                Point::new(target.x + r * phi.cos(), target.y + r * phi.sin())
                            }
                            ScriptedBehavior::LineTarget { a, b } => {
                                let t = line_parameter(slot);
                                Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
                            }
                            ScriptedBehavior::RandomCell => unreachable!(),
                        };
                        // The request image may be a derived frame (crop,
                        // rotation); the behavior's target lives in root
                        // coordinates, so project it into the sent frame.
                        let local = match request.frame {
                            Some(frame) => frame.forward(root_target),
                            None => root_target,
                        };
                        grid.cell_index_containing(&local)
                    }
                };

                let mut response = format!("GRID_CELL: {cell_index}");
                if request.prompt.contains("EXPLANATION") {
                    response.push_str("\nEXPLANATION: scripted selection");
                }
                Ok(reply(response))
            }
        }
    }
}
