//! Spatiotemporal-aware patch size selection.
//!
//! Each frame the mean depth of the previous frame's object queries is pushed
//! into a short history; the least-squares slope of that history and its
//! change since the previous frame decide between the small and the large
//! patch size:
//!
//! ```text
//! D̄ > θ and ΔS > 0  → P_l
//! D̄ < θ and ΔS < 0  → P_s
//! otherwise          → keep the previous size
//! ```
//!
//! Until ΔS exists (the first two steps) the small size is used.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::trend_slope;

/// nuScenes perception range in meters.
pub const DEFAULT_DEPTH_MAX: f64 = 61.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpssConfig {
    pub p_small: usize,
    pub p_large: usize,
    /// Threshold on the normalized mean depth.
    pub theta: f64,
    /// Frames of depth history used for the trend regression.
    pub history_len: usize,
    /// Depth normalization divisor in meters.
    pub depth_max: f64,
    /// `|ΔS|` at or below this counts as no change in trend.
    pub slope_tolerance: f64,
}

impl Default for SpssConfig {
    fn default() -> Self {
        Self {
            p_small: 17,
            p_large: 18,
            theta: 0.6,
            history_len: 8,
            depth_max: DEFAULT_DEPTH_MAX,
            slope_tolerance: 1e-12,
        }
    }
}

impl SpssConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_small < 2 {
            return Err(Error::config("p_small", "must be at least 2"));
        }
        if self.p_small >= self.p_large {
            return Err(Error::config(
                "p_large",
                format!("must exceed p_small ({} >= {})", self.p_small, self.p_large),
            ));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::config("theta", "must lie strictly between 0 and 1"));
        }
        if self.history_len < 2 {
            return Err(Error::config("history", "must be at least 2"));
        }
        if !(self.depth_max > 0.0 && self.depth_max.is_finite()) {
            return Err(Error::config("depth_max", "must be positive and finite"));
        }
        if !(self.slope_tolerance >= 0.0) {
            return Err(Error::config("slope_tolerance", "must be non-negative"));
        }
        Ok(())
    }
}

/// Mean of `depths` divided by `depth_max`, clamped to `[0, 1]`.
pub fn mean_query_depth(depths: &[f64], depth_max: f64) -> Result<f64> {
    if depths.is_empty() {
        return Err(Error::InsufficientData {
            op: "mean_query_depth",
            needed: 1,
            got: 0,
        });
    }
    let mean = depths.iter().sum::<f64>() / depths.len() as f64;
    Ok((mean / depth_max).clamp(0.0, 1.0))
}

/// Per-sequence selection state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpssState {
    pub depth_history: VecDeque<f64>,
    pub prev_slope: Option<f64>,
    pub active_patch: usize,
    pub frame_index: u64,
}

/// What a single step saw and decided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub mean_depth: f64,
    pub slope: Option<f64>,
    pub delta_slope: Option<f64>,
    pub patch: usize,
}

impl SpssState {
    pub fn new(cfg: &SpssConfig) -> Self {
        Self {
            depth_history: VecDeque::with_capacity(cfg.history_len),
            prev_slope: None,
            active_patch: cfg.p_small,
            frame_index: 0,
        }
    }

    /// Advances one frame with the normalized mean depth of the previous
    /// frame's queries and returns the patch size for the current frame.
    pub fn step(&mut self, cfg: &SpssConfig, current_mean_depth: f64) -> usize {
        self.step_traced(cfg, current_mean_depth).patch
    }

    pub fn step_traced(&mut self, cfg: &SpssConfig, current_mean_depth: f64) -> StepTrace {
        if self.depth_history.len() == cfg.history_len {
            self.depth_history.pop_front();
        }
        self.depth_history.push_back(current_mean_depth);

        let slope = if self.depth_history.len() >= 2 {
            let (a, b) = self.depth_history.as_slices();
            let values: Vec<f64> = a.iter().chain(b).copied().collect();
            trend_slope(&values).ok()
        } else {
            None
        };
        let delta = match (slope, self.prev_slope) {
            (Some(s), Some(p)) => Some(s - p),
            _ => None,
        };

        let patch = match delta {
            None => cfg.p_small,
            Some(d) if current_mean_depth > cfg.theta && d > cfg.slope_tolerance => cfg.p_large,
            Some(d) if current_mean_depth < cfg.theta && d < -cfg.slope_tolerance => cfg.p_small,
            Some(_) => self.active_patch,
        };

        if slope.is_some() {
            self.prev_slope = slope;
        }
        self.active_patch = patch;
        self.frame_index += 1;
        StepTrace {
            mean_depth: current_mean_depth,
            slope,
            delta_slope: delta,
            patch,
        }
    }

    /// Key-value snapshot:
    ///
    /// ```text
    /// frame_index = 5
    /// active_patch = 18
    /// prev_slope = 0.0125        # or `none`
    /// depth_history = 0.5,0.51   # oldest first, may be empty
    /// ```
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "frame_index = {}", self.frame_index);
        let _ = writeln!(out, "active_patch = {}", self.active_patch);
        match self.prev_slope {
            Some(s) => {
                let _ = writeln!(out, "prev_slope = {s:?}");
            }
            None => out.push_str("prev_slope = none\n"),
        }
        let hist: Vec<String> = self.depth_history.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "depth_history = {}", hist.join(","));
        out
    }

    pub fn from_snapshot(text: &str, cfg: &SpssConfig) -> Result<Self> {
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: "<spss snapshot>".into(),
            line,
            reason,
        };
        let mut frame_index = None;
        let mut active_patch = None;
        let mut prev_slope = None;
        let mut history = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(n + 1, format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| parse_err(n + 1, format!("bad {what}: {value:?}"));
            match key {
                "frame_index" => frame_index = Some(value.parse::<u64>().map_err(|_| bad(key))?),
                "active_patch" => active_patch = Some(value.parse::<usize>().map_err(|_| bad(key))?),
                "prev_slope" => {
                    prev_slope = Some(if value == "none" {
                        None
                    } else {
                        Some(value.parse::<f64>().map_err(|_| bad(key))?)
                    })
                }
                "depth_history" => {
                    let vals: Result<VecDeque<f64>> = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| s.trim().parse::<f64>().map_err(|_| bad(key)))
                        .collect();
                    history = Some(vals?);
                }
                other => return Err(parse_err(n + 1, format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| parse_err(0, format!("missing key `{k}`"));
        let state = SpssState {
            depth_history: history.ok_or_else(|| missing("depth_history"))?,
            prev_slope: prev_slope.ok_or_else(|| missing("prev_slope"))?,
            active_patch: active_patch.ok_or_else(|| missing("active_patch"))?,
            frame_index: frame_index.ok_or_else(|| missing("frame_index"))?,
        };
        if state.depth_history.len() > cfg.history_len {
            return Err(parse_err(0, "depth history longer than configured history_len".into()));
        }
        if state.active_patch != cfg.p_small && state.active_patch != cfg.p_large {
            return Err(parse_err(
                0,
                format!("active_patch {} is neither p_small nor p_large", state.active_patch),
            ));
        }
        Ok(state)
    }
}
