//! Accuracy and cost surfaces over `(P_s, P_l)` and the budget search.
//!
//! Both quantities are fitted as total-degree-`d` polynomials in the two patch
//! sizes. The search scans every integer pair `P_s < P_l` inside the sampled
//! ranges and minimizes
//!
//! ```text
//! w_t · (f_time − B_time)² + w_n · (f_acc − B_acc)²
//! ```
//!
//! Ties go to the smaller `P_s`, then the smaller `P_l`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{poly_eval_2d, polyfit_2d, PolyFit};

pub const SURFACE_SCHEMA_VERSION: u32 = 1;

/// One measured configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSample {
    pub p_small: usize,
    pub p_large: usize,
    pub accuracy: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSurface {
    pub schema_version: u32,
    pub degree: usize,
    pub accuracy_fit: PolyFit,
    pub cost_fit: PolyFit,
    /// Inclusive range of `P_s` covered by the samples.
    pub p_small_range: (usize, usize),
    /// Inclusive range of `P_l` covered by the samples.
    pub p_large_range: (usize, usize),
}

/// Per-term weights of the search objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub cost: f64,
    pub accuracy: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            cost: 1.0,
            accuracy: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub p_small: usize,
    pub p_large: usize,
    pub accuracy: f64,
    pub cost: f64,
    pub objective: f64,
}

pub fn fit_surfaces(samples: &[BudgetSample], degree: usize) -> Result<BudgetSurface> {
    if let Some(s) = samples.iter().find(|s| s.p_small >= s.p_large) {
        return Err(Error::invalid(
            "fit_surfaces",
            format!("sample ({}, {}) violates p_small < p_large", s.p_small, s.p_large),
        ));
    }
    let pts = |f: fn(&BudgetSample) -> f64| -> Vec<(f64, f64, f64)> {
        samples
            .iter()
            .map(|s| (s.p_small as f64, s.p_large as f64, f(s)))
            .collect()
    };
    let accuracy_fit = polyfit_2d(&pts(|s| s.accuracy), degree)?;
    let cost_fit = polyfit_2d(&pts(|s| s.cost), degree)?;
    let range = |f: fn(&BudgetSample) -> usize| {
        let lo = samples.iter().map(f).min().unwrap_or(0);
        let hi = samples.iter().map(f).max().unwrap_or(0);
        (lo, hi)
    };
    Ok(BudgetSurface {
        schema_version: SURFACE_SCHEMA_VERSION,
        degree,
        accuracy_fit,
        cost_fit,
        p_small_range: range(|s| s.p_small),
        p_large_range: range(|s| s.p_large),
    })
}

impl BudgetSurface {
    pub fn accuracy(&self, p_small: usize, p_large: usize) -> f64 {
        poly_eval_2d(&self.accuracy_fit.coeffs, p_small as f64, p_large as f64)
    }

    pub fn cost(&self, p_small: usize, p_large: usize) -> f64 {
        poly_eval_2d(&self.cost_fit.coeffs, p_small as f64, p_large as f64)
    }

    /// Feasible pairs in scan order.
    pub fn grid(&self) -> Vec<(usize, usize)> {
        let (s0, s1) = self.p_small_range;
        let (l0, l1) = self.p_large_range;
        (s0..=s1)
            .flat_map(|s| (l0.max(s + 1)..=l1).map(move |l| (s, l)))
            .collect()
    }

    pub fn objective(&self, p_small: usize, p_large: usize, budget_cost: f64, budget_accuracy: f64, w: ObjectiveWeights) -> f64 {
        let dc = self.cost(p_small, p_large) - budget_cost;
        let da = self.accuracy(p_small, p_large) - budget_accuracy;
        w.cost * dc * dc + w.accuracy * da * da
    }

    pub fn grid_dump(&self, budget_cost: f64, budget_accuracy: f64, w: ObjectiveWeights) -> Vec<GridPoint> {
        self.grid()
            .into_iter()
            .map(|(s, l)| GridPoint {
                p_small: s,
                p_large: l,
                accuracy: self.accuracy(s, l),
                cost: self.cost(s, l),
                objective: self.objective(s, l, budget_cost, budget_accuracy, w),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        if s.schema_version != SURFACE_SCHEMA_VERSION {
            return Err(Error::invalid(
                "BudgetSurface::from_json",
                format!("schema version {} is not {}", s.schema_version, SURFACE_SCHEMA_VERSION),
            ));
        }
        Ok(s)
    }
}

/// Grid point with the smallest objective.
pub fn search(surface: &BudgetSurface, budget_cost: f64, budget_accuracy: f64, w: ObjectiveWeights) -> Result<GridPoint> {
    let mut best: Option<GridPoint> = None;
    for p in surface.grid_dump(budget_cost, budget_accuracy, w) {
        if !p.objective.is_finite() {
            return Err(Error::NonFinite { op: "budget search" });
        }
        if best.map_or(true, |b| p.objective < b.objective) {
            best = Some(p);
        }
    }
    best.ok_or_else(|| Error::invalid("budget search", "no pair with p_small < p_large in the sampled ranges"))
}

pub fn samples_from_csv(text: &str) -> Result<Vec<BudgetSample>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_samples(path: &Path) -> Result<Vec<BudgetSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    samples_from_csv(&text)
}

pub fn grid_to_csv(points: &[GridPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("grid_to_csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("grid_to_csv", e.to_string()))
}

pub fn grid_from_csv(text: &str) -> Result<Vec<GridPoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
