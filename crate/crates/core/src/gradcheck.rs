//! Finite-difference checks of the temporal-attention and cross-granularity
//! gradients on seeded random instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::enhancement::{cgfe, cgfe_grad, temporal_enhance, temporal_enhance_grad, CgfeGrads, TemporalGrads};
use crate::error::Result;
use crate::numerics::{finite_diff_check, Matrix, DEFAULT_FD_STEP};
use crate::rng;

pub type TemporalGradFn = fn(&Matrix, &Matrix, &Matrix) -> Result<TemporalGrads>;
pub type CgfeGradFn = fn(&Matrix, &Matrix, &Matrix, &Matrix, &Matrix) -> Result<CgfeGrads>;

/// Analytic gradients under test. Swappable so the harness itself can be
/// tested against a broken implementation.
#[derive(Clone, Copy)]
pub struct Analytic {
    pub temporal: TemporalGradFn,
    pub cgfe: CgfeGradFn,
}

impl Default for Analytic {
    fn default() -> Self {
        Self {
            temporal: temporal_enhance_grad,
            cgfe: cgfe_grad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 24,
            seed: 0,
            tolerance: 1e-4,
            step: DEFAULT_FD_STEP,
        }
    }
}

/// Worst relative error per instance; the last instance of each suite uses a
/// zero upstream gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub temporal: Vec<f64>,
    pub cgfe: Vec<f64>,
}

impl GradcheckReport {
    pub fn worst_temporal(&self) -> f64 {
        self.temporal.iter().cloned().fold(0.0, f64::max)
    }

    pub fn worst_cgfe(&self) -> f64 {
        self.cgfe.iter().cloned().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst_temporal() <= self.tolerance && self.worst_cgfe() <= self.tolerance
    }
}

fn random(rows: usize, cols: usize, r: &mut impl Rng) -> Matrix {
    Matrix::random_uniform(rows, cols, -1.0, 1.0, r)
}

fn inner(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn run(cfg: &GradcheckConfig, analytic: Analytic) -> Result<GradcheckReport> {
    let mut temporal = Vec::with_capacity(cfg.instances);
    let mut cross = Vec::with_capacity(cfg.instances);
    for i in 0..cfg.instances {
        let zero_upstream = i + 1 == cfg.instances;

        let mut r = rng::stream(cfg.seed, &[1, i as u64]);
        let (n, m, c) = (r.gen_range(1..=8), r.gen_range(1..=6), r.gen_range(2..=8));
        let f_p = random(n, c, &mut r);
        let q = random(m, c, &mut r);
        let u = if zero_upstream { Matrix::zeros(n, c) } else { random(n, c, &mut r) };
        let g = (analytic.temporal)(&f_p, &q, &u)?;
        let e1 = finite_diff_check(|x| inner(&u, &temporal_enhance(x, &q).unwrap()), &g.d_f_p, &f_p, cfg.step)?;
        let e2 = finite_diff_check(|x| inner(&u, &temporal_enhance(&f_p, x).unwrap()), &g.d_q_hat, &q, cfg.step)?;
        temporal.push(e1.max(e2));

        let mut r = rng::stream(cfg.seed, &[2, i as u64]);
        let (kc, kf, c) = (r.gen_range(1..=6), r.gen_range(1..=8), r.gen_range(2..=8));
        let f_l = random(kc, c, &mut r);
        let f_n = random(kf, c, &mut r);
        let pe_l = random(kc, c, &mut r);
        let pe_n = random(kf, c, &mut r);
        let u = if zero_upstream { Matrix::zeros(kc, c) } else { random(kc, c, &mut r) };
        let g = (analytic.cgfe)(&f_l, &f_n, &pe_l, &pe_n, &u)?;
        let e1 = finite_diff_check(|x| inner(&u, &cgfe(x, &f_n, &pe_l, &pe_n).unwrap()), &g.d_f_l, &f_l, cfg.step)?;
        let e2 = finite_diff_check(|x| inner(&u, &cgfe(&f_l, x, &pe_l, &pe_n).unwrap()), &g.d_f_n, &f_n, cfg.step)?;
        cross.push(e1.max(e2));
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        temporal,
        cgfe: cross,
    })
}
