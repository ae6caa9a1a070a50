//! Per-frame orchestration and sequence reports.
//!
//! For every frame the rig-level patch size is chosen once from the previous
//! frame's query depths. Each view is then embedded twice (16 px fine, active
//! size coarse); fine tokens are scored against the motion-aligned queries,
//! the informative ones enhance their coarse counterparts, and only the
//! coarse tokens run through the encoder. Object queries are read out from
//! the encoded tokens of all views.
//!
//! Views are processed in parallel; results are collected in view order, so
//! output does not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{embedding_flops, flops_estimate, FlopReport};
use crate::embedding::{embed, grid_for, pi_resize_kernel, positional_encoding, EmbedKernel, BASE_PATCH};
use crate::encoder::{encoder_forward, EncoderConfig, EncoderWeights};
use crate::enhancement::{
    adaptive_select, align_queries, attention, cgfe, entropy_scores, temporal_enhance, MaskRecord, QuerySet,
    SelectionMask,
};
use crate::error::{Error, Result};
use crate::geometry::{horizontal_depth, RigidTransform, Vec3};
use crate::image::Image;
use crate::numerics::Matrix;
use crate::rng;
use crate::simulator::FrameTruth;
use crate::spss::{mean_query_depth, SpssConfig, SpssState, StepTrace};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const KERNEL_STREAM: u64 = 0x6b65726e;
const QUERY_STREAM: u64 = 0x71756572;
const HEAD_STREAM: u64 = 0x68656164;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// Query depths come from ground truth.
    Oracle,
    /// Depths predicted by an untrained linear head on the query embedding.
    LearnedStub,
}

impl std::str::FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(QueryMode::Oracle),
            "learned-stub" => Ok(QueryMode::LearnedStub),
            _ => Err(Error::config("query_mode", format!("expected oracle or learned-stub, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub spss: SpssConfig,
    /// Encoder that actually runs.
    pub encoder: EncoderConfig,
    /// Encoder shape the FLOP counts are reported for. Only `dim`, `depth`
    /// and `mlp_ratio` matter.
    pub cost_encoder: EncoderConfig,
    /// Maximum number of object queries.
    pub num_queries: usize,
    pub query_mode: QueryMode,
    pub channels: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            spss: SpssConfig::default(),
            encoder: EncoderConfig::default(),
            cost_encoder: EncoderConfig::default(),
            num_queries: 64,
            query_mode: QueryMode::Oracle,
            channels: 1,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.spss.validate()?;
        self.encoder.validate()?;
        self.cost_encoder.validate()?;
        if self.num_queries == 0 {
            return Err(Error::config("num_queries", "must be positive"));
        }
        if self.channels == 0 {
            return Err(Error::config("channels", "must be positive"));
        }
        Ok(())
    }
}

/// Output of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: usize,
    pub active_patch: usize,
    /// `None` when no step was taken (first frame, or no previous queries).
    pub spss: Option<StepTrace>,
    /// One mask per view.
    pub selections: Vec<SelectionMask>,
    /// Summed over views; `tokens_per_view` is the per-view coarse count.
    pub flops: FlopReport,
    /// Same frame through a plain 16-px encoder with no enhancement.
    pub baseline_flops: FlopReport,
    pub query_readout: QuerySet,
}

/// Seeded model state shared by all frames.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    fine_kernel: EmbedKernel,
    coarse_kernels: Vec<EmbedKernel>,
    weights: EncoderWeights,
    query_slots: Matrix,
    depth_head: (Vec<f64>, f64),
}

struct ViewOutput {
    encoded: Matrix,
    selection: SelectionMask,
    flops: FlopReport,
    baseline: FlopReport,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = cfg.encoder.dim;
        let fine_kernel = EmbedKernel::random(
            BASE_PATCH,
            cfg.channels,
            dim,
            &mut rng::stream(cfg.seed, &[KERNEL_STREAM]),
        );
        let coarse_kernels = vec![
            pi_resize_kernel(&fine_kernel, cfg.spss.p_small)?,
            pi_resize_kernel(&fine_kernel, cfg.spss.p_large)?,
        ];
        let weights = EncoderWeights::random(&cfg.encoder, cfg.seed);
        let query_slots = Matrix::random_uniform(
            cfg.num_queries,
            dim,
            -1.0,
            1.0,
            &mut rng::stream(cfg.seed, &[QUERY_STREAM]),
        );
        let head = Matrix::random_uniform(1, dim, -0.1, 0.1, &mut rng::stream(cfg.seed, &[HEAD_STREAM]));
        let depth_head = (head.row(0).to_vec(), 0.5 * cfg.spss.depth_max);
        Ok(Self {
            cfg,
            fine_kernel,
            coarse_kernels,
            weights,
            query_slots,
            depth_head,
        })
    }

    pub fn new_state(&self) -> SpssState {
        SpssState::new(&self.cfg.spss)
    }

    fn coarse_kernel(&self, patch: usize) -> Result<&EmbedKernel> {
        self.coarse_kernels
            .iter()
            .find(|k| k.patch_size == patch)
            .ok_or_else(|| Error::invalid("coarse_kernel", format!("no kernel for patch size {patch}")))
    }

    fn run_view(&self, image: &Image, patch: usize, aligned: Option<&QuerySet>) -> Result<ViewOutput> {
        let dim = self.cfg.encoder.dim;
        let fine = embed(image, &self.fine_kernel)?;
        let mut coarse = embed(image, self.coarse_kernel(patch)?)?;

        let scored = match aligned {
            Some(q) if !q.is_empty() => temporal_enhance(&fine.features, &q.embeddings)?,
            _ => fine.features.clone(),
        };
        let mut selection = adaptive_select(&entropy_scores(&scored));
        selection.project(&fine.grid, &coarse.grid)?;

        if !selection.is_empty() {
            let pe_l = positional_encoding(&coarse.grid, dim)?.gather_rows(&selection.coarse_indices)?;
            let pe_n = positional_encoding(&fine.grid, dim)?.gather_rows(&selection.fine_indices)?;
            let f_l = coarse.features.gather_rows(&selection.coarse_indices)?;
            let f_n = fine.features.gather_rows(&selection.fine_indices)?;
            let enhanced = cgfe(&f_l, &f_n, &pe_l, &pe_n)?;
            coarse.features.scatter_rows(&selection.coarse_indices, &enhanced)?;
        }

        let encoded = encoder_forward(&coarse, &self.cfg.encoder, &self.weights)?;
        let queries = aligned.map_or(0, QuerySet::len);
        let (ch, cost, cdim) = (self.cfg.channels, &self.cfg.cost_encoder, self.cfg.cost_encoder.dim);
        let flops = flops_estimate(coarse.grid.tokens(), cost, &selection, queries)
            .add_embedding(embedding_flops(&fine.grid, ch, cdim) + embedding_flops(&coarse.grid, ch, cdim));
        let baseline = flops_estimate(fine.grid.tokens(), cost, &SelectionMask::default(), 0)
            .add_embedding(embedding_flops(&fine.grid, ch, cdim));
        Ok(ViewOutput {
            encoded: encoded.features,
            selection,
            flops,
            baseline,
        })
    }

    /// Query embeddings attend over the encoded tokens of every view. One
    /// query per ground-truth object (at most `num_queries`, in script order).
    fn read_out(&self, encoded: &[Matrix], truth_positions: &[Vec3]) -> Result<QuerySet> {
        let m = truth_positions.len().min(self.cfg.num_queries);
        let dim = self.cfg.encoder.dim;
        if m == 0 {
            return QuerySet::new(Matrix::zeros(0, dim), Vec::new());
        }
        let tokens = Matrix::vstack(&encoded.iter().collect::<Vec<_>>())?;
        let slots = self.query_slots.gather_rows(&(0..m).collect::<Vec<_>>())?;
        let (embeddings, _) = attention(&slots, &tokens, &tokens)?;
        let positions: Vec<Vec3> = match self.cfg.query_mode {
            QueryMode::Oracle => truth_positions[..m].to_vec(),
            QueryMode::LearnedStub => {
                let (w, b) = &self.depth_head;
                (0..m)
                    .map(|i| {
                        let e = embeddings.row(i);
                        let d = (b + e.iter().zip(w).map(|(a, c)| a * c).sum::<f64>())
                            .clamp(0.0, self.cfg.spss.depth_max);
                        let p = truth_positions[i];
                        let r = horizontal_depth(p);
                        if r > 0.0 {
                            [p[0] / r * d, p[1] / r * d, p[2]]
                        } else {
                            [d, 0.0, p[2]]
                        }
                    })
                    .collect()
            }
        };
        QuerySet::new(embeddings, positions)
    }

    /// Runs one frame. `state` is advanced in place.
    pub fn run_frame(
        &self,
        frame: usize,
        views: &[Image],
        state: &mut SpssState,
        prev_queries: Option<&QuerySet>,
        ego_motion: &RigidTransform,
        truth_positions: &[Vec3],
    ) -> Result<FrameResult> {
        let first = views.first().ok_or_else(|| Error::invalid("run_frame", "no views"))?;
        if let Some(v) = views
            .iter()
            .find(|v| (v.height(), v.width(), v.channels()) != (first.height(), first.width(), first.channels()))
        {
            return Err(Error::invalid(
                "run_frame",
                format!(
                    "mixed view resolutions {}x{}x{} and {}x{}x{}",
                    first.height(),
                    first.width(),
                    first.channels(),
                    v.height(),
                    v.width(),
                    v.channels()
                ),
            ));
        }

        let spss = match prev_queries {
            Some(q) if !q.is_empty() => {
                let d = mean_query_depth(&q.depths, self.cfg.spss.depth_max)?;
                Some(state.step_traced(&self.cfg.spss, d))
            }
            _ => None,
        };
        let patch = state.active_patch;
        let aligned = prev_queries.map(|q| align_queries(q, ego_motion));

        let outputs: Vec<ViewOutput> = views
            .par_iter()
            .map(|img| self.run_view(img, patch, aligned.as_ref()))
            .collect::<Result<_>>()?;

        let flops = outputs
            .iter()
            .fold(FlopReport::default(), |acc, o| acc.accumulate(&o.flops));
        let baseline_flops = outputs
            .iter()
            .fold(FlopReport::default(), |acc, o| acc.accumulate(&o.baseline));
        let encoded: Vec<Matrix> = outputs.iter().map(|o| o.encoded.clone()).collect();
        let query_readout = self.read_out(&encoded, truth_positions)?;
        Ok(FrameResult {
            frame,
            active_patch: patch,
            spss,
            selections: outputs.into_iter().map(|o| o.selection).collect(),
            flops,
            baseline_flops,
            query_readout,
        })
    }

    /// Threads SPSS state and queries through `frames` in order.
    pub fn run_sequence<I>(&self, frames: I) -> Result<Vec<FrameResult>>
    where
        I: IntoIterator<Item = Result<FrameTruth>>,
    {
        let mut state = self.new_state();
        let mut prev: Option<QuerySet> = None;
        let mut out = Vec::new();
        for truth in frames {
            let truth = truth?;
            let r = self.run_frame(
                truth.frame,
                &truth.images,
                &mut state,
                prev.as_ref(),
                &truth.ego_motion,
                &truth.object_positions,
            )?;
            prev = Some(r.query_readout.clone());
            out.push(r);
        }
        if out.is_empty() {
            return Err(Error::invalid("run_sequence", "no frames"));
        }
        Ok(out)
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub frame: usize,
    pub patch_size: usize,
    #[serde(rename = "N")]
    pub tokens_per_view: u64,
    pub total_flops: u64,
    pub selected_fine: usize,
    pub selected_coarse: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFrequency {
    pub patch_size: usize,
    pub frames: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetail {
    pub frame: usize,
    pub patch_size: usize,
    /// Normalized mean depth fed to the selector, when it stepped.
    pub mean_query_depth: Option<f64>,
    pub delta_slope: Option<f64>,
    pub flops: FlopReport,
    pub baseline_flops: u64,
    pub selected_fine: usize,
    pub selected_coarse: usize,
    pub queries: usize,
}

/// Aggregate run report, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub schema_version: u32,
    pub scenario: String,
    pub views: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub p_small: usize,
    pub p_large: usize,
    pub frames: Vec<FrameDetail>,
    pub frequencies: Vec<PatchFrequency>,
    pub total_flops: u64,
    pub baseline_flops: u64,
    /// `1 − total / baseline`.
    pub flop_reduction: f64,
}

impl SequenceReport {
    pub fn new(scenario: &str, cfg: &PipelineConfig, resolution: (usize, usize), results: &[FrameResult]) -> Self {
        let views = results.first().map_or(0, |r| r.selections.len());
        let frames: Vec<FrameDetail> = results
            .iter()
            .map(|r| FrameDetail {
                frame: r.frame,
                patch_size: r.active_patch,
                mean_query_depth: r.spss.map(|t| t.mean_depth),
                delta_slope: r.spss.and_then(|t| t.delta_slope),
                flops: r.flops,
                baseline_flops: r.baseline_flops.total,
                selected_fine: r.selections.iter().map(|s| s.fine_indices.len()).sum(),
                selected_coarse: r.selections.iter().map(|s| s.coarse_indices.len()).sum(),
                queries: r.query_readout.len(),
            })
            .collect();
        let frequencies = [cfg.spss.p_small, cfg.spss.p_large]
            .iter()
            .map(|&p| {
                let n = frames.iter().filter(|f| f.patch_size == p).count();
                PatchFrequency {
                    patch_size: p,
                    frames: n,
                    fraction: n as f64 / frames.len().max(1) as f64,
                }
            })
            .collect();
        let total_flops = frames.iter().map(|f| f.flops.total).sum();
        let baseline_flops: u64 = frames.iter().map(|f| f.baseline_flops).sum();
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario: scenario.to_string(),
            views,
            image_height: resolution.0,
            image_width: resolution.1,
            p_small: cfg.spss.p_small,
            p_large: cfg.spss.p_large,
            frames,
            frequencies,
            total_flops,
            baseline_flops,
            flop_reduction: if baseline_flops == 0 {
                0.0
            } else {
                1.0 - total_flops as f64 / baseline_flops as f64
            },
        }
    }

    pub fn rows(&self) -> Vec<FrameRow> {
        self.frames
            .iter()
            .map(|f| FrameRow {
                frame: f.frame,
                patch_size: f.patch_size,
                tokens_per_view: f.flops.tokens_per_view,
                total_flops: f.flops.total,
                selected_fine: f.selected_fine,
                selected_coarse: f.selected_coarse,
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::invalid(
                "SequenceReport::from_json",
                format!("schema version {} is not {}", r.schema_version, REPORT_SCHEMA_VERSION),
            ));
        }
        Ok(r)
    }
}

pub fn rows_to_csv(rows: &[FrameRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("rows_to_csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("rows_to_csv", e.to_string()))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<FrameRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn mask_records(results: &[FrameResult]) -> Vec<MaskRecord> {
    results
        .iter()
        .flat_map(|r| {
            r.selections.iter().enumerate().map(move |(view, s)| MaskRecord {
                frame: r.frame,
                view,
                fine: s.fine_indices.clone(),
                coarse: s.coarse_indices.clone(),
            })
        })
        .collect()
}

/// Per-view coarse token count for a resolution and patch size.
pub fn tokens_per_view(height: usize, width: usize, patch: usize) -> usize {
    grid_for(height, width, patch).tokens()
}
