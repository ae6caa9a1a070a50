//! Library side of the `sepatch` command: run configs, artifact writers and
//! the four subcommands.
//!
//! A run config is a flat `key = value` file. Every key is optional:
//!
//! | key            | default      | meaning                                        |
//! |----------------|--------------|------------------------------------------------|
//! | `scenario`     | `receding`   | library scenario name, or a script path        |
//! | `height`       | from script  | image height in pixels                         |
//! | `width`        | from script  | image width in pixels                          |
//! | `views`        | from script  | camera count                                   |
//! | `frames`       | from script  | number of frames to run                        |
//! | `channels`     | from script  | image channels                                 |
//! | `p_small`      | 17           | small coarse patch size                        |
//! | `p_large`      | 18           | large coarse patch size                        |
//! | `theta`        | 0.6          | normalized depth threshold                     |
//! | `history`      | 8            | depth history length                           |
//! | `depth_max`    | 61.2         | depth normalization in meters                  |
//! | `dim`          | 32           | token width                                    |
//! | `encoder_depth`| 2            | encoder blocks                                 |
//! | `heads`        | 4            | attention heads                                |
//! | `mlp_ratio`    | 4.0          | MLP hidden width over token width              |
//! | `cost_dim`     | 256          | token width assumed by the FLOP counts         |
//! | `cost_depth`   | 24           | encoder blocks assumed by the FLOP counts      |
//! | `cost_mlp_ratio`| 4.0         | MLP ratio assumed by the FLOP counts           |
//! | `queries`      | 64           | maximum object queries                         |
//! | `query_mode`   | `oracle`     | `oracle` or `learned-stub`                     |
//! | `seed`         | 0            | root seed for weights and scene noise          |
//! | `output`       | `out`        | output directory                               |
//!
//! Relative `scenario` and `output` paths resolve against the config file's
//! directory. Unknown or repeated keys are errors.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::budget::{fit_surfaces, grid_to_csv, read_samples, search, BudgetSurface, GridPoint, ObjectiveWeights};
use crate::encoder::EncoderConfig;
use crate::enhancement::write_mask_records;
use crate::error::{Error, Result};
use crate::gradcheck::{self, Analytic, GradcheckConfig, GradcheckReport};
use crate::kv;
use crate::pipeline::{mask_records, rows_to_csv, Pipeline, PipelineConfig, QueryMode, SequenceReport};
use crate::simulator::{render, scenario_by_name, ScenarioScript};
use crate::spss::SpssConfig;

pub const REPORT_FILE: &str = "report.json";
pub const FRAMES_FILE: &str = "frames.csv";
pub const SELECTIONS_FILE: &str = "selections.txt";
pub const SURFACE_FILE: &str = "surface.json";
pub const GRID_FILE: &str = "grid.csv";
pub const TRUTH_FILE: &str = "truth.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub views: Option<usize>,
    pub frames: Option<usize>,
    pub channels: Option<usize>,
    pub pipeline: PipelineConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "receding".into(),
            height: None,
            width: None,
            views: None,
            frames: None,
            channels: None,
            pipeline: PipelineConfig {
                spss: SpssConfig::default(),
                encoder: EncoderConfig {
                    depth: 2,
                    dim: 32,
                    heads: 4,
                    mlp_ratio: 4.0,
                },
                ..PipelineConfig::default()
            },
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = HashSet::new();
        for e in kv::parse(text, origin)? {
            if !seen.insert(e.key.clone()) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: e.line,
                    reason: format!("duplicate key `{}`", e.key),
                });
            }
            let p = &mut c.pipeline;
            match e.key.as_str() {
                "scenario" => c.scenario = e.value.clone(),
                "height" => c.height = Some(e.parse(origin)?),
                "width" => c.width = Some(e.parse(origin)?),
                "views" => c.views = Some(e.parse(origin)?),
                "frames" => c.frames = Some(e.parse(origin)?),
                "channels" => c.channels = Some(e.parse(origin)?),
                "p_small" => p.spss.p_small = e.parse(origin)?,
                "p_large" => p.spss.p_large = e.parse(origin)?,
                "theta" => p.spss.theta = e.parse(origin)?,
                "history" => p.spss.history_len = e.parse(origin)?,
                "depth_max" => p.spss.depth_max = e.parse(origin)?,
                "dim" => p.encoder.dim = e.parse(origin)?,
                "encoder_depth" => p.encoder.depth = e.parse(origin)?,
                "heads" => p.encoder.heads = e.parse(origin)?,
                "mlp_ratio" => p.encoder.mlp_ratio = e.parse(origin)?,
                "cost_dim" => p.cost_encoder.dim = e.parse(origin)?,
                "cost_depth" => p.cost_encoder.depth = e.parse(origin)?,
                "cost_mlp_ratio" => p.cost_encoder.mlp_ratio = e.parse(origin)?,
                "queries" => p.num_queries = e.parse(origin)?,
                "query_mode" => {
                    p.query_mode = e.value.parse::<QueryMode>().map_err(|err| Error::Parse {
                        path: origin.to_string(),
                        line: e.line,
                        reason: err.to_string(),
                    })?
                }
                "seed" => p.seed = e.parse(origin)?,
                "output" => c.output = PathBuf::from(&e.value),
                _ => return Err(e.unknown(origin)),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        if c.output.is_relative() {
            c.output = base.join(&c.output);
        }
        if scenario_by_name(&c.scenario).is_none() && Path::new(&c.scenario).is_relative() {
            c.scenario = base.join(&c.scenario).display().to_string();
        }
        Ok(c)
    }

    /// Library scenario or script file with this config's overrides applied.
    pub fn resolve_scenario(&self) -> Result<ScenarioScript> {
        let mut s = match scenario_by_name(&self.scenario) {
            Some(s) => s,
            None => ScenarioScript::load(Path::new(&self.scenario))?,
        };
        if let Some(h) = self.height {
            s.image_h = h;
        }
        if let Some(w) = self.width {
            s.image_w = w;
        }
        if let Some(v) = self.views {
            s.num_views = v;
        }
        if let Some(f) = self.frames {
            s.num_frames = f;
        }
        if let Some(c) = self.channels {
            s.channels = c;
        }
        s.seed = self.pipeline.seed;
        s.validate()?;
        Ok(s)
    }

    /// Checks everything a run depends on before any work starts.
    pub fn validate(&self) -> Result<ScenarioScript> {
        let s = self.resolve_scenario()?;
        if s.image_h < self.pipeline.spss.p_large || s.image_w < self.pipeline.spss.p_large {
            return Err(Error::config(
                "height/width",
                format!("{}x{} is smaller than one {}-px patch", s.image_h, s.image_w, self.pipeline.spss.p_large),
            ));
        }
        let mut p = self.pipeline.clone();
        p.channels = s.channels;
        p.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub report: SequenceReport,
    pub output: PathBuf,
}

impl RunSummary {
    pub fn line(&self) -> String {
        let r = &self.report;
        let mut out = format!("{}: {} frames", r.scenario, r.frames.len());
        for f in &r.frequencies {
            let _ = write!(out, ", P={} {:.1}%", f.patch_size, 100.0 * f.fraction);
        }
        let _ = write!(
            out,
            ", total {:.3e} FLOPs, {:.1}% below the 16-px baseline",
            r.total_flops as f64,
            100.0 * r.flop_reduction
        );
        out
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run_config(cfg: &RunConfig) -> Result<RunSummary> {
    let script = cfg.validate()?;
    let mut pcfg = cfg.pipeline.clone();
    pcfg.channels = script.channels;
    let pipeline = Pipeline::new(pcfg.clone())?;
    let results = pipeline.run_sequence((0..script.num_frames).map(|f| render(&script, f)))?;
    let report = SequenceReport::new(&script.name, &pcfg, (script.image_h, script.image_w), &results);

    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    write(&cfg.output.join(REPORT_FILE), &report.to_json()?)?;
    write(&cfg.output.join(FRAMES_FILE), &rows_to_csv(&report.rows())?)?;
    write(&cfg.output.join(SELECTIONS_FILE), &write_mask_records(&mask_records(&results)))?;
    Ok(RunSummary {
        report,
        output: cfg.output.clone(),
    })
}

pub fn cmd_run(config: &Path) -> Result<RunSummary> {
    run_config(&RunConfig::load(config)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetArgs {
    pub samples: PathBuf,
    pub degree: usize,
    pub budget_cost: f64,
    pub budget_accuracy: f64,
    pub weights: ObjectiveWeights,
    /// Where to write the surface JSON and grid CSV, if anywhere.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetOutcome {
    pub choice: GridPoint,
    pub surface: BudgetSurface,
}

impl BudgetOutcome {
    pub fn line(&self) -> String {
        format!(
            "p_small={} p_large={} objective={:e} cost={:.6} accuracy={:.6}",
            self.choice.p_small, self.choice.p_large, self.choice.objective, self.choice.cost, self.choice.accuracy
        )
    }
}

pub fn cmd_budget(args: &BudgetArgs) -> Result<BudgetOutcome> {
    let samples = read_samples(&args.samples)?;
    let surface = fit_surfaces(&samples, args.degree)?;
    let choice = search(&surface, args.budget_cost, args.budget_accuracy, args.weights)?;
    if let Some(dir) = &args.output {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join(SURFACE_FILE), &surface.to_json()?)?;
        let grid = surface.grid_dump(args.budget_cost, args.budget_accuracy, args.weights);
        write(&dir.join(GRID_FILE), &grid_to_csv(&grid)?)?;
    }
    Ok(BudgetOutcome { choice, surface })
}

pub fn cmd_gradcheck(cfg: &GradcheckConfig, analytic: Analytic) -> Result<GradcheckReport> {
    gradcheck::run(cfg, analytic)
}

/// One row of `truth.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub frame: usize,
    pub object: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub depth: f64,
}

pub fn frame_image_name(frame: usize, view: usize, channels: usize) -> String {
    let ext = if channels == 3 { "ppm" } else { "pgm" };
    format!("frame{frame:04}_view{view}.{ext}")
}

/// Writes every view of `frames` as PNM plus a ground-truth CSV. Returns the
/// number of images written.
pub fn cmd_render(script: &ScenarioScript, frames: std::ops::Range<usize>, output: &Path) -> Result<usize> {
    if script.channels != 1 && script.channels != 3 {
        return Err(Error::config("channels", "PNM export supports 1 or 3 channels"));
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut truth = csv::Writer::from_writer(Vec::new());
    let mut count = 0;
    for f in frames {
        let t = render(script, f)?;
        for (v, img) in t.images.iter().enumerate() {
            img.write(&output.join(frame_image_name(f, v, script.channels)))?;
            count += 1;
        }
        for (i, (p, d)) in t.object_positions.iter().zip(&t.object_depths).enumerate() {
            truth.serialize(TruthRow {
                frame: f,
                object: i,
                x: p[0],
                y: p[1],
                z: p[2],
                depth: *d,
            })?;
        }
    }
    let bytes = truth.into_inner().map_err(|e| Error::invalid("cmd_render", e.to_string()))?;
    fs::write(output.join(TRUTH_FILE), bytes).map_err(|e| Error::io(output.join(TRUTH_FILE), e))?;
    Ok(count)
}

pub fn truth_from_csv(text: &str) -> Result<Vec<TruthRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
