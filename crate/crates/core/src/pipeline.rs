//! End-to-end driver: split-count sweep, CMA-ES optimization, metrics and
//! output files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmaes::{minimize, BoundedEncoding, CmaState, Termination, TraceRow, DEFAULT_SIGMA0};
use crate::graph::{BoxDefGraph, ConstraintOptions, DeformParams};
use crate::mesh::{
    gaussian_curvature_change, load_obj, save_obj, self_intersection_ratio, vertex_normals, Mesh,
    Vec3, VertexNormals,
};
use crate::objective::{
    evaluate, make_request, proxy_aspect_scorer, proxy_silhouette_scorer, target_masks,
    EvalConfig, LossBreakdown, ObjectiveError, RemoteHttpScorer, Scorer, ScorerHandle,
    StdioScorer,
};
use crate::occupancy::{voxelize, DEFAULT_RESOLUTION};
use crate::render::{view_set, Camera, Frame, Image, Mask, Rgb, DEFAULT_ELEVATION, DEFAULT_IMAGE_SIZE};
use crate::split::{generate_boxes, SplitOptions, MAX_BOXES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Scorer,
    Voxelize,
    Split,
    Graph,
    Optimize,
    Metrics,
    Write,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Load => 3,
            Stage::Scorer => 4,
            Stage::Voxelize => 5,
            Stage::Split => 6,
            Stage::Graph => 7,
            Stage::Optimize => 8,
            Stage::Metrics => 9,
            Stage::Write => 10,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Scorer => "scorer",
            Stage::Voxelize => "voxelize",
            Stage::Split => "split",
            Stage::Graph => "graph",
            Stage::Optimize => "optimize",
            Stage::Metrics => "metrics",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            message: message.to_string(),
        }
    }
}

fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    ProxyAspect,
    ProxySilhouette,
    Remote,
    Stdio,
}

impl std::str::FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proxy-aspect" => Ok(ScorerKind::ProxyAspect),
            "proxy-silhouette" => Ok(ScorerKind::ProxySilhouette),
            "remote" => Ok(ScorerKind::Remote),
            "stdio" => Ok(ScorerKind::Stdio),
            _ => Err(format!(
                "unknown scorer {s:?} (proxy-aspect, proxy-silhouette, remote, stdio)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    /// Service root for `remote`.
    pub endpoint: Option<String>,
    /// Command line for `stdio`.
    pub command: Option<String>,
    pub timeout_secs: f64,
    /// Target extents (any scale) for `proxy-aspect`.
    pub target_ratios: Option<[f64; 3]>,
    /// One mask PNG per view for `proxy-silhouette`; non-black pixels are set.
    pub target_masks: Vec<PathBuf>,
    /// Without mask files, targets are the source silhouettes scaled by this
    /// factor about `target_anchor` (default: bounding-box center).
    pub target_scale: Option<f64>,
    pub target_anchor: Option<[f64; 3]>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kind: ScorerKind::ProxySilhouette,
            endpoint: None,
            command: None,
            timeout_secs: 60.0,
            target_ratios: None,
            target_masks: Vec::new(),
            target_scale: None,
            target_anchor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub views: usize,
    pub elevation: f64,
    pub size: u32,
    /// `#RRGGBB` strings.
    pub backgrounds: Vec<String>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            views: 4,
            elevation: DEFAULT_ELEVATION,
            size: DEFAULT_IMAGE_SIZE,
            backgrounds: vec!["#FFFFFF".into(), "#000000".into(), "#FFA500".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaConfig {
    pub seed: u64,
    pub sigma0: f64,
    pub lambda: Option<usize>,
    pub max_generations: usize,
    pub stall_generations: usize,
    pub stall_tolerance: f64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        let t = Termination::default();
        CmaConfig {
            seed: 0,
            sigma0: DEFAULT_SIGMA0,
            lambda: None,
            max_generations: t.max_generations,
            stall_generations: t.stall_generations,
            stall_tolerance: t.stall_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: PathBuf,
    pub prompt: String,
    pub out: PathBuf,
    pub splits: Vec<usize>,
    pub resolution: usize,
    /// Interpolation frames; 0 writes none.
    pub steps: usize,
    pub normal_weight: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub scorer: ScorerConfig,
    pub render: RenderConfig,
    pub cma: CmaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BoundedEncoding::default();
        RunConfig {
            mesh: PathBuf::new(),
            prompt: String::new(),
            out: PathBuf::from("out"),
            splits: vec![2, 3, 4],
            resolution: DEFAULT_RESOLUTION,
            steps: 8,
            normal_weight: 1.0,
            min_scale: b.min_scale,
            max_scale: b.max_scale,
            scorer: ScorerConfig::default(),
            render: RenderConfig::default(),
            cma: CmaConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(at(Stage::Config))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::new(Stage::Config, m));
        if !self.mesh.is_file() {
            return fail(format!("mesh {} does not exist", self.mesh.display()));
        }
        if self.prompt.is_empty() {
            return fail("prompt is empty".into());
        }
        if self.splits.is_empty() {
            return fail("no split counts".into());
        }
        if let Some(s) = self.splits.iter().find(|s| !(1..=MAX_BOXES).contains(*s)) {
            return fail(format!("split count {s} outside [1, {MAX_BOXES}]"));
        }
        if self.steps == 1 {
            return fail("steps must be 0 or at least 2".into());
        }
        if !(self.normal_weight >= 0.0) {
            return fail(format!("normal weight {} is negative", self.normal_weight));
        }
        if !(self.min_scale > 0.0 && self.min_scale <= 1.0 && self.max_scale >= 1.0) {
            return fail(format!(
                "scale bounds [{}, {}] must bracket 1",
                self.min_scale, self.max_scale
            ));
        }
        if self.render.views == 0 || self.render.size < 32 {
            return fail("render needs at least one view and size >= 32".into());
        }
        self.backgrounds()?;
        for p in &self.scorer.target_masks {
            if !p.is_file() {
                return fail(format!("mask {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn backgrounds(&self) -> Result<Vec<Rgb>, PipelineError> {
        self.render
            .backgrounds
            .iter()
            .map(|s| {
                Rgb::from_hex(s)
                    .ok_or_else(|| PipelineError::new(Stage::Config, format!("bad color {s:?}")))
            })
            .collect()
    }

    pub fn encoding(&self) -> BoundedEncoding {
        BoundedEncoding {
            min_scale: self.min_scale,
            max_scale: self.max_scale,
        }
    }

    pub fn termination(&self) -> Termination {
        Termination {
            max_generations: self.cma.max_generations,
            stall_generations: self.cma.stall_generations,
            stall_tolerance: self.cma.stall_tolerance,
        }
    }

    /// Unpinned optimization cameras.
    pub fn cameras(&self) -> Vec<Camera> {
        view_set(self.render.views, self.render.elevation)
            .into_iter()
            .map(|c| c.with_size(self.render.size))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split_count: usize,
    /// Can be below `split_count` when no further cut is admissible.
    pub box_count: usize,
    pub final_loss: f64,
    pub loss: LossBreakdown,
    pub best_params: Vec<[f64; 3]>,
    pub generations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Scorer similarity of the front-right white-background render.
    pub score: f64,
    pub gc_change: f64,
    pub si_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub prompt: String,
    pub scorer: String,
    pub seed: u64,
    pub sweep: Vec<SplitRecord>,
    pub chosen_split_count: usize,
    pub metrics: Metrics,
    /// Kept out of `report.json` so that file is reproducible; written to
    /// `timing.json` instead.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunReport {
    pub fn chosen(&self) -> &SplitRecord {
        self.sweep
            .iter()
            .find(|r| r.split_count == self.chosen_split_count)
            .expect("chosen split count is in the sweep")
    }
}

/// Everything a run produces, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: RunReport,
    pub deformed: Mesh,
    pub frames: Vec<Mesh>,
    pub trace: Vec<(usize, TraceRow)>,
}

/// One split count's deformation model and its optimizer result.
pub struct SweepEntry {
    pub model: BoxDefGraph,
    pub record: SplitRecord,
    pub params: DeformParams,
    pub trace: Vec<TraceRow>,
}

pub fn build_scorer(config: &RunConfig, mesh: &Mesh) -> Result<ScorerHandle, PipelineError> {
    let s = &config.scorer;
    let err = |m: String| PipelineError::new(Stage::Scorer, m);
    let scorer: Box<dyn Scorer> = match s.kind {
        ScorerKind::ProxyAspect => {
            let t = s
                .target_ratios
                .ok_or_else(|| err("proxy-aspect needs target_ratios".into()))?;
            Box::new(proxy_aspect_scorer(Vec3::from(t)).map_err(at(Stage::Scorer))?)
        }
        ScorerKind::ProxySilhouette => {
            let cameras: Vec<Camera> = {
                let frame = Frame::of(mesh);
                config.cameras().into_iter().map(|c| c.framed(frame)).collect()
            };
            let masks = if !s.target_masks.is_empty() {
                if s.target_masks.len() != cameras.len() {
                    return Err(err(format!(
                        "{} target masks for {} views",
                        s.target_masks.len(),
                        cameras.len()
                    )));
                }
                s.target_masks
                    .iter()
                    .map(|p| {
                        let bytes = fs::read(p).map_err(|e| err(format!("{}: {e}", p.display())))?;
                        let image = Image::from_png(&bytes).map_err(|e| err(e.to_string()))?;
                        Ok(Mask::from_image(&image))
                    })
                    .collect::<Result<Vec<_>, PipelineError>>()?
            } else {
                let factor = s.target_scale.unwrap_or(1.0);
                let anchor = s
                    .target_anchor
                    .map(Vec3::from)
                    .unwrap_or_else(|| mesh.bounds().center());
                target_masks(&mesh.scaled_about(anchor, factor), &cameras)
            };
            Box::new(proxy_silhouette_scorer(masks).map_err(at(Stage::Scorer))?)
        }
        ScorerKind::Remote => {
            let endpoint = s
                .endpoint
                .as_deref()
                .ok_or_else(|| err("remote scorer needs an endpoint".into()))?;
            Box::new(RemoteHttpScorer::new(
                endpoint,
                Duration::from_secs_f64(s.timeout_secs.max(0.001)),
            ))
        }
        ScorerKind::Stdio => {
            let command = s
                .command
                .as_deref()
                .ok_or_else(|| err("stdio scorer needs a command".into()))?;
            Box::new(StdioScorer::spawn(command).map_err(at(Stage::Scorer))?)
        }
    };
    Ok(ScorerHandle::new(scorer))
}

fn params_from(encoding: &BoundedEncoding, x: &[f64]) -> DeformParams {
    DeformParams::from_flat(&encoding.decode(x))
}

/// Builds the deformation model for one split count and optimizes it.
#[allow(clippy::too_many_arguments)]
pub fn optimize_split_count(
    mesh: &Mesh,
    normals: &VertexNormals,
    grid: &crate::occupancy::OccupancyGrid,
    split_count: usize,
    scorer: &ScorerHandle,
    eval: &EvalConfig,
    config: &RunConfig,
) -> Result<SweepEntry, PipelineError> {
    let boxes = generate_boxes(mesh, grid, split_count, &SplitOptions::default())
        .map_err(at(Stage::Split))?;
    let model = BoxDefGraph::build(mesh, &boxes, &ConstraintOptions::default())
        .map_err(at(Stage::Graph))?;
    let encoding = config.encoding();
    let dim = 3 * model.box_count();
    let mut state = CmaState::new(
        &vec![0.0; dim],
        config.cma.sigma0,
        config.cma.seed.wrapping_add(split_count as u64),
        config.cma.lambda,
    )
    .map_err(at(Stage::Optimize))?;

    let outcome = minimize(&mut state, &config.termination(), |candidates| {
        candidates
            .par_iter()
            .map(|x| {
                evaluate(
                    mesh,
                    normals,
                    &model,
                    &params_from(&encoding, x),
                    scorer,
                    &config.prompt,
                    eval,
                )
                .map(|l| l.total)
            })
            .collect::<Result<Vec<f64>, ObjectiveError>>()
    })
    .map_err(at(Stage::Optimize))?;

    let params = params_from(&encoding, &outcome.best);
    let loss = evaluate(mesh, normals, &model, &params, scorer, &config.prompt, eval)
        .map_err(at(Stage::Optimize))?;
    log::info!(
        "split count {split_count}: {} boxes, loss {:.6} after {} generations",
        model.box_count(),
        outcome.best_fitness,
        outcome.generations
    );
    Ok(SweepEntry {
        record: SplitRecord {
            split_count,
            box_count: model.box_count(),
            final_loss: outcome.best_fitness,
            loss,
            best_params: params.scales.iter().map(|s| [s.x, s.y, s.z]).collect(),
            generations: outcome.generations,
            evaluations: state.evaluations(),
        },
        model,
        params,
        trace: outcome.trace,
    })
}

/// Frames along `s(t) = exp(t ln s_opt)`, `t` evenly spaced in [0, 1]. The
/// endpoints use the identity and `params` exactly.
pub fn interpolate(
    mesh: &Mesh,
    model: &BoxDefGraph,
    params: &DeformParams,
    steps: usize,
) -> Result<Vec<Mesh>, crate::graph::GraphError> {
    let steps = steps.max(2);
    (0..steps)
        .map(|i| {
            let p = if i == 0 {
                DeformParams::identity(params.scales.len())
            } else if i == steps - 1 {
                params.clone()
            } else {
                let t = i as f64 / (steps - 1) as f64;
                DeformParams {
                    scales: params
                        .scales
                        .iter()
                        .map(|s| s.map(|v| (t * v.ln()).exp()))
                        .collect(),
                }
            };
            model.deform(mesh, &p)
        })
        .collect()
}

/// Front-right score, curvature change and self-intersection ratio.
pub fn report_metrics(
    original: &Mesh,
    deformed: &Mesh,
    scorer: &ScorerHandle,
    prompt: &str,
    config: &RunConfig,
) -> Result<Metrics, PipelineError> {
    let front_right = view_set(1, config.render.elevation)
        .into_iter()
        .map(|c| c.with_size(config.render.size))
        .collect();
    let eval = EvalConfig::pinned(original, front_right, vec![Rgb::WHITE], config.normal_weight);
    let request = make_request(deformed, prompt, &eval);
    let response = scorer.score(&request).map_err(at(Stage::Metrics))?;
    Ok(Metrics {
        score: response.similarities[0],
        gc_change: gaussian_curvature_change(original, deformed).map_err(at(Stage::Metrics))?,
        si_ratio: self_intersection_ratio(deformed),
    })
}

/// Runs the sweep on an in-memory mesh with a ready scorer.
pub fn run_with(mesh: &Mesh, scorer: &ScorerHandle, config: &RunConfig) -> Result<RunResult, PipelineError> {
    let start = Instant::now();
    if config.splits.is_empty() {
        return Err(PipelineError::new(Stage::Config, "no split counts"));
    }
    let normals = vertex_normals(mesh);
    let grid = voxelize(mesh, config.resolution).map_err(at(Stage::Voxelize))?;
    let eval = EvalConfig::pinned(mesh, config.cameras(), config.backgrounds()?, config.normal_weight);

    let mut best: Option<SweepEntry> = None;
    let mut records = Vec::new();
    let mut trace = Vec::new();
    for &count in &config.splits {
        let entry = optimize_split_count(mesh, &normals, &grid, count, scorer, &eval, config)?;
        records.push(entry.record.clone());
        trace.extend(entry.trace.iter().cloned().map(|r| (count, r)));
        let better = match &best {
            None => true,
            Some(b) => entry.record.final_loss < b.record.final_loss,
        };
        if better {
            best = Some(entry);
        }
    }
    let best = best.expect("at least one split count");

    let deformed = best
        .model
        .deform(mesh, &best.params)
        .map_err(at(Stage::Optimize))?;
    let frames = if config.steps >= 2 {
        interpolate(mesh, &best.model, &best.params, config.steps).map_err(at(Stage::Optimize))?
    } else {
        Vec::new()
    };
    let metrics = report_metrics(mesh, &deformed, scorer, &config.prompt, config)?;
    Ok(RunResult {
        report: RunReport {
            prompt: config.prompt.clone(),
            scorer: scorer.name().to_string(),
            seed: config.cma.seed,
            sweep: records,
            chosen_split_count: best.record.split_count,
            metrics,
            wall_time: start.elapsed(),
        },
        deformed,
        frames,
        trace,
    })
}

/// Validates the config, loads the mesh, runs and writes all outputs.
pub fn run(config: &RunConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let mesh = load_obj(&config.mesh).map_err(at(Stage::Load))?;
    let scorer = build_scorer(config, &mesh)?;
    let result = run_with(&mesh, &scorer, config)?;
    write_outputs(&config.out, &result)?;
    Ok(result.report)
}

fn write_trace(path: &Path, rows: &[(usize, TraceRow)]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["split_count", "generation", "best_fitness", "mean_fitness", "sigma"])?;
    for (count, r) in rows {
        w.write_record([
            count.to_string(),
            r.generation.to_string(),
            r.best_fitness.to_string(),
            r.mean_fitness.to_string(),
            r.sigma.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `deformed.obj`, `report.json`, `timing.json`, `trace.csv` and
/// `frames/frame_###.obj`. On failure, files written so far are removed.
pub fn write_outputs(out: &Path, result: &RunResult) -> Result<(), PipelineError> {
    let mut written: Vec<PathBuf> = Vec::new();
    let outcome = (|| -> Result<(), String> {
        fs::create_dir_all(out).map_err(|e| e.to_string())?;
        let path = out.join("deformed.obj");
        written.push(path.clone());
        save_obj(&result.deformed, &path).map_err(|e| e.to_string())?;

        let path = out.join("report.json");
        written.push(path.clone());
        let json = serde_json::to_string_pretty(&result.report).map_err(|e| e.to_string())?;
        fs::write(&path, json + "\n").map_err(|e| e.to_string())?;

        let path = out.join("timing.json");
        written.push(path.clone());
        let timing = serde_json::json!({ "wall_time_secs": result.report.wall_time.as_secs_f64() });
        fs::write(&path, timing.to_string() + "\n").map_err(|e| e.to_string())?;

        let path = out.join("trace.csv");
        written.push(path.clone());
        write_trace(&path, &result.trace).map_err(|e| e.to_string())?;

        if !result.frames.is_empty() {
            let dir = out.join("frames");
            fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            for (i, frame) in result.frames.iter().enumerate() {
                let path = dir.join(format!("frame_{i:03}.obj"));
                written.push(path.clone());
                save_obj(frame, &path).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    })();
    outcome.map_err(|message| {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        PipelineError::new(Stage::Write, message)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn quick_config() -> RunConfig {
        RunConfig {
            prompt: "a shape".into(),
            splits: vec![1, 2],
            resolution: 16,
            steps: 3,
            render: RenderConfig {
                views: 2,
                size: 48,
                ..RenderConfig::default()
            },
            cma: CmaConfig {
                max_generations: 4,
                ..CmaConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn toml_defaults_and_overrides() {
        let c = RunConfig::from_toml(
            r#"
            mesh = "m.obj"
            prompt = "a chair"
            splits = [3]
            [scorer]
            kind = "proxy-aspect"
            target_ratios = [1.0, 2.0, 1.0]
            [cma]
            seed = 7
            "#,
        )
        .unwrap();
        assert_eq!(c.splits, vec![3]);
        assert_eq!(c.scorer.kind, ScorerKind::ProxyAspect);
        assert_eq!(c.cma.seed, 7);
        assert_eq!(c.cma.max_generations, 150);
        assert_eq!(c.render.views, 4);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = dir.path().join("m.obj");
        save_obj(&fixtures::unit_cube(), &mesh).unwrap();
        let good = RunConfig {
            mesh: mesh.clone(),
            ..quick_config()
        };
        good.validate().unwrap();
        let cases = [
            RunConfig { mesh: dir.path().join("missing.obj"), ..good.clone() },
            RunConfig { splits: vec![0], ..good.clone() },
            RunConfig { splits: vec![17], ..good.clone() },
            RunConfig { steps: 1, ..good.clone() },
            RunConfig { prompt: String::new(), ..good.clone() },
        ];
        for c in cases {
            assert_eq!(c.validate().unwrap_err().stage, Stage::Config);
        }
    }

    #[test]
    fn interpolation_midpoint_is_log_space() {
        let mesh = fixtures::unit_cube();
        let grid = voxelize(&mesh, 8).unwrap();
        let boxes = generate_boxes(&mesh, &grid, 1, &SplitOptions::default()).unwrap();
        let model = BoxDefGraph::build(&mesh, &boxes, &ConstraintOptions::default()).unwrap();
        let params = DeformParams {
            scales: vec![Vec3::new(4.0, 1.0, 1.0)],
        };
        let frames = interpolate(&mesh, &model, &params, 3).unwrap();
        assert_eq!(frames[0].vertices, mesh.vertices);
        assert_eq!(frames[2], model.deform(&mesh, &params).unwrap());
        let e = frames[1].bounds().extent();
        assert!((e.x - 2.0).abs() < 1e-12 && (e.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_target_run_stays_near_identity() {
        let mesh = fixtures::two_cube();
        let config = quick_config();
        let scorer = build_scorer(&config, &mesh).unwrap();
        let result = run_with(&mesh, &scorer, &config).unwrap();
        let report = &result.report;
        let chosen = report.chosen();
        assert!(report.sweep.iter().all(|r| chosen.final_loss <= r.final_loss));
        assert!(chosen.final_loss <= -0.9, "{}", chosen.final_loss);
        assert_eq!(result.frames.len(), 3);
        assert_eq!(result.frames[2], result.deformed);
        assert!(report.metrics.gc_change.is_finite() && report.metrics.si_ratio.is_finite());
    }

    #[test]
    fn outputs_are_written() {
        let mesh = fixtures::unit_cube();
        let config = RunConfig {
            splits: vec![1],
            ..quick_config()
        };
        let scorer = build_scorer(&config, &mesh).unwrap();
        let result = run_with(&mesh, &scorer, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &result).unwrap();
        for f in ["deformed.obj", "report.json", "timing.json", "trace.csv", "frames/frame_002.obj"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert!(report.get("wall_time").is_none());
        assert!(report["metrics"]["score"].is_number());
    }

    #[test]
    fn stage_codes_are_distinct() {
        let stages = [
            Stage::Config,
            Stage::Load,
            Stage::Scorer,
            Stage::Voxelize,
            Stage::Split,
            Stage::Graph,
            Stage::Optimize,
            Stage::Metrics,
            Stage::Write,
        ];
        let mut codes: Vec<i32> = stages.iter().map(|s| s.exit_code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), stages.len());
        assert!(codes.iter().all(|&c| c != 0));
    }
}
