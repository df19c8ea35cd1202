//! Loss assembly `L = L_clip + L_normal` and the scorers that produce the
//! image-text similarities.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BoxDefGraph, DeformParams, GraphError};
use crate::mesh::{normal_consistency, Bounds, Mesh, MeshError, Vec3, VertexNormals};
use crate::render::{render_views, silhouette, Camera, Image, Mask, RenderError, Rgb};

/// Extra attempts after a failed score call.
pub const SCORE_RETRIES: usize = 2;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    Request(String),
}

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("empty similarity list")]
    EmptySimilarities,
    #[error("negative normal weight {0}")]
    NegativeWeight(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Deform(#[from] GraphError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("scorer failed after {attempts} attempts: {last}")]
    Scorer { attempts: usize, last: ScorerError },
}

/// Where one image of a request came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub view: usize,
    pub background: Rgb,
}

/// A scoring job. Images stay decoded in process; [`ScoreRequest::png_images`]
/// produces the transport form.
#[derive(Debug, Clone)]
pub struct ScoreRequest {
    pub prompt: String,
    pub images: Vec<Image>,
    pub meta: Vec<ImageMeta>,
    /// Bounding box of the mesh that was rendered.
    pub bounds: Bounds,
}

impl ScoreRequest {
    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.prompt.is_empty() {
            return Err(ScorerError::Request("empty prompt".into()));
        }
        if self.images.is_empty() {
            return Err(ScorerError::Request("no images".into()));
        }
        if self.meta.len() != self.images.len() {
            return Err(ScorerError::Request(format!(
                "{} images but {} metadata entries",
                self.images.len(),
                self.meta.len()
            )));
        }
        Ok(())
    }

    pub fn png_images(&self) -> Result<Vec<Vec<u8>>, RenderError> {
        self.images.iter().map(Image::to_png).collect()
    }

    pub fn to_wire(&self) -> Result<WireRequest, ScorerError> {
        let pngs = self
            .png_images()
            .map_err(|e| ScorerError::Request(e.to_string()))?;
        Ok(WireRequest {
            prompt: self.prompt.clone(),
            images: pngs
                .iter()
                .map(|p| base64::engine::general_purpose::STANDARD.encode(p))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub similarities: Vec<f64>,
}

impl ScoreResponse {
    pub fn check(&self, expected: usize) -> Result<(), ScorerError> {
        if self.similarities.len() != expected {
            return Err(ScorerError::Protocol(format!(
                "expected {expected} similarities, got {}",
                self.similarities.len()
            )));
        }
        if let Some(s) = self
            .similarities
            .iter()
            .find(|s| !(s.is_finite() && (-1.0..=1.0).contains(*s)))
        {
            return Err(ScorerError::Protocol(format!("similarity {s} outside [-1, 1]")));
        }
        Ok(())
    }
}

/// JSON body of `POST /score`, also one line of the stdio transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    /// Base64 (standard alphabet, padded) PNG files.
    pub images: Vec<String>,
}

impl WireRequest {
    pub fn decode_images(&self) -> Result<Vec<Image>, ScorerError> {
        self.images
            .iter()
            .map(|s| {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(s)
                    .map_err(|e| ScorerError::Protocol(e.to_string()))?;
                Image::from_png(&bytes).map_err(|e| ScorerError::Protocol(e.to_string()))
            })
            .collect()
    }
}

pub trait Scorer: Send + Sync {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError>;

    /// Serial scorers get one request at a time.
    fn is_serial(&self) -> bool {
        false
    }

    fn name(&self) -> &str;
}

/// Wraps a scorer with the retry policy and, for serial scorers, a queue.
pub struct ScorerHandle {
    scorer: Box<dyn Scorer>,
    queue: Option<Mutex<()>>,
}

impl ScorerHandle {
    pub fn new(scorer: Box<dyn Scorer>) -> Self {
        let queue = scorer.is_serial().then(|| Mutex::new(()));
        ScorerHandle { scorer, queue }
    }

    pub fn name(&self) -> &str {
        self.scorer.name()
    }

    pub fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ObjectiveError> {
        if let Err(e) = request.validate() {
            return Err(ObjectiveError::Scorer { attempts: 0, last: e });
        }
        let _guard = self.queue.as_ref().map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
        let mut last = None;
        for attempt in 0..=SCORE_RETRIES {
            let result = self
                .scorer
                .score(request)
                .and_then(|r| r.check(request.images.len()).map(|_| r));
            match result {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::warn!("scorer {} attempt {} failed: {e}", self.scorer.name(), attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(ObjectiveError::Scorer {
            attempts: SCORE_RETRIES + 1,
            last: last.expect("at least one attempt"),
        })
    }
}

pub fn clip_loss(similarities: &[f64]) -> Result<f64, ObjectiveError> {
    if similarities.is_empty() {
        return Err(ObjectiveError::EmptySimilarities);
    }
    Ok(-similarities.iter().sum::<f64>() / similarities.len() as f64)
}

/// `weight · (1 − mean cosine)` between original and deformed normals.
pub fn normal_loss(
    original: &VertexNormals,
    deformed: &Mesh,
    weight: f64,
) -> Result<f64, ObjectiveError> {
    if !(weight >= 0.0) {
        return Err(ObjectiveError::NegativeWeight(weight));
    }
    let c = normal_consistency(original, deformed)?;
    Ok((weight * (1.0 - c)).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub clip_term: f64,
    pub normal_term: f64,
    pub per_view: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub cameras: Vec<Camera>,
    pub backgrounds: Vec<Rgb>,
    pub normal_weight: f64,
}

impl EvalConfig {
    /// Pins every camera to the frame of `source`.
    pub fn pinned(source: &Mesh, cameras: Vec<Camera>, backgrounds: Vec<Rgb>, normal_weight: f64) -> Self {
        let frame = crate::render::Frame::of(source);
        EvalConfig {
            cameras: cameras.into_iter().map(|c| c.framed(frame)).collect(),
            backgrounds,
            normal_weight,
        }
    }

    pub fn image_meta(&self) -> Vec<ImageMeta> {
        (0..self.cameras.len())
            .flat_map(|view| {
                self.backgrounds
                    .iter()
                    .map(move |&background| ImageMeta { view, background })
            })
            .collect()
    }
}

/// Renders `mesh` under every camera/background pair and wraps it as a request.
pub fn make_request(mesh: &Mesh, prompt: &str, config: &EvalConfig) -> ScoreRequest {
    ScoreRequest {
        prompt: prompt.to_string(),
        images: render_views(mesh, &config.cameras, &config.backgrounds),
        meta: config.image_meta(),
        bounds: mesh.bounds(),
    }
}

/// Scores an already deformed mesh.
pub fn evaluate_mesh(
    deformed: &Mesh,
    original_normals: &VertexNormals,
    scorer: &ScorerHandle,
    prompt: &str,
    config: &EvalConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    let request = make_request(deformed, prompt, config);
    let response = scorer.score(&request)?;
    let clip_term = clip_loss(&response.similarities)?;
    let normal_term = normal_loss(original_normals, deformed, config.normal_weight)?;
    Ok(LossBreakdown {
        total: clip_term + normal_term,
        clip_term,
        normal_term,
        per_view: response.similarities,
    })
}

pub fn evaluate(
    mesh: &Mesh,
    original_normals: &VertexNormals,
    model: &BoxDefGraph,
    params: &DeformParams,
    scorer: &ScorerHandle,
    prompt: &str,
    config: &EvalConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    let deformed = model.deform(mesh, params)?;
    evaluate_mesh(&deformed, original_normals, scorer, prompt, config)
}

/// Extents divided by the x extent.
pub fn bbox_ratios(bounds: &Bounds) -> Vec3 {
    let e = bounds.extent();
    e / e.x
}

/// Rewards matching bounding-box proportions; ignores prompt and pixels.
#[derive(Debug, Clone)]
pub struct AspectScorer {
    log_target: Vec3,
}

pub fn proxy_aspect_scorer(target_ratios: Vec3) -> Result<AspectScorer, ScorerError> {
    if target_ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(ScorerError::Request(format!(
            "target ratios must be positive, got {target_ratios:?}"
        )));
    }
    let t = target_ratios / target_ratios.x;
    Ok(AspectScorer {
        log_target: t.map(f64::ln),
    })
}

impl AspectScorer {
    pub fn similarity(&self, bounds: &Bounds) -> f64 {
        let r = bbox_ratios(bounds);
        if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return 0.0;
        }
        let d = r.map(f64::ln) - self.log_target;
        (-d.norm_squared()).exp()
    }
}

impl Scorer for AspectScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        let s = self.similarity(&request.bounds);
        Ok(ScoreResponse {
            similarities: vec![s; request.images.len()],
        })
    }

    fn name(&self) -> &str {
        "proxy-aspect"
    }
}

/// IoU of each image's silhouette against the target mask of its view.
#[derive(Debug, Clone)]
pub struct SilhouetteScorer {
    masks: Vec<Mask>,
}

pub fn proxy_silhouette_scorer(target_masks: Vec<Mask>) -> Result<SilhouetteScorer, ScorerError> {
    if target_masks.is_empty() {
        return Err(ScorerError::Request("no target masks".into()));
    }
    Ok(SilhouetteScorer { masks: target_masks })
}

/// One mask per camera: the silhouette of `mesh` against a white background.
pub fn target_masks(mesh: &Mesh, cameras: &[Camera]) -> Vec<Mask> {
    render_views(mesh, cameras, &[Rgb::WHITE])
        .iter()
        .map(|img| silhouette(img, Rgb::WHITE))
        .collect()
}

impl Scorer for SilhouetteScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        let mut similarities = Vec::with_capacity(request.images.len());
        for (image, meta) in request.images.iter().zip(&request.meta) {
            let target = self.masks.get(meta.view).ok_or_else(|| {
                ScorerError::Request(format!(
                    "view {} but only {} target masks",
                    meta.view,
                    self.masks.len()
                ))
            })?;
            let mask = silhouette(image, meta.background);
            let iou = mask.iou(target).ok_or_else(|| {
                ScorerError::Request(format!(
                    "image {}x{} vs mask {}x{}",
                    mask.width, mask.height, target.width, target.height
                ))
            })?;
            similarities.push(iou);
        }
        Ok(ScoreResponse { similarities })
    }

    fn name(&self) -> &str {
        "proxy-silhouette"
    }
}

/// Client for the `POST /score` HTTP protocol.
pub struct RemoteHttpScorer {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteHttpScorer {
    /// `base` is the service root, e.g. `http://127.0.0.1:8765`.
    pub fn new(base: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        RemoteHttpScorer {
            endpoint: format!("{}/score", base.trim_end_matches('/')),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Scorer for RemoteHttpScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        let body = serde_json::to_string(&request.to_wire()?)
            .map_err(|e| ScorerError::Request(e.to_string()))?;
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(body.as_bytes())
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(ScorerError::Transport(format!("status {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| ScorerError::Protocol(e.to_string()))
    }

    fn name(&self) -> &str {
        "remote"
    }
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Line-delimited JSON over a child process's stdin/stdout. Serial.
pub struct StdioScorer {
    io: Mutex<ChildIo>,
}

impl StdioScorer {
    /// `command` is split on whitespace; the first word is the program.
    pub fn spawn(command: &str) -> Result<Self, ScorerError> {
        let mut words = command.split_whitespace();
        let program = words
            .next()
            .ok_or_else(|| ScorerError::Request("empty scorer command".into()))?;
        let mut child = Command::new(program)
            .args(words)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ScorerError::Transport(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(StdioScorer {
            io: Mutex::new(ChildIo { child, stdin, stdout }),
        })
    }
}

impl Scorer for StdioScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        let line = serde_json::to_string(&request.to_wire()?)
            .map_err(|e| ScorerError::Request(e.to_string()))?;
        let mut io = self.io.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(io.stdin, "{line}")
            .and_then(|_| io.stdin.flush())
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        let mut reply = String::new();
        let n = io
            .stdout
            .read_line(&mut reply)
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        if n == 0 {
            return Err(ScorerError::Transport("scorer process closed its output".into()));
        }
        serde_json::from_str(reply.trim_end()).map_err(|e| ScorerError::Protocol(e.to_string()))
    }

    fn is_serial(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "stdio"
    }
}

impl Drop for StdioScorer {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}
