//! The streaming loop: project the store into a history GIR, score it against
//! the incoming frame, mask, compress and integrate.
//!
//! Masks are KEEP weightings: 1 retains a history Gaussian, 0 removes it. The
//! same convention drives [`opacity_modulation_render`], so a weight of 0 there
//! is pixel-exactly the same as removal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::gir::{build_gir, GaussianImage, SelectionStrategy};
use crate::imaging::RgbImage;
use crate::metrics::{self, MetricsRow, RgbNormalization};
use crate::raster::{project_all, render, RenderedImage};
use crate::redundancy::{compute_redundancy, NeighborSet, RedundancyConfig, RedundancyError, RedundancyReport};
use crate::scene::{CameraModel, GaussianId, GlobalGaussianStore, PixelGaussianMap, SceneError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("mask predictor {predictor} violated its contract: {reason}")]
    PredictorContract { predictor: String, reason: String },
    #[error(transparent)]
    Redundancy(#[from] RedundancyError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<PipelineError>,
    },
}

/// Maps a history GIR and its redundancy report to a soft keep-mask in `[0, 1]`,
/// one value per pixel in row-major order.
pub trait MaskPredictor: Send + Sync {
    fn name(&self) -> String;
    fn predict(&self, history: &GaussianImage, current: &PixelGaussianMap, report: &RedundancyReport) -> Vec<f64>;
}

/// Built-in predictors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictorKind {
    /// `1 - IoU`: fully covered history Gaussians get weight 0.
    IouHeuristic,
    /// The same weight everywhere. `constant(1)` never removes anything.
    Constant(f64),
    /// `1 - gt_mask`.
    GtOracle,
}

impl MaskPredictor for PredictorKind {
    fn name(&self) -> String {
        self.to_string()
    }

    fn predict(&self, history: &GaussianImage, _current: &PixelGaussianMap, report: &RedundancyReport) -> Vec<f64> {
        let n = history.width as usize * history.height as usize;
        match *self {
            PredictorKind::IouHeuristic => report.iou.iter().map(|v| 1.0 - v).collect(),
            PredictorKind::Constant(v) => vec![v; n],
            PredictorKind::GtOracle => report.gt_mask.iter().map(|g| 1.0 - *g as f64).collect(),
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorKind::IouHeuristic => f.write_str("iou_heuristic"),
            PredictorKind::Constant(v) => write!(f, "constant({v})"),
            PredictorKind::GtOracle => f.write_str("gt_oracle"),
        }
    }
}

impl FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "iou_heuristic" => return Ok(PredictorKind::IouHeuristic),
            "gt_oracle" => return Ok(PredictorKind::GtOracle),
            _ => {}
        }
        let inner = s
            .strip_prefix("constant(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("unknown predictor `{s}` (expected iou_heuristic, gt_oracle or constant(v))"))?;
        let v: f64 = inner.trim().parse().map_err(|_| format!("bad constant predictor value `{inner}`"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("constant predictor value {v} outside [0,1]"));
        }
        Ok(PredictorKind::Constant(v))
    }
}

impl Serialize for PredictorKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PredictorKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Streaming parameters. Every field has a default, so config files may list
/// only the keys they change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub tau_mask: f64,
    pub k_sigma: f64,
    pub window_radius: u32,
    pub theta_red: f64,
    pub neighbors: NeighborSet,
    pub predictor: PredictorKind,
    pub strategy: SelectionStrategy,
    /// Opacity threshold for the nearest selection rule.
    pub gir_tau: f64,
    pub background: [f32; 3],
    pub rgb_normalization: RgbNormalization,
    /// Expected frame size; taken from the first frame when absent.
    pub width: Option<u32>,
    pub height: Option<u32>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        let r = RedundancyConfig::default();
        Self {
            tau_mask: 0.5,
            k_sigma: r.k_sigma,
            window_radius: r.window_radius,
            theta_red: r.theta_red,
            neighbors: r.neighbors,
            predictor: PredictorKind::GtOracle,
            strategy: SelectionStrategy::MostContributive,
            gir_tau: 0.5,
            background: [0.0; 3],
            rgb_normalization: RgbNormalization::PerPixelMean,
            width: None,
            height: None,
        }
    }
}

impl StreamConfig {
    pub fn redundancy(&self) -> RedundancyConfig {
        RedundancyConfig {
            k_sigma: self.k_sigma,
            window_radius: self.window_radius,
            theta_red: self.theta_red,
            neighbors: self.neighbors,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.tau_mask) {
            return Err(PipelineError::Config(format!("tau_mask {} outside [0,1]", self.tau_mask)));
        }
        if !(0.0..=1.0).contains(&self.gir_tau) {
            return Err(PipelineError::Config(format!("gir_tau {} outside [0,1]", self.gir_tau)));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(PipelineError::Config(format!("background {:?} outside [0,1]", self.background)));
        }
        self.redundancy().validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// One incoming frame: its camera, an optional reference image, and the
/// per-pixel Gaussian candidates it contributes.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub camera: CameraModel,
    pub image: Option<RgbImage>,
    pub current: PixelGaussianMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame: u64,
    pub inserted: usize,
    pub removed: usize,
    pub live_count: usize,
    /// `removed / (removed + live_count)` for this step.
    pub c_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub gir: GaussianImage,
    pub redundancy: RedundancyReport,
    pub soft_mask: Vec<f64>,
    pub binary_mask: Vec<u8>,
    pub removed_ids: Vec<GaussianId>,
    pub inserted_ids: Vec<GaussianId>,
    pub stats: FrameStats,
}

/// `1` where `soft >= tau_mask`.
pub fn threshold_mask(soft: &[f64], tau_mask: f64) -> Vec<u8> {
    soft.iter().map(|v| u8::from(*v >= tau_mask)).collect()
}

/// Aggregates a per-pixel soft mask to one weight per referenced id by taking
/// the minimum over the id's pixels.
pub fn per_id_weights(gir: &GaussianImage, soft: &[f64]) -> BTreeMap<GaussianId, f64> {
    let mut out: BTreeMap<GaussianId, f64> = BTreeMap::new();
    for (x, y, id) in gir.occupied() {
        let w = soft[gir.pixel_index(x, y)];
        out.entry(id).and_modify(|m| *m = m.min(w)).or_insert(w);
    }
    out
}

/// Renders `store` with every Gaussian's opacity scaled by its weight; ids
/// without an entry keep weight 1.
pub fn opacity_modulation_render(
    store: &GlobalGaussianStore,
    camera: &CameraModel,
    weights: &BTreeMap<GaussianId, f64>,
    background: [f32; 3],
) -> RenderedImage {
    let splats = project_all(camera, store.iter(), |g| weights.get(&g.id).copied().unwrap_or(1.0));
    render(camera, &splats, background)
}

/// Single-writer streaming state.
pub struct StreamState {
    pub store: GlobalGaussianStore,
    pub frame_index: u64,
    pub stats: Vec<FrameStats>,
    pub config: StreamConfig,
    predictor: Box<dyn MaskPredictor>,
    size: Option<(u32, u32)>,
    total_inserted: usize,
    total_removed: usize,
}

impl fmt::Debug for StreamState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StreamState")
            .field("frame_index", &self.frame_index)
            .field("live", &self.store.len())
            .field("predictor", &self.predictor.name())
            .field("config", &self.config)
            .finish()
    }
}

impl StreamState {
    pub fn new(config: StreamConfig) -> Result<Self, PipelineError> {
        Self::with_predictor(config, Box::new(config.predictor))
    }

    /// Uses a caller-supplied predictor instead of `config.predictor`.
    pub fn with_predictor(config: StreamConfig, predictor: Box<dyn MaskPredictor>) -> Result<Self, PipelineError> {
        config.validate()?;
        let size = match (config.width, config.height) {
            (Some(w), Some(h)) => Some((w, h)),
            (None, None) => None,
            _ => return Err(PipelineError::Config("width and height must be set together".into())),
        };
        Ok(Self {
            store: GlobalGaussianStore::new(),
            frame_index: 0,
            stats: Vec::new(),
            config,
            predictor,
            size,
            total_inserted: 0,
            total_removed: 0,
        })
    }

    pub fn predictor_name(&self) -> String {
        self.predictor.name()
    }

    pub fn total_inserted(&self) -> usize {
        self.total_inserted
    }

    pub fn total_removed(&self) -> usize {
        self.total_removed
    }

    /// Everything removed so far over everything ever inserted.
    pub fn cumulative_c_ratio(&self) -> f64 {
        metrics::c_ratio(self.total_removed, self.total_inserted)
    }

    fn check_frame(&mut self, frame: &FrameInput) -> Result<(), PipelineError> {
        let cam = (frame.camera.width, frame.camera.height);
        let cur = (frame.current.width, frame.current.height);
        if cam != cur {
            return Err(PipelineError::Config(format!(
                "camera is {}x{} but the candidate map is {}x{}",
                cam.0, cam.1, cur.0, cur.1
            )));
        }
        if let Some(img) = &frame.image {
            if (img.width, img.height) != cam {
                return Err(PipelineError::Config(format!(
                    "camera is {}x{} but the image is {}x{}",
                    cam.0, cam.1, img.width, img.height
                )));
            }
        }
        match self.size {
            Some(size) if size != cam => Err(PipelineError::Config(format!(
                "frame is {}x{} but the stream expects {}x{}",
                cam.0, cam.1, size.0, size.1
            ))),
            Some(_) => Ok(()),
            None => {
                self.size = Some(cam);
                Ok(())
            }
        }
    }

    fn check_mask(&self, soft: &[f64], n: usize) -> Result<(), PipelineError> {
        let violation = |reason: String| PipelineError::PredictorContract { predictor: self.predictor.name(), reason };
        if soft.len() != n {
            return Err(violation(format!("produced {} values for {} pixels", soft.len(), n)));
        }
        if let Some((i, v)) = soft.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(violation(format!("value {v} at pixel {i} outside [0,1]")));
        }
        Ok(())
    }

    /// Advances the stream by one frame.
    pub fn step(&mut self, frame: &FrameInput) -> Result<StepReport, PipelineError> {
        self.check_frame(frame)?;
        let camera = &frame.camera;
        let gir = build_gir(self.store.iter(), camera, self.config.strategy, self.config.gir_tau);
        let redundancy = compute_redundancy(&gir, &frame.current, &self.store, &self.config.redundancy())?;
        let soft_mask = self.predictor.predict(&gir, &frame.current, &redundancy);
        self.check_mask(&soft_mask, camera.pixel_count())?;
        let binary_mask = threshold_mask(&soft_mask, self.config.tau_mask);

        let doomed: BTreeSet<GaussianId> =
            gir.occupied().filter(|(x, y, _)| binary_mask[gir.pixel_index(*x, *y)] == 0).map(|(_, _, id)| id).collect();
        let removed_ids: Vec<GaussianId> = doomed.into_iter().collect();
        let removed = self.store.remove(removed_ids.iter().copied());
        debug_assert_eq!(removed, removed_ids.len());

        let candidates = frame.current.iter().map(|(_, _, g)| g.clone()).collect();
        let inserted_ids = self.store.insert(candidates, self.frame_index)?;

        let live_count = self.store.len();
        let stats = FrameStats {
            frame: self.frame_index,
            inserted: inserted_ids.len(),
            removed,
            live_count,
            c_ratio: metrics::c_ratio(removed, removed + live_count),
        };
        self.total_inserted += inserted_ids.len();
        self.total_removed += removed;
        self.stats.push(stats);
        self.frame_index += 1;
        self.store.set_frame_index(self.frame_index);
        log::debug!(
            "frame {}: removed {}, inserted {}, live {}",
            stats.frame,
            removed,
            stats.inserted,
            live_count
        );
        Ok(StepReport { gir, redundancy, soft_mask, binary_mask, removed_ids, inserted_ids, stats })
    }
}

/// A held-out camera with its reference image.
#[derive(Debug, Clone)]
pub struct EvalView {
    pub camera: CameraModel,
    pub image: RgbImage,
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn serialize_opt_db<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => serialize_db(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub view: usize,
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub l_rgb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceReport {
    pub predictor: String,
    pub tau_mask: f64,
    pub frames: Vec<FrameStats>,
    pub eval: Vec<EvalResult>,
    #[serde(serialize_with = "serialize_opt_db")]
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub total_inserted: usize,
    pub total_removed: usize,
    pub live_count: usize,
    /// Everything removed over everything inserted.
    pub c_ratio: f64,
}

impl SequenceReport {
    pub fn metrics_row(&self, group: impl Into<String>, method: impl Into<String>) -> MetricsRow {
        MetricsRow {
            group: group.into(),
            method: method.into(),
            psnr: self.mean_psnr,
            ssim: self.mean_ssim,
            c_ratio: self.c_ratio,
        }
    }

    pub fn table(&self) -> String {
        let row = self.metrics_row(self.eval.len().to_string(), self.predictor.clone());
        metrics::format_metrics_table("Views", &[row])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Output of [`run_sequence`]: the report, the final state, and the eval renders.
#[derive(Debug)]
pub struct SequenceRun {
    pub report: SequenceReport,
    pub state: StreamState,
    pub eval_renders: Vec<RgbImage>,
}

/// Renders every eval view from `store` and scores it.
pub fn evaluate_views(
    store: &GlobalGaussianStore,
    views: &[EvalView],
    background: [f32; 3],
    norm: RgbNormalization,
) -> Result<(Vec<EvalResult>, Vec<RgbImage>), PipelineError> {
    let mut results = Vec::with_capacity(views.len());
    let mut renders = Vec::with_capacity(views.len());
    for (view, ev) in views.iter().enumerate() {
        let img = crate::raster::render_gaussians(&ev.camera, store.iter(), background).rgb;
        let shape = |e: metrics::MetricsError| PipelineError::Config(format!("eval view {view}: {e}"));
        results.push(EvalResult {
            view,
            psnr: metrics::psnr(&img, &ev.image).map_err(shape)?,
            ssim: metrics::ssim(&img, &ev.image).map_err(shape)?,
            l_rgb: metrics::l_rgb_with(std::slice::from_ref(&img), std::slice::from_ref(&ev.image), norm)
                .map_err(shape)?,
        });
        renders.push(img);
    }
    Ok((results, renders))
}

/// Streams `frames` in order through a fresh state, then evaluates the final store.
pub fn run_sequence(frames: &[FrameInput], config: StreamConfig, eval: &[EvalView]) -> Result<SequenceRun, PipelineError> {
    run_sequence_with(frames, StreamState::new(config)?, eval, |_, _| {})
}

/// Like [`run_sequence`] but starting from `state` and calling `on_step` after
/// every frame.
pub fn run_sequence_with<F>(
    frames: &[FrameInput],
    mut state: StreamState,
    eval: &[EvalView],
    mut on_step: F,
) -> Result<SequenceRun, PipelineError>
where
    F: FnMut(&StreamState, &StepReport),
{
    if frames.is_empty() {
        return Err(PipelineError::Config("a sequence needs at least one frame".into()));
    }
    for (index, frame) in frames.iter().enumerate() {
        let step = state.step(frame).map_err(|e| PipelineError::Frame { index, source: Box::new(e) })?;
        on_step(&state, &step);
    }
    let (results, eval_renders) =
        evaluate_views(&state.store, eval, state.config.background, state.config.rgb_normalization)?;
    let mean = |f: fn(&EvalResult) -> f64| {
        (!results.is_empty()).then(|| results.iter().map(f).sum::<f64>() / results.len() as f64)
    };
    let report = SequenceReport {
        predictor: state.predictor_name(),
        tau_mask: state.config.tau_mask,
        frames: state.stats.clone(),
        mean_psnr: mean(|r| r.psnr),
        mean_ssim: mean(|r| r.ssim),
        eval: results,
        total_inserted: state.total_inserted(),
        total_removed: state.total_removed(),
        live_count: state.store.len(),
        c_ratio: state.cumulative_c_ratio(),
    };
    Ok(SequenceRun { report, state, eval_renders })
}

/// Uncompressed baseline plus one full run per threshold.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub baseline: SequenceReport,
    pub runs: Vec<SequenceReport>,
}

impl SweepReport {
    /// Rows grouped by threshold, led by the unmasked baseline.
    pub fn table(&self) -> String {
        let mut rows = vec![self.baseline.metrics_row("No Mask", "uncompressed")];
        rows.extend(self.runs.iter().map(|r| r.metrics_row(format!("{}", r.tau_mask), r.predictor.clone())));
        metrics::format_metrics_table("τ", &rows)
    }
}

/// Runs the sequence once per `tau_mask` value with `config`'s predictor, plus
/// a `constant(1)` baseline.
pub fn threshold_sweep(
    frames: &[FrameInput],
    config: StreamConfig,
    taus: &[f64],
    eval: &[EvalView],
) -> Result<SweepReport, PipelineError> {
    let baseline = run_sequence(frames, StreamConfig { predictor: PredictorKind::Constant(1.0), ..config }, eval)?.report;
    let runs = taus
        .iter()
        .map(|&tau_mask| run_sequence(frames, StreamConfig { tau_mask, ..config }, eval).map(|r| r.report))
        .collect::<Result<_, _>>()?;
    Ok(SweepReport { baseline, runs })
}
