//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data or format errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::gir::{build_gir, serialize_gir, SelectionStrategy};
use crate::imaging::RgbImage;
use crate::io::{self, load_sequence, merge_config};
use crate::pipeline::{run_sequence, threshold_sweep, PredictorKind, StreamConfig};
use crate::raster::render_gaussians;
use crate::scene::{Gaussian, GaussianParams};
use crate::synth::{generate_synthetic, write_synthetic, SyntheticSceneSpec, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "splatstream", version, about = "Streaming Gaussian splatting with redundancy compression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene from one camera.
    Render(RenderArgs),
    /// Build a Gaussian-image representation of a scene.
    Gir(GirArgs),
    /// Stream a sequence and write the report, eval renders and final scene.
    Stream(StreamArgs),
    /// Stream a sequence with and without compression, or over several thresholds, and print a metrics table.
    Eval(EvalArgs),
    /// Generate a synthetic sequence directory.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Background as `r,g,b` in [0,1].
    #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
    pub background: [f32; 3],
}

#[derive(Debug, Args)]
pub struct GirArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "most_contributive")]
    pub strategy: SelectionStrategy,
    /// Opacity threshold for the nearest rule.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
}

/// Stream configuration sources. Flags override the config file, which
/// overrides the manifest's `[config]` table.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tau_mask: Option<f64>,
    #[arg(long)]
    pub k_sigma: Option<f64>,
    #[arg(long)]
    pub window_radius: Option<u32>,
    #[arg(long)]
    pub theta_red: Option<f64>,
    /// `iou_heuristic`, `gt_oracle` or `constant(v)`.
    #[arg(long)]
    pub predictor: Option<PredictorKind>,
    #[arg(long)]
    pub strategy: Option<SelectionStrategy>,
    #[arg(long, value_parser = parse_rgb)]
    pub background: Option<[f32; 3]>,
}

impl ConfigArgs {
    fn overrides(&self) -> toml::Table {
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: toml::Value| {
            t.insert(k.to_string(), v);
        };
        if let Some(v) = self.tau_mask {
            put("tau_mask", v.into());
        }
        if let Some(v) = self.k_sigma {
            put("k_sigma", v.into());
        }
        if let Some(v) = self.window_radius {
            put("window_radius", i64::from(v).into());
        }
        if let Some(v) = self.theta_red {
            put("theta_red", v.into());
        }
        if let Some(v) = self.predictor {
            put("predictor", v.to_string().into());
        }
        if let Some(v) = self.strategy {
            put("strategy", v.name().into());
        }
        if let Some(v) = self.background {
            put("background", toml::Value::Array(v.iter().map(|c| toml::Value::Float(*c as f64)).collect()));
        }
        t
    }

    /// Resolves the final stream configuration on top of `manifest`.
    pub fn resolve(&self, manifest: &toml::Table) -> Result<StreamConfig> {
        let file = match &self.config {
            Some(p) => io::load_config_table(p)?,
            None => toml::Table::new(),
        };
        let overrides = self.overrides();
        let config = merge_config(&[manifest, &file, &overrides]).map_err(|e| anyhow::anyhow!("config: {e}"))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Manifest file or a directory containing `manifest.toml`.
    pub sequence: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub sequence: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated thresholds; produces one row per value.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML scene spec; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gaussians: Option<usize>,
    #[arg(long)]
    pub duplicates: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub eval_views: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
}

fn parse_rgb(s: &str) -> std::result::Result<[f32; 3], String> {
    let parts: Vec<f32> = s
        .split(',')
        .map(|p| p.trim().parse::<f32>().map_err(|_| format!("bad color component `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    let rgb: [f32; 3] = parts.try_into().map_err(|_| "expected r,g,b".to_string())?;
    if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err("color components must be in [0,1]".into());
    }
    Ok(rgb)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    io::save_image(path, img)?;
    Ok(())
}

fn load_store_entries(path: &Path) -> Result<Vec<Gaussian>> {
    let params: Vec<GaussianParams> = io::load_scene(path)?;
    Ok(params
        .into_iter()
        .enumerate()
        .map(|(i, params)| Gaussian { id: i as u64, birth_frame: 0, params })
        .collect())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let gaussians = load_store_entries(&a.scene)?;
    let camera = io::load_camera(&a.camera)?;
    let img = render_gaussians(&camera, &gaussians, a.background);
    ensure_dir(&a.out)?;
    save_png(&a.out.join("render.png"), &img.rgb)?;
    io::save_image(&a.out.join("render.fim"), &img.rgb)?;
    println!("rendered {} Gaussians to {}", gaussians.len(), a.out.display());
    Ok(())
}

fn cmd_gir(a: &GirArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.tau) {
        anyhow::bail!("tau {} outside [0,1]", a.tau);
    }
    let gaussians = load_store_entries(&a.scene)?;
    let camera = io::load_camera(&a.camera)?;
    let gir = build_gir(&gaussians, &camera, a.strategy, a.tau);
    ensure_dir(&a.out)?;
    let path = a.out.join("gir.bin");
    fs::write(&path, serialize_gir(&gir)).with_context(|| format!("writing {}", path.display()))?;
    let mut alpha = RgbImage::new(gir.width, gir.height);
    for y in 0..gir.height {
        for x in 0..gir.width {
            let v = gir.alpha_at(x, y);
            alpha.set_pixel(x, y, [v, v, v]);
        }
    }
    save_png(&a.out.join("alpha.png"), &alpha)?;
    println!("{} of {} pixels reference a Gaussian", gir.occupied().count(), camera.pixel_count());
    Ok(())
}

fn cmd_stream(a: &StreamArgs) -> Result<()> {
    let seq = load_sequence(&a.sequence)?;
    let config = a.config.resolve(&seq.manifest.config)?;
    let run = run_sequence(&seq.frames, config, &seq.eval)?;
    ensure_dir(&a.out)?;
    write_text(&a.out.join("report.json"), &run.report.to_json())?;
    let table = run.report.table();
    write_text(&a.out.join("metrics.txt"), &table)?;
    for (i, img) in run.eval_renders.iter().enumerate() {
        save_png(&a.out.join(format!("eval_{i:02}.png")), img)?;
    }
    let final_scene: Vec<GaussianParams> = run.state.store.iter().map(|g| g.params.clone()).collect();
    io::save_scene(&a.out.join("scene.ply"), &final_scene)?;
    print!("{table}");
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let seq = load_sequence(&a.sequence)?;
    let config = a.config.resolve(&seq.manifest.config)?;
    let taus = a.taus.clone().unwrap_or_else(|| vec![config.tau_mask]);
    if let Some(t) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        anyhow::bail!("threshold {t} outside [0,1]");
    }
    let sweep = threshold_sweep(&seq.frames, config, &taus, &seq.eval)?;
    ensure_dir(&a.out)?;
    let table = sweep.table();
    write_text(&a.out.join("metrics.txt"), &table)?;
    write_text(&a.out.join("metrics.json"), &serde_json::to_string_pretty(&sweep)?)?;
    print!("{table}");
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec: SyntheticSceneSpec = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|_| io::IoError::MissingFile(p.clone()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSceneSpec::default(),
    };
    spec.seed = a.seed;
    if let Some(v) = a.gaussians {
        spec.gaussian_count = v;
    }
    if let Some(v) = a.duplicates {
        spec.duplicate_fraction = v;
    }
    if let Some(v) = a.jitter {
        spec.duplicate_jitter = v;
    }
    if let Some(v) = a.eval_views {
        spec.eval_views = v;
    }
    if let Some(v) = a.width {
        spec.width = v;
    }
    if let Some(v) = a.height {
        spec.height = v;
    }
    if let Some(n) = a.frames {
        spec.trajectory = match spec.trajectory {
            Trajectory::Orbit { radius, height, arc_degrees, .. } => {
                Trajectory::Orbit { radius, height, arc_degrees, frames: n }
            }
            Trajectory::Linear { start, end, target, .. } => Trajectory::Linear { start, end, target, frames: n },
        };
    }
    let scene = generate_synthetic(&spec)?;
    ensure_dir(&a.out)?;
    write_synthetic(&a.out, &scene)?;
    println!(
        "wrote {} Gaussians ({} duplicates), {} frames, {} eval views to {}",
        scene.gaussians.len(),
        scene.duplicate_of.len(),
        scene.frames.len(),
        scene.eval.len(),
        a.out.display()
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Gir(a) => cmd_gir(a),
        Command::Stream(a) => cmd_stream(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}
