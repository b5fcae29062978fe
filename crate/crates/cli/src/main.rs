use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afv_core::audio::{extract_stereo, read_wav, write_wav, BitDepth, MultichannelBuffer};
use afv_core::config::{Overrides, PipelineConfig};
use afv_core::error::Error;
use afv_core::pipeline::{
    analyze, load_geometry, render_frame, run_bench, run_pipeline, FrameFields, VideoSource,
};
use afv_core::render::{frame_file_name, write_frame, write_manifest, MANIFEST_FILE};
use afv_core::simulate::{scene_from_json, synth_scene, truth_records, SceneSpec, SourceSpec};
use afv_core::vlm::{package_request, MediaRefs, PromptMode};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "afv", version, about = "Acoustic field video from microphone-array recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a multichannel recording of a scene.
    Synth(SynthArgs),
    /// Compute per-band MUSIC maps and normalized fields as JSON.
    Beamform(BeamformArgs),
    /// Render frames from a fields JSON produced by `beamform`.
    Render(RenderArgs),
    /// Audio (and optional video frames) to a rendered frame sequence.
    Pipeline(PipelineArgs),
    /// Build a VLM request manifest.
    Pack(PackArgs),
    /// Per-stage timings, serial and parallel.
    Bench(BenchArgs),
    /// Print the effective configuration.
    Config(ConfigArgs),
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| format!("bad list element {t:?}")))
        .collect()
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    match parse_list::<usize>(s)?.as_slice() {
        [l, r] => Ok([*l, *r]),
        _ => Err("expected two comma-separated channel indices".into()),
    }
}

/// Pipeline settings shared by every subcommand. Precedence: built-in
/// defaults < `--config` file < flags.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// Pipeline config JSON (any subset of fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Array geometry XML.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    fov: Option<f64>,
    #[arg(long)]
    grid_cols: Option<usize>,
    #[arg(long)]
    grid_rows: Option<usize>,
    /// Distance of the steering plane, meters.
    #[arg(long)]
    grid_distance: Option<f64>,
    #[arg(long)]
    speed_of_sound: Option<f64>,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    fft_size: Option<usize>,
    /// Fractional STFT overlap in [0, 1).
    #[arg(long)]
    overlap: Option<f64>,
    /// Chunks of snapshots accumulated per CSM.
    #[arg(long)]
    csm_chunks: Option<usize>,
    /// Band centers in Hz, comma-separated.
    #[arg(long)]
    bands: Option<String>,
    /// Per-band noise floors in dB.
    #[arg(long)]
    floors: Option<String>,
    /// Per-band top dynamic range in dB.
    #[arg(long)]
    clips: Option<String>,
    #[arg(long)]
    n_sources: Option<usize>,
    /// Level in dB of a full-scale on-axis tone.
    #[arg(long)]
    spl_ref: Option<f64>,
    #[arg(long)]
    median_window: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Emit conventional-over-overlay pairs.
    #[arg(long, conflicts_with = "overlay_only")]
    stacked: bool,
    /// Emit only the overlay frame.
    #[arg(long)]
    overlay_only: bool,
    /// Channels used for the stereo track, e.g. `0,3`.
    #[arg(long, value_parser = parse_pair)]
    stereo_channels: Option<[usize; 2]>,
}

impl ConfigFlags {
    fn overrides(&self) -> Result<Overrides, Error> {
        let list = |flag: &str, v: &Option<String>| {
            v.as_deref()
                .map(|s| parse_list::<f64>(s).map_err(|e| Error::Argument(format!("--{flag}: {e}"))))
                .transpose()
        };
        Ok(Overrides {
            geometry: self.geometry.clone(),
            width: self.width,
            height: self.height,
            diagonal_fov_deg: self.fov,
            grid_cols: self.grid_cols,
            grid_rows: self.grid_rows,
            grid_distance_m: self.grid_distance,
            speed_of_sound: self.speed_of_sound,
            chunk_size: self.chunk_size,
            fft_size: self.fft_size,
            overlap: self.overlap,
            csm_chunks: self.csm_chunks,
            bands: list("bands", &self.bands)?,
            floors: list("floors", &self.floors)?,
            clips: list("clips", &self.clips)?,
            n_sources: self.n_sources,
            spl_ref_db: self.spl_ref,
            median_window: self.median_window,
            alpha: self.alpha,
            stacked: if self.stacked {
                Some(true)
            } else if self.overlay_only {
                Some(false)
            } else {
                None
            },
            stereo_channels: self.stereo_channels,
        })
    }

    fn resolve(&self) -> Result<PipelineConfig, Failure> {
        let overrides = self.overrides().map_err(Failure::config)?;
        PipelineConfig::resolve(self.config.as_deref(), &overrides).map_err(Failure::config)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth pixel and grid cell per source.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Depth::Pcm24)]
    bit_depth: Depth,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum Depth {
    Pcm16,
    Pcm24,
    Float32,
}

impl From<Depth> for BitDepth {
    fn from(d: Depth) -> Self {
        match d {
            Depth::Pcm16 => BitDepth::Pcm16,
            Depth::Pcm24 => BitDepth::Pcm24,
            Depth::Float32 => BitDepth::Float32,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    Bartlett,
}

#[derive(Args)]
struct BeamformArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also compute an independent beamformer map per band.
    #[arg(long, value_enum)]
    oracle: Option<Oracle>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    fields: PathBuf,
    /// Directory of PNG video frames; mid-gray when absent.
    #[arg(long)]
    video: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory of PNG video frames; mid-gray when absent.
    #[arg(long)]
    video: Option<PathBuf>,
    /// Output directory for frames and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Write the stereo track extracted from the array.
    #[arg(long)]
    stereo_out: Option<PathBuf>,
    /// Write per-stage timings as JSON.
    #[arg(long)]
    timings: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct PackArgs {
    /// conventional, conventional_plus_af or live.
    #[arg(long)]
    mode: String,
    #[arg(long)]
    question: String,
    /// Frame-sequence manifest.
    #[arg(long)]
    frames: PathBuf,
    /// Stereo WAV.
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Multichannel WAV; a synthetic 4 kHz tone scene when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Frames in the synthetic input.
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct ConfigArgs {
    #[command(flatten)]
    flags: ConfigFlags,
}

/// Output of `beamform`, input of `render`.
#[derive(Serialize, Deserialize)]
struct FieldsDocument {
    sample_rate: u32,
    chunk_size: usize,
    frames: Vec<FrameFields>,
}

struct Failure {
    code: u8,
    stage: &'static str,
    error: String,
}

impl Failure {
    fn config(e: Error) -> Self {
        Failure {
            code: 2,
            stage: "config",
            error: e.to_string(),
        }
    }
}

trait Stage<T> {
    fn stage(self, name: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for Result<T, Error> {
    fn stage(self, name: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: if e.is_config_error() { 2 } else { 3 },
            stage: name,
            error: e.to_string(),
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure {
        code: 3,
        stage: "write",
        error: format!("{}: {e}", path.display()),
    })
}

fn read_text(path: &Path, stage: &'static str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure {
        code: 3,
        stage,
        error: format!("{}: {e}", path.display()),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let config = args.flags.resolve()?;
    let geom = load_geometry(&config).stage("geometry")?;
    let scene = scene_from_json(&read_text(&args.scene, "scene")?).stage("scene")?;
    let audio = synth_scene(&scene, &geom, config.speed_of_sound).stage("synth")?;
    write_wav(&audio, &args.out, args.bit_depth.into()).stage("write audio")?;
    if let Some(path) = &args.truth {
        let cam = config.camera_model().stage("config")?;
        let grid = config.steering_grid().stage("config")?;
        let truth = truth_records(&scene, &cam, &grid).stage("truth")?;
        write_text(path, &to_json(&truth))?;
    }
    eprintln!(
        "wrote {} channels x {} frames to {}",
        audio.n_channels(),
        audio.frames(),
        args.out.display()
    );
    Ok(())
}

fn beamform(args: BeamformArgs) -> Result<(), Failure> {
    let config = args.flags.resolve()?;
    let geom = load_geometry(&config).stage("geometry")?;
    let audio = read_wav(&args.input).stage("read audio")?;
    let frames = analyze(&config, &geom, &audio, args.oracle.is_some()).stage("beamform")?;
    let doc = FieldsDocument {
        sample_rate: audio.sample_rate(),
        chunk_size: config.chunk_size,
        frames,
    };
    write_text(&args.out, &to_json(&doc))?;
    eprintln!("wrote {} frames of fields to {}", doc.frames.len(), args.out.display());
    Ok(())
}

fn render(args: RenderArgs) -> Result<(), Failure> {
    let config = args.flags.resolve()?;
    let doc: FieldsDocument = serde_json::from_str(&read_text(&args.fields, "read fields")?).map_err(|e| Failure {
        code: 2,
        stage: "read fields",
        error: format!("{}: {e}", args.fields.display()),
    })?;
    if doc.chunk_size != config.chunk_size {
        return Err(Failure::config(Error::Validation(format!(
            "fields were computed with chunk size {}, config has {}",
            doc.chunk_size, config.chunk_size
        ))));
    }
    let cam = config.camera_model().stage("config")?;
    let video = match &args.video {
        Some(dir) => VideoSource::from_dir(dir).stage("video")?,
        None => VideoSource::Gray,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Failure {
        code: 3,
        stage: "write",
        error: format!("{}: {e}", args.out.display()),
    })?;
    for f in &doc.frames {
        let v = video.frame(f.index).stage("video")?;
        let frame = render_frame(&config, &cam, &f.field, v.as_ref()).stage("render")?;
        write_frame(&frame, &args.out.join(frame_file_name(f.index))).stage("write frames")?;
    }
    let manifest = afv_core::pipeline::manifest_for(&config, doc.sample_rate, doc.frames.len());
    write_manifest(&manifest, &args.out.join(MANIFEST_FILE)).stage("write manifest")?;
    eprintln!("rendered {} frames to {}", doc.frames.len(), args.out.display());
    Ok(())
}

fn pipeline(args: PipelineArgs) -> Result<(), Failure> {
    let config = args.flags.resolve()?;
    let geom = load_geometry(&config).stage("geometry")?;
    let audio = read_wav(&args.input).stage("read audio")?;
    let video = match &args.video {
        Some(dir) => VideoSource::from_dir(dir).stage("video")?,
        None => VideoSource::Gray,
    };
    let run = run_pipeline(&config, &geom, &audio, &video, &args.out).stage("pipeline")?;
    if let Some(path) = &args.stereo_out {
        let [l, r] = config.stereo_channels;
        let stereo = extract_stereo(&audio, l, r).stage("stereo")?;
        write_wav(&stereo, path, BitDepth::Pcm24).stage("write audio")?;
    }
    if let Some(path) = &args.timings {
        write_text(path, &to_json(&run.timings))?;
    }
    eprintln!(
        "wrote {} frames at {} fps to {}",
        run.manifest.frames.len(),
        run.manifest.fps,
        args.out.display()
    );
    Ok(())
}

fn pack(args: PackArgs) -> Result<(), Failure> {
    let mode: PromptMode = args.mode.parse().stage("arguments")?;
    let media = MediaRefs {
        frames: args.frames,
        audio: args.audio,
    };
    let manifest = package_request(mode, media, &args.question).stage("pack")?;
    write_text(&args.out, &(manifest.to_json() + "\n"))
}

fn synthetic_bench_input(config: &PipelineConfig, frames: usize) -> Result<MultichannelBuffer, Failure> {
    let geom = load_geometry(config).stage("geometry")?;
    let cam = config.camera_model().stage("config")?;
    let pos = cam.unproject(
        f64::from(cam.width) * 0.3,
        f64::from(cam.height) * 0.6,
        config.grid.distance_m,
    );
    let fs = 44_100;
    let scene = SceneSpec::new(fs, (frames * config.chunk_size) as f64 / f64::from(fs))
        .with_noise(-60.0, 1)
        .with_source(SourceSpec::tone(pos, 4000.0, -20.0));
    synth_scene(&scene, &geom, config.speed_of_sound).stage("synth")
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let config = args.flags.resolve()?;
    let geom = load_geometry(&config).stage("geometry")?;
    let audio = match &args.input {
        Some(p) => read_wav(p).stage("read audio")?,
        None => synthetic_bench_input(&config, args.frames)?,
    };
    let report = run_bench(&config, &geom, &audio, args.repeats).stage("bench")?;
    print!("{}", report.table());
    if let Some(path) = &args.json {
        write_text(path, &to_json(&report))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Beamform(a) => beamform(a),
        Command::Render(a) => render(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Pack(a) => pack(a),
        Command::Bench(a) => bench(a),
        Command::Config(a) => {
            println!("{}", a.flags.resolve()?.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("afv: {} failed: {}", f.stage, f.error);
            ExitCode::from(f.code)
        }
    }
}
