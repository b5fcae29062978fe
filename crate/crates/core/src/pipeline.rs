//! End-to-end driver: chunks → STFT → CSM → MUSIC per band → normalized
//! composite → median → rendered frames, with per-stage timing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{chunk_stream, AudioChunk, MultichannelBuffer};
use crate::beamform::{
    bartlett_map_with_table, full_scale_reference, music_map_with_table, to_spl, FieldMap,
    SteeringTable,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fieldpipe::{composite, normalize_band, upsample, BandConfig, MedianWindow, NormalizedField};
use crate::geometry::{parse_geometry, ArrayGeometry, CameraModel, Position, SteeringGrid};
use crate::render::{
    grayscale, list_png_frames, overlay, read_frame, stack_pair, write_frame, write_manifest,
    frame_file_name, FrameManifest, RgbFrame, SequenceInfo, MANIFEST_FILE,
};
use crate::spectral::{band_bin, CsmAccumulator, SpectralSnapshots, Stft};

/// Fill used for the video frame when no RGB video is supplied.
pub const NEUTRAL_GRAY: [u8; 3] = [128, 128, 128];

/// Load the configured geometry (or the bundled default) and apply the
/// extrinsic offset.
pub fn load_geometry(config: &PipelineConfig) -> Result<ArrayGeometry> {
    let geom = match &config.geometry {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_geometry(&text)?
        }
        None => ArrayGeometry::default_uma16(),
    };
    let [x, y, z] = config.array_offset_m;
    Ok(if [x, y, z] == [0.0; 3] {
        geom
    } else {
        geom.translated(Position::new(x, y, z))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

/// Wall-clock milliseconds per stage for one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTimings {
    pub chunking: f64,
    pub stft: f64,
    pub csm: f64,
    pub music_bands: Vec<f64>,
    pub music_total: f64,
    pub postprocess: f64,
    pub render: f64,
}

impl FrameTimings {
    pub fn total(&self) -> f64 {
        self.chunking + self.stft + self.csm + self.music_total + self.postprocess + self.render
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub band_hz: f64,
    pub bin: usize,
    pub music_db: FieldMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bartlett_db: Option<FieldMap>,
}

/// Everything computed for one chunk before rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFields {
    pub index: usize,
    pub bands: Vec<BandResult>,
    /// Equal-weight mean of the normalized bands.
    pub composite: NormalizedField,
    /// Composite after the temporal median.
    pub field: NormalizedField,
}

struct BandRuntime {
    config: BandConfig,
    bin: usize,
    table: SteeringTable,
    accumulator: CsmAccumulator,
}

struct BandOutput {
    music: FieldMap,
    bartlett: Option<FieldMap>,
    csm_ms: f64,
    music_ms: f64,
}

impl BandRuntime {
    fn run(
        &mut self,
        snapshots: &SpectralSnapshots,
        grid: &SteeringGrid,
        loading_eps: f64,
        n_sources: usize,
        with_oracle: bool,
    ) -> Result<BandOutput> {
        let t = Instant::now();
        self.accumulator.push(snapshots);
        let r = self.accumulator.estimate(loading_eps)?;
        let csm_ms = elapsed_ms(t);
        let t = Instant::now();
        let music = music_map_with_table(&r, &self.table, grid.cols(), grid.rows(), n_sources)?;
        let music_ms = elapsed_ms(t);
        let bartlett = if with_oracle {
            Some(bartlett_map_with_table(&r, &self.table, grid.cols(), grid.rows())?)
        } else {
            None
        };
        Ok(BandOutput {
            music,
            bartlett,
            csm_ms,
            music_ms,
        })
    }
}

/// Stateful per-stream processor. The median window and CSM accumulators make
/// it single-writer: feed chunks in order.
pub struct Pipeline {
    config: PipelineConfig,
    camera: CameraModel,
    grid: SteeringGrid,
    stft: Stft,
    bands: Vec<BandRuntime>,
    ref_power: f64,
    median: MedianWindow,
    execution: Execution,
    with_oracle: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, geom: &ArrayGeometry, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        let camera = config.camera_model()?;
        let grid = config.steering_grid()?;
        let stft = Stft::new(config.fft_size, config.hop(), config.window)?;
        let bands = config
            .bands
            .iter()
            .map(|b| {
                let bin = band_bin(b.center_hz, sample_rate, config.fft_size)?;
                let freq = bin as f64 * f64::from(sample_rate) / config.fft_size as f64;
                Ok(BandRuntime {
                    config: *b,
                    bin,
                    table: SteeringTable::new(&grid, geom, freq, config.speed_of_sound)?,
                    accumulator: CsmAccumulator::new(bin, config.csm_chunks)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if config.n_sources >= geom.len() {
            return Err(Error::Validation(format!(
                "n_sources = {} needs more than {} microphones",
                config.n_sources,
                geom.len()
            )));
        }
        let ref_power = full_scale_reference(geom.len(), stft.coherent_gain(), config.spl_ref_db);
        let median = MedianWindow::new(config.median_window)?;
        Ok(Self {
            config,
            camera,
            grid,
            stft,
            bands,
            ref_power,
            median,
            execution: Execution::Serial,
            with_oracle: false,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Also compute the Bartlett map for every band.
    pub fn with_oracle(mut self, enabled: bool) -> Self {
        self.with_oracle = enabled;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn grid(&self) -> &SteeringGrid {
        &self.grid
    }

    pub fn ref_power(&self) -> f64 {
        self.ref_power
    }

    pub fn process_chunk(&mut self, chunk: &AudioChunk<'_>, timings: &mut FrameTimings) -> Result<FrameFields> {
        let t = Instant::now();
        let snapshots = self.stft.analyze(chunk)?;
        timings.stft = elapsed_ms(t);

        let grid = &self.grid;
        let eps = self.config.loading_eps;
        let n_sources = self.config.n_sources;
        let oracle = self.with_oracle;
        let t = Instant::now();
        let outputs: Vec<BandOutput> = match self.execution {
            Execution::Serial => self
                .bands
                .iter_mut()
                .map(|b| b.run(&snapshots, grid, eps, n_sources, oracle))
                .collect::<Result<_>>()?,
            Execution::Parallel => self
                .bands
                .par_iter_mut()
                .map(|b| b.run(&snapshots, grid, eps, n_sources, oracle))
                .collect::<Result<_>>()?,
        };
        let wall = elapsed_ms(t);
        timings.music_bands = outputs.iter().map(|o| o.music_ms).collect();
        match self.execution {
            Execution::Serial => {
                timings.csm = outputs.iter().map(|o| o.csm_ms).sum();
                timings.music_total = (wall - timings.csm).max(timings.music_bands.iter().sum());
            }
            Execution::Parallel => {
                let csm_max = outputs.iter().map(|o| o.csm_ms).fold(0.0, f64::max);
                timings.csm = csm_max;
                timings.music_total = (wall - csm_max).max(0.0);
            }
        }

        let t = Instant::now();
        let index = chunk.index();
        let mut normalized = Vec::with_capacity(outputs.len());
        let mut bands = Vec::with_capacity(outputs.len());
        for (rt, out) in self.bands.iter().zip(outputs) {
            let music_db = to_spl(&out.music, self.ref_power).with_band(rt.config.center_hz, index);
            let bartlett_db = out
                .bartlett
                .map(|b| to_spl(&b, self.ref_power).with_band(rt.config.center_hz, index));
            normalized.push(normalize_band(&music_db, &rt.config));
            bands.push(BandResult {
                band_hz: rt.config.center_hz,
                bin: rt.bin,
                music_db,
                bartlett_db,
            });
        }
        let mut composite_field = composite(&normalized)?;
        composite_field.frame_index = index;
        let field = self.median.push(composite_field.clone())?;
        timings.postprocess = elapsed_ms(t);
        Ok(FrameFields {
            index,
            bands,
            composite: composite_field,
            field,
        })
    }

    /// Render one frame: overlay on the grayscale video frame, optionally
    /// stacked under the unmodified frame.
    pub fn render(&self, field: &NormalizedField, video: Option<&RgbFrame>) -> Result<RgbFrame> {
        render_frame(&self.config, &self.camera, field, video)
    }
}

pub fn render_frame(
    config: &PipelineConfig,
    camera: &CameraModel,
    field: &NormalizedField,
    video: Option<&RgbFrame>,
) -> Result<RgbFrame> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let base = match video {
        Some(f) if f.width() != w || f.height() != h => {
            return Err(Error::Argument(format!(
                "video frame is {}x{}, camera is {w}x{h}",
                f.width(),
                f.height()
            )))
        }
        Some(f) => f.clone(),
        None => RgbFrame::filled(w, h, NEUTRAL_GRAY),
    };
    let scalar = upsample(field, w, h)?;
    let af = overlay(&grayscale(&base), &scalar, config.alpha)?;
    if config.stacked {
        stack_pair(&base, &af)
    } else {
        Ok(af)
    }
}

/// RGB frames backing the conventional half, indexed by chunk. Holds the last
/// frame when the video is shorter than the audio.
#[derive(Debug, Clone, Default)]
pub enum VideoSource {
    #[default]
    Gray,
    Frames(Vec<PathBuf>),
}

impl VideoSource {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let frames = list_png_frames(dir)?;
        if frames.is_empty() {
            return Err(Error::Argument(format!("no PNG frames in {}", dir.display())));
        }
        Ok(VideoSource::Frames(frames))
    }

    pub fn frame(&self, index: usize) -> Result<Option<RgbFrame>> {
        match self {
            VideoSource::Gray => Ok(None),
            VideoSource::Frames(paths) => {
                let path = &paths[index.min(paths.len() - 1)];
                read_frame(path).map(Some)
            }
        }
    }
}

/// Stage statistics over many frames.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl StageStats {
    fn of(mut samples: Vec<f64>) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_by(f64::total_cmp);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let rank = ((0.95 * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
        Self {
            mean_ms: mean,
            p95_ms: samples[rank - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub frames: usize,
    pub chunking: StageStats,
    pub stft: StageStats,
    pub csm: StageStats,
    pub music_bands: Vec<StageStats>,
    pub music_total: StageStats,
    pub postprocess: StageStats,
    pub render: StageStats,
    pub total: StageStats,
}

impl StageTimings {
    pub fn from_frames(frames: &[FrameTimings]) -> Self {
        let col = |f: fn(&FrameTimings) -> f64| StageStats::of(frames.iter().map(f).collect());
        let n_bands = frames.first().map_or(0, |f| f.music_bands.len());
        Self {
            frames: frames.len(),
            chunking: col(|f| f.chunking),
            stft: col(|f| f.stft),
            csm: col(|f| f.csm),
            music_bands: (0..n_bands)
                .map(|b| StageStats::of(frames.iter().map(|f| f.music_bands[b]).collect()))
                .collect(),
            music_total: col(|f| f.music_total),
            postprocess: col(|f| f.postprocess),
            render: col(|f| f.render),
            total: col(FrameTimings::total),
        }
    }
}

/// Analyze every full chunk without rendering.
pub fn analyze(
    config: &PipelineConfig,
    geom: &ArrayGeometry,
    audio: &MultichannelBuffer,
    with_oracle: bool,
) -> Result<Vec<FrameFields>> {
    check_channels(geom, audio)?;
    let mut pipe = Pipeline::new(config.clone(), geom, audio.sample_rate())?.with_oracle(with_oracle);
    let mut timings = FrameTimings::default();
    chunk_stream(audio, config.chunk_size)?
        .map(|chunk| pipe.process_chunk(&chunk, &mut timings))
        .collect()
}

fn check_channels(geom: &ArrayGeometry, audio: &MultichannelBuffer) -> Result<()> {
    if geom.len() != audio.n_channels() {
        return Err(Error::Validation(format!(
            "audio has {} channels but the geometry has {} microphones",
            audio.n_channels(),
            geom.len()
        )));
    }
    Ok(())
}

/// Summary of a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub manifest: FrameManifest,
    pub timings: StageTimings,
    pub fields: Vec<FrameFields>,
}

/// Process `audio` and hand each rendered frame to `sink` in index order.
pub fn run_pipeline_with<F>(
    config: &PipelineConfig,
    geom: &ArrayGeometry,
    audio: &MultichannelBuffer,
    video: &VideoSource,
    execution: Execution,
    mut sink: F,
) -> Result<(Vec<FrameFields>, Vec<FrameTimings>)>
where
    F: FnMut(usize, &RgbFrame) -> Result<()>,
{
    check_channels(geom, audio)?;
    let mut pipe = Pipeline::new(config.clone(), geom, audio.sample_rate())?.with_execution(execution);
    let mut fields = Vec::new();
    let mut timings = Vec::new();
    let t = Instant::now();
    let chunks: Vec<AudioChunk<'_>> = chunk_stream(audio, config.chunk_size)?.collect();
    let chunking = if chunks.is_empty() {
        0.0
    } else {
        elapsed_ms(t) / chunks.len() as f64
    };
    for chunk in &chunks {
        let mut ft = FrameTimings {
            chunking,
            ..Default::default()
        };
        let frame_fields = pipe.process_chunk(chunk, &mut ft)?;
        let t = Instant::now();
        let video_frame = video.frame(chunk.index())?;
        let frame = pipe.render(&frame_fields.field, video_frame.as_ref())?;
        ft.render = elapsed_ms(t);
        sink(chunk.index(), &frame)?;
        fields.push(frame_fields);
        timings.push(ft);
    }
    Ok((fields, timings))
}

pub fn sequence_info(config: &PipelineConfig, sample_rate: u32) -> SequenceInfo {
    let (w, h) = (config.camera.width as usize, config.camera.height as usize);
    SequenceInfo {
        sample_rate,
        chunk_size: config.chunk_size,
        stacked: config.stacked,
        alpha: config.alpha,
        bands: config.bands.clone(),
        grid: config.grid_info(),
        frame_size: (w, if config.stacked { 2 * h } else { h }),
    }
}

pub fn manifest_for(config: &PipelineConfig, sample_rate: u32, frame_count: usize) -> FrameManifest {
    let info = sequence_info(config, sample_rate);
    FrameManifest {
        fps: config.fps(sample_rate),
        width: info.frame_size.0,
        height: info.frame_size.1,
        sample_rate,
        chunk_size: config.chunk_size,
        stacked: config.stacked,
        alpha: config.alpha,
        bands: info.bands,
        grid: info.grid,
        frames: (0..frame_count).map(frame_file_name).collect(),
    }
}

/// Full pipeline writing `frame_%06d.png` and `manifest.json` into `out_dir`.
pub fn run_pipeline(
    config: &PipelineConfig,
    geom: &ArrayGeometry,
    audio: &MultichannelBuffer,
    video: &VideoSource,
    out_dir: &Path,
) -> Result<PipelineRun> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (fields, timings) = run_pipeline_with(config, geom, audio, video, Execution::Serial, |i, f| {
        write_frame(f, &out_dir.join(frame_file_name(i))).map_err(|e| Error::Frame {
            index: i,
            message: e.to_string(),
        })
    })?;
    let manifest = manifest_for(config, audio.sample_rate(), fields.len());
    write_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(PipelineRun {
        manifest,
        timings: StageTimings::from_frames(&timings),
        fields,
    })
}

/// SHA-256 over rendered frames, in order.
#[derive(Default)]
pub struct FrameHasher(Sha256);

impl FrameHasher {
    pub fn update(&mut self, frame: &RgbFrame) {
        self.0.update((frame.width() as u64).to_le_bytes());
        self.0.update((frame.height() as u64).to_le_bytes());
        self.0.update(frame.data());
    }

    pub fn hex(self) -> String {
        self.0
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMode {
    pub execution: String,
    pub timings: StageTimings,
    pub frame_hashes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub frames_per_run: usize,
    pub channels: usize,
    pub grid: [usize; 2],
    pub bands: usize,
    pub serial: BenchMode,
    pub parallel: BenchMode,
    /// Every run in both modes produced identical frames.
    pub deterministic: bool,
    /// Published four-band MUSIC latency on a laptop, for comparison.
    pub reference_music_ms: f64,
}

pub fn run_bench(
    config: &PipelineConfig,
    geom: &ArrayGeometry,
    audio: &MultichannelBuffer,
    repeats: usize,
) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::Argument("repeats must be at least 1".into()));
    }
    let mut modes = Vec::new();
    let mut frames_per_run = 0;
    for execution in [Execution::Serial, Execution::Parallel] {
        let mut all = Vec::new();
        let mut hashes = Vec::new();
        for _ in 0..repeats {
            let mut hasher = FrameHasher::default();
            let (fields, timings) = run_pipeline_with(
                config,
                geom,
                audio,
                &VideoSource::Gray,
                execution,
                |_, f| {
                    hasher.update(f);
                    Ok(())
                },
            )?;
            frames_per_run = fields.len();
            hashes.push(hasher.hex());
            all.extend(timings);
        }
        modes.push(BenchMode {
            execution: match execution {
                Execution::Serial => "serial".into(),
                Execution::Parallel => "parallel".into(),
            },
            timings: StageTimings::from_frames(&all),
            frame_hashes: hashes,
        });
    }
    let parallel = modes.pop().expect("two modes");
    let serial = modes.pop().expect("two modes");
    let deterministic = serial
        .frame_hashes
        .iter()
        .chain(&parallel.frame_hashes)
        .all(|h| *h == serial.frame_hashes[0]);
    Ok(BenchReport {
        repeats,
        frames_per_run,
        channels: audio.n_channels(),
        grid: [config.grid.cols, config.grid.rows],
        bands: config.bands.len(),
        serial,
        parallel,
        deterministic,
        reference_music_ms: 58.0,
    })
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{} frames x {} repeats, {} channels, {}x{} grid, {} bands\n",
            self.frames_per_run, self.repeats, self.channels, self.grid[0], self.grid[1], self.bands
        );
        out.push_str(&format!(
            "{:<16}{:>12}{:>12}{:>12}{:>12}\n",
            "stage", "serial mean", "serial p95", "par mean", "par p95"
        ));
        let s = &self.serial.timings;
        let p = &self.parallel.timings;
        let mut rows: Vec<(String, &StageStats, &StageStats)> = vec![
            ("chunking".into(), &s.chunking, &p.chunking),
            ("stft".into(), &s.stft, &p.stft),
            ("csm".into(), &s.csm, &p.csm),
        ];
        for (i, (a, b)) in s.music_bands.iter().zip(&p.music_bands).enumerate() {
            rows.push((format!("music[{i}]"), a, b));
        }
        rows.push(("music total".into(), &s.music_total, &p.music_total));
        rows.push(("postprocess".into(), &s.postprocess, &p.postprocess));
        rows.push(("render".into(), &s.render, &p.render));
        rows.push(("total".into(), &s.total, &p.total));
        for (name, a, b) in rows {
            out.push_str(&format!(
                "{name:<16}{:>12.3}{:>12.3}{:>12.3}{:>12.3}\n",
                a.mean_ms, a.p95_ms, b.mean_ms, b.p95_ms
            ));
        }
        out.push_str(&format!(
            "deterministic: {}  (reference four-band MUSIC: {} ms/frame)\n",
            self.deterministic, self.reference_music_ms
        ));
        out
    }
}
