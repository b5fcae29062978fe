//! Free-field synthesis of point-source scenes for localization ground truth.
//!
//! Source levels are referenced to 1 m: a source at `r` meters reaches a mic
//! scaled by `1/r`. Tones are peak amplitude `10^(level/20)`; noise signals
//! use the RMS of a sinusoid at the same level, `10^(level/20)/√2`.
//!
//! Band noise is defined by its spectrum over the whole buffer, so each mic's
//! delayed copy is an exact frequency-domain phase shift of the same periodic
//! signal. Tones are evaluated in closed form, which is the same exact delay.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelBuffer;
use crate::error::{Error, Result};
use crate::geometry::{project, ArrayGeometry, CameraModel, Position, SteeringGrid};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalKind {
    Tone { freq_hz: f64 },
    BandNoise { lo_hz: f64, hi_hz: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// Camera-frame position in meters.
    pub position: [f64; 3],
    pub signal: SignalKind,
    /// Level at 1 m, dB relative to a full-scale sinusoid.
    pub level_dbfs: f64,
}

impl SourceSpec {
    pub fn tone(position: Position, freq_hz: f64, level_dbfs: f64) -> Self {
        Self {
            name: String::new(),
            position: [position.x, position.y, position.z],
            signal: SignalKind::Tone { freq_hz },
            level_dbfs,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn position(&self) -> Position {
        Position::new(self.position[0], self.position[1], self.position[2])
    }

    fn label(&self, index: usize) -> String {
        if self.name.is_empty() {
            format!("source {index}")
        } else {
            format!("source {index} ({})", self.name)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub schema: u32,
    pub sample_rate: u32,
    pub duration_s: f64,
    /// Per-channel white noise level; `None` for a noiseless scene.
    #[serde(default)]
    pub noise_floor_dbfs: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub sources: Vec<SourceSpec>,
}

impl SceneSpec {
    pub fn new(sample_rate: u32, duration_s: f64) -> Self {
        Self {
            schema: SCENE_SCHEMA_VERSION,
            sample_rate,
            duration_s,
            noise_floor_dbfs: None,
            seed: 0,
            sources: Vec::new(),
        }
    }

    pub fn with_noise(mut self, noise_floor_dbfs: f64, seed: u64) -> Self {
        self.noise_floor_dbfs = Some(noise_floor_dbfs);
        self.seed = seed;
        self
    }

    pub fn with_source(mut self, source: SourceSpec) -> Self {
        self.sources.push(source);
        self
    }

    pub fn frames(&self) -> usize {
        (self.duration_s * f64::from(self.sample_rate)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let err = |path: String, message: String| Error::Json { path, message };
        if self.schema != SCENE_SCHEMA_VERSION {
            return Err(err(
                "schema".into(),
                format!("unsupported schema version {}", self.schema),
            ));
        }
        if self.sample_rate == 0 {
            return Err(err("sample_rate".into(), "must be positive".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(err("duration_s".into(), "must be positive".into()));
        }
        if let Some(n) = self.noise_floor_dbfs {
            if !(n <= 0.0) {
                return Err(err("noise_floor_dbfs".into(), "must be <= 0 dBFS".into()));
            }
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        for (i, s) in self.sources.iter().enumerate() {
            let at = |field: &str| format!("sources[{i}].{field}");
            if !s.position.iter().all(|v| v.is_finite()) {
                return Err(err(at("position"), "coordinates must be finite".into()));
            }
            if !(s.position[2] > 0.0) {
                return Err(err(at("position"), "source must be in front of the camera (z > 0)".into()));
            }
            if !(s.level_dbfs <= 0.0) {
                return Err(err(at("level_dbfs"), format!("{} exceeds 0 dBFS", s.level_dbfs)));
            }
            match s.signal {
                SignalKind::Tone { freq_hz } => {
                    if !(freq_hz > 0.0 && freq_hz < nyquist) {
                        return Err(err(at("signal.freq_hz"), format!("{freq_hz} Hz outside (0, {nyquist})")));
                    }
                }
                SignalKind::BandNoise { lo_hz, hi_hz, .. } => {
                    if !(lo_hz >= 0.0 && lo_hz < hi_hz && hi_hz < nyquist) {
                        return Err(err(
                            at("signal"),
                            format!("band [{lo_hz}, {hi_hz}] Hz must satisfy 0 <= lo < hi < {nyquist}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parse and validate a scene. Unknown fields are rejected.
pub fn scene_from_json(text: &str) -> Result<SceneSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scene: SceneSpec = serde_path_to_error::deserialize(de).map_err(|e| Error::Json {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    scene.validate()?;
    Ok(scene)
}

pub fn scene_to_json(scene: &SceneSpec) -> String {
    serde_json::to_string_pretty(scene).expect("scene serializes")
}

fn amplitude(level_dbfs: f64) -> f64 {
    10f64.powf(level_dbfs / 20.0)
}

/// Precomputed spectrum of one band-noise source at unit distance.
struct NoiseSpectrum {
    spectrum: Vec<Complex64>,
}

impl NoiseSpectrum {
    fn new(n: usize, sample_rate: u32, lo_hz: f64, hi_hz: f64, seed: u64, rms: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut spectrum: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(normal.sample(&mut rng), 0.0))
            .collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut spectrum);
        let df = f64::from(sample_rate) / n as f64;
        for (k, z) in spectrum.iter_mut().enumerate() {
            let f = k.min(n - k) as f64 * df;
            if !(f >= lo_hz && f <= hi_hz) || (n % 2 == 0 && k == n / 2) {
                *z = Complex64::default();
            }
        }
        // Parseval: time-domain mean square = Σ|X|² / n².
        let power: f64 = spectrum.iter().map(|z| z.norm_sqr()).sum::<f64>() / (n as f64 * n as f64);
        let gain = if power > 0.0 { rms / power.sqrt() } else { 0.0 };
        spectrum.iter_mut().for_each(|z| *z *= gain);
        Self { spectrum }
    }

    fn delayed(&self, delay_samples: f64, gain: f64) -> Vec<f64> {
        let n = self.spectrum.len();
        let mut buf: Vec<Complex64> = self
            .spectrum
            .iter()
            .enumerate()
            .map(|(k, z)| {
                let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                z * Complex64::from_polar(gain, -2.0 * PI * signed * delay_samples / n as f64)
            })
            .collect();
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|z| z.re / n as f64).collect()
    }
}

enum Prepared {
    Tone { freq_hz: f64, amplitude: f64 },
    Noise(NoiseSpectrum),
}

fn prepare(source: &SourceSpec, n: usize, sample_rate: u32) -> Prepared {
    let amp = amplitude(source.level_dbfs);
    match source.signal {
        SignalKind::Tone { freq_hz } => Prepared::Tone {
            freq_hz,
            amplitude: amp,
        },
        SignalKind::BandNoise { lo_hz, hi_hz, seed } => Prepared::Noise(NoiseSpectrum::new(
            n,
            sample_rate,
            lo_hz,
            hi_hz,
            seed,
            amp / SQRT_2,
        )),
    }
}

fn render_source(p: &Prepared, n: usize, fs: f64, distance: f64, c: f64) -> Vec<f64> {
    let delay_s = distance / c;
    let gain = 1.0 / distance;
    match p {
        Prepared::Tone { freq_hz, amplitude } => (0..n)
            .map(|i| gain * amplitude * (2.0 * PI * freq_hz * (i as f64 / fs - delay_s)).sin())
            .collect(),
        Prepared::Noise(spec) => spec.delayed(delay_s * fs, gain),
    }
}

/// Per-channel white noise shared by every source set of a scene.
pub fn scene_noise(scene: &SceneSpec, n_channels: usize) -> Vec<Vec<f64>> {
    let n = scene.frames();
    match scene.noise_floor_dbfs {
        None => vec![vec![0.0; n]; n_channels],
        Some(level) => {
            let sigma = amplitude(level) / SQRT_2;
            let normal = Normal::new(0.0, sigma).expect("finite noise level");
            let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
            (0..n_channels)
                .map(|_| (0..n).map(|_| normal.sample(&mut rng)).collect())
                .collect()
        }
    }
}

/// `x_m(t) = Σ (1/r) s(t - r/c) + n_m(t)` for every mic.
pub fn synth_scene(scene: &SceneSpec, geom: &ArrayGeometry, speed_of_sound: f64) -> Result<MultichannelBuffer> {
    scene.validate()?;
    if !(speed_of_sound > 0.0) {
        return Err(Error::Argument("speed of sound must be positive".into()));
    }
    let n = scene.frames();
    let fs = f64::from(scene.sample_rate);
    let prepared: Vec<Prepared> = scene
        .sources
        .iter()
        .map(|s| prepare(s, n, scene.sample_rate))
        .collect();

    // contributions[m][s] = source s as heard at mic m
    let contributions: Vec<Vec<Vec<f64>>> = geom
        .mics()
        .par_iter()
        .map(|mic| {
            scene
                .sources
                .iter()
                .zip(&prepared)
                .map(|(src, p)| {
                    let distance = (src.position() - mic).norm();
                    render_source(p, n, fs, distance, speed_of_sound)
                })
                .collect()
        })
        .collect();

    let noise = scene_noise(scene, geom.len());
    let mut channels = Vec::with_capacity(geom.len());
    let mut hottest: Option<(f64, usize, usize)> = None;
    for (m, (per_source, noise_m)) in contributions.iter().zip(noise).enumerate() {
        let mut mix = noise_m;
        for part in per_source {
            for (x, y) in mix.iter_mut().zip(part) {
                *x += y;
            }
        }
        for (i, x) in mix.iter().enumerate() {
            if x.abs() > 1.0 && hottest.map_or(true, |(v, _, _)| x.abs() > v) {
                hottest = Some((x.abs(), m, i));
            }
        }
        channels.push(mix);
    }
    if let Some((peak, m, i)) = hottest {
        let culprit = contributions[m]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1[i].abs().total_cmp(&b.1[i].abs()))
            .map(|(s, _)| scene.sources[s].label(s))
            .unwrap_or_else(|| "noise floor".into());
        return Err(Error::Scene(format!(
            "mix clips at {peak:.3} on channel {m}; loudest contributor is {culprit}"
        )));
    }
    MultichannelBuffer::new(channels, scene.sample_rate)
}

/// Where a source appears in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub u: f64,
    pub v: f64,
    pub in_view: bool,
}

pub fn ground_truth_pixel(source: &SourceSpec, cam: &CameraModel) -> Result<GroundTruth> {
    let (u, v) = project(cam, &source.position())?;
    Ok(GroundTruth {
        u,
        v,
        in_view: cam.contains(u, v),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub name: String,
    pub position: [f64; 3],
    pub pixel: [f64; 2],
    pub in_view: bool,
    /// `[col, row]` of the steering-grid cell containing the pixel.
    pub cell: Option<[usize; 2]>,
}

/// Ground truth for every source of a scene.
pub fn truth_records(scene: &SceneSpec, cam: &CameraModel, grid: &SteeringGrid) -> Result<Vec<TruthRecord>> {
    scene
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = ground_truth_pixel(s, cam)?;
            Ok(TruthRecord {
                name: if s.name.is_empty() { format!("source{i}") } else { s.name.clone() },
                position: s.position,
                pixel: [t.u, t.v],
                in_view: t.in_view,
                cell: grid.cell_at_px(t.u, t.v).map(|(c, r)| [c, r]),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;

    const C: f64 = 343.0;

    fn pair() -> ArrayGeometry {
        ArrayGeometry::new(
            "pair",
            vec![Position::new(-0.063, 0.0, 0.0), Position::new(0.063, 0.0, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn on_axis_tone_reaches_both_mics_equally() {
        let scene = SceneSpec::new(44_100, 0.05)
            .with_source(SourceSpec::tone(Position::new(0.0, 0.0, 1.5), 1000.0, -6.0));
        let b = synth_scene(&scene, &pair(), C).unwrap();
        assert_eq!(b.frames(), 2205);
        for (x, y) in b.channel(0).iter().zip(b.channel(1)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_distance_law() {
        // Single mic at the origin and a tone phase-aligned so delays cancel.
        let geom = ArrayGeometry::new(
            "two",
            vec![Position::new(0.0, 0.0, 0.0), Position::new(0.5, 0.0, 0.0)],
        )
        .unwrap();
        let peak = |z: f64| {
            let scene = SceneSpec::new(48_000, 0.1)
                .with_source(SourceSpec::tone(Position::new(0.0, 0.0, z), 1000.0, 0.0));
            let b = synth_scene(&scene, &geom, C).unwrap();
            // 50 whole periods, so the RMS of the sampled sine is exact
            let tail = &b.channel(0)[2000..4400];
            (tail.iter().map(|x| x * x).sum::<f64>() / tail.len() as f64 * 2.0).sqrt()
        };
        let near = peak(1.2);
        let far = peak(2.4);
        assert!((near / 2.0 - far).abs() < 1e-6, "{near} {far}");
        assert!((near - 1.0 / 1.2).abs() < 1e-3);
    }

    #[test]
    fn band_noise_delay_is_exact_for_integer_shift() {
        let spec = NoiseSpectrum::new(4096, 48_000, 500.0, 6000.0, 3, 0.1);
        let base = spec.delayed(0.0, 1.0);
        let shifted = spec.delayed(7.0, 1.0);
        for i in 7..4096 {
            assert!((shifted[i] - base[i - 7]).abs() < 1e-12);
        }
        let rms = (base.iter().map(|x| x * x).sum::<f64>() / 4096.0).sqrt();
        assert!((rms - 0.1).abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_superposable() {
        let geom = ArrayGeometry::default_uma16();
        let a = SourceSpec::tone(Position::new(0.3, -0.1, 1.5), 2000.0, -12.0);
        let b = SourceSpec {
            name: "hiss".into(),
            position: [-0.4, 0.2, 2.0],
            signal: SignalKind::BandNoise {
                lo_hz: 3000.0,
                hi_hz: 7000.0,
                seed: 11,
            },
            level_dbfs: -10.0,
        };
        let base = SceneSpec::new(16_000, 0.25).with_noise(-50.0, 5);
        let both = base.clone().with_source(a.clone()).with_source(b.clone());
        let only_a = base.clone().with_source(a);
        let only_b = base.clone().with_source(b);
        let x = synth_scene(&both, &geom, C).unwrap();
        assert_eq!(x, synth_scene(&both, &geom, C).unwrap());
        let xa = synth_scene(&only_a, &geom, C).unwrap();
        let xb = synth_scene(&only_b, &geom, C).unwrap();
        let noise = scene_noise(&base, geom.len());
        for m in 0..geom.len() {
            for i in 0..x.frames() {
                let recon = xa.channel(m)[i] + xb.channel(m)[i] - noise[m][i];
                assert!((x.channel(m)[i] - recon).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clipping_names_the_source() {
        let scene = SceneSpec::new(8000, 0.05)
            .with_source(SourceSpec::tone(Position::new(0.0, 0.0, 0.2), 500.0, 0.0).named("siren"));
        match synth_scene(&scene, &pair(), C) {
            Err(Error::Scene(msg)) => assert!(msg.contains("siren"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truth_pixels() {
        let cam = CameraModel::default();
        let on_axis = SourceSpec::tone(Position::new(0.0, 0.0, 2.0), 1000.0, -6.0);
        let t = ground_truth_pixel(&on_axis, &cam).unwrap();
        assert_eq!((t.u, t.v, t.in_view), (320.0, 180.0, true));

        let grid = build_grid(&cam, 64, 36, 1.5).unwrap();
        let p = grid.point(10, 20);
        let t = ground_truth_pixel(&SourceSpec::tone(*p, 1000.0, -6.0), &cam).unwrap();
        let (cu, cv) = grid.cell_center_px(10, 20);
        assert!((t.u - cu).abs() < 1e-9 && (t.v - cv).abs() < 1e-9);

        let wide = SourceSpec::tone(Position::new(5.0, 0.0, 1.0), 1000.0, -6.0);
        let t = ground_truth_pixel(&wide, &cam).unwrap();
        assert!(!t.in_view && t.u >= 640.0);
        let mut behind = on_axis.clone();
        behind.position[2] = -1.0;
        assert!(ground_truth_pixel(&behind, &cam).is_err());
    }

    #[test]
    fn scene_json() {
        let text = r#"{
            "schema": 1, "sample_rate": 44100, "duration_s": 1.0,
            "sources": [{"position": [0.1, 0.0, 1.5],
                         "signal": {"kind": "tone", "freq_hz": 4000},
                         "level_dbfs": -20}]
        }"#;
        let scene = scene_from_json(text).unwrap();
        assert_eq!(scene.sources.len(), 1);
        assert_eq!(scene.noise_floor_dbfs, None);
        assert_eq!(scene_from_json(&scene_to_json(&scene)).unwrap(), scene);

        let loud = text.replace("-20", "3");
        match scene_from_json(&loud) {
            Err(Error::Json { path, .. }) => assert_eq!(path, "sources[0].level_dbfs"),
            other => panic!("unexpected {other:?}"),
        }
        let unknown = text.replace("\"level_dbfs\"", "\"gain\": 1, \"level_dbfs\"");
        match scene_from_json(&unknown) {
            Err(Error::Json { path, message }) => {
                assert!(path.starts_with("sources[0]"), "{path}");
                assert!(message.contains("gain"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_type = text.replace("4000", "\"loud\"");
        match scene_from_json(&bad_type) {
            Err(Error::Json { path, .. }) => assert!(path.contains("signal"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
