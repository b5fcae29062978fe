//! Pipeline configuration.
//!
//! Values resolve in three layers: built-in defaults, then a JSON config file
//! (any subset of fields), then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldpipe::BandConfig;
use crate::geometry::{build_grid, CameraModel, SteeringGrid};
use crate::render::GridInfo;
use crate::spectral::Window;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub diagonal_fov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 360,
            diagonal_fov_deg: 72.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub cols: usize,
    pub rows: usize,
    pub distance_m: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cols: 64,
            rows: 36,
            distance_m: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Geometry XML; the bundled 4×4 lattice when absent.
    pub geometry: Option<PathBuf>,
    /// Array position relative to the camera, meters.
    pub array_offset_m: [f64; 3],
    pub camera: CameraConfig,
    pub grid: GridConfig,
    pub speed_of_sound: f64,
    pub chunk_size: usize,
    pub fft_size: usize,
    pub window: Window,
    pub overlap: f64,
    /// Number of chunks whose snapshots feed each CSM.
    pub csm_chunks: usize,
    pub loading_eps: f64,
    pub bands: Vec<BandConfig>,
    pub n_sources: usize,
    pub spl_ref_db: f64,
    pub median_window: usize,
    pub alpha: f64,
    pub stacked: bool,
    pub stereo_channels: [usize; 2],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            geometry: None,
            array_offset_m: [0.0; 3],
            camera: CameraConfig::default(),
            grid: GridConfig::default(),
            speed_of_sound: 343.0,
            chunk_size: 2048,
            fft_size: 1024,
            window: Window::Hann,
            overlap: 0.5,
            csm_chunks: 1,
            loading_eps: 1e-6,
            bands: BandConfig::defaults(),
            n_sources: 1,
            spl_ref_db: 94.0,
            median_window: 8,
            alpha: 0.5,
            stacked: true,
            stereo_channels: [0, 3],
        }
    }
}

/// Command-line overrides; `None` leaves the lower layer untouched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub geometry: Option<PathBuf>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub diagonal_fov_deg: Option<f64>,
    pub grid_cols: Option<usize>,
    pub grid_rows: Option<usize>,
    pub grid_distance_m: Option<f64>,
    pub speed_of_sound: Option<f64>,
    pub chunk_size: Option<usize>,
    pub fft_size: Option<usize>,
    pub overlap: Option<f64>,
    pub csm_chunks: Option<usize>,
    pub bands: Option<Vec<f64>>,
    pub floors: Option<Vec<f64>>,
    pub clips: Option<Vec<f64>>,
    pub n_sources: Option<usize>,
    pub spl_ref_db: Option<f64>,
    pub median_window: Option<usize>,
    pub alpha: Option<f64>,
    pub stacked: Option<bool>,
    pub stereo_channels: Option<[usize; 2]>,
}

impl PipelineConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Json {
            path: format!("{origin}:{}", e.path()),
            message: e.inner().to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        // Relative geometry paths are resolved against the config file.
        if let (Some(g), Some(dir)) = (&cfg.geometry, path.parent()) {
            if g.is_relative() {
                cfg.geometry = Some(dir.join(g));
            }
        }
        Ok(cfg)
    }

    /// Defaults, then an optional config file, then overrides; validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        if let Some(g) = &o.geometry {
            self.geometry = Some(g.clone());
        }
        set!(o.width => self.camera.width);
        set!(o.height => self.camera.height);
        set!(o.diagonal_fov_deg => self.camera.diagonal_fov_deg);
        set!(o.grid_cols => self.grid.cols);
        set!(o.grid_rows => self.grid.rows);
        set!(o.grid_distance_m => self.grid.distance_m);
        set!(o.speed_of_sound => self.speed_of_sound);
        set!(o.chunk_size => self.chunk_size);
        set!(o.fft_size => self.fft_size);
        set!(o.overlap => self.overlap);
        set!(o.csm_chunks => self.csm_chunks);
        set!(o.n_sources => self.n_sources);
        set!(o.spl_ref_db => self.spl_ref_db);
        set!(o.median_window => self.median_window);
        set!(o.alpha => self.alpha);
        set!(o.stacked => self.stacked);
        set!(o.stereo_channels => self.stereo_channels);

        if let Some(centers) = &o.bands {
            let n = centers.len();
            for (name, list) in [("floors", &o.floors), ("clips", &o.clips)] {
                if list.is_none() && n != self.bands.len() {
                    return Err(Error::Validation(format!(
                        "{n} bands given; --{name} must list {n} values as well"
                    )));
                }
            }
            self.bands = centers
                .iter()
                .enumerate()
                .map(|(i, &c)| BandConfig {
                    center_hz: c,
                    floor_db: self.bands.get(i).map_or(0.0, |b| b.floor_db),
                    clip_db: self.bands.get(i).map_or(1.0, |b| b.clip_db),
                })
                .collect();
        }
        for (name, list, is_floor) in [("floors", &o.floors, true), ("clips", &o.clips, false)] {
            if let Some(values) = list {
                if values.len() != self.bands.len() {
                    return Err(Error::Validation(format!(
                        "--{name} has {} values for {} bands",
                        values.len(),
                        self.bands.len()
                    )));
                }
                for (b, &v) in self.bands.iter_mut().zip(values) {
                    if is_floor {
                        b.floor_db = v;
                    } else {
                        b.clip_db = v;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        ((self.fft_size as f64) * (1.0 - self.overlap)).round() as usize
    }

    pub fn fps(&self, sample_rate: u32) -> f64 {
        f64::from(sample_rate) / self.chunk_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.chunk_size == 0 {
            return bad("chunk_size must be positive".into());
        }
        if self.fft_size < 2 || self.fft_size > self.chunk_size {
            return bad(format!(
                "fft_size must lie in [2, chunk_size = {}], got {}",
                self.chunk_size, self.fft_size
            ));
        }
        if !(0.0..1.0).contains(&self.overlap) || self.hop() == 0 {
            return bad(format!("overlap must lie in [0, 1), got {}", self.overlap));
        }
        if self.csm_chunks == 0 {
            return bad("csm_chunks must be at least 1".into());
        }
        if !(self.loading_eps >= 0.0) {
            return bad("loading_eps must be >= 0".into());
        }
        if self.bands.is_empty() {
            return bad("at least one band is required".into());
        }
        for b in &self.bands {
            b.validate()?;
        }
        if self.n_sources == 0 {
            return bad("n_sources must be at least 1".into());
        }
        if self.median_window == 0 {
            return bad("median_window must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.speed_of_sound > 0.0) {
            return bad("speed_of_sound must be positive".into());
        }
        if !self.spl_ref_db.is_finite() {
            return bad("spl_ref_db must be finite".into());
        }
        if self.stereo_channels[0] == self.stereo_channels[1] {
            return bad("stereo channels must differ".into());
        }
        self.camera_model()?;
        self.steering_grid()?;
        Ok(())
    }

    pub fn camera_model(&self) -> Result<CameraModel> {
        CameraModel::new(self.camera.width, self.camera.height, self.camera.diagonal_fov_deg)
            .map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn steering_grid(&self) -> Result<SteeringGrid> {
        build_grid(
            &self.camera_model()?,
            self.grid.cols,
            self.grid.rows,
            self.grid.distance_m,
        )
        .map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn grid_info(&self) -> GridInfo {
        GridInfo {
            cols: self.grid.cols,
            rows: self.grid.rows,
            distance_m: self.grid.distance_m,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
