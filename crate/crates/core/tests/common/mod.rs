#![allow(dead_code)]

pub mod props;

use afv_core::config::PipelineConfig;
use afv_core::fieldpipe::NormalizedField;
use afv_core::geometry::{project, Position};
use afv_core::simulate::{SceneSpec, SourceSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FS: u32 = 44_100;
pub const TONE_LEVEL_DBFS: f64 = -20.0;

pub struct Trial {
    pub scene: SceneSpec,
    pub truth_cell: (usize, usize),
    pub truth_px: (f64, f64),
}

/// Tone level at 1 m and noise level giving `snr_db` at the array center.
pub fn noise_for_snr(level_dbfs: f64, position: &Position, snr_db: f64) -> f64 {
    level_dbfs - 20.0 * position.norm().log10() - snr_db
}

/// One tone at a random pixel at least two cells inside the frame, placed on
/// the steering plane.
pub fn random_tone_trial(config: &PipelineConfig, seed: u64, freq_hz: f64, snr_db: f64, duration_s: f64) -> Trial {
    let cam = config.camera_model().unwrap();
    let grid = config.steering_grid().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell_w = f64::from(cam.width) / grid.cols() as f64;
    let cell_h = f64::from(cam.height) / grid.rows() as f64;
    let u = rng.gen_range(2.0 * cell_w..f64::from(cam.width) - 2.0 * cell_w);
    let v = rng.gen_range(2.0 * cell_h..f64::from(cam.height) - 2.0 * cell_h);
    let pos = cam.unproject(u, v, grid.distance_m());
    let noise = noise_for_snr(TONE_LEVEL_DBFS, &pos, snr_db);
    let scene = SceneSpec::new(FS, duration_s)
        .with_noise(noise, seed.wrapping_mul(7919).wrapping_add(1))
        .with_source(SourceSpec::tone(pos, freq_hz, TONE_LEVEL_DBFS));
    let px = project(&cam, &pos).unwrap();
    Trial {
        scene,
        truth_cell: grid.cell_at_px(px.0, px.1).unwrap(),
        truth_px: px,
    }
}

pub fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Local maxima above `rel` of the global max; maxima closer than
/// `merge_cells` (Chebyshev) to a stronger one are merged into it.
pub fn local_maxima(field: &NormalizedField, rel: f64, merge_cells: usize) -> Vec<(usize, usize)> {
    let max = field.max();
    let mut peaks: Vec<((usize, usize), f64)> = Vec::new();
    for r in 0..field.rows {
        for c in 0..field.cols {
            let v = field.at(c, r);
            if v <= rel * max || v <= 0.0 {
                continue;
            }
            let mut is_peak = true;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                    if (dc, dr) == (0, 0) || nc < 0 || nr < 0 || nc >= field.cols as i64 || nr >= field.rows as i64 {
                        continue;
                    }
                    if field.at(nc as usize, nr as usize) > v {
                        is_peak = false;
                    }
                }
            }
            if is_peak {
                peaks.push(((c, r), v));
            }
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for (cell, _) in peaks {
        if kept.iter().all(|k| chebyshev(*k, cell) > merge_cells) {
            kept.push(cell);
        }
    }
    kept
}
