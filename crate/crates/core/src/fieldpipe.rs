//! Per-band level maps to one normalized composite field per frame.
//!
//! Each band is floor-subtracted and clipped to a narrow top range, mapping
//! it onto `[0, 1]`. The normalized bands are averaged with equal weight and
//! the result is smoothed over time with a cellwise median.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::beamform::{FieldMap, MapScale};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub center_hz: f64,
    pub floor_db: f64,
    pub clip_db: f64,
}

impl BandConfig {
    pub fn new(center_hz: f64, floor_db: f64, clip_db: f64) -> Result<Self> {
        let b = Self {
            center_hz,
            floor_db,
            clip_db,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_hz > 0.0) {
            return Err(Error::Validation(format!(
                "band center must be positive, got {}",
                self.center_hz
            )));
        }
        if !(self.floor_db >= 0.0) {
            return Err(Error::Validation(format!(
                "band {} Hz: floor must be >= 0 dB, got {}",
                self.center_hz, self.floor_db
            )));
        }
        if !(self.clip_db > 0.0) {
            return Err(Error::Validation(format!(
                "band {} Hz: clip range must be > 0 dB, got {}",
                self.center_hz, self.clip_db
            )));
        }
        Ok(())
    }

    /// 2/4/6/8 kHz with floors 18/20/23/27 dB and clips 0.2/0.2/0.5/0.5 dB.
    pub fn defaults() -> Vec<BandConfig> {
        [
            (2000.0, 18.0, 0.2),
            (4000.0, 20.0, 0.2),
            (6000.0, 23.0, 0.5),
            (8000.0, 27.0, 0.5),
        ]
        .into_iter()
        .map(|(center_hz, floor_db, clip_db)| BandConfig {
            center_hz,
            floor_db,
            clip_db,
        })
        .collect()
    }
}

/// Per-cell values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedField {
    pub cols: usize,
    pub rows: usize,
    pub values: Vec<f64>,
    pub frame_index: usize,
}

impl NormalizedField {
    pub fn zeros(cols: usize, rows: usize, frame_index: usize) -> Self {
        Self {
            cols,
            rows,
            values: vec![0.0; cols * rows],
            frame_index,
        }
    }

    pub fn constant(cols: usize, rows: usize, value: f64) -> Self {
        Self {
            cols,
            rows,
            values: vec![value.clamp(0.0, 1.0); cols * rows],
            frame_index: 0,
        }
    }

    pub fn from_values(cols: usize, rows: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != cols * rows {
            return Err(Error::Argument(format!(
                "{} values for a {cols}x{rows} field",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("normalized values must lie in [0, 1]".into()));
        }
        Ok(Self {
            cols,
            rows,
            values,
            frame_index: 0,
        })
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn argmax_cell(&self) -> (usize, usize) {
        let i = crate::beamform::argmax(&self.values);
        (i % self.cols, i / self.cols)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    fn same_grid(&self, other: &NormalizedField) -> bool {
        self.cols == other.cols && self.rows == other.rows
    }
}

/// `L'(g) = max(L(g) - floor_db, 0)`.
pub fn floor_subtract(map_db: &FieldMap, floor_db: f64) -> FieldMap {
    FieldMap {
        values: map_db
            .values
            .iter()
            .map(|l| (l - floor_db).max(0.0))
            .collect(),
        scale: MapScale::Decibel,
        ..map_db.clone()
    }
}

/// Keep the top `clip_db` of a floor-subtracted map and rescale it to `[0, 1]`.
pub fn clip_top(map: &FieldMap, clip_db: f64) -> NormalizedField {
    let peak = map.values.iter().copied().fold(0.0, f64::max);
    let values = if peak <= 0.0 {
        vec![0.0; map.values.len()]
    } else {
        let low = peak - clip_db;
        map.values
            .iter()
            .map(|&l| {
                if l >= peak {
                    1.0
                } else {
                    ((l.max(low) - low) / clip_db).clamp(0.0, 1.0)
                }
            })
            .collect()
    };
    NormalizedField {
        cols: map.cols,
        rows: map.rows,
        values,
        frame_index: map.chunk_index,
    }
}

/// Floor subtraction followed by top clipping for one band.
pub fn normalize_band(map_db: &FieldMap, band: &BandConfig) -> NormalizedField {
    clip_top(&floor_subtract(map_db, band.floor_db), band.clip_db)
}

/// Cellwise arithmetic mean of the band fields.
pub fn composite(fields: &[NormalizedField]) -> Result<NormalizedField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Argument("composite needs at least one field".into()))?;
    if let Some(bad) = fields.iter().position(|f| !f.same_grid(first)) {
        return Err(Error::Argument(format!(
            "field {bad} is {}x{}, expected {}x{}",
            fields[bad].cols, fields[bad].rows, first.cols, first.rows
        )));
    }
    let n = fields.len() as f64;
    let values = (0..first.values.len())
        .map(|i| {
            let sum: f64 = fields.iter().map(|f| f.values[i]).sum();
            (sum / n).clamp(0.0, 1.0)
        })
        .collect();
    Ok(NormalizedField {
        cols: first.cols,
        rows: first.rows,
        values,
        frame_index: first.frame_index,
    })
}

/// Sliding cellwise median over the most recent fields of one stream.
#[derive(Debug, Clone)]
pub struct MedianWindow {
    capacity: usize,
    history: VecDeque<NormalizedField>,
}

impl MedianWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("median window must hold at least one frame".into()));
        }
        Ok(Self {
            capacity,
            history: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Push a field and return the cellwise lower median of the window.
    pub fn push(&mut self, field: NormalizedField) -> Result<NormalizedField> {
        if let Some(front) = self.history.front() {
            if !front.same_grid(&field) {
                return Err(Error::Argument(format!(
                    "field is {}x{} but the window holds {}x{}",
                    field.cols, field.rows, front.cols, front.rows
                )));
            }
        }
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        let frame_index = field.frame_index;
        let (cols, rows) = (field.cols, field.rows);
        self.history.push_back(field);

        let n = self.history.len();
        let mid = (n - 1) / 2;
        let mut scratch = Vec::with_capacity(n);
        let values = (0..cols * rows)
            .map(|i| {
                scratch.clear();
                scratch.extend(self.history.iter().map(|f| f.values[i]));
                *scratch.select_nth_unstable_by(mid, f64::total_cmp).1
            })
            .collect();
        Ok(NormalizedField {
            cols,
            rows,
            values,
            frame_index,
        })
    }
}

pub fn median_push(window: &mut MedianWindow, field: NormalizedField) -> Result<NormalizedField> {
    window.push(field)
}

/// Image-resolution scalar field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ScalarImage {
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

fn sample_coord(pixel: usize, target: usize, cells: usize) -> (usize, usize, f64) {
    let pos = (pixel as f64 + 0.5) * cells as f64 / target as f64 - 0.5;
    let pos = pos.clamp(0.0, (cells - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(cells - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resampling with cell centers as sample points; edges clamp.
pub fn upsample(field: &NormalizedField, width: usize, height: usize) -> Result<ScalarImage> {
    if width < field.cols || height < field.rows {
        return Err(Error::Argument(format!(
            "target {width}x{height} is smaller than the {}x{} grid",
            field.cols, field.rows
        )));
    }
    let xs: Vec<_> = (0..width).map(|x| sample_coord(x, width, field.cols)).collect();
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let (r0, r1, ty) = sample_coord(y, height, field.rows);
        for &(c0, c1, tx) in &xs {
            let top = field.at(c0, r0) * (1.0 - tx) + field.at(c1, r0) * tx;
            let bottom = field.at(c0, r1) * (1.0 - tx) + field.at(c1, r1) * tx;
            values.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
        }
    }
    Ok(ScalarImage {
        width,
        height,
        values,
    })
}
