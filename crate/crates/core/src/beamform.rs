//! Steering vectors, MUSIC and Bartlett maps over the steering grid, and
//! conversion to level maps in dB.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Position, SteeringGrid};
use crate::spectral::CrossSpectralMatrix;

/// Lower bound on the MUSIC projection `aᴴ Eₙ Eₙᴴ a`.
pub const MUSIC_DENOMINATOR_FLOOR: f64 = 1e-12;

/// Smallest power ratio representable in a level map (-300 dB).
const MIN_POWER_RATIO: f64 = 1e-30;

/// Unit-norm, phase-only array response for one location and frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(Vec<Complex64>);

impl SteeringVector {
    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `a_m = (1/√M) exp(-j 2π f (r_m - r₀) / c)`, with `r_m` the distance from
/// the point to mic `m` and `r₀` the distance to the origin.
pub fn steering_vector(
    point: &Position,
    geom: &ArrayGeometry,
    freq_hz: f64,
    speed_of_sound: f64,
) -> SteeringVector {
    let mut out = Vec::with_capacity(geom.len());
    fill_steering(point, geom, freq_hz, speed_of_sound, &mut out);
    SteeringVector(out)
}

fn fill_steering(
    point: &Position,
    geom: &ArrayGeometry,
    freq_hz: f64,
    speed_of_sound: f64,
    out: &mut Vec<Complex64>,
) {
    let amp = 1.0 / (geom.len() as f64).sqrt();
    let r0 = point.norm();
    let k = 2.0 * std::f64::consts::PI * freq_hz / speed_of_sound;
    out.extend(
        geom.mics()
            .iter()
            .map(|mic| Complex64::from_polar(amp, -k * ((point - mic).norm() - r0))),
    );
}

/// Steering vectors for every grid point at one frequency, row-major by cell.
#[derive(Debug, Clone)]
pub struct SteeringTable {
    freq_hz: f64,
    mics: usize,
    cols: usize,
    rows: usize,
    data: Vec<Complex64>,
}

impl SteeringTable {
    pub fn new(
        grid: &SteeringGrid,
        geom: &ArrayGeometry,
        freq_hz: f64,
        speed_of_sound: f64,
    ) -> Result<Self> {
        if !(freq_hz > 0.0) {
            return Err(Error::Argument(format!("frequency must be positive, got {freq_hz}")));
        }
        if !(speed_of_sound > 0.0) {
            return Err(Error::Argument("speed of sound must be positive".into()));
        }
        let mut data = Vec::with_capacity(grid.len() * geom.len());
        for p in grid.points() {
            fill_steering(p, geom, freq_hz, speed_of_sound, &mut data);
        }
        Ok(Self {
            freq_hz,
            mics: geom.len(),
            cols: grid.cols(),
            rows: grid.rows(),
            data,
        })
    }

    pub fn freq_hz(&self) -> f64 {
        self.freq_hz
    }

    pub fn mics(&self) -> usize {
        self.mics
    }

    pub fn cells(&self) -> usize {
        self.cols * self.rows
    }

    pub fn vector(&self, cell: usize) -> &[Complex64] {
        &self.data[cell * self.mics..(cell + 1) * self.mics]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapScale {
    Linear,
    Decibel,
}

/// One scalar value per grid cell, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMap {
    pub cols: usize,
    pub rows: usize,
    pub values: Vec<f64>,
    pub scale: MapScale,
    pub band_hz: Option<f64>,
    pub chunk_index: usize,
    /// Multiplier applied by [`to_spl`]: the dominant CSM eigenvalue for
    /// MUSIC maps, 1 for maps that already carry power.
    pub power_scale: f64,
}

impl FieldMap {
    pub fn new(cols: usize, rows: usize, values: Vec<f64>, scale: MapScale) -> Result<Self> {
        if values.len() != cols * rows {
            return Err(Error::Argument(format!(
                "{} values for a {cols}x{rows} map",
                values.len()
            )));
        }
        Ok(Self {
            cols,
            rows,
            values,
            scale,
            band_hz: None,
            chunk_index: 0,
            power_scale: 1.0,
        })
    }

    pub fn with_band(mut self, band_hz: f64, chunk_index: usize) -> Self {
        self.band_hz = Some(band_hz);
        self.chunk_index = chunk_index;
        self
    }

    /// Flat index of the largest value; the first one wins on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub fn argmax_cell(&self) -> (usize, usize) {
        let i = self.argmax();
        (i % self.cols, i / self.cols)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Eigen-decomposition of a CSM split into signal and noise subspaces.
#[derive(Debug, Clone)]
pub struct Subspaces {
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors for the `M - n` smallest eigenvalues.
    pub noise: DMatrix<Complex64>,
}

impl Subspaces {
    pub fn dominant_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }
}

pub fn decompose(r: &CrossSpectralMatrix, n_sources: usize) -> Result<Subspaces> {
    let m = r.size();
    if n_sources == 0 || n_sources >= m {
        return Err(Error::Argument(format!(
            "source count must satisfy 1 <= n < {m}, got {n_sources}"
        )));
    }
    let a = r.matrix();
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("CSM contains non-finite entries".into()));
    }
    let hermitian = (a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::try_new(hermitian, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("Hermitian eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let noise_cols: Vec<_> = order[..m - n_sources]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    Ok(Subspaces {
        eigenvalues,
        noise: DMatrix::from_columns(&noise_cols),
    })
}

/// Orthonormal basis of the noise subspace (`M × (M - n)`).
pub fn noise_subspace(r: &CrossSpectralMatrix, n_sources: usize) -> Result<DMatrix<Complex64>> {
    decompose(r, n_sources).map(|s| s.noise)
}

fn music_values(noise: &DMatrix<Complex64>, table: &SteeringTable) -> Vec<f64> {
    // Rows of Eₙᴴ, laid out contiguously.
    let m = noise.nrows();
    let k = noise.ncols();
    let mut basis = Vec::with_capacity(m * k);
    for j in 0..k {
        basis.extend(noise.column(j).iter().map(|z| z.conj()));
    }
    (0..table.cells())
        .map(|cell| {
            let a = table.vector(cell);
            let denom: f64 = basis
                .chunks_exact(m)
                .map(|e| {
                    e.iter()
                        .zip(a)
                        .fold(Complex64::default(), |acc, (x, y)| acc + x * y)
                        .norm_sqr()
                })
                .sum();
            1.0 / denom.max(MUSIC_DENOMINATOR_FLOOR)
        })
        .collect()
}

/// MUSIC pseudo-spectrum using a precomputed steering table.
pub fn music_map_with_table(
    r: &CrossSpectralMatrix,
    table: &SteeringTable,
    cols: usize,
    rows: usize,
    n_sources: usize,
) -> Result<FieldMap> {
    check_table(r, table, cols, rows)?;
    let sub = decompose(r, n_sources)?;
    let mut map = FieldMap::new(cols, rows, music_values(&sub.noise, table), MapScale::Linear)?;
    map.band_hz = Some(table.freq_hz());
    map.power_scale = sub.dominant_eigenvalue().max(0.0);
    Ok(map)
}

/// `P(g) = 1 / (a(g)ᴴ Eₙ Eₙᴴ a(g))` over every grid cell.
pub fn music_map(
    r: &CrossSpectralMatrix,
    grid: &SteeringGrid,
    geom: &ArrayGeometry,
    freq_hz: f64,
    speed_of_sound: f64,
    n_sources: usize,
) -> Result<FieldMap> {
    let table = SteeringTable::new(grid, geom, freq_hz, speed_of_sound)?;
    music_map_with_table(r, &table, grid.cols(), grid.rows(), n_sources)
}

pub fn bartlett_map_with_table(
    r: &CrossSpectralMatrix,
    table: &SteeringTable,
    cols: usize,
    rows: usize,
) -> Result<FieldMap> {
    check_table(r, table, cols, rows)?;
    let mat = r.matrix();
    let m = mat.nrows();
    let values = (0..table.cells())
        .map(|cell| {
            let a = table.vector(cell);
            let mut acc = Complex64::default();
            for i in 0..m {
                let mut row = Complex64::default();
                for j in 0..m {
                    row += mat[(i, j)] * a[j];
                }
                acc += a[i].conj() * row;
            }
            acc.re.max(0.0)
        })
        .collect();
    let mut map = FieldMap::new(cols, rows, values, MapScale::Linear)?;
    map.band_hz = Some(table.freq_hz());
    Ok(map)
}

/// Delay-and-sum power `aᴴ R a` over every grid cell.
pub fn bartlett_map(
    r: &CrossSpectralMatrix,
    grid: &SteeringGrid,
    geom: &ArrayGeometry,
    freq_hz: f64,
    speed_of_sound: f64,
) -> Result<FieldMap> {
    let table = SteeringTable::new(grid, geom, freq_hz, speed_of_sound)?;
    bartlett_map_with_table(r, &table, grid.cols(), grid.rows())
}

fn check_table(r: &CrossSpectralMatrix, table: &SteeringTable, cols: usize, rows: usize) -> Result<()> {
    if r.size() != table.mics() {
        return Err(Error::Argument(format!(
            "CSM is {0}x{0} but the array has {1} mics",
            r.size(),
            table.mics()
        )));
    }
    if table.cells() != cols * rows {
        return Err(Error::Argument("steering table does not match grid".into()));
    }
    Ok(())
}

/// Power that maps to `spl_ref_db`: the dominant CSM eigenvalue of a
/// full-scale on-axis sinusoid centered on a bin.
pub fn full_scale_reference(n_mics: usize, coherent_gain: f64, spl_ref_db: f64) -> f64 {
    let bin_magnitude = coherent_gain / 2.0;
    n_mics as f64 * bin_magnitude * bin_magnitude / 10f64.powf(spl_ref_db / 10.0)
}

/// `L(g) = 10 log10(power_scale · P(g) / ref_power)`.
pub fn to_spl(map: &FieldMap, ref_power: f64) -> FieldMap {
    debug_assert_eq!(map.scale, MapScale::Linear);
    let values = map
        .values
        .iter()
        .map(|p| 10.0 * (map.power_scale * p / ref_power).max(MIN_POWER_RATIO).log10())
        .collect();
    FieldMap {
        values,
        scale: MapScale::Decibel,
        ..map.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, CameraModel};

    const C: f64 = 343.0;

    fn pair() -> ArrayGeometry {
        ArrayGeometry::new(
            "pair",
            vec![Position::new(-0.063, 0.0, 0.0), Position::new(0.063, 0.0, 0.0)],
        )
        .unwrap()
    }

    fn rank_one_csm(x: &[Complex64], eps: f64) -> CrossSpectralMatrix {
        let m = x.len();
        let v = nalgebra::DVector::from_column_slice(x);
        let trace: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let r = &v * v.adjoint()
            + DMatrix::<Complex64>::identity(m, m) * Complex64::new(eps * trace / m as f64, 0.0);
        CrossSpectralMatrix::from_matrix(r, 0).unwrap()
    }

    #[test]
    fn steering_symmetry_and_modulus() {
        let g = pair();
        let a = steering_vector(&Position::new(0.0, 0.3, 2.0), &g, 4000.0, C);
        assert!((a.as_slice()[0] - a.as_slice()[1]).norm() < 1e-12);
        let uma = ArrayGeometry::default_uma16();
        let a = steering_vector(&Position::new(0.4, -0.2, 1.1), &uma, 6000.0, C);
        for z in a.as_slice() {
            assert!((z.norm() - 0.25).abs() < 1e-12);
        }
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn endfire_phase_difference() {
        // Far along +x the path difference between the mics tends to the spacing.
        let g = pair();
        let a = steering_vector(&Position::new(1e7, 0.0, 1e-3), &g, 4000.0, C);
        let phase = (a.as_slice()[1] * a.as_slice()[0].conj()).arg().rem_euclid(2.0 * PI);
        let expected = (2.0 * PI * 4000.0 * 0.126 / C).rem_euclid(2.0 * PI);
        assert!((2.0 * PI * 4000.0 * 0.126 / C - 9.23).abs() < 0.01);
        assert!((phase - expected).abs() < 1e-6, "{phase} vs {expected}");
    }
    use std::f64::consts::PI;

    #[test]
    fn noise_subspace_orthogonal_to_signal() {
        let x: Vec<Complex64> = (0..6)
            .map(|i| Complex64::from_polar(1.0 + i as f64 * 0.1, i as f64 * 0.7))
            .collect();
        let r = rank_one_csm(&x, 1e-6);
        let e = noise_subspace(&r, 1).unwrap();
        assert_eq!((e.nrows(), e.ncols()), (6, 5));
        let xv = nalgebra::DVector::from_column_slice(&x);
        assert!((e.adjoint() * &xv).norm() / xv.norm() <= 1e-6);
        let gram = e.adjoint() * &e;
        assert!((gram - DMatrix::<Complex64>::identity(5, 5)).norm() < 1e-9);
    }

    #[test]
    fn identity_csm_gives_orthonormal_frame() {
        let r = CrossSpectralMatrix::from_matrix(DMatrix::identity(5, 5), 0).unwrap();
        let e = noise_subspace(&r, 1).unwrap();
        let gram = e.adjoint() * &e;
        assert!((gram - DMatrix::<Complex64>::identity(4, 4)).norm() < 1e-9);
    }

    #[test]
    fn projector_invariant_under_scaling() {
        let x: Vec<Complex64> = (0..4).map(|i| Complex64::from_polar(1.0, i as f64)).collect();
        let r = rank_one_csm(&x, 1e-3);
        let p1 = {
            let e = noise_subspace(&r, 1).unwrap();
            &e * e.adjoint()
        };
        let p2 = {
            let e = noise_subspace(&r.scaled(10.0), 1).unwrap();
            &e * e.adjoint()
        };
        assert!((&p1 - &p2).norm() < 1e-9);
        assert!((&p1 * &p1 - &p1).norm() < 1e-9);
    }

    #[test]
    fn bad_source_count() {
        let r = CrossSpectralMatrix::from_matrix(DMatrix::identity(3, 3), 0).unwrap();
        assert!(matches!(noise_subspace(&r, 0), Err(Error::Argument(_))));
        assert!(matches!(noise_subspace(&r, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn music_peaks_on_true_cell_and_is_scale_invariant() {
        let cam = CameraModel::default();
        let grid = build_grid(&cam, 16, 9, 1.5).unwrap();
        let geom = ArrayGeometry::default_uma16();
        let target = grid.index(11, 3);
        let a = steering_vector(&grid.points()[target], &geom, 4000.0, C);
        let r = rank_one_csm(a.as_slice(), 1e-6);
        let map = music_map(&r, &grid, &geom, 4000.0, C, 1).unwrap();
        assert_eq!(map.argmax(), target);
        assert!(map.values.iter().all(|v| v.is_finite() && *v > 0.0));
        let scaled = music_map(&r.scaled(100.0), &grid, &geom, 4000.0, C, 1).unwrap();
        for (p, q) in map.values.iter().zip(&scaled.values) {
            assert!((p - q).abs() <= 1e-9 * p.abs());
        }
        let bart = bartlett_map(&r, &grid, &geom, 4000.0, C).unwrap();
        assert_eq!(bart.argmax(), target);
    }

    #[test]
    fn bartlett_of_identity_is_flat() {
        let cam = CameraModel::default();
        let grid = build_grid(&cam, 8, 4, 1.5).unwrap();
        let geom = ArrayGeometry::default_uma16();
        let r = CrossSpectralMatrix::from_matrix(DMatrix::identity(16, 16), 0).unwrap();
        let map = bartlett_map(&r, &grid, &geom, 2000.0, C).unwrap();
        assert!(map.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn spl_log_identity_and_monotonicity() {
        let mut map = FieldMap::new(2, 2, vec![1.0, 2.0, 0.5, 4.0], MapScale::Linear).unwrap();
        map.power_scale = 3.0;
        let base = to_spl(&map, 1e-3);
        let louder = to_spl(
            &FieldMap {
                values: map.values.iter().map(|v| v * 10.0).collect(),
                ..map.clone()
            },
            1e-3,
        );
        for (a, b) in base.values.iter().zip(&louder.values) {
            assert!((b - a - 10.0).abs() < 1e-12);
        }
        assert_eq!(base.argmax(), map.argmax());
        assert!(base.values[3] > base.values[1] && base.values[1] > base.values[0]);
    }

    #[test]
    fn spl_of_zero_power_is_finite() {
        let mut map = FieldMap::new(1, 2, vec![1.0, 1.0], MapScale::Linear).unwrap();
        map.power_scale = 0.0;
        let l = to_spl(&map, 1.0);
        assert!(l.values.iter().all(|v| v.is_finite() && *v <= -299.0));
    }

    #[test]
    fn reference_maps_full_scale_tone_to_spl_ref() {
        let gain = crate::spectral::Window::Hann.coefficients(1024).iter().sum::<f64>();
        let r = full_scale_reference(16, gain, 94.0);
        let sigma = 16.0 * (gain / 2.0).powi(2);
        assert!((10.0 * (sigma / r).log10() - 94.0).abs() < 1e-9);
    }
}
