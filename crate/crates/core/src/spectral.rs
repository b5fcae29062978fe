//! Short-time Fourier snapshots of a chunk and the per-bin cross-spectral
//! matrix.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioChunk;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Symmetric window coefficients, `w[n] = 0.5 (1 - cos(2πn/(N-1)))` for Hann.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann if n == 1 => vec![1.0],
            Window::Hann => {
                let denom = (n - 1) as f64;
                (0..n)
                    .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos()))
                    .collect()
            }
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        })
    }
}

/// Spectra of overlapping windowed segments, indexed snapshot × channel × bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSnapshots {
    data: Vec<Complex64>,
    snapshots: usize,
    channels: usize,
    bins: usize,
    fft_size: usize,
    hop: usize,
    window: Window,
    sample_rate: u32,
}

impl SpectralSnapshots {
    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn bin_hz(&self) -> f64 {
        f64::from(self.sample_rate) / self.fft_size as f64
    }

    pub fn value(&self, snapshot: usize, channel: usize, bin: usize) -> Complex64 {
        self.data[(snapshot * self.channels + channel) * self.bins + bin]
    }

    /// The M-vector of channel values for one snapshot at one bin.
    pub fn bin_vector(&self, snapshot: usize, bin: usize) -> Vec<Complex64> {
        (0..self.channels)
            .map(|m| self.value(snapshot, m, bin))
            .collect()
    }
}

/// Reusable STFT front end holding the FFT plan and window.
#[derive(Clone)]
pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Window,
    coefficients: Vec<f64>,
    fft_size: usize,
    hop: usize,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft")
            .field("window", &self.window)
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(fft_size: usize, hop: usize, window: Window) -> Result<Self> {
        if fft_size < 2 {
            return Err(Error::Argument(format!("FFT size must be at least 2, got {fft_size}")));
        }
        if hop == 0 {
            return Err(Error::Argument("hop must be positive".into()));
        }
        Ok(Self {
            fft: FftPlanner::new().plan_fft_forward(fft_size),
            window,
            coefficients: window.coefficients(fft_size),
            fft_size,
            hop,
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Sum of window coefficients; the bin magnitude of a unit-amplitude
    /// sinusoid centered on a bin is half this value.
    pub fn coherent_gain(&self) -> f64 {
        self.coefficients.iter().sum()
    }

    pub fn snapshot_count(&self, frames: usize) -> usize {
        if frames < self.fft_size {
            0
        } else {
            (frames - self.fft_size) / self.hop + 1
        }
    }

    pub fn analyze(&self, chunk: &AudioChunk<'_>) -> Result<SpectralSnapshots> {
        let frames = chunk.frames();
        if frames < self.fft_size {
            return Err(Error::Argument(format!(
                "chunk of {frames} frames is shorter than the FFT size {}",
                self.fft_size
            )));
        }
        let snapshots = self.snapshot_count(frames);
        let channels = chunk.n_channels();
        let bins = self.fft_size / 2 + 1;
        let mut data = Vec::with_capacity(snapshots * channels * bins);
        let mut buf = vec![Complex64::default(); self.fft_size];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        for s in 0..snapshots {
            let start = s * self.hop;
            for m in 0..channels {
                let x = &chunk.channel(m)[start..start + self.fft_size];
                for ((b, &xi), &w) in buf.iter_mut().zip(x).zip(&self.coefficients) {
                    *b = Complex64::new(xi * w, 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                data.extend_from_slice(&buf[..bins]);
            }
        }
        Ok(SpectralSnapshots {
            data,
            snapshots,
            channels,
            bins,
            fft_size: self.fft_size,
            hop: self.hop,
            window: self.window,
            sample_rate: chunk.sample_rate(),
        })
    }
}

pub fn stft_snapshots(
    chunk: &AudioChunk<'_>,
    fft_size: usize,
    hop: usize,
    window: Window,
) -> Result<SpectralSnapshots> {
    Stft::new(fft_size, hop, window)?.analyze(chunk)
}

/// Nearest FFT bin to `center_hz`.
pub fn band_bin(center_hz: f64, sample_rate: u32, fft_size: usize) -> Result<usize> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if !(center_hz > 0.0 && center_hz < nyquist) {
        return Err(Error::Argument(format!(
            "band center {center_hz} Hz outside (0, {nyquist}) Hz"
        )));
    }
    Ok((center_hz * fft_size as f64 / f64::from(sample_rate)).round() as usize)
}

/// Snapshot-averaged outer product at one frequency bin, with diagonal
/// loading.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectralMatrix {
    matrix: DMatrix<Complex64>,
    bin: usize,
    snapshots: usize,
    loading: f64,
}

impl CrossSpectralMatrix {
    /// Wrap an arbitrary matrix; used by tests and synthetic inputs.
    pub fn from_matrix(matrix: DMatrix<Complex64>, bin: usize) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Argument("CSM must be a non-empty square matrix".into()));
        }
        Ok(Self {
            matrix,
            bin,
            snapshots: 0,
            loading: 0.0,
        })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn bin(&self) -> usize {
        self.bin
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn loading(&self) -> f64 {
        self.loading
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrix: self.matrix.map(|z| z * factor),
            ..self.clone()
        }
    }
}

fn outer_sum(snapshots: &SpectralSnapshots, bin: usize) -> DMatrix<Complex64> {
    let m = snapshots.channels();
    let mut acc = DMatrix::<Complex64>::zeros(m, m);
    for s in 0..snapshots.snapshots() {
        let x = snapshots.bin_vector(s, bin);
        for i in 0..m {
            for j in i..m {
                let v = x[i] * x[j].conj();
                acc[(i, j)] += v;
                if i != j {
                    acc[(j, i)] += v.conj();
                }
            }
        }
    }
    acc
}

fn finish_csm(
    mut sum: DMatrix<Complex64>,
    count: usize,
    bin: usize,
    loading_eps: f64,
) -> CrossSpectralMatrix {
    let m = sum.nrows();
    sum /= Complex64::new(count as f64, 0.0);
    let trace: f64 = sum.diagonal().iter().map(|z| z.re).sum();
    let load = loading_eps * trace / m as f64;
    for i in 0..m {
        sum[(i, i)] = Complex64::new(sum[(i, i)].re + load, 0.0);
    }
    CrossSpectralMatrix {
        matrix: sum,
        bin,
        snapshots: count,
        loading: loading_eps,
    }
}

/// `R = (1/S) Σ x xᴴ + eps · (trace/M) · I` at `bin`.
pub fn estimate_csm(
    snapshots: &SpectralSnapshots,
    bin: usize,
    loading_eps: f64,
) -> Result<CrossSpectralMatrix> {
    if snapshots.snapshots() == 0 {
        return Err(Error::Argument("CSM estimation needs at least one snapshot".into()));
    }
    if bin >= snapshots.bins() {
        return Err(Error::Argument(format!(
            "bin {bin} out of range for {} bins",
            snapshots.bins()
        )));
    }
    Ok(finish_csm(
        outer_sum(snapshots, bin),
        snapshots.snapshots(),
        bin,
        loading_eps,
    ))
}

/// Sliding accumulation of outer products over the last `capacity` chunks
/// for a single bin.
#[derive(Debug, Clone)]
pub struct CsmAccumulator {
    bin: usize,
    capacity: usize,
    entries: VecDeque<(DMatrix<Complex64>, usize)>,
}

impl CsmAccumulator {
    pub fn new(bin: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("CSM accumulation depth must be at least 1".into()));
        }
        Ok(Self {
            bin,
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn bin(&self) -> usize {
        self.bin
    }

    pub fn push(&mut self, snapshots: &SpectralSnapshots) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries
            .push_back((outer_sum(snapshots, self.bin), snapshots.snapshots()));
    }

    pub fn estimate(&self, loading_eps: f64) -> Result<CrossSpectralMatrix> {
        let count: usize = self.entries.iter().map(|(_, c)| c).sum();
        let Some((first, _)) = self.entries.front() else {
            return Err(Error::Argument("no chunks accumulated".into()));
        };
        if count == 0 {
            return Err(Error::Argument("CSM estimation needs at least one snapshot".into()));
        }
        let mut sum = DMatrix::<Complex64>::zeros(first.nrows(), first.ncols());
        for (m, _) in &self.entries {
            sum += m;
        }
        Ok(finish_csm(sum, count, self.bin, loading_eps))
    }
}
