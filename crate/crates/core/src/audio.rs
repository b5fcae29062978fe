//! Multichannel PCM buffers, WAV I/O and fixed-size chunking.

use std::path::Path;

use crate::error::{Error, Result};

/// Time-domain samples, one `Vec` per channel, nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelBuffer {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl MultichannelBuffer {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::Argument("buffer needs at least one channel".into()));
        }
        let frames = channels[0].len();
        if let Some(bad) = channels.iter().position(|c| c.len() != frames) {
            return Err(Error::Argument(format!(
                "channel {bad} has {} frames, expected {frames}",
                channels[bad].len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn zeros(n_channels: usize, frames: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; frames]; n_channels], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn frames(&self) -> usize {
        self.channels[0].len()
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / f64::from(self.sample_rate)
    }

    /// Every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// A read-only window of `chunk_size` frames over a buffer.
#[derive(Debug, Clone, Copy)]
pub struct AudioChunk<'a> {
    buffer: &'a MultichannelBuffer,
    start: usize,
    len: usize,
    index: usize,
}

impl<'a> AudioChunk<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn start_frame(&self) -> usize {
        self.start
    }

    pub fn frames(&self) -> usize {
        self.len
    }

    pub fn n_channels(&self) -> usize {
        self.buffer.n_channels()
    }

    pub fn sample_rate(&self) -> u32 {
        self.buffer.sample_rate()
    }

    pub fn channel(&self, m: usize) -> &'a [f64] {
        &self.buffer.channel(m)[self.start..self.start + self.len]
    }
}

/// Contiguous, non-overlapping chunks in order. A trailing partial chunk is
/// dropped.
pub fn chunk_stream(
    buffer: &MultichannelBuffer,
    chunk_size: usize,
) -> Result<impl ExactSizeIterator<Item = AudioChunk<'_>> + '_> {
    if chunk_size == 0 {
        return Err(Error::Argument("chunk size must be positive".into()));
    }
    let count = buffer.frames() / chunk_size;
    Ok((0..count).map(move |index| AudioChunk {
        buffer,
        start: index * chunk_size,
        len: chunk_size,
        index,
    }))
}

/// Number of full chunks a buffer yields.
pub fn chunk_count(frames: usize, chunk_size: usize) -> usize {
    if chunk_size == 0 {
        0
    } else {
        frames / chunk_size
    }
}

/// Two-channel buffer holding copies of `left` and `right`.
pub fn extract_stereo(
    buffer: &MultichannelBuffer,
    left: usize,
    right: usize,
) -> Result<MultichannelBuffer> {
    let n = buffer.n_channels();
    if left >= n || right >= n {
        return Err(Error::Argument(format!(
            "stereo channels ({left}, {right}) out of range for {n}-channel input"
        )));
    }
    if left == right {
        return Err(Error::Argument(format!(
            "stereo channels must differ, got ({left}, {right})"
        )));
    }
    MultichannelBuffer::new(
        vec![buffer.channel(left).to_vec(), buffer.channel(right).to_vec()],
        buffer.sample_rate(),
    )
}

/// Sample encodings accepted by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Pcm16,
    Pcm24,
    Float32,
}

impl BitDepth {
    /// Largest round-trip error for samples inside `[-1, 1]`.
    pub fn lsb(self) -> f64 {
        match self {
            BitDepth::Pcm16 => 2f64.powi(-15),
            BitDepth::Pcm24 => 2f64.powi(-23),
            BitDepth::Float32 => 0.0,
        }
    }
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelBuffer> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let n = usize::from(spec.channels);
    if n == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }
    let frames = reader.duration() as usize;
    let mut channels = vec![Vec::with_capacity(frames); n];
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => {
            for (i, s) in reader.samples::<f32>().enumerate() {
                channels[i % n].push(f64::from(s.map_err(|e| map_hound(path, e))?));
            }
        }
        (hound::SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = 1.0 / f64::from(1u32 << (bits - 1));
            for (i, s) in reader.samples::<i32>().enumerate() {
                channels[i % n].push(f64::from(s.map_err(|e| map_hound(path, e))?) * scale);
            }
        }
        (format, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported sample format {format:?}/{bits} bit",
                path.display()
            )))
        }
    }
    if channels.iter().any(|c| c.len() != frames) {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated sample data"),
        ));
    }
    MultichannelBuffer::new(channels, spec.sample_rate)
}

pub fn write_wav(buffer: &MultichannelBuffer, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let channels = u16::try_from(buffer.n_channels())
        .map_err(|_| Error::Argument("too many channels for WAV".into()))?;
    let (bits_per_sample, sample_format) = match depth {
        BitDepth::Pcm16 => (16, hound::SampleFormat::Int),
        BitDepth::Pcm24 => (24, hound::SampleFormat::Int),
        BitDepth::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels,
        sample_rate: buffer.sample_rate(),
        bits_per_sample,
        sample_format,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for f in 0..buffer.frames() {
        for ch in buffer.channels() {
            let x = ch[f];
            match depth {
                BitDepth::Float32 => writer.write_sample(x as f32),
                BitDepth::Pcm16 | BitDepth::Pcm24 => {
                    let full = f64::from(1u32 << (bits_per_sample - 1));
                    let q = (x * full).round().clamp(-full, full - 1.0) as i32;
                    writer.write_sample(q)
                }
            }
            .map_err(|e| map_hound(path, e))?;
        }
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
