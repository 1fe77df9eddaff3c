//! WAV decoding, channel downmix and band-limited resampling.
//!
//! Everything downstream of this module works on mono audio at
//! [`CANONICAL_RATE`]. [`load_canonical`] chains the three steps.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Sample rate used for both speaker embeddings and feature extraction.
pub const CANONICAL_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid WAV data: {0}")]
    Format(String),
    #[error("unsupported WAV encoding: {0}")]
    Unsupported(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn format_err(msg: impl Into<String>) -> AudioError {
    AudioError::Format(msg.into())
}

/// Decoded PCM audio. Multichannel data is stored interleaved.
#[derive(Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
    channels: u16,
}

impl fmt::Debug for AudioBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AudioBuffer")
            .field("frames", &self.frames())
            .field("sample_rate", &self.sample_rate)
            .field("channels", &self.channels)
            .finish()
    }
}

impl AudioBuffer {
    /// Build a buffer from interleaved samples.
    ///
    /// Panics if `sample_rate` or `channels` is zero, or if the sample count
    /// is not a whole number of frames.
    pub fn new(samples: Vec<f32>, sample_rate: u32, channels: u16) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        assert!(channels > 0, "channel count must be positive");
        assert!(
            samples.len().is_multiple_of(channels as usize),
            "sample count must be a multiple of the channel count"
        );
        Self {
            samples,
            sample_rate,
            channels,
        }
    }

    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self::new(samples, sample_rate, 1)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Int(u16),
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    encoding: Encoding,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(format_err("fmt chunk shorter than 16 bytes"));
    }
    let mut tag = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let block_align = read_u16(body, 12);
    let bits = read_u16(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the subformat GUID,
        // whose first two bytes carry the plain format tag.
        if body.len() < 26 {
            return Err(format_err("extensible fmt chunk is truncated"));
        }
        tag = read_u16(body, 24);
    }
    if channels == 0 {
        return Err(format_err("zero channels"));
    }
    if sample_rate == 0 {
        return Err(format_err("zero sample rate"));
    }
    let encoding = match (tag, bits) {
        (FORMAT_PCM, 16 | 24 | 32) => Encoding::Int(bits),
        (FORMAT_IEEE_FLOAT, 32) => Encoding::Float32,
        (FORMAT_PCM, b) => return Err(AudioError::Unsupported(format!("{b}-bit integer PCM"))),
        (FORMAT_IEEE_FLOAT, b) => return Err(AudioError::Unsupported(format!("{b}-bit float"))),
        (t, _) => return Err(AudioError::Unsupported(format!("format tag {t:#06x}"))),
    };
    let bytes_per_sample = match encoding {
        Encoding::Int(b) => b / 8,
        Encoding::Float32 => 4,
    };
    if block_align != bytes_per_sample * channels {
        return Err(format_err(format!(
            "block align {block_align} does not match {channels} channel(s) of {bytes_per_sample} bytes"
        )));
    }
    Ok(FmtChunk {
        encoding,
        channels,
        sample_rate,
        block_align,
    })
}

/// Decode a RIFF/WAVE byte stream.
///
/// Integer PCM is scaled by `1 / 2^(bits-1)`. Float samples are passed
/// through, clamped to `[-1, 1]`; non-finite floats are rejected.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format_err("missing RIFF/WAVE header"));
    }
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;
        match id {
            b"fmt " => {
                if size > available {
                    return Err(format_err("fmt chunk is truncated"));
                }
                fmt = Some(parse_fmt(&bytes[body_start..body_start + size])?);
            }
            b"data" => {
                if size > available {
                    return Err(format_err(format!(
                        "data chunk declares {size} bytes but only {available} remain"
                    )));
                }
                data = Some(&bytes[body_start..body_start + size]);
            }
            _ => {}
        }
        if data.is_some() && fmt.is_some() {
            break;
        }
        // chunks are word aligned
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }
    let fmt = fmt.ok_or_else(|| format_err("missing fmt chunk"))?;
    let data = data.ok_or_else(|| format_err("missing data chunk"))?;
    if data.len() % fmt.block_align as usize != 0 {
        return Err(format_err("data chunk ends inside a frame"));
    }
    if data.is_empty() {
        return Err(format_err("data chunk holds no samples"));
    }

    let samples = match fmt.encoding {
        Encoding::Int(16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        Encoding::Int(24) => data
            .chunks_exact(3)
            .map(|c| {
                // sign-extend through the top byte of an i32
                let v = i32::from_le_bytes([0, c[0], c[1], c[2]]) >> 8;
                v as f32 / 8_388_608.0
            })
            .collect(),
        Encoding::Int(32) => data
            .chunks_exact(4)
            .map(|c| (i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64 / 2_147_483_648.0) as f32)
            .collect(),
        Encoding::Int(b) => unreachable!("bit depth {b} rejected in parse_fmt"),
        Encoding::Float32 => {
            let mut out = Vec::with_capacity(data.len() / 4);
            for c in data.chunks_exact(4) {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !v.is_finite() {
                    return Err(format_err("non-finite float sample"));
                }
                out.push(v.clamp(-1.0, 1.0));
            }
            out
        }
    };
    Ok(AudioBuffer::new(samples, fmt.sample_rate, fmt.channels))
}

/// Sample encodings supported by [`encode_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Pcm24,
    Pcm32,
    Float32,
}

/// Serialize a buffer as a canonical 44-byte-header WAV file.
pub fn encode_wav(buf: &AudioBuffer, encoding: WavEncoding) -> Vec<u8> {
    let (tag, bytes_per_sample) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 2u16),
        WavEncoding::Pcm24 => (FORMAT_PCM, 3),
        WavEncoding::Pcm32 => (FORMAT_PCM, 4),
        WavEncoding::Float32 => (FORMAT_IEEE_FLOAT, 4),
    };
    let block_align = bytes_per_sample * buf.channels;
    let data_len = buf.samples.len() * bytes_per_sample as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&buf.channels.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample * 8).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &buf.samples {
        let s = s.clamp(-1.0, 1.0) as f64;
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavEncoding::Pcm24 => {
                let v = (s * 8_388_608.0).round().clamp(-8_388_608.0, 8_388_607.0) as i32;
                out.extend_from_slice(&v.to_le_bytes()[..3]);
            }
            WavEncoding::Pcm32 => {
                let v = (s * 2_147_483_648.0)
                    .round()
                    .clamp(-2_147_483_648.0, 2_147_483_647.0) as i32;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavEncoding::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    out
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer, AudioError> {
    let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_wav(&bytes)
}

/// Average all channels into one.
pub fn downmix_mono(buf: &AudioBuffer) -> AudioBuffer {
    if buf.channels == 1 {
        return buf.clone();
    }
    let ch = buf.channels as usize;
    let samples = buf
        .samples
        .chunks_exact(ch)
        .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / ch as f64) as f32)
        .collect();
    AudioBuffer::mono(samples, buf.sample_rate)
}

const KAISER_BETA: f64 = 8.6;
const TAPS_PER_PHASE: usize = 64;
/// Passband edge as a fraction of the lower of the two Nyquist rates.
const CUTOFF: f64 = 0.92;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Rational-ratio polyphase windowed-sinc resampler.
///
/// The ratio `target / source` is reduced to `up / down`; output sample `n`
/// sits at input position `n * down / up`, and each of the `up` fractional
/// offsets owns a 64-tap Kaiser-windowed sinc kernel normalized to unit DC
/// gain.
#[derive(Debug, Clone)]
pub struct SincResampler {
    up: u64,
    down: u64,
    source_rate: u32,
    target_rate: u32,
    // [phase][tap]
    kernels: Vec<f64>,
}

impl SincResampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Self {
        assert!(source_rate > 0 && target_rate > 0, "rates must be positive");
        let g = gcd(source_rate as u64, target_rate as u64);
        let up = target_rate as u64 / g;
        let down = source_rate as u64 / g;
        // normalized cutoff in cycles per input sample
        let fc = 0.5 * CUTOFF * (up as f64 / down as f64).min(1.0);
        let half = (TAPS_PER_PHASE / 2) as f64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut kernels = Vec::with_capacity(up as usize * TAPS_PER_PHASE);
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            let start = kernels.len();
            for tap in 0..TAPS_PER_PHASE {
                let x = (tap as f64 - (half - 1.0)) - frac;
                let arg = 2.0 * fc * x;
                let sinc = if arg.abs() < 1e-12 {
                    1.0
                } else {
                    (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
                };
                let r = (x / half).clamp(-1.0, 1.0);
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                kernels.push(2.0 * fc * sinc * window);
            }
            let sum: f64 = kernels[start..].iter().sum();
            kernels[start..].iter_mut().for_each(|k| *k /= sum);
        }
        Self {
            up,
            down,
            source_rate,
            target_rate,
            kernels,
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u128 * self.up as u128 + self.down as u128 / 2) / self.down as u128) as usize
    }

    /// Resample one channel.
    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.source_rate == self.target_rate {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let first_offset = TAPS_PER_PHASE as i64 / 2 - 1;
        let mut out = Vec::with_capacity(n_out);
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as i64;
            let phase = (pos % self.up) as usize;
            let kernel = &self.kernels[phase * TAPS_PER_PHASE..(phase + 1) * TAPS_PER_PHASE];
            let start = base - first_offset;
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let idx = start + k as i64;
                if idx >= 0 && (idx as usize) < input.len() {
                    acc += w * input[idx as usize] as f64;
                }
            }
            out.push(acc.clamp(-1.0, 1.0) as f32);
        }
        out
    }
}

/// Resample to `target_rate`. Identical rates return the samples unchanged.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> AudioBuffer {
    assert!(target_rate > 0, "target rate must be positive");
    if buf.sample_rate == target_rate {
        return buf.clone();
    }
    let resampler = SincResampler::new(buf.sample_rate, target_rate);
    let ch = buf.channels as usize;
    if ch == 1 {
        return AudioBuffer::mono(resampler.process(&buf.samples), target_rate);
    }
    let channels: Vec<Vec<f32>> = (0..ch)
        .map(|c| {
            let plane: Vec<f32> = buf.samples.iter().skip(c).step_by(ch).copied().collect();
            resampler.process(&plane)
        })
        .collect();
    let frames = channels[0].len();
    let mut samples = Vec::with_capacity(frames * ch);
    for i in 0..frames {
        samples.extend(channels.iter().map(|plane| plane[i]));
    }
    AudioBuffer::new(samples, target_rate, buf.channels)
}

/// Read a WAV file and bring it to mono at [`CANONICAL_RATE`].
pub fn load_canonical(path: &Path) -> Result<AudioBuffer, AudioError> {
    let decoded = read_wav(path)?;
    Ok(resample(&downmix_mono(&decoded), CANONICAL_RATE))
}
