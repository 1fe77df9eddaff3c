//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use cloneval::audio::{encode_wav, AudioBuffer, WavEncoding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RATE: u32 = 16_000;

pub fn tone(freq: f64, secs: f64, amp: f64, rate: u32) -> Vec<f32> {
    let n = (secs * rate as f64).round() as usize;
    (0..n)
        .map(|i| (amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32)
        .collect()
}

pub fn noise(seed: u64, secs: f64, amp: f64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * RATE as f64) as usize;
    (0..n)
        .map(|_| (amp * rng.gen_range(-1.0..1.0)) as f32)
        .collect()
}

/// Decaying 1 kHz bursts every `period` samples.
pub fn click_train(len: usize, period: usize) -> Vec<f32> {
    let mut x = vec![0.0f32; len];
    for start in (0..len).step_by(period) {
        for j in 0..64.min(len - start) {
            let v = 0.9
                * (-(j as f64) / 8.0).exp()
                * (2.0 * PI * 1000.0 * j as f64 / RATE as f64).sin();
            x[start + j] += v as f32;
        }
    }
    x
}

pub fn write_wav(path: &Path, samples: Vec<f32>, rate: u32) {
    let bytes = encode_wav(&AudioBuffer::mono(samples, rate), WavEncoding::Float32);
    std::fs::write(path, bytes).unwrap();
}

/// The ten signals of the identity corpus, by stem.
pub fn identity_signals() -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    for f in [110.0, 220.0, 440.0, 660.0, 880.0] {
        out.push((format!("tone_{f:.0}"), tone(f, 1.0, 0.5, RATE)));
    }
    out.push(("noise".into(), noise(7, 1.0, 0.3)));
    out.push(("clicks".into(), click_train(RATE as usize * 2, 8000)));
    for (i, f) in [150.0, 330.0, 520.0].into_iter().enumerate() {
        let mut x = vec![0.0f32; 4000 * (i + 1)];
        x.extend(tone(f, 0.75, 0.4, RATE));
        x.extend(vec![0.0f32; 2000]);
        out.push((format!("gap_tone_{f:.0}"), x));
    }
    out
}

/// Deterministic, non-zero pseudo-embedding for `stem`.
pub fn fake_embedding(stem: &str, dim: usize) -> Vec<f64> {
    let seed = stem.bytes().fold(1469598103934665603u64, |h, b| {
        (h ^ b as u64).wrapping_mul(1099511628211)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn write_embeddings(path: &Path, entries: &BTreeMap<String, Vec<f64>>) {
    std::fs::write(path, serde_json::to_string_pretty(entries).unwrap()).unwrap();
}

const EMOTION_WORDS: [&str; 7] = [
    "angry", "disgust", "fear", "happy", "neutral", "sad", "plain",
];

/// `n` reference/generated pairs with emotion words in the stems. Generated
/// files are the references with a gain change, added noise and a shift.
pub fn write_pair_corpus(reference: &Path, generated: &Path, n: usize) -> Vec<String> {
    let mut stems = Vec::new();
    for i in 0..n {
        let stem = format!(
            "spk{:02}_{}_{i:03}",
            i % 5,
            EMOTION_WORDS[i % EMOTION_WORDS.len()]
        );
        let f0 = 110.0 + 17.0 * i as f64;
        let mut r = tone(f0, 0.5, 0.4, RATE);
        for (k, v) in tone(2.0 * f0, 0.5, 0.1, RATE).into_iter().enumerate() {
            r[k] += v;
        }
        let extra = noise(i as u64, 0.5, 0.02);
        let mut g: Vec<f32> = r.iter().zip(&extra).map(|(a, b)| 0.8 * a + b).collect();
        g.rotate_right(37 * (i % 4));
        write_wav(&reference.join(format!("{stem}.wav")), r, RATE);
        write_wav(&generated.join(format!("{stem}.wav")), g, RATE);
        stems.push(stem);
    }
    stems
}
