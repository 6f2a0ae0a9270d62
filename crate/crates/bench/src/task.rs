//! Synthetic sequence-classification tasks.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    SinusoidClass,
    CopyMemory,
    ToyShapes,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SinusoidClass => "sinusoid-class",
            Self::CopyMemory => "copy-memory",
            Self::ToyShapes => "toy-shapes",
        })
    }
}

impl FromStr for TaskKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid-class" => Ok(Self::SinusoidClass),
            "copy-memory" => Ok(Self::CopyMemory),
            "toy-shapes" => Ok(Self::ToyShapes),
            _ => Err(BenchError::InvalidTask(format!("unknown task kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub len: usize,
    pub channels: usize,
    pub classes: usize,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl TaskSpec {
    /// Defaults per kind: 64 steps, 2 classes, no noise, 128/64 samples.
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        let (channels, classes) = match kind {
            TaskKind::SinusoidClass => (1, 2),
            TaskKind::CopyMemory => (4, 4),
            TaskKind::ToyShapes => (1, 4),
        };
        Self {
            kind,
            len: 64,
            channels,
            classes,
            noise: 0.0,
            train_size: 128,
            test_size: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::InvalidTask(m));
        if self.len == 0 || self.channels == 0 || self.train_size == 0 || self.test_size == 0 {
            return bad("length, channels and split sizes must be positive".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise level {} must be non-negative", self.noise));
        }
        if self.classes < 2 {
            return bad(format!("{} classes, need at least 2", self.classes));
        }
        match self.kind {
            TaskKind::SinusoidClass => {
                if 2 * self.classes >= self.len {
                    return bad(format!(
                        "{} frequency classes do not fit below Nyquist for length {}",
                        self.classes, self.len
                    ));
                }
            }
            TaskKind::CopyMemory => {
                if self.classes > self.channels {
                    return bad(format!(
                        "copy-memory with {} classes needs at least as many channels, got {}",
                        self.classes, self.channels
                    ));
                }
                if self.len < 2 {
                    return bad("copy-memory needs a delay of at least one step".into());
                }
            }
            TaskKind::ToyShapes => {
                if self.classes > 4 {
                    return bad(format!("toy-shapes has 2 to 4 classes, got {}", self.classes));
                }
                if self.len != 64 || self.channels != 1 {
                    return bad("toy-shapes sequences are 64 steps of one channel".into());
                }
            }
        }
        Ok(())
    }
}

/// Samples of one split, each `len x channels` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub data: Vec<f64>,
    pub len: usize,
    pub channels: usize,
}

impl Split {
    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.len * self.channels;
        &self.data[i * w..(i + 1) * w]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub train: Split,
    pub test: Split,
}

fn sample_rng(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Frequency (cycles per sequence) of sinusoid class `c`.
pub fn class_frequency(c: usize) -> usize {
    2 * (c + 1)
}

fn shape_image(class: usize, rng: &mut ChaCha20Rng) -> [f64; 64] {
    let mut img = [0.0; 64];
    let mut set = |r: usize, c: usize| img[r * 8 + c] = 1.0;
    match class {
        // filled square
        0 => {
            let s = rng.gen_range(3..=5);
            let (r0, c0) = (rng.gen_range(0..=8 - s), rng.gen_range(0..=8 - s));
            for r in r0..r0 + s {
                for c in c0..c0 + s {
                    set(r, c);
                }
            }
        }
        // plus
        1 => {
            let arm = rng.gen_range(1..=2);
            let (r0, c0) = (rng.gen_range(arm..8 - arm), rng.gen_range(arm..8 - arm));
            for k in 0..=2 * arm {
                set(r0 + k - arm, c0);
                set(r0, c0 + k - arm);
            }
        }
        // hollow square
        2 => {
            let s = rng.gen_range(4..=6);
            let (r0, c0) = (rng.gen_range(0..=8 - s), rng.gen_range(0..=8 - s));
            for k in 0..s {
                set(r0, c0 + k);
                set(r0 + s - 1, c0 + k);
                set(r0 + k, c0);
                set(r0 + k, c0 + s - 1);
            }
        }
        // diagonal stroke
        _ => {
            let s = rng.gen_range(4..=8);
            let (r0, c0) = (rng.gen_range(0..=8 - s), rng.gen_range(0..=8 - s));
            let anti = rng.gen_bool(0.5);
            for k in 0..s {
                set(r0 + k, if anti { c0 + s - 1 - k } else { c0 + k });
            }
        }
    }
    img
}

fn generate_sample(spec: &TaskSpec, id: u64, label: usize, out: &mut [f64]) {
    let mut rng = sample_rng(spec.seed, id);
    let (len, ch) = (spec.len, spec.channels);
    match spec.kind {
        TaskKind::SinusoidClass => {
            let f = class_frequency(label) as f64;
            for c in 0..ch {
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                for t in 0..len {
                    out[t * ch + c] = (std::f64::consts::TAU * f * t as f64 / len as f64 + phase).sin();
                }
            }
        }
        TaskKind::CopyMemory => {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[label] = 1.0;
            // recall cue on the last step
            out[(len - 1) * ch..].iter_mut().for_each(|v| *v = -1.0);
        }
        TaskKind::ToyShapes => out.copy_from_slice(&shape_image(label, &mut rng)),
    }
    if spec.noise > 0.0 {
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += spec.noise * z;
        }
    }
}

fn generate_split(spec: &TaskSpec, first_id: u64, size: usize) -> Split {
    let w = spec.len * spec.channels;
    let ids: Vec<u64> = (first_id..first_id + size as u64).collect();
    let labels: Vec<usize> = ids.iter().map(|&id| (id % spec.classes as u64) as usize).collect();
    let mut data = vec![0.0; size * w];
    for ((&id, &label), out) in ids.iter().zip(&labels).zip(data.chunks_mut(w)) {
        generate_sample(spec, id, label, out);
    }
    Split {
        ids,
        labels,
        data,
        len: spec.len,
        channels: spec.channels,
    }
}

/// Deterministic dataset: sample `id` is drawn from its own stream of a
/// generator seeded by the spec seed. Train ids come first, test ids after.
pub fn generate_task(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(Dataset {
        spec: spec.clone(),
        train: generate_split(spec, 0, spec.train_size),
        test: generate_split(spec, spec.train_size as u64, spec.test_size),
    })
}

impl Dataset {
    /// SHA-256 over the spec and every sample, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        for split in [&self.train, &self.test] {
            for (&id, &label) in split.ids.iter().zip(&split.labels) {
                h.update(id.to_le_bytes());
                h.update((label as u64).to_le_bytes());
            }
            for v in &split.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Class with the largest DFT magnitude among the class frequencies,
/// summed over channels.
pub fn spectral_argmax(sample: &[f64], len: usize, channels: usize, classes: usize) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..classes {
        let f = class_frequency(c) as f64;
        let mut power = 0.0;
        for ch in 0..channels {
            let (mut re, mut im) = (0.0, 0.0);
            for t in 0..len {
                let w = std::f64::consts::TAU * f * t as f64 / len as f64;
                re += sample[t * channels + ch] * w.cos();
                im -= sample[t * channels + ch] * w.sin();
            }
            power += re * re + im * im;
        }
        if power > best.1 {
            best = (c, power);
        }
    }
    best.0
}

const CACHE_MAGIC: &[u8; 8] = b"SSMDSET\0";
const CACHE_VERSION: u32 = 1;

fn cache_err(path: &Path, detail: impl ToString) -> BenchError {
    BenchError::Cache {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

/// Binary cache: magic, version, spec JSON, then per split the sizes, ids,
/// labels and row-major samples, all little-endian.
pub fn write_cache(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    let spec = serde_json::to_vec(&ds.spec).expect("spec serializes");
    buf.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    buf.extend_from_slice(&spec);
    for split in [&ds.train, &ds.test] {
        for n in [split.size(), split.len, split.channels] {
            buf.extend_from_slice(&(n as u64).to_le_bytes());
        }
        for &id in &split.ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        for &l in &split.labels {
            buf.extend_from_slice(&(l as u64).to_le_bytes());
        }
        for v in &split.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| cache_err(path, e))?;
    f.write_all(&buf).map_err(|e| cache_err(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn read_cache(path: &Path) -> Result<Dataset> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| cache_err(path, e))?;
    let truncated = || cache_err(path, "truncated file");
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(8) != Some(CACHE_MAGIC.as_slice()) {
        return Err(cache_err(path, "not a dataset cache"));
    }
    let version = u32::from_le_bytes(cur.take(4).ok_or_else(truncated)?.try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(cache_err(path, format!("cache version {version}, expected {CACHE_VERSION}")));
    }
    let n = cur.u64().ok_or_else(truncated)? as usize;
    let spec: TaskSpec = serde_json::from_slice(cur.take(n).ok_or_else(truncated)?).map_err(|e| cache_err(path, e))?;
    let mut split = || -> Result<Split> {
        let size = cur.u64().ok_or_else(truncated)? as usize;
        let len = cur.u64().ok_or_else(truncated)? as usize;
        let channels = cur.u64().ok_or_else(truncated)? as usize;
        let ids = (0..size).map(|_| cur.u64()).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
        let labels = (0..size)
            .map(|_| cur.u64().map(|v| v as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let count = size.checked_mul(len).and_then(|v| v.checked_mul(channels)).ok_or_else(truncated)?;
        if count > buf.len() / 8 {
            return Err(truncated());
        }
        let data = (0..count).map(|_| cur.f64()).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
        Ok(Split {
            ids,
            labels,
            data,
            len,
            channels,
        })
    };
    let train = split()?;
    let test = split()?;
    if cur.pos != buf.len() {
        return Err(cache_err(path, "trailing bytes"));
    }
    Ok(Dataset { spec, train, test })
}
