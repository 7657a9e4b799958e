//! Excitation signals, labelled datasets and the `SIDD` container.
//!
//! Inputs are drawn from a truncated normal by rejection. Every sequence has
//! its own ChaCha8 substream (`seed`, `stream`), so a sequence's contents
//! never depend on generation order or thread count.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{write_container, Reader};
use crate::dynsys::{simulate_system, FeedbackSign, Preset, System};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"SIDD";
pub const DATASET_VERSION: u16 = 1;

/// Stream ids at or above this value belong to test sequences.
pub const TEST_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormalSpec {
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
}

impl TruncatedNormalSpec {
    /// Standard normal truncated to (-1, 1).
    pub const UNIT: TruncatedNormalSpec = TruncatedNormalSpec {
        mu: 0.0,
        sigma: 1.0,
        a: -1.0,
        b: 1.0,
    };

    pub fn new(mu: f64, sigma: f64, a: f64, b: f64) -> Result<Self> {
        let s = Self { mu, sigma, a, b };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a < self.b) {
            return Err(Error::Parameter(format!(
                "need a < b, got a={} b={}",
                self.a, self.b
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() || !self.mu.is_finite() {
            return Err(Error::Parameter(format!(
                "need finite mu and sigma > 0, got sigma={}",
                self.sigma
            )));
        }
        Ok(())
    }
}

impl Default for TruncatedNormalSpec {
    fn default() -> Self {
        Self::UNIT
    }
}

/// Draws `n` samples by rejection from `N(mu, sigma²)`, keeping those
/// strictly inside `(a, b)` after conversion to `T`.
pub fn sample_truncated_normal<T: Scalar, R: Rng + ?Sized>(
    spec: &TruncatedNormalSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    spec.validate()?;
    let (lo, hi) = (T::of(spec.a), T::of(spec.b));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let z: f64 = rng.sample(StandardNormal);
        let x = T::of(spec.mu + spec.sigma * z);
        if x > lo && x < hi {
            out.push(x);
        }
    }
    Ok(out)
}

/// `[0/T, 1/T, ..., (T-1)/T]`.
pub fn normalized_index<T: Scalar>(len: usize) -> Result<Vec<T>> {
    if len == 0 {
        return Err(Error::Parameter(
            "sequence length must be at least 1".into(),
        ));
    }
    let t = T::of(len as f64);
    Ok((0..len).map(|n| T::of(n as f64) / t).collect())
}

/// Substream generator for one sequence.
pub fn sequence_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_groups: usize,
    pub group_size: usize,
    pub train_len: usize,
    pub test_len: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// 5 groups of 32 sequences of length 5000; test 32 × 10000.
    pub fn paper(seed: u64) -> Self {
        Self {
            n_groups: 5,
            group_size: 32,
            train_len: 5000,
            test_len: 10000,
            seed,
        }
    }

    /// Reduced sizes that train in seconds.
    pub fn desk(seed: u64) -> Self {
        Self {
            n_groups: 3,
            group_size: 8,
            train_len: 500,
            test_len: 1000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_groups", self.n_groups),
            ("group_size", self.group_size),
            ("train_len", self.train_len),
            ("test_len", self.test_len),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

/// Provenance: everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wh_front_sign: Option<FeedbackSign>,
    pub seed: u64,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    /// Substream of sequence 0; sequence `s` uses `first_stream + s`.
    pub first_stream: u64,
    pub input: TruncatedNormalSpec,
    pub spec: DatasetSpec,
    pub scalar: String,
}

/// A batch of sequences: features `[batch, time, 2]` (input, normalized
/// index) and labels `[batch, time, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Tensor<T>,
    labels: Tensor<T>,
    manifest: Manifest,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_parts(features: Tensor<T>, labels: Tensor<T>, manifest: Manifest) -> Result<Self> {
        let fs = features.shape();
        if fs.len() != 3 || fs[2] != 2 || fs[0] == 0 || fs[1] == 0 {
            return Err(Error::dim(
                "features",
                "[batch, time, 2]",
                format!("{fs:?}"),
            ));
        }
        if labels.shape() != [fs[0], fs[1], 1] {
            return Err(Error::dim(
                "labels",
                format!("[{}, {}, 1]", fs[0], fs[1]),
                format!("{:?}", labels.shape()),
            ));
        }
        Ok(Self {
            features,
            labels,
            manifest,
        })
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn labels(&self) -> &Tensor<T> {
        &self.labels
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn batch(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.features.shape()[1]
    }

    /// Channel-0 inputs of sequence `s`.
    pub fn inputs(&self, s: usize) -> Vec<T> {
        self.features.row(s).chunks_exact(2).map(|c| c[0]).collect()
    }

    pub fn outputs(&self, s: usize) -> &[T] {
        self.labels.row(s)
    }

    /// Copies time steps `start..start+len` of every sequence.
    pub fn window(&self, start: usize, len: usize) -> (Tensor<T>, Tensor<T>) {
        let (b, t) = (self.batch(), self.seq_len());
        assert!(start + len <= t, "window out of range");
        let mut f = Vec::with_capacity(b * len * 2);
        let mut l = Vec::with_capacity(b * len);
        for s in 0..b {
            f.extend_from_slice(&self.features.row(s)[start * 2..(start + len) * 2]);
            l.extend_from_slice(&self.labels.row(s)[start..start + len]);
        }
        (
            Tensor::from_vec(&[b, len, 2], f).unwrap(),
            Tensor::from_vec(&[b, len, 1], l).unwrap(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::json!({
            "manifest": self.manifest,
            "batch": self.batch(),
            "time": self.seq_len(),
        });
        let f: Vec<f64> = self
            .features
            .as_slice()
            .iter()
            .map(|x| x.to_f64_lossless())
            .collect();
        let l: Vec<f64> = self
            .labels
            .as_slice()
            .iter()
            .map(|x| x.to_f64_lossless())
            .collect();
        write_container(w, DATASET_MAGIC, DATASET_VERSION, &header, &[&f, &l])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            manifest: Manifest,
            batch: usize,
            time: usize,
        }
        let mut r = Reader::new(bytes);
        let at = 10;
        let header: Header = serde_json::from_value(r.header(DATASET_MAGIC, DATASET_VERSION)?)
            .map_err(|e| Error::Format {
                offset: at,
                expected: format!("dataset header with manifest, batch and time ({e})"),
            })?;
        if header.batch == 0 || header.time == 0 {
            return Err(Error::Format {
                offset: at,
                expected: "non-zero batch and time".into(),
            });
        }
        let cells = header
            .batch
            .checked_mul(header.time)
            .ok_or_else(|| Error::Format {
                offset: r.offset(),
                expected: "batch × time within range".into(),
            })?;
        let f = r.f64s(cells * 2, "feature array")?;
        let l = r.f64s(cells, "label array")?;
        r.finish()?;
        let features = Tensor::from_vec(
            &[header.batch, header.time, 2],
            f.into_iter().map(T::of).collect(),
        )?;
        let labels = Tensor::from_vec(
            &[header.batch, header.time, 1],
            l.into_iter().map(T::of).collect(),
        )?;
        Self::from_parts(features, labels, header.manifest)
    }

    /// Lossy CSV for plotting, header `seq,t,u,idx,y`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "seq,t,u,idx,y")?;
        for s in 0..self.batch() {
            let f = self.features.row(s);
            let l = self.labels.row(s);
            for t in 0..self.seq_len() {
                writeln!(
                    w,
                    "{s},{t},{},{},{}",
                    crate::fmt_full(f[2 * t].to_f64_lossless()),
                    crate::fmt_full(f[2 * t + 1].to_f64_lossless()),
                    crate::fmt_full(l[t].to_f64_lossless())
                )?;
            }
        }
        Ok(())
    }
}

/// Train groups plus the single test group.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle<T> {
    pub train: Vec<Dataset<T>>,
    pub test: Dataset<T>,
}

fn wh_sign_of<T: Scalar>(system: &System<T>) -> Option<FeedbackSign> {
    match system {
        System::WienerHammerstein(wh) => Some(wh.front.sign()),
        _ => None,
    }
}

fn generate_group<T: Scalar>(
    system: &System<T>,
    manifest: Manifest,
    count: usize,
    len: usize,
) -> Result<Dataset<T>> {
    let index = normalized_index::<T>(len)?;
    let seqs: Vec<Result<(Vec<T>, Vec<T>)>> = (0..count)
        .into_par_iter()
        .map(|s| {
            let stream = manifest.first_stream + s as u64;
            let mut rng = sequence_rng(manifest.seed, stream);
            let u = sample_truncated_normal::<T, _>(&manifest.input, len, &mut rng)?;
            let y = simulate_system(system, &u).map_err(|e| match e {
                Error::NonFinite { index } => Error::SequenceBlowup {
                    sequence: (stream % TEST_STREAM_BASE) as usize,
                    index,
                },
                other => other,
            })?;
            Ok((u, y))
        })
        .collect();
    let mut f = Vec::with_capacity(count * len * 2);
    let mut l = Vec::with_capacity(count * len);
    for seq in seqs {
        let (u, y) = seq?;
        for (x, i) in u.iter().zip(&index) {
            f.push(*x);
            f.push(*i);
        }
        l.extend(y);
    }
    Dataset::from_parts(
        Tensor::from_vec(&[count, len, 2], f)?,
        Tensor::from_vec(&[count, len, 1], l)?,
        manifest,
    )
}

/// Generates `spec.n_groups` train groups and one test group by driving
/// `system` from rest with truncated-normal inputs.
pub fn build_dataset<T: Scalar>(
    system: &System<T>,
    name: &str,
    spec: &DatasetSpec,
) -> Result<DatasetBundle<T>> {
    spec.validate()?;
    let base = Manifest {
        system: name.to_string(),
        wh_front_sign: wh_sign_of(system),
        seed: spec.seed,
        role: Role::Train,
        group: None,
        first_stream: 0,
        input: TruncatedNormalSpec::UNIT,
        spec: *spec,
        scalar: T::NAME.to_string(),
    };
    let train = (0..spec.n_groups)
        .map(|g| {
            let m = Manifest {
                group: Some(g),
                first_stream: (g * spec.group_size) as u64,
                ..base.clone()
            };
            generate_group(system, m, spec.group_size, spec.train_len)
        })
        .collect::<Result<Vec<_>>>()?;
    let test_manifest = Manifest {
        role: Role::Test,
        first_stream: TEST_STREAM_BASE,
        ..base
    };
    let test = generate_group(system, test_manifest, spec.group_size, spec.test_len)?;
    Ok(DatasetBundle { train, test })
}

/// Convenience wrapper resolving a preset by name.
pub fn build_preset_dataset<T: Scalar>(
    preset: Preset,
    spec: &DatasetSpec,
) -> Result<DatasetBundle<T>> {
    build_dataset(&preset.build::<T>(), preset.name(), spec)
}

/// Result of regenerating a dataset from its manifest.
#[derive(Debug, Clone, PartialEq)]
pub enum Regeneration {
    Match,
    UnknownSystem(String),
    InputMismatch { sequence: usize, time: usize },
    LabelMismatch { sequence: usize, time: usize },
    IndexMismatch { sequence: usize, time: usize },
}

/// Redraws inputs from the manifest's substreams and re-simulates labels,
/// comparing bit-for-bit.
pub fn regenerate_check<T: Scalar>(ds: &Dataset<T>) -> Result<Regeneration> {
    let m = ds.manifest();
    let Ok(preset) = m.system.parse::<Preset>() else {
        return Ok(Regeneration::UnknownSystem(m.system.clone()));
    };
    let system = preset.build_with::<T>(m.wh_front_sign.unwrap_or_default());
    let index = normalized_index::<T>(ds.seq_len())?;
    for s in 0..ds.batch() {
        let mut rng = sequence_rng(m.seed, m.first_stream + s as u64);
        let u = sample_truncated_normal::<T, _>(&m.input, ds.seq_len(), &mut rng)?;
        let row = ds.features().row(s);
        for t in 0..ds.seq_len() {
            if row[2 * t].to_f64_lossless().to_bits() != u[t].to_f64_lossless().to_bits() {
                return Ok(Regeneration::InputMismatch {
                    sequence: s,
                    time: t,
                });
            }
            if row[2 * t + 1] != index[t] {
                return Ok(Regeneration::IndexMismatch {
                    sequence: s,
                    time: t,
                });
            }
        }
        let y = simulate_system(&system, &ds.inputs(s))?;
        if let Some(t) = y
            .iter()
            .zip(ds.outputs(s))
            .position(|(a, b)| a.to_f64_lossless().to_bits() != b.to_f64_lossless().to_bits())
        {
            return Ok(Regeneration::LabelMismatch {
                sequence: s,
                time: t,
            });
        }
    }
    Ok(Regeneration::Match)
}
