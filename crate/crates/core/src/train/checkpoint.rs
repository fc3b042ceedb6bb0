//! Binary checkpoint and model files. The layout is documented in `docs/checkpoint-format.md`.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ResolvedConfig;
use super::metrics::MetricsLog;
use super::trainer::{config_hash, Schedule, Snapshot, Trainer};
use crate::data::FeatureScaling;
use crate::error::{Error, Result};
use crate::model::{Affine, ModelConfig, NetworkParams, NormMode};
use crate::optim::{AdaRadMState, AdaRadState, OptimizerState, RmsPropState};
use crate::topology::UnitLedger;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NPNETCK1";
pub const MODEL_MAGIC: &[u8; 8] = b"NPNETMD1";

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
    fn json<T: Serialize>(&mut self, v: &T) {
        let s = serde_json::to_vec(v).expect("serializable");
        self.usize(s.len());
        self.bytes(&s);
    }
    fn finish(mut self) -> Vec<u8> {
        let digest: [u8; 32] = Sha256::digest(&self.buf).into();
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    /// Verifies the trailing digest and the magic.
    fn open(data: &'a [u8], magic: &[u8; 8], path: &'a Path) -> Result<Self> {
        if data.len() < 40 {
            return Err(Error::Checkpoint {
                path: path.into(),
                message: format!("file is {} bytes, too short to be a checkpoint", data.len()),
            });
        }
        let (body, digest) = data.split_at(data.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint {
                path: path.into(),
                message: "checksum mismatch: file is corrupt or truncated".into(),
            });
        }
        let mut r = Reader {
            buf: body,
            pos: 0,
            path,
        };
        if r.take(8)? != magic {
            return Err(r.err("bad magic"));
        }
        Ok(r)
    }

    fn err(&self, msg: &str) -> Error {
        Error::Checkpoint {
            path: self.path.into(),
            message: format!("{msg} at offset {}", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err("length out of range"))
    }
    fn len(&mut self, per_item: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(per_item) > self.buf.len() - self.pos {
            return Err(self.err("length exceeds the file"));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn array1(&mut self, n: usize) -> Result<Array1<f64>> {
        (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>().map(Array1::from)
    }
    fn array2(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let v = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("shape matches length"))
    }
    fn json<T: DeserializeOwned>(&mut self) -> Result<T> {
        let n = self.len(1)?;
        let at = self.pos;
        let bytes = self.take(n)?;
        serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint {
            path: self.path.into(),
            message: format!("invalid metadata at offset {at}: {e}"),
        })
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing data"));
        }
        Ok(())
    }
}

fn norm_code(n: NormMode) -> u8 {
    match n {
        NormMode::CapNorm => 0,
        NormMode::BatchNorm { affine: false } => 1,
        NormMode::BatchNorm { affine: true } => 2,
        NormMode::None => 3,
    }
}

fn write_model_config(w: &mut Writer, c: &ModelConfig) {
    w.usize(c.num_layers);
    w.usize(c.input_dim);
    w.usize(c.output_dim);
    w.u8(norm_code(c.norm));
}

fn read_model_config(r: &mut Reader) -> Result<ModelConfig> {
    let (l, d0, dl) = (r.usize()?, r.usize()?, r.usize()?);
    let norm = match r.u8()? {
        0 => NormMode::CapNorm,
        1 => NormMode::BatchNorm { affine: false },
        2 => NormMode::BatchNorm { affine: true },
        3 => NormMode::None,
        _ => return Err(r.err("unknown normalization code")),
    };
    ModelConfig::new(l, d0, dl, norm).map_err(|e| r.err(&e.to_string()))
}

fn write_params(w: &mut Writer, p: &NetworkParams) {
    w.usize(p.dims().len());
    for &d in p.dims() {
        w.usize(d);
    }
    for m in p.weights() {
        // Row-major regardless of the in-memory layout.
        w.f64s(m.iter());
    }
    for l in 1..p.num_layers() {
        let b = p.norm_buffers(l);
        w.f64s(b.running_mean.iter());
        w.f64s(b.running_scale.iter());
        match &b.affine {
            None => w.u8(0),
            Some(a) => {
                w.u8(1);
                w.f64s(a.gamma.iter());
                w.f64s(a.beta.iter());
            }
        }
    }
}

fn read_params(r: &mut Reader, config: &ModelConfig) -> Result<NetworkParams> {
    let n = r.len(8)?;
    if n != config.num_layers + 1 {
        return Err(r.err("dimension count does not match the layer count"));
    }
    let dims = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    if dims[0] != config.input_dim || dims[n - 1] != config.output_dim {
        return Err(r.err("input/output dimensions do not match"));
    }
    let total: usize = dims.windows(2).map(|p| p[0].saturating_mul(p[1])).sum();
    if total.saturating_mul(8) > r.buf.len() - r.pos {
        return Err(r.err("weight arrays exceed the file"));
    }
    let weights = dims
        .windows(2)
        .map(|p| r.array2(p[0], p[1]))
        .collect::<Result<Vec<_>>>()?;
    let mut params = NetworkParams::from_weights(config, weights).map_err(|e| r.err(&e.to_string()))?;
    for l in 1..config.num_layers {
        let d = dims[l];
        let mean = r.array1(d)?;
        let scale = r.array1(d)?;
        let affine = match r.u8()? {
            0 => None,
            1 => Some(Affine {
                gamma: r.array1(d)?,
                beta: r.array1(d)?,
            }),
            _ => return Err(r.err("bad affine flag")),
        };
        if affine.is_some() != config.norm.is_affine() {
            return Err(r.err("affine parameters do not match the normalization mode"));
        }
        let b = params.norm_buffers_mut(l);
        b.running_mean = mean;
        b.running_scale = scale;
        b.affine = affine;
    }
    Ok(params)
}

fn write_adarad(w: &mut Writer, s: &AdaRadState) {
    w.f64(s.phi_max);
    w.f64(s.c_max);
    for (pb, c) in s.phi_bar.iter().zip(&s.capacity) {
        w.f64s(pb);
        w.f64s(c);
    }
}

fn read_adarad(r: &mut Reader, dims: &[usize]) -> Result<AdaRadState> {
    let (phi_max, c_max) = (r.f64()?, r.f64()?);
    let mut phi_bar = Vec::new();
    let mut capacity = Vec::new();
    for &d in &dims[1..] {
        phi_bar.push(r.array1(d)?.to_vec());
        capacity.push(r.array1(d)?.to_vec());
    }
    Ok(AdaRadState {
        phi_bar,
        capacity,
        phi_max,
        c_max,
    })
}

fn write_optimizer(w: &mut Writer, o: &OptimizerState) {
    match o {
        OptimizerState::AdaRad(s) => {
            w.u8(0);
            write_adarad(w, s);
        }
        OptimizerState::AdaRadM(s) => {
            w.u8(1);
            write_adarad(w, &s.base);
            for (p, a) in s.phi_tilde.iter().zip(&s.arith_capacity) {
                w.f64s(p.iter());
                w.f64s(a);
            }
            for &f in &s.needs_ortho {
                w.u8(f as u8);
            }
        }
        OptimizerState::Sgd => w.u8(2),
        OptimizerState::RmsProp(s) => {
            w.u8(3);
            w.f64(s.beta);
            w.f64(s.epsilon);
            w.f64(s.capacity);
            for c in &s.cache {
                w.f64s(c.iter());
            }
            for c in &s.affine_cache {
                match c {
                    None => w.u8(0),
                    Some((g, b)) => {
                        w.u8(1);
                        w.f64s(g.iter());
                        w.f64s(b.iter());
                    }
                }
            }
        }
    }
}

fn read_optimizer(r: &mut Reader, params: &NetworkParams) -> Result<OptimizerState> {
    let dims = params.dims();
    let state = match r.u8()? {
        0 => OptimizerState::AdaRad(read_adarad(r, dims)?),
        1 => {
            let base = read_adarad(r, dims)?;
            let mut phi_tilde = Vec::new();
            let mut arith_capacity = Vec::new();
            for p in dims.windows(2) {
                phi_tilde.push(r.array2(p[0], p[1])?);
                arith_capacity.push(r.array1(p[1])?.to_vec());
            }
            let needs_ortho = (1..dims.len()).map(|_| r.u8().map(|b| b != 0)).collect::<Result<_>>()?;
            OptimizerState::AdaRadM(AdaRadMState {
                base,
                phi_tilde,
                arith_capacity,
                needs_ortho,
            })
        }
        2 => OptimizerState::Sgd,
        3 => {
            let (beta, epsilon, capacity) = (r.f64()?, r.f64()?, r.f64()?);
            let cache = dims
                .windows(2)
                .map(|p| r.array2(p[0], p[1]))
                .collect::<Result<Vec<_>>>()?;
            let mut affine_cache = Vec::new();
            for &d in &dims[1..dims.len() - 1] {
                affine_cache.push(match r.u8()? {
                    0 => None,
                    1 => Some((r.array1(d)?, r.array1(d)?)),
                    _ => return Err(r.err("bad affine cache flag")),
                });
            }
            OptimizerState::RmsProp(RmsPropState {
                beta,
                epsilon,
                cache,
                affine_cache,
                capacity,
            })
        }
        _ => return Err(r.err("unknown optimizer tag")),
    };
    state.check(params).map_err(|e| r.err(&e.to_string()))?;
    Ok(state)
}

fn write_snapshot(w: &mut Writer, s: &Snapshot) {
    w.u64(s.epoch);
    w.f64(s.valid_err);
    w.f64(s.valid_ce);
    write_params(w, &s.params);
    write_optimizer(w, &s.optimizer);
    w.json(&s.ledger);
}

fn read_snapshot(r: &mut Reader, config: &ModelConfig) -> Result<Snapshot> {
    let epoch = r.u64()?;
    let (valid_err, valid_ce) = (r.f64()?, r.f64()?);
    let params = read_params(r, config)?;
    let optimizer = read_optimizer(r, &params)?;
    let ledger: UnitLedger = r.json()?;
    ledger.check(&params).map_err(|e| r.err(&e.to_string()))?;
    Ok(Snapshot {
        params,
        optimizer,
        ledger,
        epoch,
        valid_err,
        valid_ce,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    // Write-then-rename so that an interrupted save never leaves a torn file behind.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

impl Trainer {
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.bytes(&config_hash(&self.config));
        w.u64(self.epoch);
        w.u64(self.step);
        w.bytes(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        w.bytes(&self.rng.get_word_pos().to_le_bytes());
        write_model_config(&mut w, &self.model);
        w.json(&self.config);
        w.json(&self.schedule);
        write_snapshot(&mut w, &self.current);
        write_snapshot(&mut w, &self.best);
        w.json(&self.log);
        w.finish()
    }

    /// Restores a trainer from checkpoint bytes. The checkpoint must have been written under
    /// `expected` (the resolved configuration of the run being resumed).
    pub fn from_checkpoint_bytes(data: &[u8], expected: &ResolvedConfig, path: &Path) -> Result<Self> {
        let mut r = Reader::open(data, CHECKPOINT_MAGIC, path)?;
        let hash = r.take(32)?;
        if hash != config_hash(expected) {
            return Err(Error::Checkpoint {
                path: path.into(),
                message: "configuration hash differs from the current configuration".into(),
            });
        }
        let epoch = r.u64()?;
        let step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        let model = read_model_config(&mut r)?;
        let config: ResolvedConfig = r.json()?;
        let schedule: Schedule = r.json()?;
        let current = read_snapshot(&mut r, &model)?;
        let best = read_snapshot(&mut r, &model)?;
        let log: MetricsLog = r.json()?;
        r.done()?;
        Ok(Trainer::from_parts(
            config, model, current, best, schedule, epoch, step, rng, log,
        ))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_file(path, &self.checkpoint_bytes())
    }

    pub fn restore_checkpoint(path: &Path, expected: &ResolvedConfig) -> Result<Self> {
        Self::from_checkpoint_bytes(&read_file(path)?, expected, path)
    }
}

/// A trained network without training state.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub config: ModelConfig,
    pub params: NetworkParams,
    /// Feature scaling fitted on the training data, to be applied to new inputs.
    pub scaling: Option<FeatureScaling>,
}

impl SavedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        write_model_config(&mut w, &self.config);
        write_params(&mut w, &self.params);
        match &self.scaling {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.f64s(&s.mean);
                w.f64s(&s.std);
            }
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::open(data, MODEL_MAGIC, path)?;
        let config = read_model_config(&mut r)?;
        let params = read_params(&mut r, &config)?;
        let d = config.input_dim;
        let scaling = match r.u8()? {
            0 => None,
            1 => Some(FeatureScaling {
                mean: r.array1(d)?.to_vec(),
                std: r.array1(d)?.to_vec(),
            }),
            _ => return Err(r.err("bad scaling flag")),
        };
        r.done()?;
        Ok(SavedModel {
            config,
            params,
            scaling,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}
