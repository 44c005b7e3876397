//! Binary checkpoints: `RFRLCKPT`, u16 LE version, u32 LE length plus the
//! config as `key = value` text, u32 LE entry count, then entries of u32 LE
//! name length, UTF-8 name and a portable tensor.
//!
//! Parameters keep their model names; optimizer and schedule state live under
//! `opt.` and the epoch under `meta.epoch`. Scalars are stored as f64
//! tensors, so every field round-trips bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use rfrl_core::model::RfrlModel;
use rfrl_core::optim::{AdamState, PlateauState};
use rfrl_core::train::Snapshot;
use rfrl_core::Tensor;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::tensor_io::{decode_tensor, encode_tensor, AnyTensor};

pub const MAGIC: &[u8; 8] = b"RFRLCKPT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub epoch: usize,
    pub model: RfrlModel<f32>,
    pub adam: AdamState<f32>,
    pub plateau: PlateauState,
}

impl Checkpoint {
    pub fn from_snapshot(config: &ExperimentConfig, snap: &Snapshot, plateau: PlateauState) -> Self {
        Checkpoint {
            config: config.clone(),
            epoch: snap.epoch,
            model: snap.model.clone(),
            adam: snap.adam.clone(),
            plateau,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_bytes(&mut out, self.config.to_kv_string().as_bytes());

        let params = self.model.params();
        let a = &self.adam;
        let p = &self.plateau;
        let scalars = [
            ("meta.epoch", self.epoch as f64),
            ("opt.t", a.t as f64),
            ("opt.lr", a.lr),
            ("opt.beta1", a.beta1),
            ("opt.beta2", a.beta2),
            ("opt.eps", a.eps),
            ("opt.plateau.best_val_loss", p.best_val_loss),
            ("opt.plateau.epochs_since_improve", p.epochs_since_improve as f64),
            ("opt.plateau.patience", p.patience as f64),
            ("opt.plateau.factor", p.factor),
            ("opt.plateau.min_lr", p.min_lr),
        ];
        let count = params.len() * 3 + scalars.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        let mut entry = |name: &str, t: &Tensor<f32>| {
            put_bytes(&mut out, name.as_bytes());
            encode_tensor(t, &mut out);
        };
        for (name, t) in params.iter() {
            entry(name, t);
        }
        for (name, m) in params.names().iter().zip(&a.m) {
            entry(&format!("opt.m.{}", name), m);
        }
        for (name, v) in params.names().iter().zip(&a.v) {
            entry(&format!("opt.v.{}", name), v);
        }
        for (name, value) in scalars {
            put_bytes(&mut out, name.as_bytes());
            encode_tensor(&Tensor::<f64>::scalar(value), &mut out);
        }
        out
    }

    /// Parses bytes produced by [`Checkpoint::encode`]; `path` labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |msg: String| Error::format(path, msg);
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fail("file too short for checkpoint magic".into()))?;
        if &magic != MAGIC {
            return Err(fail("not a checkpoint (bad magic)".into()));
        }
        let mut ver = [0u8; 2];
        r.read_exact(&mut ver).map_err(|_| fail("missing format version".into()))?;
        let version = u16::from_le_bytes(ver);
        if version != VERSION {
            return Err(fail(format!("unsupported checkpoint version {}", version)));
        }
        let text = String::from_utf8(get_bytes(&mut r, path, "config block")?)
            .map_err(|_| fail("config block is not UTF-8".into()))?;
        let config = ExperimentConfig::parse(&text).map_err(|e| fail(format!("embedded config: {}", e)))?;

        let count = get_u32(&mut r, path, "entry count")? as usize;
        let mut entries = BTreeMap::new();
        for i in 0..count {
            let name = String::from_utf8(get_bytes(&mut r, path, "entry name")?)
                .map_err(|_| fail(format!("entry {} name is not UTF-8", i)))?;
            let t = decode_tensor(&mut r, path)?;
            if entries.insert(name.clone(), t).is_some() {
                return Err(fail(format!("duplicate entry '{}'", name)));
            }
        }
        if !r.is_empty() {
            return Err(fail(format!("{} trailing bytes", r.len())));
        }

        let mut take_f32 = |name: &str| -> Result<Tensor<f32>> {
            entries
                .remove(name)
                .ok_or_else(|| fail(format!("missing entry '{}'", name)))?
                .into_dtype::<f32>()
                .ok_or_else(|| fail(format!("entry '{}' is not f32", name)))
        };
        let mut model = RfrlModel::<f32>::build(&config.model, 0)?;
        let names = model.params().names().to_vec();
        let params = names.iter().map(|n| take_f32(n)).collect::<Result<Vec<_>>>()?;
        let m = names.iter().map(|n| take_f32(&format!("opt.m.{}", n))).collect::<Result<Vec<_>>>()?;
        let v = names.iter().map(|n| take_f32(&format!("opt.v.{}", n))).collect::<Result<Vec<_>>>()?;
        model.params_mut().assign(params).map_err(|e| fail(e.to_string()))?;
        for (name, (m, v)) in names.iter().zip(m.iter().zip(&v)) {
            let want = model.params().get(model.params().find(name).expect("own name")).shape();
            if m.shape() != want || v.shape() != want {
                return Err(fail(format!("optimizer moments for '{}' have the wrong shape", name)));
            }
        }
        let mut scalar = |name: &str| -> Result<f64> {
            match entries.remove(name) {
                Some(AnyTensor::F64(t)) if t.rank() == 0 => Ok(t.data()[0]),
                Some(_) => Err(fail(format!("entry '{}' is not an f64 scalar", name))),
                None => Err(fail(format!("missing entry '{}'", name))),
            }
        };
        let count_field = |v: f64, name: &str| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
                Ok(v as usize)
            } else {
                Err(fail(format!("entry '{}' is not a count", name)))
            }
        };
        let epoch = count_field(scalar("meta.epoch")?, "meta.epoch")?;
        let adam = AdamState {
            t: count_field(scalar("opt.t")?, "opt.t")? as u64,
            lr: scalar("opt.lr")?,
            beta1: scalar("opt.beta1")?,
            beta2: scalar("opt.beta2")?,
            eps: scalar("opt.eps")?,
            m,
            v,
        };
        let plateau = PlateauState {
            best_val_loss: scalar("opt.plateau.best_val_loss")?,
            epochs_since_improve: count_field(
                scalar("opt.plateau.epochs_since_improve")?,
                "opt.plateau.epochs_since_improve",
            )?,
            patience: count_field(scalar("opt.plateau.patience")?, "opt.plateau.patience")?,
            factor: scalar("opt.plateau.factor")?,
            min_lr: scalar("opt.plateau.min_lr")?,
        };
        if let Some(name) = entries.keys().next() {
            return Err(fail(format!("unexpected entry '{}'", name)));
        }
        Ok(Checkpoint { config, epoch, model, adam, plateau })
    }

    /// Writes atomically: a sibling temporary file is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn get_u32(r: &mut &[u8], path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format(path, format!("truncated {}", what)))?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes(r: &mut &[u8], path: &Path, what: &str) -> Result<Vec<u8>> {
    let n = get_u32(r, path, what)? as usize;
    if n > r.len() {
        return Err(Error::format(path, format!("truncated {}", what)));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head.to_vec())
}
