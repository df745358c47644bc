//! Binary checkpoints: model parameters, optional optimizer state, and the
//! configuration text that produced them.
//!
//! Layout (little-endian): magic `HEBAECKP`, `u32` version, `u8` model
//! kind, `u64` latent size, `u64` epoch, length-prefixed config text,
//! `u64` parameter count, then per parameter a length-prefixed name, `u64`
//! rank, `u64` dimensions and the `f64` values. A trailing flag byte
//! announces the Adam step counter and moment buffers.

use std::path::Path;

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::models::{Activation, Autoencoder, DenseLayer, DenseMlp, ModelKind};
use crate::optim::AdamState;

const MAGIC: &[u8; 8] = b"HEBAECKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Autoencoder,
    pub adam: Option<AdamState>,
    pub config: TrainingConfig,
    /// Completed training epochs.
    pub epoch: usize,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.bytes.len(), "checkpoint truncated"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::format(at, format!("implausible length {v}")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.pos, "length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(at, "invalid UTF-8"))
    }
}

fn mlp_from_params(name: &str, params: &[(String, Vec<usize>, Vec<f64>)]) -> Result<DenseMlp> {
    if params.is_empty() || !params.len().is_multiple_of(2) {
        return Err(Error::format(0, format!("`{name}` has an incomplete layer list")));
    }
    let n_layers = params.len() / 2;
    let mut layers = Vec::with_capacity(n_layers);
    for (i, pair) in params.chunks_exact(2).enumerate() {
        let (wn, ws, w) = &pair[0];
        let (bn, bs, b) = &pair[1];
        if *wn != format!("{name}.{i}.weight") || *bn != format!("{name}.{i}.bias") || ws.len() != 2 || bs.len() != 1 || ws[1] != bs[0] {
            return Err(Error::format(0, format!("unexpected parameters `{wn}`, `{bn}`")));
        }
        layers.push(DenseLayer {
            in_dim: ws[0],
            out_dim: ws[1],
            weight: w.clone(),
            bias: b.clone(),
            activation: if i + 1 == n_layers { Activation::Identity } else { Activation::Relu },
        });
    }
    Ok(DenseMlp {
        name: name.to_string(),
        layers,
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.model.kind.code());
        put_u64(&mut out, self.model.latent_dim as u64);
        put_u64(&mut out, self.epoch as u64);
        let cfg = self.config.serialize();
        put_u64(&mut out, cfg.len() as u64);
        out.extend_from_slice(cfg.as_bytes());
        let specs = self.model.param_specs();
        let params = self.model.params();
        put_u64(&mut out, specs.len() as u64);
        for ((name, shape), values) in specs.iter().zip(&params) {
            put_u64(&mut out, name.len() as u64);
            out.extend_from_slice(name.as_bytes());
            put_u64(&mut out, shape.len() as u64);
            shape.iter().for_each(|&d| put_u64(&mut out, d as u64));
            put_f64s(&mut out, values);
        }
        match &self.adam {
            Some(a) => {
                out.push(1);
                put_u64(&mut out, a.t);
                a.m.iter().chain(&a.v).for_each(|buf| put_f64s(&mut out, buf));
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format(0, "not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::format(8, format!("unsupported checkpoint version {version}")));
        }
        let kind = ModelKind::from_code(r.u8()?).ok_or_else(|| Error::format(12, "unknown model kind"))?;
        let k = r.len()?;
        let epoch = r.len()?;
        let cfg_at = r.pos;
        let config = TrainingConfig::parse(&r.string()?)
            .map_err(|e| Error::format(cfg_at, format!("embedded config: {e}")))?;
        let count = r.len()?;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let values = r.f64s(shape.iter().product())?;
            params.push((name, shape, values));
        }
        let split = params.iter().position(|(n, _, _)| n.starts_with("decoder.")).unwrap_or(params.len());
        let model = Autoencoder {
            kind,
            latent_dim: k,
            encoder: mlp_from_params("encoder", &params[..split])?,
            decoder: mlp_from_params("decoder", &params[split..])?,
        };
        if model.decoder.input_dim() != k || model.encoder.output_dim() != k * kind.head_multiplier() {
            return Err(Error::format(0, "network shapes disagree with the latent size"));
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let sizes: Vec<usize> = params.iter().map(|(_, _, v)| v.len()).collect();
                let mut state = AdamState::new(&sizes);
                state.t = t;
                for (buf, &n) in state.m.iter_mut().zip(&sizes) {
                    *buf = r.f64s(n)?;
                }
                for (buf, &n) in state.v.iter_mut().zip(&sizes) {
                    *buf = r.f64s(n)?;
                }
                Some(state)
            }
            other => return Err(Error::format(r.pos - 1, format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            model,
            adam,
            config,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
