//! Binary checkpoint format ("LACK"): model config, named parameter tensors,
//! and optional optimizer state, all little-endian. Payloads are stored as
//! f64 so that save/load round trips are bit-exact and a resumed training run
//! continues on identical numbers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::trainer::OptimizerState;

use super::{ModelError, ModelParams, Tensor, TransformerConfig};

pub const MAGIC: &[u8; 4] = b"LACK";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 2;

/// A serializable training snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TransformerConfig,
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(config: TransformerConfig, params: ModelParams) -> Self {
        Checkpoint { config, params, optimizer: None }
    }

    pub fn with_optimizer(mut self, optimizer: OptimizerState) -> Self {
        self.optimizer = Some(optimizer);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());

        let c = &self.config;
        for v in [c.n_layers, c.n_heads, c.d_model, c.d_ff, c.vocab_size, c.max_seq_len] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(c.tie_embeddings as u8);

        let named = self.params.named();
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, tensor) in named {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
            for &dim in &tensor.shape {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            out.push(DTYPE_F64);
            for &v in &tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }

        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                out.extend_from_slice(&(opt.m.len() as u64).to_le_bytes());
                for &v in &opt.m {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for &v in &opt.v {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Format("bad magic"));
        }
        if r.u32()? != VERSION {
            return Err(ModelError::Format("unsupported version"));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u64()? as usize;
        }
        let config = TransformerConfig {
            n_layers: dims[0],
            n_heads: dims[1],
            d_model: dims[2],
            d_ff: dims[3],
            vocab_size: dims[4],
            max_seq_len: dims[5],
            tie_embeddings: match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(ModelError::Format("bad tie flag")),
            },
        };
        config.validate()?;

        let n_tensors = r.u32()? as usize;
        let mut params = ModelParams::zeros(&config);
        let expected = params.named().len();
        if n_tensors != expected {
            return Err(ModelError::Format("tensor count mismatch"));
        }
        let mut loaded: Vec<(String, Tensor)> = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| ModelError::Format("tensor name is not utf-8"))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            if r.u8()? != DTYPE_F64 {
                return Err(ModelError::Format("unsupported dtype"));
            }
            let n: usize = shape.iter().product();
            let mut data = vec![0.0; n];
            for v in &mut data {
                *v = r.f64()?;
            }
            loaded.push((name, Tensor { shape, data }));
        }
        for ((name, slot), (got_name, got)) in params.named_mut().into_iter().zip(loaded) {
            if name != got_name {
                return Err(ModelError::Format("unexpected tensor name"));
            }
            if slot.shape != got.shape {
                return Err(ModelError::ShapeMismatch("checkpoint tensor shape"));
            }
            slot.data = got.data;
        }

        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let n = r.u64()? as usize;
                if n != params.len() {
                    return Err(ModelError::Format("optimizer state length mismatch"));
                }
                let mut m = vec![0.0; n];
                for v in &mut m {
                    *v = r.f64()?;
                }
                let mut v2 = vec![0.0; n];
                for v in &mut v2 {
                    *v = r.f64()?;
                }
                Some(OptimizerState { step, m, v: v2 })
            }
            _ => return Err(ModelError::Format("bad optimizer flag")),
        };

        if r.pos != bytes.len() {
            return Err(ModelError::Format("trailing bytes"));
        }
        Ok(Checkpoint { config, params, optimizer })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Format("unexpected end of data"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
