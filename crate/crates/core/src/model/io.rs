//! The `AENM` model file.
//!
//! ```text
//! magic     4 bytes  "AENM"
//! version   u16 LE   1
//! config    u32 LE length, then that many bytes of JSON (the Architecture)
//! tensors   in declaration order, each:
//!             ndims u8, dims u32 LE × ndims, values f32 LE row-major
//! ```
//!
//! Declaration order: statement table and condition table (toy encoders
//! only), then per hidden layer weight, bias, gamma, beta, running mean,
//! running variance, then output weight and bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};

use super::bundle::{Architecture, EncoderSlot, ModelBundle};
use crate::embeddings::ToyEncoder;
use crate::error::{AenError, Result};
use crate::rng::fnv1a64;

pub const MODEL_MAGIC: &[u8; 4] = b"AENM";
const VERSION: u16 = 1;

fn tensors(bundle: &ModelBundle) -> Vec<(Vec<usize>, &[f64])> {
    let mut out: Vec<(Vec<usize>, &[f64])> = Vec::new();
    for slot in [&bundle.statement_encoder, &bundle.condition_encoder] {
        if let EncoderSlot::Toy(t) = slot {
            out.push((t.table().shape().to_vec(), t.table().as_slice().expect("contiguous")));
        }
    }
    for (dense, bn) in &bundle.head.hidden {
        out.push((dense.weight.shape().to_vec(), dense.weight.as_slice().expect("contiguous")));
        for v in [&dense.bias, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
            out.push((vec![v.len()], v.as_slice().expect("contiguous")));
        }
    }
    let o = &bundle.head.output;
    out.push((o.weight.shape().to_vec(), o.weight.as_slice().expect("contiguous")));
    out.push((vec![o.bias.len()], o.bias.as_slice().expect("contiguous")));
    out
}

pub fn write_model_to<W: Write>(mut w: W, bundle: &ModelBundle) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&bundle.arch)?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    for (shape, data) in tensors(bundle) {
        w.write_all(&[shape.len() as u8])?;
        for d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_model(path: impl AsRef<Path>, bundle: &ModelBundle) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model_to(&mut w, bundle)?;
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => AenError::format(format!("truncated model file while reading {what}")),
            _ => AenError::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self, expected: &[usize], name: &str) -> Result<ArrayD<f64>> {
        let ndims = self.bytes(1, name)?[0] as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(self.u32(name)? as usize);
        }
        if shape != expected {
            return Err(AenError::format(format!(
                "tensor {name} has shape {shape:?}, architecture expects {expected:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = self.bytes(n * 4, name)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AenError::format(format!("tensor {name} holds non-finite values")));
        }
        ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|e| AenError::format(e.to_string()))
    }

    fn matrix(&mut self, expected: [usize; 2], name: &str) -> Result<Array2<f64>> {
        Ok(self.tensor(&expected, name)?.into_dimensionality().expect("shape checked"))
    }

    fn vector(&mut self, len: usize, name: &str) -> Result<Array1<f64>> {
        Ok(self.tensor(&[len], name)?.into_dimensionality().expect("shape checked"))
    }
}

pub fn read_model_from<R: Read>(r: R) -> Result<ModelBundle> {
    let mut r = Reader { inner: r };
    let magic = r.bytes(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(AenError::format(format!("bad model magic {magic:?}")));
    }
    let v = r.bytes(2, "version")?;
    let version = u16::from_le_bytes([v[0], v[1]]);
    if version != VERSION {
        return Err(AenError::format(format!("unsupported model file version {version}")));
    }
    let len = r.u32("config length")? as usize;
    let config = r.bytes(len, "config")?;
    let arch: Architecture =
        serde_json::from_slice(&config).map_err(|e| AenError::format(format!("bad model config: {e}")))?;
    arch.validate()?;

    // fresh bundle supplies the shapes; every tensor is then overwritten
    let mut bundle = ModelBundle::new(arch)?;
    let dim = bundle.arch.embedding_dim;
    let seeds = [bundle.arch.seed, bundle.arch.seed.wrapping_add(1)];
    for (slot, (seed, name)) in [&mut bundle.statement_encoder, &mut bundle.condition_encoder]
        .into_iter()
        .zip(seeds.into_iter().zip(["statement_encoder.table", "condition_encoder.table"]))
    {
        if let EncoderSlot::Toy(t) = slot {
            let table = r.matrix([t.vocab_size(), dim], name)?;
            *t = ToyEncoder::from_table(seed, table)?;
        }
    }
    for (l, (dense, bn)) in bundle.head.hidden.iter_mut().enumerate() {
        let (o, i) = (dense.output_width(), dense.input_width());
        dense.weight = r.matrix([o, i], &format!("head.hidden{l}.weight"))?;
        dense.bias = r.vector(o, &format!("head.hidden{l}.bias"))?;
        bn.gamma = r.vector(o, &format!("head.hidden{l}.gamma"))?;
        bn.beta = r.vector(o, &format!("head.hidden{l}.beta"))?;
        bn.running_mean = r.vector(o, &format!("head.hidden{l}.running_mean"))?;
        bn.running_var = r.vector(o, &format!("head.hidden{l}.running_var"))?;
        if bn.running_var.iter().any(|v| *v < 0.0) {
            return Err(AenError::format(format!("head.hidden{l}.running_var has negative entries")));
        }
    }
    let i = bundle.head.output.input_width();
    bundle.head.output.weight = r.matrix([2, i], "head.output.weight")?;
    bundle.head.output.bias = r.vector(2, "head.output.bias")?;
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(AenError::format("trailing bytes after the last tensor"));
    }
    Ok(bundle)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    read_model_from(BufReader::new(File::open(path)?))
}

impl ModelBundle {
    /// FNV-1a of the serialized model, so a bundle and its saved copy agree.
    pub fn fingerprint(&self) -> u64 {
        let mut buf = Vec::new();
        write_model_to(&mut buf, self).expect("writing to memory cannot fail");
        fnv1a64(&buf)
    }
}
