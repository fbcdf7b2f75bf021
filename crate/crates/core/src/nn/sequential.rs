use std::io::{Read, Write};

use super::{Layer, Param, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// An ordered stack of layers.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

/// Copy of every parameter and buffer, in stack order.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot(pub Vec<Tensor>);

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RGWT";
pub const WEIGHTS_VERSION: u16 = 1;

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Eval => self.infer(input),
            Mode::Train => {
                let mut x = input.clone();
                for layer in &mut self.layers {
                    x = layer.forward(&x)?;
                }
                Ok(x)
            }
        }
    }

    /// Eval-mode pass; never mutates the model.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Output shape after every layer, starting with `input`.
    pub fn shape_ladder(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![input.to_vec()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Number of trainable scalars; running statistics are not counted.
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.params().into_iter().map(|p| p.value.clone()));
            out.extend(layer.buffers().into_iter().cloned());
        }
        Snapshot(out)
    }

    pub fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let shapes: Vec<&[usize]> = self
            .layers
            .iter()
            .flat_map(|l| {
                l.params()
                    .into_iter()
                    .map(|p| p.value.shape())
                    .chain(l.buffers().into_iter().map(Tensor::shape))
                    .collect::<Vec<_>>()
            })
            .collect();
        if shapes.len() != snapshot.0.len() {
            return Err(Error::Shape(format!(
                "snapshot holds {} tensors, model has {}",
                snapshot.0.len(),
                shapes.len()
            )));
        }
        if let Some((want, got)) = shapes
            .iter()
            .zip(&snapshot.0)
            .find(|(want, got)| **want != got.shape())
        {
            return Err(Error::Shape(format!(
                "snapshot tensor {:?} does not fit {want:?}",
                got.shape()
            )));
        }
        let mut source = snapshot.0.iter();
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.value = source.next().expect("counted above").clone();
            }
            for b in layer.buffers_mut() {
                *b = source.next().expect("counted above").clone();
            }
        }
        Ok(())
    }

    /// `RGWT` weight file: magic, version u16, layer count u32, then per
    /// layer its name, tensor count u32 and every tensor as rank u32, dims
    /// u64 each and raw f64 values. Parameters come before running
    /// statistics. Little-endian.
    pub fn write_weights<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            let name = layer.kind().as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            let tensors: Vec<&Tensor> = layer
                .params()
                .into_iter()
                .map(|p| &p.value)
                .chain(layer.buffers())
                .collect();
            w.write_all(&(tensors.len() as u32).to_le_bytes())?;
            for t in tensors {
                w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
                for &d in t.shape() {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                let mut buf = Vec::with_capacity(t.len() * 8);
                for v in t.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    /// Loads an `RGWT` file into this (already built) architecture. Layer
    /// names and tensor shapes must match exactly.
    pub fn read_weights<R: Read>(&mut self, r: &mut R) -> Result<()> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::Format("missing RGWT magic".into()));
        }
        let version = read_u16(r)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!("unsupported weight version {version}")));
        }
        let count = read_u32(r)? as usize;
        if count != self.layers.len() {
            return Err(Error::Format(format!(
                "weight file has {count} layers, model has {}",
                self.layers.len()
            )));
        }
        let mut loaded = Vec::new();
        for layer in &self.layers {
            let name_len = read_u16(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            if name != layer.kind().as_bytes() {
                return Err(Error::Format(format!(
                    "expected layer {}, found {}",
                    layer.kind(),
                    String::from_utf8_lossy(&name)
                )));
            }
            let n = read_u32(r)? as usize;
            let expected = layer.params().len() + layer.buffers().len();
            if n != expected {
                return Err(Error::Format(format!(
                    "layer {} stores {n} tensors, expected {expected}",
                    layer.kind()
                )));
            }
            for _ in 0..n {
                let rank = read_u32(r)? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(read_u64(r)? as usize);
                }
                let len: usize = shape.iter().product();
                let mut raw = vec![0u8; len * 8];
                r.read_exact(&mut raw)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                loaded.push(Tensor::new(shape, data)?);
            }
        }
        self.restore(&Snapshot(loaded))
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
