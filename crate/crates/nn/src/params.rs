use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;

use crate::{NnError, Result, Tensor2};

/// Magic bytes opening every parameter file.
pub const PARAM_FILE_MAGIC: [u8; 8] = *b"SEMSYNCP";
/// Current parameter file layout version.
pub const PARAM_FILE_VERSION: u32 = 1;

/// Handle to one named tensor inside a [`ModelParams`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor2,
    grad: Tensor2,
    m: Tensor2,
    v: Tensor2,
}

/// Flat store of named parameter tensors, each paired with a gradient buffer
/// and Adam moment buffers of identical shape.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    params: Vec<Param>,
    step: u64,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(NnError::DuplicateParam(name));
        }
        let zeros = Array2::zeros(value.raw_dim());
        self.params.push(Param {
            name,
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.params[id.0].grad
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Runs `f(value, grad, m, v)` over every parameter; used by optimizers.
    pub(crate) fn for_each_slot(&mut self, mut f: impl FnMut(&mut Tensor2, &mut Tensor2, &mut Tensor2, &mut Tensor2)) {
        for p in &mut self.params {
            f(&mut p.value, &mut p.grad, &mut p.m, &mut p.v);
        }
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// Writes every parameter value in the versioned binary layout:
    /// magic, version, tensor count, then per tensor (name length, name,
    /// rows, cols), then all values as little-endian `f64` in table order.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&PARAM_FILE_MAGIC)?;
        w.write_all(&PARAM_FILE_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.nrows() as u32).to_le_bytes())?;
            w.write_all(&(p.value.ncols() as u32).to_le_bytes())?;
        }
        for p in &self.params {
            for x in p.value.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a parameter file into a list of named tensors.
    pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor2)>> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != PARAM_FILE_MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != PARAM_FILE_VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| NnError::Format("non-utf8 name".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            table.push((name, rows, cols));
        }
        let mut out = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for (name, rows, cols) in table {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| NnError::Format(e.to_string()))?;
            out.push((name, t));
        }
        Ok(out)
    }

    /// Overwrites values of this store from a parameter file. Every tensor in
    /// the store must be present in the file with the same shape.
    pub fn load_from<R: Read>(&mut self, r: R) -> Result<()> {
        let tensors = Self::read_tensors(r)?;
        for p in &mut self.params {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| NnError::UnknownParam(p.name.clone()))?;
            if t.dim() != p.value.dim() {
                return Err(crate::shape_err(
                    "load",
                    format!("{:?}", p.value.dim()),
                    format!("{:?}", t.dim()),
                ));
            }
            p.value.assign(t);
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Xavier/Glorot uniform initialisation for a `fan_in x fan_out` weight.
pub fn xavier_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor2 {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..=a))
}
