use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    BandProjection,
    TfBlocks,
    QueryProjection,
    Film,
    Decoder,
    PretrainHead,
}

impl ParamGroup {
    pub const ENCODER: [ParamGroup; 2] = [ParamGroup::BandProjection, ParamGroup::TfBlocks];

    pub fn is_encoder(self) -> bool {
        Self::ENCODER.contains(&self)
    }
}

#[derive(Debug, Clone)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
    pub group: ParamGroup,
    pub trainable: bool,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.var.as_tensor().elem_count()
    }
}

/// Named, ordered model parameters tagged with a group and a trainability flag.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        group: ParamGroup,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Uniform(bound) => (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
        };
        // Values are drawn in f64 and rounded once, so f32 and f64 models built
        // from one seed agree to f32 precision.
        let tensor = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&tensor)?;
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            var: var.clone(),
            group,
            trainable: true,
        });
        Ok(var.as_tensor().clone())
    }

    pub fn set_param_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named `{name}`")))?;
        self.params[i].trainable = trainable;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.param(name).map(|p| p.var.as_tensor())
    }

    pub fn param(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn count(&self, only_trainable: bool) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable || !only_trainable)
            .map(Param::numel)
            .sum()
    }

    pub fn count_group(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(Param::numel)
            .sum()
    }

    pub fn set_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.trainable = trainable;
        }
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.trainable)
    }

    /// Overwrite a parameter's values in place, keeping its identity for autograd.
    pub fn assign(&self, name: &str, values: &Tensor) -> Result<()> {
        let param = self.param(name)?;
        if param.var.as_tensor().dims() != values.dims() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                param.var.as_tensor().dims(),
                values.dims()
            )));
        }
        param.var.set(&values.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Redraw every parameter uniformly in `[-scale, scale]`.
    pub fn randomize(&self, scale: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        for p in &self.params {
            let t = p.var.as_tensor();
            let values: Vec<f64> = (0..t.elem_count())
                .map(|_| rng.random_range(-scale..=scale))
                .collect();
            p.var
                .set(&Tensor::from_vec(values, t.shape(), &self.device)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Parameter values as f32, row-major.
    pub fn values_f32(&self, name: &str) -> Result<Vec<f32>> {
        Ok(self
            .get(name)?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?)
    }

    /// SHA-256 over the names, shapes and exact values of every parameter in `groups`.
    pub fn digest(&self, groups: &[ParamGroup]) -> Result<String> {
        let mut hasher = Sha256::new();
        for p in self.params.iter().filter(|p| groups.contains(&p.group)) {
            hasher.update(p.name.as_bytes());
            for d in p.var.as_tensor().dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let t = p.var.as_tensor().flatten_all()?;
            match self.dtype {
                DType::F64 => t
                    .to_vec1::<f64>()?
                    .iter()
                    .for_each(|v| hasher.update(v.to_le_bytes())),
                _ => t
                    .to_dtype(DType::F32)?
                    .to_vec1::<f32>()?
                    .iter()
                    .for_each(|v| hasher.update(v.to_le_bytes())),
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }
}
