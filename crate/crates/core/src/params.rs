//! Named parameter storage shared by the adapter and the transformer.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::container::NamedTensor;
use crate::error::{MfmError, Result};
use crate::tape::{Tape, Var};

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with standard deviation `1/sqrt(fan_in)`.
    FanIn(usize),
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Matrix view used on the tape: leading dims collapsed into rows.
    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            dims => {
                let cols = *dims.last().unwrap();
                (self.data.len() / cols, cols)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Parameters placed on a tape, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn(fan_in) => {
                let std = 1.0 / (fan_in as f64).sqrt();
                (0..n)
                    .map(|_| std * normal(&mut *rng))
                    .collect()
            }
            Init::Normal(std) => (0..n)
                .map(|_| std * normal(&mut *rng))
                .collect(),
        };
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            data,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    /// Mutable parameter buffers in registration order.
    pub fn data_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.params.iter_mut().map(|p| &mut p.data)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// Parameter count over names starting with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(Param::numel)
            .sum()
    }

    /// Places every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let (r, c) = p.matrix_shape();
                tape.leaf(r, c, p.data.clone())
            })
            .collect();
        Bound { vars }
    }

    /// Adds `N(0, std²)` noise to every parameter; used to leave the
    /// zero-initialised fixed point in gradient tests.
    pub fn perturb(&mut self, std: f64, rng: &mut impl Rng) {
        for p in &mut self.params {
            for v in &mut p.data {
                *v += std * normal(&mut *rng);
            }
        }
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.clone(),
            })
            .collect()
    }

    /// Overwrites values from checkpoint entries; names and shapes must match exactly.
    pub fn load_named(&mut self, entries: &[NamedTensor]) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(MfmError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                entries.len(),
                self.params.len()
            )));
        }
        for e in entries {
            let id = self
                .id(&e.name)
                .ok_or_else(|| MfmError::Config(format!("unexpected tensor {}", e.name)))?;
            let p = &mut self.params[id.0];
            if p.shape != e.shape {
                return Err(MfmError::shape(
                    format!("{} {:?}", p.name, p.shape),
                    format!("{:?}", e.shape),
                ));
            }
            p.data.clone_from(&e.data);
        }
        Ok(())
    }
}
