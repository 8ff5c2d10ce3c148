use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Index of a named tensor inside [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    Kaiming { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `false` for batch-norm running statistics.
    pub trainable: bool,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Collects parameter declarations while the graph is assembled.
#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    pub specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: String, shape: Vec<usize>, trainable: bool, init: Init) -> ParamId {
        debug_assert!(self.specs.iter().all(|s| s.name != name), "duplicate {name}");
        self.specs.push(ParamSpec {
            name,
            shape,
            trainable,
            init,
        });
        ParamId(self.specs.len() - 1)
    }
}

/// All tensors of a network, trainable weights and batch-norm buffers alike,
/// in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    specs: Vec<ParamSpec>,
    values: Vec<Vec<f64>>,
}

impl ModelParams {
    pub(crate) fn initialize<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Self {
        let values = specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => vec![0.0; s.len()],
                Init::Ones => vec![1.0; s.len()],
                Init::Kaiming { fan_in } => {
                    let std = (2.0 / fan_in.max(1) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    (0..s.len()).map(|_| normal.sample(rng)).collect()
                }
            })
            .collect();
        ModelParams {
            specs: specs.to_vec(),
            values,
        }
    }

    pub(crate) fn from_parts(specs: Vec<ParamSpec>, values: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(specs.len(), values.len());
        ModelParams { specs, values }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.id(name).map(|id| self.values[id.0].as_mut_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamSpec, &[f64])> {
        self.specs
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (s, v))| (ParamId(i), s, v.as_slice()))
    }


    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.specs
            .iter()
            .filter(|s| s.trainable)
            .map(ParamSpec::len)
            .sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            values: self.specs.iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    values: Vec<Vec<f64>>,
}

impl Grads {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    /// Two distinct buffers at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a.0, b.0);
        if a.0 < b.0 {
            let (lo, hi) = self.values.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.values.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.iter().map(Vec::as_slice)
    }

    pub fn scale(&mut self, s: f64) {
        self.values
            .iter_mut()
            .flatten()
            .for_each(|v| *v *= s);
    }
}
