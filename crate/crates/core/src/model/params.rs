use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError, Result};
use crate::numerics::{Scalar, Tensor};

const INIT_STD: f64 = 0.02;

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(ModelError::Input(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// FNV-1a over names and raw element bits; cheap equality witness.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in self.iter() {
            eat(name.as_bytes());
            for x in t.data() {
                eat(&x.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Canonical parameter names and shapes for `cfg`, in storage order.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (cfg.d_model, cfg.d_ff);
    let mut out = vec![
        ("wte".to_string(), vec![cfg.vocab_size, d]),
        ("wpe".to_string(), vec![cfg.max_context, d]),
    ];
    for l in 0..cfg.n_layers {
        let p = format!("h{l}");
        out.push((format!("{p}.ln1.g"), vec![d]));
        out.push((format!("{p}.ln1.b"), vec![d]));
        for m in ["q", "k", "v", "o"] {
            out.push((format!("{p}.attn.{m}.w"), vec![d, d]));
            out.push((format!("{p}.attn.{m}.b"), vec![d]));
        }
        out.push((format!("{p}.ln2.g"), vec![d]));
        out.push((format!("{p}.ln2.b"), vec![d]));
        out.push((format!("{p}.mlp.fc.w"), vec![d, f]));
        out.push((format!("{p}.mlp.fc.b"), vec![f]));
        out.push((format!("{p}.mlp.proj.w"), vec![f, d]));
        out.push((format!("{p}.mlp.proj.b"), vec![d]));
    }
    out.push(("ln_f.g".to_string(), vec![d]));
    out.push(("ln_f.b".to_string(), vec![d]));
    if !cfg.tie_output_head {
        out.push(("head.w".to_string(), vec![d, cfg.vocab_size]));
    }
    out
}

/// Weights N(0, 0.02²), biases zero, layer-norm gains one.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
    let mut store = ParameterStore::new();
    for (name, shape) in layout(cfg) {
        let t = if name.ends_with(".g") {
            Tensor::full(&shape, 1.0)
        } else if name.ends_with(".b") {
            Tensor::zeros(&shape)
        } else {
            Tensor::from_fn(&shape, |_| normal.sample(&mut rng) as f32)
        };
        store.insert(name, t)?;
    }
    Ok(store)
}
