//! Named parameter storage with deterministic ordering.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// All trainable parameters of one model component, in insertion order.
/// Names are dotted paths (`encoder.layer0.attn.wq`).
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Register a parameter; returns its id. Names must be unique.
    pub fn add(&mut self, name: &str, value: Array2<f64>) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.values.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: usize) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Array2<f64> {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Copy values from another store with identical layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Input("parameter layout mismatch".into()));
        }
        self.values.clone_from(&other.values);
        Ok(())
    }
}

/// Deterministic initializer handed around during model construction.
pub struct Init {
    rng: ChaCha20Rng,
}

impl Init {
    pub fn new(seed: u64) -> Init {
        Init {
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Scaled uniform init in `[-limit, limit]` with `limit = sqrt(6/(fan_in+fan_out))`.
    pub fn linear(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| self.rng.gen_range(-limit..limit))
    }

    /// Small-scale init for embedding tables.
    pub fn embedding(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let std = 0.02;
        Array2::from_shape_fn((rows, cols), |_| {
            // Box-Muller keeps us off rand_distr for one distribution.
            let u1: f64 = self.rng.gen_range(1e-12..1.0);
            let u2: f64 = self.rng.gen();
            std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| self.rng.gen_range(lo..hi))
    }

    pub fn zeros(rows: usize, cols: usize) -> Array2<f64> {
        Array2::zeros((rows, cols))
    }

    pub fn ones(rows: usize, cols: usize) -> Array2<f64> {
        Array2::ones((rows, cols))
    }
}
