//! Named flat parameter arrays with shapes; the single source of truth for
//! all network weights. Serialization round-trips bit-exactly.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    entries: BTreeMap<String, Tensor>,
    /// Bumped on every mutation; embedding caches key on this.
    version: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(
            !self.entries.contains_key(name),
            "duplicate parameter {name}"
        );
        self.entries.insert(name.to_string(), tensor);
        self.version += 1;
    }

    /// Glorot-uniform weight matrix (rows x cols = out x in), zero bias.
    pub fn register_linear(&mut self, rng: &mut ChaCha8Rng, name: &str, in_dim: usize, out_dim: usize) {
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-s..=s))
            .collect();
        self.insert(
            &format!("{name}.w"),
            Tensor {
                shape: vec![out_dim, in_dim],
                data,
            },
        );
        self.insert(&format!("{name}.b"), Tensor::zeros(vec![out_dim]));
    }

    /// Conv kernel (f_out x k x f_in) with Glorot fan counts over the receptive field.
    pub fn register_conv(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: &str,
        f_in: usize,
        f_out: usize,
        k: usize,
        bias: bool,
    ) {
        let fan_in = f_in * k;
        let s = (6.0 / (fan_in + f_out) as f64).sqrt();
        let data: Vec<f64> = (0..f_out * k * f_in)
            .map(|_| rng.gen_range(-s..=s))
            .collect();
        self.insert(
            &format!("{name}.w"),
            Tensor {
                shape: vec![f_out, k, f_in],
                data,
            },
        );
        if bias {
            self.insert(&format!("{name}.b"), Tensor::zeros(vec![f_out]));
        }
    }

    /// In-place update used by optimizers.
    pub fn apply<F: FnMut(&str, &mut [f64])>(&mut self, mut f: F) {
        for (name, tensor) in self.entries.iter_mut() {
            f(name, &mut tensor.data);
        }
        self.version += 1;
    }

    pub fn set(&mut self, name: &str, data: Vec<f64>) {
        let t = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(t.data.len(), data.len());
        t.data = data;
        self.version += 1;
    }

    pub fn zero_all(&mut self) {
        self.apply(|_, data| data.iter_mut().for_each(|x| *x = 0.0));
    }

    pub fn total_len(&self) -> usize {
        self.entries.values().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .values()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn registration_shapes_and_init_bounds() {
        let mut rng = stream(1, "init");
        let mut store = ParameterStore::new();
        store.register_linear(&mut rng, "enc", 8, 4);
        let w = store.get("enc.w");
        assert_eq!(w.shape, vec![4, 8]);
        let s = (6.0 / 12.0f64).sqrt();
        assert!(w.data.iter().all(|x| x.abs() <= s));
        assert!(store.get("enc.b").data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn json_roundtrip_bit_exact() {
        let mut rng = stream(2, "init");
        let mut store = ParameterStore::new();
        store.register_linear(&mut rng, "a", 5, 3);
        store.register_conv(&mut rng, "c", 4, 6, 3, true);
        let text = serde_json::to_string(&store).unwrap();
        let back: ParameterStore = serde_json::from_str(&text).unwrap();
        assert_eq!(store, back);
    }

    #[test]
    fn version_bumps_on_mutation() {
        let mut rng = stream(3, "init");
        let mut store = ParameterStore::new();
        let v0 = store.version();
        store.register_linear(&mut rng, "a", 2, 2);
        assert!(store.version() > v0);
        let v1 = store.version();
        store.apply(|_, d| d.iter_mut().for_each(|x| *x += 1.0));
        assert!(store.version() > v1);
    }
}
