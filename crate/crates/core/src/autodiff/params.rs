use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tape, Tensor, Var};

pub const PARAMS_VERSION: &str = "physio-kalman-params-v1";

/// Gradients keyed by parameter path.
pub type GradMap = BTreeMap<String, Vec<f64>>;

/// Named parameter tensors. Paths are dotted (`vo2.head_q.l0.weight`) and
/// iterate in sorted order, which keeps optimizer state and serialization
/// deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    rng_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct StoredParam {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredParams {
    version: String,
    rng_seed: u64,
    params: BTreeMap<String, StoredParam>,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Inserts a parameter, replacing any previous tensor at `path`.
    pub fn insert(&mut self, path: impl Into<String>, t: Tensor) {
        self.params.insert(path.into(), t);
    }

    /// Inserts a tensor drawn uniformly from `±bound`.
    pub fn insert_uniform(
        &mut self,
        path: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.insert(
            path,
            Tensor::new(shape.to_vec(), values).expect("uniform init shape"),
        );
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.params.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Sets every value to zero.
    pub fn zero_all(&mut self) {
        for t in self.params.values_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Places every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), tape.param(t.clone())))
            .collect();
        ParamVars { vars }
    }

    pub fn to_json(&self) -> Result<String, AutodiffError> {
        let stored = StoredParams {
            version: PARAMS_VERSION.to_string(),
            rng_seed: self.rng_seed,
            params: self
                .params
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        StoredParam {
                            shape: t.shape().to_vec(),
                            values: t.values().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        Ok(serde_json::to_string(&stored)?)
    }

    pub fn from_json(s: &str) -> Result<Self, AutodiffError> {
        let stored: StoredParams = serde_json::from_str(s)?;
        Self::from_stored(stored)
    }

    fn from_stored(stored: StoredParams) -> Result<Self, AutodiffError> {
        if stored.version != PARAMS_VERSION {
            return Err(AutodiffError::Version {
                found: stored.version,
                expected: PARAMS_VERSION,
            });
        }
        let mut params = BTreeMap::new();
        for (k, p) in stored.params {
            params.insert(k, Tensor::new(p.shape, p.values)?);
        }
        Ok(Self {
            params,
            rng_seed: stored.rng_seed,
        })
    }

    /// JSON value form, for embedding in checkpoints.
    pub fn to_value(&self) -> Result<serde_json::Value, AutodiffError> {
        Ok(serde_json::from_str(&self.to_json()?)?)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self, AutodiffError> {
        Self::from_stored(serde_json::from_value(v)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Tape handles for a bound [`ParamStore`].
pub struct ParamVars {
    vars: HashMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, path: &str) -> Result<Var, AutodiffError> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| AutodiffError::MissingParam(path.to_string()))
    }

    /// Collects the gradient of every bound parameter after a backward sweep.
    pub fn grads(&self, tape: &Tape) -> GradMap {
        self.vars
            .iter()
            .map(|(k, v)| {
                let g = tape
                    .grad(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(*v).len()]);
                (k.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(seed in any::<u64>(), scale in -1e12f64..1e12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new(seed);
            store.insert_uniform("a.weight", &[3, 4], 1.0, &mut rng);
            store.insert_uniform("a.bias", &[4], 1e-300, &mut rng);
            store.insert("b", Tensor::from_vec(vec![scale, f64::MIN_POSITIVE, -0.0]));
            let back = ParamStore::from_json(&store.to_json().unwrap()).unwrap();
            for ((ka, ta), (kb, tb)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(ka, kb);
                prop_assert_eq!(ta.shape(), tb.shape());
                for (x, y) in ta.values().iter().zip(tb.values()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            prop_assert_eq!(back.rng_seed(), seed);
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let s = r#"{"version":"other","rng_seed":0,"params":{}}"#;
        assert!(matches!(
            ParamStore::from_json(s),
            Err(AutodiffError::Version { .. })
        ));
    }

    #[test]
    fn missing_param_is_named() {
        let store = ParamStore::new(0);
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        let err = pv.get("enc.l0.weight").unwrap_err();
        assert!(err.to_string().contains("enc.l0.weight"));
    }
}
