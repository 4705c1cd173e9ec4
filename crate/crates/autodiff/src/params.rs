//! Named parameter collections and the JSON checkpoint format.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backward::Gradients;
use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Entry {
    value: Arc<Tensor>,
    trainable: bool,
}

/// Ordered set of named tensors. Trainable entries are optimized; the rest
/// are buffers such as batch-norm running statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Entry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(
            name.into(),
            Entry {
                value: Arc::new(value),
                trainable: true,
            },
        );
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(
            name.into(),
            Entry {
                value: Arc::new(value),
                trainable: false,
            },
        );
    }

    /// Marks an existing entry as (non-)trainable.
    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| AutodiffError::MissingTensor(name.to_string()))?;
        e.trainable = trainable;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| e.value.as_ref())
            .ok_or_else(|| AutodiffError::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Replaces the value of an existing entry, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| AutodiffError::MissingTensor(name.to_string()))?;
        if e.value.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set",
                lhs: e.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        e.value = Arc::new(value);
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| Arc::make_mut(&mut e.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|e| e.value.is_finite())
    }

    /// Records every entry on `tape`. Trainable entries become gradient
    /// leaves when `grad` is set.
    pub fn bind(&self, tape: &Tape, grad: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, e)| {
                let v = tape.shared(Arc::clone(&e.value), grad && e.trainable);
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn to_checkpoint(&self, arch: Value) -> Checkpoint {
        Checkpoint {
            arch,
            tensors: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        TensorRecord {
                            shape: e.value.shape().to_vec(),
                            data: e.value.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Loads tensor values from `ckpt` into an existing layout. Every entry of
    /// `self` must be present with a matching shape.
    pub fn load_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (name, e) in self.entries.iter_mut() {
            let rec = ckpt
                .tensors
                .get(name)
                .ok_or_else(|| AutodiffError::MissingTensor(name.clone()))?;
            let t = Tensor::new(rec.shape.clone(), rec.data.clone())?;
            if t.shape() != e.value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "load",
                    lhs: e.value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            e.value = Arc::new(t);
        }
        Ok(())
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Replaces the handle for `name`, e.g. to differentiate with respect to
    /// a substitute leaf.
    pub fn with_var(mut self, name: &str, v: Var) -> Self {
        self.vars.insert(name.to_string(), v);
        self
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::MissingTensor(name.to_string()))
    }

    /// Gradients of every bound trainable entry, zero when unreachable.
    pub fn grads(&self, params: &ParamSet, g: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(k, _)| params.is_trainable(k))
            .map(|(k, &v)| (k.clone(), g.get_or_zero(v)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: Value,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        for (name, rec) in &ckpt.tensors {
            if rec.shape.iter().product::<usize>() != rec.data.len() {
                return Err(AutodiffError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?} but {} values",
                    rec.shape,
                    rec.data.len()
                )));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![2], vec![0.1, 1.0 / 3.0]).unwrap());
        p.insert_buffer("running_mean", Tensor::new(vec![1], vec![std::f64::consts::PI]).unwrap());
        let ckpt = p.to_checkpoint(serde_json::json!({"d": 2}));
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        let mut q = p.clone();
        q.set("w", Tensor::zeros(&[2])).unwrap();
        q.load_from(&back).unwrap();
        assert_eq!(q.get("w").unwrap(), p.get("w").unwrap());
        assert!(!q.is_trainable("running_mean"));
    }

    #[test]
    fn load_rejects_shape_change() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[3]));
        let mut other = ParamSet::new();
        other.insert("w", Tensor::zeros(&[4]));
        let ckpt = other.to_checkpoint(Value::Null);
        assert!(p.load_from(&ckpt).is_err());
    }

    #[test]
    fn bad_record_is_reported() {
        let text = r#"{"arch":{},"tensors":{"w":{"shape":[2],"data":[1.0]}}}"#;
        let err = Checkpoint::from_json(text).unwrap_err().to_string();
        assert!(err.contains("`w`"), "{err}");
    }
}
