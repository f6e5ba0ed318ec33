//! Named parameter tensors with frozen markers.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::io::{cmeb, Archive};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Array2<F>,
    pub frozen: bool,
}

/// An ordered collection of named 2-d tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
}

/// Parameter tensors bound into a [`Graph`] as nodes.
#[derive(Debug, Clone)]
pub struct Bound {
    names: Vec<String>,
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"));
        self.ids[i]
    }

    /// Gradients aligned with the bound parameter order.
    pub fn grads<F: Real>(&self, grads: &Gradients<F>) -> Vec<Option<Array2<F>>> {
        self.ids.iter().map(|&id| grads.get(id).cloned()).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    frozen: bool,
    rows: usize,
    dim: usize,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<F>, frozen: bool) {
        let name = name.into();
        assert!(self.index(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            frozen,
        });
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<F>> {
        self.index(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<F>> {
        self.index(name).map(move |i| &mut self.params[i].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalar entries.
    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Binds every tensor into `g`. Frozen tensors (or all, when
    /// `trainable` is false) enter as constants so no gradient is computed
    /// for them; gradients still flow through to their inputs.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|p| g.input(p.value.clone(), trainable && !p.frozen))
            .collect();
        Bound {
            names: self.params.iter().map(|p| p.name.clone()).collect(),
            ids,
        }
    }

    /// Binds every tensor as a differentiable variable, including frozen ones.
    pub fn bind_all_variables(&self, g: &mut Graph<F>) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|p| g.variable(p.value.clone()))
            .collect();
        Bound {
            names: self.params.iter().map(|p| p.name.clone()).collect(),
            ids,
        }
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.mapv(|v| G::lit(v.as_f64())),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }

    /// SHA-256 over names, frozen flags, shapes and values (as f64 bits).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update([u8::from(p.frozen)]);
            h.update((p.value.nrows() as u64).to_le_bytes());
            h.update((p.value.ncols() as u64).to_le_bytes());
            for v in p.value.iter() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Stores tensors under `prefix/` as CMEB blocks plus a JSON index.
    pub fn write_to_archive(&self, archive: &mut Archive, prefix: &str) -> Result<()> {
        let index: Vec<TensorEntry> = self
            .params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                frozen: p.frozen,
                rows: p.value.nrows(),
                dim: p.value.ncols(),
            })
            .collect();
        archive.insert(
            format!("{prefix}/tensors.json"),
            serde_json::to_vec_pretty(&index)?,
        );
        for p in &self.params {
            let m = p.value.mapv(|v| v.as_f64() as f32);
            archive.insert(format!("{prefix}/{}.cmeb", p.name), cmeb::encode(m.view()));
        }
        Ok(())
    }

    pub fn read_from_archive(
        archive: &Archive,
        prefix: &str,
        origin: &std::path::Path,
    ) -> Result<Self> {
        let key = format!("{prefix}/tensors.json");
        let index: Vec<TensorEntry> = serde_json::from_slice(
            archive
                .get(&key)
                .ok_or_else(|| Error::format(origin, format!("missing {key}")))?,
        )?;
        let mut set = ParamSet::new();
        for e in index {
            let key = format!("{prefix}/{}.cmeb", e.name);
            let bytes = archive
                .get(&key)
                .ok_or_else(|| Error::format(origin, format!("missing {key}")))?;
            let m = cmeb::decode(bytes, origin)?;
            if m.dim() != (e.rows, e.dim) {
                return Err(Error::format(origin, format!("{key}: shape mismatch")));
            }
            set.insert(e.name, m.mapv(|v| F::lit(f64::from(v))), e.frozen);
        }
        Ok(set)
    }
}
