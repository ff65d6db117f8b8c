use indexmap::IndexMap;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered parameter storage. Insertion order defines [`ParamId`]s, so a
/// model built the same way always maps names to the same ids.
#[derive(Clone)]
pub struct ParamStore<R: Real> {
    entries: IndexMap<String, Array2<R>>,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<R>) -> ParamId {
        let name = name.into();
        assert!(
            !self.entries.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.entries.insert(name, value);
        ParamId(self.entries.len() - 1)
    }

    pub fn id(&self, name: &str) -> ParamId {
        ParamId(
            self.entries
                .get_index_of(name)
                .unwrap_or_else(|| panic!("unknown parameter {name}")),
        )
    }

    pub fn value(&self, id: ParamId) -> &Array2<R> {
        &self.entries[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<R> {
        &mut self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).expect("param id").0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<R>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn count_scalars(&self) -> usize {
        self.entries.values().map(|a| a.len()).sum()
    }

    /// Cast every parameter to another scalar type (checkpoints are f32).
    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, v) in &self.entries {
            out.add(name.clone(), v.mapv(|a| T::from_f64(a.as_f64())));
        }
        out
    }
}

/// Normal(0, std) init.
pub fn normal_init<R: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<R> {
    let dist = Normal::new(0.0f64, std).expect("normal");
    Array2::from_shape_fn((rows, cols), |_| R::from_f64(dist.sample(rng)))
}

pub fn zeros<R: Real>(rows: usize, cols: usize) -> Array2<R> {
    Array2::zeros((rows, cols))
}

pub fn ones<R: Real>(rows: usize, cols: usize) -> Array2<R> {
    Array2::from_elem((rows, cols), R::one())
}
