use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{axpy, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in `[-a, a]`.
    Uniform(f64),
    /// Normal with mean 0 and the given standard deviation.
    Normal(f64),
}

/// Named parameters with same-shaped gradient slots and a seeded initializer.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let mut t = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Uniform(a) => {
                for x in t.data_mut() {
                    *x = self.rng.random_range(-a..=a);
                }
            }
            Init::Normal(sd) => {
                let dist = Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))?;
                for x in t.data_mut() {
                    *x = dist.sample(&mut self.rng);
                }
            }
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(shape));
        self.values.push(t);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn total_parameters(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn view(&self) -> ParamView<'_> {
        ParamView(&self.values)
    }

    /// Read-only parameters alongside writable gradients.
    pub fn split(&mut self) -> (ParamView<'_>, GradSink<'_>) {
        (ParamView(&self.values), GradSink(&mut self.grads))
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Zeroed gradient slots detached from the store, for accumulating a
    /// share of a batch on another thread.
    pub fn grad_buffer(&self) -> GradBuffer {
        GradBuffer(self.grads.iter().map(|g| Tensor::zeros(g.shape())).collect())
    }

    pub fn add_grads(&mut self, buf: &GradBuffer) {
        for (g, b) in self.grads.iter_mut().zip(&buf.0) {
            axpy(1.0, b.data(), g.data_mut());
        }
    }

    /// Replaces a parameter's value, checking the shape.
    pub fn set_value(&mut self, id: ParamId, t: Tensor) -> Result<()> {
        if t.shape() != self.values[id.0].shape() {
            return Err(Error::dim(
                "parameter shape",
                self.values[id.0].len(),
                t.len(),
            ));
        }
        self.values[id.0] = t;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParamView<'a>(&'a [Tensor]);

impl<'a> ParamView<'a> {
    #[inline]
    pub fn get(&self, id: ParamId) -> &'a Tensor {
        &self.0[id.0]
    }
}

#[derive(Debug)]
pub struct GradSink<'a>(&'a mut [Tensor]);

impl GradSink<'_> {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.0[id.0]
    }
}

#[derive(Debug, Clone)]
pub struct GradBuffer(Vec<Tensor>);

impl GradBuffer {
    pub fn sink(&mut self) -> GradSink<'_> {
        GradSink(&mut self.0)
    }
}

/// Lookup table whose rows are word vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn register(store: &mut ParamStore, name: &str, rows: usize, dim: usize, init: Init) -> Result<Self> {
        let table = store.add(name, &[rows, dim], init)?;
        Ok(Self { table, rows, dim })
    }

    pub fn lookup<'a>(&self, view: ParamView<'a>, row: usize) -> &'a [f64] {
        view.get(self.table).row(row)
    }

    /// Mean of several rows; an empty set gives the zero vector.
    pub fn mean(&self, view: ParamView<'_>, rows: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if rows.is_empty() {
            return out;
        }
        let w = 1.0 / rows.len() as f64;
        for r in rows {
            axpy(w, self.lookup(view, *r), &mut out);
        }
        out
    }

    pub fn backward_row(&self, grads: &mut GradSink<'_>, row: usize, d: &[f64]) {
        axpy(1.0, d, grads.get_mut(self.table).row_mut(row));
    }

    pub fn backward_mean(&self, grads: &mut GradSink<'_>, rows: &[usize], d: &[f64]) {
        if rows.is_empty() {
            return;
        }
        let w = 1.0 / rows.len() as f64;
        let g = grads.get_mut(self.table);
        for r in rows {
            axpy(w, d, g.row_mut(*r));
        }
    }
}

/// Overwrites embedding rows from a `token v1 ... vd` text file. Tokens for
/// which `row_of` returns `None` are skipped. Returns the number of rows set.
pub fn load_pretrained(
    reader: impl std::io::BufRead,
    store: &mut ParamStore,
    emb: &Embedding,
    row_of: impl Fn(&str) -> Option<usize>,
) -> Result<usize> {
    let mut loaded = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_ascii_whitespace();
        let Some(token) = parts.next() else { continue };
        let Some(row) = row_of(token) else { continue };
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse("embeddings", n + 1, e.to_string()))?;
        if values.len() != emb.dim {
            return Err(Error::parse(
                "embeddings",
                n + 1,
                format!("expected {} values, found {}", emb.dim, values.len()),
            ));
        }
        store.value_mut(emb.table).row_mut(row).copy_from_slice(&values);
        loaded += 1;
    }
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let mk = || {
            let mut s = ParamStore::new(3);
            s.add("a", &[4, 4], Init::Uniform(0.08)).unwrap();
            s.add("b", &[10], Init::Normal(0.1)).unwrap();
            s
        };
        let (a, b) = (mk(), mk());
        for id in a.ids() {
            assert_eq!(a.value(id), b.value(id));
            assert_eq!(a.value(id).shape(), a.grad(id).shape());
        }
        assert!(a.value(ParamId(0)).data().iter().all(|x| x.abs() <= 0.08));
    }

    #[test]
    fn pretrained_rows_override_init() {
        let mut s = ParamStore::new(0);
        let e = Embedding::register(&mut s, "emb", 3, 2, Init::Normal(0.1)).unwrap();
        let before = s.value(e.table).row(2).to_vec();
        let text = "cat 0.5 -1\nzebra 9 9\ndog 1e-1 2\n";
        let rows = |t: &str| match t {
            "cat" => Some(0),
            "dog" => Some(1),
            _ => None,
        };
        assert_eq!(load_pretrained(text.as_bytes(), &mut s, &e, rows).unwrap(), 2);
        assert_eq!(s.value(e.table).row(0), &[0.5, -1.0]);
        assert_eq!(s.value(e.table).row(1), &[0.1, 2.0]);
        assert_eq!(s.value(e.table).row(2), before.as_slice());
        assert!(load_pretrained("cat 1\n".as_bytes(), &mut s, &e, rows).is_err());
    }

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new(0);
        s.add("w", &[2], Init::Zeros).unwrap();
        assert!(s.add("w", &[2], Init::Zeros).is_err());
    }
}
