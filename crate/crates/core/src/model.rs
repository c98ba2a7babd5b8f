//! The contract shared by every composite-likelihood model.
//!
//! A model owns `K` log-likelihood components per observation. The composite
//! log-likelihood of a dataset is `sum_i sum_k w_k l_k(theta; y_i)` over the
//! training rows. The library works with this maximisation form throughout;
//! the optimiser negates internally.

use std::ops::{Deref, DerefMut};

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Rows per work unit in parallel reductions. Fixed so that the summation
/// order, and therefore every result bit, is independent of thread count.
pub const REDUCTION_CHUNK: usize = 256;

/// Dense parameter point with a model-defined layout.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric("parameter vector", format!("entry {j} is {}", values[j])));
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn squared_distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

/// The `(observation, component)` cell of the weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentIndex {
    pub observation: usize,
    pub component: usize,
}

impl ComponentIndex {
    pub fn new(observation: usize, component: usize) -> Self {
        Self {
            observation,
            component,
        }
    }
}

/// Gradient of one component as `(parameter index, value)` pairs.
///
/// Components touch a handful of parameters, so every hot path works with
/// this representation; an index may appear more than once and entries add.
#[derive(Debug, Clone, Default)]
pub struct SparseGrad {
    entries: Vec<(usize, f64)>,
}

impl SparseGrad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self {
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, index: usize, value: f64) {
        self.entries.push((index, value));
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds `scale * self` into `dense`.
    #[inline]
    pub fn add_scaled_to(&self, dense: &mut [f64], scale: f64) {
        for &(j, v) in &self.entries {
            dense[j] += scale * v;
        }
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        self.add_scaled_to(&mut out, 1.0);
        out
    }
}

/// A model whose log-likelihood is replaced by a sum of `K` components per
/// observation.
///
/// Implementations must be pure: the same inputs always give the same
/// outputs, and they may be called concurrently.
pub trait CompositeModel: Sync {
    /// Short identifier, e.g. `ising`.
    fn name(&self) -> &str;

    /// Parameter dimension `d`.
    fn dim(&self) -> usize;

    /// Number of components `K` per observation.
    fn n_components(&self) -> usize;

    /// Number of variables `p` an observation must have.
    fn n_vars(&self) -> usize;

    fn param_names(&self) -> Vec<String>;

    /// Weight `w_k` of component `k` in the composite log-likelihood.
    fn component_weight(&self, _k: usize) -> f64 {
        1.0
    }

    /// Rejects datasets this model cannot evaluate.
    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.n_cols() != self.n_vars() {
            return Err(Error::Data(format!(
                "{} model expects {} variables, dataset has {}",
                self.name(),
                self.n_vars(),
                data.n_cols()
            )));
        }
        Ok(())
    }

    /// `l_k(theta; y)` for one observation.
    fn component_loglik(&self, theta: &[f64], row: &[u32], k: usize) -> Result<f64>;

    /// Appends the gradient of `l_k(theta; y)` to `out`. Only parameters that
    /// appear in the component may be pushed.
    fn component_grad(&self, theta: &[f64], row: &[u32], k: usize, out: &mut SparseGrad) -> Result<()>;
}

fn check_index<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset, idx: ComponentIndex) -> Result<()> {
    if idx.observation >= data.n_rows() || idx.component >= model.n_components() {
        return Err(Error::IndexOutOfBounds {
            observation: idx.observation,
            component: idx.component,
            n: data.n_rows(),
            k: model.n_components(),
        });
    }
    if theta.len() != model.dim() {
        return Err(Error::Config(format!(
            "parameter vector has length {}, model dimension is {}",
            theta.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// `l_k(theta; y_i)` with bounds checking.
pub fn sub_loglik<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset, idx: ComponentIndex) -> Result<f64> {
    check_index(model, theta, data, idx)?;
    let v = model.component_loglik(theta, data.row(idx.observation), idx.component)?;
    if !v.is_finite() {
        return Err(Error::numeric(
            format!("{} component {}", model.name(), idx.component),
            format!("log-likelihood evaluated to {v} on observation {}", idx.observation),
        ));
    }
    Ok(v)
}

/// Dense gradient of `l_k(theta; y_i)`.
pub fn sub_grad<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset, idx: ComponentIndex) -> Result<ParamVector> {
    check_index(model, theta, data, idx)?;
    let mut g = SparseGrad::new();
    model.component_grad(theta, data.row(idx.observation), idx.component, &mut g)?;
    let dense = g.to_dense(model.dim());
    ParamVector::new(dense).map_err(|_| {
        Error::numeric(
            format!("{} component {}", model.name(), idx.component),
            format!("non-finite gradient on observation {}", idx.observation),
        )
    })
}

/// Composite log-likelihood over the given rows using the model's weights.
pub fn rows_loglik<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset, rows: &[usize]) -> Result<f64> {
    let weights: Vec<f64> = (0..model.n_components()).map(|k| model.component_weight(k)).collect();
    rows_loglik_weighted(model, theta, data, rows, &weights)
}

fn rows_loglik_weighted<M: CompositeModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    rows: &[usize],
    weights: &[f64],
) -> Result<f64> {
    let partial: Vec<f64> = rows
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut acc = 0.0;
            for &i in chunk {
                let row = data.row(i);
                for (k, &w) in weights.iter().enumerate() {
                    acc += w * model.component_loglik(theta, row, k)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = partial.iter().sum();
    if !total.is_finite() {
        return Err(Error::numeric(model.name(), format!("composite log-likelihood is {total}")));
    }
    Ok(total)
}

/// Composite log-likelihood `sum_i sum_k w_k l_k` over the training rows,
/// with the model's own component weights.
pub fn full_loglik<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> Result<f64> {
    model.check_data(data)?;
    rows_loglik(model, theta, data, &data.train_rows())
}

/// As [`full_loglik`] with caller-supplied component weights.
pub fn full_loglik_weighted<M: CompositeModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    weights: &[f64],
) -> Result<f64> {
    model.check_data(data)?;
    if weights.len() != model.n_components() {
        return Err(Error::Config(format!(
            "{} weights supplied for {} components",
            weights.len(),
            model.n_components()
        )));
    }
    rows_loglik_weighted(model, theta, data, &data.train_rows(), weights)
}

/// Gradient of [`rows_loglik`] over the given rows.
pub fn rows_grad<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset, rows: &[usize]) -> Result<ParamVector> {
    let d = model.dim();
    let k_count = model.n_components();
    let partial: Vec<Vec<f64>> = rows
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; d];
            let mut g = SparseGrad::with_capacity(d);
            for &i in chunk {
                let row = data.row(i);
                for k in 0..k_count {
                    g.clear();
                    model.component_grad(theta, row, k, &mut g)?;
                    g.add_scaled_to(&mut acc, model.component_weight(k));
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut total = vec![0.0; d];
    for part in &partial {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    ParamVector::new(total).map_err(|_| Error::numeric(model.name(), "non-finite composite score"))
}

/// Gradient of [`full_loglik`] (the ascent direction).
pub fn full_grad<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> Result<ParamVector> {
    model.check_data(data)?;
    rows_grad(model, theta, data, &data.train_rows())
}
