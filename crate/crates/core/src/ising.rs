//! Ising model for binary vectors with node-conditional (pseudolikelihood)
//! components.
//!
//! Parameters use a flat layout of length `d = p + p(p-1)/2`: the `p`
//! intercepts first, then the edges `(j, j')`, `j < j'`, in lexicographic
//! order. Component `k` is the logistic conditional of node `k` given the
//! others.

use rand::Rng;

use crate::data::{DataKind, Dataset};
use crate::error::{Error, Result};
use crate::model::{CompositeModel, ParamVector, SparseGrad};
use crate::numerics::{sigmoid, softplus, LogSumExp};

/// Largest block that exact enumeration will handle (2^25 states).
pub const MAX_ENUMERATION_NODES: usize = 25;

/// Flat index of edge `(a, b)`, `a != b`, in a model with `p` nodes.
#[inline]
pub fn edge_index(p: usize, a: usize, b: usize) -> usize {
    debug_assert!(a != b && a < p && b < p);
    let (j, k) = if a < b { (a, b) } else { (b, a) };
    p + j * (2 * p - j - 1) / 2 + (k - j - 1)
}

pub fn ising_dim(p: usize) -> usize {
    p + p * (p - 1) / 2
}

/// Intercepts and symmetric, zero-diagonal edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingParams {
    p: usize,
    flat: Vec<f64>,
}

impl IsingParams {
    pub fn zeros(p: usize) -> Self {
        Self {
            p,
            flat: vec![0.0; ising_dim(p)],
        }
    }

    pub fn from_flat(p: usize, flat: &[f64]) -> Result<Self> {
        if p == 0 {
            return Err(Error::Config("Ising model needs at least one node".into()));
        }
        if flat.len() != ising_dim(p) {
            return Err(Error::Config(format!(
                "Ising model with p = {p} has {} parameters, got {}",
                ising_dim(p),
                flat.len()
            )));
        }
        Ok(Self { p, flat: flat.to_vec() })
    }

    /// Builds parameters from intercepts and a full edge matrix, which must be
    /// symmetric with a zero diagonal.
    pub fn from_parts(intercepts: &[f64], edges: &[Vec<f64>]) -> Result<Self> {
        let p = intercepts.len();
        if edges.len() != p || edges.iter().any(|r| r.len() != p) {
            return Err(Error::Config("edge matrix must be p x p".into()));
        }
        let mut out = Self::zeros(p);
        out.flat[..p].copy_from_slice(intercepts);
        for j in 0..p {
            if edges[j][j] != 0.0 {
                return Err(Error::Config(format!("edge matrix diagonal entry {j} is non-zero")));
            }
            for k in j + 1..p {
                if edges[j][k] != edges[k][j] {
                    return Err(Error::Config(format!("edge matrix is not symmetric at ({j}, {k})")));
                }
                out.flat[edge_index(p, j, k)] = edges[j][k];
            }
        }
        Ok(out)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn to_param_vector(&self) -> ParamVector {
        ParamVector::from_vec_unchecked(self.flat.clone())
    }

    pub fn intercept(&self, j: usize) -> f64 {
        self.flat[j]
    }

    pub fn edge(&self, j: usize, k: usize) -> f64 {
        if j == k {
            0.0
        } else {
            self.flat[edge_index(self.p, j, k)]
        }
    }

    pub fn set_intercept(&mut self, j: usize, v: f64) {
        self.flat[j] = v;
    }

    pub fn set_edge(&mut self, j: usize, k: usize, v: f64) {
        assert_ne!(j, k, "diagonal edges are fixed at zero");
        let idx = edge_index(self.p, j, k);
        self.flat[idx] = v;
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.flat[..self.p]
    }

    pub fn edge_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.p).map(|j| (0..self.p).map(|k| self.edge(j, k)).collect()).collect()
    }

    /// Unnormalised log-probability of a binary configuration.
    pub fn energy(&self, y: &[u32]) -> f64 {
        let mut e = 0.0;
        for j in 0..self.p {
            if y[j] == 1 {
                e += self.flat[j];
                for k in j + 1..self.p {
                    if y[k] == 1 {
                        e += self.flat[edge_index(self.p, j, k)];
                    }
                }
            }
        }
        e
    }

    /// Node sets of the connected components of the non-zero edge graph.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.p];
        let mut blocks = Vec::new();
        for start in 0..self.p {
            if label[start] != usize::MAX {
                continue;
            }
            let id = blocks.len();
            let mut members = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < members.len() {
                let j = members[head];
                head += 1;
                for k in 0..self.p {
                    if k != j && label[k] == usize::MAX && self.edge(j, k) != 0.0 {
                        label[k] = id;
                        members.push(k);
                    }
                }
            }
            members.sort_unstable();
            blocks.push(members);
        }
        blocks
    }

    fn restrict(&self, nodes: &[usize]) -> IsingParams {
        let mut sub = IsingParams::zeros(nodes.len());
        for (a, &j) in nodes.iter().enumerate() {
            sub.flat[a] = self.flat[j];
            for (b, &k) in nodes.iter().enumerate().skip(a + 1) {
                sub.flat[edge_index(nodes.len(), a, b)] = self.edge(j, k);
            }
        }
        sub
    }
}

/// Human-readable parameter names, 1-based: `b3_0` (intercept of node 3),
/// `b2_5` (edge between nodes 2 and 5).
pub fn ising_param_names(p: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=p).map(|j| format!("b{j}_0")).collect();
    for j in 1..=p {
        for k in j + 1..=p {
            names.push(format!("b{j}_{k}"));
        }
    }
    names
}

fn check_enumerable(p: usize) -> Result<()> {
    if p > MAX_ENUMERATION_NODES {
        return Err(Error::Capability(format!(
            "exact enumeration of a {p}-node block exceeds the {MAX_ENUMERATION_NODES}-node limit"
        )));
    }
    Ok(())
}

/// Visits every configuration in Gray-code order with its energy. The
/// callback receives the configuration as a bit pattern (bit `j` = `y_j`).
fn for_each_state(params: &IsingParams, mut visit: impl FnMut(usize, f64)) {
    let p = params.p;
    // field[j]: change in energy when y_j flips 0 -> 1 given the others
    let mut field: Vec<f64> = params.flat[..p].to_vec();
    let mut state = 0usize;
    let mut energy = 0.0;
    visit(0, 0.0);
    for i in 1..(1usize << p) {
        let bit = i.trailing_zeros() as usize;
        let mask = 1usize << bit;
        let on = state & mask == 0;
        state ^= mask;
        let sign = if on { 1.0 } else { -1.0 };
        energy += sign * field[bit];
        for k in 0..p {
            if k != bit {
                field[k] += sign * params.flat[edge_index(p, bit, k)];
            }
        }
        visit(state, energy);
    }
}

fn block_log_partition(params: &IsingParams) -> f64 {
    let mut acc = LogSumExp::new();
    for_each_state(params, |_, e| acc.add(e));
    acc.value()
}

/// `log Z(theta)` by exhaustive enumeration, factorised over the connected
/// blocks of the edge graph.
pub fn log_partition(params: &IsingParams) -> Result<f64> {
    let blocks = params.blocks();
    for b in &blocks {
        check_enumerable(b.len())?;
    }
    Ok(blocks.iter().map(|b| block_log_partition(&params.restrict(b))).sum())
}

/// Exact probability table of a model small enough to enumerate.
#[derive(Debug, Clone)]
pub struct PmfTable {
    p: usize,
    log_z: f64,
    probs: Vec<f64>,
}

impl PmfTable {
    pub fn build(params: &IsingParams) -> Result<Self> {
        check_enumerable(params.p)?;
        let mut energies = vec![0.0; 1usize << params.p];
        let mut acc = LogSumExp::new();
        for_each_state(params, |s, e| {
            energies[s] = e;
            acc.add(e);
        });
        let log_z = acc.value();
        for e in energies.iter_mut() {
            *e = (*e - log_z).exp();
        }
        Ok(Self {
            p: params.p,
            log_z,
            probs: energies,
        })
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// Probability of the configuration with bit pattern `state`.
    pub fn prob(&self, state: usize) -> f64 {
        self.probs[state]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

pub fn state_of(y: &[u32]) -> usize {
    y.iter().enumerate().fold(0, |s, (j, &v)| s | ((v as usize) << j))
}

pub fn config_of(state: usize, p: usize) -> Vec<u32> {
    (0..p).map(|j| ((state >> j) & 1) as u32).collect()
}

struct BlockSampler {
    nodes: Vec<usize>,
    cumulative: Vec<f64>,
}

impl BlockSampler {
    fn new(params: &IsingParams, nodes: Vec<usize>) -> Result<Self> {
        let table = PmfTable::build(&params.restrict(&nodes))?;
        let mut run = 0.0;
        let cumulative = table
            .probs
            .iter()
            .map(|&q| {
                run += q;
                run
            })
            .collect();
        Ok(Self { nodes, cumulative })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, row: &mut [u32]) {
        let total = *self.cumulative.last().expect("non-empty table");
        let u = rng.random::<f64>() * total;
        let state = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        for (b, &j) in self.nodes.iter().enumerate() {
            row[j] = ((state >> b) & 1) as u32;
        }
    }
}

/// `n` independent draws from the exact distribution, by inverse-CDF
/// sampling on the probability table of each connected block.
pub fn exact_sample<R: Rng + ?Sized>(params: &IsingParams, n: usize, rng: &mut R) -> Result<Dataset> {
    let samplers = params
        .blocks()
        .into_iter()
        .map(|nodes| {
            check_enumerable(nodes.len())?;
            BlockSampler::new(params, nodes)
        })
        .collect::<Result<Vec<_>>>()?;
    let p = params.p;
    let mut values = vec![0u32; n * p];
    for row in values.chunks_exact_mut(p) {
        for s in &samplers {
            s.draw(rng, row);
        }
    }
    Dataset::new(values, n, p, DataKind::Binary)
}

/// Two-row grid with `p / 2` columns, nodes numbered column-major
/// (node `2c + r` sits in row `r`, column `c`). Horizontal edges are 0.5,
/// vertical edges -0.5, and intercepts are -0.5 for odd and 0.5 for even
/// 1-based node numbers.
pub fn grid_truth(p: usize) -> Result<IsingParams> {
    if p == 0 || p % 2 != 0 {
        return Err(Error::Config(format!("two-row grid needs an even number of nodes, got {p}")));
    }
    let cols = p / 2;
    let mut params = IsingParams::zeros(p);
    for v in 0..p {
        params.set_intercept(v, if (v + 1) % 2 == 1 { -0.5 } else { 0.5 });
    }
    for c in 0..cols {
        params.set_edge(2 * c, 2 * c + 1, -0.5);
        if c + 1 < cols {
            for r in 0..2 {
                params.set_edge(2 * c + r, 2 * (c + 1) + r, 0.5);
            }
        }
    }
    Ok(params)
}

/// Sparse block-structured graph used as a synthetic stand-in for a
/// symptom network: `p / 8` blocks of eight nodes (the last block takes the
/// remainder), within-block edges at lags 1-4 with mixed signs, and
/// negative intercepts so that most items are rarely endorsed.
pub fn symptom_network_truth(p: usize) -> Result<IsingParams> {
    if p < 2 {
        return Err(Error::Config("symptom network needs at least two nodes".into()));
    }
    const BLOCK: usize = 8;
    let mut params = IsingParams::zeros(p);
    let mut start = 0;
    while start < p {
        let end = if p - start < 2 * BLOCK { p } else { start + BLOCK };
        for j in start..end {
            let local = j - start;
            params.set_intercept(j, -1.5 - 0.25 * (local % 3) as f64);
            for k in j + 1..end {
                let w = match k - j {
                    1 => 1.2,
                    2 => 0.8,
                    3 if local % 2 == 0 => -0.6,
                    4 if local % 3 == 0 => 0.6,
                    _ => 0.0,
                };
                if w != 0.0 {
                    params.set_edge(j, k, w);
                }
            }
        }
        start = end;
    }
    Ok(params)
}

/// Node-conditional composite likelihood of the Ising model.
#[derive(Debug, Clone)]
pub struct IsingModel {
    p: usize,
    /// For node `j`: `(j', flat index of edge (j, j'))` for every `j' != j`.
    neighbours: Vec<Vec<(usize, usize)>>,
}

impl IsingModel {
    pub fn new(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::Config(format!("Ising model needs p >= 2, got {p}")));
        }
        let neighbours = (0..p)
            .map(|j| (0..p).filter(|&k| k != j).map(|k| (k, edge_index(p, j, k))).collect())
            .collect();
        Ok(Self { p, neighbours })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    fn linear_predictor(&self, theta: &[f64], row: &[u32], j: usize) -> f64 {
        let mut eta = theta[j];
        for &(k, idx) in &self.neighbours[j] {
            if row[k] != 0 {
                eta += theta[idx];
            }
        }
        eta
    }

    /// Logistic log-likelihood of node `j` given the rest of `row`.
    pub fn conditional_loglik(&self, theta: &[f64], row: &[u32], j: usize) -> f64 {
        let eta = self.linear_predictor(theta, row, j);
        row[j] as f64 * eta - softplus(eta)
    }

    /// Gradient of [`Self::conditional_loglik`]; touches the intercept of `j`
    /// and the edges from `j` to active nodes only.
    pub fn conditional_grad(&self, theta: &[f64], row: &[u32], j: usize, out: &mut SparseGrad) {
        let eta = self.linear_predictor(theta, row, j);
        let resid = row[j] as f64 - sigmoid(eta);
        out.push(j, resid);
        for &(k, idx) in &self.neighbours[j] {
            if row[k] != 0 {
                out.push(idx, resid);
            }
        }
    }

    /// Exact negative Hessian of the conditional log-likelihood of node `j`:
    /// `sigma (1 - sigma) x x^T` with `x` the node's design vector.
    pub fn conditional_neg_hessian(&self, theta: &[f64], row: &[u32], j: usize) -> Vec<(usize, usize, f64)> {
        let eta = self.linear_predictor(theta, row, j);
        let s = sigmoid(eta);
        let w = s * (1.0 - s);
        let mut support = vec![j];
        support.extend(self.neighbours[j].iter().filter(|(k, _)| row[*k] != 0).map(|&(_, idx)| idx));
        let mut out = Vec::with_capacity(support.len() * support.len());
        for &a in &support {
            for &b in &support {
                out.push((a, b, w));
            }
        }
        out
    }
}

impl CompositeModel for IsingModel {
    fn name(&self) -> &str {
        "ising"
    }

    fn dim(&self) -> usize {
        ising_dim(self.p)
    }

    fn n_components(&self) -> usize {
        self.p
    }

    fn n_vars(&self) -> usize {
        self.p
    }

    fn param_names(&self) -> Vec<String> {
        ising_param_names(self.p)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.kind() != DataKind::Binary {
            return Err(Error::Data("Ising model requires binary data".into()));
        }
        if data.n_cols() != self.p {
            return Err(Error::Data(format!(
                "Ising model has {} nodes, dataset has {} columns",
                self.p,
                data.n_cols()
            )));
        }
        Ok(())
    }

    fn component_loglik(&self, theta: &[f64], row: &[u32], k: usize) -> Result<f64> {
        Ok(self.conditional_loglik(theta, row, k))
    }

    fn component_grad(&self, theta: &[f64], row: &[u32], k: usize, out: &mut SparseGrad) -> Result<()> {
        self.conditional_grad(theta, row, k, out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamKey};

    #[test]
    fn edge_layout_is_lexicographic() {
        let p = 4;
        let order: Vec<usize> = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
            .iter()
            .map(|&(a, b)| edge_index(p, a, b))
            .collect();
        assert_eq!(order, vec![4, 5, 6, 7, 8, 9]);
        assert_eq!(edge_index(p, 3, 1), edge_index(p, 1, 3));
        assert_eq!(ising_param_names(3), vec!["b1_0", "b2_0", "b3_0", "b1_2", "b1_3", "b2_3"]);
    }

    #[test]
    fn flat_structured_round_trip() {
        let truth = grid_truth(6).unwrap();
        let back = IsingParams::from_parts(truth.intercepts(), &truth.edge_matrix()).unwrap();
        assert_eq!(back, truth);
        let mut bad = truth.edge_matrix();
        bad[0][1] = 3.0;
        assert!(IsingParams::from_parts(truth.intercepts(), &bad).is_err());
    }

    #[test]
    fn log_partition_small_cases() {
        let p1 = IsingParams::from_flat(1, &[0.0]).unwrap();
        assert!((log_partition(&p1).unwrap() - 2f64.ln()).abs() < 1e-15);
        let zero = IsingParams::zeros(7);
        assert!((log_partition(&zero).unwrap() - 7.0 * 2f64.ln()).abs() < 1e-12);
        let p2 = IsingParams::from_flat(2, &[0.0, 0.0, 1.0]).unwrap();
        let expect = (3.0 + 1f64.exp()).ln();
        assert!((log_partition(&p2).unwrap() - expect).abs() < 1e-14);
        // Dense block enumeration agrees with the blockwise factorisation.
        assert!((PmfTable::build(&p2).unwrap().log_partition() - expect).abs() < 1e-14);
    }

    #[test]
    fn large_shift_does_not_overflow() {
        let p1 = IsingParams::from_flat(1, &[100.7]).unwrap();
        let expect = softplus(100.7);
        assert!((log_partition(&p1).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn enumeration_cap() {
        let mut dense = IsingParams::zeros(26);
        for j in 0..25 {
            dense.set_edge(j, j + 1, 0.1);
        }
        assert!(matches!(log_partition(&dense), Err(Error::Capability(_))));
        // Disconnected blocks stay enumerable.
        assert!(log_partition(&symptom_network_truth(32).unwrap()).is_ok());
    }

    #[test]
    fn grid_truth_p4() {
        let g = grid_truth(4).unwrap();
        assert_eq!(g.intercepts(), &[-0.5, 0.5, -0.5, 0.5]);
        assert_eq!(g.edge(0, 1), -0.5);
        assert_eq!(g.edge(2, 3), -0.5);
        assert_eq!(g.edge(0, 2), 0.5);
        assert_eq!(g.edge(1, 3), 0.5);
        assert_eq!(g.edge(0, 3), 0.0);
        assert_eq!(g.edge(1, 2), 0.0);
        assert_eq!(grid_truth(10).unwrap().flat().len(), 55);
        assert!(grid_truth(5).is_err());
    }

    #[test]
    fn conditional_at_zero() {
        let m = IsingModel::new(3).unwrap();
        let theta = vec![0.0; m.dim()];
        for row in [[0, 0, 0], [1, 0, 1], [1, 1, 1]] {
            for j in 0..3 {
                assert!((m.conditional_loglik(&theta, &row, j) + 2f64.ln()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn p2_example_value_and_gradient() {
        let m = IsingModel::new(2).unwrap();
        let theta = [0.0, 0.0, 1.0];
        let v = m.conditional_loglik(&theta, &[1, 1], 0);
        assert!((v - (1.0 - (1.0 + 1f64.exp()).ln())).abs() < 1e-15);
        assert!((v + 0.313_261_687_518_222_8).abs() < 1e-12);

        let mut g = SparseGrad::new();
        m.conditional_grad(&[0.0; 3], &[1, 1], 0, &mut g);
        assert_eq!(g.to_dense(3), vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn sampler_respects_blocks() {
        let truth = symptom_network_truth(32).unwrap();
        let mut rng = StreamKey::new(3, 0, Purpose::Data).rng();
        let data = exact_sample(&truth, 200, &mut rng).unwrap();
        assert_eq!((data.n_rows(), data.n_cols()), (200, 32));
        assert_eq!(data.kind(), DataKind::Binary);
    }
}
