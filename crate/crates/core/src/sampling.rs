//! Random weight matrices for the stochastic gradient.
//!
//! Each scheme selects a set of `(observation, component)` cells out of the
//! `n x K` grid such that every cell is included with probability exactly
//! `1/n`:
//!
//! * `standard`: one whole observation, chosen uniformly;
//! * `bernoulli`: every cell independently with probability `1/n`;
//! * `hyper`: exactly `K` distinct cells, uniformly without replacement.
//!
//! `standard` and `hyper` can also recycle one scramble over a window of `l`
//! consecutive iterations.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::model::ComponentIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Standard,
    Bernoulli,
    #[serde(alias = "hypergeometric")]
    Hyper,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Standard => "standard",
            SchemeKind::Bernoulli => "bernoulli",
            SchemeKind::Hyper => "hyper",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" | "p1" => Ok(SchemeKind::Standard),
            "bernoulli" | "p2" => Ok(SchemeKind::Bernoulli),
            "hyper" | "hypergeometric" | "p3" => Ok(SchemeKind::Hyper),
            other => Err(Error::Config(format!("unknown sampling scheme `{other}`"))),
        }
    }
}

/// A sampling scheme instantiated on an `n x K` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub n: usize,
    pub k: usize,
    pub recycle_window: Option<usize>,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind, n: usize, k: usize) -> Result<Self> {
        Self::with_recycling(kind, n, k, None)
    }

    pub fn with_recycling(kind: SchemeKind, n: usize, k: usize, recycle_window: Option<usize>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::Config(format!("sampling grid must be non-empty, got n = {n}, K = {k}")));
        }
        match recycle_window {
            Some(0) => return Err(Error::Config("recycling window must be at least 1".into())),
            Some(_) if kind == SchemeKind::Bernoulli => {
                return Err(Error::UnsupportedScheme(kind.to_string()));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            n,
            k,
            recycle_window,
        })
    }

    /// Label used in experiment output, e.g. `recycle_hyper`.
    pub fn label(&self) -> String {
        match self.recycle_window {
            Some(_) => format!("recycle_{}", self.kind),
            None => self.kind.to_string(),
        }
    }

    /// Inclusion probability of a single cell; fixed at `1/n`.
    pub fn gamma1(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn moments(&self) -> SchemeMoments {
        moments(self)
    }
}

/// Inclusion moments of the weight matrix.
///
/// `gamma2` is the co-inclusion probability of one component in two distinct
/// observations and `gamma3` that of two distinct components of one
/// observation. Only `gamma1` and `gamma3` enter the optimisation-noise
/// covariance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SchemeMoments {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

pub fn moments(scheme: &SchemeSpec) -> SchemeMoments {
    let n = scheme.n as f64;
    let k = scheme.k as f64;
    let gamma1 = 1.0 / n;
    match scheme.kind {
        SchemeKind::Standard => SchemeMoments {
            gamma1,
            gamma2: 0.0,
            gamma3: gamma1,
        },
        SchemeKind::Bernoulli => SchemeMoments {
            gamma1,
            gamma2: gamma1 * gamma1,
            gamma3: gamma1 * gamma1,
        },
        SchemeKind::Hyper => {
            // Any two distinct cells are co-selected with probability
            // K(K-1) / (nK(nK-1)), whichever row or column they share.
            let cells = n * k;
            let pair = if cells > 1.0 {
                (k - 1.0) / (n * (cells - 1.0))
            } else {
                gamma1
            };
            SchemeMoments {
                gamma1,
                gamma2: pair,
                gamma3: pair,
            }
        }
    }
}

/// The realised draw of the weight matrix: the cells equal to one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ComponentSelection {
    pub pairs: Vec<ComponentIndex>,
    pub iteration: usize,
}

impl ComponentSelection {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn push_cell(out: &mut Vec<ComponentIndex>, cell: usize, k: usize) {
    out.push(ComponentIndex::new(cell / k, cell % k));
}

fn draw_into<R: Rng + ?Sized>(scheme: &SchemeSpec, rng: &mut R, out: &mut Vec<ComponentIndex>) {
    out.clear();
    let (n, k) = (scheme.n, scheme.k);
    match scheme.kind {
        SchemeKind::Standard => {
            let i = rng.random_range(0..n);
            out.extend((0..k).map(|c| ComponentIndex::new(i, c)));
        }
        SchemeKind::Bernoulli => {
            let cells = n * k;
            let size = if n == 1 {
                cells
            } else {
                Binomial::new(cells as u64, 1.0 / n as f64)
                    .expect("valid binomial parameters")
                    .sample(rng) as usize
            };
            for cell in index::sample(rng, cells, size) {
                push_cell(out, cell, k);
            }
        }
        SchemeKind::Hyper => {
            for cell in index::sample(rng, n * k, k) {
                push_cell(out, cell, k);
            }
        }
    }
}

/// Draws one weight matrix, ignoring any recycling window.
pub fn draw<R: Rng + ?Sized>(scheme: &SchemeSpec, rng: &mut R) -> ComponentSelection {
    let mut sel = ComponentSelection::default();
    draw_into(scheme, rng, &mut sel.pairs);
    sel
}

/// Scramble state shared by the iterations of one recycling window.
#[derive(Debug, Clone)]
pub struct RecycleBuffer {
    /// Permutation of observation indices (`standard`) or cell indices (`hyper`).
    scramble: Vec<usize>,
    /// Items reserved for the current window, in use order.
    window: Vec<usize>,
    /// Calls served from the current window.
    used: usize,
    /// Effective window length.
    length: usize,
}

impl RecycleBuffer {
    pub fn new(scheme: &SchemeSpec) -> Result<Self> {
        let l = scheme
            .recycle_window
            .ok_or_else(|| Error::Config("scheme has no recycling window".into()))?;
        let items = match scheme.kind {
            SchemeKind::Standard => scheme.n,
            SchemeKind::Hyper => scheme.n * scheme.k,
            SchemeKind::Bernoulli => return Err(Error::UnsupportedScheme(scheme.kind.to_string())),
        };
        // One scramble supplies at most n windows' worth of draws.
        let length = l.min(scheme.n);
        Ok(Self {
            scramble: (0..items).collect(),
            window: Vec::new(),
            used: length,
            length,
        })
    }

    pub fn window_length(&self) -> usize {
        self.length
    }

    fn refresh<R: Rng + ?Sized>(&mut self, rng: &mut R, per_call: usize) {
        let (taken, _) = self.scramble.partial_shuffle(rng, self.length * per_call);
        self.window.clear();
        self.window.extend_from_slice(taken);
        self.used = 0;
    }
}

/// Next selection from a recycled scramble. The scramble is redrawn eagerly
/// at the start of every window of `l` calls.
pub fn draw_recycled<R: Rng + ?Sized>(
    scheme: &SchemeSpec,
    rng: &mut R,
    buffer: &mut RecycleBuffer,
) -> Result<ComponentSelection> {
    let mut sel = ComponentSelection::default();
    draw_recycled_into(scheme, rng, buffer, &mut sel.pairs)?;
    Ok(sel)
}

fn draw_recycled_into<R: Rng + ?Sized>(
    scheme: &SchemeSpec,
    rng: &mut R,
    buffer: &mut RecycleBuffer,
    out: &mut Vec<ComponentIndex>,
) -> Result<()> {
    out.clear();
    let k = scheme.k;
    match scheme.kind {
        SchemeKind::Bernoulli => return Err(Error::UnsupportedScheme(scheme.kind.to_string())),
        SchemeKind::Standard => {
            if buffer.used == buffer.length {
                buffer.refresh(rng, 1);
            }
            let i = buffer.window[buffer.used];
            out.extend((0..k).map(|c| ComponentIndex::new(i, c)));
        }
        SchemeKind::Hyper => {
            if buffer.used == buffer.length {
                buffer.refresh(rng, k);
            }
            let start = buffer.used * k;
            for &cell in &buffer.window[start..start + k] {
                push_cell(out, cell, k);
            }
        }
    }
    buffer.used += 1;
    Ok(())
}

/// Stateful sampler used by the optimiser: dispatches to plain or recycled
/// draws and reuses its selection buffer across iterations.
#[derive(Debug, Clone)]
pub struct Sampler {
    scheme: SchemeSpec,
    buffer: Option<RecycleBuffer>,
}

impl Sampler {
    pub fn new(scheme: SchemeSpec) -> Result<Self> {
        let buffer = match scheme.recycle_window {
            Some(_) => Some(RecycleBuffer::new(&scheme)?),
            None => None,
        };
        Ok(Self { scheme, buffer })
    }

    pub fn scheme(&self) -> &SchemeSpec {
        &self.scheme
    }

    pub fn next_into<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut ComponentSelection) -> Result<()> {
        match &mut self.buffer {
            Some(buf) => draw_recycled_into(&self.scheme, rng, buf, &mut out.pairs)?,
            None => draw_into(&self.scheme, rng, &mut out.pairs),
        }
        out.iteration += 1;
        Ok(())
    }
}
