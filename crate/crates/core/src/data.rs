//! Integer data matrices with an optional holdout partition.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Binary,
    Count,
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::Binary => "binary",
            DataKind::Count => "count",
        })
    }
}

impl FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(DataKind::Binary),
            "count" | "counts" => Ok(DataKind::Count),
            other => Err(Error::Config(format!("unknown data kind `{other}`"))),
        }
    }
}

/// Immutable `n x p` matrix of non-negative integers, stored row-major.
///
/// Rows flagged in the holdout mask are excluded from every fitting routine;
/// [`Dataset::train_rows`] lists the rows that fitting may touch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<u32>,
    n: usize,
    p: usize,
    kind: DataKind,
    holdout: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(values: Vec<u32>, n: usize, p: usize, kind: DataKind) -> Result<Self> {
        if n == 0 {
            return Err(Error::Data("dataset needs at least one row".into()));
        }
        if p < 2 {
            return Err(Error::Data(format!("dataset needs at least two columns, got {p}")));
        }
        if values.len() != n * p {
            return Err(Error::Data(format!(
                "expected {} values for a {n} x {p} matrix, got {}",
                n * p,
                values.len()
            )));
        }
        if kind == DataKind::Binary {
            if let Some(pos) = values.iter().position(|&v| v > 1) {
                return Err(Error::Data(format!(
                    "binary dataset has value {} at row {}, column {}",
                    values[pos],
                    pos / p,
                    pos % p
                )));
            }
        }
        Ok(Self {
            values,
            n,
            p,
            kind,
            holdout: None,
        })
    }

    pub fn from_rows(rows: &[Vec<u32>], kind: DataKind) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Data(format!("row {bad} has {} columns, expected {p}", rows[bad].len())));
        }
        Self::new(rows.concat(), rows.len(), p, kind)
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> DataKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.values.chunks_exact(self.p)
    }

    pub fn holdout_mask(&self) -> Option<&[bool]> {
        self.holdout.as_deref()
    }

    pub fn has_holdout(&self) -> bool {
        self.holdout.as_ref().is_some_and(|m| m.iter().any(|&h| h))
    }

    pub fn with_holdout_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n {
            return Err(Error::Data(format!(
                "holdout mask has {} entries for {} rows",
                mask.len(),
                self.n
            )));
        }
        if mask.iter().all(|&h| h) {
            return Err(Error::Data("holdout mask leaves no training rows".into()));
        }
        self.holdout = Some(mask);
        Ok(self)
    }

    /// Marks a uniformly random `fraction` of the rows as holdout.
    pub fn with_random_holdout(self, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("holdout fraction {fraction} must lie in [0, 1)")));
        }
        let n_hold = (fraction * self.n as f64).round() as usize;
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut StreamKey::new(seed, 0, Purpose::Split).rng());
        let mut mask = vec![false; self.n];
        for &i in &order[..n_hold] {
            mask[i] = true;
        }
        self.with_holdout_mask(mask)
    }

    /// Row indices that fitting routines may use.
    pub fn train_rows(&self) -> Vec<usize> {
        match &self.holdout {
            None => (0..self.n).collect(),
            Some(mask) => (0..self.n).filter(|&i| !mask[i]).collect(),
        }
    }

    pub fn holdout_rows(&self) -> Vec<usize> {
        match &self.holdout {
            None => Vec::new(),
            Some(mask) => (0..self.n).filter(|&i| mask[i]).collect(),
        }
    }

    /// New dataset made of the given rows, without a holdout mask.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self::new(values, rows.len(), self.p, self.kind)
    }

    /// Reads a headerless integer CSV. A first line of the form
    /// `# kind=binary` (or `count`) declares the kind; otherwise `kind` must
    /// be supplied.
    pub fn read_csv<R: Read>(mut reader: R, kind: Option<DataKind>) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let mut declared = None;
        let body = match text.lines().next() {
            Some(first) if first.trim_start().starts_with('#') => {
                for token in first.trim_start_matches(|c: char| c == '#' || c.is_whitespace()).split_whitespace() {
                    if let Some(v) = token.strip_prefix("kind=") {
                        declared = Some(v.parse::<DataKind>()?);
                    }
                }
                &text[first.len()..]
            }
            _ => text.as_str(),
        };
        let kind = kind.or(declared).ok_or_else(|| {
            Error::Config("data kind not declared; pass it explicitly or add a `# kind=...` line".into())
        })?;

        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Data(e.to_string()))?;
            let row = record
                .iter()
                .map(|field| {
                    field
                        .parse::<u32>()
                        .map_err(|_| Error::Data(format!("record {line}: `{field}` is not a non-negative integer")))
                })
                .collect::<Result<Vec<u32>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows, kind)
    }

    pub fn write_csv<W: Write>(&self, mut writer: W, with_kind_line: bool) -> Result<()> {
        if with_kind_line {
            writeln!(writer, "# kind={}", self.kind)?;
        }
        let mut line = String::new();
        for row in self.rows() {
            line.clear();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            line.push('\n');
            writer.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}
