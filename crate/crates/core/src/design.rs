//! Design matrices: construction, CSV I/O, ensemble specs and the `corr`
//! normalization.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::linalg::check_symmetric;

/// Stream id reserved for drawing Gaussian design entries, so that a design
/// seed never collides with Monte Carlo replicate streams `0, 1, 2, ...`.
const DESIGN_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    File { path: String },
    Identity,
    GaussianIid { seed: u64 },
    Equicorr { c: f64, k: usize },
    Explicit,
}

/// An `n x p` real design matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    provenance: Provenance,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Domain("design matrix must have n, p >= 1".into()));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % x.nrows(), pos / x.nrows());
            return Err(Error::Domain(format!("non-finite entry at row {}, column {}", i + 1, j + 1)));
        }
        Ok(Self { x, provenance })
    }

    pub fn from_matrix(x: DMatrix<f64>) -> Result<Self> {
        Self::new(x, Provenance::Explicit)
    }

    /// Builds an `n x p` design from row-major values.
    pub fn from_row_major(n: usize, p: usize, values: &[f64]) -> Result<Self> {
        if n.checked_mul(p) != Some(values.len()) {
            return Err(Error::Domain(format!("expected {n} x {p} values, got {}", values.len())));
        }
        Self::new(DMatrix::from_row_slice(n, p, values), Provenance::Explicit)
    }

    pub fn identity(p: usize) -> Self {
        Self { x: DMatrix::identity(p.max(1), p.max(1)), provenance: Provenance::Identity }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.x.column_iter().map(|c| c.norm()).collect()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.x.tr_mul(&self.x)
    }

    /// `X D` for a diagonal `D` given by `scales`.
    pub fn scale_columns(&self, scales: &[f64]) -> Result<Self> {
        if scales.len() != self.p() {
            return Err(Error::Domain("one scale per column required".into()));
        }
        let mut x = self.x.clone();
        for (mut col, &s) in x.column_iter_mut().zip(scales) {
            col *= s;
        }
        Self::new(x, Provenance::Explicit)
    }

    /// Fails with `ZeroColumn` (1-based index) if any listed column vanishes.
    pub fn require_nonzero_columns(&self, columns: impl IntoIterator<Item = usize>) -> Result<()> {
        for j in columns {
            if self.x.column(j).norm() == 0.0 {
                return Err(Error::ZeroColumn { index: j + 1 });
            }
        }
        Ok(())
    }

    /// Comma-separated, no header, one row per observation.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| {
                        Error::Parse(format!("line {}: cannot parse {:?} as a number", lineno + 1, f.trim()))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::Parse(format!(
                        "line {}: expected {} columns, found {}",
                        lineno + 1,
                        first.len(),
                        row.len()
                    )));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse("empty design file".into()));
        }
        let (n, p) = (rows.len(), rows[0].len());
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_matrix(DMatrix::from_row_slice(n, p, &flat))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut d = Self::parse_csv(&text)?;
        d.provenance = Provenance::File { path: path.display().to_string() };
        Ok(d)
    }

    /// Shortest round-trip decimal representation, LF line endings.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for row in self.x.row_iter() {
            let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// `diag(A)^{+1/2} A diag(A)^{+1/2}`; zero diagonal entries get zero scale.
pub fn corr(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(a)?;
    let n = a.nrows();
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let d = a[(i, i)];
        if d < 0.0 {
            return Err(Error::NegativeDiagonal { index: i + 1, value: d });
        }
        if d > 0.0 {
            scale[i] = 1.0 / d.sqrt();
        }
    }
    let mut out = DMatrix::from_fn(n, n, |i, j| scale[i] * a[(i, j)] * scale[j]);
    for i in 0..n {
        out[(i, i)] = if a[(i, i)] > 0.0 { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// The `p x p` design whose first `p - 1` columns are canonical basis vectors
/// and whose last column is `(c, ..., c [k times], 0, ..., 0, sqrt(1 - k c^2))`.
pub fn make_equicorr(p: usize, k: usize, c: f64) -> Result<DesignMatrix> {
    if k == 0 || k >= p {
        return Err(Error::InvalidK { k, p });
    }
    let kc2 = k as f64 * c * c;
    if !c.is_finite() || kc2 >= 1.0 {
        return Err(Error::InvalidCorrelation { kc2 });
    }
    let mut x = DMatrix::identity(p, p);
    for i in 0..k {
        x[(i, p - 1)] = c;
    }
    x[(p - 1, p - 1)] = (1.0 - kc2).sqrt();
    Ok(DesignMatrix { x, provenance: Provenance::Equicorr { c, k } })
}

/// I.i.d. `N(0, 1/n)` entries, drawn row by row from a dedicated stream.
pub fn make_gaussian(n: usize, p: usize, seed: u64) -> DesignMatrix {
    let (n, p) = (n.max(1), p.max(1));
    let mut rng = RngStream::new(seed, DESIGN_STREAM).rng();
    let scale = 1.0 / (n as f64).sqrt();
    let flat: Vec<f64> = (0..n * p).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    DesignMatrix { x: DMatrix::from_row_slice(n, p, &flat), provenance: Provenance::GaussianIid { seed } }
}

/// Textual ensemble descriptions such as `gauss:n=200,p=40,seed=7`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleSpec {
    Identity { p: usize },
    Gauss { n: usize, p: usize, seed: u64 },
    Equicorr { p: usize, k: usize, c: f64 },
}

impl EnsembleSpec {
    pub fn build(&self) -> Result<DesignMatrix> {
        match *self {
            EnsembleSpec::Identity { p } => Ok(DesignMatrix::identity(p)),
            EnsembleSpec::Gauss { n, p, seed } => Ok(make_gaussian(n, p, seed)),
            EnsembleSpec::Equicorr { p, k, c } => make_equicorr(p, k, c),
        }
    }

    pub fn p(&self) -> usize {
        match *self {
            EnsembleSpec::Identity { p } | EnsembleSpec::Gauss { p, .. } | EnsembleSpec::Equicorr { p, .. } => p,
        }
    }
}

impl fmt::Display for EnsembleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnsembleSpec::Identity { p } => write!(f, "identity:p={p}"),
            EnsembleSpec::Gauss { n, p, seed } => write!(f, "gauss:n={n},p={p},seed={seed}"),
            EnsembleSpec::Equicorr { p, k, c } => write!(f, "equicorr:p={p},k={k},c={c}"),
        }
    }
}

impl FromStr for EnsembleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Parse(format!("ensemble spec {s:?}: {why}"));
        let (kind, rest) = s.trim().split_once(':').ok_or_else(|| bad("expected <kind>:<key>=<value>,..."))?;
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(bad("duplicate key"));
            }
        }
        let mut take = |key: &str| kv.remove(key).ok_or_else(|| bad(&format!("missing {key}")));
        fn num<T: FromStr>(v: String, key: &str, s: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Parse(format!("ensemble spec {s:?}: bad value for {key}")))
        }
        let spec = match kind.trim() {
            "identity" => EnsembleSpec::Identity { p: num(take("p")?, "p", s)? },
            "gauss" | "gaussian" => EnsembleSpec::Gauss {
                n: num(take("n")?, "n", s)?,
                p: num(take("p")?, "p", s)?,
                seed: num(take("seed")?, "seed", s)?,
            },
            "equicorr" => EnsembleSpec::Equicorr {
                p: num(take("p")?, "p", s)?,
                k: num(take("k")?, "k", s)?,
                c: num(take("c")?, "c", s)?,
            },
            other => return Err(bad(&format!("unknown kind {other:?}"))),
        };
        if let Some(extra) = kv.keys().next() {
            return Err(bad(&format!("unexpected key {extra:?}")));
        }
        let dims_ok = match spec {
            EnsembleSpec::Identity { p } => p >= 1,
            EnsembleSpec::Gauss { n, p, .. } => n >= 1 && p >= 1,
            EnsembleSpec::Equicorr { p, .. } => p >= 2,
        };
        if !dims_ok {
            return Err(bad("dimensions must be positive"));
        }
        Ok(spec)
    }
}
