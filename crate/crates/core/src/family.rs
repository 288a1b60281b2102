//! Model families and lexicographic subset enumeration.
//!
//! Indices are 0-based in the library API; text interfaces (model list files,
//! reports) use 1-based indices.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// Lexicographic `k`-subsets of `start..n`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    idx: Vec<usize>,
    fresh: bool,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Self::in_range(0, n, k)
    }

    pub fn in_range(start: usize, n: usize, k: usize) -> Self {
        let done = k == 0 || start + k > n;
        Self { n, idx: (start..start + k).collect(), fresh: true, done }
    }

    /// Advances and returns the current subset without allocating.
    pub fn next_slice(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if self.fresh {
            self.fresh = false;
            return Some(&self.idx);
        }
        let k = self.idx.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in (i + 1)..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                return Some(&self.idx);
            }
        }
        self.done = true;
        None
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        self.next_slice().map(|s| s.to_vec())
    }
}

/// Exact binomial coefficient, `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Binomial coefficient as `f64`, exact when it fits in `u128`.
pub fn binomial_f64(n: u64, k: u64) -> f64 {
    match binomial(n, k) {
        Some(v) => v as f64,
        None => ln_binomial(n, k).exp(),
    }
}

/// Natural log of the binomial coefficient.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    match binomial(n, k) {
        Some(v) if v < (1u128 << 100) => (v as f64).ln(),
        _ => statrs::function::factorial::ln_binomial(n, k),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// All non-empty subsets of size at most `s`.
    SparseUpTo(usize),
    /// Sorted, de-duplicated list of models, each sorted ascending.
    Explicit(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelFamily {
    p: usize,
    kind: FamilyKind,
}

/// Whether an enumeration may exceed the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationOptions {
    pub cap: u64,
    pub streaming: bool,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self { cap: DEFAULT_ENUMERATION_CAP, streaming: false }
    }
}

impl ModelFamily {
    pub fn sparse(p: usize, s: usize) -> Result<Self> {
        if p == 0 || s == 0 || s > p {
            return Err(Error::InvalidFamily(format!("sparse family needs 1 <= s <= p, got s={s}, p={p}")));
        }
        Ok(Self { p, kind: FamilyKind::SparseUpTo(s) })
    }

    /// Models given with 0-based indices.
    pub fn explicit(p: usize, models: Vec<Vec<usize>>) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidFamily("p must be positive".into()));
        }
        if models.is_empty() {
            return Err(Error::InvalidFamily("explicit family is empty".into()));
        }
        let mut out = Vec::with_capacity(models.len());
        for mut m in models {
            if m.is_empty() {
                return Err(Error::InvalidFamily("models must be non-empty".into()));
            }
            m.sort_unstable();
            if m.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidFamily(format!("model {:?} repeats an index", one_based(&m))));
            }
            if let Some(&bad) = m.iter().find(|&&i| i >= p) {
                return Err(Error::InvalidFamily(format!("index {} outside 1..={p}", bad + 1)));
            }
            out.push(m);
        }
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        if out.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidFamily("duplicate model in explicit family".into()));
        }
        Ok(Self { p, kind: FamilyKind::Explicit(out) })
    }

    /// One model per line, 1-based indices separated by commas or whitespace;
    /// blank lines and `#` comments are ignored.
    pub fn parse_explicit(p: usize, text: &str) -> Result<Self> {
        let mut models = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let m = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| match t.parse::<usize>() {
                    Ok(i) if i >= 1 => Ok(i - 1),
                    _ => Err(Error::Parse(format!("line {}: bad index {t:?}", lineno + 1))),
                })
                .collect::<Result<Vec<usize>>>()?;
            models.push(m);
        }
        Self::explicit(p, models)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn max_model_size(&self) -> usize {
        match &self.kind {
            FamilyKind::SparseUpTo(s) => *s,
            FamilyKind::Explicit(ms) => ms.iter().map(Vec::len).max().unwrap_or(0),
        }
    }

    /// Number of models, as `f64` (exact below 2^53).
    pub fn model_count(&self) -> f64 {
        match &self.kind {
            FamilyKind::SparseUpTo(s) => (1..=*s).map(|i| binomial_f64(self.p as u64, i as u64)).sum(),
            FamilyKind::Explicit(ms) => ms.len() as f64,
        }
    }

    /// Number of `(M, i)` pairs, `sum |M|`.
    pub fn pair_count(&self) -> f64 {
        match &self.kind {
            FamilyKind::SparseUpTo(s) => {
                (1..=*s).map(|i| i as f64 * binomial_f64(self.p as u64, i as u64)).sum()
            }
            FamilyKind::Explicit(ms) => ms.iter().map(|m| m.len() as f64).sum(),
        }
    }

    /// Lazily iterates members in `(size, lexicographic)` order.
    pub fn models(&self) -> Box<dyn Iterator<Item = Vec<usize>> + Send + '_> {
        match &self.kind {
            FamilyKind::SparseUpTo(s) => {
                let p = self.p;
                Box::new((1..=*s).flat_map(move |k| Combinations::new(p, k)))
            }
            FamilyKind::Explicit(ms) => Box::new(ms.iter().cloned()),
        }
    }
}

/// Iterator over the family after checking the `(M, i)` pair count against
/// the cap.
pub fn enumerate_models(
    family: &ModelFamily,
    opts: EnumerationOptions,
) -> Result<Box<dyn Iterator<Item = Vec<usize>> + Send + '_>> {
    let pairs = family.pair_count();
    if !opts.streaming && pairs > opts.cap as f64 {
        return Err(Error::EnumerationLimit { count: pairs, cap: opts.cap });
    }
    Ok(family.models())
}

pub(crate) fn one_based(m: &[usize]) -> Vec<usize> {
    m.iter().map(|i| i + 1).collect()
}
