//! Contrast vectors `w_{M,i}` and the deduplicated direction set used by the
//! Monte Carlo sampler.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::family::{enumerate_models, one_based, EnumerationOptions, ModelFamily};

pub const RANK_TOLERANCE: f64 = 1e-10;

/// Models are processed in batches of this size; results are merged in
/// enumeration order so the output never depends on the worker count.
const BATCH: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contrast {
    pub model: Vec<usize>,
    pub covariate: usize,
    /// 1-based rank of `covariate` within the sorted model.
    pub rank_in_model: usize,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    #[default]
    FailFast,
    SkipWithReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContrastOptions {
    pub rank_policy: RankPolicy,
    pub enumeration: EnumerationOptions,
}

/// Estimator rows of one model restricted to the rows where some model column
/// is nonzero. `v` vanishes outside that support because it lies in the span
/// of the model columns.
struct ModelRows {
    support: Vec<usize>,
    /// `|M| x support.len()`, row `k` is `v` for the `k`-th model column.
    v: DMatrix<f64>,
}

fn model_rows(x: &DMatrix<f64>, model: &[usize]) -> Result<ModelRows> {
    let n = x.nrows();
    let m = model.len();
    let support: Vec<usize> = (0..n).filter(|&row| model.iter().any(|&j| x[(row, j)] != 0.0)).collect();
    let deficient = || Error::ModelRankDeficient { model: one_based(model) };
    if support.len() < m {
        return Err(deficient());
    }
    let xm = DMatrix::from_fn(support.len(), m, |a, b| x[(support[a], model[b])]);
    let qr = xm.qr();
    let r = qr.r();
    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin <= RANK_TOLERANCE * smax {
        return Err(deficient());
    }
    let q = qr.q();
    // (X^t X)^{-1} X^t = R^{-1} Q^t
    let v = r.solve_upper_triangular(&q.transpose()).ok_or_else(deficient)?;
    Ok(ModelRows { support, v })
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|a| a / norm).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// All contrasts of one model, in the order of the sorted model.
pub fn model_contrasts(x: &DesignMatrix, model: &[usize]) -> Result<Vec<Contrast>> {
    let mut sorted = model.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.is_empty() || sorted.len() != model.len() || sorted[sorted.len() - 1] >= x.p() {
        return Err(Error::InvalidFamily(format!("bad model {:?} for p={}", one_based(model), x.p())));
    }
    let rows = model_rows(x.matrix(), &sorted)?;
    let n = x.n();
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut v = vec![0.0; n];
            for (a, &row) in rows.support.iter().enumerate() {
                v[row] = rows.v[(k, a)];
            }
            let w = normalized(&v);
            Contrast { model: sorted.clone(), covariate: i, rank_in_model: k + 1, v, w }
        })
        .collect())
}

/// Contrast for covariate `i` in model `model` (0-based indices).
pub fn contrast(x: &DesignMatrix, model: &[usize], i: usize) -> Result<Contrast> {
    if !model.contains(&i) {
        return Err(Error::InvalidFamily(format!("covariate {} not in model {:?}", i + 1, one_based(model))));
    }
    let all = model_contrasts(x, model)?;
    Ok(all.into_iter().find(|c| c.covariate == i).expect("covariate is in the model"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastSet {
    pub contrasts: Vec<Contrast>,
    /// Rank-deficient models dropped under [`RankPolicy::SkipWithReport`].
    pub skipped: Vec<Vec<usize>>,
}

pub fn contrast_set(x: &DesignMatrix, family: &ModelFamily, opts: ContrastOptions) -> Result<ContrastSet> {
    check_family(x, family)?;
    let mut contrasts = Vec::new();
    let mut skipped = Vec::new();
    for model in enumerate_models(family, opts.enumeration)? {
        match model_contrasts(x, &model) {
            Ok(cs) => contrasts.extend(cs),
            Err(Error::ModelRankDeficient { .. }) if opts.rank_policy == RankPolicy::SkipWithReport => {
                skipped.push(model)
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ContrastSet { contrasts, skipped })
}

fn check_family(x: &DesignMatrix, family: &ModelFamily) -> Result<()> {
    if family.p() != x.p() {
        return Err(Error::InvalidFamily(format!("family has p={} but design has p={}", family.p(), x.p())));
    }
    Ok(())
}

impl ContrastSet {
    pub fn len(&self) -> usize {
        self.contrasts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contrasts.is_empty()
    }

    pub fn directions(&self) -> DirectionSet {
        let n = self.contrasts.first().map_or(0, |c| c.w.len());
        let mut b = DirectionBuilder::new(n);
        for c in &self.contrasts {
            b.push(&c.w);
        }
        b.finish(self.skipped.clone())
    }
}

/// Unit directions `w` with duplicates and sign flips merged, stored as sparse
/// rows. `max |w^t xi|` over this set equals the maximum over the full
/// contrast set up to the key resolution of 2^-36 per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    n: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    /// Number of `(M, i)` pairs seen, including duplicates.
    pub pairs: u64,
    /// Pairs whose contrast was zero.
    pub zero_pairs: u64,
    pub skipped: Vec<Vec<usize>>,
}

const KEY_SCALE: f64 = (1u64 << 36) as f64;

struct DirectionBuilder {
    n: usize,
    seen: HashMap<Vec<(u32, i64)>, ()>,
    set: DirectionSet,
}

impl DirectionBuilder {
    fn new(n: usize) -> Self {
        Self {
            n,
            seen: HashMap::new(),
            set: DirectionSet {
                n,
                offsets: vec![0],
                indices: Vec::new(),
                values: Vec::new(),
                pairs: 0,
                zero_pairs: 0,
                skipped: Vec::new(),
            },
        }
    }

    fn push(&mut self, w: &[f64]) {
        debug_assert_eq!(w.len(), self.n);
        self.push_sparse(w.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, a)| (j as u32, *a)));
    }

    fn push_sparse(&mut self, entries: impl Iterator<Item = (u32, f64)>) {
        let entries: Vec<(u32, f64)> = entries.collect();
        self.set.pairs += 1;
        if entries.is_empty() {
            self.set.zero_pairs += 1;
            return;
        }
        let sign = if entries[0].1 < 0.0 { -1.0 } else { 1.0 };
        let key: Vec<(u32, i64)> = entries
            .iter()
            .map(|&(j, a)| (j, (sign * a * KEY_SCALE).round() as i64))
            .filter(|&(_, q)| q != 0)
            .collect();
        if self.seen.insert(key, ()).is_some() {
            return;
        }
        for (j, a) in entries {
            self.set.indices.push(j);
            self.set.values.push(sign * a);
        }
        self.set.offsets.push(self.set.indices.len());
    }

    fn finish(mut self, skipped: Vec<Vec<usize>>) -> DirectionSet {
        self.set.skipped = skipped;
        self.set
    }
}

type SparseW = Vec<(u32, f64)>;

fn batch_directions(x: &DMatrix<f64>, model: &[usize]) -> Result<Vec<SparseW>> {
    let rows = model_rows(x, model)?;
    Ok((0..model.len())
        .map(|k| {
            let norm = rows.v.row(k).norm();
            if norm > 0.0 {
                rows.support.iter().enumerate().map(|(a, &row)| (row as u32, rows.v[(k, a)] / norm)).collect()
            } else {
                Vec::new()
            }
        })
        .collect())
}

impl DirectionSet {
    /// Streams the family in batches without materializing every contrast.
    pub fn build(x: &DesignMatrix, family: &ModelFamily, opts: ContrastOptions) -> Result<Self> {
        check_family(x, family)?;
        let mat = x.matrix();
        let mut models = enumerate_models(family, opts.enumeration)?;
        let mut b = DirectionBuilder::new(x.n());
        let mut skipped = Vec::new();
        loop {
            let batch: Vec<Vec<usize>> = models.by_ref().take(BATCH).collect();
            if batch.is_empty() {
                break;
            }
            let results: Vec<Result<Vec<SparseW>>> = batch.par_iter().map(|m| batch_directions(mat, m)).collect();
            for (model, res) in batch.into_iter().zip(results) {
                match res {
                    Ok(ws) => {
                        for w in ws {
                            b.push_sparse(w.into_iter().filter(|(_, a)| *a != 0.0));
                        }
                    }
                    Err(Error::ModelRankDeficient { .. }) if opts.rank_policy == RankPolicy::SkipWithReport => {
                        skipped.push(model)
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(b.finish(skipped))
    }

    /// Ambient dimension (rows of the design).
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Direction `d` as `(row, value)` pairs.
    pub fn direction(&self, d: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[d], self.offsets[d + 1]);
        self.indices[a..b].iter().zip(&self.values[a..b]).map(|(&j, &v)| (j as usize, v))
    }

    /// `max_d |w_d^t xi|`, or 0 for an empty set.
    pub fn max_abs_dot(&self, xi: &[f64]) -> f64 {
        debug_assert_eq!(xi.len(), self.n);
        let mut best: f64 = 0.0;
        for d in 0..self.len() {
            let (a, b) = (self.offsets[d], self.offsets[d + 1]);
            let mut acc = 0.0;
            for (&j, &v) in self.indices[a..b].iter().zip(&self.values[a..b]) {
                acc += v * xi[j as usize];
            }
            best = best.max(acc.abs());
        }
        best
    }
}
