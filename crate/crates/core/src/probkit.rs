//! Dense discrete distributions and exact information measures, all in bits.
//!
//! Containers validate on construction: entries must be non-negative and the
//! total must lie within [`NORM_TOL`] of one. Small drift is renormalized away,
//! anything larger is rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a distribution.
pub const NORM_TOL: f64 = 1e-9;

/// `-p log2 p` with the `0 log 0 = 0` convention.
#[inline]
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

/// Shannon entropy of a raw probability slice. No validation.
pub(crate) fn entropy_raw(p: &[f64]) -> f64 {
    p.iter().map(|&x| plogp(x)).sum()
}

fn check_and_normalize(mut p: Vec<f64>) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    for (i, &x) in p.iter().enumerate() {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {x}, expected a finite non-negative value"
            )));
        }
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidDistribution(format!(
            "entries sum to {total}, expected 1 within {NORM_TOL}"
        )));
    }
    if total != 1.0 {
        for x in p.iter_mut() {
            *x /= total;
        }
    }
    Ok(p)
}

/// Probability vector over `len` outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Dist1 {
    p: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Dist1 {
    type Error = Error;
    fn try_from(p: Vec<f64>) -> Result<Self> {
        Dist1::new(p)
    }
}

impl From<Dist1> for Vec<f64> {
    fn from(d: Dist1) -> Self {
        d.p
    }
}

impl Dist1 {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        Ok(Dist1 {
            p: check_and_normalize(p)?,
        })
    }

    pub(crate) fn new_unchecked(p: Vec<f64>) -> Self {
        Dist1 { p }
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0, "uniform distribution needs at least one outcome");
        Dist1 {
            p: vec![1.0 / len as f64; len],
        }
    }

    pub fn point_mass(len: usize, at: usize) -> Self {
        assert!(at < len);
        let mut p = vec![0.0; len];
        p[at] = 1.0;
        Dist1 { p }
    }

    /// Normalizes arbitrary non-negative weights. Fails if they are all zero.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}; cannot normalize"
            )));
        }
        Dist1::new(w.into_iter().map(|x| x / total).collect())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, i: usize) -> f64 {
        self.p[i]
    }
}

/// Joint distribution over a `rows x cols` grid, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dist2 {
    rows: usize,
    cols: usize,
    p: Vec<f64>,
}

impl Dist2 {
    pub fn new(rows: usize, cols: usize, p: Vec<f64>) -> Result<Self> {
        if rows * cols != p.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} table needs {} entries, got {}",
                rows * cols,
                p.len()
            )));
        }
        Ok(Dist2 {
            rows,
            cols,
            p: check_and_normalize(p)?,
        })
    }

    /// Outer product of two marginals.
    pub fn product(a: &Dist1, b: &Dist1) -> Self {
        let mut p = Vec::with_capacity(a.len() * b.len());
        for &x in a.probs() {
            for &y in b.probs() {
                p.push(x * y);
            }
        }
        Dist2 {
            rows: a.len(),
            cols: b.len(),
            p,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.cols + j]
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn row_marginal(&self) -> Dist1 {
        let mut m = vec![0.0; self.rows];
        for (i, row) in self.p.chunks_exact(self.cols).enumerate() {
            m[i] = row.iter().sum();
        }
        Dist1 { p: m }
    }

    pub fn col_marginal(&self) -> Dist1 {
        let mut m = vec![0.0; self.cols];
        for row in self.p.chunks_exact(self.cols) {
            for (acc, &x) in m.iter_mut().zip(row) {
                *acc += x;
            }
        }
        Dist1 { p: m }
    }

    pub fn transpose(&self) -> Dist2 {
        let mut p = vec![0.0; self.p.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                p[j * self.rows + i] = self.p[i * self.cols + j];
            }
        }
        Dist2 {
            rows: self.cols,
            cols: self.rows,
            p,
        }
    }

    /// Largest absolute difference between `p(i,j)` and `p(j,i)`.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Axis of a [`Dist3`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    First,
    Second,
    Third,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::First => 0,
            Axis::Second => 1,
            Axis::Third => 2,
        }
    }

    fn remaining(a: Axis, b: Axis) -> Axis {
        match a.index() + b.index() {
            1 => Axis::Third,
            2 => Axis::Second,
            _ => Axis::First,
        }
    }
}

/// Joint distribution over a 3-way grid, stored with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dist3 {
    dims: [usize; 3],
    p: Vec<f64>,
}

impl Dist3 {
    pub fn new(dims: [usize; 3], p: Vec<f64>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if n != p.len() {
            return Err(Error::ShapeMismatch(format!(
                "{dims:?} tensor needs {n} entries, got {}",
                p.len()
            )));
        }
        Ok(Dist3 {
            dims,
            p: check_and_normalize(p)?,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.p[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    fn for_each(&self, mut f: impl FnMut([usize; 3], f64)) {
        let [_, d1, d2] = self.dims;
        for (flat, &x) in self.p.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            f([flat / (d1 * d2), (flat / d2) % d1, flat % d2], x);
        }
    }

    pub fn marginal(&self, axis: Axis) -> Dist1 {
        let a = axis.index();
        let mut m = vec![0.0; self.dims[a]];
        self.for_each(|idx, x| m[idx[a]] += x);
        Dist1 { p: m }
    }

    /// Joint of two axes, in the order given.
    pub fn marginal2(&self, rows: Axis, cols: Axis) -> Result<Dist2> {
        if rows == cols {
            return Err(Error::AxisCollision(rows));
        }
        let (r, c) = (rows.index(), cols.index());
        let nc = self.dims[c];
        let mut m = vec![0.0; self.dims[r] * nc];
        self.for_each(|idx, x| m[idx[r] * nc + idx[c]] += x);
        Ok(Dist2 {
            rows: self.dims[r],
            cols: nc,
            p: m,
        })
    }

    /// Views the tensor as a joint of `axis` against the pair of other axes.
    pub fn split(&self, axis: Axis) -> Dist2 {
        let a = axis.index();
        let others: Vec<usize> = (0..3).filter(|&i| i != a).collect();
        let inner = self.dims[others[1]];
        let cols = self.dims[others[0]] * inner;
        let mut m = vec![0.0; self.dims[a] * cols];
        self.for_each(|idx, x| m[idx[a] * cols + idx[others[0]] * inner + idx[others[1]]] += x);
        Dist2 {
            rows: self.dims[a],
            cols,
            p: m,
        }
    }
}

/// Shannon entropy in bits.
pub fn entropy(d: &Dist1) -> f64 {
    entropy_raw(d.probs())
}

/// Mutual information between the row and column variables of a joint.
pub fn mutual_information(j: &Dist2) -> f64 {
    let a = j.row_marginal();
    let b = j.col_marginal();
    let mut mi = 0.0;
    for i in 0..j.rows {
        let pa = a.p[i];
        if pa == 0.0 {
            continue;
        }
        for k in 0..j.cols {
            let pj = j.get(i, k);
            if pj > 0.0 {
                mi += pj * (pj / (pa * b.p[k])).log2();
            }
        }
    }
    mi.max(0.0)
}

/// `I(target; other | given)` where `other` is the remaining axis.
pub fn conditional_mutual_information(j: &Dist3, target: Axis, given: Axis) -> Result<f64> {
    if target == given {
        return Err(Error::AxisCollision(target));
    }
    let other = Axis::remaining(target, given);
    let h_tg = entropy_raw(j.marginal2(target, given)?.probs());
    let h_og = entropy_raw(j.marginal2(other, given)?.probs());
    let h_g = entropy_raw(j.marginal(given).probs());
    let h_all = entropy_raw(j.probs());
    Ok((h_tg + h_og - h_all - h_g).max(0.0))
}

fn kl_raw(a: &[f64], b: &[f64]) -> Result<f64> {
    let mut d = 0.0;
    for (i, (&p, &q)) in a.iter().zip(b).enumerate() {
        if p > 0.0 {
            if q <= 0.0 {
                return Err(Error::NotAbsolutelyContinuous { index: i, p });
            }
            d += p * (p / q).log2();
        }
    }
    Ok(d.max(0.0))
}

/// `D_KL(a || b)` in bits.
pub fn kl_divergence(a: &Dist2, b: &Dist2) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "KL between {:?} and {:?} tables",
            a.shape(),
            b.shape()
        )));
    }
    kl_raw(&a.p, &b.p)
}

/// Jensen-Shannon divergence in bits, bounded by one.
pub fn js_divergence(a: &Dist1, b: &Dist1) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "JSD between lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(js_raw(&a.p, &b.p))
}

pub(crate) fn js_raw(a: &[f64], b: &[f64]) -> f64 {
    let mut jsd = 0.0;
    for (&p, &q) in a.iter().zip(b) {
        let m = 0.5 * (p + q);
        jsd += plogp(m) - 0.5 * (plogp(p) + plogp(q));
    }
    jsd.clamp(0.0, 1.0)
}
