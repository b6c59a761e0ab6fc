//! Weighted degenerate U-processes, their exchangeable pairs, and weight arrays.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::kernels::{self, BaseMeasure, Kernel};
use crate::path_core::StepPath;
use crate::{Error, Result, SimRng};

const DEGENERACY_TOL: f64 = 1e-10;

/// Lexicographic iterator over the `p`-subsets of `{1, ..., n}`.
pub struct Subsets {
    n: usize,
    cur: Option<Vec<usize>>,
}

pub fn enumerate_subsets(n: usize, p: usize) -> Subsets {
    let cur = if p == 0 || p > n { None } else { Some((1..=p).collect()) };
    Subsets { n, cur }
}

impl Iterator for Subsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.cur.clone()?;
        let p = out.len();
        let mut next = out.clone();
        let mut i = p;
        loop {
            if i == 0 {
                self.cur = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - (p - 1 - i) {
                next[i] += 1;
                for j in i + 1..p {
                    next[j] = next[j - 1] + 1;
                }
                self.cur = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// Sparse weights `a_J` over `p`-subsets of `{1, ..., n}`, sorted
/// lexicographically, with an inverted index from elements to entries.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArray {
    n: usize,
    p: usize,
    subsets: Vec<u32>,
    weights: Vec<f64>,
    index: Vec<Vec<u32>>,
}

impl WeightArray {
    pub fn new(n: usize, p: usize, mut entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        if p == 0 || p > n {
            return Err(Error::InvalidParameter(format!("order {p} with n = {n}")));
        }
        for (s, a) in entries.iter_mut() {
            if s.len() != p {
                return Err(Error::InvalidParameter(format!("subset {s:?} does not have {p} elements")));
            }
            if !a.is_finite() {
                return Err(Error::InvalidParameter(format!("weight of {s:?} is not finite")));
            }
            s.sort_unstable();
            if s[0] == 0 || s[p - 1] > n || s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidParameter(format!("{s:?} is not a subset of 1..={n}")));
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("repeated subset".into()));
        }
        let mut subsets = Vec::with_capacity(entries.len() * p);
        let mut weights = Vec::with_capacity(entries.len());
        let mut index = vec![Vec::new(); n + 1];
        for (k, (s, a)) in entries.iter().enumerate() {
            for &e in s {
                subsets.push(e as u32);
                index[e].push(k as u32);
            }
            weights.push(*a);
        }
        Ok(Self { n, p, subsets, weights, index })
    }

    /// All `p`-subsets with weight one.
    pub fn complete(n: usize, p: usize) -> Result<Self> {
        Self::new(n, p, enumerate_subsets(n, p).map(|s| (s, 1.0)).collect())
    }

    /// Each `p`-subset kept independently with probability `keep`, weight one.
    pub fn incomplete_random(n: usize, p: usize, keep: f64, rng: &mut SimRng) -> Result<Self> {
        if !(0.0..=1.0).contains(&keep) {
            return Err(Error::InvalidParameter(format!("keep probability {keep}")));
        }
        let entries = enumerate_subsets(n, p).filter(|_| rng.random::<f64>() < keep).map(|s| (s, 1.0)).collect();
        Self::new(n, p, entries)
    }

    /// Subsets whose span `max J - min J` is below `width`, weight one.
    pub fn banded(n: usize, p: usize, width: usize) -> Result<Self> {
        let entries = enumerate_subsets(n, p)
            .filter(|s| s[p - 1] - s[0] < width)
            .map(|s| (s, 1.0))
            .collect();
        Self::new(n, p, entries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn subset(&self, k: usize) -> &[u32] {
        &self.subsets[k * self.p..(k + 1) * self.p]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Entries containing element `l` (1-based).
    pub fn containing(&self, l: usize) -> &[u32] {
        &self.index[l]
    }

    pub fn max_element(&self, k: usize) -> usize {
        self.subsets[(k + 1) * self.p - 1] as usize
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[u32], f64)> {
        (0..self.len()).map(move |k| (self.subset(k), self.weights[k]))
    }

    pub fn sum_squares(&self) -> f64 {
        self.weights.iter().map(|a| a * a).sum()
    }

    pub fn lookup_table(&self) -> HashMap<Vec<u32>, f64> {
        self.entries().map(|(s, a)| (s.to_vec(), a)).collect()
    }

    /// `sum_{max J = m} a_J^2` for `m = 0..=n`.
    pub fn squares_by_max(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n + 1];
        for k in 0..self.len() {
            out[self.max_element(k)] += self.weights[k] * self.weights[k];
        }
        out
    }

    pub fn to_config(&self) -> WeightConfig {
        WeightConfig::Explicit {
            n: self.n,
            p: self.p,
            entries: self.entries().map(|(s, a)| (s.iter().map(|&e| e as usize).collect(), a)).collect(),
        }
    }
}

/// Serialized weight array: explicit entries or a builtin generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum WeightConfig {
    Explicit {
        n: usize,
        p: usize,
        entries: Vec<(Vec<usize>, f64)>,
    },
    Builtin {
        builtin: String,
        p: usize,
        #[serde(default)]
        keep: Option<f64>,
        #[serde(default)]
        width: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl WeightConfig {
    pub fn build(&self, n: usize) -> Result<WeightArray> {
        match self {
            WeightConfig::Explicit { n: wn, p, entries } => {
                if *wn != n {
                    return Err(Error::InvalidParameter(format!("weight array has n = {wn}, process has n = {n}")));
                }
                WeightArray::new(n, *p, entries.clone())
            }
            WeightConfig::Builtin { builtin, p, keep, width, seed } => match builtin.as_str() {
                "complete" => WeightArray::complete(n, *p),
                "incomplete_random" => {
                    let keep = keep.ok_or_else(|| Error::InvalidParameter("incomplete_random needs keep".into()))?;
                    let mut rng = SimRng::seed_from_u64(seed.unwrap_or(0));
                    WeightArray::incomplete_random(n, *p, keep, &mut rng)
                }
                "banded" => {
                    let width = width.ok_or_else(|| Error::InvalidParameter("banded needs width".into()))?;
                    WeightArray::banded(n, *p, width)
                }
                other => Err(Error::InvalidParameter(format!("unknown weight generator {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct UComponent {
    pub kernel: Kernel,
    pub weights: WeightArray,
    pub sigma: f64,
}

/// `d` weighted U-processes driven by one i.i.d. sample of length `n`.
#[derive(Debug, Clone)]
pub struct UProcessSpec {
    n: usize,
    measure: BaseMeasure,
    components: Vec<UComponent>,
}

impl UProcessSpec {
    /// Checks orders are nondecreasing, kernels degenerate and normalizers positive.
    pub fn new(n: usize, measure: BaseMeasure, components: Vec<UComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("no components".into()));
        }
        let mut last = 0;
        for (i, c) in components.iter().enumerate() {
            let p = c.kernel.order();
            if p < last {
                return Err(Error::InvalidParameter("component orders must be nondecreasing".into()));
            }
            last = p;
            if c.weights.order() != p || c.weights.n() != n {
                return Err(Error::DimensionMismatch(format!(
                    "component {i}: kernel order {p}, weights ({}, {}), n = {n}",
                    c.weights.n(),
                    c.weights.order()
                )));
            }
            if !(c.sigma > 0.0 && c.sigma.is_finite()) {
                return Err(Error::InvalidParameter(format!("component {i}: sigma {}", c.sigma)));
            }
            if *c.kernel.measure() != measure {
                return Err(Error::InvalidParameter(format!("component {i}: kernel uses another measure")));
            }
            let rep = kernels::check_degenerate(&c.kernel, DEGENERACY_TOL)?;
            if !rep.is_degenerate {
                return Err(Error::NotDegenerate(rep.max_residual));
            }
        }
        Ok(Self { n, measure, components })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn measure(&self) -> &BaseMeasure {
        &self.measure
    }

    pub fn components(&self) -> &[UComponent] {
        &self.components
    }

    pub fn orders(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.kernel.order()).collect()
    }

    pub fn draw_sample(&self, rng: &mut SimRng) -> Vec<f64> {
        (0..self.n).map(|_| self.measure.sample(rng)).collect()
    }

    /// Path of the process for a fixed sample `x` (`x[0]` is `X_1`).
    pub fn evaluate_path(&self, x: &[f64]) -> Result<StepPath> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch(format!("sample of length {} for n = {}", x.len(), self.n)));
        }
        let d = self.dim();
        let mut path = StepPath::zeros(d, self.n);
        let mut buf = Vec::new();
        for (i, c) in self.components.iter().enumerate() {
            let mut inc = vec![0.0; self.n + 1];
            for k in 0..c.weights.len() {
                buf.clear();
                buf.extend(c.weights.subset(k).iter().map(|&e| x[e as usize - 1]));
                inc[c.weights.max_element(k)] += c.weights.weight(k) * c.kernel.eval(&buf);
            }
            let mut acc = 0.0;
            for (m, v) in inc.iter().enumerate() {
                acc += v;
                path.set(m, i, acc / c.sigma);
            }
        }
        Ok(path)
    }

    /// Change of the path when `X_l` (1-based) is replaced by `new`.
    pub fn resample_delta(&self, x: &[f64], l: usize, new: f64) -> StepPath {
        let d = self.dim();
        let mut delta = StepPath::zeros(d, self.n);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (i, c) in self.components.iter().enumerate() {
            let mut inc = vec![0.0; self.n + 1];
            for &k in c.weights.containing(l) {
                let k = k as usize;
                a.clear();
                b.clear();
                for &e in c.weights.subset(k) {
                    let v = x[e as usize - 1];
                    a.push(v);
                    b.push(if e as usize == l { new } else { v });
                }
                inc[c.weights.max_element(k)] += c.weights.weight(k) * (c.kernel.eval(&a) - c.kernel.eval(&b));
            }
            let mut acc = 0.0;
            for (m, v) in inc.iter().enumerate() {
                acc += v;
                delta.set(m, i, acc / c.sigma);
            }
        }
        delta
    }
}

pub fn simulate_y(spec: &UProcessSpec, rng: &mut SimRng) -> StepPath {
    let x = spec.draw_sample(rng);
    spec.evaluate_path(&x).expect("sample length matches")
}

/// One draw of an exchangeable pair together with the resampling details.
#[derive(Debug, Clone)]
pub struct PairDraw {
    pub y: StepPath,
    pub y_prime: StepPath,
    pub sample: Vec<f64>,
    /// Resampled position, 1-based.
    pub position: usize,
    pub replacement: f64,
}

/// `Y'` replaces `X_I` by an independent copy, `I` uniform on `1..=n`.
pub fn exchangeable_pair(spec: &UProcessSpec, rng: &mut SimRng) -> PairDraw {
    let x = spec.draw_sample(rng);
    let y = spec.evaluate_path(&x).expect("sample length matches");
    let position = rng.random_range(1..=spec.n);
    let replacement = spec.measure.sample(rng);
    let delta = spec.resample_delta(&x, position, replacement);
    let y_prime = y.sub(&delta).expect("same shape");
    PairDraw { y, y_prime, sample: x, position, replacement }
}

/// `diag(n / (2 p_i))`.
pub fn lambda_weighted(spec: &UProcessSpec) -> DMatrix<f64> {
    let n = spec.n as f64;
    DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        spec.dim(),
        spec.components.iter().map(|c| n / (2.0 * c.kernel.order() as f64)),
    ))
}

/// `sup_t |E[(Y - Y') Lambda | X](t) - Y(t) / 2|` by exact averaging over the
/// resampled position and the replacement value.
pub fn regression_residual(spec: &UProcessSpec, x: &[f64], lambda: &DMatrix<f64>) -> Result<f64> {
    let atoms = spec
        .measure
        .atoms()
        .ok_or_else(|| Error::Unsupported("exact conditional expectation needs a finite measure".into()))?;
    let y = spec.evaluate_path(x)?;
    let mut mean = StepPath::zeros(spec.dim(), spec.n);
    let w = 1.0 / spec.n as f64;
    for l in 1..=spec.n {
        for (v, m) in atoms {
            let delta = spec.resample_delta(x, l, *v);
            mean = mean.combine(1.0, &delta, w * m)?;
        }
    }
    Ok(mean.mul_right(lambda)?.combine(1.0, &y, -0.5)?.sup_norm())
}

/// Product kernels over a standardized measure.
pub fn homsum_spec(n: usize, measure: BaseMeasure, components: Vec<(WeightArray, f64)>) -> Result<UProcessSpec> {
    measure.check_standardized(1e-12)?;
    let comps = components
        .into_iter()
        .map(|(w, sigma)| {
            Ok(UComponent { kernel: Kernel::product(w.order(), measure.clone())?, weights: w, sigma })
        })
        .collect::<Result<Vec<_>>>()?;
    UProcessSpec::new(n, measure, comps)
}

/// `sqrt(E[psi^2] sum_J a_J^2)`.
pub fn variance_sigma(kernel: &Kernel, weights: &WeightArray) -> Result<f64> {
    let v = kernels::abs_moment(kernel, 2.0)? * weights.sum_squares();
    if !(v > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(v.sqrt())
}
