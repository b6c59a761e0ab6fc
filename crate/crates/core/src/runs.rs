//! Counts of runs of ones of lengths `r_1 >= ... >= r_d` in Bernoulli trials
//! on the discrete torus, their homogeneous-sum decomposition and limits.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::gaussian_limits::{psd_sqrt, CovModel};
use crate::kernels::{BaseMeasure, Kernel};
use crate::mc_verify::PathSampler;
use crate::path_core::StepPath;
use crate::stein_bounds::BoundReport;
use crate::uprocess::{UComponent, UProcessSpec, WeightArray};
use crate::{Error, Result, SimRng};

#[derive(Debug, Clone, PartialEq)]
pub struct RunsSpec {
    n: usize,
    p: f64,
    rs: Vec<usize>,
}

impl RunsSpec {
    pub fn new(n: usize, p: f64, rs: Vec<usize>) -> Result<Self> {
        if rs.is_empty() {
            return Err(Error::InvalidParameter("no run lengths".into()));
        }
        if rs.windows(2).any(|w| w[1] > w[0]) || rs[rs.len() - 1] == 0 {
            return Err(Error::InvalidParameter(format!("run lengths {rs:?} must be nonincreasing and positive")));
        }
        if 2 * rs[0] >= n {
            return Err(Error::InvalidParameter(format!("longest run {} must be below n / 2 = {}", rs[0], n as f64 / 2.0)));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("success probability {p} outside (0, 1)")));
        }
        Ok(Self { n, p, rs })
    }

    /// Parses run lengths given as a comma separated list, e.g. `"3,2,1"`.
    pub fn parse_rs(s: &str) -> Result<Vec<usize>> {
        s.split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|e| Error::Parse(format!("run length {x:?}: {e}"))))
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn rs(&self) -> &[usize] {
        &self.rs
    }

    pub fn dim(&self) -> usize {
        self.rs.len()
    }

    /// `sqrt(n p^r (1 - p))`.
    pub fn sigma(&self, r: usize) -> f64 {
        (self.n as f64 * self.p.powi(r as i32) * (1.0 - self.p)).sqrt()
    }

    /// Number of components with run length at least `q`.
    pub fn n_q(&self, q: usize) -> usize {
        self.rs.iter().filter(|&&r| r >= q).count()
    }
}

/// Path of run counts for the trials `xi` (`xi[0]` is trial 1).
pub fn runs_path(spec: &RunsSpec, xi: &[bool]) -> Result<StepPath> {
    let n = spec.n;
    if xi.len() != n {
        return Err(Error::DimensionMismatch(format!("{} trials for n = {n}", xi.len())));
    }
    let mut path = StepPath::zeros(spec.dim(), n);
    for (i, &r) in spec.rs.iter().enumerate() {
        let pr = spec.p.powi(r as i32);
        let s = spec.sigma(r);
        // length of the run of ones starting at each position, capped at r
        let mut acc = 0.0;
        for k in 1..=n {
            let hit = (0..r).all(|u| xi[(k - 1 + u) % n]);
            acc += if hit { 1.0 } else { 0.0 } - pr;
            path.set(k, i, acc / s);
        }
    }
    Ok(path)
}

pub fn draw_trials(spec: &RunsSpec, rng: &mut SimRng) -> Vec<bool> {
    (0..spec.n).map(|_| rng.random::<f64>() < spec.p).collect()
}

pub fn simulate_runs(spec: &RunsSpec, rng: &mut SimRng) -> StepPath {
    let xi = draw_trials(spec, rng);
    runs_path(spec, &xi).expect("trial count matches")
}

/// `prod_u x_u - p^r` expanded as `sum_{nonempty A} p^{r-|A|} prod_{u in A} (x_u - p)`.
///
/// Returns `(left, right)` for the window values `x`.
pub fn window_expansion(x: &[f64], p: f64) -> (f64, f64) {
    let r = x.len();
    let left = x.iter().product::<f64>() - p.powi(r as i32);
    let mut right = 0.0;
    for mask in 1u32..(1 << r) {
        let j = mask.count_ones() as i32;
        let prod: f64 = (0..r).filter(|u| mask & (1 << u) != 0).map(|u| x[u] - p).product();
        right += p.powi(r as i32 - j) * prod;
    }
    (left, right)
}

/// Weight of the product `X_J` in the run count of length `r`: `p^{r-|J|}`
/// times the number of torus windows of length `r` containing `J`.
pub fn runs_weight(subset: &[usize], r: usize, n: usize, p: f64) -> f64 {
    if subset.is_empty() || subset.len() > r {
        return 0.0;
    }
    let j = subset.len() as i32;
    let lo = *subset.iter().min().unwrap() as i64;
    let hi = *subset.iter().max().unwrap() as i64;
    let (r, n) = (r as i64, n as i64);
    let mut count = (r - hi + lo).max(0);
    // windows wrapping past n: low half taken as [1, n/2] so that n/2 never splits a window
    let low_max = subset.iter().filter(|&&e| 2 * e as i64 <= n).max();
    let high_min = subset.iter().filter(|&&e| 2 * e as i64 > n).min();
    if let (Some(&a), Some(&b)) = (low_max, high_min) {
        count += (r + b as i64 - a as i64 - n).max(0);
    }
    p.powi(r as i32 - j) * count as f64
}

/// The run process written as weighted homogeneous sums over `X = xi - p`.
#[derive(Debug, Clone)]
pub struct RunsDecomposition {
    pub spec: RunsSpec,
    pub uspec: UProcessSpec,
    /// `(run index i, order j)` of every U component.
    pub labels: Vec<(usize, usize)>,
}

/// All `j`-subsets of torus windows of length `r`.
fn window_subsets(n: usize, r: usize, j: usize) -> Vec<Vec<usize>> {
    let mut seen = std::collections::BTreeSet::new();
    for m in 1..=n {
        for mask in 1u32..(1 << r) {
            if mask.count_ones() as usize != j {
                continue;
            }
            let mut s: Vec<usize> = (0..r).filter(|u| mask & (1 << u) != 0).map(|u| (m - 1 + u) % n + 1).collect();
            s.sort_unstable();
            seen.insert(s);
        }
    }
    seen.into_iter().collect()
}

pub fn runs_decompose(spec: &RunsSpec) -> Result<RunsDecomposition> {
    let measure = BaseMeasure::centered_bernoulli(spec.p)?;
    let mut labeled = Vec::new();
    for (i, &r) in spec.rs.iter().enumerate() {
        for j in 1..=r {
            let entries = window_subsets(spec.n, r, j)
                .into_iter()
                .map(|s| {
                    let a = runs_weight(&s, r, spec.n, spec.p);
                    (s, a)
                })
                .filter(|e| e.1 != 0.0)
                .collect();
            let weights = WeightArray::new(spec.n, j, entries)?;
            let kernel = Kernel::product(j, measure.clone())?;
            labeled.push(((i, j), UComponent { kernel, weights, sigma: spec.sigma(r) }));
        }
    }
    labeled.sort_by_key(|(l, _)| (l.1, l.0));
    let labels = labeled.iter().map(|(l, _)| *l).collect();
    let comps = labeled.into_iter().map(|(_, c)| c).collect();
    let uspec = UProcessSpec::new(spec.n, measure, comps)?;
    Ok(RunsDecomposition { spec: spec.clone(), uspec, labels })
}

impl RunsDecomposition {
    /// Component `i` at grid `m` is `sum_j U_{(i,j)}(min(m + r_i - 1, n))`.
    pub fn compose(&self, u: &StepPath) -> Result<StepPath> {
        if u.dim() != self.labels.len() {
            return Err(Error::DimensionMismatch("U path dimension".into()));
        }
        let n = self.spec.n;
        let mut v = StepPath::zeros(self.spec.dim(), n);
        for (c, &(i, _)) in self.labels.iter().enumerate() {
            let shift = self.spec.rs[i] - 1;
            for m in 0..=n {
                let val = v.get(m, i) + u.get((m + shift).min(n), c);
                v.set(m, i, val);
            }
        }
        Ok(v)
    }

    /// `(sup over the grid, value at t = 1)` of `|V - f(U)|` for the trials `xi`.
    pub fn reconstruction_residual(&self, xi: &[bool]) -> Result<(f64, f64)> {
        let x: Vec<f64> = xi.iter().map(|&b| if b { 1.0 } else { 0.0 } - self.spec.p).collect();
        let u = self.uspec.evaluate_path(&x)?;
        let composed = self.compose(&u)?;
        let direct = runs_path(&self.spec, xi)?;
        let diff = direct.sub(&composed)?;
        let n = self.spec.n;
        let end = diff.row(n).iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok((diff.sup_norm(), end))
    }
}

fn binom(n: i64, k: i64) -> f64 {
    if k < 0 || n < 0 || k > n {
        return 0.0;
    }
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Covariance blocks `Sigma(q)`, `q = 1..=r_1`, of size `N(q)`.
///
/// Entry `(i, l)` of block `q` is
/// `p^{(r_i+r_l)/2-q} (1-p)^{q-1} sum_{k=q-1}^{min(r_i,r_l)-1} C(k-1, q-2) (r_i-k)(r_l-k)`,
/// with the sum read as `r_i r_l` for `q = 1`.
pub fn runs_sigma_blocks(spec: &RunsSpec) -> Vec<DMatrix<f64>> {
    let p = spec.p;
    (1..=spec.rs[0])
        .map(|q| {
            let k = spec.n_q(q);
            DMatrix::from_fn(k, k, |i, l| {
                let (ri, rl) = (spec.rs[i], spec.rs[l]);
                let s = if q == 1 {
                    (ri * rl) as f64
                } else {
                    (q - 1..ri.min(rl))
                        .map(|k| binom(k as i64 - 1, q as i64 - 2) * ((ri - k) * (rl - k)) as f64)
                        .sum()
                };
                p.powf((ri + rl) as f64 / 2.0 - q as f64) * (1.0 - p).powi(q as i32 - 1) * s
            })
        })
        .collect()
}

/// Closed-form `Sigma_n^{(m)}(q)` including the two boundary regimes
/// `m <= r_i ∧ r_l - 1` and `m >= n + 2 - r_i ∧ r_l`, with the same prefactor
/// as [`runs_sigma_blocks`]. Blocks are indexed like `runs_sigma_blocks`.
pub fn runs_sigma_n_m_closed(spec: &RunsSpec, m: usize) -> Result<Vec<DMatrix<f64>>> {
    let n = spec.n;
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!("m = {m} outside 1..={n}")));
    }
    let p = spec.p;
    Ok((1..=spec.rs[0])
        .map(|q| {
            let size = spec.n_q(q);
            DMatrix::from_fn(size, size, |i, l| {
                let (ri, rl) = (spec.rs[i], spec.rs[l]);
                let pre = p.powf((ri + rl) as f64 / 2.0 - q as f64) * (1.0 - p).powi(q as i32 - 1);
                if q == 1 {
                    return pre * (ri * rl) as f64;
                }
                let rmin = ri.min(rl);
                let term = |k: usize| binom(k as i64 - 1, q as i64 - 2) * ((ri - k) * (rl - k)) as f64;
                let s: f64 = if m < rmin {
                    (q - 1..m).map(term).sum()
                } else if m + rmin >= n + 2 {
                    let base: f64 = (q - 1..rmin).map(term).sum();
                    let extra: f64 = (n + 2 - rmin..=m)
                        .map(|u| {
                            let lo = (q - 1).max((n as i64 - u as i64 - 1).max(0) as usize);
                            (lo..rmin).map(term).sum::<f64>()
                        })
                        .sum();
                    base + extra
                } else {
                    (q - 1..rmin).map(term).sum()
                };
                pre * s
            })
        })
        .collect())
}

fn third_factor(p: f64) -> f64 {
    1.0 + p.powi(3) - 2.0 * p.powi(4)
}

fn gammas_12(spec: &RunsSpec) -> (f64, f64) {
    let p = spec.p;
    let d = spec.dim() as f64;
    let r1 = spec.rs[0] as f64;
    let rd = spec.rs[spec.dim() - 1] as f64;
    let sum_r: f64 = spec.rs.iter().map(|&r| r as f64).sum();
    let c = third_factor(p);
    let q32 = (1.0 - p).powf(1.5);
    let mut g1 = 0.0;
    for &r in &spec.rs {
        for j in 1..=r {
            let b = binom(r as i64 - 1, j as i64 - 1);
            g1 += c.powi(j as i32) * p.powf(1.5 * r as f64 - 3.0 * j as f64) / q32 * b * b * b;
        }
    }
    g1 *= 2.0 * (d * r1).sqrt() * sum_r.powf(1.5) / (3.0 * rd);
    let mut g2 = 0.0;
    for &ru in &spec.rs {
        for &rv in &spec.rs {
            for &rw in &spec.rs {
                let outer = (rw * ru.max(rv) * ru.max(rv)) as f64;
                for j1 in 1..=ru {
                    for j2 in 1..=rv {
                        for j3 in 1..=rw {
                            let js = (j1 + j2 + j3) as f64;
                            g2 += c.powf(js / 3.0) * p.powf((ru + rv + rw) as f64 / 2.0 - js) / q32
                                * outer
                                * binom(ru as i64 - 1, j1 as i64 - 1)
                                * binom(rv as i64 - 1, j2 as i64 - 1)
                                * binom(rw as i64 - 1, j3 as i64 - 1);
                        }
                    }
                }
            }
        }
    }
    g2 *= 2.0 * (d * r1).sqrt() * sum_r;
    (g1, g2)
}

/// Pre-limit bound `(gamma_1 + gamma_2) n^{-1/2}` against `||g||_{M^0}`.
pub fn runs_bound_pre(spec: &RunsSpec) -> BoundReport {
    let (g1, g2) = gammas_12(spec);
    let scale = 1.0 / (spec.n as f64).sqrt();
    BoundReport::new("runs_prelimit", "M0", spec.n, spec.dim())
        .term("gamma1", g1)
        .term("gamma2", g2)
        .total((g1 + g2) * scale)
}

/// `gamma_3` of the continuous-limit bound.
pub fn runs_gamma3(spec: &RunsSpec) -> f64 {
    let p = spec.p;
    let d = spec.dim() as f64;
    let r1 = spec.rs[0];
    let sum_r: f64 = spec.rs.iter().map(|&r| r as f64).sum();
    let mut inner = 0.0;
    for q in 2..=r1 {
        for i in 0..spec.n_q(q) {
            let ri = spec.rs[i];
            for k in q - 1..ri {
                inner += binom(k as i64 - 1, q as i64 - 2) * p.powi((ri - q) as i32) / (1.0 - p) * ((ri - k) * (ri - k)) as f64;
            }
        }
    }
    for &r in &spec.rs {
        inner += p.powi(r as i32 - 1) / (1.0 - p) * (r * r) as f64;
    }
    22.0 * d.sqrt() * (r1 * r1) as f64 * sum_r * inner.sqrt()
}

/// Continuous-limit bound `n^{-1/2}(gamma_1 + gamma_2 + gamma_3 sqrt(log n))`.
pub fn runs_bound_con(spec: &RunsSpec) -> BoundReport {
    let (g1, g2) = gammas_12(spec);
    let g3 = runs_gamma3(spec);
    let nf = spec.n as f64;
    BoundReport::new("runs_limit", "M0", spec.n, spec.dim())
        .term("gamma1", g1)
        .term("gamma2", g2)
        .term("gamma3", g3)
        .total((g1 + g2 + g3 * nf.ln().sqrt()) / nf.sqrt())
}

/// Gaussian pre-limit: each product `X_J` of a window expansion is replaced
/// by an independent `N(0, (p(1-p))^{|J|})` variable shared across windows.
#[derive(Debug, Clone)]
pub struct RunsPrelimit {
    spec: RunsSpec,
    sd: Vec<f64>,
    /// per component, per window start: [(variable, coefficient / sigma)]
    windows: Vec<Vec<Vec<(usize, f64)>>>,
}

impl RunsPrelimit {
    pub fn new(spec: &RunsSpec) -> Self {
        let n = spec.n;
        let p = spec.p;
        let mut ids: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut sd = Vec::new();
        let mut windows = Vec::with_capacity(spec.dim());
        for &r in &spec.rs {
            let s = spec.sigma(r);
            let mut per_m = Vec::with_capacity(n + 1);
            per_m.push(Vec::new());
            for m in 1..=n {
                let mut terms = Vec::with_capacity((1 << r) - 1);
                for mask in 1u32..(1 << r) {
                    let mut set: Vec<usize> = (0..r).filter(|u| mask & (1 << u) != 0).map(|u| (m - 1 + u) % n + 1).collect();
                    set.sort_unstable();
                    let j = set.len();
                    let id = *ids.entry(set).or_insert_with(|| {
                        sd.push((p * (1.0 - p)).powf(j as f64 / 2.0));
                        sd.len() - 1
                    });
                    terms.push((id, p.powi((r - j) as i32) / s));
                }
                per_m.push(terms);
            }
            windows.push(per_m);
        }
        Self { spec: spec.clone(), sd, windows }
    }

    pub fn sample(&self, rng: &mut SimRng) -> StepPath {
        let z: Vec<f64> = self.sd.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
        let n = self.spec.n;
        let mut path = StepPath::zeros(self.spec.dim(), n);
        for (i, per_m) in self.windows.iter().enumerate() {
            let mut acc = 0.0;
            for (m, terms) in per_m.iter().enumerate().skip(1) {
                acc += terms.iter().map(|&(id, c)| c * z[id]).sum::<f64>();
                path.set(m, i, acc);
            }
        }
        path
    }
}

/// Continuous limit `Z` built from `Z' = Sigma^{1/2} W`.
#[derive(Debug, Clone)]
pub struct RunsLimit {
    spec: RunsSpec,
    root: DMatrix<f64>,
    /// `N(1) + ... + N(q-1)` for `q = 1..=r_1`
    offsets: Vec<usize>,
}

pub fn runs_limit_sampler(spec: &RunsSpec) -> Result<RunsLimit> {
    let blocks = runs_sigma_blocks(spec);
    let root = CovModel::BlockDiagonal(blocks).sqrt()?;
    let mut offsets = Vec::with_capacity(spec.rs[0]);
    let mut acc = 0;
    for q in 1..=spec.rs[0] {
        offsets.push(acc);
        acc += spec.n_q(q);
    }
    Ok(RunsLimit { spec: spec.clone(), root, offsets })
}

impl RunsLimit {
    pub fn sample(&self, rng: &mut SimRng) -> StepPath {
        let n = self.spec.n;
        let k = self.root.nrows();
        let h = (1.0 / n as f64).sqrt();
        // Z' on the grid
        let mut zp = vec![DVector::zeros(k); n + 1];
        let mut w = DVector::zeros(k);
        for m in 1..=n {
            for x in w.iter_mut() {
                *x = h * rng.sample::<f64, _>(StandardNormal);
            }
            zp[m] = &zp[m - 1] + &self.root * &w;
        }
        let mut path = StepPath::zeros(self.spec.dim(), n);
        for (i, &r) in self.spec.rs.iter().enumerate() {
            for m in 0..=n {
                let g = (m + r - 1).min(n);
                let v: f64 = (0..r).map(|q| zp[g][self.offsets[q] + i]).sum();
                path.set(m, i, v);
            }
        }
        path
    }

    /// Exact `Cov(Z_i(1), Z_l(1))`.
    pub fn covariance_at_one(&self, i: usize, l: usize) -> f64 {
        let blocks = runs_sigma_blocks(&self.spec);
        let top = self.spec.rs[i].min(self.spec.rs[l]);
        (0..top).map(|q| blocks[q][(i, l)]).sum()
    }
}

/// `psd_sqrt` round trip error of the blocks, relative Frobenius.
pub fn sigma_blocks_roundtrip(spec: &RunsSpec) -> Result<f64> {
    let mut worst = 0.0f64;
    for b in runs_sigma_blocks(spec) {
        let s = psd_sqrt(&b)?;
        worst = worst.max((&s * s.transpose() - &b).norm() / b.norm().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct RunsSampler(pub RunsSpec);

impl PathSampler for RunsSampler {
    fn id(&self) -> String {
        format!("runs:n={}:p={}:rs={:?}", self.0.n, self.0.p, self.0.rs)
    }

    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn grid(&self) -> usize {
        self.0.n
    }

    fn sample(&self, rng: &mut SimRng) -> StepPath {
        simulate_runs(&self.0, rng)
    }
}
