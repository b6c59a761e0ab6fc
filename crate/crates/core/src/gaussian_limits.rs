//! Covariance models, PSD square roots and samplers for the Gaussian
//! pre-limit and limit processes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::kernels;
use crate::path_core::StepPath;
use crate::uprocess::UProcessSpec;
use crate::{graph, runs, Error, Result, SimRng};

/// Relative eigenvalue level below which a negative eigenvalue is rounding.
pub const PSD_CLAMP: f64 = 1e-8;

pub type CovRule = Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum CovModel {
    Dense(DMatrix<f64>),
    BlockDiagonal(Vec<DMatrix<f64>>),
    RuleBased { dim: usize, rule: CovRule },
}

impl fmt::Debug for CovModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovModel::Dense(m) => f.debug_tuple("Dense").field(m).finish(),
            CovModel::BlockDiagonal(b) => f.debug_tuple("BlockDiagonal").field(b).finish(),
            CovModel::RuleBased { dim, .. } => write!(f, "RuleBased({dim})"),
        }
    }
}

impl CovModel {
    pub fn dim(&self) -> usize {
        match self {
            CovModel::Dense(m) => m.nrows(),
            CovModel::BlockDiagonal(b) => b.iter().map(|m| m.nrows()).sum(),
            CovModel::RuleBased { dim, .. } => *dim,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            CovModel::Dense(m) => m.clone(),
            CovModel::BlockDiagonal(blocks) => {
                let dim = self.dim();
                let mut out = DMatrix::zeros(dim, dim);
                let mut off = 0;
                for b in blocks {
                    let k = b.nrows();
                    out.view_mut((off, off), (k, k)).copy_from(b);
                    off += k;
                }
                out
            }
            CovModel::RuleBased { dim, rule } => DMatrix::from_fn(*dim, *dim, |i, j| rule(i, j)),
        }
    }

    /// Symmetric square root, blockwise when possible.
    pub fn sqrt(&self) -> Result<DMatrix<f64>> {
        match self {
            CovModel::BlockDiagonal(blocks) => {
                let roots = blocks.iter().map(psd_sqrt).collect::<Result<Vec<_>>>()?;
                Ok(CovModel::BlockDiagonal(roots).to_dense())
            }
            _ => psd_sqrt(&self.to_dense()),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let m = self.to_dense();
        let mut wr = csv::Writer::from_writer(w);
        for i in 0..m.nrows() {
            wr.write_record(m.row(i).iter().map(|v| format!("{v:?}"))).map_err(|e| Error::Parse(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Symmetric square root `S` with `S S^T = M`.
///
/// Eigenvalues down to `-PSD_CLAMP * max(1, lambda_max)` are set to zero;
/// anything more negative is an error.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::NotSymmetric("covariance matrix".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.max();
    let floor = -PSD_CLAMP * lmax.abs().max(1e-300);
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l < floor {
            return Err(Error::NotPsd(l));
        }
        roots[i] = l.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.amax()
}

/// 1-based position of `(k, i_1, ..., i_m)` in `{1..d} x {1..n}^m`,
/// `(k-1) n^m + (i_1-1) n^{m-1} + ... + i_m`.
pub fn index_bijection(d: usize, n: usize, k: usize, idx: &[usize]) -> Result<usize> {
    if k == 0 || k > d || idx.iter().any(|&i| i == 0 || i > n) {
        return Err(Error::InvalidParameter(format!("index ({k}, {idx:?}) outside d = {d}, n = {n}")));
    }
    let mut pos = k - 1;
    for &i in idx {
        pos = pos * n + (i - 1);
    }
    Ok(pos + 1)
}

/// Inverse of [`index_bijection`].
pub fn index_from_position(d: usize, n: usize, m: usize, pos: usize) -> Result<(usize, Vec<usize>)> {
    let total = d * n.pow(m as u32);
    if pos == 0 || pos > total {
        return Err(Error::InvalidParameter(format!("position {pos} outside 1..={total}")));
    }
    let mut rest = pos - 1;
    let mut idx = vec![0; m];
    for j in (0..m).rev() {
        idx[j] = rest % n + 1;
        rest /= n;
    }
    Ok((rest + 1, idx))
}

/// Matrix valued step function on a partition `0 = b_0 < ... < b_K = 1`,
/// equal to `values[k]` on `(b_k, b_{k+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrixFn {
    pub breaks: Vec<f64>,
    pub values: Vec<DMatrix<f64>>,
}

impl StepMatrixFn {
    pub fn new(breaks: Vec<f64>, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if breaks.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::DimensionMismatch("need one more break than value".into()));
        }
        if breaks[0] != 0.0 || (breaks[breaks.len() - 1] - 1.0).abs() > 1e-12 || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("breaks must increase from 0 to 1".into()));
        }
        let d = values[0].nrows();
        if values.iter().any(|v| v.nrows() != d || v.ncols() != d) {
            return Err(Error::DimensionMismatch("values must be square of one size".into()));
        }
        Ok(Self { breaks, values })
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { breaks: vec![0.0, 1.0], values: vec![m] }
    }

    pub fn dim(&self) -> usize {
        self.values[0].nrows()
    }

    /// Value on the grid cell `((m-1)/n, m/n]`; the partition must refine into the grid.
    pub fn on_cells(&self, n: usize) -> Result<Vec<DMatrix<f64>>> {
        for b in &self.breaks {
            let x = b * n as f64;
            if (x - x.round()).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("break {b} is not on the 1/{n} grid")));
            }
        }
        let mut out = Vec::with_capacity(n);
        let mut piece = 0;
        for m in 1..=n {
            while (self.breaks[piece + 1] * n as f64).round() < m as f64 {
                piece += 1;
            }
            out.push(self.values[piece].clone());
        }
        Ok(out)
    }
}

/// Pre-limit of a weighted U-process: one correlated Gaussian per subset.
#[derive(Debug, Clone)]
pub struct UstatPrelimit {
    n: usize,
    d: usize,
    groups: Vec<OrderGroup>,
}

#[derive(Debug, Clone)]
struct OrderGroup {
    members: Vec<usize>,
    root: DMatrix<f64>,
    cov: DMatrix<f64>,
    /// (max element, [(member slot, a_J / sigma)])
    subsets: Vec<(usize, Vec<(usize, f64)>)>,
}

/// Cross moments `E[psi_i psi_l]` within each order and the subset lists.
pub fn build_prelimit_ustat(spec: &UProcessSpec) -> Result<UstatPrelimit> {
    let comps = spec.components();
    let mut groups = Vec::new();
    let mut i = 0;
    while i < comps.len() {
        let q = comps[i].kernel.order();
        let members: Vec<usize> = (i..comps.len()).take_while(|&j| comps[j].kernel.order() == q).collect();
        i += members.len();
        let k = members.len();
        let mut cov = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = kernels::cross_moment(&comps[members[a]].kernel, &comps[members[b]].kernel)?;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let root = psd_sqrt(&cov)?;
        let mut union: BTreeMap<Vec<u32>, Vec<(usize, f64)>> = BTreeMap::new();
        for (slot, &c) in members.iter().enumerate() {
            let comp = &comps[c];
            for (s, a) in comp.weights.entries() {
                union.entry(s.to_vec()).or_default().push((slot, a / comp.sigma));
            }
        }
        let subsets = union.into_iter().map(|(s, v)| (*s.last().unwrap() as usize, v)).collect();
        groups.push(OrderGroup { members, root, cov, subsets });
    }
    Ok(UstatPrelimit { n: spec.n(), d: spec.dim(), groups })
}

impl UstatPrelimit {
    pub fn sample(&self, rng: &mut SimRng) -> StepPath {
        let mut inc = vec![vec![0.0; self.n + 1]; self.d];
        for g in &self.groups {
            let k = g.members.len();
            let mut w = DVector::zeros(k);
            for (max, coefs) in &g.subsets {
                for x in w.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                let z = &g.root * &w;
                for &(slot, c) in coefs {
                    inc[g.members[slot]][*max] += c * z[slot];
                }
            }
        }
        cumulative(inc)
    }

    /// Exact `Cov(D_i(s), D_l(t))` at grid indices `s` and `t`.
    pub fn covariance(&self, i: usize, s: usize, l: usize, t: usize) -> f64 {
        let upto = s.min(t);
        for g in &self.groups {
            let (Some(a), Some(b)) = (g.members.iter().position(|&c| c == i), g.members.iter().position(|&c| c == l))
            else {
                continue;
            };
            let mut total = 0.0;
            for (max, coefs) in &g.subsets {
                if *max > upto {
                    continue;
                }
                let ca = coefs.iter().find(|c| c.0 == a).map(|c| c.1).unwrap_or(0.0);
                let cb = coefs.iter().find(|c| c.0 == b).map(|c| c.1).unwrap_or(0.0);
                total += ca * cb;
            }
            return total * g.cov[(a, b)];
        }
        0.0
    }
}

fn cumulative(inc: Vec<Vec<f64>>) -> StepPath {
    let cols: Vec<Vec<f64>> = inc
        .into_iter()
        .map(|col| {
            let mut acc = 0.0;
            col.into_iter()
                .map(|v| {
                    acc += v;
                    acc
                })
                .collect()
        })
        .collect();
    StepPath::from_columns(&cols).expect("columns of equal length")
}

/// `D(t) = int_0^t phi(s) dW(s)` sampled exactly on the grid.
#[derive(Debug, Clone)]
pub struct ContinuousLimit {
    n: usize,
    cells: Vec<DMatrix<f64>>,
}

impl ContinuousLimit {
    pub fn new(phi: &StepMatrixFn, n: usize) -> Result<Self> {
        Ok(Self { n, cells: phi.on_cells(n)? })
    }

    pub fn sample(&self, rng: &mut SimRng) -> StepPath {
        let d = self.cells[0].nrows();
        let mut path = StepPath::zeros(d, self.n);
        let h = (1.0 / self.n as f64).sqrt();
        let mut acc = DVector::zeros(d);
        let mut w = DVector::zeros(d);
        for m in 1..=self.n {
            for x in w.iter_mut() {
                *x = h * rng.sample::<f64, _>(StandardNormal);
            }
            acc += &self.cells[m - 1] * &w;
            path.row_mut(m).copy_from_slice(acc.as_slice());
        }
        path
    }
}

/// Finite Gaussian family indexed by `(k, i_1, ..., i_m)` attached to grid sets.
///
/// Component `k` at grid point `g` is the sum of the variables whose index
/// has first coordinate `k` and whose set contains `g`.
#[derive(Debug, Clone)]
pub struct GeneralPrelimit {
    n: usize,
    d: usize,
    root: DMatrix<f64>,
    /// per position: (component, grid ranges `[start, end)`)
    supports: Vec<(usize, Vec<(usize, usize)>)>,
}

impl GeneralPrelimit {
    /// `cov` has dimension `d n^m`, positions ordered by [`index_bijection`].
    pub fn new(d: usize, n: usize, m: usize, cov: &CovModel, sets: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        let dim = d * n.pow(m as u32);
        if cov.dim() != dim || sets.len() != dim {
            return Err(Error::DimensionMismatch(format!("expected {dim} indices")));
        }
        if dim > 4096 {
            return Err(Error::TooLarge(format!("{dim} indices")));
        }
        let supports = sets
            .into_iter()
            .enumerate()
            .map(|(p, r)| {
                let (k, _) = index_from_position(d, n, m, p + 1)?;
                if r.iter().any(|&(a, b)| a > b || b > n + 1) {
                    return Err(Error::InvalidParameter(format!("bad grid range at position {}", p + 1)));
                }
                Ok((k - 1, r))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, d, root: cov.sqrt()?, supports })
    }

    pub fn sample(&self, rng: &mut SimRng) -> StepPath {
        let w = DVector::from_fn(self.root.ncols(), |_, _| rng.sample(StandardNormal));
        let z = &self.root * w;
        let mut path = StepPath::zeros(self.d, self.n);
        for (p, (k, ranges)) in self.supports.iter().enumerate() {
            for &(a, b) in ranges {
                for g in a..b {
                    let v = path.get(g, *k) + z[p];
                    path.set(g, *k, v);
                }
            }
        }
        path
    }
}

/// Recipes for the Gaussian processes compared against the discrete ones.
#[derive(Debug, Clone)]
pub enum GaussianProcessSpec {
    Ustat(UstatPrelimit),
    Continuous(ContinuousLimit),
    General(GeneralPrelimit),
    GraphPrelimit(graph::GraphSpec),
    GraphLimit(graph::GraphSpec),
    RunsPrelimit(runs::RunsPrelimit),
    RunsLimit(runs::RunsLimit),
}

impl GaussianProcessSpec {
    pub fn sample(&self, rng: &mut SimRng) -> StepPath {
        match self {
            GaussianProcessSpec::Ustat(u) => u.sample(rng),
            GaussianProcessSpec::Continuous(c) => c.sample(rng),
            GaussianProcessSpec::General(g) => g.sample(rng),
            GaussianProcessSpec::GraphPrelimit(g) => graph::sample_prelimit(g, rng),
            GaussianProcessSpec::GraphLimit(g) => graph::sample_limit(g, rng),
            GaussianProcessSpec::RunsPrelimit(r) => r.sample(rng),
            GaussianProcessSpec::RunsLimit(r) => r.sample(rng),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            GaussianProcessSpec::Ustat(_) => "ustat_prelimit",
            GaussianProcessSpec::Continuous(_) => "continuous_limit",
            GaussianProcessSpec::General(_) => "general_prelimit",
            GaussianProcessSpec::GraphPrelimit(_) => "graph_prelimit",
            GaussianProcessSpec::GraphLimit(_) => "graph_limit",
            GaussianProcessSpec::RunsPrelimit(_) => "runs_prelimit",
            GaussianProcessSpec::RunsLimit(_) => "runs_limit",
        }
    }
}

pub fn sample_d(spec: &GaussianProcessSpec, rng: &mut SimRng) -> StepPath {
    spec.sample(rng)
}

/// Standard Brownian motion at increasing times `0 <= s_1 < s_2 < ...`.
pub fn brownian_at(times: &[f64], rng: &mut SimRng) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let (mut prev, mut acc) = (0.0, 0.0);
    for &s in times {
        let dt = s - prev;
        debug_assert!(dt >= 0.0);
        if dt > 0.0 {
            acc += dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        out.push(acc);
        prev = s;
    }
    out
}
