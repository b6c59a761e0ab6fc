//! Edge and two-star counts of a growing Erdős-Rényi graph.
//!
//! On `[m] = {1, ..., floor(nt)}` the statistic is
//! `T(t) = (m-2)/n^2 * #edges` and `V(t) = #two-stars / n^2`, and the process
//! is `Y = (T - E T, V - E V)`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::gaussian_limits::brownian_at;
use crate::mc_verify::PathSampler;
use crate::path_core::StepPath;
use crate::{Error, Result, SimRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphSpec {
    n: usize,
    p: f64,
}

impl GraphSpec {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidParameter(format!("graph needs n >= 4, got {n}")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("edge probability {p} outside (0, 1)")));
        }
        Ok(Self { n, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `E T` at grid index `m`.
    pub fn mean_edge(&self, m: usize) -> f64 {
        let m = m as f64;
        (m - 2.0) * m * (m - 1.0) / 2.0 * self.p / (self.n * self.n) as f64
    }

    /// `E V` at grid index `m`.
    pub fn mean_two_star(&self, m: usize) -> f64 {
        let m = m as f64;
        m * (m - 1.0) * (m - 2.0) / 2.0 * self.p * self.p / (self.n * self.n) as f64
    }
}

/// Symmetric adjacency matrix on vertices `1..=n` (stored 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    adj: Vec<bool>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Self { n, adj: vec![false; n * n] }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::empty(n);
        for i in 1..=n {
            for j in i + 1..=n {
                g.set(i, j, true);
            }
        }
        g
    }

    pub fn random(n: usize, p: f64, rng: &mut SimRng) -> Self {
        let mut g = Self::empty(n);
        for j in 2..=n {
            for i in 1..j {
                g.set(i, j, rng.random::<f64>() < p);
            }
        }
        g
    }

    /// Graph whose edge `k` (pairs in lexicographic order) is present when bit `k` of `bits` is set.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        let mut g = Self::empty(n);
        let mut k = 0;
        for i in 1..=n {
            for j in i + 1..=n {
                g.set(i, j, bits >> k & 1 == 1);
                k += 1;
            }
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has(&self, i: usize, j: usize) -> bool {
        self.adj[(i - 1) * self.n + (j - 1)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.adj[(i - 1) * self.n + (j - 1)] = v;
        self.adj[(j - 1) * self.n + (i - 1)] = v;
    }

    fn ind(&self, i: usize, j: usize) -> f64 {
        if self.has(i, j) {
            1.0
        } else {
            0.0
        }
    }
}

/// Uncentered `(T, V)` at every grid point.
pub fn raw_path(spec: &GraphSpec, g: &Graph) -> Result<StepPath> {
    if g.n() != spec.n {
        return Err(Error::DimensionMismatch(format!("graph on {} vertices, spec n = {}", g.n(), spec.n)));
    }
    let n = spec.n;
    let nn = (n * n) as f64;
    let mut deg = vec![0u64; n + 1];
    let (mut edges, mut stars) = (0u64, 0u64);
    let mut path = StepPath::zeros(2, n);
    for m in 1..=n {
        let mut dm = 0u64;
        for u in 1..m {
            if g.has(u, m) {
                stars += deg[u];
                deg[u] += 1;
                dm += 1;
            }
        }
        stars += dm * dm.saturating_sub(1) / 2;
        deg[m] = dm;
        edges += dm;
        path.set(m, 0, (m as f64 - 2.0) * edges as f64 / nn);
        path.set(m, 1, stars as f64 / nn);
    }
    Ok(path)
}

/// Centered path `Y = (T - E T, V - E V)`.
pub fn graph_path(spec: &GraphSpec, g: &Graph) -> Result<StepPath> {
    let mut path = raw_path(spec, g)?;
    for m in 0..=spec.n {
        let t = path.get(m, 0) - spec.mean_edge(m);
        let v = path.get(m, 1) - spec.mean_two_star(m);
        path.set(m, 0, t);
        path.set(m, 1, v);
    }
    Ok(path)
}

/// Draws a graph and returns its centered path without storing the adjacency.
pub fn simulate_graph(spec: &GraphSpec, rng: &mut SimRng) -> StepPath {
    let n = spec.n;
    let nn = (n * n) as f64;
    // edge present when a uniform u64 falls below p 2^64
    let threshold = (spec.p * 18_446_744_073_709_551_616.0) as u64;
    let mut deg = vec![0u64; n + 1];
    let (mut edges, mut stars) = (0u64, 0u64);
    let mut path = StepPath::zeros(2, n);
    for m in 1..=n {
        let mut dm = 0u64;
        for d in deg.iter_mut().take(m).skip(1) {
            if rng.random::<u64>() < threshold {
                stars += *d;
                *d += 1;
                dm += 1;
            }
        }
        stars += dm * dm.saturating_sub(1) / 2;
        deg[m] = dm;
        edges += dm;
        path.set(m, 0, (m as f64 - 2.0) * edges as f64 / nn - spec.mean_edge(m));
        path.set(m, 1, stars as f64 / nn - spec.mean_two_star(m));
    }
    path
}

/// `Y - Y'` when the indicator of pair `{i, j}` is replaced by `new`.
pub fn pair_delta(spec: &GraphSpec, g: &Graph, i: usize, j: usize, new: bool) -> StepPath {
    let n = spec.n;
    let nn = (n * n) as f64;
    let diff = g.ind(i, j) - if new { 1.0 } else { 0.0 };
    let mut delta = StepPath::zeros(2, n);
    if diff == 0.0 {
        return delta;
    }
    let top = i.max(j);
    // two-star change collected by the largest vertex involved
    let mut star_inc = vec![0.0; n + 1];
    for k in 1..=n {
        if k != i && k != j {
            star_inc[top.max(k)] += diff * (g.ind(j, k) + g.ind(i, k));
        }
    }
    let mut acc = 0.0;
    for m in 0..=n {
        acc += star_inc[m];
        if m >= top {
            delta.set(m, 0, (m as f64 - 2.0) / nn * diff);
        }
        delta.set(m, 1, acc / nn);
    }
    delta
}

#[derive(Debug, Clone)]
pub struct GraphPairDraw {
    pub y: StepPath,
    pub y_prime: StepPath,
    pub pair: (usize, usize),
    pub new: bool,
}

/// Resamples the indicator of a uniformly chosen pair.
pub fn graph_pair(spec: &GraphSpec, g: &Graph, rng: &mut SimRng) -> Result<GraphPairDraw> {
    let n = spec.n;
    let y = graph_path(spec, g)?;
    let j = loop {
        let j = rng.random_range(2..=n);
        // pair {i, j} with i < j uniform over the C(n, 2) pairs
        if rng.random_range(0..n) < j - 1 {
            break j;
        }
    };
    let i = rng.random_range(1..j);
    let new = rng.random::<f64>() < spec.p;
    let delta = pair_delta(spec, g, i, j, new);
    let y_prime = y.sub(&delta)?;
    Ok(GraphPairDraw { y, y_prime, pair: (i, j), new })
}

/// `E[Y - Y' | graph]` by enumerating every pair and both replacement values.
pub fn conditional_mean_difference(spec: &GraphSpec, g: &Graph) -> Result<StepPath> {
    let n = spec.n;
    let pairs = (n * (n - 1) / 2) as f64;
    let mut mean = StepPath::zeros(2, n);
    for i in 1..=n {
        for j in i + 1..=n {
            for (new, w) in [(false, 1.0 - spec.p), (true, spec.p)] {
                mean = mean.combine(1.0, &pair_delta(spec, g, i, j, new), w / pairs)?;
            }
        }
    }
    Ok(mean)
}

/// Residuals of the two linear regression identities.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RegressionResidual {
    /// `sup |E[T - T'] - 2/(n(n-1)) (T - E T)|`
    pub edge: f64,
    /// `sup |E[2p(T - T') + (V - V')] - 4/(n(n-1)) (V - E V)|`
    pub two_star: f64,
}

pub fn graph_regression_residual(spec: &GraphSpec, g: &Graph) -> Result<RegressionResidual> {
    if spec.n > 12 {
        return Err(Error::TooLarge("exact regression check is limited to n <= 12".into()));
    }
    let n = spec.n;
    let y = graph_path(spec, g)?;
    let e = conditional_mean_difference(spec, g)?;
    let c = 1.0 / (n * (n - 1)) as f64;
    let (mut edge, mut two_star) = (0.0f64, 0.0f64);
    for m in 0..=n {
        edge = edge.max((e.get(m, 0) - 2.0 * c * y.get(m, 0)).abs());
        two_star = two_star.max((2.0 * spec.p * e.get(m, 0) + e.get(m, 1) - 4.0 * c * y.get(m, 1)).abs());
    }
    Ok(RegressionResidual { edge, two_star })
}

/// `sup_t |E[(Y - Y')(t) Lambda] - Y(t) / 2|` for an arbitrary `Lambda`.
pub fn regression_residual_lambda(spec: &GraphSpec, g: &Graph, lambda: &DMatrix<f64>) -> Result<f64> {
    let y = graph_path(spec, g)?;
    let e = conditional_mean_difference(spec, g)?;
    Ok(e.mul_right(lambda)?.combine(1.0, &y, -0.5)?.sup_norm())
}

/// `n(n-1)/8 [[2, 2p], [0, 1]]`.
pub fn lambda_graph(spec: &GraphSpec) -> DMatrix<f64> {
    let c = (spec.n * (spec.n - 1)) as f64 / 8.0;
    DMatrix::from_row_slice(2, 2, &[2.0 * c, 2.0 * spec.p * c, 0.0, c])
}

/// `Cov(D(t), D(u))` of the pre-limit, equal to that of `Y`.
pub fn cov_structure(spec: &GraphSpec, t: f64, u: f64) -> Result<DMatrix<f64>> {
    let mt = StepPath::grid_index(spec.n, t)? as f64;
    let mu = StepPath::grid_index(spec.n, u)? as f64;
    let mm = mt.min(mu);
    let p = spec.p;
    let n4 = (spec.n as f64).powi(4);
    let base = mm * (mm - 1.0);
    let a = (mt - 2.0) * (mu - 2.0) * base * p * (1.0 - p) / (2.0 * n4);
    let b = base * (4.0 * p.powi(3) * (1.0 - p) * (mt - 2.0) * (mu - 2.0) + (mm - 2.0) * p * p * (1.0 - p).powi(2)) / (2.0 * n4);
    let c = (mt - 2.0) * (mu - 2.0) * base * p * p * (1.0 - p) / n4;
    Ok(DMatrix::from_row_slice(2, 2, &[a, c, c, b]))
}

/// `Cov(Z(t), Z(u))` of the continuous limit.
pub fn limit_covariance(p: f64, t: f64, u: f64) -> DMatrix<f64> {
    let s = t * u * t.min(u).powi(2);
    let q = 1.0 - p;
    DMatrix::from_row_slice(2, 2, &[p * q / 2.0 * s, p * p * q * s, p * p * q * s, 2.0 * p.powi(3) * q * s])
}

fn loadings(p: f64) -> (f64, f64, f64) {
    let q = 1.0 - p;
    let c1 = (p * q).sqrt() / (2.0 + 8.0 * p * p).sqrt();
    let c2 = p * (2.0 * p * q).sqrt() / (1.0 + 4.0 * p * p).sqrt();
    let c3 = 2.0 * p * p * (2.0 * p * q).sqrt() / (1.0 + 4.0 * p * p).sqrt();
    (c1, c2, c3)
}

/// Pre-limit through three independent Brownian motions run at
/// `m(m-1)` and `m(m-1)(m-2)`.
pub fn sample_prelimit(spec: &GraphSpec, rng: &mut SimRng) -> StepPath {
    let n = spec.n;
    let p = spec.p;
    let (c1, c2, c3) = loadings(p);
    let pair_times: Vec<f64> = (0..=n).map(|m| (m * m.saturating_sub(1)) as f64).collect();
    let triple_times: Vec<f64> = (0..=n).map(|m| (m * m.saturating_sub(1) * m.saturating_sub(2)) as f64).collect();
    let b1 = brownian_at(&pair_times, rng);
    let b2 = brownian_at(&pair_times, rng);
    let b3 = brownian_at(&triple_times, rng);
    let nn = (n * n) as f64;
    let c4 = p * (1.0 - p) / (nn * std::f64::consts::SQRT_2);
    let mut path = StepPath::zeros(2, n);
    for m in 0..=n {
        let f = (m as f64 - 2.0) / nn;
        path.set(m, 0, f * (c1 * b1[m] + c2 * b2[m]));
        path.set(m, 1, f * (c2 * b1[m] + c3 * b2[m]) + c4 * b3[m]);
    }
    path
}

/// Continuous limit `Z(t)` on the grid, from two Brownian motions run at `t^2`.
pub fn sample_limit(spec: &GraphSpec, rng: &mut SimRng) -> StepPath {
    let n = spec.n;
    let (c1, c2, c3) = loadings(spec.p);
    let times: Vec<f64> = (0..=n).map(|m| (m as f64 / n as f64).powi(2)).collect();
    let b1 = brownian_at(&times, rng);
    let b2 = brownian_at(&times, rng);
    let mut path = StepPath::zeros(2, n);
    for m in 0..=n {
        let t = m as f64 / n as f64;
        path.set(m, 0, t * (c1 * b1[m] + c2 * b2[m]));
        path.set(m, 1, t * (c2 * b1[m] + c3 * b2[m]));
    }
    path
}

/// Pre-limit and continuous-limit bound constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GraphBounds {
    pub pre: f64,
    pub con: f64,
}

pub fn graph_bounds(n: usize) -> Result<GraphBounds> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!("graph needs n >= 4, got {n}")));
    }
    let nf = n as f64;
    Ok(GraphBounds { pre: 23.0 / nf, con: 16422.0 * nf.ln().sqrt() / nf.sqrt() + 138.0 / nf.sqrt() })
}

/// The discrete process as a sampler.
#[derive(Debug, Clone, Copy)]
pub struct GraphSampler(pub GraphSpec);

impl PathSampler for GraphSampler {
    fn id(&self) -> String {
        format!("graph:n={}:p={}", self.0.n, self.0.p)
    }

    fn dim(&self) -> usize {
        2
    }

    fn grid(&self) -> usize {
        self.0.n
    }

    fn sample(&self, rng: &mut SimRng) -> StepPath {
        simulate_graph(&self.0, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn complete_graph_edge_count() {
        let spec = GraphSpec::new(10, 0.5).unwrap();
        let raw = raw_path(&spec, &Graph::complete(10)).unwrap();
        assert!((raw.get(10, 0) - 3.6).abs() < 1e-12);
        assert!((spec.mean_edge(10) - 1.8).abs() < 1e-12);
        // 10 * C(9, 2) two-stars
        assert!((raw.get(10, 1) - 3.6).abs() < 1e-12);
    }

    #[test]
    fn lambda_example() {
        let l = lambda_graph(&GraphSpec::new(4, 0.5).unwrap());
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[3.0, 1.5, 0.0, 1.5]));
    }

    #[test]
    fn bounds_example() {
        let b = graph_bounds(100).unwrap();
        assert!((b.pre - 0.23).abs() < 1e-15);
        assert!(b.con > b.pre);
        assert!(graph_bounds(3).is_err());
    }

    #[test]
    fn variance_of_edge_component_at_one() {
        for &(n, p) in &[(10usize, 0.3), (25, 0.5)] {
            let spec = GraphSpec::new(n, p).unwrap();
            let c = cov_structure(&spec, 1.0, 1.0).unwrap();
            let nf = n as f64;
            let expected = (nf - 2.0).powi(2) * nf * (nf - 1.0) * p * (1.0 - p) / (2.0 * nf.powi(4));
            assert!((c[(0, 0)] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn covariance_matches_single_time_formula() {
        let spec = GraphSpec::new(20, 0.3).unwrap();
        let p = 0.3;
        for m in [3usize, 10, 20] {
            let t = m as f64 / 20.0;
            let c = cov_structure(&spec, t, t).unwrap();
            let mf = m as f64;
            let k = 3.0 * mf * (mf - 1.0) * (mf - 2.0) / 6.0 * p * (1.0 - p) / 20f64.powi(4);
            let want = [k * (mf - 2.0), k * 2.0 * p * (mf - 2.0), k * (4.0 * p * p * (mf - 2.0) + p * (1.0 - p))];
            assert!((c[(0, 0)] - want[0]).abs() < 1e-15);
            assert!((c[(0, 1)] - want[1]).abs() < 1e-15);
            assert!((c[(1, 1)] - want[2]).abs() < 1e-15);
        }
    }

    #[test]
    fn prelimit_loadings_reproduce_covariance() {
        let p = 0.37;
        let (c1, c2, c3) = loadings(p);
        let q = 1.0 - p;
        assert!((c1 * c1 + c2 * c2 - p * q / 2.0).abs() < 1e-15);
        assert!((c1 * c2 + c2 * c3 - p * p * q).abs() < 1e-15);
        assert!((c2 * c2 + c3 * c3 - 2.0 * p.powi(3) * q).abs() < 1e-15);
    }

    #[test]
    fn simulated_and_stored_paths_agree_in_law() {
        // same first moments of T(1) from both code paths
        let spec = GraphSpec::new(12, 0.4).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let reps = 20_000;
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..reps {
            a += simulate_graph(&spec, &mut rng).get(12, 0);
            b += graph_path(&spec, &Graph::random(12, 0.4, &mut rng)).unwrap().get(12, 0);
        }
        let sd = cov_structure(&spec, 1.0, 1.0).unwrap()[(0, 0)].sqrt();
        let se = sd * (2.0 / reps as f64).sqrt();
        assert!(((a - b) / reps as f64).abs() < 5.0 * se);
    }

    #[test]
    fn regression_exhaustive_small() {
        for n in [4usize, 5] {
            let spec = GraphSpec::new(n, 0.3).unwrap();
            for bits in 0..(1u64 << (n * (n - 1) / 2)) {
                let r = graph_regression_residual(&spec, &Graph::from_bits(n, bits)).unwrap();
                assert!(r.edge < 1e-12 && r.two_star < 1e-12, "{n} {bits}: {r:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn pair_delta_matches_recompute(seed in any::<u64>(), n in 4usize..12, p in 0.05f64..0.95) {
            let spec = GraphSpec::new(n, p).unwrap();
            let mut rng = SimRng::seed_from_u64(seed);
            let g = Graph::random(n, p, &mut rng);
            let draw = graph_pair(&spec, &g, &mut rng).unwrap();
            let mut h = g.clone();
            h.set(draw.pair.0, draw.pair.1, draw.new);
            let direct = graph_path(&spec, &h).unwrap();
            prop_assert!(direct.sub(&draw.y_prime).unwrap().sup_norm() < 1e-12);
        }

        #[test]
        fn lambda_form_of_regression(seed in any::<u64>(), n in 4usize..10) {
            let spec = GraphSpec::new(n, 0.6).unwrap();
            let mut rng = SimRng::seed_from_u64(seed);
            let g = Graph::random(n, 0.6, &mut rng);
            prop_assert!(regression_residual_lambda(&spec, &g, &lambda_graph(&spec)).unwrap() < 1e-12);
        }

        #[test]
        fn covariance_is_psd(n in 4usize..40, p in 0.05f64..0.95) {
            let spec = GraphSpec::new(n, p).unwrap();
            let times = [0.25, 0.5, 0.75, 1.0];
            let mut m = DMatrix::zeros(8, 8);
            for (a, &t) in times.iter().enumerate() {
                for (b, &u) in times.iter().enumerate() {
                    let c = cov_structure(&spec, t, u).unwrap();
                    m.view_mut((2 * a, 2 * b), (2, 2)).copy_from(&c);
                }
            }
            prop_assert!(crate::gaussian_limits::psd_sqrt(&m).is_ok());
        }
    }
}
