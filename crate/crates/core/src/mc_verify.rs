//! Monte Carlo comparison of path laws through certified test functionals.
//!
//! Replications draw from `rng_for(seed, stream, rep)` and are reduced in
//! replication order, so results do not depend on the worker count.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::gaussian_limits::GaussianProcessSpec;
use crate::path_core::StepPath;
use crate::uprocess::{simulate_y, UProcessSpec};
use crate::{rng_for, stable_hash, Error, Result, SimRng};

/// Dominance slack in standard errors.
pub const DOMINANCE_SE: f64 = 4.0;

/// A source of random step paths on a fixed grid.
pub trait PathSampler: Sync {
    /// Stable identifier; also selects the random stream.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn grid(&self) -> usize;
    fn sample(&self, rng: &mut SimRng) -> StepPath;
}

/// Discrete U-process sampler.
#[derive(Debug, Clone)]
pub struct UProcessSampler {
    pub label: String,
    pub spec: UProcessSpec,
}

impl PathSampler for UProcessSampler {
    fn id(&self) -> String {
        format!("uprocess:{}:n={}", self.label, self.spec.n())
    }

    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn grid(&self) -> usize {
        self.spec.n()
    }

    fn sample(&self, rng: &mut SimRng) -> StepPath {
        simulate_y(&self.spec, rng)
    }
}

/// Gaussian sampler with a caller-chosen label.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    label: String,
    dim: usize,
    grid: usize,
    spec: GaussianProcessSpec,
}

impl GaussianSampler {
    /// Shape is read off one throwaway draw.
    pub fn new(label: &str, spec: GaussianProcessSpec) -> Self {
        let probe = spec.sample(&mut SimRng::seed_from_u64(0));
        Self { label: format!("{}:{label}", spec.label()), dim: probe.dim(), grid: probe.grid(), spec }
    }
}

impl PathSampler for GaussianSampler {
    fn id(&self) -> String {
        self.label.clone()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn grid(&self) -> usize {
        self.grid
    }

    fn sample(&self, rng: &mut SimRng) -> StepPath {
        self.spec.sample(rng)
    }
}

/// `g(w) = a cos(sum_j <w(t_j), theta_j>)` with `||g||_{M^0} <= a (1 + S + S^2 + S^3)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunctional {
    pub times: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    pub amplitude: f64,
    pub certified_norm: f64,
}

pub fn make_test_functional(times: Vec<f64>, thetas: Vec<Vec<f64>>) -> Result<TestFunctional> {
    if times.is_empty() || times.len() != thetas.len() {
        return Err(Error::InvalidParameter("need k >= 1 times, one direction each".into()));
    }
    if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidParameter("times must lie in [0, 1]".into()));
    }
    let d = thetas[0].len();
    if d == 0 || thetas.iter().any(|th| th.len() != d) {
        return Err(Error::DimensionMismatch("directions must share a positive dimension".into()));
    }
    let s: f64 = thetas.iter().map(|th| th.iter().map(|x| x * x).sum::<f64>().sqrt()).sum();
    if !s.is_finite() {
        return Err(Error::InvalidParameter("non-finite direction".into()));
    }
    if s == 0.0 {
        return Err(Error::InvalidParameter("all directions zero: functional is constant".into()));
    }
    let amplitude = 1.0 / (1.0 + s + s * s + s * s * s);
    Ok(TestFunctional { times, thetas, amplitude, certified_norm: 1.0 })
}

impl TestFunctional {
    pub fn dim(&self) -> usize {
        self.thetas[0].len()
    }

    /// `sum_j |theta_j|`.
    pub fn direction_mass(&self) -> f64 {
        self.thetas.iter().map(|th| th.iter().map(|x| x * x).sum::<f64>().sqrt()).sum()
    }

    pub fn id(&self) -> String {
        format!("cos:t={:?}:theta={:?}", self.times, self.thetas)
    }

    pub fn eval(&self, w: &StepPath) -> Result<f64> {
        if w.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!("path d = {}, functional d = {}", w.dim(), self.dim())));
        }
        let mut arg = 0.0;
        for (t, th) in self.times.iter().zip(&self.thetas) {
            arg += w.eval(*t)?.iter().zip(th).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.amplitude * arg.cos())
    }
}

/// `n_funcs` functionals with directions drawn uniformly from `[-1, 1]^d` and
/// times from `{1/4, 1/2, 3/4, 1}`.
pub fn random_functionals(d: usize, count: usize, seed: u64) -> Result<Vec<TestFunctional>> {
    use rand::Rng;
    let mut rng = rng_for(seed, stable_hash(b"functionals"), 0);
    let grid = [0.25, 0.5, 0.75, 1.0];
    (0..count)
        .map(|_| {
            let k = rng.random_range(1..=3);
            let times = (0..k).map(|_| grid[rng.random_range(0..grid.len())]).collect();
            let thetas = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            make_test_functional(times, thetas)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub replications: usize,
    pub functional: String,
    pub samplers: [String; 2],
    pub mean_a: f64,
    pub mean_b: f64,
}

/// How random streams are assigned to the two samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Streams {
    /// Stream from each sampler's id.
    #[default]
    Independent,
    /// Stream from the sampler's position only, so the same draws feed
    /// samplers that differ only in `n` (common random numbers).
    Common,
}

/// Run `f` on a pool of `threads` workers, or the global pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// `g_k(path)` for every replication, in replication order.
fn functional_values(s: &dyn PathSampler, stream: u64, gs: &[TestFunctional], reps: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let path = s.sample(&mut rng_for(seed, stream, r as u64));
            gs.iter().map(|g| g.eval(&path)).collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone, r: usize) -> (f64, f64) {
    let rf = r as f64;
    let mean = xs.clone().sum::<f64>() / rf;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (rf - 1.0);
    (mean, (var / rf).sqrt())
}

/// `|E g(A) - E g(B)|` for each functional, sharing the sampled paths.
pub fn estimate_distances(
    a: &dyn PathSampler,
    b: &dyn PathSampler,
    gs: &[TestFunctional],
    reps: usize,
    seed: u64,
    streams: Streams,
) -> Result<Vec<DistanceEstimate>> {
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least two replications".into()));
    }
    if a.dim() != b.dim() || a.grid() != b.grid() {
        return Err(Error::DimensionMismatch(format!(
            "samplers differ: (d, n) = ({}, {}) vs ({}, {})",
            a.dim(),
            a.grid(),
            b.dim(),
            b.grid()
        )));
    }
    let (sa, sb) = match streams {
        Streams::Independent => (stable_hash(a.id().as_bytes()), stable_hash(b.id().as_bytes())),
        Streams::Common => (stable_hash(b"common:a"), stable_hash(b"common:b")),
    };
    let va = functional_values(a, sa, gs, reps, seed)?;
    let vb = functional_values(b, sb, gs, reps, seed)?;
    Ok(gs
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let (ma, ea) = mean_se(va.iter().map(|v| v[k]), reps);
            let (mb, eb) = mean_se(vb.iter().map(|v| v[k]), reps);
            DistanceEstimate {
                estimate: (ma - mb).abs(),
                standard_error: (ea * ea + eb * eb).sqrt(),
                replications: reps,
                functional: g.id(),
                samplers: [a.id(), b.id()],
                mean_a: ma,
                mean_b: mb,
            }
        })
        .collect())
}

pub fn estimate_distance(
    a: &dyn PathSampler,
    b: &dyn PathSampler,
    g: &TestFunctional,
    reps: usize,
    seed: u64,
) -> Result<DistanceEstimate> {
    Ok(estimate_distances(a, b, std::slice::from_ref(g), reps, seed, Streams::Independent)?.remove(0))
}

/// Result of checking an estimate against a bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dominance {
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    pub dominated: bool,
}

/// `bound` scales with the functional's certified norm.
pub fn dominance(e: &DistanceEstimate, g: &TestFunctional, bound_per_norm: f64) -> Dominance {
    let bound = bound_per_norm * g.certified_norm;
    Dominance {
        estimate: e.estimate,
        se: e.standard_error,
        bound,
        dominated: e.estimate <= bound + DOMINANCE_SE * e.standard_error,
    }
}

/// Sample covariance of `(w(t_1), ..., w(t_k))`, flattened time-major
/// (`index = time * d + component`), with jackknife standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub times: Vec<f64>,
    pub d: usize,
    pub cov: DMatrix<f64>,
    pub se: DMatrix<f64>,
}

impl CovarianceEstimate {
    pub fn index(&self, time: usize, component: usize) -> usize {
        time * self.d + component
    }
}

pub fn empirical_covariance(sampler: &dyn PathSampler, times: &[f64], reps: usize, seed: u64) -> Result<CovarianceEstimate> {
    if reps < 3 {
        return Err(Error::InvalidParameter("need at least three replications".into()));
    }
    let d = sampler.dim();
    let n = sampler.grid();
    let idx = times.iter().map(|&t| StepPath::grid_index(n, t)).collect::<Result<Vec<_>>>()?;
    let k = d * times.len();
    let stream = stable_hash(sampler.id().as_bytes());
    let rows: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let path = sampler.sample(&mut rng_for(seed, stream, r as u64));
            idx.iter().flat_map(|&m| path.row(m).to_vec()).collect()
        })
        .collect();
    let rf = reps as f64;
    let mut mean = vec![0.0; k];
    for row in &rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / rf;
        }
    }
    let centered: Vec<Vec<f64>> = rows.iter().map(|row| row.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = DMatrix::zeros(k, k);
    let mut se = DMatrix::zeros(k, k);
    let mut loo = vec![0.0; reps];
    for a in 0..k {
        for b in a..k {
            let sxy: f64 = centered.iter().map(|c| c[a] * c[b]).sum();
            // centered sums of x and y are zero, so dropping row r leaves
            // sums -x_r, -y_r and cross sum sxy - x_r y_r
            let m = rf - 1.0;
            for (r, c) in centered.iter().enumerate() {
                let (x, y) = (c[a], c[b]);
                loo[r] = (sxy - x * y - x * y / m) / (m - 1.0);
            }
            let c_ab = sxy / (rf - 1.0);
            let lm = loo.iter().sum::<f64>() / rf;
            let jack = ((rf - 1.0) / rf * loo.iter().map(|v| (v - lm) * (v - lm)).sum::<f64>()).sqrt();
            cov[(a, b)] = c_ab;
            cov[(b, a)] = c_ab;
            se[(a, b)] = jack;
            se[(b, a)] = jack;
        }
    }
    Ok(CovarianceEstimate { times: times.to_vec(), d, cov, se })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(log n, log value)`.
pub fn rate_fit(ns: &[f64], values: &[f64]) -> Result<RateFit> {
    if ns.len() != values.len() || ns.len() < 3 {
        return Err(Error::InvalidParameter("need at least three (n, value) pairs".into()));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) || ns[0] <= 0.0 {
        return Err(Error::InvalidParameter("ns must be positive and strictly increasing".into()));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("values must be positive and finite".into()));
    }
    let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let k = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / k, y.iter().sum::<f64>() / k);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { slope * sxy / syy };
    Ok(RateFit { slope, intercept, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_limits::brownian_at;
    use proptest::prelude::*;

    struct Zero(usize);

    impl PathSampler for Zero {
        fn id(&self) -> String {
            "zero".into()
        }
        fn dim(&self) -> usize {
            1
        }
        fn grid(&self) -> usize {
            self.0
        }
        fn sample(&self, _: &mut SimRng) -> StepPath {
            StepPath::zeros(1, self.0)
        }
    }

    struct Brownian(usize, &'static str);

    impl PathSampler for Brownian {
        fn id(&self) -> String {
            format!("bm:{}", self.1)
        }
        fn dim(&self) -> usize {
            1
        }
        fn grid(&self) -> usize {
            self.0
        }
        fn sample(&self, rng: &mut SimRng) -> StepPath {
            let times: Vec<f64> = (0..=self.0).map(|m| m as f64 / self.0 as f64).collect();
            StepPath::new(1, self.0, brownian_at(&times, rng)).unwrap()
        }
    }

    #[test]
    fn functional_examples() {
        let g = make_test_functional(vec![1.0], vec![vec![1.0, 0.0]]).unwrap();
        assert_eq!(g.amplitude, 0.25);
        assert_eq!(g.eval(&StepPath::zeros(2, 5)).unwrap(), 0.25);
        let g2 = make_test_functional(vec![1.0], vec![vec![2.0, 0.0]]).unwrap();
        assert!((g2.amplitude - 1.0 / 15.0).abs() < 1e-16);
        assert!(make_test_functional(vec![0.5], vec![vec![0.0, 0.0]]).is_err());
        assert!(make_test_functional(vec![], vec![]).is_err());
        assert!(make_test_functional(vec![1.5], vec![vec![1.0]]).is_err());
        let mut w = StepPath::zeros(2, 4);
        w.set(4, 0, std::f64::consts::PI);
        assert!((g.eval(&w).unwrap() + 0.25).abs() < 1e-15);
    }

    #[test]
    fn same_sampler_same_seed_is_zero() {
        let g = make_test_functional(vec![1.0], vec![vec![1.0]]).unwrap();
        let b = Brownian(8, "a");
        let e = estimate_distance(&b, &b, &g, 200, 3).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert!(e.standard_error > 0.0);
        assert!(estimate_distance(&b, &b, &g, 1, 3).is_err());
        assert!(estimate_distance(&b, &Zero(9), &g, 10, 3).is_err());
    }

    #[test]
    fn same_law_within_four_se() {
        let g = make_test_functional(vec![0.5, 1.0], vec![vec![0.7], vec![-0.4]]).unwrap();
        let e = estimate_distance(&Brownian(16, "a"), &Brownian(16, "b"), &g, 4000, 11).unwrap();
        assert!(e.estimate <= 4.0 * e.standard_error, "{e:?}");
    }

    #[test]
    fn symmetric_in_samplers() {
        let g = make_test_functional(vec![1.0], vec![vec![1.0]]).unwrap();
        let (a, b) = (Brownian(8, "a"), Zero(8));
        let ab = estimate_distance(&a, &b, &g, 300, 5).unwrap();
        let ba = estimate_distance(&b, &a, &g, 300, 5).unwrap();
        assert_eq!(ab.estimate, ba.estimate);
        assert_eq!(ab.standard_error, ba.standard_error);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let g = make_test_functional(vec![1.0], vec![vec![1.0]]).unwrap();
        let run = |t| with_threads(Some(t), || estimate_distance(&Brownian(8, "a"), &Brownian(8, "b"), &g, 500, 9).unwrap()).unwrap();
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn zero_sampler_covariance() {
        let c = empirical_covariance(&Zero(4), &[0.5, 1.0], 10, 1).unwrap();
        assert_eq!(c.cov, DMatrix::zeros(2, 2));
        assert!(empirical_covariance(&Zero(4), &[1.0], 2, 1).is_err());
    }

    #[test]
    fn brownian_covariance() {
        let c = empirical_covariance(&Brownian(4, "a"), &[0.5, 1.0], 100_000, 2).unwrap();
        let expected = [[0.5, 0.5], [0.5, 1.0]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((c.cov[(a, b)] - expected[a][b]).abs() <= 3.0 * c.se[(a, b)], "{a}{b}: {} {}", c.cov[(a, b)], c.se[(a, b)]);
            }
        }
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let c = empirical_covariance(&Brownian(4, "a"), &[0.25, 1.0], 30, 8).unwrap();
        let b = Brownian(4, "a");
        let stream = stable_hash(b.id().as_bytes());
        let xs: Vec<[f64; 2]> = (0..30)
            .map(|r| {
                let p = b.sample(&mut rng_for(8, stream, r));
                [p.get(1, 0), p.get(4, 0)]
            })
            .collect();
        let cov = |rows: &[[f64; 2]]| {
            let m = rows.len() as f64;
            let (mx, my) = (rows.iter().map(|r| r[0]).sum::<f64>() / m, rows.iter().map(|r| r[1]).sum::<f64>() / m);
            rows.iter().map(|r| (r[0] - mx) * (r[1] - my)).sum::<f64>() / (m - 1.0)
        };
        let loo: Vec<f64> = (0..30)
            .map(|r| {
                let rest: Vec<[f64; 2]> = xs.iter().enumerate().filter(|(i, _)| *i != r).map(|(_, v)| *v).collect();
                cov(&rest)
            })
            .collect();
        let lm = loo.iter().sum::<f64>() / 30.0;
        let jack = (29.0 / 30.0 * loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>()).sqrt();
        assert!((c.cov[(0, 1)] - cov(&xs)).abs() < 1e-12);
        assert!((c.se[(0, 1)] - jack).abs() < 1e-10);
    }

    #[test]
    fn rate_fit_examples() {
        let ns = [10.0, 20.0, 40.0, 80.0];
        let f = rate_fit(&ns, &ns.map(|n| 3.0 / n)).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        assert_eq!(rate_fit(&ns, &[2.0; 4]).unwrap().slope, 0.0);
        let big = [50.0, 100.0, 200.0, 400.0, 800.0];
        let s = rate_fit(&big, &big.map(|n: f64| n.ln().sqrt() / n.sqrt())).unwrap().slope;
        assert!(s > -0.5 && s < -0.35, "{s}");
        assert!(rate_fit(&ns, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(rate_fit(&[1.0, 2.0], &[1.0, 1.0]).is_err());
        assert!(rate_fit(&[1.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn certified_norm_formula(th in proptest::collection::vec(-3.0f64..3.0, 1..4)) {
            prop_assume!(th.iter().any(|x| *x != 0.0));
            let g = make_test_functional(vec![1.0], vec![th.clone()]).unwrap();
            let s = g.direction_mass();
            prop_assert!((g.amplitude * (1.0 + s + s * s + s * s * s) - 1.0).abs() < 1e-12);
            let w = StepPath::new(th.len(), 1, (0..2 * th.len()).map(|i| i as f64 * 0.3).collect()).unwrap();
            prop_assert!(g.eval(&w).unwrap().abs() <= g.amplitude);
        }

        #[test]
        fn power_law_slope_recovered(c in 0.1f64..10.0, alpha in -2.0f64..1.0) {
            let ns = [3.0, 9.0, 27.0, 81.0];
            let f = rate_fit(&ns, &ns.map(|n: f64| c * n.powf(alpha))).unwrap();
            prop_assert!((f.slope - alpha).abs() < 1e-10);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-9);
        }
    }
}
