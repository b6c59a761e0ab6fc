//! Base measures and symmetric kernels, with the moment and degeneracy
//! computations the bounds need.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SimRng};

/// Default cap on the number of tuples enumerated by exact moment routines.
pub const ENUMERATION_CAP: u64 = 10_000_000;

const SYMMETRY_CHECKS: usize = 20;

/// User supplied moments of a sampled base measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub second: f64,
    pub abs_third: f64,
}

pub type Draw = Arc<dyn Fn(&mut SimRng) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct SamplerMeasure {
    pub label: String,
    pub draw: Draw,
    pub moments: Option<Moments>,
}

#[derive(Clone)]
pub enum BaseMeasure {
    /// Atoms `(value, mass)` with masses summing to one.
    Finite(Vec<(f64, f64)>),
    Sampler(SamplerMeasure),
}

impl fmt::Debug for BaseMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseMeasure::Finite(a) => f.debug_tuple("Finite").field(a).finish(),
            BaseMeasure::Sampler(s) => f
                .debug_struct("Sampler")
                .field("label", &s.label)
                .field("moments", &s.moments)
                .finish(),
        }
    }
}

impl PartialEq for BaseMeasure {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (BaseMeasure::Finite(a), BaseMeasure::Finite(b)) => a == b,
            (BaseMeasure::Sampler(a), BaseMeasure::Sampler(b)) => Arc::ptr_eq(&a.draw, &b.draw),
            _ => false,
        }
    }
}

impl BaseMeasure {
    pub fn finite(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("empty support".into()));
        }
        if atoms.iter().any(|(v, m)| !v.is_finite() || !(*m >= 0.0)) {
            return Err(Error::InvalidParameter("atoms need finite values and nonnegative masses".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("masses sum to {total}")));
        }
        Ok(BaseMeasure::Finite(atoms))
    }

    pub fn rademacher() -> Self {
        BaseMeasure::Finite(vec![(-1.0, 0.5), (1.0, 0.5)])
    }

    /// `xi - p` for `xi ~ Bernoulli(p)`.
    pub fn centered_bernoulli(p: f64) -> Result<Self> {
        check_prob(p)?;
        Ok(BaseMeasure::Finite(vec![(-p, 1.0 - p), (1.0 - p, p)]))
    }

    /// `(xi - p) / sqrt(p (1 - p))`.
    pub fn standardized_bernoulli(p: f64) -> Result<Self> {
        check_prob(p)?;
        let s = (p * (1.0 - p)).sqrt();
        Ok(BaseMeasure::Finite(vec![(-p / s, 1.0 - p), ((1.0 - p) / s, p)]))
    }

    pub fn standard_normal() -> Self {
        BaseMeasure::Sampler(SamplerMeasure {
            label: "standard_normal".into(),
            draw: Arc::new(|rng: &mut SimRng| rng.sample::<f64, _>(rand_distr::StandardNormal)),
            moments: Some(Moments {
                mean: 0.0,
                second: 1.0,
                abs_third: 2.0 * (2.0 / std::f64::consts::PI).sqrt(),
            }),
        })
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match self {
            BaseMeasure::Finite(atoms) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, m) in atoms {
                    acc += m;
                    if u < acc {
                        return *v;
                    }
                }
                atoms.last().map(|a| a.0).unwrap_or(0.0)
            }
            BaseMeasure::Sampler(s) => (s.draw)(rng),
        }
    }

    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match self {
            BaseMeasure::Finite(a) => Some(a),
            BaseMeasure::Sampler(_) => None,
        }
    }

    /// Mean, second moment and third absolute moment.
    pub fn moments(&self) -> Option<Moments> {
        match self {
            BaseMeasure::Finite(a) => Some(Moments {
                mean: a.iter().map(|(v, m)| v * m).sum(),
                second: a.iter().map(|(v, m)| v * v * m).sum(),
                abs_third: a.iter().map(|(v, m)| v.abs().powi(3) * m).sum(),
            }),
            BaseMeasure::Sampler(s) => s.moments,
        }
    }

    /// Mean zero and unit variance within `tol`.
    pub fn check_standardized(&self, tol: f64) -> Result<Moments> {
        let m = self
            .moments()
            .ok_or_else(|| Error::NotStandardized("sampler without declared moments".into()))?;
        if m.mean.abs() > tol || (m.second - 1.0).abs() > tol {
            return Err(Error::NotStandardized(format!("mean {} second moment {}", m.mean, m.second)));
        }
        Ok(m)
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("probability {p} outside (0, 1)")));
    }
    Ok(())
}

/// Kernel values keyed by the sorted support indices of the arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct TableKernel {
    pub support: Vec<f64>,
    pub values: HashMap<Vec<usize>, f64>,
}

impl TableKernel {
    fn index_of(&self, x: f64) -> Option<usize> {
        self.support.iter().position(|s| (s - x).abs() <= 1e-12 * (1.0 + s.abs()))
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut key = Vec::with_capacity(x.len());
        for v in x {
            match self.index_of(*v) {
                Some(i) => key.push(i),
                None => return f64::NAN,
            }
        }
        key.sort_unstable();
        self.values.get(&key).copied().unwrap_or(0.0)
    }
}

pub type KernelClosure = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelFn {
    /// `x_1 x_2 ... x_p`.
    Product,
    Table(TableKernel),
    Custom(KernelClosure),
}

impl fmt::Debug for KernelFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFn::Product => write!(f, "Product"),
            KernelFn::Table(t) => f.debug_tuple("Table").field(t).finish(),
            KernelFn::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Symmetric kernel of order `p` over a base measure.
#[derive(Debug, Clone)]
pub struct Kernel {
    p: usize,
    f: KernelFn,
    measure: BaseMeasure,
}

impl Kernel {
    /// Validates order and spot-checks symmetry on random permutations.
    pub fn new(p: usize, f: KernelFn, measure: BaseMeasure) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter("kernel order must be at least 1".into()));
        }
        let k = Self { p, f, measure };
        k.spot_check_symmetry()?;
        Ok(k)
    }

    pub fn product(p: usize, measure: BaseMeasure) -> Result<Self> {
        Self::new(p, KernelFn::Product, measure)
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn measure(&self) -> &BaseMeasure {
        &self.measure
    }

    pub fn function(&self) -> &KernelFn {
        &self.f
    }

    pub fn is_product(&self) -> bool {
        matches!(self.f, KernelFn::Product)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.p);
        match &self.f {
            KernelFn::Product => x.iter().product(),
            KernelFn::Table(t) => t.eval(x),
            KernelFn::Custom(c) => c(x),
        }
    }

    fn spot_check_symmetry(&self) -> Result<()> {
        if self.p == 1 || matches!(self.f, KernelFn::Product) {
            return Ok(());
        }
        let mut rng = SimRng::seed_from_u64(0x5eed_5e77);
        let mut x: Vec<f64> = vec![0.0; self.p];
        for _ in 0..SYMMETRY_CHECKS {
            for v in x.iter_mut() {
                *v = self.measure.sample(&mut rng);
            }
            let base = self.eval(&x);
            let mut y = x.clone();
            y.shuffle(&mut rng);
            let other = self.eval(&y);
            if (base - other).abs() > 1e-12 * (1.0 + base.abs()) && !(base.is_nan() && other.is_nan()) {
                return Err(Error::NotSymmetric(format!("{x:?} -> {base}, {y:?} -> {other}")));
            }
        }
        Ok(())
    }
}

/// Calls `f(indices, orderings)` for every multiset of size `k` from `0..s`,
/// `orderings` being the number of ordered tuples with that content.
pub fn for_each_multiset<F: FnMut(&[usize], f64)>(s: usize, k: usize, mut f: F) {
    let mut fact = vec![1.0f64; k + 1];
    for i in 1..=k {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut idx = vec![0usize; k];
    loop {
        let mut count = fact[k];
        let mut run = 1usize;
        for i in 1..=k {
            if i < k && idx[i] == idx[i - 1] {
                run += 1;
            } else {
                count /= fact[run];
                run = 1;
            }
        }
        f(&idx, count);
        // advance to next non-decreasing sequence
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] + 1 < s {
                let v = idx[pos] + 1;
                for j in pos..k {
                    idx[j] = v;
                }
                break;
            }
        }
    }
}

fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

fn multiset_count(s: usize, k: usize) -> f64 {
    binom((s + k) as u64 - 1, k as u64)
}

/// Expectation of `h(X_1, ..., X_k)` for i.i.d. atoms, with `h` symmetric.
fn expect_symmetric<F: FnMut(&[f64]) -> f64>(atoms: &[(f64, f64)], k: usize, mut h: F) -> Result<f64> {
    if multiset_count(atoms.len(), k) > ENUMERATION_CAP as f64 {
        return Err(Error::TooLarge(format!("{} atoms to the power {k}", atoms.len())));
    }
    let mut total = 0.0;
    let mut x = vec![0.0; k];
    for_each_multiset(atoms.len(), k, |idx, count| {
        let mut w = count;
        for (j, &i) in idx.iter().enumerate() {
            x[j] = atoms[i].0;
            w *= atoms[i].1;
        }
        if w > 0.0 {
            total += w * h(&x);
        }
    });
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegeneracyReport {
    pub is_degenerate: bool,
    pub max_residual: f64,
    /// Present for Monte Carlo checks.
    pub standard_error: Option<f64>,
    /// Monte Carlo residual within three standard errors of the tolerance.
    pub inconclusive: bool,
}

/// Largest `|E[psi(x_1, ..., x_{p-1}, X)]|` over conditioning tuples.
pub fn check_degenerate(kernel: &Kernel, tol: f64) -> Result<DegeneracyReport> {
    let p = kernel.p;
    match &kernel.measure {
        BaseMeasure::Finite(atoms) => {
            let mut worst = 0.0f64;
            let mut x = vec![0.0; p];
            let mut err = None;
            if multiset_count(atoms.len(), p - 1) * atoms.len() as f64 > ENUMERATION_CAP as f64 {
                return degenerate_mc(kernel, tol, 20, 20_000, 0xde9e);
            }
            for_each_multiset(atoms.len(), p - 1, |idx, _| {
                for (j, &i) in idx.iter().enumerate() {
                    x[j] = atoms[i].0;
                }
                let mut m = 0.0;
                for (v, w) in atoms {
                    x[p - 1] = *v;
                    m += w * kernel.eval(&x);
                }
                if m.is_nan() {
                    err = Some(Error::InvalidParameter("kernel is NaN on the support".into()));
                }
                worst = worst.max(m.abs());
            });
            if let Some(e) = err {
                return Err(e);
            }
            Ok(DegeneracyReport {
                is_degenerate: worst <= tol,
                max_residual: worst,
                standard_error: None,
                inconclusive: false,
            })
        }
        BaseMeasure::Sampler(s) => match (&kernel.f, s.moments) {
            (KernelFn::Product, Some(m)) => Ok(DegeneracyReport {
                // E[x_1 ... x_{p-1} X] = x_1 ... x_{p-1} E X, conditioning values unbounded
                is_degenerate: m.mean.abs() <= tol,
                max_residual: m.mean.abs(),
                standard_error: None,
                inconclusive: false,
            }),
            _ => degenerate_mc(kernel, tol, 20, 20_000, 0xde9e),
        },
    }
}

/// Monte Carlo degeneracy check on `tuples` random conditioning tuples.
pub fn degenerate_mc(kernel: &Kernel, tol: f64, tuples: usize, reps: usize, seed: u64) -> Result<DegeneracyReport> {
    let p = kernel.p;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_se = 0.0f64;
    let mut x = vec![0.0; p];
    for _ in 0..tuples {
        for v in x.iter_mut().take(p - 1) {
            *v = kernel.measure.sample(&mut rng);
        }
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..reps {
            x[p - 1] = kernel.measure.sample(&mut rng);
            let v = kernel.eval(&x);
            s += v;
            s2 += v * v;
        }
        let mean = s / reps as f64;
        let var = (s2 / reps as f64 - mean * mean).max(0.0);
        let se = (var / reps as f64).sqrt();
        if mean.abs() > worst {
            worst = mean.abs();
            worst_se = se;
        }
    }
    Ok(DegeneracyReport {
        is_degenerate: worst <= tol + 3.0 * worst_se,
        max_residual: worst,
        standard_error: Some(worst_se),
        inconclusive: (worst - tol).abs() <= 3.0 * worst_se,
    })
}

/// `E|psi(X_1, ..., X_p)|^r` by exact enumeration or closed form.
pub fn abs_moment(kernel: &Kernel, r: f64) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::InvalidParameter(format!("moment order {r} below 1")));
    }
    if kernel.is_product() {
        if let Some(m) = kernel.measure.moments() {
            if r == 2.0 {
                return Ok(m.second.powi(kernel.p as i32));
            }
            if r == 3.0 {
                return Ok(m.abs_third.powi(kernel.p as i32));
            }
        }
    }
    match &kernel.measure {
        BaseMeasure::Finite(atoms) => expect_symmetric(atoms, kernel.p, |x| kernel.eval(x).abs().powf(r)),
        BaseMeasure::Sampler(_) => Err(Error::Unsupported(
            "exact moments need a finite base measure; use lr_norm_mc".into(),
        )),
    }
}

/// `||psi||_{L^r}`.
pub fn lr_norm(kernel: &Kernel, r: f64) -> Result<f64> {
    Ok(abs_moment(kernel, r)?.powf(1.0 / r))
}

/// Monte Carlo estimate of `||psi||_{L^r}` with a delta-method standard error.
pub fn lr_norm_mc(kernel: &Kernel, r: f64, reps: usize, rng: &mut SimRng) -> Result<(f64, f64)> {
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least two replications".into()));
    }
    let mut x = vec![0.0; kernel.p];
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..reps {
        for v in x.iter_mut() {
            *v = kernel.measure.sample(rng);
        }
        let a = kernel.eval(&x).abs().powf(r);
        s += a;
        s2 += a * a;
    }
    let mean = s / reps as f64;
    let var = (s2 - reps as f64 * mean * mean).max(0.0) / (reps - 1) as f64;
    let se_mean = (var / reps as f64).sqrt();
    let est = mean.powf(1.0 / r);
    let se = if mean > 0.0 { se_mean * est / (r * mean) } else { 0.0 };
    Ok((est, se))
}

/// `E[psi_1(X_1..X_p) psi_2(X_1..X_p)]` for kernels of equal order on a common measure.
pub fn cross_moment(a: &Kernel, b: &Kernel) -> Result<f64> {
    if a.p != b.p {
        return Err(Error::DimensionMismatch("kernels of different order".into()));
    }
    if a.measure != b.measure {
        return Err(Error::InvalidParameter("kernels use different measures".into()));
    }
    if a.is_product() && b.is_product() {
        if let Some(m) = a.measure.moments() {
            return Ok(m.second.powi(a.p as i32));
        }
    }
    match &a.measure {
        BaseMeasure::Finite(atoms) => expect_symmetric(atoms, a.p, |x| a.eval(x) * b.eval(x)),
        BaseMeasure::Sampler(_) => Err(Error::Unsupported("cross moment of sampled custom kernels".into())),
    }
}

/// `E|psi(X_1, ..., X_p) - psi(X_2, ..., X_{p+1})|^3`.
pub fn pair_diff_abs3(kernel: &Kernel) -> Result<f64> {
    let atoms = kernel
        .measure
        .atoms()
        .ok_or_else(|| Error::Unsupported("pair difference moment needs a finite measure".into()))?;
    let p = kernel.p;
    let s = atoms.len();
    if multiset_count(s, p - 1) * (s * s) as f64 > ENUMERATION_CAP as f64 {
        return Err(Error::TooLarge("pair difference enumeration".into()));
    }
    let mut x = vec![0.0; p];
    let mut y = vec![0.0; p];
    let mut total = 0.0;
    for_each_multiset(s, p - 1, |idx, count| {
        let mut w = count;
        for (j, &i) in idx.iter().enumerate() {
            x[j] = atoms[i].0;
            y[j] = atoms[i].0;
            w *= atoms[i].1;
        }
        for (u, wu) in atoms {
            x[p - 1] = *u;
            let a = kernel.eval(&x);
            for (v, wv) in atoms {
                y[p - 1] = *v;
                total += w * wu * wv * (a - kernel.eval(&y)).abs().powi(3);
            }
        }
    });
    Ok(total)
}

/// Monte Carlo version of [`pair_diff_abs3`], returning estimate and standard error.
pub fn pair_diff_abs3_mc(kernel: &Kernel, reps: usize, rng: &mut SimRng) -> (f64, f64) {
    let p = kernel.p;
    let mut z = vec![0.0; p + 1];
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..reps {
        for v in z.iter_mut() {
            *v = kernel.measure.sample(rng);
        }
        let a = (kernel.eval(&z[..p]) - kernel.eval(&z[1..])).abs().powi(3);
        s += a;
        s2 += a * a;
    }
    let n = reps as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Mean and components of the Hoeffding decomposition.
#[derive(Debug, Clone)]
pub struct Hoeffding {
    pub mean: f64,
    /// `components[q - 1]` has order `q`.
    pub components: Vec<Kernel>,
}

/// Hoeffding decomposition over a finite base measure.
///
/// Component `q` is `sum_{A subset [q]} (-1)^{q-|A|} E[psi(x_A, X_rest)]`.
pub fn hoeffding_decompose(kernel: &Kernel) -> Result<Hoeffding> {
    let atoms = kernel
        .measure
        .atoms()
        .ok_or_else(|| Error::Unsupported("Hoeffding decomposition needs a finite measure".into()))?
        .to_vec();
    let p = kernel.p;
    let s = atoms.len();
    // partial[a][multiset of size a] = E psi(x_A, X_{a+1..p})
    let mut partial: Vec<HashMap<Vec<usize>, f64>> = Vec::with_capacity(p + 1);
    for a in 0..=p {
        let mut table = HashMap::new();
        let mut x = vec![0.0; p];
        let mut err = None;
        for_each_multiset(s, a, |fixed, _| {
            for (j, &i) in fixed.iter().enumerate() {
                x[j] = atoms[i].0;
            }
            let mut total = 0.0;
            let rest = p - a;
            let mut y = vec![0.0; rest];
            let mut inner = |idx: &[usize], count: f64| {
                let mut w = count;
                for (j, &i) in idx.iter().enumerate() {
                    y[j] = atoms[i].0;
                    w *= atoms[i].1;
                }
                x[a..].copy_from_slice(&y);
                total += w * kernel.eval(&x);
            };
            if rest == 0 {
                inner(&[], 1.0);
            } else {
                for_each_multiset(s, rest, inner);
            }
            if total.is_nan() {
                err = Some(Error::InvalidParameter("kernel is NaN on the support".into()));
            }
            table.insert(fixed.to_vec(), total);
        });
        if let Some(e) = err {
            return Err(e);
        }
        partial.push(table);
    }
    let mean = partial[0][&Vec::new()];
    let support: Vec<f64> = atoms.iter().map(|a| a.0).collect();
    let mut components = Vec::with_capacity(p);
    for q in 1..=p {
        let mut values = HashMap::new();
        for_each_multiset(s, q, |idx, _| {
            let mut v = 0.0;
            for mask in 0u32..(1 << q) {
                let sub: Vec<usize> = (0..q).filter(|j| mask & (1 << j) != 0).map(|j| idx[j]).collect();
                let sign = if (q - sub.len()) % 2 == 0 { 1.0 } else { -1.0 };
                v += sign * partial[sub.len()][&sub];
            }
            values.insert(idx.to_vec(), v);
        });
        components.push(Kernel {
            p: q,
            f: KernelFn::Table(TableKernel { support: support.clone(), values }),
            measure: kernel.measure.clone(),
        });
    }
    Ok(Hoeffding { mean, components })
}

/// Serialized form of a base measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum MeasureConfig {
    Atoms { atoms: Vec<(f64, f64)> },
    Named { sampler: String },
}

impl MeasureConfig {
    pub fn build(&self) -> Result<BaseMeasure> {
        match self {
            MeasureConfig::Atoms { atoms } => BaseMeasure::finite(atoms.clone()),
            MeasureConfig::Named { sampler } => match sampler.as_str() {
                "standard_normal" => Ok(BaseMeasure::standard_normal()),
                "rademacher" => Ok(BaseMeasure::rademacher()),
                other => Err(Error::InvalidParameter(format!("unknown sampler {other:?}"))),
            },
        }
    }
}

/// Serialized form of a kernel. The order comes from the accompanying weight
/// array; table keys are comma separated support indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Product,
    Table {
        support: Vec<f64>,
        values: BTreeMap<String, f64>,
    },
    /// Product kernel of order `order` over `xi - p`, `xi ~ Bernoulli(p)`.
    RunsBuiltin {
        p: f64,
        order: usize,
    },
}

impl KernelConfig {
    pub fn build(&self, p: usize, measure: &BaseMeasure) -> Result<Kernel> {
        let p = &p;
        match self {
            KernelConfig::Product => Kernel::product(*p, measure.clone()),
            KernelConfig::Table { support, values } => {
                let mut map = HashMap::new();
                for (k, v) in values {
                    let mut key = k
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Parse(format!("table key {k:?}: {e}")))?;
                    if key.len() != *p || key.iter().any(|&i| i >= support.len()) {
                        return Err(Error::Parse(format!("table key {k:?} does not index {p} support points")));
                    }
                    key.sort_unstable();
                    map.insert(key, *v);
                }
                Kernel::new(*p, KernelFn::Table(TableKernel { support: support.clone(), values: map }), measure.clone())
            }
            KernelConfig::RunsBuiltin { p: prob, order } => {
                if order != p {
                    return Err(Error::InvalidParameter(format!("runs_builtin order {order} vs weight order {p}")));
                }
                let (p, order) = (prob, order);
                let own = BaseMeasure::centered_bernoulli(*p)?;
                if own != *measure {
                    return Err(Error::InvalidParameter(
                        "runs_builtin kernel needs the centered Bernoulli measure with the same p".into(),
                    ));
                }
                Kernel::product(*order, own)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn half_half() -> BaseMeasure {
        BaseMeasure::finite(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    #[test]
    fn non_degenerate_product_on_zero_one() {
        let k = Kernel::product(2, half_half()).unwrap();
        let r = check_degenerate(&k, 1e-12).unwrap();
        assert!(!r.is_degenerate);
        assert!((r.max_residual - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rademacher_product_is_degenerate() {
        let k = Kernel::product(3, BaseMeasure::rademacher()).unwrap();
        assert!(check_degenerate(&k, 1e-14).unwrap().is_degenerate);
    }

    #[test]
    fn lr_norm_centered_bernoulli() {
        let k = Kernel::product(1, BaseMeasure::centered_bernoulli(0.5).unwrap()).unwrap();
        assert!((lr_norm(&k, 3.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn third_moment_standardized_bernoulli() {
        for &p in &[0.1, 0.3, 0.5, 0.8] {
            let m = BaseMeasure::standardized_bernoulli(p).unwrap().moments().unwrap();
            let s0 = (p * (1.0 - p)).sqrt();
            let expected = p * (1.0 - p) * ((1.0 - p).powi(2) + p * p) / s0.powi(3);
            assert!((m.abs_third - expected).abs() < 1e-12);
            assert!(m.mean.abs() < 1e-15 && (m.second - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hoeffding_of_xy() {
        let k = Kernel::product(2, half_half()).unwrap();
        let h = hoeffding_decompose(&k).unwrap();
        assert!((h.mean - 0.25).abs() < 1e-15);
        for x in [0.0, 1.0] {
            assert!((h.components[0].eval(&[x]) - (x - 0.5) / 2.0).abs() < 1e-15);
            for y in [0.0, 1.0] {
                assert!((h.components[1].eval(&[x, y]) - (x - 0.5) * (y - 0.5)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn asymmetric_kernel_rejected() {
        let f: KernelClosure = Arc::new(|x: &[f64]| x[0] - 2.0 * x[1]);
        assert!(matches!(
            Kernel::new(2, KernelFn::Custom(f), BaseMeasure::standard_normal()),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn multiset_counts_cover_all_tuples() {
        let mut total = 0.0;
        let mut sets = 0;
        for_each_multiset(4, 3, |_, c| {
            total += c;
            sets += 1;
        });
        assert_eq!(total, 64.0);
        assert_eq!(sets, 20);
    }

    #[test]
    fn sampler_norm_closed_form_matches_mc() {
        let k = Kernel::product(2, BaseMeasure::standard_normal()).unwrap();
        let exact = lr_norm(&k, 3.0).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        let (est, se) = lr_norm_mc(&k, 3.0, 200_000, &mut rng).unwrap();
        assert!((est - exact).abs() < 5.0 * se, "{est} vs {exact} (se {se})");
    }

    #[test]
    fn pair_diff_bounded_by_eight_abs_third() {
        let k = Kernel::product(2, BaseMeasure::standardized_bernoulli(0.3).unwrap()).unwrap();
        let d = pair_diff_abs3(&k).unwrap();
        assert!(d <= 8.0 * abs_moment(&k, 3.0).unwrap());
        let mut rng = SimRng::seed_from_u64(9);
        let (mc, se) = pair_diff_abs3_mc(&k, 200_000, &mut rng);
        assert!((mc - d).abs() < 5.0 * se);
    }

    #[test]
    fn table_config_round_trip() {
        let cfg: KernelConfig = serde_json::from_str(
            r#"{"type":"table","support":[-1.0,1.0],"values":{"0,0":1.0,"0,1":-1.0,"1,1":1.0}}"#,
        )
        .unwrap();
        let k = cfg.build(2, &BaseMeasure::rademacher()).unwrap();
        assert_eq!(k.eval(&[1.0, -1.0]), -1.0);
        assert_eq!(k.eval(&[-1.0, 1.0]), -1.0);
        assert!(check_degenerate(&k, 1e-14).unwrap().is_degenerate);
    }

    fn random_atoms(vals: Vec<f64>, masses: Vec<f64>) -> Vec<(f64, f64)> {
        let total: f64 = masses.iter().sum();
        let mut atoms: Vec<(f64, f64)> = vals.into_iter().zip(masses.iter().map(|m| m / total)).collect();
        let sum: f64 = atoms.iter().map(|a| a.1).sum();
        atoms[0].1 += 1.0 - sum;
        atoms
    }

    proptest! {
        #[test]
        fn hoeffding_reconstructs(
            vals in proptest::collection::vec(-3.0f64..3.0, 3),
            masses in proptest::collection::vec(0.1f64..1.0, 3),
            coef in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let atoms = random_atoms(vals, masses);
            let measure = BaseMeasure::finite(atoms.clone()).unwrap();
            let (c0, c1, c2) = (coef[0], coef[1], coef[2]);
            let f: KernelClosure = Arc::new(move |x: &[f64]| {
                c0 * x[0] * x[1] * x[2] + c1 * (x[0] + x[1] + x[2]).powi(2) + c2 * (x[0] * x[1] + x[1] * x[2] + x[0] * x[2])
            });
            let k = Kernel::new(3, KernelFn::Custom(f), measure).unwrap();
            let h = hoeffding_decompose(&k).unwrap();
            for a in &atoms { for b in &atoms { for c in &atoms {
                let x = [a.0, b.0, c.0];
                let mut v = h.mean;
                for i in 0..3 { v += h.components[0].eval(&[x[i]]); }
                for (i, j) in [(0, 1), (0, 2), (1, 2)] { v += h.components[1].eval(&[x[i], x[j]]); }
                v += h.components[2].eval(&x);
                prop_assert!((v - k.eval(&x)).abs() < 1e-9 * (1.0 + v.abs()));
            }}}
            for c in &h.components {
                prop_assert!(check_degenerate(c, 1e-9).unwrap().is_degenerate);
            }
        }

        #[test]
        fn lr_norm_monotone_in_r(
            vals in proptest::collection::vec(-3.0f64..3.0, 4),
            masses in proptest::collection::vec(0.1f64..1.0, 4),
            p in 1usize..4,
        ) {
            let measure = BaseMeasure::finite(random_atoms(vals, masses)).unwrap();
            let k = Kernel::product(p, measure).unwrap();
            let n2 = lr_norm(&k, 2.0).unwrap();
            let n3 = lr_norm(&k, 3.0).unwrap();
            prop_assert!(n2 <= n3 * (1.0 + 1e-12) + 1e-15);
        }
    }
}
