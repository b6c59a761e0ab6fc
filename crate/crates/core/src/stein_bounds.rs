//! Explicit bound terms for weighted U-processes and their diagnostics.
//!
//! Every bound is reported per unit norm of the test function: the caller
//! multiplies by a certified `||g||_M` or `||g||_{M^0}`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::gaussian_limits::{psd_sqrt, spectral_radius, StepMatrixFn};
use crate::kernels;
use crate::path_core::StepPath;
use crate::uprocess::{UProcessSpec, WeightArray};
use crate::{Error, Result};

/// Named bound terms and their documented total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub theorem: String,
    /// `"M"` or `"M0"`: the norm the total multiplies.
    pub multiplier: String,
    pub n: usize,
    pub d: usize,
    pub terms: BTreeMap<String, f64>,
    pub total: f64,
    /// Totals against other norm classes, when the result states several.
    pub alt_totals: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(theorem: &str, multiplier: &str, n: usize, d: usize) -> Self {
        Self {
            theorem: theorem.into(),
            multiplier: multiplier.into(),
            n,
            d,
            terms: BTreeMap::new(),
            total: 0.0,
            alt_totals: BTreeMap::new(),
        }
    }

    pub fn term(mut self, name: &str, v: f64) -> Self {
        self.terms.insert(name.into(), v);
        self
    }

    pub fn total(mut self, v: f64) -> Self {
        self.total = v;
        self
    }

    pub fn alt_total(mut self, multiplier: &str, v: f64) -> Self {
        self.alt_totals.insert(multiplier.into(), v);
        self
    }

    pub fn get(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(f64::NAN)
    }

    /// All terms finite and nonnegative.
    pub fn is_valid(&self) -> bool {
        self.terms.values().chain(std::iter::once(&self.total)).all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// `sum_l (sum_{J containing l} |a_J|)^3`.
pub fn cubic_weight_sum(w: &WeightArray) -> f64 {
    (1..=w.n())
        .map(|l| {
            let s: f64 = w.containing(l).iter().map(|&k| w.weight(k as usize).abs()).sum();
            s * s * s
        })
        .sum()
}

const PACK_BITS: u32 = 16;

fn pack(s: &[u32]) -> u64 {
    s.iter().fold(0u64, |acc, &e| (acc << PACK_BITS) | e as u64)
}

/// `sum |a_J a_K a_L|` over `J` in `wi`, `K` in `wj`, `L` in `wk` with
/// `J` and `K` intersecting and `L` meeting `J ∪ K`.
pub fn triple_intersect_sum(wi: &WeightArray, wj: &WeightArray, wk: &WeightArray) -> Result<f64> {
    let n = wi.n();
    if wj.n() != n || wk.n() != n {
        return Err(Error::DimensionMismatch("weight arrays with different n".into()));
    }
    let pk = wk.order();
    let packable = pk <= 4 && n < (1 << PACK_BITS);
    // mass of L containing each nonempty sub-subset, for inclusion-exclusion
    let mut superset_mass: HashMap<u64, f64> = HashMap::new();
    if packable {
        let mut sub = Vec::with_capacity(pk);
        for (l, a) in wk.entries() {
            for mask in 1u32..(1 << pk) {
                sub.clear();
                sub.extend((0..pk).filter(|b| mask & (1 << b) != 0).map(|b| l[b]));
                *superset_mass.entry(pack(&sub)).or_insert(0.0) += a.abs();
            }
        }
    }
    let per_j: Vec<f64> = (0..wi.len())
        .into_par_iter()
        .map_init(
            || (vec![usize::MAX; wj.len()], vec![usize::MAX; wk.len()], Vec::new(), Vec::new()),
            |(seen_k, seen_l, union, sub), a| {
                let aj = wi.weight(a).abs();
                if aj == 0.0 {
                    return 0.0;
                }
                let j = wi.subset(a);
                let mut total = 0.0;
                for &e in j {
                    for &kk in wj.containing(e as usize) {
                        let kk = kk as usize;
                        if seen_k[kk] == a {
                            continue;
                        }
                        seen_k[kk] = a;
                        let ak = wj.weight(kk).abs();
                        if ak == 0.0 {
                            continue;
                        }
                        union.clear();
                        union.extend_from_slice(j);
                        union.extend_from_slice(wj.subset(kk));
                        union.sort_unstable();
                        union.dedup();
                        let hit = if packable {
                            meeting_mass_ie(union, pk, &superset_mass, sub)
                        } else {
                            meeting_mass_scan(union, wk, seen_l, a * wj.len() + kk)
                        };
                        total += aj * ak * hit;
                    }
                }
                total
            },
        )
        .collect();
    Ok(per_j.iter().sum())
}

fn meeting_mass_ie(union: &[u32], pk: usize, mass: &HashMap<u64, f64>, sub: &mut Vec<u32>) -> f64 {
    let u = union.len();
    let mut hit = 0.0;
    for mask in 1u32..(1 << u) {
        let size = mask.count_ones() as usize;
        if size > pk {
            continue;
        }
        sub.clear();
        sub.extend((0..u).filter(|b| mask & (1 << b) != 0).map(|b| union[b]));
        if let Some(m) = mass.get(&pack(sub)) {
            if size % 2 == 1 {
                hit += m;
            } else {
                hit -= m;
            }
        }
    }
    hit
}

fn meeting_mass_scan(union: &[u32], wk: &WeightArray, seen: &mut [usize], stamp: usize) -> f64 {
    let mut hit = 0.0;
    for &e in union {
        for &l in wk.containing(e as usize) {
            let l = l as usize;
            if seen[l] != stamp {
                seen[l] = stamp;
                hit += wk.weight(l).abs();
            }
        }
    }
    hit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Sharp,
    Simple,
}

/// Pre-limit bound `term1 + term2`, multiplying `||g||_M`.
pub fn bound_weighted_pre(spec: &UProcessSpec, variant: Variant) -> Result<BoundReport> {
    let comps = spec.components();
    let d = comps.len();
    let p1 = comps[0].kernel.order() as f64;
    let norms = comps.iter().map(|c| kernels::lr_norm(&c.kernel, 3.0)).collect::<Result<Vec<_>>>()?;
    let mut term1 = 0.0;
    for (c, norm) in comps.iter().zip(&norms) {
        let cubic = cubic_weight_sum(&c.weights);
        let s3 = c.sigma.powi(3);
        term1 += match variant {
            Variant::Simple => 2.0 * (d as f64).sqrt() / (3.0 * p1) * norm.powi(3) / s3 * cubic,
            Variant::Sharp => (d as f64).sqrt() / (12.0 * p1) * kernels::pair_diff_abs3(&c.kernel)? / s3 * cubic,
        };
    }
    let term2 = term2_pre(spec, &norms)?;
    let theorem = match variant {
        Variant::Simple => "weighted_prelimit",
        Variant::Sharp => "weighted_prelimit_sharp",
    };
    Ok(BoundReport::new(theorem, "M", spec.n(), d)
        .term("term1_pre", term1)
        .term("term2_pre", term2)
        .total(term1 + term2))
}

fn term2_pre(spec: &UProcessSpec, norms: &[f64]) -> Result<f64> {
    let comps = spec.components();
    let mut term2 = 0.0;
    for (i, ci) in comps.iter().enumerate() {
        for (j, cj) in comps.iter().enumerate() {
            for (k, ck) in comps.iter().enumerate() {
                let scale = norms[i] * norms[j] * norms[k] / (ci.sigma * cj.sigma * ck.sigma);
                if scale == 0.0 {
                    continue;
                }
                term2 += scale * triple_intersect_sum(&ci.weights, &cj.weights, &ck.weights)?;
            }
        }
    }
    Ok(term2)
}

/// Cross moments `E[psi_i psi_l]` for components of equal order, zero otherwise.
fn moment_matrix(spec: &UProcessSpec) -> Result<DMatrix<f64>> {
    let comps = spec.components();
    let d = comps.len();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for l in i..d {
            if comps[i].kernel.order() == comps[l].kernel.order() {
                let v = kernels::cross_moment(&comps[i].kernel, &comps[l].kernel)?;
                m[(i, l)] = v;
                m[(l, i)] = v;
            }
        }
    }
    Ok(m)
}

/// `Sigma_n^{(m)}` for `m = 0..=n` (entry `0` is zero).
pub fn sigma_n_all(spec: &UProcessSpec) -> Result<Vec<DMatrix<f64>>> {
    let comps = spec.components();
    let d = comps.len();
    let n = spec.n();
    let moments = moment_matrix(spec)?;
    let tables: Vec<HashMap<Vec<u32>, f64>> = comps.iter().map(|c| c.weights.lookup_table()).collect();
    let mut out = vec![DMatrix::zeros(d, d); n + 1];
    for i in 0..d {
        for l in i..d {
            if moments[(i, l)] == 0.0 {
                continue;
            }
            let c = n as f64 * moments[(i, l)] / (comps[i].sigma * comps[l].sigma);
            let wi = &comps[i].weights;
            for k in 0..wi.len() {
                let al = if i == l {
                    wi.weight(k)
                } else {
                    match tables[l].get(wi.subset(k)) {
                        Some(a) => *a,
                        None => continue,
                    }
                };
                let v = c * wi.weight(k) * al;
                let m = wi.max_element(k);
                out[m][(i, l)] += v;
                if i != l {
                    out[m][(l, i)] += v;
                }
            }
        }
    }
    Ok(out)
}

pub fn sigma_n_m(spec: &UProcessSpec, m: usize) -> Result<DMatrix<f64>> {
    if m == 0 || m > spec.n() {
        return Err(Error::InvalidParameter(format!("m = {m} outside 1..={}", spec.n())));
    }
    Ok(sigma_n_all(spec)?.swap_remove(m))
}

/// `(delta, T)` of component `i`.
pub fn delta_t(spec: &UProcessSpec, i: usize) -> Result<(f64, f64)> {
    let c = spec
        .components()
        .get(i)
        .ok_or_else(|| Error::InvalidParameter(format!("no component {i}")))?;
    let e2 = kernels::abs_moment(&c.kernel, 2.0)?;
    let s2 = c.sigma * c.sigma;
    let buckets = c.weights.squares_by_max();
    let delta = buckets.iter().fold(0.0f64, |a, &b| a.max(b)) * e2 / s2;
    let t = buckets.iter().sum::<f64>() * e2 / s2;
    Ok((delta, t))
}

/// `delta log(2T / delta)`, zero at `delta = 0`.
pub fn delta_log(delta: f64, t: f64) -> f64 {
    if delta <= 0.0 {
        0.0
    } else {
        delta * (2.0 * t / delta).ln()
    }
}

/// `phi_n` on grid cells: `(Sigma_n^{(m)})^{1/2}` on `((m-1)/n, m/n]`.
pub fn phi_n_cells(spec: &UProcessSpec) -> Result<Vec<DMatrix<f64>>> {
    sigma_n_all(spec)?.iter().skip(1).map(psd_sqrt).collect()
}

/// Continuous-limit terms `gamma_1..gamma_5` for target `phi`.
///
/// `total` multiplies `||g||_M` (all five terms); `alt_totals["M0"]` is
/// `gamma_1 + gamma_2 + gamma_3`.
pub fn gammas_con(spec: &UProcessSpec, phi: &StepMatrixFn) -> Result<BoundReport> {
    let n = spec.n();
    let d = spec.dim();
    if phi.dim() != d {
        return Err(Error::DimensionMismatch(format!("phi is {}x{}, process has d = {d}", phi.dim(), phi.dim())));
    }
    let target = phi.on_cells(n)?;
    let phin = phi_n_cells(spec)?;
    let h = 1.0 / n as f64;
    // row-wise integrals of (phi_n - phi)^2 and the total of phi^2
    let mut row_diff = vec![0.0; d];
    let mut phi_sq = 0.0;
    for (a, b) in phin.iter().zip(&target) {
        let diff = a - b;
        for i in 0..d {
            row_diff[i] += h * diff.row(i).iter().map(|x| x * x).sum::<f64>();
        }
        phi_sq += h * b.iter().map(|x| x * x).sum::<f64>();
    }
    let diff_total: f64 = row_diff.iter().sum();
    let dl = (0..d)
        .map(|i| delta_t(spec, i).map(|(de, t)| delta_log(de, t)))
        .collect::<Result<Vec<_>>>()?;
    let pre = bound_weighted_pre(spec, Variant::Simple)?;
    let g1 = pre.get("term1_pre");
    let g2 = pre.get("term2_pre");
    let g3 = 2.0 * diff_total.sqrt() + 12.0 * dl.iter().sum::<f64>().sqrt();
    let sd = (d as f64).sqrt();
    let g4 = sd * (0..d).map(|i| 8447.0 * dl[i].powf(1.5) + 44.0 * row_diff[i].powf(1.5)).sum::<f64>();
    let g5 = sd * phi_sq * (0..d).map(|i| 50.0 * dl[i].sqrt() + 19.0 * row_diff[i].sqrt()).sum::<f64>();
    Ok(BoundReport::new("weighted_limit", "M", n, d)
        .term("gamma1", g1)
        .term("gamma2", g2)
        .term("gamma3", g3)
        .term("gamma4", g4)
        .term("gamma5", g5)
        .total(g1 + g2 + g3 + g4 + g5)
        .alt_total("M0", g1 + g2 + g3))
}

/// Monte Carlo estimate of `E[||(Y - Y') Lambda|| ||Y - Y'||^2] / 6` with its
/// standard error, from draws of `Y - Y'`.
pub fn epsilon1_mc<F>(lambda: &DMatrix<f64>, reps: usize, mut draw_difference: F) -> Result<(f64, f64)>
where
    F: FnMut() -> StepPath,
{
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least two replications".into()));
    }
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..reps {
        let diff = draw_difference();
        let v = diff.mul_right(lambda)?.sup_norm() * diff.sup_norm().powi(2) / 6.0;
        s += v;
        s2 += v * v;
    }
    let r = reps as f64;
    let mean = s / r;
    let var = (s2 - r * mean * mean).max(0.0) / (r - 1.0);
    Ok((mean, (var / r).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub rho: f64,
    pub gamma: f64,
    pub lambda_star: f64,
    pub sigma2: f64,
    pub tr_a4_over_sigma4: Option<f64>,
    /// `(rho / sigma, Gamma / sigma, Gamma^2 / sigma^2 * sum |a_ij| / sigma)`
    pub ratio_terms: Option<[f64; 3]>,
    pub degenerate: bool,
}

/// Diagnostics of a quadratic form with symmetric, zero-diagonal coefficients.
pub fn homsum_diagnostics(a: &DMatrix<f64>) -> Result<Diagnostics> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("coefficient matrix must be square".into()));
    }
    let n = a.nrows();
    if (0..n).any(|i| a[(i, i)] != 0.0) {
        return Err(Error::InvalidParameter("diagonal must be zero".into()));
    }
    if (a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
        return Err(Error::NotSymmetric("coefficient matrix".into()));
    }
    let rho = (0..n).map(|i| a.row(i).iter().map(|x| x * x).sum::<f64>()).fold(0.0, f64::max).sqrt();
    let gamma = (0..n).map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let lambda_star = spectral_radius(a);
    let sigma2 = a.iter().map(|x| x * x).sum::<f64>();
    let abs_sum = a.iter().map(|x| x.abs()).sum::<f64>();
    if sigma2 == 0.0 {
        return Ok(Diagnostics {
            rho,
            gamma,
            lambda_star,
            sigma2,
            tr_a4_over_sigma4: None,
            ratio_terms: None,
            degenerate: true,
        });
    }
    let a2 = a * a;
    let tr4 = (&a2 * &a2).trace();
    let s = sigma2.sqrt();
    Ok(Diagnostics {
        rho,
        gamma,
        lambda_star,
        sigma2,
        tr_a4_over_sigma4: Some(tr4 / (sigma2 * sigma2)),
        ratio_terms: Some([rho / s, gamma / s, gamma * gamma / sigma2 * abs_sum / s]),
        degenerate: false,
    })
}

/// `T log^2(1 / r)` for a bound `T` and constancy length `r`.
pub fn prop_m_criterion(t: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidParameter(format!("constancy length {r} outside (0, 1]")));
    }
    Ok(t * (1.0 / r).ln().powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::BaseMeasure;
    use crate::uprocess::homsum_spec;
    use crate::SimRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn brute_triple(wi: &WeightArray, wj: &WeightArray, wk: &WeightArray) -> f64 {
        let meets = |a: &[u32], b: &[u32]| a.iter().any(|x| b.contains(x));
        let mut total = 0.0;
        for (j, aj) in wi.entries() {
            for (k, ak) in wj.entries() {
                if !meets(j, k) {
                    continue;
                }
                for (l, al) in wk.entries() {
                    if meets(l, j) || meets(l, k) {
                        total += (aj * ak * al).abs();
                    }
                }
            }
        }
        total
    }

    fn brute_cubic(w: &WeightArray) -> f64 {
        (1..=w.n() as u32)
            .map(|l| w.entries().filter(|(s, _)| s.contains(&l)).map(|(_, a)| a.abs()).sum::<f64>().powi(3))
            .sum()
    }

    fn random_weights(n: usize, p: usize, rng: &mut SimRng) -> WeightArray {
        let mut w = WeightArray::incomplete_random(n, p, 0.4, rng).unwrap().to_config();
        if let crate::uprocess::WeightConfig::Explicit { entries, .. } = &mut w {
            for e in entries.iter_mut() {
                e.1 = rng.random_range(-2.0..2.0);
            }
        }
        w.build(n).unwrap()
    }

    #[test]
    fn cubic_examples() {
        assert_eq!(cubic_weight_sum(&WeightArray::complete(3, 2).unwrap()), 24.0);
        assert_eq!(cubic_weight_sum(&WeightArray::new(3, 2, vec![(vec![1, 2], 2.0)]).unwrap()), 16.0);
        assert_eq!(cubic_weight_sum(&WeightArray::new(3, 2, vec![]).unwrap()), 0.0);
    }

    #[test]
    fn triple_examples() {
        let c = WeightArray::complete(3, 2).unwrap();
        assert_eq!(triple_intersect_sum(&c, &c, &c).unwrap(), 27.0);
        let one = WeightArray::new(4, 2, vec![(vec![1, 2], 1.0)]).unwrap();
        let all = WeightArray::complete(4, 2).unwrap();
        assert_eq!(triple_intersect_sum(&one, &one, &all).unwrap(), 5.0);
        assert!(triple_intersect_sum(&one, &c, &c).is_err());
    }

    #[test]
    fn scan_fallback_matches_inclusion_exclusion() {
        let mut rng = SimRng::seed_from_u64(5);
        let wi = random_weights(10, 3, &mut rng);
        let wj = random_weights(10, 2, &mut rng);
        let wk = random_weights(10, 5, &mut rng);
        let expected = brute_triple(&wi, &wj, &wk);
        let got = triple_intersect_sum(&wi, &wj, &wk).unwrap();
        assert!((got - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn homogeneous_term1_example() {
        let spec = homsum_spec(4, BaseMeasure::rademacher(), vec![(WeightArray::complete(4, 1).unwrap(), 2.0)]).unwrap();
        let r = bound_weighted_pre(&spec, Variant::Simple).unwrap();
        assert!((r.get("term1_pre") - 1.0 / 3.0).abs() < 1e-15);
        assert!(r.is_valid());
    }

    #[test]
    fn zero_weights_give_zero_bound() {
        let w = WeightArray::new(5, 2, vec![]).unwrap();
        let spec = homsum_spec(5, BaseMeasure::rademacher(), vec![(w, 1.0)]).unwrap();
        assert_eq!(bound_weighted_pre(&spec, Variant::Simple).unwrap().total, 0.0);
        assert_eq!(delta_t(&spec, 0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn complete_linear_sigma_delta_gamma3() {
        let n = 16;
        let spec = homsum_spec(n, BaseMeasure::rademacher(), vec![(WeightArray::complete(n, 1).unwrap(), (n as f64).sqrt())]).unwrap();
        for m in 1..=n {
            assert!((sigma_n_m(&spec, m).unwrap()[(0, 0)] - 1.0).abs() < 1e-12);
        }
        let (delta, t) = delta_t(&spec, 0).unwrap();
        assert!((delta - 1.0 / n as f64).abs() < 1e-15 && (t - 1.0).abs() < 1e-12);
        let r = gammas_con(&spec, &StepMatrixFn::constant(DMatrix::from_element(1, 1, 1.0))).unwrap();
        let expected = 12.0 * ((1.0 / n as f64) * (2.0 * n as f64).ln()).sqrt();
        assert!((r.get("gamma3") - expected).abs() < 1e-12);
        let zero = gammas_con(&spec, &StepMatrixFn::constant(DMatrix::zeros(1, 1))).unwrap();
        // integral of (1 - 0)^2 is 1
        assert!((zero.get("gamma3") - 2.0 - expected).abs() < 1e-12);
        assert!(r.total < zero.total);
    }

    #[test]
    fn sigma_n_off_diagonal_zero_across_orders() {
        let n = 6;
        let spec = homsum_spec(n, BaseMeasure::rademacher(), vec![
            (WeightArray::complete(n, 1).unwrap(), 1.0),
            (WeightArray::complete(n, 2).unwrap(), 1.0),
        ])
        .unwrap();
        for m in 1..=n {
            let s = sigma_n_m(&spec, m).unwrap();
            assert_eq!(s[(0, 1)], 0.0);
        }
        assert_eq!(sigma_n_m(&spec, 1).unwrap()[(1, 1)], 0.0);
    }

    #[test]
    fn diagnostics_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let d = homsum_diagnostics(&a).unwrap();
        assert!((d.rho - 1.0).abs() < 1e-15 && (d.gamma - 1.0).abs() < 1e-15);
        assert!((d.lambda_star - 1.0).abs() < 1e-12 && (d.sigma2 - 2.0).abs() < 1e-15);
        let z = homsum_diagnostics(&DMatrix::zeros(3, 3)).unwrap();
        assert!(z.degenerate && z.rho == 0.0 && z.ratio_terms.is_none());
        assert!(homsum_diagnostics(&DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn prop_m_examples() {
        assert!((prop_m_criterion(0.1, 0.01).unwrap() - 0.1 * 100f64.ln().powi(2)).abs() < 1e-12);
        assert!((prop_m_criterion(0.1, 0.01).unwrap() - 2.121).abs() < 1e-3);
        assert_eq!(prop_m_criterion(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(prop_m_criterion(3.0, 1.0).unwrap(), 0.0);
        assert!(prop_m_criterion(1.0, 0.0).is_err());
    }

    #[test]
    fn epsilon1_below_sharp_term() {
        let n = 10;
        let spec = homsum_spec(n, BaseMeasure::rademacher(), vec![(WeightArray::complete(n, 2).unwrap(), 45f64.sqrt())]).unwrap();
        let lam = crate::uprocess::lambda_weighted(&spec);
        let mut rng = SimRng::seed_from_u64(2);
        let (e1, se) = epsilon1_mc(&lam, 20_000, || {
            let pr = crate::uprocess::exchangeable_pair(&spec, &mut rng);
            pr.y.sub(&pr.y_prime).unwrap()
        })
        .unwrap();
        let sharp = bound_weighted_pre(&spec, Variant::Sharp).unwrap().get("term1_pre");
        assert!(e1 - 4.0 * se <= sharp, "{e1} vs {sharp}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn sums_match_brute_force(seed in any::<u64>(), n in 3usize..9, p1 in 1usize..4, p2 in 1usize..4, p3 in 1usize..4) {
            let mut rng = SimRng::seed_from_u64(seed);
            let (wi, wj, wk) = (random_weights(n, p1.min(n), &mut rng), random_weights(n, p2.min(n), &mut rng), random_weights(n, p3.min(n), &mut rng));
            let expected = brute_triple(&wi, &wj, &wk);
            let got = triple_intersect_sum(&wi, &wj, &wk).unwrap();
            prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1.0));
            let c = brute_cubic(&wi);
            prop_assert!((cubic_weight_sum(&wi) - c).abs() <= 1e-9 * c.max(1.0));
        }

        #[test]
        fn sharp_not_above_simple(seed in any::<u64>(), n in 4usize..8, q in 0.1f64..0.9) {
            let mut rng = SimRng::seed_from_u64(seed);
            let m = BaseMeasure::standardized_bernoulli(q).unwrap();
            let w1 = random_weights(n, 1, &mut rng);
            let w2 = random_weights(n, 2, &mut rng);
            let spec = homsum_spec(n, m, vec![(w1, 1.3), (w2, 2.1)]).unwrap();
            let sharp = bound_weighted_pre(&spec, Variant::Sharp).unwrap().total;
            let simple = bound_weighted_pre(&spec, Variant::Simple).unwrap().total;
            prop_assert!(sharp <= simple * (1.0 + 1e-12));
        }

        #[test]
        fn sums_monotone_in_weights(seed in any::<u64>(), n in 3usize..8) {
            let mut rng = SimRng::seed_from_u64(seed);
            let w = random_weights(n, 2, &mut rng);
            prop_assume!(!w.is_empty());
            let mut cfg = w.to_config();
            if let crate::uprocess::WeightConfig::Explicit { entries, .. } = &mut cfg {
                let k = rng.random_range(0..entries.len());
                entries[k].1 += entries[k].1.signum() * 0.5;
            }
            let bigger = cfg.build(n).unwrap();
            prop_assert!(cubic_weight_sum(&bigger) >= cubic_weight_sum(&w));
            prop_assert!(triple_intersect_sum(&bigger, &bigger, &bigger).unwrap() >= triple_intersect_sum(&w, &w, &w).unwrap() * (1.0 - 1e-12));
        }

        #[test]
        fn delta_below_t(seed in any::<u64>(), n in 3usize..9) {
            let mut rng = SimRng::seed_from_u64(seed);
            let spec = homsum_spec(n, BaseMeasure::rademacher(), vec![(random_weights(n, 2, &mut rng), 1.0)]).unwrap();
            let (d, t) = delta_t(&spec, 0).unwrap();
            prop_assert!(d <= t + 1e-15 && d >= 0.0);
        }

        #[test]
        fn radius_between_rho_and_gamma(seed in any::<u64>(), n in 2usize..9) {
            let mut rng = SimRng::seed_from_u64(seed);
            let mut a = DMatrix::zeros(n, n);
            for i in 0..n { for j in i + 1..n {
                let v = rng.random_range(-1.0..1.0);
                a[(i, j)] = v; a[(j, i)] = v;
            }}
            let d = homsum_diagnostics(&a).unwrap();
            prop_assert!(d.rho <= d.lambda_star + 1e-12 && d.lambda_star <= d.gamma + 1e-12);
        }

        #[test]
        fn phi_n_is_the_minimizer(seed in any::<u64>(), eps in 0.05f64..0.5) {
            let n = 40;
            let mut rng = SimRng::seed_from_u64(seed);
            let w = WeightArray::banded(n, 2, 3).unwrap();
            let s = (w.len() as f64).sqrt();
            let spec = homsum_spec(n, BaseMeasure::rademacher(), vec![(WeightArray::complete(n, 1).unwrap(), (n as f64).sqrt()), (w, s)]).unwrap();
            let cells = phi_n_cells(&spec).unwrap();
            let breaks: Vec<f64> = (0..=n).map(|m| m as f64 / n as f64).collect();
            let exact = StepMatrixFn::new(breaks.clone(), cells.clone()).unwrap();
            let bumped: Vec<DMatrix<f64>> = cells.iter().map(|c| c.map(|x| x * (1.0 + eps * rng.random_range(-1.0..1.0)))).collect();
            let bumped = StepMatrixFn::new(breaks, bumped).unwrap();
            let a = gammas_con(&spec, &exact).unwrap();
            let b = gammas_con(&spec, &bumped).unwrap();
            prop_assert!(a.total < b.total);
            prop_assert!(a.alt_totals["M0"] < b.alt_totals["M0"]);
        }
    }
}
