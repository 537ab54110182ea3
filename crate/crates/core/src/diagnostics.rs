//! Gradient-population diagnostics: within/between-regime variance, pairing
//! estimator variances, conflict rates, near/far gradient ratios and the
//! distance-exponent fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grouping::RegimePartition;
use crate::render::{backward, Image, LossConfig};
use crate::scene::{BlockKind, BlockVectors, CameraSpec, GradientSet, SplatScene};

/// Per-view gradients evaluated at one frozen parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeGradientPopulation {
    pub near: Vec<Vec<f64>>,
    pub far: Vec<Vec<f64>>,
    /// Block-structured copies, present when built from gradient sets.
    pub near_blocks: Option<Vec<BlockVectors>>,
    pub far_blocks: Option<Vec<BlockVectors>>,
    pub point_id: u64,
}

impl RegimeGradientPopulation {
    /// Builds a population from plain flat vectors.
    pub fn from_vectors(near: Vec<Vec<f64>>, far: Vec<Vec<f64>>, point_id: u64) -> Result<Self> {
        if near.is_empty() || far.is_empty() {
            return Err(Error::invalid("both regime groups must be nonempty"));
        }
        let dim = near[0].len();
        if dim == 0 || near.iter().chain(&far).any(|g| g.len() != dim) {
            return Err(Error::invalid("all gradients must share one nonzero dimension"));
        }
        Ok(RegimeGradientPopulation {
            near,
            far,
            near_blocks: None,
            far_blocks: None,
            point_id,
        })
    }

    pub fn from_gradient_sets(near: &[GradientSet], far: &[GradientSet], point_id: u64) -> Result<Self> {
        if let (Some(first), rest) = (near.first().or(far.first()), near.iter().chain(far)) {
            for g in rest {
                first.blocks.check_shape(&g.blocks)?;
            }
        }
        let flat = |v: &[GradientSet]| v.iter().map(|g| g.blocks.flatten()).collect();
        let mut pop = Self::from_vectors(flat(near), flat(far), point_id)?;
        pop.near_blocks = Some(near.iter().map(|g| g.blocks.clone()).collect());
        pop.far_blocks = Some(far.iter().map(|g| g.blocks.clone()).collect());
        Ok(pop)
    }

    /// Splits per-camera gradients by the partition; cameras outside it are
    /// classified by distance.
    pub fn from_partition(
        grads: &[GradientSet],
        cams: &[CameraSpec],
        partition: &RegimePartition,
        point_id: u64,
    ) -> Result<Self> {
        if grads.len() != cams.len() {
            return Err(Error::invalid("one gradient per camera is required"));
        }
        let (mut near, mut far) = (Vec::new(), Vec::new());
        for (g, c) in grads.iter().zip(cams) {
            match partition.regime_of(c) {
                crate::grouping::Regime::Near => near.push(g.clone()),
                crate::grouping::Regime::Far => far.push(g.clone()),
            }
        }
        Self::from_gradient_sets(&near, &far, point_id)
    }

    pub fn dim(&self) -> usize {
        self.near[0].len()
    }

    pub fn equal_sizes(&self) -> bool {
        self.near.len() == self.far.len()
    }

    fn all(&self) -> impl Iterator<Item = &Vec<f64>> + Clone {
        self.near.iter().chain(&self.far)
    }
}

fn mean_vec<'a>(vs: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_sq_dev<'a>(vs: impl Iterator<Item = &'a Vec<f64>> + Clone, center: &[f64]) -> f64 {
    let n = vs.clone().count();
    vs.map(|v| sq_dist(v, center)).sum::<f64>() / n as f64
}

/// Which two-view estimator is being studied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    /// Two iid uniform draws over all views.
    RandomPair,
    /// One uniform draw from each regime.
    StructuredPair,
}

/// How estimator moments are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimation {
    /// Every ordered pair, weighted by its sampling probability.
    Exhaustive,
    MonteCarlo {
        n_draws: usize,
        seed: u64,
    },
}

impl Estimation {
    fn validate(&self) -> Result<()> {
        match *self {
            Estimation::MonteCarlo { n_draws, .. } if n_draws < 2 => {
                Err(Error::invalid("Monte Carlo needs at least 2 draws"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub sigma2_w: f64,
    pub sigma2_b: f64,
    pub mu_l: Vec<f64>,
    pub mu_h: Vec<f64>,
    pub g_bar: Vec<f64>,
    pub var_r: f64,
    pub var_s: f64,
    /// Mean squared deviation of single views about `g_bar`.
    pub single_view_variance: f64,
    /// `1 + sigma2_b / sigma2_w`; `None` when `sigma2_w == 0`.
    pub ratio_predicted: Option<f64>,
    /// `var_r / var_s`; `None` when `var_s == 0`.
    pub ratio_measured: Option<f64>,
}

impl VarianceReport {
    /// `sigma2_b / sigma2_w`, if defined.
    pub fn between_within(&self) -> Option<f64> {
        (self.sigma2_w > 0.0).then(|| self.sigma2_b / self.sigma2_w)
    }

    /// Multi-line `key: value` rendering used by the CLI.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("null".to_string(), |x| format!("{x:.12e}"));
        format!(
            "{{\n  \"sigma2_w\": {:.12e},\n  \"sigma2_b\": {:.12e},\n  \"var_r\": {:.12e},\n  \"var_s\": {:.12e},\n  \"single_view_variance\": {:.12e},\n  \"ratio_predicted\": {},\n  \"ratio_measured\": {},\n  \"dim\": {}\n}}\n",
            self.sigma2_w,
            self.sigma2_b,
            self.var_r,
            self.var_s,
            self.single_view_variance,
            opt(self.ratio_predicted),
            opt(self.ratio_measured),
            self.g_bar.len()
        )
    }
}

pub fn variance_decompose(pop: &RegimeGradientPopulation, mode: Estimation) -> Result<VarianceReport> {
    mode.validate()?;
    let dim = pop.dim();
    let mu_l = mean_vec(pop.near.iter(), dim);
    let mu_h = mean_vec(pop.far.iter(), dim);
    let g_bar: Vec<f64> = mu_l.iter().zip(&mu_h).map(|(a, b)| 0.5 * (a + b)).collect();
    let sigma2_w = 0.5 * (mean_sq_dev(pop.near.iter(), &mu_l) + mean_sq_dev(pop.far.iter(), &mu_h));
    let sigma2_b = 0.25 * sq_dist(&mu_l, &mu_h);
    let single_view_variance = mean_sq_dev(pop.all(), &g_bar);
    let var_r = estimator_variance(pop, PairKind::RandomPair, mode)?;
    let var_s = estimator_variance(pop, PairKind::StructuredPair, mode)?;
    Ok(VarianceReport {
        ratio_predicted: (sigma2_w > 0.0).then(|| 1.0 + sigma2_b / sigma2_w),
        ratio_measured: (var_s > 0.0).then(|| var_r / var_s),
        sigma2_w,
        sigma2_b,
        mu_l,
        mu_h,
        g_bar,
        var_r,
        var_s,
        single_view_variance,
    })
}

/// View `k` in near-then-far order.
fn view(pop: &RegimeGradientPopulation, k: usize) -> &[f64] {
    let n = pop.near.len();
    if k < n {
        &pop.near[k]
    } else {
        &pop.far[k - n]
    }
}

/// One Monte Carlo pair under the given pairing.
fn draw_pair<'a>(pop: &'a RegimeGradientPopulation, kind: PairKind, rng: &mut ChaCha8Rng) -> (&'a [f64], &'a [f64]) {
    match kind {
        PairKind::RandomPair => {
            let total = pop.near.len() + pop.far.len();
            let a = rng.random_range(0..total);
            let b = rng.random_range(0..total);
            (view(pop, a), view(pop, b))
        }
        PairKind::StructuredPair => {
            let a = rng.random_range(0..pop.near.len());
            let b = rng.random_range(0..pop.far.len());
            (&pop.near[a], &pop.far[b])
        }
    }
}

/// Visits every estimator value `(g1 + g2) / 2` the mode produces.
fn for_each_estimate(pop: &RegimeGradientPopulation, kind: PairKind, mode: Estimation, mut visit: impl FnMut(&[f64])) {
    let mut buf = vec![0.0; pop.dim()];
    let mut emit = |a: &[f64], b: &[f64]| {
        for ((o, x), y) in buf.iter_mut().zip(a).zip(b) {
            *o = 0.5 * (x + y);
        }
        visit(&buf);
    };
    match (mode, kind) {
        (Estimation::Exhaustive, PairKind::RandomPair) => {
            for a in pop.all() {
                for b in pop.all() {
                    emit(a, b);
                }
            }
        }
        (Estimation::Exhaustive, PairKind::StructuredPair) => {
            for a in &pop.near {
                for b in &pop.far {
                    emit(a, b);
                }
            }
        }
        (Estimation::MonteCarlo { n_draws, seed }, _) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..n_draws {
                let (a, b) = draw_pair(pop, kind, &mut rng);
                emit(a, b);
            }
        }
    }
}

/// Mean of the two-view estimator under `kind`.
pub fn estimator_mean(pop: &RegimeGradientPopulation, kind: PairKind, mode: Estimation) -> Result<Vec<f64>> {
    mode.validate()?;
    let mut acc = vec![0.0; pop.dim()];
    let mut count = 0usize;
    for_each_estimate(pop, kind, mode, |e| {
        acc.iter_mut().zip(e).for_each(|(a, x)| *a += x);
        count += 1;
    });
    acc.iter_mut().for_each(|a| *a /= count as f64);
    Ok(acc)
}

/// Total variance (trace of the covariance) of the two-view estimator.
pub fn estimator_variance(pop: &RegimeGradientPopulation, kind: PairKind, mode: Estimation) -> Result<f64> {
    let mean = estimator_mean(pop, kind, mode)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for_each_estimate(pop, kind, mode, |e| {
        acc += sq_dist(e, &mean);
        count += 1;
    });
    Ok(acc / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioCheck {
    pub pass: bool,
    pub measured: f64,
    pub predicted: f64,
    pub rel_err: f64,
    pub report: VarianceReport,
}

pub fn check_ratio_identity(pop: &RegimeGradientPopulation, mode: Estimation, tol: f64) -> Result<RatioCheck> {
    if !pop.equal_sizes() {
        return Err(Error::invalid("the ratio identity needs equal group sizes"));
    }
    let report = variance_decompose(pop, mode)?;
    let predicted = report
        .ratio_predicted
        .ok_or_else(|| Error::UndefinedRatio("within-regime variance is zero".into()))?;
    let measured = report
        .ratio_measured
        .ok_or_else(|| Error::UndefinedRatio("structured estimator variance is zero".into()))?;
    let rel_err = (measured - predicted).abs() / predicted;
    Ok(RatioCheck {
        pass: rel_err < tol,
        measured,
        predicted,
        rel_err,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasednessCheck {
    pub pass: bool,
    /// `||mean(g_R) - g_bar||`.
    pub err_random: f64,
    /// `||mean(g_S) - g_bar||`.
    pub err_structured: f64,
    /// `tol * (1 + ||g_bar||)`.
    pub bound: f64,
}

pub fn check_unbiasedness(pop: &RegimeGradientPopulation, mode: Estimation, tol: f64) -> Result<UnbiasednessCheck> {
    if !pop.equal_sizes() {
        return Err(Error::invalid("unbiasedness against g_bar needs equal group sizes"));
    }
    let dim = pop.dim();
    let mu_l = mean_vec(pop.near.iter(), dim);
    let mu_h = mean_vec(pop.far.iter(), dim);
    let g_bar: Vec<f64> = mu_l.iter().zip(&mu_h).map(|(a, b)| 0.5 * (a + b)).collect();
    let err_random = sq_dist(&estimator_mean(pop, PairKind::RandomPair, mode)?, &g_bar).sqrt();
    let err_structured = sq_dist(&estimator_mean(pop, PairKind::StructuredPair, mode)?, &g_bar).sqrt();
    let bound = tol * (1.0 + g_bar.iter().map(|x| x * x).sum::<f64>().sqrt());
    Ok(UnbiasednessCheck {
        pass: err_random <= bound && err_structured <= bound,
        err_random,
        err_structured,
        bound,
    })
}

/// Per-iteration, per-block conflict indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictReport {
    pub signs: Vec<[bool; 5]>,
    /// Fraction of (iteration, block) pairs in conflict.
    pub conflict_rate: f64,
    pub per_block_rate: [f64; 5],
    pub ratios: Option<[f64; 5]>,
    pub exponents: Option<[f64; 5]>,
}

/// Conflict rate from already-computed per-block dot products.
pub fn conflict_rate_from_dots(dots: &[[f64; 5]]) -> Result<ConflictReport> {
    if dots.is_empty() {
        return Err(Error::invalid("empty gradient series"));
    }
    let signs: Vec<[bool; 5]> = dots.iter().map(|d| d.map(|x| x < 0.0)).collect();
    let mut per_block = [0.0; 5];
    for s in &signs {
        for (p, &c) in per_block.iter_mut().zip(s) {
            *p += c as u8 as f64;
        }
    }
    let n = signs.len() as f64;
    let total: f64 = per_block.iter().sum();
    Ok(ConflictReport {
        conflict_rate: total / (5.0 * n),
        per_block_rate: per_block.map(|p| p / n),
        signs,
        ratios: None,
        exponents: None,
    })
}

pub fn conflict_rate(gn_series: &[BlockVectors], gf_series: &[BlockVectors]) -> Result<ConflictReport> {
    if gn_series.len() != gf_series.len() {
        return Err(Error::invalid(format!(
            "series lengths differ: {} vs {}",
            gn_series.len(),
            gf_series.len()
        )));
    }
    let mut dots = Vec::with_capacity(gn_series.len());
    for (a, b) in gn_series.iter().zip(gf_series) {
        a.check_shape(b)?;
        dots.push(BlockKind::ALL.map(|k| a.dot(b, k)));
    }
    conflict_rate_from_dots(&dots)
}

/// `R = mean near ||g_block|| / mean far ||g_block||` per block.
pub fn gradient_ratio(pop: &RegimeGradientPopulation) -> Result<[f64; 5]> {
    let (near, far) = match (&pop.near_blocks, &pop.far_blocks) {
        (Some(n), Some(f)) => (n, f),
        _ => return Err(Error::invalid("population has no block structure")),
    };
    let mean_norm = |v: &[BlockVectors], k: BlockKind| v.iter().map(|g| g.block_norm(k)).sum::<f64>() / v.len() as f64;
    let mut out = [0.0; 5];
    for kind in BlockKind::ALL {
        let f = mean_norm(far, kind);
        if f == 0.0 {
            return Err(Error::UndefinedRatio(format!(
                "far-group mean norm is zero for block '{}'",
                kind.name()
            )));
        }
        out[kind.index()] = mean_norm(near, kind) / f;
    }
    Ok(out)
}

/// Least-squares `d` in `||g|| ~ r^-d` from `(r, mean norm)` pairs.
pub fn fit_distance_exponent(measurements: &[(f64, f64)]) -> Result<f64> {
    if measurements.iter().any(|&(r, g)| !(r > 0.0) || !(g > 0.0)) {
        return Err(Error::invalid("distances and norms must be positive"));
    }
    let mut rs: Vec<f64> = measurements.iter().map(|m| m.0).collect();
    rs.sort_by(f64::total_cmp);
    rs.dedup();
    if rs.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 distinct distances, got {}",
            rs.len()
        )));
    }
    let n = measurements.len() as f64;
    let xs: Vec<f64> = measurements.iter().map(|m| m.0.ln()).collect();
    let ys: Vec<f64> = measurements.iter().map(|m| m.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(-sxy / sxx)
}

/// Per-camera gradients at one parameter point, computed in parallel.
pub fn evaluate_gradients(
    scene: &SplatScene,
    cams: &[CameraSpec],
    targets: &[Image],
    cfg: &LossConfig,
) -> Result<Vec<GradientSet>> {
    if cams.len() != targets.len() {
        return Err(Error::invalid("one target per camera is required"));
    }
    cams.par_iter()
        .zip(targets.par_iter())
        .map(|(cam, target)| backward(scene, cam, target, cfg).map(|(_, g)| g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> RegimeGradientPopulation {
        RegimeGradientPopulation::from_vectors(vec![vec![0.0], vec![2.0]], vec![vec![10.0], vec![12.0]], 0).unwrap()
    }

    #[test]
    fn scalar_toy_decomposition() {
        let r = variance_decompose(&toy(), Estimation::Exhaustive).unwrap();
        assert_eq!(r.mu_l, vec![1.0]);
        assert_eq!(r.mu_h, vec![11.0]);
        assert_eq!(r.sigma2_w, 1.0);
        assert_eq!(r.sigma2_b, 25.0);
        assert_eq!(r.ratio_predicted, Some(26.0));
        assert_eq!(r.var_s, 0.5);
        assert_eq!(r.var_r, 13.0);
        assert_eq!(r.single_view_variance, 26.0);
        let check = check_ratio_identity(&toy(), Estimation::Exhaustive, 1e-12).unwrap();
        assert!(check.pass && check.measured == 26.0);
    }

    #[test]
    fn scalar_toy_unbiased() {
        let pop = toy();
        assert_eq!(
            estimator_mean(&pop, PairKind::RandomPair, Estimation::Exhaustive).unwrap(),
            vec![6.0]
        );
        assert_eq!(
            estimator_mean(&pop, PairKind::StructuredPair, Estimation::Exhaustive).unwrap(),
            vec![6.0]
        );
        assert!(check_unbiasedness(&pop, Estimation::Exhaustive, 0.0).unwrap().pass);
    }

    #[test]
    fn degenerate_populations() {
        let same = RegimeGradientPopulation::from_vectors(vec![vec![1.0, 2.0]; 3], vec![vec![1.0, 2.0]; 3], 0).unwrap();
        let r = variance_decompose(&same, Estimation::Exhaustive).unwrap();
        assert_eq!((r.sigma2_w, r.sigma2_b, r.var_r, r.var_s), (0.0, 0.0, 0.0, 0.0));
        assert!(matches!(
            check_ratio_identity(&same, Estimation::Exhaustive, 1e-12),
            Err(Error::UndefinedRatio(_))
        ));
        let coincident =
            RegimeGradientPopulation::from_vectors(vec![vec![0.0], vec![2.0]], vec![vec![-1.0], vec![3.0]], 0).unwrap();
        let r = variance_decompose(&coincident, Estimation::Exhaustive).unwrap();
        assert_eq!(r.sigma2_b, 0.0);
        assert_eq!(r.ratio_predicted, Some(1.0));
        assert!(
            check_ratio_identity(&coincident, Estimation::Exhaustive, 1e-12)
                .unwrap()
                .pass
        );
        let singles = RegimeGradientPopulation::from_vectors(vec![vec![3.0]], vec![vec![5.0]], 0).unwrap();
        assert_eq!(
            estimator_variance(&singles, PairKind::StructuredPair, Estimation::Exhaustive).unwrap(),
            0.0
        );
        assert!(RegimeGradientPopulation::from_vectors(vec![], vec![vec![1.0]], 0).is_err());
    }

    #[test]
    fn conflict_rate_cases() {
        let mk = |v: f64| {
            let mut b = BlockVectors::zeros(1);
            for k in BlockKind::ALL {
                b[k] = vec![v; k.width()];
            }
            b
        };
        let a: Vec<BlockVectors> = (1..20).map(|i| mk(i as f64)).collect();
        let neg: Vec<BlockVectors> = a.iter().map(|b| b.scaled(-1.0)).collect();
        assert_eq!(conflict_rate(&a, &a).unwrap().conflict_rate, 0.0);
        assert_eq!(conflict_rate(&a, &neg).unwrap().conflict_rate, 1.0);
        assert!(conflict_rate(&a, &neg[1..]).is_err());
    }

    #[test]
    fn conflict_rate_of_random_signs() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draw = || {
            let mut b = BlockVectors::zeros(2);
            for k in BlockKind::ALL {
                for v in b[k].iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
            b
        };
        let (a, b): (Vec<_>, Vec<_>) = (0..10_000).map(|_| (draw(), draw())).unzip();
        let rate = conflict_rate(&a, &b).unwrap().conflict_rate;
        assert!((rate - 0.5).abs() < 0.02, "{rate}");
        let scaled: Vec<_> = b.iter().map(|g| g.scaled(3.5)).collect();
        assert_eq!(conflict_rate(&a, &scaled).unwrap().conflict_rate, rate);
    }

    #[test]
    fn gradient_ratio_cases() {
        let mut g = GradientSet::zeros(2);
        let mut b = g.blocks.clone();
        for k in BlockKind::ALL {
            b[k].iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + i as f64);
        }
        g = g.with_blocks(b.clone());
        let twice = g.with_blocks(b.scaled(2.0));
        let pop = RegimeGradientPopulation::from_gradient_sets(&[g.clone()], &[g.clone()], 0).unwrap();
        assert_eq!(gradient_ratio(&pop).unwrap(), [1.0; 5]);
        let pop = RegimeGradientPopulation::from_gradient_sets(&[twice], &[g.clone()], 0).unwrap();
        assert_eq!(gradient_ratio(&pop).unwrap(), [2.0; 5]);
        let pop = RegimeGradientPopulation::from_gradient_sets(&[g], &[GradientSet::zeros(2)], 0).unwrap();
        assert!(matches!(gradient_ratio(&pop), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn exponent_recovers_power_laws() {
        for d in [1.0, 2.0, 0.7] {
            let m: Vec<(f64, f64)> = [2.0f64, 3.0, 4.0, 6.0, 8.0]
                .iter()
                .map(|&r| (r, 5.0 * r.powf(-d)))
                .collect();
            assert!((fit_distance_exponent(&m).unwrap() - d).abs() < 1e-10);
        }
        assert!(fit_distance_exponent(&[(2.0, 1.0), (2.0, 2.0), (2.0, 3.0)]).is_err());
        assert!(fit_distance_exponent(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn population() -> impl Strategy<Value = RegimeGradientPopulation> {
            (1usize..=8, 1usize..=4).prop_flat_map(|(n, dim)| {
                (
                    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), n),
                    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), n),
                )
                    .prop_map(|(a, b)| RegimeGradientPopulation::from_vectors(a, b, 0).unwrap())
            })
        }

        fn rel_close(a: f64, b: f64) -> bool {
            (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
        }

        proptest! {
            #[test]
            fn exhaustive_closed_forms(pop in population()) {
                let r = variance_decompose(&pop, Estimation::Exhaustive).unwrap();
                prop_assert!(rel_close(r.single_view_variance, r.sigma2_w + r.sigma2_b));
                prop_assert!(rel_close(r.var_s, 0.5 * r.sigma2_w));
                prop_assert!(rel_close(r.var_r, 0.5 * (r.sigma2_w + r.sigma2_b)));
                prop_assert!(r.var_s <= r.var_r * (1.0 + 1e-12));
            }
        }
    }
}
