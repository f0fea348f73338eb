//! Candidate generators for the weighting parameter: batched GP-UCB with
//! hallucinated observations, uniform ball sampling, and an epsilon-cover grid.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::gpr::{normal_quantile_percent, QueryPosterior, Standardization};
use crate::seed;
use crate::{MoewError, Result};

/// Largest percent level used for quantiles; 100 itself would be infinite.
const MAX_LEVEL: f64 = 100.0 - 1e-10;

pub const DEFAULT_GRID_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucbConfig {
    /// Candidates per batch.
    pub batch_size: usize,
    /// Width (percent) of the optimistic interval used for acquisition.
    pub explore_percent: f64,
    /// Width (percent) of the pessimistic interval used for hallucinated values.
    pub hallucinate_percent: f64,
    /// Ball radius; also the GP kernel width.
    pub radius: f64,
    pub acquisition_samples: usize,
    pub seed: u64,
}

impl Default for BucbConfig {
    fn default() -> Self {
        BucbConfig {
            batch_size: 20,
            explore_percent: 68.3,
            hallucinate_percent: 68.3,
            radius: 3.0,
            acquisition_samples: 10_000,
            seed: 0,
        }
    }
}

impl BucbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MoewError::Domain("batch size must be at least 1".into()));
        }
        for (name, p) in [
            ("explore_percent", self.explore_percent),
            ("hallucinate_percent", self.hallucinate_percent),
        ] {
            if !(0.0..=100.0).contains(&p) {
                return Err(MoewError::Domain(format!("{name} = {p} must lie in [0, 100]")));
            }
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(MoewError::Domain(format!("radius {} must be positive", self.radius)));
        }
        Ok(())
    }
}

/// Evaluated `(alpha, validation metric)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    points: Vec<(Vec<f64>, f64)>,
}

impl History {
    pub fn new() -> History {
        History::default()
    }

    /// Rejects non-finite metrics; failed trainings should not be recorded.
    pub fn push(&mut self, alpha: Vec<f64>, metric: f64) -> Result<()> {
        if !metric.is_finite() {
            return Err(MoewError::Domain(format!("history metric {metric} is not finite")));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(MoewError::Domain("history alpha is not finite".into()));
        }
        if let Some((first, _)) = self.points.first() {
            if first.len() != alpha.len() {
                return Err(MoewError::Shape(format!(
                    "history alpha has dimension {}, expected {}",
                    alpha.len(),
                    first.len()
                )));
            }
        }
        self.points.push((alpha, metric));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(Vec<f64>, f64)] {
        &self.points
    }
}

/// One uniform draw from the `d`-ball of radius `radius`.
pub fn sample_ball<R: Rng>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
        return dir.into_iter().map(|v| v / norm * r).collect();
    }
}

pub fn get_candidates_random(k: usize, d: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed);
    (0..k).map(|_| sample_ball(&mut rng, d, radius)).collect()
}

/// Batched GP-UCB: each pick maximizes the optimistic quantile over the
/// acquisition set, then is added to the surrogate at its pessimistic quantile
/// before the next pick. Hallucinations do not outlive the call.
///
/// `noise_variance` is in metric units.
pub fn get_candidates_bucb(
    history: &History,
    cfg: &BucbConfig,
    d: usize,
    noise_variance: f64,
) -> Result<Vec<Vec<f64>>> {
    get_candidates_bucb_pending(history, &[], cfg, d, noise_variance)
}

/// As [`get_candidates_bucb`], with `pending` points already committed to the
/// batch: they are hallucinated before the first pick and are not returned.
pub fn get_candidates_bucb_pending(
    history: &History,
    pending: &[Vec<f64>],
    cfg: &BucbConfig,
    d: usize,
    noise_variance: f64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if d == 0 {
        return Err(MoewError::Domain("alpha dimension must be positive".into()));
    }
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(MoewError::Numerical(format!("noise variance {noise_variance} is invalid")));
    }
    if history.points.iter().map(|p| &p.0).chain(pending).any(|a| a.len() != d) {
        return Err(MoewError::Shape(format!("history and pending alphas must have dimension {d}")));
    }

    let mut rng = seed::rng(cfg.seed);
    let mut queries = Vec::with_capacity((cfg.acquisition_samples + history.len() + 1) * d);
    for _ in 0..cfg.acquisition_samples {
        queries.extend(sample_ball(&mut rng, d, cfg.radius));
    }
    let first_history = cfg.acquisition_samples;
    for (a, _) in &history.points {
        queries.extend_from_slice(a);
    }
    let first_pending = first_history + history.len();
    for a in pending {
        queries.extend_from_slice(a);
    }
    queries.extend(std::iter::repeat_n(0.0, d));

    let values: Vec<f64> = history.points.iter().map(|p| p.1).collect();
    let st = Standardization::fit(&values);
    let noise_std = noise_variance / (st.std * st.std);
    let mut post = QueryPosterior::new(queries, d, cfg.radius, noise_std);
    for (i, (_, v)) in history.points.iter().enumerate() {
        post.observe(first_history + i, st.to_std(*v))?;
    }

    let z_explore = normal_quantile_percent((50.0 + cfg.explore_percent / 2.0).min(MAX_LEVEL));
    let z_hallucinate = normal_quantile_percent((50.0 - cfg.hallucinate_percent / 2.0).max(100.0 - MAX_LEVEL));
    let hallucinate = |post: &mut QueryPosterior, j: usize| {
        let v = acquisition(post.mean(j), post.variance(j), z_hallucinate);
        post.observe(j, v)
    };
    for i in 0..pending.len() {
        hallucinate(&mut post, first_pending + i)?;
    }
    let mut out = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for j in 0..post.num_queries() {
            let v = acquisition(post.mean(j), post.variance(j), z_explore);
            if v > best_val {
                best_val = v;
                best = j;
            }
        }
        out.push(post.query(best).to_vec());
        hallucinate(&mut post, best)?;
    }
    Ok(out)
}

/// Quantile in standardized units; exactly the mean when `z == 0`.
fn acquisition(mean: f64, variance: f64, z: f64) -> f64 {
    if z == 0.0 {
        mean
    } else {
        mean + z * variance.sqrt()
    }
}

/// Number of integer vectors in `dims` dimensions with squared norm at most `max_sq`.
fn lattice_count(dims: usize, max_sq: i64) -> usize {
    let m = (max_sq as f64).sqrt().floor() as i64;
    let mut ways = vec![0usize; max_sq as usize + 1];
    ways[0] = 1;
    for _ in 0..dims {
        let mut next = vec![0usize; ways.len()];
        for (s, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for c in -m..=m {
                let t = s as i64 + c * c;
                if t <= max_sq {
                    next[t as usize] = next[t as usize].saturating_add(w);
                }
            }
        }
        ways = next;
    }
    ways.iter().fold(0usize, |a, &b| a.saturating_add(b))
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn enumerate_lattice(dims: usize, max_sq: i64, prefix: &mut Vec<i64>, sq: i64, out: &mut Vec<Vec<i64>>) {
    if prefix.len() == dims {
        out.push(prefix.clone());
        return;
    }
    let m = ((max_sq - sq) as f64).sqrt().floor() as i64;
    for c in -m..=m {
        if sq + c * c <= max_sq {
            prefix.push(c);
            enumerate_lattice(dims, max_sq, prefix, sq + c * c, out);
            prefix.pop();
        }
    }
}

/// Epsilon-cover of the unit `d`-ball.
///
/// Lattice points of spacing `2 eps / sqrt(d)` are taken out to radius
/// `1 + eps` (every ball point rounds to one of those); points outside the
/// ball are projected radially onto the sphere, which never moves them further
/// from a ball point. The origin is always a lattice point. `cap` bounds the
/// number of lattice points examined.
pub fn get_candidates_grid(d: usize, eps: f64, cap: usize) -> Result<Vec<Vec<f64>>> {
    if d == 0 {
        return Err(MoewError::Domain("dimension must be positive".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(MoewError::Domain(format!("epsilon {eps} must lie in (0, 1]")));
    }
    let h = 2.0 * eps / (d as f64).sqrt();
    let reach = (1.0 + eps) / h;
    let max_sq = (reach * reach * (1.0 + 1e-12)).floor() as i64;
    let inner_sq = 1.0 / (h * h) * (1.0 + 1e-12);
    let count = lattice_count(d, max_sq);
    if count > cap {
        return Err(MoewError::Size { count, cap });
    }
    let mut lattice = Vec::with_capacity(count);
    enumerate_lattice(d, max_sq, &mut Vec::with_capacity(d), 0, &mut lattice);

    let mut inside = Vec::new();
    let mut directions = BTreeSet::new();
    for m in lattice {
        let sq: i64 = m.iter().map(|c| c * c).sum();
        if (sq as f64) <= inner_sq {
            let p: Vec<f64> = m.iter().map(|&c| c as f64 * h).collect();
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1.0 {
                inside.push(p);
                continue;
            }
        }
        let g = m.iter().fold(0, |a, &c| gcd(a, c));
        directions.insert(m.iter().map(|c| c / g).collect::<Vec<i64>>());
    }
    for dir in directions {
        let norm = (dir.iter().map(|c| (c * c) as f64).sum::<f64>()).sqrt();
        inside.push(dir.iter().map(|&c| c as f64 / norm).collect());
    }
    Ok(inside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpr::GprModel;
    use proptest::prelude::*;

    fn norm(a: &[f64]) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn cfg(k: usize, p: f64, q: f64, radius: f64) -> BucbConfig {
        BucbConfig {
            batch_size: k,
            explore_percent: p,
            hallucinate_percent: q,
            radius,
            acquisition_samples: 2000,
            seed: 11,
        }
    }

    #[test]
    fn random_candidates_lie_in_ball() {
        for d in 1..6 {
            for a in get_candidates_random(500, d, 2.5, d as u64) {
                assert_eq!(a.len(), d);
                assert!(norm(&a) <= 2.5);
            }
        }
    }

    #[test]
    fn random_one_dimensional_mean_is_zero() {
        let r = 3.0;
        let xs = get_candidates_random(100_000, 1, r, 5);
        let mean = xs.iter().map(|a| a[0]).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02 * r, "{mean}");
    }

    #[test]
    fn random_two_dimensional_mean_radius() {
        let r = 3.0;
        let xs = get_candidates_random(100_000, 2, r, 6);
        let mean = xs.iter().map(|a| norm(a)).sum::<f64>() / xs.len() as f64;
        assert!((mean - 2.0 * r / 3.0).abs() < 0.01 * r, "{mean}");
    }

    #[test]
    fn random_is_deterministic() {
        assert_eq!(get_candidates_random(5, 3, 1.0, 9), get_candidates_random(5, 3, 1.0, 9));
        assert_ne!(get_candidates_random(5, 3, 1.0, 9), get_candidates_random(5, 3, 1.0, 10));
    }

    #[test]
    fn grid_one_dimensional_unit_eps() {
        let mut g = get_candidates_grid(1, 1.0, DEFAULT_GRID_CAP).unwrap();
        g.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(g, vec![vec![-1.0], vec![0.0], vec![1.0]]);
    }

    #[test]
    fn grid_covers_ball_within_size_bound() {
        let cases = [(1, 1.0), (1, 0.5), (1, 0.1), (2, 1.0), (2, 0.5), (2, 0.25), (3, 1.0), (3, 0.5), (4, 0.5)];
        for (i, &(d, eps)) in cases.iter().enumerate() {
            let g = get_candidates_grid(d, eps, DEFAULT_GRID_CAP).unwrap();
            let bound = (1.0 + 2.0 / eps).powi(d as i32);
            assert!(g.len() as f64 <= bound, "d={d} eps={eps}: {} > {bound}", g.len());
            assert!(g.iter().any(|p| p.iter().all(|&v| v == 0.0)));
            assert!(g.iter().all(|p| norm(p) <= 1.0 + 1e-12));
            let probes = get_candidates_random(10_000, d, 1.0, 100 + i as u64);
            for x in &probes {
                let nearest = g
                    .iter()
                    .map(|p| norm(&p.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>()))
                    .fold(f64::INFINITY, f64::min);
                assert!(nearest <= eps + 1e-12, "d={d} eps={eps}: {nearest}");
            }
        }
    }

    #[test]
    fn grid_counts_match_enumeration() {
        for d in 1..5 {
            for max_sq in 0..12 {
                let mut all = Vec::new();
                enumerate_lattice(d, max_sq, &mut Vec::new(), 0, &mut all);
                assert_eq!(all.len(), lattice_count(d, max_sq));
            }
        }
    }

    #[test]
    fn grid_cap_reports_count() {
        match get_candidates_grid(6, 0.1, 1000) {
            Err(MoewError::Size { count, cap }) => {
                assert_eq!(cap, 1000);
                assert!(count > 1000);
            }
            other => panic!("expected size error, got {other:?}"),
        }
        assert!(get_candidates_grid(2, 0.0, 10).is_err());
        assert!(get_candidates_grid(2, 1.5, 10).is_err());
    }

    #[test]
    fn empty_history_gives_ball_samples() {
        let c = cfg(4, 68.3, 68.3, 2.0);
        let got = get_candidates_bucb(&History::new(), &c, 3, 0.01).unwrap();
        let samples = get_candidates_random(c.acquisition_samples, 3, 2.0, c.seed);
        assert_eq!(got[0], samples[0]);
        for a in &got {
            assert!(samples.contains(a));
        }
    }

    #[test]
    fn zero_percents_repeat_one_candidate() {
        let mut h = History::new();
        let pts = get_candidates_random(12, 2, 1.5, 3);
        for (i, a) in pts.into_iter().enumerate() {
            h.push(a.clone(), (a[0] - 0.3).powi(2) + 0.1 * i as f64).unwrap();
        }
        let got = get_candidates_bucb(&h, &cfg(6, 0.0, 0.0, 1.5), 2, 0.05).unwrap();
        assert!(got.iter().all(|a| a == &got[0]), "{got:?}");
    }

    #[test]
    fn one_dimensional_boundary_pick() {
        let mut h = History::new();
        h.push(vec![0.0], 0.7).unwrap();
        let c = BucbConfig {
            acquisition_samples: 10_000,
            ..cfg(1, 68.3, 68.3, 1.0)
        };
        let got = get_candidates_bucb(&h, &c, 1, 0.0).unwrap();
        // Dense scan of the acquisition: the posterior variance grows with |alpha|.
        let m = GprModel::fit(h.points(), 1.0, 0.0).unwrap();
        let scan: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 / 1000.0).collect();
        let best = scan
            .iter()
            .copied()
            .max_by(|a, b| m.predict(&[*a]).1.partial_cmp(&m.predict(&[*b]).1).unwrap())
            .unwrap();
        assert_eq!(best.abs(), 1.0);
        assert!(got[0][0].abs() > 0.999, "{:?}", got);
    }

    #[test]
    fn bucb_spreads_a_batch() {
        let mut h = History::new();
        h.push(vec![0.0, 0.0], 1.0).unwrap();
        let got = get_candidates_bucb(&h, &cfg(5, 68.3, 68.3, 1.0), 2, 0.01).unwrap();
        for i in 0..got.len() {
            for j in 0..i {
                assert_ne!(got[i], got[j]);
            }
        }
    }

    #[test]
    fn pending_points_repel_the_batch() {
        let c = BucbConfig {
            acquisition_samples: 3000,
            ..cfg(1, 68.3, 68.3, 1.0)
        };
        let free = get_candidates_bucb(&History::new(), &c, 2, 0.01).unwrap();
        let origin = vec![0.0, 0.0];
        let got = get_candidates_bucb_pending(&History::new(), std::slice::from_ref(&origin), &c, 2, 0.01).unwrap();
        assert_eq!(got.len(), 1);
        // With the origin pending, the pick moves to the edge of the ball.
        assert!(norm(&got[0]) > 0.95, "{got:?} vs {free:?}");
    }

    #[test]
    fn bucb_validation() {
        let h = History::new();
        assert!(get_candidates_bucb(&h, &cfg(0, 68.3, 68.3, 1.0), 2, 0.0).is_err());
        assert!(get_candidates_bucb(&h, &cfg(2, 101.0, 68.3, 1.0), 2, 0.0).is_err());
        assert!(get_candidates_bucb(&h, &cfg(2, 68.3, 68.3, 0.0), 2, 0.0).is_err());
        let mut h = History::new();
        assert!(h.push(vec![0.0], f64::NEG_INFINITY).is_err());
        h.push(vec![0.0], 1.0).unwrap();
        assert!(h.push(vec![0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn one_sigma_percents_give_unit_offsets() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let p = 100.0 * (2.0 * Normal::new(0.0, 1.0).unwrap().cdf(1.0) - 1.0);
        assert!((normal_quantile_percent(50.0 + p / 2.0) - 1.0).abs() < 1e-9);
        assert!((normal_quantile_percent(50.0 - p / 2.0) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_percent_is_finite() {
        let mut h = History::new();
        h.push(vec![0.2], 1.0).unwrap();
        h.push(vec![-0.2], 2.0).unwrap();
        let got = get_candidates_bucb(&h, &cfg(3, 100.0, 100.0, 1.0), 1, 0.01).unwrap();
        assert!(got.iter().all(|a| a[0].is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bucb_candidates_in_ball_and_deterministic(
            seed in any::<u64>(),
            d in 1usize..5,
            n in 0usize..10,
            radius in 0.5f64..4.0,
        ) {
            let mut h = History::new();
            for (i, a) in get_candidates_random(n, d, radius, seed ^ 1).into_iter().enumerate() {
                h.push(a, (i as f64).sin()).unwrap();
            }
            let c = BucbConfig { acquisition_samples: 300, seed, ..cfg(4, 68.3, 68.3, radius) };
            let a = get_candidates_bucb(&h, &c, d, 0.02).unwrap();
            let b = get_candidates_bucb(&h, &c, d, 0.02).unwrap();
            prop_assert_eq!(&a, &b);
            for x in &a {
                prop_assert!(norm(x) <= radius * (1.0 + 1e-12));
            }
        }

        #[test]
        fn zero_percents_degenerate(seed in any::<u64>(), n in 1usize..8) {
            let mut h = History::new();
            for (i, a) in get_candidates_random(n, 2, 1.0, seed).into_iter().enumerate() {
                h.push(a, (i as f64 * 0.7).cos()).unwrap();
            }
            let c = BucbConfig { acquisition_samples: 200, seed, ..cfg(5, 0.0, 0.0, 1.0) };
            let got = get_candidates_bucb(&h, &c, 2, 0.03).unwrap();
            prop_assert!(got.iter().all(|a| a == &got[0]));
        }
    }
}
