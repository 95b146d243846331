use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::envs::world::{EpisodeResult, Route};
use crate::error::{Error, Result};

/// Shannon entropy in bits of the ordered `k`-prefixes of completion orders,
/// over episodes that completed at least `k` tasks.
pub fn completion_order_entropy(results: &[EpisodeResult], k: usize) -> Result<f64> {
    let mut counts: BTreeMap<&[usize], usize> = BTreeMap::new();
    for r in results.iter().filter(|r| r.order.len() >= k) {
        *counts.entry(&r.order[..k]).or_default() += 1;
    }
    let n: usize = counts.values().sum();
    if n == 0 {
        return Err(Error::Invalid(format!("no episode completed {k} tasks")));
    }
    Ok(entropy_bits(counts.values().copied(), n))
}

fn entropy_bits(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    let h: f64 = counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum();
    // avoid reporting -0.0 for a single outcome
    h.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteCoverage {
    pub upper: f64,
    pub lower: f64,
    pub none: f64,
    /// Entropy in bits of the route labels.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessMetrics {
    pub episodes: usize,
    /// Mean success count.
    pub expected_successes: f64,
    /// `p[k-1]` = fraction of episodes completing at least `k` tasks.
    pub p: Vec<f64>,
    pub collision_free: usize,
    pub routes: Option<RouteCoverage>,
}

/// Aggregates episodes; `max_tasks` sets how many `pK` rates are reported.
pub fn success_metrics(results: &[EpisodeResult], max_tasks: usize) -> Result<SuccessMetrics> {
    if results.is_empty() {
        return Err(Error::Invalid("no episodes to aggregate".into()));
    }
    let n = results.len() as f64;
    let p = (1..=max_tasks).map(|k| results.iter().filter(|r| r.successes >= k).count() as f64 / n).collect();
    let labels: Vec<Route> = results.iter().filter_map(|r| r.route).collect();
    let routes = (!labels.is_empty()).then(|| {
        let count = |route| labels.iter().filter(|&&l| l == route).count();
        let c = [count(Route::Upper), count(Route::Lower), count(Route::None)];
        let m = labels.len() as f64;
        RouteCoverage { upper: c[0] as f64 / m, lower: c[1] as f64 / m, none: c[2] as f64 / m, entropy: entropy_bits(c.into_iter(), labels.len()) }
    });
    Ok(SuccessMetrics {
        episodes: results.len(),
        expected_successes: results.iter().map(|r| r.successes as f64).sum::<f64>() / n,
        p,
        collision_free: results.iter().filter(|r| !r.collided).count(),
        routes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::world::EnvKind;

    fn episode(order: &[usize]) -> EpisodeResult {
        EpisodeResult {
            kind: EnvKind::FourGoal,
            successes: order.len(),
            order: order.to_vec(),
            command: None,
            route: None,
            collided: false,
            steps: 10,
            trace: Vec::new(),
        }
    }

    fn permutations() -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let v = vec![a, b, c, d];
                        if (0..4).all(|g| v.contains(&g)) {
                            out.push(v);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_order_has_zero_entropy() {
        let r = vec![episode(&[2, 0, 1, 3]); 7];
        assert_eq!(completion_order_entropy(&r, 4).unwrap(), 0.0);
    }

    #[test]
    fn uniform_full_orders() {
        let r: Vec<_> = permutations().iter().map(|o| episode(o)).collect();
        assert_eq!(r.len(), 24);
        assert!((completion_order_entropy(&r, 4).unwrap() - 24f64.log2()).abs() < 1e-12);
        assert!((completion_order_entropy(&r, 1).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn at_least_k_filter() {
        let r = vec![episode(&[0, 1]), episode(&[1]), episode(&[])];
        assert_eq!(completion_order_entropy(&r, 2).unwrap(), 0.0);
        assert!((completion_order_entropy(&r, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(completion_order_entropy(&r, 3).is_err());
    }

    #[test]
    fn rate_examples() {
        let all = vec![episode(&[0, 1, 2, 3]); 3];
        let m = success_metrics(&all, 4).unwrap();
        assert_eq!(m.p, vec![1.0; 4]);
        assert_eq!(m.expected_successes, 4.0);
        let mixed = vec![episode(&[0, 1]), episode(&[])];
        let m = success_metrics(&mixed, 4).unwrap();
        assert_eq!(m.p, vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(m.expected_successes, 1.0);
        assert!(success_metrics(&[], 4).is_err());
    }

    #[test]
    fn route_coverage() {
        let mk = |route| EpisodeResult { kind: EnvKind::Detour, route: Some(route), ..episode(&[0]) };
        let r = vec![mk(Route::Upper), mk(Route::Lower), mk(Route::Upper), mk(Route::Lower)];
        let c = success_metrics(&r, 1).unwrap().routes.unwrap();
        assert_eq!((c.upper, c.lower, c.none), (0.5, 0.5, 0.0));
        assert!((c.entropy - 1.0).abs() < 1e-12);
    }
}
