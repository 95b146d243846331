use serde::{Deserialize, Serialize};

use crate::data::dataset::TrajectoryDataset;
use crate::error::{Error, Result};

/// Per-dimension action range used to map actions into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ActionStats {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn is_valid(&self) -> bool {
        self.min.len() == self.max.len()
            && !self.min.is_empty()
            && self.min.iter().chain(&self.max).all(|v| v.is_finite())
            && self.min.iter().zip(&self.max).all(|(lo, hi)| hi >= lo)
    }

    /// Normalizes a flattened chunk of `n * dim` values in place.
    /// Constant dimensions map to 0.
    pub fn normalize(&self, chunk: &mut [f64]) {
        let d = self.dim();
        for (i, v) in chunk.iter_mut().enumerate() {
            let (lo, hi) = (self.min[i % d], self.max[i % d]);
            *v = if hi > lo { 2.0 * (*v - lo) / (hi - lo) - 1.0 } else { 0.0 };
        }
    }

    pub fn denormalize(&self, chunk: &mut [f64]) {
        let d = self.dim();
        for (i, v) in chunk.iter_mut().enumerate() {
            let (lo, hi) = (self.min[i % d], self.max[i % d]);
            *v = if hi > lo { (*v + 1.0) * 0.5 * (hi - lo) + lo } else { lo };
        }
    }
}

/// Normalized copies of every trajectory's actions, plus the stats used.
pub fn normalize_actions(ds: &TrajectoryDataset) -> (Vec<Vec<f64>>, ActionStats) {
    let stats = ds.action_stats();
    let normalized = ds
        .trajectories()
        .iter()
        .map(|tr| {
            let mut a: Vec<f64> = tr.actions.iter().map(|&v| v as f64).collect();
            stats.normalize(&mut a);
            a
        })
        .collect();
    (normalized, stats)
}

/// Maps a normalized chunk back to environment units.
pub fn denormalize(chunk: &[f64], stats: Option<&ActionStats>) -> Result<Vec<f64>> {
    let stats = stats.ok_or_else(|| Error::Invalid("normalization stats missing".into()))?;
    if !stats.is_valid() {
        return Err(Error::Invalid("normalization stats are malformed".into()));
    }
    if !chunk.len().is_multiple_of(stats.dim()) {
        return Err(Error::shape("denormalize", format!("{} values for action dim {}", chunk.len(), stats.dim())));
    }
    let mut out = chunk.to_vec();
    stats.denormalize(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats() -> ActionStats {
        ActionStats { min: vec![-0.1, 2.0, 5.0], max: vec![0.1, 3.0, 5.0] }
    }

    #[test]
    fn endpoints_map_to_unit_interval() {
        let s = stats();
        let mut lo = vec![-0.1, 2.0, 5.0];
        let mut hi = vec![0.1, 3.0, 5.0];
        s.normalize(&mut lo);
        s.normalize(&mut hi);
        assert_eq!(&lo[..2], &[-1.0, -1.0]);
        assert_eq!(&hi[..2], &[1.0, 1.0]);
    }

    #[test]
    fn constant_dimension() {
        let s = stats();
        let mut a = vec![0.0, 2.5, 5.0];
        s.normalize(&mut a);
        assert_eq!(a[2], 0.0);
        let back = denormalize(&a, Some(&s)).unwrap();
        assert_eq!(back[2], 5.0);
    }

    #[test]
    fn missing_stats_is_an_error() {
        assert!(denormalize(&[0.0], None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip_within_tolerance(vals in proptest::collection::vec(-0.1f64..0.1, 6)) {
            let s = ActionStats { min: vec![-0.1, -0.1], max: vec![0.1, 0.1] };
            let mut a = vals.clone();
            s.normalize(&mut a);
            prop_assert!(a.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
            let back = denormalize(&a, Some(&s)).unwrap();
            for (x, y) in back.iter().zip(&vals) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }
}
