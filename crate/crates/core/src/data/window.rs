use crate::data::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Where conditional goal frames come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalMode {
    /// The final `g` frames of the sample's own trajectory.
    TrajectoryEnd,
    /// The `g` frames ending `k` steps after the sample (clamped to the end).
    FutureOffset(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub obs_window: usize,
    pub chunk_len: usize,
    pub goal_window: usize,
    pub goal_mode: GoalMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowIndex {
    pub traj: usize,
    pub t: usize,
}

/// One training example: observations `t-h+1..=t`, actions `t..t+n`, and
/// optional goal frames.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    pub goal: Option<Vec<f64>>,
    pub traj: usize,
    pub t: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.obs_window == 0 || self.chunk_len == 0 {
            return Err(Error::Invalid("obs_window and chunk_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Every valid `(trajectory, t)` with `t + n <= T`, in dataset order.
pub fn window_indices(ds: &TrajectoryDataset, chunk_len: usize) -> Result<Vec<WindowIndex>> {
    if chunk_len == 0 {
        return Err(Error::Invalid("chunk_len must be at least 1".into()));
    }
    let mut out = Vec::new();
    for traj in 0..ds.num_trajectories() {
        let len = ds.traj_len(traj);
        if len < chunk_len {
            return Err(Error::Invalid(format!("trajectory {traj} has {len} steps, shorter than chunk length {chunk_len}")));
        }
        out.extend((0..=len - chunk_len).map(|t| WindowIndex { traj, t }));
    }
    Ok(out)
}

/// Gathers `count` frames ending at `end` (inclusive), repeating frame 0
/// where the window reaches before the trajectory start.
fn frames_ending_at(ds: &TrajectoryDataset, traj: usize, end: usize, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count * ds.obs_dim());
    for k in 0..count {
        let t = (end + k + 1).saturating_sub(count);
        out.extend(ds.observation(traj, t).iter().map(|&v| v as f64));
    }
    out
}

pub fn make_sample(ds: &TrajectoryDataset, spec: &WindowSpec, idx: WindowIndex) -> WindowSample {
    let WindowIndex { traj, t } = idx;
    let observations = frames_ending_at(ds, traj, t, spec.obs_window);
    let mut actions = Vec::with_capacity(spec.chunk_len * ds.act_dim());
    for k in t..t + spec.chunk_len {
        actions.extend(ds.action(traj, k).iter().map(|&v| v as f64));
    }
    let goal = (spec.goal_window > 0).then(|| {
        let last = ds.traj_len(traj) - 1;
        let end = match spec.goal_mode {
            GoalMode::TrajectoryEnd => last,
            GoalMode::FutureOffset(k) => (t + k).min(last),
        };
        frames_ending_at(ds, traj, end, spec.goal_window)
    });
    WindowSample { observations, actions, goal, traj, t }
}

/// One shuffled epoch over every valid window.
pub fn window_iter<'a>(ds: &'a TrajectoryDataset, spec: WindowSpec, rng: &mut SeededRng) -> Result<impl Iterator<Item = WindowSample> + 'a> {
    spec.validate()?;
    let mut idx = window_indices(ds, spec.chunk_len)?;
    rng.shuffle(&mut idx);
    Ok(idx.into_iter().map(move |i| make_sample(ds, &spec, i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::Trajectory;

    fn ramp(lens: &[usize]) -> TrajectoryDataset {
        let trajs = lens
            .iter()
            .enumerate()
            .map(|(i, &len)| Trajectory {
                observations: (0..len).map(|t| (100 * i + t) as f32).collect(),
                actions: (0..len).map(|t| -((100 * i + t) as f32)).collect(),
            })
            .collect();
        TrajectoryDataset::new(1, 1, trajs).unwrap()
    }

    fn spec(h: usize, n: usize, g: usize) -> WindowSpec {
        WindowSpec { obs_window: h, chunk_len: n, goal_window: g, goal_mode: GoalMode::TrajectoryEnd }
    }

    #[test]
    fn counts_for_single_step_chunks() {
        let ds = ramp(&[5]);
        let mut rng = SeededRng::new(0);
        let samples: Vec<_> = window_iter(&ds, spec(2, 1, 0), &mut rng).unwrap().collect();
        assert_eq!(samples.len(), 5);
        let first = samples.iter().find(|s| s.t == 0).unwrap();
        assert_eq!(first.observations, vec![0.0, 0.0]);
        let third = samples.iter().find(|s| s.t == 2).unwrap();
        assert_eq!(third.observations, vec![1.0, 2.0]);
    }

    #[test]
    fn counts_for_longer_chunks() {
        let ds = ramp(&[5]);
        let idx = window_indices(&ds, 3).unwrap();
        assert_eq!(idx.iter().map(|i| i.t).collect::<Vec<_>>(), vec![0, 1, 2]);
        let s = make_sample(&ds, &spec(1, 3, 0), idx[2]);
        assert_eq!(s.actions, vec![-2.0, -3.0, -4.0]);
    }

    #[test]
    fn same_seed_same_order() {
        let ds = ramp(&[7, 4, 9]);
        let order = |seed| {
            let mut rng = SeededRng::new(seed);
            window_iter(&ds, spec(3, 2, 0), &mut rng).unwrap().map(|s| (s.traj, s.t)).collect::<Vec<_>>()
        };
        assert_eq!(order(5), order(5));
        assert_ne!(order(5), order(6));
    }

    #[test]
    fn goals_come_from_own_trajectory_end() {
        let ds = ramp(&[4, 6]);
        let s = make_sample(&ds, &spec(2, 1, 2), WindowIndex { traj: 1, t: 0 });
        assert_eq!(s.goal.unwrap(), vec![104.0, 105.0]);
        let f = WindowSpec { goal_mode: GoalMode::FutureOffset(2), ..spec(2, 1, 1) };
        let s = make_sample(&ds, &f, WindowIndex { traj: 1, t: 1 });
        assert_eq!(s.goal.unwrap(), vec![103.0]);
    }

    #[test]
    fn short_trajectory_rejected() {
        let ds = ramp(&[2]);
        assert!(window_indices(&ds, 3).is_err());
    }

    #[test]
    fn windows_never_cross_trajectories() {
        let ds = ramp(&[3, 5, 2]);
        let mut rng = SeededRng::new(1);
        for s in window_iter(&ds, spec(4, 2, 2), &mut rng).unwrap() {
            let base = (100 * s.traj) as f64;
            assert!(s.observations.iter().chain(s.goal.as_ref().unwrap()).all(|&v| v >= base && v < base + 100.0));
            assert!(s.actions.iter().all(|&v| -v >= base && -v < base + 100.0));
        }
    }
}
