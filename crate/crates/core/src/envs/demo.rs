use crate::data::{Trajectory, TrajectoryDataset};
use crate::envs::world::{
    clamp_action, dist, make_env, DetourWorld, EnvKind, Environment, EpisodeResult, FourGoalWorld, Route, TraceStep, DETOUR_TARGET,
    FOUR_GOAL_POSITIONS, REACH_RADIUS,
};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Standard deviation of the Gaussian noise added to every scripted action.
pub const DEMO_NOISE: f64 = 0.01;

pub const DETOUR_WAYPOINTS_UPPER: [[f64; 2]; 2] = [[-0.8, 0.45], [0.8, 0.45]];
pub const DETOUR_WAYPOINTS_LOWER: [[f64; 2]; 2] = [[-0.8, -0.45], [0.8, -0.45]];

/// Generated demonstrations and the episode summaries behind them.
#[derive(Debug, Clone)]
pub struct Demos {
    pub dataset: TrajectoryDataset,
    pub episodes: Vec<EpisodeResult>,
}

/// Proportional controller with unit gain, saturating per axis at
/// `MAX_STEP`, plus noise. Between the corner goals this moves on straight
/// lines, and it removes small cross-track errors in a single step.
/// Rounded to f32 so replaying stored actions is exact.
fn steer(pos: [f64; 2], target: [f64; 2], rng: &mut SeededRng) -> Result<[f64; 2]> {
    let raw = [target[0] - pos[0] + DEMO_NOISE * rng.normal(), target[1] - pos[1] + DEMO_NOISE * rng.normal()];
    Ok(clamp_action(raw)?.map(|v| v as f32 as f64))
}

fn run_scripted(
    env: &mut dyn Environment,
    mut target: impl FnMut(&dyn Environment) -> [f64; 2],
    rng: &mut SeededRng,
) -> Result<(Trajectory, EpisodeResult)> {
    let mut trace = Vec::new();
    while !env.is_done() {
        let obs = env.observation();
        let action = steer(env.position(), target(env), rng)?;
        env.step(action)?;
        trace.push(TraceStep { obs, action, codes: None });
    }
    let mut result = env.result();
    if result.collided || result.successes < expected_successes(&result) {
        return Err(Error::Invalid(format!("scripted demonstrator failed: {result:?}")));
    }
    let trajectory = Trajectory {
        observations: trace.iter().flat_map(|s| s.obs.iter().map(|&v| v as f32)).collect(),
        actions: trace.iter().flat_map(|s| s.action.map(|v| v as f32)).collect(),
    };
    result.trace = trace;
    Ok((trajectory, result))
}

fn expected_successes(r: &EpisodeResult) -> usize {
    match (&r.command, r.kind) {
        (Some(c), _) => c.len(),
        (None, EnvKind::FourGoal) => 4,
        (None, EnvKind::Detour) => 1,
    }
}

/// One FourGoalWorld demo visiting `order`. A full permutation gives an
/// unconditional demo; a shorter order gives a conditional one that ends
/// when its goals are reached.
pub fn four_goal_demo(order: &[usize], rng: &mut SeededRng) -> Result<(Trajectory, EpisodeResult)> {
    let mut env = if order.len() == 4 { FourGoalWorld::new() } else { FourGoalWorld::with_command(order.to_vec())? };
    let order = order.to_vec();
    run_scripted(
        &mut env,
        |e| {
            let done = e.observation()[2..].iter().filter(|&&f| f > 0.5).count();
            FOUR_GOAL_POSITIONS[order[done.min(order.len() - 1)]]
        },
        rng,
    )
}

/// One DetourWorld demo along the given route.
pub fn detour_demo(route: Route, rng: &mut SeededRng) -> Result<(Trajectory, EpisodeResult)> {
    let waypoints = match route {
        Route::Upper => DETOUR_WAYPOINTS_UPPER,
        Route::Lower => DETOUR_WAYPOINTS_LOWER,
        Route::None => return Err(Error::Invalid("a demonstration needs a route".into())),
    };
    let path = [waypoints[0], waypoints[1], DETOUR_TARGET];
    let mut next = 0;
    let mut env = DetourWorld::new();
    run_scripted(
        &mut env,
        |e| {
            while next < 2 && dist(e.position(), path[next]) < REACH_RADIUS {
                next += 1;
            }
            path[next]
        },
        rng,
    )
}

/// Re-executes a stored trajectory from the start state. Actions are stored
/// as f32 and the worlds are deterministic, so every stored observation must
/// be reproduced exactly; a mismatch means the data belongs to another world.
pub fn replay_trajectory(kind: EnvKind, traj: &Trajectory) -> Result<EpisodeResult> {
    let (od, ad) = (kind.obs_dim(), kind.act_dim());
    if !traj.actions.len().is_multiple_of(ad) || traj.observations.len() != traj.actions.len() / ad * od {
        return Err(Error::Invalid(format!("trajectory shape does not match {}", kind.name())));
    }
    let mut env = make_env(kind);
    let mut trace = Vec::with_capacity(traj.actions.len() / ad);
    for (obs, act) in traj.observations.chunks(od).zip(traj.actions.chunks(ad)) {
        let now = env.observation();
        if env.is_done() || now.iter().zip(obs).any(|(&a, &b)| a as f32 != b) {
            return Err(Error::Invalid(format!("trajectory does not replay in {}", kind.name())));
        }
        let action = [f64::from(act[0]), f64::from(act[1])];
        env.step(action)?;
        trace.push(TraceStep { obs: now, action, codes: None });
    }
    let mut result = env.result();
    result.trace = trace;
    Ok(result)
}

/// [`replay_trajectory`] over a whole dataset.
pub fn replay_dataset(kind: EnvKind, ds: &TrajectoryDataset) -> Result<Vec<EpisodeResult>> {
    if ds.obs_dim() != kind.obs_dim() || ds.act_dim() != kind.act_dim() {
        return Err(Error::Invalid(format!("dataset dims ({}, {}) do not match {}", ds.obs_dim(), ds.act_dim(), kind.name())));
    }
    ds.trajectories().iter().map(|t| replay_trajectory(kind, t)).collect()
}

/// `count` successful demonstrations. FourGoalWorld orders are uniform over
/// the 24 permutations; DetourWorld routes are uniform over upper/lower.
pub fn scripted_demonstrator(kind: EnvKind, count: usize, rng: &mut SeededRng) -> Result<Demos> {
    if count == 0 {
        return Err(Error::Invalid("count must be at least 1".into()));
    }
    let mut trajectories = Vec::with_capacity(count);
    let mut episodes = Vec::with_capacity(count);
    for _ in 0..count {
        let (t, r) = match kind {
            EnvKind::FourGoal => {
                let mut order = [0, 1, 2, 3];
                rng.shuffle(&mut order);
                four_goal_demo(&order, rng)?
            }
            EnvKind::Detour => detour_demo(if rng.below(2) == 0 { Route::Upper } else { Route::Lower }, rng)?,
        };
        trajectories.push(t);
        episodes.push(r);
    }
    Ok(Demos { dataset: TrajectoryDataset::new(kind.obs_dim(), kind.act_dim(), trajectories)?, episodes })
}

/// Uniformly drawn ordered goal pair.
pub fn random_goal_pair(rng: &mut SeededRng) -> [usize; 2] {
    let first = rng.below(4);
    let mut second = rng.below(3);
    if second >= first {
        second += 1;
    }
    [first, second]
}

/// FourGoalWorld demos that each reach an ordered pair of goals, drawn
/// uniformly over the 12 pairs, and then stop.
pub fn scripted_goal_pair_demos(count: usize, rng: &mut SeededRng) -> Result<Demos> {
    if count == 0 {
        return Err(Error::Invalid("count must be at least 1".into()));
    }
    let mut trajectories = Vec::with_capacity(count);
    let mut episodes = Vec::with_capacity(count);
    for _ in 0..count {
        let pair = random_goal_pair(rng);
        let (t, r) = four_goal_demo(&pair, rng)?;
        trajectories.push(t);
        episodes.push(r);
    }
    Ok(Demos { dataset: TrajectoryDataset::new(6, 2, trajectories)?, episodes })
}

/// Goal frames for a commanded sequence: the final `g` recorded
/// observations of a fresh demonstration achieving it, f32-rounded like the
/// training data. The last frame sits next to the final goal with the
/// earlier goals flagged, which identifies the ordered sequence.
pub fn goal_frames(command: &[usize], g: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let (traj, _) = four_goal_demo(command, rng)?;
    let len = traj.observations.len() / 6;
    if g == 0 || g > len {
        return Err(Error::Invalid(format!("goal window {g} does not fit a demo of length {len}")));
    }
    Ok(traj.observations[(len - g) * 6..].iter().map(|&v| v as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::world::MAX_STEP;

    #[test]
    fn demos_replay_exactly() {
        let mut rng = SeededRng::new(3);
        for kind in [EnvKind::FourGoal, EnvKind::Detour] {
            let demos = scripted_demonstrator(kind, 20, &mut rng).unwrap();
            for (i, tr) in demos.dataset.trajectories().iter().enumerate() {
                let mut env = make_env(kind);
                let od = kind.obs_dim();
                let len = tr.actions.len() / 2;
                for t in 0..len {
                    let obs: Vec<f32> = env.observation().iter().map(|&v| v as f32).collect();
                    assert_eq!(&obs[..], &tr.observations[t * od..(t + 1) * od], "demo {i} step {t}");
                    env.step([tr.actions[2 * t] as f64, tr.actions[2 * t + 1] as f64]).unwrap();
                }
                assert!(env.is_done());
                assert_eq!(env.result().order, demos.episodes[i].order);
            }
        }
    }

    #[test]
    fn every_demo_succeeds() {
        let mut rng = SeededRng::new(4);
        let four = scripted_demonstrator(EnvKind::FourGoal, 100, &mut rng).unwrap();
        assert!(four.episodes.iter().all(|e| e.successes == 4 && e.steps < 200));
        let detour = scripted_demonstrator(EnvKind::Detour, 100, &mut rng).unwrap();
        assert!(detour.episodes.iter().all(|e| e.successes == 1 && !e.collided && e.route != Some(Route::None)));
        let pairs = scripted_goal_pair_demos(50, &mut rng).unwrap();
        assert!(pairs.episodes.iter().all(|e| e.successes == 2 && e.order == *e.command.as_ref().unwrap()));
    }

    #[test]
    fn goal_frames_end_at_second_goal() {
        let mut rng = SeededRng::new(5);
        let f = goal_frames(&[1, 3], 1, &mut rng).unwrap();
        // the last recorded frame is one step short of the second goal
        assert!(dist([f[0], f[1]], FOUR_GOAL_POSITIONS[3]) < REACH_RADIUS + 2.0 * MAX_STEP);
        assert_eq!(&f[2..], &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn replay_recovers_episodes() {
        let mut rng = SeededRng::new(6);
        let four = scripted_demonstrator(EnvKind::FourGoal, 10, &mut rng).unwrap();
        let back = replay_dataset(EnvKind::FourGoal, &four.dataset).unwrap();
        for (a, b) in back.iter().zip(&four.episodes) {
            assert_eq!((&a.order, a.successes, a.steps), (&b.order, b.successes, b.steps));
        }
        let pairs = scripted_goal_pair_demos(10, &mut rng).unwrap();
        let back = replay_dataset(EnvKind::FourGoal, &pairs.dataset).unwrap();
        assert!(back.iter().zip(&pairs.episodes).all(|(a, b)| a.order == b.order));
        let detour = scripted_demonstrator(EnvKind::Detour, 10, &mut rng).unwrap();
        let back = replay_dataset(EnvKind::Detour, &detour.dataset).unwrap();
        assert!(back.iter().zip(&detour.episodes).all(|(a, b)| a.route == b.route));
        assert!(replay_dataset(EnvKind::Detour, &four.dataset).is_err());
    }

    #[test]
    fn zero_count_rejected() {
        assert!(scripted_demonstrator(EnvKind::Detour, 0, &mut SeededRng::new(0)).is_err());
    }
}
