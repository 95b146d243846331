//! Point-mass worlds with multimodal scripted demonstrators and the task
//! metrics computed from their episodes.

pub mod demo;
pub mod metrics;
pub mod world;

pub use demo::{
    detour_demo, four_goal_demo, goal_frames, random_goal_pair, replay_dataset, replay_trajectory, scripted_demonstrator, scripted_goal_pair_demos,
    Demos, DEMO_NOISE,
};
pub use metrics::{completion_order_entropy, success_metrics, RouteCoverage, SuccessMetrics};
pub use world::{
    make_env, ordered_command_progress, DetourWorld, EnvKind, Environment, EpisodeResult, FourGoalWorld, Route, StepEvent, TraceStep, DETOUR_START,
    DETOUR_TARGET, FOUR_GOAL_POSITIONS, MAX_STEP, OBSTACLE_RADIUS, REACH_RADIUS,
};
