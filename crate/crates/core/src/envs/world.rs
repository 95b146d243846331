use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest per-axis displacement in one step.
pub const MAX_STEP: f64 = 0.1;
pub const ARENA: f64 = 1.0;
pub const REACH_RADIUS: f64 = 0.1;

pub const FOUR_GOAL_POSITIONS: [[f64; 2]; 4] = [[0.8, 0.8], [-0.8, 0.8], [-0.8, -0.8], [0.8, -0.8]];
pub const FOUR_GOAL_MAX_STEPS: usize = 200;

pub const DETOUR_START: [f64; 2] = [-0.8, 0.0];
pub const DETOUR_TARGET: [f64; 2] = [0.8, 0.0];
pub const OBSTACLE_RADIUS: f64 = 0.3;
pub const DETOUR_MAX_STEPS: usize = 150;
/// Paths whose largest |y| stays below this carry no route label.
pub const ROUTE_MIN_EXCURSION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    FourGoal,
    Detour,
}

impl EnvKind {
    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::FourGoal => 6,
            EnvKind::Detour => 2,
        }
    }

    pub fn act_dim(self) -> usize {
        2
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::FourGoal => "four_goal",
            EnvKind::Detour => "detour",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "four_goal" => Ok(EnvKind::FourGoal),
            "detour" => Ok(EnvKind::Detour),
            _ => Err(Error::Config(format!("unknown environment {s:?}; expected four_goal or detour"))),
        }
    }

    /// Tasks an episode can complete: goals for FourGoalWorld, 1 for DetourWorld.
    pub fn max_tasks(self) -> usize {
        match self {
            EnvKind::FourGoal => 4,
            EnvKind::Detour => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Upper,
    Lower,
    None,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::Upper => "upper",
            Route::Lower => "lower",
            Route::None => "none",
        }
    }
}

/// What happened during one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepEvent {
    pub goal_reached: Option<usize>,
    pub collided: bool,
    pub done: bool,
}

/// One executed step: the observation the action was chosen from, the
/// action as executed, and the codes behind it when a policy chose it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub obs: Vec<f64>,
    pub action: [f64; 2],
    pub codes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub kind: EnvKind,
    /// Goals reached (FourGoalWorld) or 0/1 target reached (DetourWorld).
    /// In conditional episodes, commanded goals reached in order.
    pub successes: usize,
    pub order: Vec<usize>,
    pub command: Option<Vec<usize>>,
    pub route: Option<Route>,
    pub collided: bool,
    pub steps: usize,
    /// Not serialized; traces are exported as CSV.
    #[serde(skip)]
    pub trace: Vec<TraceStep>,
}

/// Common surface of the point-mass worlds.
pub trait Environment: Send {
    fn kind(&self) -> EnvKind;
    fn observation(&self) -> Vec<f64>;
    fn position(&self) -> [f64; 2];
    fn step(&mut self, action: [f64; 2]) -> Result<StepEvent>;
    fn is_done(&self) -> bool;
    fn steps(&self) -> usize;
    /// Summary of the episode so far; the trace is left empty.
    fn result(&self) -> EpisodeResult;
}

/// Clamps each axis to `[-MAX_STEP, MAX_STEP]`.
pub fn clamp_action(action: [f64; 2]) -> Result<[f64; 2]> {
    if action.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("action {action:?}")));
    }
    Ok(action.map(|v| v.clamp(-MAX_STEP, MAX_STEP)))
}

fn move_point(pos: [f64; 2], action: [f64; 2]) -> Result<[f64; 2]> {
    let a = clamp_action(action)?;
    Ok([(pos[0] + a[0]).clamp(-ARENA, ARENA), (pos[1] + a[1]).clamp(-ARENA, ARENA)])
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Number of commanded goals reached in the commanded order, counting a
/// command entry only after all earlier entries were reached.
pub fn ordered_command_progress(command: &[usize], visited: &[usize]) -> usize {
    let mut next = 0;
    for &g in visited {
        if next < command.len() && command[next] == g {
            next += 1;
        }
    }
    next
}

/// Four corner goals; the agent starts at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct FourGoalWorld {
    pos: [f64; 2],
    visited: Vec<usize>,
    command: Option<Vec<usize>>,
    steps: usize,
    done: bool,
}

impl Default for FourGoalWorld {
    fn default() -> Self {
        Self::new()
    }
}

impl FourGoalWorld {
    pub fn new() -> Self {
        FourGoalWorld { pos: [0.0, 0.0], visited: Vec::new(), command: None, steps: 0, done: false }
    }

    /// Conditional episode: ends once every commanded goal was visited.
    pub fn with_command(command: Vec<usize>) -> Result<Self> {
        let mut seen = [false; 4];
        for &g in &command {
            if g >= 4 || std::mem::replace(&mut seen[g], true) {
                return Err(Error::Invalid(format!("bad goal command {command:?}")));
            }
        }
        if command.is_empty() {
            return Err(Error::Invalid("empty goal command".into()));
        }
        Ok(FourGoalWorld { command: Some(command), ..Self::new() })
    }

    /// Places the agent; used to set up hand-checked situations.
    pub fn with_position(mut self, pos: [f64; 2]) -> Self {
        self.pos = pos;
        self
    }

    pub fn visited(&self) -> &[usize] {
        &self.visited
    }

    pub fn command(&self) -> Option<&[usize]> {
        self.command.as_deref()
    }

    fn finished(&self) -> bool {
        match &self.command {
            Some(c) => c.iter().all(|g| self.visited.contains(g)),
            None => self.visited.len() == 4,
        }
    }
}

impl Environment for FourGoalWorld {
    fn kind(&self) -> EnvKind {
        EnvKind::FourGoal
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![self.pos[0], self.pos[1], 0.0, 0.0, 0.0, 0.0];
        for &g in &self.visited {
            obs[2 + g] = 1.0;
        }
        obs
    }

    fn position(&self) -> [f64; 2] {
        self.pos
    }

    fn step(&mut self, action: [f64; 2]) -> Result<StepEvent> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        self.pos = move_point(self.pos, action)?;
        self.steps += 1;
        let mut event = StepEvent::default();
        // corners are 1.6 apart, so at most one can be in reach
        if let Some(g) = (0..4).find(|&g| !self.visited.contains(&g) && dist(self.pos, FOUR_GOAL_POSITIONS[g]) < REACH_RADIUS) {
            self.visited.push(g);
            event.goal_reached = Some(g);
        }
        self.done = self.finished() || self.steps >= FOUR_GOAL_MAX_STEPS;
        event.done = self.done;
        Ok(event)
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn result(&self) -> EpisodeResult {
        let successes = match &self.command {
            Some(c) => ordered_command_progress(c, &self.visited),
            None => self.visited.len(),
        };
        EpisodeResult {
            kind: EnvKind::FourGoal,
            successes,
            order: self.visited.clone(),
            command: self.command.clone(),
            route: None,
            collided: false,
            steps: self.steps,
            trace: Vec::new(),
        }
    }
}

/// Reach the target on the far side of a round obstacle, passing above or
/// below it.
#[derive(Debug, Clone, PartialEq)]
pub struct DetourWorld {
    pos: [f64; 2],
    max_abs_y: f64,
    y_at_max: f64,
    steps: usize,
    reached: bool,
    collided: bool,
    done: bool,
}

impl Default for DetourWorld {
    fn default() -> Self {
        Self::new()
    }
}

impl DetourWorld {
    pub fn new() -> Self {
        DetourWorld { pos: DETOUR_START, max_abs_y: 0.0, y_at_max: 0.0, steps: 0, reached: false, collided: false, done: false }
    }

    pub fn route(&self) -> Route {
        if self.max_abs_y < ROUTE_MIN_EXCURSION {
            Route::None
        } else if self.y_at_max > 0.0 {
            Route::Upper
        } else {
            Route::Lower
        }
    }
}

impl Environment for DetourWorld {
    fn kind(&self) -> EnvKind {
        EnvKind::Detour
    }

    fn observation(&self) -> Vec<f64> {
        self.pos.to_vec()
    }

    fn position(&self) -> [f64; 2] {
        self.pos
    }

    fn step(&mut self, action: [f64; 2]) -> Result<StepEvent> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        self.pos = move_point(self.pos, action)?;
        self.steps += 1;
        if self.pos[1].abs() > self.max_abs_y {
            self.max_abs_y = self.pos[1].abs();
            self.y_at_max = self.pos[1];
        }
        let mut event = StepEvent::default();
        if dist(self.pos, [0.0, 0.0]) < OBSTACLE_RADIUS {
            self.collided = true;
            event.collided = true;
        } else if dist(self.pos, DETOUR_TARGET) < REACH_RADIUS {
            self.reached = true;
            event.goal_reached = Some(0);
        }
        self.done = self.collided || self.reached || self.steps >= DETOUR_MAX_STEPS;
        event.done = self.done;
        Ok(event)
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn result(&self) -> EpisodeResult {
        EpisodeResult {
            kind: EnvKind::Detour,
            successes: usize::from(self.reached),
            order: if self.reached { vec![0] } else { Vec::new() },
            command: None,
            route: Some(self.route()),
            collided: self.collided,
            steps: self.steps,
            trace: Vec::new(),
        }
    }
}

/// Fresh environment of the given kind.
pub fn make_env(kind: EnvKind) -> Box<dyn Environment> {
    match kind {
        EnvKind::FourGoal => Box::new(FourGoalWorld::new()),
        EnvKind::Detour => Box::new(DetourWorld::new()),
    }
}
