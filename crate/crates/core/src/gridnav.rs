//! Deterministic 2D three-room navigation task.
//!
//! A robot drives through an arena split into rooms by walls with door gaps,
//! loses health inside hazard regions, can pick up health packs, and is
//! rewarded for progress toward a goal disc. Positions are continuous; the
//! four discrete actions translate along or rotate the heading.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::EpisodeRng;

pub const MAX_HEALTH: f64 = 100.0;

/// One robot's observation: planar pose and health.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Radians in `[0, 2π)`.
    pub heading: f64,
    /// In `[0, 100]`.
    pub health: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, heading: f64, health: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
            health,
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.heading, self.health]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Forward,
    Backward,
    #[serde(rename = "left")]
    TurnLeft,
    #[serde(rename = "right")]
    TurnRight,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Forward,
        Action::Backward,
        Action::TurnLeft,
        Action::TurnRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::Backward => "backward",
            Action::TurnLeft => "left",
            Action::TurnRight => "right",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Action::Forward),
            "backward" => Ok(Action::Backward),
            "left" => Ok(Action::TurnLeft),
            "right" => Ok(Action::TurnRight),
            other => Err(Error::usage(format!("unknown action {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    fn is_proper(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }
}

/// A zero-thickness wall. Door gaps are the spaces between segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub from: Point,
    pub to: Point,
}

impl Wall {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            from: Point::new(x1, y1),
            to: Point::new(x2, y2),
        }
    }

    fn is_axis_aligned(&self) -> bool {
        self.from.x == self.to.x || self.from.y == self.to.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HealthPack {
    pub position: Point,
    pub heal_amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub position: Point,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RewardWeights {
    pub progress_weight: f64,
    pub health_weight: f64,
    pub goal_bonus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnvConfig {
    pub arena: Rect,
    pub walls: Vec<Wall>,
    pub hazard_regions: Vec<Rect>,
    pub health_packs: Vec<HealthPack>,
    pub pack_pickup_radius: f64,
    pub goal: Goal,
    /// Region in which episodes start (room 1).
    pub start_region: Rect,
    pub move_step: f64,
    pub turn_step: f64,
    pub hazard_drain_per_step: f64,
    pub horizon: u32,
    pub reward_weights: RewardWeights,
    pub discount: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            arena: Rect::new(0.0, 0.0, 30.0, 10.0),
            walls: vec![
                Wall::new(10.0, 0.0, 10.0, 4.0),
                Wall::new(10.0, 6.0, 10.0, 10.0),
                Wall::new(20.0, 0.0, 20.0, 4.0),
                Wall::new(20.0, 6.0, 20.0, 10.0),
            ],
            hazard_regions: vec![Rect::new(12.0, 0.0, 18.0, 4.0)],
            health_packs: vec![
                HealthPack {
                    position: Point::new(5.0, 8.0),
                    heal_amount: 25.0,
                },
                HealthPack {
                    position: Point::new(15.0, 8.0),
                    heal_amount: 25.0,
                },
                HealthPack {
                    position: Point::new(25.0, 2.0),
                    heal_amount: 25.0,
                },
            ],
            pack_pickup_radius: 0.75,
            goal: Goal {
                position: Point::new(28.0, 5.0),
                radius: 1.0,
            },
            start_region: Rect::new(0.0, 0.0, 10.0, 10.0),
            move_step: 0.5,
            turn_step: PI / 6.0,
            hazard_drain_per_step: 2.0,
            horizon: 300,
            reward_weights: RewardWeights {
                progress_weight: 1.0,
                health_weight: 0.1,
                goal_bonus: 100.0,
            },
            discount: 0.99,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.arena.is_proper() {
            return Err(Error::config("arena must be a non-empty finite rectangle"));
        }
        if self.horizon < 1 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(self.move_step > 0.0 && self.move_step.is_finite()) {
            return Err(Error::config("moveStep must be positive"));
        }
        if !(self.turn_step > 0.0 && self.turn_step < PI) {
            return Err(Error::config("turnStep must lie in (0, π)"));
        }
        if !(self.hazard_drain_per_step >= 0.0) {
            return Err(Error::config("hazardDrainPerStep must be non-negative"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config("discount must lie in (0, 1)"));
        }
        if !(self.goal.radius > 0.0) {
            return Err(Error::config("goal radius must be positive"));
        }
        if !(self.pack_pickup_radius > 0.0) {
            return Err(Error::config("packPickupRadius must be positive"));
        }
        if let Some(w) = self.walls.iter().find(|w| !w.is_axis_aligned()) {
            return Err(Error::config(format!("wall {w:?} is not axis-aligned")));
        }
        if !self.is_free(self.goal.position) {
            return Err(Error::config("goal must lie inside the arena and off walls"));
        }
        for pack in &self.health_packs {
            if !self.is_free(pack.position) {
                return Err(Error::config(format!(
                    "health pack at ({}, {}) is outside the arena or on a wall",
                    pack.position.x, pack.position.y
                )));
            }
            if !(pack.heal_amount >= 0.0) {
                return Err(Error::config("healAmount must be non-negative"));
            }
        }
        if !self.start_region.is_proper() {
            return Err(Error::config("startRegion must be a non-empty finite rectangle"));
        }
        Ok(())
    }

    /// A position a robot may occupy: inside the arena and not on a wall.
    pub fn is_free(&self, p: Point) -> bool {
        self.arena.contains(p) && !self.walls.iter().any(|w| segments_touch(w.from, w.to, p, p))
    }

    /// True when the straight motion `from -> to` ends inside the arena and
    /// touches no wall.
    pub fn motion_clear(&self, from: Point, to: Point) -> bool {
        self.arena.contains(to) && !self.walls.iter().any(|w| segments_touch(w.from, w.to, from, to))
    }

    pub fn in_hazard(&self, p: Point) -> bool {
        self.hazard_regions.iter().any(|r| r.contains(p))
    }

    pub fn goal_distance(&self, p: Point) -> f64 {
        p.distance(self.goal.position)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: EnvConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

/// Full per-robot episode state: the observation plus the bookkeeping the
/// dynamics need (health-pack availability and elapsed steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub robot: RobotState,
    pub packs_available: Vec<bool>,
    pub t: u32,
}

impl EnvState {
    /// A state at `robot` with all packs available and no elapsed steps.
    pub fn fresh(robot: RobotState, config: &EnvConfig) -> Self {
        Self {
            robot,
            packs_available: vec![true; config.health_packs.len()],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalReason {
    Goal,
    Dead,
    Horizon,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next: EnvState,
    pub reward: f64,
    pub terminal: bool,
    pub terminal_reason: TerminalReason,
}

/// Why `state` is terminal, or `TerminalReason::None`.
pub fn terminal_reason(state: &EnvState, config: &EnvConfig) -> TerminalReason {
    if config.goal_distance(state.robot.position()) <= config.goal.radius {
        TerminalReason::Goal
    } else if state.robot.health <= 0.0 {
        TerminalReason::Dead
    } else if state.t >= config.horizon {
        TerminalReason::Horizon
    } else {
        TerminalReason::None
    }
}

pub fn is_terminal(state: &EnvState, config: &EnvConfig) -> bool {
    terminal_reason(state, config) != TerminalReason::None
}

/// Start a new episode: uniform position in the start region's free space,
/// uniform heading, full health, all packs available.
pub fn reset(config: &EnvConfig, rng: &mut EpisodeRng) -> Result<EnvState> {
    config.validate()?;
    let region = config.start_region;
    const MAX_ATTEMPTS: usize = 10_000;
    for _ in 0..MAX_ATTEMPTS {
        let x = rng.gen_range(region.x_min..region.x_max);
        let y = rng.gen_range(region.y_min..region.y_max);
        let p = Point::new(x, y);
        if !config.is_free(p) || config.goal_distance(p) <= config.goal.radius {
            continue;
        }
        let heading = rng.gen_range(0.0..TAU);
        let robot = RobotState::new(x, y, heading, MAX_HEALTH);
        return Ok(EnvState::fresh(robot, config));
    }
    Err(Error::config("start region has no free space"))
}

/// Advance one robot by one action.
pub fn step(state: &EnvState, action: Action, config: &EnvConfig) -> Result<StepResult> {
    let heading = state.robot.heading;
    let moved = match action {
        Action::TurnLeft => Motion::Turn(heading + config.turn_step),
        Action::TurnRight => Motion::Turn(heading - config.turn_step),
        Action::Forward => Motion::Translate(config.move_step),
        Action::Backward => Motion::Translate(-config.move_step),
    };
    advance(state, Some(moved), config)
}

/// Advance one robot without moving it. Hazards still drain health and the
/// step counter still advances.
pub fn step_hold(state: &EnvState, config: &EnvConfig) -> Result<StepResult> {
    advance(state, None, config)
}

enum Motion {
    Turn(f64),
    Translate(f64),
}

fn advance(state: &EnvState, motion: Option<Motion>, config: &EnvConfig) -> Result<StepResult> {
    if is_terminal(state, config) {
        return Err(Error::usage("cannot step a terminal state"));
    }
    let prev = state.robot;
    let mut robot = prev;
    match motion {
        Some(Motion::Turn(h)) => robot.heading = wrap_angle(h),
        Some(Motion::Translate(dist)) => {
            let from = prev.position();
            let to = Point::new(
                from.x + dist * prev.heading.cos(),
                from.y + dist * prev.heading.sin(),
            );
            if config.motion_clear(from, to) {
                robot.x = to.x;
                robot.y = to.y;
            }
        }
        None => {}
    }

    let pos = robot.position();
    let mut health = prev.health;
    if config.in_hazard(pos) {
        health -= config.hazard_drain_per_step;
    }
    let mut packs = state.packs_available.clone();
    for (avail, pack) in packs.iter_mut().zip(&config.health_packs) {
        if *avail && pos.distance(pack.position) <= config.pack_pickup_radius {
            *avail = false;
            health += pack.heal_amount;
        }
    }
    robot.health = health.clamp(0.0, MAX_HEALTH);

    let next = EnvState {
        robot,
        packs_available: packs,
        t: state.t + 1,
    };
    let reward = reward(&prev, &robot, config);
    let reason = terminal_reason(&next, config);
    Ok(StepResult {
        next,
        reward,
        terminal: reason != TerminalReason::None,
        terminal_reason: reason,
    })
}

/// The per-step reward between two consecutive robot states.
pub fn reward(prev: &RobotState, next: &RobotState, config: &EnvConfig) -> f64 {
    let w = &config.reward_weights;
    let d_prev = config.goal_distance(prev.position());
    let d_next = config.goal_distance(next.position());
    let reached = if d_next <= config.goal.radius { 1.0 } else { 0.0 };
    w.progress_weight * (d_prev - d_next)
        + w.health_weight * (next.health - prev.health)
        + w.goal_bonus * reached
}

/// Normalize an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed smallest rotation taking `from` to `to`, in `(-π, π]`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    let d = (to - from).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segment intersection, including touching endpoints.
fn segments_touch(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}
