//! Scripted near-optimal operator.
//!
//! The expert plans over a grid discretization of free space: a Dijkstra
//! distance field per target (goal and each health pack) with extra cost in
//! hazards and next to walls. At run time it aims at the farthest cell along
//! the descent path that is in clear line of sight, turns until roughly
//! aligned, then drives forward.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridnav::{angle_diff, Action, EnvConfig, EnvState, Point};
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExpertParams {
    pub cell_size: f64,
    /// Below this health the expert heads for the nearest available pack.
    pub health_seek_threshold: f64,
    /// Aim points closer than this are skipped in favor of the next one.
    pub waypoint_tolerance: f64,
    pub hazard_cost: f64,
    pub wall_clearance: f64,
    pub wall_cost: f64,
    pub lookahead_cells: usize,
    /// Largest heading error (radians) at which the expert still drives
    /// forward instead of turning.
    pub heading_tolerance: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            cell_size: 0.5,
            health_seek_threshold: 40.0,
            waypoint_tolerance: 0.3,
            hazard_cost: 20.0,
            wall_clearance: 0.6,
            wall_cost: 1.0,
            lookahead_cells: 8,
            heading_tolerance: std::f64::consts::PI / 9.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerWarning {
    /// Neither the goal nor any usable pack is reachable from here.
    GoalUnreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpertDecision {
    pub action: Action,
    pub warning: Option<PlannerWarning>,
}

/// Discretized free-space graph.
#[derive(Debug, Clone)]
pub struct PlannerGraph {
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    origin: Point,
    free: Vec<bool>,
    node_cost: Vec<f64>,
}

const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

impl PlannerGraph {
    pub fn build(config: &EnvConfig, params: &ExpertParams) -> Result<Self> {
        if !(params.cell_size > 0.0) {
            return Err(Error::config("planner cell size must be positive"));
        }
        let nx = (config.arena.width() / params.cell_size).ceil() as usize;
        let ny = (config.arena.height() / params.cell_size).ceil() as usize;
        if nx == 0 || ny == 0 {
            return Err(Error::config("planner grid is empty"));
        }
        let origin = Point::new(config.arena.x_min, config.arena.y_min);
        let mut graph = Self {
            cell_size: params.cell_size,
            nx,
            ny,
            origin,
            free: vec![false; nx * ny],
            node_cost: vec![1.0; nx * ny],
        };
        for j in 0..ny {
            for i in 0..nx {
                let c = graph.center(i, j);
                let idx = j * nx + i;
                graph.free[idx] = config.is_free(c);
                let mut cost = 1.0;
                if config.in_hazard(c) {
                    cost += params.hazard_cost;
                }
                if config
                    .walls
                    .iter()
                    .any(|w| point_segment_distance(c, w.from, w.to) < params.wall_clearance)
                {
                    cost += params.wall_cost;
                }
                graph.node_cost[idx] = cost;
            }
        }
        Ok(graph)
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.origin.x + (i as f64 + 0.5) * self.cell_size,
            self.origin.y + (j as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn center_of(&self, idx: usize) -> Point {
        self.center(idx % self.nx, idx / self.nx)
    }

    pub fn cell_of(&self, p: Point) -> usize {
        let i = ((p.x - self.origin.x) / self.cell_size).floor();
        let j = ((p.y - self.origin.y) / self.cell_size).floor();
        let i = (i.max(0.0) as usize).min(self.nx - 1);
        let j = (j.max(0.0) as usize).min(self.ny - 1);
        j * self.nx + i
    }

    fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let i = (idx % self.nx) as i64;
        let j = (idx / self.nx) as i64;
        NEIGHBORS.iter().filter_map(move |&(di, dj)| {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= self.nx as i64 || nj >= self.ny as i64 {
                None
            } else {
                Some(nj as usize * self.nx + ni as usize)
            }
        })
    }

    /// Cost-weighted shortest path distances from every cell to `target`.
    /// Unreachable cells hold `f64::INFINITY`.
    pub fn distance_field(&self, config: &EnvConfig, target: Point) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.free.len()];
        let start = self.cell_of(target);
        if !self.free[start] {
            return dist;
        }
        dist[start] = self.center_of(start).distance(target);
        let mut heap = BinaryHeap::new();
        heap.push(Entry {
            cost: dist[start],
            idx: start,
        });
        while let Some(Entry { cost, idx }) = heap.pop() {
            if cost > dist[idx] {
                continue;
            }
            let from = self.center_of(idx);
            for nb in self.neighbors(idx) {
                if !self.free[nb] {
                    continue;
                }
                let to = self.center_of(nb);
                if !config.motion_clear(from, to) {
                    continue;
                }
                let w = 0.5 * (self.node_cost[idx] + self.node_cost[nb]);
                let next = cost + from.distance(to) * w;
                if next < dist[nb] {
                    dist[nb] = next;
                    heap.push(Entry { cost: next, idx: nb });
                }
            }
        }
        dist
    }
}

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The synthetic operator policy.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    pub params: ExpertParams,
    pub graph: PlannerGraph,
    goal_field: Vec<f64>,
    pack_fields: Vec<Vec<f64>>,
    goal: Point,
    packs: Vec<Point>,
}

impl ExpertPolicy {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        Self::with_params(config, ExpertParams::default())
    }

    pub fn with_params(config: &EnvConfig, params: ExpertParams) -> Result<Self> {
        config.validate()?;
        if !(params.health_seek_threshold > 0.0 && params.health_seek_threshold < 100.0) {
            return Err(Error::config("healthSeekThreshold must lie in (0, 100)"));
        }
        let graph = PlannerGraph::build(config, &params)?;
        let goal = config.goal.position;
        let goal_field = graph.distance_field(config, goal);
        let packs: Vec<Point> = config.health_packs.iter().map(|p| p.position).collect();
        let pack_fields = packs
            .iter()
            .map(|&p| graph.distance_field(config, p))
            .collect();
        Ok(Self {
            params,
            graph,
            goal_field,
            pack_fields,
            goal,
            packs,
        })
    }

    /// Whether the goal is reachable from the cell containing `p`.
    pub fn goal_reachable_from(&self, p: Point) -> bool {
        self.goal_field[self.graph.cell_of(p)].is_finite()
    }

    pub fn decide(&self, state: &EnvState, config: &EnvConfig) -> ExpertDecision {
        let robot = state.robot;
        let p = robot.position();
        let here = self.graph.cell_of(p);

        let mut target: Option<(Point, &[f64])> = None;
        if robot.health < self.params.health_seek_threshold {
            target = self
                .packs
                .iter()
                .zip(&self.pack_fields)
                .zip(&state.packs_available)
                .filter(|(_, &avail)| avail)
                .map(|((&pos, field), _)| (pos, field.as_slice()))
                .filter(|(_, field)| field[here].is_finite())
                .min_by(|a, b| a.1[here].total_cmp(&b.1[here]));
        }
        let (target, field) = match target {
            Some(t) => t,
            None if self.goal_field[here].is_finite() => (self.goal, self.goal_field.as_slice()),
            None => {
                return ExpertDecision {
                    action: Action::Forward,
                    warning: Some(PlannerWarning::GoalUnreachable),
                }
            }
        };

        let aim = self.aim_point(p, target, field, config);
        let desired = (aim.y - p.y).atan2(aim.x - p.x);
        let delta = angle_diff(desired, robot.heading);
        let turn = if delta >= 0.0 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        };
        let action = if delta.abs() > self.params.heading_tolerance.max(config.turn_step / 2.0) {
            turn
        } else {
            let ahead = Point::new(
                p.x + config.move_step * robot.heading.cos(),
                p.y + config.move_step * robot.heading.sin(),
            );
            if config.motion_clear(p, ahead) {
                Action::Forward
            } else {
                turn
            }
        };
        ExpertDecision {
            action,
            warning: None,
        }
    }

    fn aim_point(&self, p: Point, target: Point, field: &[f64], config: &EnvConfig) -> Point {
        let lookahead = self.params.lookahead_cells as f64 * self.graph.cell_size;
        if p.distance(target) <= lookahead && self.sight_clear(p, target, config) {
            return target;
        }
        // walk the descent chain and keep the farthest visible cell
        let mut cell = self.graph.cell_of(p);
        let mut aim = self.graph.center_of(cell);
        let mut have_far_aim = p.distance(aim) > self.params.waypoint_tolerance;
        for _ in 0..self.params.lookahead_cells {
            let next = self
                .graph
                .neighbors(cell)
                .filter(|&nb| field[nb] < field[cell])
                .filter(|&nb| config.motion_clear(self.graph.center_of(cell), self.graph.center_of(nb)))
                .min_by(|&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
            let Some(next) = next else { break };
            cell = next;
            let c = self.graph.center_of(cell);
            if self.sight_clear(p, c, config) {
                aim = c;
                have_far_aim = true;
            } else if have_far_aim {
                break;
            } else {
                // nothing visible yet beyond our own cell: head for its center
                aim = c;
                break;
            }
        }
        aim
    }

    /// Straight line of sight that keeps clear of walls and, unless we are
    /// already in one, of hazards.
    fn sight_clear(&self, from: Point, to: Point, config: &EnvConfig) -> bool {
        if !config.motion_clear(from, to) {
            return false;
        }
        let margin = 0.2;
        if config
            .walls
            .iter()
            .any(|w| segment_segment_distance(from, to, w.from, w.to) < margin)
        {
            return false;
        }
        if !config.in_hazard(from) {
            let len = from.distance(to);
            let n = (len / 0.1).ceil().max(1.0) as usize;
            for k in 1..=n {
                let t = k as f64 / n as f64;
                let q = Point::new(from.x + t * (to.x - from.x), from.y + t * (to.y - from.y));
                if config.in_hazard(q) {
                    return false;
                }
            }
        }
        true
    }
}

impl Policy for ExpertPolicy {
    fn act(&self, state: &EnvState, config: &EnvConfig) -> Result<Action> {
        Ok(self.decide(state, config).action)
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}

fn segment_segment_distance(p1: Point, p2: Point, q1: Point, q2: Point) -> f64 {
    point_segment_distance(p1, q1, q2)
        .min(point_segment_distance(p2, q1, q2))
        .min(point_segment_distance(q1, p1, p2))
        .min(point_segment_distance(q2, p1, p2))
}
