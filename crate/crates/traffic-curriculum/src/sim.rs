//! Deterministic fixed-step 2D simulation: vehicle kinematics, collision and
//! off-road detection, NPC/student lifecycle, and episode termination.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lane_graph::{DrivableRegion, LaneGraph, Route};
use crate::math::{wrap_angle, Vec2};

pub const ACCEL_CHOICES: [f64; 3] = [-3.0, 0.0, 2.0];
pub const STEER_CHOICES: [f64; 3] = [-0.3, 0.0, 0.3];
pub const ACTION_COUNT: usize = 9;

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_MAX_STEPS: usize = 300;
pub const WHEELBASE: f64 = 2.7;
pub const V_MAX: f64 = 8.0;
/// Sedan footprint 4.8 m x 2.2 m.
pub const HALF_EXTENTS: (f64, f64) = (2.4, 1.1);
pub const GOAL_RADIUS: f64 = 2.0;
pub const SPAWN_SPACING: f64 = 8.0;

/// Discrete 3x3 control grid shared by every agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub accel_idx: usize,
    pub steer_idx: usize,
}

impl Action {
    pub const IDLE: Action = Action {
        accel_idx: 1,
        steer_idx: 1,
    };

    pub fn new(accel_idx: usize, steer_idx: usize) -> Self {
        debug_assert!(accel_idx < 3 && steer_idx < 3);
        Action {
            accel_idx,
            steer_idx,
        }
    }

    pub fn from_index(idx: usize) -> Self {
        debug_assert!(idx < ACTION_COUNT);
        Action {
            accel_idx: idx / 3,
            steer_idx: idx % 3,
        }
    }

    pub fn index(self) -> usize {
        self.accel_idx * 3 + self.steer_idx
    }

    pub fn accel(self) -> f64 {
        ACCEL_CHOICES[self.accel_idx]
    }

    pub fn steer(self) -> f64 {
        STEER_CHOICES[self.steer_idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCause {
    None,
    Goal,
    Collision,
    Offroad,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    pub half_extents: (f64, f64),
    pub alive: bool,
    pub terminal_cause: TerminalCause,
}

impl AgentState {
    pub fn at_pose(position: Vec2, heading: f64) -> Self {
        AgentState {
            position,
            heading: wrap_angle(heading),
            velocity: Vec2::ZERO,
            acceleration: Vec2::ZERO,
            half_extents: HALF_EXTENTS,
            alive: true,
            terminal_cause: TerminalCause::None,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let u = Vec2::from_angle(self.heading);
        let p = u.perp();
        let (hl, hw) = self.half_extents;
        [
            self.position + u.scale(hl) + p.scale(hw),
            self.position + u.scale(hl) - p.scale(hw),
            self.position - u.scale(hl) - p.scale(hw),
            self.position - u.scale(hl) + p.scale(hw),
        ]
    }
}

/// Kinematic bicycle update.
pub fn step_vehicle(state: &AgentState, action: Action, dt: f64) -> AgentState {
    debug_assert!(dt > 0.0);
    let speed = state.speed();
    let new_speed = (speed + action.accel() * dt).clamp(0.0, V_MAX);
    let heading = wrap_angle(state.heading + (new_speed / WHEELBASE) * action.steer().tan() * dt);
    let dir = Vec2::from_angle(heading);
    let position = state.position + dir.scale(new_speed * dt);
    let velocity = dir.scale(new_speed);
    AgentState {
        position,
        heading,
        velocity,
        acceleration: (velocity - state.velocity).scale(1.0 / dt),
        ..state.clone()
    }
}

/// Oriented-rectangle overlap via the separating-axis test over the 4 face normals.
pub fn check_collision(a: &AgentState, b: &AgentState) -> bool {
    let axes = [
        Vec2::from_angle(a.heading),
        Vec2::from_angle(a.heading).perp(),
        Vec2::from_angle(b.heading),
        Vec2::from_angle(b.heading).perp(),
    ];
    let ca = a.corners();
    let cb = b.corners();
    for axis in axes {
        let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in ca {
            let d = c.dot(axis);
            amin = amin.min(d);
            amax = amax.max(d);
        }
        let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in cb {
            let d = c.dot(axis);
            bmin = bmin.min(d);
            bmax = bmax.max(d);
        }
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}

/// True iff any rectangle corner lies outside the drivable region.
pub fn check_offroad(state: &AgentState, region: &DrivableRegion) -> bool {
    state.corners().iter().any(|&c| !region.contains(c))
}

/// Rolling window of the last `cap` states, oldest first.
#[derive(Debug, Clone)]
pub struct AgentHistory {
    cap: usize,
    buf: VecDeque<AgentState>,
}

impl AgentHistory {
    pub fn new(cap: usize, initial: AgentState) -> Self {
        let mut buf = VecDeque::with_capacity(cap);
        buf.push_back(initial);
        AgentHistory { cap, buf }
    }

    pub fn push(&mut self, state: AgentState) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(state);
    }

    /// Full window, padded by repeating the oldest entry.
    pub fn padded(&self) -> Vec<AgentState> {
        let mut out = Vec::with_capacity(self.cap);
        let oldest = self.buf.front().expect("history never empty");
        for _ in self.buf.len()..self.cap {
            out.push(oldest.clone());
        }
        out.extend(self.buf.iter().cloned());
        out
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn latest(&self) -> &AgentState {
        self.buf.back().expect("history never empty")
    }
}

pub const HISTORY_LEN: usize = 10;

#[derive(Debug, Clone)]
pub struct Agent {
    pub state: AgentState,
    pub history: AgentHistory,
    pub route: Route,
    /// Arc length covered along the route; monotone non-decreasing.
    pub progress: f64,
    pub route_length: f64,
}

impl Agent {
    pub fn new(state: AgentState, route: Route, graph: &LaneGraph) -> Self {
        let poly = route_polyline(&route, graph);
        let route_length: f64 = poly.windows(2).map(|w| w[0].distance(w[1])).sum();
        let mut agent = Agent {
            history: AgentHistory::new(HISTORY_LEN, state.clone()),
            state,
            route,
            progress: 0.0,
            route_length: route_length.max(1e-9),
        };
        agent.progress = agent.projected_progress(graph);
        agent
    }

    fn projected_progress(&self, graph: &LaneGraph) -> f64 {
        let poly = route_polyline(&self.route, graph);
        let p = self.state.position;
        let mut best = (f64::INFINITY, 0.0);
        let mut cum = 0.0;
        for w in poly.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ab = b - a;
            let len = ab.norm();
            let t = if len > 0.0 {
                ((p - a).dot(ab) / (len * len)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = p.distance(a + ab.scale(t));
            if d < best.0 {
                best = (d, cum + t * len);
            }
            cum += len;
        }
        best.1
    }

    pub fn route_progress_fraction(&self) -> f64 {
        if self.state.terminal_cause == TerminalCause::Goal {
            1.0
        } else {
            (self.progress / self.route_length).clamp(0.0, 1.0)
        }
    }
}

pub fn route_polyline(route: &Route, graph: &LaneGraph) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = Vec::new();
    for &id in &route.node_ids {
        let node = &graph.nodes()[id];
        if node.curvature.abs() > 1e-9 {
            // Expand curved connectors into arc samples: their chord cuts
            // the corner by several meters on junction turns.
            let r = 1.0 / node.curvature; // signed radius, left positive
            let center = node.position + Vec2::from_angle(node.heading).perp().scale(r);
            let sweep = node.length * node.curvature;
            let base = node.position - center;
            let steps = (node.length / 2.0).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let t = sweep * (k as f64 / steps as f64 - 0.5);
                pts.push(center + base.rotate(t));
            }
        } else {
            pts.push(node.position);
        }
    }
    pts.push(route.goal_position);
    pts
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot step a terminal episode")]
    EpisodeOver,
    #[error("expected {expected} NPC actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("not enough spawn slots on this map")]
    SpawnFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentEvent {
    /// 0 = student, 1.. = NPC index + 1.
    pub agent: usize,
    pub cause: TerminalCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub student_cause: TerminalCause,
    pub steps: usize,
    pub route_progress: f64,
    pub mean_velocity: f64,
    pub cumulative_reward: f64,
}

/// One episode's mutable state. Index 0 is the student; 1.. are NPCs.
#[derive(Debug, Clone)]
pub struct World {
    pub graph: std::sync::Arc<LaneGraph>,
    pub region: DrivableRegion,
    pub agents: Vec<Agent>,
    pub dt: f64,
    pub max_steps: usize,
    pub step_count: usize,
    speed_sum: f64,
}

impl World {
    pub fn new(graph: std::sync::Arc<LaneGraph>, agents: Vec<Agent>, dt: f64, max_steps: usize) -> Self {
        let region = graph.drivable_region();
        World {
            graph,
            region,
            agents,
            dt,
            max_steps,
            step_count: 0,
            speed_sum: 0.0,
        }
    }

    pub fn student(&self) -> &Agent {
        &self.agents[0]
    }

    pub fn npcs(&self) -> &[Agent] {
        &self.agents[1..]
    }

    pub fn npc_count(&self) -> usize {
        self.agents.len() - 1
    }

    pub fn episode_over(&self) -> bool {
        !self.agents[0].state.alive
    }

    /// Advance all alive agents synchronously by dt.
    ///
    /// `npc_actions[i]` controls NPC i; dead NPCs' entries are ignored.
    pub fn step_episode(
        &mut self,
        npc_actions: &[Action],
        student_action: Action,
    ) -> Result<Vec<AgentEvent>, SimError> {
        if self.episode_over() {
            return Err(SimError::EpisodeOver);
        }
        if npc_actions.len() != self.npc_count() {
            return Err(SimError::ActionCount {
                expected: self.npc_count(),
                got: npc_actions.len(),
            });
        }
        let dt = self.dt;
        for (i, agent) in self.agents.iter_mut().enumerate() {
            if !agent.state.alive {
                continue;
            }
            let action = if i == 0 {
                student_action
            } else {
                npc_actions[i - 1]
            };
            agent.state = step_vehicle(&agent.state, action, dt);
            agent.history.push(agent.state.clone());
        }
        let graph = self.graph.clone();
        for agent in &mut self.agents {
            if agent.state.alive {
                agent.progress = agent.progress.max(agent.projected_progress(&graph));
            }
        }

        let mut events = Vec::new();
        // Goal arrivals first: an agent at its goal is removed before
        // collision checks this step.
        for (i, agent) in self.agents.iter_mut().enumerate() {
            if agent.state.alive
                && agent.state.position.distance(agent.route.goal_position) <= GOAL_RADIUS
            {
                agent.state.alive = false;
                agent.state.terminal_cause = TerminalCause::Goal;
                events.push(AgentEvent {
                    agent: i,
                    cause: TerminalCause::Goal,
                });
            }
        }
        // Pairwise collisions among remaining agents; both participants terminate.
        let n = self.agents.len();
        let mut collided = vec![false; n];
        for i in 0..n {
            if !self.agents[i].state.alive {
                continue;
            }
            for j in i + 1..n {
                if !self.agents[j].state.alive {
                    continue;
                }
                if check_collision(&self.agents[i].state, &self.agents[j].state) {
                    collided[i] = true;
                    collided[j] = true;
                }
            }
        }
        for (i, hit) in collided.iter().enumerate() {
            if *hit {
                self.agents[i].state.alive = false;
                self.agents[i].state.terminal_cause = TerminalCause::Collision;
                events.push(AgentEvent {
                    agent: i,
                    cause: TerminalCause::Collision,
                });
            }
        }
        // Off-road.
        for i in 0..n {
            if self.agents[i].state.alive && check_offroad(&self.agents[i].state, &self.region) {
                self.agents[i].state.alive = false;
                self.agents[i].state.terminal_cause = TerminalCause::Offroad;
                events.push(AgentEvent {
                    agent: i,
                    cause: TerminalCause::Offroad,
                });
            }
        }

        self.step_count += 1;
        self.speed_sum += self.agents[0].state.speed();
        if self.agents[0].state.alive && self.step_count >= self.max_steps {
            self.agents[0].state.alive = false;
            self.agents[0].state.terminal_cause = TerminalCause::Timeout;
            events.push(AgentEvent {
                agent: 0,
                cause: TerminalCause::Timeout,
            });
        }
        Ok(events)
    }

    pub fn outcome(&self, cumulative_reward: f64) -> EpisodeOutcome {
        EpisodeOutcome {
            student_cause: self.agents[0].state.terminal_cause,
            steps: self.step_count,
            route_progress: self.agents[0].route_progress_fraction(),
            mean_velocity: if self.step_count > 0 {
                self.speed_sum / self.step_count as f64
            } else {
                0.0
            },
            cumulative_reward,
        }
    }
}

/// Spawn the student plus `npc_count` NPCs on inbound approach nodes,
/// pairwise at least 8 m apart, with seeded routes.
pub fn spawn_world(
    graph: std::sync::Arc<LaneGraph>,
    npc_count: usize,
    rng: &mut ChaCha8Rng,
    dt: f64,
    max_steps: usize,
) -> Result<World, SimError> {
    let candidates = graph.inbound_nodes();
    let needed = npc_count + 1;
    let mut chosen: Vec<usize> = Vec::new();
    for _attempt in 0..20 {
        let mut order = candidates.clone();
        order.shuffle(rng);
        let mut picked: Vec<usize> = Vec::new();
        for id in order {
            let pos = graph.nodes()[id].position;
            if picked
                .iter()
                .all(|&other| graph.nodes()[other].position.distance(pos) >= SPAWN_SPACING)
            {
                picked.push(id);
                if picked.len() == needed {
                    break;
                }
            }
        }
        if picked.len() > chosen.len() {
            chosen = picked;
        }
        if chosen.len() == needed {
            break;
        }
    }
    if chosen.is_empty() {
        return Err(SimError::SpawnFailure);
    }
    let mut agents = Vec::new();
    for &id in chosen.iter().take(needed) {
        let node = &graph.nodes()[id];
        let route = graph
            .sample_route(id, rng.gen::<u64>())
            .map_err(|_| SimError::SpawnFailure)?;
        let state = AgentState::at_pose(node.position, node.heading);
        agents.push(Agent::new(state, route, &graph));
    }
    Ok(World::new(graph, agents, dt, max_steps))
}
