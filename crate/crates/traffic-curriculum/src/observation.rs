//! Observation builders: the teacher's fully observable graph observation
//! (agent histories, road options, lane graph, auxiliary difficulty input)
//! and the student's local ego-centric vector observation. Both rely on
//! viewpoint-invariant features so downstream networks are unaffected by
//! rigid transforms of the scene.

use std::sync::Arc;

use crate::lane_graph::{LaneGraph, RoadOption};
use crate::math::{wrap_angle, Pose, Vec2};
use crate::sim::{AgentState, World};
#[cfg(test)]
use crate::sim::HISTORY_LEN;

/// Pair-wise relative positional encoding for an ordered pair of scene
/// elements: (distance, sin/cos of bearing in the source frame, sin/cos of
/// relative heading). Invariant under rigid transforms applied to both poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPosEncoding {
    pub distance: f64,
    pub bearing_sin: f64,
    pub bearing_cos: f64,
    pub rel_heading_sin: f64,
    pub rel_heading_cos: f64,
}

pub const REL_POS_DIM: usize = 5;

impl RelPosEncoding {
    pub fn to_array(self) -> [f64; REL_POS_DIM] {
        [
            self.distance,
            self.bearing_sin,
            self.bearing_cos,
            self.rel_heading_sin,
            self.rel_heading_cos,
        ]
    }
}

/// Bearing is defined as 0 when the two elements are closer than 1e-6 m.
pub fn encode_pair(src: &Pose, dst: &Pose) -> RelPosEncoding {
    let offset = dst.position - src.position;
    let distance = offset.norm();
    let bearing = if distance < 1e-6 {
        0.0
    } else {
        wrap_angle(offset.y.atan2(offset.x) - src.heading)
    };
    let rel_heading = wrap_angle(dst.heading - src.heading);
    RelPosEncoding {
        distance,
        bearing_sin: bearing.sin(),
        bearing_cos: bearing.cos(),
        rel_heading_sin: rel_heading.sin(),
        rel_heading_cos: rel_heading.cos(),
    }
}

/// Per-pose history features fed to the agent-history encoder:
/// displacement from the previous pose in the current pose's frame, speed,
/// heading change, and acceleration magnitude. Viewpoint-invariant.
pub const HISTORY_FEATURES: usize = 5;

pub fn history_features(history: &[AgentState]) -> Vec<[f64; HISTORY_FEATURES]> {
    let mut rows = Vec::with_capacity(history.len());
    for (i, cur) in history.iter().enumerate() {
        let prev = &history[i.saturating_sub(1)];
        let local = Pose::new(cur.position, cur.heading).to_local(prev.position);
        let delta = Vec2::ZERO - local;
        rows.push([
            delta.x,
            delta.y,
            cur.speed(),
            wrap_angle(cur.heading - prev.heading),
            cur.acceleration.norm(),
        ]);
    }
    rows
}

/// One agent's slice of the teacher observation.
#[derive(Debug, Clone)]
pub struct AgentObs {
    /// Padded to `HISTORY_LEN`, oldest first.
    pub history: Vec<AgentState>,
    pub pose: Pose,
    pub is_student: bool,
    /// Navigational command; `None` for the student.
    pub road_option: Option<RoadOption>,
}

/// Fully observable teacher input: all agent histories, per-NPC road
/// options, the lane graph, and the auxiliary difficulty input.
#[derive(Debug, Clone)]
pub struct TeacherObservation {
    pub graph: Arc<LaneGraph>,
    pub lambda: f64,
    /// Student first, then every alive NPC with its world agent index.
    pub student: AgentObs,
    pub npcs: Vec<(usize, AgentObs)>,
}

impl TeacherObservation {
    pub fn agent_count(&self) -> usize {
        self.npcs.len() + 1
    }
}

pub fn build_teacher_obs(world: &World, lambda: f64) -> TeacherObservation {
    debug_assert!((-1.0..=1.0).contains(&lambda));
    let student_agent = world.student();
    let student = AgentObs {
        history: student_agent.history.padded(),
        pose: Pose::new(student_agent.state.position, student_agent.state.heading),
        is_student: true,
        road_option: None,
    };
    let mut npcs = Vec::new();
    for (i, agent) in world.agents.iter().enumerate().skip(1) {
        if !agent.state.alive {
            continue;
        }
        npcs.push((
            i,
            AgentObs {
                history: agent.history.padded(),
                pose: Pose::new(agent.state.position, agent.state.heading),
                is_student: false,
                road_option: Some(agent.route.road_option),
            },
        ));
    }
    TeacherObservation {
        graph: world.graph.clone(),
        lambda,
        student,
        npcs,
    }
}

pub const STUDENT_NEIGHBORS: usize = 6;
/// ego (4) + goal (2) + neighbors (6 x 4) + lane (2).
pub const STUDENT_OBS_DIM: usize = 4 + 2 + STUDENT_NEIGHBORS * 4 + 2;

/// Local sensor-style observation for the student; no lambda, no privileged
/// state, fixed dimensionality regardless of alive NPC count.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentObservation {
    pub speed: f64,
    pub yaw_rate: f64,
    pub lon_accel: f64,
    pub lat_accel: f64,
    pub goal_distance: f64,
    pub goal_bearing: f64,
    /// (rel x, rel y, rel heading, rel speed) in the ego frame, nearest first,
    /// zero-padded.
    pub neighbors: [[f64; 4]; STUDENT_NEIGHBORS],
    pub lateral_offset: f64,
    pub heading_error: f64,
}

impl StudentObservation {
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STUDENT_OBS_DIM);
        v.extend([self.speed, self.yaw_rate, self.lon_accel, self.lat_accel]);
        v.extend([self.goal_distance, self.goal_bearing]);
        for slot in &self.neighbors {
            v.extend(slot.iter().copied());
        }
        v.extend([self.lateral_offset, self.heading_error]);
        debug_assert_eq!(v.len(), STUDENT_OBS_DIM);
        v
    }
}

pub fn build_student_obs(world: &World) -> StudentObservation {
    let student = world.student();
    let state = &student.state;
    let ego = Pose::new(state.position, state.heading);
    let window = student.history.padded();
    let prev = &window[window.len() - 2];
    let yaw_rate = wrap_angle(state.heading - prev.heading) / world.dt;
    let accel_local = state.acceleration.rotate(-state.heading);

    let goal_local = ego.to_local(student.route.goal_position);
    let goal_distance = goal_local.norm();
    let goal_bearing = if goal_distance < 1e-6 {
        0.0
    } else {
        goal_local.y.atan2(goal_local.x)
    };

    let mut nearby: Vec<(f64, [f64; 4])> = Vec::new();
    for agent in world.npcs() {
        if !agent.state.alive {
            continue;
        }
        let rel = ego.to_local(agent.state.position);
        nearby.push((
            rel.norm(),
            [
                rel.x,
                rel.y,
                wrap_angle(agent.state.heading - state.heading),
                agent.state.speed() - state.speed(),
            ],
        ));
    }
    nearby.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut neighbors = [[0.0; 4]; STUDENT_NEIGHBORS];
    for (slot, (_, feats)) in neighbors.iter_mut().zip(nearby.into_iter()) {
        *slot = feats;
    }

    // Lane frame: closest segment of the route polyline.
    let poly = crate::sim::route_polyline(&student.route, &world.graph);
    let mut best = (f64::INFINITY, 0.0f64, 0.0f64); // (distance, signed offset, segment heading)
    for w in poly.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ab = b - a;
        let len = ab.norm();
        if len < 1e-9 {
            continue;
        }
        let t = ((state.position - a).dot(ab) / (len * len)).clamp(0.0, 1.0);
        let closest = a + ab.scale(t);
        let d = state.position.distance(closest);
        if d < best.0 {
            let dir = ab.scale(1.0 / len);
            let signed = dir.cross(state.position - closest);
            best = (d, signed, dir.y.atan2(dir.x));
        }
    }

    StudentObservation {
        speed: state.speed(),
        yaw_rate,
        lon_accel: accel_local.x,
        lat_accel: accel_local.y,
        goal_distance,
        goal_bearing,
        neighbors,
        lateral_offset: best.1,
        heading_error: wrap_angle(state.heading - best.2),
    }
}
