//! Per-step driving rewards and the difficulty-balanced NPC reward.
//!
//! Each NPC's reward blends two objectives by distance to the student:
//! an intrinsic term (drive well yourself) and an extrinsic term (help or
//! hinder the student, signed by the commanded difficulty `lambda`). An RBF
//! kernel over the NPC-student distance shifts weight toward the extrinsic
//! term as the NPC gets close.

use serde::{Deserialize, Serialize};

use crate::lane_graph::LaneGraph;
use crate::math::point_segment_distance;
use crate::sim::{route_polyline, Agent, TerminalCause};

/// Reward weights and difficulty-blend constants. Lane and comfort weights
/// are penalties and must be non-positive, as are the collision/off-road
/// terminal weights and the per-step time cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Floor on both blend factors, in (0, 0.1].
    pub epsilon: f64,
    /// RBF kernel length scale in meters.
    pub sigma: f64,
    /// Per meter of route progress.
    pub w_progress: f64,
    /// Per meter of lateral offset from the route centerline (<= 0).
    pub w_lane: f64,
    /// Per m/s^3 of jerk (<= 0).
    pub w_comfort: f64,
    /// Flat per-step time cost (<= 0).
    pub w_step: f64,
    /// Terminal bonus on reaching the goal (>= 0).
    pub w_goal: f64,
    /// Terminal penalty on collision (<= 0).
    pub w_collision: f64,
    /// Terminal penalty on leaving the road (<= 0).
    pub w_offroad: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            epsilon: 0.1,
            sigma: 5.0,
            w_progress: 1.0,
            w_lane: -0.1,
            w_comfort: -0.05,
            w_step: -0.05,
            w_goal: 10.0,
            w_collision: -10.0,
            w_offroad: -10.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return Err(format!("epsilon {} outside (0, 0.1]", self.epsilon));
        }
        if self.sigma <= 0.0 {
            return Err(format!("sigma {} must be positive", self.sigma));
        }
        if self.w_lane > 0.0 || self.w_comfort > 0.0 || self.w_step > 0.0 {
            return Err("lane/comfort/step weights must be non-positive".into());
        }
        if self.w_goal < 0.0 {
            return Err("goal bonus must be non-negative".into());
        }
        if self.w_collision > 0.0 || self.w_offroad > 0.0 {
            return Err("terminal penalties must be non-positive".into());
        }
        Ok(())
    }
}

/// What one agent did over one simulator step, reduced to reward inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivingStep {
    /// Meters of route progress gained this step (non-negative by
    /// construction; progress is monotone).
    pub progress_delta: f64,
    /// Unsigned distance to the route centerline after the step, meters.
    pub lateral_offset: f64,
    /// |d(accel)/dt| this step, m/s^3.
    pub jerk: f64,
    /// Set when the agent terminated this step.
    pub terminal: Option<TerminalCause>,
}

/// Shaped driving reward shared by the student and every NPC.
pub fn driving_reward(params: &RewardParams, step: &DrivingStep) -> f64 {
    let mut r = params.w_progress * step.progress_delta
        + params.w_lane * step.lateral_offset.abs()
        + params.w_comfort * step.jerk.abs()
        + params.w_step;
    r += match step.terminal {
        Some(TerminalCause::Goal) => params.w_goal,
        Some(TerminalCause::Collision) => params.w_collision,
        Some(TerminalCause::Offroad) => params.w_offroad,
        Some(TerminalCause::Timeout) | Some(TerminalCause::None) | None => 0.0,
    };
    r
}

/// RBF contribution weight between an NPC and the student: exp(-d^2/(2 sigma^2)).
pub fn rbf_kernel(d: f64, sigma: f64) -> f64 {
    debug_assert!(d >= 0.0 && sigma > 0.0);
    (-d * d / (2.0 * sigma * sigma)).exp()
}

fn sgn_pos(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// The signed extrinsic blend factor: lambda itself when |lambda| > epsilon,
/// otherwise clipped to sgn(lambda)*epsilon so the student's reward is never
/// entirely disregarded. sgn(0) is taken as +1.
pub fn lambda_multiplier(lambda: f64, epsilon: f64) -> f64 {
    if lambda.abs() > epsilon {
        lambda
    } else {
        sgn_pos(lambda) * epsilon
    }
}

/// Own-driving share of an NPC's reward, faded out near the student.
pub fn intrinsic_reward(lambda: f64, d: f64, r_driving_npc: f64, params: &RewardParams) -> f64 {
    (1.0 - rbf_kernel(d, params.sigma)) * params.epsilon.max(1.0 - lambda.abs()) * r_driving_npc
}

/// Student-coupled share of an NPC's reward, signed by lambda and faded in
/// near the student.
pub fn extrinsic_reward(lambda: f64, d: f64, r_driving_student: f64, params: &RewardParams) -> f64 {
    rbf_kernel(d, params.sigma) * r_driving_student * lambda_multiplier(lambda, params.epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub intrinsic: f64,
    pub extrinsic: f64,
    pub total: f64,
    pub kernel_weight: f64,
}

/// Full NPC reward for one step: intrinsic + extrinsic, with the blend
/// weight reported for logging.
pub fn npc_reward(
    lambda: f64,
    d: f64,
    r_driving_npc: f64,
    r_driving_student: f64,
    params: &RewardParams,
) -> RewardBreakdown {
    let intrinsic = intrinsic_reward(lambda, d, r_driving_npc, params);
    let extrinsic = extrinsic_reward(lambda, d, r_driving_student, params);
    RewardBreakdown {
        intrinsic,
        extrinsic,
        total: intrinsic + extrinsic,
        kernel_weight: rbf_kernel(d, params.sigma),
    }
}

/// Unsigned distance from an agent to its route centerline polyline.
pub fn lateral_offset(agent: &Agent, graph: &LaneGraph) -> f64 {
    let poly = route_polyline(&agent.route, graph);
    poly.windows(2)
        .map(|w| point_segment_distance(agent.state.position, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Jerk magnitude implied by two consecutive acceleration commands.
pub fn jerk(prev_accel: f64, accel: f64, dt: f64) -> f64 {
    (accel - prev_accel).abs() / dt
}
