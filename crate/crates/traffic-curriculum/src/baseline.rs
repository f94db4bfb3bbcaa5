//! Rule-based NPC controller: front-axle lane tracking with headway
//! keeping and first-come-first-served intersection yielding. Stands in
//! for an external traffic manager when training/evaluating the baseline
//! student, and doubles as a scripted "reasonable driver" for evaluation.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::Vec2;
use crate::ppo::{NpcActor, StudentActor};
use crate::sim::{route_polyline, Action, World, HALF_EXTENTS, STEER_CHOICES, V_MAX, WHEELBASE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleParams {
    /// Cruise speed on open road, m/s.
    pub target_speed: f64,
    /// Brake when a leader is closer than this along the lane, meters.
    pub headway_gap: f64,
    /// Cross-track correction gain (steer per meter of lane offset).
    pub cross_gain: f64,
    /// Extra inflation of the intersection conflict box, meters.
    pub yield_box_margin: f64,
    /// Speed cap while the tracker demands a real turn, m/s.
    pub turn_speed: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            target_speed: 5.0,
            headway_gap: 10.0,
            cross_gain: 2.0,
            yield_box_margin: 1.0,
            turn_speed: 3.0,
        }
    }
}

impl RuleParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.target_speed <= 0.0 || self.target_speed > V_MAX {
            return Err(format!("target_speed {} outside (0, {V_MAX}]", self.target_speed));
        }
        if self.headway_gap <= 4.8 {
            return Err("headway_gap must exceed the vehicle length".into());
        }
        if self.cross_gain <= 0.0 {
            return Err("cross_gain must be positive".into());
        }
        if self.turn_speed <= 0.0 || self.turn_speed > self.target_speed {
            return Err("turn_speed must be in (0, target_speed]".into());
        }
        Ok(())
    }
}

/// Point at the given arc length along a polyline (clamped to its end).
fn point_at_arc(poly: &[Vec2], arc: f64) -> Vec2 {
    let mut remaining = arc.max(0.0);
    for w in poly.windows(2) {
        let len = w[0].distance(w[1]);
        if remaining <= len {
            let t = if len > 0.0 { remaining / len } else { 0.0 };
            return w[0] + (w[1] - w[0]).scale(t);
        }
        remaining -= len;
    }
    *poly.last().expect("empty polyline")
}

fn inside_box(p: Vec2, lo: Vec2, hi: Vec2, margin: f64) -> bool {
    p.x >= lo.x - margin && p.x <= hi.x + margin && p.y >= lo.y - margin && p.y <= hi.y + margin
}

/// Arc distance from `progress` along the polyline to the first sample
/// inside the conflict box, probed at 1 m resolution. None if the remaining
/// route never enters the box (within its length).
fn distance_to_box(poly: &[Vec2], progress: f64, lo: Vec2, hi: Vec2, margin: f64) -> Option<f64> {
    let total: f64 = poly.windows(2).map(|w| w[0].distance(w[1])).sum();
    let mut arc = progress;
    while arc <= total {
        if inside_box(point_at_arc(poly, arc), lo, hi, margin) {
            return Some(arc - progress);
        }
        arc += 1.0;
    }
    None
}

/// Separating-axis overlap test between two vehicle footprints inflated by
/// `margin` on every side.
fn footprints_overlap(pa: Vec2, ha: f64, pb: Vec2, hb: f64, margin: f64) -> bool {
    let (hx, hy) = (HALF_EXTENTS.0 + margin, HALF_EXTENTS.1 + margin);
    let corners = |p: Vec2, h: f64| -> [Vec2; 4] {
        let fwd = Vec2::from_angle(h);
        let left = fwd.perp();
        [
            p + fwd.scale(hx) + left.scale(hy),
            p + fwd.scale(hx) - left.scale(hy),
            p - fwd.scale(hx) - left.scale(hy),
            p - fwd.scale(hx) + left.scale(hy),
        ]
    };
    let (ca, cb) = (corners(pa, ha), corners(pb, hb));
    let axes = [
        Vec2::from_angle(ha),
        Vec2::from_angle(ha).perp(),
        Vec2::from_angle(hb),
        Vec2::from_angle(hb).perp(),
    ];
    for axis in axes {
        let span = |c: &[Vec2; 4]| {
            let ps = c.map(|p| p.dot(axis));
            (ps.iter().cloned().fold(f64::INFINITY, f64::min),
             ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        };
        let (alo, ahi) = span(&ca);
        let (blo, bhi) = span(&cb);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

/// Signed lane offset (left of the path positive) and local path tangent
/// at the polyline point nearest to `p`.
fn path_offset(poly: &[Vec2], p: Vec2) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for w in poly.windows(2) {
        let ab = w[1] - w[0];
        let len = ab.norm();
        if len < 1e-9 {
            continue;
        }
        let t = ((p - w[0]).dot(ab) / (len * len)).clamp(0.0, 1.0);
        let foot = w[0] + ab.scale(t);
        let d = p.distance(foot);
        if d < best.0 {
            let rel = p - foot;
            let left = (ab.x * rel.y - ab.y * rel.x).signum() * d;
            best = (d, left, ab.y.atan2(ab.x));
        }
    }
    (best.1, best.2)
}

/// Deterministic rule action for one alive agent: front-axle lane tracking
/// (heading error plus a cross-track correction term); brake for a leader
/// inside the headway gap or when another agent holds intersection priority
/// (earliest projected arrival, ties to the lower agent index); otherwise
/// accelerate toward the target speed.
pub fn rule_policy(world: &World, agent_index: usize, params: &RuleParams) -> Action {
    let agent = &world.agents[agent_index];
    debug_assert!(agent.state.alive);
    let poly = route_polyline(&agent.route, &world.graph);
    let pose = crate::math::Pose::new(agent.state.position, agent.state.heading);

    // Track from the front axle: steer toward the local path tangent, plus
    // a correction that pulls the cross-track error to zero.
    let dir = Vec2::from_angle(agent.state.heading);
    let front = agent.state.position + dir.scale(WHEELBASE / 2.0);
    let (offset, tangent) = path_offset(&poly, front);
    let psi = crate::math::wrap_angle(tangent - agent.state.heading);
    let v = agent.state.speed();
    let steer = psi - (params.cross_gain * offset / v.max(1.0)).atan();
    let steer_idx = STEER_CHOICES
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - steer).abs().total_cmp(&(b.1 - steer).abs()))
        .unwrap()
        .0;

    let mut brake = false;

    // Headway: any alive agent ahead in the body frame within the gap and
    // roughly in lane.
    for (j, other) in world.agents.iter().enumerate() {
        if j == agent_index || !other.state.alive {
            continue;
        }
        let rel = pose.to_local(other.state.position);
        if rel.x > 0.0 && rel.x < params.headway_gap && rel.y.abs() < 2.0 {
            brake = true;
        }
    }

    // Intersection priority: first projected arrival proceeds, everyone
    // else waits until the box clears.
    if !brake {
        if let Some((lo, hi)) = world.region.junction_box() {
            let m = params.yield_box_margin;
            let me_inside = inside_box(agent.state.position, lo, hi, m);
            if !me_inside {
                if let Some(my_dist) = distance_to_box(&poly, agent.progress, lo, hi, m) {
                    if my_dist < 15.0 {
                        let my_eta = my_dist / agent.state.speed().max(1.0);
                        for (j, other) in world.agents.iter().enumerate() {
                            if j == agent_index || !other.state.alive {
                                continue;
                            }
                            if inside_box(other.state.position, lo, hi, m) {
                                brake = true;
                                break;
                            }
                            let opoly = route_polyline(&other.route, &world.graph);
                            if let Some(od) = distance_to_box(&opoly, other.progress, lo, hi, m) {
                                if od < 15.0 {
                                    let oeta = od / other.state.speed().max(1.0);
                                    if oeta < my_eta || (oeta == my_eta && j < agent_index) {
                                        brake = true;
                                        break;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    // Crossing guard, for paths the box priority cannot arbitrate (both
    // vehicles already inside the box, or conflicts elsewhere): predict both
    // footprints under constant velocity; on a projected contact, yield to a
    // near-stationary vehicle (it cannot clear) and otherwise to the lower
    // index.
    if !brake {
        'guard: for (j, other) in world.agents.iter().enumerate() {
            if j == agent_index || !other.state.alive {
                continue;
            }
            for k in 1..=25 {
                let t = k as f64 * world.dt;
                let mine = agent.state.position + agent.state.velocity.scale(t);
                let theirs = other.state.position + other.state.velocity.scale(t);
                if footprints_overlap(
                    mine,
                    agent.state.heading,
                    theirs,
                    other.state.heading,
                    0.5,
                ) {
                    if other.state.speed() < 1.0 || agent_index > j {
                        brake = true;
                        break 'guard;
                    }
                    break;
                }
            }
        }
    }

    // Bang-bang steering can only track the junction arcs at moderate
    // speed, so cap it while the pursuit point demands a real turn.
    let speed_limit = if steer.abs() > STEER_CHOICES[2] / 2.0 {
        params.turn_speed
    } else {
        params.target_speed
    };
    let accel_idx = if brake || agent.state.speed() > speed_limit {
        0
    } else if agent.state.speed() < speed_limit {
        2
    } else {
        1
    };
    Action::new(accel_idx, steer_idx)
}

/// Rule controller for every NPC slot.
#[derive(Debug, Clone, Default)]
pub struct BaselineNpcActor {
    pub params: RuleParams,
}

impl NpcActor for BaselineNpcActor {
    fn act(&mut self, world: &World, _rng: &mut ChaCha8Rng) -> Vec<Action> {
        (1..world.agents.len())
            .map(|i| {
                if world.agents[i].state.alive {
                    rule_policy(world, i, &self.params)
                } else {
                    Action::IDLE
                }
            })
            .collect()
    }
}

/// Rule controller driving the student slot (a scripted competent driver).
#[derive(Debug, Clone, Default)]
pub struct RuleStudentActor {
    pub params: RuleParams,
}

impl StudentActor for RuleStudentActor {
    fn act(&mut self, world: &World, _rng: &mut ChaCha8Rng) -> Action {
        rule_policy(world, 0, &self.params)
    }
}
