//! Scenario logs: one JSONL record per agent per step plus an episode
//! header carrying everything needed to re-simulate the episode from
//! scratch. Replay re-steps the recorded actions through the simulator and
//! verifies that every state field matches bit for bit.

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::lane_graph::{LaneGraph, LaneGraphError, MapDocument, Route};
use crate::ppo::{NpcActor, RolloutParams, StudentActor};
use crate::sim::{spawn_world, Action, Agent, AgentState, SimError, TerminalCause, World};

/// Initial pose and route of one agent; index 0 is the student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInit {
    pub state: AgentState,
    pub route: Route,
}

/// Episode header: the full map plus spawn configuration, so a log is
/// self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHeader {
    pub map_id: String,
    pub map: MapDocument,
    pub seed: u64,
    pub lambda: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub agents: Vec<AgentInit>,
}

/// One agent's slice of one simulator step, taken after the step applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub agent_id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    pub alive: bool,
    pub cause: TerminalCause,
    /// Action indices applied on this step (idle for dead agents).
    pub accel_idx: usize,
    pub steer_idx: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Header(ScenarioHeader),
    Step(StepRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLog {
    pub header: ScenarioHeader,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("log parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("log has no header record")]
    MissingHeader,
    #[error("map rebuild: {0}")]
    Map(#[from] LaneGraphError),
    #[error("map id mismatch: header {header}, rebuilt {rebuilt}")]
    MapId { header: String, rebuilt: String },
    #[error("truncated log: step {t} has {got} records, expected {expected}")]
    Truncated { t: usize, got: usize, expected: usize },
    #[error("record order broken at step {t}, agent {agent}")]
    Order { t: usize, agent: usize },
    #[error("sim: {0}")]
    Sim(#[from] SimError),
    #[error("state mismatch at step {t}, agent {agent}, field {field}")]
    Mismatch { t: usize, agent: usize, field: &'static str },
}

/// Accumulates records while an episode runs.
pub struct ScenarioLogger {
    header: ScenarioHeader,
    steps: Vec<StepRecord>,
}

impl ScenarioLogger {
    /// Captures the header from a freshly spawned (unstepped) world.
    pub fn start(world: &World, seed: u64, lambda: f64) -> Self {
        debug_assert_eq!(world.step_count, 0);
        ScenarioLogger {
            header: ScenarioHeader {
                map_id: world.graph.map_id(),
                map: world.graph.to_document(),
                seed,
                lambda,
                dt: world.dt,
                max_steps: world.max_steps,
                agents: world
                    .agents
                    .iter()
                    .map(|a| AgentInit {
                        state: a.history.padded()[0].clone(),
                        route: a.route.clone(),
                    })
                    .collect(),
            },
            steps: Vec::new(),
        }
    }

    /// Records every agent's post-step state; call once per step, after
    /// `step_episode`, with the actions that produced it.
    pub fn record(&mut self, world: &World, npc_actions: &[Action], student_action: Action) {
        for (id, agent) in world.agents.iter().enumerate() {
            let action = if id == 0 {
                student_action
            } else if agent.state.alive || agent.state.terminal_cause != TerminalCause::None {
                *npc_actions.get(id - 1).unwrap_or(&Action::IDLE)
            } else {
                Action::IDLE
            };
            let s = &agent.state;
            self.steps.push(StepRecord {
                t: world.step_count,
                agent_id: id,
                x: s.position.x,
                y: s.position.y,
                heading: s.heading,
                vx: s.velocity.x,
                vy: s.velocity.y,
                ax: s.acceleration.x,
                ay: s.acceleration.y,
                alive: s.alive,
                cause: s.terminal_cause,
                accel_idx: action.accel_idx,
                steer_idx: action.steer_idx,
            });
        }
    }

    pub fn finish(self) -> ScenarioLog {
        ScenarioLog {
            header: self.header,
            steps: self.steps,
        }
    }
}

impl ScenarioLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&LogLine::Header(self.header.clone()))
            .expect("scenario serialization");
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(&LogLine::Step(s.clone())).expect("step"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ReplayError> {
        let mut header = None;
        let mut steps = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<LogLine>(line)? {
                LogLine::Header(h) => header = Some(h),
                LogLine::Step(s) => steps.push(s),
            }
        }
        Ok(ScenarioLog {
            header: header.ok_or(ReplayError::MissingHeader)?,
            steps,
        })
    }

    /// Re-simulates the log from its header and verifies every recorded
    /// state field bit for bit. Returns the number of verified steps.
    pub fn replay(&self) -> Result<usize, ReplayError> {
        let graph = Arc::new(LaneGraph::from_document(self.header.map.clone())?);
        let rebuilt = graph.map_id();
        if rebuilt != self.header.map_id {
            return Err(ReplayError::MapId {
                header: self.header.map_id.clone(),
                rebuilt,
            });
        }
        let agents: Vec<Agent> = self
            .header
            .agents
            .iter()
            .map(|a| Agent::new(a.state.clone(), a.route.clone(), &graph))
            .collect();
        let n = agents.len();
        let mut world = World::new(graph, agents, self.header.dt, self.header.max_steps);

        let mut verified = 0;
        for group in self.steps.chunks(n) {
            let t = group[0].t;
            if group.len() != n {
                return Err(ReplayError::Truncated {
                    t,
                    got: group.len(),
                    expected: n,
                });
            }
            for (id, rec) in group.iter().enumerate() {
                if rec.agent_id != id || rec.t != t {
                    return Err(ReplayError::Order { t: rec.t, agent: rec.agent_id });
                }
            }
            let npc_actions: Vec<Action> = group[1..]
                .iter()
                .map(|r| Action::new(r.accel_idx, r.steer_idx))
                .collect();
            let student_action = Action::new(group[0].accel_idx, group[0].steer_idx);
            world.step_episode(&npc_actions, student_action)?;

            for (id, rec) in group.iter().enumerate() {
                let s = &world.agents[id].state;
                let fields: [(&'static str, f64, f64); 7] = [
                    ("x", s.position.x, rec.x),
                    ("y", s.position.y, rec.y),
                    ("heading", s.heading, rec.heading),
                    ("vx", s.velocity.x, rec.vx),
                    ("vy", s.velocity.y, rec.vy),
                    ("ax", s.acceleration.x, rec.ax),
                    ("ay", s.acceleration.y, rec.ay),
                ];
                for (field, got, want) in fields {
                    if got.to_bits() != want.to_bits() {
                        return Err(ReplayError::Mismatch { t, agent: id, field });
                    }
                }
                if s.alive != rec.alive {
                    return Err(ReplayError::Mismatch { t, agent: id, field: "alive" });
                }
                if s.terminal_cause != rec.cause {
                    return Err(ReplayError::Mismatch { t, agent: id, field: "cause" });
                }
            }
            verified += 1;
        }
        Ok(verified)
    }
}

/// Plays one full logged episode with the given controllers on a freshly
/// spawned world.
pub fn record_episode(
    student: &mut dyn StudentActor,
    npcs: &mut dyn NpcActor,
    graph: Arc<LaneGraph>,
    env: &RolloutParams,
    seed: u64,
    lambda: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<ScenarioLog, SimError> {
    let mut world = spawn_world(graph, env.npc_count, rng, env.dt, env.max_steps)?;
    let mut logger = ScenarioLogger::start(&world, seed, lambda);
    while !world.episode_over() {
        let student_action = student.act(&world, rng);
        let npc_actions = npcs.act(&world, rng);
        world
            .step_episode(&npc_actions, student_action)
            .expect("stepped a terminal episode");
        logger.record(&world, &npc_actions, student_action);
    }
    Ok(logger.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{BaselineNpcActor, RuleParams, RuleStudentActor};
    use crate::lane_graph::build_x_intersection;
    use crate::rng::stream;

    fn logged_episode(seed: u64) -> ScenarioLog {
        let graph = Arc::new(build_x_intersection(30.0, 3.5).unwrap().dilate(2));
        let env = RolloutParams {
            npc_count: 2,
            dt: 0.1,
            max_steps: 120,
        };
        let mut student = RuleStudentActor { params: RuleParams::default() };
        let mut npcs = BaselineNpcActor { params: RuleParams::default() };
        let mut rng = stream(seed, "scenario");
        record_episode(&mut student, &mut npcs, graph, &env, seed, 0.25, &mut rng).unwrap()
    }

    #[test]
    fn jsonl_roundtrip_is_lossless() {
        let log = logged_episode(3);
        let text = log.to_jsonl();
        let back = ScenarioLog::from_jsonl(&text).unwrap();
        assert_eq!(log, back);
        // Every line is self-describing JSON.
        assert!(text.lines().all(|l| l.starts_with("{\"kind\":")));
    }

    #[test]
    fn replay_matches_bit_for_bit() {
        for seed in [3, 4, 5] {
            let log = logged_episode(seed);
            let text = log.to_jsonl();
            let back = ScenarioLog::from_jsonl(&text).unwrap();
            let steps = back.replay().unwrap();
            assert_eq!(steps * (back.header.agents.len()), back.steps.len());
            assert!(steps > 0);
        }
    }

    #[test]
    fn tampered_log_fails_replay() {
        let mut log = logged_episode(6);
        let mid = log.steps.len() / 2;
        log.steps[mid].x += 1e-9;
        match log.replay() {
            Err(ReplayError::Mismatch { field: "x", .. }) => {}
            other => panic!("expected x mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_an_error() {
        let log = logged_episode(7);
        let text: String = log
            .to_jsonl()
            .lines()
            .skip(1)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            ScenarioLog::from_jsonl(&text),
            Err(ReplayError::MissingHeader)
        ));
    }
}
