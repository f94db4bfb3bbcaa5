//! Evaluation harness: fixed-seed episode batteries for a (student, traffic
//! source) pair, aggregated into a report of terminal-cause rates, route
//! progress, velocities, and driving reward, plus velocity-profile CSV
//! extraction for plotting.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lane_graph::LaneGraph;
use crate::ppo::{play_episode, EpisodePlayback, NpcActor, RolloutParams, StudentActor};
use crate::rewards::RewardParams;
use crate::rng::stream;
use crate::sim::{Action, SimError, TerminalCause, World};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error("no episode logs to extract profiles from")]
    EmptyLogs,
    #[error("sim: {0}")]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(xs: &[f64]) -> MeanStd {
    if xs.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// One (student, traffic source) cell of the evaluation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub seed: u64,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub offroad_rate: f64,
    pub timeout_rate: f64,
    /// Fraction of the route covered, per episode.
    pub route_progress: MeanStd,
    /// Student mean speed, m/s, per episode.
    pub velocity: MeanStd,
    /// Cumulative student driving reward per episode.
    pub reward: MeanStd,
    /// Mean speed of alive NPCs, m/s, per episode.
    pub npc_velocity: MeanStd,
}

/// Report plus the retained per-episode playbacks for profile extraction.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub playbacks: Vec<EpisodePlayback>,
}

/// Runs a fixed-seed battery of episodes and aggregates the metrics.
pub fn evaluate(
    student: &mut dyn StudentActor,
    traffic: &mut dyn NpcActor,
    maps: &[Arc<LaneGraph>],
    env: &RolloutParams,
    rewards: &RewardParams,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation, EvalError> {
    if episodes == 0 {
        return Err(EvalError::NoEpisodes);
    }
    let mut rng = stream(seed, "eval");
    let mut playbacks = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        playbacks.push(play_episode(student, traffic, maps, env, rewards, &mut rng)?);
    }

    let count = |cause: TerminalCause| {
        playbacks
            .iter()
            .filter(|p| p.outcome.student_cause == cause)
            .count() as f64
            / episodes as f64
    };
    let series = |f: &dyn Fn(&EpisodePlayback) -> f64| -> Vec<f64> {
        playbacks.iter().map(f).collect()
    };
    let report = EvalReport {
        episodes,
        seed,
        success_rate: count(TerminalCause::Goal),
        collision_rate: count(TerminalCause::Collision),
        offroad_rate: count(TerminalCause::Offroad),
        timeout_rate: count(TerminalCause::Timeout),
        route_progress: mean_std(&series(&|p| p.outcome.route_progress)),
        velocity: mean_std(&series(&|p| p.outcome.mean_velocity)),
        reward: mean_std(&series(&|p| p.outcome.cumulative_reward)),
        npc_velocity: mean_std(&series(&|p| p.npc_mean_speed)),
    };
    Ok(Evaluation { report, playbacks })
}

/// Per-episode student speed time series as CSV (episode, t, speed), with a
/// trailing mean profile averaged over the episodes still running at each t.
pub fn velocity_profiles(playbacks: &[EpisodePlayback]) -> Result<String, EvalError> {
    if playbacks.is_empty() {
        return Err(EvalError::EmptyLogs);
    }
    let mut out = String::from("episode,t,speed\n");
    for (e, p) in playbacks.iter().enumerate() {
        for (t, s) in p.student_speeds.iter().enumerate() {
            out.push_str(&format!("{e},{t},{s}\n"));
        }
    }
    let longest = playbacks
        .iter()
        .map(|p| p.student_speeds.len())
        .max()
        .unwrap_or(0);
    for t in 0..longest {
        let live: Vec<f64> = playbacks
            .iter()
            .filter_map(|p| p.student_speeds.get(t).copied())
            .collect();
        let mean = live.iter().sum::<f64>() / live.len() as f64;
        out.push_str(&format!("mean,{t},{mean}\n"));
    }
    Ok(out)
}

/// Student that repeats one fixed action (scripted baselines and tests).
#[derive(Debug, Clone, Copy)]
pub struct ConstantActor(pub Action);

impl StudentActor for ConstantActor {
    fn act(&mut self, _world: &World, _rng: &mut ChaCha8Rng) -> Action {
        self.0
    }
}

/// NPC controller that never moves anyone (empty-traffic evaluations).
#[derive(Debug, Clone, Copy, Default)]
pub struct IdleNpcActor;

impl NpcActor for IdleNpcActor {
    fn act(&mut self, world: &World, _rng: &mut ChaCha8Rng) -> Vec<Action> {
        vec![Action::IDLE; world.npc_count()]
    }
}
