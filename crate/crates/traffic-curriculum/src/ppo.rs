//! PPO for the student and independent PPO with parameter sharing for the
//! teacher's NPCs: rollout collection, generalized advantage estimation,
//! and clipped surrogate updates.
//!
//! The teacher variant keeps one reward/advantage stream per NPC but a
//! single shared network: minibatches are whole scene-steps, and one
//! forward pass produces every NPC's policy and value.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lane_graph::LaneGraph;
use crate::nn::adam::{clip_global_norm, Adam};
use crate::nn::layers::{categorical_entropy, sample_categorical};
use crate::nn::params::ParameterStore;
use crate::nn::tape::{Tape, ValueId};
use crate::observation::{build_student_obs, build_teacher_obs, StudentObservation};
use crate::rewards::{driving_reward, jerk, lateral_offset, npc_reward, DrivingStep, RewardParams};
use crate::sim::{spawn_world, Action, Agent, EpisodeOutcome, TerminalCause, World};
use crate::student::StudentPolicy;
use crate::teacher::TeacherPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub steps_per_iter: usize,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_ratio: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr: 3e-4,
            epochs: 4,
            minibatch: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            steps_per_iter: 4096,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return Err(format!("clip_ratio {} outside (0,1)", self.clip_ratio));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma {} outside (0,1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(format!("gae_lambda {} outside [0,1]", self.gae_lambda));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.steps_per_iter == 0 {
            return Err("epochs, minibatch, steps_per_iter must be positive".into());
        }
        Ok(())
    }
}

/// Generalized advantage estimation over one stream.
///
/// `bootstrap` is the value estimate of the state after the last record and
/// is only consulted when the stream was truncated (last done flag false).
/// Panics on length mismatch.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    gae_lambda: f64,
    bootstrap: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "gae length mismatch");
    assert_eq!(rewards.len(), dones.len(), "gae length mismatch");
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = if dones[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap
        };
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * gae_lambda * not_done * acc;
        advantages[t] = acc;
    }
    let returns = advantages
        .iter()
        .zip(values.iter())
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

/// One agent-step record. `obs` is whatever the policy consumes.
#[derive(Debug, Clone)]
pub struct Transition<O> {
    pub obs: O,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// True when a non-finite loss aborted the update and parameters were
    /// restored.
    pub aborted: bool,
}

fn normalize(advs: Vec<&mut f64>) {
    if advs.is_empty() {
        return;
    }
    let n = advs.len() as f64;
    let mean = advs.iter().map(|a| **a).sum::<f64>() / n;
    let var = advs.iter().map(|a| (**a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in advs {
        *a = (*a - mean) / std;
    }
}

struct LossAccumulator {
    policy_terms: Vec<ValueId>,
    value_terms: Vec<ValueId>,
    entropy_terms: Vec<ValueId>,
    clipped: usize,
    count: usize,
}

impl LossAccumulator {
    fn new() -> Self {
        LossAccumulator {
            policy_terms: Vec::new(),
            value_terms: Vec::new(),
            entropy_terms: Vec::new(),
            clipped: 0,
            count: 0,
        }
    }

    /// Adds one transition's clipped-surrogate, value, and entropy terms.
    fn push(
        &mut self,
        tape: &mut Tape,
        log_probs: ValueId,
        value: ValueId,
        action: usize,
        old_log_prob: f64,
        advantage: f64,
        ret: f64,
        clip: f64,
    ) {
        let lp = tape.pick(log_probs, action);
        let diff = tape.add_scalar(lp, -old_log_prob);
        let ratio = tape.exp(diff);
        let unclipped = tape.scale(ratio, advantage);
        let clamped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip);
        let clipped = tape.scale(clamped, advantage);
        let surrogate = tape.min_elem(unclipped, clipped);
        self.policy_terms.push(surrogate);

        let err = tape.add_scalar(value, -ret);
        let sq = tape.mul(err, err);
        self.value_terms.push(sq);

        self.entropy_terms.push(categorical_entropy(tape, log_probs));

        let r = tape.scalar(ratio);
        if (r - 1.0).abs() > clip {
            self.clipped += 1;
        }
        self.count += 1;
    }

    /// Combines the pushed terms into the scalar PPO loss; returns the loss
    /// node and the component means for stats.
    fn finish(self, tape: &mut Tape, cfg: &PpoConfig) -> Option<(ValueId, UpdateStats)> {
        if self.count == 0 {
            return None;
        }
        let pol = tape.mean_of(&self.policy_terms);
        let val = tape.mean_of(&self.value_terms);
        let ent = tape.mean_of(&self.entropy_terms);
        let neg_pol = tape.scale(pol, -1.0);
        let val_term = tape.scale(val, cfg.value_coef);
        let ent_term = tape.scale(ent, -cfg.entropy_coef);
        let a = tape.add(neg_pol, val_term);
        let loss = tape.add(a, ent_term);
        let stats = UpdateStats {
            policy_loss: -tape.scalar(pol),
            value_loss: tape.scalar(val),
            entropy: tape.scalar(ent),
            clip_fraction: self.clipped as f64 / self.count as f64,
            aborted: false,
        };
        Some((loss, stats))
    }
}

/// Clipped PPO update over a flat stream of transitions.
///
/// `forward` rebuilds (log-probs, value) for one observation on the given
/// tape. Advantages are normalized in place. A non-finite loss aborts the
/// whole update and restores both parameters and optimizer state.
pub fn ppo_update<O>(
    store: &mut ParameterStore,
    opt: &mut Adam,
    forward: impl Fn(&ParameterStore, &mut Tape, &O) -> (ValueId, ValueId),
    transitions: &mut [Transition<O>],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> UpdateStats {
    normalize(transitions.iter_mut().map(|t| &mut t.advantage).collect());
    let snapshot_store = store.clone();
    let snapshot_opt = opt.clone();
    opt.lr = cfg.lr;

    let mut last = UpdateStats {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
        aborted: false,
    };
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.minibatch) {
            let mut tape = Tape::new();
            let mut acc = LossAccumulator::new();
            for &i in batch {
                let t = &transitions[i];
                let (lp, v) = forward(store, &mut tape, &t.obs);
                acc.push(
                    &mut tape,
                    lp,
                    v,
                    t.action,
                    t.log_prob,
                    t.advantage,
                    t.ret,
                    cfg.clip_ratio,
                );
            }
            let Some((loss, stats)) = acc.finish(&mut tape, cfg) else {
                continue;
            };
            if !tape.scalar(loss).is_finite() {
                *store = snapshot_store;
                *opt = snapshot_opt;
                last.aborted = true;
                return last;
            }
            let mut grads = tape.backward(loss);
            clip_global_norm(&mut grads, cfg.max_grad_norm);
            opt.step(store, &grads);
            last = stats;
        }
    }
    debug_assert!(store.all_finite());
    last
}

/// One NPC's slice of a scene-step record.
#[derive(Debug, Clone)]
pub struct NpcTransition {
    pub world_index: usize,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
}

/// One simulator step of teacher experience: the full scene observation
/// plus every alive NPC's transition.
#[derive(Debug, Clone)]
pub struct SceneStep {
    pub obs: crate::observation::TeacherObservation,
    pub npcs: Vec<NpcTransition>,
}

/// One collected episode's bookkeeping inside a teacher rollout.
#[derive(Debug, Clone)]
pub struct TeacherEpisode {
    pub lambda: f64,
    /// None when the iteration budget truncated the episode.
    pub outcome: Option<EpisodeOutcome>,
    /// Half-open range into `TeacherRollout::scenes`.
    pub scene_range: (usize, usize),
    /// Value estimates at the truncation point, per world index.
    pub bootstrap: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone)]
pub struct TeacherRollout {
    pub scenes: Vec<SceneStep>,
    pub episodes: Vec<TeacherEpisode>,
}

#[derive(Debug, Clone)]
pub struct StudentEpisode {
    pub lambda: f64,
    pub outcome: Option<EpisodeOutcome>,
    pub step_range: (usize, usize),
    pub bootstrap: f64,
}

#[derive(Debug, Clone)]
pub struct StudentRollout {
    pub steps: Vec<Transition<StudentObservation>>,
    pub episodes: Vec<StudentEpisode>,
}

/// Chooses the student's action during teacher training and evaluation.
pub trait StudentActor {
    fn act(&mut self, world: &World, rng: &mut ChaCha8Rng) -> Action;
}

/// The trained (or training) student policy, acting by sampling.
pub struct PolicyStudentActor<'a> {
    pub policy: &'a StudentPolicy,
    pub store: &'a ParameterStore,
}

impl StudentActor for PolicyStudentActor<'_> {
    fn act(&mut self, world: &World, rng: &mut ChaCha8Rng) -> Action {
        let obs = build_student_obs(world);
        let (lp, _) = self.policy.forward(self.store, &obs);
        Action::from_index(sample_categorical(&lp, rng))
    }
}

/// Chooses every NPC's action during student training and evaluation.
/// The returned vector always has one slot per NPC; slots of dead NPCs are
/// ignored by the simulator.
pub trait NpcActor {
    fn act(&mut self, world: &World, rng: &mut ChaCha8Rng) -> Vec<Action>;
}

/// Frozen teacher driving the NPCs at a fixed difficulty.
pub struct TeacherNpcActor<'a> {
    pub policy: &'a TeacherPolicy,
    pub store: &'a ParameterStore,
    pub lambda: f64,
}

impl NpcActor for TeacherNpcActor<'_> {
    fn act(&mut self, world: &World, rng: &mut ChaCha8Rng) -> Vec<Action> {
        let obs = build_teacher_obs(world, self.lambda);
        let out = self.policy.forward(self.store, &obs);
        let mut actions = vec![Action::IDLE; world.npc_count()];
        for npc in &out.per_npc {
            actions[npc.world_index - 1] = Action::from_index(sample_categorical(&npc.log_probs, rng));
        }
        actions
    }
}

/// Environment knobs shared by both collectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutParams {
    pub npc_count: usize,
    pub dt: f64,
    pub max_steps: usize,
}

impl Default for RolloutParams {
    fn default() -> Self {
        RolloutParams {
            npc_count: 8,
            dt: crate::sim::DEFAULT_DT,
            max_steps: crate::sim::DEFAULT_MAX_STEPS,
        }
    }
}

fn pick_map(maps: &[Arc<LaneGraph>], rng: &mut ChaCha8Rng) -> Arc<LaneGraph> {
    maps[rng.gen_range(0..maps.len())].clone()
}

/// Reduces one agent's simulator step to reward inputs.
fn agent_step(
    agent: &Agent,
    graph: &LaneGraph,
    prev_progress: f64,
    prev_accel: f64,
    accel: f64,
    dt: f64,
    terminal: Option<TerminalCause>,
) -> DrivingStep {
    DrivingStep {
        progress_delta: agent.progress - prev_progress,
        lateral_offset: lateral_offset(agent, graph),
        jerk: jerk(prev_accel, accel, dt),
        terminal,
    }
}

/// Collects teacher experience until at least `cfg.steps_per_iter` scene
/// steps are gathered, truncating (with value bootstrap) mid-episode if
/// needed. Each new episode spawns on a random map and draws its own
/// difficulty from `lambda_source`.
#[allow(clippy::too_many_arguments)]
pub fn collect_teacher_rollouts(
    teacher_store: &ParameterStore,
    teacher: &TeacherPolicy,
    student_actor: &mut dyn StudentActor,
    maps: &[Arc<LaneGraph>],
    lambda_source: &mut dyn FnMut(&mut ChaCha8Rng) -> f64,
    cfg: &PpoConfig,
    env: &RolloutParams,
    rewards: &RewardParams,
    rng: &mut ChaCha8Rng,
) -> TeacherRollout {
    let mut rollout = TeacherRollout {
        scenes: Vec::new(),
        episodes: Vec::new(),
    };
    'outer: loop {
        let graph = pick_map(maps, rng);
        let mut world = match spawn_world(graph, env.npc_count, rng, env.dt, env.max_steps) {
            Ok(w) => w,
            Err(_) => continue,
        };
        let lambda = lambda_source(rng);
        let episode_start = rollout.scenes.len();
        let mut prev_accels = vec![0.0; world.agents.len()];
        let mut student_return = 0.0;

        while !world.episode_over() {
            let obs = build_teacher_obs(&world, lambda);
            let out = teacher.forward(teacher_store, &obs);
            let mut npc_actions = vec![Action::IDLE; world.npc_count()];
            let mut sampled: Vec<(usize, usize, f64, f64)> = Vec::new();
            for npc in &out.per_npc {
                let action = sample_categorical(&npc.log_probs, rng);
                npc_actions[npc.world_index - 1] = Action::from_index(action);
                sampled.push((
                    npc.world_index,
                    action,
                    npc.log_probs[action],
                    npc.value,
                ));
            }
            let student_action = student_actor.act(&world, rng);

            let prev_progress: Vec<f64> = world.agents.iter().map(|a| a.progress).collect();
            let events = world
                .step_episode(&npc_actions, student_action)
                .expect("stepped a terminal episode");
            let terminal = |idx: usize| events.iter().find(|e| e.agent == idx).map(|e| e.cause);

            let student_driving = driving_reward(
                rewards,
                &agent_step(
                    &world.agents[0],
                    &world.graph,
                    prev_progress[0],
                    prev_accels[0],
                    student_action.accel(),
                    world.dt,
                    terminal(0),
                ),
            );
            student_return += student_driving;
            prev_accels[0] = student_action.accel();

            let episode_done = world.episode_over();
            let mut npcs = Vec::new();
            for (world_index, action, log_prob, value) in sampled {
                let agent = &world.agents[world_index];
                let own = driving_reward(
                    rewards,
                    &agent_step(
                        agent,
                        &world.graph,
                        prev_progress[world_index],
                        prev_accels[world_index],
                        Action::from_index(action).accel(),
                        world.dt,
                        terminal(world_index),
                    ),
                );
                prev_accels[world_index] = Action::from_index(action).accel();
                let d = agent.state.position.distance(world.agents[0].state.position);
                let breakdown = npc_reward(lambda, d, own, student_driving, rewards);
                npcs.push(NpcTransition {
                    world_index,
                    action,
                    log_prob,
                    value,
                    reward: breakdown.total,
                    done: terminal(world_index).is_some() || episode_done,
                    advantage: 0.0,
                    ret: 0.0,
                });
            }
            rollout.scenes.push(SceneStep { obs, npcs });

            let budget_hit = rollout.scenes.len() >= cfg.steps_per_iter;
            if budget_hit && !world.episode_over() {
                // Truncate: bootstrap every still-alive NPC.
                let obs = build_teacher_obs(&world, lambda);
                let out = teacher.forward(teacher_store, &obs);
                let bootstrap = out
                    .per_npc
                    .iter()
                    .map(|n| (n.world_index, n.value))
                    .collect();
                rollout.episodes.push(TeacherEpisode {
                    lambda,
                    outcome: None,
                    scene_range: (episode_start, rollout.scenes.len()),
                    bootstrap,
                });
                break 'outer;
            }
        }
        if world.episode_over() {
            rollout.episodes.push(TeacherEpisode {
                lambda,
                outcome: Some(world.outcome(student_return)),
                scene_range: (episode_start, rollout.scenes.len()),
                bootstrap: BTreeMap::new(),
            });
        }
        if rollout.scenes.len() >= cfg.steps_per_iter {
            break;
        }
    }
    rollout
}

/// Fills advantages and returns for every per-NPC stream in place.
pub fn fill_teacher_advantages(rollout: &mut TeacherRollout, cfg: &PpoConfig) {
    for ep in &rollout.episodes {
        let (start, end) = ep.scene_range;
        // World indices present anywhere in this episode.
        let mut ids: Vec<usize> = rollout.scenes[start..end]
            .iter()
            .flat_map(|s| s.npcs.iter().map(|n| n.world_index))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            let mut slots = Vec::new();
            for (si, scene) in rollout.scenes[start..end].iter().enumerate() {
                if let Some(ni) = scene.npcs.iter().position(|n| n.world_index == id) {
                    slots.push((start + si, ni));
                }
            }
            let rewards: Vec<f64> = slots
                .iter()
                .map(|&(s, n)| rollout.scenes[s].npcs[n].reward)
                .collect();
            let values: Vec<f64> = slots
                .iter()
                .map(|&(s, n)| rollout.scenes[s].npcs[n].value)
                .collect();
            let dones: Vec<bool> = slots
                .iter()
                .map(|&(s, n)| rollout.scenes[s].npcs[n].done)
                .collect();
            let bootstrap = ep.bootstrap.get(&id).copied().unwrap_or(0.0);
            let (adv, ret) =
                compute_gae(&rewards, &values, &dones, cfg.gamma, cfg.gae_lambda, bootstrap);
            for (k, &(s, n)) in slots.iter().enumerate() {
                rollout.scenes[s].npcs[n].advantage = adv[k];
                rollout.scenes[s].npcs[n].ret = ret[k];
            }
        }
    }
}

/// Shared-parameter teacher update over scene-step minibatches: one forward
/// per scene computes all of its NPC heads, and gradients aggregate across
/// every NPC stream.
pub fn ppo_update_teacher(
    store: &mut ParameterStore,
    opt: &mut Adam,
    teacher: &TeacherPolicy,
    rollout: &mut TeacherRollout,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> UpdateStats {
    normalize(
        rollout
            .scenes
            .iter_mut()
            .flat_map(|s| s.npcs.iter_mut().map(|n| &mut n.advantage))
            .collect(),
    );
    let snapshot_store = store.clone();
    let snapshot_opt = opt.clone();
    opt.lr = cfg.lr;

    let mut last = UpdateStats {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
        aborted: false,
    };
    let mut order: Vec<usize> = (0..rollout.scenes.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.minibatch) {
            let mut tape = Tape::new();
            let mut acc = LossAccumulator::new();
            for &i in batch {
                let scene = &rollout.scenes[i];
                if scene.npcs.is_empty() {
                    continue;
                }
                let (heads, _) = teacher.forward_tape(store, &mut tape, &scene.obs, true);
                for t in &scene.npcs {
                    let head = heads
                        .iter()
                        .find(|h| h.world_index == t.world_index)
                        .expect("recorded NPC missing from forward pass");
                    acc.push(
                        &mut tape,
                        head.log_probs,
                        head.value,
                        t.action,
                        t.log_prob,
                        t.advantage,
                        t.ret,
                        cfg.clip_ratio,
                    );
                }
            }
            let Some((loss, stats)) = acc.finish(&mut tape, cfg) else {
                continue;
            };
            if !tape.scalar(loss).is_finite() {
                *store = snapshot_store;
                *opt = snapshot_opt;
                last.aborted = true;
                return last;
            }
            let mut grads = tape.backward(loss);
            clip_global_norm(&mut grads, cfg.max_grad_norm);
            opt.step(store, &grads);
            last = stats;
        }
    }
    debug_assert!(store.all_finite());
    last
}

/// Collects student experience against the given NPC controller until at
/// least `cfg.steps_per_iter` steps, truncating with bootstrap if needed.
#[allow(clippy::too_many_arguments)]
pub fn collect_student_rollouts(
    student_store: &ParameterStore,
    student: &StudentPolicy,
    npc_actor: &mut dyn NpcActor,
    maps: &[Arc<LaneGraph>],
    lambda: f64,
    cfg: &PpoConfig,
    env: &RolloutParams,
    rewards: &RewardParams,
    rng: &mut ChaCha8Rng,
) -> StudentRollout {
    let mut rollout = StudentRollout {
        steps: Vec::new(),
        episodes: Vec::new(),
    };
    'outer: loop {
        let graph = pick_map(maps, rng);
        let mut world = match spawn_world(graph, env.npc_count, rng, env.dt, env.max_steps) {
            Ok(w) => w,
            Err(_) => continue,
        };
        let episode_start = rollout.steps.len();
        let mut prev_accel = 0.0;
        let mut student_return = 0.0;

        while !world.episode_over() {
            let obs = build_student_obs(&world);
            let (lp, value) = student.forward(student_store, &obs);
            let action_idx = sample_categorical(&lp, rng);
            let action = Action::from_index(action_idx);
            let npc_actions = npc_actor.act(&world, rng);

            let prev_progress = world.agents[0].progress;
            let events = world
                .step_episode(&npc_actions, action)
                .expect("stepped a terminal episode");
            let terminal = events.iter().find(|e| e.agent == 0).map(|e| e.cause);
            let reward = driving_reward(
                rewards,
                &agent_step(
                    &world.agents[0],
                    &world.graph,
                    prev_progress,
                    prev_accel,
                    action.accel(),
                    world.dt,
                    terminal,
                ),
            );
            prev_accel = action.accel();
            student_return += reward;
            rollout.steps.push(Transition {
                obs,
                action: action_idx,
                log_prob: lp[action_idx],
                value,
                reward,
                done: world.episode_over(),
                advantage: 0.0,
                ret: 0.0,
            });

            if rollout.steps.len() >= cfg.steps_per_iter && !world.episode_over() {
                let (_, bootstrap) = student.forward(student_store, &build_student_obs(&world));
                rollout.episodes.push(StudentEpisode {
                    lambda,
                    outcome: None,
                    step_range: (episode_start, rollout.steps.len()),
                    bootstrap,
                });
                break 'outer;
            }
        }
        if world.episode_over() {
            rollout.episodes.push(StudentEpisode {
                lambda,
                outcome: Some(world.outcome(student_return)),
                step_range: (episode_start, rollout.steps.len()),
                bootstrap: 0.0,
            });
        }
        if rollout.steps.len() >= cfg.steps_per_iter {
            break;
        }
    }
    rollout
}

/// One frozen-policy episode played to termination: the outcome plus the
/// per-step student speed trace and the mean speed of alive NPCs, for
/// evaluation reports and velocity profiles.
#[derive(Debug, Clone)]
pub struct EpisodePlayback {
    pub outcome: EpisodeOutcome,
    pub student_speeds: Vec<f64>,
    pub npc_mean_speed: f64,
}

/// Plays one full episode with frozen policies on a random map, retrying
/// maps that fail to spawn the requested traffic.
pub fn play_episode(
    student: &mut dyn StudentActor,
    npcs: &mut dyn NpcActor,
    maps: &[Arc<LaneGraph>],
    env: &RolloutParams,
    rewards: &RewardParams,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodePlayback, crate::sim::SimError> {
    let mut world = None;
    for _ in 0..100 {
        let graph = pick_map(maps, rng);
        if let Ok(w) = spawn_world(graph, env.npc_count, rng, env.dt, env.max_steps) {
            world = Some(w);
            break;
        }
    }
    let mut world = world.ok_or(crate::sim::SimError::SpawnFailure)?;
    let mut prev_accel = 0.0;
    let mut student_return = 0.0;
    let mut student_speeds = Vec::new();
    let mut npc_speed_sum = 0.0;
    let mut npc_steps = 0usize;
    while !world.episode_over() {
        let action = student.act(&world, rng);
        let npc_actions = npcs.act(&world, rng);
        let prev_progress = world.agents[0].progress;
        let events = world
            .step_episode(&npc_actions, action)
            .expect("stepped a terminal episode");
        let terminal = events.iter().find(|e| e.agent == 0).map(|e| e.cause);
        student_return += driving_reward(
            rewards,
            &agent_step(
                &world.agents[0],
                &world.graph,
                prev_progress,
                prev_accel,
                action.accel(),
                world.dt,
                terminal,
            ),
        );
        prev_accel = action.accel();
        student_speeds.push(world.agents[0].state.speed());
        for a in world.agents.iter().skip(1).filter(|a| a.state.alive) {
            npc_speed_sum += a.state.speed();
            npc_steps += 1;
        }
    }
    Ok(EpisodePlayback {
        outcome: world.outcome(student_return),
        student_speeds,
        npc_mean_speed: if npc_steps > 0 {
            npc_speed_sum / npc_steps as f64
        } else {
            0.0
        },
    })
}

/// Fills advantages and returns for a student rollout in place.
pub fn fill_student_advantages(rollout: &mut StudentRollout, cfg: &PpoConfig) {
    for ep in &rollout.episodes {
        let (start, end) = ep.step_range;
        let rewards: Vec<f64> = rollout.steps[start..end].iter().map(|t| t.reward).collect();
        let values: Vec<f64> = rollout.steps[start..end].iter().map(|t| t.value).collect();
        let dones: Vec<bool> = rollout.steps[start..end].iter().map(|t| t.done).collect();
        let (adv, ret) =
            compute_gae(&rewards, &values, &dones, cfg.gamma, cfg.gae_lambda, ep.bootstrap);
        for (k, t) in rollout.steps[start..end].iter_mut().enumerate() {
            t.advantage = adv[k];
            t.ret = ret[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane_graph::build_t_intersection;
    use crate::nn::layers::CategoricalHead;
    use crate::rng::stream;
    use crate::teacher::TeacherConfig;

    #[test]
    fn gae_trivial_cases() {
        let (adv, ret) = compute_gae(&[2.0], &[0.5], &[true], 0.99, 0.95, 0.0);
        assert!((adv[0] - 1.5).abs() < 1e-12);
        assert!((ret[0] - 2.0).abs() < 1e-12);

        let (adv, _) = compute_gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.99, 0.95, 0.0);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    /// Hand-unrolled recursion on a 3-step sequence plus a randomized sweep
    /// against a brute-force oracle.
    #[test]
    fn gae_matches_recursive_oracle() {
        let gamma = 0.99;
        let lam = 0.95;
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2];
        let d2 = r[2] + 0.0 - v[2]; // terminal
        let d1 = r[1] + gamma * v[2] - v[1];
        let d0 = r[0] + gamma * v[1] - v[0];
        let a2 = d2;
        let a1 = d1 + gamma * lam * a2;
        let a0 = d0 + gamma * lam * a1;
        let (adv, ret) = compute_gae(&r, &v, &[false, false, true], gamma, lam, 0.0);
        for (got, want) in adv.iter().zip([a0, a1, a2]) {
            assert!((got - want).abs() < 1e-12);
        }
        for i in 0..3 {
            assert!((ret[i] - (adv[i] + v[i])).abs() < 1e-12);
        }

        let mut rng = stream(31, "gae");
        for _ in 0..50 {
            let n = 10;
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut dones = vec![false; n];
            dones[n - 1] = rng.gen_bool(0.5);
            let mid: usize = rng.gen_range(1..n - 1);
            dones[mid] = rng.gen_bool(0.5);
            let bootstrap = rng.gen_range(-1.0..1.0);

            // Brute force: restart the recursion at every done boundary.
            let mut want = vec![0.0; n];
            let mut acc = 0.0;
            for t in (0..n).rev() {
                let next_v = if dones[t] {
                    0.0
                } else if t + 1 < n {
                    v[t + 1]
                } else {
                    bootstrap
                };
                let delta = r[t] + 0.99 * next_v - v[t];
                acc = if dones[t] { delta } else { delta + 0.99 * 0.95 * acc };
                want[t] = acc;
            }
            let (adv, _) = compute_gae(&r, &v, &dones, 0.99, 0.95, bootstrap);
            for i in 0..n {
                assert!((adv[i] - want[i]).abs() < 1e-12, "mismatch at {i}");
            }
        }
    }

    fn bandit_head(seed: u64) -> (ParameterStore, CategoricalHead) {
        let mut store = ParameterStore::new();
        let mut rng = stream(seed, "bandit-init");
        let head = CategoricalHead::new(&mut store, &mut rng, "bandit", 1, 16, 9);
        (store, head)
    }

    fn bandit_forward(
        head: &CategoricalHead,
    ) -> impl Fn(&ParameterStore, &mut Tape, &()) -> (ValueId, ValueId) + '_ {
        move |store, tape, _| {
            let x = tape.constant(vec![1.0]);
            head.forward(store, tape, x)
        }
    }

    fn collect_bandit(
        store: &ParameterStore,
        head: &CategoricalHead,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Transition<()>> {
        let fwd = bandit_forward(head);
        (0..n)
            .map(|_| {
                let mut tape = Tape::new();
                let (lp, v) = fwd(store, &mut tape, &());
                let probs = tape.value(lp).to_vec();
                let action = sample_categorical(&probs, rng);
                let reward = if action == 3 { 1.0 } else { 0.0 };
                Transition {
                    obs: (),
                    action,
                    log_prob: probs[action],
                    value: tape.scalar(v),
                    reward,
                    done: true,
                    advantage: 0.0,
                    ret: 0.0,
                }
            })
            .collect()
    }

    fn fill_bandit(ts: &mut [Transition<()>], cfg: &PpoConfig) {
        for t in ts.iter_mut() {
            let (adv, ret) = compute_gae(
                &[t.reward],
                &[t.value],
                &[true],
                cfg.gamma,
                cfg.gae_lambda,
                0.0,
            );
            t.advantage = adv[0];
            t.ret = ret[0];
        }
    }

    /// Single-state bandit rewarding action 3: the modal action converges
    /// within 50 updates.
    #[test]
    fn bandit_converges_to_rewarded_action() {
        let (mut store, head) = bandit_head(41);
        let cfg = PpoConfig {
            lr: 0.01,
            minibatch: 64,
            steps_per_iter: 64,
            entropy_coef: 0.001,
            ..PpoConfig::default()
        };
        let mut opt = Adam::new(cfg.lr);
        let mut rng = stream(41, "bandit");
        for _ in 0..50 {
            let mut ts = collect_bandit(&store, &head, 64, &mut rng);
            fill_bandit(&mut ts, &cfg);
            let stats = ppo_update(&mut store, &mut opt, bandit_forward(&head), &mut ts, &cfg, &mut rng);
            assert!(!stats.aborted);
        }
        let mut tape = Tape::new();
        let (lp, _) = bandit_forward(&head)(&store, &mut tape, &());
        let probs: Vec<f64> = tape.value(lp).iter().map(|l| l.exp()).collect();
        let modal = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(modal, 3, "modal action probabilities: {probs:?}");
    }

    /// At collection time the ratio is exactly 1, so one minibatch of the
    /// clipped objective (huge clip, no value/entropy terms) must point in
    /// the vanilla policy-gradient direction.
    #[test]
    fn first_update_matches_vanilla_policy_gradient() {
        let (store, head) = bandit_head(42);
        let cfg = PpoConfig {
            clip_ratio: 0.999_999,
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        let mut rng = stream(42, "pg");
        let mut ts = collect_bandit(&store, &head, 32, &mut rng);
        fill_bandit(&mut ts, &cfg);
        normalize(ts.iter_mut().map(|t| &mut t.advantage).collect());

        let fwd = bandit_forward(&head);
        // Clipped surrogate gradient over the full batch.
        let mut tape = Tape::new();
        let mut acc = LossAccumulator::new();
        for t in &ts {
            let (lp, v) = fwd(&store, &mut tape, &());
            acc.push(&mut tape, lp, v, t.action, t.log_prob, t.advantage, t.ret, cfg.clip_ratio);
        }
        let (loss, _) = acc.finish(&mut tape, &cfg).unwrap();
        let g_ppo = tape.backward(loss);

        // Vanilla policy gradient: -mean(log pi(a) * A).
        let mut tape = Tape::new();
        let mut terms = Vec::new();
        for t in &ts {
            let (lp, _) = fwd(&store, &mut tape, &());
            let picked = tape.pick(lp, t.action);
            terms.push(tape.scale(picked, t.advantage));
        }
        let mean = tape.mean_of(&terms);
        let loss = tape.scale(mean, -1.0);
        let g_pg = tape.backward(loss);

        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (name, a) in &g_ppo {
            if let Some(b) = g_pg.get(name) {
                for (x, y) in a.iter().zip(b.iter()) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
            }
        }
        let cosine = dot / (na.sqrt() * nb.sqrt());
        assert!(cosine > 0.99, "cosine {cosine}");
    }

    #[test]
    fn zero_advantages_and_coefs_leave_params_unchanged() {
        let (mut store, head) = bandit_head(43);
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            value_coef: 0.0,
            minibatch: 16,
            epochs: 1,
            ..PpoConfig::default()
        };
        let mut opt = Adam::new(cfg.lr);
        let mut rng = stream(43, "zero-adv");
        let mut ts = collect_bandit(&store, &head, 16, &mut rng);
        for t in &mut ts {
            t.advantage = 0.0;
            t.ret = t.value; // zero value error too
        }
        let before = store.clone();
        ppo_update(&mut store, &mut opt, bandit_forward(&head), &mut ts, &cfg, &mut rng);
        // Tensor contents identical (the mutation counter may tick).
        for name in before.names() {
            assert_eq!(store.get(name), before.get(name), "{name} moved");
        }
    }

    #[test]
    fn non_finite_loss_restores_parameters() {
        let (mut store, head) = bandit_head(44);
        let cfg = PpoConfig::default();
        let mut opt = Adam::new(cfg.lr);
        let mut rng = stream(44, "nan");
        let mut ts = collect_bandit(&store, &head, 8, &mut rng);
        fill_bandit(&mut ts, &cfg);
        ts[3].ret = f64::NAN;
        let before = store.clone();
        let stats = ppo_update(&mut store, &mut opt, bandit_forward(&head), &mut ts, &cfg, &mut rng);
        assert!(stats.aborted);
        assert_eq!(store, before);
        assert_eq!(opt.step_count(), 0);
    }

    fn tiny_setup(seed: u64) -> (ParameterStore, TeacherPolicy, ParameterStore, StudentPolicy, Vec<Arc<LaneGraph>>) {
        let mut tstore = ParameterStore::new();
        let mut rng = stream(seed, "tiny-t");
        let cfg = TeacherConfig {
            embed: 8,
            msg_hidden: 8,
            head_hidden: 8,
            ..TeacherConfig::default()
        };
        let teacher = TeacherPolicy::new(&mut tstore, &mut rng, cfg);
        let mut sstore = ParameterStore::new();
        let mut rng = stream(seed, "tiny-s");
        let student = StudentPolicy::new(&mut sstore, &mut rng, 16);
        let maps = vec![Arc::new(build_t_intersection(25.0, 3.5).unwrap().dilate(2))];
        (tstore, teacher, sstore, student, maps)
    }

    #[test]
    fn teacher_collection_respects_budget_and_streams() {
        let (tstore, teacher, sstore, student, maps) = tiny_setup(45);
        let cfg = PpoConfig {
            steps_per_iter: 10,
            ..PpoConfig::default()
        };
        let env = RolloutParams {
            npc_count: 2,
            dt: 0.1,
            max_steps: 300,
        };
        let mut actor = PolicyStudentActor {
            policy: &student,
            store: &sstore,
        };
        let mut rng = stream(45, "collect");
        let mut lam = |_: &mut ChaCha8Rng| 0.0;
        let rollout = collect_teacher_rollouts(
            &tstore,
            &teacher,
            &mut actor,
            &maps,
            &mut lam,
            &cfg,
            &env,
            &RewardParams::default(),
            &mut rng,
        );
        // Exactly 10 scene steps; no terminals that early, so a single
        // truncated episode with per-NPC bootstrap values.
        assert_eq!(rollout.scenes.len(), 10);
        assert_eq!(rollout.episodes.len(), 1);
        assert!(rollout.episodes[0].outcome.is_none());
        assert_eq!(rollout.episodes[0].bootstrap.len(), 2);
        for scene in &rollout.scenes {
            assert_eq!(scene.npcs.len(), 2);
        }
        assert!(rollout
            .scenes
            .iter()
            .all(|s| s.npcs.iter().all(|n| !n.done)));
    }

    #[test]
    fn dead_npc_stream_ends_with_done() {
        let (tstore, teacher, sstore, student, maps) = tiny_setup(46);
        let cfg = PpoConfig {
            steps_per_iter: 40,
            ..PpoConfig::default()
        };
        let env = RolloutParams {
            npc_count: 3,
            dt: 0.1,
            max_steps: 30,
        };
        let mut actor = PolicyStudentActor {
            policy: &student,
            store: &sstore,
        };
        let mut rng = stream(46, "collect");
        let mut lam = |_: &mut ChaCha8Rng| -1.0;
        let mut rollout = collect_teacher_rollouts(
            &tstore,
            &teacher,
            &mut actor,
            &maps,
            &mut lam,
            &cfg,
            &env,
            &RewardParams::default(),
            &mut rng,
        );
        fill_teacher_advantages(&mut rollout, &cfg);
        // Every completed episode: each NPC stream either runs to the end
        // or terminates with done=true and never reappears.
        for ep in &rollout.episodes {
            if ep.outcome.is_none() {
                continue;
            }
            let (start, end) = ep.scene_range;
            let mut dead: Vec<usize> = Vec::new();
            for scene in &rollout.scenes[start..end] {
                for t in &scene.npcs {
                    assert!(!dead.contains(&t.world_index), "dead NPC kept acting");
                    if t.done {
                        dead.push(t.world_index);
                    }
                    assert!(t.advantage.is_finite() && t.ret.is_finite());
                }
            }
        }
    }

    #[test]
    fn student_rollout_and_update_smoke() {
        let (tstore, teacher, mut sstore, student, maps) = tiny_setup(47);
        let cfg = PpoConfig {
            steps_per_iter: 30,
            minibatch: 16,
            epochs: 2,
            ..PpoConfig::default()
        };
        let env = RolloutParams {
            npc_count: 2,
            dt: 0.1,
            max_steps: 40,
        };
        let mut npc_actor = TeacherNpcActor {
            policy: &teacher,
            store: &tstore,
            lambda: 0.5,
        };
        let mut rng = stream(47, "student");
        let mut rollout = collect_student_rollouts(
            &sstore,
            &student,
            &mut npc_actor,
            &maps,
            0.5,
            &cfg,
            &env,
            &RewardParams::default(),
            &mut rng,
        );
        assert!(rollout.steps.len() >= 30);
        fill_student_advantages(&mut rollout, &cfg);
        let mut opt = Adam::new(cfg.lr);
        let tstore_before = tstore.clone();
        let stats = ppo_update(
            &mut sstore,
            &mut opt,
            |store, tape, obs| student.forward_tape(store, tape, obs),
            &mut rollout.steps,
            &cfg,
            &mut rng,
        );
        assert!(!stats.aborted);
        assert!(sstore.all_finite());
        // Student training never touches teacher parameters.
        assert_eq!(tstore, tstore_before);
    }

    #[test]
    fn teacher_update_smoke_and_determinism() {
        let run = |seed: u64| {
            let (mut tstore, teacher, sstore, student, maps) = tiny_setup(seed);
            let cfg = PpoConfig {
                steps_per_iter: 12,
                minibatch: 4,
                epochs: 1,
                ..PpoConfig::default()
            };
            let env = RolloutParams {
                npc_count: 2,
                dt: 0.1,
                max_steps: 300,
            };
            let mut actor = PolicyStudentActor {
                policy: &student,
                store: &sstore,
            };
            let mut rng = stream(seed, "teacher-upd");
            let mut lam = |r: &mut ChaCha8Rng| if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut rollout = collect_teacher_rollouts(
                &tstore, &teacher, &mut actor, &maps, &mut lam, &cfg, &env,
                &RewardParams::default(), &mut rng,
            );
            fill_teacher_advantages(&mut rollout, &cfg);
            let mut opt = Adam::new(cfg.lr);
            let stats =
                ppo_update_teacher(&mut tstore, &mut opt, &teacher, &mut rollout, &cfg, &mut rng);
            assert!(!stats.aborted);
            assert!(tstore.all_finite());
            (stats, serde_json::to_string(&tstore).unwrap())
        };
        let (s1, p1) = run(48);
        let (s2, p2) = run(48);
        assert_eq!(s1, s2);
        assert_eq!(p1, p2);
    }
}
