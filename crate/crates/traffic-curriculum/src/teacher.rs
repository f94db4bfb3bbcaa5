//! The teacher network: one shared forward pass that turns a full scene
//! observation plus the commanded difficulty `lambda` into a policy and
//! value for every alive NPC.
//!
//! Pipeline: per-agent history encoders (residual conv + GRU, with a
//! road-option embedding for NPCs), a cached two-layer heterogeneous
//! message-passing encoder over the lane graph, four sequential fusion
//! layers (agent-to-map, map-to-map, map-to-agent, agent-to-agent), then a
//! lambda-conditioned actor-critic head shared across NPCs. All features
//! are relative, so outputs are invariant to rigid scene transforms.

use std::cell::RefCell;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lane_graph::{LaneGraph, ALL_RELATIONS};
use crate::math::Pose;
use crate::nn::layers::{
    Activation, CategoricalHead, Conv1dResidual, Dense, Edge, GruCell, MessagePass, Mlp,
};
use crate::nn::params::ParameterStore;
use crate::nn::tape::{Tape, ValueId};
use crate::observation::{
    encode_pair, history_features, AgentObs, TeacherObservation, HISTORY_FEATURES, REL_POS_DIM,
};
use crate::sim::{ACTION_COUNT, HISTORY_LEN};

/// Map-node attribute vector: node-type one-hot plus intrinsic geometry.
const NODE_ATTR_DIM: usize = 6;
const ROAD_OPTIONS: usize = 3;
/// Map-to-map fusion edges carry the relation one-hot after the pose encoding.
const MAP_EDGE_DIM: usize = REL_POS_DIM + ALL_RELATIONS.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// Embedding width used throughout the network.
    pub embed: usize,
    /// Hidden width of the message MLPs.
    pub msg_hidden: usize,
    /// Hidden width of the actor-critic trunk.
    pub head_hidden: usize,
    /// Agent-to-map attention radius, meters.
    pub r_att: f64,
    /// Agent-to-agent attention radius, meters.
    pub r_agent: f64,
    /// Number of message-passing layers in the cached map encoder.
    pub map_layers: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            embed: 64,
            msg_hidden: 64,
            head_hidden: 64,
            r_att: 20.0,
            r_agent: 30.0,
            map_layers: 2,
        }
    }
}

#[derive(Debug, Clone)]
struct MapCache {
    map_id: String,
    param_version: u64,
    embeddings: Vec<Vec<f64>>,
}

/// Per-NPC head output of one forward pass.
#[derive(Debug, Clone)]
pub struct NpcHead {
    /// Index of this NPC in `World::agents`.
    pub world_index: usize,
    pub log_probs: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct TeacherOutput {
    /// Sorted by world index; one entry per alive NPC.
    pub per_npc: Vec<NpcHead>,
    /// Whether the map encoding came from the scenario cache.
    pub cached_map: bool,
}

/// Fused per-entity embeddings on a tape, student first among agents.
pub struct SceneEmbedding {
    pub agents: Vec<ValueId>,
    pub map_nodes: Vec<ValueId>,
    pub cached_map: bool,
}

/// Tape handles for one NPC's policy and value, used during updates.
pub struct NpcHeadNodes {
    pub world_index: usize,
    pub log_probs: ValueId,
    pub value: ValueId,
}

pub struct TeacherPolicy {
    pub cfg: TeacherConfig,
    history_conv: Conv1dResidual,
    history_gru: GruCell,
    option_embed: Dense,
    agent_combine: Mlp,
    node_attr: Mlp,
    // One message-passing block per relation per map-encoder layer.
    map_encoder: Vec<Vec<MessagePass>>,
    fuse_agent_to_map: MessagePass,
    fuse_map_to_map: MessagePass,
    fuse_map_to_agent: MessagePass,
    fuse_agent_to_agent: MessagePass,
    lambda_embed: Dense,
    npc_fusion: Mlp,
    head: CategoricalHead,
    cache: RefCell<Option<MapCache>>,
}

impl TeacherPolicy {
    /// Registers all parameters under the `teacher.` prefix.
    pub fn new(store: &mut ParameterStore, rng: &mut ChaCha8Rng, cfg: TeacherConfig) -> Self {
        let e = cfg.embed;
        let h = cfg.msg_hidden;
        let map_encoder = (0..cfg.map_layers)
            .map(|layer| {
                ALL_RELATIONS
                    .iter()
                    .enumerate()
                    .map(|(r, _)| {
                        MessagePass::new(
                            store,
                            rng,
                            &format!("teacher.map.{layer}.{r}"),
                            e,
                            REL_POS_DIM,
                            h,
                        )
                    })
                    .collect()
            })
            .collect();
        TeacherPolicy {
            history_conv: Conv1dResidual::new(store, rng, "teacher.hist.conv", HISTORY_FEATURES, e, 3),
            history_gru: GruCell::new(store, rng, "teacher.hist.gru", e, e),
            option_embed: Dense::new(store, rng, "teacher.opt", ROAD_OPTIONS, e, Activation::Tanh),
            agent_combine: Mlp::new(
                store,
                rng,
                "teacher.agent",
                &[2 * e + 1, e, e],
                Activation::Relu,
                Activation::Identity,
            ),
            node_attr: Mlp::new(
                store,
                rng,
                "teacher.node",
                &[NODE_ATTR_DIM, e, e],
                Activation::Relu,
                Activation::Identity,
            ),
            map_encoder,
            fuse_agent_to_map: MessagePass::new(store, rng, "teacher.fuse.am", e, REL_POS_DIM, h),
            fuse_map_to_map: MessagePass::new(store, rng, "teacher.fuse.mm", e, MAP_EDGE_DIM, h),
            fuse_map_to_agent: MessagePass::new(store, rng, "teacher.fuse.ma", e, REL_POS_DIM, h),
            fuse_agent_to_agent: MessagePass::new(store, rng, "teacher.fuse.aa", e, REL_POS_DIM, h),
            lambda_embed: Dense::new(store, rng, "teacher.lambda", 1, e, Activation::Identity),
            npc_fusion: Mlp::new(
                store,
                rng,
                "teacher.npcfuse",
                &[2 * e, e, e],
                Activation::Relu,
                Activation::Identity,
            ),
            head: CategoricalHead::new(store, rng, "teacher.head", 2 * e, cfg.head_hidden, ACTION_COUNT),
            cfg,
            cache: RefCell::new(None),
        }
    }

    pub fn clear_cache(&self) {
        *self.cache.borrow_mut() = None;
    }

    fn node_pose(graph: &LaneGraph, id: usize) -> Pose {
        let n = &graph.nodes()[id];
        Pose::new(n.position, n.heading)
    }

    fn node_attributes(graph: &LaneGraph, id: usize) -> Vec<f64> {
        let n = &graph.nodes()[id];
        let mut attrs = vec![0.0; NODE_ATTR_DIM];
        attrs[n.node_type as usize] = 1.0;
        attrs[3] = n.length;
        attrs[4] = n.width;
        attrs[5] = n.curvature;
        attrs
    }

    /// Map encoder built inside the given tape, so gradients can flow.
    pub fn encode_map_tape(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        graph: &LaneGraph,
    ) -> Vec<ValueId> {
        let mut nodes: Vec<ValueId> = (0..graph.nodes().len())
            .map(|i| {
                let attrs = tape.constant(Self::node_attributes(graph, i));
                self.node_attr.forward(store, tape, attrs)
            })
            .collect();
        for layer in &self.map_encoder {
            for (r, pass) in layer.iter().enumerate() {
                let relation = ALL_RELATIONS[r];
                let edges: Vec<Edge> = graph
                    .relation_edges(relation)
                    .iter()
                    .map(|&(src, dst)| {
                        let enc = encode_pair(
                            &Self::node_pose(graph, src),
                            &Self::node_pose(graph, dst),
                        );
                        Edge {
                            src,
                            dst,
                            feat: tape.constant(enc.to_array().to_vec()),
                        }
                    })
                    .collect();
                nodes = pass.forward(store, tape, &nodes, &edges);
            }
        }
        nodes
    }

    /// Cached no-grad map encoding, keyed by (map id, parameter version).
    /// Returns the embeddings and whether they came from the cache.
    pub fn encode_map(&self, store: &ParameterStore, graph: &LaneGraph) -> (Vec<Vec<f64>>, bool) {
        let map_id = graph.map_id();
        let version = store.version();
        if let Some(c) = self.cache.borrow().as_ref() {
            if c.map_id == map_id && c.param_version == version {
                return (c.embeddings.clone(), true);
            }
        }
        let mut tape = Tape::new();
        let ids = self.encode_map_tape(store, &mut tape, graph);
        let embeddings: Vec<Vec<f64>> = ids.iter().map(|&id| tape.value(id).to_vec()).collect();
        *self.cache.borrow_mut() = Some(MapCache {
            map_id,
            param_version: version,
            embeddings: embeddings.clone(),
        });
        (embeddings, false)
    }

    fn encode_one_agent(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        obs: &AgentObs,
    ) -> ValueId {
        let rows = history_features(&obs.history);
        debug_assert_eq!(rows.len(), HISTORY_LEN);
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let seq = tape.constant(flat);
        let conv = self
            .history_conv
            .forward(store, tape, seq, HISTORY_LEN);
        let hist = self
            .history_gru
            .run(store, tape, conv, HISTORY_LEN, self.cfg.embed);
        let mut onehot = vec![0.0; ROAD_OPTIONS];
        if let Some(opt) = obs.road_option {
            onehot[opt.index()] = 1.0;
        }
        let opt_in = tape.constant(onehot);
        let opt = self.option_embed.forward(store, tape, opt_in);
        let flag = tape.constant(vec![if obs.is_student { 1.0 } else { 0.0 }]);
        let packed = tape.concat(&[hist, opt, flag]);
        self.agent_combine.forward(store, tape, packed)
    }

    /// Per-agent history embeddings, student first then NPCs sorted by
    /// world index. Returns (embeddings, matching agent observations).
    pub fn encode_agents<'a>(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        obs: &'a TeacherObservation,
    ) -> (Vec<ValueId>, Vec<(usize, &'a AgentObs)>) {
        // Canonical (world-index) order keeps aggregation order, and hence
        // floating-point results, independent of how the caller permuted
        // the NPC list.
        let mut order: Vec<&(usize, AgentObs)> = obs.npcs.iter().collect();
        order.sort_by_key(|(w, _)| *w);
        let mut agents = vec![(usize::MAX, &obs.student)];
        agents.extend(order.iter().map(|(w, a)| (*w, a)));
        let ids = agents
            .iter()
            .map(|(_, a)| self.encode_one_agent(store, tape, a))
            .collect();
        let metas = agents.iter().map(|(w, a)| (*w, *a)).collect();
        (ids, metas)
    }

    /// The four sequential interaction layers over agents and map nodes.
    pub fn fuse_interactions(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        agent_ids: &[ValueId],
        agent_poses: &[Pose],
        map_ids: &[ValueId],
        graph: &LaneGraph,
        cached_map: bool,
    ) -> SceneEmbedding {
        let n_agents = agent_ids.len();
        let n_map = map_ids.len();
        let mut nodes: Vec<ValueId> = agent_ids.iter().chain(map_ids.iter()).copied().collect();

        let pose_edge = |tape: &mut Tape, src: &Pose, dst: &Pose| {
            tape.constant(encode_pair(src, dst).to_array().to_vec())
        };

        // 1. Agent to map.
        let mut edges = Vec::new();
        for (a, pose) in agent_poses.iter().enumerate() {
            for m in 0..n_map {
                let mp = Self::node_pose(graph, m);
                if pose.position.distance(mp.position) <= self.cfg.r_att {
                    edges.push(Edge {
                        src: a,
                        dst: n_agents + m,
                        feat: pose_edge(tape, pose, &mp),
                    });
                }
            }
        }
        nodes = self.fuse_agent_to_map.forward(store, tape, &nodes, &edges);

        // 2. Map to map over all four lane relations, relation one-hot
        // appended to the pose encoding.
        let mut edges = Vec::new();
        for (r, relation) in ALL_RELATIONS.iter().enumerate() {
            for &(src, dst) in graph.relation_edges(*relation) {
                let enc = encode_pair(&Self::node_pose(graph, src), &Self::node_pose(graph, dst));
                let mut feat = enc.to_array().to_vec();
                let mut onehot = vec![0.0; ALL_RELATIONS.len()];
                onehot[r] = 1.0;
                feat.extend(onehot);
                edges.push(Edge {
                    src: n_agents + src,
                    dst: n_agents + dst,
                    feat: tape.constant(feat),
                });
            }
        }
        nodes = self.fuse_map_to_map.forward(store, tape, &nodes, &edges);

        // 3. Map to agent.
        let mut edges = Vec::new();
        for (a, pose) in agent_poses.iter().enumerate() {
            for m in 0..n_map {
                let mp = Self::node_pose(graph, m);
                if pose.position.distance(mp.position) <= self.cfg.r_att {
                    edges.push(Edge {
                        src: n_agents + m,
                        dst: a,
                        feat: pose_edge(tape, &mp, pose),
                    });
                }
            }
        }
        nodes = self.fuse_map_to_agent.forward(store, tape, &nodes, &edges);

        // 4. Agent to agent, both directions.
        let mut edges = Vec::new();
        for i in 0..n_agents {
            for j in 0..n_agents {
                if i != j
                    && agent_poses[i]
                        .position
                        .distance(agent_poses[j].position)
                        <= self.cfg.r_agent
                {
                    edges.push(Edge {
                        src: i,
                        dst: j,
                        feat: pose_edge(tape, &agent_poses[i], &agent_poses[j]),
                    });
                }
            }
        }
        nodes = self.fuse_agent_to_agent.forward(store, tape, &nodes, &edges);

        SceneEmbedding {
            agents: nodes[..n_agents].to_vec(),
            map_nodes: nodes[n_agents..].to_vec(),
            cached_map,
        }
    }

    /// Full forward on an existing tape. With `grad_mode` the map encoder is
    /// rebuilt inside the tape so its parameters receive gradients;
    /// otherwise the cached per-scenario encoding is injected as constants.
    pub fn forward_tape(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        obs: &TeacherObservation,
        grad_mode: bool,
    ) -> (Vec<NpcHeadNodes>, bool) {
        debug_assert!((-1.0..=1.0).contains(&obs.lambda));
        let (map_ids, cached) = if grad_mode {
            (self.encode_map_tape(store, tape, &obs.graph), false)
        } else {
            let (values, hit) = self.encode_map(store, &obs.graph);
            (
                values.into_iter().map(|v| tape.constant(v)).collect(),
                hit,
            )
        };
        let (agent_ids, metas) = self.encode_agents(store, tape, obs);
        let poses: Vec<Pose> = metas.iter().map(|(_, a)| a.pose).collect();
        let scene = self.fuse_interactions(
            store, tape, &agent_ids, &poses, &map_ids, &obs.graph, cached,
        );

        let lam_in = tape.constant(vec![obs.lambda]);
        let lam = self.lambda_embed.forward(store, tape, lam_in);
        let mut out = Vec::new();
        for (slot, (world_index, _)) in metas.iter().enumerate() {
            if *world_index == usize::MAX {
                continue; // the student gets no policy head
            }
            let packed = tape.concat(&[scene.agents[slot], lam]);
            let fused = self.npc_fusion.forward(store, tape, packed);
            let head_in = tape.concat(&[fused, lam]);
            let (log_probs, value) = self.head.forward(store, tape, head_in);
            out.push(NpcHeadNodes {
                world_index: *world_index,
                log_probs,
                value,
            });
        }
        (out, scene.cached_map)
    }

    /// No-grad inference convenience.
    pub fn forward(&self, store: &ParameterStore, obs: &TeacherObservation) -> TeacherOutput {
        let mut tape = Tape::new();
        let (nodes, cached_map) = self.forward_tape(store, &mut tape, obs, false);
        TeacherOutput {
            per_npc: nodes
                .into_iter()
                .map(|n| NpcHead {
                    world_index: n.world_index,
                    log_probs: tape.value(n.log_probs).to_vec(),
                    value: tape.scalar(n.value),
                })
                .collect(),
            cached_map,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane_graph::{build_t_intersection, LaneGraph, MapDocument, RoadOption};
    use crate::math::Vec2;
    use crate::nn::testutil::finite_difference_check;
    use crate::observation::build_teacher_obs;
    use crate::rng::stream;
    use crate::sim::{spawn_world, Action, AgentState, World};
    use std::sync::Arc;

    fn small_cfg() -> TeacherConfig {
        TeacherConfig {
            embed: 8,
            msg_hidden: 8,
            head_hidden: 8,
            ..TeacherConfig::default()
        }
    }

    fn test_world(npcs: usize, seed: u64) -> World {
        let graph = Arc::new(build_t_intersection(25.0, 3.5).unwrap().dilate(2));
        let mut rng = stream(seed, "teacher-test");
        let mut world = spawn_world(graph, npcs, &mut rng, 0.1, 300).unwrap();
        // Accelerating warm-up so every history row carries real motion
        // (keeps conv pre-activations away from the relu kink at zero).
        for _ in 0..10 {
            let acts = vec![Action::new(2, 1); world.npc_count()];
            world.step_episode(&acts, Action::new(2, 1)).unwrap();
        }
        world
    }

    fn policy(seed: u64) -> (ParameterStore, TeacherPolicy) {
        let mut store = ParameterStore::new();
        let mut rng = stream(seed, "teacher-init");
        let policy = TeacherPolicy::new(&mut store, &mut rng, small_cfg());
        (store, policy)
    }

    #[test]
    fn map_cache_hits_bit_identical() {
        let (store, policy) = policy(1);
        let graph = build_t_intersection(25.0, 3.5).unwrap().dilate(2);
        let (first, hit1) = policy.encode_map(&store, &graph);
        let (second, hit2) = policy.encode_map(&store, &graph);
        assert!(!hit1);
        assert!(hit2);
        assert_eq!(first, second);
    }

    #[test]
    fn map_cache_invalidated_by_param_change() {
        let (mut store, policy) = policy(2);
        let graph = build_t_intersection(25.0, 3.5).unwrap().dilate(2);
        let (first, _) = policy.encode_map(&store, &graph);
        store.apply(|_, d| d.iter_mut().for_each(|x| *x += 0.01));
        let (second, hit) = policy.encode_map(&store, &graph);
        assert!(!hit);
        assert_ne!(first, second);
    }

    #[test]
    fn identical_agents_share_embeddings() {
        let (store, policy) = policy(3);
        let world = test_world(2, 11);
        let mut obs = build_teacher_obs(&world, 0.0);
        // Clone NPC 1's observation into NPC 2's slot.
        let copy = obs.npcs[0].1.clone();
        obs.npcs[1].1 = copy;
        let mut tape = Tape::new();
        let (ids, _) = policy.encode_agents(&store, &mut tape, &obs);
        assert_eq!(tape.value(ids[1]), tape.value(ids[2]));
    }

    #[test]
    fn road_option_changes_embedding() {
        let (store, policy) = policy(4);
        let world = test_world(1, 12);
        let obs = build_teacher_obs(&world, 0.0);
        let mut alt = obs.clone();
        let current = alt.npcs[0].1.road_option.unwrap();
        alt.npcs[0].1.road_option = Some(match current {
            RoadOption::Left => RoadOption::Right,
            _ => RoadOption::Left,
        });
        let mut t1 = Tape::new();
        let (a, _) = policy.encode_agents(&store, &mut t1, &obs);
        let mut t2 = Tape::new();
        let (b, _) = policy.encode_agents(&store, &mut t2, &alt);
        assert_ne!(t1.value(a[1]), t2.value(b[1]));
    }

    #[test]
    fn lambda_changes_policy() {
        let (store, policy) = policy(5);
        let world = test_world(2, 13);
        let hard = policy.forward(&store, &build_teacher_obs(&world, -1.0));
        let easy = policy.forward(&store, &build_teacher_obs(&world, 1.0));
        assert_ne!(hard.per_npc[0].log_probs, easy.per_npc[0].log_probs);
    }

    #[test]
    fn zero_actor_head_gives_uniform_policy() {
        let (mut store, policy) = policy(6);
        store.set(
            "teacher.head.pi.w",
            vec![0.0; store.get("teacher.head.pi.w").data.len()],
        );
        let world = test_world(2, 14);
        let out = policy.forward(&store, &build_teacher_obs(&world, -0.5));
        let want = (1.0f64 / ACTION_COUNT as f64).ln();
        for npc in &out.per_npc {
            for &lp in &npc.log_probs {
                assert!((lp - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn npc_permutation_equivariance() {
        let (store, policy) = policy(7);
        let world = test_world(3, 15);
        let obs = build_teacher_obs(&world, 0.3);
        let mut permuted = obs.clone();
        permuted.npcs.rotate_left(1);
        let a = policy.forward(&store, &obs);
        policy.clear_cache();
        let b = policy.forward(&store, &permuted);
        assert_eq!(a.per_npc.len(), b.per_npc.len());
        for (x, y) in a.per_npc.iter().zip(b.per_npc.iter()) {
            assert_eq!(x.world_index, y.world_index);
            assert_eq!(x.log_probs, y.log_probs);
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn output_count_tracks_alive_npcs() {
        let (store, policy) = policy(8);
        let mut world = test_world(3, 16);
        let obs = build_teacher_obs(&world, 0.0);
        assert_eq!(policy.forward(&store, &obs).per_npc.len(), 3);
        world.agents[2].state.alive = false;
        let obs = build_teacher_obs(&world, 0.0);
        assert_eq!(policy.forward(&store, &obs).per_npc.len(), 2);
    }

    fn rigid_transform_graph(graph: &LaneGraph, angle: f64, shift: Vec2) -> LaneGraph {
        let mut doc: MapDocument = graph.to_document();
        for n in &mut doc.nodes {
            n.position = n.position.rotate(angle) + shift;
            n.heading = crate::math::wrap_angle(n.heading + angle);
        }
        LaneGraph::from_document(doc).unwrap()
    }

    fn rigid_transform_state(s: &AgentState, angle: f64, shift: Vec2) -> AgentState {
        let mut out = s.clone();
        out.position = s.position.rotate(angle) + shift;
        out.heading = crate::math::wrap_angle(s.heading + angle);
        out.velocity = s.velocity.rotate(angle);
        out.acceleration = s.acceleration.rotate(angle);
        out
    }

    #[test]
    fn rigid_scene_transform_leaves_outputs_unchanged() {
        let (store, policy) = policy(9);
        let world = test_world(2, 17);
        let obs = build_teacher_obs(&world, -0.4);
        let base = policy.forward(&store, &obs);

        let angle = 1.1;
        let shift = Vec2::new(42.0, -17.0);
        let mut moved = obs.clone();
        moved.graph = Arc::new(rigid_transform_graph(&obs.graph, angle, shift));
        let move_obs = |a: &mut crate::observation::AgentObs| {
            for s in &mut a.history {
                *s = rigid_transform_state(s, angle, shift);
            }
            a.pose = Pose::new(
                a.pose.position.rotate(angle) + shift,
                crate::math::wrap_angle(a.pose.heading + angle),
            );
        };
        move_obs(&mut moved.student);
        for (_, a) in &mut moved.npcs {
            move_obs(a);
        }
        policy.clear_cache();
        let shifted = policy.forward(&store, &moved);
        for (x, y) in base.per_npc.iter().zip(shifted.per_npc.iter()) {
            for (a, b) in x.log_probs.iter().zip(y.log_probs.iter()) {
                assert!((a - b).abs() < 1e-5);
            }
            assert!((x.value - y.value).abs() < 1e-5);
        }
    }

    /// Finite-difference check of a scalar loss through the whole network,
    /// map encoder included, on a tiny scene.
    #[test]
    fn full_network_gradients_match_finite_differences() {
        let mut store = ParameterStore::new();
        // Init chosen so no ReLU pre-activation sits within the FD step of
        // its kink on this scene.
        let mut rng = stream(2, "teacher-init");
        let cfg = TeacherConfig {
            embed: 4,
            msg_hidden: 4,
            head_hidden: 4,
            map_layers: 1,
            ..TeacherConfig::default()
        };
        let policy = TeacherPolicy::new(&mut store, &mut rng, cfg);
        let world = test_world(2, 22);
        let obs = build_teacher_obs(&world, -0.6);
        finite_difference_check(
            &mut store,
            |store, tape| {
                let (heads, _) = policy.forward_tape(store, tape, &obs, true);
                let mut terms = Vec::new();
                for h in &heads {
                    terms.push(tape.pick(h.log_probs, 4));
                    terms.push(h.value);
                }
                let cat = tape.concat(&terms);
                tape.sum(cat)
            },
            1e-5,
            1e-3,
        );
    }
}

