//! Vectorized lane-graph map representation: typed lane-segment nodes with
//! multi-relation edges, procedural T/X intersection generators, relation
//! dilation, and route sampling.
//!
//! Edges are stored undilated; `dilate` derives k-hop successor/predecessor
//! views up to the dilation power without touching the base relations, so
//! routes and simulation always run on the physical topology.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::math::{point_segment_distance, wrap_angle, Vec2};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Normal,
    Intersection,
    Crosswalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Predecessor,
    Successor,
    LeftNeighbor,
    RightNeighbor,
}

pub const ALL_RELATIONS: [Relation; 4] = [
    Relation::Predecessor,
    Relation::Successor,
    Relation::LeftNeighbor,
    Relation::RightNeighbor,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadOption {
    Straight,
    Left,
    Right,
}

impl RoadOption {
    pub fn index(self) -> usize {
        match self {
            RoadOption::Straight => 0,
            RoadOption::Left => 1,
            RoadOption::Right => 2,
        }
    }
}

/// One lane segment: midpoint pose plus geometric attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneNode {
    pub id: NodeId,
    pub position: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub curvature: f64,
    pub node_type: NodeType,
}

#[derive(Debug, Error)]
pub enum LaneGraphError {
    #[error("invalid dimensions: arm_length must satisfy arm_length >= 4*lane_width > 0 (got arm_length={arm_length}, lane_width={lane_width})")]
    InvalidDimensions { arm_length: f64, lane_width: f64 },
    #[error("node {0} has no route through the intersection")]
    NoConnector(NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("edge references unknown node ({0}, {1})")]
    DanglingEdge(NodeId, NodeId),
    #[error("unsupported map format version {0}")]
    UnsupportedVersion(u32),
    #[error("map io: {0}")]
    Io(#[from] std::io::Error),
    #[error("map parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneGraph {
    nodes: Vec<LaneNode>,
    /// Undilated relations; predecessor is always the exact reverse of successor.
    base_edges: BTreeMap<Relation, Vec<(NodeId, NodeId)>>,
    dilation_power: u32,
    /// Derived: union of k-hop successor reachability for k = 1..=dilation_power+1.
    dilated_successors: Vec<(NodeId, NodeId)>,
    dilated_predecessors: Vec<(NodeId, NodeId)>,
}

/// Route from a spawn node through the intersection to a goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub node_ids: Vec<NodeId>,
    pub road_option: RoadOption,
    pub goal_position: Vec2,
}

impl LaneGraph {
    pub fn new(
        nodes: Vec<LaneNode>,
        mut edges: BTreeMap<Relation, Vec<(NodeId, NodeId)>>,
    ) -> Result<Self, LaneGraphError> {
        for rel in ALL_RELATIONS {
            edges.entry(rel).or_default();
        }
        // Predecessors are derived so the reversal invariant holds by construction.
        let preds: Vec<(NodeId, NodeId)> = edges[&Relation::Successor]
            .iter()
            .map(|&(a, b)| (b, a))
            .collect();
        edges.insert(Relation::Predecessor, preds);
        let graph = LaneGraph {
            dilated_successors: edges[&Relation::Successor].clone(),
            dilated_predecessors: edges[&Relation::Predecessor].clone(),
            nodes,
            base_edges: edges,
            dilation_power: 0,
        };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<(), LaneGraphError> {
        let n = self.nodes.len();
        for pairs in self.base_edges.values() {
            for &(a, b) in pairs {
                if a >= n || b >= n {
                    return Err(LaneGraphError::DanglingEdge(a, b));
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[LaneNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&LaneNode, LaneGraphError> {
        self.nodes.get(id).ok_or(LaneGraphError::UnknownNode(id))
    }

    pub fn dilation_power(&self) -> u32 {
        self.dilation_power
    }

    /// Undilated edges of one relation.
    pub fn base_edges(&self, relation: Relation) -> &[(NodeId, NodeId)] {
        &self.base_edges[&relation]
    }

    /// Relation edges as seen by encoders: successor/predecessor are dilated,
    /// neighbor relations pass through unchanged.
    pub fn relation_edges(&self, relation: Relation) -> &[(NodeId, NodeId)] {
        match relation {
            Relation::Successor => &self.dilated_successors,
            Relation::Predecessor => &self.dilated_predecessors,
            _ => &self.base_edges[&relation],
        }
    }

    pub fn successors(&self, id: NodeId) -> Vec<NodeId> {
        self.base_edges[&Relation::Successor]
            .iter()
            .filter(|&&(a, _)| a == id)
            .map(|&(_, b)| b)
            .collect()
    }

    /// k-hop closure over the base successor relation, k = 1..=d+1.
    pub fn dilate(&self, d: u32) -> LaneGraph {
        let succ: BTreeSet<(NodeId, NodeId)> = self.base_edges[&Relation::Successor]
            .iter()
            .copied()
            .collect();
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for &(a, b) in &succ {
            adj.entry(a).or_default().push(b);
        }
        let mut closure: BTreeSet<(NodeId, NodeId)> = succ.clone();
        let mut frontier = succ;
        for _ in 0..d {
            let mut next = BTreeSet::new();
            for &(a, b) in &frontier {
                if let Some(targets) = adj.get(&b) {
                    for &c in targets {
                        next.insert((a, c));
                    }
                }
            }
            closure.extend(next.iter().copied());
            frontier = next;
        }
        let dilated_successors: Vec<(NodeId, NodeId)> = closure.into_iter().collect();
        let dilated_predecessors = dilated_successors.iter().map(|&(a, b)| (b, a)).collect();
        LaneGraph {
            nodes: self.nodes.clone(),
            base_edges: self.base_edges.clone(),
            dilation_power: d,
            dilated_successors,
            dilated_predecessors,
        }
    }

    /// Content hash identifying the map (used for caches and log headers).
    pub fn map_id(&self) -> String {
        let doc = self.to_document();
        let bytes = serde_json::to_vec(&doc).expect("map serialization");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Sample a route crossing the intersection exactly once, deterministic in the seed.
    pub fn sample_route(&self, spawn: NodeId, rng_seed: u64) -> Result<Route, LaneGraphError> {
        let spawn_node = self.node(spawn)?;
        if spawn_node.node_type != NodeType::Normal {
            return Err(LaneGraphError::NoConnector(spawn));
        }
        // Walk the inbound chain until the connectors fan out.
        let mut node_ids = vec![spawn];
        let mut cursor = spawn;
        let connectors = loop {
            let next = self.successors(cursor);
            if next.is_empty() {
                return Err(LaneGraphError::NoConnector(spawn));
            }
            let conns: Vec<NodeId> = next
                .iter()
                .copied()
                .filter(|&id| self.nodes[id].node_type == NodeType::Intersection)
                .collect();
            if !conns.is_empty() {
                break conns;
            }
            if next.len() != 1 || self.nodes[next[0]].node_type != NodeType::Normal {
                return Err(LaneGraphError::NoConnector(spawn));
            }
            cursor = next[0];
            node_ids.push(cursor);
            if node_ids.len() > self.nodes.len() {
                return Err(LaneGraphError::NoConnector(spawn));
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let connector = connectors[rng.gen_range(0..connectors.len())];
        let road_option = self.turn_direction(node_ids[node_ids.len() - 1], connector)?;
        node_ids.push(connector);
        // Follow the outbound chain to the arm end.
        let mut cursor = connector;
        loop {
            let next: Vec<NodeId> = self
                .successors(cursor)
                .into_iter()
                .filter(|&id| self.nodes[id].node_type == NodeType::Normal)
                .collect();
            if next.is_empty() {
                break;
            }
            cursor = next[0];
            node_ids.push(cursor);
            if node_ids.len() > self.nodes.len() {
                break;
            }
        }
        let last = &self.nodes[*node_ids.last().unwrap()];
        let goal_position =
            last.position + Vec2::from_angle(last.heading).scale(last.length / 2.0);
        Ok(Route {
            node_ids,
            road_option,
            goal_position,
        })
    }

    /// Classify a connector by the heading change between its approach node
    /// and its first outbound successor.
    fn turn_direction(
        &self,
        approach: NodeId,
        connector: NodeId,
    ) -> Result<RoadOption, LaneGraphError> {
        let out = self
            .successors(connector)
            .into_iter()
            .find(|&id| self.nodes[id].node_type == NodeType::Normal)
            .ok_or(LaneGraphError::NoConnector(connector))?;
        let delta = wrap_angle(self.nodes[out].heading - self.nodes[approach].heading);
        Ok(if delta.abs() < 0.3 {
            RoadOption::Straight
        } else if delta > 0.0 {
            RoadOption::Left
        } else {
            RoadOption::Right
        })
    }

    /// All normal nodes that can start a route (inbound approach nodes).
    pub fn inbound_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&id| {
                self.nodes[id].node_type == NodeType::Normal
                    && self.sample_route(id, 0).is_ok()
            })
            .collect()
    }

    /// Drivable region: union of per-node capsules plus an inflated box over
    /// the intersection area. The boundary counts as on-road.
    pub fn drivable_region(&self) -> DrivableRegion {
        let mut capsules = Vec::new();
        let mut junction: Option<(Vec2, Vec2)> = None;
        let mut max_w: f64 = 0.0;
        for node in &self.nodes {
            let half = Vec2::from_angle(node.heading).scale(node.length / 2.0);
            if node.curvature.abs() > 1e-9 {
                // Curved connectors: chain short capsules along the arc; a
                // single chord capsule would miss most of the turn pavement.
                let r = 1.0 / node.curvature;
                let center = node.position + Vec2::from_angle(node.heading).perp().scale(r);
                let sweep = node.length * node.curvature;
                let base = node.position - center;
                let steps = ((node.length / 2.0).ceil() as usize).max(1);
                let at = |k: usize| {
                    center + base.rotate(sweep * (k as f64 / steps as f64 - 0.5))
                };
                for k in 0..steps {
                    capsules.push(Capsule {
                        a: at(k),
                        b: at(k + 1),
                        half_width: node.width / 2.0,
                    });
                }
            } else {
                capsules.push(Capsule {
                    a: node.position - half,
                    b: node.position + half,
                    half_width: node.width / 2.0,
                });
            }
            if node.node_type == NodeType::Intersection {
                // Span the full connector extent, not just its midpoint: the
                // turn arcs sweep well away from their chord capsules.
                max_w = max_w.max(node.width);
                for p in [node.position - half, node.position + half] {
                    junction = Some(match junction {
                        None => (p, p),
                        Some((lo, hi)) => (
                            Vec2::new(lo.x.min(p.x), lo.y.min(p.y)),
                            Vec2::new(hi.x.max(p.x), hi.y.max(p.y)),
                        ),
                    });
                }
            }
        }
        // Full lane width of apron: junction corners are paved generously,
        // like the rounded aprons of real intersections.
        let junction_box = junction.map(|(lo, hi)| {
            let m = max_w;
            (Vec2::new(lo.x - m, lo.y - m), Vec2::new(hi.x + m, hi.y + m))
        });
        DrivableRegion {
            capsules,
            junction_box,
        }
    }

    // --- serialization -----------------------------------------------------

    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            version: MAP_FORMAT_VERSION,
            nodes: self.nodes.clone(),
            edges: self
                .base_edges
                .iter()
                .map(|(rel, pairs)| (*rel, pairs.clone()))
                .collect(),
            dilation_power: self.dilation_power,
        }
    }

    pub fn from_document(doc: MapDocument) -> Result<Self, LaneGraphError> {
        if doc.version != MAP_FORMAT_VERSION {
            return Err(LaneGraphError::UnsupportedVersion(doc.version));
        }
        let graph = LaneGraph::new(doc.nodes, doc.edges.into_iter().collect())?;
        Ok(graph.dilate(doc.dilation_power))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("map serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, LaneGraphError> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

pub const MAP_FORMAT_VERSION: u32 = 1;

/// Versioned on-disk form; edges hold the undilated relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub version: u32,
    pub nodes: Vec<LaneNode>,
    pub edges: BTreeMap<Relation, Vec<(NodeId, NodeId)>>,
    pub dilation_power: u32,
}

#[derive(Debug, Clone)]
pub struct Capsule {
    pub a: Vec2,
    pub b: Vec2,
    pub half_width: f64,
}

#[derive(Debug, Clone)]
pub struct DrivableRegion {
    capsules: Vec<Capsule>,
    junction_box: Option<(Vec2, Vec2)>,
}

impl DrivableRegion {
    /// Axis-aligned junction bounds, if this map has an intersection.
    pub fn junction_box(&self) -> Option<(Vec2, Vec2)> {
        self.junction_box
    }

    pub fn contains(&self, p: Vec2) -> bool {
        if let Some((lo, hi)) = self.junction_box {
            if p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y {
                return true;
            }
        }
        self.capsules
            .iter()
            .any(|c| point_segment_distance(p, c.a, c.b) <= c.half_width)
    }
}

// --- procedural intersections ----------------------------------------------

const SEGMENT_LENGTH: f64 = 5.0;

/// Minimum radius of any turn connector arc. Vehicles steer at most 0.3 rad
/// over a 2.7 m wheelbase (turning radius ~8.7 m), so junctions are sized to
/// keep every arc trackable with some control margin.
const MIN_TURN_RADIUS: f64 = 10.0;

/// T-intersection: three arms at 0, 90, 180 degrees.
pub fn build_t_intersection(arm_length: f64, lane_width: f64) -> Result<LaneGraph, LaneGraphError> {
    build_intersection(arm_length, lane_width, &[0.0, 90.0, 180.0])
}

/// Four-way intersection: arms at 0, 90, 180, 270 degrees.
pub fn build_x_intersection(arm_length: f64, lane_width: f64) -> Result<LaneGraph, LaneGraphError> {
    build_intersection(arm_length, lane_width, &[0.0, 90.0, 180.0, 270.0])
}

fn build_intersection(
    arm_length: f64,
    lane_width: f64,
    arm_degrees: &[f64],
) -> Result<LaneGraph, LaneGraphError> {
    if !(lane_width > 0.0) || !(arm_length >= 4.0 * lane_width) {
        return Err(LaneGraphError::InvalidDimensions {
            arm_length,
            lane_width,
        });
    }
    let w = lane_width;
    // Junction half extent: the tightest arc (a right turn) has radius
    // h - w/2, so h is chosen to keep it at MIN_TURN_RADIUS.
    let h = MIN_TURN_RADIUS + w / 2.0;
    let n_seg = ((arm_length / SEGMENT_LENGTH).floor() as usize).max(1);
    let seg_len = arm_length / n_seg as f64;

    let mut nodes: Vec<LaneNode> = Vec::new();
    let mut succ: Vec<(NodeId, NodeId)> = Vec::new();
    let push_node =
        |nodes: &mut Vec<LaneNode>, position, heading, length, curvature, node_type| {
            let id = nodes.len();
            nodes.push(LaneNode {
                id,
                position,
                heading,
                length,
                width: w,
                curvature,
                node_type,
            });
            id
        };

    struct Arm {
        u: Vec2,
        inbound: Vec<NodeId>,  // ordered by travel toward the junction
        outbound: Vec<NodeId>, // ordered by travel away from the junction
    }
    let mut arms: Vec<Arm> = Vec::new();
    for &deg in arm_degrees {
        let theta = deg.to_radians();
        let u = Vec2::from_angle(theta);
        let p = u.perp();
        let inbound_heading = wrap_angle(theta + std::f64::consts::PI);
        let mut inbound = Vec::new();
        let mut outbound = Vec::new();
        for k in 0..n_seg {
            // Inbound: from the outer end toward the junction, offset to the
            // driver's right (+w/2 along p).
            let radius = h + arm_length - (k as f64 + 0.5) * seg_len;
            let pos = u.scale(radius) + p.scale(w / 2.0);
            inbound.push(push_node(
                &mut nodes,
                pos,
                inbound_heading,
                seg_len,
                0.0,
                NodeType::Normal,
            ));
        }
        for k in 0..n_seg {
            let radius = h + (k as f64 + 0.5) * seg_len;
            let pos = u.scale(radius) - p.scale(w / 2.0);
            outbound.push(push_node(
                &mut nodes,
                pos,
                wrap_angle(theta),
                seg_len,
                0.0,
                NodeType::Normal,
            ));
        }
        for pair in inbound.windows(2) {
            succ.push((pair[0], pair[1]));
        }
        for pair in outbound.windows(2) {
            succ.push((pair[0], pair[1]));
        }
        arms.push(Arm {
            u,
            inbound,
            outbound,
        });
    }

    // Connectors: one intersection-typed node per legal (inbound arm -> other
    // arm outbound) movement, fitted as a straight piece or a circular arc.
    for i in 0..arms.len() {
        for j in 0..arms.len() {
            if i == j {
                continue;
            }
            let u_i = arms[i].u;
            let u_j = arms[j].u;
            let s = u_i.scale(h) + u_i.perp().scale(w / 2.0);
            let e = u_j.scale(h) - u_j.perp().scale(w / 2.0);
            let t_s = u_i.scale(-1.0);
            let t_e = u_j;
            let conn = if (u_i + u_j).norm() < 1e-9 {
                // Opposite arms: straight crossing.
                let mid = (s + e).scale(0.5);
                push_node(
                    &mut nodes,
                    mid,
                    t_s.y.atan2(t_s.x),
                    s.distance(e),
                    0.0,
                    NodeType::Intersection,
                )
            } else {
                // Circular arc: center is on both tangent normals.
                // (x - s).t_s = 0 and (x - e).t_e = 0.
                let det = t_s.x * t_e.y - t_e.x * t_s.y;
                let rhs = (s.dot(t_s), e.dot(t_e));
                let cx = (rhs.0 * t_e.y - rhs.1 * t_s.y) / det;
                let cy = (t_s.x * rhs.1 - t_e.x * rhs.0) / det;
                let center = Vec2::new(cx, cy);
                let r = center.distance(s);
                let a0 = (s - center).y.atan2((s - center).x);
                let a1 = (e - center).y.atan2((e - center).x);
                let turn = wrap_angle(t_e.y.atan2(t_e.x) - t_s.y.atan2(t_s.x));
                let sweep = if turn > 0.0 {
                    wrap_angle(a1 - a0).rem_euclid(std::f64::consts::TAU)
                } else {
                    -wrap_angle(a0 - a1).rem_euclid(std::f64::consts::TAU)
                };
                let mid_angle = a0 + sweep / 2.0;
                let mid = center + Vec2::from_angle(mid_angle).scale(r);
                let heading = wrap_angle(t_s.y.atan2(t_s.x) + sweep / 2.0);
                push_node(
                    &mut nodes,
                    mid,
                    heading,
                    r * sweep.abs(),
                    // Signed: positive curves left (counter-clockwise).
                    sweep.signum() / r,
                    NodeType::Intersection,
                )
            };
            succ.push((*arms[i].inbound.last().unwrap(), conn));
            succ.push((conn, arms[j].outbound[0]));
        }
    }

    let mut edges = BTreeMap::new();
    edges.insert(Relation::Successor, succ);
    LaneGraph::new(nodes, edges)
}

/// Seeded map-set generator mirroring the train/hold-out split:
/// training = 3 T + 4 X variants, hold-out = 1 T + 2 X unseen variants.
pub fn generate_map_set(seed: u64) -> (Vec<LaneGraph>, Vec<LaneGraph>) {
    let mut rng = crate::rng::stream(seed, "map_gen");
    let mut draw = |t_count: usize, x_count: usize| -> Vec<LaneGraph> {
        let mut maps = Vec::new();
        for i in 0..t_count + x_count {
            let arm = rng.gen_range(25.0..45.0);
            let width = rng.gen_range(3.2..3.8);
            let g = if i < t_count {
                build_t_intersection(arm, width)
            } else {
                build_x_intersection(arm, width)
            };
            maps.push(g.expect("generated dimensions always valid"));
        }
        maps
    };
    (draw(3, 4), draw(1, 2))
}
