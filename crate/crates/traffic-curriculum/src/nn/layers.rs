//! Layer builders on top of the tape: dense stacks, a GRU cell, a residual
//! 1D conv block, mean-aggregated message passing, and a categorical
//! actor-critic head. Each layer registers its parameters once under a name
//! prefix and replays them through the tape on every forward.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::nn::params::ParameterStore;
use crate::nn::tape::{Tape, ValueId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: ValueId) -> ValueId {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Fully connected layer; weights live in the store under `{name}.w/.b`.
#[derive(Debug, Clone)]
pub struct Dense {
    name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Self {
        store.register_linear(rng, name, in_dim, out_dim);
        Dense {
            name: name.to_string(),
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn forward(&self, store: &ParameterStore, tape: &mut Tape, x: ValueId) -> ValueId {
        let w = tape.param(store, &format!("{}.w", self.name));
        let b = tape.param(store, &format!("{}.b", self.name));
        let y = tape.affine(w, x, Some(b));
        self.activation.apply(tape, y)
    }
}

/// Dense stack with a shared hidden activation and a configurable output
/// activation (identity for heads, tanh/relu for embeddings).
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() { output } else { hidden };
            layers.push(Dense::new(
                store,
                rng,
                &format!("{name}.{i}"),
                dims[i],
                dims[i + 1],
                act,
            ));
        }
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, store: &ParameterStore, tape: &mut Tape, x: ValueId) -> ValueId {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(store, tape, h);
        }
        h
    }
}

/// GRU cell built from tape primitives:
/// z = sigmoid(Wz [x, h]), r = sigmoid(Wr [x, h]),
/// hcand = tanh(Wh [x, r*h]), h' = (1 - z)*h + z*hcand.
/// With all-zero weights and h = 0 the state stays 0.
#[derive(Debug, Clone)]
pub struct GruCell {
    update: Dense,
    reset: Dense,
    candidate: Dense,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let cat = input + hidden;
        GruCell {
            update: Dense::new(store, rng, &format!("{name}.z"), cat, hidden, Activation::Identity),
            reset: Dense::new(store, rng, &format!("{name}.r"), cat, hidden, Activation::Identity),
            candidate: Dense::new(store, rng, &format!("{name}.h"), cat, hidden, Activation::Identity),
            hidden,
        }
    }

    pub fn step(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        x: ValueId,
        h: ValueId,
    ) -> ValueId {
        let xh = tape.concat(&[x, h]);
        let z = self.update.forward(store, tape, xh);
        let z = tape.sigmoid(z);
        let r = self.reset.forward(store, tape, xh);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let xrh = tape.concat(&[x, rh]);
        let cand = self.candidate.forward(store, tape, xrh);
        let cand = tape.tanh(cand);
        let keep = tape.scale(z, -1.0);
        let keep = tape.add_scalar(keep, 1.0);
        let a = tape.mul(keep, h);
        let b = tape.mul(z, cand);
        tape.add(a, b)
    }

    /// Runs the cell over a sequence (flat steps x input) from h = 0 and
    /// returns the final state.
    pub fn run(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        seq: ValueId,
        steps: usize,
        input: usize,
    ) -> ValueId {
        let mut h = tape.constant(vec![0.0; self.hidden]);
        for t in 0..steps {
            let x = tape.slice(seq, t * input, input);
            h = self.step(store, tape, x, h);
        }
        h
    }
}

/// Residual 1D conv block over a flat steps x f_in sequence: a same-padded
/// main conv (relu inside) plus a kernel-1 bias-free skip projection. No
/// activation is applied after the sum.
#[derive(Debug, Clone)]
pub struct Conv1dResidual {
    name: String,
    pub f_in: usize,
    pub f_out: usize,
    pub k: usize,
}

impl Conv1dResidual {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        f_in: usize,
        f_out: usize,
        k: usize,
    ) -> Self {
        store.register_conv(rng, &format!("{name}.main"), f_in, f_out, k, true);
        store.register_conv(rng, &format!("{name}.skip"), f_in, f_out, 1, false);
        Conv1dResidual {
            name: name.to_string(),
            f_in,
            f_out,
            k,
        }
    }

    pub fn forward(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        x: ValueId,
        steps: usize,
    ) -> ValueId {
        let wm = tape.param(store, &format!("{}.main.w", self.name));
        let bm = tape.param(store, &format!("{}.main.b", self.name));
        let main = tape.conv1d(x, wm, Some(bm), steps, self.f_in, self.f_out, self.k);
        let main = tape.relu(main);
        let ws = tape.param(store, &format!("{}.skip.w", self.name));
        let skip = tape.conv1d(x, ws, None, steps, self.f_in, self.f_out, 1);
        tape.add(main, skip)
    }
}

/// One directed edge for message passing: source and destination indices
/// into the node embedding list plus an edge-feature tape node.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub feat: ValueId,
}

/// Residual message-passing layer: messages are MLP(src ++ edge features),
/// mean-aggregated per destination, fused by a second MLP into a residual
/// update. Nodes with no incoming edges pass through unchanged.
#[derive(Debug, Clone)]
pub struct MessagePass {
    message: Mlp,
    update: Mlp,
}

impl MessagePass {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        node_dim: usize,
        edge_dim: usize,
        hidden: usize,
    ) -> Self {
        MessagePass {
            message: Mlp::new(
                store,
                rng,
                &format!("{name}.msg"),
                &[node_dim + edge_dim, hidden, node_dim],
                Activation::Relu,
                Activation::Identity,
            ),
            update: Mlp::new(
                store,
                rng,
                &format!("{name}.upd"),
                &[2 * node_dim, hidden, node_dim],
                Activation::Relu,
                Activation::Identity,
            ),
        }
    }

    pub fn forward(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        nodes: &[ValueId],
        edges: &[Edge],
    ) -> Vec<ValueId> {
        let mut incoming: Vec<Vec<ValueId>> = vec![Vec::new(); nodes.len()];
        for edge in edges {
            let packed = tape.concat(&[nodes[edge.src], edge.feat]);
            let msg = self.message.forward(store, tape, packed);
            incoming[edge.dst].push(msg);
        }
        nodes
            .iter()
            .enumerate()
            .map(|(i, &node)| {
                if incoming[i].is_empty() {
                    return node;
                }
                let agg = tape.mean_of(&incoming[i]);
                let packed = tape.concat(&[node, agg]);
                let delta = self.update.forward(store, tape, packed);
                tape.add(node, delta)
            })
            .collect()
    }
}

/// Shared actor-critic head: a trunk MLP feeding a log-softmax policy over
/// `actions` and a scalar state value.
#[derive(Debug, Clone)]
pub struct CategoricalHead {
    trunk: Mlp,
    policy: Dense,
    value: Dense,
}

impl CategoricalHead {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
        actions: usize,
    ) -> Self {
        CategoricalHead {
            trunk: Mlp::new(
                store,
                rng,
                &format!("{name}.trunk"),
                &[in_dim, hidden, hidden],
                Activation::Tanh,
                Activation::Tanh,
            ),
            policy: Dense::new(
                store,
                rng,
                &format!("{name}.pi"),
                hidden,
                actions,
                Activation::Identity,
            ),
            value: Dense::new(
                store,
                rng,
                &format!("{name}.v"),
                hidden,
                1,
                Activation::Identity,
            ),
        }
    }

    /// Returns (log-probabilities, scalar value node).
    pub fn forward(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        x: ValueId,
    ) -> (ValueId, ValueId) {
        let h = self.trunk.forward(store, tape, x);
        let logits = self.policy.forward(store, tape, h);
        let log_probs = tape.log_softmax(logits);
        let value = self.value.forward(store, tape, h);
        (log_probs, value)
    }
}

/// Samples an action index from categorical log-probabilities.
pub fn sample_categorical(log_probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let weights: Vec<f64> = log_probs.iter().map(|&l| l.exp()).collect();
    let dist = WeightedIndex::new(&weights).expect("degenerate action distribution");
    dist.sample(rng)
}

/// Entropy of a categorical distribution given log-probabilities, as a tape
/// node: -sum(p * log p).
pub fn categorical_entropy(tape: &mut Tape, log_probs: ValueId) -> ValueId {
    let p = tape.exp(log_probs);
    let plogp = tape.mul(p, log_probs);
    let s = tape.sum(plogp);
    tape.scale(s, -1.0)
}
