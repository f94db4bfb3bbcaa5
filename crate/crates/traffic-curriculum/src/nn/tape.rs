//! Minimal reverse-mode tape over vector-valued nodes. A forward pass
//! records one node per primitive; `backward` walks the record once in
//! reverse and accumulates gradients keyed by parameter name.

use std::collections::BTreeMap;

use crate::nn::params::ParameterStore;

pub type ValueId = usize;

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(String),
    /// y = W x (+ b); W is rows x cols, flat row-major.
    Affine {
        w: ValueId,
        x: ValueId,
        b: Option<ValueId>,
        rows: usize,
        cols: usize,
    },
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    AddScalar(ValueId),
    Relu(ValueId),
    Tanh(ValueId),
    Sigmoid(ValueId),
    Exp(ValueId),
    Concat(Vec<ValueId>),
    Slice {
        a: ValueId,
        start: usize,
        len: usize,
    },
    LogSoftmax(ValueId),
    MeanOf(Vec<ValueId>),
    Sum(ValueId),
    Pick(ValueId, usize),
    MinElem(ValueId, ValueId),
    Clamp(ValueId, f64, f64),
    /// Same-length 1D convolution over a flat h x f_in input, zero padded.
    Conv1d {
        x: ValueId,
        w: ValueId,
        b: Option<ValueId>,
        h: usize,
        f_in: usize,
        f_out: usize,
        k: usize,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_cache: BTreeMap<String, ValueId>,
}

pub type Gradients = BTreeMap<String, Vec<f64>>;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    /// Smallest |input| feeding any ReLU on the tape — test diagnostic for
    /// telling finite-difference kink crossings from gradient bugs.
    #[cfg(test)]
    pub(crate) fn nearest_relu_kink(&self) -> f64 {
        let mut best = f64::INFINITY;
        for n in &self.nodes {
            if let Op::Relu(src) = n.op {
                for &v in &self.nodes[src].value {
                    best = best.min(v.abs());
                }
            }
        }
        best
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Vec<f64>) -> ValueId {
        self.push(value, Op::Const)
    }

    pub fn scalar_const(&mut self, x: f64) -> ValueId {
        self.constant(vec![x])
    }

    /// Leaf for a named parameter; repeated requests share one node so the
    /// backward pass accumulates naturally.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> ValueId {
        if let Some(&id) = self.param_cache.get(name) {
            return id;
        }
        let value = store.get(name).data.clone();
        let id = self.push(value, Op::Param(name.to_string()));
        self.param_cache.insert(name.to_string(), id);
        id
    }

    pub fn affine(&mut self, w: ValueId, x: ValueId, b: Option<ValueId>) -> ValueId {
        let cols = self.nodes[x].value.len();
        let wlen = self.nodes[w].value.len();
        assert!(
            wlen % cols == 0,
            "affine shape mismatch: weight len {wlen} vs input {cols}"
        );
        let rows = wlen / cols;
        if let Some(b) = b {
            assert_eq!(self.nodes[b].value.len(), rows, "bias shape mismatch");
        }
        let mut y = match b {
            Some(b) => self.nodes[b].value.clone(),
            None => vec![0.0; rows],
        };
        {
            let wv = &self.nodes[w].value;
            let xv = &self.nodes[x].value;
            for i in 0..rows {
                let row = &wv[i * cols..(i + 1) * cols];
                let mut acc = 0.0;
                for j in 0..cols {
                    acc += row[j] * xv[j];
                }
                y[i] += acc;
            }
        }
        self.push(y, Op::Affine { w, x, b, rows, cols })
    }

    fn zip(&mut self, a: ValueId, b: ValueId, f: impl Fn(f64, f64) -> f64, op: Op) -> ValueId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(av.len(), bv.len(), "elementwise shape mismatch");
        let y: Vec<f64> = av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect();
        self.push(y, op)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min_elem(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.zip(a, b, f64::min, Op::MinElem(a, b))
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let y: Vec<f64> = self.nodes[a].value.iter().map(|&x| x * k).collect();
        self.push(y, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: ValueId, k: f64) -> ValueId {
        let y: Vec<f64> = self.nodes[a].value.iter().map(|&x| x + k).collect();
        self.push(y, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let y: Vec<f64> = self.nodes[a].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(y, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let y: Vec<f64> = self.nodes[a].value.iter().map(|&x| x.tanh()).collect();
        self.push(y, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let y: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(y, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        let y: Vec<f64> = self.nodes[a].value.iter().map(|&x| x.exp()).collect();
        self.push(y, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: ValueId, lo: f64, hi: f64) -> ValueId {
        let y: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .map(|&x| x.clamp(lo, hi))
            .collect();
        self.push(y, Op::Clamp(a, lo, hi))
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> ValueId {
        let mut y = Vec::new();
        for &p in parts {
            y.extend_from_slice(&self.nodes[p].value);
        }
        self.push(y, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: ValueId, start: usize, len: usize) -> ValueId {
        let y = self.nodes[a].value[start..start + len].to_vec();
        self.push(y, Op::Slice { a, start, len })
    }

    pub fn log_softmax(&mut self, a: ValueId) -> ValueId {
        let v = &self.nodes[a].value;
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        let y: Vec<f64> = v.iter().map(|&x| x - lse).collect();
        self.push(y, Op::LogSoftmax(a))
    }

    pub fn mean_of(&mut self, parts: &[ValueId]) -> ValueId {
        assert!(!parts.is_empty());
        let len = self.nodes[parts[0]].value.len();
        let mut y = vec![0.0; len];
        for &p in parts {
            assert_eq!(self.nodes[p].value.len(), len);
            for (acc, &x) in y.iter_mut().zip(self.nodes[p].value.iter()) {
                *acc += x;
            }
        }
        let n = parts.len() as f64;
        y.iter_mut().for_each(|x| *x /= n);
        self.push(y, Op::MeanOf(parts.to_vec()))
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let y = self.nodes[a].value.iter().sum();
        self.push(vec![y], Op::Sum(a))
    }

    pub fn pick(&mut self, a: ValueId, idx: usize) -> ValueId {
        let y = self.nodes[a].value[idx];
        self.push(vec![y], Op::Pick(a, idx))
    }

    /// Dot product via mul + sum.
    pub fn dot(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let m = self.mul(a, b);
        self.sum(m)
    }

    pub fn conv1d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: Option<ValueId>,
        h: usize,
        f_in: usize,
        f_out: usize,
        k: usize,
    ) -> ValueId {
        assert_eq!(self.nodes[x].value.len(), h * f_in);
        assert_eq!(self.nodes[w].value.len(), f_out * k * f_in);
        let pad = k / 2;
        let mut y = vec![0.0; h * f_out];
        {
            let xv = &self.nodes[x].value;
            let wv = &self.nodes[w].value;
            for t in 0..h {
                for o in 0..f_out {
                    let mut acc = match b {
                        Some(b) => self.nodes[b].value[o],
                        None => 0.0,
                    };
                    for dk in 0..k {
                        let ti = t as isize + dk as isize - pad as isize;
                        if ti < 0 || ti >= h as isize {
                            continue;
                        }
                        let xrow = &xv[ti as usize * f_in..(ti as usize + 1) * f_in];
                        let wrow = &wv[(o * k + dk) * f_in..(o * k + dk + 1) * f_in];
                        for j in 0..f_in {
                            acc += wrow[j] * xrow[j];
                        }
                    }
                    y[t * f_out + o] = acc;
                }
            }
        }
        self.push(
            y,
            Op::Conv1d {
                x,
                w,
                b,
                h,
                f_in,
                f_out,
                k,
            },
        )
    }

    /// Reverse pass from a scalar node; returns gradients per parameter name.
    pub fn backward(&self, loss: ValueId) -> Gradients {
        assert_eq!(self.nodes[loss].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);
        let mut out: Gradients = BTreeMap::new();

        macro_rules! grad_buf {
            ($g:expr, $id:expr) => {
                $g[$id].get_or_insert_with(|| vec![0.0; self.nodes[$id].value.len()])
            };
        }

        for id in (0..=loss).rev() {
            let dy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Const => {}
                Op::Param(name) => {
                    let acc = out
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; dy.len()]);
                    for (a, g) in acc.iter_mut().zip(dy.iter()) {
                        *a += g;
                    }
                }
                Op::Affine { w, x, b, rows, cols } => {
                    let (w, x, b, rows, cols) = (*w, *x, *b, *rows, *cols);
                    let wv = self.nodes[w].value.clone();
                    let xv = self.nodes[x].value.clone();
                    {
                        let gw = grad_buf!(grads, w);
                        for i in 0..rows {
                            for j in 0..cols {
                                gw[i * cols + j] += dy[i] * xv[j];
                            }
                        }
                    }
                    {
                        let gx = grad_buf!(grads, x);
                        for i in 0..rows {
                            let row = &wv[i * cols..(i + 1) * cols];
                            for j in 0..cols {
                                gx[j] += row[j] * dy[i];
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = grad_buf!(grads, b);
                        for i in 0..rows {
                            gb[i] += dy[i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    for (g, d) in grad_buf!(grads, a).iter_mut().zip(dy.iter()) {
                        *g += d;
                    }
                    for (g, d) in grad_buf!(grads, b).iter_mut().zip(dy.iter()) {
                        *g += d;
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    for (g, d) in grad_buf!(grads, a).iter_mut().zip(dy.iter()) {
                        *g += d;
                    }
                    for (g, d) in grad_buf!(grads, b).iter_mut().zip(dy.iter()) {
                        *g -= d;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    for ((g, d), x) in grad_buf!(grads, a).iter_mut().zip(dy.iter()).zip(bv.iter())
                    {
                        *g += d * x;
                    }
                    for ((g, d), x) in grad_buf!(grads, b).iter_mut().zip(dy.iter()).zip(av.iter())
                    {
                        *g += d * x;
                    }
                }
                Op::MinElem(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    {
                        let ga = grad_buf!(grads, a);
                        for i in 0..dy.len() {
                            if av[i] <= bv[i] {
                                ga[i] += dy[i];
                            }
                        }
                    }
                    let gb = grad_buf!(grads, b);
                    for i in 0..dy.len() {
                        if av[i] > bv[i] {
                            gb[i] += dy[i];
                        }
                    }
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    for (g, d) in grad_buf!(grads, a).iter_mut().zip(dy.iter()) {
                        *g += d * k;
                    }
                }
                Op::AddScalar(a) => {
                    let a = *a;
                    for (g, d) in grad_buf!(grads, a).iter_mut().zip(dy.iter()) {
                        *g += d;
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    let av = self.nodes[a].value.clone();
                    let ga = grad_buf!(grads, a);
                    for i in 0..dy.len() {
                        if av[i] > 0.0 {
                            ga[i] += dy[i];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let yv = self.nodes[id].value.clone();
                    let ga = grad_buf!(grads, a);
                    for i in 0..dy.len() {
                        ga[i] += dy[i] * (1.0 - yv[i] * yv[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let yv = self.nodes[id].value.clone();
                    let ga = grad_buf!(grads, a);
                    for i in 0..dy.len() {
                        ga[i] += dy[i] * yv[i] * (1.0 - yv[i]);
                    }
                }
                Op::Exp(a) => {
                    let a = *a;
                    let yv = self.nodes[id].value.clone();
                    let ga = grad_buf!(grads, a);
                    for i in 0..dy.len() {
                        ga[i] += dy[i] * yv[i];
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let (a, lo, hi) = (*a, *lo, *hi);
                    let av = self.nodes[a].value.clone();
                    let ga = grad_buf!(grads, a);
                    for i in 0..dy.len() {
                        if av[i] > lo && av[i] < hi {
                            ga[i] += dy[i];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p].value.len();
                        let gp = grad_buf!(grads, p);
                        for i in 0..len {
                            gp[i] += dy[offset + i];
                        }
                        offset += len;
                    }
                }
                Op::Slice { a, start, len } => {
                    let (a, start, len) = (*a, *start, *len);
                    let ga = grad_buf!(grads, a);
                    for i in 0..len {
                        ga[start + i] += dy[i];
                    }
                }
                Op::LogSoftmax(a) => {
                    let a = *a;
                    let yv = self.nodes[id].value.clone();
                    let total: f64 = dy.iter().sum();
                    let ga = grad_buf!(grads, a);
                    for i in 0..dy.len() {
                        ga[i] += dy[i] - yv[i].exp() * total;
                    }
                }
                Op::MeanOf(parts) => {
                    let parts = parts.clone();
                    let n = parts.len() as f64;
                    for p in parts {
                        let gp = grad_buf!(grads, p);
                        for i in 0..dy.len() {
                            gp[i] += dy[i] / n;
                        }
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    let ga = grad_buf!(grads, a);
                    for g in ga.iter_mut() {
                        *g += dy[0];
                    }
                }
                Op::Pick(a, idx) => {
                    let (a, idx) = (*a, *idx);
                    grad_buf!(grads, a)[idx] += dy[0];
                }
                Op::Conv1d {
                    x,
                    w,
                    b,
                    h,
                    f_in,
                    f_out,
                    k,
                } => {
                    let (x, w, b, h, f_in, f_out, k) = (*x, *w, *b, *h, *f_in, *f_out, *k);
                    let pad = k / 2;
                    let xv = self.nodes[x].value.clone();
                    let wv = self.nodes[w].value.clone();
                    {
                        let gw = grad_buf!(grads, w);
                        for t in 0..h {
                            for o in 0..f_out {
                                let d = dy[t * f_out + o];
                                for dk in 0..k {
                                    let ti = t as isize + dk as isize - pad as isize;
                                    if ti < 0 || ti >= h as isize {
                                        continue;
                                    }
                                    let base = (o * k + dk) * f_in;
                                    let xbase = ti as usize * f_in;
                                    for j in 0..f_in {
                                        gw[base + j] += d * xv[xbase + j];
                                    }
                                }
                            }
                        }
                    }
                    {
                        let gx = grad_buf!(grads, x);
                        for t in 0..h {
                            for o in 0..f_out {
                                let d = dy[t * f_out + o];
                                for dk in 0..k {
                                    let ti = t as isize + dk as isize - pad as isize;
                                    if ti < 0 || ti >= h as isize {
                                        continue;
                                    }
                                    let base = (o * k + dk) * f_in;
                                    let xbase = ti as usize * f_in;
                                    for j in 0..f_in {
                                        gx[xbase + j] += d * wv[base + j];
                                    }
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = grad_buf!(grads, b);
                        for t in 0..h {
                            for o in 0..f_out {
                                gb[o] += dy[t * f_out + o];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Tensor;
    use crate::nn::testutil::finite_difference_check;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn affine_zero_weights_returns_bias() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::zeros(vec![3, 2]));
        store.insert(
            "b",
            Tensor {
                shape: vec![3],
                data: vec![1.0, -2.0, 0.5],
            },
        );
        let mut tape = Tape::new();
        let w = tape.param(&store, "w");
        let b = tape.param(&store, "b");
        let x = tape.constant(vec![7.0, -3.0]);
        let y = tape.affine(w, x, Some(b));
        assert_eq!(tape.value(y), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.3, -1.0, 2.0, 0.0]);
        let y = tape.log_softmax(x);
        let total: f64 = tape.value(y).iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_on_random_graphs() {
        let mut rng = stream(42, "gradcheck");
        for trial in 0..20 {
            let mut store = ParameterStore::new();
            store.register_linear(&mut rng, "l1", 4, 5);
            store.register_linear(&mut rng, "l2", 5, 3);
            store.register_conv(&mut rng, "cv", 3, 2, 3, true);
            let input: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pick = trial % 3;
            let f = move |store: &ParameterStore, tape: &mut Tape| {
                let x = tape.constant(input.clone());
                let w1 = tape.param(store, "l1.w");
                let b1 = tape.param(store, "l1.b");
                let h = tape.affine(w1, x, Some(b1));
                let h = tape.tanh(h);
                let w2 = tape.param(store, "l2.w");
                let b2 = tape.param(store, "l2.b");
                let z = tape.affine(w2, h, Some(b2));
                let z = tape.sigmoid(z);
                // 5 rows x 3 features through the conv.
                let rows = tape.concat(&[h, z, x.to_owned()]);
                let padded = tape.slice(rows, 0, 12);
                let wide = tape.concat(&[padded, z]);
                let cw = tape.param(store, "cv.w");
                let cb = tape.param(store, "cv.b");
                let c = tape.conv1d(wide, cw, Some(cb), 5, 3, 2, 3);
                let lp = tape.log_softmax(c);
                let picked = tape.pick(lp, pick);
                let e = tape.exp(picked);
                let s = tape.sum(e);
                tape.add_scalar(s, 0.0)
            };
            finite_difference_check(&mut store, f, 1e-5, 1e-4);
        }
    }

    #[test]
    fn min_and_clamp_subgradients() {
        let mut store = ParameterStore::new();
        store.insert(
            "p",
            Tensor {
                shape: vec![3],
                data: vec![0.5, 2.0, -1.0],
            },
        );
        let mut tape = Tape::new();
        let p = tape.param(&store, "p");
        let c = tape.constant(vec![1.0, 1.0, 1.0]);
        let m = tape.min_elem(p, c); // (0.5, 1.0, -1.0), grads to p: (1, 0, 1)
        let cl = tape.clamp(m, -0.9, 0.9); // (0.5, 0.9, -0.9), grads: (1, 0, 0)
        let s = tape.sum(cl);
        let grads = tape.backward(s);
        assert_eq!(grads["p"], vec![1.0, 0.0, 0.0]);
    }
}
