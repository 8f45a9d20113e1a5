//! Feed-forward and recurrent networks over a flat parameter vector, with
//! exact backpropagation (through time for the recurrent cells).
//!
//! Matrices are row-major `[out x in]`. Recurrent gate blocks are stacked
//! along rows: LSTM `[input, forget, candidate, output]`, GRU
//! `[reset, update, new]` with separate input and hidden biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Frnn,
    Lstm,
    Gru,
}

impl Cell {
    fn gates(self) -> usize {
        match self {
            Cell::Frnn => 1,
            Cell::Lstm => 4,
            Cell::Gru => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Arch {
    Mlp {
        input: usize,
        layers: usize,
        size: usize,
        classes: usize,
    },
    Rnn {
        cell: Cell,
        input: usize,
        hidden: usize,
        layers: usize,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

fn push(specs: &mut Vec<TensorSpec>, name: String, shape: Vec<usize>) {
    let offset = specs.last().map_or(0, |s| s.offset + s.len());
    specs.push(TensorSpec { name, shape, offset });
}

impl Arch {
    pub fn classes(&self) -> usize {
        match *self {
            Arch::Mlp { classes, .. } | Arch::Rnn { classes, .. } => classes,
        }
    }

    /// Named tensors in storage order.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        match *self {
            Arch::Mlp {
                input,
                layers,
                size,
                classes,
            } => {
                let mut fan_in = input;
                for l in 0..layers {
                    push(&mut specs, format!("hidden{l}.weight"), vec![size, fan_in]);
                    push(&mut specs, format!("hidden{l}.bias"), vec![size]);
                    fan_in = size;
                }
                push(&mut specs, "out.weight".into(), vec![classes, fan_in]);
                push(&mut specs, "out.bias".into(), vec![classes]);
            }
            Arch::Rnn {
                cell,
                input,
                hidden,
                layers,
                classes,
            } => {
                let g = cell.gates() * hidden;
                for l in 0..layers {
                    let fan_in = if l == 0 { input } else { hidden };
                    push(&mut specs, format!("rnn{l}.w_x"), vec![g, fan_in]);
                    push(&mut specs, format!("rnn{l}.w_h"), vec![g, hidden]);
                    if cell == Cell::Gru {
                        push(&mut specs, format!("rnn{l}.b_x"), vec![g]);
                        push(&mut specs, format!("rnn{l}.b_h"), vec![g]);
                    } else {
                        push(&mut specs, format!("rnn{l}.b"), vec![g]);
                    }
                }
                push(&mut specs, "out.weight".into(), vec![classes, hidden]);
                push(&mut specs, "out.bias".into(), vec![classes]);
            }
        }
        specs
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map_or(0, |s| s.offset + s.len())
    }

    /// Glorot-uniform weights (per gate block for recurrent matrices), zero
    /// biases, LSTM forget-gate bias 1.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        let mut params = vec![0.0; self.param_count()];
        let (cell, hidden) = match *self {
            Arch::Rnn { cell, hidden, .. } => (Some(cell), hidden),
            Arch::Mlp { .. } => (None, 0),
        };
        for spec in self.layout() {
            let slot = &mut params[spec.range()];
            if spec.shape.len() == 2 {
                let (rows, cols) = (spec.shape[0], spec.shape[1]);
                let fan_out = if spec.name.starts_with("rnn") { hidden } else { rows };
                let limit = (6.0 / (cols + fan_out) as f64).sqrt();
                for v in slot.iter_mut() {
                    *v = rng.random_range(-limit..limit);
                }
            } else if cell == Some(Cell::Lstm) && spec.name.ends_with(".b") {
                slot[hidden..2 * hidden].fill(1.0);
            }
        }
        params
    }

    /// Number of time steps in a flattened sample, and checks its width.
    fn steps(&self, x: &[f64]) -> usize {
        match *self {
            Arch::Mlp { input, .. } => {
                assert_eq!(x.len(), input, "input width mismatch");
                1
            }
            Arch::Rnn { input, .. } => {
                assert!(!x.is_empty() && x.len().is_multiple_of(input), "input width mismatch");
                x.len() / input
            }
        }
    }

    pub fn input_width(&self) -> usize {
        match *self {
            Arch::Mlp { input, .. } | Arch::Rnn { input, .. } => input,
        }
    }
}

// out += W x
#[inline]
fn gemv(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// out += W^T d
#[inline]
fn gemv_t(w: &[f64], cols: usize, d: &[f64], out: &mut [f64]) {
    for (&dr, row) in d.iter().zip(w.chunks_exact(cols)) {
        if dr != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * dr;
            }
        }
    }
}

// G += d x^T
#[inline]
fn ger(g: &mut [f64], cols: usize, d: &[f64], x: &[f64]) {
    for (&dr, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if dr != 0.0 {
            for (o, b) in row.iter_mut().zip(x) {
                *o += dr * b;
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of `logits` against `label` and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(logits);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    p[label] -= 1.0;
    (loss, p)
}

/// Activations of one recurrent layer over a window.
struct LayerTrace {
    /// Layer inputs after dropout, `T x in`.
    x: Vec<f64>,
    /// Hidden states `h_0..h_T` (`h_0 = 0`), `(T+1) x H`.
    h: Vec<f64>,
    /// Cell-specific values per step.
    a: Vec<f64>,
    /// LSTM cell states `c_0..c_T`.
    c: Vec<f64>,
}

enum Trace {
    Mlp {
        /// Activations per layer including the input.
        acts: Vec<Vec<f64>>,
    },
    Rnn {
        layers: Vec<LayerTrace>,
        /// Dropout masks (already scaled) applied to the inputs of layers
        /// 1.., or empty when dropout is off.
        masks: Vec<Vec<f64>>,
    },
}

/// Dropout applied during training. `rate` 0 disables it.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut seed::Rng,
}

pub struct Network<'p> {
    pub arch: &'p Arch,
    pub params: &'p [f64],
    layout: Vec<TensorSpec>,
}

impl<'p> Network<'p> {
    pub fn new(arch: &'p Arch, params: &'p [f64]) -> Self {
        assert_eq!(params.len(), arch.param_count(), "parameter count mismatch");
        Network {
            arch,
            params,
            layout: arch.layout(),
        }
    }

    fn t(&self, i: usize) -> &'p [f64] {
        &self.params[self.layout[i].range()]
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x, None).0
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    fn forward(&self, x: &[f64], dropout: Option<Dropout<'_>>) -> (Vec<f64>, Trace) {
        let steps = self.arch.steps(x);
        match *self.arch {
            Arch::Mlp { layers, classes, .. } => {
                let mut acts = vec![x.to_vec()];
                for l in 0..layers {
                    let (w, b) = (self.t(2 * l), self.t(2 * l + 1));
                    let prev = acts.last().unwrap();
                    let mut z = b.to_vec();
                    gemv(w, prev.len(), prev, &mut z);
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                    acts.push(z);
                }
                let mut out = self.t(2 * layers + 1).to_vec();
                let top = acts.last().unwrap();
                debug_assert_eq!(out.len(), classes);
                gemv(self.t(2 * layers), top.len(), top, &mut out);
                (out, Trace::Mlp { acts })
            }
            Arch::Rnn { cell, input, hidden, layers, .. } => {
                let per_layer = if cell == Cell::Gru { 4 } else { 3 };
                let mut traces: Vec<LayerTrace> = Vec::with_capacity(layers);
                let mut masks = Vec::new();
                let mut dropout = dropout.filter(|d| d.rate > 0.0);
                for l in 0..layers {
                    let width = if l == 0 { input } else { hidden };
                    let mut xin = match traces.last() {
                        None => x.to_vec(),
                        Some(prev) => prev.h[hidden..].to_vec(),
                    };
                    if l > 0 {
                        if let Some(d) = dropout.as_mut() {
                            let keep = 1.0 - d.rate;
                            let mask: Vec<f64> = (0..xin.len())
                                .map(|_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                .collect();
                            xin.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                            masks.push(mask);
                        }
                    }
                    let base = l * per_layer;
                    traces.push(self.run_layer(cell, hidden, width, steps, base, xin));
                }
                let top = traces.last().unwrap();
                let h_last = &top.h[steps * hidden..];
                let head = layers * per_layer;
                let mut out = self.t(head + 1).to_vec();
                gemv(self.t(head), hidden, h_last, &mut out);
                (out, Trace::Rnn { layers: traces, masks })
            }
        }
    }

    fn run_layer(&self, cell: Cell, hid: usize, width: usize, steps: usize, base: usize, x: Vec<f64>) -> LayerTrace {
        let wx = self.t(base);
        let wh = self.t(base + 1);
        let g = cell.gates() * hid;
        let mut h = vec![0.0; (steps + 1) * hid];
        let mut c = if cell == Cell::Lstm { vec![0.0; (steps + 1) * hid] } else { Vec::new() };
        // FRNN: nothing extra. LSTM: activated gates. GRU: r, z, n, W_hn h + b_hn.
        let a_width = match cell {
            Cell::Frnn => 0,
            Cell::Lstm => g,
            Cell::Gru => 4 * hid,
        };
        let mut a = vec![0.0; steps * a_width];
        let mut pre = vec![0.0; g];
        let mut ph = vec![0.0; g];
        for t in 0..steps {
            let xt = &x[t * width..(t + 1) * width];
            let (hp, hn) = h.split_at_mut((t + 1) * hid);
            let hprev = &hp[t * hid..];
            let hcur = &mut hn[..hid];
            match cell {
                Cell::Frnn => {
                    pre.copy_from_slice(self.t(base + 2));
                    gemv(wx, width, xt, &mut pre);
                    gemv(wh, hid, hprev, &mut pre);
                    for (o, p) in hcur.iter_mut().zip(&pre) {
                        *o = p.tanh();
                    }
                }
                Cell::Lstm => {
                    pre.copy_from_slice(self.t(base + 2));
                    gemv(wx, width, xt, &mut pre);
                    gemv(wh, hid, hprev, &mut pre);
                    let at = &mut a[t * g..(t + 1) * g];
                    for k in 0..hid {
                        at[k] = sigmoid(pre[k]);
                        at[hid + k] = sigmoid(pre[hid + k]);
                        at[2 * hid + k] = pre[2 * hid + k].tanh();
                        at[3 * hid + k] = sigmoid(pre[3 * hid + k]);
                    }
                    let (cp, cn) = c.split_at_mut((t + 1) * hid);
                    let cprev = &cp[t * hid..];
                    for k in 0..hid {
                        let ct = at[hid + k] * cprev[k] + at[k] * at[2 * hid + k];
                        cn[k] = ct;
                        hcur[k] = at[3 * hid + k] * ct.tanh();
                    }
                }
                Cell::Gru => {
                    pre.copy_from_slice(self.t(base + 2));
                    gemv(wx, width, xt, &mut pre);
                    ph.copy_from_slice(self.t(base + 3));
                    gemv(wh, hid, hprev, &mut ph);
                    let at = &mut a[t * 4 * hid..(t + 1) * 4 * hid];
                    for k in 0..hid {
                        let r = sigmoid(pre[k] + ph[k]);
                        let z = sigmoid(pre[hid + k] + ph[hid + k]);
                        let n = (pre[2 * hid + k] + r * ph[2 * hid + k]).tanh();
                        at[k] = r;
                        at[hid + k] = z;
                        at[2 * hid + k] = n;
                        at[3 * hid + k] = ph[2 * hid + k];
                        hcur[k] = (1.0 - z) * n + z * hprev[k];
                    }
                }
            }
        }
        LayerTrace { x, h, a, c }
    }

    /// Cross-entropy loss for one sample; adds the parameter gradient into
    /// `grad`.
    pub fn loss_and_grad(&self, x: &[f64], label: usize, dropout: Option<Dropout<'_>>, grad: &mut [f64]) -> f64 {
        assert_eq!(grad.len(), self.params.len());
        let (logits, trace) = self.forward(x, dropout);
        let (loss, dlogits) = cross_entropy(&logits, label);
        let layout = &self.layout;
        let gslice = |i: usize| layout[i].range();
        match (self.arch, trace) {
            (&Arch::Mlp { layers, .. }, Trace::Mlp { acts }) => {
                let top = &acts[layers];
                let r = gslice(2 * layers);
                ger(&mut grad[r], top.len(), &dlogits, top);
                let r = gslice(2 * layers + 1);
                grad[r].iter_mut().zip(&dlogits).for_each(|(g, d)| *g += d);
                let mut delta = vec![0.0; top.len()];
                gemv_t(self.t(2 * layers), top.len(), &dlogits, &mut delta);
                for l in (0..layers).rev() {
                    // ReLU derivative, taking 0 at 0.
                    for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    let inp = &acts[l];
                    let r = gslice(2 * l);
                    ger(&mut grad[r], inp.len(), &delta, inp);
                    let r = gslice(2 * l + 1);
                    grad[r].iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
                    if l > 0 {
                        let mut next = vec![0.0; inp.len()];
                        gemv_t(self.t(2 * l), inp.len(), &delta, &mut next);
                        delta = next;
                    }
                }
            }
            (&Arch::Rnn { cell, input, hidden, layers, .. }, Trace::Rnn { layers: traces, masks }) => {
                let steps = self.arch.steps(x);
                let per_layer = if cell == Cell::Gru { 4 } else { 3 };
                let head = layers * per_layer;
                let h_last = &traces[layers - 1].h[steps * hidden..];
                let r = gslice(head);
                ger(&mut grad[r], hidden, &dlogits, h_last);
                let r = gslice(head + 1);
                grad[r].iter_mut().zip(&dlogits).for_each(|(g, d)| *g += d);
                // Gradient w.r.t. the top layer's outputs h_1..h_T.
                let mut d_out = vec![0.0; steps * hidden];
                gemv_t(self.t(head), hidden, &dlogits, &mut d_out[(steps - 1) * hidden..]);
                for l in (0..layers).rev() {
                    let width = if l == 0 { input } else { hidden };
                    let mut dx = self.backward_layer(cell, hidden, width, steps, l * per_layer, &traces[l], &d_out, grad, l > 0);
                    if l > 0 {
                        if let Some(mask) = masks.get(l - 1) {
                            dx.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                        }
                        d_out = dx;
                    }
                }
            }
            _ => unreachable!("trace does not match architecture"),
        }
        loss
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_layer(
        &self,
        cell: Cell,
        hid: usize,
        width: usize,
        steps: usize,
        base: usize,
        tr: &LayerTrace,
        d_out: &[f64],
        grad: &mut [f64],
        need_dx: bool,
    ) -> Vec<f64> {
        let g = cell.gates() * hid;
        let wx = self.t(base);
        let wh = self.t(base + 1);
        let rx = self.layout[base].range();
        let rh = self.layout[base + 1].range();
        let rb = self.layout[base + 2].range();
        let rbh = (cell == Cell::Gru).then(|| self.layout[base + 3].range());
        let mut dx = if need_dx { vec![0.0; steps * width] } else { Vec::new() };
        let mut dh_next = vec![0.0; hid];
        let mut dc_next = vec![0.0; hid];
        let mut da = vec![0.0; g];
        let mut dah = vec![0.0; g];
        let mut dh = vec![0.0; hid];
        for t in (0..steps).rev() {
            let xt = &tr.x[t * width..(t + 1) * width];
            let hprev = &tr.h[t * hid..(t + 1) * hid];
            let hcur = &tr.h[(t + 1) * hid..(t + 2) * hid];
            for k in 0..hid {
                dh[k] = d_out[t * hid + k] + dh_next[k];
            }
            dh_next.fill(0.0);
            match cell {
                Cell::Frnn => {
                    for k in 0..hid {
                        da[k] = dh[k] * (1.0 - hcur[k] * hcur[k]);
                    }
                    ger(&mut grad[rx.clone()], width, &da, xt);
                    ger(&mut grad[rh.clone()], hid, &da, hprev);
                    grad[rb.clone()].iter_mut().zip(&da).for_each(|(g, d)| *g += d);
                    gemv_t(wh, hid, &da, &mut dh_next);
                }
                Cell::Lstm => {
                    let at = &tr.a[t * g..(t + 1) * g];
                    let cprev = &tr.c[t * hid..(t + 1) * hid];
                    let ccur = &tr.c[(t + 1) * hid..(t + 2) * hid];
                    for k in 0..hid {
                        let (i, f, gg, o) = (at[k], at[hid + k], at[2 * hid + k], at[3 * hid + k]);
                        let tc = ccur[k].tanh();
                        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                        da[k] = dc * gg * i * (1.0 - i);
                        da[hid + k] = dc * cprev[k] * f * (1.0 - f);
                        da[2 * hid + k] = dc * i * (1.0 - gg * gg);
                        da[3 * hid + k] = dh[k] * tc * o * (1.0 - o);
                        dc_next[k] = dc * f;
                    }
                    ger(&mut grad[rx.clone()], width, &da, xt);
                    ger(&mut grad[rh.clone()], hid, &da, hprev);
                    grad[rb.clone()].iter_mut().zip(&da).for_each(|(g, d)| *g += d);
                    gemv_t(wh, hid, &da, &mut dh_next);
                }
                Cell::Gru => {
                    let at = &tr.a[t * 4 * hid..(t + 1) * 4 * hid];
                    for k in 0..hid {
                        let (r, z, n, hn) = (at[k], at[hid + k], at[2 * hid + k], at[3 * hid + k]);
                        let dn = dh[k] * (1.0 - z);
                        let dz = dh[k] * (hprev[k] - n);
                        let dan = dn * (1.0 - n * n);
                        let dr = dan * hn;
                        let dar = dr * r * (1.0 - r);
                        let daz = dz * z * (1.0 - z);
                        da[k] = dar;
                        da[hid + k] = daz;
                        da[2 * hid + k] = dan;
                        dah[k] = dar;
                        dah[hid + k] = daz;
                        dah[2 * hid + k] = dan * r;
                        dh_next[k] = dh[k] * z;
                    }
                    ger(&mut grad[rx.clone()], width, &da, xt);
                    ger(&mut grad[rh.clone()], hid, &dah, hprev);
                    grad[rb.clone()].iter_mut().zip(&da).for_each(|(g, d)| *g += d);
                    let rbh = rbh.clone().unwrap();
                    grad[rbh].iter_mut().zip(&dah).for_each(|(g, d)| *g += d);
                    gemv_t(wh, hid, &dah, &mut dh_next);
                }
            }
            if need_dx {
                gemv_t(wx, width, &da, &mut dx[t * width..(t + 1) * width]);
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rnn(cell: Cell, layers: usize) -> Arch {
        Arch::Rnn {
            cell,
            input: 3,
            hidden: 4,
            layers,
            classes: 3,
        }
    }

    #[test]
    fn layouts_are_contiguous() {
        for arch in [
            Arch::Mlp { input: 5, layers: 2, size: 7, classes: 3 },
            rnn(Cell::Frnn, 2),
            rnn(Cell::Lstm, 3),
            rnn(Cell::Gru, 1),
        ] {
            let l = arch.layout();
            for w in l.windows(2) {
                assert_eq!(w[0].offset + w[0].len(), w[1].offset);
            }
            assert_eq!(arch.init(1).len(), arch.param_count());
        }
        let lstm = rnn(Cell::Lstm, 1);
        let l = lstm.layout();
        assert_eq!(l[0].shape, vec![16, 3]);
        let p = lstm.init(0);
        assert_eq!(&p[l[2].range()][4..8], &[1.0; 4]);
        assert_eq!(&p[l[2].range()][..4], &[0.0; 4]);
    }

    #[test]
    fn zero_mlp_is_uniform() {
        let arch = Arch::Mlp { input: 4, layers: 2, size: 5, classes: 4 };
        let params = vec![0.0; arch.param_count()];
        let net = Network::new(&arch, &params);
        let x = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(net.logits(&x), vec![0.0; 4]);
        let mut grad = vec![0.0; params.len()];
        let loss = net.loss_and_grad(&x, 2, None, &mut grad);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        // Output bias gradient is softmax - onehot; hidden layers get nothing.
        let l = arch.layout();
        assert_eq!(&grad[l[5].range()], &[0.25, 0.25, -0.75, 0.25]);
        for i in 0..4 {
            assert!(grad[l[i].range()].iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn zero_recurrent_cells_stay_at_zero() {
        for cell in [Cell::Lstm, Cell::Gru, Cell::Frnn] {
            let arch = rnn(cell, 2);
            let params = vec![0.0; arch.param_count()];
            let net = Network::new(&arch, &params);
            let x: Vec<f64> = (0..15).map(|i| i as f64 * 0.1 - 0.7).collect();
            let (logits, trace) = net.forward(&x, None);
            assert_eq!(logits, vec![0.0; 3]);
            let Trace::Rnn { layers, .. } = trace else { panic!() };
            for l in &layers {
                assert!(l.h.iter().all(|&h| h == 0.0));
                if cell == Cell::Lstm {
                    for t in 0..5 {
                        // input, forget and output gates at 0.5, candidate 0
                        assert_eq!(&l.a[t * 16..t * 16 + 8], &[0.5; 8]);
                        assert_eq!(&l.a[t * 16 + 8..t * 16 + 12], &[0.0; 4]);
                    }
                }
                if cell == Cell::Gru {
                    for t in 0..5 {
                        assert_eq!(&l.a[t * 16 + 4..t * 16 + 8], &[0.5; 4]);
                        assert_eq!(&l.a[t * 16 + 8..t * 16 + 12], &[0.0; 4]);
                    }
                }
            }
        }
    }

    #[test]
    fn output_gradient_is_softmax_minus_onehot() {
        let logits = [1.0, 2.0, -0.5];
        let (_, d) = cross_entropy(&logits, 1);
        let p = softmax(&logits);
        assert!((d[0] - p[0]).abs() < 1e-15);
        assert!((d[1] - (p[1] - 1.0)).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_identity_at_rate_zero() {
        let arch = rnn(Cell::Lstm, 3);
        let params = arch.init(4);
        let net = Network::new(&arch, &params);
        let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let mut rng = seed::rng(1);
        let (a, _) = net.forward(&x, Some(Dropout { rate: 0.0, rng: &mut rng }));
        assert_eq!(a, net.logits(&x));
        let (b, _) = net.forward(&x, Some(Dropout { rate: 0.5, rng: &mut rng }));
        assert_ne!(b, a);
    }
}
