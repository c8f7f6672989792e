//! Recurrent dueling Q-network: two valid ReLU convolutions, an LSTM, and
//! value/advantage heads, with exact reverse-mode gradients through time.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{NET_HEIGHT, NET_WIDTH};
use crate::SeedRng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DrqnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("architecture mismatch")]
    ArchMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty sequence")]
    EmptySequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub planes: usize,
    pub height: usize,
    pub width: usize,
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub conv2_stride: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl Arch {
    /// conv 6×6/3 ×8 → conv 3×3/2 ×8 → LSTM 128 on a 48×64 input.
    pub fn standard(planes: usize, actions: usize) -> Arch {
        Arch {
            planes,
            height: NET_HEIGHT,
            width: NET_WIDTH,
            conv1_filters: 8,
            conv1_kernel: 6,
            conv1_stride: 3,
            conv2_filters: 8,
            conv2_kernel: 3,
            conv2_stride: 2,
            hidden: 128,
            actions,
        }
    }

    pub fn conv1_out(&self) -> (usize, usize) {
        ((self.height - self.conv1_kernel) / self.conv1_stride + 1, (self.width - self.conv1_kernel) / self.conv1_stride + 1)
    }

    pub fn conv2_out(&self) -> (usize, usize) {
        let (h, w) = self.conv1_out();
        ((h - self.conv2_kernel) / self.conv2_stride + 1, (w - self.conv2_kernel) / self.conv2_stride + 1)
    }

    pub fn input_len(&self) -> usize {
        self.planes * self.height * self.width
    }

    pub fn conv1_len(&self) -> usize {
        let (h, w) = self.conv1_out();
        self.conv1_filters * h * w
    }

    /// Flattened conv2 output, the LSTM input width.
    pub fn flat_len(&self) -> usize {
        let (h, w) = self.conv2_out();
        self.conv2_filters * h * w
    }

    pub fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let k1 = self.conv1_kernel * self.conv1_kernel;
        let k2 = self.conv2_kernel * self.conv2_kernel;
        let h4 = 4 * self.hidden;
        let conv1_w = take(self.conv1_filters * self.planes * k1);
        let conv1_b = take(self.conv1_filters);
        let conv2_w = take(self.conv2_filters * self.conv1_filters * k2);
        let conv2_b = take(self.conv2_filters);
        let lstm_wx = take(h4 * self.flat_len());
        let lstm_wh = take(h4 * self.hidden);
        let lstm_b = take(h4);
        let value_w = take(self.hidden);
        let value_b = take(1);
        let adv_w = take(self.actions * self.hidden);
        let adv_b = take(self.actions);
        Layout { conv1_w, conv1_b, conv2_w, conv2_b, lstm_wx, lstm_wh, lstm_b, value_w, value_b, adv_w, adv_b, total: at }
    }
}

/// Parameter ranges inside the flat vector, in storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub lstm_wx: Range<usize>,
    pub lstm_wh: Range<usize>,
    pub lstm_b: Range<usize>,
    pub value_w: Range<usize>,
    pub value_b: Range<usize>,
    pub adv_w: Range<usize>,
    pub adv_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn named(&self) -> [(&'static str, Range<usize>); 11] {
        [
            ("conv1_w", self.conv1_w.clone()),
            ("conv1_b", self.conv1_b.clone()),
            ("conv2_w", self.conv2_w.clone()),
            ("conv2_b", self.conv2_b.clone()),
            ("lstm_wx", self.lstm_wx.clone()),
            ("lstm_wh", self.lstm_wh.clone()),
            ("lstm_b", self.lstm_b.clone()),
            ("value_w", self.value_w.clone()),
            ("value_b", self.value_b.clone()),
            ("adv_w", self.adv_w.clone()),
            ("adv_b", self.adv_b.clone()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut s = [0.0; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        s[0] += a[j] * b[j];
        s[1] += a[j + 1] * b[j + 1];
        s[2] += a[j + 2] * b[j + 2];
        s[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Q_a = V + A_a − mean(A).
pub fn dueling_combine(value: f64, advantage: &[f64]) -> Vec<f64> {
    let mean = advantage.iter().sum::<f64>() / advantage.len() as f64;
    advantage.iter().map(|a| value + a - mean).collect()
}

#[derive(Clone, Copy)]
struct ConvShape {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    k: usize,
    s: usize,
}

impl ConvShape {
    fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Receptive field of every output position, one row per position in the
/// same (channel, ky, kx) order as the kernels.
fn im2col(input: &[f64], sh: ConvShape, cols: &mut Vec<f64>) {
    let plen = sh.patch_len();
    cols.clear();
    cols.resize(sh.positions() * plen, 0.0);
    for oy in 0..sh.out_h {
        for ox in 0..sh.out_w {
            let dst = &mut cols[(oy * sh.out_w + ox) * plen..][..plen];
            let mut d = 0;
            for ic in 0..sh.in_c {
                let plane = &input[ic * sh.in_h * sh.in_w..];
                for ky in 0..sh.k {
                    let row = (oy * sh.s + ky) * sh.in_w + ox * sh.s;
                    dst[d..d + sh.k].copy_from_slice(&plane[row..row + sh.k]);
                    d += sh.k;
                }
            }
        }
    }
}

/// Valid convolution followed by ReLU.
fn conv_relu(input: &[f64], w: &[f64], b: &[f64], sh: ConvShape, out: &mut [f64], cols: &mut Vec<f64>) {
    let plen = sh.patch_len();
    let np = sh.positions();
    im2col(input, sh, cols);
    for (pos, col) in cols.chunks_exact(plen).enumerate() {
        for oc in 0..sh.out_c {
            out[oc * np + pos] = (b[oc] + dot(&w[oc * plen..(oc + 1) * plen], col)).max(0.0);
        }
    }
}

/// Backward of [`conv_relu`] given its post-ReLU output and the gradient
/// w.r.t. that output. Accumulates weight/bias gradients and, when
/// `d_input` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_relu_backward(
    input: &[f64],
    w: &[f64],
    out: &[f64],
    d_out: &[f64],
    sh: ConvShape,
    dw: &mut [f64],
    db: &mut [f64],
    d_input: Option<&mut [f64]>,
    cols: &mut Vec<f64>,
) {
    let plen = sh.patch_len();
    let np = sh.positions();
    im2col(input, sh, cols);
    let mut dcol = vec![0.0; if d_input.is_some() { plen } else { 0 }];
    let mut dcols = vec![0.0; if d_input.is_some() { np * plen } else { 0 }];
    for pos in 0..np {
        let col = &cols[pos * plen..(pos + 1) * plen];
        dcol.iter_mut().for_each(|v| *v = 0.0);
        let mut any = false;
        for oc in 0..sh.out_c {
            let o = oc * np + pos;
            let g = d_out[o];
            if out[o] <= 0.0 || g == 0.0 {
                continue;
            }
            any = true;
            db[oc] += g;
            axpy(g, col, &mut dw[oc * plen..(oc + 1) * plen]);
            if !dcol.is_empty() {
                axpy(g, &w[oc * plen..(oc + 1) * plen], &mut dcol);
            }
        }
        if any && !dcols.is_empty() {
            dcols[pos * plen..(pos + 1) * plen].copy_from_slice(&dcol);
        }
    }
    if let Some(di) = d_input {
        // scatter the patch gradients back onto the input grid
        for oy in 0..sh.out_h {
            for ox in 0..sh.out_w {
                let src = &dcols[(oy * sh.out_w + ox) * plen..][..plen];
                let mut d = 0;
                for ic in 0..sh.in_c {
                    let poff = ic * sh.in_h * sh.in_w;
                    for ky in 0..sh.k {
                        let row = poff + (oy * sh.s + ky) * sh.in_w + ox * sh.s;
                        for (t, v) in di[row..row + sh.k].iter_mut().zip(&src[d..d + sh.k]) {
                            *t += v;
                        }
                        d += sh.k;
                    }
                }
            }
        }
    }
}

/// Activations of one unrolled step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    /// Post-activation gates i, f, g, o.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub value: f64,
    pub advantage: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub initial: LstmState,
    pub steps: Vec<StepCache>,
}

impl ForwardTrace {
    pub fn q(&self, t: usize) -> &[f64] {
        &self.steps[t].q
    }

    pub fn final_state(&self) -> LstmState {
        match self.steps.last() {
            Some(s) => LstmState { h: s.h.clone(), c: s.c.clone() },
            None => self.initial.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    arch: Arch,
    layout: Layout,
    params: Vec<f64>,
}

impl QNetwork {
    pub fn zeros(arch: Arch) -> QNetwork {
        let layout = arch.layout();
        QNetwork { params: vec![0.0; layout.total], arch, layout }
    }

    /// He-uniform conv/linear weights, ±0.08 LSTM weights, forget bias 1.
    pub fn new(arch: Arch, rng: &mut SeedRng) -> QNetwork {
        let mut net = QNetwork::zeros(arch);
        let l = net.layout.clone();
        let k1 = arch.conv1_kernel * arch.conv1_kernel;
        let k2 = arch.conv2_kernel * arch.conv2_kernel;
        net.fill_uniform(l.conv1_w.clone(), he_bound(arch.planes * k1), rng);
        net.fill_uniform(l.conv2_w.clone(), he_bound(arch.conv1_filters * k2), rng);
        net.fill_uniform(l.lstm_wx.clone(), 0.08, rng);
        net.fill_uniform(l.lstm_wh.clone(), 0.08, rng);
        for v in &mut net.params[l.lstm_b.start + arch.hidden..l.lstm_b.start + 2 * arch.hidden] {
            *v = 1.0;
        }
        net.fill_uniform(l.value_w.clone(), he_bound(arch.hidden), rng);
        net.fill_uniform(l.adv_w.clone(), he_bound(arch.hidden), rng);
        net
    }

    pub fn from_params(arch: Arch, params: Vec<f64>) -> Result<QNetwork, DrqnError> {
        let layout = arch.layout();
        if params.len() != layout.total {
            return Err(DrqnError::ShapeMismatch { expected: layout.total, got: params.len() });
        }
        Ok(QNetwork { arch, layout, params })
    }

    fn fill_uniform(&mut self, r: Range<usize>, bound: f64, rng: &mut SeedRng) {
        for v in &mut self.params[r] {
            *v = rng.random_range(-bound..bound);
        }
    }

    /// Re-draws the conv1 weights that read input planes `planes`.
    pub fn reinit_input_planes(&mut self, planes: Range<usize>, rng: &mut SeedRng) {
        let a = self.arch;
        let k1 = a.conv1_kernel * a.conv1_kernel;
        let bound = he_bound(a.planes * k1);
        for oc in 0..a.conv1_filters {
            for ic in planes.clone() {
                let start = self.layout.conv1_w.start + (oc * a.planes + ic) * k1;
                self.fill_uniform(start..start + k1, bound, rng);
            }
        }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn conv_shapes(&self) -> (ConvShape, ConvShape) {
        let a = &self.arch;
        let (h1, w1) = a.conv1_out();
        let (h2, w2) = a.conv2_out();
        (
            ConvShape { in_c: a.planes, in_h: a.height, in_w: a.width, out_c: a.conv1_filters, out_h: h1, out_w: w1, k: a.conv1_kernel, s: a.conv1_stride },
            ConvShape { in_c: a.conv1_filters, in_h: h1, in_w: w1, out_c: a.conv2_filters, out_h: h2, out_w: w2, k: a.conv2_kernel, s: a.conv2_stride },
        )
    }

    /// Convolutional features of one observation.
    fn features(&self, obs: &[f64], cols: &mut Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let l = &self.layout;
        let (s1, s2) = self.conv_shapes();
        let mut a1 = vec![0.0; self.arch.conv1_len()];
        conv_relu(obs, &p[l.conv1_w.clone()], &p[l.conv1_b.clone()], s1, &mut a1, cols);
        let mut a2 = vec![0.0; self.arch.flat_len()];
        conv_relu(&a1, &p[l.conv2_w.clone()], &p[l.conv2_b.clone()], s2, &mut a2, cols);
        (a1, a2)
    }

    /// Input part of the gate pre-activations, b + W_x·a2, for every step.
    /// Rows are the outer loop so each weight row is read once.
    fn input_projection(&self, a2: &[&[f64]]) -> Vec<Vec<f64>> {
        let p = &self.params;
        let l = &self.layout;
        let nin = self.arch.flat_len();
        let rows = 4 * self.arch.hidden;
        let wx = &p[l.lstm_wx.clone()];
        let b = &p[l.lstm_b.clone()];
        let mut zx = vec![vec![0.0; rows]; a2.len()];
        for r in 0..rows {
            let w = &wx[r * nin..(r + 1) * nin];
            for (t, x) in a2.iter().enumerate() {
                zx[t][r] = b[r] + dot(w, x);
            }
        }
        zx
    }

    fn recurrent_step(&self, a1: Vec<f64>, a2: Vec<f64>, mut z: Vec<f64>, prev: &LstmState) -> StepCache {
        let p = &self.params;
        let l = &self.layout;
        let a = &self.arch;
        let hd = a.hidden;
        let wh = &p[l.lstm_wh.clone()];
        for r in 0..4 * hd {
            let v = z[r] + dot(&wh[r * hd..(r + 1) * hd], &prev.h);
            z[r] = if (2 * hd..3 * hd).contains(&r) { libm::tanh(v) } else { sigmoid(v) };
        }
        let gates = z;
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            c[j] = gates[hd + j] * prev.c[j] + gates[j] * gates[2 * hd + j];
            tanh_c[j] = libm::tanh(c[j]);
            h[j] = gates[3 * hd + j] * tanh_c[j];
        }
        let value = p[l.value_b.start] + dot(&p[l.value_w.clone()], &h);
        let advantage: Vec<f64> = (0..a.actions).map(|k| p[l.adv_b.start + k] + dot(&p[l.adv_w.start + k * hd..l.adv_w.start + (k + 1) * hd], &h)).collect();
        let q = dueling_combine(value, &advantage);
        StepCache { a1, a2, gates, c, tanh_c, h, value, advantage, q }
    }

    fn check_obs(&self, obs: &[f64]) -> Result<(), DrqnError> {
        let n = self.arch.input_len();
        if obs.len() != n {
            return Err(DrqnError::ShapeMismatch { expected: n, got: obs.len() });
        }
        Ok(())
    }

    /// One step of inference; advances `state`.
    pub fn forward_step(&self, obs: &[f64], state: &mut LstmState) -> Result<Vec<f64>, DrqnError> {
        let mut tr = self.forward(&[obs], state)?;
        let s = tr.steps.pop().expect("one step");
        state.h = s.h;
        state.c = s.c;
        Ok(s.q)
    }

    /// Unrolls the network over `obs` from `initial`, recording activations.
    pub fn forward(&self, obs: &[&[f64]], initial: &LstmState) -> Result<ForwardTrace, DrqnError> {
        if obs.is_empty() {
            return Err(DrqnError::EmptySequence);
        }
        let mut cols = Vec::new();
        let mut feats = Vec::with_capacity(obs.len());
        for o in obs {
            self.check_obs(o)?;
            feats.push(self.features(o, &mut cols));
        }
        let a2: Vec<&[f64]> = feats.iter().map(|f| f.1.as_slice()).collect();
        let zx = self.input_projection(&a2);
        let mut steps: Vec<StepCache> = Vec::with_capacity(obs.len());
        for ((a1, a2), z) in feats.into_iter().zip(zx) {
            let cache = match steps.last() {
                Some(prev) => {
                    let st = LstmState { h: prev.h.clone(), c: prev.c.clone() };
                    self.recurrent_step(a1, a2, z, &st)
                }
                None => self.recurrent_step(a1, a2, z, initial),
            };
            steps.push(cache);
        }
        Ok(ForwardTrace { initial: initial.clone(), steps })
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative
    /// w.r.t. the Q-values of step t is `d_q[t]`.
    pub fn backward(&self, obs: &[&[f64]], trace: &ForwardTrace, d_q: &[Vec<f64>], grads: &mut [f64]) -> Result<(), DrqnError> {
        if grads.len() != self.layout.total {
            return Err(DrqnError::ShapeMismatch { expected: self.layout.total, got: grads.len() });
        }
        if d_q.len() != trace.steps.len() || obs.len() != trace.steps.len() {
            return Err(DrqnError::ShapeMismatch { expected: trace.steps.len(), got: d_q.len() });
        }
        let a = self.arch;
        let l = self.layout.clone();
        let p = &self.params;
        let hd = a.hidden;
        let nin = a.flat_len();
        let (s1, s2) = self.conv_shapes();
        let steps = trace.steps.len();
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dzs = vec![vec![0.0; 4 * hd]; steps];
        for t in (0..steps).rev() {
            let st = &trace.steps[t];
            let (h_prev, c_prev) = if t == 0 { (&trace.initial.h, &trace.initial.c) } else { (&trace.steps[t - 1].h, &trace.steps[t - 1].c) };
            let dq = &d_q[t];
            if dq.iter().any(|v| !v.is_finite()) {
                return Err(DrqnError::NonFinite("loss gradient"));
            }
            // dueling heads
            let d_value: f64 = dq.iter().sum();
            let mean_dq = d_value / a.actions as f64;
            let mut dh = dh_next.clone();
            grads[l.value_b.start] += d_value;
            axpy(d_value, &st.h, &mut grads[l.value_w.clone()]);
            axpy(d_value, &p[l.value_w.clone()], &mut dh);
            for k in 0..a.actions {
                let d_adv = dq[k] - mean_dq;
                grads[l.adv_b.start + k] += d_adv;
                let wr = l.adv_w.start + k * hd..l.adv_w.start + (k + 1) * hd;
                axpy(d_adv, &st.h, &mut grads[wr.clone()]);
                axpy(d_adv, &p[wr], &mut dh);
            }
            // LSTM cell
            let g = &st.gates;
            let dz = &mut dzs[t];
            for j in 0..hd {
                let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let d_o = dh[j] * st.tanh_c[j];
                let dc = dh[j] * o * (1.0 - st.tanh_c[j] * st.tanh_c[j]) + dc_next[j];
                dz[j] = dc * gg * i * (1.0 - i);
                dz[hd + j] = dc * c_prev[j] * f * (1.0 - f);
                dz[2 * hd + j] = dc * i * (1.0 - gg * gg);
                dz[3 * hd + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * hd {
                let z = dz[r];
                if z == 0.0 {
                    continue;
                }
                grads[l.lstm_b.start + r] += z;
                let whr = l.lstm_wh.start + r * hd..l.lstm_wh.start + (r + 1) * hd;
                axpy(z, h_prev, &mut grads[whr.clone()]);
                axpy(z, &p[whr], &mut dh_next);
            }
        }
        // input weights, one pass over each row for all steps
        let mut da2 = vec![vec![0.0; nin]; steps];
        for r in 0..4 * hd {
            let wxr = l.lstm_wx.start + r * nin..l.lstm_wx.start + (r + 1) * nin;
            for t in 0..steps {
                let z = dzs[t][r];
                if z == 0.0 {
                    continue;
                }
                axpy(z, &trace.steps[t].a2, &mut grads[wxr.clone()]);
                axpy(z, &p[wxr.clone()], &mut da2[t]);
            }
        }
        // convolutions
        let mut da1 = vec![0.0; a.conv1_len()];
        let mut cols = Vec::new();
        for t in 0..steps {
            let st = &trace.steps[t];
            da1.iter_mut().for_each(|v| *v = 0.0);
            {
                let (dw2, rest) = grads[l.conv2_w.start..].split_at_mut(l.conv2_w.len());
                let db2 = &mut rest[..l.conv2_b.len()];
                conv_relu_backward(&st.a1, &p[l.conv2_w.clone()], &st.a2, &da2[t], s2, dw2, db2, Some(&mut da1), &mut cols);
            }
            let (dw1, rest) = grads[l.conv1_w.start..].split_at_mut(l.conv1_w.len());
            let db1 = &mut rest[..l.conv1_b.len()];
            conv_relu_backward(obs[t], &p[l.conv1_w.clone()], &st.a1, &da1, s1, dw1, db1, None, &mut cols);
        }
        Ok(())
    }
}

fn he_bound(fan_in: usize) -> f64 {
    libm::sqrt(6.0 / fan_in as f64)
}

/// Hard copy of the online parameters into the target network.
pub fn sync_target(online: &QNetwork, target: &mut QNetwork) -> Result<(), DrqnError> {
    if online.arch != target.arch {
        return Err(DrqnError::ArchMismatch);
    }
    target.params.copy_from_slice(&online.params);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 2.5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: AdamParams, len: usize) -> Adam {
        Adam { params, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), DrqnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DrqnError::ShapeMismatch { expected: self.m.len(), got: grads.len() });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(DrqnError::NonFinite("gradient"));
        }
        self.t += 1;
        let AdamParams { lr, beta1, beta2, eps } = self.params;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (libm::sqrt(vh) + eps);
        }
        Ok(())
    }
}
