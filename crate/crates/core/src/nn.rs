//! Neural-network building blocks with explicit backward passes.
//!
//! Everything here is plain `f64` on `ndarray`: dense and 3x3 convolutional
//! layers, ReLU, average pooling, global average pooling, and an AdamW-style
//! optimizer. Layers cache nothing; forward passes return the values a later
//! backward pass needs, so the same layer can serve several inputs per step
//! (the shared encoder sees both domains) and gradients accumulate across
//! backward calls until `zero_grads`.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Visitor over named parameter blocks. Each block is a flat slice of the
/// parameter values paired with its gradient accumulator.
pub type ParamFn<'a> = dyn FnMut(&str, &mut [f64], &mut [f64]) + 'a;

/// Read-only variant used for checkpointing; also reports the tensor shape.
pub type ParamViewFn<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;

/// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn init_weight(rng: &mut ChaCha8Rng, fan_in: usize) -> f64 {
    let bound = 1.0 / (fan_in as f64).sqrt();
    rng.random_range(-bound..bound)
}

pub fn relu2(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Masks `gy` by the positive entries of the pre-activation.
pub fn relu2_backward(pre: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
    let mut g = gy.clone();
    g.zip_mut_with(pre, |gv, &p| {
        if p <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

fn relu4(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

fn relu4_backward(pre: &Array4<f64>, gy: &Array4<f64>) -> Array4<f64> {
    let mut g = gy.clone();
    g.zip_mut_with(pre, |gv, &p| {
        if p <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Errors with the offending stage name if `data` contains NaN/Inf.
pub fn check_finite(stage: &str, data: &[f64]) -> Result<()> {
    if all_finite(data) {
        Ok(())
    } else {
        Err(Error::numeric(stage, "non-finite activation"))
    }
}

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

/// Fully-connected layer `y = x W + b` with weight shape `(in, out)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = Array2::from_shape_fn((in_dim, out_dim), |_| init_weight(rng, in_dim));
        Dense {
            w,
            b: Array1::zeros(out_dim),
            gw: Array2::zeros((in_dim, out_dim)),
            gb: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::config(format!(
                "dense layer expects input dim {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.w) + &self.b)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
        self.gw += &x.t().dot(gy);
        self.gb += &gy.sum_axis(Axis(0));
        gy.dot(&self.w.t())
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut ParamFn) {
        f(
            &format!("{prefix}.w"),
            self.w.as_slice_mut().expect("standard layout"),
            self.gw.as_slice_mut().expect("standard layout"),
        );
        f(
            &format!("{prefix}.b"),
            self.b.as_slice_mut().expect("standard layout"),
            self.gb.as_slice_mut().expect("standard layout"),
        );
    }

    pub fn for_each_param_view(&self, prefix: &str, f: &mut ParamViewFn) {
        f(
            &format!("{prefix}.w"),
            &[self.w.nrows(), self.w.ncols()],
            self.w.as_slice().expect("standard layout"),
        );
        f(
            &format!("{prefix}.b"),
            &[self.b.len()],
            self.b.as_slice().expect("standard layout"),
        );
    }
}

// ---------------------------------------------------------------------------
// MLP stack (dense + ReLU per stage)
// ---------------------------------------------------------------------------

/// A sequence of dense+ReLU stages; the encoder form used for vector inputs.
#[derive(Debug, Clone)]
pub struct MlpStack {
    pub layers: Vec<Dense>,
}

/// Per-layer values captured during a forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
}

impl MlpStack {
    pub fn new(in_dim: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut d = in_dim;
        for &w in widths {
            layers.push(Dense::new(d, w, rng));
            d = w;
        }
        MlpStack { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    /// `label` names the stack in numeric-failure errors.
    pub fn forward(&self, x: &Array2<f64>, label: &str) -> Result<(Array2<f64>, MlpTrace)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&cur)?;
            check_finite(
                &format!("{label}.stage{i}"),
                pre.as_slice().expect("standard layout"),
            )?;
            let act = relu2(&pre);
            inputs.push(cur);
            preacts.push(pre);
            cur = act;
        }
        Ok((cur, MlpTrace { inputs, preacts }))
    }

    pub fn backward(&mut self, trace: &MlpTrace, gy: &Array2<f64>) -> Array2<f64> {
        let mut g = gy.clone();
        for i in (0..self.layers.len()).rev() {
            g = relu2_backward(&trace.preacts[i], &g);
            g = self.layers[i].backward(&trace.inputs[i], &g);
        }
        g
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut ParamFn) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.for_each_param(&format!("{prefix}.stage{i}"), f);
        }
    }

    pub fn for_each_param_view(&self, prefix: &str, f: &mut ParamViewFn) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.for_each_param_view(&format!("{prefix}.stage{i}"), f);
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution (3x3, padding 1, stride 1)
// ---------------------------------------------------------------------------

/// 3x3 same-padding convolution with weight shape `(out_c, in_c, 3, 3)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Array4<f64>,
    pub b: Array1<f64>,
    pub gw: Array4<f64>,
    pub gb: Array1<f64>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_c * 9;
        let w = Array4::from_shape_fn((out_c, in_c, 3, 3), |_| init_weight(rng, fan_in));
        Conv2d {
            w,
            b: Array1::zeros(out_c),
            gw: Array4::zeros((out_c, in_c, 3, 3)),
            gb: Array1::zeros(out_c),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, ic, h, w) = x.dim();
        if ic != self.in_channels() {
            return Err(Error::config(format!(
                "conv layer expects {} input channels, got {ic}",
                self.in_channels()
            )));
        }
        let oc = self.out_channels();
        let mut y = Array4::zeros((n, oc, h, w));
        for ni in 0..n {
            for o in 0..oc {
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = self.b[o];
                        for i in 0..ic {
                            for ky in 0..3usize {
                                let sy = yy as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..3usize {
                                    let sx = xx as isize + kx as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    acc += self.w[[o, i, ky, kx]]
                                        * x[[ni, i, sy as usize, sx as usize]];
                                }
                            }
                        }
                        y[[ni, o, yy, xx]] = acc;
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Array4<f64>, gy: &Array4<f64>) -> Array4<f64> {
        let (n, ic, h, w) = x.dim();
        let oc = self.out_channels();
        let mut gx = Array4::zeros((n, ic, h, w));
        for ni in 0..n {
            for o in 0..oc {
                for yy in 0..h {
                    for xx in 0..w {
                        let g = gy[[ni, o, yy, xx]];
                        if g == 0.0 {
                            continue;
                        }
                        self.gb[o] += g;
                        for i in 0..ic {
                            for ky in 0..3usize {
                                let sy = yy as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..3usize {
                                    let sx = xx as isize + kx as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    let (sy, sx) = (sy as usize, sx as usize);
                                    self.gw[[o, i, ky, kx]] += x[[ni, i, sy, sx]] * g;
                                    gx[[ni, i, sy, sx]] += self.w[[o, i, ky, kx]] * g;
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut ParamFn) {
        f(
            &format!("{prefix}.w"),
            self.w.as_slice_mut().expect("standard layout"),
            self.gw.as_slice_mut().expect("standard layout"),
        );
        f(
            &format!("{prefix}.b"),
            self.b.as_slice_mut().expect("standard layout"),
            self.gb.as_slice_mut().expect("standard layout"),
        );
    }

    pub fn for_each_param_view(&self, prefix: &str, f: &mut ParamViewFn) {
        let s = self.w.shape().to_vec();
        f(
            &format!("{prefix}.w"),
            &s,
            self.w.as_slice().expect("standard layout"),
        );
        f(
            &format!("{prefix}.b"),
            &[self.b.len()],
            self.b.as_slice().expect("standard layout"),
        );
    }
}

/// 2x2 average pooling with stride 2; trailing odd rows/columns are dropped.
pub fn avg_pool2(x: &Array4<f64>) -> Result<Array4<f64>> {
    let (n, c, h, w) = x.dim();
    let (ph, pw) = (h / 2, w / 2);
    if ph == 0 || pw == 0 {
        return Err(Error::config(format!(
            "feature map {h}x{w} too small for 2x2 pooling"
        )));
    }
    let mut y = Array4::zeros((n, c, ph, pw));
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..ph {
                for xx in 0..pw {
                    let s = x[[ni, ci, 2 * yy, 2 * xx]]
                        + x[[ni, ci, 2 * yy, 2 * xx + 1]]
                        + x[[ni, ci, 2 * yy + 1, 2 * xx]]
                        + x[[ni, ci, 2 * yy + 1, 2 * xx + 1]];
                    y[[ni, ci, yy, xx]] = s * 0.25;
                }
            }
        }
    }
    Ok(y)
}

pub fn avg_pool2_backward(gy: &Array4<f64>, in_h: usize, in_w: usize) -> Array4<f64> {
    let (n, c, ph, pw) = gy.dim();
    let mut gx = Array4::zeros((n, c, in_h, in_w));
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..ph {
                for xx in 0..pw {
                    let g = gy[[ni, ci, yy, xx]] * 0.25;
                    gx[[ni, ci, 2 * yy, 2 * xx]] += g;
                    gx[[ni, ci, 2 * yy, 2 * xx + 1]] += g;
                    gx[[ni, ci, 2 * yy + 1, 2 * xx]] += g;
                    gx[[ni, ci, 2 * yy + 1, 2 * xx + 1]] += g;
                }
            }
        }
    }
    gx
}

/// Global average pooling `(n, c, h, w) -> (n, c)`.
pub fn gap(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut y = Array2::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = 0.0;
            for yy in 0..h {
                for xx in 0..w {
                    acc += x[[ni, ci, yy, xx]];
                }
            }
            y[[ni, ci]] = acc * scale;
        }
    }
    y
}

pub fn gap_backward(gy: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c) = gy.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut gx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let g = gy[[ni, ci]] * scale;
            for yy in 0..h {
                for xx in 0..w {
                    gx[[ni, ci, yy, xx]] = g;
                }
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// Convolutional stack (conv3x3 + ReLU + avgpool per stage)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvStack {
    pub stages: Vec<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct ConvTrace {
    inputs: Vec<Array4<f64>>,
    preacts: Vec<Array4<f64>>,
}

impl ConvStack {
    pub fn new(in_c: usize, channels: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::with_capacity(channels.len());
        let mut c = in_c;
        for &oc in channels {
            stages.push(Conv2d::new(c, oc, rng));
            c = oc;
        }
        ConvStack { stages }
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map(|s| s.out_channels()).unwrap_or(0)
    }

    pub fn forward(&self, x: &Array4<f64>, label: &str) -> Result<(Array4<f64>, ConvTrace)> {
        let mut inputs = Vec::with_capacity(self.stages.len());
        let mut preacts = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for (i, conv) in self.stages.iter().enumerate() {
            let pre = conv.forward(&cur)?;
            check_finite(
                &format!("{label}.stage{i}"),
                pre.as_slice().expect("standard layout"),
            )?;
            let act = relu4(&pre);
            let pooled = avg_pool2(&act)?;
            inputs.push(cur);
            preacts.push(pre);
            cur = pooled;
        }
        Ok((cur, ConvTrace { inputs, preacts }))
    }

    pub fn backward(&mut self, trace: &ConvTrace, gy: &Array4<f64>) -> Array4<f64> {
        let mut g = gy.clone();
        for i in (0..self.stages.len()).rev() {
            let pre = &trace.preacts[i];
            let (_, _, h, w) = pre.dim();
            g = avg_pool2_backward(&g, h, w);
            g = relu4_backward(pre, &g);
            g = self.stages[i].backward(&trace.inputs[i], &g);
        }
        g
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut ParamFn) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.for_each_param(&format!("{prefix}.stage{i}"), f);
        }
    }

    pub fn for_each_param_view(&self, prefix: &str, f: &mut ParamViewFn) {
        for (i, stage) in self.stages.iter().enumerate() {
            stage.for_each_param_view(&format!("{prefix}.stage{i}"), f);
        }
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay.
///
/// Parameter blocks whose gradient is exactly zero for a step are left
/// untouched: no moment update and no decay. Heads that receive no signal
/// (e.g. the projection head before its loss activates) therefore stay
/// bit-identical to their initialization.
#[derive(Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: HashMap<String, AdamSlot>,
}

#[derive(Debug)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: HashMap::new(),
        }
    }

    /// Applies one update. `for_each` must drive the supplied visitor over
    /// every named parameter block (see `Model::for_each_param`).
    pub fn step<F>(&mut self, mut for_each: F)
    where
        F: FnMut(&mut ParamFn),
    {
        let (lr, b1, b2, eps, wd) = (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay);
        let state = &mut self.state;
        for_each(&mut |name, p, g| {
            if g.iter().all(|&v| v == 0.0) {
                return;
            }
            let slot = state.entry(name.to_string()).or_insert_with(|| AdamSlot {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
                steps: 0,
            });
            slot.steps += 1;
            let bc1 = 1.0 - b1.powi(slot.steps as i32);
            let bc2 = 1.0 - b2.powi(slot.steps as i32);
            for i in 0..p.len() {
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g[i];
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[i]);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn dense_forward_known_values() {
        let mut d = Dense::new(2, 2, &mut rng());
        d.w = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        d.b = ndarray::arr1(&[0.5, -0.5]);
        let x = ndarray::arr2(&[[1.0, 1.0]]);
        let y = d.forward(&x).unwrap();
        assert_eq!(y, ndarray::arr2(&[[4.5, 5.5]]));
    }

    #[test]
    fn dense_rejects_dim_mismatch() {
        let d = Dense::new(3, 2, &mut rng());
        let x = Array2::zeros((1, 4));
        assert!(matches!(d.forward(&x), Err(Error::Config(_))));
    }

    #[test]
    fn dense_gradient_matches_finite_differences() {
        let mut rng = rng();
        let mut d = Dense::new(3, 2, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        // scalar objective: sum of squared outputs
        let loss = |d: &Dense, x: &Array2<f64>| -> f64 {
            d.forward(x).unwrap().iter().map(|v| v * v).sum()
        };
        let y = d.forward(&x).unwrap();
        let gy = y.mapv(|v| 2.0 * v);
        let gx = d.backward(&x, &gy);

        let h = 1e-6;
        // input gradient
        for r in 0..4 {
            for c in 0..3 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&d, &xp) - loss(&d, &xm)) / (2.0 * h);
                assert!((fd - gx[[r, c]]).abs() < 1e-6, "input grad mismatch");
            }
        }
        // weight gradient
        for r in 0..3 {
            for c in 0..2 {
                let mut dp = d.clone();
                dp.w[[r, c]] += h;
                let mut dm = d.clone();
                dm.w[[r, c]] -= h;
                let fd = (loss(&dp, &x) - loss(&dm, &x)) / (2.0 * h);
                assert!((fd - d.gw[[r, c]]).abs() < 1e-5, "weight grad mismatch");
            }
        }
    }

    #[test]
    fn mlp_stack_gradient_matches_finite_differences() {
        let mut rng = rng();
        let stack = MlpStack::new(3, &[5, 4], &mut rng);
        let x = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let loss = |s: &MlpStack, x: &Array2<f64>| -> f64 {
            s.forward(x, "t").unwrap().0.iter().map(|v| v * v).sum()
        };
        let (y, trace) = stack.forward(&x, "t").unwrap();
        let mut s2 = stack.clone();
        let gx = s2.backward(&trace, &y.mapv(|v| 2.0 * v));
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..3 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&stack, &xp) - loss(&stack, &xm)) / (2.0 * h);
                assert!((fd - gx[[r, c]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_stack_gradient_matches_finite_differences() {
        let mut rng = rng();
        let stack = ConvStack::new(2, &[3], &mut rng);
        let x = Array4::from_shape_fn((2, 2, 4, 4), |_| rng.random_range(-1.0..1.0));
        let loss = |s: &ConvStack, x: &Array4<f64>| -> f64 {
            s.forward(x, "c").unwrap().0.iter().map(|v| v * v).sum()
        };
        let (y, trace) = stack.forward(&x, "c").unwrap();
        let mut s2 = stack.clone();
        let gx = s2.backward(&trace, &y.mapv(|v| 2.0 * v));
        let h = 1e-5;
        for idx in [(0, 0, 0, 0), (1, 1, 2, 3), (0, 1, 3, 1)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&stack, &xp) - loss(&stack, &xm)) / (2.0 * h);
            assert!(
                (fd - gx[idx]).abs() < 1e-5,
                "conv input grad mismatch at {idx:?}: fd={fd} an={}",
                gx[idx]
            );
        }
        // weight spot-check
        let (_, trace) = stack.forward(&x, "c").unwrap();
        let mut s3 = stack.clone();
        let (y3, _) = s3.forward(&x, "c").unwrap();
        s3.backward(&trace, &y3.mapv(|v| 2.0 * v));
        for idx in [(0, 0, 0, 0), (2, 1, 1, 2)] {
            let mut sp = stack.clone();
            sp.stages[0].w[idx] += h;
            let mut sm = stack.clone();
            sm.stages[0].w[idx] -= h;
            let fd = (loss(&sp, &x) - loss(&sm, &x)) / (2.0 * h);
            assert!((fd - s3.stages[0].gw[idx]).abs() < 1e-5);
        }
    }

    #[test]
    fn gap_is_mean_over_spatial_dims() {
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, y, xx)| (y * 2 + xx) as f64);
        let y = gap(&x);
        assert_eq!(y[[0, 0]], 1.5);
    }

    #[test]
    fn adamw_skips_blocks_with_zero_gradient() {
        let mut opt = AdamW::new(0.1, 0.01);
        let mut p = vec![1.0, 2.0];
        let mut g = vec![0.0, 0.0];
        opt.step(|f| f("frozen", &mut p, &mut g));
        assert_eq!(p, vec![1.0, 2.0]);

        let mut g = vec![1.0, 0.0];
        opt.step(|f| f("live", &mut p, &mut g));
        assert!(p[0] < 1.0);
    }

    #[test]
    fn adamw_first_step_moves_by_about_lr() {
        let mut opt = AdamW::new(0.01, 0.0);
        let mut p = vec![0.0];
        let mut g = vec![3.0];
        opt.step(|f| f("p", &mut p, &mut g));
        // first Adam step is ~lr regardless of gradient magnitude
        assert!((p[0] + 0.01).abs() < 1e-9);
    }
}
