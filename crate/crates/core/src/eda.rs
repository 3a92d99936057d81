//! Early domain alignment: losses that pull the two private encoders'
//! intermediate features toward a common distribution.
//!
//! Two interchangeable strategies are provided behind [`EdaStrategy`]:
//! an adversarial domain classifier trained through a gradient-reversal
//! boundary, and a multi-kernel MMD penalty between the pooled features.
//! Strategies are registered by name and selected at runtime through
//! `eda.variant` (`adversarial` | `mkmmd` | `off`).

use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;

/// Probabilities this close to 0 or 1 are clamped before taking logs.
pub const BCE_EPS: f64 = 1e-7;

// ---------------------------------------------------------------------------
// Adversarial loss
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BceOutcome {
    pub value: f64,
    /// Gradient of the loss with respect to each probability.
    pub d_probs: Array1<f64>,
    /// Number of probabilities that had to be clamped away from {0, 1}.
    pub clamp_events: u64,
}

/// Binary cross-entropy of domain probabilities against domain labels,
/// averaged over the combined batch. Labels are 0 for target and 1 for
/// auxiliary. Probabilities at exactly 0 or 1 are clamped to
/// `[BCE_EPS, 1 - BCE_EPS]` and counted.
pub fn adversarial_eda_loss(probs: &Array1<f64>, labels: &[u8]) -> Result<BceOutcome> {
    if probs.len() != labels.len() {
        return Err(Error::config(format!(
            "probs ({}) and labels ({}) lengths differ",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::config("adversarial_eda_loss needs a non-empty batch"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::data(format!("domain label {l} is not in {{0, 1}}")));
    }
    let n = probs.len() as f64;
    let mut clamp_events = 0u64;
    let mut value = 0.0;
    let mut d = Array1::zeros(probs.len());
    for (i, (&p_raw, &y)) in probs.iter().zip(labels.iter()).enumerate() {
        if !p_raw.is_finite() {
            return Err(Error::numeric("adversarial_eda_loss", "non-finite probability"));
        }
        let p = p_raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        if p != p_raw {
            clamp_events += 1;
        }
        let y = y as f64;
        value -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        // gradient evaluated at the clamped probability
        d[i] = -(y / p - (1.0 - y) / (1.0 - p)) / n;
    }
    Ok(BceOutcome {
        value: value / n,
        d_probs: d,
        clamp_events,
    })
}

// ---------------------------------------------------------------------------
// MK-MMD
// ---------------------------------------------------------------------------

/// A bank of Gaussian kernel bandwidths; `k(a, b) = exp(-||a - b||^2 / bw)`.
#[derive(Debug, Clone)]
pub struct KernelBank {
    bandwidths: Vec<f64>,
}

impl KernelBank {
    pub fn new(bandwidths: Vec<f64>) -> Result<KernelBank> {
        if bandwidths.is_empty() {
            return Err(Error::config("kernel bank must not be empty"));
        }
        if bandwidths.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::config("kernel bandwidths must be positive and finite"));
        }
        Ok(KernelBank { bandwidths })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }
}

/// Median pairwise squared distance over the combined batch, scaled by each
/// entry of `scales`. All-identical points fall back to a median of 1.
pub fn median_heuristic_bandwidths(pooled: &Array2<f64>, scales: &[f64]) -> Result<KernelBank> {
    let n = pooled.nrows();
    if n < 2 {
        return Err(Error::degenerate(
            "median heuristic requires at least 2 samples",
        ));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&pooled.row(i), &pooled.row(j));
            dists.push(d);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    let median = if median == 0.0 { 1.0 } else { median };
    KernelBank::new(scales.iter().map(|s| s * median).collect())
}

fn sq_dist(a: &ndarray::ArrayView1<f64>, b: &ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn pairwise_sq_dists(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let (n, m) = (x.nrows(), y.nrows());
    let mut d = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            d[[i, j]] = sq_dist(&x.row(i), &y.row(j));
        }
    }
    d
}

fn mkmmd_validate(x: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::config(format!(
            "mkmmd inputs have different dims ({} vs {})",
            x.ncols(),
            y.ncols()
        )));
    }
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::degenerate(format!(
            "mkmmd needs at least 2 samples per side (got {} and {})",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok(())
}

/// Multi-kernel MMD^2 between two batches, using the biased V-statistic:
/// for each kernel, `mean k(x, x) + mean k(y, y) - 2 mean k(x, y)`.
pub fn mkmmd(x: &Array2<f64>, y: &Array2<f64>, kernels: &KernelBank) -> Result<f64> {
    mkmmd_validate(x, y)?;
    let dxx = pairwise_sq_dists(x, x);
    let dyy = pairwise_sq_dists(y, y);
    let dxy = pairwise_sq_dists(x, y);
    let mut total = 0.0;
    for &bw in kernels.bandwidths() {
        let mean_k = |d: &Array2<f64>| d.mapv(|v| (-v / bw).exp()).mean().expect("non-empty");
        total += mean_k(&dxx) + mean_k(&dyy) - 2.0 * mean_k(&dxy);
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct MkmmdOutcome {
    pub value: f64,
    pub d_x: Array2<f64>,
    pub d_y: Array2<f64>,
}

/// MK-MMD^2 together with its gradient with respect to both inputs.
pub fn mkmmd_with_grad(x: &Array2<f64>, y: &Array2<f64>, kernels: &KernelBank) -> Result<MkmmdOutcome> {
    mkmmd_validate(x, y)?;
    let (n, m) = (x.nrows(), y.nrows());
    let dxx = pairwise_sq_dists(x, x);
    let dyy = pairwise_sq_dists(y, y);
    let dxy = pairwise_sq_dists(x, y);
    let mut value = 0.0;
    let mut d_x = Array2::zeros(x.dim());
    let mut d_y = Array2::zeros(y.dim());
    let (nf, mf) = (n as f64, m as f64);
    for &bw in kernels.bandwidths() {
        let kxx = dxx.mapv(|v| (-v / bw).exp());
        let kyy = dyy.mapv(|v| (-v / bw).exp());
        let kxy = dxy.mapv(|v| (-v / bw).exp());
        value += kxx.mean().unwrap() + kyy.mean().unwrap() - 2.0 * kxy.mean().unwrap();

        // d k(a, b) / d a = -2 (a - b) k / bw
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // sum over both index positions collapses to a factor 2
                let c = 2.0 * kxx[[i, j]] * (-2.0 / bw) / (nf * nf);
                for t in 0..x.ncols() {
                    d_x[[i, t]] += c * (x[[i, t]] - x[[j, t]]);
                }
            }
            for j in 0..m {
                let c = -2.0 * kxy[[i, j]] * (-2.0 / bw) / (nf * mf);
                for t in 0..x.ncols() {
                    d_x[[i, t]] += c * (x[[i, t]] - y[[j, t]]);
                }
            }
        }
        for j in 0..m {
            for jj in 0..m {
                if j == jj {
                    continue;
                }
                let c = 2.0 * kyy[[j, jj]] * (-2.0 / bw) / (mf * mf);
                for t in 0..y.ncols() {
                    d_y[[j, t]] += c * (y[[j, t]] - y[[jj, t]]);
                }
            }
            for i in 0..n {
                let c = -2.0 * kxy[[i, j]] * (-2.0 / bw) / (nf * mf);
                for t in 0..y.ncols() {
                    d_y[[j, t]] += c * (y[[j, t]] - x[[i, t]]);
                }
            }
        }
    }
    Ok(MkmmdOutcome { value, d_x, d_y })
}

// ---------------------------------------------------------------------------
// Strategy registry
// ---------------------------------------------------------------------------

/// Settings shared by all EDA variants. Mirrors the `eda.*` config keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdaSettings {
    pub variant: String,
    pub kernel_scales: Vec<f64>,
    pub grl_lambda: f64,
}

impl Default for EdaSettings {
    fn default() -> Self {
        EdaSettings {
            variant: "adversarial".to_string(),
            kernel_scales: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            grl_lambda: 1.0,
        }
    }
}

/// Result of one strategy evaluation. Gradients are with respect to the
/// pooled private-encoder features and are already scaled by the loss
/// weight (and, for the adversarial variant, crossed through the reversal
/// boundary), ready to inject at the encoder junction.
#[derive(Debug, Default)]
pub struct EdaOutcome {
    pub value: f64,
    pub d_pooled_target: Option<Array2<f64>>,
    pub d_pooled_aux: Option<Array2<f64>>,
    pub clamp_events: u64,
}

/// One early-domain-alignment algorithm. Implementations are stateless
/// between batches; everything they learn lives in the model.
pub trait EdaStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Computes the alignment loss for one batch pair. With `train` set,
    /// parameter gradients (adversarial head) accumulate into the model and
    /// pooled-feature gradients scaled by `weight` are returned.
    fn evaluate(
        &self,
        model: &mut Model,
        pooled_target: &Array2<f64>,
        pooled_aux: &Array2<f64>,
        weight: f64,
        train: bool,
    ) -> Result<EdaOutcome>;
}

struct AdversarialEda {
    grl_lambda: f64,
}

impl EdaStrategy for AdversarialEda {
    fn name(&self) -> &'static str {
        "adversarial"
    }

    fn evaluate(
        &self,
        model: &mut Model,
        pooled_target: &Array2<f64>,
        pooled_aux: &Array2<f64>,
        weight: f64,
        train: bool,
    ) -> Result<EdaOutcome> {
        let n_t = pooled_target.nrows();
        let all = concatenate(Axis(0), &[pooled_target.view(), pooled_aux.view()])
            .map_err(|e| Error::config(format!("cannot concatenate pooled batches: {e}")))?;
        let mut labels = vec![0u8; n_t];
        labels.extend(std::iter::repeat(1u8).take(pooled_aux.nrows()));
        let (probs, trace) = model.discriminate(&all)?;
        let bce = adversarial_eda_loss(&probs, &labels)?;
        let mut outcome = EdaOutcome {
            value: bce.value,
            clamp_events: bce.clamp_events,
            ..Default::default()
        };
        if train && weight != 0.0 {
            let d_probs = bce.d_probs.mapv(|v| v * weight);
            let d_input = model.backward_discriminator(&trace, &d_probs, Some(self.grl_lambda))?;
            outcome.d_pooled_target = Some(d_input.slice(ndarray::s![..n_t, ..]).to_owned());
            outcome.d_pooled_aux = Some(d_input.slice(ndarray::s![n_t.., ..]).to_owned());
        }
        Ok(outcome)
    }
}

struct MkmmdEda {
    scales: Vec<f64>,
}

impl EdaStrategy for MkmmdEda {
    fn name(&self) -> &'static str {
        "mkmmd"
    }

    fn evaluate(
        &self,
        _model: &mut Model,
        pooled_target: &Array2<f64>,
        pooled_aux: &Array2<f64>,
        weight: f64,
        train: bool,
    ) -> Result<EdaOutcome> {
        let combined = concatenate(Axis(0), &[pooled_target.view(), pooled_aux.view()])
            .map_err(|e| Error::config(format!("cannot concatenate pooled batches: {e}")))?;
        // bandwidths follow the batch statistics, recomputed every call
        let bank = median_heuristic_bandwidths(&combined, &self.scales)?;
        if train && weight != 0.0 {
            let out = mkmmd_with_grad(pooled_target, pooled_aux, &bank)?;
            Ok(EdaOutcome {
                value: out.value,
                d_pooled_target: Some(out.d_x.mapv(|v| v * weight)),
                d_pooled_aux: Some(out.d_y.mapv(|v| v * weight)),
                clamp_events: 0,
            })
        } else {
            Ok(EdaOutcome {
                value: mkmmd(pooled_target, pooled_aux, &bank)?,
                ..Default::default()
            })
        }
    }
}

struct OffEda;

impl EdaStrategy for OffEda {
    fn name(&self) -> &'static str {
        "off"
    }

    fn evaluate(
        &self,
        _model: &mut Model,
        _pooled_target: &Array2<f64>,
        _pooled_aux: &Array2<f64>,
        _weight: f64,
        _train: bool,
    ) -> Result<EdaOutcome> {
        Ok(EdaOutcome::default())
    }
}

type EdaFactory = fn(&EdaSettings) -> Result<Box<dyn EdaStrategy>>;

fn registry() -> &'static [(&'static str, EdaFactory)] {
    &[
        ("adversarial", |s| {
            if !(s.grl_lambda.is_finite() && s.grl_lambda >= 0.0) {
                return Err(Error::config("eda.grl_lambda must be >= 0 and finite"));
            }
            Ok(Box::new(AdversarialEda {
                grl_lambda: s.grl_lambda,
            }))
        }),
        ("mkmmd", |s| {
            if s.kernel_scales.is_empty() || s.kernel_scales.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::config("eda.kernel_scales must be positive and non-empty"));
            }
            Ok(Box::new(MkmmdEda {
                scales: s.kernel_scales.clone(),
            }))
        }),
        ("off", |_| Ok(Box::new(OffEda))),
    ]
}

/// Names of all registered variants, in registration order.
pub fn variant_names() -> Vec<&'static str> {
    registry().iter().map(|(n, _)| *n).collect()
}

/// Instantiates the strategy selected by `settings.variant`.
pub fn build_strategy(settings: &EdaSettings) -> Result<Box<dyn EdaStrategy>> {
    for (name, factory) in registry() {
        if *name == settings.variant {
            return factory(settings);
        }
    }
    Err(Error::config(format!(
        "unknown eda variant '{}' (known: {})",
        settings.variant,
        variant_names().join(", ")
    )))
}
