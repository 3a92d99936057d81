//! The Y-shaped backbone: two domain-private encoders feeding one shared
//! encoder, topped by a classification head, a projection head, and a
//! domain discriminator reached through a gradient-reversal boundary.
//!
//! Forward passes return an [`EncoderOutputs`] snapshot plus a [`PathTrace`]
//! holding the activations a later [`Model::backward_path`] call needs.
//! Parameter gradients accumulate across backward calls; the training loop
//! zeroes them once per step.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{
    check_finite, gap, gap_backward, relu2, relu2_backward, ConvStack, ConvTrace, Dense, MlpStack,
    MlpTrace, ParamFn, ParamViewFn,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Target,
    Auxiliary,
}

impl std::fmt::Display for DomainTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DomainTag::Target => write!(f, "target"),
            DomainTag::Auxiliary => write!(f, "auxiliary"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Vector,
    Image,
}

/// Architecture of the backbone.
///
/// Stages strictly before `split_stage` form the domain-private encoders
/// (one copy per domain); stages at and after it form the shared encoder.
/// For vector inputs a stage is a dense+ReLU block of the given width; for
/// image inputs it is a 3x3 conv + ReLU + 2x2 average pool with the given
/// channel count, and `input_dim` is the input channel count (3 for RGB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub input_kind: InputKind,
    pub input_dim: usize,
    pub stage_sizes: Vec<usize>,
    pub split_stage: usize,
    pub hidden_dim_f: usize,
    pub proj_dim: usize,
    pub num_classes: usize,
    pub disc_hidden: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_kind: InputKind::Vector,
            input_dim: 16,
            stage_sizes: vec![64, 64, 64, 64],
            split_stage: 3,
            hidden_dim_f: 256,
            proj_dim: 128,
            num_classes: 2,
            disc_hidden: 128,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_sizes.is_empty() {
            return Err(Error::config("stage_sizes must not be empty"));
        }
        if self.stage_sizes.iter().any(|&s| s == 0) {
            return Err(Error::config("stage widths must be positive"));
        }
        if self.split_stage < 1 || self.split_stage >= self.stage_sizes.len() {
            return Err(Error::config(format!(
                "split_stage must satisfy 1 <= split_stage < {} (got {})",
                self.stage_sizes.len(),
                self.split_stage
            )));
        }
        if self.hidden_dim_f == 0 {
            return Err(Error::config("hidden_dim_f must be positive"));
        }
        if self.proj_dim == 0 {
            return Err(Error::config("proj_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.disc_hidden == 0 {
            return Err(Error::config("disc_hidden must be positive"));
        }
        Ok(())
    }

    fn private_sizes(&self) -> &[usize] {
        &self.stage_sizes[..self.split_stage]
    }

    fn shared_sizes(&self) -> &[usize] {
        &self.stage_sizes[self.split_stage..]
    }

    /// Width of the pooled private-encoder output (discriminator input).
    pub fn pooled_dim(&self) -> usize {
        self.stage_sizes[self.split_stage - 1]
    }

    /// Width of the shared feature vector that feeds the heads.
    pub fn shared_dim(&self) -> usize {
        *self.stage_sizes.last().expect("validated non-empty")
    }
}

/// A batch of inputs or stage activations; vector and image paths carry
/// different ranks.
#[derive(Debug, Clone)]
pub enum TensorBatch {
    Vector(Array2<f64>),
    Image(Array4<f64>),
}

impl TensorBatch {
    pub fn batch_len(&self) -> usize {
        match self {
            TensorBatch::Vector(a) => a.nrows(),
            TensorBatch::Image(a) => a.dim().0,
        }
    }

    pub fn kind(&self) -> InputKind {
        match self {
            TensorBatch::Vector(_) => InputKind::Vector,
            TensorBatch::Image(_) => InputKind::Image,
        }
    }
}

/// Per-sample tensors at each pipeline stage, batched.
#[derive(Debug, Clone)]
pub struct EncoderOutputs {
    /// Private-encoder output, before the shared encoder.
    pub intermediate: TensorBatch,
    /// Global average pool of `intermediate` (identity for vector inputs).
    pub pooled_intermediate: Array2<f64>,
    /// Shared-encoder output as a vector per sample.
    pub shared: Array2<f64>,
    /// Activated output of the first classification layer.
    pub f: Array2<f64>,
    /// Output of the last classification layer.
    pub logits: Array2<f64>,
    /// Projection-head output.
    pub z: Array2<f64>,
}

enum EncTrace {
    Mlp(MlpTrace),
    Conv(ConvTrace),
}

/// Activations captured along one domain path, consumed by `backward_path`.
pub struct PathTrace {
    domain: DomainTag,
    private: EncTrace,
    shared: EncTrace,
    /// Spatial dims of the private output (image path), for GAP backward.
    intermediate_hw: Option<(usize, usize)>,
    /// Spatial dims of the shared output (image path).
    shared_hw: Option<(usize, usize)>,
    fc1_pre: Array2<f64>,
    proj_pre: Array2<f64>,
    proj_hidden: Array2<f64>,
}

/// Gradients entering a path from the loss heads. `d_pooled` is injected at
/// the private/shared junction (already sign-scaled by the caller when it
/// comes from the reversal boundary).
#[derive(Default)]
pub struct HeadGrads<'a> {
    pub d_logits: Option<&'a Array2<f64>>,
    pub d_z: Option<&'a Array2<f64>>,
    pub d_pooled: Option<&'a Array2<f64>>,
}

enum Encoder {
    Mlp(MlpStack),
    Conv(ConvStack),
}

impl Encoder {
    fn for_each_param(&mut self, prefix: &str, f: &mut ParamFn) {
        match self {
            Encoder::Mlp(s) => s.for_each_param(prefix, f),
            Encoder::Conv(s) => s.for_each_param(prefix, f),
        }
    }

    fn for_each_param_view(&self, prefix: &str, f: &mut ParamViewFn) {
        match self {
            Encoder::Mlp(s) => s.for_each_param_view(prefix, f),
            Encoder::Conv(s) => s.for_each_param_view(prefix, f),
        }
    }
}

/// Captured state of a discriminator forward pass.
pub struct DiscTrace {
    input: Array2<f64>,
    pre1: Array2<f64>,
    hidden: Array2<f64>,
    probs: Array1<f64>,
}

pub struct Model {
    pub config: BackboneConfig,
    private_target: Encoder,
    private_aux: Encoder,
    shared: Encoder,
    clf_fc1: Dense,
    clf_fc2: Dense,
    proj_fc1: Dense,
    proj_fc2: Dense,
    disc_fc1: Dense,
    disc_fc2: Dense,
}

impl Model {
    /// Builds the network with fan-in-scaled random weights drawn from a
    /// ChaCha stream seeded by `seed`. Construction order is fixed, so the
    /// same seed always yields the same parameters.
    pub fn new(config: &BackboneConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let build_encoder = |sizes: &[usize], in_dim: usize, rng: &mut ChaCha8Rng| match config
            .input_kind
        {
            InputKind::Vector => Encoder::Mlp(MlpStack::new(in_dim, sizes, rng)),
            InputKind::Image => Encoder::Conv(ConvStack::new(in_dim, sizes, rng)),
        };
        let private_target = build_encoder(config.private_sizes(), config.input_dim, &mut rng);
        let private_aux = build_encoder(config.private_sizes(), config.input_dim, &mut rng);
        let shared = build_encoder(config.shared_sizes(), config.pooled_dim(), &mut rng);
        let clf_fc1 = Dense::new(config.shared_dim(), config.hidden_dim_f, &mut rng);
        let clf_fc2 = Dense::new(config.hidden_dim_f, config.num_classes, &mut rng);
        let proj_fc1 = Dense::new(config.shared_dim(), config.proj_dim, &mut rng);
        let proj_fc2 = Dense::new(config.proj_dim, config.proj_dim, &mut rng);
        let disc_fc1 = Dense::new(config.pooled_dim(), config.disc_hidden, &mut rng);
        let disc_fc2 = Dense::new(config.disc_hidden, 1, &mut rng);
        Ok(Model {
            config: config.clone(),
            private_target,
            private_aux,
            shared,
            clf_fc1,
            clf_fc2,
            proj_fc1,
            proj_fc2,
            disc_fc1,
            disc_fc2,
        })
    }

    fn check_input(&self, batch: &TensorBatch) -> Result<()> {
        match (batch, self.config.input_kind) {
            (TensorBatch::Vector(a), InputKind::Vector) => {
                if a.ncols() != self.config.input_dim {
                    return Err(Error::config(format!(
                        "input dim {} does not match backbone input_dim {}",
                        a.ncols(),
                        self.config.input_dim
                    )));
                }
            }
            (TensorBatch::Image(a), InputKind::Image) => {
                if a.dim().1 != self.config.input_dim {
                    return Err(Error::config(format!(
                        "input has {} channels, backbone expects {}",
                        a.dim().1,
                        self.config.input_dim
                    )));
                }
            }
            (b, k) => {
                return Err(Error::config(format!(
                    "batch kind {:?} does not match backbone input_kind {:?}",
                    b.kind(),
                    k
                )));
            }
        }
        Ok(())
    }

    fn private_encoder(&self, domain: DomainTag) -> &Encoder {
        match domain {
            DomainTag::Target => &self.private_target,
            DomainTag::Auxiliary => &self.private_aux,
        }
    }

    /// Full forward pass through one domain path.
    pub fn forward(
        &self,
        batch: &TensorBatch,
        domain: DomainTag,
    ) -> Result<(EncoderOutputs, PathTrace)> {
        self.check_input(batch)?;
        let plabel = format!("private({domain})");

        let (intermediate, private_trace, pooled, intermediate_hw) =
            match (self.private_encoder(domain), batch) {
                (Encoder::Mlp(stack), TensorBatch::Vector(x)) => {
                    let (out, trace) = stack.forward(x, &plabel)?;
                    // a vector feature is its own global average pool
                    let pooled = out.clone();
                    (TensorBatch::Vector(out), EncTrace::Mlp(trace), pooled, None)
                }
                (Encoder::Conv(stack), TensorBatch::Image(x)) => {
                    let (out, trace) = stack.forward(x, &plabel)?;
                    let pooled = gap(&out);
                    let (_, _, h, w) = out.dim();
                    (
                        TensorBatch::Image(out),
                        EncTrace::Conv(trace),
                        pooled,
                        Some((h, w)),
                    )
                }
                _ => unreachable!("checked by check_input"),
            };

        let (shared_vec, shared_trace, shared_hw) = match (&self.shared, &intermediate) {
            (Encoder::Mlp(stack), TensorBatch::Vector(x)) => {
                let (out, trace) = stack.forward(x, "shared")?;
                (out, EncTrace::Mlp(trace), None)
            }
            (Encoder::Conv(stack), TensorBatch::Image(x)) => {
                let (out, trace) = stack.forward(x, "shared")?;
                let (_, _, h, w) = out.dim();
                (gap(&out), EncTrace::Conv(trace), Some((h, w)))
            }
            _ => unreachable!("encoder kinds are homogeneous"),
        };

        let fc1_pre = self.clf_fc1.forward(&shared_vec)?;
        check_finite("clf.fc1", fc1_pre.as_slice().expect("layout"))?;
        let f = relu2(&fc1_pre);
        let logits = self.clf_fc2.forward(&f)?;
        check_finite("clf.fc2", logits.as_slice().expect("layout"))?;

        let proj_pre = self.proj_fc1.forward(&shared_vec)?;
        check_finite("proj.fc1", proj_pre.as_slice().expect("layout"))?;
        let proj_hidden = relu2(&proj_pre);
        let z = self.proj_fc2.forward(&proj_hidden)?;
        check_finite("proj.fc2", z.as_slice().expect("layout"))?;

        let outputs = EncoderOutputs {
            intermediate,
            pooled_intermediate: pooled,
            shared: shared_vec,
            f,
            logits,
            z,
        };
        let trace = PathTrace {
            domain,
            private: private_trace,
            shared: shared_trace,
            intermediate_hw,
            shared_hw,
            fc1_pre,
            proj_pre,
            proj_hidden,
        };
        Ok((outputs, trace))
    }

    /// Evaluation-mode forward pass: same computation, no trace retained.
    pub fn infer(&self, batch: &TensorBatch, domain: DomainTag) -> Result<EncoderOutputs> {
        Ok(self.forward(batch, domain)?.0)
    }

    /// Backpropagates head gradients through one traced path, accumulating
    /// parameter gradients. Head entries left as `None` contribute nothing.
    pub fn backward_path(
        &mut self,
        outputs: &EncoderOutputs,
        trace: &PathTrace,
        grads: &HeadGrads,
    ) -> Result<()> {
        let n = outputs.shared.nrows();
        let mut d_shared = Array2::zeros((n, self.config.shared_dim()));

        if let Some(d_logits) = grads.d_logits {
            if d_logits.dim() != outputs.logits.dim() {
                return Err(Error::config("d_logits shape mismatch"));
            }
            let d_f = self.clf_fc2.backward(&outputs.f, d_logits);
            let d_pre = relu2_backward(&trace.fc1_pre, &d_f);
            d_shared += &self.clf_fc1.backward(&outputs.shared, &d_pre);
        }

        if let Some(d_z) = grads.d_z {
            if d_z.dim() != outputs.z.dim() {
                return Err(Error::config("d_z shape mismatch"));
            }
            let d_hidden = self.proj_fc2.backward(&trace.proj_hidden, d_z);
            let d_pre = relu2_backward(&trace.proj_pre, &d_hidden);
            d_shared += &self.proj_fc1.backward(&outputs.shared, &d_pre);
        }

        // through the shared encoder down to the private output
        let mut d_intermediate = match (&mut self.shared, &trace.shared) {
            (Encoder::Mlp(stack), EncTrace::Mlp(tr)) => TensorBatch::Vector(stack.backward(tr, &d_shared)),
            (Encoder::Conv(stack), EncTrace::Conv(tr)) => {
                let (h, w) = trace.shared_hw.expect("image path records dims");
                let d_feat = gap_backward(&d_shared, h, w);
                TensorBatch::Image(stack.backward(tr, &d_feat))
            }
            _ => unreachable!(),
        };

        // inject the pooled-feature gradient at the junction
        if let Some(d_pooled) = grads.d_pooled {
            if d_pooled.dim() != outputs.pooled_intermediate.dim() {
                return Err(Error::config("d_pooled shape mismatch"));
            }
            match &mut d_intermediate {
                TensorBatch::Vector(g) => *g += d_pooled,
                TensorBatch::Image(g) => {
                    let (h, w) = trace.intermediate_hw.expect("image path records dims");
                    *g += &gap_backward(d_pooled, h, w);
                }
            }
        }

        let private = match trace.domain {
            DomainTag::Target => &mut self.private_target,
            DomainTag::Auxiliary => &mut self.private_aux,
        };
        match (private, &trace.private, &d_intermediate) {
            (Encoder::Mlp(stack), EncTrace::Mlp(tr), TensorBatch::Vector(g)) => {
                stack.backward(tr, g);
            }
            (Encoder::Conv(stack), EncTrace::Conv(tr), TensorBatch::Image(g)) => {
                stack.backward(tr, g);
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    /// Maps pooled private-encoder outputs to the probability of auxiliary
    /// membership via a small two-layer head with a sigmoid output.
    pub fn discriminate(&self, pooled: &Array2<f64>) -> Result<(Array1<f64>, DiscTrace)> {
        if pooled.ncols() != self.config.pooled_dim() {
            return Err(Error::config(format!(
                "discriminator expects input dim {}, got {}",
                self.config.pooled_dim(),
                pooled.ncols()
            )));
        }
        let pre1 = self.disc_fc1.forward(pooled)?;
        check_finite("disc.fc1", pre1.as_slice().expect("layout"))?;
        let hidden = relu2(&pre1);
        let logit = self.disc_fc2.forward(&hidden)?;
        check_finite("disc.fc2", logit.as_slice().expect("layout"))?;
        let probs = logit.index_axis(Axis(1), 0).mapv(|v| sigmoid(v));
        Ok((
            probs.clone(),
            DiscTrace {
                input: pooled.clone(),
                pre1,
                hidden,
                probs,
            },
        ))
    }

    /// Backpropagates `d_probs` through the discriminator head, accumulating
    /// its parameter gradients, and returns the gradient with respect to the
    /// pooled inputs.
    ///
    /// With `reversal = Some(lambda)` the returned input gradient is crossed
    /// through the reversal boundary: sign-flipped and scaled by `lambda`.
    /// With `None` the raw gradient is returned (joint minimization).
    pub fn backward_discriminator(
        &mut self,
        trace: &DiscTrace,
        d_probs: &Array1<f64>,
        reversal: Option<f64>,
    ) -> Result<Array2<f64>> {
        if d_probs.len() != trace.probs.len() {
            return Err(Error::config("d_probs length mismatch"));
        }
        // through the sigmoid
        let n = d_probs.len();
        let mut d_logit = Array2::zeros((n, 1));
        for i in 0..n {
            let p = trace.probs[i];
            d_logit[[i, 0]] = d_probs[i] * p * (1.0 - p);
        }
        let d_hidden = self.disc_fc2.backward(&trace.hidden, &d_logit);
        let d_pre = relu2_backward(&trace.pre1, &d_hidden);
        let d_input = self.disc_fc1.backward(&trace.input, &d_pre);
        Ok(match reversal {
            Some(lambda) => d_input.mapv(|v| -lambda * v),
            None => d_input,
        })
    }

    /// Drives `f` over every named parameter block (values + gradients).
    /// Names are stable and documented in the README; checkpoints and the
    /// optimizer key off them.
    pub fn for_each_param(&mut self, f: &mut ParamFn) {
        self.private_target.for_each_param("private_target", f);
        self.private_aux.for_each_param("private_aux", f);
        self.shared.for_each_param("shared", f);
        self.clf_fc1.for_each_param("clf.fc1", f);
        self.clf_fc2.for_each_param("clf.fc2", f);
        self.proj_fc1.for_each_param("proj.fc1", f);
        self.proj_fc2.for_each_param("proj.fc2", f);
        self.disc_fc1.for_each_param("disc.fc1", f);
        self.disc_fc2.for_each_param("disc.fc2", f);
    }

    pub fn for_each_param_view(&self, f: &mut ParamViewFn) {
        self.private_target.for_each_param_view("private_target", f);
        self.private_aux.for_each_param_view("private_aux", f);
        self.shared.for_each_param_view("shared", f);
        self.clf_fc1.for_each_param_view("clf.fc1", f);
        self.clf_fc2.for_each_param_view("clf.fc2", f);
        self.proj_fc1.for_each_param_view("proj.fc1", f);
        self.proj_fc2.for_each_param_view("proj.fc2", f);
        self.disc_fc1.for_each_param_view("disc.fc1", f);
        self.disc_fc2.for_each_param_view("disc.fc2", f);
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param(&mut |_, _, g| g.fill(0.0));
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_param_view(&mut |_, _, p| n += p.len());
        n
    }

    /// Snapshot of all parameters keyed by name.
    pub fn param_map(&self) -> BTreeMap<String, ParamTensor> {
        let mut map = BTreeMap::new();
        self.for_each_param_view(&mut |name, shape, data| {
            map.insert(
                name.to_string(),
                ParamTensor {
                    shape: shape.to_vec(),
                    data: data.to_vec(),
                },
            );
        });
        map
    }

    /// Overwrites parameters from a named map; the key set and tensor sizes
    /// must match exactly.
    pub fn load_param_map(&mut self, map: &BTreeMap<String, ParamTensor>) -> Result<()> {
        let mut expected = 0usize;
        let mut err: Option<Error> = None;
        self.for_each_param(&mut |name, p, _| {
            expected += 1;
            match map.get(name) {
                None => {
                    if err.is_none() {
                        err = Some(Error::config(format!("checkpoint is missing tensor '{name}'")));
                    }
                }
                Some(t) => {
                    if t.data.len() != p.len() {
                        if err.is_none() {
                            err = Some(Error::config(format!(
                                "checkpoint tensor '{name}' has {} values, model expects {}",
                                t.data.len(),
                                p.len()
                            )));
                        }
                    } else {
                        p.copy_from_slice(&t.data);
                    }
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if map.len() != expected {
            return Err(Error::config(format!(
                "checkpoint has {} tensors, model expects {}",
                map.len(),
                expected
            )));
        }
        Ok(())
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized RNG position, enough to reconstruct a ChaCha8 stream exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

pub const CHECKPOINT_FORMAT: &str = "auxfer-checkpoint/v1";

/// Single-file model checkpoint: config echo, parameter tensors keyed by
/// stable names, epoch counter, and RNG state. Serialized as JSON.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub backbone: BackboneConfig,
    /// Opaque echo of the training configuration that produced the model.
    pub train: Option<serde_json::Value>,
    pub epoch: usize,
    pub rng: Option<RngState>,
    pub params: BTreeMap<String, ParamTensor>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        epoch: usize,
        train: Option<serde_json::Value>,
        rng: Option<RngState>,
    ) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            backbone: model.config.clone(),
            train,
            epoch,
            rng,
            params: model.param_map(),
        }
    }

    pub fn into_model(&self) -> Result<Model> {
        let mut model = Model::new(&self.backbone, 0)?;
        model.load_param_map(&self.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)
            .map_err(|e| Error::data(format!("failed to write checkpoint: {e}")))?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::data(format!("failed to parse checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::data(format!(
                "unsupported checkpoint format '{}'",
                ck.format
            )));
        }
        Ok(ck)
    }
}
