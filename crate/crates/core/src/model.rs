//! The four-view network: per-modality encoders, concatenation fusion, three
//! classification heads and two contrastive projections, with an explicit
//! backward pass over this fixed graph.

use serde::{Deserialize, Serialize};

use crate::data::UtterancePair;
use crate::encoders::{pool_batch, EncoderParams, PooledFeatures};
use crate::error::{M3vError, Result};
use crate::losses::UncertaintyWeights;
use crate::numerics::{
    dot, l2_normalize, l2_normalize_backward, relu, relu_backward, softmax, LinearLayer,
    Parameters, Rng, Tensor2,
};

/// Index of the device-directed class in every head's output.
pub const POSITIVE_CLASS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub audio_feat: usize,
    pub text_feat: usize,
    /// `d`
    pub audio_repr: usize,
    /// `t`
    pub text_repr: usize,
    /// `k`, shared contrastive dim
    pub contrastive: usize,
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            audio_feat: 32,
            text_feat: 24,
            audio_repr: 16,
            text_repr: 12,
            contrastive: 8,
            hidden: 32,
        }
    }
}

/// Two-layer classification head: `in → hidden → ReLU → 2 logits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ffn {
    pub hidden: LinearLayer,
    pub output: LinearLayer,
}

/// Activations of one head needed by its backward pass.
#[derive(Debug, Clone)]
struct FfnTrace {
    pre_hidden: Tensor2,
    hidden: Tensor2,
}

impl Ffn {
    pub fn new(in_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Ffn {
            hidden: LinearLayer::xavier(in_dim, hidden, rng),
            output: LinearLayer::xavier(hidden, 2, rng),
        }
    }

    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Ffn {
            hidden: LinearLayer::zeros(in_dim, hidden),
            output: LinearLayer::zeros(hidden, 2),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    fn forward_traced(&self, x: &Tensor2) -> Result<(Tensor2, FfnTrace)> {
        let pre_hidden = self.hidden.forward(x)?;
        let hidden = relu(&pre_hidden);
        let logits = self.output.forward(&hidden)?;
        Ok((logits, FfnTrace { pre_hidden, hidden }))
    }

    /// Logits for a batch.
    pub fn logits(&self, x: &Tensor2) -> Result<Tensor2> {
        Ok(self.forward_traced(x)?.0)
    }

    fn backward(&mut self, x: &Tensor2, trace: &FfnTrace, dlogits: &Tensor2) -> Result<Tensor2> {
        let dhidden = self.output.backward_with_input(&trace.hidden, dlogits)?;
        let dpre = relu_backward(&trace.pre_hidden, &dhidden);
        self.hidden.backward_with_input(x, &dpre)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.hidden.visit(f);
        self.output.visit(f);
    }
}

/// All trainable state of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M3VParams {
    pub audio_encoder: EncoderParams,
    pub text_encoder: EncoderParams,
    pub head_audio: Ffn,
    pub head_text: Ffn,
    pub head_multi: Ffn,
    pub proj_audio: LinearLayer,
    pub proj_text: LinearLayer,
    /// InfoNCE temperature τ; fixed during training.
    pub temperature: f64,
    pub loss_weights: UncertaintyWeights,
}

/// The four inference-time scores of one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScores {
    pub v_align: f64,
    pub v_audio: f64,
    pub v_text: f64,
    pub v_multi: f64,
}

impl ViewScores {
    /// Scores in the fixed feature order `align, audio, text, multi`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.v_align, self.v_audio, self.v_text, self.v_multi]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        ViewScores {
            v_align: v[0],
            v_audio: v[1],
            v_text: v[2],
            v_multi: v[3],
        }
    }
}

/// Everything a forward pass over `N` samples produces.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutputs {
    /// `N × d`
    pub audio_repr: Tensor2,
    /// `N × t`
    pub text_repr: Tensor2,
    /// `N × (d + t)`
    pub multi_repr: Tensor2,
    pub probs_audio: Tensor2,
    pub probs_text: Tensor2,
    pub probs_multi: Tensor2,
    /// `N × k`, unit rows
    pub z_audio: Tensor2,
    /// `N × k`, unit rows
    pub z_text: Tensor2,
}

impl BatchOutputs {
    pub fn len(&self) -> usize {
        self.audio_repr.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn view_scores(&self) -> Vec<ViewScores> {
        (0..self.len())
            .map(|i| ViewScores {
                v_align: alignment_from_unit(self.z_audio.row(i), self.z_text.row(i)),
                v_audio: self.probs_audio.get(i, POSITIVE_CLASS),
                v_text: self.probs_text.get(i, POSITIVE_CLASS),
                v_multi: self.probs_multi.get(i, POSITIVE_CLASS),
            })
            .collect()
    }
}

/// Intermediate activations retained for [`M3VParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pooled: PooledFeatures,
    head_audio: FfnTrace,
    head_text: FfnTrace,
    head_multi: FfnTrace,
    u_audio: Tensor2,
    u_text: Tensor2,
    norms_audio: Vec<f64>,
    norms_text: Vec<f64>,
}

/// Upstream gradients of the scalar loss with respect to the network outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub logits_audio: Tensor2,
    pub logits_text: Tensor2,
    pub logits_multi: Tensor2,
    pub z_audio: Tensor2,
    pub z_text: Tensor2,
}

/// Concatenation `[A | T]`, audio block first.
pub fn fuse(audio: &[f64], text: &[f64]) -> Vec<f64> {
    let mut m = Vec::with_capacity(audio.len() + text.len());
    m.extend_from_slice(audio);
    m.extend_from_slice(text);
    m
}

/// Two-class probabilities of one representation through a head.
pub fn head_forward(repr: &[f64], head: &Ffn) -> Result<[f64; 2]> {
    if repr.len() != head.in_dim() {
        return Err(M3vError::shape(
            "head_forward",
            (1, repr.len()),
            head.hidden.weight.shape(),
        ));
    }
    let x = Tensor2::from_vec(1, repr.len(), repr.to_vec())?;
    let p = softmax(&head.logits(&x)?);
    Ok([p.get(0, 0), p.get(0, 1)])
}

/// Linear projection followed by L2 normalization.
pub fn project(repr: &[f64], proj: &LinearLayer) -> Result<Vec<f64>> {
    let x = Tensor2::from_vec(1, repr.len(), repr.to_vec())?;
    let (z, _) = l2_normalize(&proj.forward(&x)?);
    Ok(z.into_data())
}

fn alignment_from_unit(z_a: &[f64], z_t: &[f64]) -> f64 {
    ((dot(z_a, z_t) + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// `(cos(z_a, z_t) + 1) / 2` for unit vectors.
pub fn alignment_score(z_a: &[f64], z_t: &[f64]) -> Result<f64> {
    if z_a.len() != z_t.len() {
        return Err(M3vError::shape(
            "alignment_score",
            (1, z_a.len()),
            (1, z_t.len()),
        ));
    }
    Ok(alignment_from_unit(z_a, z_t))
}

impl M3VParams {
    pub fn new(dims: &ModelDims, temperature: f64, rng: &mut Rng) -> Result<Self> {
        if dims.contrastive < 2 || dims.hidden < 2 {
            return Err(M3vError::Config(
                "contrastive and hidden dims must be at least 2".into(),
            ));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(M3vError::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let audio_encoder = EncoderParams::new(dims.audio_feat, dims.audio_repr, &mut rng.fork(0))?;
        let text_encoder = EncoderParams::new(dims.text_feat, dims.text_repr, &mut rng.fork(1))?;
        Ok(M3VParams {
            audio_encoder,
            text_encoder,
            head_audio: Ffn::new(dims.audio_repr, dims.hidden, &mut rng.fork(2)),
            head_text: Ffn::new(dims.text_repr, dims.hidden, &mut rng.fork(3)),
            head_multi: Ffn::new(
                dims.audio_repr + dims.text_repr,
                dims.hidden,
                &mut rng.fork(4),
            ),
            proj_audio: LinearLayer::xavier(dims.audio_repr, dims.contrastive, &mut rng.fork(5)),
            proj_text: LinearLayer::xavier(dims.text_repr, dims.contrastive, &mut rng.fork(6)),
            temperature,
            loss_weights: UncertaintyWeights::default(),
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            audio_feat: self.audio_encoder.feat_dim(),
            text_feat: self.text_encoder.feat_dim(),
            audio_repr: self.audio_encoder.repr_dim(),
            text_repr: self.text_encoder.repr_dim(),
            contrastive: self.proj_audio.out_dim(),
            hidden: self.head_multi.hidden.out_dim(),
        }
    }

    /// Checks that every layer's shape agrees with its neighbours.
    pub fn validate(&self) -> Result<()> {
        let d = self.audio_encoder.repr_dim();
        let t = self.text_encoder.repr_dim();
        let checks = [
            ("head_audio input", self.head_audio.in_dim(), d),
            ("head_text input", self.head_text.in_dim(), t),
            ("head_multi input", self.head_multi.in_dim(), d + t),
            ("proj_audio input", self.proj_audio.in_dim(), d),
            ("proj_text input", self.proj_text.in_dim(), t),
            ("proj output", self.proj_audio.out_dim(), self.proj_text.out_dim()),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(M3vError::Integrity(format!("{what}: {got} != {want}")));
            }
        }
        for head in [&self.head_audio, &self.head_text, &self.head_multi] {
            if head.output.out_dim() != 2 || head.output.in_dim() != head.hidden.out_dim() {
                return Err(M3vError::Integrity("head layer shapes disagree".into()));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(M3vError::Integrity(format!(
                "temperature {} is not positive",
                self.temperature
            )));
        }
        if !self.flat_params_ref().iter().all(|v| v.is_finite()) {
            return Err(M3vError::Integrity("non-finite parameter".into()));
        }
        Ok(())
    }

    fn flat_params_ref(&self) -> Vec<f64> {
        self.clone().flat_params()
    }

    fn check_inputs(&self, pooled: &PooledFeatures) -> Result<()> {
        if pooled.audio.cols() != self.audio_encoder.feat_dim() {
            return Err(M3vError::shape(
                "forward (audio)",
                pooled.audio.shape(),
                self.audio_encoder.projection.weight.shape(),
            ));
        }
        if pooled.text.cols() != self.text_encoder.feat_dim() {
            return Err(M3vError::shape(
                "forward (text)",
                pooled.text.shape(),
                self.text_encoder.projection.weight.shape(),
            ));
        }
        if pooled.audio.rows() != pooled.text.rows() {
            return Err(M3vError::shape(
                "forward",
                pooled.audio.shape(),
                pooled.text.shape(),
            ));
        }
        Ok(())
    }

    /// Forward pass over pooled features, keeping what backward needs.
    pub fn forward_traced(&self, pooled: &PooledFeatures) -> Result<(BatchOutputs, ForwardTrace)> {
        self.check_inputs(pooled)?;
        let audio_repr = self.audio_encoder.encode_pooled(&pooled.audio)?;
        let text_repr = self.text_encoder.encode_pooled(&pooled.text)?;
        let multi_repr = audio_repr.hconcat(&text_repr)?;

        let (logits_a, head_audio) = self.head_audio.forward_traced(&audio_repr)?;
        let (logits_t, head_text) = self.head_text.forward_traced(&text_repr)?;
        let (logits_m, head_multi) = self.head_multi.forward_traced(&multi_repr)?;

        let u_audio = self.proj_audio.forward(&audio_repr)?;
        let u_text = self.proj_text.forward(&text_repr)?;
        let (z_audio, norms_audio) = l2_normalize(&u_audio);
        let (z_text, norms_text) = l2_normalize(&u_text);

        let outputs = BatchOutputs {
            audio_repr,
            text_repr,
            multi_repr,
            probs_audio: softmax(&logits_a),
            probs_text: softmax(&logits_t),
            probs_multi: softmax(&logits_m),
            z_audio,
            z_text,
        };
        let trace = ForwardTrace {
            pooled: pooled.clone(),
            head_audio,
            head_text,
            head_multi,
            u_audio,
            u_text,
            norms_audio,
            norms_text,
        };
        Ok((outputs, trace))
    }

    pub fn forward(&self, pooled: &PooledFeatures) -> Result<BatchOutputs> {
        Ok(self.forward_traced(pooled)?.0)
    }

    pub fn forward_pairs(&self, pairs: &[UtterancePair]) -> Result<BatchOutputs> {
        let audio = pool_batch(
            pairs.iter().map(|p| p.audio_frames.as_slice()),
            self.audio_encoder.feat_dim(),
        )?;
        let text = pool_batch(
            pairs.iter().map(|p| p.text_tokens.as_slice()),
            self.text_encoder.feat_dim(),
        )?;
        self.forward(&PooledFeatures { audio, text })
    }

    /// Accumulates parameter gradients for the given output gradients.
    /// Gradients add to whatever the buffers already hold.
    pub fn backward(
        &mut self,
        outputs: &BatchOutputs,
        trace: &ForwardTrace,
        grads: &OutputGrads,
    ) -> Result<()> {
        let d = self.audio_encoder.repr_dim();

        let mut d_audio =
            self.head_audio
                .backward(&outputs.audio_repr, &trace.head_audio, &grads.logits_audio)?;
        let mut d_text =
            self.head_text
                .backward(&outputs.text_repr, &trace.head_text, &grads.logits_text)?;
        let d_multi =
            self.head_multi
                .backward(&outputs.multi_repr, &trace.head_multi, &grads.logits_multi)?;
        let (dm_audio, dm_text) = d_multi.hsplit(d);
        d_audio.add_assign(&dm_audio)?;
        d_text.add_assign(&dm_text)?;

        let du_audio = l2_normalize_backward(&trace.u_audio, &trace.norms_audio, &grads.z_audio);
        let du_text = l2_normalize_backward(&trace.u_text, &trace.norms_text, &grads.z_text);
        d_audio.add_assign(
            &self
                .proj_audio
                .backward_with_input(&outputs.audio_repr, &du_audio)?,
        )?;
        d_text.add_assign(
            &self
                .proj_text
                .backward_with_input(&outputs.text_repr, &du_text)?,
        )?;

        self.audio_encoder
            .backward(&trace.pooled.audio, &outputs.audio_repr, &d_audio)?;
        self.text_encoder
            .backward(&trace.pooled.text, &outputs.text_repr, &d_text)?;
        Ok(())
    }

    /// The four view scores of one utterance.
    pub fn score(&self, pair: &UtterancePair) -> Result<ViewScores> {
        let out = self.forward_pairs(std::slice::from_ref(pair))?;
        Ok(out.view_scores()[0])
    }

    pub fn score_pooled(&self, pooled: &PooledFeatures) -> Result<Vec<ViewScores>> {
        Ok(self.forward(pooled)?.view_scores())
    }
}

impl Parameters for M3VParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.audio_encoder.projection.visit(f);
        self.text_encoder.projection.visit(f);
        self.head_audio.visit(f);
        self.head_text.visit(f);
        self.head_multi.visit(f);
        self.proj_audio.visit(f);
        self.proj_text.visit(f);
        self.loss_weights.visit(f);
    }
}

/// Scores one utterance.
pub fn score(pair: &UtterancePair, params: &M3VParams) -> Result<ViewScores> {
    params.score(pair)
}
