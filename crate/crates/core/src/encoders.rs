//! Utterance-level representations: mean pooling over the sequence axis
//! followed by a trainable projection and `tanh`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{M3vError, Result};
use crate::numerics::{tanh, tanh_backward, LinearLayer, Rng, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    #[default]
    Mean,
}

/// Element-wise arithmetic mean over frames.
///
/// Each coordinate is summed in sorted order, which makes the result exactly
/// invariant to frame order.
pub fn pool(frames: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = frames
        .first()
        .ok_or_else(|| M3vError::Input("cannot pool an empty sequence".into()))?;
    let dim = first.len();
    if frames.iter().any(|f| f.len() != dim) {
        return Err(M3vError::Input("ragged frames in pooling".into()));
    }
    let n = frames.len() as f64;
    let mut column = Vec::with_capacity(frames.len());
    Ok((0..dim)
        .map(|c| {
            column.clear();
            column.extend(frames.iter().map(|f| f[c]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect())
}

/// Pools each sequence into one row of a `batch × feat_dim` matrix.
pub fn pool_batch<'a, I>(seqs: I, feat_dim: usize) -> Result<Tensor2>
where
    I: IntoIterator<Item = &'a [Vec<f64>]>,
{
    let mut data = Vec::new();
    let mut rows = 0;
    for s in seqs {
        let p = pool(s)?;
        if p.len() != feat_dim {
            return Err(M3vError::shape("pool_batch", (1, p.len()), (1, feat_dim)));
        }
        data.extend(p);
        rows += 1;
    }
    Tensor2::from_vec(rows, feat_dim, data)
}

/// Pooled audio and text features of a whole dataset, row-aligned with its
/// samples. Pooling has no parameters, so this is computed once per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures {
    pub audio: Tensor2,
    pub text: Tensor2,
}

impl PooledFeatures {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let audio = pool_batch(
            ds.samples().iter().map(|s| s.audio_frames.as_slice()),
            ds.audio_feat_dim(),
        )?;
        let text = pool_batch(
            ds.samples().iter().map(|s| s.text_tokens.as_slice()),
            ds.text_feat_dim(),
        )?;
        Ok(PooledFeatures { audio, text })
    }

    pub fn select(&self, idx: &[usize]) -> PooledFeatures {
        PooledFeatures {
            audio: self.audio.select_rows(idx),
            text: self.text.select_rows(idx),
        }
    }

    pub fn len(&self) -> usize {
        self.audio.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One modality's encoder: `tanh(W · pool(x) + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub projection: LinearLayer,
    pub pooling: PoolingKind,
}

impl EncoderParams {
    pub fn new(feat_dim: usize, repr_dim: usize, rng: &mut Rng) -> Result<Self> {
        if repr_dim < 2 {
            return Err(M3vError::Config(format!(
                "representation dim must be at least 2, got {repr_dim}"
            )));
        }
        Ok(EncoderParams {
            projection: LinearLayer::xavier(feat_dim, repr_dim, rng),
            pooling: PoolingKind::Mean,
        })
    }

    pub fn from_projection(projection: LinearLayer) -> Self {
        EncoderParams {
            projection,
            pooling: PoolingKind::Mean,
        }
    }

    pub fn feat_dim(&self) -> usize {
        self.projection.in_dim()
    }

    pub fn repr_dim(&self) -> usize {
        self.projection.out_dim()
    }

    /// Encodes one sequence of frames (or tokens).
    pub fn encode(&self, frames: &[Vec<f64>]) -> Result<Vec<f64>> {
        let pooled = pool(frames)?;
        if pooled.len() != self.feat_dim() {
            return Err(M3vError::shape(
                "encode",
                (frames.len(), pooled.len()),
                self.projection.weight.shape(),
            ));
        }
        let x = Tensor2::from_vec(1, pooled.len(), pooled)?;
        Ok(self.encode_pooled(&x)?.into_data())
    }

    /// Encodes a batch of already pooled rows.
    pub fn encode_pooled(&self, pooled: &Tensor2) -> Result<Tensor2> {
        Ok(tanh(&self.projection.forward(pooled)?))
    }

    /// Accumulates projection gradients given the pooled input, the encoder
    /// output and `dL/d output`.
    pub fn backward(&mut self, pooled: &Tensor2, output: &Tensor2, dout: &Tensor2) -> Result<()> {
        let dpre = tanh_backward(output, dout);
        self.projection.backward_with_input(pooled, &dpre)?;
        Ok(())
    }
}

/// Encodes an utterance's audio frames into `A ∈ ℝ^d`.
pub fn encode_audio(frames: &[Vec<f64>], enc: &EncoderParams) -> Result<Vec<f64>> {
    enc.encode(frames)
}

/// Encodes an utterance's text tokens into `T ∈ ℝ^t`.
pub fn encode_text(tokens: &[Vec<f64>], enc: &EncoderParams) -> Result<Vec<f64>> {
    enc.encode(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Parameters, Rng};
    use proptest::prelude::*;

    fn identity_encoder(dim: usize) -> EncoderParams {
        let mut w = Tensor2::zeros(dim, dim);
        for i in 0..dim {
            w.set(i, i, 1.0);
        }
        EncoderParams::from_projection(LinearLayer::from_parts(w, vec![0.0; dim]).unwrap())
    }

    #[test]
    fn pool_single_frame_is_identity() {
        assert_eq!(pool(&[vec![1.5, -2.0]]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn pool_hand_mean() {
        assert_eq!(pool(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn pool_empty_is_error() {
        assert!(matches!(pool(&[]), Err(M3vError::Input(_))));
    }

    #[test]
    fn identity_projection_is_near_pooled_mean() {
        let enc = identity_encoder(3);
        let frames = vec![vec![0.01, -0.02, 0.0], vec![0.03, 0.0, 0.001]];
        let out = encode_audio(&frames, &enc).unwrap();
        let mean = pool(&frames).unwrap();
        for (o, m) in out.iter().zip(&mean) {
            assert!((o - m).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_encoding_matches_per_sample() {
        let mut rng = Rng::new(4);
        let enc = EncoderParams::new(5, 3, &mut rng).unwrap();
        let seqs: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|k| (0..k + 1).map(|_| (0..5).map(|_| rng.normal()).collect()).collect())
            .collect();
        let pooled = pool_batch(seqs.iter().map(|s| s.as_slice()), 5).unwrap();
        let batched = enc.encode_pooled(&pooled).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            assert_eq!(batched.row(i), enc.encode(s).unwrap().as_slice());
        }
    }

    #[test]
    fn modalities_have_distinct_widths() {
        let mut rng = Rng::new(0);
        let audio = EncoderParams::new(32, 16, &mut rng).unwrap();
        let text = EncoderParams::new(24, 12, &mut rng).unwrap();
        let a = encode_audio(&vec![vec![0.1; 32]; 7], &audio).unwrap();
        let t = encode_text(&vec![vec![0.1; 24]; 2], &text).unwrap();
        assert_eq!((a.len(), t.len()), (16, 12));
        assert_eq!(t, encode_text(&vec![vec![0.1; 24]; 2], &text).unwrap());
    }

    #[test]
    fn dim_mismatch_is_error() {
        let enc = EncoderParams::new(4, 2, &mut Rng::new(0)).unwrap();
        assert!(enc.encode(&[vec![0.0; 3]]).is_err());
        assert!(EncoderParams::new(4, 1, &mut Rng::new(0)).is_err());
    }

    struct EncoderOnly(EncoderParams);

    impl Parameters for EncoderOnly {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
            self.0.projection.visit(f);
        }
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let enc = EncoderParams::new(6, 4, &mut rng).unwrap();
        let pooled = Tensor2::from_vec(5, 6, (0..30).map(|_| rng.normal()).collect()).unwrap();
        let target = Tensor2::from_vec(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
        // L = ½ Σ (enc(x) − target)²
        let loss = |e: &EncoderParams| {
            let y = e.encode_pooled(&pooled).unwrap();
            y.data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum::<f64>()
        };
        let mut wrapped = EncoderOnly(enc);
        wrapped.zero_grad();
        let y = wrapped.0.encode_pooled(&pooled).unwrap();
        let mut dy = y.clone();
        for (d, t) in dy.data_mut().iter_mut().zip(target.data()) {
            *d -= t;
        }
        wrapped.0.backward(&pooled, &y, &dy).unwrap();
        let theta = wrapped.flat_params();
        let analytic = wrapped.flat_grads();
        let template = wrapped.0.clone();
        let err = grad_check(
            &theta,
            &analytic,
            |flat| {
                let mut w = EncoderOnly(template.clone());
                w.set_flat_params(flat);
                loss(&w.0)
            },
            usize::MAX,
            1e-5,
            &mut rng,
        );
        assert!(err < 1e-4, "max rel err {err}");
    }

    proptest! {
        #[test]
        fn pooling_is_permutation_invariant(
            frames in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..12),
            seed in any::<u64>(),
        ) {
            let mut shuffled = frames.clone();
            Rng::new(seed).shuffle(&mut shuffled);
            prop_assert_eq!(pool(&frames).unwrap(), pool(&shuffled).unwrap());
        }

        #[test]
        fn output_width_is_independent_of_length(len in 1usize..30) {
            let enc = EncoderParams::new(3, 5, &mut Rng::new(1)).unwrap();
            prop_assert_eq!(enc.encode(&vec![vec![0.2; 3]; len]).unwrap().len(), 5);
        }
    }
}
