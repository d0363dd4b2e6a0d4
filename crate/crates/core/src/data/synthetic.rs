//! Class-conditional Gaussian feature sequences with controllable transcript
//! misalignment.
//!
//! Each utterance has a directedness label `y` and a latent content vector `c`.
//! Audio frames sit around `μ_a(y) + W_a·c` with an utterance-level offset and
//! per-frame jitter; text tokens are built the same way in text space. With
//! probability `misalignment_rate` the text is instead built from an
//! independently drawn label and fresh content, while the stored label stays
//! `y`: the transcript is corrupted, the spoken audio is not.
//!
//! The class directions and content mixing matrices form a fixed "world"
//! derived from `world_seed`, so datasets generated with different `seed`s
//! share geometry and a model trained on one transfers to another.

use serde::{Deserialize, Serialize};

use super::{Dataset, Label, Provenance, UtterancePair};
use crate::error::{M3vError, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_samples: usize,
    /// Fraction of device-directed samples.
    pub positive_rate: f64,
    /// Probability that a sample's transcript is replaced.
    pub misalignment_rate: f64,
    /// Distance between the two class means along the class direction.
    pub class_separation: f64,
    /// Inclusive range of audio frame counts.
    pub frames: (usize, usize),
    /// Inclusive range of text token counts.
    pub tokens: (usize, usize),
    /// Std-dev of both the utterance offset and the per-frame jitter.
    pub noise_scale: f64,
    pub audio_feat_dim: usize,
    pub text_feat_dim: usize,
    pub content_dim: usize,
    pub content_scale: f64,
    pub world_seed: u64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_samples: 1000,
            positive_rate: 0.5,
            misalignment_rate: 0.2,
            class_separation: 1.5,
            frames: (20, 60),
            tokens: (3, 15),
            noise_scale: 0.5,
            audio_feat_dim: 32,
            text_feat_dim: 24,
            content_dim: 4,
            content_scale: 1.0,
            world_seed: 1,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(M3vError::Config(m));
        if self.n_samples == 0 {
            return err("n_samples must be at least 1".into());
        }
        for (name, v) in [
            ("positive_rate", self.positive_rate),
            ("misalignment_rate", self.misalignment_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return err(format!(
                "class_separation = {} must be positive",
                self.class_separation
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return err(format!("noise_scale = {} must be non-negative", self.noise_scale));
        }
        if !(self.content_scale >= 0.0 && self.content_scale.is_finite()) {
            return err(format!(
                "content_scale = {} must be non-negative",
                self.content_scale
            ));
        }
        for (name, (lo, hi)) in [("frames", self.frames), ("tokens", self.tokens)] {
            if lo == 0 || lo > hi {
                return err(format!("{name} range ({lo}, {hi}) is empty or starts at 0"));
            }
        }
        if self.audio_feat_dim < 2 || self.text_feat_dim < 2 {
            return err("feature dims must be at least 2".into());
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::util::sha256_hex(json.as_bytes())[..16].to_string()
    }
}

/// Fixed geometry shared by every dataset drawn from the same `world_seed`.
struct World {
    audio: ModalityGeometry,
    text: ModalityGeometry,
}

struct ModalityGeometry {
    /// Unit class direction; class means are `±separation/2` along it.
    direction: Vec<f64>,
    /// `dim × content_dim`, columns orthogonal to `direction`.
    mixing: Vec<Vec<f64>>,
}

impl ModalityGeometry {
    fn new(dim: usize, content_dim: usize, rng: &mut Rng) -> Self {
        let mut direction: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|v| *v /= n);

        let scale = 1.0 / (content_dim.max(1) as f64).sqrt();
        let mut columns: Vec<Vec<f64>> = (0..content_dim)
            .map(|_| (0..dim).map(|_| rng.normal() * scale).collect())
            .collect();
        for col in &mut columns {
            let along: f64 = col.iter().zip(&direction).map(|(a, b)| a * b).sum();
            for (c, d) in col.iter_mut().zip(&direction) {
                *c -= along * d;
            }
        }
        let mixing = (0..dim)
            .map(|r| columns.iter().map(|col| col[r]).collect())
            .collect();
        ModalityGeometry { direction, mixing }
    }

    fn sequence(
        &self,
        label: Label,
        content: &[f64],
        len: usize,
        cfg: &GenConfig,
        rng: &mut Rng,
    ) -> Vec<Vec<f64>> {
        let sign = if label.is_positive() { 1.0 } else { -1.0 };
        let half = 0.5 * cfg.class_separation * sign;
        let center: Vec<f64> = self
            .direction
            .iter()
            .zip(&self.mixing)
            .map(|(d, row)| {
                let mixed: f64 = row.iter().zip(content).map(|(w, c)| w * c).sum();
                half * d + cfg.content_scale * mixed
            })
            .collect();
        let offset: Vec<f64> = center
            .iter()
            .map(|c| c + cfg.noise_scale * rng.normal())
            .collect();
        (0..len)
            .map(|_| {
                offset
                    .iter()
                    .map(|o| o + cfg.noise_scale * rng.normal())
                    .collect()
            })
            .collect()
    }
}

impl World {
    fn new(cfg: &GenConfig) -> Self {
        let root = Rng::new(cfg.world_seed);
        World {
            audio: ModalityGeometry::new(cfg.audio_feat_dim, cfg.content_dim, &mut root.fork(0)),
            text: ModalityGeometry::new(cfg.text_feat_dim, cfg.content_dim, &mut root.fork(1)),
        }
    }
}

// Per-sample substream tags. Audio draws never depend on the misalignment
// draws, so audio features are identical across misalignment rates.
const TAG_LABEL: u64 = 0;
const TAG_MISALIGN: u64 = 1;
const TAG_TEXT_LABEL: u64 = 2;
const TAG_CONTENT: u64 = 3;
const TAG_TEXT_CONTENT: u64 = 4;
const TAG_AUDIO: u64 = 5;
const TAG_TEXT: u64 = 6;

fn random_label(rng: &mut Rng, positive_rate: f64) -> Label {
    Label::from_bool(rng.bernoulli(positive_rate))
}

fn content_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.normal()).collect()
}

pub fn generate_synthetic(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let world = World::new(cfg);
    let root = Rng::new(cfg.seed);
    let samples = (0..cfg.n_samples)
        .map(|i| {
            let base = root.fork(i as u64);
            let label = random_label(&mut base.fork(TAG_LABEL), cfg.positive_rate);
            let misaligned = base.fork(TAG_MISALIGN).bernoulli(cfg.misalignment_rate);
            let content = content_vector(cfg.content_dim, &mut base.fork(TAG_CONTENT));
            let (text_label, text_content) = if misaligned {
                (
                    random_label(&mut base.fork(TAG_TEXT_LABEL), 0.5),
                    content_vector(cfg.content_dim, &mut base.fork(TAG_TEXT_CONTENT)),
                )
            } else {
                (label, content.clone())
            };

            let mut audio_rng = base.fork(TAG_AUDIO);
            let n_frames = audio_rng.int_inclusive(cfg.frames.0, cfg.frames.1);
            let audio_frames = world
                .audio
                .sequence(label, &content, n_frames, cfg, &mut audio_rng);

            let mut text_rng = base.fork(TAG_TEXT);
            let n_tokens = text_rng.int_inclusive(cfg.tokens.0, cfg.tokens.1);
            let text_tokens =
                world
                    .text
                    .sequence(text_label, &text_content, n_tokens, cfg, &mut text_rng);

            UtterancePair {
                id: format!("syn-{}-{:06}", cfg.seed, i),
                audio_frames,
                text_tokens,
                label,
                misaligned,
                transcript: None,
            }
        })
        .collect();
    Dataset::new(samples, Provenance::Synthetic(cfg.digest()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, p: f64) -> GenConfig {
        GenConfig {
            n_samples: n,
            misalignment_rate: p,
            ..GenConfig::default()
        }
    }

    #[test]
    fn no_misalignment_at_zero_rate() {
        let ds = generate_synthetic(&cfg(500, 0.0)).unwrap();
        assert!(ds.samples().iter().all(|s| !s.misaligned));
    }

    #[test]
    fn all_misaligned_at_unit_rate() {
        let ds = generate_synthetic(&cfg(1000, 1.0)).unwrap();
        assert!(ds.samples().iter().all(|s| s.misaligned));
    }

    #[test]
    fn misaligned_fraction_concentrates() {
        // Binomial(10000, 0.2) has std 0.004, so ±0.02 is a 5σ band.
        let ds = generate_synthetic(&cfg(10_000, 0.2)).unwrap();
        let f = ds.misaligned_fraction();
        assert!((f - 0.2).abs() < 0.02, "fraction {f}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&cfg(50, 0.3)).unwrap();
        let b = generate_synthetic(&cfg(50, 0.3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&GenConfig {
            seed: 1,
            ..cfg(50, 0.3)
        })
        .unwrap();
        assert_ne!(a.samples()[0].audio_frames, c.samples()[0].audio_frames);
    }

    #[test]
    fn audio_is_untouched_by_misalignment_rate() {
        let a = generate_synthetic(&cfg(200, 0.0)).unwrap();
        let b = generate_synthetic(&cfg(200, 0.5)).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.audio_frames, y.audio_frames);
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn respects_ranges_and_dims() {
        let ds = generate_synthetic(&cfg(100, 0.2)).unwrap();
        assert_eq!((ds.audio_feat_dim(), ds.text_feat_dim()), (32, 24));
        for s in ds.samples() {
            assert!((20..=60).contains(&s.audio_frames.len()));
            assert!((3..=15).contains(&s.text_tokens.len()));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            GenConfig {
                misalignment_rate: 1.5,
                ..GenConfig::default()
            },
            GenConfig {
                class_separation: 0.0,
                ..GenConfig::default()
            },
            GenConfig {
                frames: (10, 5),
                ..GenConfig::default()
            },
        ] {
            assert!(matches!(generate_synthetic(&bad), Err(M3vError::Config(_))));
        }
    }
}
