//! Training objectives: cross-entropy for each view head, the InfoNCE
//! alignment loss, and their combination under fixed or learned
//! (uncertainty-based) weights.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{M3vError, Result};
use crate::model::{BatchOutputs, OutputGrads};
use crate::numerics::{cross_entropy, cross_entropy_logit_grad, log_sum_exp, sorted_sum, Tensor2};

/// Components in their fixed order.
pub const COMPONENTS: [&str; 4] = ["audio", "text", "multi", "contrastive"];

static DEGENERATE_BATCHES: AtomicUsize = AtomicUsize::new(0);

/// Number of single-sample batches seen by [`compute_loss`] in this process.
pub fn degenerate_batch_warnings() -> usize {
    DEGENERATE_BATCHES.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveDirection {
    /// Mean of the audio-anchored and text-anchored losses.
    #[default]
    Symmetric,
    /// Audio anchors only, text candidates.
    AudioToText,
}

/// How the four component losses are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossWeights {
    /// `λ·L_audio + γ·L_text + α·L_multi + β·L_contrastive`
    Fixed {
        audio: f64,
        text: f64,
        multi: f64,
        contrastive: f64,
    },
    /// `Σ L_k / (2σ_k²) + ln(1 + σ_k²)` with `σ_k² = exp(s_k)` learned.
    #[default]
    Automatic,
}

impl LossWeights {
    pub fn equal() -> Self {
        LossWeights::Fixed {
            audio: 1.0,
            text: 1.0,
            multi: 1.0,
            contrastive: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LossWeights::Fixed {
            audio,
            text,
            multi,
            contrastive,
        } = *self
        {
            let w = [audio, text, multi, contrastive];
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(M3vError::Config(format!(
                    "fixed loss weights must be finite and non-negative, got {w:?}"
                )));
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(M3vError::Config("all fixed loss weights are zero".into()));
            }
        }
        Ok(())
    }
}

/// Learned log-variances `s_k`, one per component, with gradient buffers.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UncertaintyWeights {
    pub log_var: [f64; 4],
    #[serde(skip)]
    pub grad: [f64; 4],
}

impl PartialEq for UncertaintyWeights {
    fn eq(&self, other: &Self) -> bool {
        self.log_var == other.log_var
    }
}

impl UncertaintyWeights {
    pub fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        f(&mut self.log_var, &mut self.grad);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_audio: f64,
    pub l_text: f64,
    pub l_multi: f64,
    pub l_contrastive: f64,
    pub l_total: f64,
    /// Multiplier applied to each component in the order of [`COMPONENTS`].
    pub effective_weights: [f64; 4],
    /// `Σ ln(1 + σ_k²)` in automatic mode, `0` in fixed mode.
    pub regularizer: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 4] {
        [self.l_audio, self.l_text, self.l_multi, self.l_contrastive]
    }

    /// Total re-derived from components, weights and regularizer.
    pub fn recompute_total(&self) -> f64 {
        self.components()
            .iter()
            .zip(&self.effective_weights)
            .map(|(l, w)| l * w)
            .sum::<f64>()
            + self.regularizer
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite()) && self.l_total.is_finite()
    }
}

/// Combines component losses. Also returns `dL/ds_k` (zero in fixed mode).
pub fn total_loss(
    components: [f64; 4],
    weights: &LossWeights,
    log_var: &[f64; 4],
) -> (LossBreakdown, [f64; 4]) {
    let (effective_weights, regularizer, dlog_var) = match *weights {
        LossWeights::Fixed {
            audio,
            text,
            multi,
            contrastive,
        } => ([audio, text, multi, contrastive], 0.0, [0.0; 4]),
        LossWeights::Automatic => {
            let mut w = [0.0; 4];
            let mut reg = 0.0;
            let mut ds = [0.0; 4];
            for k in 0..4 {
                let var = log_var[k].exp();
                w[k] = 0.5 / var;
                reg += var.ln_1p();
                // d/ds [L e^{-s}/2 + ln(1 + e^s)]
                ds[k] = -components[k] * w[k] + var / (1.0 + var);
            }
            (w, reg, ds)
        }
    };
    let mut breakdown = LossBreakdown {
        l_audio: components[0],
        l_text: components[1],
        l_multi: components[2],
        l_contrastive: components[3],
        l_total: 0.0,
        effective_weights,
        regularizer,
    };
    breakdown.l_total = breakdown.recompute_total();
    (breakdown, dlog_var)
}

fn check_contrastive(z_audio: &Tensor2, z_text: &Tensor2, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(M3vError::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if z_audio.shape() != z_text.shape() {
        return Err(M3vError::shape("info_nce", z_audio.shape(), z_text.shape()));
    }
    if z_audio.rows() == 0 {
        return Err(M3vError::Input("info_nce on an empty batch".into()));
    }
    Ok(())
}

/// InfoNCE over a batch of paired unit rows. Row `i` of each matrix is the
/// positive for row `i` of the other; the remaining `N − 1` rows are negatives.
pub fn info_nce(
    z_audio: &Tensor2,
    z_text: &Tensor2,
    tau: f64,
    direction: ContrastiveDirection,
) -> Result<f64> {
    Ok(info_nce_with_grad(z_audio, z_text, tau, direction)?.0)
}

/// InfoNCE and its gradients with respect to both inputs.
pub fn info_nce_with_grad(
    z_audio: &Tensor2,
    z_text: &Tensor2,
    tau: f64,
    direction: ContrastiveDirection,
) -> Result<(f64, Tensor2, Tensor2)> {
    check_contrastive(z_audio, z_text, tau)?;
    let n = z_audio.rows();
    let mut logits = z_audio.matmul_transposed(z_text)?;
    logits.scale(1.0 / tau);

    // d loss / d logits, accumulated per direction
    let mut dlogits = Tensor2::zeros(n, n);
    let (dir_weight, include_text_anchor) = match direction {
        ContrastiveDirection::Symmetric => (0.5, true),
        ContrastiveDirection::AudioToText => (1.0, false),
    };
    let scale = dir_weight / n as f64;

    // per-anchor terms are summed in sorted order so the loss is exactly
    // invariant to a joint permutation of the rows
    let mut terms_a = Vec::with_capacity(n);
    for i in 0..n {
        let row = logits.row(i);
        let lse = log_sum_exp(row.iter().copied());
        terms_a.push(lse - row[i]);
        for j in 0..n {
            let p = (row[j] - lse).exp();
            let target = if i == j { 1.0 } else { 0.0 };
            dlogits.set(i, j, dlogits.get(i, j) + scale * (p - target));
        }
    }
    let mut loss = dir_weight * sorted_sum(terms_a) / n as f64;

    if include_text_anchor {
        let mut terms_t = Vec::with_capacity(n);
        for j in 0..n {
            let col = (0..n).map(|i| logits.get(i, j));
            let lse = log_sum_exp(col.clone());
            terms_t.push(lse - logits.get(j, j));
            for i in 0..n {
                let p = (logits.get(i, j) - lse).exp();
                let target = if i == j { 1.0 } else { 0.0 };
                dlogits.set(i, j, dlogits.get(i, j) + scale * (p - target));
            }
        }
        loss += dir_weight * sorted_sum(terms_t) / n as f64;
    }

    dlogits.scale(1.0 / tau);
    let d_audio = dlogits.matmul(z_text)?;
    let d_text = dlogits.transpose().matmul(z_audio)?;
    Ok((loss, d_audio, d_text))
}

fn labels_for(outputs: &BatchOutputs, labels: &[usize]) -> Result<()> {
    if labels.len() != outputs.len() {
        return Err(M3vError::Input(format!(
            "{} labels for a batch of {}",
            labels.len(),
            outputs.len()
        )));
    }
    Ok(())
}

/// Cross-entropy of the audio, text and multi heads.
pub fn view_losses(outputs: &BatchOutputs, labels: &[usize]) -> Result<[f64; 3]> {
    labels_for(outputs, labels)?;
    Ok([
        cross_entropy(&outputs.probs_audio, labels)?,
        cross_entropy(&outputs.probs_text, labels)?,
        cross_entropy(&outputs.probs_multi, labels)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub direction: ContrastiveDirection,
}

/// Everything one optimization step needs from the loss.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub breakdown: LossBreakdown,
    pub outputs: OutputGrads,
    pub log_var: [f64; 4],
    pub degenerate: bool,
}

/// Evaluates all four components and the weighted total, plus the gradient of
/// the total with respect to the network outputs and the log-variances.
///
/// A single-sample batch contributes zero contrastive loss and logs a warning.
pub fn compute_loss(
    outputs: &BatchOutputs,
    labels: &[usize],
    tau: f64,
    cfg: &LossConfig,
    log_var: &[f64; 4],
) -> Result<LossGradients> {
    let [l_a, l_t, l_m] = view_losses(outputs, labels)?;
    let n = outputs.len();
    let k = outputs.z_audio.cols();
    let degenerate = n < 2;
    let (l_c, dz_a, dz_t) = if degenerate {
        DEGENERATE_BATCHES.fetch_add(1, Ordering::Relaxed);
        log::warn!("batch of size {n} has no negatives; contrastive loss set to 0");
        check_contrastive(&outputs.z_audio, &outputs.z_text, tau)?;
        (0.0, Tensor2::zeros(n, k), Tensor2::zeros(n, k))
    } else {
        info_nce_with_grad(&outputs.z_audio, &outputs.z_text, tau, cfg.direction)?
    };

    let (breakdown, dlog_var) = total_loss([l_a, l_t, l_m, l_c], &cfg.weights, log_var);
    let w = breakdown.effective_weights;
    let mut z_audio = dz_a;
    let mut z_text = dz_t;
    z_audio.scale(w[3]);
    z_text.scale(w[3]);
    let grads = OutputGrads {
        logits_audio: cross_entropy_logit_grad(&outputs.probs_audio, labels, w[0])?,
        logits_text: cross_entropy_logit_grad(&outputs.probs_text, labels, w[1])?,
        logits_multi: cross_entropy_logit_grad(&outputs.probs_multi, labels, w[2])?,
        z_audio,
        z_text,
    };
    Ok(LossGradients {
        breakdown,
        outputs: grads,
        log_var: dlog_var,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, l2_normalize, Rng};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn unit_rows(n: usize, k: usize, rng: &mut Rng) -> Tensor2 {
        let raw = Tensor2::from_vec(n, k, (0..n * k).map(|_| rng.normal()).collect()).unwrap();
        l2_normalize(&raw).0
    }

    #[test]
    fn single_pair_is_zero() {
        let z = Tensor2::from_rows(&[[0.6, 0.8]]);
        for dir in [ContrastiveDirection::Symmetric, ContrastiveDirection::AudioToText] {
            assert_eq!(info_nce(&z, &z, 0.07, dir).unwrap(), 0.0);
        }
    }

    #[test]
    fn uniform_similarity_is_ln_n() {
        // all four pairwise cosines are 0
        let za = Tensor2::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);
        let zt = Tensor2::from_rows(&[[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]);
        let l = info_nce(&za, &zt, 1.0, ContrastiveDirection::Symmetric).unwrap();
        assert!((l - LN_2).abs() < 1e-12);
        // N = 4, identical rows everywhere
        let z = Tensor2::from_rows(&[[1.0, 0.0]; 4]);
        let l = info_nce(&z, &z, 0.5, ContrastiveDirection::Symmetric).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_hand_value() {
        // sim = [[2,0],[0,2]] at τ = 1: vectors of norm √2 along orthogonal axes
        let s = 2f64.sqrt();
        let z = Tensor2::from_rows(&[[s, 0.0], [0.0, s]]);
        let l = info_nce(&z, &z, 1.0, ContrastiveDirection::Symmetric).unwrap();
        let expected = (1.0 + (-2f64).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.126_928_011_042_972_6).abs() < 1e-12);
    }

    #[test]
    fn non_positive_temperature_rejected() {
        let z = Tensor2::from_rows(&[[1.0, 0.0]]);
        assert!(info_nce(&z, &z, 0.0, ContrastiveDirection::Symmetric).is_err());
        assert!(info_nce(&z, &z, -1.0, ContrastiveDirection::Symmetric).is_err());
    }

    #[test]
    fn info_nce_gradient_matches_finite_differences() {
        let mut rng = Rng::new(17);
        for dir in [ContrastiveDirection::Symmetric, ContrastiveDirection::AudioToText] {
            let za = unit_rows(4, 3, &mut rng);
            let zt = unit_rows(4, 3, &mut rng);
            let (_, ga, gt) = info_nce_with_grad(&za, &zt, 0.5, dir).unwrap();
            let mut theta = za.data().to_vec();
            theta.extend_from_slice(zt.data());
            let mut analytic = ga.data().to_vec();
            analytic.extend_from_slice(gt.data());
            let f = |flat: &[f64]| {
                let a = Tensor2::from_vec(4, 3, flat[..12].to_vec()).unwrap();
                let t = Tensor2::from_vec(4, 3, flat[12..].to_vec()).unwrap();
                info_nce(&a, &t, 0.5, dir).unwrap()
            };
            let err = grad_check(&theta, &analytic, f, usize::MAX, 1e-5, &mut rng);
            assert!(err < 1e-4, "{dir:?}: {err}");
        }
    }

    #[test]
    fn fixed_unit_weights_sum() {
        let (b, ds) = total_loss([0.1, 0.2, 0.3, 0.4], &LossWeights::equal(), &[0.0; 4]);
        assert!((b.l_total - 1.0).abs() < 1e-15);
        assert_eq!(ds, [0.0; 4]);
    }

    #[test]
    fn automatic_at_unit_variance() {
        let l = [0.1, 0.2, 0.3, 0.4];
        let (b, _) = total_loss(l, &LossWeights::Automatic, &[0.0; 4]);
        let expected: f64 = l.iter().map(|v| v / 2.0 + LN_2).sum();
        assert!((b.l_total - expected).abs() < 1e-12);
        assert!((b.recompute_total() - b.l_total).abs() < 1e-12);
    }

    #[test]
    fn automatic_log_var_gradient() {
        let l = [0.7, 0.2, 1.3, 2.0];
        let s = [0.3, -0.5, 0.0, 1.1];
        let (_, ds) = total_loss(l, &LossWeights::Automatic, &s);
        let f = |flat: &[f64]| {
            let s: [f64; 4] = flat.try_into().unwrap();
            total_loss(l, &LossWeights::Automatic, &s).0.l_total
        };
        let err = grad_check(&s, &ds, f, 4, 1e-5, &mut Rng::new(0));
        assert!(err < 1e-6, "{err}");
    }

    /// Minimizer of `L/(2v) + ln(1+v)` over the variance `v`.
    fn closed_form_minimizer(l: f64) -> f64 {
        // stationary point of 2v² − L·v − L = 0
        (l + (l * l + 8.0 * l).sqrt()) / 4.0
    }

    #[test]
    fn uncertainty_regularizer_has_finite_minimizer() {
        for l in [0.05, 0.3, 1.0, 2.5, 7.0] {
            let objective = |v: f64| l / (2.0 * v) + v.ln_1p();
            // brute-force grid over v
            let (mut best_v, mut best) = (0.0, f64::INFINITY);
            let mut v = 1e-4;
            while v < 50.0 {
                let o = objective(v);
                if o < best {
                    best = o;
                    best_v = v;
                }
                v += 1e-4;
            }
            // numeric minimization over s = ln v by golden section
            let g = |s: f64| objective(s.exp());
            let (mut lo, mut hi) = (-10.0f64, 5.0f64);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let a = hi - phi * (hi - lo);
                let b = lo + phi * (hi - lo);
                if g(a) < g(b) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            let numeric_v = (0.5 * (lo + hi)).exp();
            assert!(numeric_v.is_finite());
            assert!((numeric_v - best_v).abs() < 1e-3, "L={l}: {numeric_v} vs {best_v}");
            assert!((numeric_v - closed_form_minimizer(l)).abs() < 1e-6);
        }
    }

    #[test]
    fn fixed_mode_is_linear_and_monotone() {
        let w = LossWeights::Fixed {
            audio: 0.5,
            text: 2.0,
            multi: 1.0,
            contrastive: 0.25,
        };
        let base = [0.3, 0.4, 0.5, 0.6];
        let t0 = total_loss(base, &w, &[0.0; 4]).0.l_total;
        for k in 0..4 {
            let mut bumped = base;
            bumped[k] += 1.0;
            let t1 = total_loss(bumped, &w, &[0.0; 4]).0.l_total;
            let mut doubled = base;
            doubled[k] += 2.0;
            let t2 = total_loss(doubled, &w, &[0.0; 4]).0.l_total;
            assert!(t1 > t0);
            assert!(((t2 - t1) - (t1 - t0)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::equal().validate().is_ok());
        let baseline = LossWeights::Fixed {
            audio: 1.0,
            text: 1.0,
            multi: 1.0,
            contrastive: 0.0,
        };
        assert!(baseline.validate().is_ok());
        let negative = LossWeights::Fixed {
            audio: -1.0,
            text: 1.0,
            multi: 1.0,
            contrastive: 1.0,
        };
        assert!(negative.validate().is_err());
        let zeros = LossWeights::Fixed {
            audio: 0.0,
            text: 0.0,
            multi: 0.0,
            contrastive: 0.0,
        };
        assert!(zeros.validate().is_err());
    }

    proptest! {
        #[test]
        fn info_nce_is_permutation_invariant(seed in any::<u64>(), n in 2usize..7) {
            let mut rng = Rng::new(seed);
            let za = unit_rows(n, 4, &mut rng);
            let zt = unit_rows(n, 4, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            for dir in [ContrastiveDirection::Symmetric, ContrastiveDirection::AudioToText] {
                let a = info_nce(&za, &zt, 0.1, dir).unwrap();
                let b = info_nce(&za.select_rows(&perm), &zt.select_rows(&perm), 0.1, dir).unwrap();
                prop_assert_eq!(a.to_bits(), b.to_bits());
                prop_assert!(a >= 0.0);
            }
        }
    }
}
