//! Post-hoc decision policies over the four view scores.
//!
//! Policy 1 picks one head based on how well the transcript matches the
//! audio. Policy 2 feeds all four scores to a linear SVM. Both compare
//! strictly, so a score equal to its threshold is never accepted.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{M3vError, Result};
use crate::model::ViewScores;
use crate::numerics::{dot, Rng};

/// Feature order the SVM weights refer to.
pub const FEATURE_ORDER: &str = "align,audio,text,multi";

pub const POLICY_FORMAT: &str = "m3v-policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSet {
    pub t_align_low: f64,
    pub t_align_high: f64,
    pub t_audio: f64,
    pub t_text: f64,
    pub t_multi: f64,
    pub t_fusion: f64,
}

impl Default for ThresholdSet {
    /// Uncalibrated: the multi head at 0.5 and the SVM at its natural
    /// boundary.
    fn default() -> Self {
        ThresholdSet {
            t_align_low: 0.0,
            t_align_high: 1.0,
            t_audio: 0.5,
            t_text: 0.5,
            t_multi: 0.5,
            t_fusion: 0.0,
        }
    }
}

impl ThresholdSet {
    pub fn validate(&self) -> Result<()> {
        let views = [
            ("t_align_low", self.t_align_low),
            ("t_align_high", self.t_align_high),
            ("t_audio", self.t_audio),
            ("t_text", self.t_text),
            ("t_multi", self.t_multi),
        ];
        for (name, v) in views {
            if !(0.0..=1.0).contains(&v) {
                return Err(M3vError::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.t_align_low > self.t_align_high {
            return Err(M3vError::Config(format!(
                "t_align_low {} exceeds t_align_high {}",
                self.t_align_low, self.t_align_high
            )));
        }
        if !self.t_fusion.is_finite() {
            return Err(M3vError::Config("t_fusion is not finite".into()));
        }
        Ok(())
    }
}

/// Which rule produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Text,
    Audio,
    Multi,
    Fusion,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Text => "text",
            Branch::Audio => "audio",
            Branch::Multi => "multi",
            Branch::Fusion => "fusion",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// `true` means device-directed.
    pub verdict: bool,
    pub branch: Branch,
    pub scores: ViewScores,
    /// SVM margin, for Policy 2 only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

pub fn policy1_decide(s: &ViewScores, th: &ThresholdSet) -> Decision {
    let (verdict, branch) = if s.v_align > th.t_align_high {
        (s.v_text > th.t_text, Branch::Text)
    } else if s.v_align < th.t_align_low {
        (s.v_audio > th.t_audio, Branch::Audio)
    } else {
        (s.v_multi > th.t_multi, Branch::Multi)
    };
    Decision {
        verdict,
        branch,
        scores: *s,
        margin: None,
    }
}

pub fn policy2_decide(s: &ViewScores, svm: &SvmModel, t_fusion: f64) -> Decision {
    let margin = svm.margin(s);
    Decision {
        verdict: margin > t_fusion,
        branch: Branch::Fusion,
        scores: *s,
        margin: Some(margin),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmHyper {
    /// Soft-margin penalty in `½‖w‖² + C Σ hinge`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper {
            c: 1.0,
            epochs: 200,
            seed: 0,
        }
    }
}

impl SvmHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(M3vError::Config(format!("svm C must be positive, got {}", self.c)));
        }
        if self.epochs == 0 {
            return Err(M3vError::Config("svm epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmModel {
    /// Over `[v_align, v_audio, v_text, v_multi]`.
    pub weights: [f64; 4],
    pub bias: f64,
    pub c: f64,
    pub seed: u64,
}

impl SvmModel {
    pub fn margin(&self, s: &ViewScores) -> f64 {
        dot(&self.weights, &s.to_array()) + self.bias
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().chain([&self.bias]).any(|v| !v.is_finite()) {
            return Err(M3vError::Config("svm weights must be finite".into()));
        }
        Ok(())
    }
}

fn check_both_classes(n: usize, labels: &[bool], need: usize, what: &str) -> Result<()> {
    if n != labels.len() {
        return Err(M3vError::Input(format!(
            "{what}: {n} score rows for {} labels",
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos < need || neg < need {
        return Err(M3vError::Calibration(format!(
            "{what} needs at least {need} samples of each class, got {pos} positive and {neg} negative"
        )));
    }
    Ok(())
}

/// Linear soft-margin SVM by Pegasos-style stochastic subgradient descent.
///
/// Minimizes `λ/2 ‖(w, b)‖² + mean hinge` with `λ = 1/(C·N)`, which has the
/// same minimizer as `½‖w‖² + C Σ hinge` when the bias is regularized along
/// with the weights. The bias is handled as a constant feature so the step
/// size schedule stays bounded.
pub fn train_svm(x: &[ViewScores], labels: &[bool], hyper: &SvmHyper) -> Result<SvmModel> {
    hyper.validate()?;
    check_both_classes(x.len(), labels, 1, "svm training")?;
    if x.iter().flat_map(|s| s.to_array()).any(|v| !v.is_finite()) {
        return Err(M3vError::Input("svm input contains non-finite scores".into()));
    }

    let n = x.len();
    let lambda = 1.0 / (hyper.c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let rows: Vec<[f64; 5]> = x
        .iter()
        .map(|s| {
            let a = s.to_array();
            [a[0], a[1], a[2], a[3], 1.0]
        })
        .collect();
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();

    let mut w = [0.0f64; 5];
    let mut rng = Rng::new(hyper.seed).fork(0x5f3);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for _ in 0..hyper.epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let violated = ys[i] * dot(&w, &rows[i]) < 1.0;
            let shrink = 1.0 - eta * lambda;
            for (wj, xj) in w.iter_mut().zip(&rows[i]) {
                *wj *= shrink;
                if violated {
                    *wj += eta * ys[i] * xj;
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    let model = SvmModel {
        weights: [w[0], w[1], w[2], w[3]],
        bias: w[4],
        c: hyper.c,
        seed: hyper.seed,
    };
    model.validate().map_err(|_| M3vError::State("svm training diverged".into()))?;
    Ok(model)
}

/// Best strict threshold for `value > t` against `labels`, searched over
/// the midpoints between adjacent distinct values plus one point below the
/// minimum (when one is allowed) and one above the maximum. Ties go to the
/// lowest threshold. Returns `(threshold, accuracy)`.
fn sweep_threshold(values: &[f64], labels: &[bool], below: Option<f64>, above: f64) -> (f64, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    // everything accepted
    let mut correct = labels.iter().filter(|&&l| l).count() as i64;
    let mut best = match below {
        Some(t) => (t, correct),
        None => (f64::NAN, -1),
    };
    let mut i = 0;
    while i < order.len() {
        let v = values[order[i]];
        while i < order.len() && values[order[i]] == v {
            correct += if labels[order[i]] { -1 } else { 1 };
            i += 1;
        }
        let t = match order.get(i) {
            Some(&next) => v + (values[next] - v) / 2.0,
            None => above,
        };
        if correct > best.1 {
            best = (t, correct);
        }
    }
    (best.0, best.1 as f64 / values.len() as f64)
}

/// Threshold for a probability-like score; stays inside [0, 1].
fn sweep_unit(values: &[f64], labels: &[bool]) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // with a zero score present no threshold in [0, 1] accepts everything
    let below = (min > 0.0).then_some(min / 2.0);
    sweep_threshold(values, labels, below, ((max + 1.0) / 2.0).min(1.0)).0
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Number of quantile levels per alignment threshold.
    pub align_grid: usize,
    pub svm: SvmHyper,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            align_grid: 21,
            svm: SvmHyper::default(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.align_grid < 2 {
            return Err(M3vError::Config("align_grid must be at least 2".into()));
        }
        self.svm.validate()
    }
}

/// Staged search on validation scores: each head's threshold on its own,
/// then the alignment pair for Policy 1 given those, then the fusion
/// threshold over the SVM's margins.
pub fn calibrate_thresholds(
    scores: &[ViewScores],
    labels: &[bool],
    svm: &SvmModel,
    align_grid: usize,
) -> Result<ThresholdSet> {
    check_both_classes(scores.len(), labels, 2, "calibration")?;
    if align_grid < 2 {
        return Err(M3vError::Config("align_grid must be at least 2".into()));
    }
    if scores.iter().flat_map(|s| s.to_array()).any(|v| !(0.0..=1.0).contains(&v)) {
        return Err(M3vError::Input("view scores must lie in [0, 1]".into()));
    }
    let col = |f: fn(&ViewScores) -> f64| scores.iter().map(f).collect::<Vec<_>>();
    let t_audio = sweep_unit(&col(|s| s.v_audio), labels);
    let t_text = sweep_unit(&col(|s| s.v_text), labels);
    let t_multi = sweep_unit(&col(|s| s.v_multi), labels);

    let text_ok: Vec<bool> = scores.iter().zip(labels).map(|(s, &l)| (s.v_text > t_text) == l).collect();
    let audio_ok: Vec<bool> = scores.iter().zip(labels).map(|(s, &l)| (s.v_audio > t_audio) == l).collect();
    let multi_ok: Vec<bool> = scores.iter().zip(labels).map(|(s, &l)| (s.v_multi > t_multi) == l).collect();

    let mut align = col(|s| s.v_align);
    align.sort_by(f64::total_cmp);
    let levels: Vec<f64> = (0..align_grid)
        .map(|i| quantile(&align, i as f64 / (align_grid - 1) as f64))
        .collect();
    let mut best = (levels[0], levels[0], usize::MAX);
    for (i, &low) in levels.iter().enumerate() {
        for &high in &levels[i..] {
            let correct = scores
                .iter()
                .enumerate()
                .filter(|&(k, s)| {
                    if s.v_align > high {
                        text_ok[k]
                    } else if s.v_align < low {
                        audio_ok[k]
                    } else {
                        multi_ok[k]
                    }
                })
                .count();
            if best.2 == usize::MAX || correct > best.2 {
                best = (low, high, correct);
            }
        }
    }

    let margins: Vec<f64> = scores.iter().map(|s| svm.margin(s)).collect();
    let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (t_fusion, _) = sweep_threshold(&margins, labels, Some(min - 1.0), max + 1.0);

    let th = ThresholdSet {
        t_align_low: best.0,
        t_align_high: best.1,
        t_audio,
        t_text,
        t_multi,
        t_fusion,
    };
    th.validate()?;
    Ok(th)
}

/// Trains the SVM and then calibrates all six thresholds on the same
/// validation scores.
pub fn calibrate(
    scores: &[ViewScores],
    labels: &[bool],
    cfg: &CalibrationConfig,
) -> Result<(ThresholdSet, SvmModel)> {
    cfg.validate()?;
    check_both_classes(scores.len(), labels, 2, "calibration")?;
    let svm = train_svm(scores, labels, &cfg.svm)?;
    let th = calibrate_thresholds(scores, labels, &svm, cfg.align_grid)?;
    Ok((th, svm))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProvenance {
    pub dataset_digest: String,
    pub n_samples: usize,
    pub seed: u64,
}

/// Everything needed to apply both policies, as written by `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyArtifact {
    pub format: String,
    pub version: u32,
    pub feature_order: String,
    pub thresholds: ThresholdSet,
    pub svm: SvmModel,
    pub provenance: CalibrationProvenance,
}

impl PolicyArtifact {
    pub fn new(thresholds: ThresholdSet, svm: SvmModel, provenance: CalibrationProvenance) -> Self {
        PolicyArtifact {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            feature_order: FEATURE_ORDER.to_string(),
            thresholds,
            svm,
            provenance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != POLICY_FORMAT {
            return Err(M3vError::Input(format!("not a policy file (format {:?})", self.format)));
        }
        if self.version != POLICY_VERSION {
            return Err(M3vError::UnsupportedVersion {
                found: self.version,
                supported: POLICY_VERSION,
            });
        }
        if self.feature_order != FEATURE_ORDER {
            return Err(M3vError::Input(format!(
                "policy feature order {:?} differs from {FEATURE_ORDER:?}",
                self.feature_order
            )));
        }
        self.thresholds.validate()?;
        self.svm.validate()
    }

    pub fn decide(&self, s: &ViewScores) -> (Decision, Decision) {
        (
            policy1_decide(s, &self.thresholds),
            policy2_decide(s, &self.svm, self.thresholds.t_fusion),
        )
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("policy serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: PolicyArtifact = serde_json::from_str(s).map_err(|e| M3vError::Serde(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::util::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| M3vError::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn vs(a: f64, au: f64, t: f64, m: f64) -> ViewScores {
        ViewScores::from_array([a, au, t, m])
    }

    fn th(low: f64, high: f64, audio: f64, text: f64, multi: f64) -> ThresholdSet {
        ThresholdSet {
            t_align_low: low,
            t_align_high: high,
            t_audio: audio,
            t_text: text,
            t_multi: multi,
            t_fusion: 0.0,
        }
    }

    #[test]
    fn high_alignment_uses_text() {
        let d = policy1_decide(&vs(0.9, 0.0, 0.8, 0.0), &th(0.3, 0.7, 0.5, 0.5, 0.5));
        assert_eq!((d.verdict, d.branch), (true, Branch::Text));
    }

    #[test]
    fn low_alignment_uses_audio() {
        let d = policy1_decide(&vs(0.1, 0.2, 1.0, 1.0), &th(0.3, 0.7, 0.5, 0.5, 0.5));
        assert_eq!((d.verdict, d.branch), (false, Branch::Audio));
    }

    #[test]
    fn full_range_always_multi() {
        for a in [0.0, 0.3, 1.0] {
            let d = policy1_decide(&vs(a, 1.0, 1.0, 0.2), &th(0.0, 1.0, 0.5, 0.5, 0.5));
            assert_eq!(d.branch, Branch::Multi);
            assert!(!d.verdict);
        }
    }

    #[test]
    fn policy2_reductions() {
        let svm = SvmModel { weights: [0.0, 0.0, 0.0, 1.0], bias: 0.0, c: 1.0, seed: 0 };
        assert!(policy2_decide(&vs(0.0, 0.0, 0.0, 0.6), &svm, 0.5).verdict);
        assert!(!policy2_decide(&vs(0.0, 0.0, 0.0, 0.5), &svm, 0.5).verdict);
        let always = SvmModel { weights: [0.0; 4], bias: 1.0, c: 1.0, seed: 0 };
        assert!(policy2_decide(&vs(0.0, 0.0, 0.0, 0.0), &always, 0.0).verdict);
        let d = policy2_decide(&vs(0.0, 0.0, 0.0, 0.0), &always, 1.0);
        assert!(!d.verdict);
        assert_eq!(d.margin, Some(1.0));
    }

    #[test]
    fn threshold_set_validation() {
        assert!(ThresholdSet::default().validate().is_ok());
        assert!(th(0.8, 0.2, 0.5, 0.5, 0.5).validate().is_err());
        assert!(th(0.0, 1.0, 1.5, 0.5, 0.5).validate().is_err());
    }

    fn separable(n: usize, seed: u64) -> (Vec<ViewScores>, Vec<bool>) {
        let mut rng = Rng::new(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let m = if pos { rng.uniform_range(0.6, 1.0) } else { rng.uniform_range(0.0, 0.4) };
            x.push(vs(rng.uniform(), rng.uniform(), rng.uniform(), m));
            y.push(pos);
        }
        (x, y)
    }

    #[test]
    fn svm_separates_margin_data() {
        let (x, y) = separable(200, 3);
        let svm = train_svm(&x, &y, &SvmHyper::default()).unwrap();
        let correct = x.iter().zip(&y).filter(|(s, &l)| (svm.margin(s) > 0.0) == l).count();
        assert_eq!(correct, x.len());
    }

    #[test]
    fn svm_is_deterministic_and_rejects_one_class() {
        let (x, y) = separable(50, 4);
        let h = SvmHyper::default();
        assert_eq!(train_svm(&x, &y, &h).unwrap(), train_svm(&x, &y, &h).unwrap());
        let ones = vec![true; x.len()];
        assert!(matches!(train_svm(&x, &ones, &h), Err(M3vError::Calibration(_))));
    }

    #[test]
    fn separable_head_calibrates_to_perfect() {
        let scores = vec![vs(0.5, 0.9, 0.5, 0.5), vs(0.5, 0.8, 0.5, 0.5), vs(0.5, 0.3, 0.5, 0.5), vs(0.5, 0.1, 0.5, 0.5)];
        let labels = [true, true, false, false];
        let svm = SvmModel { weights: [0.0; 4], bias: 0.0, c: 1.0, seed: 0 };
        let t = calibrate_thresholds(&scores, &labels, &svm, 21).unwrap();
        assert_eq!(t.t_audio, 0.55);
        // alignment constant → the grid collapses onto one point
        assert_eq!(t.t_align_low, t.t_align_high);
        let branches: std::collections::BTreeSet<Branch> =
            scores.iter().map(|s| policy1_decide(s, &t).branch).collect();
        assert_eq!(branches.len(), 1);
    }

    #[test]
    fn single_class_calibration_fails() {
        let scores = vec![vs(0.5, 0.5, 0.5, 0.5); 4];
        let svm = SvmModel { weights: [0.0; 4], bias: 0.0, c: 1.0, seed: 0 };
        assert!(matches!(
            calibrate_thresholds(&scores, &[true; 4], &svm, 21),
            Err(M3vError::Calibration(_))
        ));
    }

    #[test]
    fn sweep_breaks_ties_low() {
        // every threshold in [0.2, 0.8) is perfect; the lowest candidate wins
        let (t, acc) = sweep_threshold(&[0.1, 0.3, 0.7, 0.9], &[false, true, true, true], Some(0.05), 0.95);
        assert_eq!((t, acc), (0.2, 1.0));
        // all-accept sentinel is the lowest option
        let (t, _) = sweep_threshold(&[0.1, 0.3], &[true, true], Some(0.05), 0.65);
        assert_eq!(t, 0.05);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile(&v, 0.0), 0.0);
        assert_eq!(quantile(&v, 1.0), 3.0);
        assert_eq!(quantile(&v, 0.5), 1.5);
    }

    #[test]
    fn artifact_round_trip_and_checks() {
        let art = PolicyArtifact::new(
            ThresholdSet::default(),
            SvmModel { weights: [0.1, 0.2, 0.3, 0.4], bias: -0.5, c: 1.0, seed: 9 },
            CalibrationProvenance { dataset_digest: "ab".into(), n_samples: 10, seed: 9 },
        );
        let back = PolicyArtifact::from_json(&art.to_json()).unwrap();
        assert_eq!(back, art);
        let bad = art.to_json().replace(FEATURE_ORDER, "audio,align,text,multi");
        assert!(PolicyArtifact::from_json(&bad).is_err());
    }

    proptest! {
        #[test]
        fn calibrated_heads_beat_default(
            rows in prop::collection::vec((0u8..=20, 0u8..=20, 0u8..=20, 0u8..=20, any::<bool>()), 4..80)
        ) {
            let scores: Vec<ViewScores> = rows.iter()
                .map(|r| vs(r.0 as f64 / 20.0, r.1 as f64 / 20.0, r.2 as f64 / 20.0, r.3 as f64 / 20.0))
                .collect();
            let labels: Vec<bool> = rows.iter().map(|r| r.4).collect();
            let pos = labels.iter().filter(|&&l| l).count();
            prop_assume!(pos >= 2 && labels.len() - pos >= 2);
            let svm = SvmModel { weights: [0.0, 0.0, 0.0, 1.0], bias: 0.0, c: 1.0, seed: 0 };
            let t = calibrate_thresholds(&scores, &labels, &svm, 21).unwrap();
            prop_assert!(t.validate().is_ok());
            let acc = |f: &dyn Fn(&ViewScores) -> bool| {
                scores.iter().zip(&labels).filter(|(s, &l)| f(s) == l).count()
            };
            prop_assert!(acc(&|s| s.v_audio > t.t_audio) >= acc(&|s| s.v_audio > 0.5));
            prop_assert!(acc(&|s| s.v_text > t.t_text) >= acc(&|s| s.v_text > 0.5));
            prop_assert!(acc(&|s| s.v_multi > t.t_multi) >= acc(&|s| s.v_multi > 0.5));
        }

        #[test]
        fn svm_sign_is_scale_invariant(
            w in prop::array::uniform4(-5.0f64..5.0), b in -5.0f64..5.0, c in 0.01f64..100.0,
            s in prop::array::uniform4(0.0f64..=1.0)
        ) {
            let a = SvmModel { weights: w, bias: b, c: 1.0, seed: 0 };
            let scaled = SvmModel { weights: w.map(|v| v * c), bias: b * c, ..a };
            let s = ViewScores::from_array(s);
            prop_assert_eq!(policy2_decide(&s, &a, 0.0).verdict, policy2_decide(&s, &scaled, 0.0).verdict);
        }

        #[test]
        fn full_align_range_matches_multi_head(s in prop::array::uniform4(0.0f64..=1.0), t in 0.0f64..=1.0) {
            let s = ViewScores::from_array(s);
            let d = policy1_decide(&s, &th(0.0, 1.0, 0.5, 0.5, t));
            prop_assert_eq!(d.branch, Branch::Multi);
            prop_assert_eq!(d.verdict, s.v_multi > t);
        }
    }
}
