//! Accuracy, ROC sweep, equal error rate and the evaluation report.
//!
//! Device-directed is the positive ("accept") class. A score is accepted at
//! threshold `t` only when it strictly exceeds `t`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{M3vError, Result};
use crate::model::ViewScores;
use crate::policy::{Branch, Decision};

pub fn accuracy(verdicts: &[bool], labels: &[bool]) -> Result<f64> {
    if verdicts.len() != labels.len() {
        return Err(M3vError::Input(format!(
            "{} verdicts for {} labels",
            verdicts.len(),
            labels.len()
        )));
    }
    if verdicts.is_empty() {
        return Err(M3vError::Input("accuracy of an empty set".into()));
    }
    let correct = verdicts.iter().zip(labels).filter(|(v, l)| v == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// One operating point of the ROC sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    /// Negatives scored above the threshold, over all negatives.
    pub far: f64,
    /// Positives scored at or below the threshold, over all positives.
    pub frr: f64,
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(M3vError::Input(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(M3vError::Input("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(M3vError::Input(
            "ROC/EER need both positive and negative samples".into(),
        ));
    }
    Ok((pos, neg))
}

/// Sweeps thresholds over `−∞`, the midpoints between adjacent distinct
/// scores, and `+∞`, in increasing order. FAR is non-increasing and FRR
/// non-decreasing along the result.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut points = vec![RocPoint {
        threshold: f64::NEG_INFINITY,
        far: 1.0,
        frr: 0.0,
    }];
    // counts of samples at or below the current threshold
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            if labels[order[i]] {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
        let threshold = match order.get(i) {
            Some(&next) => value + (scores[next] - value) / 2.0,
            None => f64::INFINITY,
        };
        points.push(RocPoint {
            threshold,
            far: (neg - neg_below) as f64 / neg as f64,
            frr: pos_below as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Equal error rate: the FAR = FRR crossing of the ROC sweep, linearly
/// interpolated between the bracketing points.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let points = roc_curve(scores, labels)?;
    Ok(eer_from_curve(&points))
}

fn eer_from_curve(points: &[RocPoint]) -> f64 {
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = a.far - a.frr;
        let db = b.far - b.frr;
        if da == 0.0 {
            return a.far;
        }
        if da > 0.0 && db <= 0.0 {
            if db == 0.0 {
                return b.far;
            }
            let alpha = da / (da - db);
            return a.far + alpha * (b.far - a.far);
        }
    }
    // the sweep always ends at FAR = 0, FRR = 1
    let last = points[points.len() - 1];
    last.far
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    /// Accuracy at the 0.5 operating point.
    pub accuracy: f64,
    /// `None` when the evaluated set holds a single class.
    pub eer: Option<f64>,
}

/// Confusion counts for one decision path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    fn add(&mut self, verdict: bool, label: bool) {
        match (verdict, label) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub accuracy: f64,
    /// Confusion counts keyed by the branch that produced the verdict.
    pub branches: BTreeMap<Branch, Confusion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub n_samples: usize,
    pub audio_accuracy: f64,
    pub text_accuracy: f64,
    pub multi_accuracy: f64,
    pub policy1_accuracy: Option<f64>,
    pub policy2_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slices {
    pub aligned: Option<SliceMetrics>,
    pub misaligned: Option<SliceMetrics>,
}

/// How well the alignment score separates matching from mismatched
/// transcripts. Only available when misalignment flags are known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignMetrics {
    /// Accuracy of `v_align > 0.5` as an "aligned" detector.
    pub accuracy: f64,
    pub eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub n_positive: usize,
    pub align: Option<AlignMetrics>,
    pub audio: ViewMetrics,
    pub text: ViewMetrics,
    pub multi: ViewMetrics,
    pub policy1: Option<PolicyMetrics>,
    pub policy2: Option<PolicyMetrics>,
    pub slices: Option<Slices>,
}

/// Everything [`build_report`] consumes, row-aligned.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub scores: &'a [ViewScores],
    pub labels: &'a [bool],
    /// Per-sample misalignment ground truth, if known.
    pub misaligned: Option<&'a [bool]>,
    pub policy1: Option<&'a [Decision]>,
    pub policy2: Option<&'a [Decision]>,
}

fn view_metrics(scores: &[f64], labels: &[bool]) -> Result<ViewMetrics> {
    let verdicts: Vec<bool> = scores.iter().map(|&s| s > 0.5).collect();
    Ok(ViewMetrics {
        accuracy: accuracy(&verdicts, labels)?,
        eer: eer(scores, labels).ok(),
    })
}

fn policy_metrics(decisions: &[Decision], labels: &[bool]) -> Result<PolicyMetrics> {
    let verdicts: Vec<bool> = decisions.iter().map(|d| d.verdict).collect();
    let mut branches = BTreeMap::new();
    for (d, &l) in decisions.iter().zip(labels) {
        branches
            .entry(d.branch)
            .or_insert_with(Confusion::default)
            .add(d.verdict, l);
    }
    Ok(PolicyMetrics {
        accuracy: accuracy(&verdicts, labels)?,
        branches,
    })
}

fn slice_metrics(inputs: &ReportInputs<'_>, keep: &[bool]) -> Result<Option<SliceMetrics>> {
    let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    if idx.is_empty() {
        return Ok(None);
    }
    let labels: Vec<bool> = idx.iter().map(|&i| inputs.labels[i]).collect();
    let acc_of = |f: &dyn Fn(&ViewScores) -> f64| -> Result<f64> {
        let v: Vec<bool> = idx.iter().map(|&i| f(&inputs.scores[i]) > 0.5).collect();
        accuracy(&v, &labels)
    };
    let policy_acc = |d: Option<&[Decision]>| -> Result<Option<f64>> {
        d.map(|d| {
            let v: Vec<bool> = idx.iter().map(|&i| d[i].verdict).collect();
            accuracy(&v, &labels)
        })
        .transpose()
    };
    Ok(Some(SliceMetrics {
        n_samples: idx.len(),
        audio_accuracy: acc_of(&|s| s.v_audio)?,
        text_accuracy: acc_of(&|s| s.v_text)?,
        multi_accuracy: acc_of(&|s| s.v_multi)?,
        policy1_accuracy: policy_acc(inputs.policy1)?,
        policy2_accuracy: policy_acc(inputs.policy2)?,
    }))
}

pub fn build_report(inputs: ReportInputs<'_>) -> Result<EvalReport> {
    let n = inputs.scores.len();
    let check = |what: &str, len: usize| {
        if len != n {
            Err(M3vError::Input(format!("{what} has {len} rows, expected {n}")))
        } else {
            Ok(())
        }
    };
    check("labels", inputs.labels.len())?;
    if let Some(m) = inputs.misaligned {
        check("misalignment flags", m.len())?;
    }
    if let Some(d) = inputs.policy1 {
        check("policy 1 decisions", d.len())?;
    }
    if let Some(d) = inputs.policy2 {
        check("policy 2 decisions", d.len())?;
    }
    if n == 0 {
        return Err(M3vError::Input("cannot report on an empty set".into()));
    }

    let column = |f: fn(&ViewScores) -> f64| inputs.scores.iter().map(f).collect::<Vec<_>>();
    let align = match inputs.misaligned {
        Some(flags) => {
            let aligned: Vec<bool> = flags.iter().map(|m| !m).collect();
            Some(AlignMetrics {
                accuracy: accuracy(
                    &column(|s| s.v_align)
                        .iter()
                        .map(|&v| v > 0.5)
                        .collect::<Vec<_>>(),
                    &aligned,
                )?,
                eer: eer(&column(|s| s.v_align), &aligned).ok(),
            })
        }
        None => None,
    };

    let slices = match inputs.misaligned {
        Some(flags) => {
            let aligned: Vec<bool> = flags.iter().map(|m| !m).collect();
            Some(Slices {
                aligned: slice_metrics(&inputs, &aligned)?,
                misaligned: slice_metrics(&inputs, flags)?,
            })
        }
        None => None,
    };

    Ok(EvalReport {
        n_samples: n,
        n_positive: inputs.labels.iter().filter(|&&l| l).count(),
        align,
        audio: view_metrics(&column(|s| s.v_audio), inputs.labels)?,
        text: view_metrics(&column(|s| s.v_text), inputs.labels)?,
        multi: view_metrics(&column(|s| s.v_multi), inputs.labels)?,
        policy1: inputs
            .policy1
            .map(|d| policy_metrics(d, inputs.labels))
            .transpose()?,
        policy2: inputs
            .policy2
            .map(|d| policy_metrics(d, inputs.labels))
            .transpose()?,
        slices,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl EvalReport {
    /// Fixed-order human-readable table (percentages).
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>10} {:>10} {:>10} {:>10} {:>8}",
            "set", "n", "Align ACC", "Text ACC", "Audio ACC", "Merge ACC", "EER"
        );
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>10} {:>10} {:>10} {:>10} {:>8}",
            "all",
            self.n_samples,
            pct(self.align.map(|a| a.accuracy)),
            pct(Some(self.text.accuracy)),
            pct(Some(self.audio.accuracy)),
            pct(Some(self.multi.accuracy)),
            pct(self.multi.eer),
        );
        if let Some(slices) = &self.slices {
            for (name, s) in [("aligned", slices.aligned), ("misaligned", slices.misaligned)] {
                if let Some(s) = s {
                    let _ = writeln!(
                        out,
                        "{:<12} {:>6} {:>10} {:>10} {:>10} {:>10} {:>8}",
                        name,
                        s.n_samples,
                        "--",
                        pct(Some(s.text_accuracy)),
                        pct(Some(s.audio_accuracy)),
                        pct(Some(s.multi_accuracy)),
                        "--",
                    );
                }
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:>10} {:>12} {:>12}", "decision", "ACC", "aligned", "misaligned");
        let slice_acc = |f: fn(&SliceMetrics) -> Option<f64>| {
            let s = self.slices.as_ref();
            (
                s.and_then(|s| s.aligned.as_ref()).and_then(f),
                s.and_then(|s| s.misaligned.as_ref()).and_then(f),
            )
        };
        let rows = [
            ("multi head", Some(self.multi.accuracy), slice_acc(|s| Some(s.multi_accuracy))),
            ("policy 1", self.policy1.as_ref().map(|p| p.accuracy), slice_acc(|s| s.policy1_accuracy)),
            ("policy 2", self.policy2.as_ref().map(|p| p.accuracy), slice_acc(|s| s.policy2_accuracy)),
        ];
        for (name, acc, (a, m)) in rows {
            let acc = if acc.is_none() && name != "multi head" {
                "absent".to_string()
            } else {
                pct(acc)
            };
            let _ = writeln!(out, "{:<12} {:>10} {:>12} {:>12}", name, acc, pct(a), pct(m));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| M3vError::Serde(e.to_string()))
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
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(
            accuracy(&[true, true, false, false], &[true, false, true, false]).unwrap(),
            0.5
        );
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[true], &[true, false]).is_err());
    }

    #[test]
    fn separable_scores_reach_zero_error() {
        let scores = [0.9, 0.8, 0.1, 0.2];
        let labels = [true, true, false, false];
        let roc = roc_curve(&scores, &labels).unwrap();
        assert!(roc.iter().any(|p| p.far == 0.0 && p.frr == 0.0));
        assert_eq!(eer(&scores, &labels).unwrap(), 0.0);
    }

    #[test]
    fn sweep_starts_at_full_acceptance() {
        let roc = roc_curve(&[0.3, 0.7], &[false, true]).unwrap();
        assert_eq!(roc[0].threshold, f64::NEG_INFINITY);
        assert_eq!((roc[0].far, roc[0].frr), (1.0, 0.0));
        let last = roc.last().unwrap();
        assert_eq!((last.far, last.frr), (0.0, 1.0));
    }

    #[test]
    fn hand_case_eer_is_one_half() {
        let scores = [0.9, 0.4, 0.6, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(eer(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_error() {
        assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_err());
        assert!(eer(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn report_without_flags_has_no_slices() {
        let scores = vec![ViewScores::from_array([0.5, 0.7, 0.2, 0.9]); 4];
        let labels = [true, false, true, false];
        let r = build_report(ReportInputs {
            scores: &scores,
            labels: &labels,
            misaligned: None,
            policy1: None,
            policy2: None,
        })
        .unwrap();
        assert!(r.slices.is_none() && r.align.is_none());
        assert!(r.table().contains("absent"));
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn slices_recombine_to_overall() {
        let mut rng = Rng::new(5);
        let n = 97;
        let scores: Vec<ViewScores> = (0..n)
            .map(|_| ViewScores::from_array([rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()]))
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
        let flags: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.3)).collect();
        let r = build_report(ReportInputs {
            scores: &scores,
            labels: &labels,
            misaligned: Some(&flags),
            policy1: None,
            policy2: None,
        })
        .unwrap();
        let s = r.slices.unwrap();
        let (a, m) = (s.aligned.unwrap(), s.misaligned.unwrap());
        assert_eq!(a.n_samples + m.n_samples, n);
        for (overall, x, y) in [
            (r.audio.accuracy, a.audio_accuracy, m.audio_accuracy),
            (r.text.accuracy, a.text_accuracy, m.text_accuracy),
            (r.multi.accuracy, a.multi_accuracy, m.multi_accuracy),
        ] {
            let combined = (x * a.n_samples as f64 + y * m.n_samples as f64) / n as f64;
            assert!((combined - overall).abs() < 1e-9);
        }
        let json = r.to_json();
        assert_eq!(EvalReport::from_json(&json).unwrap().to_json(), json);
    }

    /// Naive O(n²) enumeration: every observed score (and −∞) as a
    /// threshold, then the crossing between consecutive operating points.
    fn brute_force_eer(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.push(f64::NEG_INFINITY);
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        let neg = labels.len() as f64 - pos;
        let ops: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let fa = scores.iter().zip(labels).filter(|(&s, &l)| !l && s > t).count();
                let fr = scores.iter().zip(labels).filter(|(&s, &l)| l && s <= t).count();
                (fa as f64 / neg, fr as f64 / pos)
            })
            .collect();
        for w in ops.windows(2) {
            let (a, b) = (w[0].0 - w[0].1, w[1].0 - w[1].1);
            if a == 0.0 {
                return w[0].0;
            }
            if a > 0.0 && b <= 0.0 {
                let x = a / (a - b);
                return w[0].0 + x * (w[1].0 - w[0].0);
            }
        }
        ops.last().unwrap().0
    }

    #[test]
    fn eer_matches_brute_force() {
        let mut rng = Rng::new(11);
        for case in 0..40 {
            let n = 2 + rng.int_inclusive(0, 300);
            // coarse grid on some cases to force ties
            let grid = if case % 3 == 0 { 10.0 } else { 0.0 };
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let u = rng.uniform();
                    if grid > 0.0 { (u * grid).floor() / grid } else { u }
                })
                .collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = eer(&scores, &labels).unwrap();
            let slow = brute_force_eer(&scores, &labels);
            assert!((fast - slow).abs() < 1e-9, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn eer_invariant_under_monotone_transforms() {
        let mut rng = Rng::new(12);
        let scores: Vec<f64> = (0..200).map(|_| rng.uniform()).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.bernoulli(0.5)).collect();
        let base = eer(&scores, &labels).unwrap();
        let cubed: Vec<f64> = scores.iter().map(|x| x * x * x).collect();
        let affine: Vec<f64> = scores.iter().map(|x| (2.0 * x + 1.0) / 3.0).collect();
        assert!((eer(&cubed, &labels).unwrap() - base).abs() < 1e-12);
        assert!((eer(&affine, &labels).unwrap() - base).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn flipped_verdicts_complement_accuracy(v in prop::collection::vec(any::<(bool, bool)>(), 1..50)) {
            let verdicts: Vec<bool> = v.iter().map(|p| p.0).collect();
            let labels: Vec<bool> = v.iter().map(|p| p.1).collect();
            let flipped: Vec<bool> = verdicts.iter().map(|b| !b).collect();
            let a = accuracy(&verdicts, &labels).unwrap();
            let b = accuracy(&flipped, &labels).unwrap();
            let n = labels.len() as f64;
            prop_assert_eq!((a * n).round() + (b * n).round(), n);
            prop_assert!((a + b - 1.0).abs() <= f64::EPSILON);
        }

        #[test]
        fn accuracy_invariant_under_joint_permutation(
            v in prop::collection::vec(any::<(bool, bool)>(), 1..50), seed in any::<u64>()
        ) {
            let mut perm = v.clone();
            Rng::new(seed).shuffle(&mut perm);
            let split = |x: &[(bool, bool)]| -> (Vec<bool>, Vec<bool>) { x.iter().cloned().unzip() };
            let (a, b) = split(&v);
            let (c, d) = split(&perm);
            prop_assert_eq!(accuracy(&a, &b).unwrap(), accuracy(&c, &d).unwrap());
        }

        #[test]
        fn roc_is_monotone(v in prop::collection::vec((0u8..20, any::<bool>()), 2..60)) {
            let scores: Vec<f64> = v.iter().map(|p| p.0 as f64 / 20.0).collect();
            let labels: Vec<bool> = v.iter().map(|p| p.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let roc = roc_curve(&scores, &labels).unwrap();
            for w in roc.windows(2) {
                prop_assert!(w[1].far <= w[0].far);
                prop_assert!(w[1].frr >= w[0].frr);
                prop_assert!(w[1].threshold > w[0].threshold);
            }
        }
    }
}
