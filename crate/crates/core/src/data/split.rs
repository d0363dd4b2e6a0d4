use super::Dataset;
use crate::error::{M3vError, Result};
use crate::numerics::Rng;

/// Largest-remainder rounding of `fractions · n` to integers summing to `n`.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Stratified train/valid/test partition. Within each label the samples are
/// shuffled with a per-label stream of `seed`; split sizes match the global
/// fractions exactly (largest remainder), per-label quotas to within one.
pub fn split(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|&f| f.is_nan() || f <= 0.0) {
        return Err(M3vError::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(M3vError::Config(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }

    let rng = Rng::new(seed);
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, s) in ds.samples().iter().enumerate() {
        by_label[s.label.index()].push(i);
    }
    for (k, idx) in by_label.iter_mut().enumerate() {
        rng.fork(k as u64).shuffle(idx);
    }

    let targets = apportion(ds.len(), &fractions);
    let mut quotas: Vec<[usize; 3]> = Vec::new();
    let mut remainders: Vec<[f64; 3]> = Vec::new();
    for idx in &by_label {
        let n = idx.len() as f64;
        let mut q = [0usize; 3];
        let mut r = [0f64; 3];
        for s in 0..3 {
            let e = fractions[s] * n;
            q[s] = e.floor() as usize;
            r[s] = e - e.floor();
        }
        quotas.push(q);
        remainders.push(r);
    }
    // hand leftover units of each label to the splits still short of target
    let mut need: [isize; 3] = [0; 3];
    for s in 0..3 {
        need[s] = targets[s] as isize - quotas.iter().map(|q| q[s] as isize).sum::<isize>();
    }
    for (k, idx) in by_label.iter().enumerate() {
        let mut left = idx.len() - quotas[k].iter().sum::<usize>();
        while left > 0 {
            let pick = (0..3)
                .filter(|&s| need[s] > 0)
                .max_by(|&a, &b| {
                    remainders[k][a]
                        .total_cmp(&remainders[k][b])
                        .then(b.cmp(&a))
                })
                .expect("leftovers always match outstanding need");
            quotas[k][pick] += 1;
            remainders[k][pick] = f64::NEG_INFINITY;
            need[pick] -= 1;
            left -= 1;
        }
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (k, idx) in by_label.iter().enumerate() {
        let mut start = 0;
        for s in 0..3 {
            parts[s].extend_from_slice(&idx[start..start + quotas[k][s]]);
            start += quotas[k][s];
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((ds.subset(&parts[0])?, ds.subset(&parts[1])?, ds.subset(&parts[2])?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GenConfig};
    use crate::data::Label;
    use std::collections::HashSet;

    fn label_ratio(ds: &Dataset) -> f64 {
        ds.samples()
            .iter()
            .filter(|s| s.label == Label::DeviceDirected)
            .count() as f64
            / ds.len() as f64
    }

    fn ds(n: usize, positive_rate: f64) -> Dataset {
        generate_synthetic(&GenConfig {
            n_samples: n,
            positive_rate,
            frames: (1, 2),
            tokens: (1, 2),
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn sizes_match_fractions() {
        let d = ds(1000, 0.5);
        let (a, b, c) = split(&d, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (800, 100, 100));
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let d = ds(333, 0.3);
        let (a, b, c) = split(&d, [0.6, 0.25, 0.15], 9).unwrap();
        let mut ids = HashSet::new();
        for part in [&a, &b, &c] {
            for s in part.samples() {
                assert!(ids.insert(s.id.clone()));
            }
        }
        assert_eq!(ids.len(), d.len());
    }

    #[test]
    fn deterministic_per_seed() {
        let d = ds(200, 0.5);
        let x = split(&d, [0.5, 0.25, 0.25], 1).unwrap();
        let y = split(&d, [0.5, 0.25, 0.25], 1).unwrap();
        assert_eq!(x, y);
        let z = split(&d, [0.5, 0.25, 0.25], 2).unwrap();
        assert_ne!(x.0, z.0);
    }

    #[test]
    fn stratified_label_ratio() {
        let d = ds(10_000, 0.3);
        let global = label_ratio(&d);
        let (a, b, c) = split(&d, [0.8, 0.1, 0.1], 5).unwrap();
        for part in [&a, &b, &c] {
            assert!((label_ratio(part) - global).abs() < 0.02);
        }
    }

    #[test]
    fn bad_fractions_rejected() {
        let d = ds(10, 0.5);
        assert!(split(&d, [0.5, 0.5, 0.0], 0).is_err());
        assert!(split(&d, [0.5, 0.3, 0.3], 0).is_err());
    }
}
