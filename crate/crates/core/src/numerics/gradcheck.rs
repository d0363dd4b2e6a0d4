use super::rng::Rng;

/// Compares an analytic gradient against central finite differences on
/// `probes` randomly chosen coordinates (all coordinates when `probes ≥ len`).
///
/// Returns the maximum relative error, using `max(|analytic|, |numeric|, 1e-8)`
/// as the denominator.
pub fn grad_check<F>(
    theta: &[f64],
    analytic: &[f64],
    mut loss: F,
    probes: usize,
    h: f64,
    rng: &mut Rng,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len(), "gradient length mismatch");
    let mut coords: Vec<usize> = (0..theta.len()).collect();
    if probes < coords.len() {
        rng.shuffle(&mut coords);
        coords.truncate(probes);
        coords.sort_unstable();
    }

    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = loss(&probe);
        probe[i] = orig - h;
        let minus = loss(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}
