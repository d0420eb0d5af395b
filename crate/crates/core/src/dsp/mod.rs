//! Signal kernels shared by the trigger and the feature extractor.
//!
//! Window statistics follow the absolute-amplitude convention: `mean` and
//! `var` are taken over `|x|`, variance is the population variance.

mod filter;

use nalgebra::Matrix3;

use crate::error::{Error, Result};

pub use filter::{bandpass, BandpassSpec, Section, SosDesign, SosFilter};

/// Mean and population variance of `|x|`.
pub fn window_stats(x: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::EmptyWindow);
    }
    // Welford
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (i, v) in x.iter().enumerate() {
        let a = v.abs();
        let d = a - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (a - mean);
    }
    Ok((mean, (m2 / x.len() as f64).max(0.0)))
}

/// `(x - mean(x)) / sqrt(var(x))` on raw amplitudes.
pub fn zscore(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

/// `sum(x^2) / sum(y^2)`.
pub fn rms_amplitude_ratio(x: &[f64], y: &[f64]) -> Result<f64> {
    let den: f64 = y.iter().map(|v| v * v).sum();
    if !(den > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    Ok(x.iter().map(|v| v * v).sum::<f64>() / den)
}

/// `mean(|x|) - mean(|y|)`.
pub fn mean_difference(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let m = |s: &[f64]| s.iter().map(|v| v.abs()).sum::<f64>() / s.len() as f64;
    Ok(m(x) - m(y))
}

/// First index of the maximum of `|x[range]|`, as (value, index).
fn abs_argmax(x: &[f64], from: usize, to: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, from);
    for (i, v) in x[from..to].iter().enumerate() {
        if v.abs() > best.0 {
            best = (v.abs(), from + i);
        }
    }
    best
}

/// Onset steepness of the envelope `|x|` before and after the arrival.
///
/// `x` must cover exactly [-5 s, +5 s) with the arrival at its midpoint. With
/// `a`, `b`, `c` the maxima over [-5, -1.5), [1.5, 5) and [-0.5, 0.5) seconds
/// (earliest index on ties) and `ta`, `tb`, `tc` their times, returns
/// `((c - a) / (tc - ta), (c - b) / (100 (tc - tb)))`. A zero denominator
/// yields a zero slope.
pub fn envelope_slope(x: &[f64], rate_hz: f64) -> Result<(f64, f64)> {
    let at = |s: f64| (s * rate_hz).round() as usize;
    let full = at(10.0);
    if x.len() != full || full == 0 {
        return Err(Error::WindowSpan(format!("expected {full} samples for [-5, 5) s, got {}", x.len())));
    }
    let time = |i: usize| i as f64 / rate_hz - 5.0;
    let (a, ia) = abs_argmax(x, 0, at(3.5));
    let (b, ib) = abs_argmax(x, at(6.5), full);
    let (c, ic) = abs_argmax(x, at(4.5), at(5.5));
    let (ta, tb, tc) = (time(ia), time(ib), time(ic));
    let pre = if tc == ta { 0.0 } else { (c - a) / (tc - ta) };
    let post = if tc == tb { 0.0 } else { (c - b) / (100.0 * (tc - tb)) };
    Ok((pre, post))
}

/// Rectilinearity of three-component motion.
///
/// With `a, b, c` the eigenvalues of the 3×3 covariance of the channels,
/// returns `((a-b)² + (a-c)² + (b-c)²) / (2 (a+b+c)²)`, in [0, 1].
pub fn polarization_slope(e: &[f64], n: &[f64], z: &[f64]) -> Result<f64> {
    if e.is_empty() || e.len() != n.len() || e.len() != z.len() {
        return Err(Error::WindowSpan("polarization windows must be equal, non-empty lengths".into()));
    }
    let len = e.len() as f64;
    let chans = [e, n, z];
    let means: Vec<f64> = chans.iter().map(|c| c.iter().sum::<f64>() / len).collect();
    let mut cov = Matrix3::<f64>::zeros();
    for i in 0..3 {
        for j in i..3 {
            let s: f64 = chans[i]
                .iter()
                .zip(chans[j])
                .map(|(u, v)| (u - means[i]) * (v - means[j]))
                .sum::<f64>()
                / len;
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let ev = cov.symmetric_eigenvalues();
    let (a, b, c) = (ev[0], ev[1], ev[2]);
    let total = a + b + c;
    if !(total > 0.0) {
        return Err(Error::DegeneratePolarization);
    }
    let spread = (a - b).powi(2) + (a - c).powi(2) + (b - c).powi(2);
    Ok((spread / (2.0 * total * total)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    // Independent naive oracles.
    fn naive_stats(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let mean = x.iter().map(|v| v.abs()).sum::<f64>() / n;
        let var = x.iter().map(|v| (v.abs() - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    /// Eigenvalue-free form: spread/(2 tr²) = (3 tr(M²) - tr(M)²) / (2 tr(M)²).
    fn trace_invariant_polarization(e: &[f64], n: &[f64], z: &[f64]) -> f64 {
        let ch = [e, n, z];
        let len = e.len() as f64;
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            let mi = ch[i].iter().sum::<f64>() / len;
            for j in 0..3 {
                let mj = ch[j].iter().sum::<f64>() / len;
                m[i][j] = (0..e.len()).map(|k| (ch[i][k] - mi) * (ch[j][k] - mj)).sum::<f64>() / len;
            }
        }
        let tr = m[0][0] + m[1][1] + m[2][2];
        let tr2: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[j][i]).sum();
        (3.0 * tr2 - tr * tr) / (2.0 * tr * tr)
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn stats_examples() {
        assert_eq!(window_stats(&[1.0, -1.0, 1.0, -1.0]).unwrap(), (1.0, 0.0));
        assert_eq!(window_stats(&[0.0, 2.0]).unwrap(), (1.0, 1.0));
        assert!(matches!(window_stats(&[]), Err(Error::EmptyWindow)));
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore(&[0.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(matches!(zscore(&[3.0; 7]), Err(Error::ZeroVariance)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..500).map(|_| rng.random_range(-10.0..30.0)).collect();
        let z = zscore(&x).unwrap();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() <= 1e-9 && (var - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn ratio_and_difference_examples() {
        assert_eq!(rms_amplitude_ratio(&[1.0, 1.0], &[2.0]).unwrap(), 0.5);
        assert_eq!(rms_amplitude_ratio(&[3.0, -4.0], &[3.0, -4.0]).unwrap(), 1.0);
        assert!(matches!(rms_amplitude_ratio(&[1.0], &[0.0, 0.0]), Err(Error::ZeroEnergy)));
        assert_eq!(mean_difference(&[2.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mean_difference(&[2.0, -5.0], &[2.0, -5.0]).unwrap(), 0.0);
        assert!(mean_difference(&[], &[1.0]).is_err());
    }

    #[test]
    fn helpers_match_naive_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let scale = 10f64.powf(rng.random_range(-3.0..4.0));
            let len = rng.random_range(1..300);
            let x: Vec<f64> = (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..rng.random_range(1..300)).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let (m, v) = window_stats(&x).unwrap();
            let (mo, vo) = naive_stats(&x);
            assert!(rel_close(m, mo, 1e-12) && (v - vo).abs() <= 1e-12 * vo.max(scale * scale));
            let mut num = 0.0;
            let mut den = 0.0;
            for v in &x {
                num += v * v;
            }
            for v in &y {
                den += v * v;
            }
            assert!(rel_close(rms_amplitude_ratio(&x, &y).unwrap(), num / den, 1e-12));
            let (my, _) = naive_stats(&y);
            assert!((mean_difference(&x, &y).unwrap() - (mo - my)).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn envelope_slope_impulse() {
        let mut x = vec![0.0; 1000];
        x[500] = 1.0;
        let (pre, post) = envelope_slope(&x, 100.0).unwrap();
        // a = b = 0 at the first index of each range: ta = -5, tb = 1.5; c = 1 at tc = 0
        assert!((pre - 1.0 / 5.0).abs() < 1e-12);
        assert!((post - 1.0 / (100.0 * -1.5)).abs() < 1e-12);
    }

    #[test]
    fn envelope_slope_symmetric_signal() {
        let mut x = vec![0.0; 1000];
        x[500] = 4.0;
        x[500 - 250] = 1.5;
        x[500 + 250] = 1.5;
        let (pre, post) = envelope_slope(&x, 100.0).unwrap();
        assert!((pre - (4.0 - 1.5) / 2.5).abs() < 1e-12);
        assert!((post + pre / 100.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_slope_constant_and_bad_span() {
        assert_eq!(envelope_slope(&[2.0; 1000], 100.0).unwrap(), (0.0, 0.0));
        assert!(matches!(envelope_slope(&[0.0; 999], 100.0), Err(Error::WindowSpan(_))));
    }

    #[test]
    fn polarization_equal_eigenvalues_is_zero() {
        // Orthogonal unit-variance sequences: covariance is exactly the identity.
        let e = [1.0, -1.0, 1.0, -1.0];
        let n = [1.0, 1.0, -1.0, -1.0];
        let z = [1.0, -1.0, -1.0, 1.0];
        assert!(polarization_slope(&e, &n, &z).unwrap() < 1e-15);
    }

    #[test]
    fn polarization_noise_and_linear_motion() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = || -> f64 { rng.sample(StandardNormal) };
            let e: Vec<f64> = (0..2000).map(|_| g()).collect();
            let n: Vec<f64> = (0..2000).map(|_| g()).collect();
            let z: Vec<f64> = (0..2000).map(|_| g()).collect();
            assert!(polarization_slope(&e, &n, &z).unwrap() <= 0.1);
            let zs: Vec<f64> = (0..2000).map(|i| 10.0 * (i as f64 * 0.3).sin()).collect();
            let tiny: Vec<f64> = e.iter().map(|v| v * 1e-3).collect();
            let tiny2: Vec<f64> = n.iter().map(|v| v * 1e-3).collect();
            assert!(polarization_slope(&tiny, &tiny2, &zs).unwrap() >= 0.9);
        }
        assert!(matches!(polarization_slope(&[0.0; 5], &[0.0; 5], &[0.0; 5]), Err(Error::DegeneratePolarization)));
    }

    #[test]
    fn polarization_matches_trace_invariant_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let len = rng.random_range(3..200);
            let mix: [f64; 9] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let raw: Vec<[f64; 3]> = (0..len)
                .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)])
                .collect();
            let ch = |r: usize| -> Vec<f64> {
                raw.iter().map(|s| mix[3 * r] * s[0] + mix[3 * r + 1] * s[1] + mix[3 * r + 2] * s[2]).collect()
            };
            let (e, n, z) = (ch(0), ch(1), ch(2));
            let got = polarization_slope(&e, &n, &z).unwrap();
            let want = trace_invariant_polarization(&e, &n, &z).clamp(0.0, 1.0);
            assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn polarization_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let e: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0) + 0.5 * e[0]).collect();
            let z: Vec<f64> = (0..300).map(|i| 3.0 * e[i] + rng.random_range(-0.2..0.2)).collect();
            let q: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let rot = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
            let m = rot.to_rotation_matrix();
            let (mut re, mut rn, mut rz) = (vec![], vec![], vec![]);
            for i in 0..300 {
                let v = m * nalgebra::Vector3::new(e[i], n[i], z[i]);
                re.push(v[0]);
                rn.push(v[1]);
                rz.push(v[2]);
            }
            let a = polarization_slope(&e, &n, &z).unwrap();
            let b = polarization_slope(&re, &rn, &rz).unwrap();
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
