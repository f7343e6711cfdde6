use crate::error::{Error, Result};

/// Magnitude limit for every ratio reported in dB.
pub const METRIC_CAP_DB: f64 = 60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(op: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("{op}: lengths {} and {} must match and be non-zero", a.len(), b.len())));
    }
    Ok(())
}

/// `10 log10(num / den)` clamped to `[-METRIC_CAP_DB, METRIC_CAP_DB]`.
pub fn capped_ratio_db(num: f64, den: f64) -> f64 {
    let lim = 10f64.powf(METRIC_CAP_DB / 10.0);
    if num == 0.0 {
        -METRIC_CAP_DB
    } else if den <= num / lim {
        METRIC_CAP_DB
    } else if num <= den / lim {
        -METRIC_CAP_DB
    } else {
        10.0 * (num / den).log10()
    }
}

/// Scale-invariant signal-to-distortion ratio of `est` against `target`.
pub fn si_sdr(est: &[f64], target: &[f64]) -> Result<f64> {
    check_len("si_sdr", est, target)?;
    let tt = dot(target, target);
    if tt == 0.0 {
        return Err(Error::UndefinedMetric("target is all zeros".into()));
    }
    let alpha = dot(est, target) / tt;
    let err: f64 = est.iter().zip(target).map(|(e, t)| (alpha * t - e).powi(2)).sum();
    let r = capped_ratio_db(alpha * alpha * tt, err);
    if r.is_nan() {
        return Err(Error::NonFinite { op: "si_sdr".into() });
    }
    Ok(r)
}

/// Split of an estimate into target, interference, noise and artifact parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_noise: Vec<f64>,
    pub e_artif: Vec<f64>,
}

/// Nested orthogonal projections of `est` onto the spans of
/// `{target}`, `{target, interferer}` and `{target, interferer, noise}`.
/// Without a noise reference, `e_noise` is zero.
pub fn decompose(est: &[f64], target: &[f64], interferer: &[f64], noise: Option<&[f64]>) -> Result<Decomposition> {
    check_len("decompose", est, target)?;
    check_len("decompose", est, interferer)?;
    if let Some(z) = noise {
        check_len("decompose", est, z)?;
    }
    let refs: Vec<&[f64]> = [Some(target), Some(interferer), noise].into_iter().flatten().collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(3);
    for r in refs {
        let n0 = dot(r, r).sqrt();
        let mut q = r.to_vec();
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&q, b);
                q.iter_mut().zip(b).for_each(|(v, bv)| *v -= c * bv);
            }
        }
        let n = dot(&q, &q).sqrt();
        if !(n > 1e-10 * n0) || n0 == 0.0 {
            return Err(Error::DegenerateReferences);
        }
        q.iter_mut().for_each(|v| *v /= n);
        basis.push(q);
    }
    let proj = |q: &[f64]| {
        let c = dot(est, q);
        q.iter().map(|v| c * v).collect::<Vec<f64>>()
    };
    let s_target = proj(&basis[0]);
    let e_interf = proj(&basis[1]);
    let e_noise = basis.get(2).map_or_else(|| vec![0.0; est.len()], |q| proj(q));
    let e_artif = (0..est.len())
        .map(|i| est[i] - s_target[i] - e_interf[i] - e_noise[i])
        .collect();
    Ok(Decomposition { s_target, e_interf, e_noise, e_artif })
}

/// Signal-to-distortion ratio of a decomposition.
pub fn sdr(dec: &Decomposition) -> Result<f64> {
    let st = dot(&dec.s_target, &dec.s_target);
    if st == 0.0 {
        return Err(Error::UndefinedMetric("projection onto the target is zero".into()));
    }
    let dist: f64 = (0..dec.s_target.len())
        .map(|i| (dec.e_interf[i] + dec.e_noise[i] + dec.e_artif[i]).powi(2))
        .sum();
    let r = capped_ratio_db(st, dist);
    if r.is_nan() {
        return Err(Error::NonFinite { op: "sdr".into() });
    }
    Ok(r)
}

/// `metric(est) - metric(mixture)`: gain over using the mixture as the estimate.
pub fn improvement<F>(metric: F, est: &[f64], mixture: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    Ok(metric(est)? - metric(mixture)?)
}

/// SI-SDR improvement over the mixture.
pub fn si_sdri(est: &[f64], mixture: &[f64], target: &[f64]) -> Result<f64> {
    improvement(|x| si_sdr(x, target), est, mixture)
}

/// SDR improvement over the mixture.
pub fn sdri(est: &[f64], mixture: &[f64], target: &[f64], interferer: &[f64], noise: Option<&[f64]>) -> Result<f64> {
    improvement(|x| sdr(&decompose(x, target, interferer, noise)?), est, mixture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    /// Least-squares projection of `y` onto the columns `a` through the
    /// normal equations, solved by Gaussian elimination.
    fn ls_projection(a: &[&[f64]], y: &[f64]) -> Vec<f64> {
        let k = a.len();
        let mut m = vec![vec![0.0; k + 1]; k];
        for i in 0..k {
            for j in 0..k {
                m[i][j] = dot(a[i], a[j]);
            }
            m[i][k] = dot(a[i], y);
        }
        for c in 0..k {
            let p = (c..k).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, p);
            for r in 0..k {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for j in c..=k {
                        m[r][j] -= f * m[c][j];
                    }
                }
            }
        }
        let coef: Vec<f64> = (0..k).map(|i| m[i][k] / m[i][i]).collect();
        (0..y.len()).map(|t| (0..k).map(|i| coef[i] * a[i][t]).sum()).collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn si_sdr_hand_case() {
        assert!(si_sdr(&[1.0, 1.0], &[1.0, 0.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn si_sdr_perfect_and_scaled_hit_cap() {
        let t = [0.3, -1.2, 0.5, 2.0];
        assert_eq!(si_sdr(&t, &t).unwrap(), METRIC_CAP_DB);
        let s: Vec<f64> = t.iter().map(|v| 3.0 * v).collect();
        assert_eq!(si_sdr(&s, &t).unwrap(), METRIC_CAP_DB);
    }

    #[test]
    fn si_sdr_orthogonal_hits_floor() {
        assert_eq!(si_sdr(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), -METRIC_CAP_DB);
    }

    #[test]
    fn si_sdr_zero_target_undefined() {
        assert!(matches!(si_sdr(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::UndefinedMetric(_))));
        assert!(si_sdr(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn si_sdr_decreases_with_noise_power() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let t = randn(1000, &mut r);
        let n = randn(1000, &mut r);
        let mut last = f64::INFINITY;
        for k in 1..8 {
            let g = 10f64.powi(k - 5);
            let est: Vec<f64> = t.iter().zip(&n).map(|(a, b)| a + g * b).collect();
            let v = si_sdr(&est, &t).unwrap();
            assert!(v < last, "{v} !< {last}");
            last = v;
        }
    }

    #[test]
    fn decomposition_matches_normal_equations() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (t, i, z, e) = (randn(16, &mut r), randn(16, &mut r), randn(16, &mut r), randn(16, &mut r));
            let d = decompose(&e, &t, &i, Some(&z)).unwrap();
            let p1 = ls_projection(&[&t], &e);
            let p2 = ls_projection(&[&t, &i], &e);
            let p3 = ls_projection(&[&t, &i, &z], &e);
            assert_close(&d.s_target, &p1, 1e-9);
            let ei: Vec<f64> = p2.iter().zip(&p1).map(|(a, b)| a - b).collect();
            let en: Vec<f64> = p3.iter().zip(&p2).map(|(a, b)| a - b).collect();
            let ea: Vec<f64> = e.iter().zip(&p3).map(|(a, b)| a - b).collect();
            assert_close(&d.e_interf, &ei, 1e-9);
            assert_close(&d.e_noise, &en, 1e-9);
            assert_close(&d.e_artif, &ea, 1e-9);
        }
    }

    #[test]
    fn sdr_matches_oracle_on_hand_instance() {
        let t = [1.0, 0.5, -0.25, 0.0, 2.0, -1.0, 0.75, 0.1];
        let i = [0.0, 1.0, 1.0, -0.5, 0.2, 0.3, -1.0, 0.4];
        let z = [0.3, -0.2, 0.0, 1.0, -0.4, 0.6, 0.1, -0.9];
        let e = [1.2, 0.9, 0.1, 0.4, 2.1, -0.5, 0.2, -0.3];
        let p1 = ls_projection(&[&t], &e);
        let oracle = 10.0 * (dot(&p1, &p1) / e.iter().zip(&p1).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).log10();
        let got = sdr(&decompose(&e, &t, &i, Some(&z)).unwrap()).unwrap();
        assert!((got - oracle).abs() < 1e-9);
    }

    #[test]
    fn sdr_perfect_and_equal_energy_cases() {
        let t = [1.0, -1.0, 1.0, -1.0];
        let i = [1.0, 1.0, 0.0, 0.0];
        let d = decompose(&t, &t, &i, None).unwrap();
        assert!(d.e_interf.iter().chain(&d.e_noise).chain(&d.e_artif).all(|v| v.abs() < 1e-15));
        assert_eq!(sdr(&d).unwrap(), METRIC_CAP_DB);
        // Unit-power target plus a unit-power error orthogonal to both references.
        let err = [1.0, 1.0, -1.0, -1.0];
        let est: Vec<f64> = t.iter().zip(&err).map(|(a, b)| a + b).collect();
        let i2 = [1.0, -1.0, -1.0, 1.0];
        assert!(sdr(&decompose(&est, &t, &i2, None).unwrap()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn interferer_estimate_lands_in_interference() {
        let t = [1.0, 0.0, 0.0, 0.0];
        let i = [0.0, 2.0, 1.0, 0.0];
        let d = decompose(&i, &t, &i, None).unwrap();
        assert_close(&d.s_target, &[0.0; 4], 1e-15);
        assert_close(&d.e_interf, &i, 1e-15);
        assert!(matches!(sdr(&d), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn dependent_references_rejected() {
        let t = [1.0, 2.0, 3.0];
        let i = [2.0, 4.0, 6.0];
        assert!(matches!(decompose(&t, &t, &i, None), Err(Error::DegenerateReferences)));
        assert!(matches!(decompose(&t, &t, &[1.0, 0.0, 0.0], Some(&[0.0; 3])), Err(Error::DegenerateReferences)));
    }

    #[test]
    fn improvement_cases() {
        let t = [1.0, 0.0, 0.5, -0.5];
        let m = [1.0, 1.0, 0.0, 0.2];
        assert_eq!(si_sdri(&m, &m, &t).unwrap(), 0.0);
        let base = si_sdr(&m, &t).unwrap();
        assert!((si_sdri(&t, &m, &t).unwrap() - (METRIC_CAP_DB - base)).abs() < 1e-12);
        let i = [0.0, 1.0, -0.5, 0.7];
        assert_eq!(sdri(&m, &m, &t, &i, None).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn reconstruction_and_orthogonality(seed in any::<u64>(), n in 8usize..64) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (t, i, z, e) = (randn(n, &mut r), randn(n, &mut r), randn(n, &mut r), randn(n, &mut r));
            let d = decompose(&e, &t, &i, Some(&z)).unwrap();
            let peak = e.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for k in 0..n {
                let s = d.s_target[k] + d.e_interf[k] + d.e_noise[k] + d.e_artif[k];
                prop_assert!((s - e[k]).abs() < 1e-9 * peak);
            }
            let ee = dot(&e, &e);
            prop_assert!(dot(&d.s_target, &d.e_interf).abs() < 1e-6 * ee);
            prop_assert!(dot(&d.e_interf, &d.e_noise).abs() < 1e-6 * ee);
            prop_assert!(dot(&d.e_noise, &d.e_artif).abs() < 1e-6 * ee);
        }

        #[test]
        fn si_sdr_scale_invariance(seed in any::<u64>(), n in 4usize..64) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (t, e) = (randn(n, &mut r), randn(n, &mut r));
            let base = si_sdr(&e, &t).unwrap();
            for c in [0.1, 1.0, 10.0] {
                let s: Vec<f64> = e.iter().map(|v| c * v).collect();
                prop_assert!((si_sdr(&s, &t).unwrap() - base).abs() < 1e-9);
            }
            let m = randn(n, &mut r);
            let s: Vec<f64> = e.iter().map(|v| 7.0 * v).collect();
            prop_assert!((si_sdri(&s, &m, &t).unwrap() - si_sdri(&e, &m, &t).unwrap()).abs() < 1e-9);
        }
    }
}
