use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spi_core::forward::*;
use spi_core::{Image, SpiError};

fn identity(n: usize) -> MeasurementMatrix {
    let mut rows = vec![0.0f32; n * n];
    (0..n).for_each(|i| rows[i * n + i] = 1.0);
    MeasurementMatrix::from_rows(PatternKind::Bernoulli, 1, n, 0, rows).unwrap()
}

#[test]
fn bernoulli_mean_is_one_half() {
    let m = make_patterns(PatternKind::Bernoulli, 1000, 32, 32, 7).unwrap();
    assert!(m.is_binary());
    let mean = m.data().iter().map(|&v| v as f64).sum::<f64>() / m.data().len() as f64;
    assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
}

#[test]
fn patterns_are_deterministic_per_seed() {
    for kind in [PatternKind::Bernoulli, PatternKind::GaussianSpeckle, PatternKind::HadamardSubset] {
        let a = make_patterns(kind, 20, 8, 8, 3).unwrap();
        let b = make_patterns(kind, 20, 8, 8, 3).unwrap();
        let c = make_patterns(kind, 20, 8, 8, 4).unwrap();
        assert_eq!(a, b, "{kind:?}");
        assert_ne!(a.data(), c.data(), "{kind:?}");
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.rows().all(|r| r.len() == 64));
    }
}

#[test]
fn speckle_is_smooth_and_in_range() {
    let m = make_patterns(PatternKind::GaussianSpeckle, 50, 16, 16, 1).unwrap();
    assert!(!m.is_binary());
    // neighbouring pixels of low-pass noise are positively correlated
    let (mut num, mut den) = (0.0, 0.0);
    for row in m.rows() {
        for r in 0..16 {
            for c in 0..15 {
                let (a, b) = (row[r * 16 + c] as f64 - 0.5, row[r * 16 + c + 1] as f64 - 0.5);
                num += a * b;
                den += a * a;
            }
        }
    }
    assert!(num / den > 0.3, "lag-1 correlation {}", num / den);
}

#[test]
fn hadamard_rows_are_distinct_and_binary() {
    let m = make_patterns(PatternKind::HadamardSubset, 64, 8, 8, 9).unwrap();
    assert!(m.is_binary());
    let mut rows: Vec<Vec<u8>> = m.rows().map(|r| r.iter().map(|&v| v as u8).collect()).collect();
    rows.sort();
    rows.dedup();
    assert_eq!(rows.len(), 64);
}

#[test]
fn hadamard_rejects_non_power_of_two() {
    let e = make_patterns(PatternKind::HadamardSubset, 4, 5, 5, 0).unwrap_err();
    assert!(matches!(e, SpiError::HadamardSize { n_pix: 25, padded: 32 }));
    assert!(e.to_string().contains("pad"), "{e}");
}

#[test]
fn quoted_sampling_ratios() {
    let n = 320 * 320;
    assert_eq!(format_ratio(3000, n), "2.93%");
    assert_eq!(format_ratio(6000, n), "5.86%");
    assert_eq!(format_ratio(10000, n), "9.77%");
    assert_eq!(format_ratio(1000, n), "0.98%");
    assert_eq!(n_meas_for_ratio(0.0293, n).unwrap(), 3000);
    assert_eq!(n_meas_for_ratio(0.0586, n).unwrap(), 6000);
    assert_eq!(n_meas_for_ratio(0.0977, n).unwrap(), 10000);
    assert_eq!(n_meas_for_ratio(0.0097, n).unwrap(), 1000);
    assert!(n_meas_for_ratio(0.0, n).is_err());
    assert!(n_meas_for_ratio(1.5, n).is_err());
}

#[test]
fn ratio_label_matches_count() {
    let m = make_patterns(PatternKind::Bernoulli, 410, 64, 64, 0).unwrap();
    assert_eq!(m.ratio_label(), "10.01%");
    assert!((m.sampling_ratio() - 410.0 / 4096.0).abs() < 1e-15);
}

#[test]
fn identity_measurement_returns_the_scene() {
    let m = identity(2);
    let x = Image::new(1, 2, vec![0.2, 0.8]).unwrap();
    let y = measure(&m, &x, &NoiseSpec::clean()).unwrap();
    assert_eq!(y.values, vec![0.2, 0.8]);
    assert_eq!(y.noise, NoiseSpec::clean());
}

#[test]
fn all_ones_row_sums_the_scene() {
    let m = MeasurementMatrix::from_rows(PatternKind::Bernoulli, 3, 3, 0, vec![1.0; 9]).unwrap();
    let x = Image::from_fn(3, 3, |_, _| 0.25);
    assert_eq!(measure(&m, &x, &NoiseSpec::clean()).unwrap().values, vec![0.25 * 9.0]);
}

#[test]
fn size_mismatch_is_an_error() {
    let m = make_patterns(PatternKind::Bernoulli, 4, 4, 4, 0).unwrap();
    let x = Image::zeros(3, 4);
    assert!(matches!(measure(&m, &x, &NoiseSpec::clean()), Err(SpiError::SizeMismatch { .. })));
}

#[test]
fn gaussian_noise_is_unbiased() {
    let m = make_patterns(PatternKind::Bernoulli, 4, 4, 4, 0).unwrap();
    let x = Image::from_fn(4, 4, |r, c| ((r + c) % 3) as f64 / 2.0);
    let clean = measure(&m, &x, &NoiseSpec::clean()).unwrap().values;
    let trials = 10_000;
    let mut mean = vec![0.0; clean.len()];
    let mut first = None;
    for t in 0..trials {
        let y = measure(&m, &x, &NoiseSpec { gaussian_sigma: 0.01, poisson_scale: 0.0, seed: t }).unwrap();
        if let Some(f) = &first {
            if t == 1 {
                assert_ne!(f, &y.values, "repeated calls with fresh seeds must differ");
            }
        } else {
            first = Some(y.values.clone());
        }
        mean.iter_mut().zip(&y.values).for_each(|(m, v)| *m += v / trials as f64);
    }
    for (m, c) in mean.iter().zip(&clean) {
        if *c > 0.0 {
            assert!((m - c).abs() / c < 1e-3, "mean {m} vs clean {c}");
        }
    }
}

#[test]
fn poisson_noise_tracks_the_signal() {
    let m = make_patterns(PatternKind::Bernoulli, 200, 8, 8, 2).unwrap();
    let x = Image::from_fn(8, 8, |r, _| r as f64 / 7.0);
    let clean = measure(&m, &x, &NoiseSpec::clean()).unwrap().values;
    let noisy = measure(&m, &x, &NoiseSpec { gaussian_sigma: 0.0, poisson_scale: 1e4, seed: 5 }).unwrap().values;
    let rel: f64 = noisy.iter().zip(&clean).map(|(n, c)| ((n - c) / c).abs()).sum::<f64>() / clean.len() as f64;
    assert!(rel > 0.0 && rel < 0.01, "mean relative deviation {rel}");
    let noisy2 = measure(&m, &x, &NoiseSpec::underwater(5)).unwrap();
    assert!(noisy2.applied_sigma > 0.0);
}

#[test]
fn negative_noise_is_rejected() {
    assert!(NoiseSpec { gaussian_sigma: -0.1, poisson_scale: 0.0, seed: 0 }.validate().is_err());
    assert!(NoiseSpec { gaussian_sigma: 0.0, poisson_scale: -1.0, seed: 0 }.validate().is_err());
}

#[test]
fn spim_round_trip_binary_and_float() {
    for kind in [PatternKind::Bernoulli, PatternKind::GaussianSpeckle] {
        let m = make_patterns(kind, 13, 5, 7, 11).unwrap();
        let x = Image::from_fn(5, 7, |r, c| ((r * 7 + c) % 5) as f64 / 4.0);
        let y = measure(&m, &x, &NoiseSpec::underwater(3)).unwrap();
        let bytes = write_spim(&m, &y).unwrap();
        let (m2, y2) = read_spim(&bytes).unwrap();
        assert_eq!(m, m2);
        assert_eq!(y.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y2.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(y, y2);
    }
}

#[test]
fn spim_files_are_byte_identical_for_fixed_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |name: &str| {
        let m = make_patterns(PatternKind::Bernoulli, 40, 8, 8, 21).unwrap();
        let y = measure(&m, &Image::from_fn(8, 8, |r, c| ((r ^ c) & 1) as f64), &NoiseSpec::underwater(4)).unwrap();
        let p = dir.path().join(name);
        save_measurements(&p, &m, &y).unwrap();
        std::fs::read(p).unwrap()
    };
    assert_eq!(mk("a.spim"), mk("b.spim"));
}

#[test]
fn spim_errors_carry_offsets() {
    let m = make_patterns(PatternKind::Bernoulli, 3, 4, 4, 0).unwrap();
    let y = measure(&m, &Image::zeros(4, 4), &NoiseSpec::clean()).unwrap();
    let good = write_spim(&m, &y).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    let e = read_spim(&bad).unwrap_err();
    assert!(e.to_string().contains("not an SPIM file"), "{e}");

    let mut bad = good.clone();
    bad[4] = 255;
    let e = read_spim(&bad).unwrap_err();
    assert!(matches!(e, SpiError::UnsupportedVersion { version: 255, offset: 4, .. }));
    assert!(e.to_string().contains("unsupported version"), "{e}");

    let e = read_spim(&good[..good.len() - 3]).unwrap_err();
    assert!(matches!(e, SpiError::Truncated { .. }), "{e}");

    let mut long = good.clone();
    long.push(0);
    assert!(matches!(read_spim(&long), Err(SpiError::Corrupt { .. })));
}

#[test]
fn load_reports_the_missing_path() {
    let e = load_measurements("/nonexistent/x.spim").unwrap_err();
    assert!(e.to_string().contains("/nonexistent/x.spim"), "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clean_measurement_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let m = make_patterns(PatternKind::GaussianSpeckle, 9, 4, 5, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        let x2: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
        let (p1, p2, pm) = (project(&m, &x1).unwrap(), project(&m, &x2).unwrap(), project(&m, &mix).unwrap());
        for i in 0..9 {
            prop_assert!((pm[i] - (a * p1[i] + b * p2[i])).abs() <= 1e-12 * (1.0 + pm[i].abs()));
        }
    }

    #[test]
    fn spim_round_trip_is_lossless(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, n in 1usize..12, binary in any::<bool>()) {
        let kind = if binary { PatternKind::Bernoulli } else { PatternKind::GaussianSpeckle };
        let m = make_patterns(kind, n, h, w, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let y = MeasurementVector {
            values: (0..n).map(|_| rng.gen_range(-1e6..1e6)).collect(),
            noise: NoiseSpec { gaussian_sigma: rng.gen(), poisson_scale: rng.gen(), seed: rng.gen() },
            applied_sigma: rng.gen(),
        };
        let (m2, y2) = read_spim(&write_spim(&m, &y).unwrap()).unwrap();
        prop_assert_eq!(m, m2);
        prop_assert_eq!(y, y2);
    }

    #[test]
    fn reported_ratio_matches_count(n in 1usize..5000, side in 8usize..100) {
        let n_pix = side * side;
        let n = n.min(n_pix);
        prop_assert!((ratio_percent(n, n_pix) - 100.0 * n as f64 / n_pix as f64).abs() <= 0.005 + 1e-12);
        let back = n_meas_for_ratio(n as f64 / n_pix as f64, n_pix).unwrap();
        prop_assert!((back as f64 - n as f64).abs() <= 1e-4 * n_pix as f64 + 0.5);
    }
}
