//! Randomized invariant checks shared by the property and acceptance suites.

use afv_core::audio::{chunk_stream, MultichannelBuffer};
use afv_core::beamform::{decompose, music_map, to_spl, FieldMap, MapScale};
use afv_core::fieldpipe::{composite, normalize_band, upsample, BandConfig, MedianWindow, NormalizedField};
use afv_core::geometry::{
    build_grid, parse_geometry, project, serialize_geometry, ArrayGeometry, CameraModel, Position,
};
use afv_core::render::{jet, overlay, stack_pair, RgbFrame};
use afv_core::spectral::{estimate_csm, Stft, Window};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn random_buffer(channels: usize, frames: usize) -> impl Strategy<Value = MultichannelBuffer> {
    (
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, frames), channels),
        -6.0f64..3.0,
    )
        .prop_map(|(chs, exp)| {
            let g = 10f64.powf(exp);
            let chs = chs.into_iter().map(|c| c.into_iter().map(|x| x * g).collect()).collect();
            MultichannelBuffer::new(chs, 16_000).unwrap()
        })
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Hermitian within 1e-12 relative, PSD within 1e-9·trace/M, strictly
/// positive definite when loaded.
pub fn csm_hermitian_psd(cases: u32) -> Result<(), String> {
    let strategy = (2usize..=16).prop_flat_map(|m| (random_buffer(m, 128), 1usize..32, prop_oneof![Just(0.0), Just(1e-6), Just(1e-3)]));
    run(cases, strategy, |(buf, bin, eps)| {
        let stft = Stft::new(64, 32, Window::Hann).unwrap();
        let chunk = chunk_stream(&buf, 128).unwrap().next().unwrap();
        let snaps = stft.analyze(&chunk).unwrap();
        let r = estimate_csm(&snaps, bin, eps).unwrap();
        let a = r.matrix();
        let scale = max_abs(a);
        let asym = max_abs(&(a - a.adjoint()));
        prop_assert!(asym <= 1e-12 * scale, "asymmetry {asym} vs scale {scale}");
        let trace = r.trace();
        prop_assert!(trace >= 0.0);
        let eig = SymmetricEigen::new((a + a.adjoint()) * Complex64::new(0.5, 0.0));
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let m = r.size() as f64;
        prop_assert!(min >= -1e-9 * trace / m, "min eigenvalue {min}, trace {trace}");
        if eps > 0.0 && trace > 0.0 {
            prop_assert!(min > 0.0, "loaded CSM not positive definite: {min}");
        }
        Ok(())
    })
}

/// Every median output is an element of that cell's window history and
/// lies between the window's min and max.
pub fn median_order_statistic(cases: u32) -> Result<(), String> {
    let strategy = (1usize..=10, 1usize..=4, 1usize..=4).prop_flat_map(|(w, cols, rows)| {
        (
            Just(w),
            Just((cols, rows)),
            prop::collection::vec(prop::collection::vec(0.0f64..=1.0, cols * rows), 1..24),
        )
    });
    run(cases, strategy, |(w, (cols, rows), frames)| {
        let mut window = MedianWindow::new(w).unwrap();
        for (i, values) in frames.iter().enumerate() {
            let out = window
                .push(NormalizedField::from_values(cols, rows, values.clone()).unwrap())
                .unwrap();
            let history = &frames[(i + 1).saturating_sub(w)..=i];
            prop_assert!(window.len() <= w);
            for cell in 0..cols * rows {
                let hist: Vec<f64> = history.iter().map(|f| f[cell]).collect();
                let v = out.values[cell];
                prop_assert!(hist.contains(&v), "{v} not in {hist:?}");
                let lo = hist.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = hist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= v && v <= hi);
                let below = hist.iter().filter(|&&x| x <= v).count();
                let above = hist.iter().filter(|&&x| x >= v).count();
                prop_assert!(below >= (hist.len() + 1) / 2 && above >= hist.len() - (hist.len() - 1) / 2);
            }
        }
        Ok(())
    })
}

/// Endpoints exact; channels in [0, 1]; piecewise linear with slope ≤ 4.
pub fn jet_endpoints_and_continuity(cases: u32) -> Result<(), String> {
    if jet(0.0) != [0.0, 0.0, 0.5] || jet(1.0) != [0.5, 0.0, 0.0] {
        return Err(format!("jet endpoints {:?} {:?}", jet(0.0), jet(1.0)));
    }
    for k in 0..255 {
        let (a, b) = (jet(k as f64 / 255.0), jet((k + 1) as f64 / 255.0));
        for ch in 0..3 {
            if (a[ch] - b[ch]).abs() > 4.0 / 255.0 + 1e-12 {
                return Err(format!("jump at {k}: {a:?} -> {b:?}"));
            }
        }
    }
    run(cases, (0.0f64..=1.0, 0.0f64..=1.0), |(x, y)| {
        let (a, b) = (jet(x), jet(y));
        for ch in 0..3 {
            prop_assert!((0.0..=1.0).contains(&a[ch]));
            prop_assert!((a[ch] - b[ch]).abs() <= 4.0 * (x - y).abs() + 1e-12);
        }
        Ok(())
    })
}

fn geometry_strategy() -> impl Strategy<Value = ArrayGeometry> {
    (
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, prop_oneof![Just(0.0), -0.1f64..0.1]), 2..40),
        "[a-zA-Z0-9_.-]{0,12}",
    )
        .prop_filter_map("distinct positions", |(pts, name)| {
            let mics: Vec<Position> = pts.into_iter().map(|(x, y, z)| Position::new(x, y, z)).collect();
            ArrayGeometry::new(name, mics).ok()
        })
}

/// parse(serialize(g)) == g, bit-exact.
pub fn geometry_round_trip(cases: u32) -> Result<(), String> {
    run(cases, geometry_strategy(), |g| {
        let back = parse_geometry(&serialize_geometry(&g)).unwrap();
        prop_assert_eq!(back.len(), g.len());
        prop_assert_eq!(back.name(), g.name());
        for (a, b) in back.mics().iter().zip(g.mics()) {
            for i in 0..3 {
                prop_assert_eq!(a[i].to_bits(), b[i].to_bits());
            }
        }
        Ok(())
    })
}

fn frame_strategy(w: usize, h: usize) -> impl Strategy<Value = RgbFrame> {
    prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |d| RgbFrame::new(w, h, d).unwrap())
}

/// Both halves of a stacked pair crop back out exactly.
pub fn stack_pair_lossless(cases: u32) -> Result<(), String> {
    let strategy = (1usize..=24, 1usize..=16).prop_flat_map(|(w, h)| (frame_strategy(w, h), frame_strategy(w, h)));
    run(cases, strategy, |(top, bottom)| {
        let s = stack_pair(&top, &bottom).unwrap();
        prop_assert_eq!(s.width(), top.width());
        prop_assert_eq!(s.height(), 2 * top.height());
        prop_assert_eq!(s.crop_rows(0, top.height()).unwrap(), top.clone());
        prop_assert_eq!(s.crop_rows(top.height(), top.height()).unwrap(), bottom);
        Ok(())
    })
}

/// The five suites gated by the acceptance run.
pub fn gated_suites(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("csm hermitian/psd", csm_hermitian_psd(cases)),
        ("median order statistic", median_order_statistic(cases)),
        ("jet endpoints", jet_endpoints_and_continuity(cases)),
        ("geometry xml round-trip", geometry_round_trip(cases)),
        ("stack_pair lossless", stack_pair_lossless(cases)),
    ]
}

/// Every grid point projects into its own pixel cell within 0.51 px.
pub fn grid_projection_consistency(cases: u32) -> Result<(), String> {
    let strategy = (16u32..1280, 16u32..720, 20.0f64..150.0, 2usize..40, 2usize..30, 0.2f64..10.0);
    run(cases, strategy, |(w, h, fov, cols, rows, d)| {
        let cam = CameraModel::new(w, h, fov).unwrap();
        let grid = build_grid(&cam, cols, rows, d).unwrap();
        let (cw, ch) = (f64::from(w) / cols as f64, f64::from(h) / rows as f64);
        for r in 0..rows {
            for c in 0..cols {
                let (u, v) = project(&cam, grid.point(c, r)).unwrap();
                let (x0, y0) = (c as f64 * cw, r as f64 * ch);
                prop_assert!(u >= x0 - 0.51 && u <= x0 + cw + 0.51);
                prop_assert!(v >= y0 - 0.51 && v <= y0 + ch + 0.51);
                prop_assert!(cam.contains(u, v));
            }
        }
        Ok(())
    })
}

pub fn focal_monotone_in_fov(cases: u32) -> Result<(), String> {
    run(cases, (1u32..4000, 1u32..4000, 0.1f64..179.8, 0.01f64..10.0), |(w, h, f1, df)| {
        let f2 = (f1 + df).min(179.9);
        prop_assume!(f2 > f1);
        let a = CameraModel::new(w, h, f1).unwrap();
        let b = CameraModel::new(w, h, f2).unwrap();
        prop_assert!(a.focal_px > b.focal_px);
        Ok(())
    })
}

pub fn chunk_concatenation(cases: u32) -> Result<(), String> {
    let strategy = (1usize..5, 0usize..300, 1usize..64).prop_flat_map(|(m, n, c)| (random_buffer(m, n), Just(c)));
    run(cases, strategy, |(buf, size)| {
        let count = buf.frames() / size;
        for m in 0..buf.n_channels() {
            let joined: Vec<f64> = chunk_stream(&buf, size)
                .unwrap()
                .flat_map(|c| c.channel(m).to_vec())
                .collect();
            prop_assert_eq!(&joined[..], &buf.channel(m)[..count * size]);
        }
        prop_assert_eq!(chunk_stream(&buf, size).unwrap().len(), count);
        Ok(())
    })
}

fn small_planar_geometry() -> impl Strategy<Value = ArrayGeometry> {
    (2usize..=4, 0.01f64..0.05).prop_map(|(side, pitch)| ArrayGeometry::planar_lattice("lattice", side, pitch).unwrap())
}

fn noise_csm(m: usize, seed: u64, gain: f64) -> afv_core::spectral::CrossSpectralMatrix {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let chs: Vec<Vec<f64>> = (0..m).map(|_| (0..256).map(|_| gain * normal.sample(&mut rng)).collect()).collect();
    let buf = MultichannelBuffer::new(chs, 16_000).unwrap();
    let stft = Stft::new(64, 32, Window::Hann).unwrap();
    let snaps = stft.analyze(&chunk_stream(&buf, 256).unwrap().next().unwrap()).unwrap();
    estimate_csm(&snaps, 9, 1e-6).unwrap()
}

/// MUSIC pseudo-spectrum unchanged (1e-9 relative) under input scaling.
pub fn music_scale_invariance(cases: u32) -> Result<(), String> {
    let strategy = (small_planar_geometry(), any::<u64>(), -3.0f64..3.0);
    run(cases, strategy, |(geom, seed, exp)| {
        let cam = CameraModel::new(64, 36, 72.0).unwrap();
        let grid = build_grid(&cam, 8, 6, 1.5).unwrap();
        let r1 = noise_csm(geom.len(), seed, 1.0);
        let r2 = noise_csm(geom.len(), seed, 10f64.powf(exp));
        let a = music_map(&r1, &grid, &geom, 2250.0, 343.0, 1).unwrap();
        let b = music_map(&r2, &grid, &geom, 2250.0, 343.0, 1).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()), "{x} vs {y}");
        }
        prop_assert_eq!(a.argmax(), b.argmax());
        Ok(())
    })
}

/// ‖(EₙEₙᴴ)² − EₙEₙᴴ‖ ≤ 1e-9.
pub fn projector_idempotence(cases: u32) -> Result<(), String> {
    run(cases, (2usize..=16, any::<u64>(), -6.0f64..3.0), |(m, seed, exp)| {
        let r = noise_csm(m, seed, 10f64.powf(exp));
        let n = 1 + (seed as usize) % (m - 1);
        let e = decompose(&r, n).unwrap().noise;
        prop_assert_eq!(e.ncols(), m - n);
        let p = &e * e.adjoint();
        let err = (&p * &p - &p).norm();
        prop_assert!(err <= 1e-9, "idempotence error {err}");
        Ok(())
    })
}

/// P(g₁) > P(g₂) ⇒ L(g₁) > L(g₂).
pub fn to_spl_monotone(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(-30.0f64..30.0, 4..64), -20.0f64..5.0, 1e-3f64..1e3);
    run(cases, strategy, |(exps, ref_exp, scale)| {
        let values: Vec<f64> = exps.iter().map(|e| 10f64.powf(*e / 3.0)).collect();
        let mut map = FieldMap::new(values.len(), 1, values.clone(), MapScale::Linear).unwrap();
        map.power_scale = scale;
        let l = to_spl(&map, 10f64.powf(ref_exp));
        for i in 0..values.len() {
            prop_assert!(l.values[i].is_finite());
            for j in 0..values.len() {
                if values[i] > values[j] {
                    prop_assert!(l.values[i] > l.values[j], "{} !> {}", l.values[i], l.values[j]);
                }
            }
        }
        Ok(())
    })
}

fn db_map(cols: usize, rows: usize) -> impl Strategy<Value = FieldMap> {
    prop::collection::vec(-20.0f64..80.0, cols * rows)
        .prop_map(move |v| FieldMap::new(cols, rows, v, MapScale::Decibel).unwrap())
}

/// Values stay in [0, 1] through normalize, composite, median and upsample.
pub fn chain_range(cases: u32) -> Result<(), String> {
    let strategy = (2usize..8, 2usize..6).prop_flat_map(|(c, r)| {
        (
            prop::collection::vec(db_map(c, r), 1..5),
            prop::collection::vec((0.0f64..40.0, 0.01f64..3.0), 4),
            8usize..40,
            6usize..30,
        )
    });
    run(cases, strategy, |(maps, bands, w, h)| {
        let normalized: Vec<NormalizedField> = maps
            .iter()
            .zip(&bands)
            .map(|(m, (floor, clip))| normalize_band(m, &BandConfig::new(1000.0, *floor, *clip).unwrap()))
            .collect();
        for f in &normalized {
            prop_assert!(f.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let comp = composite(&normalized).unwrap();
        prop_assert!(comp.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let mut window = MedianWindow::new(8).unwrap();
        let med = window.push(comp).unwrap();
        prop_assert!(med.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let img = upsample(&med, w, h).unwrap();
        prop_assert!(img.values.iter().all(|v| (0.0..=1.0).contains(v)));
        Ok(())
    })
}

/// Adding a common offset before the floor only changes which cells survive;
/// cells at the band max always map to 1 when the band survives.
pub fn offset_changes_only_survivors(cases: u32) -> Result<(), String> {
    let strategy = (db_map(6, 4), 0.0f64..40.0, 0.01f64..3.0, 0.0f64..30.0);
    run(cases, strategy, |(map, floor, clip, offset)| {
        let band = BandConfig::new(1000.0, floor, clip).unwrap();
        let mut shifted = map.clone();
        shifted.values.iter_mut().for_each(|v| *v += offset);
        for m in [&map, &shifted] {
            let n = normalize_band(m, &band);
            let mmax = m.max();
            if mmax > floor {
                for (i, v) in m.values.iter().enumerate() {
                    if *v == mmax {
                        prop_assert_eq!(n.values[i], 1.0);
                    }
                }
            } else {
                prop_assert!(n.is_zero());
            }
        }
        let a = normalize_band(&map, &band);
        let b = normalize_band(&shifted, &band);
        for i in 0..map.values.len() {
            if a.values[i] > 0.0 {
                prop_assert!(b.values[i] > 0.0);
            }
        }
        Ok(())
    })
}

/// Overlay output stays within 8 bits and matches the blend formula.
pub fn overlay_in_range(cases: u32) -> Result<(), String> {
    let strategy = (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        (
            frame_strategy(w, h),
            prop::collection::vec(0.0f64..=1.0, w * h),
            0.0f64..=1.0,
        )
    });
    run(cases, strategy, |(frame, values, alpha)| {
        let gray = afv_core::render::grayscale(&frame);
        let img = afv_core::fieldpipe::ScalarImage {
            width: frame.width(),
            height: frame.height(),
            values: values.clone(),
        };
        let out = overlay(&gray, &img, alpha).unwrap();
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                let g = gray.pixel(x, y);
                let j = jet(values[y * frame.width() + x]);
                let p = out.pixel(x, y);
                for ch in 0..3 {
                    let want = (1.0 - alpha) * f64::from(g[ch]) + alpha * 255.0 * j[ch];
                    prop_assert!((f64::from(p[ch]) - want).abs() <= 0.5 + 1e-9);
                }
            }
        }
        Ok(())
    })
}
