use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semtrans::labels::SegmentMap;
use semtrans::metrics::*;

fn map(w: usize, h: usize, ids: &[u8]) -> SegmentMap {
    SegmentMap::new(w, h, ids.to_vec()).unwrap()
}

#[test]
fn miou_counting_example() {
    let (per, m) = miou(&map(4, 1, &[1, 2, 2, 2]), &map(4, 1, &[1, 1, 2, 2])).unwrap();
    assert_eq!(per[0], Some(0.5));
    assert!((per[1].unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert!((m - 7.0 / 12.0).abs() < 1e-15);
    assert!(per[2..].iter().all(Option::is_none));
}

#[test]
fn miou_identity_and_disjoint() {
    let gt = map(3, 2, &[1, 7, 7, 9, 9, 9]);
    let (per, m) = miou(&gt, &gt).unwrap();
    assert_eq!(m, 1.0);
    assert_eq!(per.iter().flatten().count(), 3);
    let (per, _) = miou(&map(3, 2, &[7, 7, 7, 9, 9, 9]), &gt).unwrap();
    assert_eq!(per[0], Some(0.0));
}

#[test]
fn miou_ignores_unlabeled_ground_truth() {
    let (per, m) = miou(&map(3, 1, &[1, 2, 5]), &map(3, 1, &[1, 0, 0])).unwrap();
    assert_eq!(m, 1.0);
    assert_eq!(per[1], None);
    assert_eq!(per[4], None);
}

#[test]
fn miou_rejects_mismatched_dims() {
    assert!(miou(&map(2, 1, &[1, 1]), &map(1, 2, &[1, 1])).is_err());
}

#[test]
fn confusion_merge_is_additive() {
    let (a, b) = (map(2, 1, &[1, 2]), map(2, 1, &[1, 1]));
    let mut whole = Confusion::default();
    whole.add(&a, &b).unwrap();
    whole.add(&b, &a).unwrap();
    let (mut x, mut y) = (Confusion::default(), Confusion::default());
    x.add(&a, &b).unwrap();
    y.add(&b, &a).unwrap();
    x.merge(&y);
    assert_eq!(x, whole);
}

proptest! {
    #[test]
    fn miou_is_invariant_under_relabeling(ids in prop::collection::vec((1u8..=4, 1u8..=4), 1..60), shift in 0u8..14) {
        let perm = |v: u8| (v - 1 + shift) % 14 + 1;
        let n = ids.len();
        let pred = map(n, 1, &ids.iter().map(|p| p.0).collect::<Vec<_>>());
        let gt = map(n, 1, &ids.iter().map(|p| p.1).collect::<Vec<_>>());
        let pp = map(n, 1, &pred.ids().iter().map(|&v| perm(v)).collect::<Vec<_>>());
        let gp = map(n, 1, &gt.ids().iter().map(|&v| perm(v)).collect::<Vec<_>>());
        let (a, ma) = miou(&pred, &gt).unwrap();
        let (b, mb) = miou(&pp, &gp).unwrap();
        prop_assert!((ma - mb).abs() < 1e-12);
        for c in 1..=14u8 {
            prop_assert_eq!(a[usize::from(c) - 1], b[usize::from(perm(c)) - 1]);
        }
    }

    #[test]
    fn ssim_is_bounded_and_symmetric(seed in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = Plane::new(16, 13, (0..208).map(|_| r.random::<f64>()).collect()).unwrap();
        let b = Plane::new(16, 13, (0..208).map(|_| r.random::<f64>()).collect()).unwrap();
        let s = ssim(&a, &b, 11).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(s, ssim(&b, &a, 11).unwrap());
        prop_assert!(s < 1.0);
    }
}

#[test]
fn ssim_self_similarity_is_one() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let a = Plane::new(40, 30, (0..1200).map(|_| r.random::<f64>()).collect()).unwrap();
    assert!((ssim(&a, &a, 11).unwrap() - 1.0).abs() <= 1e-9);
}

#[test]
fn ssim_constant_images_reduce_to_luminance() {
    let (a, b) = (Plane::filled(20, 20, 0.2), Plane::filled(20, 20, 0.6));
    let expect = (2.0 * 0.2 * 0.6 + SSIM_C1) / (0.2 * 0.2 + 0.6 * 0.6 + SSIM_C1);
    assert!((ssim(&a, &b, 11).unwrap() - expect).abs() <= 1e-9);
}

#[test]
fn ssim_rejects_small_images() {
    let a = Plane::filled(10, 20, 0.0);
    assert!(ssim(&a, &a, 11).is_err());
}

fn random_plane(side: usize, seed: u64) -> Plane {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Plane::new(side, side, (0..side * side).map(|_| r.random::<f64>()).collect()).unwrap()
}

#[test]
fn pyramid_of_constant_has_empty_bands() {
    let p = laplacian_pyramid(&Plane::filled(64, 64, 0.4), 16).unwrap();
    assert_eq!(p.bands.len(), 2);
    assert!(p.bands.iter().all(|b| b.data().iter().all(|v| v.abs() < 1e-12)));
    assert!(p.residual.data().iter().all(|v| (v - 0.4).abs() < 1e-12));
}

#[test]
fn pyramid_levels_for_1024() {
    let p = laplacian_pyramid(&Plane::filled(1024, 1024, 0.0), 16).unwrap();
    let sides: Vec<usize> = p.levels().map(Plane::width).collect();
    assert_eq!(sides, vec![1024, 512, 256, 128, 64, 32, 16]);
}

#[test]
fn pyramid_reconstructs_input() {
    let img = random_plane(128, 2);
    let back = laplacian_pyramid(&img, 16).unwrap().reconstruct();
    let err = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn pyramid_rejects_bad_sides() {
    assert!(laplacian_pyramid(&Plane::filled(48, 48, 0.0), 16).is_err());
    assert!(laplacian_pyramid(&Plane::filled(64, 32, 0.0), 16).is_err());
    assert!(laplacian_pyramid(&Plane::filled(8, 8, 0.0), 16).is_err());
}

/// Dense 5×5 convolution with reflected borders, the reference for the separable blur.
fn dense_blur(p: &[f64], n: usize, gain: f64) -> Vec<f64> {
    let k1 = [1.0, 4.0, 6.0, 4.0, 1.0];
    let refl = |i: isize| -> usize {
        let m = n as isize;
        (if i < 0 { -i } else if i >= m { 2 * (m - 1) - i } else { i }) as usize
    };
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut s = 0.0;
            for dy in 0..5 {
                for dx in 0..5 {
                    let w = k1[dy] * k1[dx] / 256.0 * gain * gain;
                    s += w * p[refl(y as isize + dy as isize - 2) * n + refl(x as isize + dx as isize - 2)];
                }
            }
            out[y * n + x] = s;
        }
    }
    out
}

#[test]
fn impulse_band_energies_match_dense_convolution() {
    let n = 64;
    let mut img = vec![0.0; n * n];
    img[21 * n + 37] = 1.0;
    let pyr = laplacian_pyramid(&Plane::new(n, n, img.clone()).unwrap(), 16).unwrap();
    let mut g = img;
    let mut side = n;
    let mut energies = Vec::new();
    while side > 16 {
        let b = dense_blur(&g, side, 1.0);
        let h = side / 2;
        let next: Vec<f64> = (0..h * h).map(|i| b[(2 * (i / h)) * side + 2 * (i % h)]).collect();
        let mut up = vec![0.0; side * side];
        for i in 0..h * h {
            up[(2 * (i / h)) * side + 2 * (i % h)] = next[i];
        }
        let up = dense_blur(&up, side, 2.0);
        energies.push(g.iter().zip(&up).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
        g = next;
        side = h;
    }
    for (band, e) in pyr.bands.iter().zip(&energies) {
        let got: f64 = band.data().iter().map(|v| v * v).sum();
        assert!((got - e).abs() < 1e-12 * e.max(1.0), "{got} vs {e}");
    }
    let res: f64 = pyr.residual.data().iter().zip(&g).map(|(a, b)| (a - b).abs()).sum();
    assert!(res < 1e-12);
}

/// Brute-force W1 between equal-size 1-D samples: minimum over all matchings.
fn w1_bruteforce(a: &[f64], b: &[f64]) -> f64 {
    fn go(a: &[f64], rest: &mut Vec<f64>, acc: f64, best: &mut f64) {
        if a.is_empty() {
            *best = best.min(acc);
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            go(&a[1..], rest, acc + (a[0] - v).abs(), best);
            rest.insert(i, v);
        }
    }
    let mut best = f64::INFINITY;
    go(a, &mut b.to_vec(), 0.0, &mut best);
    best / a.len() as f64
}

#[test]
fn swd_single_projection_equals_exact_w1() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let n = r.random_range(1..=6);
        let dim = r.random_range(1..=4);
        let a = PatchSet::new(dim, (0..n * dim).map(|_| r.random::<f64>() * 4.0 - 2.0).collect()).unwrap();
        let b = PatchSet::new(dim, (0..n * dim).map(|_| r.random::<f64>() * 4.0 - 2.0).collect()).unwrap();
        let mut d: Vec<f64> = (0..dim).map(|_| r.random::<f64>() - 0.5).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v /= norm);
        let proj = |s: &PatchSet| (0..n).map(|i| s.get(i).iter().zip(&d).map(|(x, y)| x * y).sum()).collect::<Vec<f64>>();
        let expect = w1_bruteforce(&proj(&a), &proj(&b));
        assert!((sliced_w1(&a, &b, &d).unwrap() - expect).abs() <= 1e-9);
    }
}

#[test]
fn swd_one_dimensional_oracle() {
    let a = PatchSet::new(1, vec![0.0, 1.0]).unwrap();
    let b = PatchSet::new(1, vec![1.0, 2.0]).unwrap();
    assert_eq!(sliced_w1(&a, &b, &[1.0]).unwrap(), 1.0);
    let mut r = ChaCha8Rng::seed_from_u64(0);
    assert!((swd(&a, &b, 16, &mut r).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn swd_identical_sets_are_zero_and_symmetric() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let a = PatchSet::new(5, (0..200).map(|_| r.random::<f64>()).collect()).unwrap();
    let b = PatchSet::new(5, (0..200).map(|_| r.random::<f64>()).collect()).unwrap();
    assert_eq!(swd(&a, &a, 64, &mut r).unwrap(), 0.0);
    let ab = swd_projections(&a, &b, 64, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let ba = swd_projections(&b, &a, 64, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(ab, ba);
}

#[test]
fn swd_rejects_empty_sets() {
    let a = PatchSet::new(2, vec![]).unwrap();
    let b = PatchSet::new(2, vec![1.0, 2.0]).unwrap();
    assert!(swd(&a, &b, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn swd_estimates_converge() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let a = PatchSet::new(6, (0..600).map(|_| r.random::<f64>()).collect()).unwrap();
    let b = PatchSet::new(6, (0..600).map(|_| r.random::<f64>() * 1.5).collect()).unwrap();
    let stats = |seed| {
        let v = swd_projections(&a, &b, 4096, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var / v.len() as f64)
    };
    let ((m1, v1), (m2, v2)) = (stats(11), stats(12));
    assert!((m1 - m2).abs() < 3.0 * (v1 + v2).sqrt());
}

#[test]
fn swd_pyramid_matches_levels() {
    let img = image::RgbImage::from_fn(32, 16, |x, y| image::Rgb([(x * 8) as u8, (y * 16) as u8, 40]));
    let cfg = SwdConfig { resolution: 64, projections: 32, ..SwdConfig::default() };
    let same = swd_pyramid(&[img.clone()], &[img.clone()], &cfg, 0, semtrans::Exec::Sequential).unwrap();
    assert_eq!(same.iter().map(|l| l.0).collect::<Vec<_>>(), vec![64, 32, 16]);
    assert!(same.iter().all(|l| l.1 == 0.0));
    let par = swd_pyramid(&[img.clone()], &[img], &cfg, 0, semtrans::Exec::Parallel).unwrap();
    assert_eq!(same, par);
}

#[test]
fn frechet_closed_forms() {
    let mu = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.5]);
    assert!(frechet_distance(&mu, &s, &mu, &s).unwrap().abs() <= 1e-6);
    let d = DVector::from_vec(vec![1.0, 2.0, -2.0]);
    let shifted = &mu + &d;
    assert!((frechet_distance(&mu, &s, &shifted, &s).unwrap() - 9.0).abs() <= 1e-6);
    let (a, b) = ([1.0, 4.0, 0.25, 9.0], [4.0, 1.0, 1.0, 0.0]);
    let z = DVector::zeros(4);
    let got = frechet_distance(&z, &DMatrix::from_diagonal(&DVector::from_vec(a.to_vec())), &z, &DMatrix::from_diagonal(&DVector::from_vec(b.to_vec()))).unwrap();
    let expect: f64 = a.iter().zip(&b).map(|(x, y): (&f64, &f64)| (x.sqrt() - y.sqrt()).powi(2)).sum();
    assert!((got - expect).abs() <= 1e-6);
}

#[test]
fn frechet_is_symmetric_and_checks_inputs() {
    let mu1 = DVector::from_vec(vec![0.0, 1.0]);
    let mu2 = DVector::from_vec(vec![1.0, 0.0]);
    let s1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
    let s2 = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, -0.1, 0.4]);
    let ab = frechet_distance(&mu1, &s1, &mu2, &s2).unwrap();
    let ba = frechet_distance(&mu2, &s2, &mu1, &s1).unwrap();
    assert!((ab - ba).abs() < 1e-9);
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(frechet_distance(&mu1, &bad, &mu2, &s2).is_err());
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(frechet_distance(&mu1, &asym, &mu2, &s2).is_err());
}

#[test]
fn histogram_features_sum_to_one_per_channel() {
    let img = image::RgbImage::from_fn(20, 10, |x, _| image::Rgb([(x * 12) as u8, 0, 255]));
    let f = HistogramFeatures::default().features(&img).unwrap();
    assert_eq!(f.len(), 192);
    for c in 0..3 {
        assert!((f[c * 64..(c + 1) * 64].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn report_csv_has_matching_columns() {
    let r = MetricReport {
        per_class_iou: [None; EVAL_CLASSES],
        miou: 0.5,
        ssim: 0.9,
        swd_per_level: vec![(32, 1.0), (16, 2.0)],
        swd_avg: 1.5,
        frechet: None,
        note: Some("toy".into()),
    };
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# toy");
    assert_eq!(lines[1].split(',').count(), lines[2].split(',').count());
    assert!(lines[1].starts_with("iou_car,iou_bicycle"));
    assert!(r.to_string().contains("mIoU"));
}
