use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semtrans::autodiff::checkpoint::{encode, read_tensors};
use semtrans::autodiff::{AdamConfig, Graph, Tensor};
use semtrans::error::Error;
use semtrans::geometry::{project_cloud, Point, PointCloud, ProjectionConfig};
use semtrans::labels::{ClassList, SegmentMap, UNLABELED};
use semtrans::pipeline::{make_batch, synth_scene, translate, SyntheticSceneConfig, ViewGeometry};
use semtrans::rng;
use semtrans::titan::*;

fn classes() -> ClassList {
    ClassList::new(&[1, 7, 8, 9, 12]).unwrap()
}

fn random(n: usize, seed: u64) -> Vec<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Eval-mode logits for explicit input planes.
fn logits(g: &Generator, range: Vec<f32>, cond: Vec<f32>, h: usize, w: usize) -> Tensor<f32> {
    let graph = Graph::new();
    let r = graph.constant(range, &[1, 5, h, w]).unwrap();
    let c = graph.constant(cond, &[1, g.config.classes, h, w]).unwrap();
    predict_logits(g, &graph, &r, &c).unwrap()
}

fn toy_generator(seed: u64) -> Generator {
    Generator::new(GeneratorConfig::toy(5), &mut rng::seeded(seed)).unwrap()
}

#[test]
fn toy_generator_output_shape_and_probabilities() {
    let g = toy_generator(1);
    let graph = Graph::new();
    let bound = g.params.bind(&graph, false);
    let mut r = rng::seeded(2);
    let mut ctx = Ctx::train(&bound, &g.params, &mut r);
    let range = graph.constant(random(2 * 5 * 64 * 128, 3), &[2, 5, 64, 128]).unwrap();
    let cond = graph.constant(random(2 * 5 * 64 * 128, 4), &[2, 5, 64, 128]).unwrap();
    let y = g.forward(&mut ctx, &range, &cond).unwrap();
    assert_eq!(y.shape(), &[2, 5, 64, 128]);
    let p = y.softmax(1).unwrap().to_vec();
    let plane = 64 * 128;
    for n in 0..2 {
        for px in 0..plane {
            let s: f32 = (0..5).map(|k| p[(n * 5 + k) * plane + px]).sum();
            assert!((s - 1.0).abs() <= 1e-5);
        }
    }
}

#[test]
fn wide_camera_config_reaches_its_output_size() {
    let cfg = GeneratorConfig {
        classes: 14,
        base_width: 4,
        in_h: 64,
        in_w: 512,
        out_h: 376,
        out_w: 1241,
        ..GeneratorConfig::toy(14)
    };
    let g = Generator::new(cfg, &mut rng::seeded(0)).unwrap();
    let y = logits(&g, vec![0.1; 5 * 64 * 512], vec![0.0; 14 * 64 * 512], 64, 512);
    assert_eq!(y.shape(), &[1, 14, 376, 1241]);
}

#[test]
fn invalid_generator_configs_are_rejected() {
    let base = GeneratorConfig::toy(5);
    for bad in [
        GeneratorConfig { in_w: 100, ..base.clone() },
        GeneratorConfig { base_width: 6, ..base.clone() },
        GeneratorConfig { dilations: vec![], ..base.clone() },
        GeneratorConfig { out_w: 32, ..base.clone() },
        GeneratorConfig { dropout: 1.0, ..base.clone() },
    ] {
        assert!(matches!(Generator::new(bad, &mut rng::seeded(0)), Err(Error::InvalidConfig(_))));
    }
}

#[test]
fn features_scale_with_input_width() {
    let g = toy_generator(3);
    let feats = |w: usize| {
        let graph = Graph::new();
        let bound = g.params.bind(&graph, false);
        let mut ctx = Ctx::eval(&bound, &g.params);
        let r = graph.constant(vec![0.2; 5 * 64 * w], &[1, 5, 64, w]).unwrap();
        let c = graph.constant(vec![0.0; 5 * 64 * w], &[1, 5, 64, w]).unwrap();
        g.features(&mut ctx, &r, &c).unwrap().shape().to_vec()
    };
    let (a, b) = (feats(128), feats(256));
    assert_eq!(b[3], 2 * a[3]);
    assert_eq!(a[..3], b[..3]);
    assert_eq!(g.config.output_size(64, 256).unwrap(), (64, 256));
    assert!(g.config.output_size(64, 100).is_err());
}

#[test]
fn condition_changes_the_output() {
    let g = toy_generator(4);
    let range = random(5 * 64 * 128, 5);
    let ids: Vec<u8> = (0..64 * 128).map(|p| if p % 128 < 64 { 7 } else { 9 }).collect();
    let cond = classes().one_hot(&SegmentMap::new(128, 64, ids).unwrap());
    let with = logits(&g, range.clone(), cond, 64, 128).to_vec();
    let without = logits(&g, range, vec![0.0; 5 * 64 * 128], 64, 128).to_vec();
    let diff: f32 = with.iter().zip(&without).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(diff > 0.0);
}

#[test]
fn output_ignores_inputs_beyond_the_receptive_radius() {
    let g = toy_generator(6);
    let radius = g.config.receptive_radius();
    let (h, w) = (64, 512);
    let range = random(5 * h * w, 7);
    let cond = vec![0.0; 5 * h * w];
    let base = logits(&g, range.clone(), cond.clone(), h, w).to_vec();
    let col = 200;
    let mut poked = range;
    for c in 0..5 {
        for row in 0..h {
            poked[(c * h + row) * w + col] += 3.0;
        }
    }
    let moved = logits(&g, poked, cond, h, w).to_vec();
    let mut reach = 0;
    for (i, (a, b)) in base.iter().zip(&moved).enumerate() {
        if a != b {
            reach = reach.max((i % w).abs_diff(col));
        }
    }
    assert!(reach > 0, "perturbation had no effect");
    assert!(reach <= radius, "output moved {reach} columns away, radius bound {radius}");
}

#[test]
fn toy_critic_patch_grid() {
    let cfg = DiscriminatorConfig::toy(5);
    assert_eq!(cfg.patch_grid(64, 128).unwrap(), (2, 4));
    assert_eq!(cfg.patch_grid(376, 1241).unwrap(), (11, 38));
    let d = Discriminator::new(cfg, &mut rng::seeded(0)).unwrap();
    let graph = Graph::new();
    let bound = d.params.bind(&graph, false);
    let ctx = Ctx::eval(&bound, &d.params);
    let cand = graph.constant(random(3 * 5 * 64 * 128, 1), &[3, 5, 64, 128]).unwrap();
    let cond = graph.constant(random(3 * 5 * 64 * 128, 2), &[3, 5, 64, 128]).unwrap();
    assert_eq!(d.forward(&ctx, &cand, &cond).unwrap().shape(), &[3, 1, 2, 4]);
    // condition on the coarser LiDAR grid is resized to the candidate grid
    let cond = graph.constant(random(3 * 5 * 32 * 64, 2), &[3, 5, 32, 64]).unwrap();
    assert_eq!(d.forward(&ctx, &cand, &cond).unwrap().shape(), &[3, 1, 2, 4]);
}

#[test]
fn six_halving_blocks_on_a_camera_frame() {
    let halve = |out_c| BlockSpec { out_c, kernel: 4, stride: 2, padding: 1 };
    let cfg = DiscriminatorConfig {
        blocks: vec![halve(8), halve(16), halve(32), halve(64), halve(64), halve(1)],
        ..DiscriminatorConfig::toy(14)
    };
    assert_eq!(cfg.patch_grid(376, 1241).unwrap(), (5, 19));
    assert!(cfg.patch_grid(8, 8).is_err());
}

#[test]
fn constant_critic_scores_every_patch_alike() {
    let cfg = DiscriminatorConfig { init: Init::Zero, ..DiscriminatorConfig::toy(5) };
    let mut d = Discriminator::new(cfg, &mut rng::seeded(0)).unwrap();
    let biases: Vec<_> = d.params.iter().filter(|(_, p)| p.name.ends_with(".b")).map(|(id, _)| id).collect();
    assert!(!biases.is_empty());
    for id in biases {
        d.params.data_mut(id).fill(0.25);
    }
    let graph = Graph::new();
    let bound = d.params.bind(&graph, false);
    let ctx = Ctx::eval(&bound, &d.params);
    let cand = graph.constant(random(5 * 64 * 128, 1), &[1, 5, 64, 128]).unwrap();
    let cond = graph.constant(random(5 * 64 * 128, 2), &[1, 5, 64, 128]).unwrap();
    let s = d.forward(&ctx, &cand, &cond).unwrap().to_vec();
    assert!(s.iter().all(|&v| v == s[0]));
    assert_eq!(s[0], 0.25);
}

fn collision_free_cloud(cfg: &ProjectionConfig, seed: u64) -> PointCloud {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            if r.random_bool(0.3) {
                let (az, el) = cfg.pixel_ray(row, col);
                let d = r.random_range(2.0..30.0);
                pts.push(Point::new(
                    (d * el.cos() * az.cos()) as f32,
                    (d * el.cos() * az.sin()) as f32,
                    (d * el.sin()) as f32,
                    r.random(),
                ));
            }
        }
    }
    PointCloud::new(pts, None).unwrap()
}

#[test]
fn flip_commutes_with_projection() {
    let cfg = ProjectionConfig::new(256, 16, 0.1, 0.3).unwrap();
    for seed in 0..5 {
        let cloud = collision_free_cloud(&cfg, seed);
        let a = project_cloud(&cloud.flip_y(), &cfg).unwrap();
        let b = project_cloud(&cloud, &cfg).unwrap().mirror_columns();
        for row in 0..cfg.height {
            for col in 0..cfg.width {
                assert_eq!(a.is_valid(row, col), b.is_valid(row, col));
                let (pa, pb) = (a.pixel(row, col), b.pixel(row, col));
                if a.is_valid(row, col) {
                    assert_eq!(pa, [pb[0], -pb[1], pb[2], pb[3], pb[4]]);
                }
            }
        }
        assert_eq!(cloud.flip_y().flip_y(), cloud);
    }
}

#[test]
fn augmentation_branches() {
    let cfg = ProjectionConfig::new(64, 8, 0.1, 0.3).unwrap();
    let cloud = collision_free_cloud(&cfg, 9);
    let off = AugmentConfig { flip_prob: 0.0, drop_prob: 0.0, drop_max_fraction: 0.1 };
    let out = augment(&cloud, &off, &mut rng::seeded(1));
    assert_eq!((out.cloud, out.flipped, out.dropped), (cloud.clone(), false, 0));
    let on = AugmentConfig { flip_prob: 1.0, drop_prob: 1.0, drop_max_fraction: 0.1 };
    for seed in 0..20 {
        let out = augment(&cloud, &on, &mut rng::seeded(seed));
        assert!(out.flipped);
        assert!(out.dropped as f64 <= 0.1 * cloud.len() as f64 + 0.5);
        assert_eq!(out.cloud.len(), cloud.len() - out.dropped);
    }
}

fn desk_batch(n: usize) -> (Batch, SyntheticSceneConfig) {
    let cfg = SyntheticSceneConfig::desk();
    let samples: Vec<_> = (0..n as u64)
        .map(|s| synth_scene(&SyntheticSceneConfig { seed: 40 + s, ..cfg.clone() }).unwrap())
        .collect();
    let refs: Vec<_> = samples.iter().collect();
    let batch = make_batch(&refs, &classes(), &ViewGeometry::of_scene(&cfg), None).unwrap();
    (batch, cfg)
}

fn trainer(init: Init, config: TrainConfig) -> Trainer {
    let g = GeneratorConfig { init, ..GeneratorConfig::toy(5) };
    let d = DiscriminatorConfig { init, ..DiscriminatorConfig::toy(5) };
    Trainer::new(g, d, classes(), config).unwrap()
}

#[test]
fn zero_initialised_steps_are_reproducible() {
    let (batch, _) = desk_batch(2);
    let run = || {
        let mut t = trainer(Init::Zero, TrainConfig { batch_size: 2, ..TrainConfig::default() });
        (0..3).map(|_| t.train_step(&batch).unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    for r in &a {
        assert_eq!(r.total_g, r.g_adv_loss + r.lovasz_loss);
        assert!(r.gp_term >= 0.0);
    }
}

#[test]
fn parameter_trajectories_repeat_for_a_hundred_steps() {
    let (batch, _) = desk_batch(1);
    let run = || {
        let mut t = trainer(Init::Kaiming, TrainConfig { batch_size: 1, seed: 11, ..TrainConfig::default() });
        for _ in 0..100 {
            t.train_step(&batch).unwrap();
        }
        let mut bytes = Vec::new();
        encode(&mut bytes, &t.export()).unwrap();
        bytes
    };
    assert_eq!(run(), run());
}

#[test]
fn single_pair_overfits() {
    let (batch, cfg) = desk_batch(1);
    let config = TrainConfig {
        adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
        batch_size: 1,
        ..TrainConfig::default()
    };
    let mut t = trainer(Init::Kaiming, config);
    let mut last = f64::NAN;
    for _ in 0..500 {
        last = t.train_step(&batch).unwrap().lovasz_loss;
    }
    assert!(last < 0.1, "Lovasz loss after 500 steps: {last}");
    let sample = synth_scene(&SyntheticSceneConfig { seed: 40, ..cfg }).unwrap();
    let pred = translate(&t.generator, &classes(), &sample.range, &sample.lidar_map).unwrap();
    let labelled: Vec<_> = sample.camera.ids().iter().zip(pred.ids()).filter(|(g, _)| **g != UNLABELED).collect();
    let agree = labelled.iter().filter(|(g, p)| g == p).count() as f64 / labelled.len() as f64;
    assert!(agree >= 0.95, "agreement {agree}");
}

#[test]
fn divergence_is_reported_with_the_step() {
    let (mut batch, _) = desk_batch(1);
    let mut t = trainer(Init::Kaiming, TrainConfig { batch_size: 1, ..TrainConfig::default() });
    t.train_step(&batch).unwrap();
    batch.range[0] = f32::NAN;
    match t.train_step(&batch) {
        Err(Error::TrainingDiverged { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (batch, _) = desk_batch(1);
    let mut t = trainer(Init::Kaiming, TrainConfig { batch_size: 1, ..TrainConfig::default() });
    for _ in 0..3 {
        t.train_step(&batch).unwrap();
    }
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    t.save(&a).unwrap();
    let loaded = Trainer::load(&a, t.config.clone()).unwrap();
    assert_eq!(loaded.steps(), 3);
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let range = batch.range.clone();
    let cond = batch.cond.clone();
    let before = logits(&t.generator, range.clone(), cond.clone(), 64, 128).to_vec();
    let (g, list) = load_generator(&a).unwrap();
    assert_eq!(list, classes());
    assert_eq!(logits(&g, range, cond, 64, 128).to_vec(), before);

    let bytes = std::fs::read(&a).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(read_tensors(&cut), Err(Error::Checkpoint(_))));
    assert!(Trainer::load(&cut, t.config.clone()).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    std::fs::write(&cut, bad).unwrap();
    assert!(matches!(read_tensors(&cut), Err(Error::Checkpoint(_))));
}

#[test]
fn train_config_validation() {
    let ok = TrainConfig::default();
    assert_eq!((ok.batch_size, ok.adam.lr, ok.lambda), (10, 1e-4, 10.0));
    assert!(TrainConfig { batch_size: 0, ..ok.clone() }.validate().is_err());
    let aug = AugmentConfig { flip_prob: 1.5, ..AugmentConfig::default() };
    assert!(TrainConfig { augment: aug, ..ok.clone() }.validate().is_err());
    assert!(Trainer::new(GeneratorConfig::toy(4), DiscriminatorConfig::toy(5), classes(), ok).is_err());
}
