use ftir_unmix_core::bandweights::{
    estimate_band_weights, map_weights, neighbour_corr_deficit, robust_standardize,
    spectral_roughness, WeightConfig,
};
use ftir_unmix_core::eval::{abundance_rmse, match_endmembers};
use ftir_unmix_core::loss::{sad, wsad};
use ftir_unmix_core::model::{
    decode, encode_eval, endmembers, forward, init_params, AbundancePatch, BnMode, ForwardOptions,
    ModelConfig, ModelParams,
};
use ftir_unmix_core::rng::{stream, Stream};
use ftir_unmix_core::synth::{
    gen_abundances, gen_endmembers, generate_scene, mix, ArtifactSpec, SynthSpec,
};
use ftir_unmix_core::train::{batch_loss, train, LossPixels, PatchBatch, TrainConfig};
use ftir_unmix_core::{AbundanceMap, EndmemberMatrix, HyperCube, LossKind};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn random_cube(h: usize, w: usize, b: usize, seed: u64) -> HyperCube {
    let mut rng = stream(seed, Stream::Noise);
    let data = (0..h * w * b).map(|_| rng.random_range(0.0..2.0)).collect();
    HyperCube::new(h, w, b, data, None).unwrap()
}

fn random_params(cfg: &ModelConfig, seed: u64, scale: f64) -> ModelParams {
    let cube = random_cube(cfg.patch, cfg.patch, cfg.bands, seed);
    let mut p = init_params(cfg, &cube, seed).unwrap();
    let mut rng = stream(seed, Stream::Init);
    for t in p.learn.tensors_mut() {
        for v in t.iter_mut() {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let r = &mut p.running;
    for v in r.bn1_mean.iter_mut().chain(r.bn2_mean.iter_mut()) {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    for v in r.bn1_var.iter_mut().chain(r.bn2_var.iter_mut()) {
        *v = rng.random_range(0.01..10.0);
    }
    p
}

fn small_cfg(k: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(12, k);
    cfg.patch = 3;
    cfg.hidden = 6;
    cfg
}

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        height: 8,
        width: 8,
        bands: 30,
        seed,
        ..SynthSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mix_is_linear(seed in 0u64..1000, alpha in 0.0f64..=1.0) {
        let s = spec(seed);
        let e = gen_endmembers(&s).unwrap();
        let a1 = gen_abundances(&s).unwrap();
        let a2 = gen_abundances(&spec(seed + 1)).unwrap();
        let mut blend = a1.clone();
        for (d, (x, y)) in blend.data.iter_mut().zip(a1.data.iter().zip(&a2.data)) {
            *d = alpha * x + (1.0 - alpha) * y;
        }
        let m = mix(&e, &blend, None, 0).unwrap();
        let m1 = mix(&e, &a1, None, 0).unwrap();
        let m2 = mix(&e, &a2, None, 0).unwrap();
        for ((v, x), y) in m.data().iter().zip(m1.data()).zip(m2.data()) {
            prop_assert!((v - (alpha * x + (1.0 - alpha) * y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn same_spec_same_scene(seed in 0u64..1000) {
        let art = ArtifactSpec::default_for(30, 0.5);
        let (c1, t1) = generate_scene(&spec(seed), &art).unwrap();
        let (c2, t2) = generate_scene(&spec(seed), &art).unwrap();
        prop_assert_eq!(c1.data(), c2.data());
        prop_assert_eq!(t1, t2);
    }

    #[test]
    fn artifact_log_covers_exactly_modified_bands(seed in 0u64..1000) {
        let s = spec(seed);
        let (clean, _) = generate_scene(&s, &ArtifactSpec::default()).unwrap();
        let (dirty, truth) = generate_scene(&s, &ArtifactSpec::default_for(30, clean.rms())).unwrap();
        let logged: Vec<usize> = truth.artifacts.iter().map(|&(b, _)| b).collect();
        for b in 0..30 {
            let changed = clean.band(b) != dirty.band(b);
            prop_assert_eq!(changed, logged.contains(&b), "band {}", b);
        }
    }

    #[test]
    fn weights_are_bounded(seed in 0u64..1000, w_min in 0.0f64..0.9) {
        let cfg = WeightConfig { w_min, ..WeightConfig::default() };
        let (cube, _) = generate_scene(&spec(seed), &ArtifactSpec::default_for(30, 0.3)).unwrap();
        let bw = estimate_band_weights(&cube, &cfg).unwrap();
        for &w in &bw.w {
            prop_assert!(w >= w_min && w <= 1.0);
        }
    }

    #[test]
    fn weight_map_strictly_decreasing(a in 0.0f64..6.0, d in 1e-3f64..3.0, alpha in 0.1f64..4.0) {
        let cfg = WeightConfig { alpha_sig: alpha, ..WeightConfig::default() };
        let w = map_weights(&[a, a + d], &cfg);
        prop_assert!(w[0] > w[1]);
    }

    #[test]
    fn weights_ignore_pixel_order(seed in 0u64..1000, shuffle in 0u64..1000) {
        let (cube, _) = generate_scene(&spec(seed), &ArtifactSpec::default_for(30, 0.3)).unwrap();
        let n = cube.pixels();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(shuffle, Stream::Shuffle);
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let data: Vec<f64> = order.iter().flat_map(|&p| cube.spectrum(p).to_vec()).collect();
        let permuted = HyperCube::new(cube.height(), cube.width(), cube.bands(), data, None).unwrap();
        let a = estimate_band_weights(&cube, &WeightConfig::default()).unwrap();
        let b = estimate_band_weights(&permuted, &WeightConfig::default()).unwrap();
        let (da, db) = (&a.diagnostics, &b.diagnostics);
        for (x, y) in [(&a.w, &b.w), (&da.d_corr, &db.d_corr), (&da.d_rough, &db.d_rough), (&da.d_flat, &db.d_flat), (&da.s, &db.s)] {
            for (u, v) in x.iter().zip(y) {
                prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()), "{} vs {}", u, v);
            }
        }
    }

    #[test]
    fn constant_offset_keeps_correlation_and_roughness(seed in 0u64..1000, c in -5.0f64..5.0) {
        let (cube, _) = generate_scene(&spec(seed), &ArtifactSpec::default()).unwrap();
        let shifted = HyperCube::new(
            cube.height(), cube.width(), cube.bands(),
            cube.data().iter().map(|v| v + c).collect(), None,
        ).unwrap();
        let d0 = neighbour_corr_deficit(&robust_standardize(&cube, 1e-12).unwrap()).unwrap();
        let d1 = neighbour_corr_deficit(&robust_standardize(&shifted, 1e-12).unwrap()).unwrap();
        for (x, y) in d0.iter().zip(&d1) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        let r0 = spectral_roughness(&cube).unwrap();
        let r1 = spectral_roughness(&shifted).unwrap();
        for (x, y) in r0.iter().zip(&r1) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn encoder_output_is_on_simplex(seed in 0u64..10_000, k in 2usize..6, scale in 0.01f64..20.0) {
        let cfg = small_cfg(k);
        let params = random_params(&cfg, seed, scale);
        let patch = random_cube(3, 3, 12, seed ^ 0x55).data().to_vec();
        let a = encode_eval(&params, &cfg, &patch).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                let col = a.column(u, v);
                prop_assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                prop_assert!(col.iter().all(|&x| x >= 0.0));
            }
        }
        prop_assert!(endmembers(&params, &cfg).data.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn sharper_softmax_raises_max_abundance(seed in 0u64..1000, a1 in 0.5f64..5.0, d in 0.1f64..5.0) {
        let mut cfg = small_cfg(3);
        let params = random_params(&cfg, seed, 1.0);
        let patch: Vec<f64> = random_cube(3, 3, 12, seed).data().to_vec();
        cfg.alpha_soft = a1;
        let lo = encode_eval(&params, &cfg, &patch).unwrap();
        cfg.alpha_soft = a1 + d;
        let hi = encode_eval(&params, &cfg, &patch).unwrap();
        let (c_lo, c_hi) = (lo.column(1, 1), hi.column(1, 1));
        let argmax = |c: &[f64]| (0..c.len()).max_by(|&i, &j| c[i].total_cmp(&c[j])).unwrap();
        let m = argmax(&c_lo);
        prop_assume!(c_lo[m] < 1.0 - 1e-9);
        prop_assert_eq!(argmax(&c_hi), m);
        prop_assert!(c_hi[m] > c_lo[m]);
    }

    #[test]
    fn decoder_is_linear(seed in 0u64..1000, alpha in -2.0f64..2.0) {
        let cfg = small_cfg(3);
        let params = random_params(&cfg, seed, 1.0);
        let mut rng = stream(seed, Stream::Abundances);
        let mut draw = || AbundancePatch {
            endmembers: 3,
            patch: 3,
            data: (0..27).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        let (a, b) = (draw(), draw());
        let mut c = a.clone();
        for (d, (x, y)) in c.data.iter_mut().zip(a.data.iter().zip(&b.data)) {
            *d = alpha * x + y;
        }
        let (ya, yb, yc) = (
            decode(&params, &cfg, &a).unwrap(),
            decode(&params, &cfg, &b).unwrap(),
            decode(&params, &cfg, &c).unwrap(),
        );
        for ((z, x), y) in yc.iter().zip(&ya).zip(&yb) {
            prop_assert!((z - (alpha * x + y)).abs() <= 1e-9 * (1.0 + z.abs()));
        }
    }

    #[test]
    fn eval_forward_is_pure(seed in 0u64..1000) {
        let cfg = small_cfg(3);
        let params = random_params(&cfg, seed, 1.0);
        let patch: Vec<f64> = random_cube(3, 3, 12, seed).data().to_vec();
        let opts = ForwardOptions { bn: BnMode::Running, dropout: None };
        let a = forward(&params, &cfg, &patch, 1, &opts);
        let b = forward(&params, &cfg, &patch, 1, &opts);
        prop_assert_eq!(a.abundances(), b.abundances());
        prop_assert_eq!(a.reconstruction(), b.reconstruction());
    }

    #[test]
    fn losses_bounded_and_scale_invariant(
        x in prop::collection::vec(-10.0f64..10.0, 1..40),
        seed in 0u64..1000,
        c in 1e-3f64..1e3,
    ) {
        let mut rng = stream(seed, Stream::Noise);
        let y: Vec<f64> = x.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
        let w: Vec<f64> = x.iter().map(|_| rng.random_range(0.0..1.0)).collect();
        let l = wsad(&x, &y, &w);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&l));
        let ones = vec![1.0; x.len()];
        prop_assert_eq!(wsad(&x, &y, &ones), sad(&x, &y));
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        prop_assert!((wsad(&cx, &y, &w) - l).abs() <= 1e-9);
    }

    #[test]
    fn duplicated_batch_has_same_mean_loss(seed in 0u64..500) {
        let cfg = small_cfg(3);
        let params = random_params(&cfg, seed, 1.0);
        let cube = random_cube(6, 6, 12, seed);
        let centers = [(1, 1), (2, 4), (4, 3)];
        let once = PatchBatch::extract(&cube, &centers, 3).unwrap();
        let twice_centers: Vec<_> = centers.iter().chain(&centers).copied().collect();
        let twice = PatchBatch::extract(&cube, &twice_centers, 3).unwrap();
        let w = vec![0.7; 12];
        let opts = ForwardOptions { bn: BnMode::Running, dropout: None };
        let l1 = batch_loss(&params, &cfg, &once, &w, LossPixels::All, &opts).unwrap();
        let l2 = batch_loss(&params, &cfg, &twice, &w, LossPixels::All, &opts).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-12);
    }
}

fn brute_force_mean_sad(est: &EndmemberMatrix, truth: &EndmemberMatrix) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for i in 0..k {
                let mut q = p.clone();
                q.insert(i, k - 1);
                out.push(q);
            }
        }
        out
    }
    let k = est.endmembers;
    permutations(k)
        .iter()
        .map(|perm| {
            (0..k)
                .map(|i| sad(&est.column(i), &truth.column(perm[i])))
                .sum::<f64>()
                / k as f64
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_matching_equals_brute_force(seed in 0u64..5000, k in 2usize..=6, noise in 0.0f64..0.1) {
        let s = SynthSpec { bands: 60, endmembers: k, seed, ..SynthSpec::default() };
        let truth = gen_endmembers(&s).unwrap();
        let mut rng = stream(seed, Stream::Noise);
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut est = EndmemberMatrix::zeros(60, k);
        for (i, &j) in perm.iter().enumerate() {
            let scale = rng.random_range(0.5..2.0);
            for b in 0..60 {
                let n: f64 = rng.sample(StandardNormal);
                est.set(b, i, (scale * truth.get(b, j) * (1.0 + noise * n)).max(0.0));
            }
        }
        let greedy = match_endmembers(&est, &truth).unwrap();
        let best = brute_force_mean_sad(&est, &truth);
        prop_assert!((greedy.mean_sad - best).abs() <= 1e-12, "greedy {} brute {}", greedy.mean_sad, best);
        let mut seen = greedy.permutation.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn rmse_of_simplex_maps_is_at_most_one(seed in 0u64..1000, k in 2usize..5) {
        let s = SynthSpec { height: 6, width: 6, endmembers: k, seed, ..SynthSpec::default() };
        let a: AbundanceMap = gen_abundances(&s).unwrap();
        let b = gen_abundances(&SynthSpec { seed: seed + 7, ..s }).unwrap();
        let perm: Vec<usize> = (0..k).rev().collect();
        let r = abundance_rmse(&a, &b, &perm).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }
}

#[test]
fn deterministic_training_is_bit_identical() {
    let s = SynthSpec {
        height: 10,
        width: 10,
        bands: 20,
        snr_db: None,
        ..SynthSpec::default()
    };
    let (cube, _) = generate_scene(&s, &ArtifactSpec::default()).unwrap();
    let mut cfg = ModelConfig::new(20, 3);
    cfg.hidden = 8;
    let tcfg = TrainConfig {
        num_patches: 100,
        epochs: 3,
        batch_size: 16,
        loss: LossKind::Sad,
        deterministic: true,
        ..TrainConfig::default()
    };
    let (p1, h1) = train(&cube, &cfg, &tcfg, None).unwrap();
    let (p2, h2) = train(&cube, &cfg, &tcfg, None).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(h1.epoch_loss, h2.epoch_loss);
}
