//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use clap::Parser;
use ftir_unmix::args::{Cli, Command};
use ftir_unmix::checkpoint::{decode_checkpoint, encode_checkpoint};
use ftir_unmix::cube_io::{decode_cube, encode_cube};
use ftir_unmix_core::eval::{abundance_rmse, clean_bands, match_endmembers, matched_sad_on_bands};
use ftir_unmix_core::loss::{sad, wsad};
use ftir_unmix_core::model::{encode_eval, endmembers, init_params, ModelConfig, ModelParams};
use ftir_unmix_core::rng::{stream, Stream};
use ftir_unmix_core::stats::softplus;
use ftir_unmix_core::synth::{contaminated_scene, generate_scene, ArtifactSpec, SynthSpec};
use ftir_unmix_core::train::{
    gradient_check, infer_abundances, train, GradCheckConfig, TrainConfig,
};
use ftir_unmix_core::{estimate_band_weights, HyperCube, LossKind, WeightConfig};
use rand::Rng as _;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_params(cfg: &ModelConfig, rng: &mut ftir_unmix_core::rng::Rng) -> ModelParams {
    let side = cfg.patch.max(3);
    let data = (0..side * side * cfg.bands)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let cube = HyperCube::new(side, side, cfg.bands, data, None).unwrap();
    let mut p = init_params(cfg, &cube, rng.random()).unwrap();
    let scale = 10f64.powf(rng.random_range(-2.0..1.5));
    for t in p.learn.tensors_mut() {
        for v in t.iter_mut() {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let r = &mut p.running;
    for v in r.bn1_mean.iter_mut().chain(r.bn2_mean.iter_mut()) {
        *v = scale * rng.sample::<f64, _>(StandardNormal);
    }
    for v in r.bn1_var.iter_mut().chain(r.bn2_var.iter_mut()) {
        *v = 10f64.powf(rng.random_range(-3.0..3.0));
    }
    p
}

/// 10⁴ random configurations, parameters and inputs: simplex abundances and
/// positive decoder/endmember entries.
fn constraints() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(1, Stream::Init);
    let (mut worst_sum, mut min_a, mut min_dec, mut min_e) =
        (0.0f64, f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for _ in 0..10_000 {
        let k = rng.random_range(2..=6);
        let mut cfg = ModelConfig::new(rng.random_range(3..=16), k);
        cfg.patch = [1, 3, 5][rng.random_range(0..3)];
        cfg.hidden = rng.random_range(k..=k + 6);
        cfg.alpha_soft = rng.random_range(0.5..20.0);
        let params = random_params(&cfg, &mut rng);
        let amp = 10f64.powf(rng.random_range(-3.0..3.0));
        let patch: Vec<f64> = (0..cfg.bands * cfg.patch_area())
            .map(|_| amp * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let a = encode_eval(&params, &cfg, &patch).unwrap();
        for u in 0..cfg.patch {
            for v in 0..cfg.patch {
                let col = a.column(u, v);
                worst_sum = worst_sum.max((col.iter().sum::<f64>() - 1.0).abs());
                min_a = col.iter().copied().fold(min_a, f64::min);
            }
        }
        min_dec = params
            .learn
            .decoder_u
            .iter()
            .map(|&u| softplus(u))
            .fold(min_dec, f64::min);
        min_e = endmembers(&params, &cfg)
            .data
            .iter()
            .copied()
            .fold(min_e, f64::min);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_sum <= 1e-6 && min_a >= 0.0 && min_dec > 0.0 && min_e > 0.0 && secs < 60.0;
    outcome(
        pass,
        format!(
            "max |sum-1| {worst_sum:.1e}, min abundance {min_a:.1e}, min softplus(U) {min_dec:.1e}, \
             min endmember {min_e:.1e}, {secs:.1}s (limits 1e-6, >=0, >0, >0, <60s)"
        ),
    )
}

fn loss_equivalence() -> Outcome {
    let mut rng = stream(2, Stream::Noise);
    let (mut eq, mut self_angle, mut scale) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let b = rng.random_range(1..=200);
        let x: Vec<f64> = (0..b)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y: Vec<f64> = (0..b)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let w: Vec<f64> = (0..b).map(|_| rng.random_range(0.05..1.0)).collect();
        let ones = vec![1.0; b];
        eq = eq.max((wsad(&x, &y, &ones) - sad(&x, &y)).abs());
        self_angle = self_angle.max(wsad(&x, &x, &w));
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        scale = scale.max((wsad(&cx, &y, &w) - wsad(&x, &y, &w)).abs());
    }
    outcome(
        eq <= 1e-15 && self_angle <= 1e-6 && scale <= 1e-9,
        format!(
            "max |wsad(w=1)-sad| {eq:.1e} (<=1e-15), max wsad(x,x) {self_angle:.1e} (<=1e-6), \
             max scale change {scale:.1e} (<=1e-9)"
        ),
    )
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for loss in [LossKind::Sad, LossKind::Wsad] {
        let r = gradient_check(&GradCheckConfig::small(loss, 0)).unwrap();
        pass &= r.max_relative_error < 1e-4;
        parts.push(format!(
            "{loss:?} {:.2e} at {}[{}]",
            r.max_relative_error, r.worst_tensor, r.worst_index
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    outcome(
        pass,
        format!(
            "max relative error {} (limit 1e-4), {secs:.1}s (<120s)",
            parts.join(", ")
        ),
    )
}

fn detection_scene() -> SynthSpec {
    SynthSpec::default()
}

fn band_weight_detection() -> Outcome {
    let start = Instant::now();
    let (cube, truth, _) = contaminated_scene(&detection_scene()).unwrap();
    let bw = estimate_band_weights(&cube, &WeightConfig::default()).unwrap();
    let injected: Vec<usize> = truth.artifacts.iter().map(|&(b, _)| b).collect();
    let worst = injected.iter().map(|&b| bw.w[b]).fold(0.0, f64::max);
    let clean = clean_bands(cube.bands(), &injected);
    let kept = clean.iter().filter(|&&b| bw.w[b] >= 0.8).count();
    let frac = kept as f64 / clean.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 0.2 && frac >= 0.95 && secs < 30.0,
        format!(
            "{} injected bands, max w {worst:.3} (<=0.2); clean bands with w>=0.8: {kept}/{} = {frac:.3} (>=0.95); {secs:.1}s",
            injected.len(),
            clean.len()
        ),
    )
}

fn recovery_protocol(loss: LossKind, seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        num_patches: 2000,
        patch: 5,
        epochs,
        learning_rate: 0.005,
        loss,
        seed,
        ..TrainConfig::default()
    }
}

fn unmixing_recovery() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        snr_db: None,
        ..SynthSpec::default()
    };
    let (cube, truth) = generate_scene(&spec, &ArtifactSpec::default()).unwrap();
    let cfg = ModelConfig::new(cube.bands(), spec.endmembers);
    let (params, hist) =
        train(&cube, &cfg, &recovery_protocol(LossKind::Sad, 0, 200), None).unwrap();
    let m = match_endmembers(&endmembers(&params, &cfg), &truth.endmembers).unwrap();
    let a = infer_abundances(&params, &cfg, &cube).unwrap();
    let rmse = abundance_rmse(&a, &truth.abundances, &m.permutation).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        m.mean_sad <= 0.10 && rmse <= 0.10 && secs <= 600.0,
        format!(
            "mean matched SAD {:.4} rad (<=0.10), abundance RMSE {rmse:.4} (<=0.10), loss {:.4}->{:.4}, {secs:.0}s (<=600s)",
            m.mean_sad, hist.epoch_loss[0], hist.final_loss
        ),
    )
}

const BENEFIT_EPOCHS: usize = 100;

fn wsad_benefit() -> Outcome {
    let (cube, truth, _) = contaminated_scene(&detection_scene()).unwrap();
    let w = estimate_band_weights(&cube, &WeightConfig::default())
        .unwrap()
        .w;
    let bad: Vec<usize> = truth.artifacts.iter().map(|&(b, _)| b).collect();
    let cfg = ModelConfig::new(cube.bands(), truth.endmembers.endmembers);
    let contaminated_sad = |loss, seed| {
        let weights = (loss == LossKind::Wsad).then_some(w.as_slice());
        let (params, _) = train(
            &cube,
            &cfg,
            &recovery_protocol(loss, seed, BENEFIT_EPOCHS),
            weights,
        )
        .unwrap();
        let est = endmembers(&params, &cfg);
        let m = match_endmembers(&est, &truth.endmembers).unwrap();
        let per = matched_sad_on_bands(&est, &truth.endmembers, &m.permutation, &bad).unwrap();
        per.iter().sum::<f64>() / per.len() as f64
    };
    let mut rows = Vec::new();
    let (mut sum_w, mut sum_s) = (0.0, 0.0);
    for seed in 0..3 {
        let (lw, ls) = (
            contaminated_sad(LossKind::Wsad, seed),
            contaminated_sad(LossKind::Sad, seed),
        );
        sum_w += lw;
        sum_s += ls;
        rows.push(format!("seed {seed}: {lw:.4} vs {ls:.4}"));
    }
    let (mw, ms) = (sum_w / 3.0, sum_s / 3.0);
    outcome(
        mw < ms,
        format!(
            "contaminated-band SAD, WSAD vs SAD: mean {mw:.4} vs {ms:.4} ({})",
            rows.join("; ")
        ),
    )
}

fn determinism_and_io() -> Outcome {
    let mut rng = stream(7, Stream::Noise);
    let mut io_ok = true;
    for _ in 0..200 {
        let (h, w, b) = (
            rng.random_range(1..6),
            rng.random_range(1..6),
            rng.random_range(1..8),
        );
        let data: Vec<f64> = (0..h * w * b)
            .map(|_| f64::from(rng.random::<f32>() * 1e3 - 500.0))
            .collect();
        let cube = HyperCube::new(h, w, b, data, None).unwrap();
        let back = decode_cube(&encode_cube(&cube).unwrap()).unwrap();
        io_ok &= back
            .data()
            .iter()
            .zip(cube.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
            && (back.height(), back.width(), back.bands()) == (h, w, b);
    }

    let spec = SynthSpec::default();
    let (cube, _) = generate_scene(&spec, &ArtifactSpec::default()).unwrap();
    let cfg = ModelConfig::new(cube.bands(), 3);
    let tcfg = TrainConfig {
        num_patches: 256,
        epochs: 3,
        deterministic: true,
        loss: LossKind::Sad,
        ..TrainConfig::default()
    };
    let (p1, _) = train(&cube, &cfg, &tcfg, None).unwrap();
    let (p2, _) = train(&cube, &cfg, &tcfg, None).unwrap();
    let (b1, b2) = (
        encode_checkpoint(&cfg, &p1).unwrap(),
        encode_checkpoint(&cfg, &p2).unwrap(),
    );
    let same_ckpt = b1 == b2;

    let (cfg2, loaded) = decode_checkpoint(&b1).unwrap();
    let a1 = infer_abundances(&p1, &cfg, &cube).unwrap();
    let a2 = infer_abundances(&loaded, &cfg2, &cube).unwrap();
    let same_eval = a1
        .data
        .iter()
        .zip(&a2.data)
        .all(|(x, y)| x.to_bits() == y.to_bits())
        && endmembers(&p1, &cfg) == endmembers(&loaded, &cfg2);
    outcome(
        io_ok && same_ckpt && same_eval,
        format!(
            "FTC1 round trip bit-exact: {io_ok}; deterministic checkpoints identical: {same_ckpt} ({} bytes); \
             reloaded eval outputs identical: {same_eval}",
            b1.len()
        ),
    )
}

fn protocol_fidelity() -> Outcome {
    let cli = Cli::try_parse_from([
        "ftir-unmix",
        "train",
        "--cube",
        "c.ftc",
        "--k",
        "3",
        "--out",
        "m.ftck",
    ])
    .unwrap();
    let Command::Train(t) = cli.command else {
        return outcome(false, "train subcommand did not parse".into());
    };
    let tc = t.train.train_config();
    let snapshot = format!(
        "patch {}x{}, patches {}, epochs {}, lr {}, optimizer Adam(beta1 {}, beta2 {}, eps {})",
        tc.patch,
        tc.patch,
        tc.num_patches,
        tc.epochs,
        tc.learning_rate,
        tc.beta1,
        tc.beta2,
        tc.adam_eps
    );
    let expected = "patch 5x5, patches 20000, epochs 500, lr 0.005, optimizer Adam(beta1 0.9, beta2 0.999, eps 0.00000001)";
    let pass = snapshot == expected
        && t.train.model_config(100, 3).patch == 5
        && tc == TrainConfig::default();
    outcome(pass, snapshot)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 constraint suite", constraints),
        ("2 loss equivalence", loss_equivalence),
        ("3 gradient oracle", gradient_oracle),
        ("4 band-weight detection", band_weight_detection),
        ("5 synthetic unmixing recovery", unmixing_recovery),
        ("6 WSAD benefit on contaminated bands", wsad_benefit),
        ("7 determinism and I/O", determinism_and_io),
        ("8 protocol fidelity", protocol_fidelity),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, run) in criteria {
        let id = name.split(' ').next().unwrap();
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {verdict} - {}", o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
