//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use ftir_unmix_core::eval::{
    abundance_rmse, clean_bands, match_endmembers, match_endmembers_partial, matched_sad_on_bands,
    weight_detection_report,
};
use ftir_unmix_core::model::endmembers;
use ftir_unmix_core::synth::{
    contaminated_scene, generate_scene, ArtifactKind, ArtifactSpec, SynthSpec,
};
use ftir_unmix_core::train::{
    gradient_check, infer_abundances, train_with, GradCheckConfig, TrainMonitor,
};
use ftir_unmix_core::{
    estimate_band_weights, AbundanceMap, HyperCube, LossKind, ModelConfig, ModelParams,
    TrainHistory, WavenumberAxis,
};
use serde::Serialize;

use crate::args::*;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::cube_io::{
    export_abundance_maps, export_endmembers_csv, read_cube, read_endmembers_csv, write_cube,
};
use crate::error::{ToleranceExceeded, UsageError};
use crate::manifest::RunManifest;
use crate::weights_io::{read_weights_csv, write_weights_csv};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Weights(a) => weights(&a),
        Command::Train(a) => train(&a),
        Command::Unmix(a) => unmix(&a),
        Command::Eval(a) => eval(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Ksweep(a) => ksweep(&a),
    }
}

fn config_json<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("argument structs serialize")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// `<file>.manifest.json` next to a single-file output.
fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn finish(mut m: RunManifest, start: Instant, path: &Path) -> Result<()> {
    m.duration_seconds = start.elapsed().as_secs_f64();
    m.write_atomic(path)
        .with_context(|| format!("writing manifest {}", path.display()))
}

fn load_cube(path: &Path) -> Result<HyperCube> {
    read_cube(path).with_context(|| format!("reading cube {}", path.display()))
}

pub fn synth_spec(a: &SynthArgs) -> SynthSpec {
    SynthSpec {
        height: a.height,
        width: a.width,
        bands: a.bands,
        endmembers: a.k,
        peaks_per_endmember: a.peaks,
        peak_width: (a.peak_width_min, a.peak_width_max),
        smoothing_radius: a.smoothing_radius,
        concentration: a.concentration,
        snr_db: (!a.noiseless).then_some(a.snr_db),
        seed: a.seed,
    }
}

fn write_artifact_log(log: &[(usize, ArtifactKind)], path: &Path) -> Result<()> {
    let mut text = String::new();
    for (b, kind) in log {
        writeln!(text, "{b} {}", kind.as_str()).unwrap();
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reads the `band kind` lines written by `synth`.
pub fn read_artifact_log(path: &Path) -> Result<Vec<(usize, ArtifactKind)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let mut parts = line.split_whitespace();
        let band = parts.next().and_then(|b| b.parse().ok());
        let kind = parts.next().and_then(ArtifactKind::parse);
        match (band, kind) {
            (Some(b), Some(k)) => out.push((b, k)),
            _ => {
                return Err(crate::cube_io::FormatError::Format(format!(
                    "{}:{}: expected \"<band> <kind>\"",
                    path.display(),
                    i + 1
                ))
                .into())
            }
        }
    }
    Ok(out)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let start = Instant::now();
    let spec = synth_spec(a);
    spec.validate()?;
    let (cube, truth) = if a.artifacts {
        let (c, t, _) = contaminated_scene(&spec)?;
        (c, t)
    } else {
        generate_scene(&spec, &ArtifactSpec::default())?
    };
    let axis = match &a.wavenumbers {
        Some(r) => {
            let (s, e) = (r[0], r[1]);
            let n = a.bands;
            let step = if n > 1 { (e - s) / (n - 1) as f64 } else { 0.0 };
            Some(WavenumberAxis::new(
                (0..n).map(|i| s + step * i as f64).collect(),
            )?)
        }
        None => None,
    };
    let cube = HyperCube::new(
        cube.height(),
        cube.width(),
        cube.bands(),
        cube.into_data(),
        axis.clone(),
    )?;
    let truth_dir = a.out_dir.join("truth");
    ensure_dir(&truth_dir)?;
    let cube_path = a.out_dir.join("cube.ftc");
    write_cube(&cube, &cube_path)?;
    let e_path = truth_dir.join("endmembers.csv");
    export_endmembers_csv(&truth.endmembers, axis.as_ref(), &e_path)?;
    let a_path = truth_dir.join("abundances.ftc");
    write_cube(&truth.abundances.to_cube()?, &a_path)?;
    let log_path = truth_dir.join("artifacts.txt");
    write_artifact_log(&truth.artifacts, &log_path)?;

    let mut m = RunManifest::new("synth", config_json(a), Some(a.seed));
    m.output(&cube_path)
        .output(&e_path)
        .output(&a_path)
        .output(&log_path);
    println!(
        "wrote {}x{}x{} cube with {} endmembers and {} contaminated bands to {}",
        cube.height(),
        cube.width(),
        cube.bands(),
        spec.endmembers,
        truth.artifacts.len(),
        a.out_dir.display()
    );
    finish(m, start, &a.out_dir.join("synth.manifest.json"))
}

fn weights(a: &WeightsArgs) -> Result<()> {
    let start = Instant::now();
    let cube = load_cube(&a.cube)?;
    let bw = estimate_band_weights(&cube, &a.weights.config())?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_weights_csv(&bw, cube.wavenumbers(), &a.out)?;
    let low = bw.flagged(0.5).len();
    println!("{low} of {} bands with w < 0.5", bw.len());
    let mut m = RunManifest::new("weights", config_json(a), None);
    m.input("cube", &a.cube).output(&a.out);
    finish(m, start, &sibling_manifest(&a.out))
}

struct Progress {
    start: Instant,
    every: usize,
    total: usize,
    label: String,
}

impl TrainMonitor for Progress {
    fn now(&self) -> Option<f64> {
        Some(self.start.elapsed().as_secs_f64())
    }

    fn on_epoch(&mut self, epoch: usize, loss: f64) {
        if (epoch + 1).is_multiple_of(self.every) || epoch + 1 == self.total {
            eprintln!(
                "{}epoch {}/{} loss {loss:.6}",
                self.label,
                epoch + 1,
                self.total
            );
        }
    }
}

fn band_weights_for(opts: &TrainOpts, bands: usize) -> Result<Option<Vec<f64>>> {
    match (opts.loss, &opts.weights) {
        (LossArg::Sad, _) => Ok(None),
        (LossArg::Wsad, Some(path)) => {
            let w = read_weights_csv(path)
                .with_context(|| format!("reading weights {}", path.display()))?;
            if w.len() != bands {
                return Err(ftir_unmix_core::Error::Dimension(format!(
                    "{} weights in {} for a {bands}-band cube",
                    w.len(),
                    path.display()
                ))
                .into());
            }
            Ok(Some(w))
        }
        (LossArg::Wsad, None) => Err(UsageError("--loss wsad requires --weights".into()).into()),
    }
}

/// Trains one model; progress goes to stderr.
pub fn fit(
    cube: &HyperCube,
    k: usize,
    opts: &TrainOpts,
    weights: Option<&[f64]>,
    label: &str,
) -> Result<(ModelConfig, ModelParams, TrainHistory)> {
    let mcfg = opts.model_config(cube.bands(), k);
    let tcfg = opts.train_config();
    let mut progress = Progress {
        start: Instant::now(),
        every: (opts.epochs / 10).max(1),
        total: opts.epochs,
        label: label.to_string(),
    };
    let (params, hist) = train_with(cube, &mcfg, &tcfg, weights, &mut progress)?;
    Ok((mcfg, params, hist))
}

fn train(a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let cube = load_cube(&a.cube)?;
    let w = band_weights_for(&a.train, cube.bands())?;
    let (mcfg, params, hist) = fit(&cube, a.k, &a.train, w.as_deref(), "")?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_checkpoint(&mcfg, &params, &a.out)?;
    println!(
        "final loss {:.6} (epoch 1: {:.6}) after {:.1} s",
        hist.final_loss, hist.epoch_loss[0], hist.seconds
    );
    let mut m = RunManifest::new("train", config_json(a), Some(a.train.seed));
    m.input("cube", &a.cube);
    if let Some(p) = &a.train.weights {
        m.input("weights", p);
    }
    m.output(&a.out);
    finish(m, start, &sibling_manifest(&a.out))
}

/// Writes endmember CSV, abundance cube and PGM maps into `dir`.
fn export_products(
    dir: &Path,
    cfg: &ModelConfig,
    params: &ModelParams,
    cube: &HyperCube,
    m: &mut RunManifest,
) -> Result<AbundanceMap> {
    ensure_dir(dir)?;
    let e = endmembers(params, cfg);
    let e_path = dir.join("endmembers.csv");
    export_endmembers_csv(&e, cube.wavenumbers(), &e_path)?;
    let a = infer_abundances(params, cfg, cube)?;
    let a_path = dir.join("abundances.ftc");
    write_cube(&a.to_cube()?, &a_path)?;
    m.output(&e_path).output(&a_path);
    for p in export_abundance_maps(&a, &dir.join("abundance"))? {
        m.output(&p);
    }
    Ok(a)
}

fn load_model(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn unmix(a: &UnmixArgs) -> Result<()> {
    let start = Instant::now();
    let (cfg, params) = load_model(&a.checkpoint)?;
    let cube = load_cube(&a.cube)?;
    let mut m = RunManifest::new("unmix", config_json(a), None);
    m.input("checkpoint", &a.checkpoint).input("cube", &a.cube);
    export_products(&a.out_dir, &cfg, &params, &cube, &mut m)?;
    println!(
        "wrote {} abundance maps to {}",
        cfg.endmembers,
        a.out_dir.display()
    );
    finish(m, start, &a.out_dir.join("unmix.manifest.json"))
}

fn eval(a: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    let (cfg, params) = load_model(&a.checkpoint)?;
    let cube = load_cube(&a.cube)?;
    let truth_e = read_endmembers_csv(&a.truth_dir.join("endmembers.csv"))?;
    let truth_a = AbundanceMap::from_cube(&load_cube(&a.truth_dir.join("abundances.ftc"))?);
    let log = read_artifact_log(&a.truth_dir.join("artifacts.txt"))?;
    let contaminated: Vec<usize> = log.iter().map(|&(b, _)| b).collect();

    let est_e = endmembers(&params, &cfg);
    let est_a = infer_abundances(&params, &cfg, &cube)?;
    let mut report = String::new();
    let mut summary: Vec<(String, String)> = Vec::new();
    let mut kv = |k: &str, v: String| summary.push((k.to_string(), v));
    kv("k", cfg.endmembers.to_string());
    if cfg.endmembers == truth_e.endmembers {
        let mr = match_endmembers(&est_e, &truth_e)?;
        let rmse = abundance_rmse(&est_a, &truth_a, &mr.permutation)?;
        writeln!(report, "endmember matching (estimated -> true, SAD rad):")?;
        for (i, (&j, s)) in mr.permutation.iter().zip(&mr.sad).enumerate() {
            writeln!(report, "  {i} -> {j}  {s:.6}")?;
        }
        writeln!(report, "mean SAD {:.6} rad", mr.mean_sad)?;
        writeln!(report, "abundance RMSE {rmse:.6}")?;
        kv("mean_sad", format!("{:.9}", mr.mean_sad));
        kv("abundance_rmse", format!("{rmse:.9}"));
        kv(
            "permutation",
            mr.permutation
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        if !contaminated.is_empty() {
            let bad = matched_sad_on_bands(&est_e, &truth_e, &mr.permutation, &contaminated)?;
            let good = matched_sad_on_bands(
                &est_e,
                &truth_e,
                &mr.permutation,
                &clean_bands(cfg.bands, &contaminated),
            )?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            writeln!(
                report,
                "mean SAD on contaminated bands {:.6} rad",
                mean(&bad)
            )?;
            writeln!(report, "mean SAD on clean bands {:.6} rad", mean(&good))?;
            kv("contaminated_sad", format!("{:.9}", mean(&bad)));
            kv("clean_sad", format!("{:.9}", mean(&good)));
        }
    } else {
        let (assign, sad) = match_endmembers_partial(&est_e, &truth_e)?;
        let mean = sad.iter().sum::<f64>() / sad.len() as f64;
        writeln!(
            report,
            "K = {} against {} true endmembers; best {}-subset mean SAD {mean:.6} rad",
            cfg.endmembers,
            truth_e.endmembers,
            sad.len()
        )?;
        for (i, a) in assign.iter().enumerate() {
            match a {
                Some(j) => writeln!(report, "  {i} -> {j}")?,
                None => writeln!(report, "  {i} unmatched")?,
            }
        }
        kv("subset_mean_sad", format!("{mean:.9}"));
    }
    if let Some(wp) = &a.weights {
        let w =
            read_weights_csv(wp).with_context(|| format!("reading weights {}", wp.display()))?;
        let d = weight_detection_report(&w, &contaminated)?;
        writeln!(
            report,
            "band detection at w < 0.5: precision {:.3}, recall {:.3} (tp {}, fp {}, fn {}, spillover {})",
            d.precision, d.recall, d.true_positives, d.false_positives, d.false_negatives, d.ignored
        )?;
        kv("detection_precision", format!("{:.6}", d.precision));
        kv("detection_recall", format!("{:.6}", d.recall));
    }
    ensure_dir(&a.out_dir)?;
    let report_path = a.out_dir.join("report.txt");
    let summary_path = a.out_dir.join("summary.txt");
    fs::write(&report_path, &report)?;
    let kv_text: String = summary.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(&summary_path, &kv_text)?;
    print!("{report}");
    let mut m = RunManifest::new("eval", config_json(a), None);
    m.input("checkpoint", &a.checkpoint)
        .input("cube", &a.cube)
        .input("truth_dir", &a.truth_dir);
    if let Some(w) = &a.weights {
        m.input("weights", w);
    }
    m.output(&report_path).output(&summary_path);
    finish(m, start, &a.out_dir.join("eval.manifest.json"))
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let start = Instant::now();
    let losses: &[LossKind] = match a.loss {
        GradLoss::Sad => &[LossKind::Sad],
        GradLoss::Wsad => &[LossKind::Wsad],
        GradLoss::Both => &[LossKind::Sad, LossKind::Wsad],
    };
    let mut worst: f64 = 0.0;
    for &loss in losses {
        let mut gc = GradCheckConfig::small(loss, a.seed);
        gc.model = ModelConfig::new(a.bands, a.k);
        gc.model.patch = a.patch_size;
        gc.model.hidden = a.hidden;
        gc.batch = a.batch;
        gc.step = a.step;
        gc.bn = a.bn.into();
        let r = gradient_check(&gc)?;
        let name = if loss == LossKind::Sad { "sad" } else { "wsad" };
        println!(
            "loss={name} max_rel_err={:.3e} worst={}[{}]",
            r.max_relative_error, r.worst_tensor, r.worst_index
        );
        worst = worst.max(r.max_relative_error);
    }
    if let Some(dir) = &a.out_dir {
        ensure_dir(dir)?;
        finish(
            RunManifest::new("gradcheck", config_json(a), Some(a.seed)),
            start,
            &dir.join("gradcheck.manifest.json"),
        )?;
    }
    if worst.is_nan() || worst >= a.tolerance {
        return Err(ToleranceExceeded(format!(
            "max relative error {worst:.3e} is not below {:.1e}",
            a.tolerance
        ))
        .into());
    }
    Ok(())
}

fn ksweep(a: &KsweepArgs) -> Result<()> {
    let start = Instant::now();
    if a.k_min < 2 || a.k_max < a.k_min {
        return Err(UsageError(format!("invalid K range {}..={}", a.k_min, a.k_max)).into());
    }
    let cube = load_cube(&a.cube)?;
    ensure_dir(&a.out_dir)?;
    let mut m = RunManifest::new("ksweep", config_json(a), Some(a.train.seed));
    m.input("cube", &a.cube);
    let weights = match (a.train.loss, &a.train.weights) {
        (LossArg::Wsad, None) => {
            let bw = estimate_band_weights(&cube, &Default::default())?;
            let p = a.out_dir.join("weights.csv");
            write_weights_csv(&bw, cube.wavenumbers(), &p)?;
            m.output(&p);
            Some(bw.w)
        }
        _ => band_weights_for(&a.train, cube.bands())?,
    };
    let truth = match &a.truth_dir {
        Some(t) => {
            m.input("truth_dir", t);
            Some(read_endmembers_csv(&t.join("endmembers.csv"))?)
        }
        None => None,
    };
    let mut summary = String::new();
    for k in a.k_min..=a.k_max {
        let dir = a.out_dir.join(format!("K{k:02}"));
        let (mcfg, params, hist) = fit(&cube, k, &a.train, weights.as_deref(), &format!("K={k} "))?;
        ensure_dir(&dir)?;
        let ck = dir.join("checkpoint.ftck");
        save_checkpoint(&mcfg, &params, &ck)?;
        m.output(&ck);
        export_products(&dir, &mcfg, &params, &cube, &mut m)?;
        write!(summary, "k={k} final_loss={:.9}", hist.final_loss)?;
        if let Some(t) = &truth {
            let (_, sad) = match_endmembers_partial(&endmembers(&params, &mcfg), t)?;
            write!(
                summary,
                " matched_sad={:.9}",
                sad.iter().sum::<f64>() / sad.len() as f64
            )?;
        }
        summary.push('\n');
    }
    let sp = a.out_dir.join("ksweep_summary.txt");
    fs::write(&sp, &summary)?;
    m.output(&sp);
    print!("{summary}");
    finish(m, start, &a.out_dir.join("ksweep.manifest.json"))
}
