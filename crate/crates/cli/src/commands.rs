use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use rcsnet::analysis::complexity::{compare_osa_elan, flops, mac, model_complexity, ComplexityReport, LayerCost, LayerSpec};
use rcsnet::analysis::labels::{read_label_file, read_labels_dir};
use rcsnet::analysis::kmeans_anchors;
use rcsnet::detect::{detect, format_detections, read_pnm, Detection, Image, Thresholds};
use rcsnet::eval::{evaluate, fps_benchmark, BenchComparison, EvalConfig, GroundTruth, ImageEval};
use rcsnet::model::{build_model, compare_modes, load_weights, save_weights, Model, ModelConfig};
use rcsnet::reparam::{Mode, Reparameterize};

use crate::{Cli, Command, ModelArgs, ThresholdArgs};

pub const EXIT_FAILED_CHECK: u8 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] rcsnet::Error),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: rcsnet::Error },
}

trait PathContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> PathContext<T> for rcsnet::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| CliError::File {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl CliError {
    /// 2 for misuse (bad flags, wrong model state), 3 for unreadable or
    /// malformed files.
    pub fn code(&self) -> u8 {
        use rcsnet::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(E::Precondition(_) | E::State(_)) => 2,
            CliError::Lib(_) | CliError::File { .. } => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// What a successful command prints and which exit status it ends with.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub warnings: Vec<String>,
    pub code: u8,
}

impl Outcome {
    fn text(stdout: String) -> Self {
        Outcome {
            stdout,
            ..Self::default()
        }
    }
}

/// Applies `RCSNET_THREADS` to the global rayon pool.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("RCSNET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("RCSNET_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    Ok(match path {
        Some(p) => ModelConfig::load(p).at(p)?,
        None => ModelConfig::nano(),
    })
}

fn load_model(args: &ModelArgs) -> Result<Model> {
    let cfg = load_config(args.config.as_deref())?;
    Ok(match &args.weights {
        Some(p) => load_weights(&cfg, p).at(p)?,
        None => build_model(&cfg, args.seed)?,
    })
}

fn thresholds(t: ThresholdArgs) -> Result<Thresholds> {
    let t = Thresholds { conf: t.conf, iou: t.iou };
    t.validate()?;
    Ok(t)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(rcsnet::Error::from)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e, "ppm" | "pgm" | "pnm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(rcsnet::Error::Input(format!("no .ppm/.pgm/.pnm images in {}", dir.display())).into());
    }
    Ok(files)
}

fn stem_file(dir: &Path, image: &Path) -> PathBuf {
    let stem = image.file_stem().unwrap_or_default();
    dir.join(stem).with_extension("txt")
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Init {
            config,
            seed,
            weights_out,
        } => {
            let m = build_model(&load_config(config.as_deref())?, *seed)?;
            save_weights(&m, weights_out).at(weights_out)?;
            Ok(Outcome::text(format!(
                "wrote train-mode model ({} parameters) to {}\n",
                m.param_count(),
                weights_out.display()
            )))
        }
        Command::Fuse {
            config,
            weights_in,
            weights_out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let train = load_weights(&cfg, weights_in).at(weights_in)?;
            let deployed = train.to_deployed()?;
            save_weights(&deployed, weights_out).at(weights_out)?;
            let (a, b) = (train.param_count(), deployed.param_count());
            let out = if cli.csv {
                format!("mode,parameters\ntrain,{a}\ndeployed,{b}\n")
            } else {
                format!(
                    "parameters: train {a}, deployed {b} ({} fewer)\nwrote {}\n",
                    a as i64 - b as i64,
                    weights_out.display()
                )
            };
            Ok(Outcome::text(out))
        }
        Command::Verify {
            model,
            deployed,
            trials,
            tolerance,
        } => verify(cli.csv, model, deployed.as_deref(), *trials, *tolerance),
        Command::Flops {
            model,
            deployed,
            layer,
            paper_compare,
        } => flops_cmd(cli.csv, model, *deployed, layer.as_deref(), paper_compare.as_deref()),
        Command::Anchors {
            labels_dir,
            k,
            input_size,
            seed,
            metric,
        } => {
            let boxes = read_labels_dir(labels_dir).at(labels_dir)?;
            let fit = kmeans_anchors(&boxes, *k, *input_size, *seed, (*metric).into())?;
            let mut out = String::new();
            if cli.csv {
                out.push_str("index,width,height\n");
                for (i, a) in fit.anchors.iter().enumerate() {
                    let _ = writeln!(out, "{i},{:.3},{:.3}", a.w, a.h);
                }
            } else {
                let _ = writeln!(
                    out,
                    "{} anchors from {} boxes at input size {input_size} ({} iterations{})",
                    fit.anchors.len(),
                    boxes.len(),
                    fit.iterations,
                    if fit.converged { "" } else { ", not converged" }
                );
                for a in &fit.anchors {
                    let _ = writeln!(out, "{:.3} {:.3}", a.w, a.h);
                }
                if let Some(obj) = fit.objective.last() {
                    let _ = writeln!(out, "mean distance {obj:.6}");
                }
            }
            let mut outcome = Outcome::text(out);
            if fit.degenerate {
                outcome
                    .warnings
                    .push("anchors are degenerate: the corpus has fewer distinct box sizes than k".into());
            }
            Ok(outcome)
        }
        Command::Infer {
            model,
            image,
            thresholds: t,
        } => {
            let t = thresholds(*t)?;
            let m = load_model(model)?;
            let img = read_pnm(image).at(image)?;
            let dets = detect(&m, &img, t)?.detections;
            let out = if cli.csv {
                let mut s = String::from("class_id,cx,cy,w,h,confidence\n");
                for d in &dets {
                    s.push_str(&d.to_line().replace(' ', ","));
                    s.push('\n');
                }
                s
            } else {
                format_detections(&dets)
            };
            Ok(Outcome::text(out))
        }
        Command::Eval {
            model,
            images_dir,
            labels_dir,
            predictions_dir,
            thresholds: t,
            ap_mode,
            fps,
            min_ap50,
        } => {
            let t = thresholds(*t)?;
            let cfg = EvalConfig {
                conf_thresh: t.conf,
                ..EvalConfig::coco()
            };
            cfg.validate()?;
            let files = image_files(images_dir)?;
            let m = match predictions_dir {
                Some(_) => None,
                None => Some(load_model(model)?),
            };
            let mut images = Vec::with_capacity(files.len());
            let mut loaded = Vec::with_capacity(files.len());
            for f in &files {
                let img = read_pnm(f).at(f)?;
                let label_path = stem_file(labels_dir, f);
                let labels = if label_path.exists() {
                    read_label_file(&label_path).at(&label_path)?
                } else {
                    Vec::new()
                };
                let gts = labels.iter().map(|l| GroundTruth::from_label(l, img.width, img.height)).collect();
                let preds = match (&m, predictions_dir) {
                    (Some(m), _) => detect(m, &img, t)?.detections,
                    (None, Some(dir)) => read_predictions(&stem_file(dir, f), t.conf)?,
                    (None, None) => unreachable!("a model is loaded when no predictions are given"),
                };
                images.push(ImageEval { preds, gts });
                loaded.push(img);
            }
            let mut metrics = evaluate(&images, (*ap_mode).into());
            let hash = match &m {
                Some(m) => m.config().hash(),
                None => load_config(model.config.as_deref())?.hash(),
            };
            if *fps {
                let m = match m {
                    Some(m) => m,
                    None => load_model(model)?,
                };
                metrics.fps = Some(fps_benchmark(&m, &loaded, 1, 1, t)?.fps);
            }
            let assumptions = format!(
                "conf>={} nms_iou={} match_iou=0.50 (AP50:95 over 0.50:0.05:0.95) ap={:?}",
                t.conf, t.iou, ap_mode
            );
            let out = if cli.csv {
                metrics.to_csv(&hash, &assumptions)
            } else {
                metrics.to_text(&hash, &assumptions)
            };
            let mut outcome = Outcome::text(out);
            if let Some(min) = min_ap50 {
                if metrics.ap50.ap < *min {
                    outcome.warnings.push(format!("AP50 {:.6} below required {min}", metrics.ap50.ap));
                    outcome.code = EXIT_FAILED_CHECK;
                }
            }
            Ok(outcome)
        }
        Command::Bench {
            model,
            images_dir,
            runs,
            warmup,
            thresholds: t,
        } => {
            let t = thresholds(*t)?;
            let m = load_model(model)?;
            if m.mode() != Mode::Train {
                return Err(CliError::Usage(
                    "bench compares both modes and needs train-mode weights".into(),
                ));
            }
            let images = match images_dir {
                Some(dir) => image_files(dir)?.iter().map(|f| read_pnm(f).at(f)).collect::<Result<Vec<_>>>()?,
                None => vec![noise_image(m.config().input_size, model.seed)?],
            };
            let cmp = BenchComparison::run(&m, &images, *warmup, *runs, t)?;
            let mut outcome = Outcome::text(if cli.csv { cmp.to_csv() } else { cmp.to_text() });
            if cmp.speed_ratio < 1.0 {
                outcome
                    .warnings
                    .push(format!("deployed mode was slower than train mode (ratio {:.3})", cmp.speed_ratio));
            }
            Ok(outcome)
        }
    }
}

fn noise_image(size: usize, seed: u64) -> Result<Image> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..size * size * 3).map(|_| rng.gen()).collect();
    Ok(Image::new(size, size, pixels)?)
}

fn read_predictions(path: &Path, conf: f32) -> Result<Vec<Detection>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(rcsnet::Error::from).at(path)?;
    let mut dets = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let d = Detection::parse_line(line).at(path)?;
        if d.confidence >= conf {
            dets.push(d);
        }
    }
    Ok(dets)
}

fn verify(csv: bool, args: &ModelArgs, deployed: Option<&Path>, trials: usize, tolerance: f32) -> Result<Outcome> {
    if !(tolerance >= 0.0) {
        return Err(CliError::Usage(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let train = load_model(args)?;
    if train.mode() != Mode::Train {
        return Err(CliError::Usage(
            "--weights must hold a train-mode model; pass the fused file with --deployed".into(),
        ));
    }
    let fused = match deployed {
        Some(p) => load_weights(train.config(), p).at(p)?,
        None => train.to_deployed()?,
    };
    let e = compare_modes(&train, &fused, trials, args.seed)?;
    let pass = e.within(tolerance);
    let out = if csv {
        format!(
            "trials,max_deviation,mean_deviation,tolerance,pass\n{},{:e},{:e},{:e},{pass}\n",
            e.trials, e.max_dev, e.mean_dev, tolerance
        )
    } else {
        format!(
            "{} trials: max deviation {:e}, mean deviation {:e}, tolerance {:e}: {}\n",
            e.trials,
            e.max_dev,
            e.mean_dev,
            tolerance,
            if pass { "PASS" } else { "FAIL" }
        )
    };
    Ok(Outcome {
        stdout: out,
        warnings: Vec::new(),
        code: if pass { 0 } else { EXIT_FAILED_CHECK },
    })
}

fn flops_cmd(
    csv: bool,
    args: &ModelArgs,
    deployed: bool,
    layer: Option<&[u64]>,
    compare: Option<&[u64]>,
) -> Result<Outcome> {
    let render = |r: &ComplexityReport| if csv { r.to_csv() } else { r.to_text() };
    if let Some(&[m, k, c1, c2]) = layer {
        let spec = LayerSpec::new(m, k, c1, c2)?;
        let out = if csv {
            format!("flops,mac\n{},{}\n", flops(&spec), mac(&spec))
        } else {
            let r = ComplexityReport::from_layers(format!("conv M={m} K={k} C1={c1} C2={c2}"), vec![LayerCost::conv("conv", spec)]);
            render(&r)
        };
        return Ok(Outcome::text(out));
    }
    if let Some(&[c, m, n]) = compare {
        let n = usize::try_from(n).map_err(|_| CliError::Usage(format!("depth {n} too large")))?;
        let cmp = compare_osa_elan(c, m, n)?;
        return Ok(Outcome::text(if csv { cmp.to_csv() } else { cmp.to_text() }));
    }
    let mut model = load_model(args)?;
    if deployed && model.mode() == Mode::Train {
        model = model.to_deployed()?;
    }
    Ok(Outcome::text(render(&model_complexity(&model)?)))
}
