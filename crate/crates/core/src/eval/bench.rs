use std::fmt::Write as _;
use std::time::Duration;

use crate::analysis::complexity::model_complexity;
use crate::detect::{detect, same_detection_set, Detection, Image, PhaseTimes, Thresholds};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::reparam::Reparameterize;

pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_RUNS: usize = 100;

/// Mean and median of one timed quantity, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseStats {
    pub mean: f64,
    pub median: f64,
    /// Sum over every timed call, in nanoseconds.
    pub total_ns: u128,
}

impl PhaseStats {
    fn from_samples(samples: &[Duration]) -> Self {
        let total_ns: u128 = samples.iter().map(Duration::as_nanos).sum();
        let mut secs: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
        secs.sort_by(f64::total_cmp);
        let n = secs.len();
        let median = if n == 0 {
            0.0
        } else if n % 2 == 1 {
            secs[n / 2]
        } else {
            (secs[n / 2 - 1] + secs[n / 2]) / 2.0
        };
        PhaseStats {
            mean: total_ns as f64 / 1e9 / n.max(1) as f64,
            median,
            total_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub mode: &'static str,
    pub images: usize,
    pub runs: usize,
    pub preprocess: PhaseStats,
    pub forward: PhaseStats,
    pub postprocess: PhaseStats,
    /// Per-image end-to-end latency (sum of the three phases).
    pub total: PhaseStats,
    /// Images per second over all timed runs.
    pub fps: f64,
    /// Standard deviation over mean of the per-image latency.
    pub cv: f64,
    /// Every run produced the same detections as the first.
    pub deterministic: bool,
    pub flops: u64,
}

fn run_pinned<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::State(format!("cannot build benchmark thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Times `detect` on every image `runs` times after `warmup` untimed
/// passes, on a single worker thread.
pub fn fps_benchmark(m: &Model, images: &[Image], warmup: usize, runs: usize, thresholds: Thresholds) -> Result<BenchReport> {
    if runs == 0 {
        return Err(Error::Precondition("benchmark needs at least one run".into()));
    }
    if images.is_empty() {
        return Err(Error::Precondition("benchmark needs at least one image".into()));
    }
    let flops = model_complexity(m)?.flops;
    run_pinned(|| -> Result<BenchReport> {
        for _ in 0..warmup {
            for img in images {
                detect(m, img, thresholds)?;
            }
        }
        let mut times: Vec<PhaseTimes> = Vec::with_capacity(runs * images.len());
        let mut first: Vec<Vec<Detection>> = Vec::new();
        let mut deterministic = true;
        for run in 0..runs {
            for (i, img) in images.iter().enumerate() {
                let out = detect(m, img, thresholds)?;
                times.push(out.times);
                if run == 0 {
                    first.push(out.detections);
                } else {
                    deterministic &= out.detections == first[i];
                }
            }
        }
        let col = |f: fn(&PhaseTimes) -> Duration| times.iter().map(f).collect::<Vec<_>>();
        let total = PhaseStats::from_samples(&col(PhaseTimes::total));
        let var = times
            .iter()
            .map(|t| (t.total().as_secs_f64() - total.mean).powi(2))
            .sum::<f64>()
            / times.len() as f64;
        Ok(BenchReport {
            mode: m.mode().as_str(),
            images: images.len(),
            runs,
            preprocess: PhaseStats::from_samples(&col(|t| t.preprocess)),
            forward: PhaseStats::from_samples(&col(|t| t.forward)),
            postprocess: PhaseStats::from_samples(&col(|t| t.postprocess)),
            fps: times.len() as f64 / (total.total_ns as f64 / 1e9),
            cv: if total.mean > 0.0 { var.sqrt() / total.mean } else { 0.0 },
            total,
            deterministic,
            flops,
        })
    })?
}

/// Train-mode and deployed-mode benchmark rows side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchComparison {
    pub train: BenchReport,
    pub deployed: BenchReport,
    /// Deployed FPS over train FPS; informational only.
    pub speed_ratio: f64,
    /// Both modes returned the same detection sets on every image.
    pub outputs_agree: bool,
}

impl BenchComparison {
    pub fn run(train: &Model, images: &[Image], warmup: usize, runs: usize, thresholds: Thresholds) -> Result<Self> {
        let deployed = train.to_deployed()?;
        let agree = images.iter().try_fold(true, |acc, img| -> Result<bool> {
            let a = detect(train, img, thresholds)?.detections;
            let b = detect(&deployed, img, thresholds)?.detections;
            Ok(acc && same_detection_set(&a, &b, 0.5))
        })?;
        let train_row = fps_benchmark(train, images, warmup, runs, thresholds)?;
        let deployed_row = fps_benchmark(&deployed, images, warmup, runs, thresholds)?;
        Ok(BenchComparison {
            speed_ratio: deployed_row.fps / train_row.fps,
            train: train_row,
            deployed: deployed_row,
            outputs_agree: agree,
        })
    }

    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        for r in [&self.train, &self.deployed] {
            let m = r.mode;
            for (phase, s) in [
                ("preprocess", r.preprocess),
                ("forward", r.forward),
                ("postprocess", r.postprocess),
                ("total", r.total),
            ] {
                rows.push((format!("{m}.{phase}.mean_s"), s.mean));
                rows.push((format!("{m}.{phase}.median_s"), s.median));
            }
            rows.push((format!("{m}.fps"), r.fps));
            rows.push((format!("{m}.cv"), r.cv));
            rows.push((format!("{m}.flops"), r.flops as f64));
        }
        rows.push(("speed_ratio".into(), self.speed_ratio));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<9} {:>12} {:>12} {:>12} {:>12} {:>9} {:>7} {:>14}",
            "mode", "preprocess", "forward", "postprocess", "total", "FPS", "CV", "FLOPs"
        );
        for r in [&self.train, &self.deployed] {
            let _ = writeln!(
                out,
                "{:<9} {:>10.3}ms {:>10.3}ms {:>10.3}ms {:>10.3}ms {:>9.2} {:>7.3} {:>14}",
                r.mode,
                r.preprocess.mean * 1e3,
                r.forward.mean * 1e3,
                r.postprocess.mean * 1e3,
                r.total.mean * 1e3,
                r.fps,
                r.cv,
                r.flops
            );
        }
        let _ = writeln!(out, "deployed/train speed ratio {:.3} (informational)", self.speed_ratio);
        if !self.outputs_agree {
            let _ = writeln!(out, "warning: train and deployed detections differ");
        }
        if !(self.train.deterministic && self.deployed.deterministic) {
            let _ = writeln!(out, "warning: repeated runs produced different detections");
        }
        out
    }
}
