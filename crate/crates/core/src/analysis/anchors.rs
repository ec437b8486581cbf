//! Anchor sets and K-means anchor regeneration from labelled boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::labels::LabelBox;
use crate::bbox::iou_wh;
use crate::error::{Error, Result};

/// Anchors per detection head.
pub const ANCHORS_PER_HEAD: usize = 2;
/// Total anchors across both heads.
pub const ANCHOR_COUNT: usize = 4;

pub const MAX_KMEANS_ITERATIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub w: f32,
    pub h: f32,
}

impl Anchor {
    pub const fn new(w: f32, h: f32) -> Self {
        Anchor { w, h }
    }

    pub fn area(&self) -> f32 {
        self.w * self.h
    }
}

/// Four anchors sorted by ascending area. The two smallest serve the
/// stride-16 head, the two largest the stride-32 head.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: [Anchor; ANCHOR_COUNT],
}

impl Default for AnchorSet {
    /// Reference anchor sizes for 640-pixel inputs.
    fn default() -> Self {
        AnchorSet {
            anchors: [
                Anchor::new(87.0, 90.0),
                Anchor::new(127.0, 139.0),
                Anchor::new(154.0, 171.0),
                Anchor::new(191.0, 240.0),
            ],
        }
    }
}

impl AnchorSet {
    /// Validates and sorts by area.
    pub fn new(anchors: &[Anchor]) -> Result<Self> {
        if anchors.len() != ANCHOR_COUNT {
            return Err(Error::config(
                "anchors",
                format!("expected exactly {ANCHOR_COUNT} anchors, got {}", anchors.len()),
            ));
        }
        if let Some(a) = anchors.iter().find(|a| !(a.w > 0.0 && a.h > 0.0)) {
            return Err(Error::config("anchors", format!("anchor sizes must be positive, got {a:?}")));
        }
        let mut sorted = [anchors[0], anchors[1], anchors[2], anchors[3]];
        sort_by_area(&mut sorted);
        Ok(AnchorSet { anchors: sorted })
    }

    pub fn as_slice(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Anchors assigned to head `head` (0 = stride 16, 1 = stride 32).
    pub fn for_head(&self, head: usize) -> &[Anchor] {
        &self.anchors[head * ANCHORS_PER_HEAD..(head + 1) * ANCHORS_PER_HEAD]
    }
}

fn sort_by_area(anchors: &mut [Anchor]) {
    anchors.sort_by(|a, b| a.area().total_cmp(&b.area()).then(a.w.total_cmp(&b.w)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorMetric {
    /// `1 - IoU` between co-centred boxes.
    #[default]
    Iou,
    /// Squared Euclidean distance in `(w, h)` pixel space.
    Euclidean,
}

impl AnchorMetric {
    fn distance(self, p: (f64, f64), c: (f64, f64)) -> f64 {
        match self {
            AnchorMetric::Iou => 1.0 - iou_wh(p, c),
            AnchorMetric::Euclidean => (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    /// Centroids sorted by ascending area.
    pub anchors: Vec<Anchor>,
    /// Mean point-to-centroid distance after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when centroids collapsed onto each other (e.g. a corpus of
    /// identical boxes) and could not be separated.
    pub degenerate: bool,
}

impl KMeansOutcome {
    pub fn anchor_set(&self) -> Result<AnchorSet> {
        AnchorSet::new(&self.anchors)
    }
}

fn assign(points: &[(f64, f64)], centroids: &[(f64, f64)], metric: AnchorMetric) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    for &p in points {
        let mut best = (0, f64::INFINITY);
        for (j, &c) in centroids.iter().enumerate() {
            let d = metric.distance(p, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        labels.push(best.0);
        dists.push(best.1);
    }
    (labels, dists)
}

fn cluster_cost(points: &[(f64, f64)], labels: &[usize], j: usize, c: (f64, f64), metric: AnchorMetric) -> f64 {
    points
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == j)
        .map(|(&p, _)| metric.distance(p, c))
        .sum()
}

fn seed_centroids(points: &[(f64, f64)], k: usize, metric: AnchorMetric, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|&p| {
                let d = centroids.iter().map(|&c| metric.distance(p, c)).fold(f64::INFINITY, f64::min);
                d * d
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[idx]);
    }
    centroids
}

/// Lloyd iterations over label box sizes scaled to `input_size` pixels.
///
/// Initialization is k-means++ under the chosen metric, seeded from `seed`.
/// The update step moves a centroid to its cluster mean only when that does
/// not raise the cluster's cost, so the objective never increases. An empty
/// cluster is re-seeded at the point farthest from its current centroid.
pub fn kmeans_anchors(
    boxes: &[LabelBox],
    k: usize,
    input_size: u32,
    seed: u64,
    metric: AnchorMetric,
) -> Result<KMeansOutcome> {
    if k == 0 {
        return Err(Error::Input("k must be >= 1".into()));
    }
    if boxes.len() < k {
        return Err(Error::Input(format!(
            "need at least {k} boxes to fit {k} anchors, got {}",
            boxes.len()
        )));
    }
    for b in boxes {
        b.validate()?;
    }
    let size = input_size as f64;
    let points: Vec<(f64, f64)> = boxes.iter().map(|b| (b.w as f64 * size, b.h as f64 * size)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&points, k, metric, &mut rng);

    let (mut labels, dists) = assign(&points, &centroids, metric);
    let mut objective = vec![dists.iter().sum::<f64>() / points.len() as f64];
    let mut dists = dists;
    let mut converged = false;
    let mut degenerate = false;
    let mut iterations = 0;

    while iterations < MAX_KMEANS_ITERATIONS {
        iterations += 1;
        let mut reseeded = false;
        for j in 0..k {
            if labels.contains(&j) {
                continue;
            }
            // farthest point from its own centroid; ties go to the lowest index
            let (far, far_d) = dists
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
            if far_d > 0.0 {
                centroids[j] = points[far];
                dists[far] = 0.0;
                reseeded = true;
            } else {
                degenerate = true;
            }
        }

        for (j, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == j)
                .map(|(&p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            let n = members.len() as f64;
            let mean = (
                members.iter().map(|p| p.0).sum::<f64>() / n,
                members.iter().map(|p| p.1).sum::<f64>() / n,
            );
            if cluster_cost(&points, &labels, j, mean, metric) <= cluster_cost(&points, &labels, j, *centroid, metric) {
                *centroid = mean;
            }
        }

        let (new_labels, new_dists) = assign(&points, &centroids, metric);
        objective.push(new_dists.iter().sum::<f64>() / points.len() as f64);
        let stable = new_labels == labels;
        labels = new_labels;
        dists = new_dists;
        if stable && !reseeded {
            converged = true;
            break;
        }
    }

    let mut anchors: Vec<Anchor> = centroids.iter().map(|&(w, h)| Anchor::new(w as f32, h as f32)).collect();
    sort_by_area(&mut anchors);
    if anchors.windows(2).any(|p| p[0] == p[1]) {
        degenerate = true;
    }
    Ok(KMeansOutcome {
        anchors,
        objective,
        iterations,
        converged,
        degenerate,
    })
}
