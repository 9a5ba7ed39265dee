//! DAVIS-style evaluation: region similarity J (Jaccard/IoU) and boundary
//! accuracy F, each reported as a mean / recall / decay triple, aggregated
//! per sequence and then per dataset.

use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::datasets::{normalize_flow, pad_flow_channels, DataError, DatasetHandle};
use crate::model::SegModel;
use crate::nn::Map;
use crate::ShapeError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no frames to aggregate")]
    EmptyInput,
    #[error("no ground truth available for sequences: {}", sequences.join(", "))]
    MissingGroundTruth { sequences: Vec<String> },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Scores for one evaluated frame; both metrics live in [0, 1].
#[derive(Debug, Clone, Serialize)]
pub struct FrameScore {
    pub sequence_id: String,
    pub frame_index: usize,
    pub j: f64,
    pub f: f64,
}

/// The mean / recall / decay triple used for both J and F.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreStats {
    /// Mean of per-sequence means.
    pub mean: f64,
    /// Fraction of frames scoring strictly above the recall threshold.
    pub recall: f64,
    /// Mean over sequences of (first temporal quartile − last temporal
    /// quartile); positive values mean quality degrades over time.
    pub decay: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceScore {
    pub id: String,
    pub frames: usize,
    pub j_mean: f64,
    pub f_mean: f64,
}

/// Dataset-level evaluation artifact.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Architecture fingerprint of the evaluated model.
    pub fingerprint: String,
    pub frames_evaluated: usize,
    pub per_sequence: Vec<SequenceScore>,
    pub j: ScoreStats,
    pub f: ScoreStats,
}

/// Evaluation knobs; every defaulted value is surfaced here rather than
/// buried in the scoring code.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Binarization threshold for predicted probabilities.
    pub threshold: f32,
    /// Boundary match tolerance in pixels; `None` derives
    /// ceil(0.0075 · image diagonal) per frame.
    pub tol_radius: Option<f64>,
    /// Recall counts frames scoring strictly above this value.
    pub recall_threshold: f64,
    /// Divisor applied to raw flow before it enters the model; must match
    /// the value used in training.
    pub flow_scale: f32,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { threshold: 0.5, tol_radius: None, recall_threshold: 0.5, flow_scale: 2.4 }
    }
}

/// Thresholds a probability map into a {0, 1} mask. Strictly greater-than:
/// a pixel exactly at the threshold stays background.
pub fn binarize(prob: &Map<f32>, threshold: f32) -> Map<f32> {
    prob.mapv(|v| if v > threshold { 1.0 } else { 0.0 })
}

fn check_shapes(pred: &Map<f32>, gt: &Map<f32>) -> Result<(), ShapeError> {
    if pred.dim() != gt.dim() {
        return Err(ShapeError::new(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    Ok(())
}

/// Region similarity: |pred ∩ gt| / |pred ∪ gt|, defined as 1 when both
/// masks are empty. Values above 0.5 count as foreground.
pub fn jaccard(pred: &Map<f32>, gt: &Map<f32>) -> Result<f64, ShapeError> {
    check_shapes(pred, gt)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (p, g) in pred.iter().zip(gt.iter()) {
        let (p, g) = (*p > 0.5, *g > 0.5);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Marks boundary pixels: foreground whose 4-neighborhood touches
/// background or the image edge.
fn boundary(mask: &Map<f32>) -> Array2<bool> {
    let (h, w, _) = mask.dim();
    let fg = |y: isize, x: isize| -> bool {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            return false;
        }
        mask[(y as usize, x as usize, 0)] > 0.5
    };
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (yi, xi) = (y as isize, x as isize);
        fg(yi, xi) && (!fg(yi - 1, xi) || !fg(yi + 1, xi) || !fg(yi, xi - 1) || !fg(yi, xi + 1))
    })
}

/// One pass of the exact 1-D squared-distance transform (lower envelope of
/// parabolas rooted at the seed costs).
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n]; // parabola roots
    let mut z = vec![0.0f64; n + 1]; // envelope breakpoints
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if !f[q].is_finite() && f[q] > 0.0 {
            // Infinite cost never wins the envelope; skip it to avoid
            // inf − inf when intersecting parabolas.
            continue;
        }
        loop {
            let p = v[k];
            let denom = 2.0 * (q as f64 - p as f64);
            let s = if f[p].is_finite() {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / denom
            } else {
                f64::NEG_INFINITY
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    // Indexing is the canonical statement of the readout pass; iterators
    // would obscure the parabola bookkeeping.
    #[allow(clippy::needless_range_loop)]
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

/// Exact squared Euclidean distance from every grid cell to the nearest
/// seed; cells in a seedless grid are all infinitely far.
fn squared_distance_transform(seeds: &Array2<bool>) -> Array2<f64> {
    let (h, w) = seeds.dim();
    let mut dist = Array2::from_shape_fn((h, w), |(y, x)| {
        if seeds[(y, x)] {
            0.0
        } else {
            f64::INFINITY
        }
    });
    let mut col = vec![0.0; h];
    let mut out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = dist[(y, x)];
        }
        dt_1d(&col, &mut out);
        for y in 0..h {
            dist[(y, x)] = out[y];
        }
    }
    let mut row = vec![0.0; w];
    let mut out = vec![0.0; w];
    for y in 0..h {
        for x in 0..w {
            row[x] = dist[(y, x)];
        }
        dt_1d(&row, &mut out);
        for x in 0..w {
            dist[(y, x)] = out[x];
        }
    }
    dist
}

/// Boundary accuracy: precision/recall of 1-pixel contours matched within
/// `tol_radius` (Euclidean), combined as 2PR/(P+R). Both contours empty
/// gives 1; exactly one empty gives 0.
pub fn f_measure(pred: &Map<f32>, gt: &Map<f32>, tol_radius: f64) -> Result<f64, ShapeError> {
    check_shapes(pred, gt)?;
    let bp = boundary(pred);
    let bg = boundary(gt);
    let np = bp.iter().filter(|&&b| b).count();
    let ng = bg.iter().filter(|&&b| b).count();
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let tol2 = tol_radius * tol_radius;
    let matched = |of: &Array2<bool>, against: &Array2<bool>| -> f64 {
        let dist = squared_distance_transform(against);
        let mut hits = 0usize;
        let mut total = 0usize;
        for (idx, &b) in of.indexed_iter() {
            if b {
                total += 1;
                hits += usize::from(dist[idx] <= tol2);
            }
        }
        hits as f64 / total as f64
    };
    let precision = matched(&bp, &bg);
    let recall = matched(&bg, &bp);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Default boundary tolerance for an `h`×`w` frame.
pub fn default_tol_radius(h: usize, w: usize) -> f64 {
    (0.0075 * ((h * h + w * w) as f64).sqrt()).ceil()
}

/// Scores one predicted probability map against ground truth.
pub fn score_frame(
    prob: &Map<f32>,
    gt: &Map<f32>,
    opts: &EvalOptions,
) -> Result<(f64, f64), ShapeError> {
    let pred = binarize(prob, opts.threshold);
    let (h, w, _) = gt.dim();
    let tol = opts.tol_radius.unwrap_or_else(|| default_tol_radius(h, w));
    Ok((jaccard(&pred, gt)?, f_measure(&pred, gt, tol)?))
}

/// Groups frames by sequence, preserving first-appearance order and frame
/// order within each sequence.
fn group_by_sequence(frames: &[FrameScore]) -> Vec<(String, Vec<&FrameScore>)> {
    let mut groups: Vec<(String, Vec<&FrameScore>)> = Vec::new();
    for frame in frames {
        match groups.iter_mut().find(|(id, _)| *id == frame.sequence_id) {
            Some((_, list)) => list.push(frame),
            None => groups.push((frame.sequence_id.clone(), vec![frame])),
        }
    }
    for (_, list) in &mut groups {
        list.sort_by_key(|f| f.frame_index);
    }
    groups
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// First-quartile mean minus last-quartile mean for one ordered score
/// series; sequences shorter than 4 frames have no meaningful quartiles
/// and report 0. The two windows have equal width, so reversing the
/// sequence exactly negates the decay.
fn sequence_decay(scores: &[f64]) -> f64 {
    let n = scores.len();
    if n < 4 {
        return 0.0;
    }
    let q = ((n as f64 / 4.0).round() as usize).max(1);
    mean(&scores[..q]) - mean(&scores[n - q..])
}

fn statistics(
    frames: &[FrameScore],
    pick: impl Fn(&FrameScore) -> f64,
    recall_threshold: f64,
) -> Result<ScoreStats, EvalError> {
    if frames.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let groups = group_by_sequence(frames);
    let per_seq: Vec<Vec<f64>> =
        groups.iter().map(|(_, list)| list.iter().map(|f| pick(f)).collect()).collect();
    let seq_means: Vec<f64> = per_seq.iter().map(|s| mean(s)).collect();
    let above = frames.iter().filter(|f| pick(f) > recall_threshold).count();
    let decays: Vec<f64> = per_seq.iter().map(|s| sequence_decay(s)).collect();
    Ok(ScoreStats {
        mean: mean(&seq_means),
        recall: above as f64 / frames.len() as f64,
        decay: mean(&decays),
    })
}

/// Mean / recall / decay for the J scores of a frame set.
pub fn j_statistics(frames: &[FrameScore], recall_threshold: f64) -> Result<ScoreStats, EvalError> {
    statistics(frames, |f| f.j, recall_threshold)
}

/// Mean / recall / decay for the F scores of a frame set.
pub fn f_statistics(frames: &[FrameScore], recall_threshold: f64) -> Result<ScoreStats, EvalError> {
    statistics(frames, |f| f.f, recall_threshold)
}

/// Aggregates already-scored frames into a report.
pub fn aggregate(
    frames: &[FrameScore],
    fingerprint: &str,
    recall_threshold: f64,
) -> Result<EvalReport, EvalError> {
    let j = j_statistics(frames, recall_threshold)?;
    let f = f_statistics(frames, recall_threshold)?;
    let per_sequence = group_by_sequence(frames)
        .into_iter()
        .map(|(id, list)| SequenceScore {
            id,
            frames: list.len(),
            j_mean: mean(&list.iter().map(|s| s.j).collect::<Vec<_>>()),
            f_mean: mean(&list.iter().map(|s| s.f).collect::<Vec<_>>()),
        })
        .collect();
    Ok(EvalReport {
        fingerprint: fingerprint.to_string(),
        frames_evaluated: frames.len(),
        per_sequence,
        j,
        f,
    })
}

/// Runs a frozen model over every annotated frame of a dataset and
/// aggregates per sequence, then per dataset. Sequences without any
/// annotated frame cannot be scored and abort the evaluation.
pub fn evaluate_dataset(
    model: &SegModel<f32>,
    dataset: &DatasetHandle,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let mut missing = Vec::new();
    let mut frames = Vec::new();
    for (si, seq) in dataset.sequences.iter().enumerate() {
        let annotated: Vec<usize> = (0..seq.frames.len())
            .filter(|&fi| seq.frames[fi].mask.is_some())
            .collect();
        if annotated.is_empty() {
            missing.push(seq.id.clone());
            continue;
        }
        for fi in annotated {
            let sample = dataset.load_sample(si, fi)?;
            let gt = sample.mask.as_ref().expect("annotated frame has a mask");
            let flow = pad_flow_channels(&normalize_flow(&sample.flow, opts.flow_scale));
            let prob = model.segment(&sample.image, &flow)?;
            let (j, f) = score_frame(&prob, gt, opts)?;
            frames.push(FrameScore {
                sequence_id: seq.id.clone(),
                frame_index: sample.frame_index,
                j,
                f,
            });
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::MissingGroundTruth { sequences: missing });
    }
    aggregate(&frames, &model.config.fingerprint(), opts.recall_threshold)
}

impl EvalReport {
    /// Per-sequence table as CSV with a stable column order.
    pub fn per_sequence_csv(&self) -> String {
        let mut out = String::from("sequence,frames,j_mean,f_mean\n");
        for row in &self.per_sequence {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                row.id, row.frames, row.j_mean, row.f_mean
            ));
        }
        out
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("frames evaluated: {}\n", self.frames_evaluated));
        out.push_str(&format!("model fingerprint: {}\n", self.fingerprint));
        out.push_str("metric      mean    recall   decay\n");
        out.push_str(&format!(
            "J         {:6.4}   {:6.4}  {:+6.4}\n",
            self.j.mean, self.j.recall, self.j.decay
        ));
        out.push_str(&format!(
            "F         {:6.4}   {:6.4}  {:+6.4}\n",
            self.f.mean, self.f.recall, self.f.decay
        ));
        out.push_str("\nsequence                    frames   J mean   F mean\n");
        for row in &self.per_sequence {
            out.push_str(&format!(
                "{:<28}{:>6}   {:6.4}   {:6.4}\n",
                row.id, row.frames, row.j_mean, row.f_mean
            ));
        }
        out
    }
}
