//! Evaluation: classification accuracy, VOC-style mAP@0.5 with greedy NMS,
//! attention entropy/coverage statistics, and occlusion sensitivity.
//! Every metric is a pure function of (checkpoint, dataset, config);
//! reported runtimes are informational only.

use std::time::Instant;

use serde::Serialize;

use crate::attention::gradcam_map;
use crate::boxes::{iou, BoxF};
use crate::config::TrainConfig;
use crate::detector::{decode_box, make_proposals, Model, Proposal, Task};
use crate::error::{Error, Result};
use crate::ops::softmax_rows;
use crate::rng::{stream, stream_rng};
use crate::synth::DetectionSample;
use crate::tensor::Tensor;
use crate::train::argmax_row;

/// NMS and matching threshold (VOC protocol at IoU 0.5).
pub const MATCH_IOU: f64 = 0.5;
/// Score floor for the detection-recall metric.
pub const RECALL_SCORE: f64 = 0.5;

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub n_samples: usize,
    pub n_objects: usize,
    /// Classification accuracy (classify mode).
    pub accuracy: Option<f64>,
    /// Per-class AP@0.5 (detect mode).
    pub per_class_ap: Option<Vec<f64>>,
    /// Mean AP over classes with ground truth (detect mode).
    pub map: Option<f64>,
    pub attention: AttentionStats,
    pub runtime_secs: f64,
    pub config_echo: String,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct AttentionStats {
    /// Mean normalized Shannon entropy of the per-object attention maps.
    pub mean_entropy: f64,
    /// Mean fraction of pixels holding 90% of the attention mass.
    pub mean_coverage_q90: f64,
    pub n_objects: usize,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OcclusionReport {
    pub patch_pixels: Option<usize>,
    pub patch_object_fraction: Option<f64>,
    /// Accuracy (classify) or recall (detect) on clean images.
    pub clean: f64,
    /// Same metric after occluding the highest-attention patch.
    pub occluded_max_attention: f64,
    /// Same metric after occluding the lowest-attention patch.
    pub occluded_min_attention: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum PatchSpec {
    Pixels(usize),
    /// Square patch with side = fraction * sqrt(object area).
    ObjectFraction(f64),
}

// ---------------------------------------------------------------------------
// attention maps of a trained model

/// Gradient-guided attention of a classifier at its final feature map, for
/// one image and one class probe.
pub fn classifier_attention(model: &Model, image: &Tensor, class: usize) -> Result<Tensor> {
    let shape = image.shape();
    let batch = image.reshaped(&[1, shape[0], shape[1], shape[2]])?;
    let (mut tape, h) = model.forward_classifier(&batch)?;
    let gathered = tape.gather_labels(h.logits, vec![class])?;
    let probe = tape.sum(gathered)?;
    let grad = tape.backward_to(probe, h.conv_feature)?;
    let fshape = tape.value(h.conv_feature).shape().to_vec();
    let chw = vec![fshape[1], fshape[2], fshape[3]];
    let features = Tensor::new(chw.clone(), tape.value(h.conv_feature).data().to_vec())?;
    let grads = Tensor::new(chw, grad.data().to_vec())?;
    Ok(gradcam_map(&features, &grads)?.m)
}

/// Gradient-guided attention of a detector at the pooled features of one
/// ROI, probed at `class`.
pub fn detector_roi_attention(
    model: &Model,
    image: &Tensor,
    roi: BoxF,
    class: usize,
) -> Result<Tensor> {
    let shape = image.shape();
    let batch = image.reshaped(&[1, shape[0], shape[1], shape[2]])?;
    let proposal = Proposal {
        bounds: roi,
        label: class,
        target: [0.0; 4],
        fg: true,
        gt_index: None,
    };
    let (mut tape, h) = model.forward_detector(&batch, &[proposal])?;
    let gathered = tape.gather_labels(h.logits, vec![class])?;
    let probe = tape.sum(gathered)?;
    let feature = h.roi_feature.expect("detector forward has pooled features");
    let grad = tape.backward_to(probe, feature)?;
    let fshape = tape.value(feature).shape().to_vec();
    let chw = vec![fshape[1], fshape[2], fshape[3]];
    let features = Tensor::new(chw.clone(), tape.value(feature).data().to_vec())?;
    let grads = Tensor::new(chw, grad.data().to_vec())?;
    Ok(gradcam_map(&features, &grads)?.m)
}

/// Attention map for one ground-truth object under either task.
fn object_attention(model: &Model, sample: &DetectionSample, obj: usize) -> Result<Tensor> {
    match model.task {
        Task::Classify => classifier_attention(model, &sample.image, sample.gt[obj].class),
        Task::Detect => detector_roi_attention(
            model,
            &sample.image,
            sample.gt[obj].bounds,
            sample.gt[obj].class,
        ),
    }
}

// ---------------------------------------------------------------------------
// attention statistics

/// Shifts the map to non-negative, normalizes to a distribution
/// (constant maps become uniform), and returns the probabilities.
pub fn attention_distribution(m: &Tensor) -> Vec<f64> {
    let lo = m.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = m.data().iter().map(|&v| v - lo).collect();
    let total: f64 = shifted.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / m.len() as f64; m.len()];
    }
    shifted.iter().map(|&v| v / total).collect()
}

/// Shannon entropy normalized by log(len), in [0, 1].
pub fn normalized_entropy(p: &[f64]) -> f64 {
    if p.len() <= 1 {
        return 1.0;
    }
    let h: f64 = p
        .iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum();
    h / (p.len() as f64).ln()
}

/// Fraction of pixels needed to reach mass `q`, largest first.
pub fn coverage_at(p: &[f64], q: f64) -> f64 {
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        acc += v;
        if acc >= q - 1e-12 {
            return (i + 1) as f64 / p.len() as f64;
        }
    }
    1.0
}

pub fn attention_stats(model: &Model, samples: &[DetectionSample]) -> Result<AttentionStats> {
    let mut entropy = 0.0;
    let mut coverage = 0.0;
    let mut n = 0usize;
    for sample in samples {
        for obj in 0..sample.gt.len() {
            let m = object_attention(model, sample, obj)?;
            let p = attention_distribution(&m);
            entropy += normalized_entropy(&p);
            coverage += coverage_at(&p, 0.9);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("attention_stats: no objects".into()));
    }
    Ok(AttentionStats {
        mean_entropy: entropy / n as f64,
        mean_coverage_q90: coverage / n as f64,
        n_objects: n,
    })
}

// ---------------------------------------------------------------------------
// classification metrics

pub fn classify_image(model: &Model, image: &Tensor) -> Result<usize> {
    let shape = image.shape();
    let batch = image.reshaped(&[1, shape[0], shape[1], shape[2]])?;
    let (tape, h) = model.forward_classifier(&batch)?;
    Ok(argmax_row(tape.value(h.logits).data()))
}

pub fn classification_accuracy(model: &Model, samples: &[DetectionSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("empty evaluation dataset".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        if classify_image(model, &s.image)? == s.gt[0].class {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

// ---------------------------------------------------------------------------
// detection metrics

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub image: usize,
    pub class: usize,
    pub score: f64,
    pub bounds: BoxF,
}

/// Greedy per-class, per-image NMS: keep by descending score, suppress
/// boxes with IoU above the threshold against a kept box.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.image == d.image && k.class == d.class && iou(&k.bounds, &d.bounds) > iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// All scored class detections for one image (before NMS).
pub fn detect_image(
    model: &Model,
    image_idx: usize,
    sample: &DetectionSample,
    proposals: &[Proposal],
) -> Result<Vec<Detection>> {
    let shape = sample.image.shape();
    let (h, w) = (shape[1] as f64, shape[2] as f64);
    let batch = sample.image.reshaped(&[1, shape[0], shape[1], shape[2]])?;
    let (tape, handles) = model.forward_detector(&batch, proposals)?;
    let probs = softmax_rows(tape.value(handles.logits));
    let deltas = tape.value(handles.deltas.expect("detector deltas"));
    let k = model.spec.num_classes;
    let mut out = Vec::new();
    for (r, p) in proposals.iter().enumerate() {
        let d = [
            deltas.at2(r, 0),
            deltas.at2(r, 1),
            deltas.at2(r, 2),
            deltas.at2(r, 3),
        ];
        let bounds = decode_box(&p.bounds, &d).clamped(w, h);
        if !bounds.is_valid() {
            continue;
        }
        for class in 0..k {
            out.push(Detection {
                image: image_idx,
                class,
                score: probs.at2(r, class),
                bounds,
            });
        }
    }
    Ok(out)
}

/// Exact precision-recall envelope integration (all-point interpolation).
/// `scored` holds (score, is_true_positive) pairs; ordering ties are
/// broken by the caller's ordering.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 || scored.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
    let mut precisions = Vec::with_capacity(scored.len());
    let mut recalls = Vec::with_capacity(scored.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        if scored[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // precision envelope: max precision at recall >= r
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precisions.iter().zip(&recalls) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Matches detections to ground truth greedily by score (each GT matched
/// at most once, best IoU first, threshold 0.5) and returns per-class AP
/// plus the mean over classes that have ground truth.
pub fn map_from_detections(
    dets: &[Detection],
    gt: &[(usize, usize, BoxF)],
    num_classes: usize,
) -> (Vec<f64>, f64) {
    let mut per_class = vec![0.0; num_classes];
    let mut classes_with_gt = 0usize;
    let mut ap_sum = 0.0;
    for class in 0..num_classes {
        let n_gt = gt.iter().filter(|g| g.1 == class).count();
        if n_gt == 0 {
            continue;
        }
        classes_with_gt += 1;
        let mut class_dets: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
        class_dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image.cmp(&b.image)));
        let mut matched = vec![false; gt.len()];
        let mut scored = Vec::with_capacity(class_dets.len());
        for d in class_dets {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gt.iter().enumerate() {
                if g.1 != class || g.0 != d.image || matched[gi] {
                    continue;
                }
                let v = iou(&d.bounds, &g.2);
                if v >= MATCH_IOU && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, _)) => {
                    matched[gi] = true;
                    scored.push((d.score, true));
                }
                None => scored.push((d.score, false)),
            }
        }
        let ap = average_precision(&scored, n_gt);
        per_class[class] = ap;
        ap_sum += ap;
    }
    let map = if classes_with_gt == 0 {
        0.0
    } else {
        ap_sum / classes_with_gt as f64
    };
    (per_class, map)
}

/// Evaluation proposals: same jittered-GT generator as training, keyed by
/// an evaluation-only stream so reports are pure in (config, dataset).
pub fn eval_proposals(cfg: &TrainConfig, sample: &DetectionSample) -> Result<Vec<Proposal>> {
    let mut rng = stream_rng(cfg.seed, &[stream::EVAL, sample.index]);
    make_proposals(
        &sample.gt,
        cfg.model.image_hw,
        cfg.model.num_classes,
        &mut rng,
        cfg.jitter,
        cfg.n_per_gt,
        cfg.n_background,
    )
}

pub fn evaluate_detections(
    model: &Model,
    cfg: &TrainConfig,
    samples: &[DetectionSample],
) -> Result<(Vec<f64>, f64, Vec<Detection>)> {
    if samples.is_empty() {
        return Err(Error::Data("empty evaluation dataset".into()));
    }
    let mut all = Vec::new();
    let mut gt = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let proposals = eval_proposals(cfg, sample)?;
        all.extend(detect_image(model, i, sample, &proposals)?);
        for g in &sample.gt {
            gt.push((i, g.class, g.bounds));
        }
    }
    let kept = nms(all, MATCH_IOU);
    let (per_class, map) = map_from_detections(&kept, &gt, model.spec.num_classes);
    Ok((per_class, map, kept))
}

/// Full evaluation report for a checkpointed model on a dataset.
pub fn evaluate(model: &Model, cfg: &TrainConfig, samples: &[DetectionSample]) -> Result<EvalReport> {
    let start = Instant::now();
    let attention = attention_stats(model, samples)?;
    let (accuracy, per_class_ap, map) = match model.task {
        Task::Classify => (Some(classification_accuracy(model, samples)?), None, None),
        Task::Detect => {
            let (per_class, map, _) = evaluate_detections(model, cfg, samples)?;
            (None, Some(per_class), Some(map))
        }
    };
    Ok(EvalReport {
        task: model.task.as_str().to_string(),
        n_samples: samples.len(),
        n_objects: samples.iter().map(|s| s.gt.len()).sum(),
        accuracy,
        per_class_ap,
        map,
        attention,
        runtime_secs: start.elapsed().as_secs_f64(),
        config_echo: cfg.echo(),
    })
}

// ---------------------------------------------------------------------------
// occlusion sensitivity

/// Integral-image argmax/argmin of patch sums; returns (top-left of the
/// best patch, extreme is max when `want_max`). First position in
/// row-major order wins ties.
fn extreme_patch(map: &Tensor, patch: usize, want_max: bool) -> (usize, usize) {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let patch = patch.min(h).min(w);
    let mut integral = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            integral[(y + 1) * (w + 1) + x + 1] = map.at2(y, x)
                + integral[y * (w + 1) + x + 1]
                + integral[(y + 1) * (w + 1) + x]
                - integral[y * (w + 1) + x];
        }
    }
    let sum_at = |y: usize, x: usize| {
        integral[(y + patch) * (w + 1) + x + patch]
            - integral[y * (w + 1) + x + patch]
            - integral[(y + patch) * (w + 1) + x]
            + integral[y * (w + 1) + x]
    };
    let mut best = (0usize, 0usize);
    let mut best_v = sum_at(0, 0);
    for y in 0..=h - patch {
        for x in 0..=w - patch {
            let v = sum_at(y, x);
            if (want_max && v > best_v) || (!want_max && v < best_v) {
                best_v = v;
                best = (y, x);
            }
        }
    }
    best
}

fn occlude(image: &Tensor, y: usize, x: usize, patch: usize) -> Tensor {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut out = image.clone();
    for c in 0..3 {
        for yy in y..(y + patch).min(h) {
            for xx in x..(x + patch).min(w) {
                let idx = out.idx3(c, yy, xx);
                out.data_mut()[idx] = 0.5;
            }
        }
    }
    out
}

fn patch_for_object(patch: PatchSpec, bounds: &BoxF) -> usize {
    match patch {
        PatchSpec::Pixels(p) => p,
        PatchSpec::ObjectFraction(f) => {
            let side = (bounds.width() * bounds.height()).sqrt();
            ((f * side).round() as usize).max(1)
        }
    }
}

/// Upsampled (bilinear, image-resolution) attention map for an object.
fn object_attention_fullres(
    model: &Model,
    sample: &DetectionSample,
    obj: usize,
) -> Result<Tensor> {
    let m = object_attention(model, sample, obj)?;
    let (h, w) = (sample.image.shape()[1], sample.image.shape()[2]);
    match model.task {
        Task::Classify => Ok(crate::heatmap::bilinear_upsample(&m, h, w)),
        Task::Detect => {
            // ROI attention covers only the object box: upsample into the
            // box region, zero elsewhere (minimum attention outside).
            let b = sample.gt[obj].bounds;
            let bh = (b.height().round() as usize).max(1);
            let bw = (b.width().round() as usize).max(1);
            let up = crate::heatmap::bilinear_upsample(&m, bh, bw);
            let lo = up.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let mut full = Tensor::filled(&[h, w], lo);
            let (y0, x0) = (b.y1.round() as usize, b.x1.round() as usize);
            for y in 0..bh {
                for x in 0..bw {
                    if y0 + y < h && x0 + x < w {
                        let idx = full.idx2(y0 + y, x0 + x);
                        full.data_mut()[idx] = up.at2(y, x);
                    }
                }
            }
            Ok(full)
        }
    }
}

/// Whether a ground-truth object is recalled (matched by a kept detection
/// of its class with score above the recall floor).
fn object_recalled(model: &Model, cfg: &TrainConfig, sample: &DetectionSample, obj: usize) -> Result<bool> {
    let proposals = eval_proposals(cfg, sample)?;
    let dets = nms(detect_image(model, 0, sample, &proposals)?, MATCH_IOU);
    let g = &sample.gt[obj];
    Ok(dets.iter().any(|d| {
        d.class == g.class && d.score >= RECALL_SCORE && iou(&d.bounds, &g.bounds) >= MATCH_IOU
    }))
}

/// Occlusion sensitivity: for every test object, occlude the patch with
/// maximal (and, for the paired control, minimal) total attention and
/// re-evaluate. Classification reports accuracy, detection reports recall.
pub fn occlusion_sensitivity(
    model: &Model,
    cfg: &TrainConfig,
    samples: &[DetectionSample],
    patch: PatchSpec,
) -> Result<OcclusionReport> {
    if samples.is_empty() {
        return Err(Error::Data("empty evaluation dataset".into()));
    }
    if let PatchSpec::Pixels(p) = patch {
        let (h, w) = (samples[0].image.shape()[1], samples[0].image.shape()[2]);
        if p > h || p > w {
            return Err(Error::InvalidArg(format!(
                "patch {p} larger than the {h}x{w} image"
            )));
        }
    }
    let mut clean_hits = 0usize;
    let mut max_hits = 0usize;
    let mut min_hits = 0usize;
    let mut total = 0usize;
    for sample in samples {
        for obj in 0..sample.gt.len() {
            let p = patch_for_object(patch, &sample.gt[obj].bounds);
            total += 1;
            let clean_ok = match model.task {
                Task::Classify => classify_image(model, &sample.image)? == sample.gt[obj].class,
                Task::Detect => object_recalled(model, cfg, sample, obj)?,
            };
            if clean_ok {
                clean_hits += 1;
            }
            if p == 0 {
                // no occlusion: metrics equal the clean metric
                if clean_ok {
                    max_hits += 1;
                    min_hits += 1;
                }
                continue;
            }
            let att = object_attention_fullres(model, sample, obj)?;
            for (want_max, hits) in [(true, &mut max_hits), (false, &mut min_hits)] {
                let (y, x) = extreme_patch(&att, p, want_max);
                let occluded = occlude(&sample.image, y, x, p);
                let ok = match model.task {
                    Task::Classify => classify_image(model, &occluded)? == sample.gt[obj].class,
                    Task::Detect => {
                        let mut patched = sample.clone();
                        patched.image = occluded;
                        object_recalled(model, cfg, &patched, obj)?
                    }
                };
                if ok {
                    *hits += 1;
                }
            }
        }
    }
    let frac = |n: usize| n as f64 / total.max(1) as f64;
    Ok(OcclusionReport {
        patch_pixels: match patch {
            PatchSpec::Pixels(p) => Some(p),
            PatchSpec::ObjectFraction(_) => None,
        },
        patch_object_fraction: match patch {
            PatchSpec::Pixels(_) => None,
            PatchSpec::ObjectFraction(f) => Some(f),
        },
        clean: frac(clean_hits),
        occluded_max_attention: frac(max_hits),
        occluded_min_attention: frac(min_hits),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_and_coverage_analytic_cases() {
        let uniform = vec![0.01; 100];
        assert!((normalized_entropy(&uniform) - 1.0).abs() < 1e-12);
        assert!((coverage_at(&uniform, 0.9) - 0.9).abs() < 1e-12);
        let mut onehot = vec![0.0; 100];
        onehot[42] = 1.0;
        assert_eq!(normalized_entropy(&onehot), 0.0);
        assert!((coverage_at(&onehot, 0.9) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn entropy_matches_direct_formula_on_random_maps() {
        let m = Tensor::from_fn(&[6, 7], |i| ((i * 131) % 97) as f64 * 0.013 - 0.2);
        let p = attention_distribution(&m);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let direct: f64 = p
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| -v * v.ln())
            .sum::<f64>()
            / (42f64).ln();
        assert!((normalized_entropy(&p) - direct).abs() < 1e-12);
    }

    #[test]
    fn constant_attention_is_uniform() {
        let m = Tensor::filled(&[5, 5], 3.25);
        let p = attention_distribution(&m);
        assert!(p.iter().all(|&v| (v - 0.04).abs() < 1e-15));
        assert!((normalized_entropy(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_give_map_one() {
        let gt = vec![
            (0, 0, BoxF::new(0.0, 0.0, 10.0, 10.0)),
            (0, 1, BoxF::new(20.0, 20.0, 30.0, 30.0)),
            (1, 0, BoxF::new(5.0, 5.0, 15.0, 15.0)),
        ];
        let dets: Vec<Detection> = gt
            .iter()
            .map(|&(image, class, bounds)| Detection {
                image,
                class,
                score: 1.0,
                bounds,
            })
            .collect();
        let (per_class, map) = map_from_detections(&dets, &gt, 2);
        assert_eq!(per_class, vec![1.0, 1.0]);
        assert_eq!(map, 1.0);
    }

    #[test]
    fn no_predictions_give_map_zero() {
        let gt = vec![(0, 0, BoxF::new(0.0, 0.0, 10.0, 10.0))];
        let (_, map) = map_from_detections(&[], &gt, 2);
        assert_eq!(map, 0.0);
    }

    #[test]
    fn five_box_hand_case_matches_pr_envelope() {
        // 3 GT objects of one class; five detections scored 0.9..0.5 with
        // pattern TP FP TP FP TP. Hand-computed envelope:
        // AP = (1/3)(1) + (1/3)(2/3) + (1/3)(3/5) = 34/45.
        let gt_box = |i: usize| BoxF::new(20.0 * i as f64, 0.0, 20.0 * i as f64 + 10.0, 10.0);
        let gt = vec![(0, 0, gt_box(0)), (0, 0, gt_box(1)), (0, 0, gt_box(2))];
        let far = |i: usize| BoxF::new(200.0 + 20.0 * i as f64, 50.0, 210.0 + 20.0 * i as f64, 60.0);
        let dets = vec![
            Detection { image: 0, class: 0, score: 0.9, bounds: gt_box(0) },
            Detection { image: 0, class: 0, score: 0.8, bounds: far(0) },
            Detection { image: 0, class: 0, score: 0.7, bounds: gt_box(1) },
            Detection { image: 0, class: 0, score: 0.6, bounds: far(1) },
            Detection { image: 0, class: 0, score: 0.5, bounds: gt_box(2) },
        ];
        let (per_class, map) = map_from_detections(&dets, &gt, 1);
        assert!((per_class[0] - 34.0 / 45.0).abs() < 1e-12);
        assert!((map - 34.0 / 45.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detections_count_as_false_positives() {
        let b = BoxF::new(0.0, 0.0, 10.0, 10.0);
        let gt = vec![(0, 0, b)];
        let dets = vec![
            Detection { image: 0, class: 0, score: 0.9, bounds: b },
            Detection { image: 0, class: 0, score: 0.8, bounds: b },
        ];
        let (per_class, _) = map_from_detections(&dets, &gt, 1);
        // first matches, second is a duplicate FP; AP = 1.0 (envelope)
        assert!((per_class[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_suppresses_overlapping_lower_scores() {
        let a = Detection { image: 0, class: 0, score: 0.9, bounds: BoxF::new(0.0, 0.0, 10.0, 10.0) };
        let b = Detection { image: 0, class: 0, score: 0.8, bounds: BoxF::new(1.0, 1.0, 11.0, 11.0) };
        let c = Detection { image: 0, class: 0, score: 0.7, bounds: BoxF::new(50.0, 50.0, 60.0, 60.0) };
        let kept = nms(vec![b, a, c], 0.5);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].score, 0.9);
        assert_eq!(kept[1].score, 0.7);
    }

    #[test]
    fn extreme_patch_finds_hot_and_cold_corners() {
        let mut m = Tensor::zeros(&[6, 6]);
        for y in 4..6 {
            for x in 4..6 {
                let idx = m.idx2(y, x);
                m.data_mut()[idx] = 5.0;
            }
        }
        assert_eq!(extreme_patch(&m, 2, true), (4, 4));
        assert_eq!(extreme_patch(&m, 2, false), (0, 0));
    }
}
