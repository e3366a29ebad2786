//! The inverted-attention training loop.
//!
//! One step does, per batch: forward to the attachment-point features F,
//! backward a probe scalar (ground-truth class score or loss) to obtain
//! the gradient G at F, generate the inverted-attention mask for the
//! selected fraction of ROIs/samples (the rest get all-ones), re-forward
//! the head through the masked features, then run the training backward
//! and a plain SGD update. Baseline mode skips the probe/mask and is
//! byte-equivalent to a zero apply-probability.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::attention::{generate_inverted_attention, AttentionConfig, Placement, Probe};
use crate::checkpoint;
use crate::config::{KvConfig, TrainConfig};
use crate::detector::{make_proposals, Handles, Model, Proposal, Task};
use crate::error::{Error, Result};
use crate::optim::SgdMomentum;
use crate::rng::{stream, stream_rng};
use crate::synth::{read_dataset, DetectionSample};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

/// Number of leading batch entries of `feature` selected for refinement:
/// floor(p*n + u) with u uniform, i.e. stochastic rounding of p*n, drawn
/// without replacement. Zero probability never selects; probability one
/// always selects everything.
fn select_refined(
    n: usize,
    ia: &AttentionConfig,
    step_idx: u64,
    image_tag: u64,
) -> (Vec<usize>, rand_chacha::ChaCha8Rng) {
    let mut rng = stream_rng(ia.rng_seed, &[stream::SUBSET, step_idx, image_tag]);
    let u: f64 = rng.random_range(0.0..1.0);
    let k = ((ia.apply_probability * n as f64 + u).floor() as usize).min(n);
    let mut selected: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
    selected.sort_unstable();
    (selected, rng)
}

/// Per-slice inverted-attention masks assembled into a full-shape mask
/// over `[M, C, h, w]` features; unselected slices stay all-ones.
fn build_batch_mask(
    feature: &Tensor,
    grad: &Tensor,
    selected: &[usize],
    ia: &AttentionConfig,
    step_idx: u64,
    image_tag: u64,
) -> Result<Tensor> {
    let shape = feature.shape();
    let chw = vec![shape[1], shape[2], shape[3]];
    let slice_len: usize = chw.iter().product();
    let mut mask = Tensor::ones(shape);
    for &i in selected {
        let f_i = Tensor::new(chw.clone(), feature.data()[i * slice_len..(i + 1) * slice_len].to_vec())?;
        let g_i = Tensor::new(chw.clone(), grad.data()[i * slice_len..(i + 1) * slice_len].to_vec())?;
        let mut mask_rng = stream_rng(ia.rng_seed, &[stream::MASK, step_idx, image_tag, i as u64]);
        let m = generate_inverted_attention(&f_i, &g_i, ia, &mut mask_rng)?;
        mask.data_mut()[i * slice_len..(i + 1) * slice_len].copy_from_slice(m.mask.data());
    }
    Ok(mask)
}

/// Probe scalar node: the summed ground-truth class scores, or the given
/// classification-loss node.
fn probe_node(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    probe: Probe,
    loss: NodeId,
) -> Result<NodeId> {
    match probe {
        Probe::GtScore => {
            let gathered = tape.gather_labels(logits, labels.to_vec())?;
            tape.sum(gathered)
        }
        Probe::GtLoss => Ok(loss),
    }
}

/// Row argmax, first index on ties.
pub(crate) fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax_row(&logits.data()[i * k..(i + 1) * k]) == y)
        .count()
}

/// One classification training step over a batch `[B, 3, H, W]`.
/// Attention attaches at the final backbone feature map.
pub fn ia_training_step_classify(
    model: &mut Model,
    opt: &mut SgdMomentum,
    lr: f64,
    images: &Tensor,
    labels: &[usize],
    ia: Option<&AttentionConfig>,
    step_idx: u64,
) -> Result<StepStats> {
    let (mut tape, handles) = model.forward_classifier(images)?;
    let mut loss = tape.softmax_xent(handles.logits, labels.to_vec())?;
    let correct = count_correct(tape.value(handles.logits), labels);
    if let Some(att) = ia {
        let feature = handles.conv_feature;
        let n = tape.value(feature).shape()[0];
        let (selected, _) = select_refined(n, att, step_idx, 0);
        if !selected.is_empty() {
            let probe = probe_node(&mut tape, handles.logits, labels, att.probe, loss)?;
            let grad = tape.backward_to(probe, feature)?;
            let mask = build_batch_mask(tape.value(feature), &grad, &selected, att, step_idx, 0)?;
            let (refined, remap) = tape.reforward_masked(feature, &mask)?;
            tape = refined;
            loss = remap[&loss];
        }
    }
    let grads_by_id = tape.backward_params(loss)?;
    let grads: Vec<Tensor> = handles
        .params
        .iter()
        .map(|id| grads_by_id[id].clone())
        .collect();
    opt.step(model, &grads, lr)?;
    Ok(StepStats {
        loss: tape.value(loss).scalar_value()?,
        correct,
        count: labels.len(),
    })
}

/// One detection training step over a batch of images with pre-computed
/// proposals. Gradients are averaged over the images of the batch.
pub fn ia_training_step_detect(
    model: &mut Model,
    opt: &mut SgdMomentum,
    lr: f64,
    batch: &[(&DetectionSample, &[Proposal])],
    ia: Option<&AttentionConfig>,
    step_idx: u64,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidArg("empty detection batch".into()));
    }
    let mut acc: Option<Vec<Tensor>> = None;
    let mut stats = StepStats::default();
    for (pos, (sample, proposals)) in batch.iter().enumerate() {
        let (tape, handles, loss) =
            detect_forward_with_ia(model, sample, proposals, ia, step_idx, pos as u64)?;
        let mut tape = tape;
        stats.loss += tape.value(loss).scalar_value()?;
        stats.correct += count_correct(
            tape.value(handles.logits),
            &proposals.iter().map(|p| p.label).collect::<Vec<_>>(),
        );
        stats.count += proposals.len();
        let grads_by_id = tape.backward_params(loss)?;
        let grads: Vec<Tensor> = handles
            .params
            .iter()
            .map(|id| grads_by_id[id].clone())
            .collect();
        match &mut acc {
            None => acc = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = acc.unwrap();
    for g in &mut grads {
        for v in g.data_mut() {
            *v *= scale;
        }
    }
    opt.step(model, &grads, lr)?;
    stats.loss *= scale;
    Ok(stats)
}

/// Detector forward for one image, with the inverted-attention refinement
/// applied per config. Note that in the refined tape, `handles.logits`
/// still names the pre-refinement logits; the returned loss node is the
/// refined one. The stats above intentionally read the pre-update logits.
fn detect_forward_with_ia(
    model: &Model,
    sample: &DetectionSample,
    proposals: &[Proposal],
    ia: Option<&AttentionConfig>,
    step_idx: u64,
    image_tag: u64,
) -> Result<(Tape, Handles, NodeId)> {
    let shape = sample.image.shape();
    let image = sample.image.reshaped(&[1, shape[0], shape[1], shape[2]])?;
    let (mut tape, handles) = model.forward_detector(&image, proposals)?;
    let losses = model.detection_loss(&mut tape, &handles, proposals)?;
    let mut loss = losses.total;
    if let Some(att) = ia {
        let feature = match att.placement {
            Placement::RoiFeature => handles.roi_feature.expect("detector has roi features"),
            Placement::FullFeature => handles.conv_feature,
        };
        let n = tape.value(feature).shape()[0];
        let (selected, _) = select_refined(n, att, step_idx, image_tag);
        if !selected.is_empty() {
            let labels: Vec<usize> = proposals.iter().map(|p| p.label).collect();
            let probe = probe_node(&mut tape, handles.logits, &labels, att.probe, losses.softmax)?;
            let grad = tape.backward_to(probe, feature)?;
            let mask =
                build_batch_mask(tape.value(feature), &grad, &selected, att, step_idx, image_tag)?;
            let (refined, remap) = tape.reforward_masked(feature, &mask)?;
            tape = refined;
            loss = remap[&loss];
        }
    }
    Ok((tape, handles, loss))
}

// ---------------------------------------------------------------------------
// full training runs

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub log_lines: Vec<String>,
    pub final_train_loss: f64,
}

/// Loads a model (with its effective config) back from a checkpoint.
pub fn load_model(ckpt: &Path) -> Result<(Model, TrainConfig)> {
    let echo = checkpoint::load_config_echo(ckpt)?;
    let cfg = TrainConfig::from_kv(&KvConfig::parse(&echo)?)?;
    let mut model = Model::new(cfg.model.clone(), cfg.task, cfg.seed)?;
    model.set_params(checkpoint::load(ckpt)?)?;
    Ok((model, cfg))
}

/// Pre-computed proposals for every sample, keyed off the per-sample
/// stream so they are a pure function of (seed, sample index).
pub fn dataset_proposals(cfg: &TrainConfig, samples: &[DetectionSample]) -> Result<Vec<Vec<Proposal>>> {
    samples
        .iter()
        .map(|s| {
            let mut rng = stream_rng(cfg.seed, &[stream::PROPOSALS, s.index]);
            make_proposals(
                &s.gt,
                cfg.model.image_hw,
                cfg.model.num_classes,
                &mut rng,
                cfg.jitter,
                cfg.n_per_gt,
                cfg.n_background,
            )
        })
        .collect()
}

fn check_samples(cfg: &TrainConfig, samples: &[DetectionSample]) -> Result<()> {
    let (h, w) = cfg.model.image_hw;
    for s in samples {
        if s.image.shape() != [3, h, w] {
            return Err(Error::Data(format!(
                "sample {} has image shape {:?}, model expects [3, {h}, {w}]",
                s.index,
                s.image.shape()
            )));
        }
        if cfg.task == Task::Classify && s.gt.len() != 1 {
            return Err(Error::Data(format!(
                "classification needs exactly one object per image; sample {} has {}",
                s.index,
                s.gt.len()
            )));
        }
        if let Some(g) = s.gt.iter().find(|g| g.class >= cfg.model.num_classes) {
            return Err(Error::Data(format!(
                "sample {} has class {} but the model has {} classes",
                s.index, g.class, cfg.model.num_classes
            )));
        }
    }
    Ok(())
}

fn stack_images(samples: &[&DetectionSample]) -> Result<(Tensor, Vec<usize>)> {
    let shape = samples[0].image.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut images = Tensor::zeros(&[samples.len(), c, h, w]);
    let len = c * h * w;
    let mut labels = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        images.data_mut()[i * len..(i + 1) * len].copy_from_slice(s.image.data());
        labels.push(s.gt[0].class);
    }
    Ok((images, labels))
}

/// Full training run per the config: deterministic in the seed, logging
/// one tab-separated line per epoch and writing checkpoints plus an
/// effective-config echo under `out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("effective.cfg"), cfg.echo())?;
    let samples = read_dataset(&cfg.train_data)?;
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "training dataset {} is empty",
            cfg.train_data.display()
        )));
    }
    check_samples(cfg, &samples)?;
    let mut model = Model::new(cfg.model.clone(), cfg.task, cfg.seed)?;
    let mut opt = SgdMomentum::new(&model, cfg.momentum);
    let proposals = match cfg.task {
        Task::Detect => dataset_proposals(cfg, &samples)?,
        Task::Classify => Vec::new(),
    };

    let mut log_lines = Vec::new();
    let mut step_idx = 0u64;
    let mut final_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let lr = if epoch >= cfg.lr_decay_epoch {
            cfg.lr * cfg.lr_decay_factor
        } else {
            cfg.lr
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, &[stream::DATA_ORDER, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut epoch_count = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let stats = match cfg.task {
                Task::Classify => {
                    let batch: Vec<&DetectionSample> = chunk.iter().map(|&i| &samples[i]).collect();
                    let (images, labels) = stack_images(&batch)?;
                    ia_training_step_classify(
                        &mut model,
                        &mut opt,
                        lr,
                        &images,
                        &labels,
                        cfg.ia.as_ref(),
                        step_idx,
                    )
                }
                Task::Detect => {
                    let batch: Vec<(&DetectionSample, &[Proposal])> = chunk
                        .iter()
                        .map(|&i| (&samples[i], proposals[i].as_slice()))
                        .collect();
                    ia_training_step_detect(
                        &mut model,
                        &mut opt,
                        lr,
                        &batch,
                        cfg.ia.as_ref(),
                        step_idx,
                    )
                }
            }
            .map_err(|e| match e {
                Error::NonFinite(m) => {
                    Error::Diverged(format!("epoch {epoch}, step {step_idx}: {m}"))
                }
                other => other,
            })?;
            epoch_loss += stats.loss;
            epoch_correct += stats.correct;
            epoch_count += stats.count;
            batches += 1;
            step_idx += 1;
        }
        let mean_loss = epoch_loss / batches as f64;
        let metric = epoch_correct as f64 / epoch_count.max(1) as f64;
        final_loss = mean_loss;
        log_lines.push(format!(
            "{epoch}\t{mean_loss:.6}\t{metric:.4}\t{lr}\t{}",
            cfg.seed
        ));
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            let dir = cfg.out_dir.join(format!("ckpt-epoch-{:03}", epoch + 1));
            checkpoint::save(&dir, model.params(), &cfg.echo())?;
        }
    }
    let final_checkpoint = cfg.out_dir.join("ckpt-final");
    checkpoint::save(&final_checkpoint, model.params(), &cfg.echo())?;
    let mut log_text = log_lines.join("\n");
    if !log_lines.is_empty() {
        log_text.push('\n');
    }
    fs::write(cfg.out_dir.join("train.log"), log_text)?;
    Ok(TrainOutcome {
        out_dir: cfg.out_dir.clone(),
        final_checkpoint,
        log_lines,
        final_train_loss: final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{ModelSpec, Padding};

    fn tiny_model(seed: u64) -> Model {
        let spec = ModelSpec {
            in_channels: 3,
            image_hw: (8, 8),
            conv_channels: vec![4],
            kernel: 3,
            padding: Padding::Same,
            roi_out: (2, 2),
            fc_dims: vec![8],
            num_classes: 2,
        };
        Model::new(spec, Task::Classify, seed).unwrap()
    }

    fn random_batch(seed: u64, n: usize) -> (Tensor, Vec<usize>) {
        let mut rng = stream_rng(seed, &[99]);
        let images = Tensor::from_fn(&[n, 3, 8, 8], |_| rng.random_range(0.0..1.0));
        let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
        (images, labels)
    }

    #[test]
    fn zero_apply_probability_matches_baseline_bit_for_bit() {
        let (images, labels) = random_batch(5, 6);
        let ia = AttentionConfig {
            apply_probability: 0.0,
            ..AttentionConfig::default()
        };
        let mut m1 = tiny_model(3);
        let mut o1 = SgdMomentum::new(&m1, 0.9);
        ia_training_step_classify(&mut m1, &mut o1, 0.05, &images, &labels, Some(&ia), 0).unwrap();
        let mut m2 = tiny_model(3);
        let mut o2 = SgdMomentum::new(&m2, 0.9);
        ia_training_step_classify(&mut m2, &mut o2, 0.05, &images, &labels, None, 0).unwrap();
        for ((n1, t1), (n2, t2)) in m1.params().iter().zip(m2.params()) {
            assert_eq!(n1, n2);
            assert!(t1.bits_eq(t2), "parameter {n1} differs");
        }
    }

    #[test]
    fn one_step_reduces_batch_loss_in_most_trials() {
        let mut reduced = 0;
        for trial in 0..100u64 {
            let (images, labels) = random_batch(trial, 8);
            let mut model = tiny_model(trial);
            let mut opt = SgdMomentum::new(&model, 0.0);
            let before = {
                let (mut tape, h) = model.forward_classifier(&images).unwrap();
                let loss = tape.softmax_xent(h.logits, labels.clone()).unwrap();
                tape.value(loss).scalar_value().unwrap()
            };
            ia_training_step_classify(&mut model, &mut opt, 0.02, &images, &labels, None, 0)
                .unwrap();
            let after = {
                let (mut tape, h) = model.forward_classifier(&images).unwrap();
                let loss = tape.softmax_xent(h.logits, labels.clone()).unwrap();
                tape.value(loss).scalar_value().unwrap()
            };
            if after < before {
                reduced += 1;
            }
        }
        assert!(reduced >= 95, "loss reduced in only {reduced}/100 trials");
    }

    #[test]
    fn forced_zero_mask_matches_zeroed_feature_oracle() {
        // With an all-zero mask, head-weight gradients must equal those of
        // an explicit forward over zeroed features.
        let (images, labels) = random_batch(2, 4);
        let model = tiny_model(9);
        let (mut tape, h) = model.forward_classifier(&images).unwrap();
        let loss = tape.softmax_xent(h.logits, labels.clone()).unwrap();
        let fshape = tape.value(h.conv_feature).shape().to_vec();
        let (mut masked, remap) = tape
            .reforward_masked(h.conv_feature, &Tensor::zeros(&fshape))
            .unwrap();
        let got = masked.backward_params(remap[&loss]).unwrap();

        // oracle: independent tape whose feature input is literally zeros
        let zeroed = tape.reforward_from(h.conv_feature, &Tensor::zeros(&fshape)).unwrap();
        let mut zeroed = zeroed;
        let want = zeroed.backward_params(loss).unwrap();
        // the fc/cls parameters sit downstream of the feature: equal grads
        for (idx, (name, _)) in model.params().iter().enumerate() {
            if name.starts_with("fc") || name.starts_with("cls") {
                let id = h.params[idx];
                assert!(
                    got[&id].bits_eq(&want[&id]),
                    "gradient mismatch for {name}"
                );
            }
        }
    }

    #[test]
    fn probe_additivity_over_rois() {
        // gradient at the pooled features from the summed probe equals the
        // per-sample backward, because samples contribute additively
        let (images, labels) = random_batch(4, 3);
        let model = tiny_model(4);
        let (mut tape, h) = model.forward_classifier(&images).unwrap();
        let gathered = tape.gather_labels(h.logits, labels.clone()).unwrap();
        let probe = tape.sum(gathered).unwrap();
        let g_all = tape.backward_to(probe, h.conv_feature).unwrap();
        for i in 0..3 {
            let one = Tensor::new(
                vec![1, 3, 8, 8],
                images.data()[i * 192..(i + 1) * 192].to_vec(),
            )
            .unwrap();
            let (mut t1, h1) = model.forward_classifier(&one).unwrap();
            let g1 = t1.gather_labels(h1.logits, vec![labels[i]]).unwrap();
            let p1 = t1.sum(g1).unwrap();
            let gi = t1.backward_to(p1, h1.conv_feature).unwrap();
            let len = gi.len();
            for j in 0..len {
                assert!((g_all.data()[i * len + j] - gi.data()[j]).abs() < 1e-12);
            }
        }
    }
}
