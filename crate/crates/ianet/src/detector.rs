//! Desk-scale Fast-RCNN-style network: a small convolutional backbone,
//! ROI pooling over pre-computed proposals, a shared fully-connected
//! trunk, and classification plus class-agnostic box-regression heads.
//! A pure-classifier forward (no ROIs) shares the same backbone.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::boxes::{iou, BoxF};
use crate::error::{Error, Result};
use crate::ops::{ConvSpec, RoiBox};
use crate::rng::{stream, stream_rng};
use crate::synth::GtObject;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classify,
    Detect,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Detect => "detect",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "classify" => Ok(Task::Classify),
            "detect" => Ok(Task::Detect),
            _ => Err(Error::Config(format!("unknown task '{s}'"))),
        }
    }
}

/// Network architecture. Every backbone stage is a same-padding
/// odd-kernel convolution followed by ReLU and a 2x2/2 max pool, so the
/// feature stride is 2^stages.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub image_hw: (usize, usize),
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    /// Same-padding keeps spatial size through convs; valid padding avoids
    /// the zero-border halo in feature maps (cleaner attention statistics).
    pub padding: Padding,
    pub roi_out: (usize, usize),
    pub fc_dims: Vec<usize>,
    /// Foreground classes; the detector adds a background class at index
    /// `num_classes`.
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    pub fn as_str(&self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }

    pub fn parse(s: &str) -> Result<Padding> {
        match s {
            "same" => Ok(Padding::Same),
            "valid" => Ok(Padding::Valid),
            _ => Err(Error::Config(format!("unknown padding '{s}'"))),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::InvalidArg("conv kernel must be odd".into()));
        }
        if self.conv_channels.is_empty() {
            return Err(Error::InvalidArg("at least one conv stage required".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidArg("num_classes must be at least 1".into()));
        }
        if self.roi_out.0 == 0 || self.roi_out.1 == 0 {
            return Err(Error::InvalidArg("roi_out must be at least 1x1".into()));
        }
        let (h, w) = self.feature_hw()?;
        if h == 0 || w == 0 {
            return Err(Error::Shape("backbone pools the image away".into()));
        }
        Ok(())
    }

    fn conv_pad(&self) -> usize {
        match self.padding {
            Padding::Same => self.kernel / 2,
            Padding::Valid => 0,
        }
    }

    /// Spatial size of the final backbone feature map.
    pub fn feature_hw(&self) -> Result<(usize, usize)> {
        let (mut h, mut w) = self.image_hw;
        let shrink = self.kernel - 1 - 2 * self.conv_pad();
        for _ in &self.conv_channels {
            if h < shrink + 2 || w < shrink + 2 {
                return Err(Error::Shape(format!(
                    "image {:?} too small for {} conv/pool stages",
                    self.image_hw,
                    self.conv_channels.len()
                )));
            }
            h = (h - shrink) / 2;
            w = (w - shrink) / 2;
        }
        Ok((h, w))
    }

    /// Image-to-feature coordinate stride (valid padding shifts
    /// coordinates by under a cell; proposals tolerate that).
    pub fn feature_stride(&self) -> f64 {
        (1usize << self.conv_channels.len()) as f64
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::new();
        let mut cin = self.in_channels;
        for &cout in &self.conv_channels {
            specs.push(ConvSpec::square(cin, cout, self.kernel, 1, self.conv_pad()));
            cin = cout;
        }
        specs
    }
}

/// Model parameters by name, in a fixed order shared with checkpoints and
/// the optimizer.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub task: Task,
    params: Vec<(String, Tensor)>,
}

/// Tape node ids of interest after a forward pass.
#[derive(Clone, Debug)]
pub struct Handles {
    /// One id per model parameter, in `Model::params` order.
    pub params: Vec<NodeId>,
    /// Final backbone feature map `[N, C, H', W']` (full-feature
    /// attention attachment point).
    pub conv_feature: NodeId,
    /// Pooled per-proposal features `[R, C, h, w]` (ROI-feature
    /// attachment point); detector only.
    pub roi_feature: Option<NodeId>,
    pub logits: NodeId,
    /// Box-regression deltas `[R, 4]`; detector only.
    pub deltas: Option<NodeId>,
}

/// Classification + regression loss nodes (the detection loss is their
/// sum with equal weighting).
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub softmax: NodeId,
    pub l1: NodeId,
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("std is finite");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

impl Model {
    /// Fresh model with He-normal weights and zero biases, deterministic
    /// in `seed`.
    pub fn new(spec: ModelSpec, task: Task, seed: u64) -> Result<Model> {
        spec.validate()?;
        let mut params = Vec::new();
        let mut layer = 0u64;
        let mut push = |name: String, t: Tensor| params.push((name, t));
        for (i, conv) in spec.conv_specs().iter().enumerate() {
            let mut rng = stream_rng(seed, &[stream::INIT, layer]);
            layer += 1;
            let fan_in = conv.in_channels * conv.kernel_h * conv.kernel_w;
            push(
                format!("conv{i}.weight"),
                he_normal(
                    &[conv.out_channels, conv.in_channels, conv.kernel_h, conv.kernel_w],
                    fan_in,
                    &mut rng,
                ),
            );
            push(format!("conv{i}.bias"), Tensor::zeros(&[conv.out_channels]));
        }
        let mut d = match task {
            Task::Classify => {
                let (fh, fw) = spec.feature_hw()?;
                spec.conv_channels.last().unwrap() * fh * fw
            }
            Task::Detect => spec.conv_channels.last().unwrap() * spec.roi_out.0 * spec.roi_out.1,
        };
        for (i, &dim) in spec.fc_dims.iter().enumerate() {
            let mut rng = stream_rng(seed, &[stream::INIT, layer]);
            layer += 1;
            push(format!("fc{i}.weight"), he_normal(&[d, dim], d, &mut rng));
            push(format!("fc{i}.bias"), Tensor::zeros(&[dim]));
            d = dim;
        }
        let k_out = match task {
            Task::Classify => spec.num_classes,
            Task::Detect => spec.num_classes + 1,
        };
        let mut rng = stream_rng(seed, &[stream::INIT, layer]);
        layer += 1;
        push("cls.weight".into(), he_normal(&[d, k_out], d, &mut rng));
        push("cls.bias".into(), Tensor::zeros(&[k_out]));
        if task == Task::Detect {
            let mut rng = stream_rng(seed, &[stream::INIT, layer]);
            push("box.weight".into(), he_normal(&[d, 4], d, &mut rng));
            push("box.bias".into(), Tensor::zeros(&[4]));
        }
        Ok(Model { spec, task, params })
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<(String, Tensor)> {
        &mut self.params
    }

    pub fn set_params(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::InvalidArg(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for ((name, have), (want_name, want)) in tensors.iter().zip(&self.params) {
            if name != want_name || have.shape() != want.shape() {
                return Err(Error::InvalidArg(format!(
                    "checkpoint tensor '{name}' {:?} does not match model '{want_name}' {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        self.params = tensors;
        Ok(())
    }

    fn param_node(&self, tape: &mut Tape, idx: usize) -> NodeId {
        tape.parameter(self.params[idx].1.clone())
    }

    /// Backbone: conv -> relu -> maxpool per stage. Returns the feature
    /// node and the parameter ids consumed so far.
    fn build_backbone(&self, tape: &mut Tape, images: &Tensor) -> Result<(NodeId, Vec<NodeId>)> {
        let mut param_ids = Vec::new();
        let mut x = tape.leaf(images.clone());
        for (i, conv) in self.spec.conv_specs().iter().enumerate() {
            let w = self.param_node(tape, 2 * i);
            let b = self.param_node(tape, 2 * i + 1);
            param_ids.push(w);
            param_ids.push(b);
            x = tape.conv2d(x, w, b, *conv)?;
            x = tape.relu(x)?;
            x = tape.maxpool2d(x, 2, 2)?;
        }
        Ok((x, param_ids))
    }

    /// Shared fc trunk plus heads, starting from flattened features.
    fn build_heads(
        &self,
        tape: &mut Tape,
        flat: NodeId,
        param_ids: &mut Vec<NodeId>,
    ) -> Result<(NodeId, Option<NodeId>)> {
        let mut idx = 2 * self.spec.conv_channels.len();
        let mut x = flat;
        for _ in &self.spec.fc_dims {
            let w = self.param_node(tape, idx);
            let b = self.param_node(tape, idx + 1);
            param_ids.push(w);
            param_ids.push(b);
            idx += 2;
            x = tape.linear(x, w, b)?;
            x = tape.relu(x)?;
        }
        let w = self.param_node(tape, idx);
        let b = self.param_node(tape, idx + 1);
        param_ids.push(w);
        param_ids.push(b);
        idx += 2;
        let logits = tape.linear(x, w, b)?;
        let deltas = if self.task == Task::Detect {
            let w = self.param_node(tape, idx);
            let b = self.param_node(tape, idx + 1);
            param_ids.push(w);
            param_ids.push(b);
            Some(tape.linear(x, w, b)?)
        } else {
            None
        };
        Ok((logits, deltas))
    }

    /// Plain CNN classifier forward for a batch `[N, 3, H, W]`.
    pub fn forward_classifier(&self, images: &Tensor) -> Result<(Tape, Handles)> {
        if self.task != Task::Classify {
            return Err(Error::InvalidArg("forward_classifier on a detection model".into()));
        }
        let mut tape = Tape::new();
        let (feature, mut param_ids) = self.build_backbone(&mut tape, images)?;
        let shape = tape.value(feature).shape().to_vec();
        let flat = tape.reshape(feature, &[shape[0], shape[1] * shape[2] * shape[3]])?;
        let (logits, _) = self.build_heads(&mut tape, flat, &mut param_ids)?;
        Ok((
            tape,
            Handles {
                params: param_ids,
                conv_feature: feature,
                roi_feature: None,
                logits,
                deltas: None,
            },
        ))
    }

    /// Detector forward for one image `[1, 3, H, W]` and its proposals.
    pub fn forward_detector(&self, image: &Tensor, proposals: &[Proposal]) -> Result<(Tape, Handles)> {
        if self.task != Task::Detect {
            return Err(Error::InvalidArg("forward_detector on a classifier model".into()));
        }
        if proposals.is_empty() {
            return Err(Error::InvalidArg("forward_detector: no proposals".into()));
        }
        let mut tape = Tape::new();
        let (feature, mut param_ids) = self.build_backbone(&mut tape, image)?;
        let fshape = tape.value(feature).shape().to_vec();
        let (fh, fw) = (fshape[2] as f64, fshape[3] as f64);
        let stride = self.spec.feature_stride();
        let rois: Vec<RoiBox> = proposals
            .iter()
            .map(|p| {
                // scale to feature coords and clamp into the map
                let x1 = (p.bounds.x1 / stride).min(fw - 1.0).max(0.0);
                let y1 = (p.bounds.y1 / stride).min(fh - 1.0).max(0.0);
                let x2 = (p.bounds.x2 / stride).clamp(x1 + 1.0, fw);
                let y2 = (p.bounds.y2 / stride).clamp(y1 + 1.0, fh);
                RoiBox { sample: 0, x1, y1, x2, y2 }
            })
            .collect();
        let pooled = tape.roi_pool(feature, rois, self.spec.roi_out)?;
        let pshape = tape.value(pooled).shape().to_vec();
        let flat = tape.reshape(pooled, &[pshape[0], pshape[1] * pshape[2] * pshape[3]])?;
        let (logits, deltas) = self.build_heads(&mut tape, flat, &mut param_ids)?;
        Ok((
            tape,
            Handles {
                params: param_ids,
                conv_feature: feature,
                roi_feature: Some(pooled),
                logits,
                deltas,
            },
        ))
    }

    /// Detection loss (softmax term over all proposals plus L1 term over
    /// foreground proposals, equally weighted) appended to the tape.
    pub fn detection_loss(
        &self,
        tape: &mut Tape,
        handles: &Handles,
        proposals: &[Proposal],
    ) -> Result<LossNodes> {
        if proposals.is_empty() {
            return Err(Error::InvalidArg("detection_loss: no proposals".into()));
        }
        let labels: Vec<usize> = proposals.iter().map(|p| p.label).collect();
        let softmax = tape.softmax_xent(handles.logits, labels)?;
        let deltas = handles
            .deltas
            .ok_or_else(|| Error::Graph("detection_loss needs box deltas".into()))?;
        let mut targets = Tensor::zeros(&[proposals.len(), 4]);
        for (i, p) in proposals.iter().enumerate() {
            for j in 0..4 {
                targets.data_mut()[i * 4 + j] = p.target[j];
            }
        }
        let target_node = tape.leaf(targets);
        let weights: Vec<f64> = proposals.iter().map(|p| if p.fg { 1.0 } else { 0.0 }).collect();
        let l1 = tape.l1_loss(deltas, target_node, weights)?;
        let total = tape.add(softmax, l1)?;
        Ok(LossNodes { total, softmax, l1 })
    }
}

// ---------------------------------------------------------------------------
// proposals

/// A pre-computed region proposal in image coordinates with its assigned
/// label and regression target.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub bounds: BoxF,
    /// Class index; `num_classes` means background.
    pub label: usize,
    /// (dx, dy, dw, dh) offsets to the assigned ground-truth box; zeros
    /// for background.
    pub target: [f64; 4],
    pub fg: bool,
    pub gt_index: Option<usize>,
}

/// Foreground/background assignment threshold.
pub const FG_IOU: f64 = 0.5;
const BACKGROUND_RETRIES: usize = 100;

/// Standard box regression offsets of `from` onto `to`.
pub fn encode_target(from: &BoxF, to: &BoxF) -> [f64; 4] {
    let (px, py) = from.center();
    let (gx, gy) = to.center();
    [
        (gx - px) / from.width(),
        (gy - py) / from.height(),
        (to.width() / from.width()).ln(),
        (to.height() / from.height()).ln(),
    ]
}

/// Inverse of [`encode_target`].
pub fn decode_box(proposal: &BoxF, deltas: &[f64; 4]) -> BoxF {
    let (px, py) = proposal.center();
    let cx = px + deltas[0] * proposal.width();
    let cy = py + deltas[1] * proposal.height();
    let w = proposal.width() * deltas[2].exp();
    let h = proposal.height() * deltas[3].exp();
    BoxF::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

/// Jittered copies of every ground-truth box plus random background boxes,
/// labeled by the IoU rule (foreground at IoU >= 0.5 against the best
/// ground-truth match).
pub fn make_proposals(
    gt: &[GtObject],
    image_hw: (usize, usize),
    num_classes: usize,
    rng: &mut ChaCha8Rng,
    jitter: f64,
    n_per_gt: usize,
    n_background: usize,
) -> Result<Vec<Proposal>> {
    use rand::Rng;
    if gt.is_empty() {
        return Err(Error::InvalidArg("make_proposals: no ground truth".into()));
    }
    let (h, w) = (image_hw.0 as f64, image_hw.1 as f64);
    let mut proposals = Vec::new();
    let assign = |bounds: &BoxF| -> (Option<usize>, f64) {
        let mut best = (None, 0.0);
        for (i, g) in gt.iter().enumerate() {
            let v = iou(bounds, &g.bounds);
            if v > best.1 {
                best = (Some(i), v);
            }
        }
        best
    };
    for g in gt {
        for _ in 0..n_per_gt {
            let bounds = if jitter == 0.0 {
                g.bounds
            } else {
                let (cx, cy) = g.bounds.center();
                let (bw, bh) = (g.bounds.width(), g.bounds.height());
                let cx = cx + rng.random_range(-jitter..jitter) * bw;
                let cy = cy + rng.random_range(-jitter..jitter) * bh;
                let bw = bw * (1.0 + rng.random_range(-jitter..jitter));
                let bh = bh * (1.0 + rng.random_range(-jitter..jitter));
                let b = BoxF::new(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)
                    .clamped(w, h);
                if b.width() < 2.0 || b.height() < 2.0 {
                    g.bounds
                } else {
                    b
                }
            };
            let (best_idx, best_iou) = assign(&bounds);
            let (label, target, fg, gt_index) = match best_idx {
                Some(i) if best_iou >= FG_IOU => (
                    gt[i].class,
                    encode_target(&bounds, &gt[i].bounds),
                    true,
                    Some(i),
                ),
                _ => (num_classes, [0.0; 4], false, None),
            };
            proposals.push(Proposal {
                bounds,
                label,
                target,
                fg,
                gt_index,
            });
        }
    }
    let mut placed = 0;
    for _ in 0..BACKGROUND_RETRIES * n_background.max(1) {
        if placed == n_background {
            break;
        }
        let bw = rng.random_range(0.1..0.6) * w;
        let bh = rng.random_range(0.1..0.6) * h;
        let x1 = rng.random_range(0.0..(w - bw));
        let y1 = rng.random_range(0.0..(h - bh));
        let bounds = BoxF::new(x1, y1, x1 + bw, y1 + bh);
        if gt.iter().all(|g| iou(&bounds, &g.bounds) < FG_IOU) {
            proposals.push(Proposal {
                bounds,
                label: num_classes,
                target: [0.0; 4],
                fg: false,
                gt_index: None,
            });
            placed += 1;
        }
    }
    if placed < n_background {
        return Err(Error::Data(format!(
            "only placed {placed} of {n_background} background boxes"
        )));
    }
    Ok(proposals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            in_channels: 3,
            image_hw: (16, 16),
            conv_channels: vec![4],
            kernel: 3,
            padding: Padding::Same,
            roi_out: (2, 2),
            fc_dims: vec![8],
            num_classes: 2,
        }
    }

    fn one_gt() -> Vec<GtObject> {
        vec![GtObject {
            class: 1,
            bounds: BoxF::new(3.0, 4.0, 11.0, 12.0),
        }]
    }

    #[test]
    fn classifier_logits_shape_and_row_identity() {
        let model = Model::new(tiny_spec(), Task::Classify, 7).unwrap();
        let one = Tensor::from_fn(&[1, 3, 16, 16], |i| (i % 13) as f64 / 13.0);
        let mut two = Tensor::zeros(&[2, 3, 16, 16]);
        for i in 0..one.len() {
            two.data_mut()[i] = one.data()[i];
            two.data_mut()[one.len() + i] = one.data()[i];
        }
        let (tape, h) = model.forward_classifier(&two).unwrap();
        let logits = tape.value(h.logits);
        assert_eq!(logits.shape(), &[2, 2]);
        assert_eq!(&logits.data()[0..2], &logits.data()[2..4]);
    }

    #[test]
    fn zero_weight_classifier_outputs_bias() {
        let mut model = Model::new(tiny_spec(), Task::Classify, 7).unwrap();
        for (name, t) in model.params_mut() {
            if name.ends_with("weight") {
                *t = Tensor::zeros(t.shape());
            }
        }
        let bias = vec![0.3, -0.7];
        for (name, t) in model.params_mut() {
            if name == "cls.bias" {
                *t = Tensor::new(vec![2], bias.clone()).unwrap();
            }
        }
        let images = Tensor::from_fn(&[2, 3, 16, 16], |i| (i % 7) as f64);
        let (tape, h) = model.forward_classifier(&images).unwrap();
        let logits = tape.value(h.logits);
        assert_eq!(&logits.data()[0..2], &bias[..]);
        assert_eq!(&logits.data()[2..4], &bias[..]);
    }

    #[test]
    fn detector_shapes_and_duplicate_proposals() {
        let model = Model::new(tiny_spec(), Task::Detect, 3).unwrap();
        let image = Tensor::from_fn(&[1, 3, 16, 16], |i| (i % 11) as f64 / 11.0);
        let p = Proposal {
            bounds: BoxF::new(0.0, 0.0, 16.0, 16.0),
            label: 1,
            target: [0.0; 4],
            fg: true,
            gt_index: Some(0),
        };
        let (tape, h) = model.forward_detector(&image, &[p.clone(), p]).unwrap();
        let logits = tape.value(h.logits);
        assert_eq!(logits.shape(), &[2, 3]); // K+1 classes
        assert_eq!(&logits.data()[0..3], &logits.data()[3..6]);
        assert_eq!(tape.value(h.deltas.unwrap()).shape(), &[2, 4]);
    }

    #[test]
    fn detector_rejects_empty_proposals() {
        let model = Model::new(tiny_spec(), Task::Detect, 3).unwrap();
        let image = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(model.forward_detector(&image, &[]).is_err());
    }

    #[test]
    fn jitter_zero_gives_exact_copies_with_zero_targets() {
        let mut rng = stream_rng(0, &[stream::PROPOSALS]);
        let proposals = make_proposals(&one_gt(), (16, 16), 2, &mut rng, 0.0, 4, 2).unwrap();
        for p in proposals.iter().take(4) {
            assert_eq!(p.bounds, one_gt()[0].bounds);
            assert!(p.fg);
            assert_eq!(p.label, 1);
            assert_eq!(p.target, [0.0; 4]);
        }
        assert_eq!(proposals.len(), 6);
        assert!(proposals.iter().skip(4).all(|p| !p.fg && p.label == 2));
    }

    #[test]
    fn proposals_are_deterministic_given_seed() {
        let mut a = stream_rng(9, &[stream::PROPOSALS, 5]);
        let mut b = stream_rng(9, &[stream::PROPOSALS, 5]);
        let pa = make_proposals(&one_gt(), (16, 16), 2, &mut a, 0.2, 6, 6).unwrap();
        let pb = make_proposals(&one_gt(), (16, 16), 2, &mut b, 0.2, 6, 6).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn foreground_proposals_have_partners_and_valid_targets() {
        let mut rng = stream_rng(4, &[stream::PROPOSALS]);
        let proposals = make_proposals(&one_gt(), (16, 16), 2, &mut rng, 0.15, 8, 4).unwrap();
        for p in &proposals {
            if p.fg {
                let gi = p.gt_index.expect("fg proposal has a partner");
                let decoded = decode_box(&p.bounds, &p.target);
                assert!(decoded.max_corner_diff(&one_gt()[gi].bounds) < 1e-9);
            }
        }
    }

    #[test]
    fn target_encoding_round_trips() {
        let a = BoxF::new(2.0, 3.0, 9.0, 8.0);
        let b = BoxF::new(1.5, 2.5, 10.0, 9.5);
        let decoded = decode_box(&a, &encode_target(&a, &b));
        assert!(decoded.max_corner_diff(&b) < 1e-12);
    }
}
