//! Inverted-attention generation: gradient-guided attention maps, their
//! spatial and channel-wise inversion under four strategies, mask
//! combination, and feature refinement.
//!
//! Everything here is a pure function of its inputs (plus an explicit RNG
//! for the random strategy); the training loop feeds the resulting mask
//! back into the tape as a constant.

use std::io::Write;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Random,
    Overturn,
    HardThreshold,
    SoftThreshold,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Overturn => "overturn",
            Strategy::HardThreshold => "hard",
            Strategy::SoftThreshold => "soft",
        }
    }

    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "random" => Ok(Strategy::Random),
            "overturn" => Ok(Strategy::Overturn),
            "hard" | "hard_threshold" => Ok(Strategy::HardThreshold),
            "soft" | "soft_threshold" => Ok(Strategy::SoftThreshold),
            _ => Err(Error::Config(format!("unknown inversion strategy '{s}'"))),
        }
    }

    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::Overturn,
        Strategy::HardThreshold,
        Strategy::SoftThreshold,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Spatial,
    Channel,
    SpatialAndChannel,
}

impl Orientation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Orientation::Spatial => "spatial",
            Orientation::Channel => "channel",
            Orientation::SpatialAndChannel => "spatial_and_channel",
        }
    }

    pub fn parse(s: &str) -> Result<Orientation> {
        match s {
            "spatial" => Ok(Orientation::Spatial),
            "channel" => Ok(Orientation::Channel),
            "spatial_and_channel" | "both" => Ok(Orientation::SpatialAndChannel),
            _ => Err(Error::Config(format!("unknown inversion orientation '{s}'"))),
        }
    }

    pub const ALL: [Orientation; 3] = [
        Orientation::Spatial,
        Orientation::Channel,
        Orientation::SpatialAndChannel,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// Mask the pooled per-proposal features (after ROI pooling).
    RoiFeature,
    /// Mask the whole-image feature map (before ROI pooling).
    FullFeature,
}

impl Placement {
    pub fn as_str(&self) -> &'static str {
        match self {
            Placement::RoiFeature => "roi_feature",
            Placement::FullFeature => "full_feature",
        }
    }

    pub fn parse(s: &str) -> Result<Placement> {
        match s {
            "roi_feature" | "roi" => Ok(Placement::RoiFeature),
            "full_feature" | "full" => Ok(Placement::FullFeature),
            _ => Err(Error::Config(format!("unknown placement '{s}'"))),
        }
    }
}

/// Which scalar the probe backward starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    /// Sum of pre-softmax scores at the ground-truth class (default).
    GtScore,
    /// The classification loss itself.
    GtLoss,
}

impl Probe {
    pub fn as_str(&self) -> &'static str {
        match self {
            Probe::GtScore => "gt_score",
            Probe::GtLoss => "gt_loss",
        }
    }

    pub fn parse(s: &str) -> Result<Probe> {
        match s {
            "gt_score" => Ok(Probe::GtScore),
            "gt_loss" => Ok(Probe::GtLoss),
            _ => Err(Error::Config(format!("unknown probe '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionConfig {
    pub strategy: Strategy,
    pub orientation: Orientation,
    /// Fraction of pixels dropped by the soft and random strategies.
    pub spatial_drop_ratio: f64,
    /// Absolute threshold for the hard strategy, applied to the min-max
    /// normalized map.
    pub t_s: f64,
    /// Fraction of channels (largest weights first) that receive the
    /// spatial mask.
    pub channel_select_ratio: f64,
    pub placement: Placement,
    /// Fraction of ROIs (or images, in full-feature placement) refined per
    /// step; the rest keep an all-ones mask.
    pub apply_probability: f64,
    pub probe: Probe,
    pub rng_seed: u64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            strategy: Strategy::SoftThreshold,
            orientation: Orientation::SpatialAndChannel,
            spatial_drop_ratio: 0.33,
            t_s: 0.5,
            channel_select_ratio: 0.8,
            placement: Placement::RoiFeature,
            apply_probability: 1.0,
            probe: Probe::GtScore,
            rng_seed: 0,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("spatial_drop_ratio", self.spatial_drop_ratio),
            ("channel_select_ratio", self.channel_select_ratio),
            ("apply_probability", self.apply_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArg(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !self.t_s.is_finite() {
            return Err(Error::InvalidArg(format!("t_s = {} not finite", self.t_s)));
        }
        Ok(())
    }
}

/// Gradient-guided attention: spatial map plus per-channel weights.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    /// `[H, W]` weighted channel sum.
    pub m: Tensor,
    /// Channel weights, global average of the gradient per channel.
    pub weights: Vec<f64>,
}

/// The combined inverted-attention mask with its provenance.
#[derive(Clone, Debug)]
pub struct InvertedAttentionMask {
    /// `[C, H, W]` mask applied to the features.
    pub mask: Tensor,
    /// `[H, W]` spatial component.
    pub spatial: Tensor,
    /// Channel component: 0 marks channels receiving the spatial mask.
    pub channel: Vec<f64>,
    pub strategy: Strategy,
}

fn expect_chw(t: &Tensor, what: &str) -> Result<()> {
    if t.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "{what}: expected [C, H, W], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Attention map of a feature/gradient pair: weights are per-channel
/// global averages of the gradient, and the map is the weighted channel
/// sum of the features. Raw signed values: no rectification, no
/// normalization.
pub fn gradcam_map(features: &Tensor, grads: &Tensor) -> Result<AttentionMap> {
    expect_chw(features, "gradcam features")?;
    if features.shape() != grads.shape() {
        return Err(Error::Shape(format!(
            "gradcam: features {:?} vs grads {:?}",
            features.shape(),
            grads.shape()
        )));
    }
    let (c, h, w) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let hw = h * w;
    let mut weights = vec![0.0; c];
    for ci in 0..c {
        let slice = &grads.data()[ci * hw..(ci + 1) * hw];
        weights[ci] = slice.iter().sum::<f64>() / hw as f64;
    }
    let mut m = Tensor::zeros(&[h, w]);
    for ci in 0..c {
        let slice = &features.data()[ci * hw..(ci + 1) * hw];
        for (o, &f) in m.data_mut().iter_mut().zip(slice) {
            *o += weights[ci] * f;
        }
    }
    Ok(AttentionMap { m, weights })
}

/// Min-max normalization to [0, 1]; constant inputs map to 0.5 everywhere.
pub fn minmax01(m: &Tensor) -> Tensor {
    let lo = m.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = m.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Tensor::filled(m.shape(), 0.5);
    }
    m.map(|v| (v - lo) / (hi - lo))
}

/// Indices of the k largest values, ties broken by smaller index first.
fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("attention values are finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Binary map: 0 where the attention strictly exceeds the threshold,
/// 1 elsewhere (boundary values kept).
pub fn invert_spatial_hard(m: &Tensor, t_s: f64) -> Tensor {
    m.map(|v| if v > t_s { 0.0 } else { 1.0 })
}

/// Zeroes exactly floor(drop_ratio * len) of the largest entries.
pub fn invert_spatial_soft(m: &Tensor, drop_ratio: f64) -> Tensor {
    let k = (drop_ratio * m.len() as f64).floor() as usize;
    let mut out = Tensor::ones(m.shape());
    for i in top_k_indices(m.data(), k.min(m.len())) {
        out.data_mut()[i] = 0.0;
    }
    out
}

/// Zeroes exactly floor(drop_ratio * H*W) uniformly chosen entries.
pub fn invert_spatial_random(shape: (usize, usize), drop_ratio: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let (h, w) = shape;
    let hw = h * w;
    let k = ((drop_ratio * hw as f64).floor() as usize).min(hw);
    let mut out = Tensor::ones(&[h, w]);
    for i in rand::seq::index::sample(rng, hw, k) {
        out.data_mut()[i] = 0.0;
    }
    out
}

/// Continuous inversion: 1 minus the min-max normalized map.
pub fn invert_overturn(m: &Tensor) -> Tensor {
    minmax01(m).map(|v| 1.0 - v)
}

/// Channel-wise inversion vector: 0 for the floor(ratio * C) channels with
/// the largest weights (these receive the spatial mask), 1 elsewhere.
pub fn invert_channel(weights: &[f64], channel_select_ratio: f64) -> Vec<f64> {
    let k = ((channel_select_ratio * weights.len() as f64).floor() as usize).min(weights.len());
    let mut out = vec![1.0; weights.len()];
    for i in top_k_indices(weights, k) {
        out[i] = 0.0;
    }
    out
}

/// Combines spatial and channel components into the full [C, H, W] mask.
///
/// - spatial_and_channel: mask[c, i] = spatial[i] where channel[c] = 0,
///   1 elsewhere.
/// - spatial: every channel gets the spatial map.
/// - channel: selected channels (channel[c] = 0) are dropped entirely.
pub fn combine_mask(spatial: &Tensor, channel: &[f64], orientation: Orientation) -> Result<Tensor> {
    if spatial.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "combine_mask: spatial map must be [H, W], got {:?}",
            spatial.shape()
        )));
    }
    let (h, w) = (spatial.shape()[0], spatial.shape()[1]);
    let c = channel.len();
    if c == 0 {
        return Err(Error::Shape("combine_mask: empty channel vector".into()));
    }
    let hw = h * w;
    let mut mask = Tensor::ones(&[c, h, w]);
    for ci in 0..c {
        let dst = &mut mask.data_mut()[ci * hw..(ci + 1) * hw];
        match orientation {
            Orientation::Spatial => dst.copy_from_slice(spatial.data()),
            Orientation::Channel => {
                if channel[ci] == 0.0 {
                    dst.fill(0.0);
                }
            }
            Orientation::SpatialAndChannel => {
                if channel[ci] == 0.0 {
                    dst.copy_from_slice(spatial.data());
                }
            }
        }
    }
    Ok(mask)
}

/// Elementwise product of features and mask. When used on the tape the
/// mask enters as a constant, so the feature gradient is the upstream
/// gradient scaled by the mask.
pub fn refine_features(features: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if features.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "refine_features: {:?} vs {:?}",
            features.shape(),
            mask.shape()
        )));
    }
    let mut out = features.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        *o *= m;
    }
    Ok(out)
}

/// Full inverted-attention pipeline for one feature/gradient pair:
/// attention map, strategy-selected spatial inversion, channel inversion,
/// combination.
pub fn generate_inverted_attention(
    features: &Tensor,
    grads: &Tensor,
    cfg: &AttentionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<InvertedAttentionMask> {
    cfg.validate()?;
    let att = gradcam_map(features, grads)?;
    let (h, w) = (att.m.shape()[0], att.m.shape()[1]);
    let spatial = match cfg.strategy {
        Strategy::Random => invert_spatial_random((h, w), cfg.spatial_drop_ratio, rng),
        Strategy::Overturn => invert_overturn(&att.m),
        Strategy::HardThreshold => invert_spatial_hard(&minmax01(&att.m), cfg.t_s),
        Strategy::SoftThreshold => invert_spatial_soft(&att.m, cfg.spatial_drop_ratio),
    };
    let channel = invert_channel(&att.weights, cfg.channel_select_ratio);
    let mask = combine_mask(&spatial, &channel, cfg.orientation)?;
    Ok(InvertedAttentionMask {
        mask,
        spatial,
        channel,
        strategy: cfg.strategy,
    })
}

/// Text dump for debugging and golden-file tests: header `C H W strategy`,
/// then one line of W values per (channel, row).
pub fn write_mask_text(mask: &InvertedAttentionMask, out: &mut impl Write) -> std::io::Result<()> {
    let (c, h, w) = (
        mask.mask.shape()[0],
        mask.mask.shape()[1],
        mask.mask.shape()[2],
    );
    writeln!(out, "{c} {h} {w} {}", mask.strategy.as_str())?;
    for ci in 0..c {
        for y in 0..h {
            let row: Vec<String> = (0..w)
                .map(|x| format!("{}", mask.mask.at3(ci, y, x)))
                .collect();
            writeln!(out, "{}", row.join(" "))?;
        }
    }
    Ok(())
}
