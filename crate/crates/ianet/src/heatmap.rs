//! Attention heat-map export: bilinear upsampling, a fixed blue-to-red
//! color ramp, and alpha blending onto the source image, written as PPM.
//! Output bytes are deterministic for fixed inputs.

use std::path::Path;

use crate::attention::minmax01;
use crate::boxes::BoxF;
use crate::detector::{Model, Proposal, Task};
use crate::error::{Error, Result};
use crate::ppm;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::argmax_row;

/// Align-corners bilinear upsampling of a `[h, w]` map to `[oh, ow]`.
pub fn bilinear_upsample(map: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let sy = if oh > 1 { (h - 1) as f64 / (oh - 1) as f64 } else { 0.0 };
    let sx = if ow > 1 { (w - 1) as f64 / (ow - 1) as f64 } else { 0.0 };
    Tensor::from_fn(&[oh, ow], |i| {
        let (y, x) = (i / ow, i % ow);
        let fy = y as f64 * sy;
        let fx = x as f64 * sx;
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let top = map.at2(y0, x0) * (1.0 - tx) + map.at2(y0, x1) * tx;
        let bottom = map.at2(y1, x0) * (1.0 - tx) + map.at2(y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

/// Linear blue (t=0) to red (t=1) ramp.
pub fn blue_red_ramp(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [t, 0.0, 1.0 - t]
}

/// Alpha-blends the min-max normalized attention map over the image
/// (inside `region` only, when given). `alpha` = 0.5 for exports.
pub fn overlay_heatmap(
    image: &Tensor,
    map: &Tensor,
    region: Option<BoxF>,
    alpha: f64,
) -> Result<Tensor> {
    if image.shape().len() != 3 || image.shape()[0] != 3 {
        return Err(Error::Shape(format!(
            "overlay image must be [3, H, W], got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let (y0, x0, rh, rw) = match region {
        None => (0, 0, h, w),
        Some(b) => {
            let b = b.clamped(w as f64, h as f64);
            if !b.is_valid() {
                return Err(Error::InvalidArg("heatmap region outside the image".into()));
            }
            let y0 = b.y1.round() as usize;
            let x0 = b.x1.round() as usize;
            let rh = ((b.y2.round() as usize).min(h) - y0).max(1);
            let rw = ((b.x2.round() as usize).min(w) - x0).max(1);
            (y0, x0, rh, rw)
        }
    };
    let up = bilinear_upsample(&minmax01(map), rh, rw);
    let mut out = image.clone();
    for y in 0..rh {
        for x in 0..rw {
            let color = blue_red_ramp(up.at2(y, x));
            for c in 0..3 {
                let idx = out.idx3(c, y0 + y, x0 + x);
                out.data_mut()[idx] = (1.0 - alpha) * out.data()[idx] + alpha * color[c];
            }
        }
    }
    Ok(out)
}

fn predicted_class(tape: &Tape, logits: crate::tape::NodeId, foreground_only: usize) -> usize {
    let row = tape.value(logits).data();
    argmax_row(&row[..foreground_only.min(row.len())])
}

/// Overall attention map of a trained model for one image: the attachment
/// point is the final backbone feature map (or the pooled features of
/// `roi`, detector only), probed at the model's predicted class.
pub fn model_attention(model: &Model, image: &Tensor, roi: Option<BoxF>) -> Result<(Tensor, Option<BoxF>)> {
    let shape = image.shape();
    let batch = image.reshaped(&[1, shape[0], shape[1], shape[2]])?;
    match (model.task, roi) {
        (Task::Classify, Some(_)) => Err(Error::InvalidArg(
            "ROI heat-maps need a detection checkpoint".into(),
        )),
        (Task::Classify, None) => {
            let (tape, h) = model.forward_classifier(&batch)?;
            let class = predicted_class(&tape, h.logits, model.spec.num_classes);
            Ok((crate::eval::classifier_attention(model, image, class)?, None))
        }
        (Task::Detect, target) => {
            let bounds = target.unwrap_or(BoxF::new(0.0, 0.0, shape[2] as f64, shape[1] as f64));
            let probe = Proposal {
                bounds,
                label: 0,
                target: [0.0; 4],
                fg: true,
                gt_index: None,
            };
            let (tape, h) = model.forward_detector(&batch, &[probe])?;
            // predicted foreground class of this ROI
            let class = predicted_class(&tape, h.logits, model.spec.num_classes);
            Ok((
                crate::eval::detector_roi_attention(model, image, bounds, class)?,
                target,
            ))
        }
    }
}

/// Computes the attention map, overlays it (alpha 0.5), and writes a PPM.
pub fn export_heatmap(model: &Model, image: &Tensor, roi: Option<BoxF>, path: &Path) -> Result<()> {
    let (map, region) = model_attention(model, image, roi)?;
    let blended = overlay_heatmap(image, &map, region, 0.5)?;
    ppm::write_ppm(path, &blended)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_corners_and_center_closed_form() {
        let map = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = bilinear_upsample(&map, 4, 4);
        assert_eq!(up.at2(0, 0), 1.0);
        assert_eq!(up.at2(0, 3), 2.0);
        assert_eq!(up.at2(3, 0), 3.0);
        assert_eq!(up.at2(3, 3), 4.0);
        // (1, 1) maps to source (1/3, 1/3)
        let t = 1.0 / 3.0;
        let want = (1.0 * (1.0 - t) + 2.0 * t) * (1.0 - t) + (3.0 * (1.0 - t) + 4.0 * t) * t;
        assert!((up.at2(1, 1) - want).abs() < 1e-12);
    }

    #[test]
    fn bilinear_identity_when_sizes_match() {
        let map = Tensor::from_fn(&[3, 5], |i| i as f64);
        assert!(bilinear_upsample(&map, 3, 5).bits_eq(&map));
    }

    #[test]
    fn constant_attention_tints_uniformly() {
        let image = Tensor::filled(&[3, 8, 8], 0.2);
        let map = Tensor::filled(&[4, 4], 1.0);
        let out = overlay_heatmap(&image, &map, None, 0.5).unwrap();
        // constant map -> minmax 0.5 -> ramp (0.5, 0, 0.5)
        let want = [
            0.5 * 0.2 + 0.5 * 0.5,
            0.5 * 0.2,
            0.5 * 0.2 + 0.5 * 0.5,
        ];
        for c in 0..3 {
            for i in 0..64 {
                assert!((out.data()[c * 64 + i] - want[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(blue_red_ramp(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(blue_red_ramp(1.0), [1.0, 0.0, 0.0]);
    }
}
