//! Central finite-difference validation of every differentiable operator
//! against the tape's analytic backward pass.
//!
//! Random inputs are drawn with pairwise-distinct values kept away from
//! operator kinks (ReLU at zero, pool ties, L1 at zero residual) so the
//! difference quotient is well defined at the probe step size.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::{ConvSpec, RoiBox};
use crate::rng::stream_rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
pub const INSTANCES: usize = 10;

#[derive(Clone, Debug)]
pub struct GradCheckResult {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Values with pairwise gaps of at least 0.01 and magnitudes of at least
/// 0.06, in random order with optional random signs.
fn distinct_values(n: usize, signed: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut magnitudes: Vec<f64> = (0..n).map(|i| 0.06 + 0.01 * i as f64).collect();
    magnitudes.shuffle(rng);
    magnitudes
        .into_iter()
        .map(|m| {
            if signed && rng.random_range(0.0..1.0) < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect()
}

fn distinct_tensor(shape: &[usize], signed: bool, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), distinct_values(n, signed, rng)).unwrap()
}

type Builder<'a> = &'a dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>;

/// Max relative error between the tape gradient and central differences
/// over every element of every input.
fn check_gradients(inputs: &[Tensor], build: Builder) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.parameter(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    let grads = tape.backward_params(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let l = build(&mut t, &ids)?;
        t.value(l).scalar_value()
    };

    let mut max_rel: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = &grads[&ids[i]];
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * STEP);
            let a = analytic.data()[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

fn check_op(op: &str, seed: u64, instance: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, &[0x6fd, instance]);
    match op {
        "conv2d" => {
            let spec = if instance % 2 == 0 {
                ConvSpec::square(3, 4, 3, 1, 1)
            } else {
                ConvSpec::square(3, 4, 3, 2, 0)
            };
            let input = distinct_tensor(&[2, 3, 5, 5], true, &mut rng);
            let weights = distinct_tensor(&[4, 3, 3, 3], true, &mut rng);
            let bias = distinct_tensor(&[4], true, &mut rng);
            check_gradients(&[input, weights, bias], &|t, ids| {
                let y = t.conv2d(ids[0], ids[1], ids[2], spec)?;
                t.sum(y)
            })
        }
        "relu" => {
            let input = distinct_tensor(&[3, 4], true, &mut rng);
            check_gradients(&[input], &|t, ids| {
                let y = t.relu(ids[0])?;
                t.sum(y)
            })
        }
        "maxpool2d" => {
            let input = distinct_tensor(&[1, 2, 4, 4], true, &mut rng);
            check_gradients(&[input], &|t, ids| {
                let y = t.maxpool2d(ids[0], 2, 2)?;
                t.sum(y)
            })
        }
        "roi_pool" => {
            let input = distinct_tensor(&[1, 2, 6, 6], true, &mut rng);
            let mut rois = Vec::new();
            for _ in 0..2 {
                let x1 = rng.random_range(0.0..3.5);
                let y1 = rng.random_range(0.0..3.5);
                let x2 = rng.random_range(x1 + 1.2..6.0);
                let y2 = rng.random_range(y1 + 1.2..6.0);
                rois.push(RoiBox { sample: 0, x1, y1, x2, y2 });
            }
            check_gradients(&[input], &move |t, ids| {
                let y = t.roi_pool(ids[0], rois.clone(), (2, 2))?;
                t.sum(y)
            })
        }
        "linear" => {
            let input = distinct_tensor(&[3, 4], true, &mut rng);
            let weights = distinct_tensor(&[4, 2], true, &mut rng);
            let bias = distinct_tensor(&[2], true, &mut rng);
            check_gradients(&[input, weights, bias], &|t, ids| {
                let y = t.linear(ids[0], ids[1], ids[2])?;
                t.sum(y)
            })
        }
        "softmax_xent" => {
            let logits = distinct_tensor(&[4, 5], true, &mut rng);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            check_gradients(&[logits], &move |t, ids| t.softmax_xent(ids[0], labels.clone()))
        }
        "l1_reg_loss" => {
            let pred = distinct_tensor(&[3, 4], true, &mut rng);
            let diffs = distinct_tensor(&[3, 4], true, &mut rng);
            let mut target = pred.clone();
            for (tv, d) in target.data_mut().iter_mut().zip(diffs.data()) {
                *tv -= d;
            }
            let weights = vec![1.0, 0.0, 1.0];
            check_gradients(&[pred, target], &move |t, ids| {
                t.l1_loss(ids[0], ids[1], weights.clone())
            })
        }
        "refine_features" => {
            // elementwise product with a constant binary mask
            let features = distinct_tensor(&[2, 3, 3], true, &mut rng);
            let mask = Tensor::from_fn(&[2, 3, 3], |i| ((i * 7 + instance as usize) % 3 == 0) as u8 as f64);
            check_gradients(&[features], &move |t, ids| {
                let m = t.leaf(mask.clone());
                let y = t.mul(ids[0], m)?;
                t.sum(y)
            })
        }
        "add" => {
            let a = distinct_tensor(&[2, 3], true, &mut rng);
            let b = distinct_tensor(&[2, 3], true, &mut rng);
            check_gradients(&[a, b], &|t, ids| {
                let y = t.add(ids[0], ids[1])?;
                t.sum(y)
            })
        }
        "mul" => {
            let a = distinct_tensor(&[2, 3], true, &mut rng);
            let b = distinct_tensor(&[2, 3], true, &mut rng);
            check_gradients(&[a, b], &|t, ids| {
                let y = t.mul(ids[0], ids[1])?;
                t.sum(y)
            })
        }
        "scale" => {
            let a = distinct_tensor(&[5], true, &mut rng);
            check_gradients(&[a], &|t, ids| {
                let y = t.scale(ids[0], -1.7)?;
                t.sum(y)
            })
        }
        "reshape" => {
            let a = distinct_tensor(&[2, 6], true, &mut rng);
            check_gradients(&[a], &|t, ids| {
                let y = t.reshape(ids[0], &[3, 4])?;
                let r = t.relu(y)?;
                t.sum(r)
            })
        }
        "gather_labels" => {
            let logits = distinct_tensor(&[4, 3], true, &mut rng);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            check_gradients(&[logits], &move |t, ids| {
                let g = t.gather_labels(ids[0], labels.clone())?;
                t.sum(g)
            })
        }
        other => unreachable!("unknown gradcheck op {other}"),
    }
}

pub const OPS: [&str; 13] = [
    "conv2d",
    "relu",
    "maxpool2d",
    "roi_pool",
    "linear",
    "softmax_xent",
    "l1_reg_loss",
    "refine_features",
    "add",
    "mul",
    "scale",
    "reshape",
    "gather_labels",
];

/// Runs every op through `INSTANCES` random finite-difference checks.
pub fn run_gradcheck(seed: u64) -> Result<Vec<GradCheckResult>> {
    let mut out = Vec::new();
    for op in OPS {
        let mut max_rel: f64 = 0.0;
        for instance in 0..INSTANCES as u64 {
            max_rel = max_rel.max(check_op(op, seed, instance)?);
        }
        out.push(GradCheckResult {
            op: op.to_string(),
            instances: INSTANCES,
            max_rel_err: max_rel,
            passed: max_rel < TOLERANCE,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_ops_are_tight() {
        for op in ["add", "mul", "scale", "relu", "linear"] {
            let rel = check_op(op, 1, 0).unwrap();
            assert!(rel < 1e-6, "{op}: rel err {rel}");
        }
    }

    #[test]
    fn full_suite_passes() {
        for r in run_gradcheck(7).unwrap() {
            assert!(r.passed, "{} failed with max rel err {}", r.op, r.max_rel_err);
        }
    }
}
