//! Central finite-difference checks of every differentiable operation.
//!
//! Each fixture draws random real64 inputs, reduces the op output to a
//! scalar with a fixed random projection `sum(out ∘ R)`, and compares the
//! analytic gradient of every input entry against
//! `(f(x + h) − f(x − h)) / 2h`.

use crate::error::Result;
use crate::layers::agc::{agc_backward, agc_forward};
use crate::layers::batchnorm::{batchnorm_backward, batchnorm_train, DEFAULT_EPSILON};
use crate::layers::xent::IGNORE_LABEL;
use crate::layers::{LabelMap, Padding};
use crate::network::{Network, NetworkSpec, NormMode, Phase};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
/// Differences at or below this are treated as exact agreement.
pub const ABS_FLOOR: f64 = 1e-7;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_FIXTURES: usize = 50;

/// `0` if `|a − n| ≤ 1e-7`, else `|a − n| / max(|a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub fixtures: usize,
    /// Scalar gradient entries compared.
    pub entries: usize,
    pub max_rel_error: f64,
    /// Largest `|analytic − numeric|`, for scale.
    pub max_abs_diff: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub max_rel_error: f64,
    pub max_abs_diff: f64,
    pub entries: usize,
}

/// Max relative error between `analytic` and central differences of `loss`.
pub fn compare(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    loss: impl Fn(&[Tensor<f64>]) -> Result<f64>,
) -> Result<Agreement> {
    let mut worst: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut entries = 0;
    let mut probe = inputs.to_vec();
    for (i, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + STEP;
            let up = loss(&probe)?;
            probe[i].data_mut()[j] = x - STEP;
            let down = loss(&probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(g.data()[j], numeric));
            worst_abs = worst_abs.max((g.data()[j] - numeric).abs());
            entries += 1;
        }
    }
    Ok(Agreement {
        max_rel_error: worst,
        max_abs_diff: worst_abs,
        entries,
    })
}

/// Records an op on a tape given its input variables.
type BuildFn = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(lo, hi)).collect())
}

fn random_shape4(rng: &mut Rng, max: usize) -> [usize; 4] {
    [1, 1, 1, 1].map(|_| 1 + rng.below(max as u64) as usize)
}

fn projected(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Records `build` on a fresh tape with `inputs` as leaves and returns
/// `sum(out ∘ r)`; with `grads`, also the input gradients.
fn tape_projection(
    inputs: &[Tensor<f64>],
    r: Option<&Tensor<f64>>,
    build: &BuildFn,
    grads: bool,
) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let loss = match r {
        Some(r) => {
            let rv = tape.constant(r.clone());
            let m = tape.mul(out, rv)?;
            tape.sum(m)?
        }
        None => out,
    };
    let value = tape.value(loss).item()?;
    if !grads {
        return Ok((value, Vec::new()));
    }
    let mut g = tape.backward(loss)?;
    Ok((
        value,
        vars.iter()
            .map(|&v| g.take(v).expect("leaf gradient"))
            .collect(),
    ))
}

/// Finite-difference check of a tape-recorded op. A projection tensor is
/// drawn to match the output shape unless the op already yields a scalar.
fn check_tape_op(rng: &mut Rng, inputs: Vec<Tensor<f64>>, build: &BuildFn) -> Result<Agreement> {
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let r = if shape.iter().product::<usize>() == 1 {
        None
    } else {
        Some(random_tensor(rng, &shape, -1.0, 1.0)?)
    };
    let (_, analytic) = tape_projection(&inputs, r.as_ref(), build, true)?;
    compare(&inputs, &analytic, |x| {
        Ok(tape_projection(x, r.as_ref(), build, false)?.0)
    })
}

fn suite(
    name: &str,
    fixtures: usize,
    tolerance: f64,
    mut one: impl FnMut() -> Result<Agreement>,
) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        name: name.to_string(),
        fixtures,
        entries: 0,
        max_rel_error: 0.0,
        max_abs_diff: 0.0,
        tolerance,
    };
    for _ in 0..fixtures {
        let a = one()?;
        report.max_rel_error = report.max_rel_error.max(a.max_rel_error);
        report.max_abs_diff = report.max_abs_diff.max(a.max_abs_diff);
        report.entries += a.entries;
    }
    Ok(report)
}

/// All four AGC gradients, from the standalone forward/backward pair.
pub fn check_agc(rng: &mut Rng, fixtures: usize) -> Result<SuiteReport> {
    suite("agc", fixtures, LAYER_TOLERANCE, || {
        let shape = random_shape4(rng, 6);
        let c = shape[1];
        let inputs = vec![
            random_tensor(rng, &shape, -2.0, 2.0)?,
            random_tensor(rng, &[c], -0.5, 2.0)?,
            random_tensor(rng, &[c], -2.0, 2.0)?,
            random_tensor(rng, &[c], -1.0, 1.0)?,
        ];
        let r = random_tensor(rng, &shape, -1.0, 1.0)?;
        let g = agc_backward(&inputs[0], &inputs[1], &inputs[2], &inputs[3], &r)?;
        let analytic = vec![g.z, g.lambda, g.gamma, g.beta];
        compare(&inputs, &analytic, |x| {
            Ok(projected(&agc_forward(&x[0], &x[1], &x[2], &x[3])?, &r))
        })
    })
}

/// Train-mode batch normalization: input, scale and shift gradients.
pub fn check_batchnorm(rng: &mut Rng, fixtures: usize) -> Result<SuiteReport> {
    suite("batchnorm", fixtures, LAYER_TOLERANCE, || {
        let mut shape = random_shape4(rng, 6);
        // at least two values per channel so the variance is not just ε
        if shape[0] * shape[2] * shape[3] == 1 {
            shape[3] = 2;
        }
        let c = shape[1];
        let inputs = vec![
            random_tensor(rng, &shape, -2.0, 2.0)?,
            random_tensor(rng, &[c], 0.5, 2.0)?,
            random_tensor(rng, &[c], -1.0, 1.0)?,
        ];
        let r = random_tensor(rng, &shape, -1.0, 1.0)?;
        let (_, ctx) = batchnorm_train(&inputs[0], &inputs[1], &inputs[2], DEFAULT_EPSILON)?;
        let (gz, gs, gb) = batchnorm_backward(&ctx, &inputs[1], &r)?;
        compare(&inputs, &[gz, gs, gb], |x| {
            Ok(projected(
                &batchnorm_train(&x[0], &x[1], &x[2], DEFAULT_EPSILON)?.0,
                &r,
            ))
        })
    })
}

pub fn check_conv(rng: &mut Rng, fixtures: usize) -> Result<SuiteReport> {
    suite("conv2d", fixtures, LAYER_TOLERANCE, || {
        let [s, ic, h, w] = random_shape4(rng, 6);
        let oc = 1 + rng.below(4) as usize;
        let (k, padding) = match rng.below(3) {
            0 => (1, Padding::Same),
            1 => (3, Padding::Same),
            _ => (
                1 + 2 * rng.below(h.min(w).div_ceil(2) as u64) as usize,
                Padding::Valid,
            ),
        };
        let inputs = vec![
            random_tensor(rng, &[s, ic, h, w], -1.0, 1.0)?,
            random_tensor(rng, &[oc, ic, k, k], -1.0, 1.0)?,
        ];
        check_tape_op(rng, inputs, &move |t, v| t.conv2d(v[0], v[1], padding))
    })
}

pub fn check_channel_bias(rng: &mut Rng, fixtures: usize) -> Result<SuiteReport> {
    suite("channel_bias", fixtures, LAYER_TOLERANCE, || {
        let shape = random_shape4(rng, 6);
        let inputs = vec![
            random_tensor(rng, &shape, -1.0, 1.0)?,
            random_tensor(rng, &[shape[1]], -1.0, 1.0)?,
        ];
        check_tape_op(rng, inputs, &|t, v| t.channel_bias(v[0], v[1]))
    })
}

/// Inputs are kept away from zero so no entry sits within `h` of the kink.
pub fn check_relu(rng: &mut Rng, fixtures: usize) -> Result<SuiteReport> {
    suite("relu", fixtures, LAYER_TOLERANCE, || {
        let shape = random_shape4(rng, 6);
        let mut x = random_tensor(rng, &shape, 0.01, 2.0)?;
        for v in x.data_mut() {
            if rng.below(2) == 0 {
                *v = -*v;
            }
        }
        check_tape_op(rng, vec![x], &|t, v| t.relu(v[0]))
    })
}

fn even_shape(rng: &mut Rng) -> [usize; 4] {
    let [s, c, h, w] = random_shape4(rng, 3);
    [s, c, 2 * h, 2 * w]
}

pub fn check_maxpool(rng: &mut Rng, fixtures: usize) -> Result<SuiteReport> {
    suite("maxpool2x2", fixtures, LAYER_TOLERANCE, || {
        let shape = even_shape(rng);
        let x = random_tensor(rng, &shape, -1.0, 1.0)?;
        check_tape_op(rng, vec![x], &|t, v| t.maxpool2x2(v[0]))
    })
}

/// Gradient with respect to the unpooled values; the indices come from a
/// fixed pooling of an unrelated tensor.
pub fn check_unpool(rng: &mut Rng, fixtures: usize) -> Result<SuiteReport> {
    suite("unpool2x2", fixtures, LAYER_TOLERANCE, || {
        let shape = even_shape(rng);
        let source = random_tensor(rng, &shape, -1.0, 1.0)?;
        let y = random_tensor(
            rng,
            &[shape[0], shape[1], shape[2] / 2, shape[3] / 2],
            -1.0,
            1.0,
        )?;
        check_tape_op(rng, vec![y], &move |t, v| {
            let s = t.constant(source.clone());
            let p = t.maxpool2x2(s)?;
            t.unpool2x2(v[0], p)
        })
    })
}

fn random_labels(
    rng: &mut Rng,
    shape: [usize; 3],
    classes: usize,
    ignore: bool,
) -> Result<LabelMap> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if ignore && rng.below(8) == 0 {
                IGNORE_LABEL
            } else {
                rng.below(classes as u64) as u8
            }
        })
        .collect();
    LabelMap::new(shape, data)
}

fn random_class_weights(rng: &mut Rng, classes: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..classes).map(|_| rng.uniform_range(0.2, 3.0)).collect();
    let mean = raw.iter().sum::<f64>() / classes as f64;
    raw.iter().map(|w| w / mean).collect()
}

pub fn check_xent(rng: &mut Rng, fixtures: usize) -> Result<SuiteReport> {
    suite("softmax_xent", fixtures, LAYER_TOLERANCE, || {
        let [s, _, h, w] = random_shape4(rng, 6);
        let k = 2 + rng.below(4) as usize;
        let logits = random_tensor(rng, &[s, k, h, w], -3.0, 3.0)?;
        let mut labels = random_labels(rng, [s, h, w], k, true)?;
        if labels.data().iter().all(|&l| l == IGNORE_LABEL) {
            labels = random_labels(rng, [s, h, w], k, false)?;
        }
        let weights = random_class_weights(rng, k);
        check_tape_op(rng, vec![logits], &move |t, v| {
            t.softmax_xent(v[0], &labels, &weights)
        })
    })
}

fn network_loss(
    net: &mut Network<f64>,
    images: &Tensor<f64>,
    labels: &LabelMap,
    weights: &[f64],
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let pass = net.forward(&mut tape, x, Phase::Train)?;
    let l = tape.softmax_xent(pass.logits, labels, weights)?;
    tape.value(l).item()
}

/// Every parameter of the 2-level network (8×8 input, widths `[2, 3]`),
/// one fixture per normalization mode.
pub fn check_tiny_network(rng: &mut Rng) -> Result<SuiteReport> {
    let modes = [NormMode::Agc, NormMode::Bn, NormMode::None];
    let mut it = modes.iter();
    suite("tiny_network", modes.len(), NETWORK_TOLERANCE, || {
        let mode = *it.next().expect("one fixture per mode");
        let classes = 3;
        let spec = NetworkSpec::encoder_decoder(3, classes, &[2, 3]);
        let mut net = Network::<f64>::build(&spec, mode, rng, false)?;
        // move AGC/BN parameters off their init values so every path is exercised
        for (_, p) in net.params_mut() {
            if p.rank() == 1 {
                for v in p.data_mut() {
                    *v += rng.uniform_range(-0.3, 0.3);
                }
            }
        }
        let images = random_tensor(rng, &[2, 3, 8, 8], -1.0, 1.0)?;
        let labels = random_labels(rng, [2, 8, 8], classes, false)?;
        let weights = random_class_weights(rng, classes);

        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let pass = net.clone().forward(&mut tape, x, Phase::Train)?;
        let l = tape.softmax_xent(pass.logits, &labels, &weights)?;
        let mut g = tape.backward(l)?;
        let analytic: Vec<Tensor<f64>> = pass
            .params
            .iter()
            .map(|&v| g.take(v).expect("leaf gradient"))
            .collect();
        let params: Vec<Tensor<f64>> = net
            .params_mut()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        compare(&params, &analytic, |p| {
            let mut probe = net.clone();
            for ((_, slot), v) in probe.params_mut().into_iter().zip(p) {
                *slot = v.clone();
            }
            network_loss(&mut probe, &images, &labels, &weights)
        })
    })
}

/// Every suite with `fixtures` random fixtures per layer suite.
pub fn run_all(seed: u64, fixtures: usize) -> Result<Vec<SuiteReport>> {
    let mut rng = Rng::new(seed);
    Ok(vec![
        check_agc(&mut rng, fixtures)?,
        check_batchnorm(&mut rng, fixtures)?,
        check_conv(&mut rng, fixtures)?,
        check_channel_bias(&mut rng, fixtures)?,
        check_relu(&mut rng, fixtures)?,
        check_maxpool(&mut rng, fixtures)?,
        check_unpool(&mut rng, fixtures)?,
        check_xent(&mut rng, fixtures)?,
        check_tiny_network(&mut rng)?,
    ])
}
