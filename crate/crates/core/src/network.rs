//! Declarative network description and the parameterized network built
//! from it.
//!
//! A [`NetworkSpec`] is a flat layer list. Each `Conv` may be followed by a
//! `Norm` slot; at build time the slot becomes AGC, batch normalization or
//! nothing according to a single [`NormMode`] for the whole network. Every
//! conv without a norm slot (and every conv in `none` mode) carries a plain
//! per-channel bias instead.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::batchnorm::batchnorm_infer;
use crate::layers::{AgcParams, BnParams, Padding};
use crate::optim::init::he_fan_in_init;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    Agc,
    Bn,
    None,
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Agc => "agc",
            NormMode::Bn => "bn",
            NormMode::None => "none",
        })
    }
}

impl FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agc" => Ok(NormMode::Agc),
            "bn" => Ok(NormMode::Bn),
            "none" => Ok(NormMode::None),
            _ => Err(Error::Config(format!(
                "norm mode must be agc, bn or none, got '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerDesc {
    Conv {
        name: String,
        out_channels: usize,
        kernel: usize,
    },
    Norm,
    Relu,
    MaxPool,
    Unpool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub classes: usize,
    pub layers: Vec<LayerDesc>,
}

impl NetworkSpec {
    /// Encoder of `widths.len()` levels (two 3×3 conv-norm-relu, then 2×2
    /// max-pool), a mirrored decoder (unpool with the stored indices, two
    /// conv-norm-relu), and a final 1×1 conv to `classes`.
    pub fn encoder_decoder(in_channels: usize, classes: usize, widths: &[usize]) -> Self {
        let mut layers = Vec::new();
        let conv = |layers: &mut Vec<LayerDesc>, name: String, out: usize| {
            layers.push(LayerDesc::Conv {
                name,
                out_channels: out,
                kernel: 3,
            });
            layers.push(LayerDesc::Norm);
            layers.push(LayerDesc::Relu);
        };
        for (i, &w) in widths.iter().enumerate() {
            conv(&mut layers, format!("enc{}_conv1", i + 1), w);
            conv(&mut layers, format!("enc{}_conv2", i + 1), w);
            layers.push(LayerDesc::MaxPool);
        }
        for i in (0..widths.len()).rev() {
            layers.push(LayerDesc::Unpool);
            conv(&mut layers, format!("dec{}_conv1", i + 1), widths[i]);
            conv(
                &mut layers,
                format!("dec{}_conv2", i + 1),
                widths[i.saturating_sub(1)],
            );
        }
        layers.push(LayerDesc::Conv {
            name: "classifier".into(),
            out_channels: classes,
            kernel: 1,
        });
        NetworkSpec {
            in_channels,
            classes,
            layers,
        }
    }

    /// The default 4-level toy net, widths `[16, 32, 64, 64]`, RGB input.
    pub fn toy(classes: usize) -> Self {
        Self::encoder_decoder(3, classes, &[16, 32, 64, 64])
    }

    /// Deepest pooling level reached.
    pub fn pool_depth(&self) -> usize {
        let mut depth: usize = 0;
        let mut max = 0;
        for l in &self.layers {
            match l {
                LayerDesc::MaxPool => {
                    depth += 1;
                    max = max.max(depth);
                }
                LayerDesc::Unpool => depth = depth.saturating_sub(1),
                _ => {}
            }
        }
        max
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.classes == 0 {
            return Err(Error::Spec(
                "input channels and classes must be positive".into(),
            ));
        }
        let mut channels = self.in_channels;
        let mut pools: Vec<usize> = Vec::new();
        let mut names = std::collections::HashSet::new();
        let mut prev_conv = false;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerDesc::Conv {
                    name,
                    out_channels,
                    kernel,
                } => {
                    if *out_channels == 0 || kernel % 2 == 0 {
                        return Err(Error::Spec(format!(
                            "layer {i} ({name}): need positive width and odd kernel, got {out_channels} / {kernel}"
                        )));
                    }
                    if name.is_empty() || name.contains(['/', ',']) || !names.insert(name.clone()) {
                        return Err(Error::Spec(format!(
                            "layer {i}: invalid or duplicate name '{name}'"
                        )));
                    }
                    channels = *out_channels;
                }
                LayerDesc::Norm if !prev_conv => {
                    return Err(Error::Spec(format!(
                        "layer {i}: norm slot must directly follow a conv"
                    )));
                }
                LayerDesc::Norm | LayerDesc::Relu => {}
                LayerDesc::MaxPool => pools.push(channels),
                LayerDesc::Unpool => match pools.pop() {
                    Some(c) if c == channels => {}
                    Some(c) => {
                        return Err(Error::Spec(format!(
                            "layer {i}: unpool gets {channels} channels but its pool had {c}"
                        )))
                    }
                    None => {
                        return Err(Error::Spec(format!(
                            "layer {i}: unpool without a matching pool"
                        )))
                    }
                },
            }
            prev_conv = matches!(layer, LayerDesc::Conv { .. });
        }
        if !pools.is_empty() {
            return Err(Error::Spec(format!(
                "{} pooling layers have no matching unpool",
                pools.len()
            )));
        }
        match self.layers.last() {
            Some(LayerDesc::Conv { out_channels, .. }) if *out_channels == self.classes => Ok(()),
            _ => Err(Error::Spec(format!(
                "last layer must be a conv with {} outputs",
                self.classes
            ))),
        }
    }

    /// Checks that an `h × w` input survives every pooling exactly.
    pub fn check_input(&self, channels: usize, h: usize, w: usize) -> Result<()> {
        if channels != self.in_channels {
            return Err(Error::Spec(format!(
                "network expects {} input channels, got {channels}",
                self.in_channels
            )));
        }
        let f = 1usize << self.pool_depth();
        if !h.is_multiple_of(f) || !w.is_multiple_of(f) {
            return Err(Error::Spec(format!(
                "input {h}x{w} is not divisible by {f}"
            )));
        }
        Ok(())
    }
}

/// Parameters of one conv together with its normalization.
#[derive(Debug, Clone)]
pub enum UnitParams<T: Real> {
    Agc(AgcParams<T>),
    Bn(BnParams<T>),
    Plain { weight: Tensor<T>, bias: Tensor<T> },
}

#[derive(Debug, Clone)]
pub struct Unit<T: Real> {
    pub name: String,
    pub params: UnitParams<T>,
}

impl<T: Real> Unit<T> {
    pub fn weight(&self) -> &Tensor<T> {
        match &self.params {
            UnitParams::Agc(p) => &p.weight,
            UnitParams::Bn(p) => &p.weight,
            UnitParams::Plain { weight, .. } => weight,
        }
    }

    fn trainable_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.slots(false)
    }

    fn state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.slots(true)
    }

    fn slots(&mut self, with_running: bool) -> Vec<(String, &mut Tensor<T>)> {
        let n = &self.name;
        match &mut self.params {
            UnitParams::Agc(p) => vec![
                (format!("{n}/W"), &mut p.weight),
                (format!("{n}/lambda"), &mut p.lambda),
                (format!("{n}/gamma"), &mut p.gamma),
                (format!("{n}/beta"), &mut p.beta),
            ],
            UnitParams::Bn(p) => {
                let mut v = vec![
                    (format!("{n}/W"), &mut p.weight),
                    (format!("{n}/scale"), &mut p.scale),
                    (format!("{n}/shift"), &mut p.shift),
                ];
                if with_running {
                    v.push((format!("{n}/running_mean"), &mut p.running_mean));
                    v.push((format!("{n}/running_var"), &mut p.running_var));
                }
                v
            }
            UnitParams::Plain { weight, bias } => {
                vec![(format!("{n}/W"), weight), (format!("{n}/bias"), bias)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Unit(usize),
    Relu,
    MaxPool,
    Unpool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Parameters are differentiable; BN uses and records batch statistics.
    Train,
    /// No gradients; BN uses running statistics.
    Eval,
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Var,
    /// Tape handles of the trainable parameters, in [`Network::params_mut`] order.
    pub params: Vec<Var>,
    /// Post-ReLU activation of each unit, where a ReLU follows it.
    pub activations: Vec<Option<Var>>,
    /// Position in `params` of each unit's conv weight.
    pub weight_params: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Network<T: Real> {
    spec: NetworkSpec,
    mode: NormMode,
    units: Vec<Unit<T>>,
    plan: Vec<Step>,
}

/// Per-layer `(min, mean, max)` of λ.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaStats {
    pub layer: String,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl<T: Real> Network<T> {
    /// He fan-in weights everywhere; AGC `(λ, γ, β) = (1, 1, 0)`, BN
    /// `(Υ, β) = (1, 0)`, plain biases 0. With `identity_init`, square convs
    /// other than the first after a pool/unpool get identity kernels instead.
    pub fn build(
        spec: &NetworkSpec,
        mode: NormMode,
        rng: &mut Rng,
        identity_init: bool,
    ) -> Result<Self> {
        spec.validate()?;
        let mut units = Vec::new();
        let mut plan = Vec::new();
        let mut channels = spec.in_channels;
        let mut after_pool = false;
        for (i, layer) in spec.layers.iter().enumerate() {
            match layer {
                LayerDesc::Conv {
                    name,
                    out_channels,
                    kernel,
                } => {
                    let shape = [*out_channels, channels, *kernel, *kernel];
                    let weight = if identity_init && channels == *out_channels && !after_pool {
                        identity_kernel(&shape)?
                    } else {
                        he_fan_in_init(&shape, rng)?
                    };
                    let has_norm = matches!(spec.layers.get(i + 1), Some(LayerDesc::Norm));
                    let params = match (has_norm, mode) {
                        (true, NormMode::Agc) => UnitParams::Agc(AgcParams::new(weight)?),
                        (true, NormMode::Bn) => UnitParams::Bn(BnParams::new(weight)?),
                        _ => UnitParams::Plain {
                            weight,
                            bias: Tensor::zeros(&[*out_channels])?,
                        },
                    };
                    plan.push(Step::Unit(units.len()));
                    units.push(Unit {
                        name: name.clone(),
                        params,
                    });
                    channels = *out_channels;
                    after_pool = false;
                }
                LayerDesc::Norm => {}
                LayerDesc::Relu => plan.push(Step::Relu),
                LayerDesc::MaxPool => {
                    plan.push(Step::MaxPool);
                    after_pool = true;
                }
                LayerDesc::Unpool => {
                    plan.push(Step::Unpool);
                    after_pool = true;
                }
            }
        }
        Ok(Network {
            spec: spec.clone(),
            mode,
            units,
            plan,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn units(&self) -> &[Unit<T>] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [Unit<T>] {
        &mut self.units
    }

    /// Trainable tensors in a fixed order: per unit the weight, then
    /// `lambda, gamma, beta` (AGC), `scale, shift` (BN) or `bias`.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.units
            .iter_mut()
            .flat_map(Unit::trainable_mut)
            .collect()
    }

    /// All persistent tensors: trainable ones plus BN running statistics.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        // state_mut needs &mut; clone the units to reuse the naming logic
        let mut units = self.units.clone();
        units
            .iter_mut()
            .flat_map(|u| {
                u.state_mut()
                    .into_iter()
                    .map(|(n, t)| (n, t.clone()))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Replaces every persistent tensor by name. The set of names and each
    /// shape must match exactly.
    pub fn load_state(&mut self, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut by_name: std::collections::HashMap<String, Tensor<T>> =
            std::collections::HashMap::new();
        for (n, t) in tensors {
            if by_name.insert(n.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor '{n}'")));
            }
        }
        let mut slots: Vec<(String, &mut Tensor<T>)> =
            self.units.iter_mut().flat_map(Unit::state_mut).collect();
        for (name, slot) in &slots {
            match by_name.get(name) {
                Some(t) if t.shape() == slot.shape() => {}
                Some(t) => {
                    return Err(Error::Format(format!(
                        "tensor '{name}' has shape {:?}, expected {:?}",
                        t.shape(),
                        slot.shape()
                    )))
                }
                None => return Err(Error::Format(format!("missing tensor '{name}'"))),
            }
        }
        if by_name.len() != slots.len() {
            let known: std::collections::HashSet<&String> = slots.iter().map(|(n, _)| n).collect();
            let extra: Vec<&String> = by_name.keys().filter(|n| !known.contains(n)).collect();
            return Err(Error::Format(format!("unexpected tensors {extra:?}")));
        }
        for (name, slot) in &mut slots {
            **slot = by_name.remove(name.as_str()).expect("checked above");
        }
        Ok(())
    }

    /// Records the network on `tape`. In [`Phase::Train`] BN running
    /// statistics are updated as a side effect.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, phase: Phase) -> Result<ForwardPass> {
        let (_, c, h, w) = tape.value(input).dims4()?;
        self.spec.check_input(c, h, w)?;
        let train = phase == Phase::Train;
        let mut param_vars = Vec::new();
        let mut activations = vec![None; self.units.len()];
        let mut pools: Vec<Var> = Vec::new();
        let mut last_unit = None;
        let mut x = input;
        let mut register = |tape: &mut Tape<T>, t: &Tensor<T>| {
            let v = if train {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            };
            param_vars.push(v);
            v
        };
        for step in &self.plan {
            match *step {
                Step::Unit(u) => {
                    let unit = &mut self.units[u];
                    let wv = register(tape, unit.weight());
                    let z = tape.conv2d(x, wv, Padding::Same)?;
                    x = match &mut unit.params {
                        UnitParams::Agc(p) => {
                            let l = register(tape, &p.lambda);
                            let g = register(tape, &p.gamma);
                            let b = register(tape, &p.beta);
                            tape.agc(z, l, g, b)?
                        }
                        UnitParams::Bn(p) => {
                            let s = register(tape, &p.scale);
                            let b = register(tape, &p.shift);
                            if train {
                                let (out, mean, var) = tape.batchnorm(z, s, b, p.epsilon)?;
                                p.update_running(&mean, &var);
                                out
                            } else {
                                let out = batchnorm_infer(
                                    tape.value(z),
                                    &p.scale,
                                    &p.shift,
                                    &p.running_mean,
                                    &p.running_var,
                                    p.epsilon,
                                )?;
                                tape.constant(out)
                            }
                        }
                        UnitParams::Plain { bias, .. } => {
                            let b = register(tape, bias);
                            tape.channel_bias(z, b)?
                        }
                    };
                    last_unit = Some(u);
                }
                Step::Relu => {
                    x = tape.relu(x)?;
                    if let Some(u) = last_unit.take() {
                        activations[u] = Some(x);
                    }
                }
                Step::MaxPool => {
                    x = tape.maxpool2x2(x)?;
                    pools.push(x);
                }
                Step::Unpool => {
                    let p = pools
                        .pop()
                        .ok_or_else(|| Error::Spec("unbalanced unpool".into()))?;
                    x = tape.unpool2x2(x, p)?;
                }
            }
        }
        let mut weight_params = Vec::with_capacity(self.units.len());
        let mut offset = 0;
        for u in &self.units {
            weight_params.push(offset);
            offset += match u.params {
                UnitParams::Agc(_) => 4,
                UnitParams::Bn(_) => 3,
                UnitParams::Plain { .. } => 2,
            };
        }
        Ok(ForwardPass {
            logits: x,
            params: param_vars,
            activations,
            weight_params,
        })
    }

    /// Logits for a batch of images, evaluated without gradients.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, x, Phase::Eval)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Per-AGC-layer λ statistics, ordered input to output.
    pub fn lambda_stats(&self) -> Result<Vec<LambdaStats>> {
        if self.mode != NormMode::Agc {
            return Err(Error::invalid(format!(
                "lambda statistics need an AGC network, this one is '{}'",
                self.mode
            )));
        }
        Ok(self
            .units
            .iter()
            .filter_map(|u| match &u.params {
                UnitParams::Agc(p) => Some(lambda_stats_of(&u.name, &p.lambda)),
                _ => None,
            })
            .collect())
    }
}

pub fn lambda_stats_of<T: Real>(layer: &str, lambda: &Tensor<T>) -> LambdaStats {
    let vals: Vec<f64> = lambda.data().iter().map(|&x| x.to_f64()).collect();
    LambdaStats {
        layer: layer.to_string(),
        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
        mean: vals.iter().sum::<f64>() / vals.len() as f64,
        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn identity_kernel<T: Real>(shape: &[usize; 4]) -> Result<Tensor<T>> {
    let [oc, ic, kh, kw] = *shape;
    let mut t = Tensor::zeros(shape)?;
    let centre = (kh / 2) * kw + kw / 2;
    for c in 0..oc.min(ic) {
        t.data_mut()[(c * ic + c) * kh * kw + centre] = T::one();
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkSpec {
        NetworkSpec::encoder_decoder(3, 4, &[2, 3])
    }

    #[test]
    fn default_spec_shape() {
        let spec = NetworkSpec::toy(5);
        spec.validate().unwrap();
        assert_eq!(spec.pool_depth(), 4);
        let convs = spec
            .layers
            .iter()
            .filter(|l| matches!(l, LayerDesc::Conv { .. }))
            .count();
        assert_eq!(convs, 17);
        assert!(spec.check_input(3, 64, 64).is_ok());
        assert!(spec.check_input(3, 40, 64).is_err());
        assert!(spec.check_input(1, 64, 64).is_err());
    }

    #[test]
    fn invalid_specs() {
        let mut s = tiny();
        s.layers.insert(0, LayerDesc::Norm);
        assert!(s.validate().is_err());

        let mut s = tiny();
        let pos = s
            .layers
            .iter()
            .position(|l| *l == LayerDesc::Unpool)
            .unwrap();
        s.layers.remove(pos);
        assert!(s.validate().is_err());

        let mut s = tiny();
        s.classes = 7;
        assert!(s.validate().is_err());

        let mut s = tiny();
        if let LayerDesc::Conv { name, .. } = &mut s.layers[3] {
            *name = "enc1_conv1".into();
        }
        assert!(s.validate().is_err());

        let mut s = tiny();
        // decoder conv feeding the second unpool with the wrong width
        let idx = s
            .layers
            .iter()
            .position(|l| matches!(l, LayerDesc::Conv { name, .. } if name == "dec2_conv2"))
            .unwrap();
        s.layers[idx] = LayerDesc::Conv {
            name: "dec2_conv2".into(),
            out_channels: 5,
            kernel: 3,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn none_mode_has_no_norm_params() {
        let net = Network::<f32>::build(&tiny(), NormMode::None, &mut Rng::new(0), false).unwrap();
        assert!(net
            .units()
            .iter()
            .all(|u| matches!(u.params, UnitParams::Plain { .. })));
        let mut net = net;
        assert!(net
            .params_mut()
            .iter()
            .all(|(n, _)| n.ends_with("/W") || n.ends_with("/bias")));
        assert!(net.lambda_stats().is_err());
    }

    #[test]
    fn agc_mode_one_triple_per_filter() {
        let net = Network::<f32>::build(&tiny(), NormMode::Agc, &mut Rng::new(0), false).unwrap();
        let mut agc_units = 0;
        for u in net.units() {
            match &u.params {
                UnitParams::Agc(p) => {
                    agc_units += 1;
                    p.validate().unwrap();
                    let (oc, ..) = p.weight.dims4().unwrap();
                    assert_eq!((p.lambda.len(), p.gamma.len(), p.beta.len()), (oc, oc, oc));
                    assert!(p.lambda.data().iter().all(|&x| x == 1.0));
                    assert!(p.gamma.data().iter().all(|&x| x == 1.0));
                    assert!(p.beta.data().iter().all(|&x| x == 0.0));
                }
                UnitParams::Plain { .. } => assert_eq!(u.name, "classifier"),
                UnitParams::Bn(_) => panic!("unexpected BN"),
            }
        }
        assert_eq!(agc_units, 8);
        let stats = net.lambda_stats().unwrap();
        assert_eq!(stats.len(), 8);
        assert!(stats
            .iter()
            .all(|s| (s.min, s.mean, s.max) == (1.0, 1.0, 1.0)));
        assert_eq!(stats[0].layer, "enc1_conv1");
    }

    #[test]
    fn lambda_stats_hand_example() {
        let l = Tensor::<f32>::from_vec(&[2], vec![0.5, 1.5]).unwrap();
        let s = lambda_stats_of("x", &l);
        assert_eq!((s.min, s.mean, s.max), (0.5, 1.0, 1.5));
    }

    #[test]
    fn bn_mode_params() {
        let mut net =
            Network::<f32>::build(&tiny(), NormMode::Bn, &mut Rng::new(0), false).unwrap();
        let names: Vec<String> = net.params_mut().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"enc1_conv1/scale".to_string()));
        let state = net.state();
        assert!(state.iter().any(|(n, _)| n == "dec1_conv2/running_var"));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Network::<f32>::build(&tiny(), NormMode::Agc, &mut Rng::new(3), false).unwrap();
        let b = Network::<f32>::build(&tiny(), NormMode::Agc, &mut Rng::new(3), false).unwrap();
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn identity_init_skips_first_after_pool() {
        let spec = NetworkSpec::encoder_decoder(3, 2, &[4, 4]);
        let net = Network::<f32>::build(&spec, NormMode::Agc, &mut Rng::new(0), true).unwrap();
        let is_identity = |name: &str| {
            let u = net.units().iter().find(|u| u.name == name).unwrap();
            *u.weight() == identity_kernel::<f32>(&[4, 4, 3, 3]).unwrap()
        };
        assert!(is_identity("enc1_conv2"));
        assert!(!is_identity("enc2_conv1"));
        assert!(is_identity("enc2_conv2"));
        assert!(!is_identity("dec2_conv1"));
        assert!(is_identity("dec2_conv2"));
    }

    #[test]
    fn forward_shapes_and_activations() {
        let mut net =
            Network::<f64>::build(&tiny(), NormMode::Agc, &mut Rng::new(1), false).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 3, 8, 8], 0.5).unwrap());
        let pass = net.forward(&mut tape, x, Phase::Train).unwrap();
        assert_eq!(tape.value(pass.logits).shape(), &[2, 4, 8, 8]);
        assert_eq!(pass.params.len(), net.params_mut().len());
        assert_eq!(pass.activations.iter().filter(|a| a.is_some()).count(), 8);
        assert!(pass.activations.last().unwrap().is_none());
    }

    #[test]
    fn load_state_checks_names_and_shapes() {
        let mut a = Network::<f32>::build(&tiny(), NormMode::Bn, &mut Rng::new(1), false).unwrap();
        let b = Network::<f32>::build(&tiny(), NormMode::Bn, &mut Rng::new(2), false).unwrap();
        a.load_state(b.state()).unwrap();
        assert_eq!(a.state(), b.state());

        let mut missing = b.state();
        missing.pop();
        assert!(a.load_state(missing).is_err());

        let mut extra = b.state();
        extra.push(("ghost/W".into(), Tensor::zeros(&[1]).unwrap()));
        assert!(a.load_state(extra).is_err());

        let mut wrong = b.state();
        wrong[0].1 = Tensor::zeros(&[1]).unwrap();
        assert!(a.load_state(wrong).is_err());
    }
}
