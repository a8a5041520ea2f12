//! Reference batch normalization over the whole minibatch.
//!
//! Train mode whitens each channel with the mean and (biased) variance over
//! `samples × h × w`, then applies the trainable scale Υ and shift β. The
//! running statistics follow `r ← m·r + (1 − m)·batch` and are used in infer
//! mode.

use super::check_channel_vec;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_EMA_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct BnParams<T: Real> {
    pub weight: Tensor<T>,
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub ema_momentum: f64,
    pub epsilon: f64,
}

impl<T: Real> BnParams<T> {
    /// `Υ = 1`, `β = 0`, running mean 0 and variance 1.
    pub fn new(weight: Tensor<T>) -> Result<Self> {
        let (oc, ..) = weight.dims4()?;
        Ok(BnParams {
            weight,
            scale: Tensor::full(&[oc], T::one())?,
            shift: Tensor::zeros(&[oc])?,
            running_mean: Tensor::zeros(&[oc])?,
            running_var: Tensor::full(&[oc], T::one())?,
            ema_momentum: DEFAULT_EMA_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        let oc = self.out_channels();
        check_channel_vec("scale", &self.scale, oc)?;
        check_channel_vec("shift", &self.shift, oc)?;
        check_channel_vec("running_mean", &self.running_mean, oc)?;
        check_channel_vec("running_var", &self.running_var, oc)?;
        if self.running_var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("running_var must be non-negative"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be finite and non-negative"));
        }
        if !(self.ema_momentum > 0.0 && self.ema_momentum < 1.0) {
            return Err(Error::invalid("EMA momentum must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Normalizes `z`; in train mode also folds the batch statistics into the
    /// running estimates.
    pub fn forward(&mut self, z: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        match mode {
            BnMode::Train => {
                let (out, ctx) = batchnorm_train(z, &self.scale, &self.shift, self.epsilon)?;
                self.update_running(&ctx.mean, &ctx.var);
                Ok(out)
            }
            BnMode::Infer => batchnorm_infer(
                z,
                &self.scale,
                &self.shift,
                &self.running_mean,
                &self.running_var,
                self.epsilon,
            ),
        }
    }

    /// Folds one batch's per-channel mean and variance into the running
    /// estimates.
    pub fn update_running(&mut self, mean: &[T], var: &[T]) {
        let m = T::from_f64(self.ema_momentum);
        let one_m = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = m * *r + one_m * b;
        }
    }
}

/// Values saved by the train-mode forward pass for backward.
#[derive(Debug, Clone)]
pub struct BnContext<T: Real> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// The whitened input `(z − μ_B)/sqrt(σ²_B + ε)`.
    pub xhat: Tensor<T>,
}

fn channel_view<T: Real>(
    z: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
) -> Result<(usize, usize)> {
    let (s, c, h, w) = z.dims4()?;
    if s * h * w == 0 {
        return Err(Error::shape("empty batch"));
    }
    check_channel_vec("scale", scale, c)?;
    check_channel_vec("shift", shift, c)?;
    Ok((c, h * w))
}

pub fn batchnorm_train<T: Real>(
    z: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    epsilon: f64,
) -> Result<(Tensor<T>, BnContext<T>)> {
    let (c, hw) = channel_view(z, scale, shift)?;
    let count = T::from_f64((z.len() / c) as f64);
    let mut mean = vec![T::zero(); c];
    for (i, map) in z.data().chunks(hw).enumerate() {
        mean[i % c] += map.iter().copied().sum::<T>();
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![T::zero(); c];
    for (i, map) in z.data().chunks(hw).enumerate() {
        let mu = mean[i % c];
        var[i % c] += map.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>();
    }
    var.iter_mut().for_each(|v| *v /= count);
    let eps = T::from_f64(epsilon);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = Vec::with_capacity(z.len());
    let mut out = Vec::with_capacity(z.len());
    for (i, map) in z.data().chunks(hw).enumerate() {
        let ch = i % c;
        let (mu, is, g, b) = (mean[ch], inv_std[ch], scale.data()[ch], shift.data()[ch]);
        for &x in map {
            let n = (x - mu) * is;
            xhat.push(n);
            out.push(n * g + b);
        }
    }
    let xhat = z.with_data(xhat);
    Ok((
        z.with_data(out),
        BnContext {
            mean,
            var,
            inv_std,
            xhat,
        },
    ))
}

pub fn batchnorm_infer<T: Real>(
    z: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    let (c, hw) = channel_view(z, scale, shift)?;
    check_channel_vec("running_mean", running_mean, c)?;
    check_channel_vec("running_var", running_var, c)?;
    let eps = T::from_f64(epsilon);
    let mut out = Vec::with_capacity(z.len());
    for (i, map) in z.data().chunks(hw).enumerate() {
        let ch = i % c;
        let is = T::one() / (running_var.data()[ch] + eps).sqrt();
        let (mu, g, b) = (running_mean.data()[ch], scale.data()[ch], shift.data()[ch]);
        out.extend(map.iter().map(|&x| (x - mu) * is * g + b));
    }
    Ok(z.with_data(out))
}

/// Returns `(grad_z, grad_scale, grad_shift)` for a train-mode forward pass.
pub fn batchnorm_backward<T: Real>(
    ctx: &BnContext<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    ctx.xhat.expect_same_shape(grad_out)?;
    let (_, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let n = T::from_f64((grad_out.len() / c) as f64);
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (i, (go, xh)) in grad_out
        .data()
        .chunks(hw)
        .zip(ctx.xhat.data().chunks(hw))
        .enumerate()
    {
        for (&g, &x) in go.iter().zip(xh) {
            sum_g[i % c] += g;
            sum_gx[i % c] += g * x;
        }
    }
    let mut grad_z = Vec::with_capacity(grad_out.len());
    for (i, (go, xh)) in grad_out
        .data()
        .chunks(hw)
        .zip(ctx.xhat.data().chunks(hw))
        .enumerate()
    {
        let ch = i % c;
        let k = scale.data()[ch] * ctx.inv_std[ch] / n;
        let (sg, sgx) = (sum_g[ch], sum_gx[ch]);
        grad_z.extend(go.iter().zip(xh).map(|(&g, &x)| k * (n * g - sg - x * sgx)));
    }
    Ok((
        grad_out.with_data(grad_z),
        Tensor::from_vec(&[c], sum_gx)?,
        Tensor::from_vec(&[c], sum_g)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(scale: f64, shift: f64, eps: f64) -> BnParams<f64> {
        let mut p = BnParams::new(Tensor::full(&[1, 1, 1, 1], 1.0).unwrap()).unwrap();
        p.scale = Tensor::full(&[1], scale).unwrap();
        p.shift = Tensor::full(&[1], shift).unwrap();
        p.epsilon = eps;
        p
    }

    #[test]
    fn two_sample_hand_example() {
        let z = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let mut p = params(2.0, 1.0, 0.0);
        let out = p.forward(&z, BnMode::Train).unwrap();
        assert_eq!(out.data(), &[-1.0, 3.0]);
        // r ← 0.9·r + 0.1·batch
        assert!((p.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((p.running_var.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_input_gives_shift() {
        let z = Tensor::full(&[3, 1, 2, 2], 4.2).unwrap();
        let out = params(1.7, 0.3, DEFAULT_EPSILON)
            .forward(&z, BnMode::Train)
            .unwrap();
        assert!(out.data().iter().all(|&x| (x - 0.3).abs() < 1e-12));
    }

    #[test]
    fn infer_mode_uses_running_stats() {
        let mut p = params(1.0, 0.0, 0.0);
        p.running_mean = Tensor::full(&[1], 2.0).unwrap();
        p.running_var = Tensor::full(&[1], 4.0).unwrap();
        let z = Tensor::from_vec(&[1, 1, 1, 2], vec![4.0, 0.0]).unwrap();
        assert_eq!(p.forward(&z, BnMode::Infer).unwrap().data(), &[1.0, -1.0]);
        assert_eq!(p.running_mean.data(), &[2.0]);
    }

    #[test]
    fn defaults_and_validation() {
        let p = BnParams::<f32>::new(Tensor::zeros(&[4, 2, 3, 3]).unwrap()).unwrap();
        assert_eq!(p.epsilon, 1e-5);
        assert_eq!(p.ema_momentum, 0.9);
        assert_eq!(p.out_channels(), 4);
        p.validate().unwrap();
        let mut bad = p.clone();
        bad.running_var.data_mut()[0] = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn backward_shift_and_scale_grads() {
        let z = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 2.0, 4.0, 5.0]).unwrap();
        let p = params(1.5, 0.0, 0.0);
        let (_, ctx) = batchnorm_train(&z, &p.scale, &p.shift, 0.0).unwrap();
        let go = Tensor::full(&[2, 1, 1, 2], 1.0).unwrap();
        let (gz, gs, gb) = batchnorm_backward(&ctx, &p.scale, &go).unwrap();
        assert_eq!(gb.data(), &[4.0]);
        assert!(gs.data()[0].abs() < 1e-12);
        // uniform upstream gradient is removed by the mean subtraction
        assert!(gz.data().iter().all(|x| x.abs() < 1e-12));
    }
}
