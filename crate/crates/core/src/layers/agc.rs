//! Per-sample automatic gain control.
//!
//! For every sample `s` and filter `c`, with `μ` the mean of that sample's
//! own `h × w` response map:
//!
//! ```text
//! out = (z − λ_c·μ)·γ_c + β_c
//! ```
//!
//! The mean never mixes samples or channels and the difference is not
//! divided by a standard deviation, so the transform is identical in
//! training and inference and a sample's output does not depend on the
//! rest of its minibatch.
//!
//! Backward, with `M = h·w`, `ḡ` the map mean of `grad_out`:
//!
//! ```text
//! ∂z = γ·(grad_out − λ·ḡ)
//! ∂λ = −γ·μ·Σ grad_out
//! ∂γ = Σ grad_out·(z − λ·μ)
//! ∂β = Σ grad_out
//! ```
//!
//! Parameter gradients are summed over samples and positions.

use super::check_channel_vec;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Convolution weights plus the per-filter `(λ, γ, β)` triple.
#[derive(Debug, Clone)]
pub struct AgcParams<T: Real> {
    pub weight: Tensor<T>,
    pub lambda: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> AgcParams<T> {
    /// `λ = 1`, `γ = 1`, `β = 0` around the given weights.
    pub fn new(weight: Tensor<T>) -> Result<Self> {
        let (oc, ..) = weight.dims4()?;
        Ok(AgcParams {
            weight,
            lambda: Tensor::full(&[oc], T::one())?,
            gamma: Tensor::full(&[oc], T::one())?,
            beta: Tensor::zeros(&[oc])?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (oc, ..) = self.weight.dims4()?;
        if !self.weight.all_finite() {
            return Err(Error::NonFinite("AGC weight".into()));
        }
        check_channel_vec("lambda", &self.lambda, oc)?;
        check_channel_vec("gamma", &self.gamma, oc)?;
        check_channel_vec("beta", &self.beta, oc)
    }
}

#[derive(Debug, Clone)]
pub struct AgcGrads<T: Real> {
    pub z: Tensor<T>,
    pub lambda: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Background level of one response map. Only the arithmetic mean is
/// implemented; the backward pass assumes `∂μ/∂z = 1/M`.
fn background_level<T: Real>(map: &[T]) -> T {
    map.iter().copied().sum::<T>() / T::from_f64(map.len() as f64)
}

fn check_params<T: Real>(
    z: &Tensor<T>,
    lambda: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<usize> {
    let (_, c, h, w) = z.dims4()?;
    if h * w == 0 {
        return Err(Error::shape("empty response map"));
    }
    check_channel_vec("lambda", lambda, c)?;
    check_channel_vec("gamma", gamma, c)?;
    check_channel_vec("beta", beta, c)?;
    Ok(c)
}

/// Forward transform; also returns the per-(sample, channel) map means.
pub(crate) fn agc_forward_with_means<T: Real>(
    z: &Tensor<T>,
    lambda: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let c = check_params(z, lambda, gamma, beta)?;
    let (_, _, h, w) = z.dims4()?;
    let (l, g, b) = (lambda.data(), gamma.data(), beta.data());
    let mut out = Vec::with_capacity(z.len());
    let mut means = Vec::with_capacity(z.len() / (h * w));
    for (i, map) in z.data().chunks(h * w).enumerate() {
        let ch = i % c;
        let mu = background_level(map);
        let shift = l[ch] * mu;
        out.extend(map.iter().map(|&v| (v - shift) * g[ch] + b[ch]));
        means.push(mu);
    }
    Ok((z.with_data(out), means))
}

pub fn agc_forward<T: Real>(
    z: &Tensor<T>,
    lambda: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>> {
    agc_forward_with_means(z, lambda, gamma, beta).map(|(out, _)| out)
}

pub(crate) fn agc_backward_with_means<T: Real>(
    z: &Tensor<T>,
    means: &[T],
    lambda: &Tensor<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<AgcGrads<T>> {
    z.expect_same_shape(grad_out)?;
    let (_, c, h, w) = z.dims4()?;
    let m = h * w;
    let (l, g) = (lambda.data(), gamma.data());
    let mut grad_z = Vec::with_capacity(z.len());
    let mut gl = vec![T::zero(); c];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for (i, (map, go)) in z
        .data()
        .chunks(m)
        .zip(grad_out.data().chunks(m))
        .enumerate()
    {
        let ch = i % c;
        let mu = means[i];
        let shift = l[ch] * mu;
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for (&zv, &gv) in map.iter().zip(go) {
            sum_g += gv;
            sum_gx += gv * (zv - shift);
        }
        let gbar = sum_g / T::from_f64(m as f64);
        let off = l[ch] * gbar;
        grad_z.extend(go.iter().map(|&gv| g[ch] * (gv - off)));
        gl[ch] -= g[ch] * mu * sum_g;
        gg[ch] += sum_gx;
        gb[ch] += sum_g;
    }
    Ok(AgcGrads {
        z: z.with_data(grad_z),
        lambda: Tensor::from_vec(&[c], gl)?,
        gamma: Tensor::from_vec(&[c], gg)?,
        beta: Tensor::from_vec(&[c], gb)?,
    })
}

pub fn agc_backward<T: Real>(
    z: &Tensor<T>,
    lambda: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<AgcGrads<T>> {
    check_params(z, lambda, gamma, beta)?;
    let (_, _, h, w) = z.dims4()?;
    let means: Vec<T> = z.data().chunks(h * w).map(background_level).collect();
    agc_backward_with_means(z, &means, lambda, gamma, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[x.len()], x.to_vec()).unwrap()
    }

    fn map(x: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, 2, 2], x.to_vec()).unwrap()
    }

    #[test]
    fn forward_hand_example() {
        let out = agc_forward(&map(&[1., 2., 3., 4.]), &v(&[1.]), &v(&[2.]), &v(&[0.5])).unwrap();
        assert_eq!(out.data(), &[-2.5, -0.5, 1.5, 3.5]);
    }

    #[test]
    fn identity_parameters() {
        let z = map(&[0.3, -1.7, 2.25, 9.0]);
        let out = agc_forward(&z, &v(&[0.]), &v(&[1.]), &v(&[0.])).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn full_mean_subtraction_zeroes_map_mean() {
        let z = Tensor::from_vec(
            &[2, 2, 2, 2],
            (0..16).map(|i| (i * i) as f64 * 0.3 - 1.0).collect(),
        )
        .unwrap();
        let out = agc_forward(&z, &v(&[1., 1.]), &v(&[3.7, -0.4]), &v(&[0., 0.])).unwrap();
        let means = out.reduce_mean(&[2, 3]).unwrap();
        assert!(means.data().iter().all(|m| m.abs() <= 1e-6));
    }

    #[test]
    fn backward_hand_example() {
        let g = agc_backward(
            &map(&[1., 2., 3., 4.]),
            &v(&[1.]),
            &v(&[1.]),
            &v(&[0.]),
            &map(&[1., 0., 0., 0.]),
        )
        .unwrap();
        assert_eq!(g.z.data(), &[0.75, -0.25, -0.25, -0.25]);
        assert_eq!(g.lambda.data(), &[-2.5]);
        assert_eq!(g.gamma.data(), &[-1.5]);
        assert_eq!(g.beta.data(), &[1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let g = agc_backward(
            &map(&[1., 5., 3., 4.]),
            &v(&[0.7]),
            &v(&[1.3]),
            &v(&[0.2]),
            &map(&[0.; 4]),
        )
        .unwrap();
        for t in [&g.z, &g.lambda, &g.gamma, &g.beta] {
            assert!(t.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn lambda_zero_passes_scaled_gradient() {
        let go = map(&[0.1, -2.0, 3.5, 0.25]);
        let g = agc_backward(
            &map(&[1., 5., 3., 4.]),
            &v(&[0.]),
            &v(&[1.3]),
            &v(&[0.2]),
            &go,
        )
        .unwrap();
        assert_eq!(g.z, go.scale(1.3));
    }

    #[test]
    fn wrong_parameter_length_or_nan_rejected() {
        let z = map(&[1., 2., 3., 4.]);
        assert!(agc_forward(&z, &v(&[1., 1.]), &v(&[1.]), &v(&[0.])).is_err());
        assert!(matches!(
            agc_forward(&z, &v(&[f64::NAN]), &v(&[1.]), &v(&[0.])),
            Err(Error::NonFinite(_))
        ));
        assert!(agc_backward(
            &z,
            &v(&[1.]),
            &v(&[1.]),
            &v(&[0.]),
            &Tensor::zeros(&[1, 1, 1, 4]).unwrap()
        )
        .is_err());
    }
}
