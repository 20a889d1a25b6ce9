//! Adversarial and guiding losses: WGAN with gradient penalty and the
//! Lovász-Softmax surrogate of the Jaccard loss.

use std::cmp::Ordering;

use rand::Rng;

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::labels::{ClassList, SegmentMap};

/// Default gradient-penalty weight.
pub const GP_LAMBDA: f64 = 10.0;

/// Loss components of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub d_loss: f64,
    pub g_adv_loss: f64,
    /// Lovász-Softmax value on the generator batch (also logged when it is
    /// not part of the objective).
    pub lovasz_loss: f64,
    /// The guiding term actually added to the generator objective.
    pub guide_loss: f64,
    pub gp_term: f64,
    pub total_g: f64,
}

/// Unweighted sum of the adversarial and guiding terms.
pub fn total_generator_loss(adv: f64, guide: f64) -> f64 {
    adv + guide
}

/// Which guiding loss accompanies the adversarial generator loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GuidingLoss {
    #[default]
    Lovasz,
    Mse,
    None,
}

impl std::str::FromStr for GuidingLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lovasz" => Ok(Self::Lovasz),
            "mse" => Ok(Self::Mse),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidConfig(format!("unknown guiding loss {other}"))),
        }
    }
}

impl std::fmt::Display for GuidingLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lovasz => "lovasz",
            Self::Mse => "mse",
            Self::None => "none",
        })
    }
}

/// Marginal Jaccard-loss increments along a descending error ordering.
///
/// All zeros when the class has no ground-truth pixel.
pub fn lovasz_grad(sorted_errors: &[f64], gt_sorted: &[bool]) -> Result<Vec<f64>> {
    if sorted_errors.len() != gt_sorted.len() || sorted_errors.is_empty() {
        return Err(Error::Precondition(format!(
            "lovasz_grad needs equal non-empty inputs, got {} and {}",
            sorted_errors.len(),
            gt_sorted.len()
        )));
    }
    if sorted_errors.windows(2).any(|w| !(w[0] >= w[1])) {
        return Err(Error::Precondition("errors are not sorted in descending order".into()));
    }
    let gts = gt_sorted.iter().filter(|&&g| g).count() as f64;
    if gts == 0.0 {
        return Ok(vec![0.0; gt_sorted.len()]);
    }
    let mut fg_seen = 0.0;
    let mut bg_seen = 0.0;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(gt_sorted.len());
    for &g in gt_sorted {
        if g {
            fg_seen += 1.0;
        } else {
            bg_seen += 1.0;
        }
        let jaccard = 1.0 - (gts - fg_seen) / (gts + bg_seen);
        out.push(jaccard - prev);
        prev = jaccard;
    }
    Ok(out)
}

/// Stable descending order of `errors`, ties broken by index.
fn descending_order(errors: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..errors.len()).collect();
    idx.sort_by(|&a, &b| errors[b].partial_cmp(&errors[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Per-pixel weights `w` with `extension(errors) = Σ w·errors`.
fn lovasz_weights(errors: &[f64], gt: &[bool]) -> Result<Vec<f64>> {
    let order = descending_order(errors);
    let sorted: Vec<f64> = order.iter().map(|&i| errors[i]).collect();
    let gts: Vec<bool> = order.iter().map(|&i| gt[i]).collect();
    let g = lovasz_grad(&sorted, &gts)?;
    let mut w = vec![0.0; errors.len()];
    for (k, &i) in order.iter().enumerate() {
        w[i] = g[k];
    }
    Ok(w)
}

/// Lovász extension of the Jaccard loss of one class at error vector `errors`.
pub fn lovasz_extension(errors: &[f64], gt: &[bool]) -> Result<f64> {
    if errors.len() != gt.len() {
        return Err(Error::shape("errors and ground truth differ in length"));
    }
    if errors.is_empty() {
        return Ok(0.0);
    }
    let w = lovasz_weights(errors, gt)?;
    Ok(w.iter().zip(errors).map(|(a, b)| a * b).sum())
}

fn check_probs<T: Scalar>(probs: &Tensor<T>, labels: &[SegmentMap], classes: &ClassList) -> Result<(usize, usize, usize)> {
    let s = probs.shape();
    if s.len() != 4 || s[0] != labels.len() || s[1] != classes.len() {
        return Err(Error::shape(format!(
            "probabilities {s:?} do not match {} maps over {} classes",
            labels.len(),
            classes.len()
        )));
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    for m in labels {
        if m.height() != s[2] || m.width() != s[3] {
            return Err(Error::shape(format!(
                "label map {}x{} vs probabilities {}x{}",
                m.width(),
                m.height(),
                s[3],
                s[2]
            )));
        }
    }
    let v = probs.values();
    let tol = if T::NAME == "f64" { 1e-5 } else { 1e-4 };
    for i in 0..n {
        for p in 0..plane {
            let sum: f64 = (0..c).map(|k| v[(i * c + k) * plane + p].as_f64()).sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::Precondition(format!(
                    "probabilities at sample {i} pixel {p} sum to {sum}"
                )));
            }
        }
    }
    Ok((n, c, plane))
}

/// Lovász-Softmax over a batch `[N, C, H, W]` of class probabilities.
///
/// Pixels whose label is Unlabeled or outside `classes` are ignored. The
/// batch is flattened and the result averaged over classes present in the
/// ground truth; with no such class the loss is zero.
pub fn lovasz_softmax<T: Scalar>(probs: &Tensor<T>, labels: &[SegmentMap], classes: &ClassList) -> Result<Tensor<T>> {
    let (n, c, plane) = check_probs(probs, labels, classes)?;
    let v = probs.values();
    let mut pixels = Vec::new();
    let mut truth = Vec::new();
    for (i, m) in labels.iter().enumerate() {
        for (p, &id) in m.ids().iter().enumerate() {
            if id == crate::labels::UNLABELED {
                continue;
            }
            if let Some(ch) = classes.channel_of(id) {
                pixels.push(i * c * plane + p);
                truth.push(ch);
            }
        }
    }
    let mut weights = vec![T::zero(); n * c * plane];
    let mut constant = 0.0;
    let mut present = 0usize;
    for k in 0..c {
        let gt: Vec<bool> = truth.iter().map(|&t| t == k).collect();
        if !gt.iter().any(|&g| g) {
            continue;
        }
        present += 1;
        let errors: Vec<f64> = pixels
            .iter()
            .zip(&gt)
            .map(|(&base, &fg)| {
                let p = v[base + k * plane].as_f64();
                if fg {
                    1.0 - p
                } else {
                    p
                }
            })
            .collect();
        let w = lovasz_weights(&errors, &gt)?;
        for ((&base, &fg), &wi) in pixels.iter().zip(&gt).zip(&w) {
            // error = 1 - p on foreground, p elsewhere
            if fg {
                constant += wi;
                weights[base + k * plane] = T::from_f64(-wi);
            } else {
                weights[base + k * plane] = T::from_f64(wi);
            }
        }
    }
    let g = probs.graph();
    if present == 0 {
        return Ok(g.scalar(T::zero()));
    }
    let inv = T::from_f64(1.0 / present as f64);
    Ok(probs
        .mul_const(&weights)?
        .sum_all()
        .add_scalar(T::from_f64(constant))
        .scale(inv))
}

/// Mean squared error against the one-hot ground truth over labelled pixels.
pub fn mse_guide<T: Scalar>(probs: &Tensor<T>, labels: &[SegmentMap], classes: &ClassList) -> Result<Tensor<T>> {
    let (n, c, plane) = check_probs(probs, labels, classes)?;
    let mut mask = vec![T::zero(); n * c * plane];
    let mut target = vec![T::zero(); n * c * plane];
    let mut count = 0usize;
    for (i, m) in labels.iter().enumerate() {
        for (p, &id) in m.ids().iter().enumerate() {
            let Some(ch) = classes.channel_of(id).filter(|_| id != crate::labels::UNLABELED) else { continue };
            count += 1;
            for k in 0..c {
                mask[(i * c + k) * plane + p] = T::one();
            }
            target[(i * c + ch) * plane + p] = T::one();
        }
    }
    let g = probs.graph();
    if count == 0 {
        return Ok(g.scalar(T::zero()));
    }
    let t = g.constant(target, probs.shape())?;
    let diff = probs.sub(&t)?.mul_const(&mask)?;
    Ok(diff.square().sum_all().scale(T::from_f64(1.0 / (count * c) as f64)))
}

/// A critic scoring a batch; any output shape with a leading batch axis.
pub trait Critic<T: Scalar> {
    fn score(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar, F> Critic<T> for F
where
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    fn score(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self(x)
    }
}

/// Critic value per sample: patch scores averaged, shape `[N]`.
pub fn critic_per_sample<T: Scalar, D: Critic<T> + ?Sized>(critic: &D, x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = critic.score(x)?;
    if s.shape().first() != x.shape().first() {
        return Err(Error::shape(format!(
            "critic returned {:?} for a batch of {:?}",
            s.shape(),
            x.shape()
        )));
    }
    s.mean_per_sample()
}

/// `λ · mean_n (‖∇D(x̂_n)‖ - 1)²` on random interpolates of `real` and `fake`.
///
/// The interpolates are fresh leaves; the penalty remains differentiable with
/// respect to the critic's parameters.
pub fn gradient_penalty<T, D, R>(critic: &D, real: &Tensor<T>, fake: &Tensor<T>, lambda: f64, rng: &mut R) -> Result<Tensor<T>>
where
    T: Scalar,
    D: Critic<T> + ?Sized,
    R: Rng,
{
    if real.shape() != fake.shape() || real.shape().is_empty() {
        return Err(Error::shape(format!(
            "real {:?} and fake {:?} batches differ",
            real.shape(),
            fake.shape()
        )));
    }
    let g = real.graph();
    let n = real.shape()[0];
    let per = real.numel() / n.max(1);
    let (rv, fv) = (real.values(), fake.values());
    let mut mix = Vec::with_capacity(real.numel());
    for i in 0..n {
        let eps = T::from_f64(rng.random::<f64>());
        for j in i * per..(i + 1) * per {
            mix.push(eps * rv[j] + (T::one() - eps) * fv[j]);
        }
    }
    let x_hat = g.variable(mix, real.shape())?;
    let d = critic_per_sample(critic, &x_hat)?.sum_all();
    let grad = match g.grad(&d, &[&x_hat], true)?.remove(0) {
        Some(t) => t,
        None => g.full(real.shape(), T::zero()),
    };
    let norm = grad.square().sum_per_sample()?.sqrt();
    Ok(norm.add_scalar(-T::one()).square().mean_all().scale(T::from_f64(lambda)))
}

/// Critic objective `E[D(fake)] - E[D(real)] + GP`; returns the loss and the penalty.
pub fn wgan_gp_d_loss<T, D, R>(critic: &D, real: &Tensor<T>, fake: &Tensor<T>, lambda: f64, rng: &mut R) -> Result<(Tensor<T>, Tensor<T>)>
where
    T: Scalar,
    D: Critic<T> + ?Sized,
    R: Rng,
{
    let gp = gradient_penalty(critic, real, fake, lambda, rng)?;
    let d_fake = critic_per_sample(critic, fake)?.mean_all();
    let d_real = critic_per_sample(critic, real)?.mean_all();
    Ok((d_fake.sub(&d_real)?.add(&gp)?, gp))
}

/// Generator adversarial objective `-E[D(fake)]`.
pub fn wgan_g_loss<T: Scalar, D: Critic<T> + ?Sized>(critic: &D, fake: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(critic_per_sample(critic, fake)?.mean_all().scale(-T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_class_weights_vanish() {
        assert_eq!(lovasz_grad(&[0.9, 0.5, 0.1], &[false; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn weights_sum_to_one() {
        let g = lovasz_grad(&[0.9, 0.7, 0.3, 0.2], &[true, false, true, false]).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unsorted_rejected() {
        assert!(lovasz_grad(&[0.1, 0.5], &[true, false]).is_err());
    }

    #[test]
    fn one_foreground_miss() {
        // gt (1,1,0,0), only the first foreground pixel in error
        let ext = lovasz_extension(&[1.0, 0.0, 0.0, 0.0], &[true, true, false, false]).unwrap();
        assert_eq!(ext, 0.5);
    }

    #[test]
    fn total_is_a_plain_sum() {
        assert_eq!(total_generator_loss(-3.0, 0.5), -2.5);
        assert_eq!(total_generator_loss(0.0, 0.0), 0.0);
    }

    #[test]
    fn guiding_loss_names_round_trip() {
        for g in [GuidingLoss::Lovasz, GuidingLoss::Mse, GuidingLoss::None] {
            assert_eq!(g.to_string().parse::<GuidingLoss>().unwrap(), g);
        }
    }
}
