//! Classification losses evaluated on softmax outputs. Each returns the
//! batch-mean loss and its gradient with respect to the logits that
//! produced `probs`.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

fn check(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let s = probs.shape();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(Error::dims(
            format!("[{}, k] probabilities", labels.len()),
            format!("{s:?}"),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            s[1]
        )));
    }
    Ok((s[0], s[1]))
}

/// `−α_y (1 − p_y)^γ ln p_y`, averaged over the batch.
pub fn focal_loss(
    probs: &Tensor,
    labels: &[usize],
    gamma: f64,
    alpha: &[f64],
) -> Result<(f64, Tensor)> {
    let (n, k) = check(probs, labels)?;
    if alpha.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} focal weights for {k} classes",
            alpha.len()
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument("focal gamma must be >= 0".into()));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let p = &probs.data()[s * k..(s + 1) * k];
        let py = p[y].max(PROB_FLOOR);
        let q = (1.0 - py).max(PROB_FLOOR);
        let a = alpha[y];
        let log_p = py.ln();
        total += -a * q.powf(gamma) * log_p;
        // dL/dp_y, then through the softmax Jacobian p_y (δ_jy − p_j)
        let mut dl_dpy = -a * q.powf(gamma) / py;
        if gamma != 0.0 {
            dl_dpy += a * gamma * q.powf(gamma - 1.0) * log_p;
        }
        let g = &mut grad.data_mut()[s * k..(s + 1) * k];
        for j in 0..k {
            let delta = if j == y { 1.0 } else { 0.0 };
            g[j] = dl_dpy * py * (delta - p[j]) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let k = probs.shape().get(1).copied().unwrap_or(0);
    focal_loss(probs, labels, 0.0, &vec![1.0; k])
}

/// Discretised Gaussian over `k` ordinal classes centred on `label`.
pub fn gaussian_target(label: usize, k: usize, sigma: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k)
        .map(|c| {
            let d = c as f64 - label as f64;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

/// Cross-entropy against the one-hot label plus `KL(target ‖ probs)` against
/// the label's Gaussian distribution.
pub fn label_distribution_loss(probs: &Tensor, labels: &[usize], sigma: f64) -> Result<(f64, Tensor)> {
    let (n, k) = check(probs, labels)?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("label-distribution sigma must be > 0".into()));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let p = &probs.data()[s * k..(s + 1) * k];
        let t = gaussian_target(y, k, sigma);
        total += -p[y].max(PROB_FLOOR).ln();
        for j in 0..k {
            if t[j] > 0.0 {
                total += t[j] * (t[j].ln() - p[j].max(PROB_FLOOR).ln());
            }
        }
        let g = &mut grad.data_mut()[s * k..(s + 1) * k];
        for j in 0..k {
            let onehot = if j == y { 1.0 } else { 0.0 };
            g[j] = (2.0 * p[j] - onehot - t[j]) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// The KL part alone, for checking that matched distributions cost nothing.
pub fn kl_to_target(probs: &[f64], label: usize, sigma: f64) -> f64 {
    let t = gaussian_target(label, probs.len(), sigma);
    t.iter()
        .zip(probs)
        .filter(|(ti, _)| **ti > 0.0)
        .map(|(ti, pi)| ti * (ti.ln() - pi.max(PROB_FLOOR).ln()))
        .sum()
}
