use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::softmax;
use super::loss::{focal_loss, label_distribution_loss};
use super::network::{argmax, NetworkSpec, NetworkWeights};
use super::optim::Adam;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Focal,
    LabelDistribution,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Focal => "focal",
            LossKind::LabelDistribution => "label_distribution",
        }
    }
}

/// Piecewise-linear learning rate over `(epoch, rate)` points; flat
/// before the first and after the last point.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        LrSchedule(vec![(0, rate)])
    }

    pub fn linear(start: f64, end: f64, epochs: usize) -> Self {
        LrSchedule(vec![(0, start), (epochs.saturating_sub(1), end)])
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        let pts = &self.0;
        if epoch <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((e0, r0), (e1, r1)) = (w[0], w[1]);
            if epoch <= e1 {
                if e1 == e0 {
                    return r1;
                }
                let t = (epoch - e0) as f64 / (e1 - e0) as f64;
                return r0 + t * (r1 - r0);
            }
        }
        pts[pts.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub focal_gamma: f64,
    /// Per-class focal weights; `None` uses inverse class frequency.
    pub focal_alpha: Option<Vec<f64>>,
    pub ld_sigma: f64,
    /// Held-out fraction, split per label.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Focal,
            epochs: 30,
            batch_size: 32,
            lr_schedule: LrSchedule::linear(1e-3, 1e-4, 30),
            focal_gamma: 2.0,
            focal_alpha: None,
            ld_sigma: 1.0,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.lr_schedule.0.is_empty() {
            return bad("learning-rate schedule is empty");
        }
        if self.lr_schedule.0.windows(2).any(|w| w[1].0 < w[0].0) {
            return bad("learning-rate schedule epochs must be non-decreasing");
        }
        if self.lr_schedule.0.iter().any(|&(_, r)| !(r >= 0.0) || !r.is_finite()) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(self.focal_gamma >= 0.0) {
            return bad("focal gamma must be >= 0");
        }
        if !(self.ld_sigma > 0.0) {
            return bad("label-distribution sigma must be > 0");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// A training example: flat payload and class label.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub payload: &'a [f32],
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub history: Vec<EpochMetrics>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Indices split so each label contributes `round(fraction · count)` to the
/// held-out side, at least one when the label has two or more samples.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B17);
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let mut n_val = (fraction * idx.len() as f64).round() as usize;
        if fraction > 0.0 && n_val == 0 && idx.len() >= 2 {
            n_val = 1;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// `n / (k · n_c)` per class; absent classes get weight 1.
pub fn inverse_frequency(labels: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l < k {
            counts[l] += 1;
        }
    }
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                1.0
            } else {
                labels.len() as f64 / (k as f64 * c as f64)
            }
        })
        .collect()
}

struct Objective {
    loss: LossKind,
    gamma: f64,
    alpha: Vec<f64>,
    sigma: f64,
}

impl Objective {
    fn eval(&self, probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        match self.loss {
            LossKind::Focal => focal_loss(probs, labels, self.gamma, &self.alpha),
            LossKind::LabelDistribution => label_distribution_loss(probs, labels, self.sigma),
        }
    }
}

fn correct(probs: &Tensor, labels: &[usize]) -> usize {
    let k = probs.shape()[1];
    probs
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count()
}

fn loss_and_accuracy(
    weights: &NetworkWeights,
    data: &[Labeled],
    idx: &[usize],
    obj: &Objective,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0;
    for chunk in idx.chunks(64) {
        let x = weights.batch(chunk.iter().map(|&i| data[i].payload))?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data[i].label).collect();
        let probs = softmax(&weights.logits(x)?);
        loss += obj.eval(&probs, &labels)?.0 * chunk.len() as f64;
        hits += correct(&probs, &labels);
    }
    let n = idx.len().max(1) as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Mini-batch Adam training. Shuffling and dropout draw from separate
/// streams derived from `cfg.seed`, so a run is reproducible bit for bit.
pub fn train(spec: &NetworkSpec, data: &[Labeled], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    let k = spec.n_classes()?;
    let len = spec.input_len();
    if let Some((i, d)) = data.iter().enumerate().find(|(_, d)| d.payload.len() != len) {
        return Err(Error::dims(
            format!("payload of {len} values for every sample"),
            format!("{} at sample {i}", d.payload.len()),
        ));
    }
    if let Some(d) = data.iter().find(|d| d.label >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range for {k} classes",
            d.label
        )));
    }

    let labels: Vec<usize> = data.iter().map(|d| d.label).collect();
    let (train_idx, val_idx) = stratified_split(&labels, cfg.validation_fraction, cfg.seed);
    if train_idx.is_empty() {
        return Err(Error::InvalidArgument("validation split left no training data".into()));
    }
    let alpha = match &cfg.focal_alpha {
        Some(a) if a.len() != k => {
            return Err(Error::InvalidArgument(format!(
                "{} focal weights for {k} classes",
                a.len()
            )))
        }
        Some(a) => a.clone(),
        None => {
            let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
            inverse_frequency(&train_labels, k)
        }
    };
    let obj = Objective {
        loss: cfg.loss,
        gamma: cfg.focal_gamma,
        alpha,
        sigma: cfg.ld_sigma,
    };

    let mut weights = NetworkWeights::init(spec, cfg.seed)?;
    let mut adam = Adam::new(&weights.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order = train_idx.clone();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.rate(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = weights.batch(chunk.iter().map(|&i| data[i].payload))?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, caches) = weights.forward_cached(x, Some(&mut dropout_rng), true)?;
            let probs = softmax(&logits);
            let (loss, dlogits) = obj.eval(&probs, &batch_labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    layer: weights.spec.layers.len() - 1,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            hits += correct(&probs, &batch_labels);
            let grads = weights.backward(caches, dlogits)?;
            adam.step(&mut weights.params, &grads, lr)?;
        }
        let (val_loss, val_accuracy) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (l, a) = loss_and_accuracy(&weights, data, &val_idx, &obj)?;
            (Some(l), Some(a))
        };
        history.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: hits as f64 / order.len() as f64,
            val_loss,
            val_accuracy,
        });
    }
    weights.quantize();
    Ok(TrainOutcome {
        weights,
        history,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    pub fn recall(&self, class: usize) -> f64 {
        let row: usize = self.counts[class].iter().sum();
        self.counts[class][class] as f64 / row.max(1) as f64
    }

    pub fn precision(&self, class: usize) -> f64 {
        let col: usize = self.counts.iter().map(|r| r[class]).sum();
        self.counts[class][class] as f64 / col.max(1) as f64
    }
}

pub fn evaluate(weights: &NetworkWeights, data: &[Labeled]) -> Result<Confusion> {
    let k = weights.n_classes();
    let mut conf = Confusion::new(k);
    let payloads: Vec<&[f32]> = data.iter().map(|d| d.payload).collect();
    for (p, d) in weights.predict_many(&payloads)?.iter().zip(data) {
        if d.label >= k {
            return Err(Error::InvalidArgument(format!("label {} out of range", d.label)));
        }
        conf.add(d.label, argmax(p));
    }
    Ok(conf)
}

#[cfg(test)]
mod tests {
    use super::super::network::LayerSpec;
    use super::*;
    use rand::Rng;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec {
            input_shape: vec![4, 4, 1],
            layers: vec![
                LayerSpec::conv2d(1, 4),
                LayerSpec::relu(),
                LayerSpec::pool(0.25),
                LayerSpec::flatten(),
                LayerSpec::dense(16, 8),
                LayerSpec::relu(),
                LayerSpec::dense(8, 2),
            ],
        }
    }

    /// Class 1 brightens the left half, class 0 the right half.
    fn separable(n: usize, seed: u64) -> Vec<(Vec<f32>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let p = (0..16)
                    .map(|j| {
                        let left = (j % 4) < 2;
                        let base = if left == (label == 1) { 0.8 } else { 0.1 };
                        base + rng.gen_range(-0.05..0.05)
                    })
                    .collect();
                (p, label)
            })
            .collect()
    }

    fn labeled(v: &[(Vec<f32>, usize)]) -> Vec<Labeled<'_>> {
        v.iter()
            .map(|(p, l)| Labeled {
                payload: p,
                label: *l,
            })
            .collect()
    }

    #[test]
    fn schedule_interpolates() {
        let s = LrSchedule::linear(1e-3, 1e-4, 30);
        assert_eq!(s.rate(0), 1e-3);
        assert!((s.rate(29) - 1e-4).abs() < 1e-18);
        assert!((s.rate(14) - (1e-3 - 14.0 / 29.0 * 9e-4)).abs() < 1e-15);
        assert_eq!(s.rate(100), 1e-4);
        assert_eq!(LrSchedule::constant(1e-3).rate(7), 1e-3);
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..200).map(|i| usize::from(i % 10 == 0)).collect();
        let (tr, va) = stratified_split(&labels, 0.1, 4);
        assert_eq!(tr.len() + va.len(), 200);
        assert_eq!(va.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(va.iter().filter(|&&i| labels[i] == 0).count(), 18);
    }

    #[test]
    fn inverse_frequency_balances() {
        let a = inverse_frequency(&[0, 0, 0, 1], 2);
        assert!((a[0] * 3.0 - a[1] * 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rate_freezes_weights() {
        let data = separable(40, 1);
        let cfg = TrainConfig {
            epochs: 3,
            lr_schedule: LrSchedule::constant(0.0),
            ..TrainConfig::default()
        };
        let out = train(&toy_spec(), &labeled(&data), &cfg).unwrap();
        assert_eq!(out.weights, NetworkWeights::init(&toy_spec(), cfg.seed).unwrap());
    }

    #[test]
    fn separable_set_is_learned() {
        let data = separable(200, 2);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr_schedule: LrSchedule::constant(1e-2),
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let set = labeled(&data);
        let out = train(&toy_spec(), &set, &cfg).unwrap();
        let acc = evaluate(&out.weights, &set).unwrap().accuracy();
        assert!(acc >= 0.99, "train accuracy {acc}");
        assert_eq!(out.history.len(), 30);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(60, 3);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let a = train(&toy_spec(), &labeled(&data), &cfg).unwrap();
        let b = train(&toy_spec(), &labeled(&data), &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn wrong_payload_length_rejected() {
        let bad = vec![(vec![0.0f32; 15], 0usize)];
        assert!(train(&toy_spec(), &labeled(&bad), &TrainConfig::default()).is_err());
    }

    #[test]
    fn whole_network_gradient_matches_differences() {
        let spec = NetworkSpec {
            input_shape: vec![5, 3, 4, 1],
            layers: vec![
                LayerSpec::conv3d(5, 2),
                LayerSpec::conv2d(2, 3),
                LayerSpec::relu(),
                LayerSpec::pool(0.0),
                LayerSpec::flatten(),
                LayerSpec::dense(12, 6),
                LayerSpec::relu(),
                LayerSpec::dense(6, 5),
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w = NetworkWeights::init(&spec, 4).unwrap();
        for t in w.params.iter_mut().flatten() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        let x = Tensor::from_vec(&[3, 5, 3, 4, 1], (0..180).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let labels = [0, 3, 4];
        let loss = |w: &NetworkWeights| {
            let p = softmax(&w.logits(x.clone()).unwrap());
            label_distribution_loss(&p, &labels, 1.0).unwrap().0
        };
        let (logits, caches) = w.forward_cached(x.clone(), None, true).unwrap();
        let (_, dl) = label_distribution_loss(&softmax(&logits), &labels, 1.0).unwrap();
        let grads = w.backward(caches, dl).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for layer in 0..w.params.len() {
            for p in 0..w.params[layer].len() {
                for i in 0..w.params[layer][p].len() {
                    let orig = w.params[layer][p].data()[i];
                    w.params[layer][p].data_mut()[i] = orig + h;
                    let up = loss(&w);
                    w.params[layer][p].data_mut()[i] = orig - h;
                    let down = loss(&w);
                    w.params[layer][p].data_mut()[i] = orig;
                    let num = (up - down) / (2.0 * h);
                    let ana = grads[layer][p].data()[i];
                    worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-6));
                }
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst:e}");
    }

    #[test]
    fn confusion_counts() {
        let mut c = Confusion::new(2);
        c.add(0, 0);
        c.add(1, 0);
        c.add(1, 1);
        assert!((c.accuracy() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.recall(1), 0.5);
        assert_eq!(c.precision(0), 0.5);
    }
}
