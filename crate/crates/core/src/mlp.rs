//! Single-hidden-layer perceptron mapping a concatenated (user, item)
//! vector pair to an interest probability.
//!
//! The forward pass is `sigmoid(w_out . relu(W [u; v] + b) + b_out)`.
//! Training runs mini-batch gradient descent with inverted dropout on the
//! hidden layer, once per candidate hidden size, and keeps the model whose
//! validation loss is smallest.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::seed;

/// Output probabilities are clamped into this open interval so the
/// cross-entropy loss stays finite even at saturation.
const P_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    CrossEntropy,
    SquaredError,
}

impl Loss {
    pub fn as_str(self) -> &'static str {
        match self {
            Loss::CrossEntropy => "cross-entropy",
            Loss::SquaredError => "squared-error",
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-entropy" => Ok(Loss::CrossEntropy),
            "squared-error" => Ok(Loss::SquaredError),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

/// Mini-batch update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    Sgd,
    /// Gradient steps scaled by a running RMS of past gradients
    /// (rho = 0.9, eps = 1e-8).
    #[default]
    RmsProp,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::RmsProp => "rmsprop",
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "rmsprop" => Ok(Optimizer::RmsProp),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpConfig {
    pub hidden_candidates: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Fraction of the examples held out for hidden-size selection.
    pub validation_fraction: f64,
    pub loss: Loss,
    pub seed: u64,
    pub batch_size: usize,
    /// Per-epoch multiplier on the learning rate (1.0 = constant).
    pub lr_decay: f64,
    pub optimizer: Optimizer,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_candidates: vec![5, 10, 15, 20, 25],
            dropout_rate: 0.5,
            learning_rate: 0.001,
            epochs: 40,
            validation_fraction: 0.05,
            loss: Loss::CrossEntropy,
            seed: 0,
            batch_size: 32,
            lr_decay: 1.0,
            optimizer: Optimizer::RmsProp,
        }
    }
}

impl MlpConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden_candidates.is_empty() {
            return Err(Error::Config("no hidden size candidates".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout rate must be in [0, 1)".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation fraction must be in (0, 1)".into()));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("mlp learning rate must be > 0".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("mlp lr decay must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Network parameters. `w_hidden` is `hidden x 2*dim`; the first `dim`
/// columns act on the user vector, the rest on the item vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w_hidden: Matrix,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
    pub hidden: usize,
    pub dim: usize,
}

/// One supervised pair: concatenated input halves and the interest level
/// `rating / r_max` in [0, 1].
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub user_vector: Vec<f64>,
    pub item_vector: Vec<f64>,
    pub interest: f64,
}

/// Outcome of the hidden-size sweep.
#[derive(Debug, Clone)]
pub struct SelectionReport {
    /// (hidden size, validation loss), in candidate order.
    pub validation_losses: Vec<(usize, f64)>,
    pub chosen_hidden: usize,
    /// Mean training loss per epoch for the winning candidate.
    pub train_loss_per_epoch: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    let p = 1.0 / (1.0 + (-z).exp());
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

/// Interest probability for a (user, item) vector pair; dropout is never
/// active here.
pub fn forward(model: &MlpModel, user: &[f64], item: &[f64]) -> Result<f64> {
    if user.len() != model.dim || item.len() != model.dim {
        return Err(Error::DimensionMismatch(format!(
            "expected two vectors of dim {}, got {} and {}",
            model.dim,
            user.len(),
            item.len()
        )));
    }
    Ok(forward_unchecked(model, user, item))
}

pub(crate) fn forward_unchecked(model: &MlpModel, user: &[f64], item: &[f64]) -> f64 {
    let dim = model.dim;
    let mut z_out = model.b_out;
    for h in 0..model.hidden {
        let row = model.w_hidden.row(h);
        let z = model.b_hidden[h] + dot(&row[..dim], user) + dot(&row[dim..], item);
        if z > 0.0 {
            z_out += model.w_out[h] * z;
        }
    }
    sigmoid(z_out)
}

/// Inverted-dropout scales: 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`, so the expected scale is 1.
pub fn dropout_scales(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn loss_value(loss: Loss, p: f64, t: f64) -> f64 {
    match loss {
        Loss::CrossEntropy => -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()),
        Loss::SquaredError => (p - t) * (p - t),
    }
}

/// dL/dz at the output pre-activation.
fn loss_output_delta(loss: Loss, p: f64, t: f64) -> f64 {
    match loss {
        Loss::CrossEntropy => p - t,
        Loss::SquaredError => 2.0 * (p - t) * p * (1.0 - p),
    }
}

struct Gradients {
    w_hidden: Matrix,
    b_hidden: Vec<f64>,
    w_out: Vec<f64>,
    b_out: f64,
}

impl Gradients {
    fn zeros(hidden: usize, dim: usize) -> Self {
        Gradients {
            w_hidden: Matrix::zeros(hidden, 2 * dim),
            b_hidden: vec![0.0; hidden],
            w_out: vec![0.0; hidden],
            b_out: 0.0,
        }
    }

    fn clear(&mut self) {
        for h in 0..self.b_hidden.len() {
            self.w_hidden.row_mut(h).fill(0.0);
        }
        self.b_hidden.fill(0.0);
        self.w_out.fill(0.0);
        self.b_out = 0.0;
    }
}

/// Forward pass (optionally masked) plus gradient accumulation. Returns the
/// example loss. `z_buf`/`a_buf` are scratch space of length `hidden`.
#[allow(clippy::too_many_arguments)]
fn forward_backward(
    model: &MlpModel,
    user: &[f64],
    item: &[f64],
    target: f64,
    loss: Loss,
    mask: Option<&[f64]>,
    mut grads: Option<&mut Gradients>,
    z_buf: &mut [f64],
    a_buf: &mut [f64],
) -> f64 {
    let dim = model.dim;
    let mut z_out = model.b_out;
    for h in 0..model.hidden {
        let row = model.w_hidden.row(h);
        let z = model.b_hidden[h] + dot(&row[..dim], user) + dot(&row[dim..], item);
        let scale = mask.map_or(1.0, |m| m[h]);
        let a = if z > 0.0 { z * scale } else { 0.0 };
        z_buf[h] = z;
        a_buf[h] = a;
        z_out += model.w_out[h] * a;
    }
    let p = sigmoid(z_out);
    let value = loss_value(loss, p, target);

    if let Some(grads) = grads.as_mut() {
        let delta_out = loss_output_delta(loss, p, target);
        grads.b_out += delta_out;
        for h in 0..model.hidden {
            grads.w_out[h] += delta_out * a_buf[h];
            let scale = mask.map_or(1.0, |m| m[h]);
            if z_buf[h] > 0.0 && scale != 0.0 {
                let delta_h = delta_out * model.w_out[h] * scale;
                grads.b_hidden[h] += delta_h;
                let grow = grads.w_hidden.row_mut(h);
                for (slot, x) in grow[..dim].iter_mut().zip(user) {
                    *slot += delta_h * x;
                }
                for (slot, x) in grow[dim..].iter_mut().zip(item) {
                    *slot += delta_h * x;
                }
            }
        }
    }
    value
}

fn init_model(rng: &mut ChaCha8Rng, hidden: usize, dim: usize) -> MlpModel {
    let input = 2 * dim;
    let a_hidden = (6.0 / (input + hidden) as f64).sqrt();
    let a_out = (6.0 / (hidden + 1) as f64).sqrt();
    let mut w_hidden = Matrix::zeros(hidden, input);
    for h in 0..hidden {
        for v in w_hidden.row_mut(h) {
            *v = rng.gen_range(-a_hidden..=a_hidden);
        }
    }
    let w_out = (0..hidden).map(|_| rng.gen_range(-a_out..=a_out)).collect();
    MlpModel {
        w_hidden,
        b_hidden: vec![0.0; hidden],
        w_out,
        b_out: 0.0,
        hidden,
        dim,
    }
}

/// Train one network per candidate hidden size and keep the one with the
/// smallest validation loss (ties go to the earlier candidate).
pub fn train(
    examples: &[TrainingExample],
    config: &MlpConfig,
    dim: usize,
) -> Result<(MlpModel, SelectionReport)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("training example set"));
    }
    for (k, ex) in examples.iter().enumerate() {
        if ex.user_vector.len() != dim || ex.item_vector.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "example {k} has dims ({}, {}), expected {dim}",
                ex.user_vector.len(),
                ex.item_vector.len()
            )));
        }
        if !(0.0..=1.0).contains(&ex.interest) {
            return Err(Error::Config(format!(
                "example {k} interest {} outside [0, 1]",
                ex.interest
            )));
        }
    }

    // One shared validation split so every candidate is scored on the same
    // examples.
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "mlp-validation", 0));
    let mut indices: Vec<usize> = (0..examples.len()).collect();
    indices.shuffle(&mut split_rng);
    let val_count = (examples.len() as f64 * config.validation_fraction).floor() as usize;
    let (val_idx, train_idx) = indices.split_at(val_count);
    if train_idx.is_empty() {
        return Err(Error::Config(
            "validation split leaves no training examples".into(),
        ));
    }

    let mut best: Option<(f64, MlpModel, Vec<f64>)> = None;
    let mut validation_losses = Vec::with_capacity(config.hidden_candidates.len());

    for (c_idx, &hidden) in config.hidden_candidates.iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "mlp-candidate", c_idx as u64));
        let mut model = init_model(&mut rng, hidden, dim);
        let mut grads = Gradients::zeros(hidden, dim);
        let mut rms = Gradients::zeros(hidden, dim);
        let mut z_buf = vec![0.0; hidden];
        let mut a_buf = vec![0.0; hidden];
        let mut order: Vec<usize> = train_idx.to_vec();
        let mut mask = vec![1.0; hidden];
        let use_dropout = config.dropout_rate > 0.0;
        let mut train_trace = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            let lr = config.learning_rate * config.lr_decay.powi(epoch as i32);
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                grads.clear();
                for &k in batch {
                    let ex = &examples[k];
                    if use_dropout {
                        let keep = 1.0 / (1.0 - config.dropout_rate);
                        for m in mask.iter_mut() {
                            *m = if rng.gen::<f64>() < config.dropout_rate {
                                0.0
                            } else {
                                keep
                            };
                        }
                    }
                    epoch_loss += forward_backward(
                        &model,
                        &ex.user_vector,
                        &ex.item_vector,
                        ex.interest,
                        config.loss,
                        use_dropout.then_some(&mask[..]),
                        Some(&mut grads),
                        &mut z_buf,
                        &mut a_buf,
                    );
                }
                let inv = 1.0 / batch.len() as f64;
                match config.optimizer {
                    Optimizer::Sgd => {
                        let step = -lr * inv;
                        for h in 0..hidden {
                            let row = model.w_hidden.row_mut(h);
                            for (w, g) in row.iter_mut().zip(grads.w_hidden.row(h)) {
                                *w += step * g;
                            }
                            model.b_hidden[h] += step * grads.b_hidden[h];
                            model.w_out[h] += step * grads.w_out[h];
                        }
                        model.b_out += step * grads.b_out;
                    }
                    Optimizer::RmsProp => {
                        const RHO: f64 = 0.9;
                        const EPS: f64 = 1e-8;
                        let apply = |w: &mut f64, cache: &mut f64, g_sum: f64| {
                            let g = g_sum * inv;
                            *cache = RHO * *cache + (1.0 - RHO) * g * g;
                            *w -= lr * g / (cache.sqrt() + EPS);
                        };
                        for h in 0..hidden {
                            let row = model.w_hidden.row_mut(h);
                            let cache_row = rms.w_hidden.row_mut(h);
                            for ((w, c), &g) in
                                row.iter_mut().zip(cache_row.iter_mut()).zip(grads.w_hidden.row(h))
                            {
                                apply(w, c, g);
                            }
                            apply(&mut model.b_hidden[h], &mut rms.b_hidden[h], grads.b_hidden[h]);
                            apply(&mut model.w_out[h], &mut rms.w_out[h], grads.w_out[h]);
                        }
                        apply(&mut model.b_out, &mut rms.b_out, grads.b_out);
                    }
                }
            }
            epoch_loss /= order.len() as f64;
            if !epoch_loss.is_finite() {
                return Err(Error::Divergence {
                    stage: "mlp",
                    epoch,
                    detail: format!(" (hidden size {hidden})"),
                });
            }
            train_trace.push(epoch_loss);
        }

        // Validation loss without dropout; empty validation sets fall back
        // to the final training loss.
        let val_loss = if val_idx.is_empty() {
            *train_trace.last().unwrap()
        } else {
            let mut total = 0.0;
            for &k in val_idx {
                let ex = &examples[k];
                total += forward_backward(
                    &model,
                    &ex.user_vector,
                    &ex.item_vector,
                    ex.interest,
                    config.loss,
                    None,
                    None,
                    &mut z_buf,
                    &mut a_buf,
                );
            }
            total / val_idx.len() as f64
        };
        validation_losses.push((hidden, val_loss));
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, model, train_trace));
        }
    }

    let (_, model, train_loss_per_epoch) = best.expect("at least one candidate");
    let chosen_hidden = model.hidden;
    Ok((
        model,
        SelectionReport {
            validation_losses,
            chosen_hidden,
            train_loss_per_epoch,
        },
    ))
}

/// Compare analytic gradients against central finite differences (step
/// 1e-5) for every parameter; returns the maximum relative error, with an
/// absolute fallback when both gradients are below 1e-8.
pub fn gradient_check(model: &MlpModel, example: &TrainingExample, loss: Loss) -> f64 {
    const STEP: f64 = 1e-5;
    let hidden = model.hidden;
    let mut z_buf = vec![0.0; hidden];
    let mut a_buf = vec![0.0; hidden];
    let mut grads = Gradients::zeros(hidden, model.dim);
    forward_backward(
        model,
        &example.user_vector,
        &example.item_vector,
        example.interest,
        loss,
        None,
        Some(&mut grads),
        &mut z_buf,
        &mut a_buf,
    );

    let mut probe = model.clone();
    let loss_at = |m: &MlpModel| {
        let mut z = vec![0.0; hidden];
        let mut a = vec![0.0; hidden];
        forward_backward(
            m,
            &example.user_vector,
            &example.item_vector,
            example.interest,
            loss,
            None,
            None,
            &mut z,
            &mut a,
        )
    };

    let mut max_err = 0.0f64;
    let input = 2 * model.dim;
    for h in 0..hidden {
        for k in 0..input {
            let analytic = grads.w_hidden.row(h)[k];
            let orig = probe.w_hidden.row(h)[k];
            probe.w_hidden.row_mut(h)[k] = orig + STEP;
            let lp = loss_at(&probe);
            probe.w_hidden.row_mut(h)[k] = orig - STEP;
            let lm = loss_at(&probe);
            probe.w_hidden.row_mut(h)[k] = orig;
            max_err = max_err.max(relative_error(analytic, (lp - lm) / (2.0 * STEP)));
        }
        let analytic = grads.b_hidden[h];
        let orig = probe.b_hidden[h];
        probe.b_hidden[h] = orig + STEP;
        let lp = loss_at(&probe);
        probe.b_hidden[h] = orig - STEP;
        let lm = loss_at(&probe);
        probe.b_hidden[h] = orig;
        max_err = max_err.max(relative_error(analytic, (lp - lm) / (2.0 * STEP)));

        let analytic = grads.w_out[h];
        let orig = probe.w_out[h];
        probe.w_out[h] = orig + STEP;
        let lp = loss_at(&probe);
        probe.w_out[h] = orig - STEP;
        let lm = loss_at(&probe);
        probe.w_out[h] = orig;
        max_err = max_err.max(relative_error(analytic, (lp - lm) / (2.0 * STEP)));
    }
    let analytic = grads.b_out;
    let orig = probe.b_out;
    probe.b_out = orig + STEP;
    let lp = loss_at(&probe);
    probe.b_out = orig - STEP;
    let lm = loss_at(&probe);
    probe.b_out = orig;
    max_err = max_err.max(relative_error(analytic, (lp - lm) / (2.0 * STEP)));

    max_err
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

impl MlpModel {
    /// Text format: header `dim hidden`, `hidden` lines of `2*dim` weights,
    /// then the hidden biases, output weights, and output bias, one
    /// structure per line.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{} {}", self.dim, self.hidden)?;
        let join = |vals: &[f64]| {
            vals.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for h in 0..self.hidden {
            writeln!(out, "{}", join(self.w_hidden.row(h)))?;
        }
        writeln!(out, "{}", join(&self.b_hidden))?;
        writeln!(out, "{}", join(&self.w_out))?;
        writeln!(out, "{}", self.b_out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let malformed = |message: String| Error::MalformedFile {
            what: "mlp model",
            message,
        };
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| malformed("empty file".into()))??;
        let mut it = header.split_whitespace();
        let dim: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed("bad header".into()))?;
        let hidden: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed("bad header".into()))?;

        let mut parse_line = |expected: usize, what: &str| -> Result<Vec<f64>> {
            let line = lines
                .next()
                .ok_or_else(|| malformed(format!("missing {what}")))??;
            let vals: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(|t| t.parse()).collect();
            let vals = vals.map_err(|_| malformed(format!("bad float in {what}")))?;
            if vals.len() != expected {
                return Err(malformed(format!(
                    "{what}: expected {expected} values, found {}",
                    vals.len()
                )));
            }
            Ok(vals)
        };

        let mut rows = Vec::with_capacity(hidden);
        for h in 0..hidden {
            rows.push(parse_line(2 * dim, &format!("hidden row {h}"))?);
        }
        let b_hidden = parse_line(hidden, "hidden bias")?;
        let w_out = parse_line(hidden, "output weights")?;
        let b_out = parse_line(1, "output bias")?[0];
        Ok(MlpModel {
            w_hidden: Matrix::from_rows(rows),
            b_hidden,
            w_out,
            b_out,
            hidden,
            dim,
        })
    }
}
