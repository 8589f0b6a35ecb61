//! Losses, gradients and the optimizer loop.

use serde::{Deserialize, Serialize};

use super::net::{self, ContextGrad};
use super::{Context, ModelParams, ModelSpec, Variant};
use crate::bins::{softmax, BinGrid, LossWeights, TransitionMatrix, TRANSITION_FLOOR};
use crate::error::{Error, Result};
use crate::prior::{sample_task, SyntheticTask, TaskPriorConfig, TwoHypothesisPrior};
use crate::rng;

/// Loss above which training is declared divergent.
const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub warmup_steps: usize,
    /// Step at which the cosine reaches zero; the run length when unset.
    pub cosine_horizon: Option<usize>,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            learning_rate: 3e-4,
            weight_decay: 1e-5,
            grad_clip: 5.0,
            warmup_steps: 500,
            cosine_horizon: None,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be nonnegative, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config(format!("grad_clip must be positive, got {}", self.grad_clip)));
        }
        self.loss_weights.validate().map_err(|e| Error::config(e.to_string()))
    }

    /// Linear warmup then cosine decay.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let lr = self.learning_rate;
        if step < self.warmup_steps {
            return lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let horizon = self.cosine_horizon.unwrap_or(self.steps);
        if horizon <= self.warmup_steps {
            return lr;
        }
        let t = ((step - self.warmup_steps) as f64 / (horizon - self.warmup_steps) as f64).min(1.0);
        0.5 * lr * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Where training batches come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskSource {
    /// Fresh tasks from the synthetic prior at every step.
    Prior(TaskPriorConfig),
    /// Fresh tasks from the enumerable two-hypothesis prior.
    TwoHypothesis(TwoHypothesisPrior),
    /// The same tasks at every step.
    Frozen(Vec<SyntheticTask>),
}

impl TaskSource {
    pub fn batch(&self, seed: u64, step: usize, batch_size: usize) -> Result<Vec<SyntheticTask>> {
        let task_seed = |b: usize| rng::derive_seed(seed, (step * batch_size + b) as u64, rng::tag::TRAIN_BATCH);
        match self {
            Self::Prior(cfg) => (0..batch_size).map(|b| sample_task(cfg, task_seed(b))).collect(),
            Self::TwoHypothesis(prior) => Ok((0..batch_size).map(|b| prior.sample(task_seed(b))).collect()),
            Self::Frozen(tasks) => {
                if tasks.is_empty() {
                    return Err(Error::config("frozen task source is empty"));
                }
                Ok(tasks.clone())
            }
        }
    }
}

/// Per-step record of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub grad_norms: Vec<f64>,
}

/// Loss of one query and its gradient with respect to the head outputs.
struct QueryLoss {
    loss: f64,
    d_logits: Vec<f64>,
    d_log_var: f64,
}

fn query_loss(
    variant: Variant,
    grid: &BinGrid,
    logits: &[f64],
    log_var: Option<f64>,
    y: f64,
    f_star: f64,
    true_var: f64,
    w: &LossWeights,
) -> Result<QueryLoss> {
    let k = logits.len();
    let pi = softmax(logits);
    let mut loss = 0.0;
    // Gradient with respect to the probabilities, mapped through softmax at the end.
    let mut d_pi = vec![0.0; k];
    // Cross-entropy terms contribute `p - onehot` directly.
    let mut d_logits = vec![0.0; k];
    let mut d_log_var = 0.0;
    let yb = grid.bin_index(y)?;

    match (variant, log_var) {
        (Variant::Decoupled, Some(lv)) => {
            if w.lambda_y > 0.0 {
                let s2 = lv.exp();
                let t = TransitionMatrix::with_sigma_derivative(grid, s2)?;
                let p_b: f64 = pi.iter().enumerate().map(|(j, pj)| pj * t.get(j, yb)).sum();
                loss += w.lambda_y * (-p_b.max(TRANSITION_FLOOR).ln() + grid.widths()[yb].ln());
                if p_b > TRANSITION_FLOOR {
                    let mut d_sigma = 0.0;
                    for (j, (dp, pj)) in d_pi.iter_mut().zip(&pi).enumerate() {
                        *dp -= w.lambda_y * t.get(j, yb) / p_b;
                        d_sigma -= pj * t.d_sigma(j, yb);
                    }
                    d_log_var += w.lambda_y * d_sigma / p_b * 0.5 * t.sigma();
                }
            }
            if w.lambda_f > 0.0 {
                let fb = grid.bin_index(f_star)?;
                loss += -w.lambda_f * pi[fb].max(TRANSITION_FLOOR).ln();
                if pi[fb] > TRANSITION_FLOOR {
                    d_logits.iter_mut().zip(&pi).for_each(|(d, p)| *d += w.lambda_f * p);
                    d_logits[fb] -= w.lambda_f;
                }
            }
            if w.lambda_sigma > 0.0 {
                if !(true_var > 0.0) {
                    return Err(Error::domain(format!("true noise variance must be positive, got {true_var}")));
                }
                let diff = lv - true_var.ln();
                loss += w.lambda_sigma * diff * diff;
                d_log_var += w.lambda_sigma * 2.0 * diff;
            }
        }
        _ => {
            if w.lambda_y > 0.0 {
                loss += w.lambda_y * (-pi[yb].max(TRANSITION_FLOOR).ln() + grid.widths()[yb].ln());
                if pi[yb] > TRANSITION_FLOOR {
                    d_logits.iter_mut().zip(&pi).for_each(|(d, p)| *d += w.lambda_y * p);
                    d_logits[yb] -= w.lambda_y;
                }
            }
        }
    }
    let mean: f64 = pi.iter().zip(&d_pi).map(|(p, d)| p * d).sum();
    d_logits.iter_mut().zip(pi.iter().zip(&d_pi)).for_each(|(g, (p, d))| *g += p * (d - mean));
    Ok(QueryLoss { loss, d_logits, d_log_var })
}

/// Summed loss and gradient over the queries of one task.
fn task_loss_grad(params: &ModelParams, grid: &BinGrid, task: &SyntheticTask, w: &LossWeights) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let nc = task.n_context;
    let state = net::encode_context(params, Context { x: &task.x[..nc], y: &task.y[..nc] })?;
    let net = params.net();
    let mut ctx_grad = ContextGrad::new(params, &state);
    let mut total = 0.0;
    for i in nc..task.n {
        let cache = net::query_forward(params, &net, &state, &task.x[i])?;
        let q = query_loss(params.spec.variant, grid, &cache.logits, cache.log_var, task.y[i], task.f[i], task.sigma2[i], w)?;
        if !q.loss.is_finite() {
            return Err(Error::NonFiniteLoss { seed: task.rng_seed });
        }
        total += q.loss;
        net::query_backward(params, &net, &state, &cache, &q.d_logits, q.d_log_var, &mut ctx_grad, &mut grad);
    }
    net::context_backward(params, &net, &state, &ctx_grad, &mut grad);
    Ok((total, grad))
}

/// Mean loss over every query point in the batch and its exact gradient.
pub fn loss_and_grad(params: &ModelParams, tasks: &[SyntheticTask], weights: &LossWeights) -> Result<(f64, Vec<f64>)> {
    weights.validate()?;
    let grid = params.spec.grid()?;
    let n_queries: usize = tasks.iter().map(|t| t.n - t.n_context).sum();
    if n_queries == 0 {
        return Err(Error::domain("batch has no query points"));
    }
    let parts = crate::par::map(tasks, |t| task_loss_grad(params, &grid, t, weights));
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (task, part) in tasks.iter().zip(parts) {
        let (l, g) = part?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { seed: task.rng_seed });
        }
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / n_queries as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * weight_decay * *p;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Scales `grad` so its Euclidean norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Trains freshly initialized parameters.
pub fn train(spec: &ModelSpec, config: &TrainConfig, source: &TaskSource, seed: u64) -> Result<(ModelParams, TrainLog)> {
    let params = ModelParams::init(spec, seed)?;
    train_from(params, config, source, seed)
}

/// Continues training `params` for `config.steps` steps.
pub fn train_from(mut params: ModelParams, config: &TrainConfig, source: &TaskSource, seed: u64) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    params.validate()?;
    let mut opt = AdamW::new(params.len());
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let batch = source.batch(seed, step, config.batch_size)?;
        let (loss, mut grad) = loss_and_grad(&params, &batch, &config.loss_weights).map_err(|e| match e {
            Error::NonFiniteLoss { seed } => Error::Training { step, reason: format!("non-finite loss on task seed {seed}") },
            other => other,
        })?;
        if loss > DIVERGENCE_LOSS {
            return Err(Error::Training { step, reason: format!("loss {loss:.3e} exceeds {DIVERGENCE_LOSS:e}") });
        }
        let norm = clip_grad_norm(&mut grad, config.grad_clip);
        if !norm.is_finite() {
            return Err(Error::Training { step, reason: "non-finite gradient".into() });
        }
        let lr = config.learning_rate_at(step);
        opt.step(&mut params.values, &grad, lr, config.weight_decay);
        log.losses.push(loss);
        log.learning_rates.push(lr);
        log.grad_norms.push(norm);
        if step % 100 == 0 || step + 1 == config.steps {
            log::debug!("step {step}: loss {loss:.4} lr {lr:.2e} |g| {norm:.3}");
        }
    }
    Ok((params, log))
}
