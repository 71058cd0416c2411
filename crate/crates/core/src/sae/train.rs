//! Objective, gradients and the AdamW training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{top_k, SaeModel, SaeParts};
use crate::activation_io::DumpRecord;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::{axpy, dot, TokenMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    /// Tokens per optimizer step.
    pub batch_size: usize,
    pub total_steps: u64,
    pub warmup_fraction: f64,
    /// Weight of the L1 penalty on codes. Top-k already enforces sparsity.
    pub l1_weight: f64,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale every decoder column to unit norm after each step.
    pub normalize_decoder: bool,
    /// A feature is counted dead once it has not fired for this many steps.
    pub dead_window: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            batch_size: 4096,
            total_steps: 10_000,
            warmup_fraction: 0.05,
            l1_weight: 0.0,
            seed: 0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            normalize_decoder: false,
            dead_window: 1_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if !(self.l1_weight >= 0.0) {
            return bad("l1_weight must be nonnegative");
        }
        if !(self.peak_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate and weight decay must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).floor() as u64
    }
}

/// Learning rate at `step` (0..=total_steps): linear ramp from 0 to the peak
/// over the warmup steps, then cosine decay reaching 0 at the final step.
pub fn lr_at(step: u64, config: &TrainConfig) -> Result<f64> {
    let total = config.total_steps;
    if step > total {
        return Err(Error::InvalidStep { step, total });
    }
    let warmup = config.warmup_steps();
    let peak = config.peak_lr;
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let span = total - warmup;
    if span == 0 {
        return Ok(0.0);
    }
    let progress = (step - warmup) as f64 / span as f64;
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    /// Mean over the batch of the squared L2 reconstruction error.
    pub mse: f64,
    /// Mean over the batch of the L1 norm of the codes.
    pub l1: f64,
}

/// Gradient of the mean batch objective, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGradients {
    d: usize,
    m: usize,
    enc_t: Vec<f32>,
    b_enc: Vec<f32>,
    atoms: Vec<f32>,
    b_dec: Vec<f32>,
}

impl SaeGradients {
    fn zeros(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            enc_t: vec![0.0; d * m],
            b_enc: vec![0.0; m],
            atoms: vec![0.0; m * d],
            b_dec: vec![0.0; d],
        }
    }

    /// ∂L/∂W_enc[j][i]
    pub fn w_enc(&self, j: usize, i: usize) -> f32 {
        self.enc_t[i * self.m + j]
    }

    /// ∂L/∂W_dec[i][j]
    pub fn w_dec(&self, i: usize, j: usize) -> f32 {
        self.atoms[j * self.d + i]
    }

    pub fn b_enc(&self) -> &[f32] {
        &self.b_enc
    }

    pub fn b_dec(&self) -> &[f32] {
        &self.b_dec
    }

    /// Same orientation as [`SaeModel::to_parts`].
    pub fn to_parts(&self) -> SaeParts {
        let mut w_enc = vec![0.0; self.m * self.d];
        let mut w_dec = vec![0.0; self.d * self.m];
        for j in 0..self.m {
            for i in 0..self.d {
                w_enc[j * self.d + i] = self.w_enc(j, i);
                w_dec[i * self.m + j] = self.w_dec(i, j);
            }
        }
        SaeParts {
            w_enc,
            b_enc: self.b_enc.clone(),
            w_dec,
            b_dec: self.b_dec.clone(),
        }
    }

    fn blocks(&self) -> [&[f32]; 4] {
        [&self.enc_t, &self.b_enc, &self.atoms, &self.b_dec]
    }
}

const CHUNK: usize = 64;

/// Forward and local backward results for a run of tokens.
struct ChunkPass {
    /// `h - b_dec` per token.
    centered: Vec<f32>,
    /// `∂L/∂ĥ` per token.
    grad_out: Vec<f32>,
    /// `(feature, z, ∂L/∂a)` per token.
    active: Vec<Vec<(u32, f32, f32)>>,
    sq_err: f64,
    l1: f64,
}

fn chunk_pass(model: &SaeModel, rows: &[&[f32]], scale: f32, l1_weight: f32) -> ChunkPass {
    let d = model.d;
    let mut pass = ChunkPass {
        centered: vec![0.0; rows.len() * d],
        grad_out: vec![0.0; rows.len() * d],
        active: Vec::with_capacity(rows.len()),
        sq_err: 0.0,
        l1: 0.0,
    };
    let mut a = vec![0.0; model.m];
    let mut recon = vec![0.0; d];
    for (t, h) in rows.iter().enumerate() {
        let x = &mut pass.centered[t * d..(t + 1) * d];
        for ((xi, hi), bi) in x.iter_mut().zip(h.iter()).zip(&model.b_dec) {
            *xi = hi - bi;
        }
        model.pre_activations_into(h, &mut a);
        let mut selected = top_k(&a, model.k);
        selected.retain(|e| e.1 > 0.0);
        selected.sort_unstable_by_key(|e| e.0);

        recon.copy_from_slice(&model.b_dec);
        for &(j, zj) in &selected {
            axpy(zj, model.decoder_atom(j as usize), &mut recon);
        }
        let g = &mut pass.grad_out[t * d..(t + 1) * d];
        let mut err = 0.0f64;
        for ((gi, ri), hi) in g.iter_mut().zip(&recon).zip(h.iter()) {
            let diff = ri - hi;
            err += (diff as f64) * (diff as f64);
            *gi = 2.0 * diff * scale;
        }
        pass.sq_err += err;
        let mut code_l1 = 0.0f64;
        let active = selected
            .into_iter()
            .map(|(j, zj)| {
                code_l1 += zj as f64;
                let dz = dot(model.decoder_atom(j as usize), g) + l1_weight * scale;
                (j, zj, dz)
            })
            .collect();
        pass.l1 += code_l1;
        pass.active.push(active);
    }
    pass
}

/// Runs the batch and optionally accumulates gradients. Also reports which
/// features fired.
fn batch_pass(
    model: &SaeModel,
    rows: &[&[f32]],
    l1_weight: f64,
    exec: Execution,
    grads: Option<&mut SaeGradients>,
    fired: Option<&mut [bool]>,
) -> LossParts {
    let n = rows.len();
    let scale = 1.0 / n as f32;
    let chunks: Vec<&[&[f32]]> = rows.chunks(CHUNK).collect();
    let passes = exec.map(&chunks, |c| chunk_pass(model, c, scale, l1_weight as f32));

    let sq_err: f64 = passes.iter().map(|p| p.sq_err).sum();
    let l1: f64 = passes.iter().map(|p| p.l1).sum();
    let mse = sq_err / n as f64;
    let l1 = l1 / n as f64;

    if let Some(fired) = fired {
        for pass in &passes {
            for &(j, _, _) in pass.active.iter().flatten() {
                fired[j as usize] = true;
            }
        }
    }
    if let Some(grads) = grads {
        let (d, m) = (model.d, model.m);
        for pass in &passes {
            for (t, active) in pass.active.iter().enumerate() {
                let x = &pass.centered[t * d..(t + 1) * d];
                let g = &pass.grad_out[t * d..(t + 1) * d];
                for (gb, gi) in grads.b_dec.iter_mut().zip(g) {
                    *gb += gi;
                }
                for &(j, zj, da) in active {
                    let j = j as usize;
                    axpy(zj, g, &mut grads.atoms[j * d..(j + 1) * d]);
                    grads.b_enc[j] += da;
                    for (i, &xi) in x.iter().enumerate() {
                        grads.enc_t[i * m + j] += da * xi;
                        grads.b_dec[i] -= da * model.enc_t[i * m + j];
                    }
                }
            }
        }
    }
    LossParts {
        total: mse + l1_weight * l1,
        mse,
        l1,
    }
}

fn batch_rows<'a>(model: &SaeModel, batch: &'a TokenMatrix) -> Result<Vec<&'a [f32]>> {
    if batch.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.cols() != model.d {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            found: batch.cols(),
        });
    }
    if batch.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(batch.iter_rows().collect())
}

/// Mean reconstruction objective over a batch of token activations.
pub fn loss(model: &SaeModel, batch: &TokenMatrix, l1_weight: f64) -> Result<LossParts> {
    let rows = batch_rows(model, batch)?;
    Ok(batch_pass(
        model,
        &rows,
        l1_weight,
        Execution::default(),
        None,
        None,
    ))
}

/// Loss and its gradient with respect to every parameter. The gradient
/// treats the top-k active set and the ReLU mask as fixed.
pub fn gradients(
    model: &SaeModel,
    batch: &TokenMatrix,
    l1_weight: f64,
) -> Result<(LossParts, SaeGradients)> {
    let rows = batch_rows(model, batch)?;
    let mut grads = SaeGradients::zeros(model.d, model.m);
    let parts = batch_pass(
        model,
        &rows,
        l1_weight,
        Execution::default(),
        Some(&mut grads),
        None,
    );
    Ok((parts, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub mse: f64,
    pub l1: f64,
    pub dead_features: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub entries: Vec<StepLog>,
}

impl TrainLog {
    /// Trailing moving average of the logged MSE; entry `i` averages steps
    /// `i + 1 - window ..= i`. Shorter than the log by `window - 1`.
    pub fn mse_moving_average(&self, window: usize) -> Vec<f64> {
        if window == 0 || self.entries.len() < window {
            return Vec::new();
        }
        let mse: Vec<f64> = self.entries.iter().map(|e| e.mse).collect();
        mse.windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect()
    }
}

struct AdamState {
    first: [Vec<f32>; 4],
    second: [Vec<f32>; 4],
}

fn adamw_step(
    model: &mut SaeModel,
    grads: &SaeGradients,
    state: &mut AdamState,
    step: u64,
    lr: f64,
    config: &TrainConfig,
) {
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powf(step as f64);
    let bc2 = 1.0 - b2.powf(step as f64);
    let step_size = (lr / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;
    let decay = (1.0 - lr * config.weight_decay) as f32;
    let (b1, b2, eps) = (b1 as f32, b2 as f32, config.eps as f32);
    let params = model.raw_mut();
    for (b, (param, grad)) in params.into_iter().zip(grads.blocks()).enumerate() {
        let first = &mut state.first[b];
        let second = &mut state.second[b];
        for (((p, &g), m1), v) in param
            .iter_mut()
            .zip(grad)
            .zip(first.iter_mut())
            .zip(second.iter_mut())
        {
            *m1 = b1 * *m1 + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p *= decay;
            *p -= step_size * *m1 / (v.sqrt() / bc2_sqrt + eps);
        }
    }
}

/// Trains on an in-memory token pool (one row per token).
pub fn train_on_tokens(
    model: &SaeModel,
    tokens: &TokenMatrix,
    config: &TrainConfig,
) -> Result<(SaeModel, TrainLog)> {
    train_with(model, tokens, config, Execution::default())
}

/// Same as [`train_on_tokens`] with an explicit execution strategy. Every
/// strategy yields bitwise-identical models.
pub fn train_with(
    model: &SaeModel,
    tokens: &TokenMatrix,
    config: &TrainConfig,
    exec: Execution,
) -> Result<(SaeModel, TrainLog)> {
    config.validate()?;
    if tokens.cols() != model.d {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            found: tokens.cols(),
        });
    }
    if config.total_steps == 0 {
        return Ok((model.clone(), TrainLog::default()));
    }
    let n = tokens.rows();
    if n < config.batch_size {
        return Err(Error::InsufficientData {
            needed: config.batch_size,
            found: n,
        });
    }
    if tokens.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    let mut model = model.clone();
    let (d, m) = (model.d, model.m);
    let sizes = [d * m, m, m * d, d];
    let mut state = AdamState {
        first: sizes.map(|s| vec![0.0; s]),
        second: sizes.map(|s| vec![0.0; s]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut last_fired = vec![0u64; m];
    let mut fired = vec![false; m];
    let mut grads = SaeGradients::zeros(d, m);
    let mut log = TrainLog {
        entries: Vec::with_capacity(config.total_steps as usize),
    };

    for step in 1..=config.total_steps {
        if cursor + config.batch_size > n {
            // a batch spanning the whole pool keeps one fixed order
            if config.batch_size < n {
                order.shuffle(&mut rng);
            }
            cursor = 0;
        }
        let rows: Vec<&[f32]> = order[cursor..cursor + config.batch_size]
            .iter()
            .map(|&t| tokens.row(t))
            .collect();
        cursor += config.batch_size;

        for block in [
            &mut grads.enc_t,
            &mut grads.b_enc,
            &mut grads.atoms,
            &mut grads.b_dec,
        ] {
            block.fill(0.0);
        }
        fired.fill(false);
        let parts = batch_pass(
            &model,
            &rows,
            config.l1_weight,
            exec,
            Some(&mut grads),
            Some(&mut fired),
        );
        let lr = lr_at(step, config)?;
        adamw_step(&mut model, &grads, &mut state, step, lr, config);
        if config.normalize_decoder {
            model.normalize_atoms();
        }

        for (last, &f) in last_fired.iter_mut().zip(&fired) {
            if f {
                *last = step;
            }
        }
        let dead = last_fired
            .iter()
            .filter(|&&last| step - last >= config.dead_window)
            .count();
        log.entries.push(StepLog {
            step,
            lr,
            mse: parts.mse,
            l1: parts.l1,
            dead_features: dead,
        });
    }
    Ok((model, log))
}

/// Trains on every token of a dump stream. Records are loaded into memory
/// first; each token is an independent training example.
pub fn train<I>(model: &SaeModel, dump: I, config: &TrainConfig) -> Result<(SaeModel, TrainLog)>
where
    I: IntoIterator<Item = Result<DumpRecord>>,
{
    let mut values = Vec::new();
    let mut rows = 0;
    for record in dump {
        let (_, tokens) = record?;
        if tokens.cols() != model.d {
            return Err(Error::DimensionMismatch {
                expected: model.d,
                found: tokens.cols(),
            });
        }
        rows += tokens.rows();
        values.extend_from_slice(tokens.as_slice());
    }
    let pool = TokenMatrix::new(rows, model.d, values)?;
    train_on_tokens(model, &pool, config)
}
