//! Discrete-latent generative model over subgoals.
//!
//! The encoder maps a (subgoal, state) pair to a continuous code, which is
//! snapped to the nearest codebook entry; the decoder reconstructs the
//! subgoal from the code and the conditioning state as one categorical
//! distribution per grid cell. Training runs in two stages: a pretraining
//! stage on state pairs with the quantizer bypassed, then the full
//! quantized objective with the codebook initialized by KMeans++ on encoder
//! outputs. Reconstruction gradients reach the encoder through the
//! straight-through estimator; the quantization error term moves only the
//! codebook and the commitment term only the encoder. A separate prior
//! network predicts the code distribution conditioned on the current state,
//! which is what turns the decoder into a subgoal generator at search time.

mod kmeans;

pub use kmeans::{kmeans_pp, wcss};

use crate::diffcore::{
    adam_step, adam_step_flat, log_softmax, per_cell_argmax, per_cell_cross_entropy,
    softmax_cross_entropy, AdamState, Gradients, Network, GRAD_CLIP_NORM, LR_VQVAE,
};
use crate::envs::{derive_seed, EnvState, SizeConfig, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::segmentation::SubgoalPairs;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PretrainMode {
    /// Random state pairs `(s_j, s_i)` with `i < j <= i + H` from
    /// trajectories.
    RandomPairs,
    /// Consecutive subgoal pairs (used for TSP).
    SubgoalPairs,
}

#[derive(Clone, Debug)]
pub struct VqvaeConfig {
    /// Codebook size `K`.
    pub codebook_size: usize,
    /// Code dimensionality `D`.
    pub code_dim: usize,
    /// Commitment weight.
    pub beta: f64,
    pub pretrain_mode: PretrainMode,
    /// Pair horizon for pretraining pair sampling.
    pub pair_horizon: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_min_steps: usize,
    pub pretrain_max_steps: usize,
    /// Plateau detection: stop pretraining when the mean loss over the last
    /// window improves on the previous window by less than this relative
    /// amount.
    pub plateau_window: usize,
    pub plateau_rel_improvement: f64,
    pub train_steps: usize,
    pub prior_steps: usize,
    pub prior_lr: f64,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub prior_hidden: Vec<usize>,
    /// Codebook initialization uses at most this many encodings.
    pub kmeans_max_samples: usize,
    pub holdout_fraction: f64,
}

impl VqvaeConfig {
    /// Defaults: K=64, D=128, beta=0.1 (TSP: K=32, D=64, beta=0,
    /// subgoal-pair pretraining), learning rate 2e-4.
    pub fn default_for(config: SizeConfig) -> VqvaeConfig {
        let tsp = matches!(config, SizeConfig::Tsp { .. });
        VqvaeConfig {
            codebook_size: if tsp { 32 } else { 64 },
            code_dim: if tsp { 64 } else { 128 },
            beta: if tsp { 0.0 } else { 0.1 },
            pretrain_mode: if tsp {
                PretrainMode::SubgoalPairs
            } else {
                PretrainMode::RandomPairs
            },
            pair_horizon: if tsp { 50 } else { 10 },
            learning_rate: LR_VQVAE,
            batch_size: 16,
            pretrain_min_steps: 600,
            pretrain_max_steps: 6000,
            plateau_window: 200,
            plateau_rel_improvement: 1e-3,
            train_steps: 4000,
            prior_steps: 3000,
            prior_lr: 1e-3,
            encoder_hidden: vec![128, 128],
            decoder_hidden: vec![128, 128],
            prior_hidden: vec![128],
            kmeans_max_samples: 10_000,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    /// K code vectors, each of dimension D.
    pub codes: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.codes.first().map_or(0, |c| c.len())
    }
}

/// Nearest code by Euclidean distance; ties break to the lowest index.
pub fn quantize<'a>(codebook: &'a Codebook, z_e: &[f64]) -> (usize, &'a [f64]) {
    assert_eq!(codebook.dim(), z_e.len(), "code dimension mismatch");
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (idx, code) in codebook.codes.iter().enumerate() {
        let d: f64 = code.iter().zip(z_e).map(|(c, z)| (c - z) * (c - z)).sum();
        if d < best_d {
            best_d = d;
            best = idx;
        }
    }
    (best, &codebook.codes[best])
}

/// The three reported components of the quantized training loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VqvaeLossBreakdown {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
}

/// Loss arithmetic: `L = L_rec + ||z_e - e_k||^2 + beta * ||z_e - e_k||^2`
/// (the stop-gradient brackets change routing, not values).
pub fn vqvae_loss(l_rec: f64, z_e: &[f64], e_k: &[f64], beta: f64) -> VqvaeLossBreakdown {
    let codebook: f64 = z_e.iter().zip(e_k).map(|(z, e)| (z - e) * (z - e)).sum();
    let commitment = beta * codebook;
    VqvaeLossBreakdown {
        reconstruction: l_rec,
        codebook,
        commitment,
        total: l_rec + codebook + commitment,
    }
}

/// Encoder, decoder, and codebook over one environment configuration.
#[derive(Clone, Debug)]
pub struct SubgoalVqvae {
    /// `concat(encode(goal), encode(state))` -> D.
    pub encoder: Network,
    /// `concat(code, encode(state))` -> per-cell category logits.
    pub decoder: Network,
    pub codebook: Codebook,
    pub beta: f64,
    pub env_config: SizeConfig,
}

impl SubgoalVqvae {
    pub fn new(env_config: SizeConfig, config: &VqvaeConfig, seed: u64) -> SubgoalVqvae {
        let enc_dim = EnvState::encode_dim(env_config);
        let cells = env_config.cells();
        let cats = EnvState::cell_categories(env_config);
        let mut enc_dims = vec![2 * enc_dim];
        enc_dims.extend_from_slice(&config.encoder_hidden);
        enc_dims.push(config.code_dim);
        let mut dec_dims = vec![config.code_dim + enc_dim];
        dec_dims.extend_from_slice(&config.decoder_hidden);
        dec_dims.push(cells * cats);
        SubgoalVqvae {
            encoder: Network::mlp(&enc_dims, derive_seed(seed, 20, 0)),
            decoder: Network::mlp(&dec_dims, derive_seed(seed, 21, 0)),
            codebook: Codebook { codes: Vec::new() },
            beta: config.beta,
            env_config,
        }
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encode_pair(&self, goal: &EnvState, state: &EnvState) -> Vec<f64> {
        let mut input = goal.encode();
        input.extend(state.encode());
        self.encoder.infer(&input)
    }

    /// Decode a code vector conditioned on `state` into per-cell logits.
    pub fn decode_logits(&self, code: &[f64], state_enc: &[f64]) -> Vec<f64> {
        let mut input = code.to_vec();
        input.extend_from_slice(state_enc);
        self.decoder.infer(&input)
    }
}

/// Prior over codebook indices conditioned on the current subgoal state.
#[derive(Clone, Debug)]
pub struct CodePrior {
    pub net: Network,
}

impl CodePrior {
    pub fn new(env_config: SizeConfig, k: usize, hidden: &[usize], seed: u64) -> CodePrior {
        let mut dims = vec![EnvState::encode_dim(env_config)];
        dims.extend_from_slice(hidden);
        dims.push(k);
        CodePrior {
            net: Network::mlp(&dims, seed),
        }
    }

    pub fn log_probs(&self, state_enc: &[f64]) -> Vec<f64> {
        log_softmax(&self.net.infer(state_enc))
    }
}

/// What pretraining samples pairs from.
pub enum PretrainSource<'a> {
    Trajectories(&'a TrajectoryDataset),
    Pairs(&'a SubgoalPairs),
}

impl PretrainSource<'_> {
    /// Sample a `(goal, state)` pair. Trajectory mode picks a random expert
    /// trajectory position `i` and a goal `j` uniform in `(i, i+H]`.
    fn sample_pair(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Option<(EnvState, EnvState)> {
        match self {
            PretrainSource::Trajectories(ds) => {
                let trajectories: Vec<_> = ds.expert().filter(|t| !t.is_empty()).collect();
                if trajectories.is_empty() {
                    return None;
                }
                let t = trajectories[rng.random_range(0..trajectories.len())];
                let i = rng.random_range(0..t.len());
                let j = rng.random_range(i + 1..=(i + horizon).min(t.len()));
                Some((t.states[j].clone(), t.states[i].clone()))
            }
            PretrainSource::Pairs(pairs) => {
                if pairs.pairs.is_empty() {
                    return None;
                }
                let p = &pairs.pairs[rng.random_range(0..pairs.pairs.len())];
                Some((p.to.clone(), p.from.clone()))
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct PretrainStats {
    pub steps: usize,
    pub final_loss: f64,
    /// Fraction of held-out cells reconstructed exactly.
    pub holdout_cell_accuracy: f64,
}

/// Stage one: train encoder and decoder on state pairs with the quantizer
/// bypassed, until the reconstruction loss plateaus.
pub fn pretrain(
    model: &mut SubgoalVqvae,
    source: &PretrainSource<'_>,
    config: &VqvaeConfig,
    seed: u64,
) -> Result<PretrainStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 22, 0));
    let cats = EnvState::cell_categories(model.env_config);
    let mut enc_opt = AdamState::for_network(&model.encoder, config.learning_rate);
    let mut dec_opt = AdamState::for_network(&model.decoder, config.learning_rate);
    let mut losses: Vec<f64> = Vec::new();
    let mut steps = 0;
    for step in 0..config.pretrain_max_steps {
        let mut enc_grads = Gradients::zeros_like(&model.encoder);
        let mut dec_grads = Gradients::zeros_like(&model.decoder);
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let (goal, state) = source
                .sample_pair(config.pair_horizon, &mut rng)
                .ok_or_else(|| Error::config("empty pretraining source"))?;
            let state_enc = state.encode();
            let mut enc_in = goal.encode();
            enc_in.extend_from_slice(&state_enc);
            let (z_e, enc_tape) = model.encoder.forward(&enc_in)?;
            let mut dec_in = z_e.clone();
            dec_in.extend_from_slice(&state_enc);
            let (logits, dec_tape) = model.decoder.forward(&dec_in)?;
            let (l_rec, dlogits) = per_cell_cross_entropy(&logits, cats, &goal.cell_codes());
            batch_loss += l_rec;
            let dg = model.decoder.backward(&dec_tape, &dlogits)?;
            let code_grad = &dg.input[..model.code_dim()];
            enc_grads.add_assign(&model.encoder.backward(&enc_tape, code_grad)?);
            dec_grads.add_assign(&dg);
        }
        let scale = 1.0 / config.batch_size as f64;
        enc_grads.scale(scale);
        dec_grads.scale(scale);
        enc_grads.clip_global_norm(GRAD_CLIP_NORM);
        dec_grads.clip_global_norm(GRAD_CLIP_NORM);
        adam_step(&mut model.encoder, &enc_grads, &mut enc_opt)?;
        adam_step(&mut model.decoder, &dec_grads, &mut dec_opt)?;
        losses.push(batch_loss * scale);
        steps = step + 1;

        let w = config.plateau_window;
        if steps >= config.pretrain_min_steps && steps % w == 0 && losses.len() >= 2 * w {
            let prev: f64 = losses[losses.len() - 2 * w..losses.len() - w].iter().sum::<f64>() / w as f64;
            let cur: f64 = losses[losses.len() - w..].iter().sum::<f64>() / w as f64;
            if (prev - cur) / prev.abs().max(1e-9) < config.plateau_rel_improvement {
                break;
            }
        }
    }

    // Held-out reconstruction accuracy with fresh pairs.
    let mut holdout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 23, 0));
    let mut correct = 0usize;
    let mut total = 0usize;
    for _ in 0..200 {
        let Some((goal, state)) = source.sample_pair(config.pair_horizon, &mut holdout_rng) else {
            break;
        };
        let state_enc = state.encode();
        let z_e = model.encode_pair(&goal, &state);
        let logits = model.decode_logits(&z_e, &state_enc);
        let decoded = per_cell_argmax(&logits, cats);
        for (d, t) in decoded.iter().zip(goal.cell_codes()) {
            total += 1;
            if *d == t {
                correct += 1;
            }
        }
    }
    Ok(PretrainStats {
        steps,
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        holdout_cell_accuracy: if total > 0 {
            correct as f64 / total as f64
        } else {
            0.0
        },
    })
}

/// Stage two codebook initialization: KMeans++ over encoder outputs of the
/// first subgoal pairs (up to `kmeans_max_samples`).
pub fn init_codebook_kmeanspp(
    model: &mut SubgoalVqvae,
    pairs: &SubgoalPairs,
    config: &VqvaeConfig,
    seed: u64,
) -> Result<bool> {
    if pairs.pairs.is_empty() {
        return Err(Error::config("no subgoal pairs for codebook init"));
    }
    let encodings: Vec<Vec<f64>> = pairs
        .pairs
        .iter()
        .take(config.kmeans_max_samples)
        .map(|p| model.encode_pair(&p.to, &p.from))
        .collect();
    let (centers, degenerate) = kmeans_pp(&encodings, config.codebook_size, derive_seed(seed, 24, 0));
    model.codebook = Codebook { codes: centers };
    Ok(degenerate)
}

#[derive(Clone, Debug, Default)]
pub struct TrainStats {
    pub steps: usize,
    /// Number of distinct codes selected at least once over the dataset
    /// after training.
    pub codebook_utilization: usize,
    /// Mean loss breakdown over the final 100 steps.
    pub final_reconstruction: f64,
    pub final_total: f64,
    /// Moving-average total loss sampled every 50 steps (diagnostics).
    pub loss_curve: Vec<f64>,
}

/// One quantized training step over a batch; returns the mean breakdown.
/// Exposed for the straight-through and decomposition tests.
pub fn quantized_training_step(
    model: &mut SubgoalVqvae,
    batch: &[(&EnvState, &EnvState)], // (goal, state)
    enc_opt: &mut AdamState,
    dec_opt: &mut AdamState,
    cb_opt: &mut AdamState,
) -> Result<VqvaeLossBreakdown> {
    assert!(!batch.is_empty());
    let cats = EnvState::cell_categories(model.env_config);
    let d = model.code_dim();
    let k = model.codebook.len();
    let mut enc_grads = Gradients::zeros_like(&model.encoder);
    let mut dec_grads = Gradients::zeros_like(&model.decoder);
    let mut cb_grads = vec![0.0; k * d];
    let mut sums = VqvaeLossBreakdown {
        reconstruction: 0.0,
        codebook: 0.0,
        commitment: 0.0,
        total: 0.0,
    };
    for &(goal, state) in batch {
        let state_enc = state.encode();
        let mut enc_in = goal.encode();
        enc_in.extend_from_slice(&state_enc);
        let (z_e, enc_tape) = model.encoder.forward(&enc_in)?;
        let (code_idx, e_k) = quantize(&model.codebook, &z_e);
        let e_k = e_k.to_vec();
        let mut dec_in = e_k.clone();
        dec_in.extend_from_slice(&state_enc);
        let (logits, dec_tape) = model.decoder.forward(&dec_in)?;
        let (l_rec, dlogits) = per_cell_cross_entropy(&logits, cats, &goal.cell_codes());
        let breakdown = vqvae_loss(l_rec, &z_e, &e_k, model.beta);
        sums.reconstruction += breakdown.reconstruction;
        sums.codebook += breakdown.codebook;
        sums.commitment += breakdown.commitment;
        sums.total += breakdown.total;

        let dg = model.decoder.backward(&dec_tape, &dlogits)?;
        // Straight-through: the reconstruction gradient at the decoder's
        // code input flows to the encoder unchanged; the commitment term
        // adds 2*beta*(z_e - e_k).
        let mut enc_out_grad = dg.input[..d].to_vec();
        for ((g, &z), &e) in enc_out_grad.iter_mut().zip(&z_e).zip(&e_k) {
            *g += 2.0 * model.beta * (z - e);
        }
        enc_grads.add_assign(&model.encoder.backward(&enc_tape, &enc_out_grad)?);
        dec_grads.add_assign(&dg);
        // Codebook term moves only the selected code toward z_e.
        for (i, (&e, &z)) in e_k.iter().zip(&z_e).enumerate() {
            cb_grads[code_idx * d + i] += 2.0 * (e - z);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    enc_grads.scale(scale);
    dec_grads.scale(scale);
    cb_grads.iter_mut().for_each(|g| *g *= scale);
    enc_grads.clip_global_norm(GRAD_CLIP_NORM);
    dec_grads.clip_global_norm(GRAD_CLIP_NORM);
    adam_step(&mut model.encoder, &enc_grads, enc_opt)?;
    adam_step(&mut model.decoder, &dec_grads, dec_opt)?;
    let mut flat: Vec<f64> = model.codebook.codes.concat();
    adam_step_flat(&mut flat, &cb_grads, cb_opt)?;
    for (code, chunk) in model.codebook.codes.iter_mut().zip(flat.chunks_exact(d)) {
        code.copy_from_slice(chunk);
    }
    sums.reconstruction *= scale;
    sums.codebook *= scale;
    sums.commitment *= scale;
    sums.total *= scale;
    Ok(sums)
}

/// Stage two: minimize the quantized objective over consecutive subgoal
/// pairs. Fails on codebook collapse (fewer than two codes used).
pub fn train(
    model: &mut SubgoalVqvae,
    pairs: &SubgoalPairs,
    config: &VqvaeConfig,
    seed: u64,
) -> Result<TrainStats> {
    if model.codebook.is_empty() {
        return Err(Error::contract("codebook must be initialized before training"));
    }
    if pairs.pairs.is_empty() {
        return Err(Error::config("no subgoal pairs to train on"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 25, 0));
    let mut enc_opt = AdamState::for_network(&model.encoder, config.learning_rate);
    let mut dec_opt = AdamState::for_network(&model.decoder, config.learning_rate);
    let mut cb_opt = AdamState::new(model.codebook.len() * model.code_dim(), config.learning_rate);
    let mut order: Vec<usize> = (0..pairs.pairs.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(config.train_steps);
    let mut curve = Vec::new();
    let mut tail = VqvaeLossBreakdown {
        reconstruction: 0.0,
        codebook: 0.0,
        commitment: 0.0,
        total: 0.0,
    };
    let mut tail_n = 0usize;
    for step in 0..config.train_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let p = &pairs.pairs[order[cursor]];
            cursor += 1;
            batch.push((&p.to, &p.from));
        }
        let breakdown = quantized_training_step(model, &batch, &mut enc_opt, &mut dec_opt, &mut cb_opt)?;
        losses.push(breakdown.total);
        if (step + 1) % 50 == 0 {
            let w = 100.min(losses.len());
            curve.push(losses[losses.len() - w..].iter().sum::<f64>() / w as f64);
        }
        if config.train_steps - step <= 100 {
            tail.reconstruction += breakdown.reconstruction;
            tail.total += breakdown.total;
            tail_n += 1;
        }
    }

    let utilization = codebook_utilization(model, pairs);
    if utilization < 2 {
        return Err(Error::Training(format!(
            "codebook collapse: {utilization} of {} codes in use",
            model.codebook.len()
        )));
    }
    Ok(TrainStats {
        steps: config.train_steps,
        codebook_utilization: utilization,
        final_reconstruction: tail.reconstruction / tail_n.max(1) as f64,
        final_total: tail.total / tail_n.max(1) as f64,
        loss_curve: curve,
    })
}

/// Number of distinct codes selected at least once over the pair dataset.
pub fn codebook_utilization(model: &SubgoalVqvae, pairs: &SubgoalPairs) -> usize {
    let mut used = vec![false; model.codebook.len()];
    for p in &pairs.pairs {
        let z = model.encode_pair(&p.to, &p.from);
        used[quantize(&model.codebook, &z).0] = true;
    }
    used.iter().filter(|&&u| u).count()
}

#[derive(Clone, Debug, Default)]
pub struct PriorStats {
    pub holdout_perplexity: f64,
    pub final_loss: f64,
}

/// Cross-entropy training of the code prior on (state, quantized-code)
/// pairs; reports held-out perplexity.
pub fn train_prior(
    prior: &mut CodePrior,
    model: &SubgoalVqvae,
    pairs: &SubgoalPairs,
    config: &VqvaeConfig,
    seed: u64,
) -> Result<PriorStats> {
    if pairs.pairs.is_empty() {
        return Err(Error::config("no subgoal pairs to train the prior on"));
    }
    // Precompute labels and input encodings once.
    let labeled: Vec<(Vec<f64>, usize)> = pairs
        .pairs
        .iter()
        .map(|p| {
            let z = model.encode_pair(&p.to, &p.from);
            (p.from.encode(), quantize(&model.codebook, &z).0)
        })
        .collect();
    let holdout_n = ((labeled.len() as f64 * config.holdout_fraction) as usize)
        .min(labeled.len().saturating_sub(1));
    let (holdout, training) = labeled.split_at(holdout_n);
    let training = if training.is_empty() { holdout } else { training };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 26, 0));
    let mut opt = AdamState::for_network(&prior.net, config.prior_lr);
    let mut order: Vec<usize> = (0..training.len()).collect();
    let mut cursor = order.len();
    let mut final_loss = 0.0;
    for _ in 0..config.prior_steps {
        let mut grads = Gradients::zeros_like(&prior.net);
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (enc, label) = &training[order[cursor]];
            cursor += 1;
            let (logits, tape) = prior.net.forward(enc)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, *label);
            batch_loss += loss;
            grads.add_assign(&prior.net.backward(&tape, &dlogits)?);
        }
        grads.scale(1.0 / config.batch_size as f64);
        grads.clip_global_norm(GRAD_CLIP_NORM);
        adam_step(&mut prior.net, &grads, &mut opt)?;
        final_loss = batch_loss / config.batch_size as f64;
    }

    let eval_set = if holdout.is_empty() { training } else { holdout };
    let mut total = 0.0;
    for (enc, label) in eval_set {
        total += -prior.log_probs(enc)[*label];
    }
    Ok(PriorStats {
        holdout_perplexity: (total / eval_set.len() as f64).exp(),
        final_loss,
    })
}

/// One generated subgoal candidate.
#[derive(Clone, Debug)]
pub struct SubgoalCandidate {
    pub state: EnvState,
    pub code: usize,
    /// Prior log-probability renormalized over the surviving distinct
    /// candidates.
    pub log_prob: f64,
    /// Prior log-probability of the kept code before renormalization.
    pub raw_log_prob: f64,
}

/// Decode every code conditioned on `state`, drop structurally invalid
/// decodes (counted), deduplicate identical states keeping the
/// highest-prior code, and renormalize the prior mass over the survivors.
/// Deterministic; candidates come back in ascending code order.
pub fn generate_subgoals(
    model: &SubgoalVqvae,
    prior: &CodePrior,
    state: &EnvState,
) -> (Vec<SubgoalCandidate>, usize) {
    let state_enc = state.encode();
    let prior_log_probs = prior.log_probs(&state_enc);
    let cats = EnvState::cell_categories(model.env_config);
    let mut kept: HashMap<EnvState, (usize, f64)> = HashMap::new();
    let mut invalid = 0usize;
    for (code, code_vec) in model.codebook.codes.iter().enumerate() {
        let logits = model.decode_logits(code_vec, &state_enc);
        let cells = per_cell_argmax(&logits, cats);
        match EnvState::from_cell_codes(model.env_config, &cells) {
            Ok(decoded) => {
                let lp = prior_log_probs[code];
                match kept.get_mut(&decoded) {
                    Some(entry) => {
                        if lp > entry.1 {
                            *entry = (code, lp);
                        }
                    }
                    None => {
                        kept.insert(decoded, (code, lp));
                    }
                }
            }
            Err(_) => invalid += 1,
        }
    }
    let mut candidates: Vec<SubgoalCandidate> = kept
        .into_iter()
        .map(|(state, (code, raw_log_prob))| SubgoalCandidate {
            state,
            code,
            log_prob: raw_log_prob,
            raw_log_prob,
        })
        .collect();
    candidates.sort_by_key(|c| c.code);
    let lse = crate::diffcore::logsumexp(
        &candidates.iter().map(|c| c.raw_log_prob).collect::<Vec<_>>(),
    );
    if lse.is_finite() {
        for c in &mut candidates {
            c.log_prob = c.raw_log_prob - lse;
        }
    }
    (candidates, invalid)
}
