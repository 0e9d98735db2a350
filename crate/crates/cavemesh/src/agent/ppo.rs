//! PPO training: rollout storage, generalized advantage estimation,
//! the clipped surrogate update, and the collect/update loop.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use super::action::ActionBins;
use super::encoder::StateEmbedding;
use super::policy::{ActionIndices, PolicyNet, SelectMode};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng::{rng_for, Stream};

/// One environment interaction.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: StateEmbedding,
    pub action: ActionIndices,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

/// Training hyperparameters. Defaults follow the published protocol:
/// γ 0.6, GAE λ 0.95, clip 0.2, entropy 0.0025, value coefficient 0.5,
/// 10 surrogate epochs on batches of 20, a linear learning-rate decay
/// from 3e-4 to 3e-5, gradient clipping at 0.5, and one environment.
#[derive(Debug, Clone)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub grad_clip: f64,
    pub iterations: usize,
    pub validation_interval: usize,
    pub n_envs: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.6,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.0025,
            value_coef: 0.5,
            epochs: 10,
            batch: 20,
            lr_start: 3e-4,
            lr_end: 3e-5,
            grad_clip: 0.5,
            iterations: 1500,
            validation_interval: 10,
            n_envs: 1,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must be in [0, 1)".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config("clip must be in (0, 1)".into()));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be positive".into()));
        }
        if self.n_envs != 1 {
            return Err(Error::Config("only a single environment is supported".into()));
        }
        Ok(())
    }

    /// Linear decay over the planned iteration count.
    pub fn learning_rate(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return self.lr_start;
        }
        let t = (iteration as f64 / (self.iterations - 1) as f64).clamp(0.0, 1.0);
        self.lr_start + (self.lr_end - self.lr_start) * t
    }
}

/// Per-sample clipped surrogate. The clip caps the objective on the
/// gain side (`r` capped at `1+ε` for positive advantages); penalty
/// gradients stay unclipped, and the result never exceeds `r·Â`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let capped = ratio.min(1.0 + clip) * advantage;
    (ratio * advantage).min(capped)
}

/// TD(λ) advantages and returns. `bootstrap_value` stands in for the
/// value after the last transition when the rollout ends mid-episode;
/// terminal transitions reset the recursion.
pub fn compute_gae(
    transitions: &[Transition],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if transitions.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let n = transitions.len();
    let mut advantages = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let tr = &transitions[t];
        let next_value = if tr.done {
            0.0
        } else if t + 1 < n {
            transitions[t + 1].value
        } else {
            bootstrap_value
        };
        let delta = tr.reward + gamma * next_value - tr.value;
        let carry = if tr.done { 0.0 } else { gae };
        gae = delta + gamma * lambda * carry;
        advantages[t] = gae;
    }
    let returns = advantages
        .iter()
        .zip(transitions.iter())
        .map(|(a, tr)| a + tr.value)
        .collect();
    Ok((advantages, returns))
}

/// Zero-mean unit-variance normalization over one rollout.
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Running scale estimate used for reward normalization. Rewards are
/// divided by the running standard deviation without recentering, so
/// their sign is preserved.
#[derive(Debug, Clone, Default)]
pub struct RunningMeanStd {
    count: f64,
    mean: f64,
    m2: f64,
}

impl RunningMeanStd {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt()
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        x / (self.std() + 1e-8)
    }
}

#[derive(Debug, Clone, Default)]
pub struct UpdateReport {
    pub actor_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub learning_rate: f64,
    pub skipped_minibatches: usize,
}

/// Optimizer state carried across updates.
pub struct PpoTrainer {
    pub net: PolicyNet,
    pub cfg: PpoConfig,
    adam: Adam,
}

impl PpoTrainer {
    pub fn new(net: PolicyNet, cfg: PpoConfig) -> Result<PpoTrainer> {
        cfg.validate()?;
        let n = net.param_count();
        Ok(PpoTrainer {
            net,
            cfg,
            adam: Adam::new(n),
        })
    }

    /// One PPO update over a collected rollout: `epochs` passes of
    /// shuffled minibatches through the clipped-surrogate objective
    /// with value and entropy terms, gradient-norm clipping, and the
    /// scheduled learning rate. Minibatches with non-finite losses are
    /// skipped and counted.
    pub fn update(
        &mut self,
        transitions: &[Transition],
        advantages: &[f64],
        returns: &[f64],
        iteration: usize,
        rng: &mut rand_chacha::ChaCha12Rng,
    ) -> Result<UpdateReport> {
        if transitions.len() < self.cfg.batch {
            return Err(Error::InvalidInput(format!(
                "rollout of {} is smaller than one batch of {}",
                transitions.len(),
                self.cfg.batch
            )));
        }
        let lr = self.cfg.learning_rate(iteration);
        let mut report = UpdateReport {
            learning_rate: lr,
            ..UpdateReport::default()
        };
        let mut grads = vec![0.0; self.net.param_count()];
        let mut indices: Vec<usize> = (0..transitions.len()).collect();

        let mut batches_done = 0usize;
        for _ in 0..self.cfg.epochs {
            // deterministic Fisher-Yates shuffle from the caller's rng
            for i in (1..indices.len()).rev() {
                let j = rng.gen_range(0..=i);
                indices.swap(i, j);
            }
            for chunk in indices.chunks(self.cfg.batch) {
                if chunk.len() < self.cfg.batch {
                    continue;
                }
                grads.iter_mut().for_each(|g| *g = 0.0);
                match self.minibatch(chunk, transitions, advantages, returns, &mut grads) {
                    Ok((actor, value, entropy)) => {
                        clip_gradient_norm(&mut grads, self.cfg.grad_clip);
                        self.adam.step(&mut self.net.params, &grads, lr);
                        report.actor_loss = actor;
                        report.value_loss = value;
                        report.entropy = entropy;
                        batches_done += 1;
                    }
                    Err(Error::Numerical(_)) => {
                        report.skipped_minibatches += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if batches_done == 0 {
            return Err(Error::Numerical("every minibatch was skipped".into()));
        }
        Ok(report)
    }

    /// Loss and gradient over one minibatch. Returns
    /// (actor, value, entropy) means.
    fn minibatch(
        &self,
        chunk: &[usize],
        transitions: &[Transition],
        advantages: &[f64],
        returns: &[f64],
        grads: &mut [f64],
    ) -> Result<(f64, f64, f64)> {
        let m = chunk.len() as f64;
        let mut actor_acc = 0.0;
        let mut value_acc = 0.0;
        let mut entropy_acc = 0.0;

        for &i in chunk {
            let tr = &transitions[i];
            let fwd = self.net.forward(&tr.state)?;
            let (log_prob, entropy) = self.net.score_action(&fwd, &tr.action);
            let ratio = (log_prob - tr.log_prob).exp();
            let adv = advantages[i];

            let surrogate = clipped_surrogate(ratio, adv, self.cfg.clip);
            actor_acc += -surrogate;
            let value_err = fwd.value - returns[i];
            value_acc += value_err * value_err;
            entropy_acc += entropy;

            if !surrogate.is_finite() || !value_err.is_finite() {
                return Err(Error::Numerical("non-finite minibatch loss".into()));
            }

            // d(total)/d(log pi): actor term only; the clip gates the
            // gradient on the gain side
            let gain_active = if adv > 0.0 { ratio < 1.0 + self.cfg.clip } else { true };
            let d_logp = if gain_active { -(ratio * adv) / m } else { 0.0 };
            // d(total)/d(value)
            let d_value = self.cfg.value_coef * 2.0 * value_err / m;

            let mut d_logits: Vec<Vec<f64>> = Vec::with_capacity(fwd.logits.len());
            for h in 0..fwd.logits.len() {
                let mask = self.mask_for(&tr.action, h);
                let probs = self.net.head_probs(&fwd.logits[h], &mask);
                let mut dz = vec![0.0; probs.len()];
                // log-prob path: onehot(a) − p, within the mask
                for (c, p) in probs.iter().enumerate() {
                    if mask[c] {
                        let onehot = if tr.action.0[h] == c { 1.0 } else { 0.0 };
                        dz[c] += d_logp * (onehot - p);
                    }
                }
                // entropy bonus path: −entropy_coef·mean(entropy)
                let ent_grad = super::policy::entropy_logit_gradient(&probs);
                for (c, g) in ent_grad.iter().enumerate() {
                    if mask[c] {
                        dz[c] += -self.cfg.entropy_coef / m * g;
                    }
                }
                d_logits.push(dz);
            }
            self.net.backward(&fwd, &d_logits, d_value, grads);
        }

        Ok((actor_acc / m, value_acc / m, entropy_acc / m))
    }

    fn mask_for(&self, action: &ActionIndices, head: usize) -> Vec<bool> {
        let sizes = self.net.bins.head_sizes();
        (0..sizes[head])
            .map(|c| {
                head != super::policy::ETA_MAX_HEAD
                    || self.net.bins.eta_pair_valid(action.0[super::policy::ETA_MIN_HEAD], c)
            })
            .collect()
    }

    /// Actor loss alone on a batch, for gradient verification.
    pub fn actor_loss(
        &self,
        transitions: &[Transition],
        advantages: &[f64],
    ) -> Result<f64> {
        let m = transitions.len() as f64;
        let mut acc = 0.0;
        for (tr, adv) in transitions.iter().zip(advantages.iter()) {
            let fwd = self.net.forward(&tr.state)?;
            let (log_prob, _) = self.net.score_action(&fwd, &tr.action);
            let ratio = (log_prob - tr.log_prob).exp();
            acc += -clipped_surrogate(ratio, *adv, self.cfg.clip);
        }
        Ok(acc / m)
    }

    /// Analytic gradient of [`Self::actor_loss`].
    pub fn actor_loss_gradient(
        &self,
        transitions: &[Transition],
        advantages: &[f64],
    ) -> Result<Vec<f64>> {
        let m = transitions.len() as f64;
        let mut grads = vec![0.0; self.net.param_count()];
        for (tr, adv) in transitions.iter().zip(advantages.iter()) {
            let fwd = self.net.forward(&tr.state)?;
            let (log_prob, _) = self.net.score_action(&fwd, &tr.action);
            let ratio = (log_prob - tr.log_prob).exp();
            let gain_active = if *adv > 0.0 { ratio < 1.0 + self.cfg.clip } else { true };
            let d_logp = if gain_active { -(ratio * adv) / m } else { 0.0 };
            let mut d_logits: Vec<Vec<f64>> = Vec::with_capacity(fwd.logits.len());
            for h in 0..fwd.logits.len() {
                let mask = self.mask_for(&tr.action, h);
                let probs = self.net.head_probs(&fwd.logits[h], &mask);
                let mut dz = vec![0.0; probs.len()];
                for (c, p) in probs.iter().enumerate() {
                    if mask[c] {
                        let onehot = if tr.action.0[h] == c { 1.0 } else { 0.0 };
                        dz[c] = d_logp * (onehot - p);
                    }
                }
                d_logits.push(dz);
            }
            self.net.backward(&fwd, &d_logits, 0.0, &mut grads);
        }
        Ok(grads)
    }
}

fn clip_gradient_norm(grads: &mut [f64], max_norm: f64) {
    let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// One step of an episodic environment.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: StateEmbedding,
    pub reward: f64,
    pub done: bool,
    /// Chamfer-L1 (cm) of the step's local reconstruction when the
    /// environment evaluates one.
    pub chamfer_cm: Option<f64>,
}

/// Environment contract for the training loop: reconstruction
/// simulators and sanity environments implement the same surface.
pub trait Environment {
    fn reset(&mut self, episode_seed: u64) -> Result<StateEmbedding>;
    fn step(&mut self, action: &ActionIndices) -> Result<StepOutcome>;
}

/// Per-iteration training log entry.
#[derive(Debug, Clone)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_chamfer_cm: f64,
}

pub fn logs_to_csv(logs: &[IterationLog]) -> String {
    let mut out = String::from("iteration,mean_reward,mean_chamfer_cm\n");
    for l in logs {
        out.push_str(&format!("{},{},{}\n", l.iteration, l.mean_reward, l.mean_chamfer_cm));
    }
    out
}

/// Collect/update loop: `batch` environment steps per iteration,
/// episodes restarting in place, then one PPO update. Rewards are
/// scale-normalized with a running estimate before advantage
/// computation; logs keep the raw values. Fully deterministic given
/// the seed. Checkpoints land in `checkpoint` every
/// `validation_interval` iterations.
pub fn train_agent<E: Environment>(
    env: &mut E,
    cfg: &PpoConfig,
    seed: u64,
    iterations: usize,
    encoder_seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(PolicyNet, Vec<IterationLog>)> {
    cfg.validate()?;
    let mut init_rng = rng_for(seed, Stream::PolicyInit);
    let net = PolicyNet::init(ActionBins::default(), &mut init_rng);
    let mut trainer = PpoTrainer::new(net, cfg.clone())?;

    let mut episode = 0u64;
    let mut state = env.reset(derive_episode_seed(seed, episode))?;
    let mut reward_scale = RunningMeanStd::default();
    let mut logs = Vec::with_capacity(iterations);

    for iteration in 0..iterations {
        let mut action_rng = rng_for(seed, Stream::ActionSample(iteration as u64));
        let mut transitions = Vec::with_capacity(cfg.batch);
        let mut raw_rewards = Vec::with_capacity(cfg.batch);
        let mut chamfers = Vec::new();
        let mut last_done = false;

        for _ in 0..cfg.batch {
            let fwd = trainer.net.forward(&state)?;
            let (action, log_prob) = trainer.net.select_action(&fwd, SelectMode::Sample, &mut action_rng);
            let outcome = env.step(&action)?;
            raw_rewards.push(outcome.reward);
            if let Some(c) = outcome.chamfer_cm {
                chamfers.push(c);
            }
            reward_scale.push(outcome.reward);
            transitions.push(Transition {
                state,
                action,
                log_prob,
                value: fwd.value,
                reward: reward_scale.normalize(outcome.reward),
                done: outcome.done,
            });
            last_done = outcome.done;
            state = if outcome.done {
                episode += 1;
                env.reset(derive_episode_seed(seed, episode))?
            } else {
                outcome.state
            };
        }

        let bootstrap = if last_done {
            0.0
        } else {
            trainer.net.forward(&state)?.value
        };
        let (advantages, returns) = compute_gae(&transitions, bootstrap, cfg.gamma, cfg.gae_lambda)?;
        let normalized = normalize_advantages(&advantages);
        let mut shuffle_rng = rng_for(seed, Stream::PpoShuffle(iteration as u64));
        trainer.update(&transitions, &normalized, &returns, iteration, &mut shuffle_rng)?;

        let mean_reward = raw_rewards.iter().sum::<f64>() / raw_rewards.len() as f64;
        let mean_chamfer = if chamfers.is_empty() {
            f64::NAN
        } else {
            chamfers.iter().sum::<f64>() / chamfers.len() as f64
        };
        logs.push(IterationLog {
            iteration,
            mean_reward,
            mean_chamfer_cm: mean_chamfer,
        });

        if let Some(path) = checkpoint {
            if (iteration + 1) % cfg.validation_interval == 0 || iteration + 1 == iterations {
                save_policy(&trainer.net, encoder_seed, path)?;
            }
        }
    }
    if let Some(path) = checkpoint {
        save_policy(&trainer.net, encoder_seed, path)?;
    }

    Ok((trainer.net, logs))
}

fn derive_episode_seed(seed: u64, episode: u64) -> u64 {
    seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(episode + 1))
}

const POLICY_MAGIC: &[u8; 8] = b"CAVEPOL\0";
const POLICY_VERSION: u32 = 1;

/// Versioned binary checkpoint: action bins, encoder seed, parameters.
pub fn save_policy(net: &PolicyNet, encoder_seed: u64, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(POLICY_MAGIC).map_err(io)?;
    w.write_all(&POLICY_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&encoder_seed.to_le_bytes()).map_err(io)?;
    let write_f64s = |w: &mut BufWriter<File>, v: &[f64]| -> Result<()> {
        w.write_all(&(v.len() as u64).to_le_bytes()).map_err(io)?;
        for x in v {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    };
    let write_usizes = |w: &mut BufWriter<File>, v: &[usize]| -> Result<()> {
        w.write_all(&(v.len() as u64).to_le_bytes()).map_err(io)?;
        for x in v {
            w.write_all(&(*x as u64).to_le_bytes()).map_err(io)?;
        }
        Ok(())
    };
    write_f64s(&mut w, &net.bins.sigma_s)?;
    write_usizes(&mut w, &net.bins.n_s)?;
    write_usizes(&mut w, &net.bins.n_f)?;
    write_f64s(&mut w, &net.bins.eta_min)?;
    write_f64s(&mut w, &net.bins.eta_max)?;
    write_usizes(&mut w, &net.bins.n_nn)?;
    write_f64s(&mut w, &net.params)?;
    w.flush().map_err(io)
}

/// Loads a checkpoint written by [`save_policy`]; returns the network
/// and the encoder seed it was trained with.
pub fn load_policy(path: &Path) -> Result<(PolicyNet, u64)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
    if &buf8 != POLICY_MAGIC {
        return Err(Error::parse(path, 0, "not a policy checkpoint"));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
    if u32::from_le_bytes(buf4) != POLICY_VERSION {
        return Err(Error::parse(path, 0, "unsupported policy version"));
    }
    r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
    let encoder_seed = u64::from_le_bytes(buf8);

    let read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
        Ok(u64::from_le_bytes(b))
    };
    let read_f64s = |r: &mut BufReader<File>| -> Result<Vec<f64>> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
        let n = u64::from_le_bytes(b) as usize;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = [0u8; 8];
            r.read_exact(&mut x).map_err(|e| Error::io(path, e))?;
            v.push(f64::from_le_bytes(x));
        }
        Ok(v)
    };

    let sigma_s = read_f64s(&mut r)?;
    let n_s_len = read_u64(&mut r)? as usize;
    let mut n_s = Vec::with_capacity(n_s_len);
    for _ in 0..n_s_len {
        n_s.push(read_u64(&mut r)? as usize);
    }
    let n_f_len = read_u64(&mut r)? as usize;
    let mut n_f = Vec::with_capacity(n_f_len);
    for _ in 0..n_f_len {
        n_f.push(read_u64(&mut r)? as usize);
    }
    let eta_min = read_f64s(&mut r)?;
    let eta_max = read_f64s(&mut r)?;
    let n_nn_len = read_u64(&mut r)? as usize;
    let mut n_nn = Vec::with_capacity(n_nn_len);
    for _ in 0..n_nn_len {
        n_nn.push(read_u64(&mut r)? as usize);
    }
    let params = read_f64s(&mut r)?;

    let bins = ActionBins {
        sigma_s,
        n_s,
        n_f,
        eta_min,
        eta_max,
        n_nn,
    };
    bins.validate()?;
    let mut net = PolicyNet::layout(bins);
    if net.params.len() != params.len() {
        return Err(Error::parse(path, 0, "parameter count mismatch"));
    }
    net.params = params;
    Ok((net, encoder_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::encoder::zero_embedding;
    use approx::assert_relative_eq;

    fn dummy_transition(reward: f64, value: f64, done: bool) -> Transition {
        Transition {
            state: zero_embedding(),
            action: ActionIndices([0; 6]),
            log_prob: -1.0,
            value,
            reward,
            done,
        }
    }

    /// Direct double-loop GAE summation, truncating at episode ends.
    fn gae_oracle(
        transitions: &[Transition],
        bootstrap: f64,
        gamma: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let n = transitions.len();
        let delta = |t: usize| -> f64 {
            let tr = &transitions[t];
            let next_value = if tr.done {
                0.0
            } else if t + 1 < n {
                transitions[t + 1].value
            } else {
                bootstrap
            };
            tr.reward + gamma * next_value - tr.value
        };
        (0..n)
            .map(|t| {
                let mut acc = 0.0;
                let mut factor = 1.0;
                for l in t..n {
                    acc += factor * delta(l);
                    if transitions[l].done {
                        break;
                    }
                    factor *= gamma * lambda;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn lambda_zero_reduces_to_td_error() {
        let transitions = vec![
            dummy_transition(1.0, 0.3, false),
            dummy_transition(-0.5, 0.1, false),
            dummy_transition(2.0, -0.2, true),
        ];
        let (adv, _) = compute_gae(&transitions, 0.7, 0.6, 0.0).unwrap();
        assert_relative_eq!(adv[0], 1.0 + 0.6 * 0.1 - 0.3, epsilon = 1e-12);
        assert_relative_eq!(adv[1], -0.5 + 0.6 * (-0.2) - 0.1, epsilon = 1e-12);
        assert_relative_eq!(adv[2], 2.0 - (-0.2), epsilon = 1e-12);
    }

    #[test]
    fn single_terminal_step_advantage_is_reward() {
        let transitions = vec![dummy_transition(1.5, 0.0, true)];
        let (adv, ret) = compute_gae(&transitions, 123.0, 0.6, 0.95).unwrap();
        assert_relative_eq!(adv[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(ret[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn gae_matches_double_loop_oracle() {
        let mut rng = rng_for(31, Stream::Test(70));
        for _ in 0..50 {
            let n = rng.gen_range(1..=32);
            let transitions: Vec<Transition> = (0..n)
                .map(|_| {
                    dummy_transition(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_bool(0.2),
                    )
                })
                .collect();
            let bootstrap = rng.gen_range(-1.0..1.0);
            let (adv, ret) = compute_gae(&transitions, bootstrap, 0.6, 0.95).unwrap();
            let oracle = gae_oracle(&transitions, bootstrap, 0.6, 0.95);
            for (a, o) in adv.iter().zip(oracle.iter()) {
                assert!((a - o).abs() < 1e-10, "{a} vs {o}");
            }
            for ((r, a), tr) in ret.iter().zip(adv.iter()).zip(transitions.iter()) {
                assert_relative_eq!(*r, a + tr.value, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn surrogate_hand_cases() {
        // ratio 1: clip inactive, objective is the advantage itself
        assert_relative_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7, epsilon = 1e-12);
        // positive advantage, ratio above the clip: capped at 1.2·A
        assert_relative_eq!(clipped_surrogate(1.5, 2.0, 0.2), 1.2 * 2.0, epsilon = 1e-12);
        // negative advantage, ratio below one: unclipped
        assert_relative_eq!(clipped_surrogate(0.5, -2.0, 0.2), 0.5 * -2.0, epsilon = 1e-12);
    }

    #[test]
    fn surrogate_never_exceeds_unclipped() {
        let mut rng = rng_for(33, Stream::Test(71));
        for _ in 0..10_000 {
            let ratio = rng.gen_range(0.0..3.0);
            let adv = rng.gen_range(-2.0..2.0);
            let s = clipped_surrogate(ratio, adv, 0.2);
            assert!(s <= ratio * adv + 1e-12, "ratio {ratio} adv {adv}: {s}");
        }
    }

    #[test]
    fn advantage_normalization_is_standard() {
        let adv = vec![1.0, 2.0, 3.0, 4.0];
        let n = normalize_advantages(&adv);
        let mean: f64 = n.iter().sum::<f64>() / 4.0;
        let var: f64 = n.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
        assert_relative_eq!(var, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn reward_scaling_preserves_sign() {
        let mut rms = RunningMeanStd::default();
        for x in [1.0, -1.0, 1.0, 1.0, -1.0, 1.0] {
            rms.push(x);
        }
        assert!(rms.normalize(1.0) > 0.0);
        assert!(rms.normalize(-1.0) < 0.0);
    }

    #[test]
    fn empty_trajectory_is_rejected() {
        assert!(compute_gae(&[], 0.0, 0.6, 0.95).is_err());
    }

    fn fixed_batch(seed: u64, n: usize) -> (PpoTrainer, Vec<Transition>, Vec<f64>) {
        let mut rng = rng_for(seed, Stream::Test(72));
        let net = PolicyNet::init(ActionBins::default(), &mut rng);
        let trainer = PpoTrainer::new(net, PpoConfig::default()).unwrap();
        let mut transitions = Vec::new();
        let mut advantages = Vec::new();
        for _ in 0..n {
            let mut state = zero_embedding();
            for v in &mut state {
                *v = rng.gen_range(-1.0..1.0);
            }
            let fwd = trainer.net.forward(&state).unwrap();
            let (action, log_prob) = trainer.net.select_action(&fwd, SelectMode::Sample, &mut rng);
            // perturb stored log-prob so ratios are not exactly one
            transitions.push(Transition {
                state,
                action,
                log_prob: log_prob + rng.gen_range(-0.1..0.1),
                value: fwd.value,
                reward: 0.0,
                done: false,
            });
            advantages.push(rng.gen_range(-1.5..1.5));
        }
        (trainer, transitions, advantages)
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let (mut trainer, transitions, advantages) = fixed_batch(41, 8);
        let analytic = trainer.actor_loss_gradient(&transitions, &advantages).unwrap();
        let h = 1e-6;
        let norm: f64 = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm > 0.0);
        let probes: Vec<usize> = (0..trainer.net.param_count())
            .step_by(trainer.net.param_count() / 97)
            .collect();
        let mut fd_vec = Vec::new();
        let mut an_vec = Vec::new();
        for &i in &probes {
            let orig = trainer.net.params[i];
            trainer.net.params[i] = orig + h;
            let plus = trainer.actor_loss(&transitions, &advantages).unwrap();
            trainer.net.params[i] = orig - h;
            let minus = trainer.actor_loss(&transitions, &advantages).unwrap();
            trainer.net.params[i] = orig;
            fd_vec.push((plus - minus) / (2.0 * h));
            an_vec.push(analytic[i]);
        }
        let diff: f64 = fd_vec
            .iter()
            .zip(an_vec.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = fd_vec.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(
            diff <= 1e-3 * scale.max(1e-12),
            "relative gradient error {}",
            diff / scale
        );
    }

    #[test]
    fn update_moves_parameters() {
        let (mut trainer, transitions, advantages) = fixed_batch(43, 20);
        let returns = vec![0.5; 20];
        let before = trainer.net.params.clone();
        let mut rng = rng_for(43, Stream::PpoShuffle(0));
        let report = trainer
            .update(&transitions, &advantages, &returns, 0, &mut rng)
            .unwrap();
        assert!(report.learning_rate > 0.0);
        assert!(trainer.net.params.iter().zip(before.iter()).any(|(a, b)| a != b));
    }

    #[test]
    fn learning_rate_schedule_is_linear() {
        let cfg = PpoConfig {
            iterations: 11,
            ..PpoConfig::default()
        };
        assert_relative_eq!(cfg.learning_rate(0), 3e-4, epsilon = 1e-12);
        assert_relative_eq!(cfg.learning_rate(10), 3e-5, epsilon = 1e-12);
        assert_relative_eq!(cfg.learning_rate(5), (3e-4 + 3e-5) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn policy_checkpoint_roundtrip() {
        let mut rng = rng_for(45, Stream::Test(73));
        let net = PolicyNet::init(ActionBins::default(), &mut rng);
        let f = tempfile::NamedTempFile::new().unwrap();
        save_policy(&net, 1234, f.path()).unwrap();
        let (restored, encoder_seed) = load_policy(f.path()).unwrap();
        assert_eq!(encoder_seed, 1234);
        assert_eq!(restored.params, net.params);
        assert_eq!(restored.bins, net.bins);
    }

    /// One-state bandit: head 0 bin 1 earns +1, everything else −1.
    /// Each step is its own episode.
    pub(crate) struct BanditEnv {
        pub target_bin: usize,
    }

    impl Environment for BanditEnv {
        fn reset(&mut self, _seed: u64) -> crate::error::Result<StateEmbedding> {
            Ok(zero_embedding())
        }

        fn step(&mut self, action: &ActionIndices) -> crate::error::Result<StepOutcome> {
            let reward = if action.0[0] == self.target_bin { 1.0 } else { -1.0 };
            Ok(StepOutcome {
                state: zero_embedding(),
                reward,
                done: true,
                chamfer_cm: None,
            })
        }
    }

    #[test]
    fn bandit_training_concentrates_on_rewarding_action() {
        let mut env = BanditEnv { target_bin: 2 };
        let cfg = PpoConfig::default();
        let (net, logs) = train_agent(&mut env, &cfg, 7, 200, 0, None).unwrap();
        assert_eq!(logs.len(), 200);
        let fwd = net.forward(&zero_embedding()).unwrap();
        let mask = vec![true; net.bins.sigma_s.len()];
        let probs = net.head_probs(&fwd.logits[0], &mask);
        assert!(
            probs[2] >= 0.95,
            "rewarding action mass {} after training",
            probs[2]
        );
    }

    #[test]
    fn zero_iterations_returns_initial_weights() {
        let mut env = BanditEnv { target_bin: 0 };
        let cfg = PpoConfig::default();
        let (net, logs) = train_agent(&mut env, &cfg, 9, 0, 0, None).unwrap();
        assert!(logs.is_empty());
        let mut rng = rng_for(9, Stream::PolicyInit);
        let fresh = PolicyNet::init(ActionBins::default(), &mut rng);
        assert_eq!(net.params, fresh.params);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let run = || {
            let mut env = BanditEnv { target_bin: 1 };
            let (net, logs) = train_agent(&mut env, &PpoConfig::default(), 11, 30, 0, None).unwrap();
            (net.params, logs_to_csv(&logs))
        };
        let (p1, csv1) = run();
        let (p2, csv2) = run();
        assert_eq!(p1, p2);
        assert_eq!(csv1, csv2);
    }
}
