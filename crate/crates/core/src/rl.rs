//! DDPG on small dense networks: MLP with manual backprop, Adam, a ring
//! replay buffer and the training loop.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::OpfEnv;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub output: OutputActivation,
}

/// Per-layer activations recorded by a forward pass; `activations[0]` is
/// the input batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("cache holds the input at least")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

impl Mlp {
    /// Hidden layers use fan-in scaled uniform init; the output layer
    /// starts near zero.
    pub fn new(sizes: &[usize], output: OutputActivation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n_layers = sizes.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = if l + 1 == n_layers {
                3e-3
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                rng.random_range(-bound..=bound)
            }));
            biases.push(DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..=bound)));
        }
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            output,
        }
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Self {
        let n_layers = sizes.len() - 1;
        Self {
            sizes: sizes.to_vec(),
            weights: (0..n_layers)
                .map(|l| DMatrix::zeros(sizes[l + 1], sizes[l]))
                .collect(),
            biases: (0..n_layers).map(|l| DVector::zeros(sizes[l + 1])).collect(),
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes non-empty")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Forward pass over a batch stored column-wise (features x batch).
    pub fn forward_batch(&self, input: DMatrix<f64>) -> Result<ForwardCache> {
        if input.nrows() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: input.nrows(),
            });
        }
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input);
        for l in 0..n_layers {
            let mut z = &self.weights[l] * &activations[l];
            for mut col in z.column_iter_mut() {
                col += &self.biases[l];
            }
            if l + 1 < n_layers {
                z.apply(|v| *v = v.max(0.0));
            } else if self.output == OutputActivation::Tanh {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        Ok(self.forward_batch(x)?.output().as_slice().to_vec())
    }

    /// Reverse pass given dL/d(output). Returns parameter gradients and
    /// dL/d(input).
    pub fn backward(&self, cache: &ForwardCache, grad_output: &DMatrix<f64>) -> (MlpGrads, DMatrix<f64>) {
        let n_layers = self.weights.len();
        let mut dw = vec![DMatrix::zeros(0, 0); n_layers];
        let mut db = vec![DVector::zeros(0); n_layers];
        let mut delta = grad_output.clone();
        if self.output == OutputActivation::Tanh {
            delta.zip_apply(&cache.activations[n_layers], |d, y| *d *= 1.0 - y * y);
        }
        for l in (0..n_layers).rev() {
            dw[l] = &delta * cache.activations[l].transpose();
            db[l] = delta.column_sum();
            let mut prev = self.weights[l].transpose() * &delta;
            if l > 0 {
                prev.zip_apply(&cache.activations[l], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = prev;
        }
        (MlpGrads { weights: dw, biases: db }, delta)
    }

    /// target <- tau * self + (1 - tau) * target
    pub fn soft_update_into(&self, target: &mut Mlp, tau: f64) {
        for (w, tw) in self.weights.iter().zip(target.weights.iter_mut()) {
            tw.zip_apply(w, |t, s| *t += tau * (s - *t));
        }
        for (b, tb) in self.biases.iter().zip(target.biases.iter_mut()) {
            tb.zip_apply(b, |t, s| *t += tau * (s - *t));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        let mut params = net.params();
        self.step(&mut params, &grads.flatten());
        net.set_params(&params);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    /// Action in the actor's [-1, 1] coordinates.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    cursor: usize,
    items: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            cursor: 0,
            items: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    /// Uniform indices with replacement; None until a full batch is stored.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
        if self.items.len() < batch {
            return None;
        }
        Some((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub memory_size: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub noise_std: f64,
    pub gamma: f64,
    pub tau: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub eval_interval: usize,
    /// Rewards are multiplied by this before entering the critic.
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DdpgConfig {
    /// Wide networks and large batches for long runs; `deep` selects six
    /// hidden layers for the larger dispatch problem.
    pub fn full_scale(deep: bool) -> Self {
        let hidden = vec![256; if deep { 6 } else { 3 }];
        Self {
            memory_size: 1_000_000,
            batch_size: 1024,
            actor_lr: 1e-4,
            critic_lr: 5e-4,
            actor_hidden: hidden.clone(),
            critic_hidden: hidden,
            noise_std: 0.1,
            gamma: 0.0,
            tau: 0.005,
            warmup_steps: 1000,
            total_steps: 1_000_000,
            eval_interval: 1000,
            reward_scale: 1.0,
            seed: 0,
        }
    }

    /// Narrower networks and smaller batches sized for 50k-step runs on
    /// one core.
    pub fn desk() -> Self {
        Self {
            memory_size: 100_000,
            batch_size: 64,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            total_steps: 50_000,
            eval_interval: 5000,
            ..Self::full_scale(false)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if self.batch_size == 0 || self.batch_size > self.memory_size {
            return bad("batch_size must be in [1, memory_size]");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.noise_std < 0.0 || !(self.reward_scale > 0.0) {
            return bad("noise_std must be >= 0 and reward_scale > 0");
        }
        Ok(())
    }
}

/// Deterministic actor plus the box it maps into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub version: u32,
    pub actor: Mlp,
    pub action_box: Vec<(f64, f64)>,
}

pub const POLICY_VERSION: u32 = 1;

fn to_box(u: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + 0.5 * (u + 1.0) * (hi - lo)
}

fn from_box(a: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        2.0 * (a - lo) / (hi - lo) - 1.0
    } else {
        0.0
    }
}

impl Policy {
    pub fn observation_dim(&self) -> usize {
        self.actor.input_dim()
    }

    /// Actor output mapped to the box, plus Gaussian noise of `noise_std`
    /// in box units, clipped.
    pub fn act(&self, observation: &[f64], noise_std: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let u = self.actor.forward(observation)?;
        Ok(u.iter()
            .zip(&self.action_box)
            .map(|(&u, &b)| {
                let mut a = to_box(u, b);
                if noise_std > 0.0 {
                    let n: f64 = StandardNormal.sample(rng);
                    a += noise_std * n;
                }
                a.clamp(b.0, b.1)
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if p.version != POLICY_VERSION {
            return Err(Error::Parse(format!("unsupported policy version {}", p.version)));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub mape_percent: Option<f64>,
    pub invalid_share_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub mape_percent: Option<f64>,
    pub invalid_share_percent: f64,
    /// Mean environment reward since the previous checkpoint.
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub checkpoints: Vec<Checkpoint>,
    pub steps: usize,
    pub wall_clock_s: f64,
    pub diverged_at: Option<usize>,
}

pub struct TrainOutcome {
    pub policy: Policy,
    pub log: TrainLog,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        self.log.diverged_at.is_some()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.log.diverged_at {
            Some(step) => Err(Error::DivergenceDetected { step }),
            None => Ok(self),
        }
    }
}

/// Learner state: online and target networks with their optimizers.
pub struct Ddpg {
    pub config: DdpgConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub action_box: Vec<(f64, f64)>,
    /// Mean squared TD error of the last update. Adam can absorb an
    /// overflowing gradient without touching the weights, so this is
    /// watched alongside the parameters.
    pub last_critic_loss: f64,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl Ddpg {
    pub fn new(obs_dim: usize, action_box: Vec<(f64, f64)>, config: DdpgConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let act_dim = action_box.len();
        let actor = Mlp::new(
            &layer_sizes(obs_dim, &config.actor_hidden, act_dim),
            OutputActivation::Tanh,
            rng,
        );
        let critic = Mlp::new(
            &layer_sizes(obs_dim + act_dim, &config.critic_hidden, 1),
            OutputActivation::Identity,
            rng,
        );
        Ok(Self {
            actor_opt: Adam::new(actor.n_params(), config.actor_lr),
            critic_opt: Adam::new(critic.n_params(), config.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            config,
            action_box,
            last_critic_loss: 0.0,
        })
    }

    pub fn policy(&self) -> Policy {
        Policy {
            version: POLICY_VERSION,
            actor: self.actor.clone(),
            action_box: self.action_box.clone(),
        }
    }

    /// Critic targets y = r + gamma * (1 - terminal) * Q'(s', pi'(s')).
    pub fn critic_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let scale = self.config.reward_scale;
        if self.config.gamma == 0.0 || batch.iter().all(|t| t.terminal) {
            return Ok(batch.iter().map(|t| scale * t.reward).collect());
        }
        let next = stack(batch.iter().map(|t| t.next_observation.as_slice()));
        let next_u = self.actor_target.forward_batch(next.clone())?;
        let q_in = concat_rows(&next, next_u.output());
        let q = self.critic_target.forward_batch(q_in)?;
        Ok(batch
            .iter()
            .zip(q.output().iter())
            .map(|(t, &q)| {
                let cont = if t.terminal { 0.0 } else { 1.0 };
                scale * t.reward + self.config.gamma * cont * q
            })
            .collect())
    }

    /// One critic and one actor gradient step followed by soft target updates.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<()> {
        let b = batch.len() as f64;
        let y = self.critic_targets(batch)?;
        let obs = stack(batch.iter().map(|t| t.observation.as_slice()));
        let acts = stack(batch.iter().map(|t| t.action.as_slice()));

        let cache = self.critic.forward_batch(concat_rows(&obs, &acts))?;
        let mut grad = cache.output().clone();
        self.last_critic_loss = grad.iter().zip(&y).map(|(q, t)| (q - t).powi(2)).sum::<f64>() / b;
        for (g, &target) in grad.iter_mut().zip(&y) {
            *g = 2.0 * (*g - target) / b;
        }
        let (cg, _) = self.critic.backward(&cache, &grad);
        self.critic_opt.step_mlp(&mut self.critic, &cg);

        let actor_cache = self.actor.forward_batch(obs.clone())?;
        let q_cache = self
            .critic
            .forward_batch(concat_rows(&obs, actor_cache.output()))?;
        let dq = DMatrix::from_element(1, batch.len(), -1.0 / b);
        let (_, d_input) = self.critic.backward(&q_cache, &dq);
        let n_obs = obs.nrows();
        let d_action = d_input.rows(n_obs, d_input.nrows() - n_obs).into_owned();
        let (ag, _) = self.actor.backward(&actor_cache, &d_action);
        self.actor_opt.step_mlp(&mut self.actor, &ag);

        self.actor.soft_update_into(&mut self.actor_target, self.config.tau);
        self.critic.soft_update_into(&mut self.critic_target, self.config.tau);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.last_critic_loss.is_finite()
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>) -> DMatrix<f64> {
    let cols: Vec<&[f64]> = rows.collect();
    let n = cols.first().map_or(0, |c| c.len());
    let mut data = Vec::with_capacity(n * cols.len());
    for c in &cols {
        data.extend_from_slice(c);
    }
    DMatrix::from_vec(n, cols.len(), data)
}

fn concat_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, rb) = (a.nrows(), b.nrows());
    DMatrix::from_fn(ra + rb, a.ncols(), |i, j| if i < ra { a[(i, j)] } else { b[(i - ra, j)] })
}

/// Trains on `env`. `checkpoint` is called every `eval_interval` steps and
/// after the final step with the current noise-free policy. Parameter
/// blow-up ends training early with `diverged_at` set.
pub fn ddpg_train(
    env: &mut OpfEnv,
    config: &DdpgConfig,
    mut checkpoint: impl FnMut(usize, &Policy) -> Result<CheckpointMetrics>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bounds = env.action_box();
    let mut agent = Ddpg::new(env.observation_dim(), bounds.clone(), config.clone(), &mut rng)?;
    let mut buffer = ReplayBuffer::new(config.memory_size);
    let mut log = TrainLog {
        checkpoints: Vec::new(),
        steps: 0,
        wall_clock_s: 0.0,
        diverged_at: None,
    };
    let mut obs = env.reset()?;
    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;

    for step in 1..=config.total_steps {
        let action = if step <= config.warmup_steps {
            bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect()
        } else {
            agent.policy().act(&obs, config.noise_std, &mut rng)?
        };
        let out = env.step(&action)?;
        reward_sum += out.reward;
        reward_count += 1;
        let u = out
            .info
            .action
            .iter()
            .zip(&bounds)
            .map(|(&a, &b)| from_box(a, b))
            .collect();
        buffer.push(Transition {
            observation: obs,
            action: u,
            reward: out.reward,
            next_observation: out.observation.clone(),
            terminal: out.terminal,
        });
        obs = if out.terminal { env.reset()? } else { out.observation };

        if step > config.warmup_steps {
            if let Some(idx) = buffer.sample_indices(config.batch_size, &mut rng) {
                let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
                agent.update(&batch)?;
                if !agent.is_finite() {
                    log.diverged_at = Some(step);
                    log.steps = step;
                    break;
                }
            }
        }
        log.steps = step;
        if step % config.eval_interval == 0 || step == config.total_steps {
            let metrics = checkpoint(step, &agent.policy())?;
            log.checkpoints.push(Checkpoint {
                step,
                mape_percent: metrics.mape_percent,
                invalid_share_percent: metrics.invalid_share_percent,
                mean_reward: reward_sum / reward_count.max(1) as f64,
            });
            reward_sum = 0.0;
            reward_count = 0;
        }
    }
    log.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        policy: agent.policy(),
        log,
    })
}
