//! Reinforcement-learning protocol designer.
//!
//! A double-deep-Q agent assembles shaking protocols segment by segment.
//! Each episode starts from the lattice ground state; at every segment
//! boundary the agent picks the next amplitude from a discrete menu, the
//! environment propagates the augmented state through that segment, and
//! when the final segment ends the episode earns a reward derived from the
//! classical Fisher information of the final state. Everything here is
//! self-contained: a single-hidden-layer network with manual
//! backpropagation and Adam, a FIFO replay buffer, an epsilon-greedy
//! policy, and a soft-updated target network.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    mean_position_phase, propagate_augmented, propagate_to, AugmentedState, ControlProtocol,
    DynamicsError, EstimationPoint, SolverSettings, DEFAULT_OMEGA_S_OVER_OMEGA_R,
    DEFAULT_STEPS_PER_SEGMENT,
};
use crate::estimation::{
    block_marginal, cfim, reward_accel, reward_lattice, EstimationError, DEFAULT_REWARD_CLAMP,
    PROBABILITY_FLOOR,
};
use crate::freespace::designer_mzi_reference;
use crate::physcore::{build_basis, ground_state, PhysError, PhysicalScales};

/// Number of reals the agent sees per state.
pub const FEATURE_DIM: usize = 12;

/// Number of discrete amplitudes the agent can choose.
pub const ACTION_COUNT: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum DesignerError {
    #[error("momentum comb must reach at least 4 recoil momenta for the feature map")]
    CombTooSmall,
    #[error("propagation failed in segment {segment}: {source}")]
    Propagation {
        segment: usize,
        source: DynamicsError,
    },
    #[error("state preparation failed: {0}")]
    Preparation(#[from] PhysError),
    #[error("initial state construction failed: {0}")]
    Setup(DynamicsError),
    #[error("reward evaluation failed: {0}")]
    Reward(#[from] EstimationError),
    #[error("loss became non-finite at train step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("network produced a non-finite value")]
    NonFiniteNetwork,
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint malformed: {0}")]
    CheckpointFormat(String),
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BatchTooLarge { need: usize, have: usize },
    #[error("batch arrays have mismatched lengths")]
    BatchShape,
}

/// The discrete amplitude menu: sixteen values spanning zero to fifteen
/// twelfths of pi, evenly spaced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionSet {
    amplitudes: Vec<f64>,
}

impl ActionSet {
    pub fn standard() -> Self {
        let amplitudes = (0..ACTION_COUNT)
            .map(|n| n as f64 * std::f64::consts::PI / 12.0)
            .collect();
        Self { amplitudes }
    }

    pub fn amplitude(&self, action: usize) -> f64 {
        self.amplitudes[action]
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        Self::standard()
    }
}

/// Maps an augmented state to the agent's observation.
///
/// The layout is: population of the zero-momentum tooth; even and odd
/// parity populations for the teeth at two, four, six, and eight recoil
/// momenta; the mean position phase scaled to `[-1, 1]`; the mean momentum
/// weighted by elapsed time over the protocol duration; and the elapsed
/// time itself as a fraction of the protocol duration.
pub fn extract_features(
    state: &AugmentedState,
    total_tau: f64,
) -> Result<[f64; FEATURE_DIM], DesignerError> {
    let basis = &state.basis;
    if basis.n_max < 4 {
        return Err(DesignerError::CombTooSmall);
    }
    let psi = &state.psi;
    let center = basis.index_of(0).expect("comb contains zero momentum");
    let mut features = [0.0f64; FEATURE_DIM];
    features[0] = psi.amplitudes[center].norm_sqr();
    for (slot, n) in [1i64, 2, 3, 4].iter().enumerate() {
        let plus = basis.index_of(*n).expect("tooth inside comb");
        let minus = basis.index_of(-*n).expect("tooth inside comb");
        let even = (psi.amplitudes[plus] + psi.amplitudes[minus]).norm_sqr() / 2.0;
        let odd = (psi.amplitudes[plus] - psi.amplitudes[minus]).norm_sqr() / 2.0;
        features[1 + 2 * slot] = even;
        features[2 + 2 * slot] = odd;
    }
    features[9] = mean_position_phase(psi) / std::f64::consts::PI;
    let mean_p: f64 = psi
        .amplitudes
        .iter()
        .enumerate()
        .map(|(i, c)| basis.momentum(i) * c.norm_sqr())
        .sum();
    features[10] = mean_p * state.tau / total_tau;
    features[11] = state.tau / total_tau;
    for f in &features {
        if !f.is_finite() {
            return Err(DesignerError::NonFiniteNetwork);
        }
    }
    Ok(features)
}

/// Single-hidden-layer network with rectifier activation and built-in Adam
/// accumulators. Parameters live in one flat vector (input-to-hidden
/// weights, hidden biases, hidden-to-output weights, output biases) so the
/// optimizer and the gradient checks can treat them uniformly.
#[derive(Debug, Clone)]
pub struct QNetwork {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    params: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_t: u64,
}

/// Adam configuration: the conventional defaults.
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl QNetwork {
    /// Fresh network: hidden layer uniform init scaled by fan-in, output
    /// layer zero. Zero output weights make every Q-value start at zero, so
    /// the greedy policy begins at the lowest-index action (zero amplitude)
    /// and the first accepted episodes, not the weight draw, decide which
    /// actions gain value.
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut ChaCha12Rng) -> Self {
        let count = Self::param_count(input, hidden, output);
        let mut params = vec![0.0; count];
        let w1_scale = 1.0 / (input as f64).sqrt();
        for p in params.iter_mut().take(hidden * input) {
            *p = rng.random_range(-w1_scale..w1_scale);
        }
        Self {
            input,
            hidden,
            output,
            adam_m: vec![0.0; count],
            adam_v: vec![0.0; count],
            adam_t: 0,
            params,
        }
    }

    /// All-zero network, useful as a deterministic baseline.
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        let count = Self::param_count(input, hidden, output);
        Self {
            input,
            hidden,
            output,
            params: vec![0.0; count],
            adam_m: vec![0.0; count],
            adam_v: vec![0.0; count],
            adam_t: 0,
        }
    }

    fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + output * hidden + output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn b1_off(&self) -> usize {
        self.hidden * self.input
    }

    fn w2_off(&self) -> usize {
        self.b1_off() + self.hidden
    }

    fn b2_off(&self) -> usize {
        self.w2_off() + self.output * self.hidden
    }

    /// Forward pass returning the Q-value of every action.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (_, _, y) = self.forward_cached(x);
        y
    }

    /// Forward pass that also returns the pre-activation and activation of
    /// the hidden layer, as backpropagation needs them.
    fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        assert_eq!(x.len(), self.input, "feature dimension mismatch");
        let b1 = self.b1_off();
        let w2 = self.w2_off();
        let b2 = self.b2_off();
        let mut z1 = vec![0.0; self.hidden];
        for h in 0..self.hidden {
            let row = &self.params[h * self.input..(h + 1) * self.input];
            let mut acc = self.params[b1 + h];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            z1[h] = acc;
        }
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let mut y = vec![0.0; self.output];
        for o in 0..self.output {
            let row = &self.params[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
            let mut acc = self.params[b2 + o];
            for (w, ai) in row.iter().zip(&a1) {
                acc += w * ai;
            }
            y[o] = acc;
        }
        (z1, a1, y)
    }

    /// One Adam step along `gradient` with learning rate `alpha`.
    pub fn adam_step(&mut self, gradient: &[f64], alpha: f64) {
        assert_eq!(gradient.len(), self.params.len());
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, &g) in gradient.iter().enumerate() {
            let m = &mut self.adam_m[i];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            let v = &mut self.adam_v[i];
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            self.params[i] -= alpha * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }

    /// Writes the weights (not the optimizer state) as a JSON checkpoint.
    /// Values are serialized as shortest-round-trip decimal strings, so a
    /// reload reproduces the exact bit patterns.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), DesignerError> {
        let doc = serde_json::json!({
            "shape": [self.input, self.hidden, self.output],
            "params": self.params.iter().map(|p| format!("{p}")).collect::<Vec<_>>(),
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("checkpoint serializes");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`QNetwork::save_checkpoint`]. Adam
    /// accumulators start from zero.
    pub fn load_checkpoint(path: &Path) -> Result<Self, DesignerError> {
        #[derive(Deserialize)]
        struct Doc {
            shape: [usize; 3],
            params: Vec<String>,
        }
        let text = fs::read_to_string(path)?;
        let doc: Doc =
            serde_json::from_str(&text).map_err(|e| DesignerError::CheckpointFormat(e.to_string()))?;
        let [input, hidden, output] = doc.shape;
        let count = Self::param_count(input, hidden, output);
        if doc.params.len() != count {
            return Err(DesignerError::CheckpointFormat(format!(
                "expected {count} parameters, found {}",
                doc.params.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for s in &doc.params {
            let value: f64 = s
                .parse()
                .map_err(|_| DesignerError::CheckpointFormat(format!("bad number {s:?}")))?;
            if !value.is_finite() {
                return Err(DesignerError::CheckpointFormat("non-finite weight".into()));
            }
            params.push(value);
        }
        Ok(Self {
            input,
            hidden,
            output,
            params,
            adam_m: vec![0.0; count],
            adam_v: vec![0.0; count],
            adam_t: 0,
        })
    }
}

/// Mean-squared Bellman loss over a batch and its gradient with respect to
/// every network parameter.
///
/// Each sample contributes `(Q(s)[action] - target)^2`; only the chosen
/// action's output backpropagates.
pub fn batch_loss_and_gradient(
    net: &QNetwork,
    features: &[[f64; FEATURE_DIM]],
    actions: &[usize],
    targets: &[f64],
) -> Result<(f64, Vec<f64>), DesignerError> {
    if features.len() != actions.len() || features.len() != targets.len() {
        return Err(DesignerError::BatchShape);
    }
    let batch = features.len() as f64;
    let mut gradient = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    let w2_off = net.w2_off();
    let b1_off = net.b1_off();
    let b2_off = net.b2_off();
    for ((x, &action), &target) in features.iter().zip(actions).zip(targets) {
        let (z1, a1, y) = net.forward_cached(x);
        let residual = y[action] - target;
        loss += residual * residual / batch;
        let dy = 2.0 * residual / batch;

        gradient[b2_off + action] += dy;
        let w2_row = &net.params[w2_off + action * net.hidden..w2_off + (action + 1) * net.hidden];
        for h in 0..net.hidden {
            gradient[w2_off + action * net.hidden + h] += dy * a1[h];
            if z1[h] > 0.0 {
                let dz = dy * w2_row[h];
                gradient[b1_off + h] += dz;
                let row = h * net.input;
                for (i, xi) in x.iter().enumerate() {
                    gradient[row + i] += dz * xi;
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(DesignerError::NonFiniteLoss { step: 0 });
    }
    Ok((loss, gradient))
}

/// Epsilon-greedy selection: with probability `epsilon` a uniform action,
/// otherwise the greedy argmax with ties broken toward the lowest index.
pub fn select_action(qvals: &[f64], epsilon: f64, rng: &mut ChaCha12Rng) -> usize {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if rng.random::<f64>() < epsilon {
        return rng.random_range(0..qvals.len());
    }
    let mut best = 0;
    for (i, &q) in qvals.iter().enumerate() {
        if q > qvals[best] {
            best = i;
        }
    }
    best
}

/// Whether the exploration schedule counts environment steps or episodes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonBasis {
    /// `index` advances once per action taken.
    PerStep,
    /// `index` advances once per episode.
    PerEpisode,
}

/// Exponential exploration decay with a floor:
/// `max(floor, exp(-decay * index))`.
pub fn epsilon_at(index: u64, decay: f64, floor: f64) -> f64 {
    (-decay * index as f64).exp().max(floor)
}

/// Vanilla targets take the maximum of the target network's values; double
/// targets pick the argmax with the online network and read that action's
/// value from the target network.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BellmanMode {
    Vanilla,
    Double,
}

/// One-step Bellman value for a transition.
pub fn bellman_target(
    reward: f64,
    next_features: &[f64; FEATURE_DIM],
    q_net: &QNetwork,
    target_net: &QNetwork,
    gamma: f64,
    terminal: bool,
    mode: BellmanMode,
) -> f64 {
    if terminal {
        return reward;
    }
    let target_vals = target_net.forward(next_features);
    let future = match mode {
        BellmanMode::Vanilla => target_vals
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
        BellmanMode::Double => {
            let online = q_net.forward(next_features);
            let mut best = 0;
            for (i, &q) in online.iter().enumerate() {
                if q > online[best] {
                    best = i;
                }
            }
            target_vals[best]
        }
    };
    reward + gamma * future
}

/// One experienced step of an episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub features: [f64; FEATURE_DIM],
    pub action: usize,
    pub reward: f64,
    pub next_features: [f64; FEATURE_DIM],
    pub terminal: bool,
}

/// Fixed-capacity FIFO store of transitions with uniform batch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    transitions: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer needs capacity");
        Self {
            transitions: Vec::with_capacity(capacity.min(4096)),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Inserts one transition, evicting the oldest once full.
    pub fn push(&mut self, transition: Transition) {
        if self.transitions.len() < self.capacity {
            self.transitions.push(transition);
        } else {
            self.transitions[self.cursor] = transition;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Uniform sample of `batch` distinct stored transitions.
    pub fn sample<'a>(
        &'a self,
        batch: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<&'a Transition>, DesignerError> {
        if batch > self.transitions.len() {
            return Err(DesignerError::BatchTooLarge {
                need: batch,
                have: self.transitions.len(),
            });
        }
        // Partial Fisher-Yates over an index pool: each prefix position is
        // swapped with a uniformly chosen later one, giving a uniform
        // without-replacement sample in O(batch) extra work.
        let mut indices: Vec<usize> = (0..self.transitions.len()).collect();
        for k in 0..batch {
            let j = rng.random_range(k..indices.len());
            indices.swap(k, j);
        }
        Ok(indices[..batch]
            .iter()
            .map(|&i| &self.transitions[i])
            .collect())
    }
}

/// What the terminal reward measures.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// Acceleration information with the lattice depth marginalized out.
    AccelMarginal,
    /// Raw acceleration diagonal, ignoring the nuisance coupling.
    AccelRaw,
    /// Lattice-depth information with the acceleration marginalized out.
    DepthMarginal,
}

/// Physics and reward context for training episodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Number of protocol segments per episode.
    pub segments: usize,
    /// Momentum comb truncation.
    pub n_max: usize,
    /// Quasimomentum of the prepared atoms.
    pub q: f64,
    /// Integrator resolution per segment.
    pub steps_per_segment: usize,
    /// Drive frequency over the recoil frequency.
    pub omega_s_over_omega_r: f64,
    /// Training-point lattice depth, recoil energies.
    pub depth_er: f64,
    /// Training-point acceleration, units of g.
    pub a_over_g: f64,
    pub reward: RewardKind,
    /// Terminal states with more than this fraction of population beyond
    /// the rejection momentum earn zero reward.
    pub rejection_threshold: f64,
    /// Magnitude cutoff for the rejection rule, in recoil momenta.
    pub rejection_momentum: f64,
    /// Reference information for the acceleration rewards; computed from
    /// the standard interferometer at this protocol duration when absent.
    pub mzi_reference: Option<f64>,
    /// Ceiling for the acceleration reward.
    pub reward_clamp: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            segments: 32,
            n_max: 10,
            q: 0.0,
            steps_per_segment: DEFAULT_STEPS_PER_SEGMENT,
            omega_s_over_omega_r: DEFAULT_OMEGA_S_OVER_OMEGA_R,
            depth_er: 10.0,
            a_over_g: 0.0,
            reward: RewardKind::AccelMarginal,
            rejection_threshold: 0.02,
            rejection_momentum: 4.0,
            mzi_reference: None,
            reward_clamp: DEFAULT_REWARD_CLAMP,
        }
    }
}

impl EnvConfig {
    pub fn point(&self) -> EstimationPoint {
        EstimationPoint::new(self.a_over_g, self.depth_er)
    }

    /// Duration of a full episode in recoil time units.
    pub fn total_tau(&self) -> f64 {
        self.segments as f64 * std::f64::consts::PI / self.omega_s_over_omega_r
    }

    /// Reference information used by the acceleration rewards.
    pub fn reference_info(&self, scales: &PhysicalScales) -> f64 {
        self.mzi_reference
            .unwrap_or_else(|| designer_mzi_reference(scales, self.total_tau()))
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Discount factor.
    pub gamma: f64,
    /// Soft-update weight toward the online network.
    pub tau: f64,
    /// Adam learning rate.
    pub alpha: f64,
    pub episodes: usize,
    /// Exponential exploration decay rate.
    pub epsilon_decay: f64,
    /// Exploration floor.
    pub epsilon_floor: f64,
    pub epsilon_basis: EpsilonBasis,
    pub bellman: BellmanMode,
    /// Hidden-layer width.
    pub hidden: usize,
    /// Transitions per gradient step.
    pub batch: usize,
    pub replay_capacity: usize,
    /// Gradient steps taken after each episode.
    pub train_steps_per_episode: usize,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.8,
            alpha: 1e-3,
            episodes: 5000,
            epsilon_decay: 2.5e-5,
            epsilon_floor: 0.1,
            epsilon_basis: EpsilonBasis::PerStep,
            bellman: BellmanMode::Double,
            hidden: 64,
            batch: 100,
            replay_capacity: 20_000,
            train_steps_per_episode: 1,
            seed: 0,
        }
    }
}

/// Soft update: every target parameter moves to
/// `tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut QNetwork, online: &QNetwork, tau: f64) {
    for (t, &q) in target.params_mut().iter_mut().zip(online.params()) {
        *t = tau * q + (1.0 - tau) * *t;
    }
}

/// One optimization step: Bellman targets for the batch, mean-squared loss,
/// one Adam update of the online network, then a soft update of the target
/// network. Returns the loss.
pub fn train_step(
    q_net: &mut QNetwork,
    target_net: &mut QNetwork,
    batch: &[&Transition],
    hyper: &Hyperparameters,
) -> Result<f64, DesignerError> {
    let mut features = Vec::with_capacity(batch.len());
    let mut actions = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for tr in batch {
        features.push(tr.features);
        actions.push(tr.action);
        targets.push(bellman_target(
            tr.reward,
            &tr.next_features,
            q_net,
            target_net,
            hyper.gamma,
            tr.terminal,
            hyper.bellman,
        ));
    }
    let (loss, gradient) = batch_loss_and_gradient(q_net, &features, &actions, &targets)?;
    if !loss.is_finite() {
        return Err(DesignerError::NonFiniteLoss {
            step: q_net.adam_t + 1,
        });
    }
    q_net.adam_step(&gradient, hyper.alpha);
    soft_update(target_net, q_net, hyper.tau);
    Ok(loss)
}

/// Everything an episode produced.
#[derive(Debug, Clone)]
pub struct Episode {
    pub protocol: ControlProtocol,
    pub transitions: Vec<Transition>,
    /// Terminal reward after the rejection rule.
    pub reward: f64,
    /// Whether the rejection rule zeroed the reward.
    pub rejected: bool,
    /// Classical Fisher information of the final state.
    pub cfim: nalgebra::Matrix2<f64>,
}

/// Population outside the momentum window `|p| <= cutoff`.
fn escaped_population(state: &AugmentedState, cutoff: f64) -> f64 {
    let norm_sqr = state.psi.norm().powi(2);
    state
        .psi
        .amplitudes
        .iter()
        .enumerate()
        .filter(|(i, _)| state.basis.momentum(*i).abs() > cutoff)
        .map(|(_, c)| c.norm_sqr())
        .sum::<f64>()
        / norm_sqr
}

/// Reward for a finished augmented state under the configured kind,
/// before the rejection rule.
fn information_reward(
    env: &EnvConfig,
    state: &AugmentedState,
    scales: &PhysicalScales,
) -> Result<(f64, nalgebra::Matrix2<f64>), DesignerError> {
    let info = cfim(state, PROBABILITY_FLOOR);
    let reference = env.reference_info(scales);
    let general = nalgebra::DMatrix::from_fn(2, 2, |r, c| info[(r, c)]);
    let reward = match env.reward {
        RewardKind::AccelRaw => reward_accel(info[(0, 0)], reference, env.reward_clamp),
        RewardKind::AccelMarginal => match block_marginal(&general, &[0]) {
            Ok(marginal) => reward_accel(marginal.info[(0, 0)], reference, env.reward_clamp),
            // A nuisance direction with no information at all makes the
            // protocol useless for joint estimation; score it as such.
            Err(EstimationError::NuisanceDeficit) => 0.0,
            Err(other) => return Err(other.into()),
        },
        RewardKind::DepthMarginal => match block_marginal(&general, &[1]) {
            Ok(marginal) => reward_lattice(marginal.info[(0, 0)]),
            Err(EstimationError::NuisanceDeficit) => 0.0,
            Err(other) => return Err(other.into()),
        },
    };
    Ok((reward, info))
}

/// Runs one episode: the policy picks a segment amplitude, the environment
/// integrates through that segment, and the terminal state is scored.
///
/// `epsilon` is called once per action and returns the exploration
/// probability for that step, letting the caller implement any schedule.
pub fn run_episode(
    env: &EnvConfig,
    q_net: &QNetwork,
    actions: &ActionSet,
    mut epsilon: impl FnMut() -> f64,
    rng: &mut ChaCha12Rng,
    scales: &PhysicalScales,
) -> Result<Episode, DesignerError> {
    let basis = build_basis(env.n_max, env.q)?;
    let psi0 = ground_state(env.depth_er, &basis, 0.0)?;
    let mut state = AugmentedState::fresh(psi0, basis).map_err(DesignerError::Setup)?;
    let settings = SolverSettings::with_steps(env.steps_per_segment);
    let point = env.point();
    let total_tau = env.total_tau();
    let segment_tau = total_tau / env.segments as f64;

    let mut amplitudes = Vec::with_capacity(env.segments);
    let mut transitions = Vec::with_capacity(env.segments);
    let mut features = extract_features(&state, total_tau)?;

    for segment in 0..env.segments {
        let qvals = q_net.forward(&features);
        if qvals.iter().any(|q| !q.is_finite()) {
            return Err(DesignerError::NonFiniteNetwork);
        }
        let action = select_action(&qvals, epsilon(), rng);
        amplitudes.push(actions.amplitude(action));

        // The protocol so far, padded with idle segments, is enough to
        // integrate through the segment just chosen: later amplitudes
        // cannot influence earlier times.
        let mut padded = amplitudes.clone();
        padded.resize(env.segments, 0.0);
        let protocol = ControlProtocol::new(padded, env.omega_s_over_omega_r)
            .expect("padded amplitude list is non-empty");
        state = propagate_to(
            &state,
            &protocol,
            &point,
            scales,
            &settings,
            (segment + 1) as f64 * segment_tau,
        )
        .map_err(|source| DesignerError::Propagation { segment, source })?
        .state;

        let next_features = extract_features(&state, total_tau)?;
        let terminal = segment + 1 == env.segments;
        transitions.push(Transition {
            features,
            action,
            reward: 0.0,
            next_features,
            terminal,
        });
        features = next_features;
    }

    let protocol = ControlProtocol::new(amplitudes, env.omega_s_over_omega_r)
        .expect("episode produced amplitudes");
    let (raw_reward, cfim) = information_reward(env, &state, scales)?;
    let rejected = escaped_population(&state, env.rejection_momentum) > env.rejection_threshold;
    let reward = if rejected { 0.0 } else { raw_reward };
    transitions
        .last_mut()
        .expect("episode has segments")
        .reward = reward;

    Ok(Episode {
        protocol,
        transitions,
        reward,
        rejected,
        cfim,
    })
}

/// Scores a frozen protocol exactly as an episode would, with the agent
/// bypassed: propagate the augmented state through the whole protocol and
/// apply the configured reward and rejection rule.
pub fn protocol_reward(
    env: &EnvConfig,
    protocol: &ControlProtocol,
    scales: &PhysicalScales,
) -> Result<(f64, nalgebra::Matrix2<f64>), DesignerError> {
    let basis = build_basis(env.n_max, env.q)?;
    let psi0 = ground_state(env.depth_er, &basis, 0.0)?;
    let initial = AugmentedState::fresh(psi0, basis).map_err(DesignerError::Setup)?;
    let settings = SolverSettings::with_steps(env.steps_per_segment);
    let state = propagate_augmented(&initial, protocol, &env.point(), scales, &settings)
        .map_err(|source| DesignerError::Propagation {
            segment: protocol.segments(),
            source,
        })?
        .state;
    let (raw_reward, info) = information_reward(env, &state, scales)?;
    let rejected = escaped_population(&state, env.rejection_momentum) > env.rejection_threshold;
    Ok((if rejected { 0.0 } else { raw_reward }, info))
}

/// Per-episode line of the training history.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub reward: f64,
    /// Exploration probability at the first step of the episode.
    pub epsilon: f64,
    /// Loss of the gradient step taken after this episode, once the buffer
    /// can fill a batch.
    pub loss: Option<f64>,
    pub rejected: bool,
}

/// Outcome of a training run.
#[derive(Debug)]
pub struct TrainingRun {
    pub best_protocol: ControlProtocol,
    pub best_reward: f64,
    pub best_episode: usize,
    pub history: Vec<EpisodeRecord>,
    /// Episodes dropped because their propagation aborted.
    pub discarded_episodes: Vec<usize>,
    pub q_net: QNetwork,
    pub target_net: QNetwork,
}

/// Trains an agent from scratch and returns the best protocol seen.
///
/// Fully deterministic for a given `(env, hyper)` pair: one seeded
/// generator drives initialization, exploration, and replay sampling in a
/// fixed order. Episodes whose propagation aborts (runaway truncation) are
/// recorded and skipped; any other error stops training.
pub fn train(
    env: &EnvConfig,
    hyper: &Hyperparameters,
    scales: &PhysicalScales,
) -> Result<TrainingRun, DesignerError> {
    let actions = ActionSet::standard();
    let mut rng = ChaCha12Rng::seed_from_u64(hyper.seed);
    let mut q_net = QNetwork::new(FEATURE_DIM, hyper.hidden, actions.len(), &mut rng);
    let mut target_net = q_net.clone();
    let mut replay = ReplayBuffer::new(hyper.replay_capacity);

    let mut history = Vec::with_capacity(hyper.episodes);
    let mut discarded = Vec::new();
    let mut best_reward = f64::NEG_INFINITY;
    let mut best_protocol = ControlProtocol::idle(env.segments);
    let mut best_episode = 0;
    let mut global_step: u64 = 0;

    for episode in 0..hyper.episodes {
        let episode_epsilon = match hyper.epsilon_basis {
            EpsilonBasis::PerStep => {
                epsilon_at(global_step, hyper.epsilon_decay, hyper.epsilon_floor)
            }
            EpsilonBasis::PerEpisode => {
                epsilon_at(episode as u64, hyper.epsilon_decay, hyper.epsilon_floor)
            }
        };
        let mut step_in_episode = 0u64;
        let outcome = run_episode(
            env,
            &q_net,
            &actions,
            || {
                let index = match hyper.epsilon_basis {
                    EpsilonBasis::PerStep => global_step + step_in_episode,
                    EpsilonBasis::PerEpisode => episode as u64,
                };
                step_in_episode += 1;
                epsilon_at(index, hyper.epsilon_decay, hyper.epsilon_floor)
            },
            &mut rng,
            scales,
        );
        global_step += step_in_episode;

        let episode_data = match outcome {
            Ok(data) => data,
            Err(DesignerError::Propagation { .. }) => {
                discarded.push(episode);
                history.push(EpisodeRecord {
                    episode,
                    reward: 0.0,
                    epsilon: episode_epsilon,
                    loss: None,
                    rejected: true,
                });
                continue;
            }
            Err(other) => return Err(other),
        };

        for tr in &episode_data.transitions {
            replay.push(tr.clone());
        }
        if episode_data.reward > best_reward {
            best_reward = episode_data.reward;
            best_protocol = episode_data.protocol.clone();
            best_episode = episode;
        }

        let loss = if replay.len() >= hyper.batch {
            let mut last = 0.0;
            for _ in 0..hyper.train_steps_per_episode.max(1) {
                let batch = replay.sample(hyper.batch, &mut rng)?;
                last = train_step(&mut q_net, &mut target_net, &batch, hyper)?;
            }
            Some(last)
        } else {
            None
        };
        history.push(EpisodeRecord {
            episode,
            reward: episode_data.reward,
            epsilon: episode_epsilon,
            loss,
            rejected: episode_data.rejected,
        });
    }

    // One purely greedy rollout of the trained network, recorded as a final
    // evaluation episode: exploration noise in the last training episodes
    // can hide the policy the network actually converged to.
    if let Ok(data) = run_episode(env, &q_net, &actions, || 0.0, &mut rng, scales) {
        if data.reward > best_reward {
            best_reward = data.reward;
            best_protocol = data.protocol.clone();
            best_episode = hyper.episodes;
        }
        history.push(EpisodeRecord {
            episode: hyper.episodes,
            reward: data.reward,
            epsilon: 0.0,
            loss: None,
            rejected: data.rejected,
        });
    }

    Ok(TrainingRun {
        best_protocol,
        best_reward,
        best_episode,
        history,
        discarded_episodes: discarded,
        q_net,
        target_net,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physcore::StateVector;
    use num_complex::Complex64;

    fn scales() -> PhysicalScales {
        PhysicalScales::rubidium_87()
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn action_set_contract() {
        let set = ActionSet::standard();
        assert_eq!(set.len(), 16);
        assert_eq!(set.amplitude(0), 0.0);
        assert!((set.amplitude(15) - 15.0 * std::f64::consts::PI / 12.0).abs() < 1e-15);
        for w in set.amplitudes().windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn features_of_ground_state_and_parity_superposition() {
        let basis = build_basis(5, 0.0).unwrap();
        let psi = ground_state(10.0, &basis, 0.0).unwrap();
        let state = AugmentedState::fresh(psi, basis).unwrap();
        let f = extract_features(&state, 1.0).unwrap();
        assert_eq!(f.len(), FEATURE_DIM);
        // Parity-even ground state: odd-sector populations vanish and the
        // zero tooth dominates.
        for slot in 0..4 {
            assert!(f[2 + 2 * slot] < 1e-20, "odd population {}", f[2 + 2 * slot]);
        }
        assert!(f[0] > 0.5);
        assert_eq!(f[11], 0.0);

        let mut comb = StateVector::zeros(basis.dim());
        let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        comb.amplitudes[basis.index_of(1).unwrap()] = amp;
        comb.amplitudes[basis.index_of(-1).unwrap()] = amp;
        let state = AugmentedState::fresh(comb, basis).unwrap();
        let f = extract_features(&state, 1.0).unwrap();
        assert!((f[1] - 1.0).abs() < 1e-12, "even population at 2 recoils");
        assert!(f[2].abs() < 1e-20, "odd population at 2 recoils");
    }

    #[test]
    fn feature_map_requires_four_teeth() {
        let basis = build_basis(3, 0.0).unwrap();
        let psi = ground_state(5.0, &basis, 0.0).unwrap();
        let state = AugmentedState::fresh(psi, basis).unwrap();
        assert!(matches!(
            extract_features(&state, 1.0),
            Err(DesignerError::CombTooSmall)
        ));
    }

    #[test]
    fn zero_network_outputs_zero_and_final_layer_is_linear() {
        let net = QNetwork::zeros(FEATURE_DIM, 8, ACTION_COUNT);
        let x = [0.3; FEATURE_DIM];
        assert!(net.forward(&x).iter().all(|&y| y == 0.0));

        let mut net = QNetwork::new(FEATURE_DIM, 8, ACTION_COUNT, &mut rng(3));
        let before = net.forward(&x);
        let w2_start = net.hidden * net.input + net.hidden;
        let w2_end = w2_start + net.output * net.hidden;
        for p in &mut net.params_mut()[w2_start..w2_end] {
            *p *= 2.0;
        }
        let b2_start = w2_end;
        let count = net.params().len();
        for p in &mut net.params_mut()[b2_start..count] {
            *p *= 2.0;
        }
        let after = net.forward(&x);
        for (b, a) in before.iter().zip(&after) {
            assert!((2.0 * b - a).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_selection_and_tie_break() {
        let mut r = rng(1);
        let qvals = vec![0.1, 0.9, 0.3];
        assert_eq!(select_action(&qvals, 0.0, &mut r), 1);
        let tied = vec![0.5, 0.5, 0.2];
        assert_eq!(select_action(&tied, 0.0, &mut r), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut r = rng(7);
        let qvals = vec![0.0; ACTION_COUNT];
        let n = 10_000;
        let mut counts = [0usize; ACTION_COUNT];
        for _ in 0..n {
            counts[select_action(&qvals, 1.0, &mut r)] += 1;
        }
        let expected = n as f64 / ACTION_COUNT as f64;
        let statistic: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = 1.0 - ChiSquared::new((ACTION_COUNT - 1) as f64).unwrap().cdf(statistic);
        assert!(p > 0.01, "chi-square p-value {p:.4}");
    }

    #[test]
    fn epsilon_schedule_shape() {
        assert_eq!(epsilon_at(0, 2.5e-5, 0.1), 1.0);
        assert!((epsilon_at(10_000_000, 2.5e-5, 0.1) - 0.1).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for k in 0..200 {
            let e = epsilon_at(k * 1000, 2.5e-5, 0.1);
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn bellman_targets() {
        let q = QNetwork::zeros(FEATURE_DIM, 4, ACTION_COUNT);
        let mut t = QNetwork::zeros(FEATURE_DIM, 4, ACTION_COUNT);
        let x = [0.1; FEATURE_DIM];
        assert_eq!(
            bellman_target(3.0, &x, &q, &t, 0.99, true, BellmanMode::Double),
            3.0
        );
        assert_eq!(
            bellman_target(3.0, &x, &q, &t, 0.0, false, BellmanMode::Double),
            3.0
        );
        // Constant target network: value c for every action, so both modes
        // give r + gamma c.
        let b2_start = t.params().len() - ACTION_COUNT;
        for p in &mut t.params_mut()[b2_start..] {
            *p = 2.0;
        }
        for mode in [BellmanMode::Vanilla, BellmanMode::Double] {
            let y = bellman_target(1.0, &x, &q, &t, 0.5, false, mode);
            assert!((y - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_residual_batch_leaves_weights_unchanged() {
        let mut q = QNetwork::new(FEATURE_DIM, 8, ACTION_COUNT, &mut rng(11));
        let mut t = q.clone();
        let x = [0.2; FEATURE_DIM];
        let y = q.forward(&x);
        let batch_owned: Vec<Transition> = (0..4)
            .map(|k| Transition {
                features: x,
                action: k,
                reward: y[k],
                next_features: x,
                terminal: true,
            })
            .collect();
        let batch: Vec<&Transition> = batch_owned.iter().collect();
        let before = q.params().to_vec();
        let hyper = Hyperparameters {
            tau: 0.0,
            ..Hyperparameters::default()
        };
        let loss = train_step(&mut q, &mut t, &batch, &hyper).unwrap();
        assert!(loss < 1e-25);
        for (a, b) in q.params().iter().zip(&before) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn soft_update_is_an_exact_contraction() {
        let mut r = rng(5);
        let q = QNetwork::new(FEATURE_DIM, 8, ACTION_COUNT, &mut r);
        let mut target = QNetwork::new(FEATURE_DIM, 8, ACTION_COUNT, &mut r);
        let tau = 0.8;
        let gap_before: f64 = target
            .params()
            .iter()
            .zip(q.params())
            .map(|(t, q)| (t - q).powi(2))
            .sum::<f64>()
            .sqrt();
        soft_update(&mut target, &q, tau);
        let gap_after: f64 = target
            .params()
            .iter()
            .zip(q.params())
            .map(|(t, q)| (t - q).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((gap_after - (1.0 - tau) * gap_before).abs() < 1e-12 * gap_before.max(1.0));

        let mut copy_target = QNetwork::zeros(FEATURE_DIM, 8, ACTION_COUNT);
        soft_update(&mut copy_target, &q, 1.0);
        assert_eq!(copy_target.params(), q.params());
    }

    #[test]
    fn loss_decreases_on_a_frozen_batch() {
        let mut r = rng(13);
        let mut q = QNetwork::new(FEATURE_DIM, 16, ACTION_COUNT, &mut r);
        let mut t = q.clone();
        let batch_owned: Vec<Transition> = (0..20)
            .map(|k| {
                let mut features = [0.0; FEATURE_DIM];
                for f in &mut features {
                    *f = r.random_range(-1.0..1.0);
                }
                Transition {
                    features,
                    action: k % ACTION_COUNT,
                    reward: r.random_range(0.0..2.0),
                    next_features: features,
                    terminal: true,
                }
            })
            .collect();
        let batch: Vec<&Transition> = batch_owned.iter().collect();
        let hyper = Hyperparameters {
            alpha: 3e-3,
            tau: 0.1,
            ..Hyperparameters::default()
        };
        let first = train_step(&mut q, &mut t, &batch, &hyper).unwrap();
        let mut last = first;
        for _ in 0..99 {
            last = train_step(&mut q, &mut t, &batch, &hyper).unwrap();
        }
        assert!(
            last < 0.2 * first,
            "loss went from {first:.4} to only {last:.4}"
        );
    }

    #[test]
    fn replay_buffer_evicts_fifo_and_samples_distinct() {
        let mut buffer = ReplayBuffer::new(5);
        for k in 0..8 {
            buffer.push(Transition {
                features: [k as f64; FEATURE_DIM],
                action: 0,
                reward: k as f64,
                next_features: [0.0; FEATURE_DIM],
                terminal: false,
            });
        }
        assert_eq!(buffer.len(), 5);
        let rewards: Vec<f64> = buffer.transitions.iter().map(|t| t.reward).collect();
        // Oldest three (0, 1, 2) were overwritten in place.
        assert!(rewards.contains(&5.0) && rewards.contains(&7.0) && !rewards.contains(&2.0));

        let mut r = rng(2);
        let sample = buffer.sample(5, &mut r).unwrap();
        let mut seen: Vec<f64> = sample.iter().map(|t| t.reward).collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 5, "sampling without replacement");
        assert!(buffer.sample(6, &mut r).is_err());
    }

    fn tiny_env() -> EnvConfig {
        EnvConfig {
            segments: 4,
            n_max: 6,
            steps_per_segment: 128,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn zero_agent_plays_the_idle_protocol() {
        let env = tiny_env();
        let net = QNetwork::zeros(FEATURE_DIM, 4, ACTION_COUNT);
        let actions = ActionSet::standard();
        let mut r = rng(4);
        let episode =
            run_episode(&env, &net, &actions, || 0.0, &mut r, &scales()).unwrap();
        assert!(episode.protocol.segment_amplitudes.iter().all(|&a| a == 0.0));
        assert_eq!(episode.transitions.len(), env.segments);
        let terminals = episode
            .transitions
            .iter()
            .filter(|t| t.terminal)
            .count();
        assert_eq!(terminals, 1);
        assert!(episode.transitions.last().unwrap().terminal);
        // An undriven lattice at the training point carries almost no
        // acceleration information relative to the reference.
        assert!(
            episode.reward < 5e-2,
            "idle protocol earned {}",
            episode.reward
        );
    }

    #[test]
    fn episodes_are_deterministic_per_seed() {
        let env = tiny_env();
        let net = QNetwork::new(FEATURE_DIM, 8, ACTION_COUNT, &mut rng(21));
        let actions = ActionSet::standard();
        let run = |seed: u64| {
            let mut r = rng(seed);
            run_episode(&env, &net, &actions, || 0.5, &mut r, &scales()).unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a.protocol.segment_amplitudes, b.protocol.segment_amplitudes);
        assert_eq!(a.reward.to_bits(), b.reward.to_bits());
        for (x, y) in a.transitions.iter().zip(&b.transitions) {
            assert_eq!(x.action, y.action);
            for (p, q) in x.features.iter().zip(&y.features) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn episode_reward_matches_frozen_protocol_reward() {
        let env = tiny_env();
        let net = QNetwork::new(FEATURE_DIM, 8, ACTION_COUNT, &mut rng(31));
        let actions = ActionSet::standard();
        let mut r = rng(9);
        let episode =
            run_episode(&env, &net, &actions, || 0.7, &mut r, &scales()).unwrap();
        let (reward, info) = protocol_reward(&env, &episode.protocol, &scales()).unwrap();
        assert!((episode.reward - reward).abs() <= 1e-12 * reward.abs().max(1.0));
        assert!((episode.cfim - info).norm() <= 1e-10 * info.norm().max(1.0));
    }

    #[test]
    fn single_episode_training_run() {
        let env = tiny_env();
        let hyper = Hyperparameters {
            episodes: 1,
            batch: 2,
            hidden: 8,
            seed: 5,
            ..Hyperparameters::default()
        };
        let run = train(&env, &hyper, &scales()).unwrap();
        assert_eq!(run.history.len(), 1);
        assert_eq!(run.best_episode, 0);
        assert_eq!(
            run.best_protocol.segments(),
            env.segments,
            "best protocol has one amplitude per segment"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let env = tiny_env();
        let hyper = Hyperparameters {
            episodes: 6,
            batch: 8,
            hidden: 8,
            seed: 17,
            ..Hyperparameters::default()
        };
        let a = train(&env, &hyper, &scales()).unwrap();
        let b = train(&env, &hyper, &scales()).unwrap();
        assert_eq!(a.best_reward.to_bits(), b.best_reward.to_bits());
        assert_eq!(
            a.best_protocol.segment_amplitudes,
            b.best_protocol.segment_amplitudes
        );
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.reward.to_bits(), y.reward.to_bits());
            assert_eq!(x.loss.map(f64::to_bits), y.loss.map(f64::to_bits));
        }
        for (p, q) in a.q_net.params().iter().zip(b.q_net.params()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = QNetwork::new(FEATURE_DIM, 8, ACTION_COUNT, &mut rng(77));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save_checkpoint(&path).unwrap();
        let loaded = QNetwork::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.input, net.input);
        assert_eq!(loaded.hidden, net.hidden);
        assert_eq!(loaded.output, net.output);
        for (a, b) in net.params().iter().zip(loaded.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{\"shape\": [2, 2, 2], \"params\": [\"1.0\"]}").unwrap();
        assert!(matches!(
            QNetwork::load_checkpoint(&path),
            Err(DesignerError::CheckpointFormat(_))
        ));
    }
}
