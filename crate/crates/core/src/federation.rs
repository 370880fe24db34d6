//! Round-synchronous federated training.
//!
//! Each round every client starts from the global model, runs its local
//! steps on its own keyed random stream, and reports its final parameters
//! and squared distances to the round's global model. The server then
//! averages parameter deltas and, while amplitude sharing is active,
//! averages client amplitudes into the global amplitude.

use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift;
use crate::error::{Error, Result};
use crate::fourier::{self, AmpPhase, Grid};
use crate::harmonize::{self, AmplitudeState, GlobalAmplitude};
use crate::model::{self, Batch, BatchObjective, MlpArch, ParamVector};
use crate::perturb::{self, PerturbConfig};
use crate::synthdata::ClientDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedavg_ampnorm")]
    FedAvgAmpNorm,
    #[serde(rename = "harmofl")]
    HarmoFl,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [
        Algorithm::FedAvg,
        Algorithm::FedAvgAmpNorm,
        Algorithm::HarmoFl,
    ];

    pub fn uses_ampnorm(self) -> bool {
        self >= Algorithm::FedAvgAmpNorm
    }

    pub fn uses_perturbation(self) -> bool {
        self == Algorithm::HarmoFl
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedAvgAmpNorm => "fedavg_ampnorm",
            Algorithm::HarmoFl => "harmofl",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// How the aggregation weights `p_i` are chosen when none are given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Proportional to each client's training split size.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub rounds: usize,
    pub num_clients: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub eta_l: f64,
    #[serde(default = "one")]
    pub eta_g: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_decay")]
    pub decay_v: f64,
    #[serde(default = "default_amp_share_rounds")]
    pub amp_share_rounds: usize,
    #[serde(default)]
    pub weighting: Weighting,
    /// Explicit `p_i`; overrides `weighting` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_weights: Option<Vec<f64>>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_grad_floor")]
    pub grad_floor: f64,
    /// Record full-batch client gradients at every `θ^t` for constant estimation.
    #[serde(default)]
    pub record_gradients: bool,
    /// Keep every client iterate, not only its squared distance.
    #[serde(default)]
    pub retain_snapshots: bool,
    /// Run client updates on the rayon pool.
    #[serde(default = "yes")]
    pub concurrent: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_alpha() -> f64 {
    5e-2
}
fn default_decay() -> f64 {
    0.1
}
fn default_amp_share_rounds() -> usize {
    1
}
fn default_local_epochs() -> usize {
    1
}
fn default_grad_floor() -> f64 {
    1e-12
}

impl FedConfig {
    /// Defaults for everything except the loop sizes and learning rate.
    pub fn new(
        algorithm: Algorithm,
        rounds: usize,
        num_clients: usize,
        local_steps: usize,
        batch_size: usize,
        eta_l: f64,
    ) -> Self {
        Self {
            rounds,
            num_clients,
            local_steps,
            batch_size,
            eta_l,
            eta_g: 1.0,
            alpha: default_alpha(),
            decay_v: default_decay(),
            amp_share_rounds: default_amp_share_rounds(),
            weighting: Weighting::Uniform,
            client_weights: None,
            algorithm,
            seed: 0,
            local_epochs: 1,
            hidden_dims: Vec::new(),
            grad_floor: default_grad_floor(),
            record_gradients: false,
            retain_snapshots: false,
            concurrent: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("num_clients", self.num_clients),
            ("local_steps", self.local_steps),
            ("batch_size", self.batch_size),
            ("local_epochs", self.local_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("eta_l", self.eta_l), ("eta_g", self.eta_g)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.decay_v) {
            return Err(Error::Config(format!(
                "decay_v must lie in [0, 1], got {}",
                self.decay_v
            )));
        }
        PerturbConfig::new(self.alpha, self.grad_floor)?;
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims entries must be positive".into()));
        }
        if let Some(w) = &self.client_weights {
            check_weights(w, self.num_clients)?;
        }
        Ok(())
    }

    /// Steps per client per round.
    pub fn steps_per_round(&self) -> usize {
        self.local_steps * self.local_epochs
    }

    /// Perturbation settings; alpha is zero unless the algorithm perturbs.
    pub fn perturb_config(&self) -> PerturbConfig {
        let alpha = if self.algorithm.uses_perturbation() {
            self.alpha
        } else {
            0.0
        };
        PerturbConfig {
            alpha,
            grad_floor: self.grad_floor,
        }
    }

    pub fn arch(&self, input_dim: usize) -> Result<Arc<MlpArch>> {
        Ok(Arc::new(MlpArch::new(
            input_dim,
            self.hidden_dims.clone(),
            2,
        )?))
    }

    /// Resolves `p_i` against the actual datasets.
    pub fn resolve_weights(&self, datasets: &[Arc<ClientDataset>]) -> Result<Vec<f64>> {
        if let Some(w) = &self.client_weights {
            check_weights(w, datasets.len())?;
            return Ok(w.clone());
        }
        let n = datasets.len() as f64;
        Ok(match self.weighting {
            Weighting::Uniform => vec![1.0 / n; datasets.len()],
            Weighting::Proportional => {
                let total: usize = datasets.iter().map(|d| d.train.len()).sum();
                datasets
                    .iter()
                    .map(|d| d.train.len() as f64 / total as f64)
                    .collect()
            }
        })
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Config(format!(
            "{} client weights for {n} clients",
            w.len()
        )));
    }
    if w.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::Config("client weights must be nonnegative".into()));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "client weights sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Random stream for one client in one round.
pub fn client_rng(seed: u64, client: usize, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((client as u64) << 32) | round as u64);
    rng
}

/// Draws a minibatch of distinct training indices.
pub fn sample_batch(rng: &mut ChaCha8Rng, train: &[usize], batch_size: usize) -> Vec<usize> {
    let m = batch_size.min(train.len());
    index::sample(rng, train.len(), m)
        .into_iter()
        .map(|i| train[i])
        .collect()
}

/// A client's data plus the state it carries across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub dataset: Arc<ClientDataset>,
    pub amp_state: AmplitudeState<f64>,
    spectra: Vec<AmpPhase<f64>>,
}

impl ClientState {
    pub fn new(id: usize, dataset: Arc<ClientDataset>, decay_v: f64) -> Result<Self> {
        dataset.validate()?;
        let spectra = dataset
            .images
            .iter()
            .map(fourier::amp_phase)
            .collect::<Result<Vec<_>>>()?;
        let amp_state = AmplitudeState::new(dataset.shape(), decay_v)?;
        Ok(Self {
            id,
            dataset,
            amp_state,
            spectra,
        })
    }

    pub fn rng(&self, seed: u64, round: usize) -> ChaCha8Rng {
        client_rng(seed, self.id, round)
    }

    /// Raw pixels of the given samples as a batch.
    pub fn raw_batch(&self, indices: &[usize]) -> Result<Batch<f64>> {
        let dim = self.dataset.shape().len();
        let mut features = Vec::with_capacity(dim * indices.len());
        for &i in indices {
            features.extend_from_slice(self.dataset.images[i].data());
        }
        Batch::new(
            dim,
            features,
            indices.iter().map(|&i| self.dataset.labels[i]).collect(),
        )
    }

    /// Samples harmonized with `amplitude` as a batch.
    pub fn harmonized_batch(&self, indices: &[usize], amplitude: &Grid<f64>) -> Result<Batch<f64>> {
        let dim = self.dataset.shape().len();
        let mut features = Vec::with_capacity(dim * indices.len());
        for &i in indices {
            let img = harmonize::normalize_with_phase(amplitude, &self.spectra[i].phase)?;
            features.extend_from_slice(img.data());
        }
        Batch::new(
            dim,
            features,
            indices.iter().map(|&i| self.dataset.labels[i]).collect(),
        )
    }

    /// Mean amplitude of the training split.
    pub fn train_mean_amplitude(&self) -> Grid<f64> {
        let mut acc = Grid::zeros(self.dataset.shape());
        for &i in &self.dataset.train {
            for (a, v) in acc.data.iter_mut().zip(&self.spectra[i].amplitude.data) {
                *a += v;
            }
        }
        let n = self.dataset.train.len() as f64;
        acc.data.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Amplitude used to harmonize evaluation and reference data: the global
    /// grid when one exists, otherwise this client's running average, falling
    /// back to its training-set mean before any batch was seen.
    pub fn reference_amplitude(&self, global: Option<&GlobalAmplitude<f64>>) -> Grid<f64> {
        match global {
            Some(g) => g.avg.clone(),
            None if self.amp_state.batches_seen() > 0 => self.amp_state.avg().clone(),
            None => self.train_mean_amplitude(),
        }
    }

    /// Features for `indices` as the model sees them under `algorithm`.
    pub fn features_for(
        &self,
        indices: &[usize],
        algorithm: Algorithm,
        global: Option<&GlobalAmplitude<f64>>,
    ) -> Result<Batch<f64>> {
        if algorithm.uses_ampnorm() {
            self.harmonized_batch(indices, &self.reference_amplitude(global))
        } else {
            self.raw_batch(indices)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub final_params: ParamVector<f64>,
    /// `||θ_{i,k} - θ^t||^2` after each local step.
    pub snapshots: Vec<f64>,
    /// Full iterates, when retained.
    pub iterates: Option<Vec<ParamVector<f64>>>,
    pub mean_loss: f64,
    pub mean_grad_norm: f64,
}

/// Local training of one client for one round.
///
/// The client's amplitude state is updated in place.
pub fn client_update(
    client: &mut ClientState,
    global_params: &ParamVector<f64>,
    global_amp: Option<&GlobalAmplitude<f64>>,
    cfg: &FedConfig,
    round: usize,
) -> Result<ClientUpdate> {
    if client.dataset.train.is_empty() {
        return Err(Error::Empty("client training split"));
    }
    let arch = Arc::clone(global_params.arch());
    let pcfg = cfg.perturb_config();
    let mut rng = client.rng(cfg.seed, round);
    let steps = cfg.steps_per_round();
    let mut params = global_params.values().to_vec();
    let mut snapshots = Vec::with_capacity(steps);
    let mut iterates = cfg.retain_snapshots.then(|| Vec::with_capacity(steps));
    let (mut loss_sum, mut grad_sum) = (0.0, 0.0);
    for _ in 0..steps {
        let idx = sample_batch(&mut rng, &client.dataset.train, cfg.batch_size);
        let batch = if cfg.algorithm.uses_ampnorm() {
            let amps: Vec<&Grid<f64>> = idx.iter().map(|&i| &client.spectra[i].amplitude).collect();
            client.amp_state.update_in_place(&amps)?;
            let amplitude = match global_amp {
                Some(g) if g.frozen => &g.avg,
                _ => client.amp_state.avg(),
            };
            client.harmonized_batch(&idx, amplitude)?
        } else {
            client.raw_batch(&idx)?
        };
        let objective = BatchObjective {
            arch: &arch,
            batch: &batch,
        };
        let (next, tel) = if cfg.algorithm.uses_perturbation() {
            perturb::harmofl_step(&params, &objective, cfg.eta_l, &pcfg)?
        } else {
            perturb::sgd_step(&params, &objective, cfg.eta_l)?
        };
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} after local step")));
        }
        params = next;
        let dist = model::slice_dist2(&params, global_params.values());
        if !(tel.loss.is_finite() && dist.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss {} or drift {dist} after local step",
                tel.loss
            )));
        }
        loss_sum += tel.loss;
        grad_sum += tel.grad_norm;
        snapshots.push(dist);
        if let Some(its) = iterates.as_mut() {
            its.push(ParamVector::new(Arc::clone(&arch), params.clone())?);
        }
    }
    Ok(ClientUpdate {
        final_params: ParamVector::new(arch, params)?,
        snapshots,
        iterates,
        mean_loss: loss_sum / steps as f64,
        mean_grad_norm: grad_sum / steps as f64,
    })
}

/// `θ^{t+1} = θ^t + η_g Σ p_i (θ_{i,K} - θ^t)`.
pub fn server_aggregate(
    global_params: &ParamVector<f64>,
    client_finals: &[ParamVector<f64>],
    weights: &[f64],
    eta_g: f64,
) -> Result<ParamVector<f64>> {
    if client_finals.len() != weights.len() || client_finals.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} client models for {} weights",
            client_finals.len(),
            weights.len()
        )));
    }
    let mut delta = vec![0.0; global_params.len()];
    for (fin, &p) in client_finals.iter().zip(weights) {
        if fin.arch() != global_params.arch() {
            return Err(Error::ArchMismatch(
                "client model differs from global architecture".into(),
            ));
        }
        for ((d, &c), &g) in delta
            .iter_mut()
            .zip(fin.values())
            .zip(global_params.values())
        {
            *d += p * (c - g);
        }
    }
    let values = global_params
        .values()
        .iter()
        .zip(&delta)
        .map(|(&g, &d)| g + eta_g * d)
        .collect();
    ParamVector::new(Arc::clone(global_params.arch()), values)
}

/// Full-batch gradient information for one client at `θ^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Exact `E||g_batch - ∇F_i||^2` for minibatches drawn without replacement.
    pub minibatch_variance: f64,
}

/// Full-batch information for every client at the round's starting model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub clients: Vec<ClientGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub global_before: Option<ParamVector<f64>>,
    pub global_after: Option<ParamVector<f64>>,
    /// Squared distances, `snapshots[i][k]`.
    pub snapshots: Vec<Vec<f64>>,
    pub iterates: Option<Vec<Vec<ParamVector<f64>>>>,
    pub train_loss: Vec<f64>,
    pub eval_loss: Vec<f64>,
    pub eval_accuracy: Vec<f64>,
    pub mean_train_loss: f64,
    pub mean_eval_loss: f64,
    pub mean_accuracy: f64,
    pub gamma: f64,
    pub gamma_i: Vec<f64>,
    pub gradients: Option<GradientRecord>,
    /// Global amplitude in effect after this round.
    pub global_amplitude: Option<GlobalAmplitude<f64>>,
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub records: Vec<RoundRecord>,
    pub final_params: ParamVector<f64>,
    pub global_amplitude: Option<GlobalAmplitude<f64>>,
    pub clients: Vec<ClientState>,
    pub weights: Vec<f64>,
}

/// Loss, gradient and minibatch variance of `F_i` at `params`.
pub fn client_gradient(
    params: &ParamVector<f64>,
    batch: &Batch<f64>,
    batch_size: usize,
) -> Result<ClientGradient> {
    let (loss, grad) = model::backward(params, batch)?;
    let n = batch.len();
    let m = batch_size.min(n);
    let mut spread = 0.0;
    for i in 0..n {
        let single = Batch::new(batch.dim(), batch.row(i).to_vec(), vec![batch.labels()[i]])?;
        let (_, gi) = model::backward(params, &single)?;
        spread += model::slice_dist2(gi.values(), grad.values());
    }
    spread /= n as f64;
    let minibatch_variance = if n > 1 {
        (n - m) as f64 / ((n - 1) as f64 * m as f64) * spread
    } else {
        0.0
    };
    Ok(ClientGradient {
        loss,
        grad: grad.into_values(),
        minibatch_variance,
    })
}

fn with_context<T>(round: usize, client: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Client {
        round,
        client,
        source: Box::new(e),
    })
}

/// Runs `cfg.rounds` rounds of federated training on `datasets`.
pub fn run_federation(
    cfg: &FedConfig,
    datasets: &[Arc<ClientDataset>],
) -> Result<FederationOutcome> {
    cfg.validate()?;
    if datasets.len() != cfg.num_clients {
        return Err(Error::Config(format!(
            "{} datasets for num_clients = {}",
            datasets.len(),
            cfg.num_clients
        )));
    }
    let shape = datasets[0].shape();
    if datasets.iter().any(|d| d.shape() != shape) {
        return Err(Error::ShapeMismatch(
            "clients have different image shapes".into(),
        ));
    }
    let weights = cfg.resolve_weights(datasets)?;
    let arch = cfg.arch(shape.len())?;
    let mut global: ParamVector<f64> = model::init_params(&arch, cfg.seed);
    let mut clients = datasets
        .iter()
        .enumerate()
        .map(|(i, d)| ClientState::new(i, Arc::clone(d), cfg.decay_v))
        .collect::<Result<Vec<_>>>()?;
    let mut global_amp: Option<GlobalAmplitude<f64>> = None;
    let mut records = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        if let Some(g) = global_amp.as_ref().filter(|g| !g.frozen) {
            for c in &mut clients {
                c.amp_state.overwrite_avg(&g.avg)?;
            }
        }

        let gradients = if cfg.record_gradients {
            let per_client = |c: &ClientState| {
                with_context(round, c.id, {
                    c.features_for(&c.dataset.train, cfg.algorithm, global_amp.as_ref())
                        .and_then(|b| client_gradient(&global, &b, cfg.batch_size))
                })
            };
            let clients_grad = if cfg.concurrent {
                clients
                    .par_iter()
                    .map(per_client)
                    .collect::<Result<Vec<_>>>()?
            } else {
                clients.iter().map(per_client).collect::<Result<Vec<_>>>()?
            };
            Some(GradientRecord {
                clients: clients_grad,
            })
        } else {
            None
        };

        let amp_ref = global_amp.as_ref();
        let global_ref = &global;
        let update = |c: &mut ClientState| {
            let id = c.id;
            with_context(round, id, client_update(c, global_ref, amp_ref, cfg, round))
        };
        let updates: Vec<ClientUpdate> = if cfg.concurrent {
            clients.par_iter_mut().map(update).collect::<Result<_>>()?
        } else {
            clients.iter_mut().map(update).collect::<Result<_>>()?
        };

        let finals: Vec<ParamVector<f64>> =
            updates.iter().map(|u| u.final_params.clone()).collect();
        let next = server_aggregate(&global, &finals, &weights, cfg.eta_g)?;

        if cfg.algorithm.uses_ampnorm() && round <= cfg.amp_share_rounds {
            let states: Vec<&AmplitudeState<f64>> = clients.iter().map(|c| &c.amp_state).collect();
            let mut agg = harmonize::aggregate_amplitudes(&states)?;
            agg.frozen = round == cfg.amp_share_rounds;
            global_amp = Some(agg);
        }

        let mut eval_loss = Vec::with_capacity(clients.len());
        let mut eval_accuracy = Vec::with_capacity(clients.len());
        for c in &clients {
            let batch = with_context(
                round,
                c.id,
                c.features_for(&c.dataset.eval, cfg.algorithm, global_amp.as_ref()),
            )?;
            eval_loss.push(model::forward_loss(&next, &batch)?);
            eval_accuracy.push(model::accuracy(&next, &batch)?);
        }

        let snapshots: Vec<Vec<f64>> = updates.iter().map(|u| u.snapshots.clone()).collect();
        let (gamma, gamma_i) = drift::empirical_gamma(&snapshots, cfg.steps_per_round())?;
        let train_loss: Vec<f64> = updates.iter().map(|u| u.mean_loss).collect();
        let keep_params = cfg.record_gradients || cfg.retain_snapshots;
        let n = clients.len() as f64;
        records.push(RoundRecord {
            round,
            global_before: keep_params.then(|| global.clone()),
            global_after: keep_params.then(|| next.clone()),
            snapshots,
            iterates: cfg.retain_snapshots.then(|| {
                updates
                    .iter()
                    .map(|u| u.iterates.clone().unwrap_or_default())
                    .collect()
            }),
            mean_train_loss: train_loss.iter().sum::<f64>() / n,
            mean_eval_loss: eval_loss.iter().sum::<f64>() / n,
            mean_accuracy: eval_accuracy.iter().sum::<f64>() / n,
            train_loss,
            eval_loss,
            eval_accuracy,
            gamma,
            gamma_i,
            gradients,
            global_amplitude: global_amp.clone(),
        });
        global = next;
    }

    Ok(FederationOutcome {
        records,
        final_params: global,
        global_amplitude: global_amp,
        clients,
        weights,
    })
}
