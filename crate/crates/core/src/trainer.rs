//! Training loop: reconstruction pretraining, k-means initialization of the cluster
//! centers, then joint minimization of `L = L_r + γ·L_c` with the target distribution
//! refreshed every `T` iterations.

use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::cluster::{
    clustering_loss, hard_labels, kmeans, soft_assign, target_distribution, ClusterError,
    ClusterState, KMeansConfig,
};
use crate::graph::{Graph, Normalization};
use crate::kernels::checkpoint::{decode_checkpoint, encode_checkpoint};
use crate::kernels::{
    Activation, KernelError, Optimizer, OptimizerConfig, OptimizerKind, Tensor,
};
use crate::metrics::{MetricsError, MetricsReport};
use crate::model::{
    reconstruction_loss, reconstruction_loss_sampled, AttentionMode, EncoderConfig,
    EncoderOutput, GatAutoencoder, ModelError, Reconstruction,
};
use crate::proximity::ProximityMatrix;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss during {phase} at step {step}: L_r={l_r}, L_c={l_c}")]
    NonFinite {
        phase: &'static str,
        step: usize,
        l_r: f64,
        l_c: f64,
    },
    #[error("cluster count unknown: the graph has no labels and no k was given")]
    MissingK,
    #[error("{0}")]
    Phase(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn default_gamma() -> f64 {
    10.0
}
fn default_t() -> usize {
    2
}
fn default_interval() -> usize {
    5
}
fn default_epochs() -> usize {
    200
}
fn default_lr_pretrain() -> f64 {
    0.005
}
fn default_lr_joint() -> f64 {
    1e-4
}
fn default_hidden() -> usize {
    256
}
fn default_embed() -> usize {
    16
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_hidden_activation() -> Activation {
    Activation::LeakyRelu
}
fn default_output_activation() -> Activation {
    Activation::Identity
}
fn default_attention() -> AttentionMode {
    AttentionMode::PerLayer
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Clustering coefficient.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Proximity order.
    #[serde(default = "default_t")]
    pub t: usize,
    /// Target distribution update interval, in joint iterations.
    #[serde(default = "default_interval", alias = "T")]
    pub update_interval: usize,
    #[serde(default = "default_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_epochs")]
    pub joint_iters: usize,
    #[serde(default = "default_lr_pretrain")]
    pub lr_pretrain: f64,
    #[serde(default = "default_lr_joint")]
    pub lr_joint: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_embed")]
    pub embed: usize,
    /// Cluster count; taken from the label count when absent.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_hidden_activation")]
    pub hidden_activation: Activation,
    #[serde(default = "default_output_activation")]
    pub output_activation: Activation,
    #[serde(default = "default_attention")]
    pub attention: AttentionMode,
    /// Overrides the dataset manifest's attribute normalization.
    #[serde(default)]
    pub normalization: Option<Normalization>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub kmeans: KMeansConfig,
    /// Positive pairs plus an equal number of sampled negatives per step.
    #[serde(default)]
    pub sampled_reconstruction: bool,
    /// Compute metrics against ground truth at every joint iteration.
    #[serde(default = "default_true")]
    pub track_metrics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let fail = |m: &str| Err(TrainerError::Config(m.to_string()));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail("gamma must be a finite value >= 0");
        }
        if self.t < 1 {
            return fail("t must be >= 1");
        }
        if self.update_interval < 1 {
            return fail("T must be >= 1");
        }
        if self.joint_iters < 1 {
            return fail("joint_iters must be >= 1");
        }
        if !(self.lr_pretrain > 0.0 && self.lr_joint > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.hidden == 0 || self.embed == 0 {
            return fail("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be >= 0");
        }
        if self.k == Some(0) || self.k == Some(1) {
            return fail("k must be >= 2");
        }
        if self.kmeans.restarts == 0 || self.kmeans.max_iter == 0 {
            return fail("k-means needs at least one restart and one iteration");
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            hidden_dim: self.hidden,
            embed_dim: self.embed,
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
            attention: self.attention,
            dropout: self.dropout,
        }
    }

    fn optimizer_config(&self, lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            weight_decay: self.weight_decay,
            ..OptimizerConfig::adam(lr)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub acc: f64,
    pub nmi: f64,
    pub fscore: f64,
    pub ari: f64,
}

impl From<&MetricsReport> for MetricPoint {
    fn from(r: &MetricsReport) -> Self {
        Self {
            acc: r.acc,
            nmi: r.nmi,
            fscore: r.fscore,
            ari: r.ari,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub l_r: f64,
    pub l_c: f64,
    pub total: f64,
    pub p_updated: bool,
    /// Metrics of the hard labels of this iteration's `Q`, before the update.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub n: usize,
    pub num_attributes: usize,
    pub num_edges: usize,
    pub k: usize,
    pub proximity_nnz: usize,
    /// Nodes whose attention neighborhood contains the node itself.
    pub self_in_neighborhood: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub seed: u64,
    pub meta: RunMeta,
    pub pretrain_loss: Vec<f64>,
    #[serde(default)]
    pub kmeans_inertia: Option<f64>,
    #[serde(default)]
    pub initial_metrics: Option<MetricPoint>,
    pub iterations: Vec<IterationRecord>,
    #[serde(default)]
    pub final_labels: Vec<usize>,
    #[serde(default)]
    pub final_metrics: Option<MetricsReport>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    /// Loss trajectory in execution order: pretraining `L_r`, then joint `L`.
    pub fn loss_trajectory(&self) -> Vec<f64> {
        self.pretrain_loss
            .iter()
            .copied()
            .chain(self.iterations.iter().map(|r| r.total))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Joint,
    Finished,
}

/// Seeds for the independent random streams of a run.
fn purpose_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.next_u64()
}

const STREAM_INIT: u64 = 1;
const STREAM_KMEANS: u64 = 2;
const STREAM_TRAIN: u64 = 3;

/// Index of the cluster-center parameter inside the model's store during the joint phase.
pub const MU: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss {
    pub l_r: f64,
    pub l_c: f64,
    pub total: f64,
}

/// `L = L_r + γ·KL(P‖Q)` for an encoder output, with `P` held fixed. Zeroes the model's
/// gradients, then writes `∂L/∂θ` for the encoder and `∂L/∂μ` into slot [`MU`].
pub fn joint_loss_backward(
    model: &mut GatAutoencoder,
    x: &Tensor,
    prox: &ProximityMatrix,
    out: &EncoderOutput,
    rec: Reconstruction,
    p: &Tensor,
    gamma: f64,
) -> Result<JointLoss, TrainerError> {
    let mu = model.params.value(MU).clone();
    let lc = clustering_loss(p, &out.embedding, &mu)?;
    let mut d_z = rec.d_embedding;
    d_z.add_scaled(&lc.d_embedding, gamma)?;
    model.params.zero_grad();
    model.backward(x, prox, out, &d_z)?;
    let mut d_mu = lc.d_centers;
    d_mu.data_mut().iter_mut().for_each(|v| *v *= gamma);
    model.params.accumulate_grad(MU, &d_mu)?;
    Ok(JointLoss {
        l_r: rec.loss,
        l_c: lc.loss,
        total: rec.loss + gamma * lc.loss,
    })
}

pub struct Trainer<'a> {
    graph: &'a Graph,
    prox: &'a ProximityMatrix,
    pub config: TrainConfig,
    model: GatAutoencoder,
    optimizer: Optimizer,
    phase: Phase,
    cluster: Option<ClusterState>,
    rng: ChaCha8Rng,
    record: RunRecord,
    last_forward: Option<EncoderOutput>,
    started: Instant,
    elapsed_before: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(
        graph: &'a Graph,
        prox: &'a ProximityMatrix,
        config: TrainConfig,
    ) -> Result<Self, TrainerError> {
        config.validate()?;
        if prox.n() != graph.n() {
            return Err(TrainerError::Config(format!(
                "proximity matrix has {} nodes, graph has {}",
                prox.n(),
                graph.n()
            )));
        }
        let k = match (config.k, graph.num_classes()) {
            (Some(k), _) => k,
            (None, Some(k)) => k,
            (None, None) => return Err(TrainerError::MissingK),
        };
        if k > graph.n() {
            return Err(ClusterError::TooFewPoints { n: graph.n(), k }.into());
        }
        if k < 2 {
            return Err(TrainerError::Config("k must be >= 2".into()));
        }
        let model = GatAutoencoder::new(
            graph.num_attributes(),
            config.encoder_config(),
            purpose_seed(config.seed, STREAM_INIT),
        );
        let optimizer = Optimizer::new(config.optimizer_config(config.lr_pretrain), &model.params);
        let record = RunRecord {
            config: config.clone(),
            seed: config.seed,
            meta: RunMeta {
                n: graph.n(),
                num_attributes: graph.num_attributes(),
                num_edges: graph.num_edges(),
                k,
                proximity_nnz: prox.nnz(),
                self_in_neighborhood: prox.self_included_count(),
            },
            pretrain_loss: Vec::new(),
            kmeans_inertia: None,
            initial_metrics: None,
            iterations: Vec::new(),
            final_labels: Vec::new(),
            final_metrics: None,
            wall_time_secs: 0.0,
        };
        Ok(Self {
            graph,
            prox,
            rng: ChaCha8Rng::seed_from_u64(purpose_seed(config.seed, STREAM_TRAIN)),
            config,
            model,
            optimizer,
            phase: Phase::Pretrain,
            cluster: None,
            record,
            last_forward: None,
            started: Instant::now(),
            elapsed_before: 0.0,
        })
    }

    pub fn k(&self) -> usize {
        self.record.meta.k
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn model(&self) -> &GatAutoencoder {
        &self.model
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn cluster_state(&self) -> Option<&ClusterState> {
        self.cluster.as_ref()
    }

    /// Encoder output of the most recent training step.
    pub fn last_forward(&self) -> Option<&EncoderOutput> {
        self.last_forward.as_ref()
    }

    pub fn iterations_done(&self) -> usize {
        self.record.iterations.len()
    }

    /// Deterministic embedding under the current parameters (no dropout).
    pub fn embedding(&self) -> Result<Tensor, TrainerError> {
        Ok(self
            .model
            .forward(self.graph.attributes(), self.prox, None)?
            .embedding)
    }

    fn require(&self, phase: Phase, op: &str) -> Result<(), TrainerError> {
        if self.phase != phase {
            return Err(TrainerError::Phase(format!(
                "{op} needs phase {phase:?}, trainer is in {:?}",
                self.phase
            )));
        }
        Ok(())
    }

    /// One full-graph gradient step on `L_r`. Returns the loss before the step.
    pub fn pretrain_step(&mut self) -> Result<f64, TrainerError> {
        self.require(Phase::Pretrain, "pretrain_step")?;
        let x = self.graph.attributes();
        let out = self.model.forward(x, self.prox, Some(&mut self.rng))?;
        let rec = if self.config.sampled_reconstruction {
            reconstruction_loss_sampled(self.graph, &out.embedding, &mut self.rng)?
        } else {
            reconstruction_loss(self.graph, &out.embedding)?
        };
        if !rec.loss.is_finite() || !rec.d_embedding.is_finite() {
            return Err(TrainerError::NonFinite {
                phase: "pretraining",
                step: self.record.pretrain_loss.len(),
                l_r: rec.loss,
                l_c: 0.0,
            });
        }
        self.model.params.zero_grad();
        self.model.backward(x, self.prox, &out, &rec.d_embedding)?;
        self.optimizer.step(&mut self.model.params);
        self.record.pretrain_loss.push(rec.loss);
        self.last_forward = Some(out);
        Ok(rec.loss)
    }

    /// Runs the remaining pretraining epochs and returns the resulting embedding.
    pub fn pretrain(&mut self) -> Result<Tensor, TrainerError> {
        while self.record.pretrain_loss.len() < self.config.pretrain_epochs {
            self.pretrain_step()?;
        }
        self.embedding()
    }

    /// k-means on the pretrained embedding; centers become a trainable parameter.
    pub fn init_clusters(&mut self) -> Result<(), TrainerError> {
        self.require(Phase::Pretrain, "init_clusters")?;
        let z = self.embedding()?;
        let km = kmeans(
            &z,
            self.k(),
            &self.config.kmeans,
            purpose_seed(self.config.seed, STREAM_KMEANS),
        )?;
        let q = soft_assign(&z, &km.centers)?;
        let p = target_distribution(&q)?;
        let idx = self.model.params.add("mu", km.centers.clone())?;
        debug_assert_eq!(idx, MU);
        self.optimizer = Optimizer::new(
            self.config.optimizer_config(self.config.lr_joint),
            &self.model.params,
        );
        self.record.kmeans_inertia = Some(km.inertia);
        if let Some(truth) = self.graph.labels() {
            let report = MetricsReport::compute(&km.labels, truth)?;
            self.record.initial_metrics = Some(MetricPoint::from(&report));
        }
        self.cluster = Some(ClusterState {
            mu: km.centers,
            q,
            p,
            last_p_update: None,
        });
        self.phase = Phase::Joint;
        Ok(())
    }

    /// One joint iteration: `Q` from the current embedding, `P` refreshed when the
    /// iteration index is a multiple of `T`, then one optimizer step on every parameter
    /// including the cluster centers.
    pub fn joint_step(&mut self) -> Result<IterationRecord, TrainerError> {
        self.require(Phase::Joint, "joint_step")?;
        let l = self.record.iterations.len();
        let x = self.graph.attributes();
        let out = self.model.forward(x, self.prox, Some(&mut self.rng))?;
        let z = &out.embedding;
        let mu = self.model.params.value(MU).clone();
        let q = soft_assign(z, &mu)?;
        let state = self.cluster.as_mut().expect("joint phase has cluster state");
        let p_updated = l.is_multiple_of(self.config.update_interval);
        if p_updated {
            state.p = target_distribution(&q)?;
            state.last_p_update = Some(l);
        }
        let rec = if self.config.sampled_reconstruction {
            reconstruction_loss_sampled(self.graph, z, &mut self.rng)?
        } else {
            reconstruction_loss(self.graph, z)?
        };
        let gamma = self.config.gamma;
        let p = state.p.clone();
        let metrics = match (self.config.track_metrics, self.graph.labels()) {
            (true, Some(truth)) => {
                Some(MetricPoint::from(&MetricsReport::compute(&hard_labels(&q), truth)?))
            }
            _ => None,
        };
        state.q = q;
        state.mu = mu;
        let loss = joint_loss_backward(&mut self.model, x, self.prox, &out, rec, &p, gamma)?;
        if !loss.total.is_finite() {
            return Err(TrainerError::NonFinite {
                phase: "joint training",
                step: l,
                l_r: loss.l_r,
                l_c: loss.l_c,
            });
        }
        self.optimizer.step(&mut self.model.params);
        if !self.model.params.all_finite() {
            return Err(TrainerError::NonFinite {
                phase: "joint training",
                step: l,
                l_r: loss.l_r,
                l_c: loss.l_c,
            });
        }
        self.cluster.as_mut().unwrap().mu = self.model.params.value(MU).clone();
        self.last_forward = Some(out);

        let entry = IterationRecord {
            iteration: l,
            l_r: loss.l_r,
            l_c: loss.l_c,
            total: loss.total,
            p_updated,
            metrics,
        };
        self.record.iterations.push(entry.clone());
        Ok(entry)
    }

    /// Final labels from `Q` under the trained parameters and centers.
    pub fn finish(&mut self) -> Result<RunRecord, TrainerError> {
        self.require(Phase::Joint, "finish")?;
        let z = self.embedding()?;
        let mu = self.model.params.value(MU).clone();
        let q = soft_assign(&z, &mu)?;
        let labels = hard_labels(&q);
        if let Some(truth) = self.graph.labels() {
            self.record.final_metrics = Some(MetricsReport::compute(&labels, truth)?);
        }
        let state = self.cluster.as_mut().expect("joint phase has cluster state");
        state.q = q;
        state.mu = mu;
        self.record.final_labels = labels;
        self.record.wall_time_secs = self.elapsed_before + self.started.elapsed().as_secs_f64();
        self.phase = Phase::Finished;
        Ok(self.record.clone())
    }

    /// Pretraining, cluster initialization and all remaining joint iterations.
    pub fn run(&mut self) -> Result<RunRecord, TrainerError> {
        if self.phase == Phase::Pretrain {
            self.pretrain()?;
            self.init_clusters()?;
        }
        while self.record.iterations.len() < self.config.joint_iters {
            self.joint_step()?;
        }
        self.finish()
    }

    /// Serializes parameters, optimizer moments, the target distribution and every
    /// counter needed to resume bit-exactly.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>, TrainerError> {
        let params = self.model.params.params();
        let mut names: Vec<String> = Vec::new();
        let mut tensors: Vec<&Tensor> = Vec::new();
        for p in params {
            names.push(p.name.clone());
            tensors.push(&p.value);
        }
        for (p, m) in params.iter().zip(&self.optimizer.first_moment) {
            names.push(format!("adam_m.{}", p.name));
            tensors.push(m);
        }
        for (p, v) in params.iter().zip(&self.optimizer.second_moment) {
            names.push(format!("adam_v.{}", p.name));
            tensors.push(v);
        }
        if let Some(state) = &self.cluster {
            names.push("p".into());
            tensors.push(&state.p);
            names.push("q".into());
            tensors.push(&state.q);
        }
        let meta = json!({
            "phase": self.phase,
            "input_dim": self.model.input_dim(),
            "optimizer_steps": self.optimizer.step_count,
            "last_p_update": self.cluster.as_ref().and_then(|c| c.last_p_update),
            "rng_word_pos": self.rng.get_word_pos().to_string(),
            "record": self.record,
        });
        let pairs: Vec<(&str, &Tensor)> = names.iter().map(String::as_str).zip(tensors).collect();
        Ok(encode_checkpoint(self.config.seed, meta, &pairs)?)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainerError> {
        std::fs::write(path, self.checkpoint_bytes()?)?;
        Ok(())
    }

    pub fn from_checkpoint_bytes(
        graph: &'a Graph,
        prox: &'a ProximityMatrix,
        bytes: &[u8],
    ) -> Result<Self, TrainerError> {
        let (header, tensors) = decode_checkpoint(bytes)?;
        let bad = |m: &str| TrainerError::Checkpoint(m.to_string());
        let meta = &header.meta;
        let record: RunRecord = serde_json::from_value(meta["record"].clone())
            .map_err(|e| TrainerError::Checkpoint(format!("run record: {e}")))?;
        let phase: Phase = serde_json::from_value(meta["phase"].clone())
            .map_err(|e| TrainerError::Checkpoint(format!("phase: {e}")))?;
        let word_pos: u128 = meta["rng_word_pos"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("rng_word_pos"))?;
        let steps = meta["optimizer_steps"].as_u64().ok_or_else(|| bad("optimizer_steps"))?;
        let last_p_update = meta["last_p_update"].as_u64().map(|v| v as usize);

        let mut trainer = Trainer::new(graph, prox, record.config.clone())?;
        if meta["input_dim"].as_u64() != Some(graph.num_attributes() as u64) {
            return Err(bad("attribute width differs from the checkpointed model"));
        }
        let lookup = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| TrainerError::Checkpoint(format!("missing tensor {name}")))
        };
        let joint = phase != Phase::Pretrain;
        if joint {
            trainer.model.params.add("mu", lookup("mu")?)?;
            trainer.optimizer = Optimizer::new(
                trainer.config.optimizer_config(trainer.config.lr_joint),
                &trainer.model.params,
            );
        }
        let names: Vec<String> = trainer
            .model
            .params
            .params()
            .iter()
            .map(|p| p.name.clone())
            .collect();
        for (idx, name) in names.iter().enumerate() {
            trainer.model.params.set_value(idx, lookup(name)?)?;
            trainer.optimizer.first_moment[idx] = lookup(&format!("adam_m.{name}"))?;
            trainer.optimizer.second_moment[idx] = lookup(&format!("adam_v.{name}"))?;
        }
        trainer.optimizer.step_count = steps;
        if joint {
            trainer.cluster = Some(ClusterState {
                mu: trainer.model.params.value(MU).clone(),
                q: lookup("q")?,
                p: lookup("p")?,
                last_p_update,
            });
        }
        trainer.rng.set_word_pos(word_pos);
        trainer.elapsed_before = record.wall_time_secs;
        trainer.record = record;
        trainer.phase = phase;
        Ok(trainer)
    }

    pub fn load_checkpoint(
        graph: &'a Graph,
        prox: &'a ProximityMatrix,
        path: &Path,
    ) -> Result<Self, TrainerError> {
        let bytes = std::fs::read(path)?;
        Self::from_checkpoint_bytes(graph, prox, &bytes)
    }
}

/// Full training run on an already-built proximity matrix.
pub fn fit(
    graph: &Graph,
    prox: &ProximityMatrix,
    config: &TrainConfig,
) -> Result<RunRecord, TrainerError> {
    Trainer::new(graph, prox, config.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proximity::proximity;
    use crate::synthetic::two_cliques;

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden: 16,
            embed: 4,
            pretrain_epochs: 30,
            joint_iters: 12,
            lr_joint: 0.005,
            kmeans: KMeansConfig {
                restarts: 4,
                ..KMeansConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.gamma, c.t, c.update_interval), (10.0, 2, 5));
        assert_eq!((c.pretrain_epochs, c.joint_iters), (200, 200));
        assert_eq!((c.lr_pretrain, c.lr_joint), (0.005, 1e-4));
        assert_eq!((c.hidden, c.embed), (256, 16));
        assert_eq!(c.output_activation, Activation::Identity);
        let c: TrainConfig = serde_json::from_str(r#"{"T": 3, "gamma": 0}"#).unwrap();
        assert_eq!((c.update_interval, c.gamma), (3, 0.0));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"gama": 1}"#).is_err());
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            TrainConfig { gamma: -1.0, ..TrainConfig::default() },
            TrainConfig { update_interval: 0, ..TrainConfig::default() },
            TrainConfig { joint_iters: 0, ..TrainConfig::default() },
            TrainConfig { lr_joint: 0.0, ..TrainConfig::default() },
            TrainConfig { t: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainerError::Config(_))));
        }
    }

    #[test]
    fn zero_pretrain_epochs_keeps_initial_embedding() {
        let g = two_cliques(5, 0);
        let prox = proximity(&g, 2).unwrap();
        let cfg = TrainConfig { pretrain_epochs: 0, ..small_config() };
        let mut tr = Trainer::new(&g, &prox, cfg.clone()).unwrap();
        let before = tr.embedding().unwrap();
        let after = tr.pretrain().unwrap();
        assert_eq!(before, after);
        let fresh = GatAutoencoder::new(g.num_attributes(), cfg.encoder_config(), purpose_seed(0, STREAM_INIT));
        assert_eq!(fresh.forward(g.attributes(), &prox, None).unwrap().embedding, after);
    }

    #[test]
    fn pretraining_reduces_loss() {
        // Two disjoint 4-cliques. With every ordered pair scored, including the
        // diagonal, the best attainable loss is (72 ln(10/9) + 8 ln 10) / 64.
        let mut attrs = Tensor::zeros(8, 2);
        let mut edges = Vec::new();
        for b in 0..2 {
            for i in 0..4 {
                attrs.set(4 * b + i, b, 1.0);
                for j in i + 1..4 {
                    edges.push((4 * b + i, 4 * b + j));
                }
            }
        }
        let g = Graph::new(edges, attrs, Some(vec![0, 0, 0, 0, 1, 1, 1, 1])).unwrap();
        let prox = proximity(&g, 2).unwrap();
        let cfg = TrainConfig { pretrain_epochs: 500, ..TrainConfig::default() };
        let mut tr = Trainer::new(&g, &prox, cfg).unwrap();
        tr.pretrain().unwrap();
        let losses = &tr.record().pretrain_loss;
        assert_eq!(losses.len(), 500);
        assert!(losses[499] <= 0.5 * losses[0], "{} -> {}", losses[0], losses[499]);
        let optimum = (72.0 * (10.0f64 / 9.0).ln() + 8.0 * 10.0f64.ln()) / 64.0;
        assert!(losses[499] >= optimum - 1e-9);
    }

    #[test]
    fn target_updates_follow_interval() {
        let g = two_cliques(5, 0);
        let prox = proximity(&g, 2).unwrap();
        let cfg = TrainConfig { update_interval: 3, joint_iters: 10, ..small_config() };
        let rec = fit(&g, &prox, &cfg).unwrap();
        let updated: Vec<usize> = rec
            .iterations
            .iter()
            .filter(|r| r.p_updated)
            .map(|r| r.iteration)
            .collect();
        assert_eq!(updated, vec![0, 3, 6, 9]);
        for r in &rec.iterations {
            assert!((r.total - (r.l_r + cfg.gamma * r.l_c)).abs() <= 1e-12);
        }
        assert_eq!(rec.iterations.len(), 10);
        assert_eq!(rec.final_labels.len(), g.n());
    }

    #[test]
    fn gamma_zero_labels_come_from_final_q() {
        let g = two_cliques(5, 0);
        let prox = proximity(&g, 2).unwrap();
        let cfg = TrainConfig { gamma: 0.0, ..small_config() };
        let mut tr = Trainer::new(&g, &prox, cfg).unwrap();
        let rec = tr.run().unwrap();
        let z = tr.embedding().unwrap();
        let mu = tr.cluster_state().unwrap().mu.clone();
        assert_eq!(rec.final_labels, hard_labels(&soft_assign(&z, &mu).unwrap()));
        assert!(rec.iterations.iter().all(|r| r.total == r.l_r));
    }

    #[test]
    fn missing_k_and_oversized_k() {
        let g = two_cliques(3, 0);
        let unlabeled = Graph::new(g.edges().to_vec(), g.attributes().clone(), None).unwrap();
        let prox = proximity(&unlabeled, 2).unwrap();
        assert!(matches!(
            Trainer::new(&unlabeled, &prox, small_config()),
            Err(TrainerError::MissingK)
        ));
        let cfg = TrainConfig { k: Some(100), ..small_config() };
        assert!(matches!(
            Trainer::new(&unlabeled, &prox, cfg),
            Err(TrainerError::Cluster(ClusterError::TooFewPoints { .. }))
        ));
    }

    #[test]
    fn joint_step_before_init_is_rejected() {
        let g = two_cliques(3, 0);
        let prox = proximity(&g, 2).unwrap();
        let mut tr = Trainer::new(&g, &prox, small_config()).unwrap();
        assert!(matches!(tr.joint_step(), Err(TrainerError::Phase(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let g = two_cliques(4, 0);
        let prox = proximity(&g, 2).unwrap();
        let mut tr = Trainer::new(&g, &prox, small_config()).unwrap();
        tr.pretrain().unwrap();
        tr.init_clusters().unwrap();
        tr.joint_step().unwrap();
        let bytes = tr.checkpoint_bytes().unwrap();
        let loaded = Trainer::from_checkpoint_bytes(&g, &prox, &bytes).unwrap();
        assert_eq!(loaded.checkpoint_bytes().unwrap(), bytes);
        assert!(matches!(
            Trainer::from_checkpoint_bytes(&g, &prox, &bytes[..bytes.len() - 3]),
            Err(TrainerError::Kernel(KernelError::Checkpoint(_)))
        ));
    }

    #[test]
    fn resumed_run_matches_unbroken_run() {
        let g = two_cliques(4, 2);
        let prox = proximity(&g, 2).unwrap();
        let cfg = TrainConfig { joint_iters: 10, dropout: 0.1, ..small_config() };
        let unbroken = fit(&g, &prox, &cfg).unwrap();

        let mut tr = Trainer::new(&g, &prox, cfg.clone()).unwrap();
        tr.pretrain().unwrap();
        tr.init_clusters().unwrap();
        for _ in 0..5 {
            tr.joint_step().unwrap();
        }
        let bytes = tr.checkpoint_bytes().unwrap();
        drop(tr);
        let mut resumed = Trainer::from_checkpoint_bytes(&g, &prox, &bytes).unwrap();
        let rec = resumed.run().unwrap();
        let bits = |r: &RunRecord| -> Vec<u64> {
            r.loss_trajectory().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&rec), bits(&unbroken));
        assert_eq!(rec.final_labels, unbroken.final_labels);
    }
}
