//! Training loop, evaluation and checkpoints.
//!
//! Each epoch re-clusters the global features of the whole training set,
//! seeds the three banks from the current encoder, then walks PK-sampled
//! batches: forward the augmented and masked views, average the per-query
//! losses, take one Adam step, and fold the batch into the banks.

mod checkpoint;
mod eval;
mod sampler;
mod telemetry;

pub use checkpoint::{file_sha256, Checkpoint, CHECKPOINT_VERSION};
pub use eval::{evaluate, score, EvalReport, Meta, DEFAULT_MAX_RANK};
pub use sampler::pk_sample;
pub use telemetry::{write_epoch, write_header, EpochSummary, StepRecord, TELEMETRY_COLUMNS};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::clustering::{relabel_epoch, DbscanConfig, PseudoLabeling};
use crate::data::{augment, Dataset, Image, MaskStrategy};
use crate::encoder::{adam_step, lr_at, AdamConfig, AdamState, EncoderConfig, FeatureEncoder, MlpEncoder, MAX_EPOCH};
use crate::error::{Error, Result};
use crate::losses::{
    baseline_ccl, batch_hard_triplet, hcl, id_loss, pcl, total, wrccl, wrccl_weight, LossConfig, LossParts, Term,
};
use crate::memory::{
    init_banks, update_cluster, update_instance, ClusterBank, InstanceBank, MomentumConfig, UpdatePolicy,
};
use crate::rng::{derive, Rng, TAG_EPOCH, TAG_INIT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clusters per batch (P).
    pub batch_identities: usize,
    /// Samples per cluster (k).
    pub images_per_identity: usize,
    /// Peak of the learning-rate schedule.
    pub base_lr: f64,
    /// Random flip and pad-crop on the unmasked view.
    pub augment: bool,
    pub seed: u64,
    pub mask_strategy: MaskStrategy,
    pub cluster_update_policy: UpdatePolicy,
    pub dbscan: DbscanConfig,
    pub momentum: MomentumConfig,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_identities: 8,
            images_per_identity: 4,
            base_lr: 3.5e-4,
            augment: true,
            seed: 0,
            mask_strategy: MaskStrategy::Random,
            cluster_update_policy: UpdatePolicy::All,
            dbscan: DbscanConfig::default(),
            momentum: MomentumConfig::default(),
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs > MAX_EPOCH {
            out.push(format!("epochs = {} exceeds the {MAX_EPOCH}-epoch schedule", self.epochs));
        }
        if self.batch_identities == 0 || self.images_per_identity == 0 {
            out.push("batch_identities and images_per_identity must be at least 1".into());
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            out.push(format!("base_lr = {} must be finite and nonnegative", self.base_lr));
        }
        if !(self.dbscan.eps > 0.0) || self.dbscan.min_pts == 0 {
            out.push("dbscan needs eps > 0 and min_pts >= 1".into());
        }
        for r in [self.momentum.validate(), self.loss.validate()] {
            if let Err(e) = r {
                out.push(e.to_string());
            }
        }
        if !(self.adam.beta1 >= 0.0 && self.adam.beta1 < 1.0 && self.adam.beta2 >= 0.0 && self.adam.beta2 < 1.0) {
            out.push("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam.eps > 0.0) {
            out.push("adam eps must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

/// Encoder, optimizer and progress for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    encoder: MlpEncoder,
    adam: AdamState,
    epoch: usize,
    train: Dataset,
}

fn check_data(config: &TrainConfig, train: &Dataset) -> Result<()> {
    let e = &config.encoder;
    if train.image_shape() != (e.height, e.width, e.channels) {
        return Err(Error::InvalidInput(format!(
            "training images are {:?}, encoder expects {:?}",
            train.image_shape(),
            (e.height, e.width, e.channels)
        )));
    }
    let batch = config.batch_identities * config.images_per_identity;
    if batch > train.len() {
        return Err(Error::InvalidInput(format!("batch of {batch} exceeds the {} training samples", train.len())));
    }
    Ok(())
}

impl Trainer {
    pub fn new(config: TrainConfig, train: Dataset) -> Result<Self> {
        config.validate()?;
        check_data(&config, &train)?;
        let encoder = MlpEncoder::new(config.encoder.clone(), &mut derive(config.seed, &[TAG_INIT]))?;
        let adam = AdamState::for_blocks(encoder.param_blocks().iter().map(|b| b.len()));
        Ok(Self { config, encoder, adam, epoch: 0, train })
    }

    /// Resumes from a checkpoint. The checkpoint's config wins.
    pub fn from_checkpoint(ckpt: Checkpoint, train: Dataset) -> Result<Self> {
        ckpt.config.validate()?;
        check_data(&ckpt.config, &train)?;
        let encoder = ckpt.encoder()?;
        Ok(Self { config: ckpt.config, encoder, adam: ckpt.adam, epoch: ckpt.epoch, train })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &MlpEncoder {
        &self.encoder
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            params: self.encoder.param_blocks().iter().map(|b| b.to_vec()).collect(),
            adam: self.adam.clone(),
        }
    }

    /// Runs the remaining epochs, handing each summary to `on_epoch`.
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&EpochSummary) -> Result<()>,
    {
        while !self.is_done() {
            let summary = self.train_epoch()?;
            on_epoch(&summary)?;
        }
        Ok(())
    }

    pub fn train_epoch(&mut self) -> Result<EpochSummary> {
        self.run_epoch().map(|(summary, ..)| summary)
    }

    /// Also returns the banks as seeded at the start of the epoch and as left at its end.
    fn run_epoch(&mut self) -> Result<(EpochSummary, EpochBanks, EpochBanks)> {
        let epoch = self.epoch + 1;
        if epoch > self.config.epochs {
            return Err(Error::InvalidInput(format!("all {} epochs already ran", self.config.epochs)));
        }
        let mut rng = derive(self.config.seed, &[TAG_EPOCH, epoch as u64]);
        let images = self.train.images();
        let f_global = self.encoder.features(&images)?;
        let labeling = relabel_epoch(f_global.view(), &self.config.dbscan)?;
        let masked: Vec<Image> = images
            .iter()
            .map(|img| self.config.mask_strategy.apply(img, &mut rng).map(|m| m.image))
            .collect::<Result<_>>()?;
        let f_part = self.encoder.features(&masked.iter().collect::<Vec<_>>())?;
        let (mut part_bank, mut global_bank, mut cluster_bank) = init_banks(f_part.view(), f_global.view(), &labeling)?;
        let mut head = IdHead::new(&self.config, &cluster_bank);
        let initial =
            EpochBanks { part: part_bank.clone(), global: global_bank.clone(), clusters: cluster_bank.clone() };

        let batch = self.config.batch_identities * self.config.images_per_identity;
        // a fixed number of steps per epoch, however many samples clustered
        let steps = labeling.len().div_ceil(batch);
        let lr = lr_at(epoch, self.config.base_lr)?;
        let mut records = Vec::with_capacity(steps);
        for step in 1..=steps {
            let mut banks = Banks { part: &mut part_bank, global: &mut global_bank, clusters: &mut cluster_bank };
            let mut record = self.train_step(&labeling, &mut banks, &mut head, lr, &mut rng)?;
            record.epoch = epoch;
            record.step = step;
            record.lr = lr;
            record.clusters = labeling.num_clusters();
            record.outliers = labeling.num_outliers();
            if !record.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: step, terms: format!("{record:?}") });
            }
            records.push(record);
        }
        self.epoch = epoch;
        let summary = EpochSummary {
            epoch,
            clusters: labeling.num_clusters(),
            outliers: labeling.num_outliers(),
            steps: records,
        };
        let last = EpochBanks { part: part_bank, global: global_bank, clusters: cluster_bank };
        Ok((summary, initial, last))
    }

    fn train_step(
        &mut self,
        labeling: &PseudoLabeling,
        banks: &mut Banks<'_>,
        head: &mut IdHead,
        lr: f64,
        rng: &mut Rng,
    ) -> Result<StepRecord> {
        let cfg = &self.config;
        let p = cfg.batch_identities.min(labeling.num_clusters());
        let idx = pk_sample(labeling, p, cfg.images_per_identity, rng)?;
        let labels: Vec<usize> = idx.iter().map(|&i| labeling.label(i).expect("sampled from a cluster")).collect();
        let mut views = Vec::with_capacity(idx.len());
        let mut masked = Vec::with_capacity(idx.len());
        for &i in &idx {
            let img = &self.train.samples[i].image;
            let view = if cfg.augment { augment(img, rng) } else { img.clone() };
            masked.push(cfg.mask_strategy.apply(&view, rng)?.image);
            views.push(view);
        }
        let (q, cache_g) = self.encoder.encode(&views.iter().collect::<Vec<_>>())?;
        let (qm, cache_p) = self.encoder.encode(&masked.iter().collect::<Vec<_>>())?;

        let b = idx.len();
        let scale = 1.0 / b as f64;
        let mut grad_g = Array2::zeros(q.dim());
        let mut grad_p = Array2::zeros(qm.dim());
        let mut head_grad = Array2::zeros(head.weights.dim());
        let mut rec = StepRecord::default();
        for i in 0..b {
            let (qi, qmi) = (row(&q, i), row(&qm, i));
            let parts = query_parts(cfg, &qi, &qmi, i, &q, &labels, banks, head, &mut head_grad)?;
            rec.degenerate += parts.hcl_g.iter().chain(&parts.hcl_p).filter(|c| c.degenerate).count();
            let bundle = total(&parts, &cfg.loss, qi.len());
            for (acc, v) in [
                (&mut rec.pcl_g, bundle.pcl_g),
                (&mut rec.pcl_p, bundle.pcl_p),
                (&mut rec.hcl_g, bundle.hcl_g),
                (&mut rec.hcl_p, bundle.hcl_p),
                (&mut rec.wrccl, bundle.wrccl),
                (&mut rec.ccl, bundle.ccl),
                (&mut rec.id, bundle.id),
                (&mut rec.total, bundle.total),
            ] {
                *acc += v * scale;
            }
            grad_g.row_mut(i).scaled_add(scale, &ArrayView1::from(&bundle.grad_q));
            grad_p.row_mut(i).scaled_add(scale, &ArrayView1::from(&bundle.grad_q_masked));
        }
        if cfg.loss.baseline_triplet {
            for i in 0..b {
                // a single-cluster batch has no negatives; the anchor sits out
                let Ok(t) = batch_hard_triplet(i, q.view(), &labels, cfg.loss.triplet_margin) else {
                    continue;
                };
                rec.triplet += t.loss * scale;
                rec.total += t.loss * scale;
                grad_g.scaled_add(scale, &t.grad);
            }
        }

        if cfg.loss.any_enabled() && rec.total.is_finite() {
            let mut grads = self.encoder.backward(&cache_g, grad_g.view())?;
            if cfg.loss.uses_part_branch() {
                let part = self.encoder.backward(&cache_p, grad_p.view())?;
                for (g, pg) in grads.iter_mut().zip(part) {
                    g.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
                }
            }
            adam_step(&mut self.encoder.param_blocks_mut(), &grads, &mut self.adam, lr, &cfg.adam)?;
            if cfg.loss.baseline_id {
                head_grad *= scale;
                head.step(head_grad, lr, &cfg.adam)?;
            }
        }

        // banks take the pre-step features of this batch
        let m = &cfg.momentum;
        for (i, &s) in idx.iter().enumerate() {
            update_instance(banks.part, s, &row(&qm, i), m.alpha)?;
            update_instance(banks.global, s, &row(&q, i), m.beta)?;
        }
        let mut seen = Vec::new();
        for &k in &labels {
            if seen.contains(&k) {
                continue;
            }
            seen.push(k);
            let members: Vec<ArrayView1<f64>> = (0..b).filter(|&i| labels[i] == k).map(|i| q.row(i)).collect();
            update_cluster(banks.clusters, k, &members, m.gamma, cfg.cluster_update_policy, rng)?;
        }
        Ok(rec)
    }
}

fn row(m: &Array2<f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

/// Bank contents at one point of an epoch, kept for inspection in tests.
#[derive(Debug, Clone)]
#[cfg_attr(not(test), allow(dead_code))]
struct EpochBanks {
    part: InstanceBank,
    global: InstanceBank,
    clusters: ClusterBank,
}

struct Banks<'a> {
    part: &'a mut InstanceBank,
    global: &'a mut InstanceBank,
    clusters: &'a mut ClusterBank,
}

/// Linear classifier for the identity baseline, re-seeded every epoch from
/// the centroids because the number of pseudo classes changes.
struct IdHead {
    weights: Array2<f64>,
    adam: AdamState,
}

impl IdHead {
    fn new(cfg: &TrainConfig, clusters: &ClusterBank) -> Self {
        if !cfg.loss.baseline_id {
            return Self { weights: Array2::zeros((0, 0)), adam: AdamState::for_blocks([]) };
        }
        let weights = clusters.rows().mapv(|v| v / cfg.loss.tau);
        let adam = AdamState::for_blocks([weights.len()]);
        Self { weights, adam }
    }

    fn step(&mut self, grad: Array2<f64>, lr: f64, cfg: &AdamConfig) -> Result<()> {
        let grads = vec![grad.into_raw_vec_and_offset().0];
        let params = self.weights.as_slice_mut().expect("standard layout");
        adam_step(&mut [params], &grads, &mut self.adam, lr, cfg)
    }
}

/// Evaluates the enabled loss terms for query `i` of the batch.
#[allow(clippy::too_many_arguments)]
fn query_parts(
    cfg: &TrainConfig,
    q: &[f64],
    q_masked: &[f64],
    i: usize,
    batch: &Array2<f64>,
    labels: &[usize],
    banks: &Banks<'_>,
    head: &IdHead,
    head_grad: &mut Array2<f64>,
) -> Result<LossParts> {
    let l = &cfg.loss;
    let y = labels[i];
    let mut parts = LossParts::default();
    if l.enable_pcl {
        parts.pcl = Some(pcl(q, q_masked, banks.clusters.row(y))?);
    }
    if l.enable_hcl {
        parts.hcl_g = Some(hcl(q, banks.global, y, l.tau)?);
        parts.hcl_p = Some(hcl(q_masked, banks.part, y, l.tau)?);
    }
    if l.enable_wrccl {
        let same: Vec<&[f64]> = batch
            .axis_iter(Axis(0))
            .zip(labels)
            .filter(|(_, &yj)| yj == y)
            .map(|(r, _)| r.to_slice().expect("standard layout"))
            .collect();
        let w = wrccl_weight(q, &same)?;
        parts.wrccl = Some(wrccl(q, banks.clusters, y, w, l.tau)?);
    }
    if l.baseline_ccl {
        parts.ccl = Some(baseline_ccl(q, banks.clusters, y, l.tau)?);
    }
    if l.baseline_id {
        let t = id_loss(q, head.weights.view(), y)?;
        *head_grad += &t.grad_head;
        parts.id = Some(Term { loss: t.loss, grad: t.grad_q });
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    fn small(seed: u64, eps: f64) -> (TrainConfig, Dataset) {
        let data = gen_synthetic(8, 8, 16, 16, seed).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            seed,
            encoder: EncoderConfig { height: 16, width: 16, hidden: 32, dim: 16, ..Default::default() },
            dbscan: DbscanConfig { eps, min_pts: 3 },
            ..Default::default()
        };
        (cfg, data.train)
    }

    fn params(t: &Trainer) -> Vec<Vec<f64>> {
        t.encoder.param_blocks().iter().map(|b| b.to_vec()).collect()
    }

    #[test]
    fn zero_lr_freezes_params_but_not_banks() {
        let (mut cfg, train) = small(1, 0.3);
        cfg.base_lr = 0.0;
        let mut t = Trainer::new(cfg, train).unwrap();
        let before = params(&t);
        let (summary, first, last) = t.run_epoch().unwrap();
        assert!(summary.clusters >= 1);
        assert_eq!(params(&t), before);
        assert!(t.adam.step > 0, "the optimizer still ran");
        // augmented and masked views differ from the seeding views
        assert_ne!(first.global.rows(), last.global.rows());
        assert_ne!(first.part.rows(), last.part.rows());
        assert_ne!(first.clusters.rows(), last.clusters.rows());
    }

    #[test]
    fn disabled_losses_leave_params_alone() {
        let (mut cfg, train) = small(2, 0.3);
        cfg.loss = LossConfig::none();
        let mut t = Trainer::new(cfg, train).unwrap();
        let before = params(&t);
        let s = t.train_epoch().unwrap();
        assert_eq!(params(&t), before);
        assert_eq!(t.adam.step, 0);
        assert!(s.steps.iter().all(|r| r.total == 0.0));
    }

    #[test]
    fn single_cluster_epoch_runs_the_degenerate_path() {
        // every cosine distance is at most 2
        let (cfg, train) = small(3, 2.0);
        let mut t = Trainer::new(cfg, train).unwrap();
        let s = t.train_epoch().unwrap();
        assert_eq!(s.clusters, 1);
        assert_eq!(s.outliers, 0);
        assert!(s.steps.iter().all(|r| r.degenerate > 0 && r.total.is_finite()));
        // with a single centroid the cluster contrast is exactly zero
        assert!(s.steps.iter().all(|r| r.wrccl == 0.0));
    }

    #[test]
    fn single_cluster_with_triplet_skips_anchors() {
        let (mut cfg, train) = small(3, 2.0);
        cfg.loss = LossConfig { baseline_triplet: true, baseline_id: true, ..LossConfig::none() };
        let mut t = Trainer::new(cfg, train).unwrap();
        let s = t.train_epoch().unwrap();
        assert!(s.steps.iter().all(|r| r.triplet == 0.0 && r.id.abs() < 1e-12));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (cfg, train) = small(4, 0.3);
        let mut straight = Trainer::new(cfg.clone(), train.clone()).unwrap();
        let mut expected = Vec::new();
        straight
            .run(|s| {
                expected.push(s.clone());
                Ok(())
            })
            .unwrap();

        let mut first = Trainer::new(cfg, train.clone()).unwrap();
        let mut got = vec![first.train_epoch().unwrap(), first.train_epoch().unwrap()];
        let bytes = first.checkpoint().to_bytes().unwrap();
        drop(first);
        let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap(), train).unwrap();
        assert_eq!(resumed.epoch(), 2);
        resumed
            .run(|s| {
                got.push(s.clone());
                Ok(())
            })
            .unwrap();

        assert_eq!(got, expected);
        assert_eq!(resumed.checkpoint().to_bytes().unwrap(), straight.checkpoint().to_bytes().unwrap());
    }

    #[test]
    fn finished_trainer_refuses_more_epochs() {
        let (mut cfg, train) = small(5, 0.3);
        cfg.epochs = 1;
        let mut t = Trainer::new(cfg, train).unwrap();
        t.train_epoch().unwrap();
        assert!(t.is_done());
        assert!(t.train_epoch().is_err());
    }

    #[test]
    fn rejects_mismatched_images_and_bad_config() {
        let (mut cfg, train) = small(6, 0.3);
        cfg.encoder.height = 32;
        assert!(Trainer::new(cfg, train.clone()).is_err());
        let (mut cfg, _) = small(6, 0.3);
        cfg.epochs = MAX_EPOCH + 1;
        cfg.base_lr = f64::NAN;
        assert_eq!(cfg.problems().len(), 2);
        assert!(Trainer::new(cfg, train).is_err());
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = TrainConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.loss, LossConfig::default());
    }
}
