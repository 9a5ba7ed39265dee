use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::{make_examples, TrainExample};
use super::supervised::{streams, supervised_update, validation_j};
use super::{
    batches_per_pass, derive_seed, extract_params, insert_params, lambda1_schedule,
    load_checkpoint, lr_schedule, save_checkpoint, BatchStream, Checkpoint, Sgd, StepRecord,
    TrainConfig, TrainError, TrainHistory, ValRecord, CHECKPOINT_FILE,
};
use crate::datasets::{normalize_flow, pad_flow_channels, FrameSample};
use crate::losses::{
    confusion_loss, confusion_loss_backward, discriminator_loss, discriminator_loss_backward,
};
use crate::model::{init_target_encoder, Discriminator, Encoder, SegModel};
use crate::nn::{InitRng, Map, ParamSet, Scalar};

/// Drops the mask from a frame so downstream code cannot read target labels
/// even by accident.
fn unlabeled_view(sample: &FrameSample) -> FrameSample {
    FrameSample { mask: None, ..sample.clone() }
}

fn full_frame_flow(sample: &FrameSample, flow_scale: f32) -> Map<f32> {
    pad_flow_channels(&normalize_flow(&sample.flow, flow_scale))
}

/// Fraction of held-out frames the discriminator classifies correctly
/// (source above 0.5, target below). Near 0.5 means the domains are
/// confused — the goal state of adversarial adaptation.
fn held_out_accuracy(
    model: &SegModel<f32>,
    encoder_for_target: &Encoder<f32>,
    disc: &Discriminator<f32>,
    source: &[FrameSample],
    target: &[FrameSample],
    flow_scale: f32,
) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for sample in source {
        let (fused, _) = model.features(&sample.image, &full_frame_flow(sample, flow_scale))?;
        let (p, _) = disc.forward(&fused);
        correct += usize::from(p > 0.5);
        total += 1;
    }
    for sample in target {
        let (fused, _) = model.features_with_encoder(
            encoder_for_target,
            &sample.image,
            &full_frame_flow(sample, flow_scale),
        )?;
        let (p, _) = disc.forward(&fused);
        correct += usize::from(p < 0.5);
        total += 1;
    }
    Ok(correct as f64 / total as f64)
}

/// Joint supervised training and adversarial adaptation with a single
/// shared encoder. Each step runs three sub-steps in order: a supervised
/// update on a source batch, an adversarial encoder update on a target
/// batch, and a discriminator update on both. The three optimizers walk
/// disjoint parameter sets, so each sub-step provably leaves the other
/// modules untouched.
pub struct SharedUdaTrainer {
    pub config: TrainConfig,
    pub model: SegModel<f32>,
    pub disc: Discriminator<f32>,
    pub history: TrainHistory,
    opt_main: Sgd<f32, SegModel<f32>>,
    opt_enc: Sgd<f32, Encoder<f32>>,
    opt_disc: Sgd<f32, Discriminator<f32>>,
    epoch: usize,
    step: u64,
}

impl SharedUdaTrainer {
    pub fn new(config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = SegModel::new(&config.model, config.seed);
        let mut disc_rng = InitRng::new(derive_seed(config.seed, &[streams::DISC_INIT]));
        let disc = Discriminator::new(
            config.model.feature_channels(),
            &config.model.disc_widths,
            &mut disc_rng,
        );
        let opt_main = Sgd::new(&model, config.momentum, config.weight_decay);
        // The adversarial and discriminator optimizers run without weight
        // decay: the encoder already receives decay in the supervised
        // sub-step, and the discriminator is an adversary we do not
        // regularize toward zero.
        let opt_enc = Sgd::new(&model.encoder, config.momentum, 0.0);
        let opt_disc = Sgd::new(&disc, config.disc_momentum, 0.0);
        Ok(SharedUdaTrainer {
            config: config.clone(),
            model,
            disc,
            history: TrainHistory::default(),
            opt_main,
            opt_enc,
            opt_disc,
            epoch: 0,
            step: 0,
        })
    }

    /// Starts from a supervised checkpoint instead of fresh initialization.
    pub fn warm_start(config: &TrainConfig, path: &Path) -> Result<Self, TrainError> {
        let ckpt = load_checkpoint(path)?;
        ckpt.verify_fingerprint(&config.model)?;
        let mut trainer = Self::new(config)?;
        extract_params(&ckpt.tensors, "", &mut trainer.model)?;
        Ok(trainer)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn run(
        &mut self,
        source: &[FrameSample],
        target: &[FrameSample],
        val_target: Option<&[FrameSample]>,
        out_dir: Option<&Path>,
    ) -> Result<(), TrainError> {
        let target: Vec<FrameSample> = target.iter().map(unlabeled_view).collect();
        while self.epoch < self.config.epochs {
            self.train_epoch(source, &target)?;
            if let Some(val) = val_target {
                let j = validation_j(&self.model, val, self.config.flow_scale())?;
                self.history.validation.push(ValRecord { epoch: self.epoch as u64 - 1, j_mean: j });
            }
            if let Some(dir) = out_dir {
                self.save(&dir.join(CHECKPOINT_FILE))?;
            }
        }
        Ok(())
    }

    /// One epoch = one pass over the target set; source batches cycle as
    /// needed.
    pub fn train_epoch(
        &mut self,
        source: &[FrameSample],
        target: &[FrameSample],
    ) -> Result<(), TrainError> {
        let epoch = self.epoch;
        let lr = lr_schedule(self.config.learning_rate, epoch, self.config.lr_decay);
        let lambda1 = lambda1_schedule(epoch, self.config.epochs);
        let batch = self.config.batch_size;
        let crop = self.config.crop;
        let scale = self.config.flow_scale();

        let mut src_stream = BatchStream::new(source.len(), batch, self.config.seed, streams::SOURCE);
        let mut tgt_stream = BatchStream::new(target.len(), batch, self.config.seed, streams::TARGET);
        src_stream.start_epoch(epoch as u64);
        tgt_stream.start_epoch(epoch as u64);
        let mut src_aug = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[streams::AUG_SOURCE, epoch as u64],
        ));
        let mut tgt_aug = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[streams::AUG_TARGET, epoch as u64],
        ));

        for _ in 0..batches_per_pass(target.len(), batch) {
            let src_idx = src_stream.next_batch();
            for &i in &src_idx {
                if source[i].mask.is_none() {
                    return Err(TrainError::MissingLabel {
                        sequence: source[i].sequence_id.clone(),
                    });
                }
            }
            let src_batch = make_examples(source, &src_idx, crop, scale, true, &mut src_aug)?;
            let tgt_idx = tgt_stream.next_batch();
            let tgt_batch = make_examples(target, &tgt_idx, crop, scale, true, &mut tgt_aug)?;

            let (l_s, l_main, l_flow) = self.supervised_substep(&src_batch, lr)?;
            let l_ent = self.adversarial_substep(&tgt_batch, lr, lambda1)?;
            let (l_d, disc_acc) = self.discriminator_substep(&src_batch, &tgt_batch, lr)?;

            self.step += 1;
            self.history.push(StepRecord {
                step: self.step,
                epoch: epoch as u64,
                l_s,
                l_msk_main: l_main,
                l_msk_flow: l_flow,
                l_ent,
                l_d,
                lambda1,
                lr,
                disc_acc,
            })?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Sub-step (1): supervised update of the full segmentation model on a
    /// labeled source batch. Touches neither the discriminator nor its
    /// optimizer.
    pub fn supervised_substep(
        &mut self,
        src_batch: &[TrainExample],
        lr: f64,
    ) -> Result<(f64, f64, f64), TrainError> {
        supervised_update(&mut self.model, &mut self.opt_main, src_batch, &self.config.weights, lr)
    }

    /// Sub-step (2): adversarial update of the shared encoder on a target
    /// batch, minimizing `lambda1 ·` confusion loss with the discriminator
    /// frozen. A zero `lambda1` (epoch 0 of the ramp) skips the update
    /// entirely — even weight decay must not move the encoder then.
    pub fn adversarial_substep(
        &mut self,
        tgt_batch: &[TrainExample],
        lr: f64,
        lambda1: f64,
    ) -> Result<f64, TrainError> {
        let mut probs = Vec::with_capacity(tgt_batch.len());
        let mut traces = Vec::with_capacity(tgt_batch.len());
        for ex in tgt_batch {
            let (fused, trace) = self.model.features(&ex.image, &ex.flow3)?;
            let (p, dtrace) = self.disc.forward(&fused);
            probs.push(p);
            traces.push((trace, dtrace));
        }
        let l_ent = confusion_loss(&probs, self.config.weights.eps).to_f64_();
        if lambda1 > 0.0 {
            let dprobs = confusion_loss_backward(&probs, self.config.weights.eps);
            let mut enc_grads = self.model.encoder.zeros_like();
            let mut disc_sink = self.disc.zeros_like();
            for ((trace, dtrace), dp) in traces.iter().zip(dprobs) {
                let d_fused = self.disc.backward(dtrace, dp * lambda1 as f32, &mut disc_sink);
                self.model.backward_features_to_encoder(
                    &self.model.encoder,
                    trace,
                    &d_fused,
                    &mut enc_grads,
                );
            }
            self.opt_enc.step(&mut self.model.encoder, &enc_grads, lr)?;
        }
        Ok(l_ent)
    }

    /// Sub-step (3): discriminator update on freshly recomputed features of
    /// the same source and target batches (no gradient reaches the
    /// encoder). Returns the weighted loss and the batch accuracy.
    pub fn discriminator_substep(
        &mut self,
        src_batch: &[TrainExample],
        tgt_batch: &[TrainExample],
        lr: f64,
    ) -> Result<(f64, f64), TrainError> {
        let probs_of = |model: &SegModel<f32>,
                        disc: &Discriminator<f32>,
                        batch: &[TrainExample]|
         -> Result<(Vec<f32>, Vec<_>), TrainError> {
            let mut probs = Vec::with_capacity(batch.len());
            let mut traces = Vec::with_capacity(batch.len());
            for ex in batch {
                let (fused, _) = model.features(&ex.image, &ex.flow3)?;
                let (p, dtrace) = disc.forward(&fused);
                probs.push(p);
                traces.push(dtrace);
            }
            Ok((probs, traces))
        };
        let (probs_s, traces_s) = probs_of(&self.model, &self.disc, src_batch)?;
        let (probs_t, traces_t) = probs_of(&self.model, &self.disc, tgt_batch)?;
        let eps = self.config.weights.eps;
        let lambda2 = self.config.weights.lambda2;
        let l_d = discriminator_loss(&probs_s, &probs_t, eps).to_f64_();
        let (dps, dpt) = discriminator_loss_backward(&probs_s, &probs_t, eps);
        let mut disc_grads = self.disc.zeros_like();
        for (dtrace, dp) in traces_s.iter().zip(dps).chain(traces_t.iter().zip(dpt)) {
            self.disc.backward(dtrace, dp * lambda2 as f32, &mut disc_grads);
        }
        self.opt_disc.step(&mut self.disc, &disc_grads, lr)?;
        let correct = probs_s.iter().filter(|&&p| p > 0.5).count()
            + probs_t.iter().filter(|&&p| p < 0.5).count();
        let acc = correct as f64 / (probs_s.len() + probs_t.len()) as f64;
        Ok((lambda2 * l_d, acc))
    }

    /// Held-out discriminator accuracy under the current shared encoder.
    pub fn discriminator_accuracy(
        &self,
        source: &[FrameSample],
        target: &[FrameSample],
    ) -> Result<f64, TrainError> {
        held_out_accuracy(
            &self.model,
            &self.model.encoder,
            &self.disc,
            source,
            target,
            self.config.flow_scale(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut ckpt = Checkpoint::new(&self.config, self.epoch as u64, self.step);
        insert_params(&mut ckpt.tensors, "", &self.model);
        insert_params(&mut ckpt.tensors, "", &self.disc);
        insert_params(&mut ckpt.tensors, "opt.main.", &self.opt_main.velocity);
        insert_params(&mut ckpt.tensors, "opt.enc.", &self.opt_enc.velocity);
        insert_params(&mut ckpt.tensors, "opt.disc.", &self.opt_disc.velocity);
        save_checkpoint(path, &ckpt)
    }
}

/// Post-hoc adaptation of a cloned target encoder against a frozen source
/// model: N discriminator iterations then M target-encoder iterations per
/// step. The source encoder, fusion layer, and decoders are never
/// optimized — nothing in this struct can write to them.
pub struct SeparatedUdaTrainer {
    pub config: TrainConfig,
    pub source_model: SegModel<f32>,
    pub target_encoder: Encoder<f32>,
    pub disc: Discriminator<f32>,
    pub history: TrainHistory,
    opt_enc: Sgd<f32, Encoder<f32>>,
    opt_disc: Sgd<f32, Discriminator<f32>>,
    epoch: usize,
    step: u64,
}

impl SeparatedUdaTrainer {
    /// Builds the adaptation stage around an already-trained source model.
    /// The target encoder starts as an exact copy of the source encoder.
    pub fn new(config: &TrainConfig, source_model: SegModel<f32>) -> Result<Self, TrainError> {
        config.validate()?;
        let target_encoder = init_target_encoder(&source_model.encoder);
        let mut disc_rng = InitRng::new(derive_seed(config.seed, &[streams::DISC_INIT]));
        let disc = Discriminator::new(
            source_model.config.feature_channels(),
            &source_model.config.disc_widths,
            &mut disc_rng,
        );
        let opt_enc = Sgd::new(&target_encoder, config.momentum, 0.0);
        let opt_disc = Sgd::new(&disc, config.disc_momentum, 0.0);
        Ok(SeparatedUdaTrainer {
            config: config.clone(),
            source_model,
            target_encoder,
            disc,
            history: TrainHistory::default(),
            opt_enc,
            opt_disc,
            epoch: 0,
            step: 0,
        })
    }

    /// Loads the frozen source model from a supervised checkpoint.
    pub fn from_checkpoint(config: &TrainConfig, path: &Path) -> Result<Self, TrainError> {
        let ckpt = load_checkpoint(path)?;
        ckpt.verify_fingerprint(&config.model)?;
        let mut model = SegModel::new(&config.model, 0);
        extract_params(&ckpt.tensors, "", &mut model)?;
        Self::new(config, model)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// The segmentation network for target-domain inference: the adapted
    /// encoder in front of the frozen fusion layer and decoder.
    pub fn adapted_model(&self) -> SegModel<f32> {
        let mut model = self.source_model.clone();
        model.encoder = self.target_encoder.clone();
        model
    }

    pub fn run(
        &mut self,
        source: &[FrameSample],
        target: &[FrameSample],
        val_target: Option<&[FrameSample]>,
        out_dir: Option<&Path>,
    ) -> Result<(), TrainError> {
        let target: Vec<FrameSample> = target.iter().map(unlabeled_view).collect();
        while self.epoch < self.config.epochs {
            self.train_epoch(source, &target)?;
            if let Some(val) = val_target {
                let j = validation_j(&self.adapted_model(), val, self.config.flow_scale())?;
                self.history.validation.push(ValRecord { epoch: self.epoch as u64 - 1, j_mean: j });
            }
            if let Some(dir) = out_dir {
                self.save(&dir.join(CHECKPOINT_FILE))?;
            }
        }
        Ok(())
    }

    /// One epoch: enough alternation blocks to consume one pass over the
    /// target set (each block uses N + M target batches).
    pub fn train_epoch(
        &mut self,
        source: &[FrameSample],
        target: &[FrameSample],
    ) -> Result<(), TrainError> {
        let epoch = self.epoch;
        let lr = lr_schedule(self.config.learning_rate, epoch, self.config.lr_decay);
        let batch = self.config.batch_size;
        let crop = self.config.crop;
        let scale = self.config.flow_scale();
        let (m, n) = (self.config.m, self.config.n);

        let mut src_stream = BatchStream::new(source.len(), batch, self.config.seed, streams::SOURCE);
        let mut tgt_stream = BatchStream::new(target.len(), batch, self.config.seed, streams::TARGET);
        src_stream.start_epoch(epoch as u64);
        tgt_stream.start_epoch(epoch as u64);
        let mut src_aug = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[streams::AUG_SOURCE, epoch as u64],
        ));
        let mut tgt_aug = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[streams::AUG_TARGET, epoch as u64],
        ));

        let steps = batches_per_pass(target.len(), batch).div_ceil(n + m).max(1);
        for _ in 0..steps {
            let mut l_d_sum = 0.0;
            let mut acc_sum = 0.0;
            for _ in 0..n {
                let src_idx = src_stream.next_batch();
                let src_batch = make_examples(source, &src_idx, crop, scale, true, &mut src_aug)?;
                let tgt_idx = tgt_stream.next_batch();
                let tgt_batch = make_examples(target, &tgt_idx, crop, scale, true, &mut tgt_aug)?;
                let (l_d, acc) = self.discriminator_iteration(&src_batch, &tgt_batch, lr)?;
                l_d_sum += l_d;
                acc_sum += acc;
            }
            let mut l_ent_sum = 0.0;
            for _ in 0..m {
                let tgt_idx = tgt_stream.next_batch();
                let tgt_batch = make_examples(target, &tgt_idx, crop, scale, true, &mut tgt_aug)?;
                l_ent_sum += self.encoder_iteration(&tgt_batch, lr)?;
            }

            self.step += 1;
            self.history.push(StepRecord {
                step: self.step,
                epoch: epoch as u64,
                l_s: 0.0,
                l_msk_main: 0.0,
                l_msk_flow: 0.0,
                l_ent: l_ent_sum / m as f64,
                l_d: l_d_sum / n as f64,
                lambda1: 0.0,
                lr,
                disc_acc: acc_sum / n as f64,
            })?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// One discriminator iteration: source features through the frozen
    /// source pathway, target features through the target encoder and the
    /// frozen fusion layer; only the discriminator is updated, with the
    /// loss weighted by `beta2`.
    pub fn discriminator_iteration(
        &mut self,
        src_batch: &[TrainExample],
        tgt_batch: &[TrainExample],
        lr: f64,
    ) -> Result<(f64, f64), TrainError> {
        let mut probs_s = Vec::with_capacity(src_batch.len());
        let mut traces_s = Vec::with_capacity(src_batch.len());
        for ex in src_batch {
            let (fused, _) = self.source_model.features(&ex.image, &ex.flow3)?;
            let (p, dtrace) = self.disc.forward(&fused);
            probs_s.push(p);
            traces_s.push(dtrace);
        }
        let mut probs_t = Vec::with_capacity(tgt_batch.len());
        let mut traces_t = Vec::with_capacity(tgt_batch.len());
        for ex in tgt_batch {
            let (fused, _) =
                self.source_model
                    .features_with_encoder(&self.target_encoder, &ex.image, &ex.flow3)?;
            let (p, dtrace) = self.disc.forward(&fused);
            probs_t.push(p);
            traces_t.push(dtrace);
        }
        let eps = self.config.weights.eps;
        let beta2 = self.config.weights.beta2;
        let l_d = discriminator_loss(&probs_s, &probs_t, eps).to_f64_();
        let (dps, dpt) = discriminator_loss_backward(&probs_s, &probs_t, eps);
        let mut disc_grads = self.disc.zeros_like();
        for (dtrace, dp) in traces_s.iter().zip(dps).chain(traces_t.iter().zip(dpt)) {
            self.disc.backward(dtrace, dp * beta2 as f32, &mut disc_grads);
        }
        self.opt_disc.step(&mut self.disc, &disc_grads, lr)?;
        let correct = probs_s.iter().filter(|&&p| p > 0.5).count()
            + probs_t.iter().filter(|&&p| p < 0.5).count();
        let acc = correct as f64 / (probs_s.len() + probs_t.len()) as f64;
        Ok((beta2 * l_d, acc))
    }

    /// One target-encoder iteration: minimize `beta1 ·` confusion loss with
    /// the discriminator, fusion layer, and decoders all frozen.
    pub fn encoder_iteration(
        &mut self,
        tgt_batch: &[TrainExample],
        lr: f64,
    ) -> Result<f64, TrainError> {
        let mut probs = Vec::with_capacity(tgt_batch.len());
        let mut traces = Vec::with_capacity(tgt_batch.len());
        for ex in tgt_batch {
            let (fused, trace) =
                self.source_model
                    .features_with_encoder(&self.target_encoder, &ex.image, &ex.flow3)?;
            let (p, dtrace) = self.disc.forward(&fused);
            probs.push(p);
            traces.push((trace, dtrace));
        }
        let eps = self.config.weights.eps;
        let beta1 = self.config.weights.beta1;
        let l_ent = confusion_loss(&probs, eps).to_f64_();
        let dprobs = confusion_loss_backward(&probs, eps);
        let mut enc_grads = self.target_encoder.zeros_like();
        let mut disc_sink = self.disc.zeros_like();
        for ((trace, dtrace), dp) in traces.iter().zip(dprobs) {
            let d_fused = self.disc.backward(dtrace, dp * beta1 as f32, &mut disc_sink);
            self.source_model.backward_features_to_encoder(
                &self.target_encoder,
                trace,
                &d_fused,
                &mut enc_grads,
            );
        }
        self.opt_enc.step(&mut self.target_encoder, &enc_grads, lr)?;
        Ok(l_ent)
    }

    /// Held-out discriminator accuracy: source through the frozen source
    /// encoder, target through the adapted encoder.
    pub fn discriminator_accuracy(
        &self,
        source: &[FrameSample],
        target: &[FrameSample],
    ) -> Result<f64, TrainError> {
        held_out_accuracy(
            &self.source_model,
            &self.target_encoder,
            &self.disc,
            source,
            target,
            self.config.flow_scale(),
        )
    }

    /// Saves the adapted model (target encoder in front of the frozen
    /// pathway) under canonical names, so evaluation loads it like any
    /// other checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut ckpt = Checkpoint::new(&self.config, self.epoch as u64, self.step);
        insert_params(&mut ckpt.tensors, "", &self.adapted_model());
        insert_params(&mut ckpt.tensors, "", &self.disc);
        insert_params(&mut ckpt.tensors, "src.", &self.source_model.encoder);
        insert_params(&mut ckpt.tensors, "opt.enc.", &self.opt_enc.velocity);
        insert_params(&mut ckpt.tensors, "opt.disc.", &self.opt_disc.velocity);
        save_checkpoint(path, &ckpt)
    }
}
