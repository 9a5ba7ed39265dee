use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::{make_examples, TrainExample};
use super::{
    batches_per_pass, derive_seed, extract_params, insert_params, load_checkpoint,
    lr_schedule, save_checkpoint, BatchStream, Checkpoint, Sgd, StepRecord, TrainConfig,
    TrainError, TrainHistory, ValRecord, CHECKPOINT_FILE,
};
use crate::datasets::{normalize_flow, pad_flow_channels, FrameSample};
use crate::losses::{combine_supervised, mask_loss, mask_loss_backward, LossWeights};
use crate::metrics::{binarize, jaccard};
use crate::model::SegModel;
use crate::nn::{ParamSet, Scalar};

/// RNG stream tags; every random decision in a run is drawn from a stream
/// derived from (seed, tag, epoch, ...), so streams never collide and a
/// resumed run replays the remaining epochs exactly.
pub(super) mod streams {
    pub const SOURCE: u64 = 1;
    pub const TARGET: u64 = 2;
    pub const AUG_SOURCE: u64 = 3;
    pub const AUG_TARGET: u64 = 4;
    pub const DISC_INIT: u64 = 5;
}

/// End-to-end supervised training of the segmentation network on labeled
/// source frames.
pub struct SupervisedTrainer {
    pub config: TrainConfig,
    pub model: SegModel<f32>,
    pub history: TrainHistory,
    opt: Sgd<f32, SegModel<f32>>,
    epoch: usize,
    step: u64,
}

impl SupervisedTrainer {
    pub fn new(config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = SegModel::new(&config.model, config.seed);
        let opt = Sgd::new(&model, config.momentum, config.weight_decay);
        Ok(SupervisedTrainer {
            config: config.clone(),
            model,
            history: TrainHistory::default(),
            opt,
            epoch: 0,
            step: 0,
        })
    }

    /// Restores a run from its checkpoint; training continues at the next
    /// epoch with the exact batch and augmentation streams the
    /// uninterrupted run would have used.
    pub fn resume(config: &TrainConfig, path: &Path) -> Result<Self, TrainError> {
        let ckpt = load_checkpoint(path)?;
        ckpt.verify_fingerprint(&config.model)?;
        let mut trainer = Self::new(config)?;
        extract_params(&ckpt.tensors, "", &mut trainer.model)?;
        extract_params(&ckpt.tensors, "opt.main.", &mut trainer.opt.velocity)?;
        trainer.epoch = ckpt.epoch as usize;
        trainer.step = ckpt.step;
        Ok(trainer)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Trains until `config.epochs`, validating and checkpointing per epoch
    /// when asked to.
    pub fn run(
        &mut self,
        source: &[FrameSample],
        val: Option<&[FrameSample]>,
        out_dir: Option<&Path>,
    ) -> Result<(), TrainError> {
        while self.epoch < self.config.epochs {
            self.train_epoch(source)?;
            if let Some(val) = val {
                let j = validation_j(&self.model, val, self.config.flow_scale())?;
                self.history.validation.push(ValRecord { epoch: self.epoch as u64 - 1, j_mean: j });
            }
            if let Some(dir) = out_dir {
                self.save(&dir.join(CHECKPOINT_FILE))?;
            }
        }
        Ok(())
    }

    /// One full pass over the source set.
    pub fn train_epoch(&mut self, source: &[FrameSample]) -> Result<(), TrainError> {
        let epoch = self.epoch;
        let lr = lr_schedule(self.config.learning_rate, epoch, self.config.lr_decay);
        let mut stream = BatchStream::new(
            source.len(),
            self.config.batch_size,
            self.config.seed,
            streams::SOURCE,
        );
        stream.start_epoch(epoch as u64);
        let mut aug = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[streams::AUG_SOURCE, epoch as u64],
        ));
        for _ in 0..batches_per_pass(source.len(), self.config.batch_size) {
            let idx = stream.next_batch();
            for &i in &idx {
                if source[i].mask.is_none() {
                    return Err(TrainError::MissingLabel {
                        sequence: source[i].sequence_id.clone(),
                    });
                }
            }
            let examples = make_examples(
                source,
                &idx,
                self.config.crop,
                self.config.flow_scale(),
                true,
                &mut aug,
            )?;
            let (l_s, l_main, l_flow) =
                supervised_update(&mut self.model, &mut self.opt, &examples, &self.config.weights, lr)?;
            self.step += 1;
            self.history.push(StepRecord {
                step: self.step,
                epoch: epoch as u64,
                l_s,
                l_msk_main: l_main,
                l_msk_flow: l_flow,
                l_ent: 0.0,
                l_d: 0.0,
                lambda1: 0.0,
                lr,
                disc_acc: 0.0,
            })?;
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut ckpt = Checkpoint::new(&self.config, self.epoch as u64, self.step);
        insert_params(&mut ckpt.tensors, "", &self.model);
        insert_params(&mut ckpt.tensors, "opt.main.", &self.opt.velocity);
        save_checkpoint(path, &ckpt)
    }
}

/// One batch update of the full segmentation model under the weighted
/// two-decoder mask objective. Returns (total, main, flow) batch-mean
/// losses. Shared by the supervised trainer and the supervised sub-step of
/// shared-weights adaptation.
pub(super) fn supervised_update(
    model: &mut SegModel<f32>,
    opt: &mut Sgd<f32, SegModel<f32>>,
    examples: &[TrainExample],
    weights: &LossWeights,
    lr: f64,
) -> Result<(f64, f64, f64), TrainError> {
    let b = examples.len();
    assert!(b > 0, "empty batch");
    let inv_b = 1.0 / b as f64;
    let mut grads = model.zeros_like();
    let mut main_sum = 0.0;
    let mut flow_sum = 0.0;
    for ex in examples {
        let mask = ex.mask.as_ref().expect("supervised batches are labeled");
        let fwd = model.forward(&ex.image, &ex.flow3)?;
        let l_main = mask_loss(mask, &fwd.y_main, weights.eps)?;
        main_sum += l_main.to_f64_();
        let mut dy_main = mask_loss_backward(mask, &fwd.y_main, weights.eps)?;
        let s_main = (weights.alpha1 * inv_b) as f32;
        dy_main.mapv_inplace(|v| v * s_main);
        let dy_flow = match &fwd.y_flow {
            Some(y_flow) => {
                let l_flow = mask_loss(mask, y_flow, weights.eps)?;
                flow_sum += l_flow.to_f64_();
                let mut d = mask_loss_backward(mask, y_flow, weights.eps)?;
                let s_flow = (weights.alpha2 * inv_b) as f32;
                d.mapv_inplace(|v| v * s_flow);
                Some(d)
            }
            None => None,
        };
        model.backward_masks(&fwd, &dy_main, dy_flow.as_ref(), &mut grads);
    }
    let l_main = main_sum * inv_b;
    let l_flow = flow_sum * inv_b;
    let l_s = combine_supervised(l_main, l_flow, weights);
    opt.step(model, &grads, lr)?;
    Ok((l_s, l_main, l_flow))
}

/// Mean validation J (mean of per-sequence means) of a frozen model over
/// labeled frames, evaluated at full frame size without augmentation.
pub fn validation_j(
    model: &SegModel<f32>,
    samples: &[FrameSample],
    flow_scale: f32,
) -> Result<f64, TrainError> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for sample in samples {
        let Some(mask) = &sample.mask else {
            return Err(TrainError::MissingLabel { sequence: sample.sequence_id.clone() });
        };
        let flow3 = pad_flow_channels(&normalize_flow(&sample.flow, flow_scale));
        let prob = model.segment(&sample.image, &flow3)?;
        let j = jaccard(&binarize(&prob, 0.5), mask)?;
        match groups.iter_mut().find(|(id, _)| *id == sample.sequence_id) {
            Some((_, list)) => list.push(j),
            None => groups.push((sample.sequence_id.clone(), vec![j])),
        }
    }
    if groups.is_empty() {
        return Err(TrainError::InvalidConfig("empty validation set".into()));
    }
    let means: Vec<f64> =
        groups.iter().map(|(_, js)| js.iter().sum::<f64>() / js.len() as f64).collect();
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_sequence, SyntheticSpec};
    use crate::nn::param_checksum;

    fn tiny_config(seed: u64) -> TrainConfig {
        let mut config = TrainConfig::default();
        config.model.stage_widths = vec![6, 12];
        config.model.disc_widths = vec![8];
        config.crop = 32;
        config.batch_size = 4;
        config.epochs = 2;
        config.seed = seed;
        config
    }

    fn tiny_data(seeds: std::ops::Range<u64>, frames: usize) -> Vec<FrameSample> {
        let mut out = Vec::new();
        for seed in seeds {
            let spec = SyntheticSpec { seed, frames, ..Default::default() };
            out.extend(generate_synthetic_sequence(&spec).unwrap());
        }
        out
    }

    #[test]
    fn same_seed_gives_bit_identical_history() {
        let data = tiny_data(0..2, 4);
        let config = tiny_config(5);
        let mut a = SupervisedTrainer::new(&config).unwrap();
        let mut b = SupervisedTrainer::new(&config).unwrap();
        a.run(&data, None, None).unwrap();
        b.run(&data, None, None).unwrap();
        assert_eq!(a.history.csv(), b.history.csv());
        assert_eq!(param_checksum(&a.model), param_checksum(&b.model));
        assert!(!a.history.steps.is_empty());
    }

    #[test]
    fn loss_decreases_on_easy_data() {
        let data = tiny_data(10..12, 6);
        let mut config = tiny_config(1);
        config.epochs = 6;
        let mut trainer = SupervisedTrainer::new(&config).unwrap();
        trainer.run(&data, None, None).unwrap();
        let first = trainer.history.steps.first().unwrap().l_s;
        let last = trainer.history.steps.last().unwrap().l_s;
        assert!(
            last < first * 0.8,
            "training should reduce the loss: first {first}, last {last}"
        );
    }

    #[test]
    fn no_flow_supervision_means_flow_loss_column_is_zero() {
        let data = tiny_data(20..21, 4);
        let mut config = tiny_config(2);
        config.model.flow_supervision = false;
        let mut trainer = SupervisedTrainer::new(&config).unwrap();
        assert!(trainer.model.flow_decoder.is_none());
        trainer.run(&data, None, None).unwrap();
        assert!(trainer.history.steps.iter().all(|r| r.l_msk_flow == 0.0));
    }

    #[test]
    fn unlabeled_sample_in_supervised_batch_is_an_error() {
        let mut data = tiny_data(30..31, 4);
        data[1].mask = None;
        let config = tiny_config(3);
        let mut trainer = SupervisedTrainer::new(&config).unwrap();
        match trainer.run(&data, None, None) {
            Err(TrainError::MissingLabel { sequence }) => {
                assert_eq!(sequence, data[1].sequence_id);
            }
            other => panic!("expected MissingLabel, got {other:?}"),
        }
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run_exactly() {
        let data = tiny_data(40..42, 4);
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(7);
        config.epochs = 4;

        // Uninterrupted run.
        let mut full = SupervisedTrainer::new(&config).unwrap();
        full.run(&data, None, None).unwrap();

        // Run two epochs, checkpoint, resume, run the rest.
        let mut head = SupervisedTrainer::new(&config).unwrap();
        head.train_epoch(&data).unwrap();
        head.train_epoch(&data).unwrap();
        let path = dir.path().join(CHECKPOINT_FILE);
        head.save(&path).unwrap();
        let mut tail = SupervisedTrainer::resume(&config, &path).unwrap();
        assert_eq!(tail.epoch(), 2);
        tail.run(&data, None, None).unwrap();

        assert_eq!(param_checksum(&tail.model), param_checksum(&full.model));
        let full_tail: Vec<_> =
            full.history.steps.iter().filter(|r| r.epoch >= 2).cloned().collect();
        assert_eq!(full_tail, tail.history.steps);
    }

    #[test]
    fn validation_j_runs_on_full_frames_and_records() {
        let data = tiny_data(50..51, 4);
        let val = tiny_data(52..53, 4);
        let mut config = tiny_config(4);
        config.epochs = 1;
        let mut trainer = SupervisedTrainer::new(&config).unwrap();
        trainer.run(&data, Some(&val), None).unwrap();
        assert_eq!(trainer.history.validation.len(), 1);
        let j = trainer.history.validation[0].j_mean;
        assert!((0.0..=1.0).contains(&j), "J out of range: {j}");
    }
}
