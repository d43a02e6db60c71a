use crate::data::Dataset;
use crate::diffcore::init::{streams, RngState};
use crate::diffcore::{Adam, Parameter, Rng, Tensor};
use crate::error::{Error, Result};
use crate::eval::{
    count_transitions, mean_average_precision, softmax_rows, top1_accuracy, MetricsRow,
};
use crate::models::{
    build_discriminator, build_generator, desk_discriminator, desk_generator, discriminator_from,
    perturb, AccessPolicy, DiscriminatorInit, FrozenClassifier, Network,
};
use crate::train::step::train_step;
use crate::train::{DiscriminatorInitKind, TrainConfig, TrunkMode, DIVERGENCE_LIMIT};

/// What is needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub generator: Vec<Parameter>,
    pub discriminator: Vec<Parameter>,
    pub shuffle: RngState,
    pub epoch: usize,
    pub rows: Vec<MetricsRow>,
}

/// One finished epoch: its metrics and the classifier's predictions on the
/// perturbed training set at the end of it.
#[derive(Clone, Debug)]
pub struct EpochOutcome {
    pub row: MetricsRow,
    pub predictions: Vec<usize>,
}

/// A resumable training run over a fixed training set and frozen classifier.
pub struct PgnTrainer<'a> {
    cfg: TrainConfig,
    train: &'a Dataset,
    classifier: &'a FrozenClassifier,
    vanilla: Vec<usize>,
    generator: Network,
    discriminator: Network,
    opt_g: Adam,
    opt_d: Adam,
    shuffle: Rng,
    epoch: usize,
    rows: Vec<MetricsRow>,
}

impl<'a> PgnTrainer<'a> {
    /// Builds generator and discriminator from `cfg.seed`.
    pub fn new(
        cfg: TrainConfig,
        train: &'a Dataset,
        classifier: &'a FrozenClassifier,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::contract("pgn-train", "empty training set"));
        }
        if classifier.policy() != cfg.access {
            return Err(Error::Config(format!(
                "classifier exposes {} but the run is configured for {}",
                classifier.policy().name(),
                cfg.access.name()
            )));
        }
        let mut init = Rng::new(cfg.seed, streams::INIT);
        let (c, h, w) = classifier.network().spec().input;
        let mut gspec = desk_generator();
        gspec.input = (c, h, w);
        let generator = build_generator(gspec, &mut init, cfg.zero_init_generator)?;
        let mut discriminator = match cfg.discriminator_init {
            DiscriminatorInitKind::FromClassifierTrunk => {
                let spec = discriminator_from(classifier.network().spec())?;
                build_discriminator(
                    spec,
                    DiscriminatorInit::FromClassifierTrunk(classifier.network()),
                    &mut init,
                )?
            }
            DiscriminatorInitKind::Fresh => {
                let mut spec = desk_discriminator();
                spec.input = (c, h, w);
                build_discriminator(spec, DiscriminatorInit::Fresh, &mut init)?
            }
        };
        if cfg.discriminator_trunk == TrunkMode::Frozen {
            discriminator.freeze_trunk();
        }
        let vanilla = classifier.classify(train.images())?;
        Ok(Self {
            opt_g: Adam::new(cfg.lr)?,
            opt_d: Adam::new(cfg.lr)?,
            shuffle: Rng::new(cfg.seed, streams::SHUFFLE),
            cfg,
            train,
            classifier,
            vanilla,
            generator,
            discriminator,
            epoch: 0,
            rows: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Network {
        &self.generator
    }

    pub fn discriminator(&self) -> &Network {
        &self.discriminator
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    /// Classifier predictions on the clean training images.
    pub fn vanilla(&self) -> &[usize] {
        &self.vanilla
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// `J = I + λ G(I)` for any image batch.
    pub fn perturb_images(&self, images: &Tensor) -> Result<Tensor> {
        if self.cfg.lambda == 0.0 {
            return Ok(images.clone());
        }
        perturb(images, &self.generator.predict(images)?, self.cfg.lambda)
    }

    pub fn run_epoch(&mut self) -> Result<EpochOutcome> {
        let n = self.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        self.shuffle.shuffle(&mut order);
        let epoch = self.epoch + 1;
        let (mut sd, mut sg, mut sr) = (0.0f64, 0.0f64, 0.0f64);
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch = self.train.subset(idx)?;
            let report = train_step(
                batch.images(),
                batch.labels(),
                &mut self.generator,
                &mut self.discriminator,
                self.classifier,
                &self.cfg,
                &self.opt_g,
                &self.opt_d,
            )
            .map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite {
                    what,
                    epoch,
                    batch: b,
                },
                other => other,
            })?;
            let worst = report.l_d.max(report.l_g_total);
            if worst > DIVERGENCE_LIMIT {
                return Err(Error::Diverged { epoch, loss: worst });
            }
            let w = idx.len() as f64;
            sd += w * report.l_d;
            sg += w * report.l_g;
            sr += w * report.l_r;
        }
        self.epoch = epoch;
        let j = self.perturb_images(self.train.images())?;
        let labels = self.train.labels();
        let predictions = self.classifier.classify(&j)?;
        let map = match self.classifier.policy() {
            AccessPolicy::WhiteBoxLogits => Some(mean_average_precision(
                &softmax_rows(&self.classifier.logits(&j)?)?,
                labels,
            )?),
            AccessPolicy::BlackBoxLabels => None,
        };
        let (pos, neg) = count_transitions(&self.vanilla, &predictions, labels)?;
        let row = MetricsRow {
            epoch,
            l_d: sd / n as f64,
            l_g: sg / n as f64,
            l_r: sr / n as f64,
            top1: top1_accuracy(&predictions, labels)?,
            map,
            pos,
            neg,
        };
        self.rows.push(row.clone());
        Ok(EpochOutcome { row, predictions })
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<&[MetricsRow]> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(&self.rows)
    }

    /// Resumable state. Gradients are scratch space and come back zeroed.
    pub fn state(&self) -> TrainerState {
        let without_grads = |params: &[Parameter]| -> Vec<Parameter> {
            params
                .iter()
                .map(|p| Parameter {
                    gradient: Tensor::zeros(p.value.shape()),
                    ..p.clone()
                })
                .collect()
        };
        TrainerState {
            generator: without_grads(self.generator.params()),
            discriminator: without_grads(self.discriminator.params()),
            shuffle: self.shuffle.state(),
            epoch: self.epoch,
            rows: self.rows.clone(),
        }
    }

    pub fn restore(&mut self, state: TrainerState) -> Result<()> {
        self.generator.restore(state.generator)?;
        self.discriminator.restore(state.discriminator)?;
        self.shuffle = Rng::from_state(state.shuffle);
        self.epoch = state.epoch;
        self.rows = state.rows;
        Ok(())
    }
}

/// Trains for `cfg.epochs` epochs and returns the finished trainer.
pub fn train_pgn<'a>(
    train: &'a Dataset,
    classifier: &'a FrozenClassifier,
    cfg: &TrainConfig,
) -> Result<PgnTrainer<'a>> {
    let mut trainer = PgnTrainer::new(cfg.clone(), train, classifier)?;
    trainer.run()?;
    Ok(trainer)
}
