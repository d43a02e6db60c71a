//! Target assignment, losses and the alternating discriminator/generator
//! training loop, plus classifier pretraining.

mod classifier;
pub mod losses;
mod pgn;
mod step;

pub use classifier::{train_classifier, ClassifierOptions, ClassifierReport};
pub use losses::{
    assign_targets, discriminator_loss, generator_adversarial_term, generator_loss, l1_regularizer,
};
pub use pgn::{train_pgn, EpochOutcome, PgnTrainer, TrainerState};
pub use step::{train_step, StepReport};

use std::fmt;
use std::str::FromStr;

use crate::data::NormalizationMode;
use crate::error::{Error, Result};
use crate::models::AccessPolicy;

/// Which way the perturbation pushes the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Enhance,
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossVariant {
    LeastSquares,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscriminatorInitKind {
    FromClassifierTrunk,
    Fresh,
}

/// Whether the discriminator's layers below its head are updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrunkMode {
    Frozen,
    Trainable,
}

macro_rules! named_enum {
    ($ty:ident, $key:literal, $expected:literal, $($variant:ident => [$($name:literal),+]),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => named_enum!(@first $($name),+)),+ }
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($($name)|+ => Ok($ty::$variant),)+
                    _ => Err(Error::TypeMismatch { key: $key.into(), expected: $expected, value: s.into() }),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
    (@first $first:literal $(, $rest:literal)*) => { $first };
}

named_enum!(Mode, "mode", "enhance or adversarial", Enhance => ["enhance"], Adversarial => ["adversarial"]);
named_enum!(LossVariant, "loss", "ls or ce",
    LeastSquares => ["ls", "least_squares"], CrossEntropy => ["ce", "cross_entropy"]);
named_enum!(DiscriminatorInitKind, "discriminator_init", "from_classifier_trunk or fresh",
    FromClassifierTrunk => ["from_classifier_trunk", "trunk"], Fresh => ["fresh"]);
named_enum!(TrunkMode, "discriminator_trunk", "frozen or trainable",
    Frozen => ["frozen"], Trainable => ["trainable"]);

/// Default regularization weight per mode.
pub fn default_gamma(mode: Mode) -> f64 {
    match mode {
        Mode::Enhance => 1e-4,
        Mode::Adversarial => 3.0,
    }
}

pub const DEFAULT_LR: f32 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_LAMBDA: f32 = 1.0;
pub const DEFAULT_BATCH: usize = 32;
pub const CLASSIFIER_LR: f32 = 5e-4;
/// A loss above this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub loss: LossVariant,
    pub gamma: f64,
    pub lambda: f32,
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub access: AccessPolicy,
    pub discriminator_init: DiscriminatorInitKind,
    pub discriminator_trunk: TrunkMode,
    pub normalization: NormalizationMode,
    /// Start the generator with a zeroed output layer, so `M = 0` at step 0.
    pub zero_init_generator: bool,
}

impl TrainConfig {
    /// Defaults for `mode`: white-box, discriminator initialized from the
    /// classifier with a frozen trunk.
    pub fn new(mode: Mode, loss: LossVariant) -> Self {
        Self {
            mode,
            loss,
            gamma: default_gamma(mode),
            lambda: DEFAULT_LAMBDA,
            lr: DEFAULT_LR,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            access: AccessPolicy::WhiteBoxLogits,
            discriminator_init: DiscriminatorInitKind::FromClassifierTrunk,
            discriminator_trunk: TrunkMode::Frozen,
            normalization: NormalizationMode::Vanilla01,
            zero_init_generator: true,
        }
    }

    /// Label-only access: a freshly initialized, fully trainable discriminator.
    pub fn black_box(mut self) -> Self {
        self.access = AccessPolicy::BlackBoxLabels;
        self.discriminator_init = DiscriminatorInitKind::Fresh;
        self.discriminator_trunk = TrunkMode::Trainable;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be a finite value >= 0, got {}",
                self.gamma
            )));
        }
        if !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be finite, got {}",
                self.lambda
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.access == AccessPolicy::BlackBoxLabels
            && self.discriminator_init == DiscriminatorInitKind::FromClassifierTrunk
        {
            return Err(Error::Config(
                "a label-only run cannot initialize the discriminator from the classifier".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_mode() {
        let e = TrainConfig::new(Mode::Enhance, LossVariant::LeastSquares);
        assert_eq!((e.lr, e.epochs, e.lambda, e.gamma), (1e-4, 20, 1.0, 1e-4));
        assert_eq!(
            TrainConfig::new(Mode::Adversarial, LossVariant::CrossEntropy).gamma,
            3.0
        );
        assert!(e.validate().is_ok());
    }

    #[test]
    fn invariants_are_checked() {
        let base = TrainConfig::new(Mode::Enhance, LossVariant::LeastSquares);
        assert!(TrainConfig {
            gamma: -1.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            epochs: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        let mut leaky = base.black_box();
        leaky.discriminator_init = DiscriminatorInitKind::FromClassifierTrunk;
        assert!(leaky.validate().is_err());
    }

    #[test]
    fn names_parse_back() {
        for m in [Mode::Enhance, Mode::Adversarial] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert_eq!(
            "ce".parse::<LossVariant>().unwrap(),
            LossVariant::CrossEntropy
        );
        assert!(matches!(
            "sideways".parse::<Mode>(),
            Err(Error::TypeMismatch { .. })
        ));
    }
}
