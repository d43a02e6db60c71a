use crate::data::Dataset;
use crate::diffcore::init::streams;
use crate::diffcore::{Adam, Graph, Rng};
use crate::error::{Error, Result};
use crate::eval::top1_accuracy;
use crate::models::{build_classifier, AccessPolicy, FrozenClassifier, NetworkSpec, OutputKind};
use crate::train::{CLASSIFIER_LR, DEFAULT_BATCH};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOptions {
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after the first epoch whose validation accuracy reaches this.
    pub stop_at: Option<f64>,
    pub policy: AccessPolicy,
}

impl ClassifierOptions {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            lr: CLASSIFIER_LR,
            epochs,
            batch_size: DEFAULT_BATCH,
            seed,
            stop_at: None,
            policy: AccessPolicy::WhiteBoxLogits,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassifierReport {
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Accuracy on the clean training images of the returned classifier.
    pub train_accuracy: f64,
}

/// Softmax cross-entropy training with Adam; the result is frozen and carries
/// its vanilla predictions on `train`.
pub fn train_classifier(
    train: &Dataset,
    val: &Dataset,
    spec: NetworkSpec,
    opts: &ClassifierOptions,
) -> Result<(FrozenClassifier, ClassifierReport)> {
    match spec.output {
        OutputKind::Logits(k) if k == train.classes() && k == val.classes() => {}
        _ => {
            return Err(Error::Spec(format!(
                "{}: output {:?} does not match {} dataset classes",
                spec.name,
                spec.output,
                train.classes()
            )))
        }
    }
    if train.is_empty() || val.is_empty() || opts.batch_size == 0 {
        return Err(Error::contract(
            "pgn-train",
            "classifier training needs data and a positive batch size",
        ));
    }
    let mut init = Rng::new(opts.seed, streams::INIT);
    let mut shuffle = Rng::new(opts.seed, streams::SHUFFLE);
    let mut net = build_classifier(spec, &mut init)?;
    let adam = Adam::new(opts.lr)?;
    let mut report = ClassifierReport::default();
    for _ in 0..opts.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for idx in order.chunks(opts.batch_size) {
            let batch = train.subset(idx)?;
            let mut g = Graph::new();
            let x = g.constant(batch.images().clone());
            let logits = net.forward(&mut g, x)?;
            let loss = g.softmax_cross_entropy(logits, batch.labels())?;
            total += g.value(loss).item() as f64 * idx.len() as f64;
            let grads = g.backward(loss)?;
            net.load_gradients(&grads);
            adam.step(net.params_mut());
        }
        report.epochs_run += 1;
        report.train_loss.push(total / train.len() as f64);
        let val_pred = crate::models::argmax_rows(&net.predict(val.images())?)?;
        let acc = top1_accuracy(&val_pred, val.labels())?;
        report.val_accuracy.push(acc);
        if opts.stop_at.is_some_and(|t| acc >= t) {
            break;
        }
    }
    let mut frozen = FrozenClassifier::new(net, opts.policy);
    let vanilla = frozen.record_vanilla(train.images())?.to_vec();
    report.train_accuracy = top1_accuracy(&vanilla, train.labels())?;
    Ok((frozen, report))
}
