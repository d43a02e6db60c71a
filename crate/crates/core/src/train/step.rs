use std::collections::BTreeSet;

use crate::diffcore::{Adam, Graph, Tensor};
use crate::error::{Error, Result};
use crate::models::{perturb_graph, FrozenClassifier, Network};
use crate::train::losses::{
    assign_targets, discriminator_loss_graph, generator_adversarial_term_graph,
    l1_regularizer_graph,
};
use crate::train::TrainConfig;

/// Everything one alternating update observed.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub l_d: f64,
    /// Adversarial part of the generator loss.
    pub l_g: f64,
    pub l_r: f64,
    /// `L_g + γ L_r`.
    pub l_g_total: f64,
    /// Predictions on the perturbed batch.
    pub r: Vec<usize>,
    pub g: Vec<u8>,
    /// Discriminator output before its update.
    pub o_before: Vec<f32>,
    /// Discriminator output after its update, used for the generator loss.
    pub o_after: Vec<f32>,
    /// Items the classifier got right / wrong on the perturbed batch.
    pub correct: usize,
    pub wrong: usize,
    /// Networks that received gradients from each loss.
    pub d_grad_owners: BTreeSet<u64>,
    pub g_grad_owners: BTreeSet<u64>,
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.into(),
            epoch: 0,
            batch: 0,
        })
    }
}

/// One discriminator update followed by one generator update on `images`
/// with true labels `labels`.
///
/// The classifier only ever sees the perturbed batch as a finished tensor and
/// returns labels, so no gradient can reach it.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    images: &Tensor,
    labels: &[usize],
    generator: &mut Network,
    discriminator: &mut Network,
    classifier: &FrozenClassifier,
    cfg: &TrainConfig,
    opt_g: &Adam,
    opt_d: &Adam,
) -> Result<StepReport> {
    if images.batch() != labels.len() {
        return Err(Error::contract(
            "pgn-train",
            format!("{} images for {} labels", images.batch(), labels.len()),
        ));
    }
    // M = G(I), J = I + λM.
    let mut gg = Graph::new();
    let x = gg.constant(images.clone());
    let m = generator.forward(&mut gg, x)?;
    let j = perturb_graph(&mut gg, x, m, cfg.lambda)?;
    let j_value = gg.value(j).clone();

    // r = f(J), o = D(J), targets from r.
    let r = classifier.classify(&j_value)?;
    let targets = assign_targets(&r, labels, cfg.mode)?;

    let mut gd = Graph::new();
    let jd = gd.constant(j_value);
    let o = discriminator.forward(&mut gd, jd)?;
    let o_before = gd.value(o).data().to_vec();
    let ld = discriminator_loss_graph(&mut gd, o, &targets, cfg.loss)?;
    let l_d = finite(gd.value(ld).item() as f64, "discriminator loss")?;
    let d_grads = gd.backward(ld)?;
    discriminator.load_gradients(&d_grads);
    opt_d.step(discriminator.params_mut());

    // Fresh o from the updated discriminator, held fixed for this update.
    let o2 = discriminator.forward_frozen(&mut gg, j)?;
    let o_after = gg.value(o2).data().to_vec();
    let lg = generator_adversarial_term_graph(&mut gg, o2, cfg.loss)?;
    let lr = l1_regularizer_graph(&mut gg, m);
    let weighted = gg.scale(lr, cfg.gamma as f32);
    let total = gg.add(lg, weighted)?;
    let l_g = finite(gg.value(lg).item() as f64, "generator loss")?;
    let l_r = finite(gg.value(lr).item() as f64, "l1 regularizer")?;
    let l_g_total = finite(gg.value(total).item() as f64, "total generator loss")?;
    let g_grads = gg.backward(total)?;
    generator.load_gradients(&g_grads);
    opt_g.step(generator.params_mut());

    let correct = r.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(StepReport {
        l_d,
        l_g,
        l_r,
        l_g_total,
        wrong: r.len() - correct,
        correct,
        r,
        g: targets,
        o_before,
        o_after,
        d_grad_owners: d_grads.param_keys().map(|k| k.owner).collect(),
        g_grad_owners: g_grads.param_keys().map(|k| k.owner).collect(),
    })
}
