//! The three networks (target classifier, perturbation generator,
//! discriminator) and the additive perturbation rule.

mod classifier;
mod network;
mod spec;

pub use classifier::{argmax_rows, AccessPolicy, FrozenClassifier};
pub use network::Network;
pub use spec::{
    desk_classifier, desk_discriminator, desk_generator, discriminator_from, reference_generator,
    Activation, Layer, LayerKind, NetworkSpec, OutputKind, Shape,
};

use crate::diffcore::{Graph, Rng, Tensor, Var};
use crate::error::{Error, Result};

/// How the discriminator's weights start out.
#[derive(Clone, Copy, Debug)]
pub enum DiscriminatorInit<'a> {
    /// Copy every layer but the head from a classifier with the same layout.
    FromClassifierTrunk(&'a Network),
    Fresh,
}

pub fn build_classifier(spec: NetworkSpec, rng: &mut Rng) -> Result<Network> {
    if !matches!(spec.output, OutputKind::Logits(_)) {
        return Err(Error::Spec(format!(
            "{}: a classifier must output class logits",
            spec.name
        )));
    }
    Network::new(spec, rng)
}

/// `zero_final` makes the initial perturbation exactly zero.
pub fn build_generator(spec: NetworkSpec, rng: &mut Rng, zero_final: bool) -> Result<Network> {
    if spec.output != OutputKind::Image {
        return Err(Error::Spec(format!(
            "{}: a generator must output an image",
            spec.name
        )));
    }
    let mut net = Network::new(spec, rng)?;
    if zero_final {
        net.zero_final_layer()?;
    }
    Ok(net)
}

pub fn build_discriminator(
    spec: NetworkSpec,
    init: DiscriminatorInit<'_>,
    rng: &mut Rng,
) -> Result<Network> {
    if spec.output != OutputKind::Probability {
        return Err(Error::Spec(format!(
            "{}: a discriminator must output one probability",
            spec.name
        )));
    }
    let mut net = Network::new(spec, rng)?;
    if let DiscriminatorInit::FromClassifierTrunk(classifier) = init {
        let theirs = classifier.params();
        let ours = net.params().len();
        if theirs.len() != ours
            || classifier.spec().input != net.spec().input
            || theirs[..ours - 2]
                .iter()
                .zip(net.params())
                .any(|(a, b)| a.value.shape() != b.value.shape())
        {
            return Err(Error::Spec(format!(
                "{} trunk is incompatible with {}",
                classifier.spec().name,
                net.spec().name
            )));
        }
        let trunk: Vec<Tensor> = theirs[..ours - 2].iter().map(|p| p.value.clone()).collect();
        net.copy_values(&trunk)?;
    }
    Ok(net)
}

/// `J = I + λM`, unclipped.
pub fn perturb(images: &Tensor, m: &Tensor, lambda: f32) -> Result<Tensor> {
    images.expect_same_shape(m)?;
    if lambda == 0.0 {
        return Ok(images.clone());
    }
    images.zip_map(m, |i, m| i + lambda * m)
}

/// Graph form of [`perturb`], differentiable with respect to `m`.
pub fn perturb_graph(g: &mut Graph, images: Var, m: Var, lambda: f32) -> Result<Var> {
    let scaled = g.scale(m, lambda);
    g.add(images, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lambda_is_bit_exact_identity() {
        let i = Tensor::new(vec![2], vec![-0.0, 0.3]).unwrap();
        let m = Tensor::new(vec![2], vec![5.0, f32::MAX]).unwrap();
        let j = perturb(&i, &m, 0.0).unwrap();
        assert_eq!(j.data()[0].to_bits(), (-0.0f32).to_bits());
        assert_eq!(j.data()[1], 0.3);
    }

    #[test]
    fn perturb_adds_scaled_perturbation() {
        let j = perturb(&Tensor::full(&[3], 0.5), &Tensor::full(&[3], 0.1), 1.0).unwrap();
        assert!(j.data().iter().all(|&v| (v - 0.6).abs() < 1e-7));
        assert!(perturb(&Tensor::zeros(&[3]), &Tensor::zeros(&[4]), 1.0).is_err());
    }
}
