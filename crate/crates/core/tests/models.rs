use pgn_core::diffcore::{Graph, Rng, Tensor};
use pgn_core::models::{
    build_classifier, build_discriminator, build_generator, desk_classifier, desk_discriminator,
    desk_generator, discriminator_from, perturb, reference_generator, AccessPolicy,
    DiscriminatorInit, FrozenClassifier,
};
use pgn_core::Error;
use proptest::prelude::*;

#[test]
fn generator_preserves_image_shape() {
    let mut rng = Rng::new(1, 1);
    let g = build_generator(desk_generator(), &mut rng, false).unwrap();
    let x = rng.uniform_tensor(&[2, 3, 32, 32], 0.0, 1.0);
    assert_eq!(g.predict(&x).unwrap().shape(), x.shape());
    let zero = build_generator(desk_generator(), &mut rng, true).unwrap();
    assert!(zero.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(
        reference_generator().validate().unwrap().dims(),
        vec![3, 224, 224]
    );
}

#[test]
fn discriminator_outputs_probabilities_and_copies_trunk() {
    let mut rng = Rng::new(2, 1);
    let f = build_classifier(desk_classifier(10), &mut rng).unwrap();
    let d = build_discriminator(
        discriminator_from(f.spec()).unwrap(),
        DiscriminatorInit::FromClassifierTrunk(&f),
        &mut rng,
    )
    .unwrap();
    let n = d.params().len();
    assert_eq!(n, f.params().len());
    for (a, b) in d.params()[..n - 2].iter().zip(f.params()) {
        assert_eq!(a.value, b.value);
    }
    assert_eq!(
        d.params()[n - 2].value.shape(),
        &[1, f.params()[n - 2].value.shape()[1]]
    );
    let x = rng.uniform_tensor(&[3, 3, 32, 32], 0.0, 1.0);
    let o = d.predict(&x).unwrap();
    assert_eq!(o.shape(), &[3, 1]);
    assert!(o.data().iter().all(|&v| v > 0.0 && v < 1.0));

    let fresh =
        build_discriminator(desk_discriminator(), DiscriminatorInit::Fresh, &mut rng).unwrap();
    assert!(matches!(
        build_discriminator(
            desk_discriminator(),
            DiscriminatorInit::FromClassifierTrunk(&f),
            &mut rng
        ),
        Err(Error::Spec(_))
    ));
    assert_eq!(fresh.predict(&x).unwrap().shape(), &[3, 1]);
}

#[test]
fn frozen_classifier_exposes_nothing_trainable() {
    let mut rng = Rng::new(3, 1);
    let net = build_classifier(desk_classifier(10), &mut rng).unwrap();
    let f = FrozenClassifier::new(net, AccessPolicy::WhiteBoxLogits);
    assert_eq!(f.network().trainable_count(), 0);
    let x = rng.uniform_tensor(&[2, 3, 32, 32], 0.0, 1.0);
    assert_eq!(f.logits(&x).unwrap().shape(), &[2, 10]);
    assert_eq!(f.input_gradient(&x, &[0, 1]).unwrap().shape(), x.shape());

    let b = f.with_policy(AccessPolicy::BlackBoxLabels);
    assert_eq!(b.classify(&x).unwrap(), f.classify(&x).unwrap());
    assert!(matches!(b.logits(&x), Err(Error::Access(_))));
    assert!(matches!(
        b.input_gradient(&x, &[0, 1]),
        Err(Error::Access(_))
    ));
    assert_eq!(b.checksum(), f.checksum());
}

#[test]
fn frozen_forward_records_no_parameters() {
    let mut rng = Rng::new(4, 1);
    let net = build_classifier(desk_classifier(10), &mut rng).unwrap();
    let mut g = Graph::new();
    let x = g.constant(rng.uniform_tensor(&[1, 3, 32, 32], 0.0, 1.0));
    let y = net.forward_frozen(&mut g, x).unwrap();
    let loss = g.sum(y);
    assert!(g.backward(loss).unwrap().is_empty());
}

proptest! {
    #[test]
    fn perturb_matches_elementwise_sum(seed in 0u64..200, lambda in -2.0f32..2.0) {
        let mut rng = Rng::new(seed, 8);
        let i = rng.uniform_tensor(&[2, 3, 4, 4], 0.0, 1.0);
        let m = rng.uniform_tensor(&[2, 3, 4, 4], -1.0, 1.0);
        let j = perturb(&i, &m, lambda).unwrap();
        for ((a, b), c) in i.data().iter().zip(m.data()).zip(j.data()) {
            prop_assert_eq!(*c, a + lambda * b);
        }
        prop_assert!(perturb(&i, &Tensor::zeros(&[1, 3, 4, 4]), lambda).is_err());
    }
}
