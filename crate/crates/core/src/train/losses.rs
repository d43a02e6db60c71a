//! Target assignment and the four losses, as plain functions over slices and
//! as graph builders that share their definitions.

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::train::{LossVariant, Mode};

/// Probabilities are clamped into `[CLAMP, 1 - CLAMP]` before logarithms.
pub const CLAMP: f32 = 1e-6;

/// Enhance: `g = 1` iff the perturbed prediction is right. Adversarial: iff wrong.
pub fn assign_targets(r: &[usize], l: &[usize], mode: Mode) -> Result<Vec<u8>> {
    if r.len() != l.len() {
        return Err(Error::contract(
            "pgn-train",
            format!("{} predictions for {} labels", r.len(), l.len()),
        ));
    }
    Ok(r.iter()
        .zip(l)
        .map(|(a, b)| match mode {
            Mode::Enhance => (a == b) as u8,
            Mode::Adversarial => (a != b) as u8,
        })
        .collect())
}

fn check_open_unit(o: &[f32]) -> Result<()> {
    if o.is_empty() {
        return Err(Error::contract("pgn-train", "loss of an empty batch"));
    }
    match o.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        Some(v) => Err(Error::Domain(format!(
            "discriminator output {v} is outside (0, 1)"
        ))),
        None => Ok(()),
    }
}

fn clamp(v: f32) -> f64 {
    v.clamp(CLAMP, 1.0 - CLAMP) as f64
}

/// `L_d`: least squares `(1/2N) Σ [g(o-1)² + (1-g)o²]`, or cross-entropy
/// `(1/2N) Σ [-g log o - (1-g) log(1-o)]`.
pub fn discriminator_loss(o: &[f32], g: &[u8], variant: LossVariant) -> Result<f64> {
    check_open_unit(o)?;
    if o.len() != g.len() {
        return Err(Error::contract(
            "pgn-train",
            format!("{} outputs for {} targets", o.len(), g.len()),
        ));
    }
    let n = o.len() as f64;
    let total: f64 = o
        .iter()
        .zip(g)
        .map(|(&o, &g)| {
            let (o64, g) = (o as f64, g as f64);
            match variant {
                LossVariant::LeastSquares => g * (o64 - 1.0).powi(2) + (1.0 - g) * o64 * o64,
                LossVariant::CrossEntropy => -g * clamp(o).ln() - (1.0 - g) * (1.0 - clamp(o)).ln(),
            }
        })
        .sum();
    Ok(total / (2.0 * n))
}

/// `L_g`: least squares `(1/2N) Σ (o-1)²`, or cross-entropy `(1/N) Σ -log o`.
pub fn generator_adversarial_term(o: &[f32], variant: LossVariant) -> Result<f64> {
    check_open_unit(o)?;
    let n = o.len() as f64;
    Ok(match variant {
        LossVariant::LeastSquares => {
            o.iter().map(|&v| (v as f64 - 1.0).powi(2)).sum::<f64>() / (2.0 * n)
        }
        LossVariant::CrossEntropy => o.iter().map(|&v| -clamp(v).ln()).sum::<f64>() / n,
    })
}

/// `L_r = (1/N) Σ_i ‖M_i‖₁`.
pub fn l1_regularizer(m: &Tensor) -> f64 {
    let n = m.shape().first().copied().unwrap_or(1).max(1);
    m.data().iter().map(|&v| (v as f64).abs()).sum::<f64>() / n as f64
}

/// `L_g' = L_g + γ L_r`.
pub fn generator_loss(o: &[f32], m: &Tensor, gamma: f64, variant: LossVariant) -> Result<f64> {
    Ok(generator_adversarial_term(o, variant)? + gamma * l1_regularizer(m))
}

fn column(o: &[f32]) -> Tensor {
    Tensor::new(vec![o.len(), 1], o.to_vec()).expect("length matches")
}

/// Graph form of [`discriminator_loss`]; `o` is `N × 1`.
pub fn discriminator_loss_graph(
    g: &mut Graph,
    o: Var,
    targets: &[u8],
    variant: LossVariant,
) -> Result<Var> {
    let n = g.value(o).len();
    if n != targets.len() {
        return Err(Error::contract(
            "pgn-train",
            format!("{n} outputs for {} targets", targets.len()),
        ));
    }
    let per_item = match variant {
        // For binary g, g(o-1)² + (1-g)o² = (o-g)².
        LossVariant::LeastSquares => {
            let gt = g.constant(
                column(&targets.iter().map(|&t| t as f32).collect::<Vec<_>>())
                    .reshape(g.value(o).shape())?,
            );
            let d = g.sub(o, gt)?;
            g.square(d)
        }
        // For binary g, the log argument is o where g = 1 and 1 - o where g = 0.
        LossVariant::CrossEntropy => {
            let oc = g.clamp(o, CLAMP, 1.0 - CLAMP);
            let shape = g.value(o).shape().to_vec();
            let sign = g.constant(
                column(
                    &targets
                        .iter()
                        .map(|&t| 2.0 * t as f32 - 1.0)
                        .collect::<Vec<_>>(),
                )
                .reshape(&shape)?,
            );
            let offset = g.constant(
                column(&targets.iter().map(|&t| 1.0 - t as f32).collect::<Vec<_>>())
                    .reshape(&shape)?,
            );
            let signed = g.mul(oc, sign)?;
            let arg = g.add(signed, offset)?;
            let logs = g.log(arg)?;
            g.scale(logs, -1.0)
        }
    };
    let total = g.sum(per_item);
    Ok(g.scale(total, 1.0 / (2.0 * n as f32)))
}

/// Graph form of [`generator_adversarial_term`].
pub fn generator_adversarial_term_graph(
    g: &mut Graph,
    o: Var,
    variant: LossVariant,
) -> Result<Var> {
    let n = g.value(o).len() as f32;
    Ok(match variant {
        LossVariant::LeastSquares => {
            let d = g.add_scalar(o, -1.0);
            let sq = g.square(d);
            let total = g.sum(sq);
            g.scale(total, 1.0 / (2.0 * n))
        }
        LossVariant::CrossEntropy => {
            let oc = g.clamp(o, CLAMP, 1.0 - CLAMP);
            let logs = g.log(oc)?;
            let total = g.sum(logs);
            g.scale(total, -1.0 / n)
        }
    })
}

/// Graph form of [`l1_regularizer`].
pub fn l1_regularizer_graph(g: &mut Graph, m: Var) -> Var {
    let n = g.value(m).shape().first().copied().unwrap_or(1).max(1) as f32;
    let a = g.abs(m);
    let total = g.sum(a);
    g.scale(total, 1.0 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use LossVariant::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-7
    }

    #[test]
    fn spot_values() {
        assert!(close(
            discriminator_loss(&[0.8, 0.3], &[1, 0], LeastSquares).unwrap(),
            0.0325
        ));
        // (1/4)(0.25 + 0.25)
        assert!(close(
            generator_adversarial_term(&[0.5, 0.5], LeastSquares).unwrap(),
            0.125
        ));
        let ce = discriminator_loss(&[0.5, 0.5, 0.5], &[1, 0, 1], CrossEntropy).unwrap();
        assert!(close(ce, 0.5 * std::f64::consts::LN_2));
        let m = Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        assert!(close(l1_regularizer(&m), 3.5));
        assert_eq!(l1_regularizer(&Tensor::zeros(&[2, 3])), 0.0);
    }

    #[test]
    fn outputs_outside_open_interval_are_domain_errors() {
        assert!(matches!(
            discriminator_loss(&[1.0], &[1], CrossEntropy),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            generator_adversarial_term(&[0.0], LeastSquares),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            discriminator_loss(&[f32::NAN], &[0], LeastSquares),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn targets_complement() {
        let (r, l) = ([0, 1, 2, 3], [0, 2, 2, 1]);
        let e = assign_targets(&r, &l, Mode::Enhance).unwrap();
        let a = assign_targets(&r, &l, Mode::Adversarial).unwrap();
        assert_eq!(e, vec![1, 0, 1, 0]);
        assert!(e.iter().zip(&a).all(|(x, y)| x + y == 1));
        assert!(assign_targets(&[0], &[0, 1], Mode::Enhance).is_err());
    }

    #[test]
    fn graph_forms_match_slice_forms() {
        let o = [0.2f32, 0.7, 0.95, 0.4];
        let t = [1u8, 0, 1, 0];
        for variant in [LeastSquares, CrossEntropy] {
            let mut g = Graph::new();
            let ov = g.constant(Tensor::new(vec![4, 1], o.to_vec()).unwrap());
            let ld = discriminator_loss_graph(&mut g, ov, &t, variant).unwrap();
            let lg = generator_adversarial_term_graph(&mut g, ov, variant).unwrap();
            assert!(
                (g.value(ld).item() as f64 - discriminator_loss(&o, &t, variant).unwrap()).abs()
                    < 1e-6
            );
            assert!(
                (g.value(lg).item() as f64 - generator_adversarial_term(&o, variant).unwrap())
                    .abs()
                    < 1e-6
            );
        }
    }
}
