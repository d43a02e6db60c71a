use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::models::network::Network;

/// What a frozen classifier reveals to its callers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessPolicy {
    WhiteBoxLogits,
    BlackBoxLabels,
}

impl AccessPolicy {
    pub fn name(self) -> &'static str {
        match self {
            AccessPolicy::WhiteBoxLogits => "white_box",
            AccessPolicy::BlackBoxLabels => "black_box",
        }
    }
}

/// Row-wise argmax of an `N × K` matrix; ties go to the lowest index.
pub fn argmax_rows(scores: &Tensor) -> Result<Vec<usize>> {
    if scores.rank() != 2 {
        return Err(Error::shape(format!(
            "argmax expects N x K, got {:?}",
            scores.shape()
        )));
    }
    let k = scores.shape()[1];
    Ok(scores
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// A pretrained classifier whose parameters never change again.
#[derive(Clone, Debug)]
pub struct FrozenClassifier {
    network: Network,
    policy: AccessPolicy,
    vanilla: Vec<usize>,
}

impl FrozenClassifier {
    /// Marks every parameter non-trainable.
    pub fn new(mut network: Network, policy: AccessPolicy) -> Self {
        network.set_trainable(false);
        for p in network.params_mut() {
            p.gradient = Tensor::zeros(p.value.shape());
        }
        Self {
            network,
            policy,
            vanilla: Vec::new(),
        }
    }

    pub fn policy(&self) -> AccessPolicy {
        self.policy
    }

    /// Same weights under another access policy.
    pub fn with_policy(&self, policy: AccessPolicy) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn classes(&self) -> usize {
        match self.network.spec().output {
            crate::models::OutputKind::Logits(k) => k,
            _ => unreachable!("built from a classifier spec"),
        }
    }

    pub fn checksum(&self) -> String {
        self.network.checksum()
    }

    /// Predicted labels; available under either policy.
    pub fn classify(&self, j: &Tensor) -> Result<Vec<usize>> {
        argmax_rows(&self.network.predict(j)?)
    }

    /// Raw logits; white-box only.
    pub fn logits(&self, j: &Tensor) -> Result<Tensor> {
        self.require_white_box("logits")?;
        self.network.predict(j)
    }

    /// Gradient of the mean cross-entropy with respect to the input batch;
    /// white-box only.
    pub fn input_gradient(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        self.require_white_box("input gradients")?;
        let mut g = Graph::new();
        let xv = g.input_with_grad(x.clone());
        let logits = self.network.forward_frozen(&mut g, xv)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        let grads = g.backward(loss)?;
        Ok(grads
            .input(xv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape())))
    }

    /// Records the clean-image predictions used as the vanilla reference.
    pub fn record_vanilla(&mut self, images: &Tensor) -> Result<&[usize]> {
        self.vanilla = self.classify(images)?;
        Ok(&self.vanilla)
    }

    pub fn vanilla_predictions(&self) -> &[usize] {
        &self.vanilla
    }

    fn require_white_box(&self, what: &str) -> Result<()> {
        match self.policy {
            AccessPolicy::WhiteBoxLogits => Ok(()),
            AccessPolicy::BlackBoxLabels => Err(Error::Access(format!(
                "{what} requested from a label-only classifier"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        let t = Tensor::new(
            vec![3, 3],
            vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0, -1.0, -1.0, -1.0],
        )
        .unwrap();
        assert_eq!(argmax_rows(&t).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn argmax_needs_a_matrix() {
        assert!(argmax_rows(&Tensor::zeros(&[4])).is_err());
    }
}
