//! Accuracy, sparsity and confusion counts.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{forward_logits, Model, ParamSet};
use crate::regularization::l0_count;

const CHUNK: usize = 500;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of every sample, evaluated in chunks.
pub fn predict(model: &Model, params: &ParamSet, dataset: &Dataset) -> Result<Vec<usize>> {
    if dataset.image_len() != model.input_len() {
        return Err(Error::Shape(format!(
            "images of {} values for a model expecting {}",
            dataset.image_len(),
            model.input_len()
        )));
    }
    let d = dataset.image_len();
    let m = model.classes();
    let mut out = Vec::with_capacity(dataset.len());
    for start in (0..dataset.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(dataset.len());
        let logits = forward_logits(model, params, &dataset.images()[start * d..end * d])?;
        out.extend(logits.chunks(m).map(argmax));
    }
    Ok(out)
}

/// Percentage of predictions equal to the labels.
pub fn accuracy_from_predictions(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    100.0 * correct as f64 / labels.len() as f64
}

pub fn accuracy(model: &Model, params: &ParamSet, dataset: &Dataset) -> Result<f64> {
    let pred = predict(model, params, dataset)?;
    Ok(accuracy_from_predictions(&pred, dataset.labels()))
}

/// `100 (1 − nonzeros / total)` over all weights, and biases if requested.
pub fn sparsity_pct(params: &ParamSet, include_bias: bool) -> f64 {
    let (mut nonzero, mut total) = (0usize, 0usize);
    for layer in params.layers() {
        nonzero += l0_count(&layer.weight);
        total += layer.weight.len();
        if include_bias {
            nonzero += l0_count(&layer.bias);
            total += layer.bias.len();
        }
    }
    if total == 0 {
        return 100.0;
    }
    100.0 * (1.0 - nonzero as f64 / total as f64)
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_predictions(classes: usize, predictions: &[usize], labels: &[usize]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut counts = vec![0u64; classes * classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            if p >= classes || y >= classes {
                return Err(Error::InvalidInput(format!("class index out of range ({y}, {p})")));
            }
            counts[y * classes + p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.classes).map(|r| r.iter().sum()).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.classes)
    }
}

pub fn confusion(model: &Model, params: &ParamSet, dataset: &Dataset) -> Result<ConfusionMatrix> {
    let pred = predict(model, params, dataset)?;
    ConfusionMatrix::from_predictions(dataset.classes(), &pred, dataset.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::network::{build_model, LayerParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[-1.0, -2.0]), 0);
    }

    #[test]
    fn tied_logits_predict_class_zero() {
        let model = build_model("fc out=2", &[1]).unwrap();
        let params = ParamSet::zeros(&model);
        let ds = Dataset::new(vec![0.3, -1.0], vec![1], vec![0, 1], 2, Split::Test).unwrap();
        assert_eq!(predict(&model, &params, &ds).unwrap(), vec![0, 0]);
        assert_eq!(accuracy(&model, &params, &ds).unwrap(), 50.0);
        let cm = confusion(&model, &params, &ds).unwrap();
        assert_eq!(cm.get(1, 0), 1);
        assert_eq!(cm.get(0, 0), 1);
        // constant classifier fills one column only
        assert_eq!(cm.get(0, 1) + cm.get(1, 1), 0);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 1];
        assert_eq!(accuracy_from_predictions(&labels, &labels), 100.0);
        let cm = ConfusionMatrix::from_predictions(3, &labels, &labels).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                if t != p {
                    assert_eq!(cm.get(t, p), 0);
                }
            }
        }
        assert_eq!(cm.row_sums(), vec![1, 2, 1]);
    }

    #[test]
    fn accuracy_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<usize> = (0..1000).map(|_| rng.random_range(0..10)).collect();
        let pred: Vec<usize> = (0..1000).map(|_| rng.random_range(0..10)).collect();
        let mut correct = 0;
        for i in 0..1000 {
            if pred[i] == labels[i] {
                correct += 1;
            }
        }
        let acc = accuracy_from_predictions(&pred, &labels);
        assert_eq!(acc, correct as f64 / 10.0);
        let cm = ConfusionMatrix::from_predictions(10, &pred, &labels).unwrap();
        assert_eq!(cm.total(), 1000);
        assert_eq!((acc * 1000.0 / 100.0).round() as u64, cm.trace());
        assert_eq!(cm.trace() as f64 / cm.total() as f64, acc / 100.0);
    }

    #[test]
    fn sparsity_cases() {
        let model = build_model("fc out=2", &[4]).unwrap();
        let mut p = ParamSet::zeros(&model);
        assert_eq!(sparsity_pct(&p, true), 100.0);
        p.layers_mut()[0] = LayerParams {
            weight: vec![1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            bias: vec![0.0, 3.0],
        };
        assert!((sparsity_pct(&p, true) - 70.0).abs() < 1e-12);
        let nz: usize = p.layers().iter().map(|l| l0_count(&l.weight) + l0_count(&l.bias)).sum();
        assert_eq!(sparsity_pct(&p, true), 100.0 * (1.0 - nz as f64 / 10.0));
        assert_eq!(sparsity_pct(&p, false), 75.0);
    }
}
