//! Held-out evaluation of a trained attributor.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, predictive_entropy, Attributor};
use crate::cloud::Concept;
use crate::error::{invalid, Result};
use crate::rng_from_seed;

/// Splits indices into (train, test), taking `fraction` of each class for
/// test. Both lists come back sorted.
pub fn stratified_split(labels: &[Concept], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return invalid("holdout fraction must lie in (0, 1)");
    }
    let mut rng = rng_from_seed(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in Concept::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_test = (fraction * idx.len() as f64).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// One confidence bin of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Bins predictions by their peak posterior over `[1/3, 1]` in equal-width
/// bins. Empty bins report zero confidence and accuracy.
pub fn reliability_table(posteriors: &[[f64; 3]], labels: &[Concept], bins: usize) -> Vec<ReliabilityBin> {
    let lo = 1.0 / 3.0;
    let width = (1.0 - lo) / bins as f64;
    let mut table: Vec<ReliabilityBin> = (0..bins)
        .map(|b| ReliabilityBin {
            lower: lo + b as f64 * width,
            upper: if b + 1 == bins { 1.0 } else { lo + (b + 1) as f64 * width },
            count: 0,
            mean_confidence: 0.0,
            accuracy: 0.0,
        })
        .collect();
    for (p, l) in posteriors.iter().zip(labels) {
        let k = argmax(p);
        let conf = p[k];
        let b = (((conf - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        let bin = &mut table[b];
        bin.count += 1;
        bin.mean_confidence += conf;
        bin.accuracy += f64::from(u8::from(k == l.index()));
    }
    for bin in &mut table {
        if bin.count > 0 {
            bin.mean_confidence /= bin.count as f64;
            bin.accuracy /= bin.count as f64;
        }
    }
    table
}

/// Count-weighted mean gap between confidence and accuracy.
pub fn expected_calibration_error(table: &[ReliabilityBin]) -> f64 {
    let n: usize = table.iter().map(|b| b.count).sum();
    if n == 0 {
        return 0.0;
    }
    table.iter().map(|b| b.count as f64 * (b.mean_confidence - b.accuracy).abs()).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub accuracy: f64,
    pub mean_log_loss: f64,
    /// Largest `|Σπ − 1|` seen.
    pub max_normalization_error: f64,
    /// Every entropy lay in `[0, ln 3]`.
    pub entropy_in_bounds: bool,
    pub ood_fraction: f64,
    pub reliability: Vec<ReliabilityBin>,
    pub calibration_error: f64,
}

pub fn evaluate(attributor: &Attributor, rows: &[Vec<f64>], labels: &[Concept], bins: usize) -> Result<Evaluation> {
    if rows.is_empty() || rows.len() != labels.len() || bins == 0 {
        return invalid("evaluation needs matching non-empty rows and labels and at least one bin");
    }
    let mut posteriors = Vec::with_capacity(rows.len());
    let (mut hits, mut loss, mut norm_err, mut in_bounds, mut ood) = (0usize, 0.0, 0.0f64, true, 0usize);
    for (row, label) in rows.iter().zip(labels) {
        let p = attributor.model.predict_posteriors(row)?;
        let u = predictive_entropy(&p);
        hits += usize::from(argmax(&p) == label.index());
        loss -= p[label.index()].max(1e-300).ln();
        norm_err = norm_err.max((p.iter().sum::<f64>() - 1.0).abs());
        in_bounds &= (0.0..=3f64.ln() + 1e-12).contains(&u);
        ood += usize::from(super::ood_flag(u, &p, &attributor.thresholds));
        posteriors.push(p);
    }
    let n = rows.len() as f64;
    let reliability = reliability_table(&posteriors, labels, bins);
    Ok(Evaluation {
        samples: rows.len(),
        accuracy: hits as f64 / n,
        mean_log_loss: loss / n,
        max_normalization_error: norm_err,
        entropy_in_bounds: in_bounds,
        ood_fraction: ood as f64 / n,
        calibration_error: expected_calibration_error(&reliability),
        reliability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{GpcHyper, OodThresholds};

    #[test]
    fn split_is_stratified_disjoint_and_seeded() {
        let labels: Vec<Concept> = (0..30).map(|i| Concept::ALL[i % 3]).collect();
        let (tr, te) = stratified_split(&labels, 0.2, 5).unwrap();
        assert_eq!(te.len(), 6);
        assert_eq!(tr.len() + te.len(), 30);
        for c in Concept::ALL {
            assert_eq!(te.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!(stratified_split(&labels, 0.2, 5).unwrap(), (tr, te));
        assert!(stratified_split(&labels, 1.0, 5).is_err());
    }

    #[test]
    fn reliability_bins_by_peak_posterior() {
        let p = [[0.9, 0.05, 0.05], [0.95, 0.03, 0.02], [0.2, 0.4, 0.4], [1.0 / 3.0; 3]];
        let l = [Concept::SensorNoise, Concept::PoseError, Concept::PoseError, Concept::PartialOverlap];
        let t = reliability_table(&p, &l, 4);
        assert_eq!(t.iter().map(|b| b.count).collect::<Vec<_>>(), [2, 0, 0, 2]);
        assert!((t[3].mean_confidence - 0.925).abs() < 1e-12);
        assert_eq!(t[3].accuracy, 0.5);
        assert_eq!(t[0].accuracy, 0.5);
        assert_eq!(t[3].upper, 1.0);
        let ece = expected_calibration_error(&t);
        let want = (2.0 * (0.925f64 - 0.5).abs() + 2.0 * ((0.4 + 1.0 / 3.0) / 2.0 - 0.5f64).abs()) / 4.0;
        assert!((ece - want).abs() < 1e-12);
    }

    #[test]
    fn evaluation_on_separable_blobs() {
        let (rows, labels) = super::super::gpc::tests::blobs(20, 0.3, 4);
        let a = Attributor::train(&rows, &labels, GpcHyper { length_scale: 2.0, signal_std: 2.0 }, OodThresholds::default()).unwrap();
        let (test, test_labels) = super::super::gpc::tests::blobs(10, 0.3, 99);
        let e = evaluate(&a, &test, &test_labels, 5).unwrap();
        assert_eq!(e.samples, 30);
        assert!(e.accuracy > 0.95);
        assert!(e.max_normalization_error < 1e-9);
        assert!(e.entropy_in_bounds);
        assert_eq!(e.reliability.iter().map(|b| b.count).sum::<usize>(), 30);
    }
}
