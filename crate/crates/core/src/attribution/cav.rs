use nalgebra::{DMatrix, DVector};

use super::gpc::GpcModel;
use crate::error::{invalid, Error, Result};

const MIN_EXAMPLES: usize = 10;
const RIDGE: f64 = 1e-2;
const NEWTON_ITERS: usize = 100;

/// Concept activation vector: the unit normal of an L2-regularized
/// logistic regression separating `concept` rows (label 1) from `random`
/// rows (label 0). The intercept is not penalized.
pub fn train_cav(concept: &[Vec<f64>], random: &[Vec<f64>]) -> Result<Vec<f64>> {
    if concept.len() < MIN_EXAMPLES || random.len() < MIN_EXAMPLES {
        return invalid(format!("need at least {MIN_EXAMPLES} examples on each side"));
    }
    let d = concept[0].len();
    if concept.iter().chain(random).any(|r| r.len() != d) {
        return invalid("examples have inconsistent dimension");
    }
    let first = &concept[0];
    if concept.iter().chain(random).all(|r| r == first) {
        return Err(Error::NumericalFailure("all examples are identical".into()));
    }

    let n = concept.len() + random.len();
    let x = DMatrix::from_fn(n, d + 1, |i, j| {
        if j == d {
            1.0
        } else if i < concept.len() {
            concept[i][j]
        } else {
            random[i - concept.len()][j]
        }
    });
    let y = DVector::from_fn(n, |i, _| if i < concept.len() { 1.0 } else { 0.0 });
    let mut reg = DVector::from_element(d + 1, RIDGE);
    reg[d] = 1e-10;

    let mut theta = DVector::zeros(d + 1);
    for _ in 0..NEWTON_ITERS {
        let z = &x * &theta;
        let p = z.map(|v| 1.0 / (1.0 + (-v).exp()));
        let grad = x.transpose() * (&p - &y) + reg.component_mul(&theta);
        let s = p.map(|v| v * (1.0 - v));
        let mut h = x.transpose() * DMatrix::from_diagonal(&s) * &x;
        for j in 0..=d {
            h[(j, j)] += reg[j];
        }
        let step = h
            .cholesky()
            .ok_or(Error::NumericalFailure("CAV Hessian not positive definite".into()))?
            .solve(&grad);
        theta -= &step;
        if step.norm() < 1e-12 * (1.0 + theta.norm()) {
            break;
        }
    }
    let w = theta.rows(0, d);
    let norm = w.norm();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(Error::NumericalFailure("degenerate concept separation".into()));
    }
    Ok(w.iter().map(|v| v / norm).collect())
}

/// Directional derivative of head `class`'s latent mean at the
/// standardized input `z` along `direction`.
pub fn concept_sensitivity(model: &GpcModel, class: usize, z: &[f64], direction: &[f64]) -> Result<f64> {
    if z.len() != model.dim() || direction.len() != model.dim() {
        return invalid("sensitivity inputs do not match model dimension");
    }
    Ok(model.latent_gradient(class, z).iter().zip(direction).map(|(g, v)| g * v).sum())
}
