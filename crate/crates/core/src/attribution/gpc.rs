//! One-vs-rest binary Gaussian-process classifiers with a logistic
//! likelihood, each fitted by the Laplace approximation (Newton iterations
//! on the latent mode), sharing one RBF kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::features::Standardizer;
use crate::cloud::Concept;
use crate::error::{invalid, Error, Result};

pub const MODEL_VERSION: u32 = 1;
const MIN_PER_CLASS: usize = 10;
const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_TOL: f64 = 1e-10;
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpcHyper {
    pub length_scale: f64,
    pub signal_std: f64,
}

impl Default for GpcHyper {
    fn default() -> Self {
        Self { length_scale: 8.0, signal_std: 4.0 }
    }
}

impl GpcHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite())
            || !(self.signal_std > 0.0 && self.signal_std.is_finite())
        {
            return invalid("GP length scale and signal variance must be positive");
        }
        Ok(())
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_std * self.signal_std * (-0.5 * d2 / (self.length_scale * self.length_scale)).exp()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 { -(-x).exp().ln_1p() } else { x - x.exp().ln_1p() }
}

/// Quantities of one fitted head needed at prediction time.
#[derive(Debug, Clone)]
struct Head {
    /// `∇ log p(y | f̂)`, the dual weights of the predictive mean.
    alpha: DVector<f64>,
    sqrt_w: DVector<f64>,
    chol_b: Cholesky<f64, Dyn>,
}

/// Persisted form: everything else is recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpcModelData {
    pub version: u32,
    pub hyper: GpcHyper,
    pub jitter: f64,
    pub standardizer: Standardizer,
    /// Standardized training inputs, row-major.
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Concept>,
    /// Laplace mode of the latent function, one vector per head.
    pub modes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GpcModelData", into = "GpcModelData")]
pub struct GpcModel {
    data: GpcModelData,
    heads: Vec<Head>,
}

impl From<GpcModel> for GpcModelData {
    fn from(m: GpcModel) -> Self {
        m.data
    }
}

impl TryFrom<GpcModelData> for GpcModel {
    type Error = Error;

    fn try_from(data: GpcModelData) -> Result<Self> {
        if data.version != MODEL_VERSION {
            return invalid(format!("unsupported model version {}", data.version));
        }
        data.hyper.validate()?;
        let n = data.inputs.len();
        if n == 0 || data.labels.len() != n || data.modes.len() != 3 || data.modes.iter().any(|m| m.len() != n) {
            return invalid("inconsistent model dimensions");
        }
        let d = data.standardizer.dim();
        if data.inputs.iter().any(|r| r.len() != d) {
            return invalid("training input dimension does not match standardizer");
        }
        let k = gram(&data.hyper, &data.inputs, data.jitter);
        let heads = (0..3)
            .map(|c| {
                let targets = targets_for(&data.labels, c);
                head_at_mode(&k, &DVector::from_vec(data.modes[c].clone()), &targets)
            })
            .collect::<Result<_>>()?;
        Ok(Self { data, heads })
    }
}

fn gram(hyper: &GpcHyper, x: &[Vec<f64>], jitter: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = hyper.kernel(&x[i], &x[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += jitter;
    }
    k
}

fn targets_for(labels: &[Concept], class: usize) -> DVector<f64> {
    DVector::from_iterator(labels.len(), labels.iter().map(|l| if l.index() == class { 1.0 } else { 0.0 }))
}

fn head_at_mode(k: &DMatrix<f64>, f: &DVector<f64>, t: &DVector<f64>) -> Result<Head> {
    let n = f.len();
    let p = f.map(sigmoid);
    let sqrt_w = p.map(|pi| (pi * (1.0 - pi)).sqrt());
    let mut b = k.clone();
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] *= sqrt_w[i] * sqrt_w[j];
        }
        b[(i, i)] += 1.0;
    }
    let chol_b = Cholesky::new(b).ok_or(Error::NumericalFailure("Laplace system not positive definite".into()))?;
    Ok(Head { alpha: t - p, sqrt_w, chol_b })
}

fn laplace_mode(k: &DMatrix<f64>, t: &DVector<f64>) -> Result<DVector<f64>> {
    let n = t.len();
    let y = t.map(|v| 2.0 * v - 1.0);
    let mut f = DVector::zeros(n);
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..NEWTON_MAX_ITERS {
        let head = head_at_mode(k, &f, t)?;
        let w = head.sqrt_w.component_mul(&head.sqrt_w);
        let b = w.component_mul(&f) + &head.alpha;
        let kb = k * &b;
        let inner = head.chol_b.solve(&head.sqrt_w.component_mul(&kb));
        let a = &b - head.sqrt_w.component_mul(&inner);
        f = k * &a;
        let obj = -0.5 * a.dot(&f) + f.iter().zip(y.iter()).map(|(fi, yi)| log_sigmoid(yi * fi)).sum::<f64>();
        if !obj.is_finite() {
            return Err(Error::NumericalFailure("Laplace objective diverged".into()));
        }
        if (obj - prev).abs() < NEWTON_TOL * (1.0 + obj.abs()) {
            break;
        }
        prev = obj;
    }
    Ok(f)
}

impl GpcModel {
    /// Fits the three one-vs-rest heads on raw feature rows. Rows are
    /// z-scored by statistics of this training set.
    pub fn train(rows: &[Vec<f64>], labels: &[Concept], hyper: GpcHyper) -> Result<Self> {
        hyper.validate()?;
        if rows.len() != labels.len() {
            return invalid("rows and labels differ in length");
        }
        for c in Concept::ALL {
            let count = labels.iter().filter(|&&l| l == c).count();
            if count < MIN_PER_CLASS {
                return invalid(format!("class {} has {count} examples, need at least {MIN_PER_CLASS}", c.name()));
            }
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("training features must be finite");
        }
        let standardizer = Standardizer::fit(rows)?;
        let inputs: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect::<Result<_>>()?;

        let variance = hyper.signal_std * hyper.signal_std;
        let mut jitter = JITTER_START * variance;
        let k = loop {
            let k = gram(&hyper, &inputs, jitter);
            if Cholesky::new(k.clone()).is_some() {
                break k;
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * variance {
                return Err(Error::NumericalFailure("kernel matrix not positive definite after maximum jitter".into()));
            }
        };
        let mut modes = Vec::with_capacity(3);
        let mut heads = Vec::with_capacity(3);
        for c in 0..3 {
            let t = targets_for(labels, c);
            let f = laplace_mode(&k, &t)?;
            heads.push(head_at_mode(&k, &f, &t)?);
            modes.push(f.as_slice().to_vec());
        }
        let data = GpcModelData {
            version: MODEL_VERSION,
            hyper,
            jitter,
            standardizer,
            inputs,
            labels: labels.to_vec(),
            modes,
        };
        Ok(Self { data, heads })
    }

    pub fn hyper(&self) -> GpcHyper {
        self.data.hyper
    }

    pub fn dim(&self) -> usize {
        self.data.standardizer.dim()
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.data.standardizer
    }

    pub fn training_inputs(&self) -> &[Vec<f64>] {
        &self.data.inputs
    }

    pub fn training_labels(&self) -> &[Concept] {
        &self.data.labels
    }

    pub fn standardize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.data.standardizer.apply(raw)
    }

    fn kstar(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.data.inputs.len(), self.data.inputs.iter().map(|x| self.data.hyper.kernel(z, x)))
    }

    /// Predictive mean of the latent score of head `class` at a
    /// standardized input.
    pub fn latent_mean(&self, class: usize, z: &[f64]) -> f64 {
        self.kstar(z).dot(&self.heads[class].alpha)
    }

    /// Analytic gradient of [`latent_mean`](Self::latent_mean) with
    /// respect to the standardized input.
    pub fn latent_gradient(&self, class: usize, z: &[f64]) -> Vec<f64> {
        let l2 = self.data.hyper.length_scale.powi(2);
        let alpha = &self.heads[class].alpha;
        let mut g = vec![0.0; z.len()];
        for (i, x) in self.data.inputs.iter().enumerate() {
            let w = alpha[i] * self.data.hyper.kernel(z, x) / l2;
            for j in 0..z.len() {
                g[j] -= w * (z[j] - x[j]);
            }
        }
        g
    }

    fn latent_variance(&self, class: usize, kstar: &DVector<f64>) -> f64 {
        let head = &self.heads[class];
        let v = head.sqrt_w.component_mul(kstar);
        let l = head.chol_b.l();
        let s = l.solve_lower_triangular(&v).unwrap_or_else(|| DVector::zeros(v.len()));
        (self.data.hyper.signal_std.powi(2) - s.norm_squared()).max(0.0)
    }

    /// Per-head probabilities before renormalization, each the probit
    /// approximation of the logistic likelihood averaged over the latent
    /// predictive distribution.
    pub fn head_probabilities(&self, z: &[f64]) -> [f64; 3] {
        let kstar = self.kstar(z);
        std::array::from_fn(|c| {
            let mean = kstar.dot(&self.heads[c].alpha);
            let var = self.latent_variance(c, &kstar);
            let kappa = 1.0 / (1.0 + std::f64::consts::PI * var / 8.0).sqrt();
            sigmoid(kappa * mean)
        })
    }

    pub fn predict_standardized(&self, z: &[f64]) -> Result<[f64; 3]> {
        if z.len() != self.dim() {
            return invalid(format!("feature dimension {} does not match model {}", z.len(), self.dim()));
        }
        let p = self.head_probabilities(z);
        let total: f64 = p.iter().sum();
        Ok(p.map(|v| v / total))
    }

    /// π over the three concepts for a raw feature vector.
    pub fn predict_posteriors(&self, raw: &[f64]) -> Result<[f64; 3]> {
        let z = self.standardize(raw)?;
        self.predict_standardized(&z)
    }
}

/// Index of the largest posterior; ties go to the lower index.
pub fn argmax(p: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose arg-max posterior matches the label.
pub fn accuracy(model: &GpcModel, rows: &[Vec<f64>], labels: &[Concept]) -> Result<f64> {
    if rows.is_empty() {
        return invalid("accuracy over an empty set");
    }
    let mut hits = 0usize;
    for (r, l) in rows.iter().zip(labels) {
        if argmax(&model.predict_posteriors(r)?) == l.index() {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows.len() as f64)
}

/// Cross-validated quality of one hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperScore {
    pub hyper: GpcHyper,
    pub accuracy: f64,
    /// Mean negative log predictive probability of the true class.
    pub log_loss: f64,
}

/// Picks hyperparameters by stratified k-fold log loss, so that both the
/// ranking and the confidence of the posteriors count. The j-th row of
/// each class goes to fold `j mod folds`; ties keep the earlier grid entry.
pub fn select_hyper(rows: &[Vec<f64>], labels: &[Concept], grid: &[GpcHyper], folds: usize) -> Result<HyperScore> {
    if grid.is_empty() || folds < 2 {
        return invalid("need a non-empty grid and at least two folds");
    }
    let mut seen = [0usize; 3];
    let fold_of: Vec<usize> = labels
        .iter()
        .map(|l| {
            let f = seen[l.index()] % folds;
            seen[l.index()] += 1;
            f
        })
        .collect();
    let mut best: Option<HyperScore> = None;
    for &h in grid {
        let (mut correct, mut loss) = (0usize, 0.0);
        for fold in 0..folds {
            let split = |keep: bool| -> (Vec<Vec<f64>>, Vec<Concept>) {
                rows.iter()
                    .zip(labels)
                    .zip(&fold_of)
                    .filter(|(_, &f)| (f == fold) != keep)
                    .map(|((r, l), _)| (r.clone(), *l))
                    .unzip()
            };
            let (tr, trl) = split(true);
            let (va, val) = split(false);
            let model = GpcModel::train(&tr, &trl, h)?;
            for (row, label) in va.iter().zip(&val) {
                let p = model.predict_posteriors(row)?;
                correct += usize::from(argmax(&p) == label.index());
                loss -= p[label.index()].max(1e-300).ln();
            }
        }
        let score = HyperScore { hyper: h, accuracy: correct as f64 / rows.len() as f64, log_loss: loss / rows.len() as f64 };
        if best.is_none_or(|b| score.log_loss < b.log_loss) {
            best = Some(score);
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// The {1, 2, 4, 8, 16} × {1, 2, 4, 8} grid of length scale × signal std.
pub fn default_hyper_grid() -> Vec<GpcHyper> {
    let mut g = Vec::new();
    for l in [1.0, 2.0, 4.0, 8.0, 16.0] {
        for s in [1.0, 2.0, 4.0, 8.0] {
            g.push(GpcHyper { length_scale: l, signal_std: s });
        }
    }
    g
}
