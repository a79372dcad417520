//! Registration benchmark over perturbed synthetic shapes, and the labeled
//! feature dataset the concept classifier is trained on.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{extract_features, FeatureVector};
use crate::cloud::{
    estimate_normals, generate_shape, inject_perturbation, Concept, NnIndex, PerturbationLabel, PointCloud, ShapeKind,
    ShapeParams,
};
use crate::error::{invalid, Result};
use crate::pko::PkoAdapter;
use crate::registration::{register_indexed, IcpConfig, KernelFamily, KernelSpec, RegistrationResult, RigidTransform};
use crate::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationRanges {
    /// Noise standard deviation (m); shapes have unit bounding-box diameter.
    pub noise: [f64; 2],
    /// Rotation angle (rad); the translation norm matches it numerically.
    pub pose: [f64; 2],
    /// Retained fraction.
    pub overlap: [f64; 2],
}

impl Default for PerturbationRanges {
    fn default() -> Self {
        Self { noise: [0.005, 0.03], pose: [0.05, 0.3], overlap: [0.4, 0.9] }
    }
}

impl PerturbationRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("noise", self.noise), ("pose", self.pose), ("overlap", self.overlap)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return invalid(format!("{name} range must satisfy 0 < low <= high"));
            }
        }
        if self.overlap[1] > 1.0 {
            return invalid("overlap fraction cannot exceed 1");
        }
        Ok(())
    }

    pub fn range(&self, concept: Concept) -> [f64; 2] {
        match concept {
            Concept::SensorNoise => self.noise,
            Concept::PoseError => self.pose,
            Concept::PartialOverlap => self.overlap,
        }
    }

    pub fn draw(&self, concept: Concept, seed: u64) -> PerturbationLabel {
        let [lo, hi] = self.range(concept);
        let m = if hi > lo { rng_from_seed(seed).random_range(lo..=hi) } else { lo };
        PerturbationLabel { concept, magnitude: m }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Perturbation draws per shape; draw `i` injects concept `i mod 3`.
    pub draws: usize,
    pub n_points: usize,
    /// Neighborhood size for re-estimating normals of the observation.
    pub normal_k: usize,
    pub ranges: PerturbationRanges,
    /// Scale of the fixed kernel used by the standard method.
    pub standard_scale: f64,
    pub family: KernelFamily,
    /// Largest tolerated share of failed registrations per method.
    pub max_failure_rate: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            draws: 50,
            n_points: 1000,
            normal_k: 10,
            ranges: PerturbationRanges::default(),
            standard_scale: 1.0,
            family: KernelFamily::Welsch,
            max_failure_rate: 0.1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        if self.draws == 0 || self.n_points < 100 || self.normal_k < 3 {
            return invalid("benchmark needs draws ≥ 1, n_points ≥ 100, normal_k ≥ 3");
        }
        if !(self.standard_scale > 0.0) || !(0.0..=1.0).contains(&self.max_failure_rate) {
            return invalid("standard_scale must be positive and max_failure_rate in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Standard,
    Pko,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Pko => "pko",
        }
    }
}

/// A perturbed observation of a shape paired with the clean model it
/// should be registered against.
#[derive(Debug, Clone)]
pub struct Scene {
    pub model: PointCloud,
    pub observation: PointCloud,
    pub index: NnIndex,
    pub label: PerturbationLabel,
}

/// Model and observation come from independent samplings of the shape;
/// the observation is perturbed and gets fresh normals.
pub fn make_scene(
    kind: ShapeKind,
    n_points: usize,
    label: PerturbationLabel,
    normal_k: usize,
    params: &ShapeParams,
    seed: u64,
) -> Result<Scene> {
    let model = generate_shape(kind, n_points, derive_seed(seed, &[1]), params)?;
    let clean = generate_shape(kind, n_points, derive_seed(seed, &[2]), params)?;
    let perturbed = inject_perturbation(&clean, label, derive_seed(seed, &[3]))?;
    let k = normal_k.min(perturbed.len() - 1);
    let observation = estimate_normals(&perturbed, k)?;
    let index = NnIndex::build(&observation)?;
    Ok(Scene { model, observation, index, label })
}

pub fn register_scene(
    scene: &Scene,
    method: Method,
    cfg: &BenchConfig,
    icp: &IcpConfig,
    adapter: &PkoAdapter,
) -> Result<RegistrationResult> {
    let kernel = KernelSpec::new(cfg.family, cfg.standard_scale)?;
    let adapter: Option<&dyn crate::registration::ScaleAdapter> = match method {
        Method::Standard => None,
        Method::Pko => Some(adapter),
    };
    register_indexed(&scene.model, &scene.observation, &scene.index, &RigidTransform::identity(), kernel, icp, adapter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub shape: ShapeKind,
    pub draw: usize,
    pub method: Method,
    pub concept: Concept,
    pub magnitude: f64,
    /// `None` when the registration failed.
    pub mean_residual: Option<f64>,
    pub iterations: usize,
    pub wall_ms: f64,
    /// Kernel-scale trace of the adaptive method.
    pub scale_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSummary {
    pub shape: ShapeKind,
    pub standard_mean: f64,
    pub pko_mean: f64,
    pub ratio: f64,
    pub standard_ms: f64,
    pub pko_ms: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<ShapeSummary>,
    pub failure_rate: f64,
}

pub const BENCH_CSV_HEADER: [&str; 8] =
    ["shape", "draw", "method", "concept", "magnitude", "mean_residual", "iterations", "wall_ms"];

impl BenchRow {
    pub fn csv_record(&self) -> Vec<String> {
        use crate::io::format_f64;
        vec![
            self.shape.name().into(),
            self.draw.to_string(),
            self.method.name().into(),
            self.concept.name().into(),
            format_f64(self.magnitude),
            self.mean_residual.map_or_else(|| "nan".into(), format_f64),
            self.iterations.to_string(),
            format_f64(self.wall_ms),
        ]
    }
}

fn bench_cell(kind: ShapeKind, draw: usize, cfg: &BenchConfig, icp: &IcpConfig, adapter: &PkoAdapter, params: &ShapeParams, seed: u64) -> Vec<BenchRow> {
    let cell_seed = derive_seed(seed, &[kind as u64, draw as u64]);
    let concept = Concept::from_index(draw % 3).expect("index below 3");
    let label = cfg.ranges.draw(concept, derive_seed(cell_seed, &[0]));
    let scene = make_scene(kind, cfg.n_points, label, cfg.normal_k, params, cell_seed);
    [Method::Standard, Method::Pko]
        .into_iter()
        .map(|method| {
            let start = Instant::now();
            let result = scene.as_ref().ok().and_then(|s| register_scene(s, method, cfg, icp, adapter).ok());
            BenchRow {
                shape: kind,
                draw,
                method,
                concept,
                magnitude: label.magnitude,
                mean_residual: result.as_ref().map(|r| r.mean_abs_residual),
                iterations: result.as_ref().map_or(0, |r| r.iterations),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                scale_trace: result.map_or_else(Vec::new, |r| r.scale_trace.iter().map(|c| c.scale).collect()),
            }
        })
        .collect()
}

/// Standard and adaptive registration over every shape and draw. Cells
/// run in parallel; rows come back in (shape, draw, method) order.
pub fn run_benchmark(cfg: &BenchConfig, icp: &IcpConfig, adapter: &PkoAdapter, params: &ShapeParams, seed: u64) -> Result<BenchReport> {
    cfg.validate()?;
    let cells: Vec<(ShapeKind, usize)> =
        ShapeKind::ALL.iter().flat_map(|&k| (0..cfg.draws).map(move |d| (k, d))).collect();
    let rows: Vec<BenchRow> = cells
        .par_iter()
        .map(|&(k, d)| bench_cell(k, d, cfg, icp, adapter, params, seed))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mean = |xs: Vec<f64>| if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let summaries = ShapeKind::ALL
        .iter()
        .map(|&shape| {
            let of = |m: Method| rows.iter().filter(move |r| r.shape == shape && r.method == m);
            let standard_mean = mean(of(Method::Standard).filter_map(|r| r.mean_residual).collect());
            let pko_mean = mean(of(Method::Pko).filter_map(|r| r.mean_residual).collect());
            ShapeSummary {
                shape,
                standard_mean,
                pko_mean,
                ratio: pko_mean / standard_mean,
                standard_ms: mean(of(Method::Standard).map(|r| r.wall_ms).collect()),
                pko_ms: mean(of(Method::Pko).map(|r| r.wall_ms).collect()),
                failures: rows.iter().filter(|r| r.shape == shape && r.mean_residual.is_none()).count(),
            }
        })
        .collect();
    let failure_rate = rows.iter().filter(|r| r.mean_residual.is_none()).count() as f64 / rows.len() as f64;
    Ok(BenchReport { rows, summaries, failure_rate })
}

/// Table of mean residuals and latency per shape and method.
pub fn format_summary(report: &BenchReport) -> String {
    let mut s = String::from("shape   method    mean_residual   mean_ms\n");
    for sm in &report.summaries {
        s += &format!("{:<7} standard  {:<14.6e}  {:.2}\n", sm.shape.name(), sm.standard_mean, sm.standard_ms);
        s += &format!("{:<7} pko       {:<14.6e}  {:.2}\n", sm.shape.name(), sm.pko_mean, sm.pko_ms);
        s += &format!("{:<7} ratio pko/standard = {:.4}\n", sm.shape.name(), sm.ratio);
    }
    s += "(the GPU Stein-ICP column is not reproduced)\n";
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub samples_per_class: usize,
    pub n_points: usize,
    pub normal_k: usize,
    pub ranges: PerturbationRanges,
    /// Initial kernel scale handed to the adaptive registration.
    pub initial_scale: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { samples_per_class: 60, n_points: 400, normal_k: 10, ranges: PerturbationRanges::default(), initial_scale: 1.0 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        if self.samples_per_class == 0 || self.n_points < 100 || self.normal_k < 3 || !(self.initial_scale > 0.0) {
            return invalid("dataset needs samples ≥ 1, n_points ≥ 100, normal_k ≥ 3 and a positive initial scale");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub shape: ShapeKind,
    pub concept: Concept,
    pub magnitude: f64,
    pub features: FeatureVector,
}

/// Adaptive registration of a scene followed by feature extraction.
pub fn scene_features(scene: &Scene, initial_scale: f64, icp: &IcpConfig, adapter: &PkoAdapter) -> Result<(RegistrationResult, FeatureVector)> {
    let kernel = KernelSpec::new(KernelFamily::Welsch, initial_scale)?;
    let result = register_indexed(&scene.model, &scene.observation, &scene.index, &RigidTransform::identity(), kernel, icp, Some(adapter))?;
    let features = extract_features(&result)?;
    Ok((result, features))
}

/// Labeled features from seeded injections. Sample `i` uses shape
/// `(i / 3) mod 3` and concept `i mod 3`; failed registrations are skipped.
pub fn generate_dataset(cfg: &DatasetConfig, icp: &IcpConfig, adapter: &PkoAdapter, params: &ShapeParams, seed: u64) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let total = 3 * cfg.samples_per_class;
    let samples: Vec<Option<LabeledSample>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[i as u64]);
            let concept = Concept::from_index(i % 3).expect("index below 3");
            let shape = ShapeKind::ALL[(i / 3) % 3];
            let label = cfg.ranges.draw(concept, derive_seed(s, &[0]));
            let scene = make_scene(shape, cfg.n_points, label, cfg.normal_k, params, s).ok()?;
            let (_, features) = scene_features(&scene, cfg.initial_scale, icp, adapter).ok()?;
            Some(LabeledSample { shape, concept, magnitude: label.magnitude, features })
        })
        .collect();
    Ok(samples.into_iter().flatten().collect())
}
