use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scenario::PerceptionConfig;
use crate::attribution::{extract_features, Attributor, ConceptReport};
use crate::cloud::{
    estimate_normals, generate_shape, inject_perturbation, pose_perturbation, Concept, NnIndex, PerturbationLabel,
    PointCloud, ShapeParams,
};
use crate::derive_seed;
use crate::error::Result;
use crate::pko::{adapt, AdaptationConfig, AdaptationEvent, PkoAdapter, RegistrationParams, ViewpointMonitor};
use crate::registration::{register_indexed, IcpConfig, KernelFamily, KernelSpec, RigidTransform};

/// What one perception tick measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionOutput {
    pub occluded: bool,
    pub injected: PerturbationLabel,
    /// Obstacle center handed to the controller; frozen while occluded.
    pub estimate: Option<[f64; 2]>,
    pub mean_abs_residual: Option<f64>,
    pub iterations: usize,
    /// Translation error of the registration in the object frame (m).
    pub translation_error: Option<f64>,
    pub report: Option<ConceptReport>,
    pub adaptation: Option<AdaptationEvent>,
    pub viewpoint_request: bool,
    pub error: Option<String>,
}

/// Registration, attribution and parameter adaptation for a single
/// tracked object, carried across ticks.
#[derive(Debug, Clone)]
pub struct Perception<'a> {
    cfg: PerceptionConfig,
    icp: IcpConfig,
    adapter: PkoAdapter,
    adaptation: AdaptationConfig,
    attributor: Option<&'a Attributor>,
    shape: ShapeParams,
    model: PointCloud,
    theta: RegistrationParams,
    frame: u64,
    estimate: Option<Vector2<f64>>,
    viewpoint: ViewpointMonitor,
    seed: u64,
}

impl<'a> Perception<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &PerceptionConfig,
        icp: &IcpConfig,
        adapter: &PkoAdapter,
        adaptation: &AdaptationConfig,
        initial: RegistrationParams,
        attributor: Option<&'a Attributor>,
        shape: &ShapeParams,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        adaptation.validate()?;
        let model = generate_shape(cfg.shape, cfg.n_points, derive_seed(seed, &[0]), shape)?;
        Ok(Self {
            cfg: cfg.clone(),
            icp: icp.clone(),
            adapter: adapter.clone(),
            adaptation: adaptation.clone(),
            attributor,
            shape: shape.clone(),
            model,
            theta: initial,
            frame: 0,
            estimate: None,
            viewpoint: ViewpointMonitor::default(),
            seed,
        })
    }

    pub fn theta(&self) -> RegistrationParams {
        self.theta
    }

    pub fn estimate(&self) -> Option<Vector2<f64>> {
        self.estimate
    }

    fn observe(&self, occluded: bool, tick_seed: u64) -> Result<(PointCloud, PerturbationLabel, RigidTransform)> {
        let cfg = &self.cfg;
        let clean = generate_shape(cfg.shape, cfg.n_points, derive_seed(tick_seed, &[1]), &self.shape)?;
        let (rot, t) = pose_perturbation(cfg.pose_offset, derive_seed(tick_seed, &[2]));
        let truth = RigidTransform::from_parts(rot, t);
        let placed = PointCloud::new(clean.points().iter().map(|p| truth.apply(p)).collect())?;
        let label = if occluded {
            let [lo, hi] = cfg.occluded_overlap;
            let retained = crate::rng_from_seed(derive_seed(tick_seed, &[3])).random_range(lo..=hi);
            PerturbationLabel::new(Concept::PartialOverlap, retained)?
        } else {
            PerturbationLabel::new(Concept::SensorNoise, cfg.visible_noise)?
        };
        let perturbed = inject_perturbation(&placed, label, derive_seed(tick_seed, &[4]))?;
        let k = cfg.normal_k.min(perturbed.len() - 1);
        Ok((estimate_normals(&perturbed, k)?, label, truth))
    }

    /// One tick against the true obstacle center `truth`.
    pub fn tick(&mut self, truth: Vector2<f64>, occluded: bool) -> PerceptionOutput {
        let tick_seed = derive_seed(self.seed, &[1, self.frame]);
        let frame = self.frame;
        self.frame += 1;
        let fallback_label = PerturbationLabel { concept: Concept::SensorNoise, magnitude: self.cfg.visible_noise };
        let mut out = PerceptionOutput {
            occluded,
            injected: fallback_label,
            estimate: self.estimate.map(Into::into),
            mean_abs_residual: None,
            iterations: 0,
            translation_error: None,
            report: None,
            adaptation: None,
            viewpoint_request: false,
            error: None,
        };
        if let Err(e) = self.tick_inner(truth, occluded, tick_seed, frame, &mut out) {
            out.error = Some(e.to_string());
        }
        if !occluded && out.error.is_none() {
            out.estimate = self.estimate.map(Into::into);
        }
        out
    }

    fn tick_inner(&mut self, truth: Vector2<f64>, occluded: bool, tick_seed: u64, frame: u64, out: &mut PerceptionOutput) -> Result<()> {
        let (observation, label, truth_tf) = self.observe(occluded, tick_seed)?;
        out.injected = label;
        let index = NnIndex::build(&observation)?;
        let icp = IcpConfig { gate_multiplier: self.theta.gate_multiplier, ..self.icp.clone() };
        let adapter = self.adapter.with_params(&self.theta);
        let kernel = KernelSpec::new(KernelFamily::Welsch, self.cfg.initial_scale)?;
        let result =
            register_indexed(&self.model, &observation, &index, &RigidTransform::identity(), kernel, &icp, Some(&adapter))?;
        out.mean_abs_residual = Some(result.mean_abs_residual);
        out.iterations = result.iterations;
        let err = (result.transform.translation() - truth_tf.translation()) * self.cfg.object_scale;
        out.translation_error = Some(err.norm());
        if !occluded {
            self.estimate = Some(truth + Vector2::new(err.x, err.y));
        }

        let Some(attributor) = self.attributor else {
            return Ok(());
        };
        let report = attributor.report(&extract_features(&result)?)?;
        let remaining = self.cfg.budget - result.iterations as f64 * self.cfg.iteration_cost;
        let step = adapt(&self.theta, &report.posteriors, report.entropy, report.ood, remaining, &self.adaptation, frame);
        let request = self.viewpoint.observe(report.dominant, self.adaptation.viewpoint_persistence);
        let last = result.scale_trace.last();
        out.adaptation = Some(AdaptationEvent {
            frame,
            status: step.status,
            triggers: crate::pko::TriggerFlags { viewpoint_request: request, ..step.flags },
            posteriors: report.posteriors,
            entropy: report.entropy,
            theta_before: self.theta,
            theta_after: step.params,
            c_star: last.map(|c| c.scale),
            js_star: last.map(|c| c.js),
        });
        out.viewpoint_request = request;
        out.report = Some(report);
        self.theta = step.params;
        Ok(())
    }
}
