use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Catmull-Rom spline through control points, uniformly parametrized over
/// `s ∈ [0, 1]`, carrying a heading channel interpolated the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpline {
    pub points: Vec<[f64; 2]>,
    pub headings: Vec<f64>,
    /// Closed curves wrap around; open curves repeat their end points.
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub position: Vector2<f64>,
    /// d position / d s.
    pub derivative: Vector2<f64>,
    pub tangent: Vector2<f64>,
    pub heading: f64,
    pub heading_rate: f64,
    /// Set when the query was outside `[0, 1]` and got clamped.
    pub clamped: bool,
}

fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> (f64, f64) {
    let a = 2.0 * p1;
    let b = p2 - p0;
    let c = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3;
    let d = -p0 + 3.0 * p1 - 3.0 * p2 + p3;
    let v = 0.5 * (a + b * t + c * t * t + d * t * t * t);
    let dv = 0.5 * (b + 2.0 * c * t + 3.0 * d * t * t);
    (v, dv)
}

impl PathSpline {
    pub fn new(points: Vec<[f64; 2]>, headings: Vec<f64>, closed: bool) -> Result<Self> {
        let s = Self { points, headings, closed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 || (self.closed && self.points.len() < 3) {
            return invalid("a path needs at least two control points (three when closed)");
        }
        if self.headings.len() != self.points.len() {
            return invalid("one heading per control point is required");
        }
        if self.points.iter().flatten().chain(&self.headings).any(|v| !v.is_finite()) {
            return invalid("path control data must be finite");
        }
        Ok(())
    }

    /// Bernoulli lemniscate `x = a cos t / (1 + sin² t)`, `y = a sin t cos t / (1 + sin² t)`
    /// sampled at `n` equally spaced parameters, with constant heading.
    pub fn lemniscate(half_width: f64, center: [f64; 2], n: usize, heading: f64) -> Result<Self> {
        if n < 4 || !(half_width > 0.0) {
            return invalid("lemniscate needs at least 4 samples and a positive half width");
        }
        let points = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                let den = 1.0 + t.sin().powi(2);
                [center[0] + half_width * t.cos() / den, center[1] + half_width * t.sin() * t.cos() / den]
            })
            .collect();
        Self::new(points, vec![heading; n], true)
    }

    fn segments(&self) -> usize {
        if self.closed { self.points.len() } else { self.points.len() - 1 }
    }

    fn index(&self, i: isize) -> usize {
        let n = self.points.len() as isize;
        if self.closed { i.rem_euclid(n) as usize } else { i.clamp(0, n - 1) as usize }
    }

    pub fn eval(&self, s: f64) -> PathPoint {
        let clamped = !(0.0..=1.0).contains(&s);
        let s = s.clamp(0.0, 1.0);
        let m = self.segments();
        let x = s * m as f64;
        let seg = (x.floor() as usize).min(m - 1);
        let t = x - seg as f64;
        let idx: [usize; 4] = std::array::from_fn(|k| self.index(seg as isize + k as isize - 1));
        let channel = |f: &dyn Fn(usize) -> f64| {
            let (v, dv) = catmull_rom(f(idx[0]), f(idx[1]), f(idx[2]), f(idx[3]), t);
            (v, dv * m as f64)
        };
        let (px, dpx) = channel(&|i| self.points[i][0]);
        let (py, dpy) = channel(&|i| self.points[i][1]);
        let (heading, heading_rate) = channel(&|i| self.headings[i]);
        let derivative = Vector2::new(dpx, dpy);
        let norm = derivative.norm();
        let tangent = if norm > 0.0 { derivative / norm } else { Vector2::new(1.0, 0.0) };
        PathPoint { position: Vector2::new(px, py), derivative, tangent, heading, heading_rate, clamped }
    }

    /// Arc length by composite Simpson over each segment.
    pub fn length(&self) -> f64 {
        let n = 64 * self.segments();
        let h = 1.0 / n as f64;
        let f = |s: f64| self.eval(s).derivative.norm();
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    }
}
