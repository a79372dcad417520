use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Robust kernel families for IRLS weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    /// `min(1, c/|r|)`
    Huber,
    /// `c⁴ / (c² + r²)²`
    GemanMcClure,
    /// `exp(−r²/c²)`
    Welsch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub scale: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return invalid(format!("kernel scale {scale} must be positive and finite"));
        }
        Ok(Self { family, scale })
    }

    pub fn weight(&self, r: f64) -> f64 {
        kernel_weight(r, self)
    }
}

/// IRLS weight `w(r; c)`: 1 at `r = 0`, non-increasing in `|r|`.
pub fn kernel_weight(r: f64, k: &KernelSpec) -> f64 {
    let c = k.scale;
    match k.family {
        KernelFamily::Huber => {
            let a = r.abs();
            if a <= c { 1.0 } else { c / a }
        }
        KernelFamily::GemanMcClure => {
            let c2 = c * c;
            let d = c2 + r * r;
            (c2 / d) * (c2 / d)
        }
        KernelFamily::Welsch => (-(r * r) / (c * c)).exp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAMILIES: [KernelFamily; 3] = [KernelFamily::Huber, KernelFamily::GemanMcClure, KernelFamily::Welsch];

    #[test]
    fn unit_weight_at_zero() {
        for f in FAMILIES {
            assert_eq!(kernel_weight(0.0, &KernelSpec::new(f, 0.3).unwrap()), 1.0);
        }
    }

    #[test]
    fn welsch_at_scale() {
        let k = KernelSpec::new(KernelFamily::Welsch, 0.2).unwrap();
        assert!((kernel_weight(0.2, &k) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(kernel_weight(20.0, &k) < 1e-3);
    }

    #[test]
    fn weights_vanish_for_outliers_and_are_monotone() {
        for f in FAMILIES {
            let k = KernelSpec::new(f, 0.1).unwrap();
            let mut prev = 1.0;
            for i in 0..2000 {
                let w = kernel_weight(i as f64 * 0.01, &k);
                assert!(w <= prev && w > 0.0 || w == 0.0);
                prev = w;
            }
            assert!(kernel_weight(1e6, &k) < 1e-3);
            assert_eq!(kernel_weight(-0.05, &k), kernel_weight(0.05, &k));
        }
    }

    #[test]
    fn scale_must_be_positive() {
        assert!(KernelSpec::new(KernelFamily::Welsch, 0.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Huber, f64::NAN).is_err());
    }
}
