//! Activation functions with first and second derivatives.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Activation {
    Relu,
    /// `u / (1 + exp(-s u))`.
    Swish {
        s: f64,
    },
    Tanh,
    Sigmoid,
}

/// An activation together with its smoothness flag. Only ReLU is non-smooth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivationSpec {
    kind: Activation,
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationSpec {
    pub fn new(kind: Activation) -> Result<Self> {
        if let Activation::Swish { s } = kind {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("swish parameter s={s} must be positive")));
            }
        }
        Ok(Self { kind })
    }

    pub fn relu() -> Self {
        Self {
            kind: Activation::Relu,
        }
    }

    pub fn swish(s: f64) -> Result<Self> {
        Self::new(Activation::Swish { s })
    }

    pub fn tanh() -> Self {
        Self {
            kind: Activation::Tanh,
        }
    }

    pub fn sigmoid() -> Self {
        Self {
            kind: Activation::Sigmoid,
        }
    }

    pub fn kind(&self) -> Activation {
        self.kind
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self.kind, Activation::Relu)
    }

    pub fn is_relu(&self) -> bool {
        matches!(self.kind, Activation::Relu)
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match self.kind {
            Activation::Relu => u.max(0.0),
            Activation::Swish { s } => u * logistic(s * u),
            Activation::Tanh => u.tanh(),
            Activation::Sigmoid => logistic(u),
        }
    }

    /// First derivative. ReLU uses the subgradient 0 at the origin.
    #[inline]
    pub fn grad(&self, u: f64) -> f64 {
        match self.kind {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Swish { s } => {
                let g = logistic(s * u);
                g + s * u * g * (1.0 - g)
            }
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let g = logistic(u);
                g * (1.0 - g)
            }
        }
    }

    /// Value and first derivative together (shares the exponential).
    #[inline]
    pub fn value_and_grad(&self, u: f64) -> (f64, f64) {
        match self.kind {
            Activation::Swish { s } => {
                let g = logistic(s * u);
                (u * g, g + s * u * g * (1.0 - g))
            }
            _ => (self.value(u), self.grad(u)),
        }
    }

    /// Second derivative; not defined for ReLU.
    pub fn hess(&self, u: f64) -> Result<f64> {
        Ok(match self.kind {
            Activation::Relu => {
                return Err(Error::invalid(
                    "ReLU has no second derivative; use a smooth activation",
                ))
            }
            Activation::Swish { s } => {
                let g = logistic(s * u);
                s * g * (1.0 - g) * (2.0 + s * u * (1.0 - 2.0 * g))
            }
            Activation::Tanh => {
                let t = u.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let g = logistic(u);
                g * (1.0 - g) * (1.0 - 2.0 * g)
            }
        })
    }

    /// Short stable identifier used in fingerprints and file names.
    pub fn label(&self) -> String {
        match self.kind {
            Activation::Relu => "relu".into(),
            Activation::Swish { s } => format!("swish{s}"),
            Activation::Tanh => "tanh".into(),
            Activation::Sigmoid => "sigmoid".into(),
        }
    }
}

/// Result of scanning an activation against the smoothness/growth bounds
/// `‖σ''‖_∞ ≤ C`, `‖σ'‖_∞ ≤ 2`, `|σ(u)| ≤ 1 + |u|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothnessReport {
    pub c_estimate: f64,
    pub grad_bound_ok: bool,
    pub growth_bound_ok: bool,
}

pub const DEFAULT_SCAN_HALFWIDTH: f64 = 10.0;
pub const DEFAULT_SCAN_POINTS: usize = 100_000;

/// Scans `[-halfwidth, halfwidth]` on an even grid.
pub fn check_smoothness(
    spec: &ActivationSpec,
    halfwidth: f64,
    points: usize,
) -> Result<SmoothnessReport> {
    if !spec.is_smooth() {
        return Err(Error::invalid(
            "ReLU is not twice differentiable; its kernels are handled by the closed-form \
             (ClosedFormReLU) path instead",
        ));
    }
    if points < 2 || !(halfwidth > 0.0) {
        return Err(Error::invalid("scan needs >= 2 points and a positive halfwidth"));
    }
    let mut c: f64 = 0.0;
    let mut grad_ok = true;
    let mut growth_ok = true;
    let step = 2.0 * halfwidth / (points - 1) as f64;
    for i in 0..points {
        let u = -halfwidth + step * i as f64;
        c = c.max(spec.hess(u)?.abs());
        grad_ok &= spec.grad(u).abs() <= 2.0;
        growth_ok &= spec.value(u).abs() <= 1.0 + u.abs();
    }
    Ok(SmoothnessReport {
        c_estimate: c,
        grad_bound_ok: grad_ok,
        growth_bound_ok: growth_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn smooth_family() -> Vec<ActivationSpec> {
        vec![
            ActivationSpec::swish(1.0).unwrap(),
            ActivationSpec::swish(10.0).unwrap(),
            ActivationSpec::tanh(),
            ActivationSpec::sigmoid(),
        ]
    }

    #[test]
    fn swish_at_zero() {
        assert_eq!(ActivationSpec::swish(10.0).unwrap().value(0.0), 0.0);
    }

    #[test]
    fn relu_grad() {
        let r = ActivationSpec::relu();
        assert_eq!(r.grad(2.0), 1.0);
        assert_eq!(r.grad(-2.0), 0.0);
        assert_eq!(r.grad(0.0), 0.0);
        assert!(r.hess(1.0).is_err());
    }

    #[test]
    fn swish_approaches_relu() {
        let v = ActivationSpec::swish(100.0).unwrap().value(0.5);
        assert!((v - 0.5).abs() < 0.005);
        // Direct evaluation: 0.5/(1+e^{-50}).
        assert!((v - 0.5 / (1.0 + (-50.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn swish_rejects_nonpositive_s() {
        assert!(ActivationSpec::swish(0.0).is_err());
        assert!(ActivationSpec::swish(-1.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = crate::numerics::SeededRng::new(5, 0);
        for spec in smooth_family() {
            for _ in 0..100 {
                let u: f64 = rng.random_range(-3.0..3.0);
                let h = 1e-5;
                let fd = (spec.value(u + h) - spec.value(u - h)) / (2.0 * h);
                let g = spec.grad(u);
                assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0), "{spec:?} u={u}");
                let fd2 = (spec.grad(u + h) - spec.grad(u - h)) / (2.0 * h);
                let hs = spec.hess(u).unwrap();
                assert!((fd2 - hs).abs() <= 1e-6 * hs.abs().max(1.0), "{spec:?} u={u}");
            }
        }
    }

    #[test]
    fn swish_converges_pointwise_monotonically() {
        let relu = ActivationSpec::relu();
        for &u in &[-1.5, -0.3, 0.2, 0.8, 2.0] {
            let errs: Vec<(f64, f64)> = [1.0, 10.0, 100.0]
                .iter()
                .map(|&s| {
                    let sw = ActivationSpec::swish(s).unwrap();
                    (
                        (sw.value(u) - relu.value(u)).abs(),
                        (sw.grad(u) - relu.grad(u)).abs(),
                    )
                })
                .collect();
            assert!(errs[0].0 > errs[1].0 && errs[1].0 > errs[2].0, "u={u}");
            assert!(errs[0].1 > errs[1].1 && errs[1].1 > errs[2].1, "u={u}");
        }
    }

    #[test]
    fn smoothness_scan() {
        let t = check_smoothness(&ActivationSpec::tanh(), 10.0, 100_000).unwrap();
        assert!(t.grad_bound_ok);
        let sw = ActivationSpec::swish(10.0).unwrap();
        let r = check_smoothness(&sw, DEFAULT_SCAN_HALFWIDTH, DEFAULT_SCAN_POINTS).unwrap();
        assert!(r.growth_bound_ok);
        assert!(r.c_estimate > 0.0 && r.c_estimate <= 10.0, "C = {}", r.c_estimate);
        // Oracle: a finer 10^6-point scan agrees to grid resolution.
        let fine = check_smoothness(&sw, 10.0, 1_000_000).unwrap();
        assert!((fine.c_estimate - r.c_estimate).abs() < 1e-3);
        assert!(check_smoothness(&ActivationSpec::relu(), 10.0, 100).is_err());
    }
}
