use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Pointwise nonlinearities available to branch, trunk and correlation nets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Identity,
    Tanh,
    Relu,
    Silu,
    Gelu,
    Hat,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Identity,
        ActivationKind::Tanh,
        ActivationKind::Relu,
        ActivationKind::Silu,
        ActivationKind::Gelu,
        ActivationKind::Hat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Relu => "relu",
            ActivationKind::Silu => "silu",
            ActivationKind::Gelu => "gelu",
            ActivationKind::Hat => "hat",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }

    /// Whether second input derivatives through this activation are meaningful.
    /// ReLU and Hat are piecewise linear: their second derivative vanishes almost everywhere.
    pub fn is_smooth(self) -> bool {
        !matches!(self, ActivationKind::Relu | ActivationKind::Hat)
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => x,
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Silu => x / (1.0 + (-x).exp()),
            ActivationKind::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            ActivationKind::Hat => {
                if (0.0..1.0).contains(&x) {
                    x
                } else if (1.0..2.0).contains(&x) {
                    2.0 - x
                } else {
                    0.0
                }
            }
        }
    }

    /// `[σ, σ', σ'', σ''']` at `x`.
    pub fn derivatives(self, x: f64) -> [f64; 4] {
        match self {
            ActivationKind::Identity => [x, 1.0, 0.0, 0.0],
            ActivationKind::Tanh => {
                let t = x.tanh();
                let s = 1.0 - t * t;
                [t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)]
            }
            ActivationKind::Relu => {
                if x > 0.0 {
                    [x, 1.0, 0.0, 0.0]
                } else {
                    [0.0, 0.0, 0.0, 0.0]
                }
            }
            ActivationKind::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                let s1 = s * (1.0 - s);
                let s2 = s1 * (1.0 - 2.0 * s);
                let s3 = s1 * (1.0 - 6.0 * s + 6.0 * s * s);
                [x * s, s + x * s1, 2.0 * s1 + x * s2, 3.0 * s2 + x * s3]
            }
            ActivationKind::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
                [x * cdf, cdf + x * pdf, pdf * (2.0 - x * x), pdf * (x * x * x - 4.0 * x)]
            }
            ActivationKind::Hat => {
                let v = self.eval(x);
                let d = if (0.0..1.0).contains(&x) {
                    1.0
                } else if (1.0..2.0).contains(&x) {
                    -1.0
                } else {
                    0.0
                };
                [v, d, 0.0, 0.0]
            }
        }
    }
}

/// An activation, optionally wrapped as a layer-wise locally adaptive
/// function `σ(n · a · x)` with fixed scale `n` and a trainable per-layer slope `a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    #[serde(default)]
    pub laaf_scale: Option<f64>,
}

impl Activation {
    pub fn plain(kind: ActivationKind) -> Self {
        Activation { kind, laaf_scale: None }
    }

    pub fn adaptive(kind: ActivationKind, scale: f64) -> Self {
        Activation { kind, laaf_scale: Some(scale) }
    }

    /// Initial slope `a = 1/n`, so that `n · a = 1` at the start of training.
    pub fn initial_slope(&self) -> Option<f64> {
        self.laaf_scale.map(|n| 1.0 / n)
    }

    pub fn eval(&self, x: f64, slope: Option<f64>) -> f64 {
        match (self.laaf_scale, slope) {
            (Some(n), Some(a)) => self.kind.eval(n * a * x),
            _ => self.kind.eval(x),
        }
    }

    pub fn require_order(&self, order: usize) -> Result<()> {
        if order >= 2 && !self.kind.is_smooth() {
            return Err(Error::UnsupportedActivationOrder(self.kind));
        }
        Ok(())
    }
}

/// Plain activation value.
pub fn activation_eval(kind: ActivationKind, x: f64) -> f64 {
    kind.eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hat_piecewise() {
        let h = ActivationKind::Hat;
        assert_eq!(h.eval(0.5), 0.5);
        assert_eq!(h.eval(1.5), 0.5);
        assert_eq!(h.eval(3.0), 0.0);
        assert_eq!(h.eval(-0.2), 0.0);
        assert_eq!(h.eval(1.0), 1.0);
        assert_eq!(h.eval(2.0), 0.0);
    }

    #[test]
    fn zero_at_origin() {
        for k in [ActivationKind::Silu, ActivationKind::Gelu, ActivationKind::Tanh, ActivationKind::Relu] {
            assert_eq!(activation_eval(k, 0.0), 0.0);
        }
    }

    #[test]
    fn laaf_identity_scaling() {
        let act = Activation::adaptive(ActivationKind::Tanh, 2.0);
        assert_eq!(act.eval(1.0, Some(0.5)), 1.0_f64.tanh());
        assert_eq!(act.initial_slope(), Some(0.5));
    }

    #[test]
    fn gelu_matches_erf_form() {
        let x: f64 = 0.7;
        let expected = x * 0.5 * (1.0 + libm::erf(x / 2f64.sqrt()));
        assert!((ActivationKind::Gelu.eval(x) - expected).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for kind in [ActivationKind::Tanh, ActivationKind::Silu, ActivationKind::Gelu, ActivationKind::Identity] {
            for &x in &[-1.7, -0.3, 0.0, 0.4, 2.1] {
                let d = kind.derivatives(x);
                let dp = kind.derivatives(x + h);
                let dm = kind.derivatives(x - h);
                assert!((d[0] - kind.eval(x)).abs() < 1e-15);
                for k in 0..3 {
                    let fd = (dp[k] - dm[k]) / (2.0 * h);
                    assert!((fd - d[k + 1]).abs() < 1e-8, "{kind:?} order {} at {x}: {fd} vs {}", k + 1, d[k + 1]);
                }
            }
        }
    }

    #[test]
    fn piecewise_linear_rejected_at_order_two() {
        assert!(Activation::plain(ActivationKind::Relu).require_order(2).is_err());
        assert!(Activation::plain(ActivationKind::Hat).require_order(2).is_err());
        assert!(Activation::plain(ActivationKind::Relu).require_order(1).is_ok());
        assert!(Activation::plain(ActivationKind::Gelu).require_order(2).is_ok());
    }
}
