//! Second-order forward jets along a single direction.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Value with its first and second directional derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    pub const fn new(value: f64, d1: f64, d2: f64) -> Self {
        Jet2 { value, d1, d2 }
    }

    pub const fn constant(value: f64) -> Self {
        Jet2 { value, d1: 0.0, d2: 0.0 }
    }

    /// The independent variable itself.
    pub const fn variable(value: f64) -> Self {
        Jet2 { value, d1: 1.0, d2: 0.0 }
    }

    /// Applies a scalar function given its value and first two derivatives at `self.value`.
    pub fn chain(self, f: f64, df: f64, d2f: f64) -> Jet2 {
        Jet2 { value: f, d1: df * self.d1, d2: d2f * self.d1 * self.d1 + df * self.d2 }
    }

    pub fn sin(self) -> Jet2 {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Jet2 {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(self) -> Jet2 {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn tanh(self) -> Jet2 {
        let t = self.value.tanh();
        let s = 1.0 - t * t;
        self.chain(t, s, -2.0 * t * s)
    }

    pub fn powi(self, n: i32) -> Jet2 {
        let v = self.value;
        let nf = n as f64;
        self.chain(v.powi(n), nf * v.powi(n - 1), nf * (nf - 1.0) * v.powi(n - 2))
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        Jet2::new(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl AddAssign for Jet2 {
    fn add_assign(&mut self, o: Jet2) {
        *self = *self + o;
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2::new(self.value - o.value, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        Jet2::new(-self.value, -self.d1, -self.d2)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2::new(
            self.value * o.value,
            self.d1 * o.value + self.value * o.d1,
            self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2,
        )
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, o: Jet2) -> Jet2 {
        let inv = 1.0 / o.value;
        let recip = o.chain(inv, -inv * inv, 2.0 * inv * inv * inv);
        self * recip
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    fn add(self, c: f64) -> Jet2 {
        Jet2::new(self.value + c, self.d1, self.d2)
    }
}

impl Sub<f64> for Jet2 {
    type Output = Jet2;
    fn sub(self, c: f64) -> Jet2 {
        Jet2::new(self.value - c, self.d1, self.d2)
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(self, c: f64) -> Jet2 {
        Jet2::new(self.value * c, self.d1 * c, self.d2 * c)
    }
}

impl Mul<Jet2> for f64 {
    type Output = Jet2;
    fn mul(self, j: Jet2) -> Jet2 {
        j * self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        // p(x) = 3x^3 - 2x^2 + x - 5, built from sums, products and powi.
        #[test]
        fn polynomial_matches_symbolic(x in -10.0f64..10.0) {
            let j = Jet2::variable(x);
            let p = 3.0 * j.powi(3) - 2.0 * (j * j) + j - 5.0;
            let value = 3.0 * x.powi(3) - 2.0 * x * x + x - 5.0;
            let d1 = 9.0 * x * x - 4.0 * x + 1.0;
            let d2 = 18.0 * x - 4.0;
            prop_assert!((p.value - value).abs() <= 1e-12 * value.abs().max(1.0));
            prop_assert!((p.d1 - d1).abs() <= 1e-12 * d1.abs().max(1.0));
            prop_assert!((p.d2 - d2).abs() <= 1e-12 * d2.abs().max(1.0));
        }

        // q(x) = (x^2 + 1) * (2x - 3) composed with the chain rule via powi.
        #[test]
        fn product_and_chain(x in -5.0f64..5.0) {
            let j = Jet2::variable(x);
            let q = (j * j + 1.0) * (2.0 * j - 3.0);
            let r = q.powi(2);
            let qv = (x * x + 1.0) * (2.0 * x - 3.0);
            let q1 = 6.0 * x * x - 6.0 * x + 2.0;
            let q2 = 12.0 * x - 6.0;
            prop_assert!((r.value - qv * qv).abs() <= 1e-10 * (qv * qv).max(1.0));
            prop_assert!((r.d1 - 2.0 * qv * q1).abs() <= 1e-10 * (2.0 * qv * q1).abs().max(1.0));
            let r2 = 2.0 * q1 * q1 + 2.0 * qv * q2;
            prop_assert!((r.d2 - r2).abs() <= 1e-10 * r2.abs().max(1.0));
        }
    }

    #[test]
    fn transcendental_rules() {
        let x = 0.3;
        let s = Jet2::variable(x).sin();
        assert_eq!(s, Jet2::new(x.sin(), x.cos(), -x.sin()));
        let t = Jet2::variable(0.0).tanh();
        assert_eq!((t.value, t.d1, t.d2), (0.0, 1.0, 0.0));
        let q = Jet2::constant(1.0) / Jet2::variable(2.0);
        assert!((q.d1 + 0.25).abs() < 1e-15 && (q.d2 - 0.25).abs() < 1e-15);
    }
}
