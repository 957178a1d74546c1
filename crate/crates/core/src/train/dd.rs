//! Double-double arithmetic (~106-bit significand) for the finite-difference
//! oracle. Only what the cell equations need: + - × ÷, exp, tanh, sigmoid.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn mul_pow2(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        // x = k·ln2 + r, then exp(r) = (exp(r / 2^9))^(2^9)
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from_f64(k)).mul_pow2(-9);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..=22 {
            term = term * r / Dd::from_f64(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..9 {
            sum = sum * sum;
        }
        // split the power of two so neither factor over/underflows
        let k = k as i32;
        let half = k / 2;
        sum.mul_pow2(half).mul_pow2(k - half)
    }

    pub fn sigmoid(self) -> Dd {
        Dd::ONE / (Dd::ONE + (-self).exp())
    }

    pub fn tanh(self) -> Dd {
        if self.hi > 40.0 {
            return Dd::ONE;
        }
        if self.hi < -40.0 {
            return -Dd::ONE;
        }
        let e = (self + self).exp();
        (e - Dd::ONE) / (e + Dd::ONE)
    }
}

impl Add for Dd {
    type Output = Dd;

    fn add(self, y: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, y.hi);
        let (t, f) = two_sum(self.lo, y.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;

    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;

    fn sub(self, y: Dd) -> Dd {
        self + (-y)
    }
}

impl Mul for Dd {
    type Output = Dd;

    fn mul(self, y: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, y.hi);
        let e = e + (self.hi * y.lo + self.lo * y.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;

    fn div(self, y: Dd) -> Dd {
        let q1 = self.hi / y.hi;
        let r = self - y * Dd::from_f64(q1);
        let q2 = r.hi / y.hi;
        let r = r - y * Dd::from_f64(q2);
        let q3 = r.hi / y.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from_f64(q3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_beats_f64() {
        // fl(0.1) + fl(0.2) - fl(0.3) is exactly 2^-55
        let x = Dd::from_f64(0.1) + Dd::from_f64(0.2) - Dd::from_f64(0.3);
        assert_eq!(x.to_f64(), 2f64.powi(-55));
        assert_ne!(0.1 + 0.2 - 0.3, 2f64.powi(-55));
        let third = Dd::ONE / Dd::from_f64(3.0);
        let back = third * Dd::from_f64(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-31);
    }

    #[test]
    fn transcendental_functions_agree_with_f64() {
        for &x in &[-30.0, -5.5, -1.0, -1e-3, 0.0, 1e-7, 0.3, 1.0, 2.5, 17.0, 300.0] {
            let e = Dd::from_f64(x).exp().to_f64();
            assert!(((e - x.exp()) / x.exp()).abs() < 4e-16, "exp({x})");
            let t = Dd::from_f64(x).tanh().to_f64();
            assert!((t - x.tanh()).abs() < 4e-16, "tanh({x})");
            let s = Dd::from_f64(x).sigmoid().to_f64();
            assert!((s - 1.0 / (1.0 + (-x).exp())).abs() < 4e-16, "sigmoid({x})");
        }
        // exp(1) to double-double accuracy
        let e = Dd::ONE.exp();
        assert_eq!(e.hi, std::f64::consts::E);
        assert!((e.lo - 1.4456468917292502e-16).abs() < 1e-28, "{e:?}");
    }

    #[test]
    fn exp_is_multiplicative_to_high_precision() {
        let a = Dd::from_f64(0.731);
        let b = Dd::from_f64(-2.19);
        let lhs = (a + b).exp();
        let rhs = a.exp() * b.exp();
        assert!(((lhs - rhs) / lhs).to_f64().abs() < 1e-29);
    }
}
