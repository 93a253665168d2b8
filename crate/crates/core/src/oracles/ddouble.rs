//! Double-double arithmetic (about 106 significand bits) for re-checking
//! results obtained in `f64`.

use std::ops::{Add, Mul, Neg, Sub};

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DD = DD { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DD {
    pub const ZERO: DD = DD { hi: 0.0, lo: 0.0 };
    pub const ONE: DD = DD { hi: 1.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Self {
        DD { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Multiplication by `2^k`, exact barring overflow.
    pub fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        DD { hi: self.hi * s, lo: self.lo * s }
    }

    pub fn div_f64(self, d: f64) -> Self {
        let q1 = self.hi / d;
        let (p, e) = two_prod(q1, d);
        let r = (self.hi - p - e + self.lo) / d;
        let (hi, lo) = quick_two_sum(q1, r);
        DD { hi, lo }
    }

    pub fn exp(self) -> Self {
        if self.hi == 0.0 && self.lo == 0.0 {
            return DD::ONE;
        }
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * DD::from_f64(k);
        // |r| ≤ ln2/2, so the Taylor tail after 30 terms is far below 2^-106.
        let mut term = DD::ONE;
        let mut sum = DD::ONE;
        for n in 1..30 {
            term = (term * r).div_f64(n as f64);
            sum = sum + term;
        }
        sum.ldexp(k as i32)
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, o: DD) -> DD {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        DD { hi, lo }
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, o: DD) -> DD {
        self + (-o)
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, o: DD) -> DD {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        DD { hi, lo }
    }
}
