//! Double-double arithmetic: an unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`,
//! giving roughly 106 bits of significand. Products use fused multiply-add.

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
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let s = self.hi.sqrt();
        let (p, e) = two_prod(s, s);
        let r = (self - Dd { hi: p, lo: e }).hi;
        let (hi, lo) = fast_two_sum(s, r / (2.0 * s));
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn powi(self, n: u32) -> Dd {
        (0..n).fold(Dd::from(1.0), |acc, _| acc * self)
    }

    /// Positive real `n`-th root by Newton refinement of the `f64` root.
    pub fn root(self, n: u32) -> Dd {
        let mut y = Dd::from(self.hi.powf(1.0 / n as f64));
        for _ in 0..3 {
            let p = y.powi(n - 1);
            y = y - (p * y - self) / (Dd::from(n as f64) * p);
        }
        y
    }

    /// `(sin x, cos x)` by reduction modulo π/2 and Taylor series on `|r| ≤ π/4`.
    pub fn sin_cos(self) -> (Dd, Dd) {
        const HALF_PI: Dd = Dd {
            hi: std::f64::consts::FRAC_PI_2,
            lo: 6.123233995736766e-17,
        };
        let k = (self.hi / HALF_PI.hi).round();
        let r = self - Dd::from(k) * HALF_PI;
        let r2 = r * r;
        let (mut s, mut c) = (r, Dd::from(1.0));
        let (mut ts, mut tc) = (r, Dd::from(1.0));
        for n in 1..40 {
            let m = 2.0 * n as f64;
            ts = -(ts * r2) / Dd::from(m * (m + 1.0));
            tc = -(tc * r2) / Dd::from((m - 1.0) * m);
            s = s + ts;
            c = c + tc;
            if tc.hi.abs() < 1e-36 {
                break;
            }
        }
        match (k as i64).rem_euclid(4) {
            0 => (s, c),
            1 => (c, -s),
            2 => (-s, -c),
            _ => (-c, s),
        }
    }
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
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

impl Add for Dd {
    type Output = Dd;
    fn add(self, y: Dd) -> Dd {
        let (sh, sl) = two_sum(self.hi, y.hi);
        let (th, tl) = two_sum(self.lo, y.lo);
        let (sh, sl) = fast_two_sum(sh, sl + th);
        let (hi, lo) = fast_two_sum(sh, sl + tl);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, y: Dd) -> Dd {
        self + -y
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, y: Dd) -> Dd {
        let (ch, cl) = two_prod(self.hi, y.hi);
        let t = self.hi.mul_add(y.lo, self.lo * y.hi);
        let (hi, lo) = fast_two_sum(ch, cl + t);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, y: Dd) -> Dd {
        let q1 = self.hi / y.hi;
        let r = self - y * Dd::from(q1);
        let q2 = r.hi / y.hi;
        let r = r - y * Dd::from(q2);
        let q3 = r.hi / y.hi;
        let (hi, lo) = fast_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}
