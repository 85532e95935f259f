//! First-order forward-mode differentiation for complex-valued functions of
//! the four real polar coordinates `(Re w, Im w, Re zeta, Im zeta)`.
//!
//! Every closed-form expression in the crate is written against [`Field`], so
//! the same code evaluates plain values (`Complex64`) or values together with
//! exact partial derivatives (`Jet`). Brackets of frame fields are then
//! computed from these partials without finite differencing.

use num_complex::Complex64;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub type C64 = Complex64;

/// Minimal numeric interface shared by `Complex64` and [`Jet`].
pub trait Field:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(c: C64) -> Self;
    fn re(x: f64) -> Self {
        Self::cst(C64::new(x, 0.0))
    }
    fn conj(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn val(&self) -> C64;
    fn scale(self, c: C64) -> Self {
        self * Self::cst(c)
    }
    fn powi(self, k: u32) -> Self {
        let mut acc = Self::re(1.0);
        for _ in 0..k {
            acc = acc * self;
        }
        acc
    }
}

impl Field for C64 {
    fn cst(c: C64) -> Self {
        c
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn sqrt(self) -> Self {
        Complex64::sqrt(self)
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    fn ln(self) -> Self {
        Complex64::ln(self)
    }
    fn val(&self) -> C64 {
        *self
    }
}

/// Index of each real coordinate inside `Jet::d`.
pub const DX: usize = 0;
pub const DY: usize = 1;
pub const DP: usize = 2;
pub const DQ: usize = 3;

/// Value plus its partial derivatives along the four real coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: C64,
    pub d: [C64; 4],
}

impl Jet {
    pub fn constant(v: C64) -> Self {
        Jet { v, d: [C64::new(0.0, 0.0); 4] }
    }

    /// Seeds `w = x + iy` and `zeta = p + iq` as independent variables.
    pub fn seed(w: C64, zeta: C64) -> (Jet, Jet) {
        let o = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        (
            Jet { v: w, d: [one, i, o, o] },
            Jet { v: zeta, d: [o, o, one, i] },
        )
    }

    /// Wirtinger derivative with respect to `w`.
    pub fn dw(&self) -> C64 {
        0.5 * (self.d[DX] - C64::i() * self.d[DY])
    }
    /// Wirtinger derivative with respect to `conj(w)`.
    pub fn dwb(&self) -> C64 {
        0.5 * (self.d[DX] + C64::i() * self.d[DY])
    }
    /// Wirtinger derivative with respect to `zeta`.
    pub fn dz(&self) -> C64 {
        0.5 * (self.d[DP] - C64::i() * self.d[DQ])
    }
    /// Wirtinger derivative with respect to `conj(zeta)`.
    pub fn dzb(&self) -> C64 {
        0.5 * (self.d[DP] + C64::i() * self.d[DQ])
    }

    /// Action of the polar vector field with components
    /// `(V^w, V^wbar, V^zeta, V^zetabar)` on this function.
    pub fn apply(&self, comps: &[C64; 4]) -> C64 {
        comps[0] * self.dw() + comps[1] * self.dwb() + comps[2] * self.dz() + comps[3] * self.dzb()
    }
}

fn zip4(a: &[C64; 4], b: &[C64; 4], f: impl Fn(C64, C64) -> C64) -> [C64; 4] {
    [f(a[0], b[0]), f(a[1], b[1]), f(a[2], b[2]), f(a[3], b[3])]
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, d: zip4(&self.d, &o.d, |x, y| x + y) }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet { v: self.v - o.v, d: zip4(&self.d, &o.d, |x, y| x - y) }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let (a, b) = (self.v, o.v);
        Jet { v: a * b, d: zip4(&self.d, &o.d, |x, y| x * b + a * y) }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        Jet { v: q, d: zip4(&self.d, &o.d, |x, y| (x - q * y) * inv) }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet { v: -self.v, d: self.d.map(|x| -x) }
    }
}

impl Field for Jet {
    fn cst(c: C64) -> Self {
        Jet::constant(c)
    }
    fn conj(self) -> Self {
        Jet { v: self.v.conj(), d: self.d.map(|x| x.conj()) }
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let k = 0.5 / s;
        Jet { v: s, d: self.d.map(|x| x * k) }
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Jet { v: e, d: self.d.map(|x| x * e) }
    }
    fn ln(self) -> Self {
        let k = 1.0 / self.v;
        Jet { v: self.v.ln(), d: self.d.map(|x| x * k) }
    }
    fn val(&self) -> C64 {
        self.v
    }
    fn scale(self, c: C64) -> Self {
        Jet { v: self.v * c, d: self.d.map(|x| x * c) }
    }
}
