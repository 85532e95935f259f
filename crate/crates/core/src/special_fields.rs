//! Closed-form ingredients of special vector fields: the radial components
//! `Y^0, Y^a`, the `H` terms, assembly of the real special field, the
//! deformation-dependent correction `Ytilde`, the deformation-independent
//! complex advection field `X'`, and the Mobius center velocities.
//!
//! Frame expansions are written as [`FrameVector`]s over `(Z, e, Zbar, ebar)`
//! with `Z = zeta d/dzeta` and `e` the ball-model frame field of
//! [`crate::domain_profile::frame_vectors_ball`]. Everything past
//! [`radial_components`] is specialised to `n = 2`.

use crate::domain_profile::{frame_ball_generic, frame_domain_generic, ProfileError, ProfileRho};
use crate::jet::{Field, C64};
use crate::polar_geometry::{coordinate_fields, AmbientVector, ChartId, GeometryError, PolarPoint};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("deformation is degenerate: 1 - |phi|^2 = {0:.3e}")]
    Degenerate(f64),
    #[error("direction must be nonzero")]
    ZeroDirection,
    #[error("t |v| = {0} must stay below 1")]
    OutsideBall(f64),
}

/// Tangent vector at the center in ball-model units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub v: Vec<C64>,
}

impl Direction {
    pub fn new(v: Vec<C64>) -> Result<Self, FieldError> {
        if v.iter().all(|c| c.norm() == 0.0) {
            return Err(FieldError::ZeroDirection);
        }
        Ok(Direction { v })
    }

    pub fn norm(&self) -> f64 {
        self.v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Direction {
        Direction { v: self.v.iter().map(|c| c * k).collect() }
    }

    /// `(v^a, v^n)` split along a chart: the `w`-indexed part and the axis component.
    pub fn split(&self, chart: ChartId) -> (Vec<C64>, C64) {
        let n = self.v.len();
        (chart.w_indices(n).into_iter().map(|i| self.v[i]).collect(), self.v[chart.axis - 1])
    }
}

/// Pointwise parameters of a real special field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecialFieldParams {
    pub v: Direction,
    /// `sigma` at the evaluation point.
    pub sigma: f64,
    /// `Ytilde` at the evaluation point, if any.
    pub ytilde: Option<C64>,
}

/// Coefficients of `a0 Z + a e + b0 Zbar + b ebar` (n = 2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameVector {
    pub a0: C64,
    pub a: C64,
    pub b0: C64,
    pub b: C64,
}

impl FrameVector {
    pub fn real(a0: C64, a: C64) -> Self {
        FrameVector { a0, a, b0: a0.conj(), b: a.conj() }
    }

    pub fn is_real(&self, tol: f64) -> bool {
        (self.b0 - self.a0.conj()).norm() <= tol && (self.b - self.a.conj()).norm() <= tol
    }
}

/// `Y^0`, `Y^a` for any `n`; the profile contributes through `d log rho^2`
/// only when `n = 2`.
pub fn radial_components(v: &Direction, chart: ChartId, w: &[C64], rho: &ProfileRho) -> (C64, Vec<C64>) {
    let (va, vn) = v.split(chart);
    let s = 1.0 + w.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let sq = s.sqrt();
    let y: Vec<C64> = va.iter().zip(w).map(|(a, wa)| (a - vn * wa) * sq).collect();
    let mut y0 = vn * sq;
    for (k, yk) in y.iter().enumerate() {
        let mut pw = w[k].conj() / s;
        if rho.n == 2 {
            pw += rho.derivs::<C64>(chart, w[0]).fw;
        }
        y0 += yk * pw;
    }
    (y0, y)
}

/// Everything the special-field formulas need at one `w` (n = 2).
#[derive(Clone, Copy, Debug)]
pub struct SpecialCoeffs<T> {
    pub y0: T,
    pub y: T,
    /// `H_betabar = Y g`.
    pub hb: T,
    /// `H_beta = Y (h + (dP)^2)`.
    pub h: T,
    /// `d log rho^2 / dw` and `d log rho^2 / dwbar`.
    pub a: T,
    pub ab: T,
    pub g: T,
    pub pw: T,
}

pub fn special_coeffs<T: Field>(rho: &ProfileRho, chart: ChartId, v: (C64, C64), w: T) -> SpecialCoeffs<T> {
    let pot = rho.potential(chart, w);
    let sq = pot.s.sqrt();
    let y = (T::cst(v.0) - w.scale(v.1)) * sq;
    let y0 = sq.scale(v.1) + y * pot.pw;
    SpecialCoeffs {
        y0,
        y,
        hb: y * pot.g,
        h: y * (pot.h + pot.pw * pot.pw),
        a: pot.rho.fw,
        ab: pot.rho.fb,
        g: pot.g,
        pw: pot.pw,
    }
}

pub fn v_pair(v: &Direction, chart: ChartId) -> (C64, C64) {
    let (va, vn) = v.split(chart);
    (va[0], vn)
}

pub fn h_terms(v: &Direction, chart: ChartId, w: C64, rho: &ProfileRho) -> (C64, C64) {
    let c = special_coeffs::<C64>(rho, chart, v_pair(v, chart), w);
    (c.h, c.hb)
}

/// The advection field `X' = X^0 Z + a e + conj(X^0) Zbar + b ebar` of a
/// special field and the pieces of its closed form, at a point with
/// ball-model coordinate `zeta` (n = 2).
///
/// With `Yhat0 = rho Y^0`, `X^0 = Yhat0 / zeta - conj(Yhat0) zeta`. This is
/// holomorphic along each straight disk, has vanishing real part on
/// `|zeta| = 1`, and gives the ambient limit `v` at the origin of the domain.
/// The horizontal coefficients are `a = ebar(X^0)/g = rho Y/zeta - Q zeta` and
/// `b = -e(X^0)/g = rho conj(Y) zeta - R/zeta` with
/// `R = rho Y Hred / g`, `Q = conj(R)` and
/// `Hred = f_ww + f_w^2 + 2 f_w wbar/(1+|w|^2)`, `f = log rho^2`.
#[derive(Clone, Copy, Debug)]
pub struct XPrimeData<T> {
    pub x0: T,
    pub a: T,
    pub b: T,
    pub g: T,
    pub pw: T,
    pub rho: T,
    pub y: T,
    pub y0: T,
    pub r: T,
    /// `v^n sqrt(1+|w|^2)`.
    pub vn_sq: T,
}

impl<T: Field> XPrimeData<T> {
    /// `e(X^0)` and `ebar(X^0)`.
    pub fn ex0(&self) -> T {
        -(self.b * self.g)
    }
    pub fn ebx0(&self) -> T {
        self.a * self.g
    }

    /// The same data at another `zeta` over the same `w`.
    pub fn with_zeta(&self, zeta: T) -> Self {
        let yh = self.rho * self.y0;
        let q = self.r.conj();
        XPrimeData {
            x0: yh / zeta - yh.conj() * zeta,
            a: self.rho * self.y / zeta - q * zeta,
            b: self.rho * self.y.conj() * zeta - self.r / zeta,
            ..*self
        }
    }
}

pub fn xprime_data<T: Field>(rho: &ProfileRho, chart: ChartId, v: (C64, C64), w: T, zeta: T) -> XPrimeData<T> {
    let pot = rho.potential(chart, w);
    let d = pot.rho;
    let sq = pot.s.sqrt();
    let y = (T::cst(v.0) - w.scale(v.1)) * sq;
    let vn_sq = sq.scale(v.1);
    let y0 = vn_sq + y * pot.pw;
    let r0 = d.f.scale(C64::new(0.5, 0.0)).exp();
    let hred = d.fww + d.fw * d.fw + (d.fw * w.conj() / pot.s).scale(C64::new(2.0, 0.0));
    let r = r0 * y * hred / pot.g;
    let q = r.conj();
    let yh = r0 * y0;
    XPrimeData {
        x0: yh / zeta - yh.conj() * zeta,
        a: r0 * y / zeta - q * zeta,
        b: r0 * y.conj() * zeta - r / zeta,
        g: pot.g,
        pw: pot.pw,
        rho: r0,
        y,
        y0,
        r,
        vn_sq,
    }
}

impl XPrimeData<crate::jet::Jet> {
    pub fn value(&self) -> XPrimeData<C64> {
        XPrimeData {
            x0: self.x0.v,
            a: self.a.v,
            b: self.b.v,
            g: self.g.v,
            pw: self.pw.v,
            rho: self.rho.v,
            y: self.y.v,
            y0: self.y0.v,
            r: self.r.v,
            vn_sq: self.vn_sq.v,
        }
    }
}

/// Frame coefficients `(Z, e, Zbar, ebar)` of `X'`.
pub fn xprime_generic<T: Field>(d: &XPrimeData<T>) -> [T; 4] {
    [d.x0, d.a, d.x0.conj(), d.b]
}

/// Coefficients `(s0, s1, s2)` of the deformation equation source
/// `s0 + s1 phi + s2 phi^2`, i.e. `s0 = ebar(a)`, `s1 = e(a) - ebar(b)`,
/// `s2 = -e(b)`, from a jet of [`XPrimeData`] in `w` at the same point.
pub fn flow_sources(d: &XPrimeData<crate::jet::Jet>, zeta: C64) -> [C64; 3] {
    let k = 0.5 * d.pw.v;
    let kb = k.conj();
    let (rho, y, r) = (d.rho.v, d.y.v, d.r.v);
    let q = r.conj();
    // conj(R) is Q, so dQ/dw = conj(dR/dwbar)
    let (r_w, r_b) = (d.r.dw(), d.r.dwb());
    let (q_w, q_b) = (r_b.conj(), r_w.conj());
    let pb = d.pw.v.conj();
    let vn = d.vn_sq.v;
    let s0 = -(q_b + kb * q) * zeta;
    let e_a = rho * (y * d.pw.v - vn) / zeta - (q_w - k * q) * zeta;
    let eb_b = rho * (y.conj() * pb - vn.conj()) * zeta - (r_b - kb * r) / zeta;
    let s2 = (r_w + k * r) / zeta;
    [s0, e_a - eb_b, s2]
}

/// `e` coefficient of the real special field for the deformation `phi`:
/// `(a + phi (conj(a) - b) - |phi|^2 conj(b)) / (1 - |phi|^2)`.
pub fn real_x1(d: &XPrimeData<C64>, phi: C64) -> Result<C64, FieldError> {
    let m = 1.0 - phi.norm_sqr();
    if m.abs() <= 1e-14 {
        return Err(FieldError::Degenerate(m));
    }
    Ok((d.a + phi * (d.a.conj() - d.b) - phi.norm_sqr() * d.b.conj()) / m)
}

/// Polar components `(V^w, V^wbar, V^zeta, V^zetabar)` of a frame expansion
/// over the ball-model frame with `dP/dw = pw`.
pub fn frame_to_polar<T: Field>(coef: &[T; 4], pw: T, zeta: T) -> [T; 4] {
    let e = frame_ball_generic(pw, zeta);
    let eb = crate::domain_profile::conj_comps(&e);
    let mut out = [T::re(0.0); 4];
    for k in 0..4 {
        out[k] = coef[1] * e[k] + coef[3] * eb[k];
    }
    out[2] = out[2] + coef[0] * zeta;
    out[3] = out[3] + coef[2] * zeta.conj();
    out
}

/// Inverse of [`frame_to_polar`]: frame coefficients `(Z, e, Zbar, ebar)`.
pub fn polar_to_frame(v: &[C64; 4], pw: C64, zeta: C64) -> [C64; 4] {
    let k = 0.5 * pw;
    let (a1, b1) = (v[0], v[1]);
    let a0 = v[2] / zeta + k * a1 - k.conj() * b1;
    let b0 = v[3] / zeta.conj() - k * a1 + k.conj() * b1;
    [a0, a1, b0, b1]
}

pub fn assemble_special(params: &SpecialFieldParams, p: &PolarPoint, rho: &ProfileRho) -> Result<FrameVector, FieldError> {
    if p.zeta.norm() == 0.0 {
        return Err(GeometryError::CoreSingular.into());
    }
    let d = xprime_data::<C64>(rho, p.chart, v_pair(&params.v, p.chart), p.w[0], p.zeta);
    let x0 = d.x0 + C64::i() * params.sigma;
    let x1 = d.rho * d.y / p.zeta + params.ytilde.unwrap_or(C64::new(0.0, 0.0));
    Ok(FrameVector::real(x0, x1))
}

pub fn xprime(v: &Direction, p: &PolarPoint, rho: &ProfileRho) -> Result<FrameVector, FieldError> {
    if p.zeta.norm() == 0.0 {
        return Err(GeometryError::CoreSingular.into());
    }
    let d = xprime_data::<C64>(rho, p.chart, v_pair(v, p.chart), p.w[0], p.zeta);
    let [a0, a, b0, b] = xprime_generic(&d);
    Ok(FrameVector { a0, a, b0, b })
}

/// `Ytilde` for the deformation `phi` (with `sigma = 0`): the correction that
/// makes the flow of the special field preserve the horizontal distribution
/// of the structure encoded by `phi`.
pub fn ytilde_from_phi(phi: C64, v: &Direction, p: &PolarPoint, rho: &ProfileRho) -> Result<C64, FieldError> {
    if p.zeta.norm() == 0.0 {
        return Err(GeometryError::CoreSingular.into());
    }
    let d = xprime_data::<C64>(rho, p.chart, v_pair(v, p.chart), p.w[0], p.zeta);
    Ok(real_x1(&d, phi)? - d.rho * d.y / p.zeta)
}

/// The special field itself for the deformation `phi`.
pub fn special_for_phi(phi: C64, v: &Direction, p: &PolarPoint, rho: &ProfileRho) -> Result<FrameVector, FieldError> {
    if p.zeta.norm() == 0.0 {
        return Err(GeometryError::CoreSingular.into());
    }
    let d = xprime_data::<C64>(rho, p.chart, v_pair(v, p.chart), p.w[0], p.zeta);
    Ok(FrameVector::real(d.x0, real_x1(&d, phi)?))
}

/// Residuals of the two frame-derivative identities for `Y^0/zeta - conj(Y^0) zeta`
/// in domain coordinates (`zeta` the domain coordinate, `e` the domain-form frame):
/// `e(.) = H/zeta - conj(Hbar - Y^0 ebar log rho^2) zeta` and
/// `ebar(.) = Hbar/zeta - conj(H - Y^0 e log rho^2) zeta`.
pub fn identity_426_residual(v: &Direction, chart: ChartId, w: C64, zeta: C64, rho: &ProfileRho) -> f64 {
    use crate::jet::Jet;
    let (wj, zj) = Jet::seed(w, zeta);
    let c = special_coeffs::<Jet>(rho, chart, v_pair(v, chart), wj);
    let bw = wj.conj() / (Jet::re(1.0) + wj * wj.conj());
    let e = frame_domain_generic(c.a, bw, zj).map(|x| x.v);
    let eb = crate::domain_profile::conj_comps(&e);
    let f = c.y0 / zj - c.y0.conj() * zj;
    let (y0, h, hb, a, ab) = (c.y0.v, c.h.v, c.hb.v, c.a.v, c.ab.v);
    let r1 = f.apply(&e) - (h / zeta - (hb - y0 * ab).conj() * zeta);
    let r2 = f.apply(&eb) - (hb / zeta - (h - y0 * a).conj() * zeta);
    r1.norm().max(r2.norm())
}

/// Which coordinates to push a frame expansion into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinates {
    /// Ball model, `tau_o = |z|^2`.
    Ball,
    /// The circular domain itself; `p.zeta` is the ball-model `zeta`.
    Domain,
}

/// Ambient components of a (possibly complex) frame expansion.
pub fn frame_to_ambient(fv: &FrameVector, p: &PolarPoint, rho: &ProfileRho, coords: Coordinates) -> Result<AmbientVector, FieldError> {
    let pot = rho.potential::<C64>(p.chart, p.w[0]);
    let coef = [fv.a0, fv.a, fv.b0, fv.b];
    let (q, comps) = match coords {
        Coordinates::Ball => (p.clone(), frame_to_polar(&coef, pot.pw, p.zeta)),
        Coordinates::Domain => {
            let rho_w = (0.5 * pot.rho.f.re).exp();
            let zd = p.zeta / rho_w;
            let bw = p.w[0].conj() / p.s();
            let e = frame_domain_generic(pot.rho.fw, bw, zd);
            let eb = crate::domain_profile::conj_comps(&e);
            let mut out = [C64::new(0.0, 0.0); 4];
            for k in 0..4 {
                out[k] = coef[1] * e[k] + coef[3] * eb[k];
            }
            out[2] += coef[0] * zd;
            out[3] += coef[2] * zd.conj();
            (PolarPoint { chart: p.chart, w: p.w.clone(), zeta: zd }, out)
        }
    };
    Ok(polar_to_ambient(&comps, &q)?)
}

/// Ambient components of `V^w d/dw + V^wbar d/dwbar + V^zeta d/dzeta + V^zetabar d/dzetabar`.
pub fn polar_to_ambient(comps: &[C64; 4], p: &PolarPoint) -> Result<AmbientVector, GeometryError> {
    let f = coordinate_fields(p)?;
    let n = p.dim();
    let dw = &f.dw[0];
    let z = &f.zeta_dzeta.holo;
    let cz = comps[2] / p.zeta;
    let czb = comps[3] / p.zeta.conj();
    let mut out = AmbientVector::zero(n);
    for i in 0..n {
        out.holo[i] = comps[0] * dw.holo[i] + comps[1] * dw.anti[i].conj() + cz * z[i];
        out.anti[i] = comps[0] * dw.anti[i] + comps[1] * dw.holo[i].conj() + czb * z[i].conj();
    }
    Ok(out)
}

/// Hermitian product `<z, a> = sum z^i conj(a^i)`.
pub fn hdot(z: &[C64], a: &[C64]) -> C64 {
    z.iter().zip(a).map(|(x, y)| x * y.conj()).sum()
}

/// The ball automorphism `T_a` with `T_a(a) = 0` and `T_0 = Id`:
/// `T_a(z) = (P_a z - a + s_a Q_a z) / (1 - <z, a>)`.
pub fn mobius_map(a: &[C64], z: &[C64]) -> Vec<C64> {
    let aa = hdot(a, a).re;
    if aa == 0.0 {
        return z.to_vec();
    }
    let za = hdot(z, a);
    let sa = (1.0 - aa).sqrt();
    let den = C64::new(1.0, 0.0) - za;
    z.iter()
        .zip(a)
        .map(|(zi, ai)| {
            let pz = za / aa * ai;
            (pz - ai + sa * (zi - pz)) / den
        })
        .collect()
}

fn center_velocity_fd(v: &Direction, t: f64, h: f64) -> Vec<C64> {
    let x: Vec<C64> = v.v.iter().map(|c| c * t).collect();
    let ap: Vec<C64> = v.v.iter().map(|c| c * (t + h)).collect();
    let am: Vec<C64> = v.v.iter().map(|c| c * (t - h)).collect();
    let fp = mobius_map(&ap, &x);
    let fm = mobius_map(&am, &x);
    fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).collect()
}

/// `d/ds T_{(t+s) v}(t v)` at `s = 0`, by central differences with one
/// Richardson step.
pub fn mobius_center_velocity(v: &Direction, t: f64) -> Result<Direction, FieldError> {
    let tv = t * v.norm();
    if tv >= 1.0 {
        return Err(FieldError::OutsideBall(tv));
    }
    let h = 1e-6 * (1.0 - tv).min(1.0);
    let d1 = center_velocity_fd(v, t, h);
    let d2 = center_velocity_fd(v, t, h / 2.0);
    Ok(Direction { v: d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect() })
}
