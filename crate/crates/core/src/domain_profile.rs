//! The domain profile `rho` on `CP^{n-1}`, its Minkowski functional, adapted
//! polar frames, metric coefficients and the straightening map between a
//! circular domain and its ball model.
//!
//! A profile stores `log rho^2` in the chart of the last axis as
//! `N(w, wbar) / (1 + |w|^2)^d` with `N` a polynomial of bidegree at most
//! `(d, d)`. Such a quotient is the restriction of a function on `CP^1`, and
//! the chart of the first axis carries the reflected coefficients
//! `c'_{d-a, d-b} = c_{a, b}`. The ball is `N = 0`. The ellipsoid preset
//! `D = {|z1|^2 + lambda^2 |z2|^2 < 1}`, a linear image of the ball, is kept
//! in closed form instead.
//!
//! Two coordinate conventions appear. In *domain* coordinates `(w, zeta)`
//! of the circular domain `D` one has `mu = |zeta| rho(w)`; in *ball-model*
//! coordinates `zeta_ball = rho(w) zeta` so that `tau_o = |zeta_ball|^2`.
//! The adapted frame field is the same vector field in both, with
//! respective polar expressions [`frame_vectors`] and [`frame_vectors_ball`].

use crate::jet::{Field, Jet, C64};
use crate::polar_geometry::{to_polar, AmbientPoint, ChartId, PolarPoint};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("profile is not pseudoconvex: min eigenvalue {min_eig:.3e} of g at w = {w} (chart {chart})")]
    NotPseudoconvex { w: C64, chart: usize, min_eig: f64 },
    #[error("coefficients do not define a real log rho^2: c[{a},{b}] != conj(c[{b},{a}])")]
    NotReal { a: u32, b: u32 },
    #[error("coefficient ({a},{b}) exceeds declared degree {d}")]
    DegreeTooLow { a: u32, b: u32, d: u32 },
    #[error("charts disagree on overlap by {0:.3e}")]
    ChartInconsistent(f64),
    #[error("unsupported profile: {0}")]
    Unsupported(String),
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Ball,
    Perturbed,
    Custom,
    Ellipsoid,
}

/// One monomial `c w^a wbar^b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub a: u32,
    pub b: u32,
    pub c: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRho {
    pub n: usize,
    pub preset: Preset,
    pub epsilon: f64,
    /// Numerator terms in the chart of the last axis.
    pub terms: Vec<Term>,
    /// Power `d` of the denominator `(1 + |w|^2)^d`.
    pub degree: u32,
    /// `lambda` of the ellipsoid preset; overrides `terms` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stretch: Option<f64>,
}

/// Values of `log rho^2` and its derivatives with respect to `w` and `wbar`.
#[derive(Clone, Copy, Debug)]
pub struct RhoDerivs<T> {
    pub f: T,
    pub fw: T,
    pub fb: T,
    pub fwb: T,
    pub fww: T,
    pub fbb: T,
}

/// Output of [`rho_eval`]; derivative groups beyond the requested order are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoEval {
    pub log_rho2: f64,
    /// `(d/dw, d/dwbar)`.
    pub first: Option<(C64, C64)>,
    /// `(d2/dw dwbar, d2/dw2, d2/dwbar2)`.
    pub second: Option<(C64, C64, C64)>,
}

impl ProfileRho {
    pub fn ball(n: usize) -> Self {
        ProfileRho { n, preset: Preset::Ball, epsilon: 0.0, terms: vec![], degree: 0, stretch: None }
    }

    /// `log rho^2 = eps (w + wbar) / (1 + |w|^2)`, the same expression in both charts.
    pub fn perturbed(epsilon: f64) -> Self {
        let c = C64::new(epsilon, 0.0);
        ProfileRho {
            n: 2,
            preset: Preset::Perturbed,
            epsilon,
            terms: vec![Term { a: 1, b: 0, c }, Term { a: 0, b: 1, c }],
            degree: 1,
            stretch: None,
        }
    }

    /// `D = {|z1|^2 + lambda^2 |z2|^2 < 1}`: `rho^2 = (|w|^2 + lambda^2) / (1 + |w|^2)`
    /// with `w = z1/z2`, and `(1 + lambda^2 |w|^2) / (1 + |w|^2)` with `w = z2/z1`.
    pub fn ellipsoid(lambda: f64) -> Result<Self, ProfileError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ProfileError::Unsupported(format!("ellipsoid needs lambda > 0, got {lambda}")));
        }
        Ok(ProfileRho { n: 2, preset: Preset::Ellipsoid, epsilon: 0.0, terms: vec![], degree: 0, stretch: Some(lambda) })
    }

    pub fn custom(terms: Vec<Term>, degree: Option<u32>) -> Result<Self, ProfileError> {
        let dmin = terms.iter().map(|t| t.a.max(t.b)).max().unwrap_or(0);
        let degree = degree.unwrap_or(dmin);
        if let Some(t) = terms.iter().find(|t| t.a > degree || t.b > degree) {
            return Err(ProfileError::DegreeTooLow { a: t.a, b: t.b, d: degree });
        }
        let p = ProfileRho { n: 2, preset: Preset::Custom, epsilon: 0.0, terms, degree, stretch: None };
        p.check_real()?;
        Ok(p)
    }

    pub fn is_ball(&self) -> bool {
        match self.stretch {
            Some(l) => l == 1.0,
            None => self.terms.iter().all(|t| t.c.norm() == 0.0),
        }
    }

    fn check_real(&self) -> Result<(), ProfileError> {
        for t in &self.terms {
            let mirror: C64 = self.terms.iter().filter(|u| u.a == t.b && u.b == t.a).map(|u| u.c).sum();
            let own: C64 = self.terms.iter().filter(|u| u.a == t.a && u.b == t.b).map(|u| u.c).sum();
            if (own - mirror.conj()).norm() > 1e-12 * (1.0 + own.norm()) {
                return Err(ProfileError::NotReal { a: t.a, b: t.b });
            }
        }
        Ok(())
    }

    /// Numerator terms valid in the chart with the given axis (n = 2).
    pub fn chart_terms(&self, chart: ChartId) -> Vec<Term> {
        if chart.axis == self.n {
            self.terms.clone()
        } else {
            let d = self.degree;
            self.terms.iter().map(|t| Term { a: d - t.a, b: d - t.b, c: t.c }).collect()
        }
    }

    /// Exact derivatives of `log rho^2` through second order, evaluated on
    /// any [`Field`] so that jets carry one more order.
    pub fn derivs<T: Field>(&self, chart: ChartId, w: T) -> RhoDerivs<T> {
        let zero = T::re(0.0);
        if self.is_ball() {
            return RhoDerivs { f: zero, fw: zero, fb: zero, fwb: zero, fww: zero, fbb: zero };
        }
        let b = w.conj();
        if let Some(l) = self.stretch {
            // log((alpha + beta u) / (1 + u)), u = |w|^2
            let (al, be) = if chart.axis == 2 { (l * l, 1.0) } else { (1.0, l * l) };
            let u = w * b;
            let p = T::re(al) + u.scale(C64::new(be, 0.0));
            let q = T::re(1.0) + u;
            let a = T::re(be) / p - T::re(1.0) / q;
            let a1 = T::re(1.0) / (q * q) - T::re(be * be) / (p * p);
            return RhoDerivs { f: p.ln() - q.ln(), fw: b * a, fb: w * a, fwb: a + u * a1, fww: b * b * a1, fbb: w * w * a1 };
        }
        let (mut n0, mut nw, mut nb, mut nwb, mut nww, mut nbb) = (zero, zero, zero, zero, zero, zero);
        for t in self.chart_terms(chart) {
            let (a, bb) = (t.a, t.b);
            let pw = |k: u32| if k == 0 { T::re(1.0) } else { w.powi(k) };
            let pb = |k: u32| if k == 0 { T::re(1.0) } else { b.powi(k) };
            n0 = n0 + (pw(a) * pb(bb)).scale(t.c);
            if a >= 1 {
                nw = nw + (pw(a - 1) * pb(bb)).scale(t.c * a as f64);
                if bb >= 1 {
                    nwb = nwb + (pw(a - 1) * pb(bb - 1)).scale(t.c * (a * bb) as f64);
                }
                if a >= 2 {
                    nww = nww + (pw(a - 2) * pb(bb)).scale(t.c * (a * (a - 1)) as f64);
                }
            }
            if bb >= 1 {
                nb = nb + (pw(a) * pb(bb - 1)).scale(t.c * bb as f64);
                if bb >= 2 {
                    nbb = nbb + (pw(a) * pb(bb - 2)).scale(t.c * (bb * (bb - 1)) as f64);
                }
            }
        }
        let d = self.degree;
        let df = d as f64;
        let u = T::re(1.0) + w * b;
        let ud = u.powi(d);
        let q = T::re(1.0) / ud;
        let q1 = q / u;
        let q2 = q1 / u;
        let qw = -(b * q1).scale(C64::new(df, 0.0));
        let qb = -(w * q1).scale(C64::new(df, 0.0));
        let qwb = -q1.scale(C64::new(df, 0.0)) + (w * b * q2).scale(C64::new(df * (df + 1.0), 0.0));
        let qww = (b * b * q2).scale(C64::new(df * (df + 1.0), 0.0));
        let qbb = (w * w * q2).scale(C64::new(df * (df + 1.0), 0.0));
        RhoDerivs {
            f: n0 * q,
            fw: nw * q + n0 * qw,
            fb: nb * q + n0 * qb,
            fwb: nwb * q + nw * qb + nb * qw + n0 * qwb,
            fww: nww * q + (nw * qw).scale(C64::new(2.0, 0.0)) + n0 * qww,
            fbb: nbb * q + (nb * qb).scale(C64::new(2.0, 0.0)) + n0 * qbb,
        }
    }

    /// `rho(w)` in the given chart.
    pub fn rho(&self, chart: ChartId, w: C64) -> f64 {
        (0.5 * self.derivs::<C64>(chart, w).f.re).exp()
    }

    /// Derivatives of the Kahler-type potential `P = log rho^2 + log(1 + |w|^2)`.
    pub fn potential<T: Field>(&self, chart: ChartId, w: T) -> Potential<T> {
        let r = self.derivs(chart, w);
        let b = w.conj();
        let s = T::re(1.0) + w * b;
        let s2 = s * s;
        Potential {
            rho: r,
            s,
            pw: r.fw + b / s,
            pb: r.fb + w / s,
            g: r.fwb + T::re(1.0) / s2,
            h: r.fww - b * b / s2,
        }
    }
}

/// Potential data at one chart point.
#[derive(Clone, Copy, Debug)]
pub struct Potential<T> {
    pub rho: RhoDerivs<T>,
    /// `1 + |w|^2`.
    pub s: T,
    /// `dP/dw`.
    pub pw: T,
    /// `dP/dwbar`.
    pub pb: T,
    /// `g = d2P / dw dwbar`.
    pub g: T,
    /// `h = d2P / dw2`.
    pub h: T,
}

pub fn rho_eval(rho: &ProfileRho, chart: ChartId, w: C64, order: u8) -> RhoEval {
    let d = rho.derivs::<C64>(chart, w);
    RhoEval {
        log_rho2: d.f.re,
        first: (order >= 1).then_some((d.fw, d.fb)),
        second: (order >= 2).then_some((d.fwb, d.fww, d.fbb)),
    }
}

pub fn minkowski(rho: &ProfileRho, z: &AmbientPoint) -> f64 {
    let nz = z.norm();
    if nz == 0.0 {
        return 0.0;
    }
    if rho.is_ball() {
        return nz;
    }
    let chart = z.best_chart();
    let p = to_polar(z, chart).expect("best chart is regular");
    nz * rho.rho(chart, p.w[0])
}

/// Polar components `(V^w, V^wbar, V^zeta, V^zetabar)` of a vector field.
pub type PolarComps = [C64; 4];

/// The frame field `e` (n = 2) in domain coordinates:
/// `d/dw - (d log rho^2/dw) zeta d/dzeta + (1/2) d log(1+|w|^2)/dw (zetabar d/dzetabar - zeta d/dzeta)`.
pub fn frame_vectors(rho: &ProfileRho, p: &PolarPoint) -> Result<PolarComps, ProfileError> {
    require_n2(rho)?;
    let w = p.w[0];
    let fw = rho.derivs::<C64>(p.chart, w).fw;
    let b = w.conj() / (1.0 + w.norm_sqr());
    Ok(frame_domain_generic(fw, b, p.zeta))
}

pub fn frame_domain_generic<T: Field>(fw: T, bw: T, zeta: T) -> [T; 4] {
    let half = C64::new(0.5, 0.0);
    [T::re(1.0), T::re(0.0), -(fw + bw.scale(half)) * zeta, bw.scale(half) * zeta.conj()]
}

/// The same frame field in ball-model coordinates: `d/dw + (1/2) dP/dw (zetabar d/dzetabar - zeta d/dzeta)`.
pub fn frame_vectors_ball(rho: &ProfileRho, p: &PolarPoint) -> Result<PolarComps, ProfileError> {
    require_n2(rho)?;
    let pot = rho.potential::<C64>(p.chart, p.w[0]);
    Ok(frame_ball_generic(pot.pw, p.zeta))
}

pub fn frame_ball_generic<T: Field>(pw: T, zeta: T) -> [T; 4] {
    let k = pw.scale(C64::new(0.5, 0.0));
    [T::re(1.0), T::re(0.0), -k * zeta, k * zeta.conj()]
}

/// Conjugate of a polar vector field: swaps holomorphic and antiholomorphic slots.
pub fn conj_comps<T: Field>(v: &[T; 4]) -> [T; 4] {
    [v[1].conj(), v[0].conj(), v[3].conj(), v[2].conj()]
}

pub fn require_n2(rho: &ProfileRho) -> Result<(), ProfileError> {
    if rho.n != 2 {
        return Err(ProfileError::Unsupported(format!("frame machinery implemented for n = 2, got n = {}", rho.n)));
    }
    Ok(())
}

/// Pointwise frame and metric package (n = 2, so every block is 1x1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameData {
    pub g: f64,
    pub g_inv: f64,
    pub h: C64,
    pub dlogrho2: C64,
    /// Ball-model frame `e = d/dw + k_zeta zeta d/dzeta + k_zetabar zetabar d/dzetabar`.
    pub frame: (C64, C64),
}

pub fn metric_coeffs(rho: &ProfileRho, chart: ChartId, w: C64) -> Result<FrameData, ProfileError> {
    require_n2(rho)?;
    let pot = rho.potential::<C64>(chart, w);
    let g = pot.g.re;
    if g <= 0.0 {
        return Err(ProfileError::NotPseudoconvex { w, chart: chart.axis, min_eig: g });
    }
    let k = 0.5 * pot.pw;
    Ok(FrameData { g, g_inv: 1.0 / g, h: pot.h, dlogrho2: pot.rho.fw, frame: (-k, k) })
}

/// Jets of the frame components and potential at a ball-model point.
pub struct FrameJets {
    pub e: [Jet; 4],
    pub eb: [Jet; 4],
    pub z: [Jet; 4],
    pub pot: Potential<Jet>,
}

pub fn frame_jets(rho: &ProfileRho, chart: ChartId, w: C64, zeta: C64) -> FrameJets {
    let (wj, zj) = Jet::seed(w, zeta);
    let pot = rho.potential(chart, wj);
    let e = frame_ball_generic(pot.pw, zj);
    let o = Jet::re(0.0);
    FrameJets { eb: conj_comps(&e), e, z: [o, o, zj, o], pot }
}

/// Lie bracket of two polar vector fields given as jets.
pub fn bracket(a: &[Jet; 4], b: &[Jet; 4]) -> PolarComps {
    let av: [C64; 4] = a.map(|x| x.v);
    let bv: [C64; 4] = b.map(|x| x.v);
    let mut out = [C64::new(0.0, 0.0); 4];
    for k in 0..4 {
        out[k] = b[k].apply(&av) - a[k].apply(&bv);
    }
    out
}

fn max_abs(v: &PolarComps) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Max deviation of the bracket identities `[Z,e] = [Z,ebar] = 0`,
/// `[e,ebar] = g (Z - Zbar)` at a ball-model point. `g_shift` corrupts the
/// metric on the right-hand side (negative control).
pub fn bracket_residual_shifted(rho: &ProfileRho, p: &PolarPoint, g_shift: f64) -> Result<f64, ProfileError> {
    require_n2(rho)?;
    let fj = frame_jets(rho, p.chart, p.w[0], p.zeta);
    let g = fj.pot.g.v + g_shift;
    let r1 = max_abs(&bracket(&fj.z, &fj.e));
    let r2 = max_abs(&bracket(&fj.z, &fj.eb));
    let r3 = max_abs(&bracket(&fj.e, &fj.e));
    let mut b = bracket(&fj.e, &fj.eb);
    b[2] -= g * p.zeta;
    b[3] += g * p.zeta.conj();
    Ok(r1.max(r2).max(r3).max(max_abs(&b)))
}

pub fn bracket_residual(rho: &ProfileRho, p: &PolarPoint) -> Result<f64, ProfileError> {
    bracket_residual_shifted(rho, p, 0.0)
}

/// `dd^c tau (e, ebar)` with `tau = |zeta|^2` in ball-model coordinates,
/// evaluated from the definition `-X(JY tau) + Y(JX tau) + J[X,Y] tau`.
pub fn levi_form(rho: &ProfileRho, p: &PolarPoint) -> Result<C64, ProfileError> {
    require_n2(rho)?;
    if p.zeta.norm() == 0.0 {
        return Err(ProfileError::Unsupported("Levi form requested on the core".into()));
    }
    let fj = frame_jets(rho, p.chart, p.w[0], p.zeta);
    let i = C64::i();
    // J e = i e and J ebar = -i ebar; tau = zeta zetabar.
    let tau_d = |v: &[Jet; 4], zj: Jet| v[2] * zj.conj() + v[3] * zj;
    let (_, zj) = Jet::seed(p.w[0], p.zeta);
    let je_tau = tau_d(&fj.e, zj).scale(i);
    let jeb_tau = tau_d(&fj.eb, zj).scale(-i);
    let ev: [C64; 4] = fj.e.map(|x| x.v);
    let ebv: [C64; 4] = fj.eb.map(|x| x.v);
    let br = bracket(&fj.e, &fj.eb);
    // [e, ebar] lies in span(Z, Zbar); J acts there by +-i.
    let zc = br[2] / p.zeta;
    let zbc = br[3] / p.zeta.conj();
    let tau = p.zeta.norm_sqr();
    let j_br_tau = i * zc * tau - i * zbc * tau;
    Ok(-jeb_tau.apply(&ev) + je_tau.apply(&ebv) + j_br_tau)
}

/// Ball-model image `Theta(z) = z mu(z) / |z|` of a point of the domain.
pub fn straighten(rho: &ProfileRho, z: &AmbientPoint) -> AmbientPoint {
    let nz = z.norm();
    if nz == 0.0 {
        return z.clone();
    }
    let k = minkowski(rho, z) / nz;
    AmbientPoint { z: z.z.iter().map(|c| c * k).collect() }
}

pub fn unstraighten(rho: &ProfileRho, z: &AmbientPoint) -> AmbientPoint {
    let nz = z.norm();
    if nz == 0.0 || rho.is_ball() {
        return z.clone();
    }
    let chart = z.best_chart();
    let p = to_polar(z, chart).expect("best chart is regular");
    let k = 1.0 / rho.rho(chart, p.w[0]);
    AmbientPoint { z: z.z.iter().map(|c| c * k).collect() }
}

/// Worst `g` over a grid covering `CP^1` (each chart on `|Re w|, |Im w| <= 1.25`).
pub fn pseudoconvexity_margin(rho: &ProfileRho) -> (f64, C64, usize) {
    let mut worst = (f64::INFINITY, C64::new(0.0, 0.0), 2);
    if rho.n != 2 {
        return (1.0, worst.1, rho.n);
    }
    let m = 51;
    for axis in [1, 2] {
        let chart = ChartId { axis };
        for i in 0..m {
            for j in 0..m {
                let w = C64::new(-1.25 + 2.5 * i as f64 / (m - 1) as f64, -1.25 + 2.5 * j as f64 / (m - 1) as f64);
                let pot = rho.potential::<C64>(chart, w);
                // scale-free margin: g relative to the round metric
                let g = pot.g.re * pot.s.re * pot.s.re;
                if g < worst.0 {
                    worst = (g, w, axis);
                }
            }
        }
    }
    worst
}

/// Max disagreement of `log rho^2` between the two charts on overlap samples.
pub fn chart_consistency(rho: &ProfileRho) -> f64 {
    if rho.n != 2 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for k in 0..64 {
        let r = 0.5 + 1.5 * ((k * 7) % 64) as f64 / 63.0;
        let th = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
        let w = C64::from_polar(r, th);
        let a = rho.derivs::<C64>(ChartId { axis: 2 }, w).f;
        let b = rho.derivs::<C64>(ChartId { axis: 1 }, 1.0 / w).f;
        worst = worst.max((a - b).norm());
    }
    worst
}

/// Runs the load-time checks and returns the accepted profile.
pub fn validate(rho: ProfileRho) -> Result<ProfileRho, ProfileError> {
    rho.check_real()?;
    let (m, w, chart) = pseudoconvexity_margin(&rho);
    if m <= 0.0 {
        return Err(ProfileError::NotPseudoconvex { w, chart, min_eig: m });
    }
    let c = chart_consistency(&rho);
    if c > 1e-8 {
        return Err(ProfileError::ChartInconsistent(c));
    }
    Ok(rho)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    n: Option<usize>,
    preset: Option<Preset>,
    epsilon: Option<f64>,
    coefficients: Option<Vec<(u32, u32, f64, f64)>>,
    degree: Option<u32>,
    stretch: Option<f64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses the key-value profile format (TOML syntax).
pub fn parse_profile(text: &str) -> Result<ProfileRho, ProfileError> {
    let file: ProfileFile = toml::from_str(text).map_err(|e| ProfileError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    let n = file.n.unwrap_or(2);
    if n < 2 {
        return Err(ProfileError::Parse { line: 0, msg: format!("n must be at least 2, got {n}") });
    }
    let preset = file.preset.unwrap_or(if file.coefficients.is_some() { Preset::Custom } else { Preset::Ball });
    let rho = match preset {
        Preset::Ball => ProfileRho::ball(n),
        Preset::Perturbed => {
            if n != 2 {
                return Err(ProfileError::Unsupported("perturbed preset requires n = 2".into()));
            }
            let eps = file.epsilon.ok_or(ProfileError::Parse { line: 0, msg: "perturbed preset needs `epsilon`".into() })?;
            ProfileRho::perturbed(eps)
        }
        Preset::Ellipsoid => {
            if n != 2 {
                return Err(ProfileError::Unsupported("ellipsoid preset requires n = 2".into()));
            }
            let l = file.stretch.ok_or(ProfileError::Parse { line: 0, msg: "ellipsoid preset needs `stretch`".into() })?;
            ProfileRho::ellipsoid(l)?
        }
        Preset::Custom => {
            if n != 2 {
                return Err(ProfileError::Unsupported("coefficient profiles require n = 2".into()));
            }
            let coeffs = file.coefficients.ok_or(ProfileError::Parse { line: 0, msg: "custom preset needs `coefficients`".into() })?;
            let terms = coeffs.into_iter().map(|(a, b, re, im)| Term { a, b, c: C64::new(re, im) }).collect();
            ProfileRho::custom(terms, file.degree)?
        }
    };
    validate(rho)
}

pub fn load_profile(path: &Path) -> Result<ProfileRho, ProfileError> {
    let text = std::fs::read_to_string(path).map_err(|e| ProfileError::Io { path: path.display().to_string(), source: e })?;
    parse_profile(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflected_chart_terms() {
        let p = ProfileRho::perturbed(0.1);
        let t = p.chart_terms(ChartId { axis: 1 });
        assert!(t.iter().any(|x| x.a == 0 && x.b == 1) && t.iter().any(|x| x.a == 1 && x.b == 0));
        assert!(chart_consistency(&p) < 1e-14);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = parse_profile("n = 2\npreset = \"perturbed\"\nepsilon = = 0.1\n").unwrap_err();
        match err {
            ProfileError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }
}
