//! Method-of-lines integration of the deformation equation for the scalar
//! deformation `phi` (n = 2) on two overlapping polar charts.
//!
//! Each chart carries a lattice over `(Re w, Im w, r, theta)` where
//! `zeta = r e^{i theta}` is the ball-model coordinate and `r` runs over
//! `[r_min, 1]`. With the center velocity `v_t = lambda(t) v` the equation reads
//!
//! `phi_t = lambda(t) (-X'(phi) + s0 + s1 phi + s2 phi^2)`
//!
//! where `X'` is the advection field of [`crate::special_fields::xprime_data`]
//! and `(s0, s1, s2)` come from [`crate::special_fields::flow_sources`].
//! Derivatives are spectral in `theta` and fourth-order stencils in
//! `Re w`, `Im w` and `r`. The outer two `w` layers of each chart are ghost
//! layers refilled from the other chart after every stage, using
//! `w' = 1/w`, the rotation of `zeta` and `phi' = (conj(k)/k) phi` with
//! `k = -w^2`.

use crate::domain_profile::{require_n2, ProfileError, ProfileRho};
use crate::jet::{Jet, C64};
use crate::polar_geometry::{transition, ChartId, PolarPoint};
use crate::special_fields::{flow_sources, mobius_center_velocity, v_pair, xprime_data, Direction, FieldError};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Chart 0 has `w = z1/z2`, chart 1 has `w = z2/z1`.
pub const CHARTS: [ChartId; 2] = [ChartId { axis: 2 }, ChartId { axis: 1 }];
/// Number of `w` layers on each side refilled from the other chart.
pub const GHOST: usize = 2;
/// `max |sin(x) (4 - cos(x)) / 3|`, the largest symbol of the centered
/// fourth-order first difference times `h`.
const D1_RADIUS: f64 = 1.3722;
/// Extent of the RK4 stability region along the imaginary axis.
const RK4_IMAG_LIMIT: f64 = 2.8284;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("deformation degenerate at t = {t:.4}: margin {margin:.3e}")]
    Degenerate { t: f64, margin: f64 },
    #[error("unstable step at t = {t:.4}: sup|phi| grew from {from:.3e} to {to:.3e}")]
    Unstable { t: f64, from: f64, to: f64 },
    #[error("frontier membership not monotone: s = {ok} succeeds while s = {failed} fails")]
    NonMonotone { ok: f64, failed: f64 },
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

/// Lattice shape shared by both charts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nw: usize,
    pub nr: usize,
    pub nth: usize,
    /// Half-width `W` of the square `|Re w|, |Im w| <= W`.
    pub wmax: f64,
    pub rmin: f64,
}

impl Grid {
    pub fn new(nw: usize, nr: usize, nth: usize, wmax: f64, rmin: f64) -> Result<Self, FlowError> {
        let g = Grid { nw, nr, nth, wmax, rmin };
        g.check()?;
        Ok(g)
    }

    pub fn check(&self) -> Result<(), FlowError> {
        if self.nw < 2 * GHOST + 5 {
            return Err(FlowError::Config(format!("N_w = {} too small", self.nw)));
        }
        if self.nr < 5 {
            return Err(FlowError::Config(format!("N_r = {} too small", self.nr)));
        }
        if self.nth < 8 || self.nth % 2 != 0 {
            return Err(FlowError::Config(format!("N_theta = {} must be even and at least 8", self.nth)));
        }
        if !(self.wmax > 1.0) {
            return Err(FlowError::Config(format!("W = {} must exceed 1", self.wmax)));
        }
        if !(self.rmin > 0.0 && self.rmin < 1.0) {
            return Err(FlowError::Config(format!("r_min = {} must lie in (0, 1)", self.rmin)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nw * self.nw * self.nr * self.nth
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values per `(i, j)` column.
    pub fn column(&self) -> usize {
        self.nr * self.nth
    }

    pub fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.nw + j) * self.nr + k) * self.nth + l
    }

    pub fn hw(&self) -> f64 {
        2.0 * self.wmax / (self.nw - 1) as f64
    }

    pub fn hr(&self) -> f64 {
        (1.0 - self.rmin) / (self.nr - 1) as f64
    }

    pub fn hth(&self) -> f64 {
        2.0 * PI / self.nth as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.wmax + self.hw() * i as f64
    }

    pub fn r(&self, k: usize) -> f64 {
        self.rmin + self.hr() * k as f64
    }

    pub fn theta(&self, l: usize) -> f64 {
        self.hth() * l as f64
    }

    pub fn w(&self, i: usize, j: usize) -> C64 {
        C64::new(self.x(i), self.x(j))
    }

    pub fn zeta(&self, k: usize, l: usize) -> C64 {
        C64::from_polar(self.r(k), self.theta(l))
    }

    pub fn is_ghost(&self, i: usize, j: usize) -> bool {
        i < GHOST || j < GHOST || i >= self.nw - GHOST || j >= self.nw - GHOST
    }

    /// Largest `|m|` kept by the 2/3 rule.
    pub fn kept_modes(&self) -> usize {
        (self.nth - 1) / 3
    }

    /// The lattice with every spacing halved.
    pub fn refined(&self) -> Grid {
        Grid { nw: 2 * self.nw - 1, nr: 2 * self.nr - 1, nth: 2 * self.nth, ..*self }
    }
}

/// Values of the deformation on one chart.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    pub chart: ChartId,
    pub grid: Grid,
    pub values: Vec<C64>,
}

impl DeformationField {
    pub fn zeros(chart: ChartId, grid: Grid) -> Self {
        DeformationField { chart, grid, values: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    pub fn constant(chart: ChartId, grid: Grid, c: C64) -> Self {
        DeformationField { chart, grid, values: vec![c; grid.len()] }
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.values)
    }
}

/// Both charts' values, indexed like [`CHARTS`].
pub type Phi = [Vec<C64>; 2];

/// `min |det(I - conj(phi) phi)| = min |1 - |phi|^2|` over the lattice.
pub fn degeneracy_margin(phi: &DeformationField) -> f64 {
    margin_of(&phi.values)
}

fn margin_of(v: &[C64]) -> f64 {
    v.iter().fold(f64::INFINITY, |m, p| m.min((1.0 - p.norm_sqr()).abs()))
}

fn sup_norm(v: &[C64]) -> f64 {
    v.iter().fold(0.0, |m, p| m.max(p.norm()))
}

/// Matrix of the deformed complex structure on the horizontal plane in the
/// basis `(e, ebar)`: `i` on `e + conj(phi) ebar`, `-i` on `ebar + phi e`.
pub fn structure_on_h(phi: C64) -> Result<[[C64; 2]; 2], FlowError> {
    let det = 1.0 - phi.norm_sqr();
    if det.abs() < 1e-14 {
        return Err(FlowError::Degenerate { t: f64::NAN, margin: det.abs() });
    }
    let i = C64::i();
    // P = [[1, phi], [conj phi, 1]], J = P diag(i, -i) P^{-1}
    let pb = phi.conj();
    let j00 = i * (1.0 + phi * pb) / det;
    let j01 = -2.0 * i * phi / det;
    let j10 = 2.0 * i * pb / det;
    let j11 = -i * (1.0 + phi * pb) / det;
    Ok([[j00, j01], [j10, j11]])
}

/// FFT machinery for the `theta` lines.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    mmax: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Spectral { n, mmax: (n - 1) / 3, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    /// Signed wave number of FFT bin `q`; the Nyquist bin maps to `None`.
    pub fn mode(&self, q: usize) -> Option<i64> {
        let n = self.n;
        if 2 * q == n {
            None
        } else if 2 * q < n {
            Some(q as i64)
        } else {
            Some(q as i64 - n as i64)
        }
    }

    pub fn scratch(&self) -> Vec<C64> {
        vec![C64::new(0.0, 0.0); self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())]
    }

    /// Normalized Fourier coefficients of one line, bin order.
    pub fn coefficients(&self, line: &[C64]) -> Vec<C64> {
        let mut c = line.to_vec();
        let mut scr = self.scratch();
        self.fwd.process_with_scratch(&mut c, &mut scr);
        let k = 1.0 / self.n as f64;
        c.iter_mut().for_each(|x| *x *= k);
        c
    }

    fn map_line(&self, line: &mut [C64], scr: &mut [C64], f: impl Fn(i64) -> C64) {
        self.fwd.process_with_scratch(line, scr);
        let k = 1.0 / self.n as f64;
        for (q, x) in line.iter_mut().enumerate() {
            *x *= match self.mode(q) {
                Some(m) if m.unsigned_abs() as usize <= self.mmax => f(m) * k,
                _ => C64::new(0.0, 0.0),
            };
        }
        self.inv.process_with_scratch(line, scr);
    }

    /// 2/3-rule projection applied to every line.
    pub fn filter(&self, data: &mut [C64]) {
        data.par_chunks_mut(self.n)
            .for_each_init(|| self.scratch(), |scr, line| self.map_line(line, scr, |_| C64::new(1.0, 0.0)));
    }

    /// `d/dtheta` of every line (after 2/3 truncation).
    pub fn derivative(&self, data: &[C64]) -> Vec<C64> {
        self.multiplier(data, |m| C64::new(0.0, m as f64))
    }

    /// Applies the Fourier multiplier `f(m)` (after 2/3 truncation) to every line.
    pub fn multiplier(&self, data: &[C64], f: impl Fn(i64) -> C64 + Sync) -> Vec<C64> {
        let mut out = data.to_vec();
        out.par_chunks_mut(self.n).for_each_init(|| self.scratch(), |scr, line| self.map_line(line, scr, &f));
        out
    }

    /// Fills the rings of one column from its last ring by
    /// `sum_m c_m r^{|m|} e^{i m theta}`, the harmonic extension into the disk.
    pub fn extend_column(&self, col: &mut [C64], radii: &[f64], scr: &mut [C64]) {
        let n = self.n;
        let nr = radii.len();
        let mut c = col[(nr - 1) * n..].to_vec();
        self.fwd.process_with_scratch(&mut c, scr);
        let k = 1.0 / n as f64;
        for (q, x) in c.iter_mut().enumerate() {
            *x = match self.mode(q) {
                Some(m) if m.unsigned_abs() as usize <= self.mmax => *x * k,
                _ => C64::new(0.0, 0.0),
            };
        }
        for (ring, &r) in radii.iter().enumerate() {
            let line = &mut col[ring * n..(ring + 1) * n];
            for (q, x) in line.iter_mut().enumerate() {
                *x = match self.mode(q) {
                    Some(m) => c[q] * r.powi(m.unsigned_abs() as i32),
                    None => C64::new(0.0, 0.0),
                };
            }
            self.inv.process_with_scratch(line, scr);
        }
    }

    /// `line(theta) <- line(theta + delta)` for a band-limited line.
    pub fn shift(&self, line: &mut [C64], delta: f64, scr: &mut [C64]) {
        self.map_line(line, scr, |m| C64::from_polar(1.0, m as f64 * delta));
    }

    /// Evaluates the truncated Fourier series with coefficients `c` at `theta`.
    pub fn eval(&self, c: &[C64], theta: f64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (q, x) in c.iter().enumerate() {
            if let Some(m) = self.mode(q) {
                if m.unsigned_abs() as usize <= self.mmax {
                    acc += x * C64::from_polar(1.0, m as f64 * theta);
                }
            }
        }
        acc
    }
}

/// Four-point Lagrange stencil `(first node, weights)` at fractional node position `xi`.
pub fn lagrange4(xi: f64, n: usize) -> (usize, [f64; 4]) {
    let base = ((xi.floor() as i64) - 1).clamp(0, n as i64 - 4) as usize;
    let t = xi - base as f64;
    let mut w = [0.0; 4];
    for (a, wa) in w.iter_mut().enumerate() {
        let mut p = 1.0;
        for b in 0..4 {
            if b != a {
                p *= (t - b as f64) / (a as f64 - b as f64);
            }
        }
        *wa = p;
    }
    (base, w)
}

/// Fourth-order first derivative along a line of `n` samples with stride
/// `stride`, at position `k`, one-sided near the ends.
fn d1(f: &[C64], base: usize, stride: usize, k: usize, n: usize, h: f64) -> C64 {
    let at = |q: usize| f[base + q * stride];
    let inv = 1.0 / (12.0 * h);
    if k >= 2 && k + 2 < n {
        (at(k - 2) - 8.0 * at(k - 1) + 8.0 * at(k + 1) - at(k + 2)) * inv
    } else if k == 0 {
        (-25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4)) * inv
    } else if k == 1 {
        (-3.0 * at(0) - 10.0 * at(1) + 18.0 * at(2) - 6.0 * at(3) + at(4)) * inv
    } else if k == n - 1 {
        (25.0 * at(n - 1) - 48.0 * at(n - 2) + 36.0 * at(n - 3) - 16.0 * at(n - 4) + 3.0 * at(n - 5)) * inv
    } else {
        (3.0 * at(n - 1) + 10.0 * at(n - 2) - 18.0 * at(n - 3) + 6.0 * at(n - 4) - at(n - 5)) * inv
    }
}

/// `d/dr` of a chart array.
pub fn radial_derivative(grid: &Grid, v: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); v.len()];
    let col = grid.column();
    let h = grid.hr();
    out.par_chunks_mut(col).enumerate().for_each(|(c, o)| {
        for k in 0..grid.nr {
            for l in 0..grid.nth {
                o[k * grid.nth + l] = d1(v, c * col + l, grid.nth, k, grid.nr, h);
            }
        }
    });
    out
}

struct GhostColumn {
    dst: usize,
    src: [(usize, f64); 16],
    delta: f64,
    rot: C64,
}

fn ghost_columns(grid: &Grid, c: usize) -> Result<Vec<GhostColumn>, FlowError> {
    let mut out = Vec::new();
    let h = grid.hw();
    for i in 0..grid.nw {
        for j in 0..grid.nw {
            if !grid.is_ghost(i, j) {
                continue;
            }
            let w = grid.w(i, j);
            let p = PolarPoint { chart: CHARTS[c], w: vec![w], zeta: C64::new(1.0, 0.0) };
            let q = transition(&p, CHARTS[1 - c]).map_err(FieldError::from)?;
            let wq = q.w[0];
            let (bx, wx) = lagrange4((wq.re + grid.wmax) / h, grid.nw);
            let (by, wy) = lagrange4((wq.im + grid.wmax) / h, grid.nw);
            let mut src = [(0usize, 0.0f64); 16];
            for a in 0..4 {
                for b in 0..4 {
                    src[4 * a + b] = ((bx + a) * grid.nw + by + b, wx[a] * wy[b]);
                }
            }
            let w2 = w * w;
            out.push(GhostColumn { dst: i * grid.nw + j, src, delta: q.zeta.arg(), rot: w2 / w2.conj() });
        }
    }
    Ok(out)
}

/// The time-dependent right-hand side plus the post-stage projection.
pub trait Dynamics: Sync {
    fn grid(&self) -> Grid;
    /// Center parameter `s` of the run.
    fn segment(&self) -> f64;
    fn rhs(&self, phi: &Phi, t: f64) -> Result<Phi, FlowError>;
    /// Maps a stage value back onto the discrete solution space.
    fn project(&self, phi: &mut Phi);
    /// Rebuilds parts of the lattice not carried by the stages, after a whole step.
    fn complete(&self, _phi: &mut Phi) {}
    /// Largest stable step for `c_CFL = 1`.
    fn stable_dt(&self) -> f64;
}

/// Lattice discretization of the deformation equation for one profile,
/// direction and segment parameter.
pub struct DeformationFlow {
    pub rho: ProfileRho,
    pub v0: Direction,
    pub s: f64,
    pub grid: Grid,
    /// Per point: `(c_x, c_y, c_r, c_theta, s0, s1, s2)` for velocity `v0`.
    coeffs: [Vec<[C64; 7]>; 2],
    ghosts: [Vec<GhostColumn>; 2],
    spectral: Spectral,
    speed: f64,
    eps_deg: f64,
}

impl DeformationFlow {
    pub fn new(rho: &ProfileRho, v0: &Direction, s: f64, grid: Grid, eps_deg: f64) -> Result<Self, FlowError> {
        require_n2(rho)?;
        grid.check()?;
        if v0.v.len() != 2 {
            return Err(FlowError::Config(format!("direction has {} components, expected 2", v0.v.len())));
        }
        if !(0.0..=1.0).contains(&s) {
            return Err(FlowError::Config(format!("segment parameter s = {s} outside [0, 1]")));
        }
        if s * v0.norm() >= 1.0 {
            return Err(FieldError::OutsideBall(s * v0.norm()).into());
        }
        let mut coeffs: [Vec<[C64; 7]>; 2] = [Vec::new(), Vec::new()];
        let mut speed: f64 = 0.0;
        for (c, out) in coeffs.iter_mut().enumerate() {
            let (co, sp) = chart_coefficients(rho, v0, CHARTS[c], &grid);
            *out = co;
            speed = speed.max(sp);
        }
        let ghosts = [ghost_columns(&grid, 0)?, ghost_columns(&grid, 1)?];
        Ok(DeformationFlow { rho: rho.clone(), v0: v0.clone(), s, grid, coeffs, ghosts, spectral: Spectral::new(grid.nth), speed, eps_deg })
    }

    /// Scalar `lambda(t)` with `v_t = lambda(t) v0`, from the Mobius center velocity.
    pub fn lambda(&self, t: f64) -> Result<f64, FlowError> {
        if self.s == 0.0 {
            return Ok(0.0);
        }
        let vt = mobius_center_velocity(&self.v0.scaled(self.s), t)?;
        let n2 = self.v0.norm().powi(2);
        let dot: C64 = vt.v.iter().zip(&self.v0.v).map(|(a, b)| a * b.conj()).sum();
        Ok(dot.re / n2)
    }

    /// Bound on `|lambda|` over `[0, 1]`.
    pub fn lambda_max(&self) -> f64 {
        let a = self.s * self.v0.norm();
        self.s / (1.0 - a * a)
    }

    /// Advection coefficients `(c_x, c_y, c_r, c_theta)` and sources at one lattice point.
    pub fn point_coefficients(&self, chart: usize, idx: usize) -> [C64; 7] {
        self.coeffs[chart][idx]
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// Right-hand side at every lattice point, interior rings included, with
    /// stencil radial derivatives.
    pub fn rhs_full(&self, phi: &Phi, t: f64) -> Result<Phi, FlowError> {
        let margin = margin_of(&phi[0]).min(margin_of(&phi[1]));
        if margin <= self.eps_deg {
            return Err(FlowError::Degenerate { t, margin });
        }
        let lam = self.lambda(t)?;
        Ok([self.chart_rhs(0, &phi[0], lam), self.chart_rhs(1, &phi[1], lam)])
    }

    /// Right-hand side on the boundary ring `r = 1` only. There the
    /// advection field is real and tangent, and the radial derivative is
    /// taken from the harmonic extension of the ring.
    fn chart_rhs_boundary(&self, c: usize, v: &[C64], lam: f64) -> Vec<C64> {
        let g = self.grid;
        let (nth, col, kb) = (g.nth, g.column(), g.nr - 1);
        let lines: Vec<C64> = (0..g.nw * g.nw).flat_map(|q| v[q * col + kb * nth..(q + 1) * col].iter().copied()).collect();
        let dth = self.spectral.derivative(&lines);
        let dr = self.spectral.multiplier(&lines, |m| C64::new(m.unsigned_abs() as f64, 0.0));
        let slab = g.nw * col;
        let hw = g.hw();
        let (sx, sy) = (slab, col);
        let co = &self.coeffs[c];
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        out.par_chunks_mut(slab).enumerate().for_each(|(i, o)| {
            if i < GHOST || i >= g.nw - GHOST {
                return;
            }
            for j in GHOST..g.nw - GHOST {
                for l in 0..nth {
                    let p = g.idx(i, j, kb, l);
                    let b = (i * g.nw + j) * nth + l;
                    let cf = &co[p];
                    let fx = (v[p - 2 * sx] - 8.0 * v[p - sx] + 8.0 * v[p + sx] - v[p + 2 * sx]) / (12.0 * hw);
                    let fy = (v[p - 2 * sy] - 8.0 * v[p - sy] + 8.0 * v[p + sy] - v[p + 2 * sy]) / (12.0 * hw);
                    let f = v[p];
                    let adv = cf[0] * fx + cf[1] * fy + cf[2] * dr[b] + cf[3] * dth[b];
                    o[p - i * slab] = lam * (-adv + cf[4] + cf[5] * f + cf[6] * f * f);
                }
            }
        });
        out
    }

    fn extend(&self, phi: &mut Phi) {
        let g = self.grid;
        let radii: Vec<f64> = (0..g.nr).map(|k| g.r(k)).collect();
        for v in phi.iter_mut() {
            v.par_chunks_mut(g.column())
                .for_each_init(|| self.spectral.scratch(), |scr, col| self.spectral.extend_column(col, &radii, scr));
        }
    }

    fn chart_rhs(&self, c: usize, v: &[C64], lam: f64) -> Vec<C64> {
        let g = self.grid;
        let dth = self.spectral.derivative(v);
        let slab = g.nw * g.column();
        let (hw, hr) = (g.hw(), g.hr());
        let sx = slab;
        let sy = g.column();
        let co = &self.coeffs[c];
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        out.par_chunks_mut(slab).enumerate().for_each(|(i, o)| {
            if i < GHOST || i >= g.nw - GHOST {
                return;
            }
            for j in GHOST..g.nw - GHOST {
                for k in 0..g.nr {
                    for l in 0..g.nth {
                        let p = g.idx(i, j, k, l);
                        let cf = &co[p];
                        let fx = (v[p - 2 * sx] - 8.0 * v[p - sx] + 8.0 * v[p + sx] - v[p + 2 * sx]) / (12.0 * hw);
                        let fy = (v[p - 2 * sy] - 8.0 * v[p - sy] + 8.0 * v[p + sy] - v[p + 2 * sy]) / (12.0 * hw);
                        let fr = d1(v, p - k * g.nth, g.nth, k, g.nr, hr);
                        let f = v[p];
                        let adv = cf[0] * fx + cf[1] * fy + cf[2] * fr + cf[3] * dth[p];
                        o[p - i * slab] = lam * (-adv + cf[4] + cf[5] * f + cf[6] * f * f);
                    }
                }
            }
        });
        out
    }

    /// Refills the boundary ring of every ghost column from the other chart.
    fn exchange(&self, phi: &mut Phi) {
        let g = self.grid;
        let col = g.column();
        let off = (g.nr - 1) * g.nth;
        for c in 0..2 {
            let (dst, src) = if c == 0 {
                let (a, b) = phi.split_at_mut(1);
                (&mut a[0], &b[0])
            } else {
                let (a, b) = phi.split_at_mut(1);
                (&mut b[0], &a[0])
            };
            let cols: Vec<(usize, Vec<C64>)> = self.ghosts[c]
                .par_iter()
                .map_init(
                    || self.spectral.scratch(),
                    |scr, gc| {
                        let mut buf = vec![C64::new(0.0, 0.0); g.nth];
                        for (sc, wgt) in gc.src.iter() {
                            let s = &src[sc * col + off..sc * col + off + g.nth];
                            for (b, x) in buf.iter_mut().zip(s) {
                                *b += *wgt * x;
                            }
                        }
                        self.spectral.shift(&mut buf, gc.delta, scr);
                        buf.iter_mut().for_each(|x| *x *= gc.rot);
                        (gc.dst, buf)
                    },
                )
                .collect();
            for (d, buf) in cols {
                dst[d * col + off..d * col + off + g.nth].copy_from_slice(&buf);
            }
        }
    }
}

fn chart_coefficients(rho: &ProfileRho, v0: &Direction, chart: ChartId, g: &Grid) -> (Vec<[C64; 7]>, f64) {
    let vp = v_pair(v0, chart);
    let col = g.column();
    let (hw, hr) = (g.hw(), g.hr());
    let mmax = g.kept_modes() as f64;
    let cols: Vec<(Vec<[C64; 7]>, f64)> = (0..g.nw * g.nw)
        .into_par_iter()
        .map(|ij| {
            let (i, j) = (ij / g.nw, ij % g.nw);
            let (wj, _) = Jet::seed(g.w(i, j), C64::new(1.0, 0.0));
            let dj = xprime_data::<Jet>(rho, chart, vp, wj, Jet::constant(C64::new(1.0, 0.0)));
            let dc = dj.value();
            let k = 0.5 * dc.pw;
            let mut out = Vec::with_capacity(col);
            let mut speed: f64 = 0.0;
            for kk in 0..g.nr {
                for l in 0..g.nth {
                    let zeta = g.zeta(kk, l);
                    let d = dc.with_zeta(zeta);
                    let cx = 0.5 * (d.a + d.b);
                    let cy = 0.5 * C64::i() * (d.b - d.a);
                    let cr = C64::new(g.r(kk) * d.x0.re, 0.0);
                    let ct = C64::new(d.x0.im, 0.0) + C64::i() * (k * d.a - k.conj() * d.b);
                    let s = flow_sources(&dj, zeta);
                    if !g.is_ghost(i, j) && kk == g.nr - 1 {
                        speed = speed.max((cx.norm() + cy.norm()) * D1_RADIUS / hw + cr.norm() * D1_RADIUS / hr + ct.norm() * mmax + s[1].norm());
                    }
                    out.push([cx, cy, cr, ct, s[0], s[1], s[2]]);
                }
            }
            (out, speed)
        })
        .collect();
    let speed = cols.iter().fold(0.0f64, |m, c| m.max(c.1));
    (cols.into_iter().flat_map(|c| c.0).collect(), speed)
}

impl Dynamics for DeformationFlow {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn segment(&self) -> f64 {
        self.s
    }

    fn rhs(&self, phi: &Phi, t: f64) -> Result<Phi, FlowError> {
        let margin = margin_of(&phi[0]).min(margin_of(&phi[1]));
        if margin <= self.eps_deg {
            return Err(FlowError::Degenerate { t, margin });
        }
        let lam = self.lambda(t)?;
        Ok([self.chart_rhs_boundary(0, &phi[0], lam), self.chart_rhs_boundary(1, &phi[1], lam)])
    }

    fn project(&self, phi: &mut Phi) {
        let g = self.grid;
        let (col, off) = (g.column(), (g.nr - 1) * g.nth);
        for v in phi.iter_mut() {
            v.par_chunks_mut(col).for_each_init(
                || self.spectral.scratch(),
                |scr, c| self.spectral.map_line(&mut c[off..], scr, |_| C64::new(1.0, 0.0)),
            );
        }
        self.exchange(phi);
    }

    fn complete(&self, phi: &mut Phi) {
        self.extend(phi);
    }

    fn stable_dt(&self) -> f64 {
        let rate = self.speed * self.lambda_max();
        if rate == 0.0 {
            1.0
        } else {
            RK4_IMAG_LIMIT / rate
        }
    }
}

/// Test fixture whose solution is `phi = t / t_star` everywhere, so that
/// `1 - |phi|^2` reaches 0 at `t = t_star`.
pub struct RampFixture {
    pub grid: Grid,
    pub t_star: f64,
    pub eps_deg: f64,
}

impl Dynamics for RampFixture {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn segment(&self) -> f64 {
        1.0
    }

    fn rhs(&self, phi: &Phi, t: f64) -> Result<Phi, FlowError> {
        let margin = margin_of(&phi[0]).min(margin_of(&phi[1]));
        if margin <= self.eps_deg {
            return Err(FlowError::Degenerate { t, margin });
        }
        let r = C64::new(1.0 / self.t_star, 0.0);
        Ok([vec![r; phi[0].len()], vec![r; phi[1].len()]])
    }

    fn project(&self, _phi: &mut Phi) {}

    fn stable_dt(&self) -> f64 {
        0.05
    }
}

/// Filter and shape options for a flow run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub grid: Grid,
    pub eps_deg: f64,
    pub c_cfl: f64,
    /// Explicit step, overriding the CFL rule.
    pub dt: Option<f64>,
    /// Event bisection tolerance in `t`.
    pub event_tol: f64,
    /// Frontier bisection tolerance in `s`.
    pub s_tol: f64,
    /// Snapshot spacing kept in the history (`None` keeps none).
    pub checkpoint_dt: Option<f64>,
    /// Absolute allowance added to the doubling test on `sup|phi|`.
    pub unstable_floor: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            grid: Grid { nw: 33, nr: 24, nth: 32, wmax: 1.5, rmin: 0.1 },
            eps_deg: 1e-3,
            c_cfl: 0.5,
            dt: None,
            event_tol: 1e-3,
            s_tol: 1e-2,
            checkpoint_dt: Some(0.1),
            unstable_floor: 1e-3,
        }
    }
}

/// Health record recomputed after every accepted step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monitors {
    pub degeneracy_margin: f64,
    pub c_res: f64,
    pub d_res_f0: f64,
    pub d_res_fgamma: f64,
    pub b_margin: f64,
    pub phi_max: f64,
}

/// `(C, D, B)` condition residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResiduals {
    /// `sup |zetabar d/dzetabar phi|` over the non-ghost lattice.
    pub c_res: f64,
    /// Torsion components of `[E_abar, E_bbar]`; with one horizontal
    /// direction the bracket of a field with itself vanishes, so both are 0.
    pub d_res_f0: f64,
    pub d_res_fgamma: f64,
    /// `min (1 - |phi|^2)`, the ratio form of
    /// `dd^c(X, Xbar) - dd^c(phi X, conj(phi X))` over `dd^c(X, Xbar)`.
    pub b_margin: f64,
}

/// A stored solution at one time: the boundary ring `r = 1` of every
/// column, `nth` values per column. The interior rings are its harmonic
/// extension, so [`Snapshot::expand`] recovers the whole lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub ring: Phi,
}

impl Snapshot {
    pub fn capture(grid: &Grid, t: f64, phi: &Phi) -> Self {
        let off = (grid.nr - 1) * grid.nth;
        let take = |v: &Vec<C64>| v.chunks(grid.column()).flat_map(|col| col[off..off + grid.nth].iter().copied()).collect::<Vec<C64>>();
        Snapshot { t, ring: [take(&phi[0]), take(&phi[1])] }
    }

    pub fn expand(&self, grid: &Grid) -> Phi {
        let sp = Spectral::new(grid.nth);
        let radii: Vec<f64> = (0..grid.nr).map(|k| grid.r(k)).collect();
        let off = (grid.nr - 1) * grid.nth;
        let one = |ring: &Vec<C64>| {
            let mut out = vec![C64::new(0.0, 0.0); grid.len()];
            out.par_chunks_mut(grid.column()).zip(ring.par_chunks(grid.nth)).for_each_init(
                || sp.scratch(),
                |scr, (col, r)| {
                    col[off..].copy_from_slice(r);
                    sp.extend_column(col, &radii, scr);
                },
            );
            out
        };
        [one(&self.ring[0]), one(&self.ring[1])]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub grid: Grid,
    pub phi: Phi,
    pub monitors: Monitors,
    pub history: Vec<Snapshot>,
}

impl FlowState {
    pub fn initial(grid: Grid, phi: Option<Phi>) -> Self {
        let phi = phi.unwrap_or_else(|| [vec![C64::new(0.0, 0.0); grid.len()], vec![C64::new(0.0, 0.0); grid.len()]]);
        let mut s = FlowState { t: 0.0, grid, monitors: Monitors::default(), phi, history: Vec::new() };
        s.monitors = monitors(&s);
        s
    }

    pub fn field(&self, c: usize) -> DeformationField {
        DeformationField { chart: CHARTS[c], grid: self.grid, values: self.phi[c].clone() }
    }

    pub fn margin(&self) -> f64 {
        margin_of(&self.phi[0]).min(margin_of(&self.phi[1]))
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.phi[0]).max(sup_norm(&self.phi[1]))
    }
}

impl Default for Monitors {
    fn default() -> Self {
        Monitors { degeneracy_margin: 1.0, c_res: 0.0, d_res_f0: 0.0, d_res_fgamma: 0.0, b_margin: 1.0, phi_max: 0.0 }
    }
}

pub fn condition_residuals(state: &FlowState) -> ConditionResiduals {
    let g = state.grid;
    let sp = Spectral::new(g.nth);
    let mut c_res: f64 = 0.0;
    let mut b_margin = f64::INFINITY;
    for v in &state.phi {
        let dth = sp.derivative(v);
        let dr = radial_derivative(&g, v);
        for i in GHOST..g.nw - GHOST {
            for j in GHOST..g.nw - GHOST {
                for k in 0..g.nr {
                    for l in 0..g.nth {
                        let p = g.idx(i, j, k, l);
                        let z = 0.5 * (g.r(k) * dr[p] + C64::i() * dth[p]);
                        c_res = c_res.max(z.norm());
                        b_margin = b_margin.min(1.0 - v[p].norm_sqr());
                    }
                }
            }
        }
    }
    ConditionResiduals { c_res, d_res_f0: 0.0, d_res_fgamma: 0.0, b_margin }
}

fn monitors(state: &FlowState) -> Monitors {
    let r = condition_residuals(state);
    Monitors {
        degeneracy_margin: state.margin(),
        c_res: r.c_res,
        d_res_f0: r.d_res_f0,
        d_res_fgamma: r.d_res_fgamma,
        b_margin: r.b_margin,
        phi_max: state.sup_norm(),
    }
}

fn axpy(y: &Phi, a: f64, x: &Phi) -> Phi {
    let f = |u: &Vec<C64>, v: &Vec<C64>| u.par_iter().zip(v.par_iter()).map(|(p, q)| p + a * q).collect::<Vec<C64>>();
    [f(&y[0], &x[0]), f(&y[1], &x[1])]
}

fn rk4_values(dyn_: &dyn Dynamics, phi: &Phi, t: f64, dt: f64) -> Result<Phi, FlowError> {
    let k1 = dyn_.rhs(phi, t)?;
    let mut p = axpy(phi, 0.5 * dt, &k1);
    dyn_.project(&mut p);
    let k2 = dyn_.rhs(&p, t + 0.5 * dt)?;
    let mut p = axpy(phi, 0.5 * dt, &k2);
    dyn_.project(&mut p);
    let k3 = dyn_.rhs(&p, t + 0.5 * dt)?;
    let mut p = axpy(phi, dt, &k3);
    dyn_.project(&mut p);
    let k4 = dyn_.rhs(&p, t + dt)?;
    let mut out = phi.clone();
    for c in 0..2 {
        out[c].par_iter_mut().enumerate().for_each(|(q, x)| {
            *x += dt / 6.0 * (k1[c][q] + 2.0 * k2[c][q] + 2.0 * k3[c][q] + k4[c][q]);
        });
    }
    dyn_.project(&mut out);
    dyn_.complete(&mut out);
    Ok(out)
}

/// One RK4 step of length `dt`, followed by the monitor update.
pub fn step(dyn_: &dyn Dynamics, state: &FlowState, dt: f64, unstable_floor: f64) -> Result<FlowState, FlowError> {
    let phi = rk4_values(dyn_, &state.phi, state.t, dt)?;
    let before = state.sup_norm();
    let mut next = FlowState { t: state.t + dt, grid: state.grid, phi, monitors: state.monitors, history: Vec::new() };
    let after = next.sup_norm();
    if !after.is_finite() || after > 2.0 * before + unstable_floor {
        return Err(FlowError::Unstable { t: next.t, from: before, to: after });
    }
    next.monitors = monitors(&next);
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminating {
    ReachedOne,
    Degenerate,
    Unstable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub s_o: f64,
    /// `(t, margin)` after every accepted step.
    pub margin_curve: Vec<(f64, f64)>,
    pub terminating: Terminating,
}

pub struct RunOutcome {
    pub state: FlowState,
    pub report: DegeneracyReport,
    pub steps: usize,
    pub dt: f64,
}

fn breached(r: &Result<FlowState, FlowError>, eps: f64) -> bool {
    match r {
        Ok(s) => s.margin() <= eps,
        Err(FlowError::Degenerate { .. }) => true,
        Err(_) => false,
    }
}

/// Integrates `dyn_` over `t` in `[0, 1]` from `initial` (zero by default).
pub fn integrate(dyn_: &dyn Dynamics, config: &FlowConfig, initial: Option<Phi>) -> Result<RunOutcome, FlowError> {
    let grid = dyn_.grid();
    let mut state = FlowState::initial(grid, initial);
    if state.margin() <= config.eps_deg {
        return Err(FlowError::Degenerate { t: 0.0, margin: state.margin() });
    }
    if !(config.c_cfl > 0.0 && config.event_tol > 0.0 && config.eps_deg > 0.0) {
        return Err(FlowError::Config("tolerances and c_CFL must be positive".into()));
    }
    let dt0 = config.dt.unwrap_or(config.c_cfl * dyn_.stable_dt()).min(1.0);
    let steps = (1.0 / dt0).ceil() as usize;
    let dt = 1.0 / steps as f64;
    let mut curve = vec![(0.0, state.margin())];
    let mut history = Vec::new();
    let mut next_ckpt = 0.0;
    // a snapshot is taken whenever the next step would pass the due time,
    // so consecutive snapshots are at most `checkpoint_dt` apart
    let keep = |t: f64, phi: &Phi, next: &mut f64, h: &mut Vec<Snapshot>| {
        if let Some(c) = config.checkpoint_dt {
            if t + dt > *next + 1e-12 {
                h.push(Snapshot::capture(&grid, t, phi));
                *next = t + c;
            }
        }
    };
    keep(0.0, &state.phi, &mut next_ckpt, &mut history);
    for n in 0..steps {
        let res = step(dyn_, &state, dt, config.unstable_floor);
        if breached(&res, config.eps_deg) {
            // bisect the substep length from the last accepted state
            let (mut lo, mut hi) = (0.0, dt);
            let mut hi_state = res.ok();
            while hi - lo > config.event_tol {
                let mid = 0.5 * (lo + hi);
                let r = step(dyn_, &state, mid, config.unstable_floor);
                if breached(&r, config.eps_deg) {
                    hi = mid;
                    hi_state = r.ok();
                } else {
                    lo = mid;
                }
            }
            let t_event = state.t + hi;
            let m = hi_state.as_ref().map(|s| s.margin()).unwrap_or(0.0).min(config.eps_deg);
            curve.push((t_event, m));
            let mut fin = hi_state.unwrap_or(state);
            fin.t = t_event;
            fin.history = history;
            return Ok(RunOutcome {
                state: fin,
                report: DegeneracyReport { s_o: dyn_.segment() * t_event, margin_curve: curve, terminating: Terminating::Degenerate },
                steps: n,
                dt,
            });
        }
        state = res?;
        if n + 1 == steps {
            state.t = 1.0;
        }
        curve.push((state.t, state.margin()));
        if n + 1 == steps {
            if let Some(last) = history.last() {
                if last.t < 1.0 {
                    history.push(Snapshot::capture(&grid, 1.0, &state.phi));
                }
            }
        } else {
            keep(state.t, &state.phi, &mut next_ckpt, &mut history);
        }
    }
    state.history = history;
    Ok(RunOutcome {
        state,
        report: DegeneracyReport { s_o: dyn_.segment(), margin_curve: curve, terminating: Terminating::ReachedOne },
        steps,
        dt,
    })
}

/// Runs the deformation flow along the segment `t -> t s v0`.
pub fn run_to(s: f64, v0: &Direction, rho: &ProfileRho, config: &FlowConfig, initial: Option<Phi>) -> Result<RunOutcome, FlowError> {
    let flow = DeformationFlow::new(rho, v0, s, config.grid, config.eps_deg)?;
    integrate(&flow, config, initial)
}

/// Bisection over `s` for the largest segment on which the flow stays
/// nondegenerate up to `t = 1`.
pub fn find_frontier(v0: &Direction, rho: &ProfileRho, config: &FlowConfig) -> Result<DegeneracyReport, FlowError> {
    if v0.norm() >= 1.0 {
        return Err(FieldError::OutsideBall(v0.norm()).into());
    }
    let cfg = FlowConfig { checkpoint_dt: None, ..config.clone() };
    let first = run_to(1.0, v0, rho, &cfg, None)?;
    if first.report.terminating == Terminating::ReachedOne {
        return Ok(first.report);
    }
    let mut tried: Vec<(f64, bool)> = vec![(1.0, false)];
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut curve = first.report.margin_curve;
    while hi - lo > config.s_tol {
        let mid = 0.5 * (lo + hi);
        let out = run_to(mid, v0, rho, &cfg, None)?;
        let ok = out.report.terminating == Terminating::ReachedOne;
        tried.push((mid, ok));
        if ok {
            lo = mid;
        } else {
            hi = mid;
            curve = out.report.margin_curve;
        }
    }
    for &(a, oka) in &tried {
        for &(b, okb) in &tried {
            if oka && !okb && a > b {
                return Err(FlowError::NonMonotone { ok: a, failed: b });
            }
        }
    }
    Ok(DegeneracyReport { s_o: lo, margin_curve: curve, terminating: Terminating::Degenerate })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    grid: Grid,
    chart: usize,
    t: f64,
    len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    /// SHA-256 of the value block.
    #[serde(default)]
    checksum: String,
}

fn body_checksum(body: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(body).iter().map(|b| format!("{b:02x}")).collect()
}

/// Contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub field: DeformationField,
    pub t: f64,
    /// Hash of the run configuration that wrote the file, when recorded.
    pub config_hash: Option<String>,
}

const MAGIC: &[u8] = b"MFCK1\n";

/// Writes a field as a JSON header line followed by little-endian `f64` pairs.
pub fn write_checkpoint(path: &Path, field: &DeformationField, t: f64, config_hash: Option<&str>) -> Result<(), FlowError> {
    let err = |e: std::io::Error| FlowError::Checkpoint { path: path.display().to_string(), msg: e.to_string() };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(err)?);
    let mut body = Vec::with_capacity(16 * field.values.len());
    for v in &field.values {
        body.extend_from_slice(&v.re.to_le_bytes());
        body.extend_from_slice(&v.im.to_le_bytes());
    }
    let h = CheckpointHeader {
        grid: field.grid,
        chart: field.chart.axis,
        t,
        len: field.values.len(),
        config_hash: config_hash.map(String::from),
        checksum: body_checksum(&body),
    };
    f.write_all(MAGIC).map_err(err)?;
    f.write_all(serde_json::to_string(&h).expect("header serializes").as_bytes()).map_err(err)?;
    f.write_all(b"\n").map_err(err)?;
    f.write_all(&body).map_err(err)?;
    f.flush().map_err(err)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FlowError> {
    let bad = |msg: String| FlowError::Checkpoint { path: path.display().to_string(), msg };
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| bad(e.to_string()))?;
    if !bytes.starts_with(MAGIC) {
        return Err(bad("missing checkpoint magic".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header".into()))?;
    let h: CheckpointHeader = serde_json::from_slice(&rest[..nl]).map_err(|e| bad(format!("bad header: {e}")))?;
    h.grid.check().map_err(|e| bad(e.to_string()))?;
    let chart = ChartId::new(h.chart, 2).map_err(|e| bad(e.to_string()))?;
    let body = &rest[nl + 1..];
    if h.len != h.grid.len() || body.len() != h.len * 16 {
        return Err(bad(format!("expected {} values, found {} bytes", h.grid.len(), body.len())));
    }
    if body_checksum(body) != h.checksum {
        return Err(bad("checksum mismatch".into()));
    }
    let values = body
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect::<Vec<_>>();
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    Ok(Checkpoint { field: DeformationField { chart, grid: h.grid, values }, t: h.t, config_hash: h.config_hash })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrange_reproduces_cubics() {
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x * x;
        let (b, w) = lagrange4(3.37, 10);
        let v: f64 = (0..4).map(|a| w[a] * f((b + a) as f64)).sum();
        assert!((v - f(3.37)).abs() < 1e-12);
        let (b, _) = lagrange4(9.5, 10);
        assert_eq!(b, 6);
    }

    #[test]
    fn one_sided_stencils_are_exact_on_quartics() {
        let h = 0.1;
        let f: Vec<C64> = (0..7).map(|k| C64::new((k as f64 * h).powi(4), 0.0)).collect();
        for k in 0..7 {
            let d = d1(&f, 0, 1, k, 7, h);
            let x = k as f64 * h;
            assert!((d.re - 4.0 * x * x * x).abs() < 1e-10, "k = {k}");
        }
    }

    #[test]
    fn structure_squares_to_minus_one() {
        let j = structure_on_h(C64::new(0.3, -0.4)).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let s: C64 = (0..2).map(|c| j[a][c] * j[c][b]).sum();
                let want = if a == b { -1.0 } else { 0.0 };
                assert!((s - want).norm() < 1e-14);
            }
        }
    }
}
