//! Particle transport along the special fields of a deformation run, and the
//! exhaustions, Green functions and Kobayashi metric read off from it.
//!
//! A query `x` of the ball model is carried by `dy/dt = X_t(y)`, `y(0) = x`,
//! where `X_t` is the real special field built from the center velocity `v_t`
//! and the deformation `phi_t` of the run. The exhaustion centered at the end
//! of the segment is `tau(x) = |y(1)|^2` and the Green function is `log tau`.
//! Queries on the circular domain itself are first mapped into the ball model
//! by [`crate::domain_profile::straighten`].

use crate::deformation_flow::{lagrange4, FlowError, FlowState, Grid, Phi, Snapshot, Spectral, CHARTS};
use crate::domain_profile::{straighten, ProfileRho};
use crate::jet::C64;
use crate::polar_geometry::{to_polar, AmbientPoint};
use crate::special_fields::{frame_to_ambient, special_for_phi, Coordinates, Direction, FieldError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("trajectory reached the moving center at t = {t:.6}")]
    PoleCollision { t: f64 },
    #[error("deformation degenerate along the path at t = {t:.4}: margin {margin:.3e}")]
    Degenerate { t: f64, margin: f64 },
    #[error("adaptive step fell below {h:.1e} at t = {t:.6}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("Richardson extrapolation did not settle: spread {spread:.3e} against value {value:.3e}")]
    NoConvergence { spread: f64, value: f64 },
    #[error("query excluded: distance {dist:.3e} to the pole is below {radius:.1e}")]
    NearPole { dist: f64, radius: f64 },
    #[error("invalid transport input: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Time-interpolated deformation, stored as the Fourier coefficients of the
/// boundary ring of every `w` column. Inside the ring the deformation is the
/// harmonic extension `sum_m c_m r^|m| e^{i m theta}`, which is how the flow
/// fills its interior rings and also covers the core `r < r_min`.
#[derive(Clone, Debug)]
pub struct PhiPath {
    grid: Grid,
    times: Vec<f64>,
    /// Per snapshot and chart: `nw * nw * (2 mmax + 1)` coefficients, `m` ascending from `-mmax`.
    coeffs: Vec<[Vec<C64>; 2]>,
    mmax: usize,
    /// Worst `1 - |phi|^2` over all stored lattice values.
    pub min_margin: f64,
}

impl PhiPath {
    /// Path of the undeformed structure, `phi = 0` for all `t`.
    pub fn zero(grid: Grid) -> Self {
        let mmax = grid.kept_modes();
        let len = grid.nw * grid.nw * (2 * mmax + 1);
        let z = vec![C64::new(0.0, 0.0); len];
        PhiPath { grid, times: vec![0.0, 1.0], coeffs: vec![[z.clone(), z.clone()], [z.clone(), z]], mmax, min_margin: 1.0 }
    }

    pub fn from_snapshots(grid: Grid, snaps: &[Snapshot]) -> Result<Self, TransportError> {
        if snaps.len() < 2 {
            return Err(TransportError::Config(format!("need at least 2 snapshots, got {}", snaps.len())));
        }
        if snaps.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(TransportError::Config("snapshot times must increase".into()));
        }
        if snaps[0].t > 0.0 || snaps[snaps.len() - 1].t < 1.0 {
            return Err(TransportError::Config("snapshots must cover [0, 1]".into()));
        }
        let sp = Spectral::new(grid.nth);
        let mmax = grid.kept_modes();
        let nm = 2 * mmax + 1;
        let mut min_margin = f64::INFINITY;
        let mut coeffs = Vec::with_capacity(snaps.len());
        for s in snaps {
            for c in 0..2 {
                if s.ring[c].len() != grid.nw * grid.nw * grid.nth {
                    return Err(TransportError::Config("snapshot does not match the grid".into()));
                }
                // |phi| is subharmonic, so the ring carries the worst margin
                min_margin = s.ring[c].iter().fold(min_margin, |m, p| m.min(1.0 - p.norm_sqr()));
            }
            coeffs.push([boundary_coefficients(&grid, &sp, &s.ring[0], nm), boundary_coefficients(&grid, &sp, &s.ring[1], nm)]);
        }
        Ok(PhiPath { grid, times: snaps.iter().map(|s| s.t).collect(), coeffs, mmax, min_margin })
    }

    /// Path from the history of a completed run.
    pub fn from_state(state: &FlowState) -> Result<Self, TransportError> {
        if state.t < 1.0 {
            return Err(TransportError::Config(format!("run stopped at t = {} before reaching 1", state.t)));
        }
        PhiPath::from_snapshots(state.grid, &state.history)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Largest spacing between stored times.
    pub fn max_spacing(&self) -> f64 {
        self.times.windows(2).fold(0.0, |m, w| m.max(w[1] - w[0]))
    }

    /// `phi_t` at `(w, zeta)` of chart `c` (index into [`CHARTS`]).
    pub fn phi_at(&self, c: usize, w: C64, zeta: C64, t: f64) -> C64 {
        let nm = 2 * self.mmax + 1;
        let g = &self.grid;
        let h = g.hw();
        let (bx, wx) = lagrange4((w.re + g.wmax) / h, g.nw);
        let (by, wy) = lagrange4((w.im + g.wmax) / h, g.nw);
        let (tn, tw) = time_weights(&self.times, t);
        let mut acc = [C64::new(0.0, 0.0); 64];
        let acc = &mut acc[..nm];
        for (q, &wt) in tn.iter().zip(&tw) {
            let data = &self.coeffs[*q][c];
            for a in 0..4 {
                for b in 0..4 {
                    let k = wt * wx[a] * wy[b];
                    let col = ((bx + a) * g.nw + by + b) * nm;
                    for (x, y) in acc.iter_mut().zip(&data[col..col + nm]) {
                        *x += k * y;
                    }
                }
            }
        }
        // m >= 0 contributes c_m zeta^m, m < 0 contributes c_m conj(zeta)^|m|
        let m0 = self.mmax;
        let mut out = acc[m0];
        let (mut zp, mut zb) = (C64::new(1.0, 0.0), C64::new(1.0, 0.0));
        for m in 1..=self.mmax {
            zp *= zeta;
            zb *= zeta.conj();
            out += acc[m0 + m] * zp + acc[m0 - m] * zb;
        }
        out
    }
}

fn boundary_coefficients(grid: &Grid, sp: &Spectral, ring: &[C64], nm: usize) -> Vec<C64> {
    let mmax = (nm - 1) / 2;
    let mut out = vec![C64::new(0.0, 0.0); grid.nw * grid.nw * nm];
    out.par_chunks_mut(nm).zip(ring.par_chunks(grid.nth)).for_each(|(o, line)| {
        let c = sp.coefficients(line);
        for (q, x) in c.iter().enumerate() {
            if let Some(m) = sp.mode(q) {
                if m.unsigned_abs() as usize <= mmax {
                    o[(m + mmax as i64) as usize] = *x;
                }
            }
        }
    });
    out
}

/// Up to four nearest nodes around `t` and their Lagrange weights.
fn time_weights(times: &[f64], t: f64) -> (Vec<usize>, Vec<f64>) {
    let n = times.len();
    let k = n.min(4);
    let hi = times.partition_point(|&x| x < t).clamp(1, n - 1);
    let start = (hi as i64 - (k as i64) / 2).clamp(0, (n - k) as i64) as usize;
    let nodes: Vec<usize> = (start..start + k).collect();
    let weights = nodes
        .iter()
        .map(|&a| {
            nodes.iter().filter(|&&b| b != a).fold(1.0, |p, &b| p * (t - times[b]) / (times[a] - times[b]))
        })
        .collect();
    (nodes, weights)
}

/// Center velocity of the Mobius segment `t -> t s v0`:
/// `d/du T_{(t+u) s v0}(t s v0) = -s v0 / (1 - t^2 s^2 |v0|^2)` at `u = 0`.
pub fn center_velocity(v0: &Direction, s: f64, t: f64) -> Vec<C64> {
    let a = t * s * v0.norm();
    let k = -s / (1.0 - a * a);
    v0.v.iter().map(|c| c * k).collect()
}

/// Tolerances of the per-query integration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportOptions {
    /// Absolute local error per step, in ambient units.
    pub tol: f64,
    /// Radius around the moving center treated as a collision.
    pub pole_radius: f64,
    /// Radius around the pole that query batches leave out.
    pub exclusion: f64,
    pub eps_deg: f64,
    pub min_step: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions { tol: 1e-8, pole_radius: 1e-10, exclusion: 1e-3, eps_deg: 1e-3, min_step: 1e-12 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Everything needed to evaluate the special fields of one run.
#[derive(Clone, Debug)]
pub struct Transport {
    pub path: PhiPath,
    pub rho: ProfileRho,
    pub v0: Direction,
    pub s: f64,
    pub opts: TransportOptions,
    pole: Option<AmbientPoint>,
}

type State = [C64; 2];

impl Transport {
    pub fn new(path: PhiPath, rho: &ProfileRho, v0: &Direction, s: f64, opts: TransportOptions) -> Result<Self, TransportError> {
        if v0.v.len() != 2 || rho.n != 2 {
            return Err(TransportError::Config("transport is implemented for n = 2".into()));
        }
        if !(0.0..=1.0).contains(&s) || s * v0.norm() >= 1.0 {
            return Err(TransportError::Config(format!("segment s = {s} with |v0| = {} leaves the ball", v0.norm())));
        }
        if !(opts.tol > 0.0 && opts.pole_radius > 0.0 && opts.eps_deg > 0.0 && opts.min_step > 0.0) {
            return Err(TransportError::Config("tolerances must be positive".into()));
        }
        if path.min_margin <= opts.eps_deg {
            return Err(TransportError::Degenerate { t: f64::NAN, margin: path.min_margin });
        }
        Ok(Transport { path, rho: rho.clone(), v0: v0.clone(), s, opts, pole: None })
    }

    /// Real special field `X_t` at the ball-model point `y`, as `dz/dt`.
    pub fn field(&self, t: f64, y: &State) -> Result<State, TransportError> {
        let vt = center_velocity(&self.v0, self.s, t);
        if self.s == 0.0 {
            return Ok([C64::new(0.0, 0.0); 2]);
        }
        let r2 = y[0].norm_sqr() + y[1].norm_sqr();
        if r2 < 1e-28 {
            return Ok([vt[0], vt[1]]);
        }
        let z = AmbientPoint::new(y.to_vec());
        let vt = Direction { v: vt };
        let w0 = chart_weight(y);
        let mut out = [C64::new(0.0, 0.0); 2];
        for (c, wc) in [(0, w0), (1, 1.0 - w0)] {
            if wc == 0.0 {
                continue;
            }
            let p = to_polar(&z, CHARTS[c]).map_err(FieldError::from)?;
            let phi = self.path.phi_at(c, p.w[0], p.zeta, t);
            let m = 1.0 - phi.norm_sqr();
            if m <= self.opts.eps_deg {
                return Err(TransportError::Degenerate { t, margin: m });
            }
            let fv = special_for_phi(phi, &vt, &p, &self.rho)?;
            let a = frame_to_ambient(&fv, &p, &self.rho, Coordinates::Ball)?;
            out[0] += wc * a.holo[0];
            out[1] += wc * a.holo[1];
        }
        Ok(out)
    }

    /// Adaptive Dormand-Prince integration of `dy/dt = X_t(y)` from `t0` to `t1`.
    fn integrate(&self, y0: State, t0: f64, t1: f64, check_pole: bool) -> Result<(State, OdeStats), TransportError> {
        let dir = (t1 - t0).signum();
        let tol = self.opts.tol;
        let mut t = t0;
        let mut y = y0;
        let mut h = 0.05 * dir;
        let mut stats = OdeStats::default();
        let mut k1 = self.field(t, &y)?;
        while (t1 - t) * dir > 1e-15 {
            if (t + h - t1) * dir > 0.0 {
                h = t1 - t;
            }
            let (y5, k7, err) = dp_step(self, t, &y, &k1, h)?;
            if err <= tol {
                t += h;
                y = y5;
                k1 = k7;
                stats.accepted += 1;
                let n = (y[0].norm_sqr() + y[1].norm_sqr()).sqrt();
                if check_pole && n < self.opts.pole_radius && (t1 - t) * dir > 1e-9 {
                    return Err(TransportError::PoleCollision { t });
                }
            } else {
                stats.rejected += 1;
            }
            let scale = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
            h *= scale;
            if h.abs() < self.opts.min_step && (t1 - t) * dir > self.opts.min_step {
                return Err(TransportError::StepUnderflow { t, h: h.abs() });
            }
        }
        Ok((y, stats))
    }

    /// The preimage of `0` under the time-one map: the pole of the
    /// exhaustion, found by flowing `0` backward from `t = 1`.
    pub fn pole(&self) -> Result<AmbientPoint, TransportError> {
        if let Some(p) = &self.pole {
            return Ok(p.clone());
        }
        if self.s == 0.0 {
            return Ok(AmbientPoint::new(vec![C64::new(0.0, 0.0); 2]));
        }
        let (y, _) = self.integrate([C64::new(0.0, 0.0); 2], 1.0, 0.0, false)?;
        Ok(AmbientPoint::new(y.to_vec()))
    }

    /// Caches the pole so batches do not recompute it.
    pub fn with_pole(mut self) -> Result<Self, TransportError> {
        self.pole = Some(self.pole()?);
        Ok(self)
    }

    /// `y(1)` for the ball-model query `x`.
    pub fn flow_point(&self, x: &AmbientPoint) -> Result<(AmbientPoint, OdeStats), TransportError> {
        if x.dim() != 2 {
            return Err(TransportError::Config(format!("query has dimension {}", x.dim())));
        }
        if self.s == 0.0 {
            return Ok((x.clone(), OdeStats::default()));
        }
        let (y, st) = self.integrate([x.z[0], x.z[1]], 0.0, 1.0, true)?;
        Ok((AmbientPoint::new(y.to_vec()), st))
    }

    /// Exhaustion sample at the ball-model query `x`.
    pub fn exhaustion(&self, x: &AmbientPoint) -> Result<ExhaustionSample, TransportError> {
        let pole = self.pole()?;
        if dist(x, &pole) < self.opts.pole_radius {
            return Ok(ExhaustionSample {
                query: x.clone(),
                center_param: self.s,
                tau: 0.0,
                green: f64::NEG_INFINITY,
                endpoint: AmbientPoint::new(vec![C64::new(0.0, 0.0); 2]),
                ode_stats: OdeStats::default(),
                flag: SampleFlag::Pole,
            });
        }
        let (y, ode_stats) = self.flow_point(x)?;
        let tau = y.norm_sqr();
        Ok(ExhaustionSample { query: x.clone(), center_param: self.s, tau, green: tau.ln(), endpoint: y, ode_stats, flag: SampleFlag::Ok })
    }

    /// Exhaustion of the circular domain at its own point `x`.
    pub fn exhaustion_domain(&self, x: &AmbientPoint) -> Result<ExhaustionSample, TransportError> {
        let mut s = self.exhaustion(&straighten(&self.rho, x))?;
        s.query = x.clone();
        Ok(s)
    }

    /// Green function at the ball-model point `x`.
    pub fn green(&self, x: &AmbientPoint) -> Result<f64, TransportError> {
        Ok(self.exhaustion(x)?.green)
    }

    pub fn green_domain(&self, x: &AmbientPoint) -> Result<f64, TransportError> {
        Ok(self.exhaustion_domain(x)?.green)
    }
}

/// Half-width of the chart blending band in `log |z1/z2|`.
pub const BLEND_HALF_WIDTH: f64 = 0.25;

/// Smooth partition weight of chart 0 (`w = z1/z2`): 1 for
/// `|w| <= e^{-L}`, 0 for `|w| >= e^{L}`, `C^infinity` in between. Switching
/// charts abruptly would leave a jump of the size of the chart mismatch of
/// `phi` in the field, which second differences of the Green function amplify.
pub fn chart_weight(y: &[C64]) -> f64 {
    let (a, b) = (y[0].norm(), y[1].norm());
    if b == 0.0 {
        return 0.0;
    }
    if a == 0.0 {
        return 1.0;
    }
    let x = ((a / b).ln() + BLEND_HALF_WIDTH) / (2.0 * BLEND_HALF_WIDTH);
    let f = |u: f64| if u <= 0.0 { 0.0 } else { (-1.0 / u).exp() };
    let (p, q) = (f(x), f(1.0 - x));
    q / (p + q)
}

fn dist(a: &AmbientPoint, b: &AmbientPoint) -> f64 {
    a.z.iter().zip(&b.z).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt()
}

fn comb(y: &State, h: f64, ks: &[(&State, f64)]) -> State {
    let mut out = *y;
    for (k, c) in ks {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

/// One Dormand-Prince 5(4) step; returns the fifth-order value, the field
/// there (first stage of the next step) and the max-norm error estimate.
fn dp_step(tr: &Transport, t: f64, y: &State, k1: &State, h: f64) -> Result<(State, State, f64), TransportError> {
    let k2 = tr.field(t + h / 5.0, &comb(y, h, &[(k1, 1.0 / 5.0)]))?;
    let k3 = tr.field(t + 3.0 * h / 10.0, &comb(y, h, &[(k1, 3.0 / 40.0), (&k2, 9.0 / 40.0)]))?;
    let k4 = tr.field(t + 4.0 * h / 5.0, &comb(y, h, &[(k1, 44.0 / 45.0), (&k2, -56.0 / 15.0), (&k3, 32.0 / 9.0)]))?;
    let k5 = tr.field(
        t + 8.0 * h / 9.0,
        &comb(y, h, &[(k1, 19372.0 / 6561.0), (&k2, -25360.0 / 2187.0), (&k3, 64448.0 / 6561.0), (&k4, -212.0 / 729.0)]),
    )?;
    let k6 = tr.field(
        t + h,
        &comb(y, h, &[(k1, 9017.0 / 3168.0), (&k2, -355.0 / 33.0), (&k3, 46732.0 / 5247.0), (&k4, 49.0 / 176.0), (&k5, -5103.0 / 18656.0)]),
    )?;
    let y5 = comb(y, h, &[(k1, 35.0 / 384.0), (&k3, 500.0 / 1113.0), (&k4, 125.0 / 192.0), (&k5, -2187.0 / 6784.0), (&k6, 11.0 / 84.0)]);
    let k7 = tr.field(t + h, &y5)?;
    let e = [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];
    let ks = [k1, &k2, &k3, &k4, &k5, &k6, &k7];
    let mut err: f64 = 0.0;
    for i in 0..2 {
        let d: C64 = ks.iter().zip(&e).map(|(k, c)| h * c * k[i]).sum();
        err = err.max(d.norm());
    }
    Ok((y5, k7, err))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFlag {
    Ok,
    Pole,
    Excluded,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionSample {
    pub query: AmbientPoint,
    pub center_param: f64,
    pub tau: f64,
    /// `log tau`; `-inf` at the pole and `NaN` for failed samples.
    pub green: f64,
    pub endpoint: AmbientPoint,
    pub ode_stats: OdeStats,
    pub flag: SampleFlag,
}

impl ExhaustionSample {
    fn failed(query: &AmbientPoint, s: f64, flag: SampleFlag) -> Self {
        ExhaustionSample {
            query: query.clone(),
            center_param: s,
            tau: f64::NAN,
            green: f64::NAN,
            endpoint: AmbientPoint::new(vec![C64::new(f64::NAN, f64::NAN); query.dim()]),
            ode_stats: OdeStats::default(),
            flag,
        }
    }

    /// CSV header matching [`ExhaustionSample::csv_row`] for `n = 2`.
    pub fn csv_header() -> Vec<String> {
        ["x1_re", "x1_im", "x2_re", "x2_im", "tau", "green", "y1_re", "y1_im", "y2_re", "y2_im", "flag"].iter().map(|s| s.to_string()).collect()
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut row = Vec::new();
        for c in &self.query.z {
            row.push(format!("{:.17e}", c.re));
            row.push(format!("{:.17e}", c.im));
        }
        row.push(format!("{:.17e}", self.tau));
        row.push(format!("{:.17e}", self.green));
        for c in &self.endpoint.z {
            row.push(format!("{:.17e}", c.re));
            row.push(format!("{:.17e}", c.im));
        }
        row.push(match &self.flag {
            SampleFlag::Ok => "ok".into(),
            SampleFlag::Pole => "pole".into(),
            SampleFlag::Excluded => "excluded".into(),
            SampleFlag::Failed(m) => format!("failed: {m}"),
        });
        row
    }
}

/// Exhaustion samples at every query, in input order. Queries lie on the
/// domain when `domain` is set and on the ball model otherwise. Queries
/// within `opts.exclusion` of the pole and per-sample failures are flagged
/// instead of aborting the batch.
pub fn green_grid(tr: &Transport, queries: &[AmbientPoint], domain: bool) -> Result<Vec<ExhaustionSample>, TransportError> {
    let pole = tr.pole()?;
    Ok(queries
        .par_iter()
        .map(|q| {
            let b = if domain { straighten(&tr.rho, q) } else { q.clone() };
            if tr.s > 0.0 && dist(&b, &pole) < tr.opts.exclusion {
                return ExhaustionSample::failed(q, tr.s, SampleFlag::Excluded);
            }
            match tr.exhaustion(&b) {
                Ok(mut s) => {
                    s.query = q.clone();
                    s
                }
                Err(e) => ExhaustionSample::failed(q, tr.s, SampleFlag::Failed(e.to_string())),
            }
        })
        .collect())
}

/// Kobayashi length of `u` at the pole, from `sqrt(tau)(pole + h u) / h` at
/// `h = 1e-2, 5e-3, 2.5e-3` and two Richardson steps.
pub fn kobayashi_at_center(tr: &Transport, u: &[C64]) -> Result<f64, TransportError> {
    if u.len() != 2 || u.iter().all(|c| c.norm() == 0.0) {
        return Err(TransportError::Config("direction must be a nonzero vector of C^2".into()));
    }
    let pole = tr.pole()?;
    let q = |h: f64| -> Result<f64, TransportError> {
        let x = AmbientPoint::new(pole.z.iter().zip(u).map(|(p, d)| p + h * d).collect());
        Ok(tr.exhaustion(&x)?.tau.sqrt() / h)
    };
    let (q1, q2, q3) = (q(1e-2)?, q(5e-3)?, q(2.5e-3)?);
    let r1 = 2.0 * q2 - q1;
    let r2 = 2.0 * q3 - q2;
    let value = (4.0 * r2 - r1) / 3.0;
    let spread = (value - r2).abs();
    if spread > 1e-3 * value.abs() {
        return Err(TransportError::NoConvergence { spread, value });
    }
    Ok(value)
}

/// Zero deformation history covering `[0, 1]` on `grid`.
pub fn zero_snapshots(grid: Grid) -> Vec<Snapshot> {
    let n = grid.nw * grid.nw * grid.nth;
    let z: Phi = [vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n]];
    vec![Snapshot { t: 0.0, ring: z.clone() }, Snapshot { t: 1.0, ring: z }]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special_fields::mobius_center_velocity;

    #[test]
    fn closed_form_center_velocity_matches_difference_quotient() {
        let v0 = Direction::new(vec![C64::new(0.3, 0.2), C64::new(-0.1, 0.4)]).unwrap();
        for t in [0.0, 0.4, 0.9] {
            let a = center_velocity(&v0, 0.8, t);
            let b = mobius_center_velocity(&v0.scaled(0.8), t).unwrap();
            for i in 0..2 {
                assert!((a[i] - b.v[i]).norm() < 1e-8, "t = {t}");
            }
        }
    }

    #[test]
    fn time_weights_reproduce_cubics() {
        let times = [0.0, 0.1, 0.25, 0.3, 0.6, 1.0];
        let f = |t: f64| 1.0 + t - 3.0 * t * t + 2.0 * t * t * t;
        for t in [0.0, 0.05, 0.27, 0.5, 0.99, 1.0] {
            let (n, w) = time_weights(&times, t);
            let v: f64 = n.iter().zip(&w).map(|(&k, wk)| wk * f(times[k])).sum();
            assert!((v - f(t)).abs() < 1e-12, "t = {t}");
        }
    }
}
