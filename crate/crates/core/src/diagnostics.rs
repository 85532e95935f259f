//! Independent checks: finite-difference complex Hessians, Monge-Ampere
//! residuals and plurisubharmonicity margins in ambient coordinates, the
//! Mobius oracle for the ball, the exact-identity suite, and the
//! Lie-derivative relation between a run's structures and its fields.

use crate::deformation_flow::{structure_on_h, FlowError, CHARTS};
use crate::domain_profile::{bracket, bracket_residual, bracket_residual_shifted, conj_comps, frame_jets, require_n2, FrameJets, ProfileRho};
use crate::jet::{Field, Jet, C64};
use crate::polar_geometry::{to_polar, AmbientPoint, PolarPoint};
use crate::special_fields::{
    frame_to_ambient, frame_to_polar, hdot, identity_426_residual, mobius_map, polar_to_frame, Coordinates, Direction, FieldError, FrameVector,
};
use crate::transport::{chart_weight, Transport, TransportError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Second-difference data of a real function of `C^n` at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianProbe {
    pub center: AmbientPoint,
    pub h: f64,
    /// Real Hessian over `(Re z1, Im z1, ..., Re zn, Im zn)`.
    pub real: Vec<Vec<f64>>,
    /// Hermitian-symmetrized `d^2 u / dz^i dzbar^j`.
    pub complex: Vec<Vec<C64>>,
}

/// Central second differences of `u` on the real coordinates of `x`, then
/// `u_{i jbar} = (u_{x_i x_j} + u_{y_i y_j} + i (u_{x_i y_j} - u_{y_i x_j})) / 4`.
pub fn hessian_probe<E>(u: &dyn Fn(&AmbientPoint) -> Result<f64, E>, x: &AmbientPoint, h: f64) -> Result<HessianProbe, E> {
    let n = x.dim();
    let m = 2 * n;
    let shifted = |steps: &[(usize, f64)]| -> AmbientPoint {
        let mut z = x.z.clone();
        for &(k, d) in steps {
            let e = if k % 2 == 0 { C64::new(d, 0.0) } else { C64::new(0.0, d) };
            z[k / 2] += e;
        }
        AmbientPoint::new(z)
    };
    let u0 = u(x)?;
    let mut real = vec![vec![0.0; m]; m];
    for a in 0..m {
        let up = u(&shifted(&[(a, h)]))?;
        let um = u(&shifted(&[(a, -h)]))?;
        real[a][a] = (up - 2.0 * u0 + um) / (h * h);
        for b in 0..a {
            let pp = u(&shifted(&[(a, h), (b, h)]))?;
            let pm = u(&shifted(&[(a, h), (b, -h)]))?;
            let mp = u(&shifted(&[(a, -h), (b, h)]))?;
            let mm = u(&shifted(&[(a, -h), (b, -h)]))?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            real[a][b] = v;
            real[b][a] = v;
        }
    }
    let mut cx = vec![vec![C64::new(0.0, 0.0); n]; n];
    for i in 0..n {
        for j in 0..n {
            let (xi, yi, xj, yj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
            cx[i][j] = 0.25 * C64::new(real[xi][xj] + real[yi][yj], real[xi][yj] - real[yi][xj]);
        }
    }
    // Hermitian symmetrization
    for i in 0..n {
        for j in 0..=i {
            let s = 0.5 * (cx[i][j] + cx[j][i].conj());
            cx[i][j] = s;
            cx[j][i] = s.conj();
        }
    }
    Ok(HessianProbe { center: x.clone(), h, real, complex: cx })
}

/// Determinant and eigenvalues of a Hermitian 2x2 matrix.
fn herm2(m: &[Vec<C64>]) -> (f64, [f64; 2]) {
    let (a, d) = (m[0][0].re, m[1][1].re);
    let b = m[0][1];
    let det = a * d - b.norm_sqr();
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    (det, [mean - rad, mean + rad])
}

/// `|det(d^2 u / dz dzbar)|` at `x` by central differences of step `h` (n = 2).
pub fn ma_residual<E>(u: &dyn Fn(&AmbientPoint) -> Result<f64, E>, x: &AmbientPoint, h: f64) -> Result<f64, E> {
    let p = hessian_probe(u, x, h)?;
    Ok(herm2(&p.complex).0.abs())
}

/// Smallest eigenvalue of the complex Hessian of `tau` at `x` (n = 2).
pub fn psh_margin<E>(tau: &dyn Fn(&AmbientPoint) -> Result<f64, E>, x: &AmbientPoint, h: f64) -> Result<f64, E> {
    let p = hessian_probe(tau, x, h)?;
    Ok(herm2(&p.complex).1[0])
}

/// `log |T_a(z)|^2`, the Green function of the ball with pole `a`; `-inf` at `z = a`.
pub fn ball_oracle_green(a: &[C64], z: &[C64]) -> f64 {
    let t = mobius_map(a, z);
    let r = hdot(&t, &t).re;
    if r == 0.0 {
        f64::NEG_INFINITY
    } else {
        r.ln()
    }
}

/// One named check of a diagnostics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
    /// `true` when the check requires `residual > threshold` (negative controls).
    #[serde(default)]
    pub exceeds: bool,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, residual: f64, threshold: f64) -> Self {
        Check { name: name.into(), residual, threshold, exceeds: false, pass: residual <= threshold }
    }

    pub fn above(name: &str, residual: f64, threshold: f64) -> Self {
        Check { name: name.into(), residual, threshold, exceeds: true, pass: residual > threshold }
    }
}

/// JSON-serializable collection of checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `dd^c_J tau (X, Y) = -X((JY) tau) + Y((JX) tau) + (J[X, Y]) tau` for
/// `tau = |zeta|^2`, with `J` given in the frame basis `(Z, e, Zbar, ebar)`
/// by columns: `J(basis_j) = sum_i m[i][j] basis_i`.
fn ddc_tau(fj: &FrameJets, zeta: C64, m: &[[C64; 4]; 4], x: usize, y: usize) -> C64 {
    let (_, zj) = Jet::seed(C64::new(0.0, 0.0), zeta);
    let zb = conj_comps(&fj.z);
    let basis = [fj.z, fj.e, zb, fj.eb];
    let tau_d = |v: &[Jet; 4]| v[2] * zj.conj() + v[3] * zj;
    let j_of = |k: usize| -> [Jet; 4] {
        let mut out = [Jet::re(0.0); 4];
        for (i, b) in basis.iter().enumerate() {
            for c in 0..4 {
                out[c] = out[c] + b[c].scale(m[i][k]);
            }
        }
        out
    };
    let value = |v: &[Jet; 4]| -> [C64; 4] { v.map(|q| q.v) };
    let jx_tau = tau_d(&j_of(x));
    let jy_tau = tau_d(&j_of(y));
    let br = bracket(&basis[x], &basis[y]);
    let coef = polar_to_frame(&br, fj.pot.pw.v, zeta);
    let mut jc = [C64::new(0.0, 0.0); 4];
    for i in 0..4 {
        for k in 0..4 {
            jc[i] += m[i][k] * coef[k];
        }
    }
    let comps = frame_to_polar(&jc, fj.pot.pw.v, zeta);
    let j_br_tau = comps[2] * zeta.conj() + comps[3] * zeta;
    -jy_tau.apply(&value(&basis[x])) + jx_tau.apply(&value(&basis[y])) + j_br_tau
}

/// Frame-basis matrix of the structure with deformation `phi` on the
/// horizontal plane and `+-i` on `span(Z, Zbar)`.
fn structure_frame(phi: C64) -> Result<[[C64; 4]; 4], FlowError> {
    let h = structure_on_h(phi)?;
    let o = C64::new(0.0, 0.0);
    let i = C64::i();
    Ok([[i, o, o, o], [o, h[0][0], o, h[0][1]], [o, o, -i, o], [o, h[1][0], o, h[1][1]]])
}

/// Max over frame pairs of `|dd^c_J tau - dd^c_Jst tau|` for the structure
/// with deformation `phi`, at a ball-model polar point.
pub fn pairing_residual(rho: &ProfileRho, p: &PolarPoint, phi: C64) -> Result<f64, FlowError> {
    let fj = frame_jets(rho, p.chart, p.w[0], p.zeta);
    let mj = structure_frame(phi)?;
    let ms = structure_frame(C64::new(0.0, 0.0))?;
    let mut worst: f64 = 0.0;
    for x in 0..4 {
        for y in 0..4 {
            let d = ddc_tau(&fj, p.zeta, &mj, x, y) - ddc_tau(&fj, p.zeta, &ms, x, y);
            worst = worst.max(d.norm());
        }
    }
    Ok(worst)
}

/// Worst residuals of the exact identities at `points` random points drawn
/// from `seed`: the frame-derivative identity of the radial coefficient, the
/// bracket relations, and the equality of the `tau` pairings under a random
/// deformation. Also runs the corrupted-metric negative control.
pub fn identity_suite(rho: &ProfileRho, seed: u64, points: usize) -> Result<Report, FlowError> {
    require_n2(rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut r426, mut rbr, mut rpair, mut rctl) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..points {
        let chart = CHARTS[rng.gen_range(0..2)];
        let w = C64::from_polar(rng.gen_range(0.0..1.2), rng.gen_range(0.0..TAU));
        let zeta = C64::from_polar(rng.gen_range(0.2..0.95), rng.gen_range(0.0..TAU));
        let v = Direction::new(vec![
            C64::from_polar(rng.gen_range(0.0..0.6), rng.gen_range(0.0..TAU)),
            C64::from_polar(rng.gen_range(0.0..0.6), rng.gen_range(0.0..TAU)),
        ])?;
        let phi = C64::from_polar(rng.gen_range(0.0..0.7), rng.gen_range(0.0..TAU));
        let p = PolarPoint { chart, w: vec![w], zeta };
        r426 = r426.max(identity_426_residual(&v, chart, w, zeta, rho));
        rbr = rbr.max(bracket_residual(rho, &p)?);
        rpair = rpair.max(pairing_residual(rho, &p, phi)?);
        rctl = rctl.min(bracket_residual_shifted(rho, &p, 0.1)?);
    }
    Ok(Report {
        checks: vec![
            Check::at_most("radial coefficient frame identity", r426, 1e-8),
            Check::at_most("frame brackets", rbr, 1e-8),
            Check::at_most("tau pairing under deformation", rpair, 1e-8),
            Check::above("corrupted metric control", rctl, 1e-2),
        ],
    })
}

/// Real `4 x 4` matrix of the deformed structure `J_t` at a ball-model
/// point, in the real coordinates `(Re z1, Im z1, Re z2, Im z2)`.
pub fn structure_ambient(tr: &Transport, t: f64, y: &AmbientPoint) -> Result<[[f64; 4]; 4], TransportError> {
    let c = if chart_weight(&y.z) >= 0.5 { 0 } else { 1 };
    let p = to_polar(y, CHARTS[c]).map_err(FieldError::from)?;
    let phi = tr.path.phi_at(c, p.w[0], p.zeta, t);
    let m = structure_frame(phi)?;
    let o = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    // columns: ambient components (holo, anti) of Z, e, Zbar, ebar
    let mut f = [[o; 4]; 4];
    for (j, fv) in [
        FrameVector { a0: one, a: o, b0: o, b: o },
        FrameVector { a0: o, a: one, b0: o, b: o },
        FrameVector { a0: o, a: o, b0: one, b: o },
        FrameVector { a0: o, a: o, b0: o, b: one },
    ]
    .iter()
    .enumerate()
    {
        let a = frame_to_ambient(fv, &p, &tr.rho, Coordinates::Ball)?;
        for i in 0..2 {
            f[i][j] = a.holo[i];
            f[2 + i][j] = a.anti[i];
        }
    }
    let mut out = [[0.0; 4]; 4];
    for k in 0..4 {
        let mut v = [o; 4];
        let e = if k % 2 == 0 { one } else { C64::i() };
        v[k / 2] = e;
        v[2 + k / 2] = e.conj();
        let c = solve4(f, v).ok_or_else(|| TransportError::Config("singular frame".into()))?;
        for i in 0..2 {
            let mut jv = o;
            for (j, row) in m.iter().enumerate() {
                let cj: C64 = row.iter().zip(&c).map(|(a, b)| a * b).sum();
                jv += cj * f[i][j];
            }
            out[2 * i][k] = jv.re;
            out[2 * i + 1][k] = jv.im;
        }
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting for a `4 x 4` complex system.
fn solve4(mut a: [[C64; 4]; 4], mut b: [C64; 4]) -> Option<[C64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))?;
        if a[piv][col].norm() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let q = a[r][col] / a[col][col];
            for c in col..4 {
                let x = a[col][c];
                a[r][c] -= q * x;
            }
            let x = b[col];
            b[r] -= q * x;
        }
    }
    let mut x = [C64::new(0.0, 0.0); 4];
    for r in (0..4).rev() {
        let s: C64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn real_field(tr: &Transport, t: f64, y: &AmbientPoint) -> Result<[f64; 4], TransportError> {
    let f = tr.field(t, &[y.z[0], y.z[1]])?;
    Ok([f[0].re, f[0].im, f[1].re, f[1].im])
}

fn shift_real(y: &AmbientPoint, d: &[f64; 4], k: f64) -> AmbientPoint {
    AmbientPoint::new(vec![y.z[0] + k * C64::new(d[0], d[1]), y.z[1] + k * C64::new(d[2], d[3])])
}

/// `max |dJ/dt + L_X J|` over `probes` at time `t`. `dJ/dt` is the central
/// difference over `t -+ dt` at fixed points, and
/// `L_X J = X . grad J - DX J + J DX` uses central differences of step `1e-4`.
pub fn lie_derivative_check(tr: &Transport, t: f64, dt: f64, probes: &[AmbientPoint]) -> Result<f64, TransportError> {
    const STEP: f64 = 1e-4;
    if t - dt < 0.0 || t + dt > 1.0 {
        return Err(TransportError::Config(format!("t = {t} -+ {dt} leaves [0, 1]")));
    }
    let per: Vec<f64> = probes
        .par_iter()
        .map(|y| -> Result<f64, TransportError> {
            let jp = structure_ambient(tr, t + dt, y)?;
            let jm = structure_ambient(tr, t - dt, y)?;
            let j0 = structure_ambient(tr, t, y)?;
            let x = real_field(tr, t, y)?;
            let mut dx = [[0.0; 4]; 4];
            for k in 0..4 {
                let mut e = [0.0; 4];
                e[k] = 1.0;
                let xp = real_field(tr, t, &shift_real(y, &e, STEP))?;
                let xm = real_field(tr, t, &shift_real(y, &e, -STEP))?;
                for i in 0..4 {
                    dx[i][k] = (xp[i] - xm[i]) / (2.0 * STEP);
                }
            }
            let ja = structure_ambient(tr, t, &shift_real(y, &x, STEP))?;
            let jb = structure_ambient(tr, t, &shift_real(y, &x, -STEP))?;
            let mut worst: f64 = 0.0;
            for i in 0..4 {
                for k in 0..4 {
                    let djdt = (jp[i][k] - jm[i][k]) / (2.0 * dt);
                    let adv = (ja[i][k] - jb[i][k]) / (2.0 * STEP);
                    let mut comm = 0.0;
                    for q in 0..4 {
                        comm += -dx[i][q] * j0[q][k] + j0[i][q] * dx[q][k];
                    }
                    worst = worst.max((djdt + adv + comm).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<_, _>>()?;
    Ok(per.into_iter().fold(0.0, f64::max))
}
