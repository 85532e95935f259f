//! Generalized polar coordinates `(w, zeta)` on `C^n` minus a coordinate
//! hyperplane, their inverses, coordinate vector fields and chart changes.
//!
//! In the chart with axis `k` the coordinates are `w^a = z^a / z^k` for the
//! remaining indices (in increasing order) and `zeta = |z| z^k / |z^k|`, so
//! that `|zeta| = |z|`.

use crate::jet::C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies on the deleted hyperplane of chart {0}")]
    ChartSingular(usize),
    #[error("operation undefined on the core zeta = 0")]
    CoreSingular,
    #[error("chart axis {axis} invalid for dimension {n}")]
    InvalidChart { axis: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Ambient coordinates `z` of the ball model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbientPoint {
    pub z: Vec<C64>,
}

impl AmbientPoint {
    pub fn new(z: Vec<C64>) -> Self {
        AmbientPoint { z }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn norm(&self) -> f64 {
        self.z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.z.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Chart whose axis maximizes `|z^i|`, so that `|w^a| <= 1` there.
    pub fn best_chart(&self) -> ChartId {
        let mut best = 0;
        for i in 1..self.z.len() {
            if self.z[i].norm() > self.z[best].norm() {
                best = i;
            }
        }
        ChartId { axis: best + 1 }
    }
}

/// Axis `1..=n` of the deleted hyperplane `{z^axis = 0}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChartId {
    pub axis: usize,
}

impl ChartId {
    pub fn new(axis: usize, n: usize) -> Result<Self, GeometryError> {
        if axis == 0 || axis > n {
            return Err(GeometryError::InvalidChart { axis, n });
        }
        Ok(ChartId { axis })
    }

    /// Ambient indices (0-based) carried by `w^1..w^{n-1}`.
    pub fn w_indices(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|&i| i + 1 != self.axis).collect()
    }
}

/// A point of the blown-up ball in a chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub chart: ChartId,
    pub w: Vec<C64>,
    pub zeta: C64,
}

impl PolarPoint {
    pub fn dim(&self) -> usize {
        self.w.len() + 1
    }

    /// `1 + sum |w^a|^2`.
    pub fn s(&self) -> f64 {
        1.0 + self.w.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }
}

pub fn to_polar(z: &AmbientPoint, chart: ChartId) -> Result<PolarPoint, GeometryError> {
    let n = z.dim();
    if chart.axis == 0 || chart.axis > n {
        return Err(GeometryError::InvalidChart { axis: chart.axis, n });
    }
    let zk = z.z[chart.axis - 1];
    if zk.norm() == 0.0 {
        return Err(GeometryError::ChartSingular(chart.axis));
    }
    let w = chart.w_indices(n).into_iter().map(|i| z.z[i] / zk).collect();
    let zeta = zk * (z.norm() / zk.norm());
    Ok(PolarPoint { chart, w, zeta })
}

pub fn from_polar(p: &PolarPoint) -> AmbientPoint {
    let n = p.dim();
    let scale = p.zeta / p.s().sqrt();
    let mut z = vec![C64::new(0.0, 0.0); n];
    for (k, i) in p.chart.w_indices(n).into_iter().enumerate() {
        z[i] = scale * p.w[k];
    }
    z[p.chart.axis - 1] = scale;
    AmbientPoint { z }
}

pub fn transition(p: &PolarPoint, chart: ChartId) -> Result<PolarPoint, GeometryError> {
    if chart == p.chart {
        return Ok(p.clone());
    }
    to_polar(&from_polar(p), chart)
}

/// A real tangent vector written through its `d/dz^i` and `d/dzbar^i`
/// components.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientVector {
    pub holo: Vec<C64>,
    pub anti: Vec<C64>,
}

impl AmbientVector {
    pub fn zero(n: usize) -> Self {
        AmbientVector { holo: vec![C64::new(0.0, 0.0); n], anti: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn add_scaled(&mut self, c: C64, o: &AmbientVector) {
        for i in 0..self.holo.len() {
            self.holo[i] += c * o.holo[i];
            self.anti[i] += c * o.anti[i];
        }
    }
}

/// Images of `zeta d/dzeta` and `d/dw^a` in ambient components.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateFields {
    pub zeta_dzeta: AmbientVector,
    pub dw: Vec<AmbientVector>,
}

impl CoordinateFields {
    /// Image of `c0 zeta d/dzeta + sum c_a d/dw^a`.
    pub fn apply(&self, c0: C64, c: &[C64]) -> AmbientVector {
        let mut out = AmbientVector::zero(self.zeta_dzeta.holo.len());
        out.add_scaled(c0, &self.zeta_dzeta);
        for (a, ca) in c.iter().enumerate() {
            out.add_scaled(*ca, &self.dw[a]);
        }
        out
    }
}

pub fn coordinate_fields(p: &PolarPoint) -> Result<CoordinateFields, GeometryError> {
    if p.zeta.norm() == 0.0 {
        return Err(GeometryError::CoreSingular);
    }
    let n = p.dim();
    let z = from_polar(p);
    let zc: Vec<C64> = z.z.iter().map(|c| c.conj()).collect();
    let zn = z.z[p.chart.axis - 1];
    let s = p.s();
    let zeta_dzeta = AmbientVector { holo: z.z.clone(), anti: vec![C64::new(0.0, 0.0); n] };
    let idx = p.chart.w_indices(n);
    let dw = (0..n - 1)
        .map(|a| {
            let k = -0.5 * p.w[a].conj() / s;
            let mut v = AmbientVector { holo: z.z.iter().map(|c| k * c).collect(), anti: zc.iter().map(|c| k * c).collect() };
            v.holo[idx[a]] += zn;
            v
        })
        .collect();
    Ok(CoordinateFields { zeta_dzeta, dw })
}
