//! Random-Fourier-feature field model, hyperslab constraints, the
//! product-of-distances cost, synthetic fields and measurement datasets.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::apsm::{ConstraintOperator, CostOracle};
use crate::channel::DOMAIN_SIDE_M;
use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Frozen RFF draws shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct RffDictionary {
    widths: Vec<f64>,
    features_per_kernel: usize,
    signed: bool,
    omega: Vec<Point3>,
    theta: Vec<f64>,
}

impl RffDictionary {
    /// One Gaussian kernel per entry of `widths` (meters), `features_per_kernel`
    /// features each. A signed dictionary appends a negated copy.
    pub fn new<R: Rng + ?Sized>(widths: &[f64], features_per_kernel: usize, signed: bool, rng: &mut R) -> Result<Self> {
        if widths.is_empty() || features_per_kernel == 0 {
            return Err(Error::config("dictionary needs L ≥ 1 kernels and P ≥ 1 features"));
        }
        if widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::config("kernel widths must be positive"));
        }
        let mut omega = Vec::with_capacity(widths.len() * features_per_kernel);
        let mut theta = Vec::with_capacity(widths.len() * features_per_kernel);
        for &w in widths {
            for _ in 0..features_per_kernel {
                let mut o = [0.0; 3];
                for c in o.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *c = z / w;
                }
                omega.push(o);
                theta.push(rng.random_range(0.0..std::f64::consts::TAU));
            }
        }
        Ok(Self {
            widths: widths.to_vec(),
            features_per_kernel,
            signed,
            omega,
            theta,
        })
    }

    pub fn kernels(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn features_per_kernel(&self) -> usize {
        self.features_per_kernel
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    /// Parameter dimension `M`.
    pub fn dim(&self) -> usize {
        let base = self.omega.len();
        if self.signed {
            2 * base
        } else {
            base
        }
    }

    pub fn features(&self, x: &Point3) -> Vec<f64> {
        let scale = (2.0 / self.features_per_kernel as f64).sqrt();
        let mut out = Vec::with_capacity(self.dim());
        for (o, t) in self.omega.iter().zip(&self.theta) {
            let arg = x[0] * o[0] + x[1] * o[1] + x[2] * o[2] + t;
            out.push(scale * arg.cos());
        }
        if self.signed {
            let base = out.len();
            for k in 0..base {
                out.push(-out[k]);
            }
        }
        out
    }

    /// `f̂(x) = hᵀφ(x)`.
    pub fn predict(&self, h: &[f64], x: &Point3) -> f64 {
        self.features(x).iter().zip(h).map(|(a, b)| a * b).sum()
    }
}

/// Gaussian kernel `exp(−‖x − y‖² / (2 w²))`.
pub fn gaussian_kernel(x: &Point3, y: &Point3, width: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * width * width)).exp()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `{h : |hᵀφ − y| ≤ ε}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperslab {
    pub phi: Vec<f64>,
    pub y: f64,
    pub eps: f64,
    phi_norm_sq: f64,
}

impl Hyperslab {
    pub fn new(phi: Vec<f64>, y: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::invalid("hyperslab half-width must be positive"));
        }
        let phi_norm_sq = dot(&phi, &phi);
        if phi_norm_sq == 0.0 && y.abs() > eps {
            return Err(Error::Infeasible(format!(
                "zero feature vector with |y| = {} > eps = {eps}",
                y.abs()
            )));
        }
        Ok(Self {
            phi,
            y,
            eps,
            phi_norm_sq,
        })
    }

    pub fn contains(&self, h: &[f64]) -> bool {
        (dot(h, &self.phi) - self.y).abs() <= self.eps
    }

    // boundary points produced by `project` may land a few ulps outside
    fn inside(&self, r: f64) -> bool {
        r.abs() <= self.eps + 1e-13 * (1.0 + self.y.abs() + self.eps)
    }

    /// Metric projection onto the slab.
    pub fn project(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.phi.len() {
            return Err(Error::invalid("hyperslab dimension mismatch"));
        }
        let r = dot(h, &self.phi) - self.y;
        if self.inside(r) || self.phi_norm_sq == 0.0 {
            return Ok(h.to_vec());
        }
        let step = (r - r.signum() * self.eps) / self.phi_norm_sq;
        Ok(h.iter().zip(&self.phi).map(|(x, p)| x - step * p).collect())
    }

    /// `d(h, Q)`.
    pub fn distance(&self, h: &[f64]) -> f64 {
        let r = (dot(h, &self.phi) - self.y).abs();
        if self.inside(r) || self.phi_norm_sq == 0.0 {
            0.0
        } else {
            (r - self.eps) / self.phi_norm_sq.sqrt()
        }
    }
}

/// `Θ(h) = d(h, Q) · d(anchor, Q)` with the anchor fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductCost {
    slab: Hyperslab,
    anchor_distance: f64,
}

impl ProductCost {
    pub fn new(slab: Hyperslab, anchor: &[f64]) -> Result<Self> {
        if anchor.len() != slab.phi.len() {
            return Err(Error::invalid("anchor dimension mismatch"));
        }
        let anchor_distance = slab.distance(anchor);
        Ok(Self { slab, anchor_distance })
    }

    pub fn slab(&self) -> &Hyperslab {
        &self.slab
    }
}

impl CostOracle for ProductCost {
    fn evaluate(&self, h: &[f64]) -> (f64, Vec<f64>) {
        let d = self.slab.distance(h);
        if d == 0.0 || self.anchor_distance == 0.0 {
            return (0.0, vec![0.0; h.len()]);
        }
        let p = self.slab.project(h).expect("dimension checked");
        let scale = self.anchor_distance / d;
        let grad = h.iter().zip(&p).map(|(x, q)| scale * (x - q)).collect();
        (d * self.anchor_distance, grad)
    }
}

/// `(value, subgradient)` of the product cost anchored at `anchor`.
pub fn product_cost(slab: &Hyperslab, h: &[f64], anchor: &[f64]) -> Result<(f64, Vec<f64>)> {
    Ok(ProductCost::new(slab.clone(), anchor)?.evaluate(h))
}

/// `h − μ(h − P(h))`: the subgradient step of the product cost evaluated at
/// its own anchor.
pub fn relaxed_projection(slab: &Hyperslab, h: &[f64], mu: f64) -> Result<Vec<f64>> {
    let p = slab.project(h)?;
    Ok(h.iter().zip(&p).map(|(x, q)| x - mu * (x - q)).collect())
}

/// Elementwise clamp into `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxProjection {
    pub lo: f64,
    pub hi: f64,
}

impl ConstraintOperator for BoxProjection {
    fn apply(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = v.clamp(self.lo, self.hi);
        }
    }
}

pub fn box_operator(lo: f64, hi: f64) -> Result<BoxProjection> {
    if !(lo < hi) {
        return Err(Error::config(format!("box bounds must satisfy lo < hi, got [{lo}, {hi}]")));
    }
    Ok(BoxProjection { lo, hi })
}

/// Shape controls of the synthetic field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldParams {
    pub min_bumps: usize,
    pub max_bumps: usize,
    /// Bump standard deviations are drawn uniformly from this range (meters).
    pub min_width: f64,
    pub max_width: f64,
    /// Constant added before clipping.
    pub baseline: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self {
            min_bumps: 3,
            max_bumps: 8,
            min_width: 150.0,
            max_width: 350.0,
            baseline: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Bump {
    center: Point3,
    width: f64,
    amplitude: f64,
}

/// Smooth field on `[0, 1000]³` built from Gaussian bumps, clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticField {
    bumps: Vec<Bump>,
    baseline: f64,
}

impl SyntheticField {
    pub fn new<R: Rng + ?Sized>(params: &FieldParams, rng: &mut R) -> Result<Self> {
        if params.min_bumps == 0 || params.min_bumps > params.max_bumps {
            return Err(Error::config("bump count range must satisfy 1 ≤ min ≤ max"));
        }
        if !(params.min_width > 0.0 && params.min_width <= params.max_width) {
            return Err(Error::config("bump width range must satisfy 0 < min ≤ max"));
        }
        let count = rng.random_range(params.min_bumps..=params.max_bumps);
        let bumps = (0..count)
            .map(|_| Bump {
                center: [
                    rng.random_range(0.0..DOMAIN_SIDE_M),
                    rng.random_range(0.0..DOMAIN_SIDE_M),
                    rng.random_range(0.0..DOMAIN_SIDE_M),
                ],
                width: rng.random_range(params.min_width..=params.max_width),
                amplitude: rng.random_range(0.3..0.8),
            })
            .collect();
        Ok(Self {
            bumps,
            baseline: params.baseline,
        })
    }

    pub fn value(&self, x: &Point3) -> f64 {
        let v: f64 = self.baseline
            + self
                .bumps
                .iter()
                .map(|b| b.amplitude * gaussian_kernel(x, &b.center, b.width))
                .sum::<f64>();
        v.clamp(0.0, 1.0)
    }
}

/// One row of a measurement dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: Point3,
    pub value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    x: f64,
    y: f64,
    z: f64,
    value: f64,
}

/// Positions and field values agents sample from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    rows: Vec<Sample>,
}

impl Dataset {
    pub fn new(rows: Vec<Sample>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, k: usize) -> Sample {
        self.rows[k]
    }

    pub fn rows(&self) -> &[Sample] {
        &self.rows
    }

    /// `rows` uniform positions in the domain with exact field values.
    pub fn from_field<R: Rng + ?Sized>(field: &SyntheticField, rows: usize, rng: &mut R) -> Self {
        let rows = (0..rows)
            .map(|_| {
                let x = [
                    rng.random_range(0.0..DOMAIN_SIDE_M),
                    rng.random_range(0.0..DOMAIN_SIDE_M),
                    rng.random_range(0.0..DOMAIN_SIDE_M),
                ];
                Sample {
                    x,
                    value: field.value(&x),
                }
            })
            .collect();
        Self { rows }
    }

    /// Rescale positions linearly onto `[0, 1000]³` and values onto `[0, 1]`,
    /// per axis, from the observed extremes.
    pub fn normalized(&self) -> Self {
        let mut lo = [f64::INFINITY; 4];
        let mut hi = [f64::NEG_INFINITY; 4];
        for s in &self.rows {
            let v = [s.x[0], s.x[1], s.x[2], s.value];
            for k in 0..4 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let map = |v: f64, k: usize, top: f64| {
            let span = hi[k] - lo[k];
            if span > 0.0 {
                (v - lo[k]) / span * top
            } else {
                top / 2.0
            }
        };
        let rows = self
            .rows
            .iter()
            .map(|s| Sample {
                x: [
                    map(s.x[0], 0, DOMAIN_SIDE_M),
                    map(s.x[1], 1, DOMAIN_SIDE_M),
                    map(s.x[2], 2, DOMAIN_SIDE_M),
                ],
                value: map(s.value, 3, 1.0),
            })
            .collect();
        Self { rows }
    }

    /// Deterministic split: the first `holdout` rows of a seeded shuffle are
    /// returned second.
    pub fn split<R: Rng + ?Sized>(&self, holdout: usize, rng: &mut R) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), rng);
        let holdout = holdout.min(idx.len());
        let test = idx[..holdout].iter().map(|&k| self.rows[k]).collect();
        let train = idx[holdout..].iter().map(|&k| self.rows[k]).collect();
        (Dataset { rows: train }, Dataset { rows: test })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers()?.clone();
        let expected = ["x", "y", "z", "value"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::invalid(format!(
                "{}: expected header x,y,z,value, got {}",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for rec in reader.deserialize() {
            let r: CsvRow = rec?;
            rows.push(Sample {
                x: [r.x, r.y, r.z],
                value: r.value,
            });
        }
        if rows.is_empty() {
            return Err(Error::invalid(format!("{}: dataset has no rows", path.display())));
        }
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(file);
        for s in &self.rows {
            w.serialize(CsvRow {
                x: s.x[0],
                y: s.x[1],
                z: s.x[2],
                value: s.value,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
