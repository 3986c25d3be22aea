//! Bit LLRs from received vectors.
//!
//! Sign convention: `L_k = ln P(y | B_k = 1) - ln P(y | B_k = 0)`, so a
//! positive LLR favors bit 1. All demappers clip their output to
//! `±LLR_CLIP`.

use std::ops::{Deref, DerefMut};

use crate::constellation::{make_cartesian, Constellation, PamAlphabet};
use crate::error::{Error, Result};

pub const LLR_CLIP: f64 = 50.0;

/// One LLR per label bit, in labeling order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LlrVector(pub Vec<f64>);

impl Deref for LlrVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for LlrVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Soft demapping strategy.
pub trait Demapper: Send + Sync {
    fn name(&self) -> &'static str;

    /// Bits per symbol.
    fn bits(&self) -> usize;

    fn dims(&self) -> usize;

    /// Writes `bits()` clipped LLRs for the received vector `y` into `out`.
    fn demap_into(&self, y: &[f64], n0: f64, out: &mut [f64]);

    fn demap(&self, y: &[f64], n0: f64) -> Result<LlrVector> {
        if y.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: y.len(),
            });
        }
        if n0.is_nan() || n0 <= 0.0 {
            return Err(Error::invalid(format!("N0 must be positive, got {n0}")));
        }
        let mut out = vec![0.0; self.bits()];
        self.demap_into(y, n0, &mut out);
        Ok(LlrVector(out))
    }

    /// Demaps a whole block of received symbols, `dims()` values each.
    fn demap_block(&self, ys: &[f64], n0: f64, out: &mut [f64]) {
        for (y, o) in ys
            .chunks_exact(self.dims())
            .zip(out.chunks_exact_mut(self.bits()))
        {
            self.demap_into(y, n0, o);
        }
    }
}

fn clip(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-LLR_CLIP, LLR_CLIP)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact log-MAP demapper over all constellation points.
pub struct ExactDemapper {
    c: Constellation,
}

impl ExactDemapper {
    pub fn new(c: &Constellation) -> Self {
        ExactDemapper { c: c.clone() }
    }

    /// LLRs before clipping. A class whose likelihood underflows next to the
    /// dominant point yields an infinite value.
    pub fn llrs_unclipped(&self, y: &[f64], n0: f64, out: &mut [f64]) {
        let c = &self.c;
        let m = c.bits();
        let mut metrics = Vec::with_capacity(c.size());
        let mut max = f64::NEG_INFINITY;
        for p in c.points() {
            let v = -sq_dist(y, p) / n0;
            max = max.max(v);
            metrics.push(v);
        }
        let mut ones = vec![0.0; m];
        let mut zeros = vec![0.0; m];
        for (i, &v) in metrics.iter().enumerate() {
            let e = (v - max).exp();
            for k in 0..m {
                if c.bit(i, k) == 1 {
                    ones[k] += e;
                } else {
                    zeros[k] += e;
                }
            }
        }
        for k in 0..m {
            out[k] = ones[k].ln() - zeros[k].ln();
        }
    }
}

impl Demapper for ExactDemapper {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn bits(&self) -> usize {
        self.c.bits()
    }

    fn dims(&self) -> usize {
        self.c.dims()
    }

    fn demap_into(&self, y: &[f64], n0: f64, out: &mut [f64]) {
        self.llrs_unclipped(y, n0, out);
        out.iter_mut().for_each(|v| *v = clip(*v));
    }
}

/// Max-log approximation: each log-sum replaced by its largest term.
pub struct MaxLogDemapper {
    c: Constellation,
}

impl MaxLogDemapper {
    pub fn new(c: &Constellation) -> Self {
        MaxLogDemapper { c: c.clone() }
    }
}

impl Demapper for MaxLogDemapper {
    fn name(&self) -> &'static str {
        "maxlog"
    }

    fn bits(&self) -> usize {
        self.c.bits()
    }

    fn dims(&self) -> usize {
        self.c.dims()
    }

    fn demap_into(&self, y: &[f64], n0: f64, out: &mut [f64]) {
        let c = &self.c;
        let m = c.bits();
        let mut min1 = vec![f64::INFINITY; m];
        let mut min0 = vec![f64::INFINITY; m];
        for (i, p) in c.points().enumerate() {
            let d = sq_dist(y, p);
            for k in 0..m {
                let slot = if c.bit(i, k) == 1 {
                    &mut min1[k]
                } else {
                    &mut min0[k]
                };
                if d < *slot {
                    *slot = d;
                }
            }
        }
        for k in 0..m {
            out[k] = clip((min0[k] - min1[k]) / n0);
        }
    }
}

/// Per-dimension demapper for Gray-labeled Cartesian products: each real
/// coordinate is demapped against the scaled PAM alphabet on its own.
pub struct FactorizedDemapper {
    dims: usize,
    pam_bits: usize,
    /// PAM levels scaled to the product's unit-energy normalization.
    levels: Vec<f64>,
    labels: Vec<u32>,
}

impl FactorizedDemapper {
    /// Fails unless `c` is exactly `make_cartesian(pam, c.dims())`.
    pub fn new(pam: &PamAlphabet, c: &Constellation) -> Result<Self> {
        let reference = make_cartesian(pam, c.dims())?;
        let matches = reference.size() == c.size()
            && reference.labels() == c.labels()
            && reference
                .points()
                .flatten()
                .zip(c.points().flatten())
                .all(|(a, b)| (a - b).abs() < 1e-9);
        if !matches {
            return Err(Error::invalid(format!(
                "`{}` is not the Gray-labeled product of {}-PAM; factorized demapping does not apply",
                c.name(),
                pam.order()
            )));
        }
        let scale = (c.dims() as f64).sqrt().recip();
        Ok(FactorizedDemapper {
            dims: c.dims(),
            pam_bits: pam.bits(),
            levels: pam.levels().iter().map(|v| v * scale).collect(),
            labels: pam.labels().to_vec(),
        })
    }

    /// Infers the PAM order from `c` (bits must split evenly over dimensions).
    pub fn detect(c: &Constellation) -> Result<Self> {
        if !c.bits().is_multiple_of(c.dims()) {
            return Err(Error::invalid(format!(
                "`{}`: {} bits do not split over {} dimensions",
                c.name(),
                c.bits(),
                c.dims()
            )));
        }
        let pam = PamAlphabet::new(1 << (c.bits() / c.dims()))?;
        Self::new(&pam, c)
    }

    fn demap_scalar(&self, y: f64, n0: f64, out: &mut [f64]) {
        let b = self.pam_bits;
        if b == 1 {
            // levels = [+a, -a]: L = ((y-a)^2 - (y+a)^2)/N0 = -4 a y / N0
            out[0] = clip(-4.0 * self.levels[0] * y / n0);
            return;
        }
        let max = self
            .levels
            .iter()
            .map(|a| -(y - a) * (y - a) / n0)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut ones = [0.0f64; 16];
        let mut zeros = [0.0f64; 16];
        for (a, &l) in self.levels.iter().zip(&self.labels) {
            let e = (-(y - a) * (y - a) / n0 - max).exp();
            for k in 0..b {
                if (l >> (b - 1 - k)) & 1 == 1 {
                    ones[k] += e;
                } else {
                    zeros[k] += e;
                }
            }
        }
        for k in 0..b {
            out[k] = clip(ones[k].ln() - zeros[k].ln());
        }
    }
}

impl Demapper for FactorizedDemapper {
    fn name(&self) -> &'static str {
        "factorized"
    }

    fn bits(&self) -> usize {
        self.dims * self.pam_bits
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn demap_into(&self, y: &[f64], n0: f64, out: &mut [f64]) {
        for (d, &yd) in y.iter().enumerate() {
            self.demap_scalar(yd, n0, &mut out[d * self.pam_bits..(d + 1) * self.pam_bits]);
        }
    }
}

type DemapperCtor = fn(&Constellation) -> Result<Box<dyn Demapper>>;

/// Demappers by name.
pub struct DemapperRegistry {
    entries: Vec<(&'static str, DemapperCtor)>,
}

impl Default for DemapperRegistry {
    fn default() -> Self {
        let mut r = DemapperRegistry {
            entries: Vec::new(),
        };
        r.register("exact", |c| Ok(Box::new(ExactDemapper::new(c))));
        r.register("maxlog", |c| Ok(Box::new(MaxLogDemapper::new(c))));
        r.register("factorized", |c| {
            Ok(Box::new(FactorizedDemapper::detect(c)?))
        });
        r
    }
}

impl DemapperRegistry {
    pub fn register(&mut self, name: &'static str, ctor: DemapperCtor) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, ctor));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(&self, name: &str, c: &Constellation) -> Result<Box<dyn Demapper>> {
        let ctor = self
            .entries
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, f)| f)
            .ok_or_else(|| Error::UnknownName {
                kind: "demapper",
                name: name.to_string(),
                available: self.names().join(", "),
            })?;
        ctor(c)
    }
}
