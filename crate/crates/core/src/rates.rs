//! Achievable rates of labeled constellations over the vector AWGN channel:
//! mutual information (MI), per-bit MI and the generalized mutual
//! information (GMI) of a bit-wise receiver, plus the Shannon reference.
//!
//! For a transmitted point `x_i` and noise `z`, the log-likelihood of point
//! `x_j` relative to `x_i` is
//! `e_ij = -(||x_i - x_j + z||^2 - ||z||^2) / N0`. Then
//!
//! * `I(X;Y)   = m - (1/M) sum_i E_Z[ log2 sum_j exp(e_ij) ]`
//! * `I(B_k;Y) = 1 - (1/M) sum_i E_Z[ log2( sum_j exp(e_ij) / sum_{j ~k i} exp(e_ij) ) ]`
//!
//! where `j ~k i` means the labels agree in bit `k`, and `GMI = sum_k I(B_k;Y)`.
//! Writing `z = sqrt(N0) t` gives `e_ij = ||t||^2 - ||d_ij/sqrt(N0) + t||^2`, so
//! every exponent is bounded above by `||t||^2` and the `j = i` term is always
//! `exp(0)`. Inner sums are evaluated as log-sum-exp with the maximum removed.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{eb_n0_db, es_n0_to_n0, substream, ChannelSpec};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::quadrature::QuadratureGrid;

pub const DEFAULT_QUADRATURE_ORDER: usize = 10;

/// Pairs whose exponent is provably below this are dropped from inner sums.
/// Each dropped term is `< exp(-60)` next to the `j = i` term `exp(0)`.
const PRUNE_EXPONENT: f64 = -60.0;

/// MI, per-bit MI and GMI at one channel, with standard errors for Monte
/// Carlo estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub mi: f64,
    pub bit_mi: Vec<f64>,
    pub gmi: f64,
    pub mi_stderr: Option<f64>,
    pub gmi_stderr: Option<f64>,
}

/// Difference vectors `x_i - x_j` per transmitted point, nearest first.
struct PairTable {
    dims: usize,
    bits: usize,
    /// For each `i`: `(j, ||d||^2, ||d||)` sorted by distance.
    order: Vec<Vec<(usize, f64, f64)>>,
    /// `d_ij` flattened in the same order as `order[i]`.
    diffs: Vec<Vec<f64>>,
    /// Per `i`, neighbor slot and bit `k`: 1.0 when `j` agrees with `i` in
    /// bit `k`, else 0.0.
    agree: Vec<Vec<f64>>,
}

impl PairTable {
    fn new(c: &Constellation) -> Self {
        let m = c.size();
        let dims = c.dims();
        let bits = c.bits();
        let mut order = Vec::with_capacity(m);
        let mut diffs = Vec::with_capacity(m);
        let mut agree = Vec::with_capacity(m);
        for i in 0..m {
            let mut row: Vec<(usize, f64, f64)> = (0..m)
                .map(|j| {
                    let dd = c.sq_dist(i, j);
                    (j, dd, dd.sqrt())
                })
                .collect();
            row.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let mut d = Vec::with_capacity(m * dims);
            let mut a = Vec::with_capacity(m);
            for &(j, _, _) in &row {
                d.extend(c.point(i).iter().zip(c.point(j)).map(|(p, q)| p - q));
                let x = c.label(i) ^ c.label(j);
                a.extend((0..bits).map(|k| f64::from(((x >> (bits - 1 - k)) & 1) ^ 1)));
            }
            order.push(row);
            diffs.push(d);
            agree.push(a);
        }
        PairTable {
            dims,
            bits,
            order,
            diffs,
            agree,
        }
    }

    /// Accumulates, for transmitted point `i` and normalized noise `t`
    /// (`z = sqrt(N0) t`), the sample `log2 sum_j exp(e_ij)` and for each bit
    /// `k` the sample `log2( sum_j / sum_{j ~k i} )`.
    ///
    /// `scratch` holds `e_ij` values; on return `same[k]` holds the bit-`k`
    /// sample and the MI sample is returned.
    #[inline]
    fn sample(
        &self,
        i: usize,
        t: &[f64],
        inv_sqrt_n0: f64,
        scratch: &mut Vec<(f64, usize)>,
        same: &mut [f64],
    ) -> f64 {
        let t_norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        let row = &self.order[i];
        let diffs = &self.diffs[i];
        let agree = &self.agree[i];
        scratch.clear();
        let mut max = f64::NEG_INFINITY;
        for (slot, &(_, dd, dn)) in row.iter().enumerate() {
            let r = dn * inv_sqrt_n0;
            if r > t_norm && -r * r + 2.0 * r * t_norm < PRUNE_EXPONENT {
                // Rows are sorted by distance and the bound decreases past
                // `t_norm`, so every later slot is pruned too.
                break;
            }
            let d = &diffs[slot * self.dims..(slot + 1) * self.dims];
            let dot: f64 = d.iter().zip(t).map(|(a, b)| a * b).sum();
            let e = -dd * inv_sqrt_n0 * inv_sqrt_n0 - 2.0 * dot * inv_sqrt_n0;
            max = max.max(e);
            scratch.push((e, slot));
        }
        let mut all = 0.0;
        same.iter_mut().for_each(|s| *s = 0.0);
        let bits = self.bits;
        for &(e, slot) in scratch.iter() {
            let v = (e - max).exp();
            all += v;
            let a = &agree[slot * bits..(slot + 1) * bits];
            for (s, &f) in same.iter_mut().zip(a) {
                *s += v * f;
            }
        }
        let ln_all = all.ln();
        for s in same.iter_mut() {
            *s = (ln_all - s.ln()) * std::f64::consts::LOG2_E;
        }
        (max + ln_all) * std::f64::consts::LOG2_E
    }
}

const NODE_CHUNK: usize = 64;
const LANES: usize = 16;

/// Largest spread of `u_j` for which the factorized kernel is used.
const KERNEL_SPREAD: f64 = 300.0;

/// `G_ij` with `||x_i - x_j||^2 / N0` above this is stored as zero. A dropped
/// term is below `exp(KERNEL_SPREAD - GRAM_CUTOFF)` relative to the `j = i`
/// term, and every product `G_ij exp(u_j - max)` stays a normal double.
const GRAM_CUTOFF: f64 = 400.0;

/// Factorized form of the inner sums for quadrature, where one noise node
/// is shared by every transmitted point. With `u_j = 2 x_j . t / sqrt(N0)`,
/// `exp(e_ij) = G_ij exp(u_j - u_i)` and `G_ij = exp(-||x_i - x_j||^2 / N0)`,
/// so all `M` inner sums at a node are one matrix-vector product.
struct Kernel {
    size: usize,
    dims: usize,
    bits: usize,
    points: Vec<f64>,
    gram: Vec<f64>,
    /// Column `2k + b_k(j)` of the bit-split vector for each `j`.
    bit_col: Vec<usize>,
}

fn row_stride(bits: usize) -> usize {
    if 2 * bits <= LANES {
        LANES
    } else {
        2 * bits
    }
}

struct KernelScratch {
    u: Vec<f64>,
    /// Row `j`: `exp(u_j - max)` in its `2m` bit columns, zero elsewhere.
    f: Vec<f64>,
    row: Vec<f64>,
}

impl KernelScratch {
    fn new(size: usize, bits: usize) -> Self {
        KernelScratch {
            u: vec![0.0; size],
            f: vec![0.0; size * row_stride(bits)],
            row: vec![0.0; 2 * bits],
        }
    }
}

impl Kernel {
    fn new(c: &Constellation, n0: f64) -> Self {
        let size = c.size();
        let bits = c.bits();
        let mut gram = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                let a = c.sq_dist(i, j) / n0;
                gram[i * size + j] = if a > GRAM_CUTOFF { 0.0 } else { (-a).exp() };
            }
        }
        let bit_col = (0..size)
            .flat_map(|j| (0..bits).map(move |k| (j, k)))
            .map(|(j, k)| 2 * k + c.bit(j, k) as usize)
            .collect();
        Kernel {
            size,
            dims: c.dims(),
            bits,
            points: c.points().flatten().copied().collect(),
            gram,
            bit_col,
        }
    }

    /// Adds `w` times the node's MI and per-bit samples, summed over all
    /// transmitted points, to `acc`. Returns `false` (leaving `acc` alone)
    /// when the node's dynamic range is too wide for this form.
    fn accumulate(
        &self,
        t: &[f64],
        inv_sqrt_n0: f64,
        w: f64,
        ws: &mut KernelScratch,
        acc: &mut [f64],
    ) -> bool {
        let (size, bits) = (self.size, self.bits);
        let mut max = f64::NEG_INFINITY;
        let mut min = f64::INFINITY;
        for (u, x) in ws.u.iter_mut().zip(self.points.chunks_exact(self.dims)) {
            *u = 2.0 * inv_sqrt_n0 * x.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
            max = max.max(*u);
            min = min.min(*u);
        }
        if max - min > KERNEL_SPREAD {
            return false;
        }
        let cols = 2 * bits;
        let stride = row_stride(bits);
        ws.f.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..size {
            let e = (ws.u[j] - max).exp();
            for &col in &self.bit_col[j * bits..(j + 1) * bits] {
                ws.f[j * stride + col] = e;
            }
        }
        let log2e = std::f64::consts::LOG2_E;
        for i in 0..size {
            let g = &self.gram[i * size..(i + 1) * size];
            if stride == LANES {
                // fixed width so the inner loop vectorizes
                let mut row = [0.0f64; LANES];
                for (&gij, f) in g.iter().zip(ws.f.chunks_exact(LANES)) {
                    let f: &[f64; LANES] = f.try_into().expect("lane width");
                    for (r, fv) in row.iter_mut().zip(f) {
                        *r += gij * fv;
                    }
                }
                ws.row.copy_from_slice(&row[..cols]);
            } else {
                ws.row.iter_mut().for_each(|v| *v = 0.0);
                for (&gij, f) in g.iter().zip(ws.f.chunks_exact(stride)) {
                    for (r, &fv) in ws.row.iter_mut().zip(f) {
                        *r += gij * fv;
                    }
                }
            }
            let all = ws.row[0] + ws.row[1];
            let ln_all = all.ln();
            // sum_j exp(e_ij) = all / exp(u_i - max)
            acc[0] += w * (ln_all - (ws.u[i] - max)) * log2e;
            for (k, a) in acc[1..].iter_mut().enumerate() {
                let same = ws.row[self.bit_col[i * bits + k]];
                *a += w * (ln_all - same.ln()) * log2e;
            }
        }
        true
    }
}

fn check_dims(c: &Constellation, ch: &ChannelSpec) -> Result<()> {
    if c.dims() != ch.dims() {
        return Err(Error::DimensionMismatch {
            expected: c.dims(),
            got: ch.dims(),
        });
    }
    Ok(())
}

/// MI, per-bit MI and GMI by tensor Gauss–Hermite quadrature.
///
/// Results are clamped to `[0, m]` (MI) and `[0, 1]` (each bit).
pub fn rates_quadrature(
    c: &Constellation,
    ch: &ChannelSpec,
    grid: &QuadratureGrid,
) -> Result<RateEstimate> {
    check_dims(c, ch)?;
    if grid.dims() != c.dims() {
        return Err(Error::DimensionMismatch {
            expected: c.dims(),
            got: grid.dims(),
        });
    }
    let table = PairTable::new(c);
    let kernel = Kernel::new(c, ch.n0());
    let m = c.bits();
    let inv_sqrt_n0 = ch.n0().sqrt().recip();
    let weights = grid.tensor_weights();
    // Fixed-size node chunks reduced in order keep the sum independent of
    // the thread count.
    let chunks: Vec<Vec<f64>> = (0..weights.len().div_ceil(NODE_CHUNK))
        .into_par_iter()
        .map(|ch_idx| {
            let mut acc = vec![0.0; m + 1];
            let mut ws = KernelScratch::new(c.size(), m);
            let mut scratch = Vec::with_capacity(c.size());
            let mut same = vec![0.0; m];
            let lo = ch_idx * NODE_CHUNK;
            let hi = (lo + NODE_CHUNK).min(weights.len());
            for (n, &w) in weights.iter().enumerate().take(hi).skip(lo) {
                let t = grid.tensor_node(n);
                if kernel.accumulate(t, inv_sqrt_n0, w, &mut ws, &mut acc) {
                    continue;
                }
                for i in 0..c.size() {
                    let la = table.sample(i, t, inv_sqrt_n0, &mut scratch, &mut same);
                    acc[0] += w * la;
                    for (a, b) in acc[1..].iter_mut().zip(&same) {
                        *a += w * b;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; m + 1];
    for row in &chunks {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    let inv_m = 1.0 / c.size() as f64;
    let mi = (m as f64 - total[0] * inv_m).clamp(0.0, m as f64);
    let bit_mi: Vec<f64> = total[1..]
        .iter()
        .map(|t| (1.0 - t * inv_m).clamp(0.0, 1.0))
        .collect();
    let gmi = bit_mi.iter().sum();
    Ok(RateEstimate {
        mi,
        bit_mi,
        gmi,
        mi_stderr: None,
        gmi_stderr: None,
    })
}

/// `I(X;Y)` by quadrature.
pub fn mi(c: &Constellation, ch: &ChannelSpec, grid: &QuadratureGrid) -> Result<f64> {
    Ok(rates_quadrature(c, ch, grid)?.mi)
}

/// `I(B_k;Y)` by quadrature, `k` in `1..=m`.
pub fn bit_mi(c: &Constellation, k: usize, ch: &ChannelSpec, grid: &QuadratureGrid) -> Result<f64> {
    if k == 0 || k > c.bits() {
        return Err(Error::invalid(format!(
            "bit index {k} out of range 1..={}",
            c.bits()
        )));
    }
    Ok(rates_quadrature(c, ch, grid)?.bit_mi[k - 1])
}

/// `GMI = sum_k I(B_k;Y)` by quadrature.
pub fn gmi(c: &Constellation, ch: &ChannelSpec, grid: &QuadratureGrid) -> Result<f64> {
    Ok(rates_quadrature(c, ch, grid)?.gmi)
}

const MC_BATCH: usize = 4096;

/// Monte Carlo estimate of MI, per-bit MI and GMI with standard errors.
///
/// Sample `s` transmits point `s mod M` and draws its noise from substream
/// `s / 4096` of `seed`, so the estimate is identical for any thread count.
pub fn rates_montecarlo(
    c: &Constellation,
    ch: &ChannelSpec,
    samples: usize,
    seed: u64,
) -> Result<RateEstimate> {
    check_dims(c, ch)?;
    if samples < 1000 {
        return Err(Error::invalid(format!(
            "Monte Carlo needs at least 1000 samples, got {samples}"
        )));
    }
    let table = PairTable::new(c);
    let m = c.bits();
    let dims = c.dims();
    let inv_sqrt_n0 = ch.n0().sqrt().recip();
    // z = sqrt(N0/2) g with g standard normal, so t = z / sqrt(N0) = g / sqrt(2)
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let batches = samples.div_ceil(MC_BATCH);
    // Per batch: sums and sums of squares of per-sample MI and GMI, plus per-bit sums.
    let partial: Vec<Vec<f64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let start = b * MC_BATCH;
            let end = (start + MC_BATCH).min(samples);
            let mut acc = vec![0.0; 4 + m];
            let mut t = vec![0.0; dims];
            let mut scratch = Vec::with_capacity(c.size());
            let mut same = vec![0.0; m];
            for s in start..end {
                let i = s % c.size();
                for v in t.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *v = scale * g;
                }
                let la = table.sample(i, &t, inv_sqrt_n0, &mut scratch, &mut same);
                let mi_s = m as f64 - la;
                let mut gmi_s = 0.0;
                for (k, bt) in same.iter().enumerate() {
                    acc[4 + k] += 1.0 - bt;
                    gmi_s += 1.0 - bt;
                }
                acc[0] += mi_s;
                acc[1] += mi_s * mi_s;
                acc[2] += gmi_s;
                acc[3] += gmi_s * gmi_s;
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; 4 + m];
    for p in &partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let n = samples as f64;
    let stderr = |sum: f64, sq: f64| {
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    };
    Ok(RateEstimate {
        mi: total[0] / n,
        bit_mi: total[4..].iter().map(|v| v / n).collect(),
        gmi: total[2] / n,
        mi_stderr: Some(stderr(total[0], total[1])),
        gmi_stderr: Some(stderr(total[2], total[3])),
    })
}

/// Monte Carlo `(estimate, standard error)` of `I(X;Y)`.
pub fn mi_montecarlo(
    c: &Constellation,
    ch: &ChannelSpec,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let r = rates_montecarlo(c, ch, samples, seed)?;
    Ok((r.mi, r.mi_stderr.unwrap_or(0.0)))
}

/// Monte Carlo `(estimate, standard error)` of the GMI.
pub fn gmi_montecarlo(
    c: &Constellation,
    ch: &ChannelSpec,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let r = rates_montecarlo(c, ch, samples, seed)?;
    Ok((r.gmi, r.gmi_stderr.unwrap_or(0.0)))
}

/// Capacity in bit/symbol of `N` real AWGN dimensions with total power `Es`
/// and noise `N0/2` per dimension: `(N/2) log2(1 + (2/N) Es/N0)`.
pub fn shannon_capacity(es_n0_db: f64, dims: usize) -> Result<f64> {
    if dims == 0 || !dims.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "Shannon reference needs an even number of dimensions, got {dims}"
        )));
    }
    let snr = 10f64.powf(es_n0_db / 10.0);
    let half = dims as f64 / 2.0;
    Ok(half * (1.0 + snr / half).log2())
}

/// How MI and GMI are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Quadrature { order: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

/// A strategy for evaluating the rates at one channel.
pub trait RateEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn precision(&self) -> Precision;
    fn estimate(&self, c: &Constellation, ch: &ChannelSpec) -> Result<RateEstimate>;
}

/// Tensor Gauss–Hermite quadrature of the given order per dimension.
pub struct QuadratureEstimator {
    order: usize,
}

impl QuadratureEstimator {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be positive"));
        }
        Ok(QuadratureEstimator { order })
    }
}

impl RateEstimator for QuadratureEstimator {
    fn name(&self) -> &'static str {
        "quadrature"
    }

    fn precision(&self) -> Precision {
        Precision::Quadrature { order: self.order }
    }

    fn estimate(&self, c: &Constellation, ch: &ChannelSpec) -> Result<RateEstimate> {
        let grid = QuadratureGrid::new(self.order, c.dims())?;
        rates_quadrature(c, ch, &grid)
    }
}

/// Monte Carlo over sampled noise; every SNR reuses the same noise draws.
pub struct MonteCarloEstimator {
    samples: usize,
    seed: u64,
}

impl MonteCarloEstimator {
    pub fn new(samples: usize, seed: u64) -> Result<Self> {
        if samples < 1000 {
            return Err(Error::invalid(format!(
                "Monte Carlo needs at least 1000 samples, got {samples}"
            )));
        }
        Ok(MonteCarloEstimator { samples, seed })
    }
}

impl RateEstimator for MonteCarloEstimator {
    fn name(&self) -> &'static str {
        "montecarlo"
    }

    fn precision(&self) -> Precision {
        Precision::MonteCarlo {
            samples: self.samples,
            seed: self.seed,
        }
    }

    fn estimate(&self, c: &Constellation, ch: &ChannelSpec) -> Result<RateEstimate> {
        rates_montecarlo(c, ch, self.samples, self.seed)
    }
}

/// Parameters any registered estimator may draw from.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorParams {
    pub order: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            order: DEFAULT_QUADRATURE_ORDER,
            samples: 1_000_000,
            seed: 0,
        }
    }
}

type EstimatorCtor = fn(&EstimatorParams) -> Result<Box<dyn RateEstimator>>;

/// Rate estimators by name.
pub struct EstimatorRegistry {
    entries: Vec<(&'static str, EstimatorCtor)>,
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        let mut r = EstimatorRegistry {
            entries: Vec::new(),
        };
        r.register("quadrature", |p| {
            Ok(Box::new(QuadratureEstimator::new(p.order)?))
        });
        r.register("montecarlo", |p| {
            Ok(Box::new(MonteCarloEstimator::new(p.samples, p.seed)?))
        });
        r
    }
}

impl EstimatorRegistry {
    pub fn register(&mut self, name: &'static str, ctor: EstimatorCtor) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, ctor));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(&self, name: &str, params: &EstimatorParams) -> Result<Box<dyn RateEstimator>> {
        let ctor = self
            .entries
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, c)| c)
            .ok_or_else(|| Error::UnknownName {
                kind: "rate method",
                name: name.to_string(),
                available: self.names().join(", "),
            })?;
        ctor(params)
    }
}

/// One SNR point of a rate curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub es_n0_db: f64,
    /// `Eb/N0` at transmission rate `R = mi`; `+inf` when `mi = 0`.
    pub eb_n0_db_mi: f64,
    /// `Eb/N0` at transmission rate `R = gmi`; `+inf` when `gmi = 0`.
    pub eb_n0_db_gmi: f64,
    pub mi: f64,
    pub gmi: f64,
    pub bit_mi: Vec<f64>,
    pub mi_stderr: Option<f64>,
    pub gmi_stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub constellation: String,
    pub bits: usize,
    pub method: String,
    pub precision: Precision,
    pub points: Vec<RateRecord>,
}

fn eb_or_inf(es: f64, rate: f64) -> f64 {
    eb_n0_db(es, rate).unwrap_or(f64::INFINITY)
}

/// Evenly spaced SNR grid from `start` to `stop` inclusive.
pub fn snr_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(Error::invalid(format!(
            "bad SNR grid {start}:{step}:{stop}"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Default sweep: `Es/N0` from -10 to 16 dB in 0.25 dB steps.
pub fn default_snr_grid() -> Vec<f64> {
    snr_grid(-10.0, 16.0, 0.25).expect("valid grid")
}

/// Evaluates `estimator` at every `Es/N0` of `grid_db`.
pub fn rate_curve(
    c: &Constellation,
    grid_db: &[f64],
    estimator: &dyn RateEstimator,
) -> Result<RateCurve> {
    if grid_db.is_empty() {
        return Err(Error::invalid("empty SNR grid"));
    }
    let points = grid_db
        .iter()
        .map(|&es| {
            let ch = ChannelSpec::new(es_n0_to_n0(es), c.dims())?;
            let r = estimator.estimate(c, &ch)?;
            Ok(RateRecord {
                es_n0_db: es,
                eb_n0_db_mi: eb_or_inf(es, r.mi),
                eb_n0_db_gmi: eb_or_inf(es, r.gmi),
                mi: r.mi,
                gmi: r.gmi,
                bit_mi: r.bit_mi,
                mi_stderr: r.mi_stderr,
                gmi_stderr: r.gmi_stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateCurve {
        constellation: c.name().to_string(),
        bits: c.bits(),
        method: estimator.name().to_string(),
        precision: estimator.precision(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Mi,
    Gmi,
}

impl FromStr for RateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mi" => Ok(RateKind::Mi),
            "gmi" => Ok(RateKind::Gmi),
            _ => Err(Error::invalid(format!("expected `mi` or `gmi`, got `{s}`"))),
        }
    }
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateKind::Mi => "mi",
            RateKind::Gmi => "gmi",
        })
    }
}

impl RateRecord {
    pub fn rate(&self, kind: RateKind) -> f64 {
        match kind {
            RateKind::Mi => self.mi,
            RateKind::Gmi => self.gmi,
        }
    }
}

const CROSSING_TOLERANCE: f64 = 1e-12;

/// Rate at which two curves on the same SNR grid first cross.
///
/// A crossing at some `Es/N0` is the same point in the `(Eb/N0, R)` plane
/// for both curves, so it is located by linear interpolation of the sign
/// change of `rate_a - rate_b` along the shared grid. Returns `None` when
/// the difference never changes sign.
pub fn find_crossing(a: &RateCurve, b: &RateCurve, kind: RateKind) -> Result<Option<f64>> {
    Ok(find_crossings(a, b, kind)?.first().copied())
}

/// Every rate at which the two curves cross, in increasing SNR order.
pub fn find_crossings(a: &RateCurve, b: &RateCurve, kind: RateKind) -> Result<Vec<f64>> {
    if a.points.len() != b.points.len()
        || a.points
            .iter()
            .zip(&b.points)
            .any(|(p, q)| (p.es_n0_db - q.es_n0_db).abs() > 1e-9)
    {
        return Err(Error::invalid("curves do not share an SNR grid"));
    }
    let mut out = Vec::new();
    let mut last: Option<(usize, f64)> = None;
    for (idx, (p, q)) in a.points.iter().zip(&b.points).enumerate() {
        let d = p.rate(kind) - q.rate(kind);
        if d.abs() <= CROSSING_TOLERANCE {
            continue;
        }
        if let Some((li, ld)) = last {
            if ld.signum() != d.signum() {
                let frac = ld / (ld - d);
                let r0 = a.points[li].rate(kind);
                let r1 = p.rate(kind);
                out.push(r0 + frac * (r1 - r0));
            }
        }
        last = Some((idx, d));
    }
    Ok(out)
}

/// `Es/N0` at which the curve first reaches `rate`, interpolated linearly
/// between grid points.
pub fn es_n0_at_rate(curve: &RateCurve, kind: RateKind, rate: f64) -> Option<f64> {
    let pts = &curve.points;
    if pts.first()?.rate(kind) >= rate {
        return Some(pts[0].es_n0_db);
    }
    pts.windows(2).find_map(|w| {
        let (r0, r1) = (w[0].rate(kind), w[1].rate(kind));
        (r0 < rate && r1 >= rate).then(|| {
            let f = (rate - r0) / (r1 - r0);
            w[0].es_n0_db + f * (w[1].es_n0_db - w[0].es_n0_db)
        })
    })
}

/// `Eb/N0` at which the curve first reaches `rate`.
pub fn eb_n0_at_rate(curve: &RateCurve, kind: RateKind, rate: f64) -> Option<f64> {
    es_n0_at_rate(curve, kind, rate).and_then(|es| eb_n0_db(es, rate).ok())
}

impl Precision {
    fn describe(&self, rec: &RateRecord) -> String {
        match *self {
            Precision::Quadrature { order } => format!("order={order}"),
            Precision::MonteCarlo { samples, seed } => format!(
                "samples={samples};seed={seed};se_mi={:e};se_gmi={:e}",
                rec.mi_stderr.unwrap_or(f64::NAN),
                rec.gmi_stderr.unwrap_or(f64::NAN)
            ),
        }
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

impl RateCurve {
    pub fn csv_header(bits: usize) -> Vec<String> {
        let mut h: Vec<String> = ["es_n0_db", "eb_n0_db_mi", "eb_n0_db_gmi", "mi", "gmi"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((1..=bits).map(|k| format!("bit_mi_{k}")));
        h.push("method".into());
        h.push("precision".into());
        h
    }

    /// Writes the curve as CSV (`es_n0_db, eb_n0_db_mi, eb_n0_db_gmi, mi,
    /// gmi, bit_mi_1..bit_mi_m, method, precision`).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::csv_header(self.bits))?;
        for p in &self.points {
            let mut rec = vec![
                fmt_f(p.es_n0_db),
                fmt_f(p.eb_n0_db_mi),
                fmt_f(p.eb_n0_db_gmi),
                fmt_f(p.mi),
                fmt_f(p.gmi),
            ];
            rec.extend(p.bit_mi.iter().map(|v| fmt_f(*v)));
            rec.push(self.method.clone());
            rec.push(self.precision.describe(p));
            wr.write_record(rec)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Parses CSV written by [`RateCurve::write_csv`].
    pub fn read_csv<R: Read>(r: R, constellation: &str) -> Result<RateCurve> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let bits = header.iter().filter(|h| h.starts_with("bit_mi_")).count();
        if header.iter().collect::<Vec<_>>() != Self::csv_header(bits) {
            return Err(Error::invalid("unexpected rate-curve CSV header"));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{s}` in rate-curve CSV")))
        };
        let mut points = Vec::new();
        let mut method = String::new();
        let mut precision = None;
        for rec in rd.records() {
            let rec = rec?;
            let f = |i: usize| rec.get(i).unwrap_or_default();
            method = f(5 + bits).to_string();
            let prec_text = f(6 + bits);
            let (prec, se_mi, se_gmi) = parse_precision(prec_text)?;
            precision = Some(prec);
            points.push(RateRecord {
                es_n0_db: num(f(0))?,
                eb_n0_db_mi: num(f(1))?,
                eb_n0_db_gmi: num(f(2))?,
                mi: num(f(3))?,
                gmi: num(f(4))?,
                bit_mi: (0..bits).map(|k| num(f(5 + k))).collect::<Result<_>>()?,
                mi_stderr: se_mi,
                gmi_stderr: se_gmi,
            });
        }
        Ok(RateCurve {
            constellation: constellation.to_string(),
            bits,
            method,
            precision: precision.ok_or_else(|| Error::invalid("rate-curve CSV has no rows"))?,
            points,
        })
    }
}

fn parse_precision(text: &str) -> Result<(Precision, Option<f64>, Option<f64>)> {
    let bad = || Error::invalid(format!("bad precision field `{text}`"));
    let mut kv = std::collections::HashMap::new();
    for part in text.split(';') {
        let (k, v) = part.split_once('=').ok_or_else(bad)?;
        kv.insert(k.trim(), v.trim());
    }
    if let Some(order) = kv.get("order") {
        return Ok((
            Precision::Quadrature {
                order: order.parse().map_err(|_| bad())?,
            },
            None,
            None,
        ));
    }
    let samples = kv
        .get("samples")
        .ok_or_else(bad)?
        .parse()
        .map_err(|_| bad())?;
    let seed = kv.get("seed").ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let se = |k: &str| -> Result<Option<f64>> {
        kv.get(k)
            .map(|v| v.parse::<f64>().map_err(|_| bad()))
            .transpose()
    };
    Ok((
        Precision::MonteCarlo { samples, seed },
        se("se_mi")?,
        se("se_gmi")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{make_cartesian, PamAlphabet};
    use approx::assert_abs_diff_eq;

    fn pam2() -> Constellation {
        make_cartesian(&PamAlphabet::new(2).unwrap(), 1).unwrap()
    }

    fn pm_qpsk() -> Constellation {
        make_cartesian(&PamAlphabet::new(2).unwrap(), 4).unwrap()
    }

    /// Independent 1-D oracle: I(X;Y) of equiprobable 2-PAM {+a,-a} with noise
    /// variance s2, by composite Simpson integration of the output density.
    fn bpsk_mi_oracle(a: f64, s2: f64) -> f64 {
        let s = s2.sqrt();
        let pdf = |y: f64, x: f64| {
            (-(y - x) * (y - x) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
        };
        let lo = -a - 12.0 * s;
        let hi = a + 12.0 * s;
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let f = |y: f64| {
            let p1 = pdf(y, a);
            let p2 = pdf(y, -a);
            let py = 0.5 * (p1 + p2);
            let mut v = 0.0;
            if p1 > 0.0 {
                v += 0.5 * p1 * (p1 / py).log2();
            }
            if p2 > 0.0 {
                v += 0.5 * p2 * (p2 / py).log2();
            }
            v
        };
        let mut sum = f(lo) + f(hi);
        for k in 1..n {
            let y = lo + k as f64 * h;
            sum += if k % 2 == 1 { 4.0 } else { 2.0 } * f(y);
        }
        sum * h / 3.0
    }

    /// Same-order 1-D Gauss–Hermite evaluation of 2-PAM {+a,-a}, written out
    /// in closed form: `1 - E[log2(1 + exp(-(4a^2 + 4a z)/N0))]`.
    fn bpsk_mi_gh(a: f64, n0: f64, order: usize) -> f64 {
        let (t, w) = crate::quadrature::gauss_hermite(order);
        let norm = std::f64::consts::PI.sqrt();
        1.0 - t
            .iter()
            .zip(&w)
            .map(|(t, w)| {
                let e = -(4.0 * a * a + 4.0 * a * n0.sqrt() * t) / n0;
                let softplus = if e > 0.0 {
                    e + (-e).exp().ln_1p()
                } else {
                    e.exp().ln_1p()
                };
                w / norm * softplus / std::f64::consts::LN_2
            })
            .sum::<f64>()
    }

    #[test]
    fn pm_qpsk_factorizes_into_2pam() {
        let grid4 = QuadratureGrid::new(10, 4).unwrap();
        let c = pm_qpsk();
        for (es, tol) in [
            (-10.0, 1e-6),
            (-5.0, 1e-6),
            (0.0, 1e-6),
            (5.0, 1e-6),
            (10.0, 1e-5),
        ] {
            let n0 = es_n0_to_n0(es);
            let r = rates_quadrature(&c, &ChannelSpec::new(n0, 4).unwrap(), &grid4).unwrap();
            // Each dimension carries amplitude 1/2 and sees noise N0/2.
            let oracle = bpsk_mi_gh(0.5, n0, 200);
            assert_abs_diff_eq!(r.mi, 4.0 * oracle, epsilon = tol);
            for b in &r.bit_mi {
                assert_abs_diff_eq!(*b, oracle, epsilon = tol);
            }
        }
    }

    #[test]
    fn pam2_quadrature_matches_oracle() {
        let grid = QuadratureGrid::new(80, 1).unwrap();
        for es in [-10.0, -3.0, 0.0, 3.0, 8.0] {
            let n0 = es_n0_to_n0(es);
            let r = rates_quadrature(&pam2(), &ChannelSpec::new(n0, 1).unwrap(), &grid).unwrap();
            assert_abs_diff_eq!(r.mi, bpsk_mi_oracle(1.0, n0 / 2.0), epsilon = 5e-7);
        }
    }

    #[test]
    fn kernel_matches_pairwise_sums() {
        // irregular 8-point set in 3 dimensions with a scrambled labeling
        let pts = vec![
            vec![0.3, -1.1, 0.2],
            vec![1.4, 0.1, -0.5],
            vec![-0.7, 0.9, 1.0],
            vec![0.0, 0.2, -1.3],
            vec![-1.2, -0.4, 0.1],
            vec![0.8, 1.2, 0.6],
            vec![-0.2, -0.6, -0.4],
            vec![1.0, -0.8, 1.1],
        ];
        let c = Constellation::new("irr", 3, pts, vec![5, 2, 7, 0, 3, 6, 1, 4])
            .unwrap()
            .normalize()
            .unwrap();
        let grid = QuadratureGrid::new(8, 3).unwrap();
        let table = PairTable::new(&c);
        for es in [-8.0, 3.0, 15.0, 30.0] {
            let ch = ChannelSpec::from_es_n0_db(es, 3).unwrap();
            let inv = ch.n0().sqrt().recip();
            let kernel = Kernel::new(&c, ch.n0());
            let mut ws = KernelScratch::new(c.size(), c.bits());
            let (mut scratch, mut same) = (Vec::new(), vec![0.0; 3]);
            let mut used = 0;
            for n in 0..grid.len() {
                let t = grid.tensor_node(n);
                let mut fast = vec![0.0; 4];
                if !kernel.accumulate(t, inv, 1.0, &mut ws, &mut fast) {
                    continue;
                }
                used += 1;
                let mut slow = vec![0.0; 4];
                for i in 0..c.size() {
                    slow[0] += table.sample(i, t, inv, &mut scratch, &mut same);
                    for (a, b) in slow[1..].iter_mut().zip(&same) {
                        *a += b;
                    }
                }
                for (f, s) in fast.iter().zip(&slow) {
                    assert!(
                        (f - s).abs() < 1e-9 * s.abs().max(1.0),
                        "es={es} n={n}: {f} vs {s}"
                    );
                }
            }
            assert!(used > 0, "kernel never applicable at {es} dB");
        }
    }

    #[test]
    fn limits() {
        let grid = QuadratureGrid::new(10, 4).unwrap();
        let c = pm_qpsk();
        let lo =
            rates_quadrature(&c, &ChannelSpec::from_es_n0_db(-40.0, 4).unwrap(), &grid).unwrap();
        assert!(lo.mi < 0.01 && lo.gmi < 0.01);
        assert!(lo.bit_mi.iter().all(|&b| b < 0.01));
        let hi =
            rates_quadrature(&c, &ChannelSpec::from_es_n0_db(25.0, 4).unwrap(), &grid).unwrap();
        assert!(hi.mi > 3.999);
        let top =
            rates_quadrature(&c, &ChannelSpec::from_es_n0_db(30.0, 4).unwrap(), &grid).unwrap();
        assert!(top.bit_mi.iter().all(|&b| b > 0.999));
    }

    #[test]
    fn bit_index_checked() {
        let grid = QuadratureGrid::new(4, 4).unwrap();
        let ch = ChannelSpec::from_es_n0_db(0.0, 4).unwrap();
        assert!(bit_mi(&pm_qpsk(), 0, &ch, &grid).is_err());
        assert!(bit_mi(&pm_qpsk(), 5, &ch, &grid).is_err());
        assert!(bit_mi(&pm_qpsk(), 4, &ch, &grid).is_ok());
        let bad = ChannelSpec::from_es_n0_db(0.0, 2).unwrap();
        assert!(mi(&pm_qpsk(), &bad, &grid).is_err());
    }

    #[test]
    fn extreme_snr_stays_finite() {
        let grid = QuadratureGrid::new(14, 4).unwrap();
        for es in [-40.0, 40.0] {
            let r = rates_quadrature(
                &pm_qpsk(),
                &ChannelSpec::from_es_n0_db(es, 4).unwrap(),
                &grid,
            )
            .unwrap();
            assert!(r.mi.is_finite() && r.gmi.is_finite());
        }
        let r = rates_montecarlo(
            &pm_qpsk(),
            &ChannelSpec::from_es_n0_db(40.0, 4).unwrap(),
            2000,
            1,
        )
        .unwrap();
        assert!(r.mi.is_finite() && r.gmi.is_finite());
    }

    #[test]
    fn montecarlo_matches_quadrature_and_is_deterministic() {
        let c = pm_qpsk();
        let ch = ChannelSpec::from_es_n0_db(0.0, 4).unwrap();
        let q = rates_quadrature(&c, &ch, &QuadratureGrid::new(10, 4).unwrap()).unwrap();
        let a = rates_montecarlo(&c, &ch, 200_000, 5).unwrap();
        let b = rates_montecarlo(&c, &ch, 200_000, 5).unwrap();
        assert_eq!(a, b);
        let se = a.mi_stderr.unwrap();
        assert!(
            (a.mi - q.mi).abs() < 3.0 * se,
            "{} vs {} (se {se})",
            a.mi,
            q.mi
        );
        assert!(rates_montecarlo(&c, &ch, 999, 5).is_err());
    }

    #[test]
    fn montecarlo_vanishes_at_high_noise() {
        let c = pm_qpsk();
        let ch = ChannelSpec::from_es_n0_db(-40.0, 4).unwrap();
        let (est, se) = mi_montecarlo(&c, &ch, 100_000, 3).unwrap();
        assert!(est.abs() < 3.0 * se.max(1e-9), "{est} {se}");
        let (g, gse) = gmi_montecarlo(&c, &ch, 100_000, 3).unwrap();
        assert!(g.abs() < 3.0 * gse.max(1e-9));
    }

    #[test]
    fn shannon_reference() {
        assert_abs_diff_eq!(
            shannon_capacity(0.0, 4).unwrap(),
            2.0 * 1.5f64.log2(),
            epsilon = 1e-12
        );
        assert_eq!(shannon_capacity(f64::NEG_INFINITY, 4).unwrap(), 0.0);
        assert!(shannon_capacity(0.0, 3).is_err());
    }

    fn synthetic(name: &str, rates: &[f64]) -> RateCurve {
        RateCurve {
            constellation: name.into(),
            bits: 1,
            method: "quadrature".into(),
            precision: Precision::Quadrature { order: 10 },
            points: rates
                .iter()
                .enumerate()
                .map(|(i, &r)| RateRecord {
                    es_n0_db: i as f64,
                    eb_n0_db_mi: 0.0,
                    eb_n0_db_gmi: 0.0,
                    mi: r,
                    gmi: r,
                    bit_mi: vec![r],
                    mi_stderr: None,
                    gmi_stderr: None,
                })
                .collect(),
        }
    }

    #[test]
    fn crossing_detection() {
        let a = synthetic("a", &[0.1, 0.5, 1.0, 1.5]);
        let b = synthetic("b", &[0.2, 0.6, 0.8, 1.0]);
        let r = find_crossing(&a, &b, RateKind::Gmi).unwrap().unwrap();
        // difference -0.1 -> +0.2 between indices 1 and 2: frac 1/3
        assert_abs_diff_eq!(r, 0.5 + (1.0 - 0.5) / 3.0, epsilon = 1e-12);
        assert_eq!(find_crossing(&a, &a, RateKind::Gmi).unwrap(), None);
        let shifted = synthetic("c", &[0.2, 0.6, 1.1, 1.6]);
        assert_eq!(find_crossing(&a, &shifted, RateKind::Mi).unwrap(), None);
        let short = synthetic("d", &[0.1]);
        assert!(find_crossing(&a, &short, RateKind::Mi).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = pm_qpsk();
        let est = MonteCarloEstimator::new(2000, 1).unwrap();
        let curve = rate_curve(&c, &[-40.0, 0.0, 3.0], &est).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let back = RateCurve::read_csv(buf.as_slice(), "pm-qpsk").unwrap();
        assert_eq!(back, curve);
        assert!(String::from_utf8(buf).unwrap().contains("se_mi="));
    }

    #[test]
    fn registry_lookup() {
        let reg = EstimatorRegistry::default();
        let p = EstimatorParams::default();
        assert_eq!(reg.create("quadrature", &p).unwrap().name(), "quadrature");
        assert_eq!(reg.create("MonteCarlo", &p).unwrap().name(), "montecarlo");
        assert!(reg.create("simpson", &p).is_err());
        assert!(rate_curve(
            &pm_qpsk(),
            &[],
            reg.create("quadrature", &p).unwrap().as_ref()
        )
        .is_err());
    }
}
