//! Coded Monte Carlo BER harness: binary LDPC encoder, cyclic bit-to-symbol
//! mapping, vector AWGN channel, bit-wise soft demapper and BP decoder.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{eb_n0_db, substream, ChannelSpec};
use crate::constellation::Constellation;
use crate::demapper::{Demapper, DemapperRegistry};
use crate::error::{Error, Result};
use crate::ldpc::{decode_bp, LdpcCode, DEFAULT_MAX_ITERATIONS};
use crate::rates::{es_n0_at_rate, RateCurve, RateKind};
use crate::registry::ConstellationRegistry;

/// BER below which a point counts as past the waterfall.
pub const WATERFALL_BER: f64 = 1e-3;

/// Blocks simulated per parallel batch. The stopping point is decided block
/// by block afterwards, so this only affects wasted work, never results.
const BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Registry name; also used as the label of a file-backed constellation.
    pub constellation: String,
    pub constellation_file: Option<PathBuf>,
    pub code: PathBuf,
    pub demapper: String,
    pub es_n0_db: Vec<f64>,
    pub max_blocks: usize,
    pub min_bit_errors: u64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the ambient rayon pool.
    pub threads: usize,
    /// Skip the rest of the grid once a point's BER falls below this.
    pub ber_floor: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            constellation: "pm-qpsk".into(),
            constellation_file: None,
            code: PathBuf::new(),
            demapper: "exact".into(),
            es_n0_db: vec![0.0],
            max_blocks: 10_000,
            min_bit_errors: 100,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 1,
            threads: 0,
            ber_floor: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.es_n0_db.is_empty() {
            return Err(Error::invalid("empty Es/N0 grid"));
        }
        if self.min_bit_errors == 0 {
            return Err(Error::invalid("min bit-error target must be at least 1"));
        }
        if self.max_blocks == 0 {
            return Err(Error::invalid("max blocks must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("decoder needs at least one iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub es_n0_db: f64,
    pub eb_n0_db: f64,
    pub blocks: u64,
    pub info_bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub frame_errors: u64,
    pub fer: f64,
    pub mean_iters: f64,
    /// 95% Wilson interval on the BER.
    pub ber_ci: (f64, f64),
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub constellation: String,
    pub bits_per_symbol: usize,
    pub code_n: usize,
    pub code_k: usize,
    pub code_rate: f64,
    /// Transmission rate `Rc * m` in bit/symbol.
    pub transmission_rate: f64,
    /// Every block draws from `substream(seed, (snr_index << 40) | block)`.
    pub seed_derivation: String,
    pub records: Vec<SimRecord>,
}

pub const CSV_HEADER: [&str; 8] = [
    "es_n0_db",
    "blocks",
    "info_bits",
    "bit_errors",
    "ber",
    "frame_errors",
    "fer",
    "mean_iters",
];

impl SimResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for r in &self.records {
            wr.write_record([
                format!("{}", r.es_n0_db),
                r.blocks.to_string(),
                r.info_bits.to_string(),
                r.bit_errors.to_string(),
                format!("{:e}", r.ber),
                r.frame_errors.to_string(),
                format!("{:e}", r.fer),
                format!("{}", r.mean_iters),
            ])?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Parses the CSV written by [`SimResult::write_csv`] back into
    /// `(es_n0_db, blocks, info_bits, bit_errors, ber, frame_errors, fer, mean_iters)` rows.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<CsvRow>> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::invalid(format!(
                "unexpected BER CSV header {header:?}"
            )));
        }
        rd.deserialize().map(|row| Ok(row?)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// First SNR with BER below [`WATERFALL_BER`], see [`waterfall_snr`].
    pub fn waterfall_snr(&self) -> Option<f64> {
        waterfall_snr(&ber_points(&self.records), WATERFALL_BER)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub es_n0_db: f64,
    pub blocks: u64,
    pub info_bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub frame_errors: u64,
    pub fer: f64,
    pub mean_iters: f64,
}

/// Maps coded bits to symbols: every `m` consecutive bits form a label,
/// the first of them being bit `B_1` (the most significant). Returns the
/// flattened symbol coordinates.
pub fn map_bits_to_symbols(c: &Constellation, bits: &[u8]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(bits.len() / c.bits().max(1) * c.dims());
    map_bits_into(c, bits, &mut out)?;
    Ok(out)
}

fn map_bits_into(c: &Constellation, bits: &[u8], out: &mut Vec<f64>) -> Result<()> {
    let m = c.bits();
    if !bits.len().is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "{} coded bits do not fill whole {m}-bit symbols",
            bits.len()
        )));
    }
    out.clear();
    for group in bits.chunks_exact(m) {
        let label = group
            .iter()
            .fold(0u32, |acc, &b| (acc << 1) | (b & 1) as u32);
        out.extend_from_slice(c.point(c.index_of_label(label)));
    }
    Ok(())
}

/// 95% Wilson score interval for `errors` successes in `trials`.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = errors as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// A constellation, a code and a demapper ready to simulate.
pub struct Link {
    constellation: Constellation,
    code: LdpcCode,
    demapper: Box<dyn Demapper>,
}

#[derive(Debug, Clone, Copy, Default)]
struct BlockOutcome {
    bit_errors: u64,
    frame_error: bool,
    iterations: u64,
}

impl Link {
    pub fn new(
        constellation: Constellation,
        code: LdpcCode,
        demapper: Box<dyn Demapper>,
    ) -> Result<Self> {
        if !code.n().is_multiple_of(constellation.bits()) {
            return Err(Error::invalid(format!(
                "code length {} is not a multiple of {} bits per symbol",
                code.n(),
                constellation.bits()
            )));
        }
        if demapper.bits() != constellation.bits() || demapper.dims() != constellation.dims() {
            return Err(Error::invalid("demapper does not match the constellation"));
        }
        Ok(Link {
            constellation,
            code,
            demapper,
        })
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn code(&self) -> &LdpcCode {
        &self.code
    }

    fn block(
        &self,
        ch: &ChannelSpec,
        max_iter: usize,
        seed: u64,
        stream: u64,
    ) -> Result<BlockOutcome> {
        let mut rng = substream(seed, stream);
        let info: Vec<u8> = (0..self.code.k())
            .map(|_| rng.gen::<bool>() as u8)
            .collect();
        let cw = self.code.encode(&info)?;
        let mut y = Vec::new();
        map_bits_into(&self.constellation, &cw, &mut y)?;
        ch.add_noise_in_place(&mut y, &mut rng)?;
        let mut llrs = vec![0.0; cw.len()];
        self.demapper.demap_block(&y, ch.n0(), &mut llrs);
        let dec = decode_bp(&self.code, &llrs, max_iter)?;
        let bit_errors = self
            .code
            .info_positions()
            .iter()
            .zip(&info)
            .filter(|(&pos, &b)| dec.bits[pos] != b)
            .count() as u64;
        Ok(BlockOutcome {
            bit_errors,
            frame_error: bit_errors > 0,
            iterations: dec.iterations as u64,
        })
    }

    fn point(&self, cfg: &SimConfig, snr_idx: usize, es_n0_db: f64) -> Result<SimRecord> {
        let start = Instant::now();
        let ch = ChannelSpec::from_es_n0_db(es_n0_db, self.constellation.dims())?;
        let (mut blocks, mut bit_errors, mut frame_errors, mut iterations) =
            (0u64, 0u64, 0u64, 0u64);
        'outer: while (blocks as usize) < cfg.max_blocks {
            let lo = blocks as usize;
            let hi = (lo + BATCH).min(cfg.max_blocks);
            let outcomes = (lo..hi)
                .into_par_iter()
                .map(|b| {
                    self.block(
                        &ch,
                        cfg.max_iterations,
                        cfg.seed,
                        ((snr_idx as u64) << 40) | b as u64,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            for o in outcomes {
                blocks += 1;
                bit_errors += o.bit_errors;
                frame_errors += o.frame_error as u64;
                iterations += o.iterations;
                if bit_errors >= cfg.min_bit_errors {
                    break 'outer;
                }
            }
        }
        let info_bits = blocks * self.code.k() as u64;
        let rate = self.code.rate() * self.constellation.bits() as f64;
        Ok(SimRecord {
            es_n0_db,
            eb_n0_db: eb_n0_db(es_n0_db, rate)?,
            blocks,
            info_bits,
            bit_errors,
            ber: bit_errors as f64 / info_bits as f64,
            frame_errors,
            fer: frame_errors as f64 / blocks as f64,
            mean_iters: iterations as f64 / blocks as f64,
            ber_ci: wilson_interval(bit_errors, info_bits),
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs every SNR point of `cfg` on this link.
    pub fn simulate(&self, cfg: &SimConfig) -> Result<SimResult> {
        cfg.validate()?;
        let run = || -> Result<Vec<SimRecord>> {
            let mut records = Vec::with_capacity(cfg.es_n0_db.len());
            for (idx, &es) in cfg.es_n0_db.iter().enumerate() {
                let rec = self.point(cfg, idx, es)?;
                log::info!(
                    "{} Es/N0={es:.2} dB: {} blocks, BER={:.3e}, FER={:.3e}",
                    self.constellation.name(),
                    rec.blocks,
                    rec.ber,
                    rec.fer
                );
                let stop = cfg.ber_floor.is_some_and(|f| rec.ber < f);
                records.push(rec);
                if stop {
                    break;
                }
            }
            Ok(records)
        };
        let records = if cfg.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
                .install(run)?
        } else {
            run()?
        };
        Ok(SimResult {
            config: cfg.clone(),
            constellation: self.constellation.name().to_string(),
            bits_per_symbol: self.constellation.bits(),
            code_n: self.code.n(),
            code_k: self.code.k(),
            code_rate: self.code.rate(),
            transmission_rate: self.code.rate() * self.constellation.bits() as f64,
            seed_derivation: format!(
                "block b at grid index i uses ChaCha8 seed {} stream (i << 40) | b",
                cfg.seed
            ),
            records,
        })
    }
}

/// Resolves the constellation, code and demapper named in `cfg` and runs it.
pub fn run_ber(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let constellation = match &cfg.constellation_file {
        Some(path) => Constellation::load(path)?,
        None => ConstellationRegistry::builtin().build(&cfg.constellation)?,
    };
    let code = LdpcCode::load_alist(&cfg.code)?;
    let demapper = DemapperRegistry::default().create(&cfg.demapper, &constellation)?;
    Link::new(constellation, code, demapper)?.simulate(cfg)
}

/// `(es_n0_db, ber)` pairs of a record list.
pub fn ber_points(records: &[SimRecord]) -> Vec<(f64, f64)> {
    records.iter().map(|r| (r.es_n0_db, r.ber)).collect()
}

/// SNR at which the BER first drops below `target`, interpolating
/// `log10(BER)` between the neighbouring grid points when both are nonzero.
/// `points` are `(es_n0_db, ber)` in increasing SNR order.
pub fn waterfall_snr(points: &[(f64, f64)], target: f64) -> Option<f64> {
    let idx = points.iter().position(|&(_, ber)| ber < target)?;
    let (es1, ber1) = points[idx];
    if idx == 0 || ber1 == 0.0 {
        return Some(es1);
    }
    let (es0, ber0) = points[idx - 1];
    let (l0, l1, lt) = (ber0.log10(), ber1.log10(), target.log10());
    let f = (l0 - lt) / (l0 - l1);
    Some(es0 + f * (es1 - es0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub constellation: String,
    pub code_rate: f64,
    pub transmission_rate: f64,
    /// `Es/N0` where the GMI curve reaches `Rc * m`.
    pub gmi_threshold_db: f64,
    pub waterfall_db: Option<f64>,
    /// `waterfall - threshold` in dB.
    pub gap_db: Option<f64>,
}

/// Compares the GMI-predicted threshold with the measured waterfall.
/// `ber_points` are `(es_n0_db, ber)` pairs in increasing SNR order.
pub fn gmi_threshold_check(
    curve: &RateCurve,
    code_rate: f64,
    ber_points: &[(f64, f64)],
) -> Result<ThresholdReport> {
    let target = code_rate * curve.bits as f64;
    if code_rate.is_nan() || code_rate <= 0.0 || target > curve.bits as f64 {
        return Err(Error::Unreachable { target });
    }
    let threshold =
        es_n0_at_rate(curve, RateKind::Gmi, target).ok_or(Error::Unreachable { target })?;
    let waterfall = waterfall_snr(ber_points, WATERFALL_BER);
    Ok(ThresholdReport {
        constellation: curve.constellation.clone(),
        code_rate,
        transmission_rate: target,
        gmi_threshold_db: threshold,
        waterfall_db: waterfall,
        gap_db: waterfall.map(|w| w - threshold),
    })
}
