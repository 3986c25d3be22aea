use super::LdpcCode;
use crate::demapper::LLR_CLIP;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERATIONS: usize = 50;

const TANH_CLAMP: f64 = 1.0 - 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Hard decisions for all `n` code bits.
    pub bits: Vec<u8>,
    /// Number of BP iterations run (0 when the channel decisions already
    /// formed a codeword).
    pub iterations: usize,
    pub converged: bool,
}

/// Flooding sum-product decoding.
///
/// `llrs` follow the crate convention (positive favours bit 1). A variable
/// whose total belief is exactly zero is treated as undecided, so the decoder
/// only reports convergence once every bit has a definite value and all
/// checks are satisfied.
pub fn decode_bp(code: &LdpcCode, llrs: &[f64], max_iter: usize) -> Result<DecodeResult> {
    let n = code.n();
    if llrs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: llrs.len(),
        });
    }
    if llrs.iter().any(|l| l.is_nan()) {
        return Err(Error::invalid("NaN in decoder input"));
    }
    // Internally: positive means bit 0.
    let channel: Vec<f64> = llrs
        .iter()
        .map(|&l| -l.clamp(-LLR_CLIP, LLR_CLIP))
        .collect();

    let checks = code.check_vars();
    let mut offsets = Vec::with_capacity(checks.len() + 1);
    offsets.push(0);
    let mut edge_var = Vec::with_capacity(code.edges());
    for vars in checks {
        edge_var.extend_from_slice(vars);
        offsets.push(edge_var.len());
    }
    let mut var_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &v) in edge_var.iter().enumerate() {
        var_edges[v].push(e);
    }

    let mut v2c: Vec<f64> = edge_var.iter().map(|&v| channel[v]).collect();
    let mut c2v = vec![0.0; edge_var.len()];
    let mut total = channel.clone();
    let mut bits = vec![0u8; n];
    let mut scratch = Vec::new();

    let decide = |total: &[f64], bits: &mut [u8]| -> bool {
        let mut all_decided = true;
        for (b, &t) in bits.iter_mut().zip(total) {
            *b = u8::from(t < 0.0);
            all_decided &= t != 0.0;
        }
        all_decided
    };
    let syndrome_ok = |bits: &[u8]| {
        checks
            .iter()
            .all(|vars| vars.iter().fold(0u8, |acc, &v| acc ^ bits[v]) == 0)
    };

    if decide(&total, &mut bits) && syndrome_ok(&bits) {
        return Ok(DecodeResult {
            bits,
            iterations: 0,
            converged: true,
        });
    }

    for iter in 1..=max_iter {
        for c in 0..checks.len() {
            let (lo, hi) = (offsets[c], offsets[c + 1]);
            let deg = hi - lo;
            scratch.clear();
            scratch.extend(v2c[lo..hi].iter().map(|&m| (0.5 * m).tanh()));
            // prefix products stored in c2v, suffix applied on the way back
            let mut acc = 1.0;
            for j in 0..deg {
                c2v[lo + j] = acc;
                acc *= scratch[j];
            }
            let mut suffix = 1.0;
            for j in (0..deg).rev() {
                let p = (c2v[lo + j] * suffix).clamp(-TANH_CLAMP, TANH_CLAMP);
                c2v[lo + j] = 2.0 * p.atanh();
                suffix *= scratch[j];
            }
        }
        for v in 0..n {
            let t = var_edges[v].iter().fold(channel[v], |acc, &e| acc + c2v[e]);
            total[v] = t;
            for &e in &var_edges[v] {
                v2c[e] = (t - c2v[e]).clamp(-LLR_CLIP, LLR_CLIP);
            }
        }
        if decide(&total, &mut bits) && syndrome_ok(&bits) {
            return Ok(DecodeResult {
                bits,
                iterations: iter,
                converged: true,
            });
        }
    }
    Ok(DecodeResult {
        bits,
        iterations: max_iter,
        converged: false,
    })
}
