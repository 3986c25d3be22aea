//! Binary LDPC codes given by a sparse parity-check matrix.
//!
//! Codes are read from and written to MacKay's alist format. Encoding is
//! systematic: a one-time elimination over GF(2) splits the columns into
//! information and parity positions while `H` itself stays untouched for
//! decoding.

mod decoder;
mod peg;

pub use decoder::{decode_bp, DecodeResult, DEFAULT_MAX_ITERATIONS};
pub use peg::{peg_construct, PegConfig};

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LdpcCode {
    n: usize,
    check_vars: Vec<Vec<usize>>,
    var_checks: Vec<Vec<usize>>,
    encoder: Encoder,
}

#[derive(Debug, Clone)]
enum ParityRule {
    /// Parity bit `r` is the XOR of the information bits set in `rows[r]`
    /// (bit-packed over information indices).
    Dense { rows: Vec<Vec<u64>> },
    /// Lower-triangular parity part: parity `r` is the XOR of the listed
    /// information indices and earlier parity bits.
    Triangular {
        info_terms: Vec<Vec<usize>>,
        parity_terms: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone)]
struct Encoder {
    info_positions: Vec<usize>,
    parity_positions: Vec<usize>,
    rule: ParityRule,
}

impl LdpcCode {
    /// Builds a code from the column index lists of each check.
    pub fn from_checks(n: usize, check_vars: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("code length must be positive"));
        }
        let mut var_checks = vec![Vec::new(); n];
        for (r, vars) in check_vars.iter().enumerate() {
            let mut sorted = vars.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("check {r} lists a variable twice")));
            }
            for &v in vars {
                if v >= n {
                    return Err(Error::invalid(format!(
                        "check {r} references variable {v} >= n = {n}"
                    )));
                }
                var_checks[v].push(r);
            }
        }
        let encoder = Encoder::new(n, &check_vars);
        Ok(LdpcCode {
            n,
            check_vars,
            var_checks,
            encoder,
        })
    }

    /// Block length `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of information bits `k = n - rank(H)`.
    pub fn k(&self) -> usize {
        self.encoder.info_positions.len()
    }

    /// Number of parity-check rows as given (including redundant ones).
    pub fn checks(&self) -> usize {
        self.check_vars.len()
    }

    pub fn rank(&self) -> usize {
        self.encoder.parity_positions.len()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n as f64
    }

    pub fn check_vars(&self) -> &[Vec<usize>] {
        &self.check_vars
    }

    pub fn var_checks(&self) -> &[Vec<usize>] {
        &self.var_checks
    }

    /// Codeword positions carrying the information bits, in order.
    pub fn info_positions(&self) -> &[usize] {
        &self.encoder.info_positions
    }

    pub fn column_degrees(&self) -> Vec<usize> {
        self.var_checks.iter().map(Vec::len).collect()
    }

    pub fn row_degrees(&self) -> Vec<usize> {
        self.check_vars.iter().map(Vec::len).collect()
    }

    pub fn edges(&self) -> usize {
        self.check_vars.iter().map(Vec::len).sum()
    }

    /// Systematic encoding of `k` information bits (0/1 values).
    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k() {
            return Err(Error::invalid(format!(
                "expected {} information bits, got {}",
                self.k(),
                info.len()
            )));
        }
        let mut cw = vec![0u8; self.n];
        self.encoder.encode_into(info, &mut cw);
        Ok(cw)
    }

    /// `true` when every check is satisfied by the hard bits `word`.
    pub fn is_codeword(&self, word: &[u8]) -> bool {
        word.len() == self.n
            && self
                .check_vars
                .iter()
                .all(|vars| vars.iter().fold(0u8, |acc, &v| acc ^ word[v]) == 0)
    }

    /// Parses MacKay's alist format; `source` names the input in errors.
    pub fn parse_alist(text: &str, source: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut next_numbers = |what: &str| -> Result<(usize, Vec<usize>)> {
            let (no, l) = lines
                .next()
                .ok_or_else(|| perr(0, format!("unexpected end of file, expected {what}")))?;
            let nums = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| perr(no, format!("non-integer token in {what}")))?;
            Ok((no, nums))
        };
        let (no, head) = next_numbers("`n m` header")?;
        let [n, m] = head[..] else {
            return Err(perr(no, "expected `n m`".into()));
        };
        let (no, maxes) = next_numbers("maximum degrees")?;
        let [max_col, max_row] = maxes[..] else {
            return Err(perr(no, "expected two maximum degrees".into()));
        };
        let (no, col_deg) = next_numbers("column degrees")?;
        if col_deg.len() != n {
            return Err(perr(
                no,
                format!("expected {n} column degrees, found {}", col_deg.len()),
            ));
        }
        if col_deg.iter().any(|&d| d > max_col) {
            return Err(perr(no, format!("column degree exceeds maximum {max_col}")));
        }
        let (no, row_deg) = next_numbers("row degrees")?;
        if row_deg.len() != m {
            return Err(perr(
                no,
                format!("expected {m} row degrees, found {}", row_deg.len()),
            ));
        }
        if row_deg.iter().any(|&d| d > max_row) {
            return Err(perr(no, format!("row degree exceeds maximum {max_row}")));
        }
        if col_deg.iter().sum::<usize>() != row_deg.iter().sum::<usize>() {
            return Err(perr(
                no,
                "column and row degrees count different numbers of entries".into(),
            ));
        }
        let mut cols = Vec::with_capacity(n);
        for (c, &deg) in col_deg.iter().enumerate() {
            let (no, idx) = next_numbers("column index list")?;
            let entries: Vec<usize> = idx.into_iter().filter(|&v| v != 0).collect();
            if entries.len() != deg {
                return Err(perr(
                    no,
                    format!(
                        "column {} lists {} entries, degree is {deg}",
                        c + 1,
                        entries.len()
                    ),
                ));
            }
            if let Some(&bad) = entries.iter().find(|&&r| r > m) {
                return Err(perr(no, format!("row index {bad} out of range 1..={m}")));
            }
            cols.push((no, entries));
        }
        let mut rows = Vec::with_capacity(m);
        for (r, &deg) in row_deg.iter().enumerate() {
            let (no, idx) = next_numbers("row index list")?;
            let entries: Vec<usize> = idx.into_iter().filter(|&v| v != 0).collect();
            if entries.len() != deg {
                return Err(perr(
                    no,
                    format!(
                        "row {} lists {} entries, degree is {deg}",
                        r + 1,
                        entries.len()
                    ),
                ));
            }
            if let Some(&bad) = entries.iter().find(|&&c| c > n) {
                return Err(perr(no, format!("column index {bad} out of range 1..={n}")));
            }
            rows.push(entries.into_iter().map(|c| c - 1).collect::<Vec<_>>());
        }
        // The column lists must describe the same matrix as the row lists.
        for (c, (no, entries)) in cols.iter().enumerate() {
            for &r in entries {
                if !rows[r - 1].contains(&c) {
                    return Err(perr(
                        *no,
                        format!(
                            "column {} lists row {r}, but row {r} does not list it",
                            c + 1
                        ),
                    ));
                }
            }
        }
        LdpcCode::from_checks(n, rows)
    }

    pub fn load_alist(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_alist(&text, &path.display().to_string())
    }

    pub fn to_alist(&self) -> String {
        let mut s = String::new();
        let col_deg = self.column_degrees();
        let row_deg = self.row_degrees();
        let max_col = col_deg.iter().copied().max().unwrap_or(0);
        let max_row = row_deg.iter().copied().max().unwrap_or(0);
        let join = |v: &mut dyn Iterator<Item = usize>| {
            v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(s, "{} {}", self.n, self.checks());
        let _ = writeln!(s, "{max_col} {max_row}");
        let _ = writeln!(s, "{}", join(&mut col_deg.iter().copied()));
        let _ = writeln!(s, "{}", join(&mut row_deg.iter().copied()));
        for checks in &self.var_checks {
            let mut v: Vec<usize> = checks.iter().map(|r| r + 1).collect();
            v.sort_unstable();
            v.resize(max_col, 0);
            let _ = writeln!(s, "{}", join(&mut v.into_iter()));
        }
        for vars in &self.check_vars {
            let mut v: Vec<usize> = vars.iter().map(|c| c + 1).collect();
            v.sort_unstable();
            v.resize(max_row, 0);
            let _ = writeln!(s, "{}", join(&mut v.into_iter()));
        }
        s
    }

    pub fn save_alist(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_alist()).map_err(|e| Error::io(path, e))
    }
}

impl Encoder {
    fn new(n: usize, check_vars: &[Vec<usize>]) -> Self {
        Self::triangular(n, check_vars).unwrap_or_else(|| Self::dense(n, check_vars))
    }

    /// Accepts `H = [A | T]` where the last `m` columns form a lower-triangular
    /// matrix with unit diagonal (repeat-accumulate style parity part).
    fn triangular(n: usize, check_vars: &[Vec<usize>]) -> Option<Self> {
        let m = check_vars.len();
        if m == 0 || m >= n {
            return None;
        }
        let k = n - m;
        let mut info_terms = Vec::with_capacity(m);
        let mut parity_terms = Vec::with_capacity(m);
        for (r, vars) in check_vars.iter().enumerate() {
            let diag = k + r;
            if !vars.contains(&diag) || vars.iter().any(|&v| v > diag) {
                return None;
            }
            info_terms.push(vars.iter().copied().filter(|&v| v < k).collect());
            parity_terms.push(
                vars.iter()
                    .copied()
                    .filter(|&v| v >= k && v < diag)
                    .map(|v| v - k)
                    .collect(),
            );
        }
        Some(Encoder {
            info_positions: (0..k).collect(),
            parity_positions: (k..n).collect(),
            rule: ParityRule::Triangular {
                info_terms,
                parity_terms,
            },
        })
    }

    /// Gauss–Jordan elimination over GF(2) on a dense copy of `H`.
    /// Redundant rows vanish; pivot columns become parity positions.
    fn dense(n: usize, check_vars: &[Vec<usize>]) -> Self {
        let words = n.div_ceil(64);
        let mut rows: Vec<Vec<u64>> = check_vars
            .iter()
            .map(|vars| {
                let mut row = vec![0u64; words];
                for &v in vars {
                    row[v / 64] |= 1 << (v % 64);
                }
                row
            })
            .collect();
        let get = |row: &[u64], c: usize| (row[c / 64] >> (c % 64)) & 1 == 1;
        let mut pivots = Vec::new();
        let mut rank = 0;
        // Search pivots from the last column down so that the leading
        // positions stay systematic whenever possible.
        for col in (0..n).rev() {
            if rank == rows.len() {
                break;
            }
            let Some(p) = (rank..rows.len()).find(|&r| get(&rows[r], col)) else {
                continue;
            };
            rows.swap(rank, p);
            let pivot_row = rows[rank].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != rank && get(row, col) {
                    for (a, b) in row.iter_mut().zip(&pivot_row) {
                        *a ^= b;
                    }
                }
            }
            pivots.push(col);
            rank += 1;
        }
        rows.truncate(rank);
        let mut is_pivot = vec![false; n];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let info_positions: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let k = info_positions.len();
        let info_words = k.div_ceil(64).max(1);
        let packed = rows
            .iter()
            .map(|row| {
                let mut out = vec![0u64; info_words];
                for (idx, &c) in info_positions.iter().enumerate() {
                    if get(row, c) {
                        out[idx / 64] |= 1 << (idx % 64);
                    }
                }
                out
            })
            .collect();
        Encoder {
            info_positions,
            parity_positions: pivots,
            rule: ParityRule::Dense { rows: packed },
        }
    }

    fn encode_into(&self, info: &[u8], cw: &mut [u8]) {
        for (&pos, &b) in self.info_positions.iter().zip(info) {
            cw[pos] = b & 1;
        }
        match &self.rule {
            ParityRule::Dense { rows } => {
                let words = info.len().div_ceil(64).max(1);
                let mut packed = vec![0u64; words];
                for (i, &b) in info.iter().enumerate() {
                    packed[i / 64] |= ((b & 1) as u64) << (i % 64);
                }
                for (row, &pos) in rows.iter().zip(&self.parity_positions) {
                    let ones: u32 = row
                        .iter()
                        .zip(&packed)
                        .map(|(a, b)| (a & b).count_ones())
                        .sum();
                    cw[pos] = (ones & 1) as u8;
                }
            }
            ParityRule::Triangular {
                info_terms,
                parity_terms,
            } => {
                let mut parity = vec![0u8; self.parity_positions.len()];
                for r in 0..parity.len() {
                    let mut p = info_terms[r].iter().fold(0u8, |acc, &i| acc ^ cw[i]);
                    p = parity_terms[r].iter().fold(p, |acc, &j| acc ^ parity[j]);
                    parity[r] = p;
                }
                for (&pos, &p) in self.parity_positions.iter().zip(&parity) {
                    cw[pos] = p;
                }
            }
        }
    }
}
