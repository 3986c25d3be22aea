//! Labeled multidimensional constellations.
//!
//! A [`Constellation`] is a set of `M = 2^m` points in `N` real dimensions
//! together with a binary labeling, stored as one integer per point. Label
//! bit `k = 1` is the most significant bit of that integer and corresponds to
//! the leftmost character of the bit-string written in constellation files.
//!
//! Text format, one item per line:
//!
//! ```text
//! # comment
//! N M
//! <label> <coord_1> ... <coord_N>     (M lines)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Two points closer than this (squared distance) are treated as duplicates.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    name: String,
    dims: usize,
    bits: usize,
    /// Row-major `M x N` coordinates.
    points: Vec<f64>,
    labels: Vec<u32>,
    /// Inverse of `labels`: point index carrying a given label.
    by_label: Vec<usize>,
}

impl Constellation {
    /// Builds and validates a constellation. Coordinates are kept as given;
    /// call [`Constellation::normalize`] to scale to unit average energy.
    pub fn new(
        name: impl Into<String>,
        dims: usize,
        points: Vec<Vec<f64>>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let m_points = points.len();
        if dims == 0 {
            return Err(Error::InvalidConstellation("zero dimensions".into()));
        }
        if m_points < 2 || !m_points.is_power_of_two() {
            return Err(Error::InvalidConstellation(format!(
                "number of points {m_points} is not a power of two >= 2"
            )));
        }
        if labels.len() != m_points {
            return Err(Error::InvalidConstellation(format!(
                "{} labels for {} points",
                labels.len(),
                m_points
            )));
        }
        let bits = m_points.trailing_zeros() as usize;
        let mut flat = Vec::with_capacity(m_points * dims);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dims {
                return Err(Error::InvalidConstellation(format!(
                    "point {i} has {} coordinates, expected {dims}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConstellation(format!(
                    "point {i} has a non-finite coordinate"
                )));
            }
            flat.extend_from_slice(p);
        }
        let by_label = label_inverse(&labels, bits)?;
        let c = Constellation {
            name: name.into(),
            dims,
            bits,
            points: flat,
            labels,
            by_label,
        };
        if let Some((i, j)) = c
            .closest_pair()
            .filter(|&(i, j)| c.sq_dist(i, j) <= DUPLICATE_TOLERANCE)
        {
            return Err(Error::InvalidConstellation(format!(
                "points {i} and {j} coincide"
            )));
        }
        Ok(c)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Number of real dimensions `N`.
    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Number of points `M`.
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// Bits per label `m = log2(M)`.
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dims..(i + 1) * self.dims]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dims)
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Index of the point carrying `label`.
    pub fn index_of_label(&self, label: u32) -> usize {
        self.by_label[label as usize]
    }

    /// Value of bit `k` (0-based, `k = 0` is the first bit fed to the mapper)
    /// of the label of point `i`.
    #[inline]
    pub fn bit(&self, i: usize, k: usize) -> u8 {
        ((self.labels[i] >> (self.bits - 1 - k)) & 1) as u8
    }

    /// Label of point `i` as an `m`-character bit-string.
    pub fn label_string(&self, i: usize) -> String {
        format!("{:0width$b}", self.labels[i], width = self.bits)
    }

    /// Average symbol energy `(1/M) sum ||x_i||^2`.
    pub fn energy(&self) -> f64 {
        self.points.iter().map(|v| v * v).sum::<f64>() / self.size() as f64
    }

    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    fn closest_pair(&self) -> Option<(usize, usize)> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for i in 0..self.size() {
            for j in i + 1..self.size() {
                let d = self.sq_dist(i, j);
                if d < best_d {
                    best_d = d;
                    best = Some((i, j));
                }
            }
        }
        best
    }

    /// Copy scaled to unit average energy; labels unchanged.
    pub fn normalize(&self) -> Result<Constellation> {
        let es = self.energy();
        if es <= 0.0 {
            return Err(Error::InvalidConstellation(
                "cannot normalize an all-zero constellation".into(),
            ));
        }
        let scale = es.sqrt().recip();
        let mut out = self.clone();
        out.points.iter_mut().for_each(|v| *v *= scale);
        Ok(out)
    }

    /// Minimum pairwise squared Euclidean distance.
    pub fn min_squared_distance(&self) -> f64 {
        self.closest_pair()
            .map(|(i, j)| self.sq_dist(i, j))
            .unwrap_or(f64::INFINITY)
    }

    /// Same points with label `labels[i]` replaced by `new_labels[i]`.
    pub fn relabeled(&self, new_labels: Vec<u32>) -> Result<Constellation> {
        if new_labels.len() != self.size() {
            return Err(Error::InvalidConstellation(format!(
                "{} labels for {} points",
                new_labels.len(),
                self.size()
            )));
        }
        let by_label = label_inverse(&new_labels, self.bits)?;
        Ok(Constellation {
            labels: new_labels,
            by_label,
            ..self.clone()
        })
    }

    /// Serializes to the constellation text format. Coordinates are written
    /// with shortest round-trip precision.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.name);
        let _ = writeln!(s, "{} {}", self.dims, self.size());
        for i in 0..self.size() {
            s.push_str(&self.label_string(i));
            for &v in self.point(i) {
                if v != 0.0 && v.abs() < 1e-4 {
                    let _ = write!(s, " {v:e}");
                } else {
                    let _ = write!(s, " {v}");
                }
            }
            s.push('\n');
        }
        s
    }

    /// Parses the constellation text format and normalizes the result.
    /// `source` is used in error messages.
    pub fn parse(text: &str, name: &str, source: &str) -> Result<Constellation> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut header: Option<(usize, usize, usize)> = None;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut label_line = std::collections::HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            match header {
                None => {
                    let n = fields
                        .next()
                        .and_then(|f| f.parse::<usize>().ok())
                        .ok_or_else(|| perr(lineno, "expected `N M` header".into()))?;
                    let m = fields
                        .next()
                        .and_then(|f| f.parse::<usize>().ok())
                        .ok_or_else(|| perr(lineno, "expected `N M` header".into()))?;
                    if fields.next().is_some() {
                        return Err(perr(lineno, "trailing data after `N M` header".into()));
                    }
                    if n == 0 {
                        return Err(perr(lineno, "N must be positive".into()));
                    }
                    if m < 2 || !m.is_power_of_two() {
                        return Err(perr(lineno, format!("M = {m} is not a power of two >= 2")));
                    }
                    header = Some((n, m, m.trailing_zeros() as usize));
                }
                Some((n, m, bits)) => {
                    if points.len() == m {
                        return Err(perr(lineno, format!("more than M = {m} point lines")));
                    }
                    let label_str = fields.next().unwrap_or_default();
                    if label_str.len() != bits || !label_str.bytes().all(|b| b == b'0' || b == b'1')
                    {
                        return Err(perr(
                            lineno,
                            format!("label `{label_str}` is not a {bits}-character bit-string"),
                        ));
                    }
                    let label = u32::from_str_radix(label_str, 2).expect("validated bit-string");
                    if let Some(prev) = label_line.insert(label, lineno) {
                        return Err(perr(
                            lineno,
                            format!("duplicate label `{label_str}` (first used on line {prev})"),
                        ));
                    }
                    let coords = fields
                        .map(|f| {
                            f.parse::<f64>()
                                .ok()
                                .filter(|v| v.is_finite())
                                .ok_or_else(|| perr(lineno, format!("bad coordinate `{f}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if coords.len() != n {
                        return Err(perr(
                            lineno,
                            format!("expected {n} coordinates, found {}", coords.len()),
                        ));
                    }
                    for (j, q) in points.iter().enumerate() {
                        let d: f64 = coords
                            .iter()
                            .zip(q as &Vec<f64>)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        if d <= DUPLICATE_TOLERANCE {
                            return Err(perr(
                                lineno,
                                format!(
                                    "point duplicates point {} (label {})",
                                    j + 1,
                                    format_label(labels[j], bits)
                                ),
                            ));
                        }
                    }
                    points.push(coords);
                    labels.push(label);
                }
            }
        }
        let (n, m, _) = header.ok_or_else(|| perr(0, "missing `N M` header".into()))?;
        if points.len() != m {
            return Err(perr(
                text.lines().count(),
                format!("expected {m} points, found {}", points.len()),
            ));
        }
        Constellation::new(name, n, points, labels)?.normalize()
    }

    /// Loads and normalizes a constellation file; the file stem becomes the name.
    pub fn load(path: impl AsRef<Path>) -> Result<Constellation> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "constellation".into());
        Constellation::parse(&text, &name, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn format_label(label: u32, bits: usize) -> String {
    format!("{label:0bits$b}")
}

fn label_inverse(labels: &[u32], bits: usize) -> Result<Vec<usize>> {
    let mut inv = vec![usize::MAX; labels.len()];
    for (i, &l) in labels.iter().enumerate() {
        let slot = inv.get_mut(l as usize).ok_or_else(|| {
            Error::InvalidConstellation(format!("label {l} does not fit in {bits} bits"))
        })?;
        if *slot != usize::MAX {
            return Err(Error::InvalidConstellation(format!(
                "duplicate label {}",
                format_label(l, bits)
            )));
        }
        *slot = i;
    }
    Ok(inv)
}

/// Gain in dB of `c` over `reference` in uncoded high-SNR power efficiency,
/// `10 log10( (d2min(c)/Es(c)) / (d2min(ref)/Es(ref)) )`.
///
/// Both constellations must carry the same number of bits per symbol.
pub fn asymptotic_gain_db(c: &Constellation, reference: &Constellation) -> Result<f64> {
    if c.bits() != reference.bits() {
        return Err(Error::invalid(format!(
            "asymptotic gain needs equal bits per symbol ({} vs {})",
            c.bits(),
            reference.bits()
        )));
    }
    let eff = |x: &Constellation| x.min_squared_distance() / x.energy();
    Ok(10.0 * (eff(c) / eff(reference)).log10())
}

/// Gray-labeled pulse-amplitude alphabet with unit average energy.
///
/// Levels are stored in descending amplitude order; level index `i` carries
/// the binary-reflected Gray label `i ^ (i >> 1)`, so the largest amplitude
/// has the all-zero label (for 2-PAM, bit 0 maps to `+1`).
#[derive(Debug, Clone, PartialEq)]
pub struct PamAlphabet {
    levels: Vec<f64>,
    labels: Vec<u32>,
}

impl PamAlphabet {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 || !order.is_power_of_two() {
            return Err(Error::invalid(format!(
                "PAM order {order} is not a power of two >= 2"
            )));
        }
        let l = order as f64;
        let step = (3.0 / (l * l - 1.0)).sqrt();
        let levels = (0..order)
            .map(|i| (l - 1.0 - 2.0 * i as f64) * step)
            .collect();
        let labels = (0..order as u32).map(|i| i ^ (i >> 1)).collect();
        Ok(PamAlphabet { levels, labels })
    }

    pub fn order(&self) -> usize {
        self.levels.len()
    }

    pub fn bits(&self) -> usize {
        self.levels.len().trailing_zeros() as usize
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Distance between adjacent levels at unit energy.
    pub fn spacing(&self) -> f64 {
        self.levels[0] - self.levels[1]
    }
}

/// `dims`-fold Cartesian product of a PAM alphabet, normalized to unit energy.
///
/// The label of a point concatenates the per-dimension labels with the
/// first dimension in the most significant (first-transmitted) bits.
pub fn make_cartesian(pam: &PamAlphabet, dims: usize) -> Result<Constellation> {
    if dims == 0 {
        return Err(Error::invalid("Cartesian product needs dims >= 1"));
    }
    let order = pam.order();
    let b = pam.bits();
    let total = order
        .checked_pow(dims as u32)
        .filter(|&t| t.trailing_zeros() < 32)
        .ok_or_else(|| Error::invalid("Cartesian product too large"))?;
    let mut points = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut digits = vec![0usize; dims];
        for d in (0..dims).rev() {
            digits[d] = rem % order;
            rem /= order;
        }
        points.push(digits.iter().map(|&i| pam.levels[i]).collect());
        labels.push(
            digits
                .iter()
                .fold(0u32, |acc, &i| (acc << b) | pam.labels[i]),
        );
    }
    let name = match (order, dims) {
        (2, 4) => "pm-qpsk".to_string(),
        (4, 4) => "pm-16qam".to_string(),
        _ => format!("{order}pam^{dims}"),
    };
    Constellation::new(name, dims, points, labels)?.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pm_qpsk() -> Constellation {
        make_cartesian(&PamAlphabet::new(2).unwrap(), 4).unwrap()
    }

    #[test]
    fn two_pam_single_dimension() {
        let c = make_cartesian(&PamAlphabet::new(2).unwrap(), 1).unwrap();
        assert_eq!(c.size(), 2);
        assert_eq!(c.point(0), &[1.0]);
        assert_eq!(c.label(0), 0);
        assert_eq!(c.point(1), &[-1.0]);
        assert_eq!(c.label(1), 1);
        assert_abs_diff_eq!(c.energy(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.min_squared_distance(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pm_qpsk_structure() {
        let c = pm_qpsk();
        assert_eq!((c.size(), c.bits(), c.dims()), (16, 4, 4));
        for i in 0..16 {
            for (d, &v) in c.point(i).iter().enumerate() {
                assert_abs_diff_eq!(v.abs(), 0.5, epsilon = 1e-15);
                // bit d alone decides the sign of dimension d
                let expect = if c.bit(i, d) == 0 { 0.5 } else { -0.5 };
                assert_abs_diff_eq!(v, expect, epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(c.min_squared_distance(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pm_16qam_size() {
        let c = make_cartesian(&PamAlphabet::new(4).unwrap(), 4).unwrap();
        assert_eq!((c.size(), c.bits()), (256, 8));
        assert_abs_diff_eq!(c.energy(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pam_alphabet_gray_and_zero_mean() {
        for order in [2, 4, 8, 16] {
            let pam = PamAlphabet::new(order).unwrap();
            let mean: f64 = pam.levels().iter().sum::<f64>() / order as f64;
            let energy: f64 = pam.levels().iter().map(|v| v * v).sum::<f64>() / order as f64;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(energy, 1.0, epsilon = 1e-12);
            for w in pam.labels().windows(2) {
                assert_eq!((w[0] ^ w[1]).count_ones(), 1);
            }
        }
        assert!(PamAlphabet::new(3).is_err());
    }

    #[test]
    fn normalize_scales_and_is_idempotent() {
        let c = Constellation::new("x", 1, vec![vec![2.0], vec![-2.0]], vec![0, 1]).unwrap();
        let n = c.normalize().unwrap();
        assert_eq!(n.point(0), &[1.0]);
        assert_eq!(n.point(1), &[-1.0]);
        assert_eq!(n.normalize().unwrap(), n);

        let pts: Vec<Vec<f64>> = (0..16u32)
            .map(|i| {
                (0..4)
                    .map(|d| if (i >> (3 - d)) & 1 == 0 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        let raw = Constellation::new("q", 4, pts, (0..16).collect()).unwrap();
        assert_abs_diff_eq!(raw.energy(), 4.0, epsilon = 1e-12);
        let n = raw.normalize().unwrap();
        assert!(n.points().flatten().all(|v| (v.abs() - 0.5).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Constellation::new("x", 1, vec![vec![1.0], vec![1.0]], vec![0, 1]).is_err());
        assert!(Constellation::new("x", 1, vec![vec![1.0], vec![-1.0]], vec![1, 1]).is_err());
        assert!(Constellation::new(
            "x",
            1,
            vec![vec![1.0], vec![-1.0], vec![0.0]],
            vec![0, 1, 2]
        )
        .is_err());
        assert!(Constellation::new("x", 1, vec![vec![1.0], vec![-1.0]], vec![0, 2]).is_err());
    }

    #[test]
    fn parse_reports_duplicate_label_with_line() {
        let text = "# test\n1 2\n0 1.0\n0 -1.0\n";
        let err = Constellation::parse(text, "t", "t.txt").unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 4);
                assert!(msg.contains("duplicate label `0`"), "{msg}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn parse_errors() {
        let cases = [
            ("1 3\n00 1\n01 2\n10 3\n", 1),
            ("1 2\n0 1.0\n1 1.0\n", 3),
            ("1 2\n0 1.0\n1 x\n", 3),
            ("1 2\n0 1.0 2.0\n", 2),
            ("1 2\n01 1.0\n", 2),
            ("1 2\n0 1.0\n", 2),
        ];
        for (text, line) in cases {
            match Constellation::parse(text, "t", "t.txt") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pmq.txt");
        let c = pm_qpsk();
        c.save(&path).unwrap();
        let r = Constellation::load(&path).unwrap();
        assert_eq!(r.labels(), c.labels());
        for (a, b) in r.points().flatten().zip(c.points().flatten()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(c.save("").is_err());
    }

    #[test]
    fn gain_self_and_mismatch() {
        let q = pm_qpsk();
        assert_abs_diff_eq!(asymptotic_gain_db(&q, &q).unwrap(), 0.0, epsilon = 1e-12);
        let p = make_cartesian(&PamAlphabet::new(2).unwrap(), 2).unwrap();
        assert!(asymptotic_gain_db(&p, &q).is_err());
    }
}
