//! Relabeling and pairwise-swap search for GMI-maximizing labelings.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{es_n0_to_n0, substream, ChannelSpec};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::quadrature::QuadratureGrid;
use crate::rates::{rates_quadrature, DEFAULT_QUADRATURE_ORDER};

/// Replaces label `l` by `perm[l]` on every point.
pub fn apply_labeling(c: &Constellation, perm: &[u32]) -> Result<Constellation> {
    let m = c.size();
    if perm.len() != m {
        return Err(Error::invalid(format!(
            "permutation has {} entries, expected {m}",
            perm.len()
        )));
    }
    let mut seen = vec![false; m];
    for &p in perm {
        match seen.get_mut(p as usize) {
            Some(s) if !*s => *s = true,
            _ => return Err(Error::invalid("labeling permutation is not a bijection")),
        }
    }
    c.relabeled(c.labels().iter().map(|&l| perm[l as usize]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingSearchConfig {
    /// `Es/N0` values in dB; the objective is the unweighted mean GMI.
    pub targets_db: Vec<f64>,
    /// Quadrature order used while searching.
    pub search_order: usize,
    /// Quadrature order for the reported objective.
    pub final_order: usize,
    pub restarts: usize,
    /// Upper bound on full swap scans per restart.
    pub max_passes: usize,
    /// Minimum GMI gain (bit) for a swap to be accepted.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for LabelingSearchConfig {
    fn default() -> Self {
        LabelingSearchConfig {
            targets_db: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            search_order: 6,
            final_order: DEFAULT_QUADRATURE_ORDER,
            restarts: 4,
            max_passes: 1000,
            epsilon: 1e-5,
            seed: 1,
        }
    }
}

impl LabelingSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.targets_db.is_empty() {
            return Err(Error::invalid("at least one target SNR is required"));
        }
        if self.search_order == 0 || self.final_order == 0 || self.max_passes == 0 {
            return Err(Error::invalid("orders and max_passes must be positive"));
        }
        Ok(())
    }
}

/// Mean GMI over a fixed set of SNRs for any labeling of fixed points.
///
/// The likelihood terms `exp(e_ij - max)` depend only on geometry, so they
/// are computed once; a labeling only decides which of them fall in the
/// same bit class.
pub struct GmiObjective {
    m_points: usize,
    bits: usize,
    snrs: usize,
    nodes: usize,
    weights: Vec<f64>,
    /// Per (snr, i, node): `ln sum_j exp(e_ij - max)`.
    ln_all: Vec<f64>,
    /// Per (snr, i, node): the `M` normalized terms.
    terms: Vec<f64>,
}

impl GmiObjective {
    pub fn new(c: &Constellation, targets_db: &[f64], order: usize) -> Result<Self> {
        if targets_db.is_empty() {
            return Err(Error::invalid("at least one target SNR is required"));
        }
        let grid = QuadratureGrid::new(order, c.dims())?;
        let m = c.size();
        let nodes = grid.len();
        let entries = targets_db.len() * m * nodes * m;
        if entries > 200_000_000 {
            return Err(Error::invalid(format!(
                "labeling objective cache would hold {entries} terms; reduce the order or targets"
            )));
        }
        let dims = c.dims();
        let mut ln_all = Vec::with_capacity(targets_db.len() * m * nodes);
        let mut terms = Vec::with_capacity(entries);
        let mut e = vec![0.0; m];
        for &snr in targets_db {
            let n0 = es_n0_to_n0(snr);
            let s = n0.sqrt();
            for i in 0..m {
                let xi = c.point(i);
                for n in 0..nodes {
                    let t = grid.tensor_node(n);
                    let mut max = f64::NEG_INFINITY;
                    for (j, ej) in e.iter_mut().enumerate() {
                        let xj = c.point(j);
                        let mut dd = 0.0;
                        let mut dot = 0.0;
                        for d in 0..dims {
                            let diff = xi[d] - xj[d];
                            dd += diff * diff;
                            dot += diff * t[d];
                        }
                        *ej = -(dd + 2.0 * s * dot) / n0;
                        max = max.max(*ej);
                    }
                    let mut sum = 0.0;
                    for &ej in &e {
                        let v = (ej - max).exp();
                        terms.push(v);
                        sum += v;
                    }
                    ln_all.push(sum.ln());
                }
            }
        }
        Ok(GmiObjective {
            m_points: m,
            bits: c.bits(),
            snrs: targets_db.len(),
            nodes,
            weights: grid.tensor_weights().to_vec(),
            ln_all,
            terms,
        })
    }

    /// Per-target GMI for `labels[i]` assigned to point `i`.
    pub fn gmi_per_target(&self, labels: &[u32]) -> Vec<f64> {
        let m = self.m_points;
        let bits = self.bits;
        let mut out = Vec::with_capacity(self.snrs);
        let mut same = vec![0.0; bits];
        for s in 0..self.snrs {
            let mut acc = vec![0.0; bits];
            for i in 0..m {
                let li = labels[i];
                for n in 0..self.nodes {
                    let row = (s * m + i) * self.nodes + n;
                    let terms = &self.terms[row * m..(row + 1) * m];
                    same.iter_mut().for_each(|v| *v = 0.0);
                    for (j, &v) in terms.iter().enumerate() {
                        let agree = !(li ^ labels[j]);
                        for (k, sk) in same.iter_mut().enumerate() {
                            if (agree >> (bits - 1 - k)) & 1 == 1 {
                                *sk += v;
                            }
                        }
                    }
                    let w = self.weights[n];
                    let la = self.ln_all[row];
                    for (a, sk) in acc.iter_mut().zip(&same) {
                        *a += w * (la - sk.ln());
                    }
                }
            }
            let gmi: f64 = acc
                .iter()
                .map(|a| (1.0 - a * std::f64::consts::LOG2_E / m as f64).clamp(0.0, 1.0))
                .sum();
            out.push(gmi);
        }
        out
    }

    /// Mean GMI over the targets.
    pub fn evaluate(&self, labels: &[u32]) -> f64 {
        let g = self.gmi_per_target(labels);
        g.iter().sum::<f64>() / g.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub restart: usize,
    pub start_objective: f64,
    /// Objective after each accepted swap, starting with the initial one.
    pub trajectory: Vec<f64>,
    pub passes: usize,
    pub search_objective: f64,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct LabelingResult {
    pub constellation: Constellation,
    /// Mean GMI over the targets at `final_order`.
    pub objective: f64,
    /// Per-target GMI at `final_order`.
    pub per_target: Vec<f64>,
    pub best_restart: usize,
    pub restarts: Vec<RestartReport>,
}

/// Best-improvement pairwise-swap hill climbing from `start`.
///
/// Every pass scans all `M(M-1)/2` swaps and applies the one with the
/// largest gain if that gain exceeds `epsilon`; ties go to the first pair in
/// scan order. Stops on a pass with no accepted swap or after `max_passes`.
pub fn hill_climb(
    objective: &GmiObjective,
    start: Vec<u32>,
    epsilon: f64,
    max_passes: usize,
) -> (Vec<u32>, Vec<f64>, usize) {
    let m = start.len();
    let mut labels = start;
    let mut current = objective.evaluate(&labels);
    let mut trajectory = vec![current];
    let mut passes = 0;
    while passes < max_passes {
        passes += 1;
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..m {
            for b in a + 1..m {
                labels.swap(a, b);
                let v = objective.evaluate(&labels);
                labels.swap(a, b);
                if v - current > epsilon && best.is_none_or(|(_, _, bv)| v > bv) {
                    best = Some((a, b, v));
                }
            }
        }
        match best {
            Some((a, b, v)) => {
                labels.swap(a, b);
                current = v;
                trajectory.push(v);
            }
            None => break,
        }
    }
    (labels, trajectory, passes)
}

/// Searches for a labeling of `c` with high mean GMI over `cfg.targets_db`.
///
/// Each restart starts from a uniformly random labeling drawn from substream
/// `restart` of `cfg.seed`; restarts run in parallel and the winner is the
/// highest search objective, lowest restart index on ties.
pub fn optimize_labeling(c: &Constellation, cfg: &LabelingSearchConfig) -> Result<LabelingResult> {
    cfg.validate()?;
    let objective = GmiObjective::new(c, &cfg.targets_db, cfg.search_order)?;
    let reports: Vec<RestartReport> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(cfg.seed, r as u64);
            let mut start: Vec<u32> = (0..c.size() as u32).collect();
            start.shuffle(&mut rng);
            let (labels, trajectory, passes) =
                hill_climb(&objective, start, cfg.epsilon, cfg.max_passes);
            log::debug!(
                "restart {r}: {:.6} -> {:.6} in {} swaps",
                trajectory[0],
                trajectory[trajectory.len() - 1],
                trajectory.len() - 1
            );
            RestartReport {
                restart: r,
                start_objective: trajectory[0],
                search_objective: *trajectory.last().expect("non-empty"),
                trajectory,
                passes,
                labels,
            }
        })
        .collect();
    let best = reports
        .iter()
        .max_by(|a, b| {
            a.search_objective
                .total_cmp(&b.search_objective)
                .then(b.restart.cmp(&a.restart))
        })
        .expect("restarts >= 1");
    let constellation = c.relabeled(best.labels.clone())?;
    let grid = QuadratureGrid::new(cfg.final_order, c.dims())?;
    let per_target = cfg
        .targets_db
        .iter()
        .map(|&snr| {
            let ch = ChannelSpec::from_es_n0_db(snr, c.dims())?;
            Ok(rates_quadrature(&constellation, &ch, &grid)?.gmi)
        })
        .collect::<Result<Vec<_>>>()?;
    let objective = per_target.iter().sum::<f64>() / per_target.len() as f64;
    Ok(LabelingResult {
        constellation,
        objective,
        per_target,
        best_restart: best.restart,
        restarts: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{make_cartesian, PamAlphabet};

    fn pm_qpsk() -> Constellation {
        make_cartesian(&PamAlphabet::new(2).unwrap(), 4).unwrap()
    }

    #[test]
    fn apply_identity_and_reject_non_bijection() {
        let c = pm_qpsk();
        let id: Vec<u32> = (0..16).collect();
        assert_eq!(apply_labeling(&c, &id).unwrap(), c);
        let mut bad = id.clone();
        bad[3] = 4;
        assert!(apply_labeling(&c, &bad).is_err());
        assert!(apply_labeling(&c, &id[..15]).is_err());
    }

    #[test]
    fn objective_matches_rates_module() {
        let c = pm_qpsk();
        let mut perm: Vec<u32> = (0..16).collect();
        perm.swap(0, 5);
        let c2 = apply_labeling(&c, &perm).unwrap();
        let obj = GmiObjective::new(&c2, &[1.0, 5.0], 6).unwrap();
        let grid = QuadratureGrid::new(6, 4).unwrap();
        let got = obj.gmi_per_target(c2.labels());
        for (snr, g) in [1.0, 5.0].iter().zip(got) {
            let ch = ChannelSpec::from_es_n0_db(*snr, 4).unwrap();
            let r = rates_quadrature(&c2, &ch, &grid).unwrap();
            assert!((r.gmi - g).abs() < 1e-10, "{} vs {g}", r.gmi);
        }
    }

    #[test]
    fn ascent_is_strict() {
        let c = pm_qpsk();
        let obj = GmiObjective::new(&c, &[5.0], 4).unwrap();
        let mut rng = substream(2, 0);
        let mut start: Vec<u32> = (0..16).collect();
        start.shuffle(&mut rng);
        let (_, traj, _) = hill_climb(&obj, start, 1e-5, 100);
        assert!(traj.windows(2).all(|w| w[1] - w[0] > 1e-5));
    }

    #[test]
    fn seed_determinism() {
        let c = make_cartesian(&PamAlphabet::new(2).unwrap(), 3).unwrap();
        let cfg = LabelingSearchConfig {
            targets_db: vec![3.0],
            search_order: 4,
            final_order: 6,
            restarts: 2,
            ..Default::default()
        };
        let a = optimize_labeling(&c, &cfg).unwrap();
        let b = optimize_labeling(&c, &cfg).unwrap();
        assert_eq!(a.constellation, b.constellation);
        assert_eq!(a.objective, b.objective);
        let bad = LabelingSearchConfig {
            restarts: 0,
            ..cfg.clone()
        };
        assert!(optimize_labeling(&c, &bad).is_err());
    }
}
