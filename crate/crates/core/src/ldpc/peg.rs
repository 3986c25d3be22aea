//! Progressive edge-growth construction of regular-column-weight codes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LdpcCode;
use crate::channel::substream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PegConfig {
    pub n: usize,
    pub checks: usize,
    pub column_weight: usize,
    pub seed: u64,
}

/// Connects each variable node in turn to the check nodes farthest away in
/// the current graph, preferring low check degree. Check degrees are capped
/// at `ceil(n * column_weight / checks)` so the rows come out (near-)regular.
pub fn peg_construct(cfg: &PegConfig) -> Result<LdpcCode> {
    let PegConfig {
        n,
        checks: m,
        column_weight: w,
        seed,
    } = *cfg;
    if n == 0 || m == 0 || m >= n {
        return Err(Error::invalid(format!(
            "need 0 < checks < n, got n={n} checks={m}"
        )));
    }
    if w == 0 || w > m {
        return Err(Error::invalid(format!(
            "column weight {w} must be in 1..={m}"
        )));
    }
    let cap = (n * w).div_ceil(m);
    let mut rng = substream(seed, 0x9e6);
    let mut var_checks: Vec<Vec<usize>> = vec![Vec::with_capacity(w); n];
    let mut check_vars: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut seen = vec![u32::MAX; m];
    let mut stamp = 0u32;

    for v in 0..n {
        for e in 0..w {
            let open = |c: usize, cv: &Vec<Vec<usize>>, vc: &Vec<Vec<usize>>| {
                cv[c].len() < cap && !vc[v].contains(&c)
            };
            let candidates: Vec<usize> = if e == 0 {
                (0..m)
                    .filter(|&c| open(c, &check_vars, &var_checks))
                    .collect()
            } else {
                stamp += 1;
                let unreached = farthest_checks(v, &var_checks, &check_vars, &mut seen, stamp);
                let far: Vec<usize> = unreached
                    .into_iter()
                    .filter(|&c| open(c, &check_vars, &var_checks))
                    .collect();
                if far.is_empty() {
                    (0..m)
                        .filter(|&c| open(c, &check_vars, &var_checks))
                        .collect()
                } else {
                    far
                }
            };
            let min_deg = candidates
                .iter()
                .map(|&c| check_vars[c].len())
                .min()
                .ok_or_else(|| {
                    Error::invalid("PEG ran out of check nodes; raise checks or lower weight")
                })?;
            let best: Vec<usize> = candidates
                .into_iter()
                .filter(|&c| check_vars[c].len() == min_deg)
                .collect();
            let &c = best.choose(&mut rng).expect("non-empty");
            var_checks[v].push(c);
            check_vars[c].push(v);
        }
    }
    for vars in &mut check_vars {
        vars.sort_unstable();
    }
    LdpcCode::from_checks(n, check_vars)
}

/// Breadth-first expansion from variable `v`; returns the checks outside the
/// deepest neighbourhood that still leaves some checks unreached.
fn farthest_checks(
    v: usize,
    var_checks: &[Vec<usize>],
    check_vars: &[Vec<usize>],
    seen: &mut [u32],
    stamp: u32,
) -> Vec<usize> {
    let m = check_vars.len();
    let mut frontier: Vec<usize> = var_checks[v].clone();
    for &c in &frontier {
        seen[c] = stamp;
    }
    let mut reached = frontier.len();
    let mut var_seen = vec![false; var_checks.len()];
    var_seen[v] = true;
    loop {
        let mut next = Vec::new();
        for &c in &frontier {
            for &u in &check_vars[c] {
                if var_seen[u] {
                    continue;
                }
                var_seen[u] = true;
                for &c2 in &var_checks[u] {
                    if seen[c2] != stamp {
                        seen[c2] = stamp;
                        next.push(c2);
                    }
                }
            }
        }
        if next.is_empty() || reached + next.len() == m {
            // Either the component stopped growing or the next level would
            // cover everything: pick among checks not reached so far.
            let level: std::collections::HashSet<usize> = next.iter().copied().collect();
            return (0..m)
                .filter(|&c| seen[c] != stamp || level.contains(&c))
                .collect();
        }
        reached += next.len();
        frontier = next;
    }
}
