mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::Rng;
use tsmcd::refining::{min_side_events, RefineWindow};
use tsmcd::simulation::{generate, replication_seed, run_monte_carlo, ExampleId, SimDesign, SimulationReport};
use tsmcd::splitting::SolverOptions;
use tsmcd::*;

const SEED: u64 = 20240601;
const ZERO_COORDS: [usize; 6] = [7, 8, 12, 15, 16, 17];

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn monte_carlo(example: ExampleId, penalty: PenaltyKind, reps: usize) -> SimulationReport {
    let cfg = TuningConfig {
        penalty,
        seed: SEED,
        ..Default::default()
    };
    run_monte_carlo(&SimDesign::example(example, SEED), reps, &cfg).unwrap()
}

fn table1(mcp: &SimulationReport, scad: &SimulationReport) -> Line {
    let (fm, fs) = (mcp.frequency_of(2), scad.frequency_of(2));
    Line {
        id: 1,
        name: "Example 2 detection frequency",
        pass: fm >= 0.85 && fs >= 0.80,
        detail: format!(
            "MCP {fm:.3} (>= 0.85) {:?}; SCAD {fs:.3} (>= 0.80) {:?}",
            mcp.s_hat_frequency, scad.s_hat_frequency
        ),
    }
}

fn table2(reports: &[(&str, &SimulationReport)]) -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, r) in reports {
        let ok = r.threshold_bias[0].abs() <= 0.03 && r.threshold_mse[0] <= 0.03 && r.threshold_mse[1] <= 0.35;
        pass &= ok;
        parts.push(format!(
            "{name} bias(a1) {:.4} mse(a1) {:.4} mse(a2) {:.4} over {} reps",
            r.threshold_bias[0], r.threshold_mse[0], r.threshold_mse[1], r.n_correct
        ));
    }
    Line {
        id: 2,
        name: "Example 2 threshold accuracy",
        pass,
        detail: parts.join("; "),
    }
}

fn sample_size_trend(ex1: &SimulationReport, ex2: &SimulationReport) -> Line {
    let (f1, f2) = (ex1.frequency_of(2), ex2.frequency_of(2));
    Line {
        id: 3,
        name: "Example 1 degradation",
        pass: f1 >= 0.65 && f1 < f2,
        detail: format!("Example 1 {f1:.3} (>= 0.65), Example 2 {f2:.3}"),
    }
}

fn censoring_calibration() -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for ex in [ExampleId::Ex1, ExampleId::Ex2, ExampleId::Ex3, ExampleId::Null] {
        let design = SimDesign::example(ex, SEED);
        let rate = (0..1000u64)
            .map(|r| generate(&design.with_seed(replication_seed(SEED, r))).unwrap().censoring_rate())
            .sum::<f64>()
            / 1000.0;
        pass &= (rate - 0.40).abs() <= 0.05;
        parts.push(format!("{ex} {rate:.3}"));
    }
    Line {
        id: 4,
        name: "censoring rate 0.40 +- 0.05",
        pass,
        detail: parts.join(", "),
    }
}

fn sparsity(report: &SimulationReport) -> Line {
    let rates: Vec<String> = ZERO_COORDS
        .iter()
        .map(|&k| format!("{}:{:.3}", k + 1, report.exact_zero_rate[k]))
        .collect();
    Line {
        id: 5,
        name: "true-zero coordinates estimated as zero",
        pass: ZERO_COORDS.iter().all(|&k| report.exact_zero_rate[k] >= 0.70),
        detail: format!("rates {} (each >= 0.70)", rates.join(" ")),
    }
}

/// Largest event z at or below each nominal threshold.
fn snapped_thresholds(data: &SurvivalDataset, nominal: &[f64]) -> Vec<f64> {
    nominal
        .iter()
        .map(|&a| {
            (0..data.n())
                .filter(|&i| data.delta()[i] && data.z()[i] <= a)
                .map(|i| data.z()[i])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn noiseless_recovery() -> Line {
    let mut pass = true;
    let mut worst_theta: f64 = 0.0;
    let mut misses = 0;
    let instances = 10;
    for r in 0..instances {
        let mut design = SimDesign::example(ExampleId::Ex2, replication_seed(SEED, r));
        design.error_sd = 0.0;
        let first = generate(&design).unwrap();
        design.thresholds_true = snapped_thresholds(&first, &design.thresholds_true);
        let data = generate(&design).unwrap();
        let fit = tsmcd::tsmcd(&data, &TuningConfig::default()).unwrap();
        if fit.a_hat != design.thresholds_true {
            misses += 1;
            pass = false;
            continue;
        }
        let groups = data.split_by_thresholds(&design.thresholds_true);
        let restricted: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| oracle_wls(&data, g).expect("identifiable subgroup").0)
            .collect();
        let oracle = tsmcd::refining::coefficient_increments(&restricted);
        let err = fit
            .theta_star
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_theta = worst_theta.max(err);
        pass &= err <= 1e-6;
    }
    Line {
        id: 6,
        name: "noiseless exact recovery",
        pass,
        detail: format!(
            "{} of {instances} thresholds exact, max coefficient error {worst_theta:.2e} (<= 1e-6)",
            instances - misses
        ),
    }
}

fn km_oracle() -> Line {
    let mut r = rng(SEED);
    let mut worst: f64 = 0.0;
    let mut uniform_ok = true;
    for _ in 0..1000 {
        let b = r.random_range(1..=50);
        let censor = r.random::<f64>();
        let delta: Vec<bool> = (0..b).map(|_| r.random::<f64>() >= censor).collect();
        let w = km_weights(&delta).unwrap();
        for (a, o) in w.iter().zip(product_limit_jumps(&delta)) {
            worst = worst.max((a - o).abs());
        }
        let all = km_weights(&vec![true; b]).unwrap();
        uniform_ok &= all.iter().all(|&v| v == 1.0 / b as f64);
    }
    Line {
        id: 7,
        name: "Kaplan-Meier weight oracle",
        pass: worst <= 1e-12 && uniform_ok,
        detail: format!("max deviation {worst:.2e} over 1000 instances, uniform all-event weights {uniform_ok}"),
    }
}

fn solver_certificates() -> Line {
    let mut r = rng(SEED ^ 1);
    let mut failures = 0;
    let mut worst_kkt: f64 = 0.0;
    for k in 0..100u64 {
        let n = r.random_range(80..200);
        let p = r.random_range(2..5);
        let censor = r.random_range(0.0..0.5);
        let data = random_dataset(SEED.wrapping_add(k), n, p, 1.0, censor);
        let m = r.random_range(8..15);
        let seg = build_segments(&data, m).unwrap();
        let design = build_group_design(&data, &seg).unwrap();
        let lambda = r.random_range(0.05..1.0) * design.lambda_max().unwrap();
        let spec = if k % 2 == 0 {
            PenaltySpec::mcp(lambda, 2.4)
        } else {
            PenaltySpec::scad(lambda, 2.4)
        }
        .unwrap();
        let sol = group_coordinate_descent(&data, &design, &spec, SolverOptions::default(), None).unwrap();
        let monotone = sol
            .objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        let grads = design.gradient_norms(&sol.theta);
        let mut kkt_ok = true;
        for j in 1..sol.n_groups() {
            if sol.group(j).iter().all(|&v| v == 0.0) {
                worst_kkt = worst_kkt.max(grads[j] / lambda);
                kkt_ok &= grads[j] <= lambda * (1.0 + 1e-4);
            }
        }
        if !(sol.converged && monotone && kkt_ok) {
            failures += 1;
        }
    }
    Line {
        id: 8,
        name: "solver certificates",
        pass: failures == 0,
        detail: format!("{failures} of 100 instances failed, max zero-group gradient / lambda {worst_kkt:.6}"),
    }
}

fn refine_equivalence() -> Line {
    let mut r = rng(SEED ^ 2);
    let mut mismatches = 0;
    let mut compared = 0;
    for k in 0..100u64 {
        let n = r.random_range(40..120);
        let p = r.random_range(1..4);
        let data = random_dataset(SEED.wrapping_add(1000 + k), n, p.max(2), 1.0, 0.3);
        let lower = r.random_range(-2.0..0.0);
        let upper = lower + r.random_range(1.0..3.0);
        let min_side = min_side_events(data.p());
        let window = RefineWindow::new(&data, lower, upper, min_side);
        let ours = refine_threshold(&data, &window).ok();
        let oracle = brute_force_refine(&data, lower, upper, min_side);
        match (ours, oracle) {
            (Some((a, _)), Some((b, _))) => {
                compared += 1;
                if a != b {
                    mismatches += 1;
                }
            }
            (None, None) => {}
            _ => mismatches += 1,
        }
    }
    Line {
        id: 9,
        name: "refinement matches exhaustive scan",
        pass: mismatches == 0,
        detail: format!("{mismatches} mismatches over 100 windows ({compared} with an admissible split)"),
    }
}

fn null_control(report: &SimulationReport) -> Line {
    let f0 = report.frequency_of(0);
    Line {
        id: 10,
        name: "null-model control",
        pass: f0 >= 0.90,
        detail: format!("s_hat = 0 in {f0:.2} of {} reps (>= 0.90) {:?}", report.reps, report.s_hat_frequency),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let ex2_mcp = monte_carlo(ExampleId::Ex2, PenaltyKind::Mcp, 200);
    let ex2_scad = monte_carlo(ExampleId::Ex2, PenaltyKind::Scad, 200);
    let ex1_mcp = monte_carlo(ExampleId::Ex1, PenaltyKind::Mcp, 200);
    let null_mcp = monte_carlo(ExampleId::Null, PenaltyKind::Mcp, 100);

    let lines = vec![
        table1(&ex2_mcp, &ex2_scad),
        table2(&[("MCP", &ex2_mcp), ("SCAD", &ex2_scad)]),
        sample_size_trend(&ex1_mcp, &ex2_mcp),
        censoring_calibration(),
        sparsity(&ex2_mcp),
        noiseless_recovery(),
        km_oracle(),
        solver_certificates(),
        refine_equivalence(),
        null_control(&null_mcp),
    ];
    let mut failed = 0;
    for line in &lines {
        let tag = if line.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {:>2}: {} - {}", line.id, line.name, line.detail);
        failed += usize::from(!line.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1?}",
        lines.len() - failed,
        start.elapsed()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
