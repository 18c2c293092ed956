//! Acceptance gate: one test per criterion, each ending with a pass line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use water_market::analysis::{
    mispriced_control, nash_deviation_test, pareto_scan, total_welfare, welfare_gap,
};
use water_market::calibration::{
    aggregate_model_price, fit_hara_yield, fit_market_aggregates, fitted_price, hara_yield,
    reproduce_table, MarketRow, YieldDatum,
};
use water_market::common_pool::{
    clear_market, clearing_price_closed_form, clearing_price_numeric, individual_optimum,
    verify_kkt,
};
use water_market::io::ingest_market_csv;
use water_market::market_core::{
    agricultural_utility, hara_argument, marginal_agricultural_utility,
};
use water_market::pairwise::{
    deferred_acceptance, enumerate_pairings, find_blocking_pair, pairing_welfare, stage_bound,
    PairingStrategy, PreferenceTable,
};
use water_market::scenario::{
    run_scenario, Experiment, GeneratorSpec, OutputSpec, ReportFormat, Scenario,
};
use water_market::{MarketConfig, Participant};

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// A market whose equilibrium keeps every participant interior (no clamping).
///
/// Rejection-samples mildly heterogeneous populations; falls back to a
/// homogeneous (a, b) population, which is interior by construction, if the
/// draw is unlucky.
fn interior_market(rng: &mut ChaCha8Rng) -> (Vec<Participant>, MarketConfig) {
    let n = rng.gen_range(2..=50usize);
    let gamma = rng.gen_range(0.1..0.9);
    let cfg = MarketConfig::new(
        gamma,
        0.06,
        rng.gen_range(0.2..1.0),
        rng.gen_range(100.0..400.0),
    );
    for _ in 0..200 {
        let ps: Vec<Participant> = (0..n)
            .map(|i| {
                Participant::new(
                    format!("p{i}"),
                    rng.gen_range(0.8..1.25),
                    rng.gen_range(0.05..0.5),
                    rng.gen_range(1.0..20.0),
                )
            })
            .collect();
        if let Ok(q) = clearing_price_closed_form(&ps, &cfg) {
            let interior = ps
                .iter()
                .all(|p| individual_optimum(q, p, &cfg).map_or(false, |a| !a.clamped));
            if interior {
                return (ps, cfg);
            }
        }
    }
    let a = rng.gen_range(0.8..1.25);
    let b = rng.gen_range(0.05..0.5);
    let ps = (0..n)
        .map(|i| Participant::new(format!("p{i}"), a, b, rng.gen_range(1.0..20.0)))
        .collect();
    (ps, cfg)
}

/// A general population: heterogeneous enough that clamping can occur.
fn random_population(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Participant>, MarketConfig) {
    let cfg = MarketConfig::new(
        rng.gen_range(0.15..0.85),
        0.06,
        rng.gen_range(0.2..1.0),
        rng.gen_range(100.0..400.0),
    );
    let ps = (0..n)
        .map(|i| {
            Participant::new(
                format!("p{i}"),
                rng.gen_range(0.3..3.0),
                rng.gen_range(0.05..1.5),
                rng.gen_range(0.5..40.0),
            )
        })
        .collect();
    (ps, cfg)
}

#[test]
fn criterion_01_clearing_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
    for case in 0..1000 {
        let (ps, cfg) = interior_market(&mut rng);
        let closed = clearing_price_closed_form(&ps, &cfg).unwrap();
        let numeric = clearing_price_numeric(&ps, &cfg).unwrap();
        let rel = (closed - numeric).abs() / numeric;
        assert!(rel <= 1e-8, "case {case}: closed {closed} vs numeric {numeric}, rel {rel}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() <= 10.0, "took {elapsed:?}, budget 10 s");
    println!("criterion 1 (closed-form vs numeric clearing price, 1000 markets): pass");
}

#[test]
fn criterion_02_kkt_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
    for case in 0..1000 {
        let (ps, cfg) = interior_market(&mut rng);
        let res = clear_market(&ps, &cfg).unwrap();
        let report = verify_kkt(&res, &ps, &cfg);
        assert!(report.pass(), "case {case}: KKT report {report:?}");
        let w: f64 = ps.iter().map(|p| p.w).sum();
        assert!(res.clearing_residual() <= 1e-9 * w, "case {case}: residual too large");
    }
    println!("criterion 2 (KKT verification on 1000 markets): pass");
}

#[test]
fn criterion_03_welfare_dominance_exhaustive() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0003);
    for n in [4usize, 6] {
        let pairings = enumerate_pairings(n);
        assert_eq!(pairings.len(), if n == 4 { 3 } else { 15 });
        for case in 0..200 {
            let (ps, cfg) = random_population(&mut rng, n);
            let res = clear_market(&ps, &cfg).unwrap();
            let u_common = total_welfare(&res.allocations, res.q, &ps, &cfg).unwrap();
            let tol = 1e-9 * u_common.abs();
            for pairing in &pairings {
                let u_pair = pairing_welfare(&ps, pairing, &cfg).unwrap();
                assert!(
                    u_common - u_pair >= -tol,
                    "n = {n}, case {case}: pairing {pairing:?} beats the pool by {}",
                    u_pair - u_common
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() <= 30.0, "took {elapsed:?}, budget 30 s");
    println!("criterion 3 (welfare dominance vs every perfect pairing, n = 4 and 6): pass");
}

#[test]
fn criterion_04_welfare_dominance_sampled() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0004);
    let strategies =
        [PairingStrategy::Random, PairingStrategy::Greedy, PairingStrategy::Stable];
    for case in 0..500 {
        let n = rng.gen_range(2..=20usize);
        let (ps, cfg) = random_population(&mut rng, n);
        for strategy in strategies {
            let report = welfare_gap(&ps, &cfg, strategy, 1000 + case).unwrap();
            assert!(
                report.dominance_holds(),
                "case {case}, n = {n}, {strategy:?}: gap {}",
                report.gap
            );
        }
    }
    println!("criterion 4 (welfare dominance, 500 sampled populations x 3 strategies): pass");
}

#[test]
fn criterion_05_no_pareto_improvement() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0005);
    for case in 0..200u64 {
        let n = rng.gen_range(3..=12usize);
        let (ps, cfg) = random_population(&mut rng, n);
        let res = clear_market(&ps, &cfg).unwrap();
        let scan = pareto_scan(&res, &ps, &cfg, 50, 7000 + case).unwrap();
        assert!(
            scan.pass,
            "case {case}: max_f = {}, slopes = {:?}",
            scan.max_f, scan.fprime_at_zero
        );
        if case % 10 == 0 {
            let control = mispriced_control(&res, &ps, &cfg, 1.1).unwrap();
            let control_scan = pareto_scan(&control, &ps, &cfg, 50, 7000 + case).unwrap();
            assert!(!control_scan.pass, "case {case}: negative control passed the scan");
        }
    }
    println!("criterion 5 (Pareto scan on 200 equilibria; mispriced control fails): pass");
}

#[test]
fn criterion_06_no_profitable_deviation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0006);
    for case in 0..200u64 {
        let n = rng.gen_range(2..=15usize);
        let (ps, cfg) = random_population(&mut rng, n);
        let res = clear_market(&ps, &cfg).unwrap();
        let report = nash_deviation_test(&res, &ps, &cfg, 100, 9000 + case).unwrap();
        assert!(report.pass, "case {case}: max_delta = {}", report.max_delta);
    }
    println!("criterion 6 (no profitable unilateral deviation, 200 equilibria): pass");
}

fn random_prefs(rng: &mut ChaCha8Rng, nb: usize, ns: usize) -> PreferenceTable {
    use rand::seq::SliceRandom;
    let perm = |rng: &mut ChaCha8Rng, len: usize| {
        let mut v: Vec<usize> = (0..len).collect();
        v.shuffle(rng);
        v
    };
    PreferenceTable {
        buyers: (0..nb).collect(),
        sellers: (nb..nb + ns).collect(),
        buyer_prefs: (0..nb).map(|_| perm(rng, ns)).collect(),
        seller_prefs: (0..ns).map(|_| perm(rng, nb)).collect(),
    }
}

fn check_matching(prefs: &PreferenceTable, label: &str) {
    let matching = deferred_acceptance(prefs);
    let bound = stage_bound(prefs.buyers.len(), prefs.sellers.len());
    assert!(
        matching.stages <= bound,
        "{label}: {} stages exceeds bound {bound}",
        matching.stages
    );
    assert!(
        find_blocking_pair(&matching, prefs).is_none(),
        "{label}: matching has a blocking pair"
    );
}

#[test]
fn criterion_07_stable_matching_stage_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0007);
    for case in 0..500 {
        let (nb, ns) = if case % 50 == 0 {
            (100, 100)
        } else {
            (rng.gen_range(1..=25), rng.gen_range(1..=25))
        };
        let prefs = random_prefs(&mut rng, nb, ns);
        check_matching(&prefs, &format!("random case {case}"));
    }
    // Adversarial: every buyer ranks sellers identically and every seller
    // ranks buyers in the exact opposite order, maximizing rejections.
    for k in 1..=10usize {
        let n = 10 * k;
        let prefs = PreferenceTable {
            buyers: (0..n).collect(),
            sellers: (n..2 * n).collect(),
            buyer_prefs: (0..n).map(|_| (0..n).collect()).collect(),
            seller_prefs: (0..n).map(|_| (0..n).rev().collect()).collect(),
        };
        check_matching(&prefs, &format!("adversarial n = {n}"));
    }
    println!("criterion 7 (deferred acceptance: stage bound and stability): pass");
}

#[test]
fn criterion_08_monthly_table_reproduction() {
    let rows = ingest_market_csv(&data_path("table1.csv")).unwrap();
    let fit = fit_market_aggregates(&rows, 0.06, 15).unwrap();
    let table = reproduce_table(&fit, &rows).unwrap();

    let jul = table.rows.iter().find(|r| r.month == "JUL").unwrap();
    let primary = table.rms_vs_reference.map_or(false, |rms| rms <= 0.05)
        && (jul.fitted_price - 262.6).abs() / 262.6 <= 0.03;

    if primary {
        println!(
            "criterion 8 (monthly table, value-based: rms {} vs model column): pass",
            table.rms_vs_reference.unwrap()
        );
        return;
    }

    // Fallback: the fitted price family must behave qualitatively — strictly
    // decreasing in total water, linear in the crop price — and track the
    // actual column within 10% in at least 9 of 12 months, with only the two
    // known outlier months exempt.
    let mut last = f64::INFINITY;
    for w in [30.0, 40.0, 50.0, 60.0, 70.0, 80.0] {
        let p = fitted_price(&fit, w, 280.0).unwrap();
        assert!(p < last, "fitted price not decreasing in water at {w} GL");
        last = p;
    }
    let p1 = fitted_price(&fit, 50.0, 280.0).unwrap();
    let p2 = fitted_price(&fit, 50.0, 560.0).unwrap();
    assert!((p2 - 2.0 * p1).abs() <= 1e-9 * p2, "fitted price not linear in crop price");
    assert!(
        table.months_under_10pct >= 9,
        "only {} months within 10%",
        table.months_under_10pct
    );
    for row in &table.rows {
        if row.month != "DEC" && row.month != "MAR" {
            assert!(
                row.residual_vs_actual < 0.10,
                "{} off by {}",
                row.month,
                row.residual_vs_actual
            );
        }
    }
    println!("criterion 8 (monthly table, property-based fallback): pass");
}

#[test]
fn criterion_09_calibration_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0009);

    // Yield curve: parameters recovered from noise-free samples.
    for case in 0..50 {
        let a = rng.gen_range(0.5..3.0);
        let b = rng.gen_range(0.1..2.0);
        let gamma = rng.gen_range(0.15..0.85);
        let data: Vec<YieldDatum> = [0.5, 1.0, 2.0, 3.5, 5.0, 7.0, 9.0, 12.0]
            .iter()
            .map(|&w| YieldDatum { water: w, yield_t: hara_yield(w, a, b, gamma) })
            .collect();
        let fit = fit_hara_yield(&data).unwrap();
        for (name, truth) in [("a", a), ("b", b), ("gamma", gamma)] {
            let got = fit.param(name).unwrap();
            assert!(
                (got - truth).abs() / truth.abs().max(1e-6) <= 1e-4,
                "case {case}: {name} = {got}, expected {truth}"
            );
        }
    }

    // Aggregate price model: s_a and T act only through one multiplicative
    // constant at fixed gamma, so individual values are not identifiable;
    // the round-trip contract is on the predicted prices.
    for case in 0..50 {
        let s_b = rng.gen_range(1e2..1e5);
        let s_a = 10f64.powf(rng.gen_range(-1.0..4.0));
        let gamma = rng.gen_range(0.15..0.85);
        let t = rng.gen_range(0.3..1.1);
        let rows: Vec<MarketRow> = (0..8)
            .map(|m| {
                let water_gl = rng.gen_range(20.0..90.0);
                let crop_price = rng.gen_range(200.0..320.0);
                let price = aggregate_model_price(
                    water_gl * 1000.0,
                    crop_price,
                    s_b,
                    s_a,
                    gamma,
                    0.06,
                    t,
                );
                MarketRow {
                    month: format!("M{m}"),
                    water_gl,
                    actual_price: price,
                    crop_price,
                    model_price: Some(price),
                    residual: None,
                }
            })
            .collect();
        let fit = fit_market_aggregates(&rows, 0.06, 15).unwrap();
        for row in &rows {
            let predicted = fitted_price(&fit, row.water_gl, row.crop_price).unwrap();
            let target = row.model_price.unwrap();
            assert!(
                (predicted - target).abs() / target <= 1e-4,
                "case {case}, {}: predicted {predicted}, target {target}",
                row.month
            );
        }
    }
    println!("criterion 9 (calibration round-trip, 50 + 50 seeded draws): pass");
}

#[test]
fn criterion_10_gradient_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0010);
    let mut checked = 0;
    while checked < 1000 {
        let p = Participant::new(
            "g",
            rng.gen_range(0.2..4.0),
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.5..50.0),
        );
        let cfg = MarketConfig::new(
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.0..0.12),
            rng.gen_range(0.1..1.2),
            rng.gen_range(100.0..400.0),
        );
        let w_ag: f64 = rng.gen_range(0.1..100.0);
        let h = 1e-6 * w_ag.max(1.0);
        if hara_argument(w_ag - h, &p, &cfg) <= 1e-6 {
            continue;
        }
        let analytic = marginal_agricultural_utility(w_ag, &p, &cfg).unwrap();
        let numeric = (agricultural_utility(w_ag + h, &p, &cfg).unwrap()
            - agricultural_utility(w_ag - h, &p, &cfg).unwrap())
            / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs();
        assert!(rel <= 1e-6, "w_ag = {w_ag}: analytic {analytic}, numeric {numeric}");
        checked += 1;
    }
    println!("criterion 10 (marginal utility vs central differences, 1000 points): pass");
}

#[test]
fn criterion_11_deterministic_reports() {
    let dir = std::env::temp_dir().join(format!("acceptance-determinism-{}", std::process::id()));
    let scenario = Scenario {
        config: MarketConfig::new(0.5, 0.06, 0.5, 280.0),
        participants: None,
        generator: Some(GeneratorSpec {
            count: 8,
            a_range: [0.3, 3.0],
            b_range: [0.05, 1.5],
            w_range: [0.5, 40.0],
        }),
        experiments: vec![
            Experiment::Clear,
            Experiment::Pairwise,
            Experiment::Compare,
            Experiment::Pareto,
            Experiment::Nash,
        ],
        seed: Some(99),
        strategy: Some(PairingStrategy::Stable),
        data: None,
        output: Some(OutputSpec { path: dir.clone(), format: ReportFormat::Json }),
    };

    let read_all = |dir: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        ["clear", "pairwise", "compare", "pareto", "nash"]
            .iter()
            .map(|name| {
                let bytes = std::fs::read(dir.join(format!("{name}.json"))).unwrap();
                (name.to_string(), bytes)
            })
            .collect()
    };

    run_scenario(&scenario).unwrap();
    let first = read_all(&dir);
    run_scenario(&scenario).unwrap();
    let second = read_all(&dir);
    std::fs::remove_dir_all(&dir).ok();

    for ((name, a), (_, b)) in first.iter().zip(&second) {
        assert_eq!(a, b, "report {name} differs between reruns");
        assert!(!a.is_empty(), "report {name} is empty");
    }
    println!("criterion 11 (byte-identical reports on rerun): pass");
}
