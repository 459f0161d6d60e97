//! Acceptance suite: one test per criterion, each printing a single
//! `PASS`/`FAIL` line with the measured values before asserting.
//!
//! Run with `cargo test -p kgqv --test acceptance -- --nocapture` to see the
//! verdict lines. Runtime budgets are reported next to each verdict but not
//! asserted, since tests share cores with each other.

use std::sync::OnceLock;
use std::time::Instant;

use kgqv::coords::RotatedGrid;
use kgqv::harness::{self, ExperimentConfig, ExperimentId, ExperimentReport, RawConfig};
use kgqv::noise::NoiseField;
use kgqv::solver::{march, picard_trace, sup_distance, DiffusionCoefficient};
use proptest::prelude::*;

fn config(id: ExperimentId, tweak: impl FnOnce(&mut RawConfig)) -> ExperimentConfig {
    let mut raw = RawConfig {
        experiment: Some(id),
        ..Default::default()
    };
    tweak(&mut raw);
    harness::resolve(raw).expect("valid configuration")
}

fn timed(cfg: &ExperimentConfig) -> (ExperimentReport, f64) {
    let t = Instant::now();
    let report = harness::run(cfg).expect("experiment runs");
    (report, t.elapsed().as_secs_f64())
}

fn verdict(id: u32, title: &str, passed: bool, detail: &str, secs: f64, budget: &str) {
    println!(
        "criterion {id:>2} {} {title}: {detail} [{secs:.1} s, budget {budget}]",
        if passed { "PASS" } else { "FAIL" }
    );
}

fn rows<'a>(r: &'a ExperimentReport, group: &str, statistic: &str) -> Vec<&'a harness::Row> {
    r.rows
        .iter()
        .filter(|row| row.group == group && row.statistic == statistic)
        .collect()
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    kgqv::stats::loglog_fit(xs, ys).map_or(f64::NAN, |f| f.slope)
}

#[test]
fn criterion_01_green_identities() {
    let (r, secs) = timed(&config(ExperimentId::GreenIdentities, |_| {}));
    let sweep: Vec<f64> = r.rows.iter().filter(|x| x.statistic == "rel_diff").map(|x| x.value).collect();
    let worst = sweep.iter().cloned().fold(0.0, f64::max);
    let mut regimes: Vec<&str> = r
        .rows
        .iter()
        .filter(|x| x.statistic == "rel_diff")
        .map(|x| x.group.split_whitespace().next().unwrap())
        .collect();
    regimes.sort_unstable();
    regimes.dedup();
    let init: f64 = r
        .rows
        .iter()
        .filter(|x| x.statistic.ends_with("_value_at_0"))
        .map(|x| x.value.abs())
        .fold(0.0, f64::max);
    let slope: f64 = r
        .rows
        .iter()
        .filter(|x| x.statistic.ends_with("_slope_at_0"))
        .map(|x| (x.value - 1.0).abs())
        .fold(0.0, f64::max);
    let ok = sweep.len() >= 1000 && worst <= 1e-10 && regimes.len() == 3 && init <= 1e-6 && slope <= 1e-6;
    verdict(
        1,
        "green-function identities",
        ok,
        &format!(
            "{} points, max rel diff {worst:.2e}, regimes {regimes:?}, |G(0)| {init:.1e}, |dG(0)-1| {slope:.1e}",
            sweep.len()
        ),
        secs,
        "1 s",
    );
    assert!(ok);
}

#[test]
fn criterion_02_kernel_lemma() {
    let cfg = config(ExperimentId::KernelLemma, |_| {});
    let (r, secs) = timed(&cfg);
    let eps_min = cfg.eps.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut failures = vec![];
    let mut detail = vec![];
    for &a in &[0.0, 1.0, 2.0] {
        for &p in &[1.0, 2.0] {
            let group = format!("a={a} p={p}");
            let target = 2f64.powf(-p);
            let ratios = rows(&r, &group, "ratio");
            let at_min = ratios.iter().find(|x| x.control_value == eps_min).unwrap().value;
            let close = (at_min / target - 1.0).abs() <= 0.05;
            let eps: Vec<f64> = ratios.iter().map(|x| x.control_value).collect();
            let devs: Vec<f64> = ratios.iter().map(|x| (x.value - target).abs()).collect();
            let exact = devs.iter().all(|&d| d <= 1e-9 * target);
            let slope = if exact { f64::INFINITY } else { loglog_slope(&eps, &devs) };
            let shrinks = slope >= 0.9;
            detail.push(format!("{group}: ratio {at_min:.4} slope {slope:.2}"));
            if !(close && shrinks) {
                failures.push(group);
            }
        }
    }
    let ok = failures.is_empty();
    verdict(2, "kernel second-difference quadrature", ok, &detail.join("; "), secs, "30 s");
    assert!(ok, "failing cases: {failures:?}");
}

#[test]
fn criterion_03_linear_increment() {
    let cfg = config(ExperimentId::LinearVariance, |_| {});
    assert_eq!(cfg.reps, 100_000);
    assert_eq!((cfg.params.a, cfg.params.m), (1.0, 0.5));
    let (r, secs) = timed(&cfg);
    let group = "point=(0.5,0.5)";
    let est = rows(&r, group, "l2_norm");
    let finest = est
        .iter()
        .min_by(|a, b| a.control_value.total_cmp(&b.control_value))
        .unwrap();
    assert_eq!(finest.control_value, 2f64.powi(-8));
    let rel = (finest.value / (0.5 * finest.control_value) - 1.0).abs();
    let eps: Vec<f64> = est.iter().map(|x| x.control_value).collect();
    let devs: Vec<f64> = est.iter().map(|x| (x.value - 0.5 * x.control_value).abs()).collect();
    let slope = loglog_slope(&eps, &devs);
    let ok = rel <= 0.02 && slope >= 1.4;
    verdict(
        3,
        "linear increment L2 norm",
        ok,
        &format!("|est/(eps/2) - 1| = {rel:.2e} at eps=2^-8, deviation slope {slope:.3}"),
        secs,
        "5 min",
    );
    assert!(ok);
}

fn remainder_report() -> &'static (ExperimentReport, f64) {
    static REPORT: OnceLock<(ExperimentReport, f64)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let cfg = config(ExperimentId::RemainderRate, |_| {});
        assert_eq!(cfg.reps, 500);
        assert_eq!(cfg.eps.len(), 6);
        timed(&cfg)
    })
}

fn remainder_slopes(prefix: &str) -> Vec<(String, f64)> {
    let (r, _) = remainder_report();
    let mut groups: Vec<&str> = r
        .rows
        .iter()
        .filter(|x| x.group.starts_with(prefix))
        .map(|x| x.group.as_str())
        .collect();
    groups.dedup();
    groups
        .into_iter()
        .map(|g| {
            let pts = rows(r, g, "l2_norm");
            let xs: Vec<f64> = pts.iter().map(|x| x.control_value).collect();
            let ys: Vec<f64> = pts.iter().map(|x| x.value).collect();
            (g.to_string(), loglog_slope(&xs, &ys))
        })
        .collect()
}

#[test]
fn criterion_04_remainder_rate() {
    let slopes = remainder_slopes("rotated");
    let secs = remainder_report().1;
    assert_eq!(slopes.len(), 6, "three points, two signs");
    let ok = slopes.iter().all(|(_, s)| (1.35..=1.65).contains(s));
    let detail: Vec<String> = slopes.iter().map(|(g, s)| format!("{g}: {s:.3}")).collect();
    verdict(4, "remainder rate", ok, &detail.join("; "), secs, "10 min");
    assert!(ok);
}

#[test]
fn criterion_05_original_coordinates() {
    let slopes = remainder_slopes("original");
    let secs = remainder_report().1;
    assert_eq!(slopes.len(), 6, "three points, two stencils");
    let ok = slopes.iter().all(|(_, s)| (1.35..=1.65).contains(s));
    let detail: Vec<String> = slopes.iter().map(|(g, s)| format!("{g}: {s:.3}")).collect();
    verdict(5, "original-coordinate remainder rate", ok, &detail.join("; "), secs, "shared with 4");
    assert!(ok);
}

fn quadvar_report() -> &'static (ExperimentReport, f64) {
    static REPORT: OnceLock<(ExperimentReport, f64)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let cfg = config(ExperimentId::QuadvarRate, |_| {});
        assert_eq!(cfg.reps, 500);
        assert_eq!(cfg.linear_resolutions, vec![64, 128, 256]);
        assert_eq!(cfg.resolutions, vec![64, 128, 256, 512]);
        timed(&cfg)
    })
}

#[test]
fn criterion_06_linear_quadratic_variation() {
    let (r, secs) = quadvar_report();
    let means = rows(r, "linear", "mean_q");
    let zs: Vec<f64> = means.iter().map(|x| (x.value - 0.25) / x.std_error).collect();
    let vars = rows(r, "linear", "var_q");
    let ns: Vec<f64> = vars.iter().map(|x| x.control_value).collect();
    let vs: Vec<f64> = vars.iter().map(|x| x.value).collect();
    let slope = loglog_slope(&ns, &vs);
    let means_ok = zs.iter().all(|z| z.abs() <= 3.0);
    let slope_ok = (slope - -1.0).abs() <= 0.3;
    let ok = means_ok && slope_ok;
    verdict(
        6,
        "quadratic variation of the linear field",
        ok,
        &format!(
            "z-scores of mean - 1/4 at N=64,128,256: {:?}; variance slope {slope:.3} (target -1 ± 0.3)",
            zs.iter().map(|z| format!("{z:.2}")).collect::<Vec<_>>()
        ),
        *secs,
        "5 min",
    );
    assert!(ok);
}

#[test]
fn criterion_07_nonlinear_quadratic_variation() {
    let (r, secs) = quadvar_report();
    let group = format!("nonlinear F={}", r.config.diffusion.id());
    let errs = rows(r, &group, "mean_abs_error");
    let ns: Vec<f64> = errs.iter().map(|x| x.control_value).collect();
    let es: Vec<f64> = errs.iter().map(|x| x.value).collect();
    let decay = -loglog_slope(&ns, &es);
    let ok = (0.35..=0.65).contains(&decay);
    verdict(
        7,
        "nonlinear quadratic variation",
        ok,
        &format!("mean |Q_N(v) - limit| over N=64..512: {es:?}; decay exponent {decay:.3}"),
        *secs,
        "15 min",
    );
    assert!(ok);
}

#[test]
fn criterion_08_estimator_consistency() {
    let cfg = config(ExperimentId::EstimatorConsistency, |_| {});
    assert_eq!(cfg.params.theta, 2.0);
    assert_eq!(cfg.diffusion, DiffusionCoefficient::ShiftedSine { c0: 2.0, c1: 1.0 });
    assert_eq!(cfg.reps, 200);
    let (r, secs) = timed(&cfg);
    let med = rows(&r, "estimator", "median_rel_error");
    let values: Vec<f64> = med.iter().map(|x| x.value).collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0]);
    let last = *values.last().unwrap();
    let ok = monotone && last < 0.05 && med.last().unwrap().control_value == 512.0;
    verdict(
        8,
        "diffusion estimator consistency",
        ok,
        &format!("median relative errors over N=64..512: {values:.4?}"),
        secs,
        "15 min",
    );
    assert!(ok);
}

fn thresholds() -> Vec<(u32, f64)> {
    let raw: std::collections::BTreeMap<String, f64> =
        serde_json::from_str(harness::ORACLE_THRESHOLDS_JSON).unwrap();
    raw.into_iter().map(|(k, v)| (k.parse().unwrap(), v)).collect()
}

#[test]
fn criterion_09_oracle_equivalence() {
    let (r, secs) = timed(&config(ExperimentId::OracleCheck, |_| {}));
    let th = thresholds();
    let maxes = rows(&r, "scheme_vs_oracle", "max_sup_diff");
    let means = rows(&r, "scheme_vs_oracle", "mean_sup_diff");
    let below = th.iter().all(|&(n, t)| {
        maxes
            .iter()
            .find(|x| x.control_value == f64::from(n))
            .is_some_and(|x| x.value <= t)
    });
    let decreasing = means.windows(2).all(|w| w[1].value < w[0].value);
    let ok = below && decreasing && th.len() == 2;
    verdict(
        9,
        "scheme vs Picard oracle",
        ok,
        &format!(
            "max sup diff {:?} vs thresholds {th:?}; mean sup diff {:?}",
            maxes.iter().map(|x| (x.control_value, x.value)).collect::<Vec<_>>(),
            means.iter().map(|x| (x.control_value, x.value)).collect::<Vec<_>>()
        ),
        secs,
        "1 min",
    );
    assert!(ok);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn criterion_09_oracle_threshold_holds_for_any_seed(seed in any::<u64>()) {
        let params = kgqv::greens::PhysParams::new(1.0, 0.25, 1.0).unwrap();
        let f = DiffusionCoefficient::ShiftedSine { c0: 2.0, c1: 1.0 };
        for (n, t) in thresholds() {
            let noise = NoiseField::generate(RotatedGrid::unit(n).unwrap(), seed);
            let scheme = march(&params, &f, &noise).unwrap();
            let oracle = picard_trace(&params, &f, &noise, 60).unwrap();
            let d = sup_distance(&scheme, &oracle.field).unwrap();
            prop_assert!(d <= t, "n={} seed={} sup diff {} > {}", n, seed, d, t);
        }
    }
}

fn fingerprint(cfg: &ExperimentConfig) -> (Vec<u8>, String) {
    let report = harness::run(cfg).expect("experiment runs");
    let mut csv = Vec::new();
    harness::write_csv(&report, &mut csv).unwrap();
    (csv, harness::summary_json(&report, 0.0))
}

#[test]
fn criterion_10_determinism() {
    let t = Instant::now();
    let small: Vec<ExperimentConfig> = vec![
        config(ExperimentId::GreenIdentities, |c| c.reps = Some(200)),
        config(ExperimentId::KernelLemma, |c| c.eps = Some(vec![0.0625, 0.03125])),
        config(ExperimentId::LinearVariance, |c| {
            c.n = Some(64);
            c.eps = Some(vec![0.125, 0.0625, 0.03125]);
            c.reps = Some(300);
        }),
        config(ExperimentId::RemainderRate, |c| {
            c.n = Some(64);
            c.eps = Some(vec![0.25, 0.125, 0.0625]);
            c.reps = Some(12);
        }),
        config(ExperimentId::QuadvarRate, |c| {
            c.n = Some(64);
            c.resolutions = Some(vec![16, 32, 64]);
            c.linear_resolutions = Some(vec![16, 32]);
            c.reps = Some(12);
        }),
        config(ExperimentId::EstimatorConsistency, |c| {
            c.n = Some(64);
            c.resolutions = Some(vec![16, 32, 64]);
            c.reps = Some(12);
        }),
        config(ExperimentId::OracleCheck, |c| c.reps = Some(4)),
    ];
    let mut mismatches = vec![];
    for base in &small {
        let serial = ExperimentConfig {
            jobs: Some(1),
            ..base.clone()
        };
        let parallel = ExperimentConfig {
            jobs: Some(3),
            ..base.clone()
        };
        let a = fingerprint(&serial);
        let b = fingerprint(&serial);
        let c = fingerprint(&parallel);
        if a != b || a != c {
            mismatches.push(base.experiment);
        }
    }
    let ok = mismatches.is_empty();
    verdict(
        10,
        "determinism",
        ok,
        &format!("{} experiments re-run serially and on 3 threads; mismatches {mismatches:?}", small.len()),
        t.elapsed().as_secs_f64(),
        "CI re-runs",
    );
    assert!(ok);
}
