//! Acceptance gate: one PASS/FAIL line per criterion, with its runtime bound.
//! Exits non-zero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use depfusion_core::config::RunConfig;
use depfusion_core::pgmf::FusionVariant;
use depfusion_core::verify::suites::{reconstruction_error, GAP_100_LIMIT};
use depfusion_core::verify::{
    focal_loss, run_complexity_suite, run_decay_suite, run_suite, smooth_l1, total_loss, LossConfig, Suite,
    SuiteOptions, VerifyReport, COMPLEXITY_SIZES,
};
use depfusion_core::wavelet::Basis;

const SEED: u64 = 42;
const BENCH_REPEATS: usize = 15;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    limit: Option<Duration>,
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

/// `name <= tol` (or `== tol`) for a list of named suite checks.
fn from_checks(report: &VerifyReport, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for &n in names {
        match report.check(n) {
            Some(c) => {
                ok &= c.passed;
                parts.push(format!("{n}={:.3e} (tol {:.1e})", c.observed, c.tolerance));
            }
            None => {
                ok = false;
                parts.push(format!("{n}=missing"));
            }
        }
    }
    (ok, parts.join(", "))
}

fn suite(s: Suite) -> (VerifyReport, Duration) {
    let (r, t) = timed(|| run_suite(s, &SuiteOptions { seed: SEED, mutate_haar: false }));
    (r.expect("suite runs"), t)
}

fn criteria() -> Vec<Outcome> {
    let secs = Duration::from_secs;
    let mut out = Vec::new();

    let ((f64_err, f32_err), t) = timed(|| {
        (
            reconstruction_error::<f64>(SEED, false).expect("dwt runs"),
            reconstruction_error::<f32>(SEED, false).expect("dwt runs"),
        )
    });
    out.push(Outcome {
        name: "perfect-reconstruction",
        passed: f64_err <= 1e-10 && f32_err <= 1e-5,
        detail: format!("f64 {f64_err:.3e} <= 1e-10, f32 {f32_err:.3e} <= 1e-5"),
        elapsed: t,
        limit: Some(secs(5)),
    });

    // The reconstruction suite carries the FFT, DDE and serialization checks;
    // its total runtime bounds each of them.
    let (recon, t_recon) = suite(Suite::Reconstruction);
    let (ok, detail) = from_checks(
        &recon,
        &["spectral.round_trip.f64", "spectral.round_trip.f32", "spectral.parseval", "spectral.naive_dft_8x8"],
    );
    out.push(Outcome {
        name: "fft-round-trip-parseval",
        passed: ok,
        detail,
        elapsed: t_recon,
        limit: Some(secs(5)),
    });

    let (ssm, t_ssm) = suite(Suite::Ssm);
    let (ok, detail) = from_checks(&ssm, &["ssm.conv_equivalence"]);
    out.push(Outcome {
        name: "ssm-convolution-equivalence",
        passed: ok,
        detail,
        elapsed: t_ssm,
        limit: Some(secs(5)),
    });
    let (ok, detail) = from_checks(&ssm, &["ssm.contribution_decomposition"]);
    out.push(Outcome {
        name: "contribution-decomposition",
        passed: ok,
        detail,
        elapsed: t_ssm,
        limit: None,
    });

    let (decay, t) = timed(|| run_decay_suite(100, 256, 7).expect("decay suite runs"));
    let at100 = decay
        .constant_curve(0.9)
        .and_then(|c| c.points.iter().find(|p| p.0 == 100))
        .map_or(f64::INFINITY, |p| p.1);
    out.push(Outcome {
        name: "decay-theorem",
        passed: decay.bound_violations == 0 && at100 <= GAP_100_LIMIT,
        detail: format!(
            "{} violations over {} pairs, gap-100 contribution at 0.9 = {at100:.4e} <= {GAP_100_LIMIT:.1e}",
            decay.bound_violations, decay.pairs_checked
        ),
        elapsed: t,
        limit: Some(secs(10)),
    });

    let (table, t) = timed(|| run_complexity_suite::<f32>(&COMPLEXITY_SIZES, BENCH_REPEATS, SEED).expect("probe runs"));
    let detail = table
        .stages
        .iter()
        .map(|s| {
            let r: Vec<String> = s.ratios.iter().map(|r| format!("{r:.2}")).collect();
            format!("{:?} [{}]", s.stage, r.join(", "))
        })
        .collect::<Vec<_>>()
        .join(", ");
    out.push(Outcome {
        name: "linear-complexity",
        passed: table.passed(),
        detail: format!("{detail} in [1.6, 2.6]"),
        elapsed: t,
        limit: Some(secs(60)),
    });

    let (grads, t) = suite(Suite::Gradients);
    let (ok, detail) = from_checks(
        &grads,
        &["grad.lti-ssm", "grad.psn", "grad.pgmf-path", "grad.shared_psn_factor_two"],
    );
    out.push(Outcome {
        name: "gradient-checks",
        passed: ok,
        detail,
        elapsed: t,
        limit: Some(secs(30)),
    });

    let (ok, detail) = from_checks(
        &ssm,
        &[
            "pgmf.variant_d_head_tail",
            "pgmf.residual_isolation",
            "pgmf.symmetric_permutations",
        ],
    );
    let (ok2, detail2) = from_checks(&recon, &["pgmf.serialization_bijection"]);
    out.push(Outcome {
        name: "pgmf-structural-invariants",
        passed: ok && ok2,
        detail: format!("{detail2}, {detail}"),
        elapsed: t_ssm.max(t_recon),
        limit: Some(secs(5)),
    });

    let (ok, detail) = from_checks(&recon, &["dde.identity_closure.f32"]);
    out.push(Outcome {
        name: "dde-identity-closure",
        passed: ok,
        detail,
        elapsed: t_recon,
        limit: Some(secs(10)),
    });

    let cfg = LossConfig::default();
    let focal = focal_loss(0.9, 1, &cfg).expect("valid probability");
    let sl1: Vec<f64> = [0.0, 0.5, 1.0, 2.0].iter().map(|&d| smooth_l1(d, 0.0)).collect();
    let weights = (cfg.alpha, cfg.beta);
    out.push(Outcome {
        name: "loss-values",
        passed: (focal - 1.0536e-3).abs() <= 1e-7
            && sl1 == [0.0, 0.125, 0.5, 1.5]
            && weights == (1.0, 1.0)
            && total_loss(2.0, 3.0, &cfg) == 5.0,
        detail: format!("focal {focal:.7e}, smooth-l1 {sl1:?}, weights {weights:?}"),
        elapsed: Duration::ZERO,
        limit: None,
    });

    let d = RunConfig::default();
    let defaults_ok =
        d.basis == Basis::Haar && d.levels == 2 && d.kernel_sizes == [3, 5, 7] && d.variant == FusionVariant::D;
    let out_dir = tempfile::tempdir().expect("temp dir");
    let (status, t) = timed(|| {
        Command::new(env!("CARGO_BIN_EXE_depfusion"))
            .args(["verify", "all", "--seed", "42", "--out"])
            .arg(out_dir.path())
            .output()
            .expect("binary runs")
            .status
    });
    out.push(Outcome {
        name: "configuration-fidelity",
        passed: defaults_ok && status.code() == Some(0),
        detail: format!(
            "defaults {:?}/{}/{:?}/{}, verify all exit {:?}",
            d.basis,
            d.levels,
            d.kernel_sizes,
            d.variant,
            status.code()
        ),
        elapsed: t,
        limit: None,
    });
    out
}

fn main() -> ExitCode {
    // Accept and ignore the libtest flags cargo forwards (e.g. `--nocapture`).
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let results = criteria();
    let mut failed = 0;
    for r in &results {
        let in_time = r.limit.map_or(true, |l| r.elapsed < l);
        let ok = r.passed && in_time;
        failed += usize::from(!ok);
        let limit = r.limit.map_or(String::new(), |l| format!(" (limit {} s)", l.as_secs()));
        println!(
            "{} {:<30} {:>8.3} s{limit}  {}{}",
            if ok { "PASS" } else { "FAIL" },
            r.name,
            r.elapsed.as_secs_f64(),
            r.detail,
            if in_time { "" } else { "  [over time limit]" }
        );
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
