//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use neckspec::experiments::{run, Experiment, ExperimentOutcome, NeckSource, RunConfig};
use neckspec::grid::{CylinderGrid, Field};
use neckspec::harmap::{moebius_family, RationalMap, C64};
use neckspec::jacobi::{
    annulus_volume, assemble_jacobi, jacobi_run, spectrum, ConformalMetric, JacobiConfig, JacobiOperator, JacobiRun,
};
use neckspec::target::RoundSphere;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn outcome_verdict(out: &ExperimentOutcome, names: &[&str]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in names {
        let c = out.check(n).unwrap_or_else(|| panic!("missing check {n}"));
        ok &= c.passed;
        parts.push(format!("{}: {} ({})", n, if c.passed { "ok" } else { "FAILED" }, c.detail));
    }
    verdict(ok, parts.join("; "))
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let t0 = Instant::now();
    let mut v = f();
    let el = t0.elapsed();
    if let Some(l) = limit {
        if el > l {
            v.passed = false;
            v.detail.push_str(&format!("; runtime {el:.1?} over {l:?}"));
        }
    }
    v.detail.push_str(&format!(" [{el:.1?}]"));
    v
}

fn poly(c: &[C64], z: C64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, a| acc * z + a)
}

/// Derivative of `St⁻¹(w) = (2 Re w, 2 Im w, |w|² − 1)/(1 + |w|²)` along `h`.
fn d_inverse_stereo(w: C64, h: C64) -> [f64; 3] {
    let (x, y) = (w.re, w.im);
    let d = 1.0 + x * x + y * y;
    let d2 = d * d;
    let dx = [2.0 / d - 4.0 * x * x / d2, -4.0 * x * y / d2, 4.0 * x / d2];
    let dy = [-4.0 * x * y / d2, 2.0 / d - 4.0 * y * y / d2, 4.0 * y / d2];
    [0, 1, 2].map(|k| dx[k] * h.re + dy[k] * h.im)
}

/// `d/dε St⁻¹((P + εδP)/(Q + εδQ))` at `ε = 0` for every real coefficient
/// direction, keeping one denominator coefficient fixed.
fn coefficient_derivatives(map: &RationalMap, grid: &CylinderGrid) -> Vec<Field> {
    let d = map.numerator.len().max(map.denominator.len()) - 1;
    let pad = |c: &[C64]| {
        let mut v = c.to_vec();
        v.resize(d + 1, C64::new(0.0, 0.0));
        v
    };
    let (num, den) = (pad(&map.numerator), pad(&map.denominator));
    let fixed = den.iter().position(|c| c.norm() > 0.0).unwrap();
    let mut out = Vec::new();
    for which in 0..2 {
        for k in 0..=d {
            if which == 1 && k == fixed {
                continue;
            }
            for unit in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                out.push(Field::from_fn(grid, |t, th, o| {
                    let z = C64::from_polar(t.exp(), th);
                    let (p, q) = (poly(&num, z), poly(&den, z));
                    let dz = unit * z.powu(k as u32);
                    let h = if which == 0 { dz / q } else { -p * dz / (q * q) };
                    o.copy_from_slice(&d_inverse_stereo(p / q, h));
                }));
            }
        }
    }
    out
}

struct OracleReport {
    count: usize,
    residual: f64,
    rayleigh: f64,
    rank: usize,
    capture: f64,
}

fn oracle(op: &JacobiOperator, fields: &[Field], kernel: &[&Vec<f64>], rank_cut: f64) -> OracleReport {
    let normed: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| {
            let s = op.mass_inner(&f.values, &f.values).sqrt();
            f.values.iter().map(|x| x / s).collect()
        })
        .collect();
    let n = normed.len();
    let g = DMatrix::from_fn(n, n, |i, j| op.mass_inner(&normed[i], &normed[j]));
    let rank = g.symmetric_eigenvalues().iter().filter(|s| **s > rank_cut).count();
    let capture = normed
        .iter()
        .map(|f| {
            let mut r = f.clone();
            for k in kernel {
                let c = op.mass_inner(f, k);
                r.iter_mut().zip(k.iter()).for_each(|(x, y)| *x -= c * y);
            }
            op.mass_inner(&r, &r).sqrt()
        })
        .fold(0.0f64, f64::max);
    OracleReport {
        count: n,
        residual: fields.iter().map(|f| op.residual(&f.values)).fold(0.0, f64::max),
        rayleigh: normed.iter().map(|f| op.rayleigh_quotient(f).abs()).fold(0.0, f64::max),
        rank,
        capture,
    }
}

fn kernel_of(run: &JacobiRun) -> Vec<&Vec<f64>> {
    run.spectrum
        .vectors
        .iter()
        .zip(&run.report.eigenvalues)
        .filter(|(_, b)| b.abs() <= run.report.zero_tol)
        .map(|(v, _)| v)
        .collect()
}

fn criterion_1() -> Verdict {
    let out = run(&RunConfig::new(Experiment::PoissonUniformity)).unwrap();
    outcome_verdict(&out, &["spread", "residual"])
}

fn criterion_2() -> Verdict {
    let out = run(&RunConfig::new(Experiment::HarmonicBounds)).unwrap();
    outcome_verdict(&out, &["coefficient_ratio", "remainder_exponent"])
}

fn neck_run() -> ExperimentOutcome {
    let mut cfg = RunConfig::new(Experiment::NeckExpansion);
    cfg.source = NeckSource::Dirichlet;
    run(&cfg).unwrap()
}

fn criterion_3() -> Verdict {
    let out = neck_run();
    // independent reading of the coefficients at λ = 1e-4 against the linearization
    let c = &out.summary["coefficients"][2];
    let want = [("a", [2.0, 0.0, 0.0]), ("b", [0.0, 2.0, 0.0]), ("c", [2.0, 0.0, 0.0]), ("d", [0.0, -2.0, 0.0])];
    let mut worst = 0.0f64;
    for (k, w) in want {
        for i in 0..3 {
            worst = worst.max((c[k][i].as_f64().unwrap() - w[i]).abs());
        }
    }
    let mut v = outcome_verdict(&out, &["coefficients", "remainder_spread", "moreover_exponent"]);
    v.passed &= worst <= 1e-2;
    v.detail = format!("a,b,c,d error {worst:.2e}; {}", v.detail);
    v
}

fn criterion_4() -> Verdict {
    let out = neck_run();
    outcome_verdict(&out, &["pohozaev_analytic", "pohozaev_solved"])
}

fn criterion_5() -> Verdict {
    let out = run(&RunConfig::new(Experiment::CenterClassification)).unwrap();
    outcome_verdict(
        &out,
        &["center_map", "conformal_residuals", "moebius_opposite_orientation", "witness_catenoid"],
    )
}

fn criterion_6() -> Verdict {
    let delta: f64 = 0.1;
    let bound = 8.0 * PI * delta * delta;
    let mut ok = true;
    let mut parts = Vec::new();
    for lambda in [1e-3, 1e-4, 1e-5] {
        // 2π ∫ (1 + λ/r²)² r dr = 2π [r²/2 + 2λ ln r − λ²/(2r²)]
        let prim = |r: f64| r * r / 2.0 + 2.0 * lambda * r.ln() - lambda * lambda / (2.0 * r * r);
        let exact = 2.0 * PI * (prim(delta) - prim(lambda / delta));
        for m in [ConformalMetric::catenoid(lambda).unwrap(), ConformalMetric::glued(lambda).unwrap()] {
            let v = annulus_volume(&m, delta, lambda).unwrap();
            let rel = (v - exact).abs() / exact;
            ok &= v <= bound && rel <= 1e-10;
            parts.push(format!("{:?} λ={lambda:e}: {v:.6} (rel {rel:.1e})", m.kind));
        }
    }
    verdict(ok, format!("bound {bound:.6}; {}", parts.join(", ")))
}

fn criterion_7() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;

    // constant map into S² on a flat periodic cylinder
    let grid = CylinderGrid::periodic(0.0, 2.0 * PI, 24, 8, 3).unwrap();
    let u = Field::from_fn(&grid, |_, _, o| o.copy_from_slice(&[0.0, 0.0, 1.0]));
    let op = assemble_jacobi(&u, &ConformalMetric::flat(), &RoundSphere::new(3)).unwrap();
    let sp = spectrum(&op, 4, 1e-6).unwrap();
    ok &= sp.report.nullity == 2 && sp.report.index == 0 && sp.report.floor_holds();
    parts.push(format!("constant: index {} nullity {}", sp.report.index, sp.report.nullity));

    let cfg = JacobiConfig {
        n_theta: 8,
        ..JacobiConfig::default()
    };
    let id = RationalMap::identity();
    let mut counts = Vec::new();
    for metric in [ConformalMetric::round_sphere(), ConformalMetric::glued(0.0).unwrap(), ConformalMetric::bubble()] {
        let run = jacobi_run(&id, &metric, 0.0, 0.0, 10, None, &cfg).unwrap();
        let fd = coefficient_derivatives(&id, &run.grid);
        let kernel = kernel_of(&run);
        let orc = oracle(&run.operator, &fd, &kernel, run.report.zero_tol.sqrt());
        let tol = run.report.zero_tol.max(10.0 * orc.rayleigh);
        let rep = run.report.recount(tol);
        let gap = rep.eigenvalues[6];
        let good = orc.count == 6
            && orc.rank == 6
            && orc.residual <= 1e-6
            && orc.capture <= 1e-4
            && rep.index == 0
            && rep.nullity == 6
            && gap >= 10.0 * tol
            && rep.floor_holds();
        ok &= good;
        counts.push((rep.index, rep.nullity));
        parts.push(format!(
            "identity/{:?}: index {} nullity {} β7 {gap:.3} zero_tol {tol:.1e} oracle residual {:.1e} rank {} capture {:.1e} floor {:.2}",
            metric.kind, rep.index, rep.nullity, orc.residual, orc.rank, orc.capture, rep.rayleigh_floor
        ));
    }
    let invariant = counts.windows(2).all(|w| w[0] == w[1]);
    ok &= invariant;
    parts.push(format!("conformal invariance {}", invariant));
    verdict(ok, parts.join("; "))
}

fn criterion_8() -> Verdict {
    let mut cfg = RunConfig::new(Experiment::NiTable);
    cfg.lambdas = vec![1e-2, 1e-3];
    let out = run(&cfg).unwrap();
    let mut v = outcome_verdict(
        &out,
        &["ni_inequality", "bound_is_twelve", "nullity_oracle", "gram_rank", "gram_trend", "rayleigh_floor"],
    );
    // independent certification of Nul(u_λ) ≥ 10 by coefficient derivatives
    let jc = JacobiConfig::default();
    for lambda in [1e-2, 1e-3] {
        let fam = moebius_family(lambda).unwrap();
        let metric = ConformalMetric::glued(lambda).unwrap();
        let run = jacobi_run(&fam.u_lambda, &metric, lambda.ln(), 0.0, 12, None, &jc).unwrap();
        let fd = coefficient_derivatives(&fam.u_lambda, &run.grid);
        let kernel = kernel_of(&run);
        let orc = oracle(&run.operator, &fd, &kernel, run.report.zero_tol.sqrt());
        let good = orc.count == 10 && orc.rank == 10 && orc.residual <= 1e-5 && orc.capture <= 1e-4 && run.report.nullity >= 10;
        v.passed &= good;
        v.detail.push_str(&format!(
            "; λ={lambda:e}: NI {} nullity {} oracle residual {:.1e} rank {} capture {:.1e}",
            run.report.ni, run.report.nullity, orc.residual, orc.rank, orc.capture
        ));
    }
    v
}

fn main() {
    let criteria: [(&str, Option<u64>, fn() -> Verdict); 8] = [
        ("1 key-lemma uniformity", Some(60), criterion_1),
        ("2 harmonic coefficient bounds", Some(30), criterion_2),
        ("3 neck coefficients", None, criterion_3),
        ("4 Pohozaev identity", None, criterion_4),
        ("5 center map and classification", None, criterion_5),
        ("6 annulus volume bound", None, criterion_6),
        ("7 Jacobi spectra", None, criterion_7),
        ("8 index plus nullity", None, criterion_8),
    ];
    let t0 = Instant::now();
    let mut failed = Vec::new();
    for (name, limit, f) in criteria {
        let v = catch_unwind(AssertUnwindSafe(|| timed(limit.map(Duration::from_secs), f)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                verdict(false, format!("panicked: {msg}"))
            });
        println!("{} criterion {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        if !v.passed {
            failed.push(name);
        }
    }
    println!("total runtime {:.1?}", t0.elapsed());
    if !failed.is_empty() {
        println!("failing criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
