//! Cross-module checks through the public API.

use std::f64::consts::PI;

use neckspec::experiments::{run, Experiment, NeckSource, RunConfig};
use neckspec::harmap::{energy, interior_tension, moebius_family, RationalMap};
use neckspec::poisson::{solve_spectral_oracle, weighted_residual, BoundarySpec, ModeBoundary};
use neckspec::target::RoundSphere;
use neckspec::{CylinderGrid, Execution, Field};

#[test]
fn identity_is_harmonic_with_energy_four_pi() {
    let g = CylinderGrid::with_spacing(-10.0, 10.0, 0.05, 16, 3).unwrap();
    let u = RationalMap::identity().field(&g);
    assert!(interior_tension(&u, &RoundSphere::new(3)).unwrap() < 1e-6);
    let e = energy(&u, (-10.0, 10.0)).unwrap();
    assert!((e - 4.0 * PI).abs() < 1e-6, "energy {e}");
}

#[test]
fn moebius_family_carries_two_bubbles_of_energy() {
    let fam = moebius_family(1e-3).unwrap();
    let c = fam.neck_center();
    let g = CylinderGrid::with_spacing(c - 14.0, c + 14.0, 0.05, 16, 3).unwrap();
    let u = fam.sample(&g);
    let e = energy(&u, (c - 14.0, c + 14.0)).unwrap();
    assert!((e - 8.0 * PI).abs() < 1e-4, "energy {e}");
    // |w| is small on the neck, so the density is 8|z - λ/z|² to leading order
    let lam: f64 = 1e-3;
    let neck = energy(&u, (c - 1.0, c + 1.0)).unwrap();
    let want = 16.0 * PI * lam * 2f64.sinh();
    assert!((neck / want - 1.0).abs() < 0.02, "neck energy {neck} vs {want}");
}

#[test]
fn spectral_oracle_solves_the_flat_equation() {
    let g = CylinderGrid::with_spacing(-3.0, 3.0, 0.05, 8, 1).unwrap();
    let f = Field::scalar_from_fn(&g, |t, th| (1.0 - t * t / 9.0) * (1.0 + th.cos() + 0.5 * (2.0 * th).sin()));
    let v = solve_spectral_oracle(&f, &BoundarySpec::uniform(ModeBoundary::Dirichlet)).unwrap();
    assert!(weighted_residual(&v, &f, 0.0, 1.0) < 1e-6);
}

#[test]
fn analytic_neck_expansion_passes_its_checks() {
    let mut c = RunConfig::new(Experiment::NeckExpansion);
    c.source = NeckSource::Analytic;
    let par = run(&c).unwrap();
    assert!(par.passed(), "{:?}", par.failing());
    assert_eq!(par.csv.lines().count(), 4);
    c.exec = Execution::Sequential;
    assert_eq!(run(&c).unwrap().csv, par.csv);
}

#[test]
fn summary_json_lists_every_check() {
    let mut c = RunConfig::new(Experiment::HarmonicBounds);
    c.samples = Some(2);
    let out = run(&c).unwrap();
    let s = out.summary_json();
    assert_eq!(s["experiment"], "harmonic-bounds");
    assert_eq!(s["checks"].as_array().unwrap().len(), out.checks.len());
    assert_eq!(s["passed"], out.passed());
}
