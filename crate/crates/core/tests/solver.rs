use nlswkb::grid::{lebesgue_norm, Field, GridSpec, C64};
use nlswkb::rescale::make_params;
use nlswkb::solver::*;
use nlswkb::wkb::{integrate_wkb, HierarchyConfig, WkbState};

fn spec() -> GridSpec {
    GridSpec::new(1, 256, 15.0).unwrap()
}

fn gaussian(spec: GridSpec) -> Field {
    Field::from_real_fn(spec, |x| (-x[0] * x[0]).exp())
}

fn l2_diff(a: &Field, b: &Field) -> f64 {
    lebesgue_norm(&(a - b), 2.0)
}

#[test]
fn strang_self_convergence_is_second_order() {
    let v0 = gaussian(spec());
    let run = |dt: f64| split_step_solve(&v0, &SolveConfig::new(0.1, 7, 1, dt, 0.1, usize::MAX).unwrap()).unwrap();
    let reference = run(1e-3 / 16.0);
    let dts = [4e-3, 2e-3, 1e-3];
    let errs: Vec<f64> = dts.iter().map(|&dt| l2_diff(run(dt).last(), reference.last())).collect();
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let fit = nlswkb::fit::linear_fit(&x, &y);
    assert!((fit.slope - 2.0).abs() <= 0.1, "slope {} from {errs:?}", fit.slope);
}

#[test]
fn mass_is_conserved_over_many_steps() {
    let v0 = gaussian(spec());
    let cfg = SolveConfig::new(0.1, 7, -1, 1e-5, 0.1, 2000).unwrap();
    let traj = split_step_solve(&v0, &cfg).unwrap();
    let m0 = conserved_quantities(&v0, &cfg).0;
    for v in &traj.slices {
        assert!((conserved_quantities(v, &cfg).0 / m0 - 1.0).abs() < 1e-10);
    }
}

#[test]
fn time_reversal_by_conjugation() {
    let v0 = gaussian(spec()).map(|v| v * C64::from_polar(1.0, 0.3));
    let cfg = SolveConfig::new(0.1, 5, 1, 1e-3, 0.1, usize::MAX).unwrap();
    let fwd = split_step_solve(&v0, &cfg).unwrap();
    let back = split_step_solve(&fwd.last().conj(), &cfg).unwrap();
    assert!(back.last().max_diff(&v0.conj()) < 1e-8);
}

#[test]
fn gauge_covariance() {
    let v0 = gaussian(spec());
    let g = C64::from_polar(1.0, 1.1);
    let cfg = SolveConfig::new(0.1, 7, 1, 1e-3, 0.05, 10).unwrap();
    let a = split_step_solve(&v0, &cfg).unwrap();
    let b = split_step_solve(&v0.map(|v| v * g), &cfg).unwrap();
    for (x, y) in a.slices.iter().zip(&b.slices) {
        assert!(x.map(|v| v * g).max_diff(y) < 1e-12);
    }
}

#[test]
fn focusing_blowup_keeps_last_finite_slice() {
    let spec = GridSpec::new(1, 64, 4.0).unwrap();
    let v0 = gaussian(spec).map(|v| v * 1.2);
    let cfg = SolveConfig { h: 1.0, p: 7, omega: -1.0, dt: 1e-3, s_end: 1.0, record_every: 1 };
    let traj = split_step_solve(&v0, &cfg).unwrap();
    assert!(traj.slices.iter().all(|s| s.is_finite()));
    if let Some(s) = traj.stopped_at {
        assert!(s <= 1.0);
    }
}

fn hierarchy(v0: &Field, j: usize, s_end: f64, dt: f64) -> nlswkb::wkb::WkbTrajectory {
    let st = WkbState::leading(Field::zeros(*v0.spec()), v0.clone(), j, 7, 1.0).unwrap();
    integrate_wkb(&st, s_end, &HierarchyConfig { dt, ..HierarchyConfig::default() }).unwrap()
}

#[test]
fn ansatz_error_examples() {
    let spec = GridSpec::new(1, 64, 5.0).unwrap();
    let c = Field::constant(spec, C64::new(0.8, 0.0));
    let cfg = SolveConfig::new(0.1, 7, 1, 1e-3, 0.05, 5).unwrap();
    let pde = split_step_solve(&c, &cfg).unwrap();
    let wkb = hierarchy(&c, 2, 0.05, 1e-3);
    assert!(compare_to_ansatz(&pde, &wkb, 0.1, 2, 1.0).unwrap().iter().all(|e| e.1 < 1e-8));

    let spec = GridSpec::new(1, 1024, 15.0).unwrap();
    let v0 = gaussian(spec);
    let h = 0.05;
    let cfg = SolveConfig::new(h, 7, 1, 2.5e-4, 0.1, 40).unwrap();
    let pde = split_step_solve(&v0, &cfg).unwrap();
    let wkb = hierarchy(&v0, 3, 0.1, 2.5e-4);
    let e0 = compare_to_ansatz(&pde, &wkb, h, 0, 0.0).unwrap();
    let e2 = compare_to_ansatz(&pde, &wkb, h, 2, 0.0).unwrap();
    for (a, b) in e0.iter().zip(&e2).skip(1) {
        assert!(b.1 < a.1, "s = {}: n=2 {} vs n=0 {}", a.0, b.1, a.1);
    }
}

#[test]
fn gronwall_trivial_cases() {
    let spec = GridSpec::new(1, 64, 5.0).unwrap();
    let params = make_params(1, 7, 1, 1.0).unwrap().with_hbar(0.3).unwrap();
    let v0 = gaussian(spec);
    let wkb = hierarchy(&v0, 1, 0.02, 1e-3);
    let same = PdeTrajectory::from_wkb(&wkb, params.h, 1);
    let r = gronwall_bound_check(&same, &wkb, &params, 1.0, 1).unwrap();
    assert_eq!(r.c_star, 0.0);
    assert!(r.crossing.is_none());
    assert!(gronwall_bound_check(&same, &wkb, &params, 0.5, 1).is_err());

    let c = Field::constant(spec, C64::new(0.7, 0.0));
    let cfg = SolveConfig::new(params.h, 7, 1, 1e-3, 0.02, 1).unwrap();
    let pde = split_step_solve(&c, &cfg).unwrap();
    let wkb = hierarchy(&c, 1, 0.02, 1e-3);
    let r = gronwall_bound_check(&pde, &wkb, &params, 1.0, 1).unwrap();
    assert!(r.samples.iter().all(|s| s.2 < 1e-6 * r.threshold), "{:?}", r.samples.last());
}

#[test]
fn gronwall_growth_rate_is_hbar_stable() {
    let spec = GridSpec::new(1, 1024, 15.0).unwrap();
    let v0 = gaussian(spec);
    let e = make_params(1, 7, 1, 1.0).unwrap();
    let rates: Vec<f64> = [0.3, 0.25, 0.2]
        .iter()
        .map(|&hb| {
            let params = e.with_hbar(hb).unwrap();
            let h = params.h;
            let cfg = SolveConfig::new(h, 7, 1, 2.5e-4, 0.1, 40).unwrap();
            let pde = split_step_solve(&v0, &cfg).unwrap();
            let wkb = hierarchy(&v0, 3, 0.1, 2.5e-4);
            gronwall_bound_check(&pde, &wkb, &params, 1.0, 2).unwrap().growth_star
        })
        .collect();
    let mean = rates.iter().sum::<f64>() / 3.0;
    eprintln!("C* = {rates:?}");
    assert!(mean > 0.0 && rates.iter().all(|r| (r / mean - 1.0).abs() <= 0.3), "{rates:?}");
}
