use nlswkb::experiments::*;
use nlswkb::fit::fit_exponent;
use nlswkb::grid::{lebesgue_norm, sobolev_norm, Field, GridSpec, C64};
use nlswkb::report;
use nlswkb::rescale::*;
use nlswkb::wkb::{integrate_wkb, HierarchyConfig, WkbState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn physical_norm_matches_direct_construction() {
    let (n, l, hbar, sigma) = (128, 8.0, 0.2, 0.5);
    let spec = GridSpec::new(1, n, l).unwrap();
    let v = Field::from_real_fn(spec, |z| (-z[0] * z[0]).exp());
    let params = make_params(1, 7, 1, 1.0).unwrap().with_hbar(hbar).unwrap();
    let got = physical_sobolev_norm(&v, &params, sigma);
    let fine = GridSpec::new(1, 8 * n, hbar * l).unwrap();
    let g = params.gamma();
    let u = Field::from_real_fn(fine, |x| hbar.powf(g) * (-(x[0] / hbar).powi(2)).exp());
    let direct = sobolev_norm(&u, sigma, 1.0);
    assert!((got / direct - 1.0).abs() < 1e-6, "{got} vs {direct}");
}

#[test]
fn physical_norm_monotone_in_sigma() {
    let spec = GridSpec::new(1, 128, 8.0).unwrap();
    let v = Field::from_real_fn(spec, |z| (-z[0] * z[0]).exp() * (1.0 + 0.3 * z[0]));
    let params = make_params(1, 7, 1, 1.0).unwrap().with_hbar(0.3).unwrap();
    let norms: Vec<f64> = (0..8).map(|k| physical_sobolev_norm(&v, &params, 0.25 * k as f64)).collect();
    assert!(norms.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn supercriticality_equivalence() {
    for d in 3..=6usize {
        for p in (3..=13u32).step_by(2) {
            let beta_pos = energy_space_params(d, p, 1).map(|e| e.beta > 0.0).unwrap_or(false);
            let super_crit = (p as f64) > (d as f64 + 2.0) / (d as f64 - 2.0);
            assert_eq!(beta_pos, super_crit, "d = {d}, p = {p}");
            assert_eq!(energy_supercritical(d, p), super_crit);
        }
    }
}

#[test]
fn cutoff_mass_increases_toward_uncut() {
    let spec = GridSpec::new(1, 256, 40.0).unwrap();
    let a0 = Field::from_real_fn(spec, |z| (-z[0] * z[0] / 16.0).exp());
    let e = energy_space_params(3, 7, 1).unwrap();
    let full = lebesgue_norm(&a0, 2.0);
    let cut = CutoffSpec { eta: 0.5, radius: 4.0 };
    let masses: Vec<f64> = HbarSequence::default()
        .values()
        .iter()
        .map(|&hb| lebesgue_norm(&initial_datum(&a0, &e.with_hbar(hb).unwrap(), Some(cut)).unwrap().v, 2.0))
        .collect();
    assert!(masses.windows(2).all(|w| w[0] < w[1]), "{masses:?}");
    assert!(masses.iter().all(|m| *m < full));
    let none = initial_datum(&a0, &e.with_hbar(0.3).unwrap(), None).unwrap();
    assert_eq!(none.v, a0);
}

#[test]
fn noisy_power_law_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<(f64, f64)> = HbarSequence::default()
        .values()
        .iter()
        .map(|&h| (h, h.powf(0.3) * (1.0 + 0.01 * rng.gen_range(-1.0..1.0))))
        .collect();
    let f = fit_exponent(&pts).unwrap();
    assert!((f.slope - 0.3).abs() <= 0.02, "{f:?}");
}

#[test]
fn homogeneous_phase_gap_closed_form() {
    let spec = GridSpec::new(1, 16, 3.0).unwrap();
    let (p, omega, c, delta, s) = (7u32, 1.0, 0.8, 0.2, 0.05);
    let run = |amp: f64| {
        let st = WkbState::leading(Field::zeros(spec), Field::constant(spec, C64::new(amp, 0.0)), 0, p, omega).unwrap();
        integrate_wkb(&st, s, &HierarchyConfig { dt: 1e-3, ..HierarchyConfig::default() }).unwrap()
    };
    let gap = &run((1.0 + delta) * c).last().phase - &run(c).last().phase;
    let exact = -omega * s * ((1.0 + delta).powi(p as i32 - 1) - 1.0) * c.powi(p as i32 - 1);
    assert!(gap.values().iter().all(|g| (g.re - exact).abs() < 1e-10));
    let taylor = taylor_phase_gap(&Field::constant(spec, C64::new(c, 0.0)), p, omega, delta, s);
    let lead = -omega * (p as f64 - 1.0) * delta * s * c.powi(p as i32 - 1);
    assert!(taylor.values().iter().all(|t| (t.re - lead).abs() < 1e-12));
}

#[test]
fn zero_perturbation_phase_gap_vanishes() {
    let cfg = PhaseConfig {
        grid: GridSpec::new(3, 16, 4.0).unwrap(),
        hbar: HbarSequence::new(vec![0.45, 0.4, 0.35, 0.3]).unwrap(),
        zero_perturbation: true,
        ..PhaseConfig::default()
    };
    let r = phase_divergence_check(&cfg).unwrap();
    for row in &r.rows {
        if let Some(g) = row.get("max_phase_gap") {
            assert_eq!(g, 0.0);
        }
    }
}

#[test]
fn zero_perturbation_has_no_separation() {
    let cfg = Thm1Config {
        grid: GridSpec::new(3, 32, 6.0).unwrap(),
        hbar: HbarSequence::new(vec![0.45, 0.4, 0.35, 0.3]).unwrap(),
        zero_perturbation: true,
        ..Thm1Config::default()
    };
    let r = thm1_run(&cfg).unwrap();
    assert_eq!(r.verdicts.len(), 4);
    for row in &r.rows {
        assert_eq!(row.status, RunStatus::Ok);
        assert_eq!(row.get("separation"), Some(0.0));
    }
}

#[test]
fn thm2_prediction_identity_and_substitution() {
    for (d, sigma, rho, eps) in [(3, 0.5, 0.3, 0.05), (1, 0.05, 0.05, 0.005), (3, 0.8, 0.7, 0.02)] {
        let Ok(e) = thm2_admissibility(d, 7, sigma, rho, eps, Branch::Upper) else { continue };
        let (t0, _) = thm2_predictions(&e, sigma, rho, eps, Branch::Upper);
        assert!((t0 - eps).abs() < 1e-12);
    }
    let e = thm2_admissibility(3, 7, 0.5, 0.3, 0.05, Branch::Upper).unwrap();
    let (_, th) = thm2_predictions(&e, 0.5, 0.3, 0.05, Branch::Upper);
    assert!((th + 0.305).abs() < 1e-12);
}

#[test]
fn reports_carry_hash_and_round_trip() {
    let r = thm2_run(&Thm2Config::fast_1d()).unwrap();
    let json = report::to_json(&r, "h123").unwrap();
    let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(doc["config_hash"], "h123");
    let back: ExperimentReport = serde_json::from_value(doc["report"].clone()).unwrap();
    assert_eq!(back, r);
    let csv = report::to_csv(&r, "h123");
    assert!(csv.starts_with("# config_hash=h123\nhbar,h,s_obs,status,"));
    assert_eq!(csv.lines().count(), 2 + r.rows.len());
    let svg = report::to_svg(&r, "h123");
    assert!(svg.contains("config_hash=h123") && svg.contains("stroke-dasharray"));
    assert_eq!(report::verdict_summary(&r).lines().count(), r.verdicts.len());
    assert_eq!(thm2_run(&Thm2Config::fast_1d()).unwrap(), r);
}
