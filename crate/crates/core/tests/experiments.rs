use structpop::harness::{
    run_birth_extraction, run_intertwining, run_range_inclusion, run_sign_sweep, run_steady_state_check,
};
use structpop::pde::{solve_pde_upwind, solve_pde_voc};
use structpop::renewal::solve_renewal;
use structpop::spectral::solve_characteristic_root;
use structpop::{
    load_model, AgeKernelSet, BirthHistory, Discretization, Error, HistorySource, ModelSpec, RenewalOptions,
    RunSettings, Sign, UpwindOptions, VitalRates,
};

fn builtin(name: &str, params: &[(&str, f64)]) -> VitalRates {
    load_model(&ModelSpec::builtin(name, params)).unwrap()
}

fn single(cells: usize) -> RunSettings {
    RunSettings { cells, refine: false, ..RunSettings::default() }
}

#[test]
fn intertwining_on_the_critical_model() {
    let rep = run_intertwining(&builtin("constant", &[]), &HistorySource::Constant(1.0), &single(200), 2e-2).unwrap();
    assert!(rep.passed(), "{rep:?}");
    assert_eq!(rep.resolutions, vec![(200, 200)]);
    assert_eq!(rep.table.len(), 601);
}

#[test]
fn intertwining_without_births_is_transport() {
    let hist = HistorySource::profile(|s, t| (1.0 + s) * (2.0 + t.sin()));
    let rep = run_intertwining(&builtin("constant", &[("beta0", 0.0)]), &hist, &single(200), 5e-2).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn intertwining_on_corner_converges() {
    let hist = HistorySource::profile(|s, t| (1.0 + s) * (1.5 + 0.5 * (2.0 * t).cos()));
    let rep = run_intertwining(&builtin("corner", &[]), &hist, &RunSettings::default(), 5e-2).unwrap();
    assert!(rep.within_tolerance(), "{rep:?}");
    assert!(rep.ratio().unwrap() >= 1.5, "{rep:?}");
}

#[test]
fn birth_extraction_examples() {
    let rep =
        run_birth_extraction(&builtin("constant", &[]), &HistorySource::Constant(1.0), &single(200), 2e-2).unwrap();
    assert!(rep.passed(), "{rep:?}");
    let rep = run_birth_extraction(&builtin("corner", &[]), &HistorySource::Constant(0.0), &single(100), 5e-2).unwrap();
    assert_eq!(rep.summary(), 0.0);
}

#[test]
fn supercritical_growth_rates_approach_the_root() {
    let model = builtin("constant", &[("beta0", 4.0)]);
    let d = Discretization::new(model, 200).unwrap();
    let ks = AgeKernelSet::build(&d, 200).unwrap();
    let root = solve_characteristic_root(&d, 1e-12).unwrap().lambda;
    let phi = BirthHistory::constant_in_time(&vec![1.0; 201], 200, ks.dt());
    let traj = solve_renewal(&d, &ks, &phi, 8.0, RenewalOptions { renormalize: true }).unwrap();
    let norms: Vec<f64> = traj.values.iter().map(|b| d.grid().l1_norm(b)).collect();
    let rate = structpop::pde::growth_rate(&traj.times(), &norms, &traj.log_scale).unwrap();
    assert!((rate - root).abs() <= 1e-2, "renewal {rate} vs {root}");

    // both PDE schemes carry an O(Δt) bias in the rate
    let mut errors = Vec::new();
    for n in [200, 400] {
        let d = Discretization::new(builtin("constant", &[("beta0", 4.0)]), n).unwrap();
        let ks = AgeKernelSet::build(&d, n).unwrap();
        let p0: Vec<f64> = d.grid().nodes().to_vec();
        let opts = UpwindOptions { renormalize: true, ..UpwindOptions::default() };
        let up = solve_pde_upwind(&d, &p0, 6.0, opts).unwrap().growth_rate(d.grid()).unwrap();
        let voc = solve_pde_voc(&d, &ks, &p0, 6.0, true).unwrap().growth_rate(d.grid()).unwrap();
        errors.push(((up - root).abs(), (voc - root).abs()));
    }
    assert!(errors[1].0 <= 1.5e-2 && errors[1].1 <= 1.5e-2, "{errors:?}");
    assert!(errors[0].0 >= 1.5 * errors[1].0 && errors[0].1 >= 1.5 * errors[1].1, "{errors:?}");
}

#[test]
fn steady_state_examples() {
    let rep = run_steady_state_check(&builtin("constant", &[]), &single(200), false, 3e-2).unwrap();
    assert!(rep.passed());
    let p = &rep.steady_density;
    let c = p[200];
    for (i, v) in p.iter().enumerate() {
        assert!((v - c * i as f64 / 200.0).abs() <= 1e-12);
    }
    assert!(rep.steady_births.iter().all(|b| (b - rep.steady_births[0]).abs() <= 1e-12));

    assert!(matches!(
        run_steady_state_check(&builtin("constant", &[("beta0", 0.0)]), &single(50), true, 3e-2),
        Err(Error::NotCritical { .. })
    ));
    assert!(matches!(
        run_steady_state_check(&builtin("constant", &[("beta0", 3.0)]), &single(50), false, 3e-2),
        Err(Error::NotCritical { .. })
    ));
    let rep = run_steady_state_check(&builtin("constant", &[("beta0", 3.0)]), &single(100), true, 3e-2).unwrap();
    assert!((rep.rescale - 2.0 / 3.0).abs() <= 1e-6);
    assert!(rep.passed());
}

#[test]
fn range_inclusion_examples() {
    let rep =
        run_range_inclusion(&builtin("constant", &[("beta0", 0.0)]), &|s| 1.0 + s, 1.5, &single(100), 5e-2).unwrap();
    assert_eq!(rep.summary(), 0.0);
    let rep = run_range_inclusion(&builtin("constant", &[]), &|s| s, 1.5, &single(200), 3e-2).unwrap();
    assert!(rep.passed(), "{rep:?}");
    let rep =
        run_range_inclusion(&builtin("corner", &[]), &|s| s * (1.0 - s), 2.0, &RunSettings::default(), 5e-2).unwrap();
    assert!(rep.passed(), "{rep:?}");
    assert!(matches!(
        run_range_inclusion(&builtin("constant", &[]), &|s| s, 7.5, &single(50), 5e-2),
        Err(Error::HorizonTooLong { .. })
    ));
}

#[test]
fn sign_sweep_on_the_constant_model() {
    let rows = run_sign_sweep(&builtin("constant", &[]), &[0.5, 1.0, 2.0], 200, 6.0).unwrap();
    let expected = [Sign::Negative, Sign::Zero, Sign::Positive];
    for (row, sign) in rows.iter().zip(expected) {
        assert!(row.consistent(), "{row:?}");
        assert_eq!(row.signs()[0], sign);
    }
    let twice = &rows[2];
    assert!((twice.renewal_rate - twice.lambda_star).abs() <= 1e-2, "{twice:?}");
}

#[test]
fn experiments_are_deterministic() {
    let hist = HistorySource::profile(|s, t| 1.0 + s * t.cos());
    let a = run_intertwining(&builtin("corner", &[]), &hist, &single(60), 5e-2).unwrap();
    let b = run_intertwining(&builtin("corner", &[]), &hist, &single(60), 5e-2).unwrap();
    assert_eq!(a, b);
}
