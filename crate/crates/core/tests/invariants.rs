use proptest::prelude::*;
use structpop::pde::{fv_mass, fv_mass_rate, upwind_step};
use structpop::{Discretization, VitalRates};

fn model(beta0: f64, mu0: f64, slope: f64) -> Discretization {
    let m = VitalRates::new(
        "random",
        move |s, y| beta0 * (1.0 + s * y),
        move |s| mu0 * (1.0 + s),
        move |s| 1.0 + slope * s,
        None,
    )
    .unwrap();
    Discretization::new(m, 40).unwrap()
}

fn density(coeffs: &[f64], n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            coeffs.iter().enumerate().map(|(k, c)| c * (std::f64::consts::PI * k as f64 * s).cos().abs()).sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn t0_is_positive_and_nilpotent(
        beta0 in 0.0..5.0f64, mu0 in 0.0..2.0f64, slope in 0.0..1.5f64,
        coeffs in prop::collection::vec(0.0..1.0f64, 3), frac in 0.0..1.0f64,
    ) {
        let d = model(beta0, mu0, slope);
        let p = density(&coeffs, 40);
        let g = d.horizon();
        let inside = d.apply_t0(frac * g, &p);
        prop_assert!(inside.iter().all(|v| *v >= 0.0));
        prop_assert!(d.grid().integrate(&inside) <= d.grid().integrate(&p) * (1.0 + 1e-9) + 1e-12);
        prop_assert!(d.apply_t0(g * (1.0 + 1e-9 + frac), &p).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn upwind_step_balances_mass_and_stays_positive(
        beta0 in 0.0..5.0f64, mu0 in 0.0..2.0f64, slope in 0.0..1.5f64,
        coeffs in prop::collection::vec(0.0..1.0f64, 3), cfl in 0.1..0.9f64,
    ) {
        let d = model(beta0, mu0, slope);
        let mut p = density(&coeffs, 40);
        p[0] = 0.0;
        let gmax = d.gamma_nodes().iter().fold(0.0f64, |m, v| m.max(*v));
        let dt = cfl * d.grid().spacing() / gmax;
        for _ in 0..10 {
            let next = upwind_step(&d, &p, dt);
            let gap = fv_mass(d.grid(), &next) - fv_mass(d.grid(), &p) - dt * fv_mass_rate(&d, &p);
            prop_assert!(gap.abs() <= 1e-10 * fv_mass(d.grid(), &p).max(1.0));
            prop_assert!(next.iter().all(|v| *v >= 0.0));
            p = next;
        }
    }

    #[test]
    fn recruitment_is_linear_and_positive(
        beta0 in 0.0..5.0f64,
        a in prop::collection::vec(0.0..1.0f64, 3), b in prop::collection::vec(0.0..1.0f64, 3),
        x in 0.0..3.0f64,
    ) {
        let d = model(beta0, 0.5, 0.5);
        let (pa, pb) = (density(&a, 40), density(&b, 40));
        let sum: Vec<f64> = pa.iter().zip(&pb).map(|(u, v)| x * u + v).collect();
        let lhs = d.apply_c(&sum);
        let (ca, cb) = (d.apply_c(&pa), d.apply_c(&pb));
        for i in 0..lhs.len() {
            prop_assert!(lhs[i] >= 0.0);
            prop_assert!((lhs[i] - (x * ca[i] + cb[i])).abs() <= 1e-12 * (1.0 + lhs[i].abs()));
        }
    }
}
