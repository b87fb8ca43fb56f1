use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structpop::irreducibility::analyze;
use structpop::{Discretization, VitalRates};

/// Sum of three compactly supported bumps `a·(1-ρ²)²` with random centres
/// and radii.
fn random_bumps(rng: &mut ChaCha8Rng) -> VitalRates {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.5),
                rng.random_range(0.5..5.0),
            )
        })
        .collect();
    VitalRates::new(
        "bumps",
        move |s, y| {
            bumps
                .iter()
                .map(|&(cs, cy, r, a)| {
                    let rho2 = ((s - cs).powi(2) + (y - cy).powi(2)) / (r * r);
                    if rho2 < 1.0 {
                        a * (1.0 - rho2).powi(2)
                    } else {
                        0.0
                    }
                })
                .sum()
        },
        |_| 0.1,
        |s| 1.0 + 0.5 * s,
        None,
    )
    .unwrap()
}

#[test]
fn implication_chain_on_random_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let mut counts = [0usize; 3];
    for case in 0..100 {
        let disc = Discretization::new(random_bumps(&mut rng), 100).unwrap();
        let report = analyze(&disc);
        assert!(report.chain_holds(), "case {case}: {report:?}");
        counts[0] += report.l_sufficient as usize;
        counts[1] += report.l_irreducible_grid as usize;
        counts[2] += report.semigroup_irreducible as usize;
    }
    assert!(counts[2] > 0 && counts[2] < 100, "{counts:?}");
}
