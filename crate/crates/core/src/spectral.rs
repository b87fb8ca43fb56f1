//! Nyström discretisation of the next-generation operators `L_λ`, their
//! spectral radii, the sign test, the characteristic root and steady states.

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::VitalRates;
use crate::transport::{mat_vec, Density, Discretization};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Bracketing bounds for the characteristic root.
pub const ROOT_BOUND: f64 = 50.0;
pub const MIN_LAPLACE_STEPS: usize = 32;

/// Dense Nyström matrix of `L_λ` (or of an approximation to it).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub lambda: f64,
}

impl KernelMatrix {
    pub fn apply(&self, v: &[f64]) -> Density {
        mat_vec(&self.entries, v)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Row-major `(i, j, value)` triples.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.dim();
        (0..n).flat_map(move |i| (0..n).map(move |j| (i, j, self.entries[(i, j)])))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub radius: f64,
    /// Nonnegative, `Σ w_i v_i = 1`.
    pub eigvec: Density,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    /// Sign of `value`, with `Zero` for `|value| <= band`.
    pub fn classify(value: f64, band: f64) -> Sign {
        if value > band {
            Sign::Positive
        } else if value < -band {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sign::Negative => "negative",
            Sign::Zero => "zero",
            Sign::Positive => "positive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignVerdict {
    pub sign: Sign,
    pub radius: f64,
    /// `r(L) - 1`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootResult {
    pub lambda: f64,
    pub radius: f64,
    pub eigvec: Density,
    pub evaluations: usize,
}

/// Nyström matrix of `L_λ`: entry `(i, j) = k_λ(s_i, s_j)·w_j` with
/// `k_λ(s, r) = ∫_r¹ β(s,y)/γ(y) · exp(-λ(G(y)-G(r)) - (M(y)-M(r))) dy`,
/// the inner integral by the trapezoid rule on the nodes in `[r, 1]`.
pub fn build_l_lambda(disc: &Discretization, lambda: f64) -> KernelMatrix {
    let n = disc.grid().len();
    let h = disc.grid().spacing();
    let g = disc.growth_time_nodes();
    let hz = disc.hazard_nodes();
    let gamma = disc.gamma_nodes();
    let w = disc.grid().weights();
    let last = n - 1;
    let decay = DMatrix::from_fn(n, n, |l, j| {
        if l < j || j == last {
            return 0.0;
        }
        let trap = if l == j || l == last { 0.5 * h } else { h };
        trap * (-lambda * (g[l] - g[j]) - (hz[l] - hz[j])).exp() / gamma[l] * w[j]
    });
    KernelMatrix { entries: disc.beta_matrix() * decay, lambda }
}

/// Power iteration from the uniform vector, normalised in weighted L¹.
pub fn spectral_radius(matrix: &KernelMatrix, weights: &[f64], tol: f64, max_iter: usize) -> Result<SpectralResult> {
    power_iteration(&matrix.entries, weights, None, tol, max_iter)
}

pub(crate) fn power_iteration(
    m: &DMatrix<f64>,
    weights: &[f64],
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralResult> {
    let n = m.nrows();
    let norm = |v: &[f64]| -> f64 { v.iter().zip(weights).map(|(x, w)| w * x.abs()).sum() };
    let mut v: Vec<f64> = match start {
        Some(s) if norm(s) > 0.0 && s.iter().all(|x| *x > 0.0) => s.to_vec(),
        _ => vec![1.0; n],
    };
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let kv = mat_vec(m, &v);
        let radius = norm(&kv);
        if !radius.is_finite() {
            return Err(Error::NoConvergence { iterations: it, residual: f64::INFINITY });
        }
        if radius == 0.0 {
            return Ok(SpectralResult { radius: 0.0, eigvec: v, iterations: it, residual: 0.0 });
        }
        residual = kv.iter().zip(&v).zip(weights).map(|((a, b), w)| w * (a - radius * b).abs()).sum();
        if residual <= tol {
            return Ok(SpectralResult { radius, eigvec: v, iterations: it, residual });
        }
        v = kv.into_iter().map(|x| x / radius).collect();
    }
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

/// Sign of `r(L) - 1`, `Zero` within `10·tol`.
pub fn sign_test(disc: &Discretization, tol: f64) -> Result<SignVerdict> {
    if disc.mu_nodes().iter().all(|m| *m == 0.0) {
        warn!("mortality vanishes identically; the sign test relies on outflow at s = 1 alone");
    }
    let k = build_l_lambda(disc, 0.0);
    let res = spectral_radius(&k, disc.grid().weights(), tol, DEFAULT_MAX_ITER)?;
    let margin = res.radius - 1.0;
    Ok(SignVerdict { sign: Sign::classify(margin, 10.0 * tol), radius: res.radius, margin })
}

/// Real `λ*` with `r(L_λ*) = 1`, by bracketing in `[-50, 50]` then bisection.
pub fn solve_characteristic_root(disc: &Discretization, tol: f64) -> Result<RootResult> {
    let weights = disc.grid().weights();
    let mut evaluations = 0;
    let mut warm: Option<Vec<f64>> = None;
    let mut radius_at = |lambda: f64, warm: &mut Option<Vec<f64>>| -> Result<SpectralResult> {
        evaluations += 1;
        let k = build_l_lambda(disc, lambda);
        let res = power_iteration(&k.entries, weights, warm.as_deref(), tol, DEFAULT_MAX_ITER);
        match res {
            Ok(r) => {
                if r.radius > 0.0 {
                    *warm = Some(r.eigvec.clone());
                }
                Ok(r)
            }
            Err(Error::NoConvergence { .. }) if k.entries.iter().any(|x| !x.is_finite()) => {
                Ok(SpectralResult { radius: f64::INFINITY, eigvec: vec![], iterations: 0, residual: 0.0 })
            }
            Err(e) => Err(e),
        }
    };

    let at_zero = radius_at(0.0, &mut warm)?;
    if at_zero.radius == 0.0 {
        return Err(Error::NoRoot { best_radius: 0.0 });
    }
    if (at_zero.radius - 1.0).abs() <= tol {
        return Ok(RootResult { lambda: 0.0, radius: at_zero.radius, eigvec: at_zero.eigvec, evaluations: 1 });
    }
    let up = at_zero.radius > 1.0;
    let (mut lo, mut hi) = (0.0, 0.0);
    let mut step: f64 = 1.0;
    loop {
        let lambda = if up { step.min(ROOT_BOUND) } else { -step.min(ROOT_BOUND) };
        let r = radius_at(lambda, &mut warm)?.radius;
        if up {
            if r < 1.0 {
                hi = lambda;
                break;
            }
            lo = lambda;
        } else {
            if r > 1.0 {
                lo = lambda;
                break;
            }
            hi = lambda;
        }
        if step >= ROOT_BOUND {
            return Err(Error::NoRoot { best_radius: r });
        }
        step *= 2.0;
    }

    let mut best = None;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let res = radius_at(mid, &mut warm)?;
        let diff = res.radius - 1.0;
        let done = diff.abs() <= tol * 1e-2 || (hi - lo) <= 1e-14 * (1.0 + mid.abs());
        if diff > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        best = Some((mid, res));
        if done {
            break;
        }
    }
    let (lambda, res) = best.expect("bisection ran");
    Ok(RootResult { lambda, radius: res.radius, eigvec: res.eigvec, evaluations })
}

/// Characteristic root extrapolated from grids with `N` and `2N` cells,
/// `(4 λ_{2N} - λ_N)/3`, cancelling the second-order quadrature error.
pub fn characteristic_root_extrapolated(model: &VitalRates, cells: usize, tol: f64) -> Result<f64> {
    let coarse = solve_characteristic_root(&Discretization::new(model.clone(), cells)?, tol)?;
    let fine = solve_characteristic_root(&Discretization::new(model.clone(), 2 * cells)?, tol)?;
    Ok((4.0 * fine.lambda - coarse.lambda) / 3.0)
}

/// `p(s_i) = (1/γ_i) Σ_{j ≤ i} trap_j exp(-λ(G_i - G_j) - (M_i - M_j)) f_j`.
pub fn eigendensity_from_f(disc: &Discretization, lambda: f64, f: &[f64]) -> Density {
    let n = disc.grid().len();
    let h = disc.grid().spacing();
    let g = disc.growth_time_nodes();
    let hz = disc.hazard_nodes();
    let gamma = disc.gamma_nodes();
    (0..n)
        .map(|i| {
            if i == 0 {
                return 0.0;
            }
            let sum: f64 = (0..=i)
                .map(|j| {
                    let trap = if j == 0 || j == i { 0.5 * h } else { h };
                    trap * (-lambda * (g[i] - g[j]) - (hz[i] - hz[j])).exp() * f[j]
                })
                .sum();
            sum / gamma[i]
        })
        .collect()
}

/// Steady density generated by a constant birth profile `b`.
pub fn steady_state_from_b(disc: &Discretization, b: &[f64]) -> Density {
    eigendensity_from_f(disc, 0.0, b)
}

/// Midpoint quadrature of the Laplace transform
/// `Σ_m Δa e^{-λ a_m} C T₀(a_m)`, `a_m = (m - ½)Δa`, `Δa = Γ/M`.
pub fn laplace_l0_quadrature(disc: &Discretization, lambda: f64, steps: usize) -> Result<KernelMatrix> {
    if steps < MIN_LAPLACE_STEPS {
        return Err(Error::GridTooCoarse { got: steps, min: MIN_LAPLACE_STEPS });
    }
    let n = disc.grid().len();
    let da = disc.horizon() / steps as f64;
    let mut transport = DMatrix::zeros(n, n);
    for m in 1..=steps {
        let a = (m as f64 - 0.5) * da;
        disc.t0_recipe(a).accumulate_into(&mut transport, da * (-lambda * a).exp());
    }
    Ok(KernelMatrix { entries: disc.recruitment_matrix() * transport, lambda })
}
