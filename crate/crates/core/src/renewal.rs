//! The renewal (delay) equation for the birth function.
//!
//! Each step evaluates `b(t_k) = C K(b_{t_k})`, where `b_{t_k}` is the window
//! of births over `[t_k - Γ, t_k]` and `K` is the size-quadrature operator
//! of [`KOperator`]. The window includes the current time, so the lag-0
//! part of `K` couples `b(t_k)` to itself; that small linear system is
//! solved with a single LU factorisation reused at every step.
//!
//! The forcing route writes the same scheme as `b = f + (resolvent) * f`
//! with the forcing `f` carrying all dependence on the history.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::transport::{AgeKernelSet, BirthHistory, Density, Discretization, KOperator};

/// Longest horizon, in multiples of Γ, for which resolvent matrices are stored.
pub const MAX_RESOLVENT_HORIZONS: f64 = 8.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenewalOptions {
    /// Divide by the current L¹ norm once per Γ and keep the log factors.
    pub renormalize: bool,
}

/// Births `b(·, t_k)`, `t_k = k·dt`, together with the initial history.
///
/// Stored columns are scaled: the true value of column `k` is
/// `values[k] · exp(log_scale[k])`. Without renormalisation all scales are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthTrajectory {
    pub history: BirthHistory,
    pub dt: f64,
    pub values: Vec<Density>,
    pub log_scale: Vec<f64>,
}

impl BirthTrajectory {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn column(&self, k: usize) -> Density {
        let f = self.log_scale[k].exp();
        self.values[k].iter().map(|v| v * f).collect()
    }

    /// `ln ‖b(t_k)‖₁` for every column, accounting for renormalisation.
    pub fn log_norms(&self, grid: &Grid) -> Vec<f64> {
        self.values.iter().zip(&self.log_scale).map(|(v, s)| grid.l1_norm(v).ln() + s).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Window `θ ↦ b(t + θ)`, `θ ∈ [-Γ, 0]`. At `t = 0` this is the initial
    /// history itself.
    pub fn shift_segment(&self, t: f64) -> Result<BirthHistory> {
        let steps = self.history.steps();
        let last = (self.values.len() - 1) as f64 * self.dt;
        let k = (t / self.dt).round();
        if !(t >= 0.0) || t > last + 1e-9 * self.dt || (k * self.dt - t).abs() > 1e-9 * self.dt.max(t) {
            return Err(Error::OutOfWindow { t, lo: 0.0, hi: last });
        }
        let k = k as usize;
        let columns = (0..=steps)
            .map(|c| {
                // time index relative to 0
                let idx = k as isize - (steps - c) as isize;
                if idx <= 0 {
                    self.history.columns[(steps as isize + idx) as usize].clone()
                } else {
                    self.column(idx as usize)
                }
            })
            .collect();
        Ok(BirthHistory { columns, dt: self.dt })
    }
}

struct Stepper<'a> {
    disc: &'a Discretization,
    k: &'a KOperator,
    lu: LU<f64, Dyn, Dyn>,
}

impl<'a> Stepper<'a> {
    fn new(disc: &'a Discretization, k: &'a KOperator) -> Self {
        let n = disc.grid().len();
        let lag0 = k.lag_matrix(0, n);
        let a = DMatrix::identity(n, n) - disc.recruitment_matrix() * lag0;
        Stepper { disc, k, lu: a.lu() }
    }

    /// Solves `b = C(E b + rest)` where `E` is the lag-0 part of `K`.
    fn solve(&self, rest: &[f64]) -> Density {
        let rhs = self.disc.recruitment_matrix() * DVector::from_column_slice(rest);
        let b = self.lu.solve(&rhs).expect("I - C E is nonsingular");
        b.as_slice().to_vec()
    }

    /// `Σ_{q ≥ 1} K_q` applied to the window given by `col(q)`.
    fn past_part<'b>(&self, col: impl Fn(usize) -> &'b [f64]) -> Density {
        let n = self.disc.grid().len();
        let mut out = vec![0.0; n];
        for q in 1..=self.k.steps() {
            let c = col(q);
            for &(i, j, w) in self.k.lag(q) {
                out[i] += w * c[j];
            }
        }
        out
    }

    fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(&(self.disc.recruitment_matrix() * rhs)).expect("I - C E is nonsingular")
    }
}

fn check_history(kernels: &AgeKernelSet, disc: &Discretization, phi: &BirthHistory) -> Result<()> {
    let k = kernels.k_operator();
    if phi.steps() != k.steps() {
        return Err(Error::StepMismatch { expected: k.dt(), got: phi.dt });
    }
    k.check_step(phi.dt)?;
    if phi.nodes() != disc.grid().len() {
        return Err(Error::OutOfDomain(format!(
            "history has {} size nodes, grid has {}",
            phi.nodes(),
            disc.grid().len()
        )));
    }
    Ok(())
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(t_end > 0.0) {
        return Err(Error::OutOfDomain(format!("horizon must be positive, got {t_end}")));
    }
    Ok((t_end / dt - 1e-9).ceil() as usize)
}

/// Steps the renewal equation from the history `phi` up to time `t_end`.
///
/// `values[0]` is `C K φ`, the births implied by the history at time 0;
/// the value `φ(·, 0)` itself stays in the history and is what later steps
/// see at time 0.
pub fn solve_renewal(
    disc: &Discretization,
    kernels: &AgeKernelSet,
    phi: &BirthHistory,
    t_end: f64,
    opts: RenewalOptions,
) -> Result<BirthTrajectory> {
    check_history(kernels, disc, phi)?;
    let k_op = kernels.k_operator();
    let steps = phi.steps();
    let dt = phi.dt;
    let total = step_count(t_end, dt)?;
    let grid = disc.grid();
    let stepper = Stepper::new(disc, k_op);

    // window[c] holds the (scaled) column at time t_{k-1} - (steps - 1 - c)·dt
    let mut window: Vec<Density> = phi.columns[1..].to_vec();
    let mut scale = 0.0;
    let mut values = Vec::with_capacity(total + 1);
    let mut log_scale = Vec::with_capacity(total + 1);
    values.push(disc.apply_c(&k_op.apply(phi)?));
    log_scale.push(0.0);
    for k in 1..=total {
        let rest = stepper.past_part(|q| &window[steps - q]);
        let b = stepper.solve(&rest);
        window.remove(0);
        window.push(b.clone());
        values.push(b);
        log_scale.push(scale);
        if opts.renormalize && k % steps == 0 {
            let norm = grid.l1_norm(window.last().expect("nonempty"));
            if norm > 0.0 && norm.is_finite() {
                window.iter_mut().flatten().for_each(|v| *v /= norm);
                scale += norm.ln();
            }
        }
    }
    Ok(BirthTrajectory { history: phi.clone(), dt, values, log_scale })
}

/// Forcing `f(t_k)`: the contribution of history births (times `≤ 0`) to
/// `b(t_k)`. Exactly zero for `t ≥ Γ`.
pub fn forcing_function(disc: &Discretization, kernels: &AgeKernelSet, phi: &BirthHistory, t: f64) -> Result<Density> {
    check_history(kernels, disc, phi)?;
    let steps = phi.steps();
    let dt = phi.dt;
    let n = disc.grid().len();
    if !(t >= 0.0) {
        return Err(Error::OutOfDomain(format!("forcing needs t >= 0, got {t}")));
    }
    let k = (t / dt).round() as usize;
    if (k as f64 * dt - t).abs() > 1e-9 * dt.max(t) {
        return Err(Error::OutOfWindow { t, lo: 0.0, hi: f64::INFINITY });
    }
    if k >= steps {
        return Ok(vec![0.0; n]);
    }
    let k_op = kernels.k_operator();
    let mut acc = vec![0.0; n];
    for q in k..=steps {
        let c = phi.at_lag(q - k);
        for &(i, j, w) in k_op.lag(q) {
            acc[i] += w * c[j];
        }
    }
    Ok(disc.apply_c(&acc))
}

/// Discrete resolvent `Λ_n`: births at `t_k` are `Σ_{n<k} Λ_n f(t_{k-n})`
/// for `k ≥ 1`. `Λ_n / dt` approximates the kernel `L(t_n)` summing all
/// generations; `Λ_0` carries the instantaneous part.
#[derive(Debug, Clone)]
pub struct ResolventKernel {
    pub dt: f64,
    pub matrices: Vec<DMatrix<f64>>,
}

impl ResolventKernel {
    /// `L(t_n) v ≈ Λ_n v / dt` for `n ≥ 1`.
    pub fn apply(&self, n: usize, v: &[f64]) -> Density {
        let out = &self.matrices[n] * DVector::from_column_slice(v);
        out.iter().map(|x| x / self.dt).collect()
    }
}

pub fn build_resolvent_kernel(disc: &Discretization, kernels: &AgeKernelSet, t_end: f64) -> Result<ResolventKernel> {
    let max = MAX_RESOLVENT_HORIZONS * disc.horizon();
    if t_end > max * (1.0 + 1e-12) {
        return Err(Error::HorizonTooLong { t: t_end, max });
    }
    let k_op = kernels.k_operator();
    let dt = kernels.dt();
    let total = step_count(t_end, dt)?;
    let n = disc.grid().len();
    let stepper = Stepper::new(disc, k_op);
    let mut matrices: Vec<DMatrix<f64>> = Vec::with_capacity(total + 1);
    let a = DMatrix::identity(n, n) - disc.recruitment_matrix() * k_op.lag_matrix(0, n);
    matrices.push(a.try_inverse().expect("I - C E is nonsingular"));
    for m in 1..=total {
        let mut acc = DMatrix::zeros(n, n);
        for q in 1..=m.min(k_op.steps()) {
            let prev = &matrices[m - q];
            for &(i, j, w) in k_op.lag(q) {
                let row = prev.row(j) * w;
                let mut target = acc.row_mut(i);
                target += row;
            }
        }
        matrices.push(stepper.solve_matrix(&acc));
    }
    Ok(ResolventKernel { dt, matrices })
}

/// Births from the forcing route, `b(t_0) = f(t_0)` and
/// `b(t_k) = Σ_{n<k} Λ_n f(t_{k-n})`.
pub fn forcing_route(
    disc: &Discretization,
    kernels: &AgeKernelSet,
    resolvent: &ResolventKernel,
    phi: &BirthHistory,
    t_end: f64,
) -> Result<Vec<Density>> {
    let total = step_count(t_end, phi.dt)?;
    if total >= resolvent.matrices.len() {
        return Err(Error::HorizonTooLong { t: t_end, max: (resolvent.matrices.len() - 1) as f64 * resolvent.dt });
    }
    let forcing: Vec<DVector<f64>> = (0..=total)
        .map(|k| forcing_function(disc, kernels, phi, k as f64 * phi.dt).map(DVector::from_vec))
        .collect::<Result<_>>()?;
    let mut out = vec![forcing[0].as_slice().to_vec()];
    for k in 1..=total {
        let mut b = DVector::zeros(disc.grid().len());
        for nn in 0..k {
            if forcing[k - nn].iter().any(|x| *x != 0.0) {
                b += &resolvent.matrices[nn] * &forcing[k - nn];
            }
        }
        out.push(b.as_slice().to_vec());
    }
    Ok(out)
}

/// `v_k ≈ L(t_k) ψ` for `k = 0..=K`: births generated by an initial density
/// `ψ` with no history, `v_0 = C ψ`.
pub fn resolvent_action(
    disc: &Discretization,
    kernels: &AgeKernelSet,
    psi: &[f64],
    t_end: f64,
) -> Result<Vec<Density>> {
    let k_op = kernels.k_operator();
    let dt = kernels.dt();
    let total = step_count(t_end, dt)?;
    let stepper = Stepper::new(disc, k_op);
    let mut out: Vec<Density> = vec![disc.apply_c(psi)];
    for k in 1..=total {
        let mut rest = if k <= kernels.steps() { kernels.recipe(k).apply(psi) } else { vec![0.0; psi.len()] };
        for q in 1..k.min(k_op.steps() + 1) {
            let c = &out[k - q];
            for &(i, j, w) in k_op.lag(q) {
                rest[i] += w * c[j];
            }
        }
        out.push(stepper.solve(&rest));
    }
    Ok(out)
}
