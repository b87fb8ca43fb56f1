//! Experiments comparing the PDE and renewal formulations.
//!
//! Every experiment runs at a reference resolution `N = M` and again at
//! `2N = 2M`; the report carries both discrepancies so that agreement can be
//! judged together with its convergence under refinement.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::VitalRates;
use crate::pde::{solve_pde_upwind, solve_pde_voc, DensityTrajectory, Scheme, UpwindOptions};
use crate::renewal::{resolvent_action, solve_renewal, BirthTrajectory, RenewalOptions};
use crate::spectral::{
    build_l_lambda, solve_characteristic_root, spectral_radius, steady_state_from_b, Sign, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
use crate::transport::{AgeKernelSet, BirthHistory, Density, Discretization, Weighting};

/// Required improvement of the discrepancy when the resolution doubles.
pub const MIN_CONVERGENCE_RATIO: f64 = 1.5;
/// Discrepancies below this are at rounding level and need not shrink further.
pub const ROUNDING_FLOOR: f64 = 1e-8;
/// Sign band for growth rates in the sign sweep.
pub const SIGN_BAND: f64 = 5e-3;
/// Tolerance cap for the birth direction of the steady-state check.
pub const STEADY_BIRTH_TOL: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub experiment: String,
    pub model: String,
    /// `(N, M)` pairs, reference first.
    pub resolutions: Vec<(usize, usize)>,
    /// `(t, discrepancy)` at the reference resolution.
    pub table: Vec<(f64, f64)>,
    /// Summary discrepancy at each resolution.
    pub discrepancies: Vec<f64>,
    pub tolerance: f64,
}

impl EquivalenceReport {
    /// Summary discrepancy at the reference resolution.
    pub fn summary(&self) -> f64 {
        self.discrepancies[0]
    }

    /// Coarse over fine discrepancy, when a refinement was run.
    pub fn ratio(&self) -> Option<f64> {
        match self.discrepancies.as_slice() {
            [coarse, fine, ..] => Some(if *fine == 0.0 { f64::INFINITY } else { coarse / fine }),
            _ => None,
        }
    }

    pub fn within_tolerance(&self) -> bool {
        self.summary() <= self.tolerance
    }

    /// The fine discrepancy is at least [`MIN_CONVERGENCE_RATIO`] times smaller,
    /// or already at rounding level. True when no refinement was run.
    pub fn converges(&self) -> bool {
        match self.discrepancies.as_slice() {
            [coarse, fine, ..] => *fine <= ROUNDING_FLOOR || *fine * MIN_CONVERGENCE_RATIO <= *coarse,
            _ => true,
        }
    }

    pub fn passed(&self) -> bool {
        self.within_tolerance() && self.converges()
    }
}

type ProfileFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Recipe for a birth history that can be sampled at any resolution.
#[derive(Clone)]
pub enum HistorySource {
    /// `φ ≡ c`.
    Constant(f64),
    /// `φ(s, θ)` with `θ ∈ [-Γ, 0]`.
    Profile(ProfileFn),
    /// Built from an initial density by `history_from_density`.
    FromDensity { p0: DensityFn, weighting: Weighting },
}

impl std::fmt::Debug for HistorySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HistorySource::Constant(c) => write!(f, "Constant({c})"),
            HistorySource::Profile(_) => write!(f, "Profile"),
            HistorySource::FromDensity { weighting, .. } => write!(f, "FromDensity({weighting:?})"),
        }
    }
}

impl HistorySource {
    pub fn profile(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        HistorySource::Profile(Arc::new(f))
    }

    pub fn from_density(p0: impl Fn(f64) -> f64 + Send + Sync + 'static, weighting: Weighting) -> Self {
        HistorySource::FromDensity { p0: Arc::new(p0), weighting }
    }

    pub fn sample(&self, disc: &Discretization, steps: usize) -> Result<BirthHistory> {
        let dt = disc.horizon() / steps as f64;
        match self {
            HistorySource::Constant(c) => Ok(BirthHistory::constant_in_time(&vec![*c; disc.grid().len()], steps, dt)),
            HistorySource::Profile(f) => Ok(BirthHistory::from_fn(disc.grid(), steps, dt, |s, t| f(s, t))),
            HistorySource::FromDensity { p0, weighting } => {
                let p: Density = disc.grid().nodes().iter().map(|s| p0(*s)).collect();
                disc.history_from_density(&p, steps, *weighting)
            }
        }
    }
}

/// Resolution and horizon shared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    /// Reference number of cells; the time grid uses `M = N`.
    pub cells: usize,
    /// Horizon in multiples of Γ.
    pub horizons: f64,
    /// Also run at `2N`.
    pub refine: bool,
    pub cfl: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings { cells: 200, horizons: 3.0, refine: true, cfl: 0.9 }
    }
}

impl RunSettings {
    fn resolutions(&self) -> Vec<usize> {
        if self.refine {
            vec![self.cells, 2 * self.cells]
        } else {
            vec![self.cells]
        }
    }
}

struct Level {
    disc: Discretization,
    kernels: AgeKernelSet,
}

impl Level {
    fn new(model: &VitalRates, cells: usize) -> Result<Self> {
        let disc = Discretization::new(model.clone(), cells)?;
        let kernels = AgeKernelSet::build(&disc, cells)?;
        Ok(Level { disc, kernels })
    }

    fn t_end(&self, settings: &RunSettings) -> f64 {
        settings.horizons * self.disc.horizon()
    }

    fn upwind(&self, p0: &[f64], t_end: f64, cfl: f64) -> Result<DensityTrajectory> {
        let opts = UpwindOptions { cfl, output_dt: Some(self.kernels.dt()), renormalize: false };
        solve_pde_upwind(&self.disc, p0, t_end, opts)
    }
}

/// `p(t_k) = K(S(t_k) φ)` for every column of a renewal trajectory.
pub fn density_from_renewal(kernels: &AgeKernelSet, traj: &BirthTrajectory) -> Result<DensityTrajectory> {
    let k = kernels.k_operator();
    let times = traj.times();
    let columns = times.iter().map(|t| k.apply(&traj.shift_segment(*t)?)).collect::<Result<Vec<_>>>()?;
    Ok(DensityTrajectory { log_scale: vec![0.0; times.len()], times, columns, scheme: Scheme::KFromRenewal })
}

fn finish(
    experiment: &str,
    model: &VitalRates,
    cells: &[usize],
    tables: Vec<Vec<(f64, f64)>>,
    tolerance: f64,
) -> EquivalenceReport {
    let discrepancies = tables.iter().map(|t| t.iter().map(|(_, d)| *d).fold(0.0, f64::max)).collect();
    EquivalenceReport {
        experiment: experiment.to_string(),
        model: model.name().to_string(),
        resolutions: cells.iter().map(|n| (*n, *n)).collect(),
        table: tables.into_iter().next().unwrap_or_default(),
        discrepancies,
        tolerance,
    }
}

/// Compares `K S(t) φ` (renewal route) with the upwind solution started from
/// `K φ`: `sup_t ‖·‖₁ / ‖Kφ‖₁`.
pub fn run_intertwining(
    model: &VitalRates,
    history: &HistorySource,
    settings: &RunSettings,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let cells = settings.resolutions();
    let mut tables = Vec::new();
    for &n in &cells {
        let lvl = Level::new(model, n)?;
        let t_end = lvl.t_end(settings);
        let phi = history.sample(&lvl.disc, n)?;
        let traj = solve_renewal(&lvl.disc, &lvl.kernels, &phi, t_end, RenewalOptions::default())?;
        let delay = density_from_renewal(&lvl.kernels, &traj)?;
        let p0 = delay.columns[0].clone();
        let scale = lvl.disc.grid().l1_norm(&p0);
        let pde = lvl.upwind(&p0, t_end, settings.cfl)?;
        tables.push(relative_gaps(&lvl.disc, &delay.times, &delay.columns, &pde.columns, scale));
    }
    Ok(finish("intertwining", model, &cells, tables, tolerance))
}

/// Compares renewal births with `C p(t)` for the upwind solution from `K φ`:
/// `sup_t ‖·‖₁ / sup_t ‖b(t)‖₁`.
pub fn run_birth_extraction(
    model: &VitalRates,
    history: &HistorySource,
    settings: &RunSettings,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let cells = settings.resolutions();
    let mut tables = Vec::new();
    for &n in &cells {
        let lvl = Level::new(model, n)?;
        let t_end = lvl.t_end(settings);
        let phi = history.sample(&lvl.disc, n)?;
        let traj = solve_renewal(&lvl.disc, &lvl.kernels, &phi, t_end, RenewalOptions::default())?;
        let p0 = lvl.disc.apply_k(&phi)?;
        let pde = lvl.upwind(&p0, t_end, settings.cfl)?;
        let births: Vec<Density> = pde.columns.iter().map(|p| lvl.disc.apply_c(p)).collect();
        let scale = traj.values.iter().map(|b| lvl.disc.grid().l1_norm(b)).fold(0.0, f64::max);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        tables.push(relative_gaps(&lvl.disc, &traj.times(), &traj.values, &births, scale));
    }
    Ok(finish("birth", model, &cells, tables, tolerance))
}

fn relative_gaps(disc: &Discretization, times: &[f64], a: &[Density], b: &[Density], scale: f64) -> Vec<(f64, f64)> {
    let scale = if scale > 0.0 { scale } else { 1.0 };
    times.iter().zip(a.iter().zip(b)).map(|(t, (x, y))| (*t, disc.grid().l1_distance(x, y) / scale)).collect()
}

/// Both directions of the steady-state correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateReport {
    pub radius: f64,
    /// Factor applied to β before the check (1 when not rescaled).
    pub rescale: f64,
    /// PDE solutions (upwind and voc) started from `p*` stay near `p*`:
    /// `sup_t ‖p(t) - p*‖₁` with `b*` normalised to unit weighted L¹ norm.
    pub density_direction: EquivalenceReport,
    /// The renewal equation started from `φ ≡ C p*` stays near `C p*`, within
    /// the smaller of the tolerance and [`STEADY_BIRTH_TOL`].
    pub birth_direction: EquivalenceReport,
    pub steady_density: Density,
    pub steady_births: Density,
}

impl SteadyStateReport {
    pub fn passed(&self) -> bool {
        self.density_direction.passed() && self.birth_direction.passed()
    }
}

/// Steady-state check. With `auto_rescale`, β is first divided by `r(L)`;
/// otherwise `r(L)` must be within `1e-3` of 1.
pub fn run_steady_state_check(
    model: &VitalRates,
    settings: &RunSettings,
    auto_rescale: bool,
    tolerance: f64,
) -> Result<SteadyStateReport> {
    let base = Discretization::new(model.clone(), settings.cells)?;
    let r0 = spectral_radius(&build_l_lambda(&base, 0.0), base.grid().weights(), DEFAULT_TOL, DEFAULT_MAX_ITER)?.radius;
    if r0 == 0.0 || (!auto_rescale && (r0 - 1.0).abs() > 1e-3) {
        return Err(Error::NotCritical { radius: r0 });
    }
    let rescale = if auto_rescale { 1.0 / r0 } else { 1.0 };
    let model = if auto_rescale { model.scale_beta(rescale) } else { model.clone() };

    let cells = settings.resolutions();
    let mut density_tables = Vec::new();
    let mut birth_tables = Vec::new();
    let mut pair = None;
    for &n in &cells {
        let lvl = Level::new(&model, n)?;
        let t_end = lvl.t_end(settings);
        let kernel = build_l_lambda(&lvl.disc, 0.0);
        let eig = spectral_radius(&kernel, lvl.disc.grid().weights(), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let lvl = if auto_rescale {
            let disc = lvl.disc.scaled(1.0 / eig.radius);
            let kernels = AgeKernelSet::build(&disc, n)?;
            Level { disc, kernels }
        } else {
            lvl
        };
        let b_star = eig.eigvec.clone();
        let p_star = steady_state_from_b(&lvl.disc, &b_star);

        let up = lvl.upwind(&p_star, t_end, settings.cfl)?;
        let voc = solve_pde_voc(&lvl.disc, &lvl.kernels, &p_star, t_end, false)?;
        let table: Vec<(f64, f64)> = up
            .times
            .iter()
            .zip(up.columns.iter().zip(&voc.columns))
            .map(|(t, (a, b))| {
                let ea = lvl.disc.grid().l1_distance(a, &p_star);
                let eb = lvl.disc.grid().l1_distance(b, &p_star);
                (*t, ea.max(eb))
            })
            .collect();
        density_tables.push(table);

        let c_star = lvl.disc.apply_c(&p_star);
        let c_norm = lvl.disc.grid().l1_norm(&c_star);
        let phi = BirthHistory::constant_in_time(&c_star, n, lvl.kernels.dt());
        let traj = solve_renewal(&lvl.disc, &lvl.kernels, &phi, t_end, RenewalOptions::default())?;
        birth_tables.push(relative_gaps(
            &lvl.disc,
            &traj.times(),
            &traj.values,
            &vec![c_star.clone(); traj.len()],
            c_norm,
        ));
        if pair.is_none() {
            pair = Some((p_star, b_star));
        }
    }
    let (steady_density, steady_births) = pair.expect("at least one resolution");
    Ok(SteadyStateReport {
        radius: r0,
        rescale,
        density_direction: finish("steady-density", &model, &cells, density_tables, tolerance),
        birth_direction: finish("steady-births", &model, &cells, birth_tables, tolerance.min(STEADY_BIRTH_TOL)),
        steady_density,
        steady_births,
    })
}

/// `T(t)ψ` (voc scheme) against `K(θ ↦ L(t+θ)ψ)` at `t = horizons·Γ`,
/// relative to `‖ψ‖₁`.
pub fn run_range_inclusion(
    model: &VitalRates,
    psi: &(dyn Fn(f64) -> f64 + Sync),
    horizons: f64,
    settings: &RunSettings,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    if horizons < 1.0 {
        return Err(Error::OutOfWindow { t: horizons, lo: 1.0, hi: crate::renewal::MAX_RESOLVENT_HORIZONS - 1.0 });
    }
    if horizons + 1.0 > crate::renewal::MAX_RESOLVENT_HORIZONS {
        return Err(Error::HorizonTooLong { t: horizons + 1.0, max: crate::renewal::MAX_RESOLVENT_HORIZONS });
    }
    let cells = settings.resolutions();
    let mut tables = Vec::new();
    for &n in &cells {
        let lvl = Level::new(model, n)?;
        let dt = lvl.kernels.dt();
        let k = (horizons * n as f64).round() as usize;
        let t = k as f64 * dt;
        let p: Density = lvl.disc.grid().nodes().iter().map(|s| psi(*s)).collect();
        let scale = lvl.disc.grid().l1_norm(&p);
        let voc = solve_pde_voc(&lvl.disc, &lvl.kernels, &p, t, false)?;
        let lhs = voc.columns.last().expect("nonempty").clone();
        let v = resolvent_action(&lvl.disc, &lvl.kernels, &p, t)?;
        let rhs = lvl.kernels.k_operator().apply_lagged(p.len(), |q| &v[k - q]);
        let gap = lvl.disc.grid().l1_distance(&lhs, &rhs) / if scale > 0.0 { scale } else { 1.0 };
        tables.push(vec![(t, gap)]);
    }
    Ok(finish("range", model, &cells, tables, tolerance))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignSweepRow {
    pub model: String,
    pub theta: f64,
    pub radius_margin: f64,
    pub lambda_star: f64,
    pub pde_rate: f64,
    pub renewal_rate: f64,
}

impl SignSweepRow {
    pub fn signs(&self) -> [Sign; 4] {
        [
            Sign::classify(self.radius_margin, SIGN_BAND),
            Sign::classify(self.lambda_star, SIGN_BAND),
            Sign::classify(self.pde_rate, SIGN_BAND),
            Sign::classify(self.renewal_rate, SIGN_BAND),
        ]
    }

    pub fn consistent(&self) -> bool {
        let s = self.signs();
        s.iter().all(|x| *x == s[0])
    }
}

/// For each factor `θ`, scales β by `θ / r(L)` so that `θ` is the spectral
/// radius of the scaled model, then reports `r(L) - 1`, `λ*` and the fitted
/// growth rates of the upwind PDE and renewal solutions.
pub fn run_sign_sweep(model: &VitalRates, thetas: &[f64], cells: usize, horizons: f64) -> Result<Vec<SignSweepRow>> {
    let base = Discretization::new(model.clone(), cells)?;
    let r0 = spectral_radius(&build_l_lambda(&base, 0.0), base.grid().weights(), DEFAULT_TOL, DEFAULT_MAX_ITER)?.radius;
    if r0 == 0.0 {
        return Err(Error::NotCritical { radius: 0.0 });
    }
    let mut rows = Vec::new();
    for &theta in thetas {
        let disc = base.scaled(theta / r0);
        let kernels = AgeKernelSet::build(&disc, cells)?;
        let radius =
            spectral_radius(&build_l_lambda(&disc, 0.0), disc.grid().weights(), DEFAULT_TOL, DEFAULT_MAX_ITER)?.radius;
        let root = solve_characteristic_root(&disc, DEFAULT_TOL)?;
        let t_end = horizons * disc.horizon();
        let phi = BirthHistory::constant_in_time(&vec![1.0; disc.grid().len()], cells, kernels.dt());
        let opts = RenewalOptions { renormalize: true };
        let traj = solve_renewal(&disc, &kernels, &phi, t_end, opts)?;
        let stored: Vec<f64> = traj.values.iter().map(|b| disc.grid().l1_norm(b)).collect();
        let renewal_rate = crate::pde::growth_rate(&traj.times(), &stored, &traj.log_scale)?;
        let p0 = disc.apply_k(&phi)?;
        let opts = UpwindOptions { cfl: 0.9, output_dt: Some(kernels.dt()), renormalize: true };
        let pde_rate = solve_pde_upwind(&disc, &p0, t_end, opts)?.growth_rate(disc.grid())?;
        rows.push(SignSweepRow {
            model: model.name().to_string(),
            theta,
            radius_margin: radius - 1.0,
            lambda_star: root.lambda,
            pde_rate,
            renewal_rate,
        });
    }
    Ok(rows)
}
