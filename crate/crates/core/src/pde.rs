//! Two solvers for the transport PDE with distributed recruitment, and
//! long-time growth-rate estimation.
//!
//! * `upwind`: conservative first-order finite volumes. Cell `i ≥ 1` covers
//!   `(s_{i-1}, s_i]` and holds the value at its right end; node 0 carries
//!   the boundary value `p(0) = 0`, so nothing flows in at `s = 0` and mass
//!   leaves freely through `s = 1`.
//! * `voc`: variation of constants, `p_{k+1} = T₀(Δt)(p_k + Δt C p_k)`.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::transport::{AgeKernelSet, Density, Discretization};

/// Stored norms outside `[1e-300, 1e300]` cannot be fitted.
pub const NORM_FLOOR: f64 = 1e-300;
pub const NORM_CEIL: f64 = 1e300;
/// With renormalisation, columns are rescaled whenever their norm leaves
/// `[1e-100, 1e100]`, on top of the rescaling once per Γ.
const RESCALE_BAND: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Upwind,
    Voc,
    KFromRenewal,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Upwind => "upwind",
            Scheme::Voc => "voc",
            Scheme::KFromRenewal => "k-from-renewal",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upwind" => Ok(Scheme::Upwind),
            "voc" => Ok(Scheme::Voc),
            "k-from-renewal" => Ok(Scheme::KFromRenewal),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Densities at output times. True column `k` is `columns[k]·exp(log_scale[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTrajectory {
    pub times: Vec<f64>,
    pub columns: Vec<Density>,
    pub log_scale: Vec<f64>,
    pub scheme: Scheme,
}

impl DensityTrajectory {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, k: usize) -> Density {
        let f = self.log_scale[k].exp();
        self.columns[k].iter().map(|v| v * f).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.columns.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Least-squares growth rate of `‖p(t)‖₁` over the final half.
    pub fn growth_rate(&self, grid: &Grid) -> Result<f64> {
        let stored: Vec<f64> = self.columns.iter().map(|c| grid.l1_norm(c)).collect();
        growth_rate(&self.times, &stored, &self.log_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpwindOptions {
    /// Courant number `Δt·max γ/Δs`, in `(0, 1]`.
    pub cfl: f64,
    /// Spacing of recorded columns; the time step is reduced so that it divides
    /// this spacing. `None` records every step.
    pub output_dt: Option<f64>,
    pub renormalize: bool,
}

impl Default for UpwindOptions {
    fn default() -> Self {
        UpwindOptions { cfl: 0.9, output_dt: None, renormalize: false }
    }
}

/// Mass `Δs Σ_{i≥1} p_i` of the finite-volume cells.
pub fn fv_mass(grid: &Grid, p: &[f64]) -> f64 {
    grid.spacing() * p[1..].iter().sum::<f64>()
}

/// Rate of change of [`fv_mass`] implied by the scheme:
/// `γ(0)p_0 - γ(1)p_N - Δs Σ μ_i p_i + Δs Σ (Cp)_i` over cells `i ≥ 1`.
pub fn fv_mass_rate(disc: &Discretization, p: &[f64]) -> f64 {
    let h = disc.grid().spacing();
    let n = p.len() - 1;
    let g = disc.gamma_nodes();
    let mu = disc.mu_nodes();
    let cp = disc.apply_c(p);
    let sink: f64 = (1..=n).map(|i| mu[i] * p[i]).sum();
    let source: f64 = cp[1..].iter().sum();
    g[0] * p[0] - g[n] * p[n] - h * sink + h * source
}

/// One explicit upwind step of length `dt`.
pub fn upwind_step(disc: &Discretization, p: &[f64], dt: f64) -> Density {
    let h = disc.grid().spacing();
    let g = disc.gamma_nodes();
    let mu = disc.mu_nodes();
    let cp = disc.apply_c(p);
    let r = dt / h;
    let mut out = vec![0.0; p.len()];
    for i in 1..p.len() {
        out[i] = p[i] - r * (g[i] * p[i] - g[i - 1] * p[i - 1]) - dt * mu[i] * p[i] + dt * cp[i];
    }
    out
}

/// Largest stable step for a Courant number and the positivity condition.
fn upwind_dt(disc: &Discretization, cfl: f64) -> Result<f64> {
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::CflViolation(format!("cfl must lie in (0, 1], got {cfl}")));
    }
    let h = disc.grid().spacing();
    let gmax = disc.gamma_nodes().iter().fold(0.0f64, |m, v| m.max(*v));
    Ok(cfl * h / gmax)
}

fn check_positivity(disc: &Discretization, dt: f64) -> Result<()> {
    let h = disc.grid().spacing();
    for (i, (g, m)) in disc.gamma_nodes().iter().zip(disc.mu_nodes()).enumerate().skip(1) {
        let diag = 1.0 - dt * g / h - dt * m;
        if diag < 0.0 {
            return Err(Error::CflViolation(format!(
                "step {dt} makes the diagonal coefficient negative at node {i} ({diag})"
            )));
        }
    }
    Ok(())
}

struct Recorder {
    times: Vec<f64>,
    columns: Vec<Density>,
    log_scale: Vec<f64>,
    scale: f64,
    renormalize: bool,
    last_rescale: f64,
    period: f64,
}

impl Recorder {
    fn new(renormalize: bool, period: f64) -> Self {
        Recorder {
            times: vec![],
            columns: vec![],
            log_scale: vec![],
            scale: 0.0,
            renormalize,
            last_rescale: 0.0,
            period,
        }
    }

    fn record(&mut self, t: f64, p: &mut Density, grid: &Grid) {
        self.times.push(t);
        self.columns.push(p.clone());
        self.log_scale.push(self.scale);
        if self.renormalize {
            let norm = grid.l1_norm(p);
            let due = t - self.last_rescale >= self.period * (1.0 - 1e-9);
            if norm > 0.0 && norm.is_finite() && (due || !(1.0 / RESCALE_BAND..=RESCALE_BAND).contains(&norm)) {
                p.iter_mut().for_each(|v| *v /= norm);
                self.scale += norm.ln();
                self.last_rescale = t;
            }
        }
    }

    fn finish(self, scheme: Scheme) -> DensityTrajectory {
        DensityTrajectory { times: self.times, columns: self.columns, log_scale: self.log_scale, scheme }
    }
}

fn check_initial(disc: &Discretization, p0: &[f64], t_end: f64) -> Result<()> {
    if p0.len() != disc.grid().len() {
        return Err(Error::OutOfDomain(format!(
            "density has {} values, grid has {} nodes",
            p0.len(),
            disc.grid().len()
        )));
    }
    if let Some(v) = p0.iter().find(|v| !v.is_finite()) {
        return Err(Error::OutOfDomain(format!("initial density contains {v}")));
    }
    if !(t_end > 0.0) {
        return Err(Error::OutOfDomain(format!("horizon must be positive, got {t_end}")));
    }
    Ok(())
}

/// Upwind finite-volume solution from `p0` up to `t_end`.
pub fn solve_pde_upwind(
    disc: &Discretization,
    p0: &[f64],
    t_end: f64,
    opts: UpwindOptions,
) -> Result<DensityTrajectory> {
    check_initial(disc, p0, t_end)?;
    let max_dt = upwind_dt(disc, opts.cfl)?;
    let (dt, per_output) = match opts.output_dt {
        Some(out) => {
            let sub = (out / max_dt - 1e-9).ceil().max(1.0) as usize;
            (out / sub as f64, sub)
        }
        None => (max_dt, 1),
    };
    check_positivity(disc, dt)?;
    let outputs = (t_end / (dt * per_output as f64) - 1e-9).ceil() as usize;
    let grid = disc.grid();
    let mut rec = Recorder::new(opts.renormalize, disc.horizon());
    let mut p = p0.to_vec();
    p[0] = 0.0;
    rec.record(0.0, &mut p, grid);
    for k in 1..=outputs {
        for _ in 0..per_output {
            p = upwind_step(disc, &p, dt);
        }
        rec.record(k as f64 * per_output as f64 * dt, &mut p, grid);
    }
    Ok(rec.finish(Scheme::Upwind))
}

/// Variation-of-constants stepping with the step `Δt = Γ/M` of `kernels`.
pub fn solve_pde_voc(
    disc: &Discretization,
    kernels: &AgeKernelSet,
    p0: &[f64],
    t_end: f64,
    renormalize: bool,
) -> Result<DensityTrajectory> {
    check_initial(disc, p0, t_end)?;
    let dt = kernels.dt();
    let expected = disc.horizon() / kernels.steps() as f64;
    if (dt - expected).abs() > 1e-12 * expected {
        return Err(Error::StepMismatch { expected, got: dt });
    }
    let step = kernels.recipe(1);
    let steps = (t_end / dt - 1e-9).ceil() as usize;
    let grid = disc.grid();
    let mut rec = Recorder::new(renormalize, disc.horizon());
    let mut p = p0.to_vec();
    rec.record(0.0, &mut p, grid);
    for k in 1..=steps {
        let cp = disc.apply_c(&p);
        let src: Vec<f64> = p.iter().zip(&cp).map(|(a, b)| a + dt * b).collect();
        p = step.apply(&src);
        rec.record(k as f64 * dt, &mut p, grid);
    }
    Ok(rec.finish(Scheme::Voc))
}

/// Least-squares slope of `ln(stored_k) + log_scale_k` against `t_k` over the
/// final half of the window.
pub fn growth_rate(times: &[f64], stored_norms: &[f64], log_scale: &[f64]) -> Result<f64> {
    if times.len() < 4 {
        return Err(Error::DegenerateTrajectory(format!("need at least 4 samples, got {}", times.len())));
    }
    let t_end = *times.last().expect("nonempty");
    let t_mid = times[0] + 0.5 * (t_end - times[0]);
    let mut pts = Vec::new();
    for ((t, n), s) in times.iter().zip(stored_norms).zip(log_scale) {
        if *t + 1e-12 < t_mid {
            continue;
        }
        if !(*n >= NORM_FLOOR && *n <= NORM_CEIL) {
            return Err(Error::DegenerateTrajectory(format!(
                "norm {n:e} at t = {t} is outside [1e-300, 1e300]; renormalize"
            )));
        }
        pts.push((*t, n.ln() + s));
    }
    least_squares_slope(&pts)
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> Result<f64> {
    if pts.len() < 2 {
        return Err(Error::DegenerateTrajectory("too few samples in the fitting window".into()));
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt) * (t - mt)));
    if den == 0.0 {
        return Err(Error::DegenerateTrajectory("fitting window has zero length".into()));
    }
    Ok(num / den)
}
