//! Discretised transport and recruitment operators.
//!
//! [`Discretization`] bundles a model with a size grid and its characteristic
//! tables. On top of it live the birth-free semigroup `T₀(t)` (as
//! interpolation recipes along characteristics), the recruitment operator
//! `C`, the age kernels `L₀(a) = C T₀(a)` and the operator `K` sending a
//! birth history on `[-Γ, 0]` to the density it produces at time 0.

use nalgebra::{DMatrix, DVector};

use crate::characteristics::FlowCache;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::VitalRates;

/// Grid sampling of a density, `values[i] = p(s_i)`.
pub type Density = Vec<f64>;

/// Smallest number of age steps accepted by [`AgeKernelSet::build`].
pub const MIN_AGE_STEPS: usize = 8;

/// Threshold on sampled history values beyond which a history is rejected.
pub const HISTORY_BLOWUP: f64 = 1e12;

/// Birth history on the window `[-Γ, 0]`.
///
/// `columns[k][i] = φ(s_i, t_k)` with `t_k = -Γ + k·dt`, `k = 0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthHistory {
    pub columns: Vec<Vec<f64>>,
    pub dt: f64,
}

impl BirthHistory {
    pub fn zeros(nodes: usize, steps: usize, dt: f64) -> Self {
        BirthHistory { columns: vec![vec![0.0; nodes]; steps + 1], dt }
    }

    /// History constant in time.
    pub fn constant_in_time(column: &[f64], steps: usize, dt: f64) -> Self {
        BirthHistory { columns: vec![column.to_vec(); steps + 1], dt }
    }

    /// History from a function of size and time `θ ∈ [-Γ, 0]`.
    pub fn from_fn(grid: &Grid, steps: usize, dt: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let horizon = steps as f64 * dt;
        let columns = (0..=steps)
            .map(|k| {
                let t = -horizon + k as f64 * dt;
                grid.nodes().iter().map(|&s| f(s, t)).collect()
            })
            .collect();
        BirthHistory { columns, dt }
    }

    /// Number of time steps `M`.
    pub fn steps(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.columns[0].len()
    }

    /// Column at time `θ = -q·dt`.
    pub fn at_lag(&self, q: usize) -> &[f64] {
        &self.columns[self.steps() - q]
    }

    pub fn min_value(&self) -> f64 {
        self.columns.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.columns.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// How `history_from_density` spreads each size over its possible birth sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `w(x, y) = 1/y`.
    Uniform,
    /// `w(x, y) = survival(x, y) / ∫₀ʸ survival(x', y) dx'`.
    Survival,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Weighting::Uniform),
            "survival" => Ok(Weighting::Survival),
            other => Err(Error::Config(format!("unknown weighting '{other}'"))),
        }
    }
}

/// A model sampled on a grid together with its characteristic tables.
#[derive(Debug, Clone)]
pub struct Discretization {
    model: VitalRates,
    grid: Grid,
    cache: FlowCache,
    gamma: Vec<f64>,
    mu: Vec<f64>,
    growth_time: Vec<f64>,
    hazard: Vec<f64>,
    beta: DMatrix<f64>,
    recruit: DMatrix<f64>,
}

impl Discretization {
    pub fn new(model: VitalRates, cells: usize) -> Result<Self> {
        let grid = Grid::new(cells)?;
        let cache = FlowCache::new(&model);
        Ok(Self::from_parts(model, grid, cache))
    }

    pub fn from_parts(model: VitalRates, grid: Grid, cache: FlowCache) -> Self {
        let s = grid.nodes();
        let n = grid.len();
        let gamma = s.iter().map(|&x| model.gamma(x)).collect();
        let mu = s.iter().map(|&x| model.mu(x)).collect();
        let growth_time = s.iter().map(|&x| cache.cumulative_inv_gamma(x)).collect();
        let hazard = s.iter().map(|&x| cache.cumulative_mu_over_gamma(x)).collect();
        let beta = DMatrix::from_fn(n, n, |i, j| model.beta(s[i], s[j]));
        let w = grid.weights();
        let recruit = DMatrix::from_fn(n, n, |i, j| beta[(i, j)] * w[j]);
        Discretization { model, grid, cache, gamma, mu, growth_time, hazard, beta, recruit }
    }

    pub fn model(&self) -> &VitalRates {
        &self.model
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cache(&self) -> &FlowCache {
        &self.cache
    }

    /// Γ.
    pub fn horizon(&self) -> f64 {
        self.cache.horizon()
    }

    pub fn gamma_nodes(&self) -> &[f64] {
        &self.gamma
    }

    pub fn mu_nodes(&self) -> &[f64] {
        &self.mu
    }

    /// `G(s_i)` at every node.
    pub fn growth_time_nodes(&self) -> &[f64] {
        &self.growth_time
    }

    /// `M(s_i)` at every node.
    pub fn hazard_nodes(&self) -> &[f64] {
        &self.hazard
    }

    /// `β(s_i, s_j)`.
    pub fn beta_matrix(&self) -> &DMatrix<f64> {
        &self.beta
    }

    /// `β(s_i, s_j)·w_j`, the matrix of `C`.
    pub fn recruitment_matrix(&self) -> &DMatrix<f64> {
        &self.recruit
    }

    /// Same discretisation with fertility multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Discretization {
            model: self.model.scale_beta(factor),
            beta: &self.beta * factor,
            recruit: &self.recruit * factor,
            ..self.clone()
        }
    }

    /// `(C p)(s_i) = Σ_j w_j β(s_i, s_j) p_j`.
    pub fn apply_c(&self, p: &[f64]) -> Density {
        mat_vec(&self.recruit, p)
    }

    /// Interpolation recipe for `T₀(t)`.
    pub fn t0_recipe(&self, t: f64) -> T0Recipe {
        let horizon = self.horizon();
        let s = self.grid.nodes();
        let stencils = (0..self.grid.len())
            .map(|i| {
                if t > horizon {
                    return None;
                }
                if t == 0.0 {
                    return Some(Stencil { lo: i, frac: 0.0, factor: 1.0 });
                }
                let x = self.cache.foot_point(t, s[i])?;
                let (lo, frac) = self.grid.locate(x);
                let hazard = (self.hazard[i] - self.cache.cumulative_mu_over_gamma(x)).max(0.0);
                let factor = self.model.gamma(x) / self.gamma[i] * (-hazard).exp();
                Some(Stencil { lo, frac, factor })
            })
            .collect();
        T0Recipe { stencils }
    }

    /// `T₀(t) p`: transport along characteristics with survival, zero for
    /// sizes not yet reached by anyone present at time 0.
    pub fn apply_t0(&self, t: f64, p: &[f64]) -> Density {
        self.t0_recipe(t).apply(p)
    }

    /// `K φ` for a history on the grid `dt = Γ/M`.
    pub fn apply_k(&self, phi: &BirthHistory) -> Result<Density> {
        let k = KOperator::build(self, phi.steps());
        k.apply(phi)
    }

    /// Builds a history `φ ≥ 0` with `K φ = p0`.
    ///
    /// `φ(x, t) = γ(Y) p0(Y) w(x, Y) / survival(x, Y)` where `Y` is the size
    /// reached at time 0 from size `x` at time `t`, and `φ = 0` once `Y`
    /// would exceed 1.
    pub fn history_from_density(&self, p0: &[f64], steps: usize, weighting: Weighting) -> Result<BirthHistory> {
        if steps == 0 {
            return Err(Error::OutOfDomain("history needs at least one time step".into()));
        }
        if let Some(v) = p0.iter().find(|v| **v < -1e-12) {
            return Err(Error::NegativeRate { which: "initial density", at: (f64::NAN, f64::NAN), value: *v });
        }
        let dt = self.horizon() / steps as f64;
        let n = self.grid.len();
        let h = self.grid.spacing();
        let slope_at_zero = (p0[1] - p0[0]) / h;
        let mut hist = BirthHistory::zeros(n, steps, dt);
        for (k, col) in hist.columns.iter_mut().enumerate() {
            let lag = (steps - k) as f64 * dt;
            for (i, out) in col.iter_mut().enumerate() {
                let x = self.grid.node(i);
                let y = match self.cache.flow_forward(lag, x)? {
                    crate::FlowResult::Size(y) => y,
                    _ => continue,
                };
                let value = if y <= 1e-14 {
                    if p0[0] > 0.0 {
                        return Err(Error::DegenerateWeight { max: f64::INFINITY });
                    }
                    self.model.gamma(0.0) * slope_at_zero.max(0.0)
                } else {
                    let density = self.grid.interpolate(p0, y).max(0.0);
                    let gy = self.model.gamma(y);
                    match weighting {
                        Weighting::Uniform => {
                            let surv = (-(self.cache.cumulative_mu_over_gamma(y)
                                - self.cache.cumulative_mu_over_gamma(x))
                            .max(0.0))
                            .exp();
                            gy * density / (y * surv)
                        }
                        Weighting::Survival => gy * density / self.cache.survival_mass(y),
                    }
                };
                *out = value;
            }
        }
        let max = hist.max_abs();
        if !(max <= HISTORY_BLOWUP) {
            return Err(Error::DegenerateWeight { max });
        }
        Ok(hist)
    }
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Density {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub lo: usize,
    pub frac: f64,
    pub factor: f64,
}

/// Per-node recipe for one application of `T₀(t)`; `None` marks an output
/// node that is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct T0Recipe {
    pub stencils: Vec<Option<Stencil>>,
}

impl T0Recipe {
    pub fn apply(&self, p: &[f64]) -> Density {
        self.stencils
            .iter()
            .map(|st| match st {
                None => 0.0,
                Some(Stencil { lo, frac, factor }) => {
                    let v = if *frac == 0.0 { p[*lo] } else { (1.0 - frac) * p[*lo] + frac * p[lo + 1] };
                    factor * v
                }
            })
            .collect()
    }

    /// Adds `scale · T₀` into a dense matrix.
    pub fn accumulate_into(&self, target: &mut DMatrix<f64>, scale: f64) {
        for (i, st) in self.stencils.iter().enumerate() {
            if let Some(Stencil { lo, frac, factor }) = st {
                target[(i, *lo)] += scale * factor * (1.0 - frac);
                if *frac != 0.0 {
                    target[(i, lo + 1)] += scale * factor * frac;
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.stencils.iter().all(Option::is_none)
    }
}

/// Sparse representation of `K` on a history grid with `M` steps:
/// `(Kφ)_i = Σ_q Σ_{(i, j, w) ∈ lags[q]} w · φ(s_j, -q·dt)`.
#[derive(Debug, Clone)]
pub struct KOperator {
    steps: usize,
    dt: f64,
    lags: Vec<Vec<(usize, usize, f64)>>,
}

impl KOperator {
    /// Size quadrature over `x ∈ [0, s_i]` (trapezoid on grid nodes), with
    /// the history sampled at `-τ(x, s_i)` by linear interpolation in time.
    pub fn build(disc: &Discretization, steps: usize) -> Self {
        let dt = disc.horizon() / steps as f64;
        let h = disc.grid.spacing();
        let g = &disc.growth_time;
        let hz = &disc.hazard;
        let mut lags: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); steps + 1];
        for i in 1..disc.grid.len() {
            for j in 0..=i {
                let trap = if j == 0 || j == i { 0.5 * h } else { h };
                let coef = trap * (-(hz[i] - hz[j]).max(0.0)).exp() / disc.gamma[i];
                let u = ((g[i] - g[j]).max(0.0) / dt).min(steps as f64);
                let mut q = u.floor() as usize;
                let mut frac = u - q as f64;
                if frac < 1e-9 {
                    frac = 0.0;
                } else if frac > 1.0 - 1e-9 {
                    q += 1;
                    frac = 0.0;
                }
                if q >= steps {
                    q = steps;
                    frac = 0.0;
                }
                lags[q].push((i, j, coef * (1.0 - frac)));
                if frac > 0.0 {
                    lags[q + 1].push((i, j, coef * frac));
                }
            }
        }
        KOperator { steps, dt, lags }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Entries `(i, j, w)` acting on the history column at lag `q`.
    pub fn lag(&self, q: usize) -> &[(usize, usize, f64)] {
        &self.lags[q]
    }

    pub fn check_step(&self, dt: f64) -> Result<()> {
        if (dt - self.dt).abs() > 1e-9 * self.dt {
            return Err(Error::StepMismatch { expected: self.dt, got: dt });
        }
        Ok(())
    }

    pub fn apply(&self, phi: &BirthHistory) -> Result<Density> {
        if phi.steps() != self.steps {
            return Err(Error::StepMismatch { expected: self.dt, got: phi.dt });
        }
        self.check_step(phi.dt)?;
        let n = phi.nodes();
        Ok(self.apply_lagged(n, |q| phi.at_lag(q)))
    }

    /// `K` applied to a window given column by column (`col(q)` at lag `q`).
    pub fn apply_lagged<'a>(&self, nodes: usize, col: impl Fn(usize) -> &'a [f64]) -> Density {
        let mut out = vec![0.0; nodes];
        for (q, entries) in self.lags.iter().enumerate() {
            if entries.is_empty() {
                continue;
            }
            let c = col(q);
            for &(i, j, w) in entries {
                out[i] += w * c[j];
            }
        }
        out
    }

    /// The lag-`q` part as a dense matrix.
    pub fn lag_matrix(&self, q: usize, nodes: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(nodes, nodes);
        for &(i, j, w) in &self.lags[q] {
            m[(i, j)] += w;
        }
        m
    }
}

/// `T₀(a_m)` recipes for `a_m = m·Γ/M`, `m = 0..=M`, and `K` on the same
/// time grid.
#[derive(Debug, Clone)]
pub struct AgeKernelSet {
    dt: f64,
    recipes: Vec<T0Recipe>,
    k: KOperator,
}

impl AgeKernelSet {
    pub fn build(disc: &Discretization, steps: usize) -> Result<Self> {
        if steps < MIN_AGE_STEPS {
            return Err(Error::GridTooCoarse { got: steps, min: MIN_AGE_STEPS });
        }
        let dt = disc.horizon() / steps as f64;
        let recipes = (0..=steps).map(|m| disc.t0_recipe(m as f64 * dt)).collect();
        Ok(AgeKernelSet { dt, recipes, k: KOperator::build(disc, steps) })
    }

    pub fn steps(&self) -> usize {
        self.recipes.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn recipe(&self, m: usize) -> &T0Recipe {
        &self.recipes[m]
    }

    pub fn k_operator(&self) -> &KOperator {
        &self.k
    }

    /// `L₀(a_m) u = C T₀(a_m) u`.
    pub fn apply_l0(&self, disc: &Discretization, m: usize, u: &[f64]) -> Density {
        disc.apply_c(&self.recipes[m].apply(u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_model, ModelSpec, BUILTINS};

    fn constant(beta0: f64, mu0: f64) -> VitalRates {
        load_model(&ModelSpec::builtin("constant", &[("beta0", beta0), ("mu0", mu0)])).unwrap()
    }

    fn disc(model: VitalRates, n: usize) -> Discretization {
        Discretization::new(model, n).unwrap()
    }

    #[test]
    fn t0_identity_and_nilpotency() {
        let d = disc(load_model(&ModelSpec::builtin("corner", &[])).unwrap(), 50);
        let p: Vec<f64> = d.grid().nodes().iter().map(|s| 1.0 + s).collect();
        assert_eq!(d.apply_t0(0.0, &p), p);
        let out = d.apply_t0(d.horizon() * (1.0 + 1e-9), &p);
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn t0_pure_transport() {
        let d = disc(constant(0.0, 0.0), 200);
        let p = d.grid().nodes().to_vec();
        let out = d.apply_t0(0.25, &p);
        for (s, v) in d.grid().nodes().iter().zip(&out) {
            let exact = if *s >= 0.25 { s - 0.25 } else { 0.0 };
            assert!((v - exact).abs() <= d.grid().spacing(), "s={s}");
        }
    }

    #[test]
    fn c_examples() {
        let d = disc(constant(2.0, 0.0), 200);
        let p = d.grid().nodes().to_vec();
        assert!(d.apply_c(&p).iter().all(|v| (v - 1.0).abs() < 1e-10));
        assert!(d.apply_c(&vec![0.0; 201]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn c_separable_rank_one() {
        let m = VitalRates::new("sep", |s, y| (1.0 + s) * y * y, |_| 0.0, |_| 1.0, None).unwrap();
        let d = disc(m, 40);
        let p: Vec<f64> = d.grid().nodes().iter().map(|s| (3.0 * s).cos() + 2.0).collect();
        let h: Vec<f64> = d.grid().nodes().iter().zip(&p).map(|(y, v)| y * y * v).collect();
        let scalar = d.grid().integrate(&h);
        for (s, v) in d.grid().nodes().iter().zip(d.apply_c(&p)) {
            assert!((v - (1.0 + s) * scalar).abs() < 1e-12);
        }
    }

    #[test]
    fn age_kernels_reproduce_composition() {
        let d = disc(load_model(&ModelSpec::builtin("corner", &[])).unwrap(), 40);
        let ks = AgeKernelSet::build(&d, 40).unwrap();
        let u: Vec<f64> = d.grid().nodes().iter().map(|s| (5.0 * s).sin().abs()).collect();
        for m in [1, 7, 20, 40] {
            let a = ks.apply_l0(&d, m, &u);
            let b = d.apply_c(&d.apply_t0(m as f64 * ks.dt(), &u));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(AgeKernelSet::build(&d, 4).is_err());
    }

    #[test]
    fn horizon_recipe_keeps_only_last_node() {
        let d = disc(constant(2.0, 0.0), 20);
        let ks = AgeKernelSet::build(&d, 20).unwrap();
        let last = ks.recipe(20);
        for (i, st) in last.stencils.iter().enumerate() {
            assert_eq!(st.is_some(), i == 20, "node {i}");
        }
        let d0 = disc(constant(0.0, 0.0), 20);
        let ks0 = AgeKernelSet::build(&d0, 20).unwrap();
        let u = vec![1.0; 21];
        for m in 0..=20 {
            assert!(ks0.apply_l0(&d0, m, &u).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn k_of_unit_history() {
        let d = disc(constant(2.0, 0.0), 200);
        let phi = BirthHistory::constant_in_time(&vec![1.0; 201], 200, d.horizon() / 200.0);
        let p = d.apply_k(&phi).unwrap();
        for (s, v) in d.grid().nodes().iter().zip(&p) {
            assert!((v - s).abs() < 2e-3);
        }
        let zero = BirthHistory::zeros(201, 200, d.horizon() / 200.0);
        assert!(d.apply_k(&zero).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn k_rejects_wrong_step() {
        let d = disc(constant(2.0, 0.0), 20);
        let k = KOperator::build(&d, 20);
        let phi = BirthHistory::zeros(21, 20, 0.07);
        assert!(matches!(k.apply(&phi), Err(Error::StepMismatch { .. })));
    }

    #[test]
    fn uniform_history_matches_hand_solution() {
        let d = disc(constant(2.0, 0.0), 200);
        let p0 = d.grid().nodes().to_vec();
        let phi = d.history_from_density(&p0, 200, Weighting::Uniform).unwrap();
        for (k, col) in phi.columns.iter().enumerate() {
            let t = -1.0 + k as f64 / 200.0;
            for (s, v) in d.grid().nodes().iter().zip(col) {
                let exact = if *s <= t + 1.0 + 1e-12 { 1.0 } else { 0.0 };
                assert!((v - exact).abs() < 1e-9, "s={s} t={t} v={v}");
            }
        }
        let back = d.apply_k(&phi).unwrap();
        assert!(d.grid().l1_distance(&back, &p0) < 2e-3);
    }

    #[test]
    fn roundtrip_all_builtins() {
        for name in BUILTINS {
            let d = disc(load_model(&ModelSpec::builtin(name, &[])).unwrap(), 200);
            let p0: Vec<f64> = d.grid().nodes().iter().map(|y| y * (1.0 - y)).collect();
            for w in [Weighting::Survival, Weighting::Uniform] {
                let phi = d.history_from_density(&p0, 200, w).unwrap();
                assert!(phi.min_value() >= 0.0);
                let err = d.grid().l1_distance(&d.apply_k(&phi).unwrap(), &p0);
                assert!(err <= 5e-3, "{name} {w:?}: {err}");
            }
        }
    }

    #[test]
    fn degenerate_uniform_history() {
        let d = disc(constant(2.0, 0.0), 50);
        let p0 = vec![1.0; 51];
        assert!(matches!(d.history_from_density(&p0, 50, Weighting::Uniform), Err(Error::DegenerateWeight { .. })));
        let zero = d.history_from_density(&vec![0.0; 51], 50, Weighting::Survival).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn weighting_parses() {
        assert_eq!("uniform".parse::<Weighting>().unwrap(), Weighting::Uniform);
        assert!("other".parse::<Weighting>().is_err());
    }
}
