//! Vital rates (fertility β, mortality μ, growth γ), the built-in model
//! catalogue and piecewise-linear table models.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Points per axis of the validation mesh.
pub const VALIDATION_POINTS: usize = 256;

type Rate1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Rate2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// The model ingredients on `[0, 1]`.
///
/// `beta(s, y)` is the rate at which individuals of size `y` produce
/// offspring of size `s`.
#[derive(Clone)]
pub struct VitalRates {
    name: String,
    beta: Rate2,
    mu: Rate1,
    gamma: Rate1,
    gamma_min: f64,
}

impl fmt::Debug for VitalRates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VitalRates")
            .field("name", &self.name)
            .field("gamma_min", &self.gamma_min)
            .finish_non_exhaustive()
    }
}

impl VitalRates {
    /// Wraps closures and validates them on the sampling mesh. `gamma_min`
    /// is taken from the mesh unless a certified bound is supplied.
    pub fn new<B, M, G>(name: impl Into<String>, beta: B, mu: M, gamma: G, gamma_min: Option<f64>) -> Result<Self>
    where
        B: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        M: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let mut rates = VitalRates {
            name: name.into(),
            beta: Arc::new(beta),
            mu: Arc::new(mu),
            gamma: Arc::new(gamma),
            gamma_min: f64::INFINITY,
        };
        let sampled_min = rates.validate()?;
        rates.gamma_min = gamma_min.map_or(sampled_min, |g| g.min(sampled_min));
        Ok(rates)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn beta(&self, s: f64, y: f64) -> f64 {
        (self.beta)(s, y)
    }

    #[inline]
    pub fn mu(&self, s: f64) -> f64 {
        (self.mu)(s)
    }

    #[inline]
    pub fn gamma(&self, s: f64) -> f64 {
        (self.gamma)(s)
    }

    pub fn gamma_min(&self) -> f64 {
        self.gamma_min
    }

    /// Same model with fertility multiplied by `factor`.
    pub fn scale_beta(&self, factor: f64) -> VitalRates {
        let beta = self.beta.clone();
        VitalRates {
            name: format!("{}*{factor}", self.name),
            beta: Arc::new(move |s, y| factor * beta(s, y)),
            ..self.clone()
        }
    }

    /// Checks the invariants on the validation mesh and returns the sampled
    /// minimum of γ.
    fn validate(&self) -> Result<f64> {
        let n = VALIDATION_POINTS;
        let mut gmin = f64::INFINITY;
        for i in 0..=n {
            let s = i as f64 / n as f64;
            let g = self.gamma(s);
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::NonPositiveGrowth { at: s, value: g });
            }
            gmin = gmin.min(g);
            let m = self.mu(s);
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::NegativeRate { which: "mortality", at: (s, s), value: m });
            }
            for j in 0..=n {
                let y = j as f64 / n as f64;
                let b = self.beta(s, y);
                if !(b >= 0.0) || !b.is_finite() {
                    return Err(Error::NegativeRate { which: "fertility", at: (s, y), value: b });
                }
            }
        }
        Ok(gmin)
    }
}

/// Piecewise-linear function of one variable on a mesh covering `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1d {
    xs: Vec<f64>,
    values: Vec<f64>,
}

impl Table1d {
    pub fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_mesh(&xs, "1-D table")?;
        if xs.len() != values.len() {
            return Err(Error::MalformedTable(format!("{} mesh points but {} values", xs.len(), values.len())));
        }
        Ok(Table1d { xs, values })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (k, t) = bracket(&self.xs, x);
        (1.0 - t) * self.values[k] + t * self.values[k + 1]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Reads a CSV file with header `s,value`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        expect_header(&mut rdr, &["s", "value"])?;
        let (mut xs, mut vs) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            xs.push(parse_field(&rec, 0)?);
            vs.push(parse_field(&rec, 1)?);
        }
        Table1d::new(xs, vs)
    }
}

/// Bilinear function of `(s, y)` on a tensor mesh covering `[0, 1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table2d {
    ss: Vec<f64>,
    ys: Vec<f64>,
    /// Row-major: `values[i * ys.len() + j] = β(ss[i], ys[j])`.
    values: Vec<f64>,
}

impl Table2d {
    pub fn new(ss: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_mesh(&ss, "2-D table (s axis)")?;
        check_mesh(&ys, "2-D table (y axis)")?;
        if values.len() != ss.len() * ys.len() {
            return Err(Error::MalformedTable(format!(
                "expected {} values, got {}",
                ss.len() * ys.len(),
                values.len()
            )));
        }
        Ok(Table2d { ss, ys, values })
    }

    pub fn eval(&self, s: f64, y: f64) -> f64 {
        let (i, ts) = bracket(&self.ss, s);
        let (j, ty) = bracket(&self.ys, y);
        let ny = self.ys.len();
        let v = |a: usize, b: usize| self.values[a * ny + b];
        (1.0 - ts) * ((1.0 - ty) * v(i, j) + ty * v(i, j + 1)) + ts * ((1.0 - ty) * v(i + 1, j) + ty * v(i + 1, j + 1))
    }

    /// Reads a CSV file with header `s,y,beta`; rows may come in any order
    /// but must cover the full tensor product of the distinct `s` and `y`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        expect_header(&mut rdr, &["s", "y", "beta"])?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push((parse_field(&rec, 0)?, parse_field(&rec, 1)?, parse_field(&rec, 2)?));
        }
        let mut ss: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
        for axis in [&mut ss, &mut ys] {
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        let mut values = vec![f64::NAN; ss.len() * ys.len()];
        for (s, y, b) in rows {
            let i = ss.iter().position(|&v| v == s).unwrap();
            let j = ys.iter().position(|&v| v == y).unwrap();
            values[i * ys.len() + j] = b;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::MalformedTable("2-D table does not cover the full mesh".into()));
        }
        Table2d::new(ss, ys, values)
    }
}

fn check_mesh(xs: &[f64], what: &str) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::MalformedTable(format!("{what}: need at least two mesh points")));
    }
    if xs[0] != 0.0 || *xs.last().unwrap() != 1.0 {
        return Err(Error::MalformedTable(format!("{what}: mesh must start at 0 and end at 1")));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::MalformedTable(format!("{what}: mesh must be strictly increasing")));
    }
    Ok(())
}

/// Returns `(k, t)` with `x ≈ (1 - t) xs[k] + t xs[k + 1]`, clamped to the mesh.
fn bracket(xs: &[f64], x: f64) -> (usize, f64) {
    let x = x.clamp(xs[0], xs[xs.len() - 1]);
    let k = match xs.partition_point(|&v| v <= x) {
        0 => 0,
        p => (p - 1).min(xs.len() - 2),
    };
    (k, (x - xs[k]) / (xs[k + 1] - xs[k]))
}

fn expect_header(rdr: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let headers = rdr.headers()?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != want {
        return Err(Error::MalformedTable(format!("expected header {}, got {}", want.join(","), got.join(","))));
    }
    Ok(())
}

fn parse_field(rec: &csv::StringRecord, idx: usize) -> Result<f64> {
    rec.get(idx)
        .ok_or_else(|| Error::MalformedTable(format!("missing column {idx}")))?
        .trim()
        .parse()
        .map_err(|e| Error::MalformedTable(format!("bad number in column {idx}: {e}")))
}

/// Tabulated vital rates.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub beta: Table2d,
    pub mu: Table1d,
    pub gamma: Table1d,
}

impl TableSpec {
    /// Loads `beta.csv`, `mu.csv` and `gamma.csv` from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        Ok(TableSpec {
            beta: Table2d::from_csv(&dir.join("beta.csv"))?,
            mu: Table1d::from_csv(&dir.join("mu.csv"))?,
            gamma: Table1d::from_csv(&dir.join("gamma.csv"))?,
        })
    }
}

/// What to load: a named builtin with parameters, or tables.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Builtin { name: String, params: BTreeMap<String, f64> },
    Table(TableSpec),
}

impl ModelSpec {
    pub fn builtin(name: &str, params: &[(&str, f64)]) -> Self {
        ModelSpec::Builtin { name: name.to_string(), params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }
}

/// Names accepted by [`load_model`] for [`ModelSpec::Builtin`].
pub const BUILTINS: [&str; 4] = ["constant", "corner", "rectangle", "block"];

/// Builds and validates vital rates from a spec.
///
/// Builtins and their parameters (defaults in brackets):
///
/// * `constant`: `beta0` [2], `mu0` [0], `gamma0` [1].
/// * `corner`: fertility `beta0·(1-ρ²)²` with `ρ² = (s² + (1-y)²)/radius²`,
///   so only large parents produce small offspring; `beta0` [40], `radius` [0.3],
///   `mu0` [0.2], `mu1` [0], `gamma0` [1], `gamma1` [0.3]; `γ = gamma0 (1 + gamma1 s)`,
///   `μ = mu0 + mu1 s`.
/// * `rectangle`: fertility strictly positive on `(0, width) × (0, 1)` and zero
///   elsewhere; `beta0` [40], `width` [0.1], `mu0` [0], `gamma0` [1].
/// * `block`: fertility vanishing on `[0, alpha] × [alpha, 1]`, ramping up to
///   `beta0` over a distance `delta`; `beta0` [2], `alpha` [0.5], `delta` [0.1],
///   `mu0` [0], `gamma0` [1].
pub fn load_model(spec: &ModelSpec) -> Result<VitalRates> {
    match spec {
        ModelSpec::Table(t) => {
            let (beta, mu, gamma) = (t.beta.clone(), t.mu.clone(), t.gamma.clone());
            let gmin = gamma.min_value();
            if !(gmin > 0.0) {
                return Err(Error::NonPositiveGrowth { at: f64::NAN, value: gmin });
            }
            VitalRates::new(
                "table",
                move |s, y| beta.eval(s, y),
                move |s| mu.eval(s),
                move |s| gamma.eval(s),
                Some(gmin),
            )
        }
        ModelSpec::Builtin { name, params } => {
            let p = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
            match name.as_str() {
                "constant" => {
                    let (b0, m0, g0) = (p("beta0", 2.0), p("mu0", 0.0), p("gamma0", 1.0));
                    VitalRates::new("constant", move |_, _| b0, move |_| m0, move |_| g0, Some(g0))
                }
                "corner" => {
                    let (b0, r) = (p("beta0", 40.0), p("radius", 0.3));
                    let (m0, m1) = (p("mu0", 0.2), p("mu1", 0.0));
                    let (g0, g1) = (p("gamma0", 1.0), p("gamma1", 0.3));
                    if !(r > 0.0) {
                        return Err(Error::Config("corner radius must be positive".into()));
                    }
                    VitalRates::new(
                        "corner",
                        move |s, y| {
                            let rho2 = (s * s + (1.0 - y) * (1.0 - y)) / (r * r);
                            if rho2 < 1.0 {
                                b0 * (1.0 - rho2) * (1.0 - rho2)
                            } else {
                                0.0
                            }
                        },
                        move |s| m0 + m1 * s,
                        move |s| g0 * (1.0 + g1 * s),
                        Some(g0 * (1.0 + g1.min(0.0))),
                    )
                }
                "rectangle" => {
                    let (b0, w) = (p("beta0", 40.0), p("width", 0.1));
                    let (m0, g0) = (p("mu0", 0.0), p("gamma0", 1.0));
                    if !(w > 0.0 && w <= 1.0) {
                        return Err(Error::Config("rectangle width must lie in (0, 1]".into()));
                    }
                    VitalRates::new(
                        "rectangle",
                        move |s, y| {
                            if s > 0.0 && s < w {
                                b0 * (4.0 * s * (w - s) / (w * w)) * (4.0 * y * (1.0 - y))
                            } else {
                                0.0
                            }
                        },
                        move |_| m0,
                        move |_| g0,
                        Some(g0),
                    )
                }
                "block" => {
                    let (b0, a, d) = (p("beta0", 2.0), p("alpha", 0.5), p("delta", 0.1));
                    let (m0, g0) = (p("mu0", 0.0), p("gamma0", 1.0));
                    if !(a > 0.0 && a < 1.0) || !(d > 0.0) {
                        return Err(Error::Config("block needs alpha in (0,1) and delta > 0".into()));
                    }
                    VitalRates::new(
                        "block",
                        move |s, y| {
                            let dist = (s - a).max(a - y).max(0.0);
                            b0 * (dist / d).min(1.0)
                        },
                        move |_| m0,
                        move |_| g0,
                        Some(g0),
                    )
                }
                other => Err(Error::UnknownModel(other.to_string())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_model() {
        let m = load_model(&ModelSpec::builtin("constant", &[("beta0", 2.0)])).unwrap();
        assert_eq!(m.beta(0.3, 0.9), 2.0);
        assert_eq!(m.mu(0.5), 0.0);
        assert_eq!(m.gamma(0.5), 1.0);
        assert_eq!(m.gamma_min(), 1.0);
    }

    #[test]
    fn zero_growth_rejected() {
        let err = load_model(&ModelSpec::builtin("constant", &[("gamma0", 0.0)])).unwrap_err();
        assert!(matches!(err, Error::NonPositiveGrowth { .. }));
    }

    #[test]
    fn negative_mortality_rejected() {
        let err = load_model(&ModelSpec::builtin("constant", &[("mu0", -1.0)])).unwrap_err();
        assert!(matches!(err, Error::NegativeRate { which: "mortality", .. }));
    }

    #[test]
    fn rectangle_support() {
        let m = load_model(&ModelSpec::builtin("rectangle", &[])).unwrap();
        assert!(m.beta(0.05, 0.5) > 0.0);
        assert!(m.beta(0.01, 0.99) > 0.0);
        assert_eq!(m.beta(0.1, 0.5), 0.0);
        assert_eq!(m.beta(0.5, 0.5), 0.0);
    }

    #[test]
    fn block_vanishes_on_block() {
        let m = load_model(&ModelSpec::builtin("block", &[("alpha", 0.5)])).unwrap();
        assert_eq!(m.beta(0.2, 0.7), 0.0);
        assert_eq!(m.beta(0.5, 0.5), 0.0);
        assert!(m.beta(0.6, 0.7) > 0.0);
        assert!(m.beta(0.2, 0.4) > 0.0);
    }

    #[test]
    fn corner_positive_at_corner_only() {
        let m = load_model(&ModelSpec::builtin("corner", &[])).unwrap();
        assert!(m.beta(0.0, 1.0) > 0.0);
        assert_eq!(m.beta(0.5, 0.5), 0.0);
        assert!((m.gamma(1.0) - 1.3).abs() < 1e-15);
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(load_model(&ModelSpec::builtin("nope", &[])), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn scaled_beta() {
        let m = load_model(&ModelSpec::builtin("constant", &[])).unwrap().scale_beta(0.5);
        assert_eq!(m.beta(0.1, 0.2), 1.0);
    }

    #[test]
    fn table_model_interpolates() {
        let beta = Table2d::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let spec = ModelSpec::Table(TableSpec {
            beta,
            mu: Table1d::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap(),
            gamma: Table1d::new(vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 1.0]).unwrap(),
        });
        let m = load_model(&spec).unwrap();
        assert!((m.beta(0.5, 0.5) - 1.5).abs() < 1e-15);
        assert!((m.gamma(0.25) - 1.5).abs() < 1e-15);
        assert_eq!(m.gamma_min(), 1.0);
    }

    #[test]
    fn malformed_tables() {
        assert!(Table1d::new(vec![0.0, 0.5], vec![1.0, 1.0]).is_err());
        assert!(Table1d::new(vec![0.0, 0.5, 0.5, 1.0], vec![1.0; 4]).is_err());
        assert!(Table2d::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0; 3]).is_err());
    }

    #[test]
    fn negative_table_rejected() {
        let spec = ModelSpec::Table(TableSpec {
            beta: Table2d::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, -1.0, 0.0, 0.0]).unwrap(),
            mu: Table1d::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap(),
            gamma: Table1d::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap(),
        });
        assert!(matches!(load_model(&spec), Err(Error::NegativeRate { which: "fertility", .. })));
    }

    #[test]
    fn csv_tables_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mu.csv"), "s,value\n0,0.1\n1,0.3\n").unwrap();
        std::fs::write(dir.path().join("gamma.csv"), "s,value\n0,1\n1,2\n").unwrap();
        std::fs::write(dir.path().join("beta.csv"), "s,y,beta\n0,0,1\n0,1,2\n1,0,3\n1,1,4\n").unwrap();
        let m = load_model(&ModelSpec::Table(TableSpec::from_dir(dir.path()).unwrap())).unwrap();
        assert!((m.mu(0.5) - 0.2).abs() < 1e-15);
        assert!((m.beta(0.5, 0.5) - 2.5).abs() < 1e-15);
        std::fs::write(dir.path().join("mu.csv"), "x,value\n0,0.1\n1,0.3\n").unwrap();
        assert!(matches!(TableSpec::from_dir(dir.path()), Err(Error::MalformedTable(_))));
    }
}
