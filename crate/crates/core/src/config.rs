//! Run configuration files.
//!
//! ```toml
//! [model]
//! name = "corner"      # or "table" together with table_path
//! beta0 = 40.0         # any further numeric key is passed to the builtin
//!
//! [grid]
//! N = 200
//! M = 200              # optional, defaults to N
//!
//! [run]
//! T = 3.0              # optional
//! dt = 0.005           # optional, must equal Γ/M when given
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{load_model, ModelSpec, TableSpec, VitalRates};

pub const DEFAULT_CELLS: usize = 200;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    #[serde(default)]
    grid: GridConfig,
    #[serde(default)]
    run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct RawModel {
    name: String,
    table_path: Option<PathBuf>,
    #[serde(flatten)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "N", default = "default_cells")]
    pub cells: usize,
    #[serde(rename = "M")]
    pub steps: Option<usize>,
}

fn default_cells() -> usize {
    DEFAULT_CELLS
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { cells: DEFAULT_CELLS, steps: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
}

/// A parsed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelSpec,
    pub grid: GridConfig,
    pub run: RunConfig,
}

impl Config {
    /// Parses TOML text. Relative table paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let model = match (raw.model.name.as_str(), raw.model.table_path) {
            ("table", Some(dir)) => ModelSpec::Table(TableSpec::from_dir(&base.join(dir))?),
            ("table", None) => return Err(Error::Config("model 'table' needs table_path".into())),
            (_, Some(_)) => return Err(Error::Config("table_path is only valid with name = \"table\"".into())),
            (name, None) => ModelSpec::Builtin { name: name.to_string(), params: raw.model.params },
        };
        if raw.grid.cells < 4 {
            return Err(Error::GridTooCoarse { got: raw.grid.cells, min: 4 });
        }
        if let Some(t) = raw.run.t_end {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("run.T must be positive, got {t}")));
            }
        }
        Ok(Config { model, grid: raw.grid, run: raw.run })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// A builtin with default parameters on the default grid.
    pub fn builtin(name: &str) -> Self {
        Config { model: ModelSpec::builtin(name, &[]), grid: GridConfig::default(), run: RunConfig::default() }
    }

    pub fn load_model(&self) -> Result<VitalRates> {
        load_model(&self.model)
    }

    /// Time steps per horizon `Γ`: `grid.M`, else `Γ/run.dt`, else `grid.N`.
    pub fn steps(&self, horizon: f64) -> Result<usize> {
        if let Some(m) = self.grid.steps {
            if let Some(dt) = self.run.dt {
                let expected = horizon / m as f64;
                if (dt - expected).abs() > 1e-9 * expected {
                    return Err(Error::StepMismatch { expected, got: dt });
                }
            }
            return Ok(m);
        }
        match self.run.dt {
            Some(dt) => {
                let m = (horizon / dt).round();
                if !(m >= 1.0) || (m * dt - horizon).abs() > 1e-9 * horizon {
                    return Err(Error::StepMismatch { expected: horizon / m.max(1.0), got: dt });
                }
                Ok(m as usize)
            }
            None => Ok(self.grid.cells),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_builtin_with_extra_parameters() {
        let c = Config::parse(
            "[model]\nname = \"corner\"\nbeta0 = 20\nradius = 0.4\n[grid]\nN = 100\n[run]\nT = 2.5\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.model, ModelSpec::builtin("corner", &[("beta0", 20.0), ("radius", 0.4)]));
        assert_eq!(c.grid.cells, 100);
        assert_eq!(c.run.t_end, Some(2.5));
        assert_eq!(c.steps(1.0).unwrap(), 100);
        assert!(c.load_model().is_ok());
    }

    #[test]
    fn defaults_and_step_resolution() {
        let c = Config::parse("[model]\nname = \"constant\"\n[run]\ndt = 0.01\n", Path::new(".")).unwrap();
        assert_eq!(c.grid.cells, DEFAULT_CELLS);
        assert_eq!(c.steps(1.0).unwrap(), 100);
        assert!(matches!(c.steps(1.005), Err(Error::StepMismatch { .. })));
        let c = Config::parse("[model]\nname = \"constant\"\n[grid]\nN = 50\nM = 80\n", Path::new(".")).unwrap();
        assert_eq!(c.steps(2.0).unwrap(), 80);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "[model]\nname = \"table\"\n",
            "[model]\nname = \"constant\"\ntable_path = \"x\"\n",
            "[model]\nname = \"constant\"\n[grid]\nN = 2\n",
            "[model]\nname = \"constant\"\n[grid]\ncells = 20\n",
            "[model]\nname = \"constant\"\n[run]\nT = -1\n",
            "[grid]\nN = 20\n",
        ] {
            assert!(Config::parse(text, Path::new(".")).is_err(), "{text}");
        }
        let c = Config::parse("[model]\nname = \"nope\"\n", Path::new(".")).unwrap();
        assert!(matches!(c.load_model(), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn loads_tables_relative_to_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let tables = dir.path().join("rates");
        std::fs::create_dir(&tables).unwrap();
        std::fs::write(tables.join("beta.csv"), "s,y,beta\n0,0,2\n0,1,2\n1,0,2\n1,1,2\n").unwrap();
        std::fs::write(tables.join("mu.csv"), "s,value\n0,0\n1,0\n").unwrap();
        std::fs::write(tables.join("gamma.csv"), "s,value\n0,1\n1,1\n").unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[model]\nname = \"table\"\ntable_path = \"rates\"\n").unwrap();
        let model = Config::from_file(&path).unwrap().load_model().unwrap();
        assert_eq!(model.beta(0.3, 0.7), 2.0);
        assert_eq!(model.gamma(0.5), 1.0);
    }
}
