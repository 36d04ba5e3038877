//! Scenario files: one run described in TOML or JSON.

use crate::error::CliError;
use crate::output::{read, sha256_hex};
use kl_core::driver::DeterministicDriver;
use kl_core::geometry::{Slit, SlitVector};
use kl_core::skle::{AlphaSpec, CoefficientSpec, DriftSpec, SkleConfig};
use kl_core::slit_ode::EvolveConfig;
use kl_core::transform::IotaConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Kernel,
    Evolve,
    Map,
    Skle,
    Mc,
    Transform,
}

/// Rectangular grid of `nx × ny` nodes, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Grid {
    /// Parses `nx,ny,x_min,x_max,y_min,y_max`.
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let bad = || CliError::config(format!("grid `{spec}`: expected nx,ny,x_min,x_max,y_min,y_max"));
        if parts.len() != 6 {
            return Err(bad());
        }
        let nx = parts[0].parse().map_err(|_| bad())?;
        let ny = parts[1].parse().map_err(|_| bad())?;
        let f: Vec<f64> = parts[2..].iter().map(|p| p.parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let g = Grid {
            nx,
            ny,
            x_min: f[0],
            x_max: f[1],
            y_min: f[2],
            y_max: f[3],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.nx < 1 || self.ny < 1 || !(self.x_min <= self.x_max) || !(self.y_min <= self.y_max) {
            return Err(CliError::config(format!("grid: bad shape or bounds {self:?}")));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        let lerp = |a: f64, b: f64, k: usize, n: usize| if n == 1 { a } else { a + (b - a) * k as f64 / (n - 1) as f64 };
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push((lerp(self.x_min, self.x_max, i, self.nx), lerp(self.y_min, self.y_max, j, self.ny)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub evolve: EvolveConfig,
    pub skle: SkleConfig,
    pub iota: IotaConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub task: Task,
    /// Slits as `{y, x, xr}` records.
    #[serde(default)]
    pub slits: Vec<Slit>,
    /// Initial driver position for the kernel and SKLE tasks.
    #[serde(default)]
    pub xi0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DeterministicDriver>,
    /// Diffusion coefficient, e.g. `"sqrt(6)"` or `"const:2"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    /// Driver drift, e.g. `"-bmd"`, `"bmd:0.5"` or `"zero"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Tracked points as `[re, im]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    /// Also print `b_BMD` (kernel task).
    #[serde(default)]
    pub bmd: bool,
    /// Lattice oracle cells across (kernel task).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_cells: Option<usize>,
    /// Manifest of the run to transform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<PathBuf>,
    /// Path of a stochastic run to transform.
    #[serde(default)]
    pub path_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Scenario {
    pub fn new(name: &str, task: Task) -> Self {
        Scenario {
            name: name.to_string(),
            task,
            slits: Vec::new(),
            xi0: 0.0,
            driver: None,
            alpha: None,
            drift: None,
            t_max: None,
            dt: None,
            paths: None,
            seed: None,
            points: Vec::new(),
            grid: None,
            bmd: false,
            oracle_cells: None,
            run: None,
            path_index: 0,
            output: None,
            tolerances: Tolerances::default(),
        }
    }

    /// Reads a TOML or JSON scenario; the format follows the extension, and
    /// content that starts with `{` is taken as JSON.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = String::from_utf8(read(path)?)
            .map_err(|_| CliError::config(format!("{}: not UTF-8", path.display())))?;
        let json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        let sc: Scenario = if json {
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        };
        let mut sc = sc;
        // a relative run manifest is resolved against the scenario file
        if let (Some(run), Some(dir)) = (&sc.run, path.parent()) {
            if run.is_relative() {
                sc.run = Some(dir.join(run));
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn slit_vector(&self) -> Result<SlitVector, CliError> {
        SlitVector::from_slits(self.slits.clone()).map_err(|e| CliError::config(format!("field `slits`: {e:?}: {e}")))
    }

    pub fn coefficients(&self) -> Result<CoefficientSpec, CliError> {
        let alpha: AlphaSpec = self
            .alpha
            .as_deref()
            .unwrap_or("sqrt(6)")
            .parse()
            .map_err(|e| CliError::config(format!("field `alpha`: {e}")))?;
        let drift: DriftSpec = self
            .drift
            .as_deref()
            .unwrap_or("-bmd")
            .parse()
            .map_err(|e| CliError::config(format!("field `drift`: {e}")))?;
        CoefficientSpec::new(alpha, drift).map_err(|e| CliError::config(format!("coefficients: {e}")))
    }

    pub fn driver(&self) -> Result<DeterministicDriver, CliError> {
        let d = self.driver.clone().unwrap_or(DeterministicDriver::constant(self.xi0));
        d.validate().map_err(|e| CliError::config(format!("field `driver`: {e}")))?;
        Ok(d)
    }

    pub fn t_max(&self) -> Result<f64, CliError> {
        match self.t_max {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => Err(CliError::config(format!("field `t_max`: {t} is not a positive time"))),
            None => Err(CliError::config("field `t_max` is required")),
        }
    }

    /// Checks every field the task will use.
    pub fn validate(&self) -> Result<(), CliError> {
        if !self.xi0.is_finite() {
            return Err(CliError::config("field `xi0` must be finite"));
        }
        self.slit_vector()?;
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        match self.task {
            Task::Kernel => {}
            Task::Evolve | Task::Map => {
                self.driver()?;
                self.t_max()?;
            }
            Task::Skle | Task::Mc => {
                self.coefficients()?;
                self.t_max()?;
                if self.seed.is_none() {
                    return Err(CliError::config("field `seed` is required for stochastic runs"));
                }
                match self.dt {
                    Some(dt) if dt > 0.0 && dt.is_finite() => {}
                    _ => return Err(CliError::config("field `dt` must be a positive step")),
                }
            }
            Task::Transform => match &self.run {
                Some(run) if !run.exists() => {
                    return Err(CliError::config(format!("field `run`: {} does not exist", run.display())))
                }
                Some(_) => {}
                None => return Err(CliError::config("field `run` is required for transform")),
            },
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String, CliError> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "empty"
task = "evolve"
t_max = 0.5
"#;

    #[test]
    fn toml_and_json_agree() {
        let a: Scenario = toml::from_str(MINIMAL).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let b: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), json);
        a.validate().unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn overlapping_slits_are_named() {
        let text = format!("{MINIMAL}slits = [{{ y = 1, x = 0, xr = 1 }}, {{ y = 1, x = 0.5, xr = 2 }}]\n");
        let sc: Scenario = toml::from_str(&text).unwrap();
        let msg = sc.validate().unwrap_err().to_string();
        assert!(msg.contains("OverlapAtEqualHeight"), "{msg}");
    }

    #[test]
    fn unknown_fields_report_their_line() {
        let text = format!("{MINIMAL}tmax = 3\n");
        let msg = toml::from_str::<Scenario>(&text).unwrap_err().to_string();
        assert!(msg.contains("tmax") && msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn stochastic_runs_need_a_seed() {
        let mut sc = Scenario::new("s", Task::Skle);
        sc.t_max = Some(1.0);
        sc.dt = Some(1e-2);
        assert!(sc.validate().unwrap_err().to_string().contains("seed"));
        sc.seed = Some(1);
        sc.validate().unwrap();
    }

    #[test]
    fn grid_spec() {
        let g = Grid::parse("3,2,-1,1,0.5,1").unwrap();
        assert_eq!(g.points(), vec![(-1.0, 0.5), (0.0, 0.5), (1.0, 0.5), (-1.0, 1.0), (0.0, 1.0), (1.0, 1.0)]);
        assert!(Grid::parse("3,2,1,-1,0,1").is_err());
        assert!(Grid::parse("3,2").is_err());
    }
}
