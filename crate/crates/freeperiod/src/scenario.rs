//! Scenario configs: one TOML file fixes the manifold, the Lagrangian
//! data, the optional shrink confinement, discretization knobs and the
//! search region, so every command-line run is reproducible from the
//! file plus its named seed. Configs are data only: expressions are
//! parsed by the crate's grammar, never executed.

use crate::geometry::{ChartBox, Manifold};
use crate::expr::ScalarField;
use crate::lagrangian::{Lagrangian, OneForm, QuadraticCap};
use crate::minimax::MinimaxTols;
use crate::shrink::{build_radial_shrink, ShrinkMap};
use crate::{FpError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// Manifold description. Chart `periods` use 0 for a non-periodic
/// coordinate (TOML arrays cannot hold nulls).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSpec {
    Euclidean {
        dim: usize,
    },
    FlatTorus {
        periods: Vec<f64>,
    },
    Cylinder {
        beta: String,
    },
    Chart {
        coords: Vec<String>,
        periods: Vec<f64>,
        metric: Vec<String>,
    },
    UnitSphere,
}

/// Lagrangian data on top of the kinetic term: optional 1-form
/// components, optional potential, optional velocity cap.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<CapSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapSpec {
    pub radius: f64,
    pub blend: f64,
}

/// Radial shrink profile parameters (non-periodic coordinates form the
/// radial factor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkSpec {
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub s_inf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSpec {
    /// Loop samples.
    pub n: usize,
    #[serde(default = "default_gradient_tol")]
    pub gradient_tol: f64,
    #[serde(default = "default_level_tol")]
    pub level_tol: f64,
}

fn default_gradient_tol() -> f64 {
    1e-6
}

fn default_level_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    /// Default energy; commands may override it.
    pub k: f64,
    pub region_center: Vec<f64>,
    pub region_half: Vec<f64>,
    /// Default winding class for class minimization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<Vec<i64>>,
}

/// One reproducible problem setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Single source of all randomness in a run.
    pub seed: u64,
    pub manifold: ManifoldSpec,
    #[serde(default)]
    pub lagrangian: LagrangianSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shrink: Option<ShrinkSpec>,
    pub discretization: DiscretizationSpec,
    pub search: SearchSpec,
}

impl Scenario {
    /// Parses and validates a scenario from TOML text.
    pub fn from_toml_str(s: &str) -> Result<Scenario> {
        let sc: Scenario = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Serializes to TOML. Dump-then-load reproduces the scenario
    /// exactly (floats print in round-trip form).
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| FpError::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_toml_string()?)
    }

    /// Structural checks plus a full build of every derived object, so
    /// a validated scenario cannot fail later for config reasons.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(FpError::Scenario(format!(
                "scenario name {:?} must be a nonempty path-free label",
                self.name
            )));
        }
        let d = &self.discretization;
        if d.n < 8 {
            return Err(FpError::Scenario(format!(
                "need at least 8 loop samples, got {}",
                d.n
            )));
        }
        if !(d.gradient_tol > 0.0) || !(d.level_tol > 0.0) {
            return Err(FpError::Scenario(
                "tolerances must be positive".into(),
            ));
        }
        if !self.search.k.is_finite() {
            return Err(FpError::Scenario(format!(
                "default energy must be finite, got {}",
                self.search.k
            )));
        }
        let l = self.build_lagrangian()?;
        let m = l.manifold();
        let region = self.region()?;
        if region.dim() != m.coord_dim() {
            return Err(FpError::DimMismatch {
                expected: m.coord_dim(),
                got: region.dim(),
                context: "search region".into(),
            });
        }
        if let Some(class) = &self.search.class {
            if class.len() != m.coord_dim() {
                return Err(FpError::DimMismatch {
                    expected: m.coord_dim(),
                    got: class.len(),
                    context: "default winding class".into(),
                });
            }
        }
        self.build_shrink()?;
        Ok(())
    }

    pub fn build_manifold(&self) -> Result<Arc<Manifold>> {
        let m = match &self.manifold {
            ManifoldSpec::Euclidean { dim } => {
                if *dim == 0 {
                    return Err(FpError::Scenario("zero-dimensional manifold".into()));
                }
                Manifold::euclidean(*dim)
            }
            ManifoldSpec::FlatTorus { periods } => Manifold::flat_torus(periods)?,
            ManifoldSpec::Cylinder { beta } => Manifold::cylinder(beta)?,
            ManifoldSpec::Chart {
                coords,
                periods,
                metric,
            } => {
                let names: Vec<&str> = coords.iter().map(|s| s.as_str()).collect();
                let per: Vec<Option<f64>> = periods
                    .iter()
                    .map(|&p| {
                        if p == 0.0 {
                            Ok(None)
                        } else if p > 0.0 && p.is_finite() {
                            Ok(Some(p))
                        } else {
                            Err(FpError::Scenario(format!(
                                "chart period must be positive or 0 (non-periodic), got {p}"
                            )))
                        }
                    })
                    .collect::<Result<_>>()?;
                Manifold::chart_with_metric(&names, &per, metric)?
            }
            ManifoldSpec::UnitSphere => Manifold::unit_sphere(),
        };
        Ok(Arc::new(m))
    }

    pub fn build_lagrangian(&self) -> Result<Lagrangian> {
        let m = self.build_manifold()?;
        let names = m.coord_names();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let theta = match &self.lagrangian.theta {
            Some(srcs) => Some(OneForm::parse(srcs, &name_refs)?),
            None => None,
        };
        let potential = match &self.lagrangian.potential {
            Some(src) => Some(ScalarField::parse(src, &name_refs)?),
            None => None,
        };
        let mut l = Lagrangian::electromagnetic(m, theta, potential)?;
        if let Some(cap) = self.lagrangian.cap {
            if !(cap.radius > 0.0) || !(cap.blend > 0.0) {
                return Err(FpError::Scenario(
                    "cap radius and blend must be positive".into(),
                ));
            }
            l = l.with_cap(QuadraticCap {
                radius: cap.radius,
                blend: cap.blend,
            });
        }
        Ok(l)
    }

    pub fn build_shrink(&self) -> Result<Option<ShrinkMap>> {
        match self.shrink {
            None => Ok(None),
            Some(s) => {
                let m = self.build_manifold()?;
                Ok(Some(build_radial_shrink(&m, s.r0, s.r1, s.r2, s.s_inf)?))
            }
        }
    }

    pub fn region(&self) -> Result<ChartBox> {
        let c = &self.search.region_center;
        let h = &self.search.region_half;
        if c.len() != h.len() {
            return Err(FpError::DimMismatch {
                expected: c.len(),
                got: h.len(),
                context: "region halves".into(),
            });
        }
        let mut lo = Vec::with_capacity(c.len());
        let mut hi = Vec::with_capacity(c.len());
        for (ci, hi_w) in c.iter().zip(h) {
            if !(ci.is_finite() && *hi_w > 0.0 && hi_w.is_finite()) {
                return Err(FpError::Scenario(
                    "region center must be finite and halves positive".into(),
                ));
            }
            lo.push(ci - hi_w);
            hi.push(ci + hi_w);
        }
        ChartBox::new(lo, hi)
    }

    pub fn tols(&self) -> MinimaxTols {
        MinimaxTols {
            gradient_tol: self.discretization.gradient_tol,
            level_tol: self.discretization.level_tol,
        }
    }
}

/// Writes a file atomically: temp file in the same directory, then
/// rename, so readers never observe partial artifacts.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp{}",
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "artifact".into()),
            std::process::id()
        )),
        None => Path::new(&format!(".artifact.tmp{}", std::process::id())).to_path_buf(),
    };
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
