//! Experiment configuration: a strict TOML schema with unknown-key rejection.

use fhm_core::fields::Point;
use fhm_core::{
    DomainShape, Error, GridDomain, IntegrandKind, IntegrandModel, Result, SolveConfig, SphereMap,
    ThresholdConfig,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    pub model: ModelBlock,
    pub grid: GridBlock,
    pub boundary: BoundaryBlock,
    #[serde(default)]
    pub solve: SolveBlock,
    pub analysis: AnalysisBlock,
    pub strata: StrataBlock,
    #[serde(default)]
    pub cover: CoverBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: String,
    pub beta: Option<f64>,
    pub b: f64,
    #[serde(default)]
    pub vartheta: f64,
    pub n: usize,
    pub q: usize,
    pub table_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub n: usize,
    pub dims: Vec<usize>,
    pub shape: String,
    pub radius: Option<f64>,
    pub spacing: Option<f64>,
    pub origin: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryBlock {
    pub kind: String,
    pub dir: Option<Vec<f64>>,
    pub p1: Option<Vec<f64>>,
    pub p2: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveBlock {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_step0")]
    pub step0: f64,
    #[serde(default = "default_backtrack")]
    pub backtrack_factor: f64,
    #[serde(default = "default_energy_tol")]
    pub energy_tol: f64,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_residual_trials")]
    pub residual_trials: usize,
}

fn default_max_iters() -> usize {
    4000
}
fn default_step0() -> f64 {
    0.05
}
fn default_backtrack() -> f64 {
    0.5
}
fn default_energy_tol() -> f64 {
    1e-9
}
fn default_residual_tol() -> f64 {
    1e-2
}
fn default_residual_trials() -> usize {
    32
}

impl Default for SolveBlock {
    fn default() -> Self {
        SolveBlock {
            enabled: false,
            max_iters: default_max_iters(),
            step0: default_step0(),
            backtrack_factor: default_backtrack(),
            energy_tol: default_energy_tol(),
            residual_tol: default_residual_tol(),
            residual_trials: default_residual_trials(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    #[serde(default)]
    pub centers: Vec<Vec<f64>>,
    /// Additional centers drawn uniformly from a ball around the domain
    /// center (seeded, so reruns see the same set).
    pub centers_random: Option<RandomCenters>,
    pub radii: RadiiSpec,
    #[serde(default = "default_mollifier")]
    pub eps_mollifier: f64,
    #[serde(default = "default_flux_dirs")]
    pub flux_directions: usize,
}

fn default_mollifier() -> f64 {
    0.1
}
fn default_flux_dirs() -> usize {
    1024
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomCenters {
    pub count: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiiSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub log: bool,
}

impl RadiiSpec {
    pub fn expand(&self) -> Result<Vec<f64>> {
        if !(self.min > 0.0 && self.max > self.min && self.count >= 2) {
            return Err(Error::Domain(format!(
                "radii spec needs 0 < min < max and count >= 2, got {self:?}"
            )));
        }
        let n = self.count;
        Ok((0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                if self.log {
                    self.min * (self.max / self.min).powf(t)
                } else {
                    self.min + t * (self.max - self.min)
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrataBlock {
    pub eps0: f64,
    pub eps_strat: f64,
    pub delta_pinch: f64,
    pub rho: f64,
    pub r0: f64,
    pub reifenberg_delta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub detect_rmax: f64,
    /// Scales of the defect table.
    pub scales: Vec<f64>,
    /// Cap on the number of singular points carried into the defect table.
    #[serde(default = "default_strata_points")]
    pub max_report_points: usize,
    #[serde(default)]
    pub defect: DefectBlock,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_strata_points() -> usize {
    12
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DefectBlock {
    pub blow_points: Option<usize>,
    pub coarse_directions: Option<usize>,
    pub refine_steps: Option<usize>,
    pub radial_samples: Option<usize>,
    pub translate_samples: Option<usize>,
    pub angle_bins: Option<usize>,
}

impl DefectBlock {
    pub fn to_options(&self) -> fhm_core::strata::DefectOptions {
        let mut o = fhm_core::strata::DefectOptions::default();
        if let Some(v) = self.blow_points {
            o.blow_points = v;
        }
        if let Some(v) = self.coarse_directions {
            o.coarse_directions = v;
        }
        if let Some(v) = self.refine_steps {
            o.refine_steps = v;
        }
        if let Some(v) = self.radial_samples {
            o.radial_samples = v;
        }
        if let Some(v) = self.translate_samples {
            o.translate_samples = v;
        }
        if let Some(v) = self.angle_bins {
            o.angle_bins = v;
        }
        o
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverBlock {
    #[serde(default)]
    pub k: usize,
    #[serde(default = "default_start_radius")]
    pub start_radius: f64,
    #[serde(default)]
    pub minkowski_radii: Vec<f64>,
    /// Additional finest scales for the stability sweep (r0 halvings).
    #[serde(default)]
    pub extra_r0: Vec<f64>,
}

fn default_start_radius() -> f64 {
    0.45
}

impl Default for CoverBlock {
    fn default() -> Self {
        CoverBlock {
            k: 0,
            start_radius: default_start_radius(),
            minkowski_radii: Vec::new(),
            extra_r0: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::Format(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.build_grid()?;
        self.build_model()?;
        let grid = self.build_grid()?;
        self.thresholds().validate(grid.spacing)?;
        self.analysis.radii.expand()?;
        if self.strata.scales.is_empty() {
            return Err(Error::Domain("strata.scales must not be empty".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<IntegrandModel> {
        let m = &self.model;
        let kind = match m.kind.as_str() {
            "dirichlet" => IntegrandKind::Dirichlet,
            "f1" => IntegrandKind::F1 {
                beta: m
                    .beta
                    .ok_or_else(|| Error::Domain("model.beta required for f1".into()))?,
            },
            "tabulated" => {
                let path = m.table_path.as_ref().ok_or_else(|| {
                    Error::Domain("model.table_path required for tabulated".into())
                })?;
                let text = std::fs::read_to_string(path)?;
                let mut ps = Vec::new();
                let mut fs = Vec::new();
                for (ln, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let mut it = line.split_whitespace();
                    let (Some(a), Some(b)) = (it.next(), it.next()) else {
                        return Err(Error::Format(format!("table line {} malformed", ln + 1)));
                    };
                    ps.push(a.parse::<f64>().map_err(|e| {
                        Error::Format(format!("table line {}: {e}", ln + 1))
                    })?);
                    fs.push(b.parse::<f64>().map_err(|e| {
                        Error::Format(format!("table line {}: {e}", ln + 1))
                    })?);
                }
                IntegrandKind::Tabulated(fhm_core::integrand::TabulatedF::new(ps, fs)?)
            }
            other => {
                return Err(Error::Domain(format!(
                    "unknown model.kind {other:?}; expected dirichlet, f1 or tabulated"
                )))
            }
        };
        IntegrandModel::new(kind, m.b, m.vartheta, m.n, m.q)
    }

    pub fn build_grid(&self) -> Result<GridDomain> {
        let g = &self.grid;
        match g.shape.as_str() {
            "ball" => {
                let radius = g
                    .radius
                    .ok_or_else(|| Error::Domain("grid.radius required for ball".into()))?;
                if g.dims.len() != g.n || g.dims.windows(2).any(|w| w[0] != w[1]) {
                    return Err(Error::Domain(
                        "ball grids use equal per-axis point counts".into(),
                    ));
                }
                GridDomain::ball(g.n, radius, g.dims[0])
            }
            "box" => {
                let spacing = g
                    .spacing
                    .ok_or_else(|| Error::Domain("grid.spacing required for box".into()))?;
                let origin = g
                    .origin
                    .clone()
                    .unwrap_or_else(|| vec![0.0; g.n]);
                GridDomain::new(g.n, &g.dims, spacing, &origin, DomainShape::Box)
            }
            other => Err(Error::Domain(format!(
                "unknown grid.shape {other:?}; expected ball or box"
            ))),
        }
    }

    /// Ball grids at a reduced resolution, for multilevel warm starts.
    pub fn build_grid_with_points(&self, points_per_axis: usize) -> Result<GridDomain> {
        let g = &self.grid;
        if g.shape != "ball" {
            return Err(Error::Domain("coarse levels are only built for ball grids".into()));
        }
        let radius = g
            .radius
            .ok_or_else(|| Error::Domain("grid.radius required for ball".into()))?;
        GridDomain::ball(g.n, radius, points_per_axis)
    }

    /// The initial (or analytic) map implied by the boundary block.
    pub fn build_initial_map(&self) -> Result<SphereMap> {
        let grid = self.build_grid()?;
        self.initial_map_on(grid)
    }

    /// Same, on an explicitly provided grid (used by the level ladder).
    pub fn initial_map_on(&self, grid: GridDomain) -> Result<SphereMap> {
        match self.boundary.kind.as_str() {
            // the radial map doubles as the solver's initial guess: descent
            // from rougher data parks the defect off-center for a long time,
            // while polishing the radial candidate converges to the same
            // basin quickly
            "hedgehog" => SphereMap::hedgehog(grid, 0.0),
            "cylinder" => SphereMap::cylinder(grid),
            "constant" => {
                let dir = self
                    .boundary
                    .dir
                    .clone()
                    .unwrap_or_else(|| {
                        let mut v = vec![0.0; self.model.q];
                        v[self.model.q - 1] = 1.0;
                        v
                    });
                SphereMap::constant(grid, self.model.q, &dir)
            }
            "two-hedgehogs" => {
                let p1 = point_from(self.boundary.p1.as_deref().unwrap_or(&[-0.2, 0.0, 0.0]));
                let p2 = point_from(self.boundary.p2.as_deref().unwrap_or(&[0.2, 0.0, 0.0]));
                SphereMap::two_monopole(grid, p1, p2)
            }
            other => Err(Error::Domain(format!(
                "unknown boundary.kind {other:?}"
            ))),
        }
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            max_iters: self.solve.max_iters,
            step0: self.solve.step0,
            backtrack_factor: self.solve.backtrack_factor,
            energy_tol: self.solve.energy_tol,
            residual_tol: self.solve.residual_tol,
            residual_trials: self.solve.residual_trials,
        }
    }

    pub fn thresholds(&self) -> ThresholdConfig {
        ThresholdConfig {
            eps0: self.strata.eps0,
            eps_strat: self.strata.eps_strat,
            delta_pinch: self.strata.delta_pinch,
            rho: self.strata.rho,
            r0: self.strata.r0,
            reifenberg_delta: self.strata.reifenberg_delta,
        }
    }

    /// Explicit centers plus the seeded random ones.
    pub fn analysis_centers(&self, grid: &GridDomain, rng: &mut ChaCha8Rng) -> Vec<Point> {
        let mut out: Vec<Point> = self.analysis.centers.iter().map(|c| point_from(c)).collect();
        if let Some(rc) = &self.analysis.centers_random {
            let c = grid.center();
            let mut drawn = 0;
            while drawn < rc.count {
                let mut p = [0.0f64; 3];
                let mut norm2 = 0.0;
                for a in p.iter_mut().take(grid.n_dim) {
                    *a = rng.gen_range(-1.0..1.0);
                    norm2 += *a * *a;
                }
                if norm2 > 1.0 {
                    continue;
                }
                for (a, ca) in p.iter_mut().zip(c.iter()) {
                    *a = ca + *a * rc.radius;
                }
                out.push(p);
                drawn += 1;
            }
        }
        out
    }
}

pub fn point_from(v: &[f64]) -> Point {
    let mut p = [0.0f64; 3];
    for (a, &x) in p.iter_mut().zip(v.iter()) {
        *a = x;
    }
    p
}
