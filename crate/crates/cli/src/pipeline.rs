//! Stage wiring: solve → analyze → stratify → beta → cover, with CSV and
//! manifest emission.  Fixed seed and config give byte-identical CSV output.

use crate::config::ExperimentConfig;
use fhm_core::fields::Point;
use fhm_core::monotone::{monotonicity_report, theta_smoothed, ProfileComputer};
use fhm_core::solver::minimize;
use fhm_core::strata::{
    build_stratum_report, covering_refine, jones_beta, minkowski_content,
    regularity_scale, reifenberg_integral, singular_detect, BallLabel, MeasureCloud, ProfileTable,
};
use fhm_core::{Error, IntegrandModel, MonotoneProfile, Result, SphereMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

/// Stage-specific stream ids xored into the experiment seed, so stages are
/// decoupled and reproducible in isolation.
mod stream {
    pub const SOLVE: u64 = 0x5001;
    pub const FLUX: u64 = 0xF109;
    pub const REGULARITY: u64 = 0x4E67;
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub config_text: String,
}

pub struct PreparedMap {
    pub model: IntegrandModel,
    pub map: SphereMap,
    pub solve_summary: Option<String>,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, config_text: String, out_override: Option<&str>) -> Result<Self> {
        let out_dir = PathBuf::from(out_override.unwrap_or(&cfg.output_dir));
        std::fs::create_dir_all(&out_dir)?;
        Ok(Pipeline {
            cfg,
            out_dir,
            config_text,
        })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed ^ stream)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)?;
        Ok(path)
    }

    /// Verify the integrand assumptions; failures are reported per item.
    pub fn verify_integrand(&self) -> Result<(bool, String)> {
        let mut model = self.cfg.build_model()?;
        let samples = fhm_core::integrand::log_samples(1e6, 400);
        let rep = model.verify_assumptions(&samples);
        let text = serde_json::to_string_pretty(&rep)
            .map_err(|e| Error::Format(e.to_string()))?;
        self.write("assumptions.json", &text)?;
        Ok((rep.all_ok(), text))
    }

    /// Build (or solve for) the working map and calibrate the model on it.
    pub fn prepare_map(&self, map_override: Option<&Path>) -> Result<PreparedMap> {
        let mut model = self.cfg.build_model()?;
        let mut solve_summary = None;
        let map = if let Some(path) = map_override {
            let m = SphereMap::load(path)?;
            if m.domain.n_dim != self.cfg.grid.n || m.q_dim != self.cfg.model.q {
                return Err(Error::Dimension(format!(
                    "map file is {}-d into R^{}, config expects {}-d into R^{}",
                    m.domain.n_dim, m.q_dim, self.cfg.grid.n, self.cfg.model.q
                )));
            }
            m
        } else if self.cfg.solve.enabled {
            let mut rng = self.rng(stream::SOLVE);
            let (solved, report) = self.solve_multilevel(&model, &mut rng)?;
            solved.save(&self.out_dir.join("map.fhm"))?;
            let mut s = String::new();
            let _ = writeln!(s, "{{");
            let _ = writeln!(s, "  \"iters\": {},", report.iters);
            let _ = writeln!(s, "  \"final_energy\": {},", report.final_energy);
            let _ = writeln!(s, "  \"el_residual\": {},", report.el_residual);
            let _ = writeln!(s, "  \"stat_residual\": {},", report.stat_residual);
            let _ = writeln!(s, "  \"energy_history_len\": {}", report.energy_history.len());
            let _ = writeln!(s, "}}");
            self.write("solve_report.json", &s)?;
            solve_summary = Some(s);
            solved
        } else {
            self.cfg.build_initial_map()?
        };
        // fills the integrability values recorded in the manifest
        model.verify_assumptions(&fhm_core::integrand::log_samples(1e6, 200));
        calibrate(&mut model, &map, &self.cfg)?;
        Ok(PreparedMap {
            model,
            map,
            solve_summary,
        })
    }

    /// Projected gradient descent warm-started through a ladder of coarser
    /// grids: each level is initialized from the upsampled previous solution
    /// (its own boundary ring keeps the exact Dirichlet data), which leaves
    /// the fine level with only high-frequency corrections - the regime where
    /// plain gradient descent converges quickly.
    fn solve_multilevel(
        &self,
        model: &fhm_core::IntegrandModel,
        rng: &mut ChaCha8Rng,
    ) -> Result<(SphereMap, fhm_core::SolveReport)> {
        let final_grid = self.cfg.build_grid()?;
        let final_pts = final_grid.dims[0];
        let mut ladder = vec![final_pts];
        if final_grid.shape != fhm_core::DomainShape::Box {
            let mut pts = final_pts;
            while pts / 2 >= 12 {
                pts /= 2;
                ladder.push(pts);
            }
        }
        ladder.reverse();
        let cfg = self.cfg.solve_config();
        let mut current: Option<SphereMap> = None;
        let mut last: Option<(SphereMap, fhm_core::SolveReport)> = None;
        for &pts in &ladder {
            let grid = if pts == final_pts {
                final_grid.clone()
            } else {
                self.cfg.build_grid_with_points(pts)?
            };
            let mut u0 = self.cfg.initial_map_on(grid)?;
            if let Some(prev) = &current {
                let q = u0.q_dim;
                let mut buf = [0.0f64; fhm_core::fields::MAX_Q];
                for idx in 0..u0.domain.len() {
                    if !u0.active[idx] || u0.boundary[idx] {
                        continue;
                    }
                    let p = u0.domain.node_pos(idx);
                    prev.interp_renormalized(&p, &mut buf);
                    u0.values[idx * q..(idx + 1) * q].copy_from_slice(&buf[..q]);
                }
            }
            let (solved, report) = minimize(&u0, model, &cfg, rng)?;
            current = Some(solved.clone());
            last = Some((solved, report));
        }
        last.ok_or_else(|| Error::Internal("empty level ladder".into()))
    }

    /// Profiles, mollified profiles, pinches and fluxes per center; the
    /// monotonicity statistics ride along.
    pub fn analyze(&self, prepared: &PreparedMap) -> Result<(String, String)> {
        let computer = ProfileComputer::new(&prepared.map, &prepared.model)?;
        let radii = self.cfg.analysis.radii.expand()?;
        let mut rng_centers = self.rng(stream::FLUX ^ 0xC0);
        let centers = self
            .cfg
            .analysis_centers(&prepared.map.domain, &mut rng_centers);
        if centers.is_empty() {
            return Err(Error::Domain("no analysis centers configured".into()));
        }
        let mut profiles: Vec<MonotoneProfile> = Vec::with_capacity(centers.len());
        for c in &centers {
            let mut p = computer.profile(c, &radii)?;
            // ladders too short to mollify emit a NaN column
            p.theta_smooth = theta_smoothed(&p, self.cfg.analysis.eps_mollifier)
                .unwrap_or_else(|_| vec![f64::NAN; p.radii.len()]);
            profiles.push(p);
        }
        let mut rng = self.rng(stream::FLUX);
        let report =
            monotonicity_report(&computer, &profiles, self.cfg.analysis.flux_directions, &mut rng)?;

        let mut csv = String::from("center,cx,cy,cz,r,theta,h,theta_bar,theta_smooth,pinch,flux\n");
        for (ci, prof) in profiles.iter().enumerate() {
            for (ri, &r) in prof.radii.iter().enumerate() {
                let pinch = prof.pinch(r).map(|(w, _)| w).unwrap_or(f64::NAN);
                let flux = if ri + 1 < prof.radii.len() {
                    report.fluxes[ci][ri]
                } else {
                    f64::NAN
                };
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    ci,
                    prof.center[0],
                    prof.center[1],
                    prof.center[2],
                    r,
                    prof.theta[ri],
                    prof.h_vals[ri],
                    prof.theta_bar[ri],
                    prof.theta_smooth[ri],
                    pinch,
                    flux
                );
            }
        }
        self.write("profiles.csv", &csv)?;
        let mono = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Format(e.to_string()))?;
        self.write("monotonicity.json", &mono)?;
        Ok((csv, mono))
    }

    /// Detect singular points, tabulate defects and memberships, estimate
    /// regularity scales.
    pub fn stratify(&self, prepared: &PreparedMap) -> Result<StratifyOutput> {
        let computer = ProfileComputer::new(&prepared.map, &prepared.model)?;
        let thresholds = self.cfg.thresholds();
        let singular = singular_detect(&computer, &thresholds, self.cfg.strata.detect_rmax)?;
        let mut csv = String::from("idx,x,y,z\n");
        for (idx, p) in &singular {
            let _ = writeln!(csv, "{},{},{},{}", idx, p[0], p[1], p[2]);
        }
        self.write("singular.csv", &csv)?;

        // defect table on a subsample of the singular set plus explicit
        // centers, restricted to points deep enough for the defect scales
        let scale_cap = self
            .cfg
            .strata
            .scales
            .iter()
            .copied()
            .fold(0.0f64, f64::max);
        let mut points: Vec<Point> = Vec::new();
        let take = self.cfg.strata.max_report_points.max(1);
        let deep: Vec<Point> = singular
            .iter()
            .map(|(_, p)| *p)
            .filter(|p| prepared.map.domain.clearance(p) >= scale_cap)
            .collect();
        let stride = (deep.len() / take).max(1);
        for (i, p) in deep.iter().enumerate() {
            if i % stride == 0 && points.len() < take {
                points.push(*p);
            }
        }
        for c in &self.cfg.analysis.centers {
            let p = crate::config::point_from(c);
            if prepared.map.domain.clearance(&p) >= scale_cap {
                points.push(p);
            }
        }
        if points.is_empty() {
            return Err(Error::Domain(
                "no report point is deep enough for the configured defect scales".into(),
            ));
        }
        let opts = self.cfg.strata.defect.to_options();
        let scales = self.cfg.strata.scales.clone();
        let mut report = build_stratum_report(&prepared.map, &points, &scales, &opts)?;
        let mut rng_seed = self.cfg.seed ^ stream::REGULARITY;
        report.regularity_scales = points
            .iter()
            .map(|p| {
                rng_seed = rng_seed.wrapping_add(1);
                regularity_scale(&prepared.map, p, self.cfg.strata.alpha, rng_seed)
            })
            .collect();

        let report_json =
            serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
        self.write("stratum_report.json", &report_json)?;

        let mut dcsv = String::from("point,px,py,pz,scale,k,defect,defect_projected\n");
        for (pi, p) in report.points.iter().enumerate() {
            for (si, s) in report.scales.iter().enumerate() {
                for k in 0..report.defects[pi][si].len() {
                    let _ = writeln!(
                        dcsv,
                        "{},{},{},{},{},{},{},{}",
                        pi,
                        p[0],
                        p[1],
                        p[2],
                        s,
                        k,
                        report.defects[pi][si][k],
                        report.defects_projected[pi][si][k]
                    );
                }
            }
        }
        self.write("strata.csv", &dcsv)?;

        let mut mcsv = String::from("point,k,eps,r,member\n");
        let eps_grid = [
            0.5 * self.cfg.strata.eps_strat,
            self.cfg.strata.eps_strat,
            2.0 * self.cfg.strata.eps_strat,
        ];
        for pi in 0..report.points.len() {
            for k in 0..prepared.map.domain.n_dim.saturating_sub(1) {
                for eps in eps_grid {
                    for &r in &report.scales {
                        let _ = writeln!(
                            mcsv,
                            "{},{},{},{},{}",
                            pi,
                            k,
                            eps,
                            r,
                            report.membership(pi, k, eps, r)
                        );
                    }
                }
            }
        }
        self.write("membership.csv", &mcsv)?;

        let mut rcsv = String::from("point,px,py,pz,regularity_scale\n");
        for (pi, p) in report.points.iter().enumerate() {
            let _ = writeln!(
                rcsv,
                "{},{},{},{},{}",
                pi, p[0], p[1], p[2], report.regularity_scales[pi]
            );
        }
        self.write("regularity.csv", &rcsv)?;

        Ok(StratifyOutput {
            singular: singular.iter().map(|(_, p)| *p).collect(),
            report_points: points,
        })
    }

    /// β₂ numbers, Reifenberg ratios and the tested L² inequality on the
    /// detected singular cloud.
    pub fn beta_stage(&self, prepared: &PreparedMap, singular: &[Point]) -> Result<()> {
        let computer = ProfileComputer::new(&prepared.map, &prepared.model)?;
        let thresholds = self.cfg.thresholds();
        let n = prepared.map.domain.n_dim;
        let center = prepared.map.domain.center();

        let mut csv = String::from("r,k,beta,reifenberg_raw,reifenberg_ratio\n");
        let mut radii = Vec::new();
        let mut r = self.cfg.cover.start_radius;
        while r >= 2.0 * thresholds.r0 {
            radii.push(r);
            r *= 0.5;
        }
        for &r in &radii {
            for k in 0..n {
                // the discrete measure carries the k-ball mass of the finest
                // covering scale per atom
                let w_atom = unit_ball_volume(k) * thresholds.r0.powi(k as i32);
                let cloud =
                    MeasureCloud::new(n, singular.to_vec(), vec![w_atom; singular.len()])?;
                let b = jones_beta(&cloud, &center, r, k)?;
                let (raw, ratio) = reifenberg_integral(&cloud, &center, r, k, thresholds.r0)?;
                let _ = writeln!(csv, "{},{},{},{},{}", r, k, b, raw, ratio);
            }
        }
        self.write("beta.csv", &csv)?;

        // Tested L² inequality at the configured k: β² of the pinch-weighted
        // atom cloud against the pinch average.  Scales whose 8r window
        // exceeds a point's clearance are clamped to the available depth.
        let opts = self.cfg.strata.defect.to_options();
        let k = self.cfg.cover.k.min(n.saturating_sub(1));
        let r_floor = 4.0 * prepared.map.domain.spacing;
        let clearance_x = prepared.map.domain.clearance(&center);
        let mut lcsv = String::from("r,k,lhs,rhs,applicable,ratio\n");
        let mut r = r_floor;
        while r <= clearance_x / 2.0 && !singular.is_empty() {
            let clamped = |p: &Point, s: f64| {
                s.min(prepared.map.domain.clearance(p) * (1.0 - 1e-9)).max(r_floor)
            };
            let mut weights = Vec::with_capacity(singular.len());
            for p in singular {
                // atoms too close to the boundary for the base scale carry
                // no mass at this radius
                if prepared.map.domain.clearance(p) < r {
                    weights.push(0.0);
                    continue;
                }
                let top = clamped(p, 8.0 * r);
                let pinch = computer.theta_bar(p, top)? - computer.theta_bar(p, r)?;
                weights.push(pinch.max(0.0));
            }
            let cloud = MeasureCloud::new(n, singular.to_vec(), weights.clone())?;
            let lhs = {
                let b = jones_beta(&cloud, &center, r, k)?;
                b * b
            };
            // the measure carries pinch weights, and the integrand is the
            // pinch itself, so each atom contributes its squared pinch
            let mut rhs = 0.0;
            for (p, w) in singular.iter().zip(&weights) {
                if fhm_core::fields::dist(p, &center) <= r {
                    rhs += w * w;
                }
            }
            let rhs = rhs * r.powi(-(k as i32));
            let s_x = clamped(&center, 8.0 * r);
            let d0 = fhm_core::strata::symmetry_defect(&prepared.map, &center, s_x, 0, &opts)?;
            let dk1 = fhm_core::strata::symmetry_defect(&prepared.map, &center, s_x, k + 1, &opts)?;
            let applicable =
                d0.ambient <= thresholds.delta_pinch && dk1.ambient > thresholds.eps_strat;
            let ratio = if rhs > 0.0 { (lhs / rhs).to_string() } else { "nan".into() };
            let _ = writeln!(lcsv, "{},{},{},{},{},{}", r, k, lhs, rhs, applicable, ratio);
            r *= 2.0;
        }
        self.write("l2_check.csv", &lcsv)?;
        Ok(())
    }

    /// Covering refinement and Minkowski content of the singular set.
    pub fn cover_stage(&self, prepared: &PreparedMap, singular: &[Point]) -> Result<()> {
        let computer = ProfileComputer::new(&prepared.map, &prepared.model)?;
        let thresholds = self.cfg.thresholds();
        let k = self.cfg.cover.k;
        let center = prepared.map.domain.center();
        let start_r = self.cfg.cover.start_radius;

        // shared profile ladder for the drop conditions
        let h = prepared.map.domain.spacing;
        let mut ladder = Vec::new();
        let mut r = 4.0 * h;
        let r_cap = singular
            .iter()
            .map(|p| prepared.map.domain.clearance(p))
            .fold(start_r, f64::min);
        while r <= r_cap {
            ladder.push(r);
            r *= 1.3;
        }
        if ladder.is_empty() {
            ladder.push(4.0 * h);
        }
        let needs_h = !matches!(
            prepared.model.kind,
            fhm_core::IntegrandKind::Dirichlet
        );
        let kappa = prepared.model.vartheta / prepared.model.c_e;
        let mut h_vals = Vec::with_capacity(ladder.len());
        for &r in &ladder {
            h_vals.push(if needs_h {
                prepared.model.correction_h(r.min(1.0))?
            } else {
                0.0
            });
        }
        let mut theta_bar = Vec::with_capacity(singular.len());
        for p in singular {
            let mut row = Vec::with_capacity(ladder.len());
            for (li, &r) in ladder.iter().enumerate() {
                let t = if prepared.map.domain.clearance(p) >= r {
                    computer.theta(p, r)?
                } else {
                    f64::NAN
                };
                let v = if t.is_nan() {
                    *row.last().unwrap_or(&0.0)
                } else {
                    (kappa * r).exp() * t + h_vals[li]
                };
                row.push(v);
            }
            theta_bar.push(row);
        }
        let table = ProfileTable {
            points: singular.to_vec(),
            radii: ladder,
            theta_bar,
        };

        let mut ccsv = String::from("r0,label,cx,cy,cz,radius\n");
        let mut scsv = String::from("r0,sum_rk,balls,stages,covers_all\n");
        let mut reports = Vec::new();
        let mut r0s = vec![thresholds.r0];
        r0s.extend(self.cfg.cover.extra_r0.iter().copied());
        for r0 in r0s {
            let mut t = thresholds.clone();
            t.r0 = r0;
            let rep = covering_refine(singular, &table, &t, k, center, start_r)?;
            reports.push((r0, rep.clone()));
            for b in &rep.balls {
                let label = match b.label {
                    BallLabel::R0Ball => "r0",
                    BallLabel::DropBall => "drop",
                };
                let _ = writeln!(
                    ccsv,
                    "{},{},{},{},{},{}",
                    r0, label, b.center[0], b.center[1], b.center[2], b.radius
                );
            }
            let _ = writeln!(
                scsv,
                "{},{},{},{},{}",
                r0,
                rep.sum_rk,
                rep.balls.len(),
                rep.stages,
                rep.covers(singular)
            );
        }
        self.write("cover.csv", &ccsv)?;
        self.write("cover_summary.csv", &scsv)?;
        let cover_json = serde_json::to_string_pretty(&reports)
            .map_err(|e| Error::Format(e.to_string()))?;
        self.write("cover_report.json", &cover_json)?;

        let radii = if self.cfg.cover.minkowski_radii.is_empty() {
            vec![0.05, 0.1, 0.2, 0.4]
        } else {
            self.cfg.cover.minkowski_radii.clone()
        };
        let rows = minkowski_content(singular, &radii, &prepared.map.domain, k)?;
        let mut mcsv = String::from("r,volume,normalized\n");
        for (r, v, nv) in rows {
            let _ = writeln!(mcsv, "{},{},{}", r, v, nv);
        }
        self.write("minkowski.csv", &mcsv)?;
        Ok(())
    }

    pub fn write_manifest(&self, prepared: &PreparedMap) -> Result<()> {
        let mut hasher = DefaultHasher::new();
        self.config_text.hash(&mut hasher);
        let cfg_hash = hasher.finish();
        let manifest = serde_json::json!({
            "config_hash": format!("{cfg_hash:016x}"),
            "seed": self.cfg.seed,
            "crate_version": env!("CARGO_PKG_VERSION"),
            "model_kind": self.cfg.model.kind,
            "a_constant": prepared.model.a_constant,
            "integrability_c": prepared.model.integrability_c,
            "integrability_d": prepared.model.integrability_d,
            "eps0": self.cfg.strata.eps0,
        });
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Format(e.to_string()))?;
        self.write("manifest.json", &text)?;
        Ok(())
    }

    /// Full pipeline: verify, solve/build, analyze, stratify, beta, cover.
    pub fn run(&self) -> Result<()> {
        let (ok, _) = self.verify_integrand()?;
        if !ok {
            return Err(Error::Domain(
                "integrand failed its assumption checks; see assumptions.json".into(),
            ));
        }
        let prepared = self.prepare_map(None)?;
        self.write_manifest(&prepared)?;
        self.analyze(&prepared)?;
        let strat = self.stratify(&prepared)?;
        self.beta_stage(&prepared, &strat.singular)?;
        self.cover_stage(&prepared, &strat.singular)?;
        Ok(())
    }
}

pub struct StratifyOutput {
    pub singular: Vec<Point>,
    pub report_points: Vec<Point>,
}

fn unit_ball_volume(k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => 4.0 / 3.0 * std::f64::consts::PI,
    }
}

/// Calibrate `A` from the energy average at the largest ball that fits the
/// analysis, then verify the invariant the calibration relies on.
fn calibrate(model: &mut IntegrandModel, map: &SphereMap, cfg: &ExperimentConfig) -> Result<()> {
    if matches!(model.kind, fhm_core::IntegrandKind::Dirichlet) {
        // h vanishes; calibrate cheaply on the total energy scale
        let e = fhm_core::fields::total_energy(map, model)?;
        model.calibrate_a(e.max(1.0))?;
        return Ok(());
    }
    let computer = ProfileComputer::new(map, model)?;
    let center = map.domain.center();
    let radii = cfg.analysis.radii.expand()?;
    let r_top = radii
        .last()
        .copied()
        .unwrap_or(0.4)
        .min(map.domain.clearance(&center));
    let energy_avg = computer.energy_average(&center, r_top)?;
    model.calibrate_a(energy_avg)?;
    Ok(())
}
