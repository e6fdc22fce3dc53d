//! Ensemble runs over a grid of times and the statistics computed from them.
//!
//! Run `i` draws its tree from stream `(seed, i, Tree)` and its potential
//! from `(seed, i, Field)`, so any single run can be reproduced on its own.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{self, ConfigMap};
use crate::error::{Error, Result};
use crate::functionals::{gamma_sets, lambda_plus_profile, maximisers, LocalisationSites};
use crate::gw_tree::{generate_kesten, OffspringDistribution, Tree, VertexId};
use crate::pam_solver::{adaptive_domain, evolve, Domain, Hamiltonian, SolutionState};
use crate::potential::PotentialField;
use crate::rng::{stream, Purpose};
use crate::scales::ModelParams;
use crate::spectral::{path_certificates, principal_eigenpair, rayleigh_ritz_floor, DEFAULT_TOL};

/// Acceptance thresholds; hashed into every summary.
pub const CALIBRATION: &str = include_str!("../calibration/thresholds.cfg");

pub fn calibration_hash() -> String {
    hex::encode(Sha256::digest(CALIBRATION.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusPolicy {
    /// Solve on `B_r` and search for sites there.
    Fixed(u32),
    /// Domain from the doubling test starting at `R(t)`; sites searched in
    /// `B_{R(t)}`.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Localisation,
    Mass,
    Logconv,
    Sites,
    Gaps,
    All,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "localisation" => Self::Localisation,
            "mass" => Self::Mass,
            "logconv" => Self::Logconv,
            "sites" => Self::Sites,
            "gaps" => Self::Gaps,
            "all" => Self::All,
            _ => return Err(Error::Config(format!("unknown experiment {s:?}"))),
        })
    }
}

pub const KEYS: &[(&str, &str)] = &[
    ("experiment", "localisation | mass | logconv | sites | gaps | all (default all)"),
    ("family", "poisson1 | geometric-half | binary | zipf (default poisson1)"),
    ("beta", "stability index, required for zipf; 2 for the other families"),
    ("alpha", "Pareto index of the potential (default 5)"),
    ("t_grid", "ascending comma list, entries >= 3; 10^x allowed"),
    ("ensemble", "number of environments (default 100)"),
    ("seed", "master seed (default 1)"),
    ("radius_policy", "adaptive | fixed:<r> (default adaptive)"),
    ("growth_tol", "doubling-test tolerance for the adaptive policy (default 1e-3)"),
    ("tol", "integrator tolerance in [1e-12, 1e-3] (default 1e-8)"),
    ("vertex_budget", "largest expected or generated tree size per run (default 5000000)"),
    ("out_dir", "output directory (default out)"),
    ("threads", "worker threads, 0 = all cores (default 0)"),
];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub family: String,
    pub beta: f64,
    pub alpha: f64,
    pub t_grid: Vec<f64>,
    pub ensemble: usize,
    pub seed: u64,
    pub radius_policy: RadiusPolicy,
    pub growth_tol: f64,
    pub tol: f64,
    pub vertex_budget: usize,
    pub out_dir: PathBuf,
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let keys: Vec<&str> = KEYS.iter().map(|k| k.0).collect();
        config::check_keys(map, &keys)?;
        let family = config::get(map, "family", "poisson1".to_string())?;
        let beta = match (family.as_str(), map.get("beta")) {
            ("zipf", None) => return Err(Error::Config("family zipf needs beta".into())),
            ("zipf", Some(b)) => config::parse_number(b)?,
            (_, None) => 2.0,
            (_, Some(b)) => {
                let b = config::parse_number(b)?;
                if b != 2.0 {
                    return Err(Error::Config(format!("family {family} has beta = 2, got {b}")));
                }
                b
            }
        };
        let radius_policy = match config::get(map, "radius_policy", "adaptive".to_string())?.as_str() {
            "adaptive" => RadiusPolicy::Adaptive,
            s => match s.strip_prefix("fixed:").map(str::parse::<u32>) {
                Some(Ok(r)) if r >= 1 => RadiusPolicy::Fixed(r),
                _ => return Err(Error::Config(format!("bad radius_policy {s:?}"))),
            },
        };
        let t_grid = match map.get("t_grid") {
            Some(s) => config::parse_list(s)?,
            None => vec![100.0, 10f64.powf(2.5), 1000.0, 10f64.powf(3.5)],
        };
        let cfg = Self {
            experiment: config::get(map, "experiment", ExperimentKind::All)?,
            family,
            beta,
            alpha: map.get("alpha").map_or(Ok(5.0), |s| config::parse_number(s))?,
            t_grid,
            ensemble: config::get(map, "ensemble", 100)?,
            seed: config::get(map, "seed", 1)?,
            radius_policy,
            growth_tol: map.get("growth_tol").map_or(Ok(1e-3), |s| config::parse_number(s))?,
            tol: map.get("tol").map_or(Ok(1e-8), |s| config::parse_number(s))?,
            vertex_budget: map.get("vertex_budget").map_or(Ok(5e6), |s| config::parse_number(s))? as usize,
            out_dir: PathBuf::from(config::get(map, "out_dir", "out".to_string())?),
            threads: config::get(map, "threads", 0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() || self.t_grid.iter().any(|&t| !(t >= 3.0 && t.is_finite())) {
            return Err(Error::Config("t_grid entries must be finite and >= 3".into()));
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("t_grid must be strictly ascending".into()));
        }
        if self.ensemble < 1 {
            return Err(Error::Config("ensemble must be at least 1".into()));
        }
        if !(self.tol >= crate::pam_solver::MIN_TOL && self.tol <= crate::pam_solver::MAX_TOL) {
            return Err(Error::Config(format!("tol {} out of range", self.tol)));
        }
        if !(self.growth_tol > 0.0) {
            return Err(Error::Config("growth_tol must be positive".into()));
        }
        self.params()?;
        self.offspring()?;
        Ok(())
    }

    pub fn offspring(&self) -> Result<OffspringDistribution> {
        if self.family == "zipf" {
            OffspringDistribution::from_name(&format!("zipf:{}", self.beta))
        } else {
            OffspringDistribution::from_name(&self.family)
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::derive(self.alpha, self.beta).map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical `key -> value` echo of every setting.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let t_grid: Vec<String> = self.t_grid.iter().map(|t| format!("{t:?}")).collect();
        let policy = match self.radius_policy {
            RadiusPolicy::Adaptive => "adaptive".to_string(),
            RadiusPolicy::Fixed(r) => format!("fixed:{r}"),
        };
        let experiment = serde_json::to_value(self.experiment).unwrap().as_str().unwrap().to_string();
        [
            ("experiment", experiment),
            ("family", self.family.clone()),
            ("beta", format!("{:?}", self.beta)),
            ("alpha", format!("{:?}", self.alpha)),
            ("t_grid", t_grid.join(", ")),
            ("ensemble", self.ensemble.to_string()),
            ("seed", self.seed.to_string()),
            ("radius_policy", policy),
            ("growth_tol", format!("{:?}", self.growth_tol)),
            ("tol", format!("{:?}", self.tol)),
            ("vertex_budget", self.vertex_budget.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("threads", self.threads.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// `E|B_r|` for Kesten's tree: generation `k` has mean size `1 + k var(mu)`.
pub fn expected_ball_volume(mu: &OffspringDistribution, r: u32) -> f64 {
    let r = f64::from(r);
    (r + 1.0) + mu.variance() * r * (r + 1.0) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub domain_radius: u32,
    pub domain_size: usize,
    pub tree_radius: u32,
    pub log_u: f64,
    pub z: [VertexId; 2],
    pub z_depth: [u32; 2],
    pub z_psi: [f64; 2],
    pub gap12: f64,
    pub r1: f64,
    pub r2: f64,
    pub logconv_err: f64,
    pub lambda1: f64,
    pub rr_floor: f64,
    /// Sides (0-2) where the anchor was the strict `xi - deg` maximiser with
    /// a positive gap.
    pub cert_applicable: u32,
    pub cert_checked: u64,
    pub cert_violations: u64,
}

impl RunOutcome {
    pub fn r12(&self) -> f64 {
        self.r1 + self.r2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub t: f64,
    pub outcome: std::result::Result<RunOutcome, String>,
}

pub const CSV_HEADER: &str = "run,seed,t,status,reason,domain_radius,domain_size,tree_radius,log_u,\
z1,z1_depth,z1_psi,z2,z2_depth,z2_psi,gap12,r1,r2,r12,logconv_err,lambda1,rr_floor,\
cert_applicable,cert_checked,cert_violations";

fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunRecord {
    pub fn csv_line(&self) -> String {
        let head = format!("{},{},{}", self.run, self.seed, g17(self.t));
        match &self.outcome {
            Err(reason) => {
                let reason = reason.replace([',', '\n'], ";");
                format!("{head},failed,{reason}{}", ",".repeat(20))
            }
            Ok(o) => format!(
                "{head},ok,,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                o.domain_radius,
                o.domain_size,
                o.tree_radius,
                g17(o.log_u),
                o.z[0],
                o.z_depth[0],
                g17(o.z_psi[0]),
                o.z[1],
                o.z_depth[1],
                g17(o.z_psi[1]),
                g17(o.gap12),
                g17(o.r1),
                g17(o.r2),
                g17(o.r12()),
                g17(o.logconv_err),
                g17(o.lambda1),
                g17(o.rr_floor),
                o.cert_applicable,
                o.cert_checked,
                o.cert_violations
            ),
        }
    }

    /// Inverse of [`RunRecord::csv_line`].
    pub fn parse_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |m: &str| Error::Parse {
            line: 0,
            msg: format!("{m}: {line}"),
        };
        if f.len() != 25 {
            return Err(bad("expected 25 fields"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad("bad number"));
        let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad("bad integer"));
        let outcome = match f[3] {
            "failed" => Err(f[4].to_string()),
            "ok" => Ok(RunOutcome {
                domain_radius: int(5)? as u32,
                domain_size: int(6)? as usize,
                tree_radius: int(7)? as u32,
                log_u: num(8)?,
                z: [int(9)? as VertexId, int(12)? as VertexId],
                z_depth: [int(10)? as u32, int(13)? as u32],
                z_psi: [num(11)?, num(14)?],
                gap12: num(15)?,
                r1: num(16)?,
                r2: num(17)?,
                logconv_err: num(19)?,
                lambda1: num(20)?,
                rr_floor: num(21)?,
                cert_applicable: int(22)? as u32,
                cert_checked: int(23)?,
                cert_violations: int(24)?,
            }),
            _ => return Err(bad("bad status")),
        };
        Ok(Self {
            run: int(0)? as usize,
            seed: int(1)?,
            t: num(2)?,
            outcome,
        })
    }

    /// Record invariants: ratios in `[0, 1]`, `r12 <= 1 + 1e-9`, all finite.
    pub fn check(&self) -> Result<()> {
        if let Ok(o) = &self.outcome {
            let finite = [o.log_u, o.z_psi[0], o.z_psi[1], o.gap12, o.r1, o.r2, o.logconv_err, o.lambda1, o.rr_floor]
                .iter()
                .all(|x| x.is_finite());
            let ratios = (0.0..=1.0).contains(&o.r1) && (0.0..=1.0).contains(&o.r2) && o.r12() <= 1.0 + 1e-9;
            if !finite || !ratios {
                return Err(Error::Hypothesis(format!("record invariants violated: {o:?}")));
            }
        }
        Ok(())
    }
}

pub fn write_csv<W: Write>(records: &[RunRecord], out: &mut W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

pub fn read_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: "unexpected header".into(),
        });
    }
    lines.filter(|l| !l.is_empty()).map(RunRecord::parse_csv).collect()
}

struct Env {
    tree: Tree,
    field: PotentialField,
}

fn build_env(cfg: &ExperimentConfig, mu: &OffspringDistribution, run: usize, radius: u32) -> Result<Env> {
    let expected = expected_ball_volume(mu, radius);
    if expected > cfg.vertex_budget as f64 {
        return Err(Error::Budget(format!(
            "expected |B_{radius}| = {expected:.3e} exceeds vertex_budget {}",
            cfg.vertex_budget
        )));
    }
    let mut rng = stream(cfg.seed, run as u64, Purpose::Tree);
    let mut tree = generate_kesten(mu, radius, &mut rng, cfg.vertex_budget)?;
    tree.set_seed(Some(cfg.seed));
    let mut rng = stream(cfg.seed, run as u64, Purpose::Field);
    let field = PotentialField::sample(&tree, cfg.alpha, &mut rng)?;
    Ok(Env { tree, field })
}

fn floor_radius(x: f64) -> u32 {
    (x.floor() as u32).max(1)
}

/// Tree radius that keeps every set touched at time `t` expanded.
fn needed_radius(cfg: &ExperimentConfig, params: &ModelParams, t: f64) -> Result<u32> {
    let slack = 1.0 + t.ln().powf(-params.z);
    Ok(match cfg.radius_policy {
        RadiusPolicy::Fixed(r) => (slack * f64::from(r)).ceil() as u32 + 2,
        RadiusPolicy::Adaptive => 2 * floor_radius(params.scale_big_r(t)?) + 2,
    })
}

struct Solved {
    domain: Domain,
    radius: u32,
    state: SolutionState,
}

fn sites_and_record(env: &Env, params: &ModelParams, t: f64, search: u32, solved: &Solved) -> Result<RunOutcome> {
    let (tree, field) = (&env.tree, &env.field);
    let sites: LocalisationSites = maximisers(tree, field, t, search)?;
    let d = &solved.domain;
    let w = &solved.state.w;
    let at = |z: VertexId| d.row(z).map_or(0.0, |i| w[i]);
    let (r1, r2) = (at(sites.z[0]), at(sites.z[1]));
    let lam = lambda_plus_profile(tree, field, t, d.vertices(), d.vertices())?;
    let scale = t * params.scale_a(t)?;
    let mut err = 0.0f64;
    for (i, &l) in lam.iter().enumerate() {
        let log_plus = if w[i] > 0.0 { (solved.state.log_mass + w[i].ln()).max(0.0) } else { 0.0 };
        err = err.max((log_plus - l).abs());
    }
    let gs = gamma_sets(tree, &sites, params, t)?;
    let lambda_t = Domain::new(tree, gs.lambda.clone())?;
    let h = Hamiltonian::assemble(tree, field, &lambda_t)?;
    let eig = principal_eigenpair(&h, DEFAULT_TOL)?;
    let rr_floor = rayleigh_ritz_floor(field, tree, &lambda_t)?;
    let (mut applicable, mut checked, mut violations) = (0, 0, 0);
    for (remove, anchor) in [(sites.z[0], sites.z[1]), (sites.z[1], sites.z[0])] {
        let Some(set) = lambda_t.without(tree, &[remove])? else {
            continue;
        };
        match path_certificates(tree, field, &set, anchor) {
            Ok(rep) => {
                applicable += 1;
                for c in rep.certificates.iter().filter(|c| !gs.omega.contains(&c.x)) {
                    checked += 1;
                    violations += u64::from(!c.holds);
                }
            }
            Err(Error::Hypothesis(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutcome {
        domain_radius: solved.radius,
        domain_size: d.len(),
        tree_radius: tree.radius().unwrap_or(0),
        log_u: solved.state.log_mass,
        z: [sites.z[0], sites.z[1]],
        z_depth: [tree.depth(sites.z[0]), tree.depth(sites.z[1])],
        z_psi: [sites.psi[0], sites.psi[1]],
        gap12: sites.gap12,
        r1,
        r2,
        logconv_err: err / scale,
        lambda1: eig.lambda1,
        rr_floor,
        cert_applicable: applicable,
        cert_checked: checked,
        cert_violations: violations,
    })
}

/// All records of one environment, one per grid time.
pub fn run_environment(cfg: &ExperimentConfig, run: usize) -> Vec<RunRecord> {
    let record = |t: f64, outcome: std::result::Result<RunOutcome, String>| RunRecord {
        run,
        seed: cfg.seed,
        t,
        outcome,
    };
    let setup = (|| -> Result<(OffspringDistribution, ModelParams, Env)> {
        let mu = cfg.offspring()?;
        let params = cfg.params()?;
        let radius = needed_radius(cfg, &params, *cfg.t_grid.last().unwrap())?;
        let env = build_env(cfg, &mu, run, radius)?;
        Ok((mu, params, env))
    })();
    let (mu, params, mut env) = match setup {
        Ok(x) => x,
        Err(e) => return cfg.t_grid.iter().map(|&t| record(t, Err(e.to_string()))).collect(),
    };
    let mut out = Vec::with_capacity(cfg.t_grid.len());
    match cfg.radius_policy {
        RadiusPolicy::Fixed(r) => {
            let solved = (|| -> Result<(Domain, Hamiltonian, SolutionState)> {
                let d = Domain::ball(&env.tree, 0, r)?;
                let h = Hamiltonian::assemble(&env.tree, &env.field, &d)?;
                let s = SolutionState::point_source(&h, d.require_row(0)?)?;
                Ok((d, h, s))
            })();
            let (domain, h, mut state) = match solved {
                Ok(x) => x,
                Err(e) => return cfg.t_grid.iter().map(|&t| record(t, Err(e.to_string()))).collect(),
            };
            let mut broken: Option<String> = None;
            for &t in &cfg.t_grid {
                if let Some(e) = &broken {
                    out.push(record(t, Err(e.clone())));
                    continue;
                }
                let res = evolve(&h, &mut state, t, cfg.tol).and_then(|_| {
                    let s = Solved {
                        domain: domain.clone(),
                        radius: r,
                        state: state.clone(),
                    };
                    sites_and_record(&env, &params, t, r, &s)
                });
                if let Err(e) = &res {
                    if matches!(e, Error::StepUnderflow { .. } | Error::Negativity { .. }) {
                        broken = Some(e.to_string());
                    }
                }
                out.push(record(t, res.map_err(|e| e.to_string())));
            }
        }
        RadiusPolicy::Adaptive => {
            for &t in &cfg.t_grid {
                let mut attempt = 0;
                let res = loop {
                    let res = (|| -> Result<RunOutcome> {
                        let a = adaptive_domain(&env.tree, &env.field, &params, t, cfg.growth_tol, cfg.tol)?;
                        let s = Solved {
                            domain: a.domain,
                            radius: a.radius,
                            state: a.state.expect("finite growth tolerance solves"),
                        };
                        let search = floor_radius(params.scale_big_r(t)?);
                        sites_and_record(&env, &params, t, search, &s)
                    })();
                    match res {
                        Err(Error::FrontierViolation { required_radius, .. }) if attempt < 4 => {
                            attempt += 1;
                            let cur = env.tree.radius().unwrap_or(0);
                            let want = (required_radius as u32).max(2 * cur);
                            match build_env(cfg, &mu, run, want) {
                                Ok(e) => env = e,
                                Err(e) => break Err(e),
                            }
                        }
                        other => break other,
                    }
                };
                out.push(record(t, res.map_err(|e| e.to_string())));
            }
        }
    }
    out
}

/// Every `(run, t)` record, ordered by run then time.
pub fn run_table(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let records: Vec<RunRecord> = pool.install(|| {
        (0..cfg.ensemble)
            .into_par_iter()
            .flat_map_iter(|run| run_environment(cfg, run))
            .collect()
    });
    for r in &records {
        r.check()?;
    }
    Ok(records)
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Undefined,
}

impl Verdict {
    fn of(b: bool) -> Self {
        if b {
            Self::Pass
        } else {
            Self::Fail
        }
    }
}

/// Thresholds read from the calibration file.
#[derive(Debug, Clone, Serialize)]
pub struct Thresholds {
    pub mass_lambdas: Vec<f64>,
    pub mass_lambda: f64,
    pub mass_fraction_min: f64,
    pub slope_lo: f64,
    pub slope_hi: f64,
    pub gap_ks: Vec<f64>,
    pub gap_sigma: f64,
}

impl Thresholds {
    pub fn load() -> Result<Self> {
        let m = config::parse(CALIBRATION)?;
        Ok(Self {
            mass_lambdas: config::parse_list(&config::require::<String>(&m, "mass_lambdas")?)?,
            mass_lambda: config::require(&m, "mass_lambda")?,
            mass_fraction_min: config::require(&m, "mass_fraction_min")?,
            slope_lo: config::require(&m, "slope_lo")?,
            slope_hi: config::require(&m, "slope_hi")?,
            gap_ks: config::parse_list(&config::require::<String>(&m, "gap_ks")?)?,
            gap_sigma: config::require(&m, "gap_sigma")?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapCell {
    pub k: f64,
    pub frequency: f64,
    pub bound: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerT {
    pub t: f64,
    pub ok: usize,
    pub failed: usize,
    pub median_r1: Option<f64>,
    pub median_r2: Option<f64>,
    pub median_r12: Option<f64>,
    pub median_logconv: Option<f64>,
    pub median_log_z1: Option<f64>,
    pub log_r: f64,
    /// `(lambda, fraction of log U / (t a(t)) in [1/lambda, lambda])`;
    /// `lambda = inf` is encoded as `null`.
    pub mass_fraction: Vec<(Option<f64>, Option<f64>)>,
    pub median_mass_ratio: Option<f64>,
    pub gaps: Vec<GapCell>,
    pub certificate_violations: u64,
    pub certificates_checked: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub config: BTreeMap<String, String>,
    pub calibration_sha256: String,
    pub thresholds: Thresholds,
    pub runs: usize,
    pub failed_rows: usize,
    pub first_failure: Option<String>,
    pub per_t: Vec<PerT>,
    pub site_slope: Option<f64>,
    pub acceptance: BTreeMap<String, Verdict>,
}

/// Least-squares slope; `None` with fewer than two distinct points.
pub fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Summary statistics; a pure function of the records and the config.
pub fn summarize(cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<Summary> {
    let th = Thresholds::load()?;
    let params = cfg.params()?;
    let mut per_t = Vec::new();
    for &t in &cfg.t_grid {
        let rows: Vec<&RunRecord> = records.iter().filter(|r| r.t == t).collect();
        let ok: Vec<&RunOutcome> = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let scale = t * params.scale_a(t)?;
        let ratios: Vec<f64> = ok.iter().map(|o| o.log_u / scale).collect();
        let mut mass_fraction = Vec::new();
        for &l in th.mass_lambdas.iter().chain(std::iter::once(&f64::INFINITY)) {
            let frac = if ok.is_empty() {
                None
            } else {
                Some(ratios.iter().filter(|&&x| x >= 1.0 / l && x <= l).count() as f64 / ok.len() as f64)
            };
            mass_fraction.push((l.is_finite().then_some(l), frac));
        }
        let a = params.scale_a(t)?;
        let gaps = th
            .gap_ks
            .iter()
            .filter(|_| !ok.is_empty())
            .map(|&k| {
                let n = ok.len() as f64;
                let thr = a * t.ln().powf(-k);
                let p = ok.iter().filter(|o| o.gap12 < thr).count() as f64 / n;
                let eps = k / 2.0;
                GapCell {
                    k,
                    frequency: p,
                    bound: 4.0 * cfg.alpha * t.ln().powf(-(k - eps)),
                    sigma: (p * (1.0 - p) / n).sqrt(),
                }
            })
            .collect();
        per_t.push(PerT {
            t,
            ok: ok.len(),
            failed: rows.len() - ok.len(),
            median_r1: median(ok.iter().map(|o| o.r1).collect()),
            median_r2: median(ok.iter().map(|o| o.r2).collect()),
            median_r12: median(ok.iter().map(|o| o.r12()).collect()),
            median_logconv: median(ok.iter().map(|o| o.logconv_err).collect()),
            median_log_z1: median(ok.iter().filter(|o| o.z_depth[0] > 0).map(|o| f64::from(o.z_depth[0]).ln()).collect()),
            log_r: params.scale_r(t)?.ln(),
            mass_fraction,
            median_mass_ratio: median(ratios),
            gaps,
            certificate_violations: ok.iter().map(|o| o.cert_violations).sum(),
            certificates_checked: ok.iter().map(|o| o.cert_checked).sum(),
        });
    }
    let all_defined = |f: &dyn Fn(&PerT) -> Option<f64>| per_t.iter().map(f).collect::<Option<Vec<f64>>>();
    let mut acceptance = BTreeMap::new();
    let kind = cfg.experiment;
    let wants = |k: ExperimentKind| kind == ExperimentKind::All || kind == k;
    if wants(ExperimentKind::Localisation) {
        let v = match (all_defined(&|p| p.median_r12), all_defined(&|p| p.median_r1)) {
            (Some(r12), Some(r1)) if r12.len() >= 2 => {
                Verdict::of(r12.windows(2).all(|w| w[1] > w[0]) && r1.last() > r1.first())
            }
            _ => Verdict::Undefined,
        };
        acceptance.insert("localisation_trend".to_string(), v);
    }
    if wants(ExperimentKind::Mass) {
        let last = per_t.last().unwrap();
        let frac = th
            .mass_lambdas
            .iter()
            .position(|&l| l == th.mass_lambda)
            .and_then(|i| last.mass_fraction[i].1);
        let v = frac.map_or(Verdict::Undefined, |f| Verdict::of(f >= th.mass_fraction_min));
        acceptance.insert("mass_scaling".to_string(), v);
    }
    if wants(ExperimentKind::Logconv) {
        let v = match all_defined(&|p| p.median_logconv) {
            Some(m) if m.len() >= 2 => Verdict::of(m.windows(2).all(|w| w[1] < w[0])),
            _ => Verdict::Undefined,
        };
        acceptance.insert("logconv_trend".to_string(), v);
    }
    let pts: Vec<(f64, f64)> = per_t.iter().filter_map(|p| p.median_log_z1.map(|z| (p.log_r, z))).collect();
    let site_slope = if pts.len() == per_t.len() { slope(&pts) } else { None };
    if wants(ExperimentKind::Sites) {
        let v = site_slope.map_or(Verdict::Undefined, |s| Verdict::of(s >= th.slope_lo && s <= th.slope_hi));
        acceptance.insert("site_scaling".to_string(), v);
    }
    if wants(ExperimentKind::Gaps) {
        let v = if per_t.iter().any(|p| p.gaps.is_empty()) {
            Verdict::Undefined
        } else {
            Verdict::of(
                per_t
                    .iter()
                    .flat_map(|p| &p.gaps)
                    .all(|g| g.frequency <= g.bound + th.gap_sigma * g.sigma),
            )
        };
        acceptance.insert("gap_tail".to_string(), v);
    }
    Ok(Summary {
        experiment: cfg.experiment,
        config: cfg.echo(),
        calibration_sha256: calibration_hash(),
        thresholds: th,
        runs: cfg.ensemble,
        failed_rows: records.iter().filter(|r| r.outcome.is_err()).count(),
        first_failure: records.iter().find_map(|r| r.outcome.as_ref().err().cloned()),
        per_t,
        site_slope,
        acceptance,
    })
}
