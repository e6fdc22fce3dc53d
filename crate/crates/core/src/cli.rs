//! Command-line front end. Every subcommand reads a flat `key = value` config,
//! applies `--override`, `--seed` and `--out-dir`, computes its outputs in
//! memory and only then writes them (temp file + rename).

use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{self, ConfigMap};
use crate::error::{Error, Result};
use crate::experiments::{self, ExperimentConfig};
use crate::functionals::{gamma_sets, maximisers};
use crate::gw_tree::{generate_kesten, read_tree, write_tree, OffspringDistribution, Tree, VertexId, DEFAULT_VERTEX_CAP};
use crate::pam_solver::{evolve, write_profile_csv, Domain, Hamiltonian, SolutionState};
use crate::potential::{read_environment, write_environment, PotentialField};
use crate::rng::{stream, Purpose};
use crate::rw_sim::{exit_bound, exit_probability_grid, hitting_bound, hitting_probability_grid, Proportion};
use crate::scales::ModelParams;
use crate::spectral::{principal_eigenpair, rayleigh_ritz_floor, second_eigenvalue, DEFAULT_TOL};

const ENV_KEYS: &[(&str, &str)] = &[
    ("env", "environment file (tree + field); when absent one is generated"),
    ("family", "poisson1 | geometric-half | binary | zipf (default poisson1)"),
    ("beta", "stability index; required for zipf"),
    ("alpha", "Pareto index of the potential (default 5)"),
    ("radius", "generation cap of the generated tree (default 30)"),
    ("seed", "master seed (default 1)"),
    ("out_dir", "output directory (default out)"),
];

const SOLVE_KEYS: &[(&str, &str)] = &[
    ("t", "time horizon (default 10)"),
    ("domain_radius", "solve on the ball of this radius (default: tree radius - 1)"),
    ("tol", "integrator tolerance (default 1e-8)"),
];

const SITES_KEYS: &[(&str, &str)] = &[
    ("t", "time (default 100)"),
    ("search_radius", "scan radius for the maximisers (default R(t))"),
];

const SPECTRUM_KEYS: &[(&str, &str)] = &[
    ("domain_radius", "ball radius (default: tree radius - 1)"),
    ("tol", "eigen residual tolerance (default 1e-10)"),
];

const RW_KEYS: &[(&str, &str)] = &[
    ("t_grid", "comma list of times (default 1, 2, 5)"),
    ("depths", "comma list of backbone depths and exit radii (default 5, 10, 20)"),
    ("samples", "walks per estimate (default 10000)"),
];

fn key_section(title: &str, keys: &[(&str, &str)]) -> String {
    let mut s = format!("{title}\n");
    for (k, d) in keys {
        s.push_str(&format!("  {k:<15} {d}\n"));
    }
    s
}

fn key_docs() -> String {
    [
        "Config files hold `key = value` lines; `#` starts a comment.\n".to_string(),
        key_section("Environment keys (gen-tree, sample-field, solve, sites, spectrum, rw):", ENV_KEYS),
        "  sample-field also accepts `tree`, a tree file to sample on.\n".to_string(),
        key_section("solve:", SOLVE_KEYS),
        key_section("sites:", SITES_KEYS),
        key_section("spectrum:", SPECTRUM_KEYS),
        key_section("rw:", RW_KEYS),
        key_section("experiment:", experiments::KEYS),
        "Exit status: 0 success, 1 usage error, 2 runtime failure.".to_string(),
    ]
    .join("\n")
}

#[derive(Parser, Debug)]
#[command(name = "pamlab", version, about = "Parabolic Anderson model on Kesten's tree", after_long_help = key_docs())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value`, may be repeated; wins over the config file
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate Kesten's tree; writes tree.txt
    GenTree(Common),
    /// Sample a Pareto potential; writes environment.txt
    SampleField(Common),
    /// Solve the PAM on a ball; writes profile.csv and summary.json
    Solve(Common),
    /// Localisation sites and Gamma sets; writes sites.json
    Sites(Common),
    /// Principal Dirichlet eigenvalues of a ball; writes spectrum.json
    Spectrum(Common),
    /// Random-walk hitting and exit estimates; writes rw.json
    Rw(Common),
    /// Ensemble experiment; writes records.csv and summary.json
    Experiment(Common),
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("failed: {m}");
            2
        }
    }
}

fn load(common: &Common, known: &[&[(&str, &str)]]) -> std::result::Result<(ConfigMap, PathBuf), Failure> {
    let mut map = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
            config::parse(&text)?
        }
        None => ConfigMap::new(),
    };
    for kv in &common.overrides {
        config::apply_override(&mut map, kv)?;
    }
    if let Some(s) = common.seed {
        map.insert("seed".into(), s.to_string());
    }
    if let Some(d) = &common.out_dir {
        map.insert("out_dir".into(), d.display().to_string());
    }
    let keys: Vec<&str> = known.iter().flat_map(|ks| ks.iter().map(|k| k.0)).collect();
    config::check_keys(&map, &keys)?;
    let out = PathBuf::from(config::get(&map, "out_dir", "out".to_string())?);
    Ok((map, out))
}

/// Writes every file to a temporary sibling first, then renames them all.
fn commit(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut staged = Vec::new();
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, bytes) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, dst) in staged {
        fs::rename(tmp, dst)?;
    }
    Ok(())
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn offspring(map: &ConfigMap) -> Result<OffspringDistribution> {
    let family = config::get(map, "family", "poisson1".to_string())?;
    if family == "zipf" {
        let beta = config::require::<String>(map, "beta")?;
        OffspringDistribution::from_name(&format!("zipf:{}", config::parse_number(&beta)?))
    } else {
        OffspringDistribution::from_name(&family)
    }
}

fn alpha(map: &ConfigMap) -> Result<f64> {
    map.get("alpha").map_or(Ok(5.0), |s| config::parse_number(s))
}

fn number(map: &ConfigMap, key: &str, default: f64) -> Result<f64> {
    map.get(key).map_or(Ok(default), |s| config::parse_number(s))
}

fn make_tree(map: &ConfigMap) -> Result<Tree> {
    let mu = offspring(map)?;
    let radius: u32 = config::get(map, "radius", 30)?;
    let seed: u64 = config::get(map, "seed", 1)?;
    let mut tree = generate_kesten(&mu, radius, &mut stream(seed, 0, Purpose::Tree), DEFAULT_VERTEX_CAP)?;
    tree.set_seed(Some(seed));
    Ok(tree)
}

fn sample(map: &ConfigMap, tree: &Tree) -> Result<PotentialField> {
    let seed: u64 = config::get(map, "seed", 1)?;
    PotentialField::sample(tree, alpha(map)?, &mut stream(seed, 0, Purpose::Field))
}

fn environment(map: &ConfigMap) -> Result<(Tree, PotentialField)> {
    if let Some(p) = map.get("env") {
        let mut r = BufReader::new(fs::File::open(p)?);
        let (tree, field) = read_environment(&mut r)?;
        let field = field.ok_or_else(|| Error::Config(format!("{p} has no field section")))?;
        return Ok((tree, field));
    }
    let tree = make_tree(map)?;
    let field = sample(map, &tree)?;
    Ok((tree, field))
}

fn default_domain_radius(map: &ConfigMap, tree: &Tree) -> Result<u32> {
    let fallback = tree.radius().map_or(tree.max_depth(), |r| r.saturating_sub(1)).max(1);
    config::get(map, "domain_radius", fallback)
}

fn echo(map: &ConfigMap) -> Value {
    json!(map)
}

fn proportion(p: &Proportion) -> Value {
    json!({"estimate": p.estimate, "std_error": p.std_error, "samples": p.samples})
}

fn dispatch(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::GenTree(c) => {
            let (map, out) = load(&c, &[ENV_KEYS])?;
            let tree = make_tree(&map)?;
            let mut buf = Vec::new();
            write_tree(&tree, &mut buf)?;
            commit(&out, &[("tree.txt", buf)])?;
        }
        Command::SampleField(c) => {
            let (map, out) = load(&c, &[ENV_KEYS, &[("tree", "")]])?;
            let tree = match map.get("tree") {
                Some(p) => read_tree(&mut BufReader::new(fs::File::open(p).map_err(Error::from)?))?,
                None => make_tree(&map)?,
            };
            let field = sample(&map, &tree)?;
            let mut buf = Vec::new();
            write_environment(&tree, &field, &mut buf)?;
            commit(&out, &[("environment.txt", buf)])?;
        }
        Command::Solve(c) => {
            let (map, out) = load(&c, &[ENV_KEYS, SOLVE_KEYS])?;
            let t = number(&map, "t", 10.0)?;
            let tol = number(&map, "tol", 1e-8)?;
            let (tree, field) = environment(&map)?;
            let r = default_domain_radius(&map, &tree)?;
            let d = Domain::ball(&tree, tree.root(), r)?;
            let h = Hamiltonian::assemble(&tree, &field, &d)?;
            let mut s = SolutionState::point_source(&h, d.require_row(tree.root())?)?;
            evolve(&h, &mut s, t, tol)?;
            let mut profile = Vec::new();
            write_profile_csv(&tree, &field, &d, &s.w, s.log_mass, &mut profile)?;
            let summary = json!({
                "command": "solve",
                "config": echo(&map),
                "t": t,
                "domain_radius": r,
                "domain_size": d.len(),
                "log_mass": s.log_mass,
                "steps": s.stats.steps,
                "rejected": s.stats.rejected,
            });
            commit(&out, &[("profile.csv", profile), ("summary.json", json_bytes(&summary))])?;
        }
        Command::Sites(c) => {
            let (map, out) = load(&c, &[ENV_KEYS, SITES_KEYS])?;
            let t = number(&map, "t", 100.0)?;
            let (tree, field) = environment(&map)?;
            let params = ModelParams::derive(field.alpha(), offspring(&map)?.stability_index())?;
            let search = match map.get("search_radius") {
                Some(_) => config::get(&map, "search_radius", 0u32)?,
                None => crate::functionals::default_search_radius(&params, t)?,
            };
            let sites = maximisers(&tree, &field, t, search)?;
            let gs = gamma_sets(&tree, &sites, &params, t)?;
            let site = |i: usize| json!({"vertex": sites.z[i], "depth": tree.depth(sites.z[i]), "psi": sites.psi[i]});
            let summary = json!({
                "command": "sites",
                "config": echo(&map),
                "t": t,
                "search_radius": search,
                "sites": [site(0), site(1), site(2)],
                "gap12": sites.gap12,
                "gap13": sites.gap13,
                "a_t": params.scale_a(t)?,
                "r_t": params.scale_r(t)?,
                "gamma1_size": gs.gamma1.len(),
                "gamma2_size": gs.gamma2.len(),
                "lambda_size": gs.lambda.len(),
            });
            commit(&out, &[("sites.json", json_bytes(&summary))])?;
        }
        Command::Spectrum(c) => {
            let (map, out) = load(&c, &[ENV_KEYS, SPECTRUM_KEYS])?;
            let tol = number(&map, "tol", DEFAULT_TOL)?;
            let (tree, field) = environment(&map)?;
            let r = default_domain_radius(&map, &tree)?;
            let d = Domain::ball(&tree, tree.root(), r)?;
            let h = Hamiltonian::assemble(&tree, &field, &d)?;
            let first = principal_eigenpair(&h, tol)?;
            let lambda2 = if d.len() >= 2 { Some(second_eigenvalue(&h, &first, tol)?) } else { None };
            let argmax = d.vertices()[first.phi.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |x| x.0)];
            let summary = json!({
                "command": "spectrum",
                "config": echo(&map),
                "domain_radius": r,
                "domain_size": d.len(),
                "lambda1": first.lambda1,
                "lambda2": lambda2,
                "rayleigh_ritz_floor": rayleigh_ritz_floor(&field, &tree, &d)?,
                "residual": first.residual,
                "restarts": first.restarts,
                "phi_argmax": argmax,
            });
            commit(&out, &[("spectrum.json", json_bytes(&summary))])?;
        }
        Command::Rw(c) => {
            let (map, out) = load(&c, &[ENV_KEYS, RW_KEYS])?;
            let ts = match map.get("t_grid") {
                Some(s) => config::parse_list(s)?,
                None => vec![1.0, 2.0, 5.0],
            };
            let depths: Vec<u32> = match map.get("depths") {
                Some(s) => config::parse_list(s)?.into_iter().map(|x| x as u32).collect(),
                None => vec![5, 10, 20],
            };
            let n: u64 = config::get(&map, "samples", 10_000)?;
            let seed: u64 = config::get(&map, "seed", 1)?;
            let tree = match map.get("env") {
                Some(_) => environment(&map)?.0,
                None => make_tree(&map)?,
            };
            let mut rng = stream(seed, 0, Purpose::Walk);
            let mut hitting = Vec::new();
            for &k in &depths {
                let v: VertexId = *tree
                    .backbone()
                    .get(k as usize)
                    .ok_or(Error::FrontierViolation { vertex: tree.root(), required_radius: u64::from(k) })?;
                let est = hitting_probability_grid(&tree, v, &ts, n, &mut rng)?;
                let rows: Vec<Value> = ts
                    .iter()
                    .zip(&est)
                    .map(|(&t, p)| json!({"t": t, "estimate": proportion(p), "bound": hitting_bound(k, t)}))
                    .collect();
                hitting.push(json!({"depth": k, "vertex": v, "by_t": rows}));
            }
            let exit = exit_probability_grid(&tree, &depths, &ts, n, &mut rng)?;
            let exits: Vec<Value> = depths
                .iter()
                .zip(&exit)
                .map(|(&r, row)| {
                    let rows: Vec<Value> = ts
                        .iter()
                        .zip(row)
                        .map(|(&t, p)| json!({"t": t, "estimate": proportion(p), "bound": exit_bound(r, t).1}))
                        .collect();
                    json!({"radius": r, "by_t": rows})
                })
                .collect();
            let summary = json!({"command": "rw", "config": echo(&map), "hitting": hitting, "exit": exits});
            commit(&out, &[("rw.json", json_bytes(&summary))])?;
        }
        Command::Experiment(c) => {
            let (map, out) = load(&c, &[experiments::KEYS])?;
            let cfg = ExperimentConfig::from_map(&map)?;
            let records = experiments::run_table(&cfg)?;
            for run in 0..cfg.ensemble {
                let rows: Vec<_> = records.iter().filter(|r| r.run == run).collect();
                let ok = rows.iter().filter(|r| r.outcome.is_ok()).count();
                eprintln!("run {run}: {ok}/{} times ok", rows.len());
            }
            let summary = experiments::summarize(&cfg, &records)?;
            let mut csv = Vec::new();
            experiments::write_csv(&records, &mut csv)?;
            let json = serde_json::to_value(&summary).map_err(Error::from)?;
            commit(&out, &[("records.csv", csv), ("summary.json", json_bytes(&json))])?;
        }
    }
    Ok(())
}
