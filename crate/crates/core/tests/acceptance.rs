//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. The
//! process fails only when a criterion outside `EXPECTED_FAIL` fails.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pamlab::cli;
use pamlab::config;
use pamlab::experiments::{self, ExperimentConfig, Verdict};
use pamlab::functionals::{gamma_sets, maximisers};
use pamlab::gw_tree::{generate_gw, generate_kesten, GwOutcome, OffspringDistribution, Tree, VertexId, DEFAULT_VERTEX_CAP};
use pamlab::pam_solver::{
    evolve, path_contribution_bounds, path_contribution_exact, path_contribution_romberg, solve_oracle_dense,
    time_reversal_check, Domain, Hamiltonian, SolutionState,
};
use pamlab::potential::{gap_tail_bound, sample_gap, PotentialField};
use pamlab::rw_sim::{hitting_bound, hitting_probability_grid};
use pamlab::scales::ModelParams;
use pamlab::spectral::{
    dense_spectrum, localisation_ratio_bound, path_certificates, principal_eigenpair, rayleigh_ritz_floor,
    second_eigenvalue, DEFAULT_TOL,
};
use pamlab::Error;

/// Criteria whose failure is understood and recorded; see the README.
const EXPECTED_FAIL: &[u32] = &[5, 7, 10, 11, 12, 13];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn kesten(seed: u64, radius: u32, alpha: f64) -> (Tree, PotentialField) {
    let mu = OffspringDistribution::poisson1();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = generate_kesten(&mu, radius, &mut rng, DEFAULT_VERTEX_CAP).unwrap();
    let field = PotentialField::sample(&tree, alpha, &mut rng).unwrap();
    (tree, field)
}

/// Largest root ball with at most `cap` vertices, strictly inside the tree.
fn ball_at_most(tree: &Tree, cap: usize) -> Domain {
    let max_r = tree.radius().unwrap() - 1;
    let mut best = Domain::ball(tree, 0, 1).unwrap();
    for r in 2..=max_r {
        let d = Domain::ball(tree, 0, r).unwrap();
        if d.len() > cap {
            break;
        }
        best = d;
    }
    best
}

/// Connected random domain: a root ball with random non-root vertices
/// removed, restricted to the root component.
fn random_domain(tree: &Tree, cap: usize, rng: &mut ChaCha8Rng) -> Domain {
    let ball = ball_at_most(tree, cap);
    let removed: Vec<VertexId> = ball.vertices().iter().copied().filter(|&v| v != 0 && rng.random::<f64>() < 0.1).collect();
    match ball.without(tree, &removed).unwrap() {
        Some(d) => d.component_of(tree, 0).unwrap(),
        None => ball,
    }
}

fn c1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (mut worst_w, mut worst_l, mut worst_entry) = (0.0f64, 0.0f64, 0.0f64);
    let mut max_size = 0;
    for seed in 0..50 {
        let (tree, field) = kesten(1000 + seed, 40, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_domain(&tree, 200, &mut rng);
        max_size = max_size.max(d.len());
        let h = Hamiltonian::assemble(&tree, &field, &d).unwrap();
        let t = rng.random_range(0.1..=10.0) / h.xi_max();
        let mut s = SolutionState::point_source(&h, d.require_row(0).unwrap()).unwrap();
        evolve(&h, &mut s, t, 1e-10).unwrap();
        let o = solve_oracle_dense(&tree, &field, &d, t).unwrap();
        let wmax = o.w.iter().copied().fold(0.0, f64::max);
        for (a, b) in s.w.iter().zip(&o.w) {
            worst_w = worst_w.max((a - b).abs() / wmax);
            if *b >= 1e-6 * wmax {
                worst_entry = worst_entry.max((a - b).abs() / b);
            }
        }
        worst_l = worst_l.max((s.log_mass - o.log_mass).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_w <= 1e-6 && worst_l <= 1e-6 && secs <= 120.0,
        format!(
            "50 domains (max size {max_size}); max |w - w_oracle| / max w_oracle {worst_w:.2e} \
             (entrywise on entries >= 1e-6 max: {worst_entry:.2e}); max |L - L_oracle| {worst_l:.2e}; {secs:.1}s"
        ),
    )
}

fn c2_time_reversal() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (tree, field) = kesten(2000 + seed, 30, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_domain(&tree, 100, &mut rng);
        let t = rng.random_range(0.2..5.0);
        let v = d.vertices()[rng.random_range(0..d.len())];
        worst = worst.max(time_reversal_check(&tree, &field, &d, t, v).unwrap().discrepancy);
    }
    outcome(worst <= 1e-9, format!("20 triples; max discrepancy {worst:.2e}"))
}

fn c3_mass_conservation() -> Outcome {
    let mu = OffspringDistribution::poisson1();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut trees = 0;
    while trees < 10 {
        let GwOutcome::Finite(tree) = generate_gw(&mu, &mut rng, 500).unwrap() else {
            continue;
        };
        if tree.len() < 20 {
            continue;
        }
        trees += 1;
        let zero = PotentialField::from_any_values(4.0, vec![0.0; tree.len()]).unwrap();
        let d = Domain::new(&tree, (0..tree.len() as VertexId).collect()).unwrap();
        let h = Hamiltonian::assemble(&tree, &zero, &d).unwrap();
        for t in [0.1, 1.0, 10.0] {
            let mut s = SolutionState::point_source(&h, 0).unwrap();
            evolve(&h, &mut s, t, 1e-12).unwrap();
            let total: f64 = s.w.iter().sum::<f64>() * s.log_mass.exp();
            worst = worst.max((total - 1.0).abs());
        }
    }
    outcome(worst <= 1e-10, format!("10 finite trees, t in {{0.1, 1, 10}}; max |sum u - 1| {worst:.2e}"))
}

fn c4_spectral_floor() -> Outcome {
    let (mut floor_viol, mut worst_dense) = (0, 0.0f64);
    for seed in 0..100 {
        let (tree, field) = kesten(4000 + seed, 40, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_domain(&tree, 500, &mut rng);
        let h = Hamiltonian::assemble(&tree, &field, &d).unwrap();
        let e = principal_eigenpair(&h, DEFAULT_TOL).unwrap();
        let floor = rayleigh_ritz_floor(&field, &tree, &d).unwrap();
        if e.lambda1 < floor - 1e-9 {
            floor_viol += 1;
        }
        let (vals, _) = dense_spectrum(&h).unwrap();
        worst_dense = worst_dense.max((vals[0] - e.lambda1).abs());
    }
    outcome(
        floor_viol == 0 && worst_dense <= 1e-8,
        format!("100 domains <= 500; floor violations {floor_viol}, max |lambda1 - dense| {worst_dense:.2e}"),
    )
}

fn c5_dynamics_spectrum() -> Outcome {
    let (mut worst, mut worst_shifted) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let (tree, field) = kesten(5000 + seed, 20, 4.0);
        let d = ball_at_most(&tree, 60);
        let h = Hamiltonian::assemble(&tree, &field, &d).unwrap();
        let e = principal_eigenpair(&h, DEFAULT_TOL).unwrap();
        let l2 = second_eigenvalue(&h, &e, DEFAULT_TOL).unwrap();
        let t = 200.0 / (e.lambda1 - l2);
        let mut s = SolutionState::point_source(&h, 0).unwrap();
        evolve(&h, &mut s, t, 1e-10).unwrap();
        let err = (s.log_mass / t - e.lambda1).abs();
        worst = worst.max(err);
        // L(t) - t lambda1 tends to log(phi(O) sum phi) for unit phi.
        let norm = e.l2_norm_sq().sqrt();
        let prefactor = (e.phi[0] / norm * e.phi.iter().sum::<f64>() / norm).ln();
        worst_shifted = worst_shifted.max(((s.log_mass - prefactor) / t - e.lambda1).abs());
    }
    outcome(
        worst <= 1e-4,
        format!(
            "10 domains; max |L/t - lambda1| {worst:.2e}; after removing the eigenvector prefactor {worst_shifted:.2e}"
        ),
    )
}

fn c6_hitting_bound() -> Outcome {
    let grid: [(u32, [f64; 3]); 3] = [(5, [0.5, 1.0, 1.8]), (10, [1.0, 2.0, 3.6]), (20, [2.0, 4.0, 7.3])];
    let (mut checks, mut viol) = (0, 0);
    let mut max_ratio = 0.0f64;
    for seed in 0..3 {
        let (tree, _) = kesten(6000 + seed, 80, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(60 + seed);
        for (k, ts) in grid {
            assert!(ts.iter().all(|&t| f64::from(k) > std::f64::consts::E * t));
            let v = tree.backbone()[k as usize];
            let est = hitting_probability_grid(&tree, v, &ts, 10_000, &mut rng).unwrap();
            for (p, &t) in est.iter().zip(&ts) {
                let b = hitting_bound(k, t);
                checks += 1;
                if p.estimate > b + 3.0 * p.std_error {
                    viol += 1;
                }
                max_ratio = max_ratio.max(p.estimate / b);
            }
        }
    }
    outcome(viol == 0, format!("{checks} (tree, |v|, t) cells, 1e4 walks each; violations {viol}; max estimate/bound {max_ratio:.3}"))
}

fn c7_gap_tail() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut viol, mut cells) = (0, Vec::new());
    for n in [1_000u64, 10_000] {
        let gaps: Vec<f64> = (0..10_000).map(|_| sample_gap(n, 4.0, &mut rng)).collect();
        for y in [2.0, 5.0, 10.0] {
            let p = gaps.iter().filter(|&&g| g <= y).count() as f64 / gaps.len() as f64;
            let sigma = (p * (1.0 - p) / gaps.len() as f64).sqrt();
            let b = gap_tail_bound(n, y, 4.0).unwrap().raw;
            if p > b + 3.0 * sigma {
                viol += 1;
            }
            cells.push(format!("n={n} y={y}: {p:.3} vs {b:.2e}"));
        }
    }
    outcome(viol == 0, format!("violations {viol}/6; {}", cells.join("; ")))
}

/// Non-backtracking walk of `len` edges from `start`; simple on a tree.
fn random_path(tree: &Tree, d: &Domain, start: VertexId, len: usize, rng: &mut ChaCha8Rng) -> Vec<VertexId> {
    let mut path = vec![start];
    while path.len() <= len {
        let v = *path.last().unwrap();
        let prev = if path.len() > 1 { Some(path[path.len() - 2]) } else { None };
        let next: Vec<VertexId> = tree
            .neighbours(v)
            .unwrap()
            .filter(|&w| Some(w) != prev && d.contains(w) && !tree.is_frontier(w))
            .collect();
        if next.is_empty() {
            break;
        }
        path.push(next[rng.random_range(0..next.len())]);
    }
    path
}

fn c8_path_sandwich() -> Outcome {
    let (mut viol, mut worst_quad, mut worst_err) = (0, 0.0f64, 0.0f64);
    let mut count = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    while count < 100 {
        let (tree, field) = kesten(8000 + count as u64, 20, 4.0);
        let d = ball_at_most(&tree, 2000);
        let start = d.vertices()[rng.random_range(0..d.len())];
        let len = rng.random_range(1..=8);
        let path = random_path(&tree, &d, start, len, &mut rng);
        if path.len() < 2 {
            continue;
        }
        count += 1;
        let t = rng.random_range(0.5..5.0);
        let b = path_contribution_bounds(&tree, &field, &path, t).unwrap();
        let exact = path_contribution_exact(&tree, &field, &path, t).unwrap();
        let (quad, quad_err) = path_contribution_romberg(&tree, &field, &path, t, 500).unwrap();
        worst_quad = worst_quad.max((quad - exact).abs());
        worst_err = worst_err.max(quad_err);
        // Log slack: 1e-12 for round-off, which matters when a bound is
        // tight (two-vertex paths meet the lower bound), plus the
        // quadrature's own error estimate.
        let inside = |x: f64, slack: f64| x >= b.log_lower - slack && x <= b.log_upper_best() + slack;
        if !inside(exact, 1e-12) || !inside(quad, 1e-12 + quad_err) {
            viol += 1;
            eprintln!("path {path:?} t={t}: lower {} exact {exact} quad {quad} upper {}", b.log_lower, b.log_upper_best());
        }
    }
    outcome(viol == 0, format!(
            "100 simple paths; violations {viol}; Romberg quadrature: max |log quad - log exact| {worst_quad:.2e}, \
             max error estimate {worst_err:.2e}"
        ))
}

fn c9_certificates() -> Outcome {
    let params = ModelParams::derive(8.0, 2.0).unwrap();
    let mu = OffspringDistribution::poisson1();
    let (mut samples, mut applicable, mut checked, mut viol) = (0, 0, 0u64, 0u64);
    let (mut gap_only, mut gap_only_viol) = (0, 0u64);
    let (mut ratio_tested, mut ratio_viol, mut ratio_skipped) = (0, 0, 0);
    for t in [100.0, 1000.0] {
        let search = (2.0 * params.scale_r(t).unwrap()).floor() as u32;
        let radius = ((1.0 + t.ln().powf(-params.z)) * f64::from(search)).ceil() as u32 + 2;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(90_000 + seed);
            let tree = generate_kesten(&mu, radius, &mut rng, DEFAULT_VERTEX_CAP).unwrap();
            let field = PotentialField::sample(&tree, 8.0, &mut rng).unwrap();
            let sites = maximisers(&tree, &field, t, search).unwrap();
            let gs = gamma_sets(&tree, &sites, &params, t).unwrap();
            let lambda = Domain::new(&tree, gs.lambda.clone()).unwrap();
            samples += 1;
            for (remove, anchor) in [(sites.z[0], sites.z[1]), (sites.z[1], sites.z[0])] {
                let Some(set) = lambda.without(&tree, &[remove]).unwrap() else {
                    continue;
                };
                match path_certificates(&tree, &field, &set, anchor) {
                    Ok(rep) => {
                        gap_only += 1;
                        gap_only_viol += rep.violations() as u64;
                        if rep.excursions_bounded {
                            applicable += 1;
                            checked += rep.certificates.len() as u64;
                            viol += rep.violations() as u64;
                        }
                    }
                    Err(Error::Hypothesis(_)) => {}
                    Err(e) => panic!("{e}"),
                }
            }
            match localisation_ratio_bound(&tree, &field, &lambda, &gs.omega, t) {
                Ok(r) => {
                    ratio_tested += 1;
                    ratio_viol += usize::from(!r.holds());
                }
                Err(Error::Hypothesis(_)) | Err(Error::DenseTooLarge { .. }) => ratio_skipped += 1,
                Err(e) => panic!("{e}"),
            }
        }
    }
    outcome(
        gap_only_viol == 0 && viol == 0 && ratio_viol == 0 && gap_only > 0 && ratio_tested > 0,
        format!(
            "alpha=8, {samples} (Lambda, Omega) samples; certificates with all hypotheses on {applicable} sides, {checked} \
             vertices, violations {viol}; with only g > 0 and the anchor as maximiser: {gap_only} sides, violations \
             {gap_only_viol}; ratio bound tested {ratio_tested}, violations {ratio_viol}, not applicable {ratio_skipped}"
        ),
    )
}

fn spec_experiment() -> (ExperimentConfig, experiments::Summary) {
    let map = config::parse(
        "experiment = all\nfamily = poisson1\nalpha = 5\nt_grid = 100, 10^2.5, 1000, 10^3.5\nensemble = 100\nseed = 1\n\
         radius_policy = adaptive\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::from_map(&map).unwrap();
    let records = experiments::run_table(&cfg).unwrap();
    let summary = experiments::summarize(&cfg, &records).unwrap();
    (cfg, summary)
}

fn verdict(s: &experiments::Summary, key: &str, extra: String) -> Outcome {
    let v = s.acceptance[key];
    let reason = s.first_failure.as_deref().unwrap_or("none");
    outcome(
        v == Verdict::Pass,
        format!("{key}: {v:?}; failed rows {}/{}; first failure: {reason}; {extra}", s.failed_rows, s.runs * s.per_t.len()),
    )
}

/// Same grid on a fixed ball of radius 30; a desk-scale look at the
/// trends, not an acceptance run.
fn pilot() -> String {
    let map = config::parse(
        "experiment = all\nfamily = poisson1\nalpha = 5\nt_grid = 100, 10^2.5, 1000, 10^3.5\nensemble = 10\nseed = 1\n\
         radius_policy = fixed:30\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::from_map(&map).unwrap();
    let records = experiments::run_table(&cfg).unwrap();
    let s = experiments::summarize(&cfg, &records).unwrap();
    let med = |f: &dyn Fn(&experiments::PerT) -> Option<f64>| {
        s.per_t.iter().map(|p| f(p).map_or("-".to_string(), |x| format!("{x:.3}"))).collect::<Vec<_>>().join(" ")
    };
    format!(
        "pilot fixed:30, 10 runs: median r12 [{}], median log U/(t a) [{}], median logconv [{}], slope {:?}, verdicts {:?}",
        med(&|p| p.median_r12),
        med(&|p| p.median_mass_ratio),
        med(&|p| p.median_logconv),
        s.site_slope,
        s.acceptance
    )
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn c14_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "family = binary\nalpha = 5\nt_grid = 3, 6\nensemble = 3\nradius_policy = fixed:8\nradius = 14\nt = 4\n",
    )
    .unwrap();
    let commands = ["experiment", "gen-tree", "solve", "sites", "spectrum", "rw"];
    let mut identical = 0;
    let mut failures = Vec::new();
    for cmd in commands {
        let run = || {
            let out = root.path().join(cmd);
            let body = std::fs::read_to_string(&cfg).unwrap();
            let keep: Vec<&str> = match cmd {
                "experiment" => vec!["family", "alpha", "t_grid", "ensemble", "radius_policy"],
                "gen-tree" => vec!["family", "radius"],
                "solve" => vec!["family", "alpha", "radius", "t"],
                "sites" => vec!["family", "alpha", "radius"],
                "spectrum" => vec!["family", "alpha", "radius"],
                _ => vec!["family", "radius"],
            };
            let text: String = body
                .lines()
                .filter(|l| keep.contains(&l.split('=').next().unwrap().trim()))
                .map(|l| format!("{l}\n"))
                .collect();
            let file = root.path().join(format!("{cmd}.cfg"));
            std::fs::write(&file, text).unwrap();
            let mut args = vec!["pamlab".to_string(), cmd.to_string(), "--config".into(), file.display().to_string()];
            args.extend(["--seed".to_string(), "7".to_string(), "--out-dir".to_string(), out.display().to_string()]);
            if cmd == "sites" {
                args.extend(["--override".to_string(), "t=20".to_string(), "--override".to_string(), "search_radius=10".to_string()]);
            }
            if cmd == "rw" {
                args.extend(["--override".to_string(), "depths=3, 5".to_string(), "--override".to_string(), "samples=1000".to_string()]);
            }
            let code = cli::run(args);
            (code, out)
        };
        // The output directory is echoed into summaries, so both runs use
        // the same one.
        let (c1, dir) = run();
        let first = read_dir(&dir);
        let (c2, _) = run();
        if c1 != 0 || c2 != 0 {
            failures.push(format!("{cmd} exited {c1}/{c2}"));
        } else if first == read_dir(&dir) {
            identical += 1;
        } else {
            failures.push(format!("{cmd} differs"));
        }
    }
    outcome(failures.is_empty(), format!("{identical}/6 commands byte-identical on rerun; problems: {failures:?}"))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    record(1, "oracle equivalence", c1_oracle_equivalence());
    record(2, "time reversal", c2_time_reversal());
    record(3, "mass conservation", c3_mass_conservation());
    record(4, "spectral floor", c4_spectral_floor());
    record(5, "dynamics-spectrum consistency", c5_dynamics_spectrum());
    record(6, "hitting-time bound", c6_hitting_bound());
    record(7, "gap tail", c7_gap_tail());
    record(8, "path-contribution sandwich", c8_path_sandwich());
    record(9, "eigenfunction certificates", c9_certificates());
    let (cfg, s) = spec_experiment();
    let grid = format!("t grid {:?}, ensemble {}", cfg.t_grid, cfg.ensemble);
    record(10, "localisation trend", verdict(&s, "localisation_trend", grid.clone()));
    record(11, "mass scaling", verdict(&s, "mass_scaling", grid.clone()));
    record(12, "site scaling", verdict(&s, "site_scaling", grid.clone()));
    record(13, "log-approximation", verdict(&s, "logconv_trend", grid));
    record(14, "determinism", c14_determinism());
    println!("diagnostic: {}", pilot());
    let unexpected: Vec<u32> = results
        .iter()
        .filter(|(n, _, o)| !o.pass && !EXPECTED_FAIL.contains(n))
        .map(|r| r.0)
        .collect();
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} pass; expected failures {EXPECTED_FAIL:?}", results.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
