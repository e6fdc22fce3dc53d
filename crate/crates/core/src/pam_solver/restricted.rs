//! Truncation radius selection and solutions restricted to paths that hit a
//! set.

use super::evolve::{evolve, SolutionState};
use super::oracle::{solve_oracle_dense, DenseSolution, DENSE_CAP};
use super::{Domain, Hamiltonian};
use crate::error::{Error, Result};
use crate::gw_tree::{Tree, VertexId};
use crate::potential::PotentialField;
use crate::scales::ModelParams;

#[derive(Debug, Clone)]
pub struct AdaptiveDomain {
    pub domain: Domain,
    pub radius: u32,
    /// Solution on the returned ball; `None` when no solve was needed.
    pub state: Option<SolutionState>,
    /// Every `(radius, L)` solved during the search.
    pub tested: Vec<(u32, f64)>,
}

impl AdaptiveDomain {
    pub fn log_mass(&self) -> Option<f64> {
        self.state.as_ref().map(|s| s.log_mass)
    }
}

fn solve_ball(tree: &Tree, field: &PotentialField, r: u32, t: f64, tol: f64) -> Result<(Domain, SolutionState)> {
    let d = Domain::ball(tree, tree.root(), r)?;
    let h = Hamiltonian::assemble(tree, field, &d)?;
    let mut s = SolutionState::point_source(&h, d.require_row(tree.root())?)?;
    evolve(&h, &mut s, t, tol)?;
    Ok((d, s))
}

/// Smallest `r` in `R(t), 2R(t), 4R(t), ...` with
/// `|L_{B_2r} - L_{B_r}| < growth_tol * max(1, |L_{B_r}|)`; returns `B_r`.
pub fn adaptive_domain(
    tree: &Tree,
    field: &PotentialField,
    params: &ModelParams,
    t: f64,
    growth_tol: f64,
    tol: f64,
) -> Result<AdaptiveDomain> {
    if !(growth_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("growth_tol must be positive, got {growth_tol}")));
    }
    let mut r = (params.scale_big_r(t)?.floor() as u32).max(1);
    if growth_tol.is_infinite() {
        return Ok(AdaptiveDomain {
            domain: Domain::ball(tree, tree.root(), r)?,
            radius: r,
            state: None,
            tested: Vec::new(),
        });
    }
    let mut tested = Vec::new();
    let (mut d, mut s) = solve_ball(tree, field, r, t, tol)?;
    tested.push((r, s.log_mass));
    loop {
        let r2 = r.checked_mul(2).ok_or_else(|| Error::InvalidParameter("radius overflow".into()))?;
        let (d2, s2) = solve_ball(tree, field, r2, t, tol)?;
        tested.push((r2, s2.log_mass));
        if (s2.log_mass - s.log_mass).abs() < growth_tol * s.log_mass.abs().max(1.0) {
            return Ok(AdaptiveDomain {
                domain: d,
                radius: r,
                state: Some(s),
                tested,
            });
        }
        r = r2;
        d = d2;
        s = s2;
    }
}

/// `u_Lambda` and `u_{Omega,Lambda}` on the rows of `lambda`, both as
/// `exp(log_mass) * w` with the shared scale of `u_Lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedSolution {
    pub log_mass: f64,
    pub w_lambda: Vec<f64>,
    pub w_omega: Vec<f64>,
}

impl RestrictedSolution {
    pub fn u_lambda(&self, i: usize) -> f64 {
        self.log_mass.exp() * self.w_lambda[i]
    }

    pub fn u_omega(&self, i: usize) -> f64 {
        self.log_mass.exp() * self.w_omega[i]
    }
}

/// Cancellation slack for `u_Lambda - u_{Lambda \ Omega}`, relative to the
/// larger term; anything more negative is reported.
const DIFF_SLACK: f64 = 1e-9;
const CLIP: f64 = 1e-12;

/// Paths inside `lambda` that visit `omega` before `t`, computed as
/// `u_Lambda - u_{Lambda \ Omega}`. On `omega` the two profiles coincide.
pub fn restricted_solution(
    tree: &Tree,
    field: &PotentialField,
    lambda: &Domain,
    omega: &[VertexId],
    t: f64,
) -> Result<RestrictedSolution> {
    if lambda.len() > DENSE_CAP {
        return Err(Error::DenseTooLarge {
            size: lambda.len(),
            cap: DENSE_CAP,
        });
    }
    for &v in omega {
        lambda.require_row(v)?;
    }
    let full: DenseSolution = solve_oracle_dense(tree, field, lambda, t)?;
    let n = lambda.len();
    let root = tree.root();
    let w_omega = if omega.is_empty() {
        vec![0.0; n]
    } else if omega.contains(&root) {
        full.w.clone()
    } else {
        let rest = lambda.without(tree, omega)?.expect("root is outside omega");
        let comp = rest.component_of(tree, root)?;
        let avoid = solve_oracle_dense(tree, field, &comp, t)?;
        let scale = (avoid.log_mass - full.log_mass).exp();
        let wmax = full.w.iter().copied().fold(0.0f64, f64::max);
        let mut out = full.w.clone();
        for (i, &v) in lambda.vertices().iter().enumerate() {
            if let Some(j) = comp.row(v) {
                let sub = scale * avoid.w[j];
                let diff = full.w[i] - sub;
                out[i] = if diff >= 0.0 {
                    diff
                } else if diff >= -(DIFF_SLACK * full.w[i].max(sub) + CLIP * wmax) {
                    0.0
                } else {
                    return Err(Error::Negativity { row: i, value: diff, t });
                };
            }
        }
        out
    };
    Ok(RestrictedSolution {
        log_mass: full.log_mass,
        w_lambda: full.w,
        w_omega,
    })
}
