//! Principal eigenpairs of the Anderson Hamiltonian on finite vertex sets
//! and the eigenfunction bounds used to transfer localisation to `u`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gw_tree::{Tree, VertexId};
use crate::pam_solver::{restricted_solution, Domain, Hamiltonian, DENSE_CAP};
use crate::potential::PotentialField;

pub const MIN_TOL: f64 = 1e-12;
pub const MAX_TOL: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_RESTARTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    UnitL2,
    /// `phi(anchor) = 1`.
    Anchor(VertexId),
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub domain: Domain,
    pub lambda1: f64,
    /// Indexed by domain row; nonnegative.
    pub phi: Vec<f64>,
    pub normalization: Normalization,
    /// `||H phi - lambda1 phi||_inf / ||phi||_inf`.
    pub residual: f64,
    pub restarts: usize,
}

impl Eigenpair {
    pub fn phi_at(&self, v: VertexId) -> Option<f64> {
        self.domain.row(v).map(|i| self.phi[i])
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.phi.iter().map(|x| x * x).sum()
    }

    /// Rescales so that `phi(y) = 1`.
    pub fn anchor_at(mut self, y: VertexId) -> Result<Self> {
        let i = self.domain.require_row(y)?;
        let s = self.phi[i];
        if !(s > 0.0) {
            return Err(Error::Hypothesis(format!("eigenvector vanishes at anchor {y}")));
        }
        for p in &mut self.phi {
            *p /= s;
        }
        self.phi[i] = 1.0;
        self.normalization = Normalization::Anchor(y);
        Ok(self)
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(MIN_TOL..=MAX_TOL).contains(&tol) {
        return Err(Error::InvalidParameter(format!("tol must lie in [{MIN_TOL}, {MAX_TOL}], got {tol}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = dot(x, x).sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

fn orthogonalize(w: &mut [f64], against: &[Vec<f64>]) {
    for v in against {
        let c = dot(w, v);
        w.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
    }
}

/// Krylov dimension per restart cycle, bounded so the basis stays near
/// 1.6e8 doubles.
fn krylov_dim(n: usize) -> usize {
    (20_000_000 / n.max(1)).clamp(20, 80).min(n)
}

struct Ritz {
    lambda: f64,
    x: Vec<f64>,
    residual: f64,
    restarts: usize,
}

/// Largest eigenpair of `H` restricted to the orthogonal complement of
/// `deflate` (orthonormal), by explicitly restarted Lanczos with full
/// reorthogonalization on `H + cI`, `c = xi_max + D + 1`.
fn lanczos_top(h: &Hamiltonian, start: Vec<f64>, deflate: &[Vec<f64>], tol: f64) -> Result<Ritz> {
    let n = h.dim();
    let free = n - deflate.len();
    if free == 0 {
        return Err(Error::InvalidParameter("nothing left after deflation".into()));
    }
    let shift = h.xi_max() + f64::from(h.deg_max()) + 1.0;
    let m = krylov_dim(n).min(free).max(1);
    let mut x = start;
    orthogonalize(&mut x, deflate);
    orthogonalize(&mut x, deflate);
    if normalize(&mut x) == 0.0 {
        return Err(Error::InvalidParameter("start vector lies in the deflated space".into()));
    }
    let mut w = vec![0.0; n];
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    for restart in 0..MAX_RESTARTS {
        let mut basis = vec![x.clone()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        for j in 0..m {
            h.apply(&basis[j], &mut w);
            w.iter_mut().zip(&basis[j]).for_each(|(a, b)| *a += shift * b);
            alpha.push(dot(&w, &basis[j]));
            for _ in 0..2 {
                orthogonalize(&mut w, deflate);
                orthogonalize(&mut w, &basis);
            }
            if j + 1 == m {
                break;
            }
            let b = dot(&w, &w).sqrt();
            if b <= 1e-13 * shift {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|v| v / b).collect());
        }
        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let top = eig.eigenvalues.imax();
        let y = eig.eigenvectors.column(top);
        x.iter_mut().for_each(|v| *v = 0.0);
        for (i, b) in basis.iter().enumerate() {
            let c = y[i];
            x.iter_mut().zip(b).for_each(|(a, v)| *a += c * v);
        }
        orthogonalize(&mut x, deflate);
        normalize(&mut x);
        h.apply(&x, &mut w);
        let lambda = dot(&x, &w);
        let xmax = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        residual = w.iter().zip(&x).fold(0.0f64, |a, (hv, v)| a.max((hv - lambda * v).abs())) / xmax;
        history.push(lambda);
        if residual <= tol {
            return Ok(Ritz {
                lambda,
                x,
                residual,
                restarts: restart,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_RESTARTS,
        residual,
        history: history.split_off(history.len().saturating_sub(10)),
    })
}

/// Largest eigenvalue of `H` and its nonnegative unit eigenvector.
pub fn principal_eigenpair(h: &Hamiltonian, tol: f64) -> Result<Eigenpair> {
    check_tol(tol)?;
    let n = h.dim();
    // Positive start vector, weighted towards the largest diagonal entry.
    let top = (0..n).fold(0, |b, i| if h.diag()[i] > h.diag()[b] { i } else { b });
    let mut start = vec![1.0; n];
    start[top] += n as f64;
    let r = lanczos_top(h, start, &[], tol)?;
    let mut phi = r.x;
    if phi.iter().sum::<f64>() < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
    phi.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(Eigenpair {
        domain: h.domain().clone(),
        lambda1: r.lambda,
        phi,
        normalization: Normalization::UnitL2,
        residual: r.residual,
        restarts: r.restarts,
    })
}

/// Second eigenvalue by deflating the converged principal eigenvector.
pub fn second_eigenvalue(h: &Hamiltonian, first: &Eigenpair, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    if h.dim() < 2 {
        return Err(Error::SetTooSmall { size: h.dim(), needed: 2 });
    }
    let mut u = first.phi.clone();
    normalize(&mut u);
    // Deterministic start with no special structure.
    let start: Vec<f64> = (0..h.dim()).map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
    Ok(lanczos_top(h, start, &[u], tol)?.lambda)
}

/// Full spectrum (descending) and eigenvectors by a dense symmetric solver;
/// limited to the dense size cap.
pub fn dense_spectrum(h: &Hamiltonian) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if h.dim() > DENSE_CAP {
        return Err(Error::DenseTooLarge {
            size: h.dim(),
            cap: DENSE_CAP,
        });
    }
    let eig = SymmetricEigen::new(h.to_dense());
    let mut order: Vec<usize> = (0..h.dim()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(h.dim(), h.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// `max_z xi(z) - deg(z)` over the domain, a lower bound for `lambda1`.
pub fn rayleigh_ritz_floor(field: &PotentialField, tree: &Tree, domain: &Domain) -> Result<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in domain.vertices() {
        m = m.max(field.adjusted(tree, v)?);
    }
    Ok(m)
}

/// `(argmax, gap)` of `xi - deg` on a set; the gap is `+inf` for one vertex.
pub fn adjusted_gap(tree: &Tree, field: &PotentialField, set: &[VertexId]) -> Result<(VertexId, f64)> {
    let mut best: Option<(VertexId, f64)> = None;
    let mut second = f64::NEG_INFINITY;
    for &v in set {
        let x = field.adjusted(tree, v)?;
        match best {
            Some((_, b)) if x <= b => second = second.max(x),
            Some((_, b)) => {
                second = b;
                best = Some((v, x));
            }
            None => best = Some((v, x)),
        }
    }
    let (z, b) = best.ok_or_else(|| Error::InvalidDomain("empty vertex set".into()))?;
    Ok((z, b - second))
}

/// `min_Omega (xi - deg) - max_{Lambda \ Omega} (xi - deg)`.
pub fn omega_gap(tree: &Tree, field: &PotentialField, lambda: &Domain, omega: &[VertexId]) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in lambda.vertices() {
        let x = field.adjusted(tree, v)?;
        if omega.contains(&v) {
            lo = lo.min(x);
        } else {
            hi = hi.max(x);
        }
    }
    for &v in omega {
        lambda.require_row(v)?;
    }
    Ok(lo - hi)
}

/// Eigenvector with `phi(anchor) = 1` for a known eigenvalue of a domain
/// that is a tree: `phi(v) = phi(parent) / d_v` towards the anchor, with
/// pivots `d_v = lambda - H_vv - sum_children 1 / d_c`. All pivots are
/// positive when `lambda` lies above the spectrum of the domain without the
/// anchor, and then every entry keeps relative accuracy, including entries
/// far below the maximum where a Krylov vector only has absolute accuracy.
/// `None` if a pivot is not positive.
fn eliminate_towards(h: &Hamiltonian, anchor: usize, lambda: f64) -> Option<Vec<f64>> {
    let n = h.dim();
    let mut parent = vec![usize::MAX; n];
    parent[anchor] = anchor;
    let mut order = vec![anchor];
    let mut k = 0;
    while k < order.len() {
        let v = order[k];
        k += 1;
        for &w in h.neighbours(v) {
            let w = w as usize;
            if parent[w] == usize::MAX {
                parent[w] = v;
                order.push(w);
            }
        }
    }
    if order.len() != n {
        return None;
    }
    let mut d = vec![0.0; n];
    let mut below = vec![0.0; n];
    for &v in order.iter().skip(1).rev() {
        let dv = lambda - h.diag()[v] - below[v];
        if !(dv > 0.0) {
            return None;
        }
        d[v] = dv;
        below[parent[v]] += 1.0 / dv;
    }
    let mut phi = vec![0.0; n];
    phi[anchor] = 1.0;
    for &v in order.iter().skip(1) {
        phi[v] = phi[parent[v]] / d[v];
    }
    Some(phi)
}

/// Principal eigenpair on the connected component of `anchor` inside
/// `domain`, normalised by `phi(anchor) = 1` and extended by zero to the
/// rest of `domain`. The eigenvalue comes from Lanczos; the eigenvector is
/// recomputed by elimination towards the anchor when that is stable.
pub fn anchored_eigenpair(tree: &Tree, field: &PotentialField, domain: &Domain, anchor: VertexId, tol: f64) -> Result<Eigenpair> {
    let comp = domain.component_of(tree, anchor)?;
    let h = Hamiltonian::assemble(tree, field, &comp)?;
    let mut e = principal_eigenpair(&h, tol)?.anchor_at(anchor)?;
    if let Some(phi) = eliminate_towards(&h, comp.require_row(anchor)?, e.lambda1) {
        let mut hx = vec![0.0; phi.len()];
        h.apply(&phi, &mut hx);
        let pmax = phi.iter().fold(0.0f64, |a, &v| a.max(v));
        e.residual = hx.iter().zip(&phi).fold(0.0f64, |a, (y, x)| a.max((y - e.lambda1 * x).abs())) / pmax;
        e.phi = phi;
    }
    let mut phi = vec![0.0; domain.len()];
    for (i, &v) in comp.vertices().iter().enumerate() {
        phi[domain.row(v).unwrap()] = e.phi[i];
    }
    Ok(Eigenpair {
        domain: domain.clone(),
        phi,
        ..e
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub x: VertexId,
    pub phi_x: f64,
    /// `prod_{v on the path from x to the anchor, v != anchor} deg v / g`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub anchor: VertexId,
    pub g_tilde: f64,
    pub lambda1: f64,
    /// `xi(v) < xi(anchor) - deg(anchor)` for every other `v`; the bound is
    /// only derived under this condition, which makes every excursion off
    /// the direct path cost less than one.
    pub excursions_bounded: bool,
    pub certificates: Vec<Certificate>,
}

impl CertificateReport {
    pub fn violations(&self) -> usize {
        self.certificates.iter().filter(|c| !c.holds).count()
    }
}

/// Slack on `phi(x) <= bound` for the eigen-solver tolerance.
const CERT_SLACK: f64 = 1e-8;

fn certificate_hypothesis(tree: &Tree, field: &PotentialField, domain: &Domain, anchor: VertexId) -> Result<f64> {
    domain.require_row(anchor)?;
    let (z, g) = adjusted_gap(tree, field, domain.vertices())?;
    if z != anchor {
        return Err(Error::Hypothesis(format!("anchor {anchor} is not the xi - deg maximiser {z}")));
    }
    if !(g > 0.0) {
        return Err(Error::Hypothesis(format!("gap {g} is not positive")));
    }
    Ok(g)
}

fn certificate(tree: &Tree, e: &Eigenpair, anchor: VertexId, g: f64, x: VertexId) -> Result<Certificate> {
    let phi_x = e.phi_at(x).ok_or(Error::NotInDomain(x))?;
    let mut bound = 1.0;
    for v in tree.direct_path(x, anchor)? {
        if v != anchor {
            bound *= f64::from(tree.degree(v)?) / g;
        }
    }
    Ok(Certificate {
        x,
        phi_x,
        bound,
        holds: phi_x <= bound * (1.0 + CERT_SLACK),
    })
}

/// Checks `phi(x) <= prod deg v / g~` for one vertex; `Hypothesis` when the
/// anchor is not the strict `xi - deg` maximiser of the domain.
pub fn eigenfunction_path_certificate(
    tree: &Tree,
    field: &PotentialField,
    domain: &Domain,
    anchor: VertexId,
    x: VertexId,
) -> Result<Certificate> {
    let g = certificate_hypothesis(tree, field, domain, anchor)?;
    let e = anchored_eigenpair(tree, field, domain, anchor, DEFAULT_TOL)?;
    certificate(tree, &e, anchor, g, x)
}

/// The certificate at every vertex of `domain` other than the anchor, from
/// one eigen-solve.
pub fn path_certificates(tree: &Tree, field: &PotentialField, domain: &Domain, anchor: VertexId) -> Result<CertificateReport> {
    let g = certificate_hypothesis(tree, field, domain, anchor)?;
    let e = anchored_eigenpair(tree, field, domain, anchor, DEFAULT_TOL)?;
    let certificates = domain
        .vertices()
        .iter()
        .filter(|&&x| x != anchor)
        .map(|&x| certificate(tree, &e, anchor, g, x))
        .collect::<Result<_>>()?;
    let level = field.adjusted(tree, anchor)?;
    let mut excursions_bounded = true;
    for &v in domain.vertices() {
        if v != anchor && field.xi(tree, v)? >= level {
            excursions_bounded = false;
            break;
        }
    }
    Ok(CertificateReport {
        anchor,
        g_tilde: g,
        lambda1: e.lambda1,
        excursions_bounded,
        certificates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBound {
    /// Share of `u_{Omega,Lambda}` outside `Omega`.
    pub lhs: f64,
    /// `sum_y ||phi_y||^2 sum_{Lambda \ Omega} phi_y`.
    pub rhs: f64,
    pub gap: f64,
}

impl RatioBound {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + CERT_SLACK)
    }
}

/// Both sides of the mass-ratio bound; `phi_y` is the anchored principal
/// eigenfunction of `(Lambda \ Omega) + y`.
pub fn localisation_ratio_bound(
    tree: &Tree,
    field: &PotentialField,
    lambda: &Domain,
    omega: &[VertexId],
    t: f64,
) -> Result<RatioBound> {
    if omega.is_empty() {
        return Err(Error::InvalidParameter("omega must be nonempty".into()));
    }
    let gap = omega_gap(tree, field, lambda, omega)?;
    if !(gap > 0.0) {
        return Err(Error::Hypothesis(format!("gap {gap} is not positive")));
    }
    let r = restricted_solution(tree, field, lambda, omega, t)?;
    let inside: Vec<bool> = lambda.vertices().iter().map(|v| omega.contains(v)).collect();
    let total: f64 = r.w_omega.iter().sum();
    let outside: f64 = r.w_omega.iter().zip(&inside).filter(|(_, &o)| !o).map(|(w, _)| w).sum();
    let lhs = if total > 0.0 { outside / total } else { 0.0 };
    let mut rhs = 0.0;
    for &y in omega {
        let set: Vec<VertexId> = lambda
            .vertices()
            .iter()
            .zip(&inside)
            .filter(|&(&v, &o)| !o || v == y)
            .map(|(&v, _)| v)
            .collect();
        let d = Domain::new(tree, set)?;
        let e = anchored_eigenpair(tree, field, &d, y, DEFAULT_TOL)?;
        let off: f64 = d.vertices().iter().zip(&e.phi).filter(|(&v, _)| v != y).map(|(_, p)| p).sum();
        rhs += e.l2_norm_sq() * off;
    }
    Ok(RatioBound { lhs, rhs, gap })
}
