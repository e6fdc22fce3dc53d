use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability mass dropped when an infinite-support law is tabulated.
pub const TAIL_CUT: f64 = 1e-14;

const SUM_TOL: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Poisson1,
    GeometricHalf,
    Binary,
    Custom,
}

/// Offspring law on `{0, 1, 2, ...}` sampled by inverse CDF over a cached
/// cumulative table.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    family: Family,
    label: String,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
    second_moment: f64,
    size_biased: bool,
}

impl OffspringDistribution {
    pub fn poisson1() -> Self {
        let mut pmf = Vec::new();
        let mut p = (-1.0f64).exp();
        let mut cum = 0.0;
        let mut k = 0u32;
        while cum < 1.0 - TAIL_CUT {
            pmf.push(p);
            cum += p;
            k += 1;
            p /= f64::from(k);
        }
        Self::build(Family::Poisson1, "poisson1".into(), renormalize(pmf), false)
    }

    /// `p_k = 2^-(k+1)`.
    pub fn geometric_half() -> Self {
        let mut pmf = Vec::new();
        let mut p = 0.5;
        let mut cum = 0.0;
        while cum < 1.0 - TAIL_CUT {
            pmf.push(p);
            cum += p;
            p *= 0.5;
        }
        Self::build(
            Family::GeometricHalf,
            "geometric-half".into(),
            renormalize(pmf),
            false,
        )
    }

    /// `p_0 = p_2 = 1/2`.
    pub fn binary() -> Self {
        Self::build(Family::Binary, "binary".into(), vec![0.5, 0.0, 0.5], false)
    }

    /// Finite-support law; must sum to one and have mean one.
    pub fn custom(pmf: Vec<f64>) -> Result<Self> {
        Self::custom_labelled("custom", pmf)
    }

    fn custom_labelled(label: &str, pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() || pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidDistribution(
                "pmf entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "pmf sums to {total}, not 1"
            )));
        }
        let d = Self::build(Family::Custom, label.into(), pmf, false);
        if (d.mean - 1.0).abs() > MEAN_TOL {
            return Err(Error::NotCritical { mean: d.mean });
        }
        Ok(d)
    }

    /// Heavy-tailed critical law with `p_k ∝ k^-(beta+1)` for `1 <= k <= k_max`
    /// and the atom at zero chosen so the mean is exactly one. The tail index
    /// puts it in the domain of attraction of a `beta`-stable law; the
    /// normal-attraction constant is not controlled.
    pub fn zipf_critical(beta: f64, k_max: usize) -> Result<Self> {
        if !(beta > 1.0 && beta < 2.0) || k_max < 2 {
            return Err(Error::InvalidParameter(format!(
                "zipf family needs beta in (1, 2) and k_max >= 2, got beta={beta}, k_max={k_max}"
            )));
        }
        let weights: Vec<f64> = (1..=k_max).map(|k| (k as f64).powf(-(beta + 1.0))).collect();
        let first_moment: f64 = weights
            .iter()
            .enumerate()
            .map(|(i, w)| (i + 1) as f64 * w)
            .sum();
        let scale = 1.0 / first_moment;
        let positive: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let mass: f64 = positive.iter().sum();
        let mut pmf = Vec::with_capacity(k_max + 1);
        pmf.push(1.0 - mass);
        pmf.extend(positive);
        Self::custom_labelled(&format!("zipf:{beta}"), pmf)
    }

    /// Parses a family name as used in config files and tree headers.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "poisson1" => Ok(Self::poisson1()),
            "geometric-half" => Ok(Self::geometric_half()),
            "binary" => Ok(Self::binary()),
            other => {
                if let Some(b) = other.strip_prefix("zipf:") {
                    let beta: f64 = b
                        .parse()
                        .map_err(|_| Error::Config(format!("bad zipf beta {b:?}")))?;
                    Self::zipf_critical(beta, 100_000)
                } else {
                    Err(Error::Config(format!("unknown offspring family {other:?}")))
                }
            }
        }
    }

    fn build(family: Family, label: String, pmf: Vec<f64>, size_biased: bool) -> Self {
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        let mean = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let second_moment = pmf
            .iter()
            .enumerate()
            .map(|(k, p)| (k * k) as f64 * p)
            .sum();
        Self {
            family,
            label,
            pmf,
            cdf,
            mean,
            second_moment,
            size_biased,
        }
    }

    /// `mu*_n = n mu_n`; only defined for critical laws.
    pub fn size_biased(&self) -> Result<Self> {
        if self.size_biased {
            return Err(Error::InvalidDistribution(
                "law is already size-biased".into(),
            ));
        }
        if (self.mean - 1.0).abs() > MEAN_TOL {
            return Err(Error::NotCritical { mean: self.mean });
        }
        let raw: Vec<f64> = self
            .pmf
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .collect();
        Ok(Self::build(
            self.family,
            format!("{}*", self.label),
            renormalize(raw),
            true,
        ))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c <= u);
        k.min(self.pmf.len() - 1) as u32
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.pmf.get(k).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean * self.mean
    }

    pub fn is_size_biased(&self) -> bool {
        self.size_biased
    }

    /// Stability index of the law's domain of attraction: 2 with finite
    /// variance, otherwise the Zipf exponent.
    pub fn stability_index(&self) -> f64 {
        match self.label.strip_prefix("zipf:") {
            Some(b) => b.parse().unwrap_or(2.0),
            None => 2.0,
        }
    }
}

fn renormalize(mut pmf: Vec<f64>) -> Vec<f64> {
    let total: f64 = pmf.iter().sum();
    for p in &mut pmf {
        *p /= total;
    }
    pmf
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builtin_families_are_critical() {
        for mu in [
            OffspringDistribution::poisson1(),
            OffspringDistribution::geometric_half(),
            OffspringDistribution::binary(),
        ] {
            let total: f64 = mu.pmf().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{}", mu.label());
            assert!((mu.mean() - 1.0).abs() < 1e-10, "{}", mu.label());
        }
    }

    #[test]
    fn size_biased_poisson() {
        let s = OffspringDistribution::poisson1().size_biased().unwrap();
        assert_eq!(s.prob(0), 0.0);
        assert_relative_eq!(s.prob(1), (-1.0f64).exp(), max_relative = 1e-12);
        // e^-1 / (n-1)!
        assert_relative_eq!(s.prob(3), (-1.0f64).exp() / 2.0, max_relative = 1e-12);
        assert_relative_eq!(s.mean(), 2.0, max_relative = 1e-10);
    }

    #[test]
    fn size_biased_geometric() {
        let s = OffspringDistribution::geometric_half().size_biased().unwrap();
        assert_relative_eq!(s.prob(1), 0.25, max_relative = 1e-12);
        assert_relative_eq!(s.prob(2), 0.25, max_relative = 1e-12);
        assert_relative_eq!(s.prob(3), 3.0 / 16.0, max_relative = 1e-12);
    }

    #[test]
    fn size_biased_binary_is_point_mass() {
        let s = OffspringDistribution::binary().size_biased().unwrap();
        assert_eq!(s.prob(2), 1.0);
        assert_eq!(s.prob(0) + s.prob(1), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| s.sample(&mut rng) == 2));
    }

    #[test]
    fn size_biased_rejects_subcritical() {
        let d = OffspringDistribution::build(Family::Custom, "x".into(), vec![0.6, 0.4], false);
        assert!(matches!(d.size_biased(), Err(Error::NotCritical { .. })));
    }

    #[test]
    fn custom_validation() {
        assert!(OffspringDistribution::custom(vec![0.25, 0.5, 0.25]).is_ok());
        assert!(matches!(
            OffspringDistribution::custom(vec![0.5, 0.5]),
            Err(Error::NotCritical { .. })
        ));
        assert!(OffspringDistribution::custom(vec![0.5, 0.6]).is_err());
        assert!(OffspringDistribution::custom(vec![-0.1, 1.2, -0.1]).is_err());
    }

    #[test]
    fn zipf_is_critical_and_heavy() {
        let z = OffspringDistribution::zipf_critical(1.5, 10_000).unwrap();
        assert!((z.mean() - 1.0).abs() < 1e-10);
        assert!(z.prob(0) > 0.0);
        assert_eq!(z.stability_index(), 1.5);
        let named = OffspringDistribution::from_name("zipf:1.5").unwrap();
        assert_eq!(named.label(), "zipf:1.5");
    }

    #[test]
    fn sampling_frequencies() {
        let mu = OffspringDistribution::geometric_half();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let zeros = (0..n).filter(|_| mu.sample(&mut rng) == 0).count();
        let p = zeros as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((p - 0.5).abs() < 4.0 * sigma, "{p}");
    }
}
