//! Synthetic multi-domain ratings drawn from the generative model: user
//! factors with a matrix-variate normal prior across domains, spherical
//! Gaussian item factors and Gaussian observation noise.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{RatingDataset, RatingScale};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub items_per_domain: Vec<usize>,
    pub latent_dim: usize,
    /// True domain covariance `Ω` (K × K, positive definite).
    pub omega: DMatrix<f64>,
    pub item_std: f64,
    pub noise_std: f64,
    /// Probability that a given (user, item) pair is observed.
    pub density: f64,
    /// Constant added to every rating.
    pub offset: f64,
    /// Round and clamp to an integer scale, like star ratings.
    pub discretize: Option<RatingScale>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// K domains with unit variances and a common off-diagonal correlation.
    pub fn equicorrelated(k: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(k, k, |a, b| if a == b { 1.0 } else { rho })
    }
}

/// Draws a dataset; users are named `u<j>`, items `i<k>`, domains `d<i>`.
pub fn generate(spec: &SyntheticSpec) -> Result<RatingDataset> {
    let k = spec.items_per_domain.len();
    if spec.omega.shape() != (k, k) {
        return Err(Error::Config("omega must be K x K".into()));
    }
    let chol = spec
        .omega
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("omega must be positive definite".into()))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.latent_dim;
    let m = spec.n_users;

    // Rows of U (one per user and latent coordinate) are N(0, Ω) across domains.
    let mut users: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, m); k];
    for j in 0..m {
        for r in 0..d {
            let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            for a in 0..k {
                users[a][(r, j)] = (0..=a).map(|b| l[(a, b)] * z[b]).sum();
            }
        }
    }
    let items: Vec<DMatrix<f64>> = spec
        .items_per_domain
        .iter()
        .map(|&n| DMatrix::from_fn(d, n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.item_std * z
        }))
        .collect();

    let user_names: Vec<String> = (0..m).map(|j| format!("u{j}")).collect();
    let domain_names: Vec<String> = (0..k).map(|i| format!("d{i}")).collect();
    let item_names: Vec<Vec<String>> = spec
        .items_per_domain
        .iter()
        .map(|&n| (0..n).map(|kk| format!("i{kk}")).collect())
        .collect();

    let mut rows = Vec::new();
    for i in 0..k {
        for j in 0..m {
            for kk in 0..spec.items_per_domain[i] {
                if rng.random::<f64>() >= spec.density {
                    continue;
                }
                let noise: f64 = rng.sample(StandardNormal);
                let mut x = spec.offset + users[i].column(j).dot(&items[i].column(kk)) + spec.noise_std * noise;
                if let Some(s) = spec.discretize {
                    x = s.clamp(x.round());
                }
                rows.push((user_names[j].as_str(), item_names[i][kk].as_str(), x, domain_names[i].as_str()));
            }
        }
    }
    RatingDataset::from_raw(rows, spec.discretize)
}
