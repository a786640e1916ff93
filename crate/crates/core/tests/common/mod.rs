#![allow(dead_code)]

use mdcf::model::{init_model, ModelState, TrainConfig};
use mdcf::synthetic::{generate, SyntheticSpec};
use mdcf::{DomainViews, LinkParams, RatingDataset, RatingScale};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random sparse views with ratings on 1..=5.
pub fn random_views(seed: u64, m: usize, items: &[usize], density: f64) -> DomainViews {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domains = items
        .iter()
        .map(|&n| {
            let mut e = Vec::new();
            for j in 0..m {
                for k in 0..n {
                    if rng.random::<f64>() < density {
                        e.push((j, k, rng.random_range(1..=5) as f64));
                    }
                }
            }
            (n, e)
        })
        .collect();
    DomainViews::from_triplets(m, domains)
}

/// A state with every block set to random, moderately scaled values and a
/// valid (positive definite) `Ω`.
pub fn random_state(seed: u64, views: &DomainViews, d: usize, link: bool) -> ModelState {
    let cfg = TrainConfig {
        latent_dim: d,
        link_enabled: link,
        ..Default::default()
    };
    let mut state = init_model(&cfg, views).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let k = views.n_domains();
    for i in 0..k {
        state.user_factors[i] = state.user_factors[i].map(|_| rng.random_range(-1.0..1.0));
        state.item_factors[i] = state.item_factors[i].map(|_| rng.random_range(-1.0..1.0));
        state.noise_var[i] = rng.random_range(0.3..2.0);
        state.user_prior_var[i] = rng.random_range(0.3..2.0);
        state.item_prior_var[i] = rng.random_range(0.3..2.0);
    }
    let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    state.omega = &b * b.transpose() + DMatrix::identity(k, k) * 0.5;
    if link {
        state.link = Some(LinkParams::from_unconstrained([
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-1.0..1.0),
        ]));
    }
    state
}

pub fn triplets(views: &DomainViews, domain: usize) -> Vec<(usize, usize, f64)> {
    views.domain(domain).by_user.entries().collect()
}

/// Rating-like correlated domains: offset 3, rounded and clamped to 1..=5.
pub fn rating_like(seed: u64, m: usize, n: usize, k: usize, rho: f64, density: f64) -> RatingDataset {
    generate(&SyntheticSpec {
        n_users: m,
        items_per_domain: vec![n; k],
        latent_dim: 3,
        omega: SyntheticSpec::equicorrelated(k, rho),
        item_std: 1.0 / 3f64.sqrt(),
        noise_std: 0.5,
        density,
        offset: 3.0,
        discretize: Some(RatingScale::new(1.0, 5.0).unwrap()),
        seed,
    })
    .unwrap()
}

/// Zero-mean continuous correlated domains drawn from the generative model.
pub fn continuous(seed: u64, m: usize, n: usize, k: usize, d: usize, rho: f64, density: f64) -> RatingDataset {
    generate(&SyntheticSpec {
        n_users: m,
        items_per_domain: vec![n; k],
        latent_dim: d,
        omega: SyntheticSpec::equicorrelated(k, rho),
        item_std: 1.0 / (d as f64).sqrt(),
        noise_std: 0.5,
        density,
        offset: 0.0,
        discretize: None,
        seed,
    })
    .unwrap()
}

/// Inverse and log-determinant by Gauss-Jordan elimination with partial
/// pivoting; independent of the library's Cholesky path.
pub fn gauss_jordan(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    let mut log_det = 0.0;
    for col in 0..n {
        let p = (col..n)
            .max_by(|&x, &y| m[(x, col)].abs().total_cmp(&m[(y, col)].abs()))
            .unwrap();
        m.swap_rows(col, p);
        inv.swap_rows(col, p);
        let piv = m[(col, col)];
        log_det += piv.abs().ln();
        for c in 0..n {
            m[(col, c)] /= piv;
            inv[(col, c)] /= piv;
        }
        for r in 0..n {
            if r != col {
                let f = m[(r, col)];
                for c in 0..n {
                    m[(r, c)] -= f * m[(col, c)];
                    inv[(r, c)] -= f * inv[(col, c)];
                }
            }
        }
    }
    (inv, log_det)
}

/// `Ω + εI` with the library's jitter rule.
pub fn jittered(omega: &DMatrix<f64>, jitter: f64) -> DMatrix<f64> {
    let k = omega.nrows();
    let eps = jitter * (omega.trace() / k as f64 + 1e-12);
    omega + DMatrix::identity(k, k) * eps
}

/// Straight-line evaluation of the negative log-posterior from triplets.
pub fn objective_oracle(state: &ModelState, views: &DomainViews) -> f64 {
    let k = state.n_domains();
    let d = state.latent_dim as f64;
    let m = state.n_users as f64;
    let mut j = 0.0;
    for i in 0..k {
        let s2 = state.noise_var[i];
        let mut n_obs = 0.0;
        for (u, it, x) in triplets(views, i) {
            let (t, jac) = match &state.link {
                Some(g) => {
                    let arg = g.b * x + g.c;
                    (g.a * arg.ln() + g.shift, (g.a * g.b / arg).ln())
                }
                None => (x, 0.0),
            };
            let mut s = 0.0;
            for r in 0..state.latent_dim {
                s += state.user_factors[i][(r, u)] * state.item_factors[i][(r, it)];
            }
            j += (t - s) * (t - s) / (2.0 * s2) - jac;
            n_obs += 1.0;
        }
        let un: f64 = state.user_factors[i].iter().map(|x| x * x).sum();
        let vn: f64 = state.item_factors[i].iter().map(|x| x * x).sum();
        let n_i = state.n_items(i) as f64;
        j += un / (2.0 * state.user_prior_var[i]) + vn / (2.0 * state.item_prior_var[i]);
        j += 0.5 * n_obs * s2.ln() + 0.5 * m * d * state.user_prior_var[i].ln();
        j += 0.5 * d * n_i * state.item_prior_var[i].ln();
    }
    let (psi, log_det) = gauss_jordan(&jittered(&state.omega, state.omega_jitter));
    for a in 0..k {
        for b in 0..k {
            let dot: f64 = state.user_factors[a]
                .iter()
                .zip(state.user_factors[b].iter())
                .map(|(x, y)| x * y)
                .sum();
            j += 0.5 * psi[(a, b)] * dot;
        }
    }
    j + 0.5 * m * d * log_det
}
