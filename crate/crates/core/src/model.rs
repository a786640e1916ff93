//! Learnable state of the joint factorization and its closed-form block
//! updates.
//!
//! Each domain `i` owns a `d × m` user-factor matrix `U^i` (columns are users,
//! over the shared user pool) and a `d × n_i` item-factor matrix `V^i`. The
//! per-domain user matrices are coupled through a `K × K` domain covariance
//! `Ω`; its inverse enters the user update and is recomputed (with diagonal
//! jitter) whenever it is needed rather than stored.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DomainViews, RatingScale};
use crate::error::{Error, Result};
use crate::link::{LinkParams, LinkStep};

/// Standard deviation of the initial factor entries.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub max_sweeps: usize,
    /// Stop when `|ΔJ| / (|J| + 1)` drops below this.
    pub rel_tol: f64,
    pub variance_floor: f64,
    /// Relative diagonal jitter applied when inverting `Ω`.
    pub omega_jitter: f64,
    pub seed: u64,
    pub link_enabled: bool,
    /// Keep `Ω` at its initial identity value (no cross-domain coupling).
    pub freeze_omega: bool,
    pub link_step: LinkStep,
    /// Prediction scale override; defaults to the training data's range.
    pub rating_scale: Option<RatingScale>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            max_sweeps: 200,
            rel_tol: 1e-6,
            variance_floor: 1e-6,
            omega_jitter: 1e-8,
            seed: 0,
            link_enabled: false,
            freeze_omega: false,
            link_step: LinkStep::default(),
            rating_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config("variance_floor must be positive".into()));
        }
        if !(self.omega_jitter >= 0.0) {
            return Err(Error::Config("omega_jitter must be non-negative".into()));
        }
        if !(self.link_step.initial_step > 0.0) {
            return Err(Error::Config("link initial step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub latent_dim: usize,
    pub n_users: usize,
    /// `U^i`, one `d × m` matrix per domain.
    pub user_factors: Vec<DMatrix<f64>>,
    /// `V^i`, one `d × n_i` matrix per domain.
    pub item_factors: Vec<DMatrix<f64>>,
    pub omega: DMatrix<f64>,
    pub noise_var: Vec<f64>,
    pub user_prior_var: Vec<f64>,
    pub item_prior_var: Vec<f64>,
    pub link: Option<LinkParams>,
    /// Jitter multiplier used for every inversion of `Ω`.
    pub omega_jitter: f64,
}

impl ModelState {
    pub fn n_domains(&self) -> usize {
        self.user_factors.len()
    }

    pub fn n_items(&self, i: usize) -> usize {
        self.item_factors[i].ncols()
    }

    /// Latent score `(U_j^i)ᵀ V_k^i`.
    pub fn score(&self, domain: usize, user: usize, item: usize) -> f64 {
        self.user_factors[domain]
            .column(user)
            .dot(&self.item_factors[domain].column(item))
    }

    pub fn precision(&self) -> Result<Precision> {
        Precision::new(&self.omega, self.omega_jitter)
    }
}

/// Seeded generator for domain `i`'s initial factors. Every training route
/// (joint model or single-domain baseline) draws domain `i` from the same
/// stream.
pub fn init_domain_factors(
    seed: u64,
    domain: usize,
    d: usize,
    n_users: usize,
    n_items: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain as u64);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let u = DMatrix::from_fn(d, n_users, |_, _| normal.sample(&mut rng));
    let v = DMatrix::from_fn(d, n_items, |_, _| normal.sample(&mut rng));
    (u, v)
}

pub fn init_model(cfg: &TrainConfig, views: &DomainViews) -> Result<ModelState> {
    cfg.validate()?;
    if views.n_domains() == 0 {
        return Err(Error::Empty("no domains to train on".into()));
    }
    let d = cfg.latent_dim;
    let m = views.n_users();
    let k = views.n_domains();
    let (user_factors, item_factors) = (0..k)
        .map(|i| init_domain_factors(cfg.seed, i, d, m, views.domain(i).n_items()))
        .unzip();
    Ok(ModelState {
        latent_dim: d,
        n_users: m,
        user_factors,
        item_factors,
        omega: DMatrix::identity(k, k),
        noise_var: vec![1.0; k],
        user_prior_var: vec![1.0; k],
        item_prior_var: vec![1.0; k],
        link: cfg.link_enabled.then(LinkParams::default),
        omega_jitter: cfg.omega_jitter,
    })
}

/// `Ψ = (Ω + εI)⁻¹` and `ln|Ω + εI|`, with `ε = jitter · (tr Ω / K + 1e-12)`.
#[derive(Debug, Clone)]
pub struct Precision {
    pub psi: DMatrix<f64>,
    pub log_det: f64,
    pub jitter: f64,
}

impl Precision {
    pub fn new(omega: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        let k = omega.nrows();
        let eps = jitter * (omega.trace() / k as f64 + 1e-12);
        let mut shifted = omega.clone();
        for a in 0..k {
            shifted[(a, a)] += eps;
        }
        let chol = shifted
            .cholesky()
            .ok_or_else(|| Error::Numeric("domain covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let inv = chol.inverse();
        let psi = DMatrix::from_fn(k, k, |a, b| 0.5 * (inv[(a, b)] + inv[(b, a)]));
        Ok(Self {
            psi,
            log_det,
            jitter: eps,
        })
    }
}

pub(crate) fn spd_solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("normal-equation matrix is not positive definite".into()))?;
    Ok(chol.solve(&b))
}

/// Closed-form minimizer of the objective over `U_j^i`, everything else fixed.
///
/// Solves `[σ²(1/λ² + ψ_ii) I + Σ_k V_k V_kᵀ] u = Σ_k x_jk V_k − σ² Σ_{l≠i} ψ_li U_j^l`
/// over the items `k` user `j` rated in domain `i`. `targets` holds the
/// (possibly link-transformed) ratings.
pub fn update_user_factor(
    state: &ModelState,
    psi: &DMatrix<f64>,
    targets: &DomainViews,
    domain: usize,
    user: usize,
) -> Result<DVector<f64>> {
    let d = state.latent_dim;
    let s2 = state.noise_var[domain];
    let v = &state.item_factors[domain];
    let ridge = s2 * (1.0 / state.user_prior_var[domain] + psi[(domain, domain)]);
    let mut a = DMatrix::from_diagonal_element(d, d, ridge);
    let mut rhs = DVector::zeros(d);
    for (k, x) in targets.domain(domain).by_user.row(user) {
        let vk = v.column(k);
        a.ger(1.0, &vk, &vk, 1.0);
        rhs.axpy(x, &vk, 1.0);
    }
    for (l, ul) in state.user_factors.iter().enumerate() {
        if l != domain && psi[(l, domain)] != 0.0 {
            rhs.axpy(-s2 * psi[(l, domain)], &ul.column(user), 1.0);
        }
    }
    spd_solve(a, rhs)
}

/// Closed-form minimizer over `V_k^i`:
/// `[(σ²/η²) I + Σ_j U_j U_jᵀ] v = Σ_j x_jk U_j`.
pub fn update_item_factor(
    state: &ModelState,
    targets: &DomainViews,
    domain: usize,
    item: usize,
) -> Result<DVector<f64>> {
    let d = state.latent_dim;
    let u = &state.user_factors[domain];
    let ridge = state.noise_var[domain] / state.item_prior_var[domain];
    let mut a = DMatrix::from_diagonal_element(d, d, ridge);
    let mut rhs = DVector::zeros(d);
    for (j, x) in targets.domain(domain).by_item.row(item) {
        let uj = u.column(j);
        a.ger(1.0, &uj, &uj, 1.0);
        rhs.axpy(x, &uj, 1.0);
    }
    spd_solve(a, rhs)
}

/// `Ω_ab = vec(U^a)ᵀ vec(U^b) / (m d)`, symmetric by construction.
pub fn update_domain_covariance(state: &ModelState) -> DMatrix<f64> {
    let k = state.n_domains();
    let scale = (state.n_users * state.latent_dim) as f64;
    let mut omega = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let dot = state.user_factors[a]
                .as_slice()
                .iter()
                .zip(state.user_factors[b].as_slice())
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / scale;
            omega[(a, b)] = dot;
            omega[(b, a)] = dot;
        }
    }
    omega
}

/// Negates `(U^i, V^i)` and row/column `i` of `Ω` for every domain whose
/// covariance with domain 0 is negative. The objective and every prediction
/// are unchanged; only the reported sign convention of `Ω` is fixed.
pub fn canonicalize_signs(state: &mut ModelState) {
    for i in 1..state.n_domains() {
        if state.omega[(0, i)] < 0.0 {
            state.user_factors[i].neg_mut();
            state.item_factors[i].neg_mut();
            for a in 0..state.n_domains() {
                if a != i {
                    state.omega[(a, i)] = -state.omega[(a, i)];
                    state.omega[(i, a)] = -state.omega[(i, a)];
                }
            }
        }
    }
}

/// Mean squared residual over domain `i`'s observed targets, floored. With no
/// observations the previous value is kept.
pub fn update_noise_variance(state: &ModelState, targets: &DomainViews, domain: usize, floor: f64) -> f64 {
    let view = targets.domain(domain);
    if view.count() == 0 {
        return state.noise_var[domain];
    }
    let sse: f64 = view
        .by_user
        .entries()
        .map(|(j, k, x)| {
            let r = x - state.score(domain, j, k);
            r * r
        })
        .sum();
    (sse / view.count() as f64).max(floor)
}

/// `λ_i² = ‖U^i‖²_F / (m d)`, floored.
pub fn update_user_prior_variance(state: &ModelState, domain: usize, floor: f64) -> f64 {
    let u = &state.user_factors[domain];
    if u.is_empty() {
        return state.user_prior_var[domain];
    }
    (u.norm_squared() / u.len() as f64).max(floor)
}

/// `η_i² = ‖V^i‖²_F / (d n_i)`, floored; unchanged for an item-less domain.
pub fn update_item_prior_variance(state: &ModelState, domain: usize, floor: f64) -> f64 {
    let v = &state.item_factors[domain];
    if v.is_empty() {
        return state.item_prior_var[domain];
    }
    (v.norm_squared() / v.len() as f64).max(floor)
}

/// Individual contributions to the negative log-posterior (additive
/// constants dropped).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveTerms {
    /// `Σ_i (1/2σ_i²) Σ (target − uᵀv)²`
    pub residual: f64,
    /// `Σ_i (1/2λ_i²) ‖U^i‖²`
    pub user_prior: f64,
    /// `Σ_i (1/2η_i²) ‖V^i‖²`
    pub item_prior: f64,
    /// `Σ_i (N_i/2) ln σ_i²`
    pub noise_log: f64,
    /// `Σ_i (m d/2) ln λ_i²`
    pub user_log: f64,
    /// `Σ_i (d n_i/2) ln η_i²`
    pub item_log: f64,
    /// `½ tr(U Ψ Uᵀ)`
    pub coupling: f64,
    /// `(m d/2) ln|Ω|`
    pub covariance_log: f64,
    /// `−Σ ln g'(x)`; zero without a link.
    pub jacobian: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.residual
            + self.user_prior
            + self.item_prior
            + self.noise_log
            + self.user_log
            + self.item_log
            + self.coupling
            + self.covariance_log
            + self.jacobian
    }

    /// The first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("residual", self.residual),
            ("user_prior", self.user_prior),
            ("item_prior", self.item_prior),
            ("noise_log", self.noise_log),
            ("user_log", self.user_log),
            ("item_log", self.item_log),
            ("coupling", self.coupling),
            ("covariance_log", self.covariance_log),
            ("jacobian", self.jacobian),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Negative log-posterior of the state on the raw ratings in `views`, using
/// the state's own link (if any).
pub fn negative_log_posterior(state: &ModelState, views: &DomainViews) -> Result<f64> {
    let terms = negative_log_posterior_with(state, views, state.link.as_ref())?;
    Ok(terms.total())
}

/// As [`negative_log_posterior`] but with an explicit link, returning each
/// term. Non-finite terms are reported by name.
pub fn negative_log_posterior_with(
    state: &ModelState,
    views: &DomainViews,
    link: Option<&LinkParams>,
) -> Result<ObjectiveTerms> {
    let k = state.n_domains();
    let md = (state.n_users * state.latent_dim) as f64;
    let d = state.latent_dim as f64;
    let mut t = ObjectiveTerms::default();
    for i in 0..k {
        let view = views.domain(i);
        let mut sse = 0.0;
        for (j, item, x) in view.by_user.entries() {
            let target = match link {
                Some(g) => {
                    t.jacobian -= g.derivative(x)?.ln();
                    g.apply(x)?
                }
                None => x,
            };
            let r = target - state.score(i, j, item);
            sse += r * r;
        }
        t.residual += sse / (2.0 * state.noise_var[i]);
        t.user_prior += state.user_factors[i].norm_squared() / (2.0 * state.user_prior_var[i]);
        t.item_prior += state.item_factors[i].norm_squared() / (2.0 * state.item_prior_var[i]);
        t.noise_log += 0.5 * view.count() as f64 * state.noise_var[i].ln();
        t.user_log += 0.5 * md * state.user_prior_var[i].ln();
        t.item_log += 0.5 * d * state.n_items(i) as f64 * state.item_prior_var[i].ln();
    }
    let precision = state.precision()?;
    let gram = gram(state);
    t.coupling = 0.5 * precision.psi.component_mul(&gram).sum();
    t.covariance_log = 0.5 * md * precision.log_det;
    match t.first_non_finite() {
        Some(term) => Err(Error::NonFinite { term }),
        None => Ok(t),
    }
}

/// `UᵀU` for `U = [vec(U^1), …, vec(U^K)]`.
fn gram(state: &ModelState) -> DMatrix<f64> {
    let md = (state.n_users * state.latent_dim) as f64;
    update_domain_covariance(state) * md
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_domain(entries: Vec<(usize, usize, f64)>, m: usize, n: usize) -> DomainViews {
        DomainViews::from_triplets(m, vec![(n, entries)])
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let views = DomainViews::from_triplets(100, vec![(7, vec![(0, 0, 1.0)]), (3, vec![])]);
        let cfg = TrainConfig::default();
        let a = init_model(&cfg, &views).unwrap();
        let b = init_model(&cfg, &views).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.user_factors[0].shape(), (10, 100));
        assert_eq!(a.item_factors[1].shape(), (10, 3));
        assert_eq!(a.omega, DMatrix::identity(2, 2));
        assert_eq!(a.noise_var, vec![1.0, 1.0]);
        assert!(a.link.is_none());
        let linked = init_model(&TrainConfig { link_enabled: true, ..cfg.clone() }, &views).unwrap();
        assert_eq!(linked.link, Some(LinkParams::default()));
        assert!(init_model(&TrainConfig { latent_dim: 0, ..cfg }, &views).is_err());
    }

    #[test]
    fn user_without_ratings_gets_zero() {
        let views = one_domain(vec![(1, 0, 3.0)], 2, 1);
        let state = init_model(&TrainConfig { latent_dim: 3, ..Default::default() }, &views).unwrap();
        let psi = state.precision().unwrap().psi;
        let u = update_user_factor(&state, &psi, &views, 0, 0).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
        let v = update_item_factor(&state, &one_domain(vec![], 2, 1), 0, 0).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scalar_user_update_matches_hand_solution() {
        let views = one_domain(vec![(0, 0, 4.0)], 1, 1);
        let mut state = init_model(&TrainConfig { latent_dim: 1, ..Default::default() }, &views).unwrap();
        state.item_factors[0][(0, 0)] = 0.7;
        state.noise_var[0] = 0.5;
        state.user_prior_var[0] = 2.0;
        state.omega[(0, 0)] = 3.0;
        let p = state.precision().unwrap();
        let psi = p.psi[(0, 0)];
        let u = update_user_factor(&state, &p.psi, &views, 0, 0).unwrap()[0];
        let expected = 4.0 * 0.7 / (0.5 * (1.0 / 2.0 + psi) + 0.49);
        assert!((u - expected).abs() < 1e-14);
        assert!((psi - 1.0 / (3.0 * (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn scalar_item_update_matches_hand_solution() {
        let views = one_domain(vec![(0, 0, 2.5)], 1, 1);
        let mut state = init_model(&TrainConfig { latent_dim: 1, ..Default::default() }, &views).unwrap();
        state.user_factors[0][(0, 0)] = -1.3;
        state.noise_var[0] = 0.8;
        state.item_prior_var[0] = 0.4;
        let v = update_item_factor(&state, &views, 0, 0).unwrap()[0];
        let expected = 2.5 * -1.3 / (0.8 / 0.4 + 1.69);
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn covariance_examples() {
        let views = one_domain(vec![], 4, 1);
        let mut state = init_model(&TrainConfig { latent_dim: 2, ..Default::default() }, &views).unwrap();
        state.user_factors[0] = DMatrix::from_element(2, 4, 1.0);
        assert_eq!(update_domain_covariance(&state), DMatrix::from_element(1, 1, 1.0));
        state.user_factors[0].fill(0.0);
        let omega = update_domain_covariance(&state);
        assert_eq!(omega[(0, 0)], 0.0);
        state.omega = omega;
        let p = state.precision().unwrap();
        assert!(p.psi[(0, 0)].is_finite() && p.psi[(0, 0)] > 0.0);
    }

    #[test]
    fn variance_examples() {
        let views = one_domain(vec![(0, 0, 2.0)], 1, 1);
        let mut state = init_model(&TrainConfig { latent_dim: 1, ..Default::default() }, &views).unwrap();
        state.user_factors[0][(0, 0)] = 1.0;
        state.item_factors[0][(0, 0)] = 2.0;
        assert_eq!(update_noise_variance(&state, &views, 0, 1e-6), 1e-6);
        state.item_factors[0][(0, 0)] = 0.5;
        assert_eq!(update_noise_variance(&state, &views, 0, 1e-6), 2.25);
        let empty = one_domain(vec![], 1, 1);
        state.noise_var[0] = 0.3;
        assert_eq!(update_noise_variance(&state, &empty, 0, 1e-6), 0.3);

        state.user_factors[0].fill(1.0);
        state.item_factors[0].fill(1.0);
        assert_eq!(update_user_prior_variance(&state, 0, 1e-6), 1.0);
        assert_eq!(update_item_prior_variance(&state, 0, 1e-6), 1.0);
        state.user_factors[0].fill(0.0);
        state.item_factors[0].fill(0.0);
        assert_eq!(update_user_prior_variance(&state, 0, 1e-6), 1e-6);
        assert_eq!(update_item_prior_variance(&state, 0, 1e-6), 1e-6);
    }

    #[test]
    fn objective_of_zero_state_is_constant() {
        let views = one_domain(vec![], 3, 2);
        let mut state = init_model(&TrainConfig { latent_dim: 2, ..Default::default() }, &views).unwrap();
        state.user_factors[0].fill(0.0);
        state.item_factors[0].fill(0.0);
        let j = negative_log_posterior(&state, &views).unwrap();
        // only the jitter inside ln|Ω + εI| survives
        assert!(j.abs() < 1e-6, "{j}");
    }

    #[test]
    fn perfectly_fit_observation_is_free_at_unit_noise() {
        let base = one_domain(vec![(0, 0, 0.02)], 2, 2);
        let mut state = init_model(&TrainConfig { latent_dim: 1, ..Default::default() }, &base).unwrap();
        state.user_factors[0][(0, 1)] = 0.5;
        state.item_factors[0][(0, 1)] = 0.8;
        let fitted = state.score(0, 1, 1);
        let more = one_domain(vec![(0, 0, 0.02), (1, 1, fitted)], 2, 2);
        let a = negative_log_posterior(&state, &base).unwrap();
        let b = negative_log_posterior(&state, &more).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sign_flip_keeps_objective_and_scores() {
        let views = DomainViews::from_triplets(
            3,
            vec![(2, vec![(0, 0, 1.0), (1, 1, 2.0)]), (2, vec![(0, 1, 3.0), (2, 0, 1.5)]), (1, vec![(1, 0, 2.0)])],
        );
        let mut state = init_model(&TrainConfig { latent_dim: 2, ..Default::default() }, &views).unwrap();
        state.user_factors[1] = -state.user_factors[0].clone();
        state.user_factors[2] = state.user_factors[0].clone() * 0.5;
        state.omega = update_domain_covariance(&state);
        let before = negative_log_posterior(&state, &views).unwrap();
        let score = state.score(1, 2, 0);
        canonicalize_signs(&mut state);
        assert!(state.omega[(0, 1)] > 0.0 && state.omega[(0, 2)] > 0.0 && state.omega[(1, 2)] > 0.0);
        assert_eq!(state.omega, update_domain_covariance(&state));
        assert_eq!(state.score(1, 2, 0), score);
        let after = negative_log_posterior(&state, &views).unwrap();
        assert!((after - before).abs() <= 1e-12 * before.abs());
    }

    #[test]
    fn non_finite_term_is_named() {
        let views = one_domain(vec![(0, 0, 1.0)], 1, 1);
        let mut state = init_model(&TrainConfig { latent_dim: 1, ..Default::default() }, &views).unwrap();
        state.noise_var[0] = 0.0;
        match negative_log_posterior(&state, &views) {
            Err(Error::NonFinite { term }) => assert_eq!(term, "residual"),
            other => panic!("{other:?}"),
        }
    }
}
