//! Independent per-domain probabilistic matrix factorization.
//!
//! This is the uncoupled special case of the joint model (diagonal `Ψ`),
//! written out on its own so it can serve as an oracle for the joint trainer
//! with `Ω` frozen at the identity.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::{DomainView, DomainViews};
use crate::error::{Error, Result};
use crate::model::{init_domain_factors, spd_solve, ModelState, TrainConfig};
use crate::trainer::TrainReport;

struct Pmf<'a> {
    view: &'a DomainView,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    noise_var: f64,
    user_var: f64,
    item_var: f64,
    /// Precision of the unit domain covariance, `1 / (1 + ε)`.
    psi: f64,
    log_det: f64,
}

impl Pmf<'_> {
    fn solve_users(&mut self) -> Result<()> {
        let d = self.u.nrows();
        let ridge = self.noise_var * (1.0 / self.user_var + self.psi);
        let v = &self.v;
        let view = self.view;
        let cols: Vec<DVector<f64>> = (0..self.u.ncols())
            .into_par_iter()
            .map(|j| normal_equations(d, ridge, view.by_user.row(j), v))
            .collect::<Result<_>>()?;
        for (j, c) in cols.iter().enumerate() {
            self.u.set_column(j, c);
        }
        Ok(())
    }

    fn solve_items(&mut self) -> Result<()> {
        let d = self.v.nrows();
        let ridge = self.noise_var / self.item_var;
        let u = &self.u;
        let view = self.view;
        let cols: Vec<DVector<f64>> = (0..self.v.ncols())
            .into_par_iter()
            .map(|k| normal_equations(d, ridge, view.by_item.row(k), u))
            .collect::<Result<_>>()?;
        for (k, c) in cols.iter().enumerate() {
            self.v.set_column(k, c);
        }
        Ok(())
    }

    fn sse(&self) -> f64 {
        self.view
            .by_user
            .entries()
            .map(|(j, k, x)| (x - self.u.column(j).dot(&self.v.column(k))).powi(2))
            .sum()
    }

    fn update_variances(&mut self, floor: f64) {
        let n = self.view.count();
        if n > 0 {
            self.noise_var = (self.sse() / n as f64).max(floor);
        }
        if !self.u.is_empty() {
            self.user_var = (self.u.norm_squared() / self.u.len() as f64).max(floor);
        }
        if !self.v.is_empty() {
            self.item_var = (self.v.norm_squared() / self.v.len() as f64).max(floor);
        }
    }

    fn objective(&self) -> Result<f64> {
        let md = self.u.len() as f64;
        let dn = self.v.len() as f64;
        let n = self.view.count() as f64;
        let u2 = self.u.norm_squared();
        let j = self.sse() / (2.0 * self.noise_var)
            + u2 * (1.0 / self.user_var + self.psi) / 2.0
            + self.v.norm_squared() / (2.0 * self.item_var)
            + 0.5 * n * self.noise_var.ln()
            + 0.5 * md * self.user_var.ln()
            + 0.5 * dn * self.item_var.ln()
            + 0.5 * md * self.log_det;
        if j.is_finite() {
            Ok(j)
        } else {
            Err(Error::NonFinite { term: "pmf_objective" })
        }
    }
}

/// `(ridge·I + Σ f fᵀ)⁻¹ Σ x f` over the `(index, rating)` pairs of one row.
fn normal_equations(
    d: usize,
    ridge: f64,
    row: impl Iterator<Item = (usize, f64)>,
    factors: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for (idx, x) in row {
        let f = factors.column(idx);
        for r in 0..d {
            b[r] += x * f[r];
            for c in 0..d {
                a[(r, c)] += f[r] * f[c];
            }
        }
    }
    for r in 0..d {
        a[(r, r)] += ridge;
    }
    spd_solve(a, b)
}

/// Trains PMF on one domain, drawing the initial factors from the same
/// stream the joint model uses for domain `domain_index`.
///
/// Returns a single-domain state with `Ω = [1]` and no link.
pub fn train_pmf(
    view: &DomainView,
    cfg: &TrainConfig,
    domain_index: usize,
) -> Result<(ModelState, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let d = cfg.latent_dim;
    let (u, v) = init_domain_factors(cfg.seed, domain_index, d, view.n_users(), view.n_items());
    let eps = cfg.omega_jitter * (1.0 + 1e-12);
    let mut pmf = Pmf {
        view,
        u,
        v,
        noise_var: 1.0,
        user_var: 1.0,
        item_var: 1.0,
        psi: 1.0 / (1.0 + eps),
        log_det: (1.0 + eps).ln(),
    };
    let initial_objective = pmf.objective()?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut previous = initial_objective;
    for _ in 0..cfg.max_sweeps {
        pmf.solve_users()?;
        pmf.solve_items()?;
        pmf.update_variances(cfg.variance_floor);
        let j = pmf.objective()?;
        trace.push(j);
        if (j - previous).abs() / (j.abs() + 1.0) < cfg.rel_tol {
            converged = true;
            break;
        }
        previous = j;
    }
    let state = ModelState {
        latent_dim: d,
        n_users: view.n_users(),
        user_factors: vec![pmf.u],
        item_factors: vec![pmf.v],
        omega: DMatrix::identity(1, 1),
        noise_var: vec![pmf.noise_var],
        user_prior_var: vec![pmf.user_var],
        item_prior_var: vec![pmf.item_var],
        link: None,
        omega_jitter: cfg.omega_jitter,
    };
    let report = TrainReport {
        initial_objective,
        sweeps_run: trace.len(),
        objective_trace: trace,
        heldout_rmse_trace: None,
        converged,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok((state, report))
}

/// Runs [`train_pmf`] on every domain (in parallel) and stacks the results
/// into one `K`-domain state with `Ω = I`.
pub fn train_pmf_domains(views: &DomainViews, cfg: &TrainConfig) -> Result<(ModelState, Vec<TrainReport>)> {
    if views.n_domains() == 0 {
        return Err(Error::Empty("no domains to train on".into()));
    }
    let runs: Vec<(ModelState, TrainReport)> = views
        .domains()
        .par_iter()
        .enumerate()
        .map(|(i, view)| train_pmf(view, cfg, i))
        .collect::<Result<_>>()?;
    let k = runs.len();
    let mut state = ModelState {
        latent_dim: cfg.latent_dim,
        n_users: views.n_users(),
        user_factors: Vec::with_capacity(k),
        item_factors: Vec::with_capacity(k),
        omega: DMatrix::identity(k, k),
        noise_var: Vec::with_capacity(k),
        user_prior_var: Vec::with_capacity(k),
        item_prior_var: Vec::with_capacity(k),
        link: None,
        omega_jitter: cfg.omega_jitter,
    };
    let mut reports = Vec::with_capacity(k);
    for (s, r) in runs {
        state.user_factors.extend(s.user_factors);
        state.item_factors.extend(s.item_factors);
        state.noise_var.extend(s.noise_var);
        state.user_prior_var.extend(s.user_prior_var);
        state.item_prior_var.extend(s.item_prior_var);
        reports.push(r);
    }
    Ok((state, reports))
}
