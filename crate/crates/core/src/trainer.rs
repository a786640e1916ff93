//! Alternating minimization driver and prediction.

use std::borrow::Cow;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dataset::{AlignedRating, DomainViews, RatingScale};
use crate::error::{Error, Result};
use crate::link::{check_domain, optimize_link_params, LinkParams};
use crate::model::{
    canonicalize_signs, init_model, negative_log_posterior, update_domain_covariance, update_item_factor,
    update_item_prior_variance, update_noise_variance, update_user_factor,
    update_user_prior_variance, ModelState, TrainConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Objective before the first sweep.
    pub initial_objective: f64,
    /// Objective after each completed sweep.
    pub objective_trace: Vec<f64>,
    /// Held-out RMSE after each sweep, when held-out data was supplied.
    pub heldout_rmse_trace: Option<Vec<f64>>,
    pub sweeps_run: usize,
    pub converged: bool,
    pub wall_time: f64,
}

impl TrainReport {
    /// Plain-text trace: one line per sweep.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# mdcf-train-report v1\nsweep\tobjective\theldout_rmse\n");
        out.push_str(&format!("0\t{:e}\t-\n", self.initial_objective));
        for (s, j) in self.objective_trace.iter().enumerate() {
            let rmse = self
                .heldout_rmse_trace
                .as_ref()
                .map(|t| format!("{:.6}", t[s]))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!("{}\t{j:e}\t{rmse}\n", s + 1));
        }
        out.push_str(&format!("# sweeps={} converged={}\n", self.sweeps_run, self.converged));
        out
    }
}

/// Per-sweep progress record handed to observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepProgress {
    pub sweep: usize,
    pub objective: f64,
    pub heldout_rmse: Option<f64>,
}

impl std::fmt::Display for SweepProgress {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sweep={} objective={:e}", self.sweep, self.objective)?;
        if let Some(r) = self.heldout_rmse {
            write!(f, " heldout_rmse={r:.6}")?;
        }
        Ok(())
    }
}

/// Held-out ratings already aligned to the training index space.
#[derive(Debug, Clone, Copy)]
pub struct HeldOut<'a> {
    pub ratings: &'a [AlignedRating],
    pub scale: RatingScale,
}

/// Why a prediction did not come straight from the factor model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    UnknownUser,
    UnknownItem,
    /// `g⁻¹` overflowed and was saturated to the scale bound.
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub fallback: Option<Fallback>,
}

/// Predicted rating for `(user, item)` in `domain`, clamped to `scale`.
///
/// `None` indices (IDs unseen in training) fall back to the scale midpoint.
pub fn predict(
    state: &ModelState,
    user: Option<usize>,
    item: Option<usize>,
    domain: usize,
    scale: RatingScale,
) -> Result<Prediction> {
    if domain >= state.n_domains() {
        return Err(Error::UnknownDomain(format!("index {domain}")));
    }
    let midpoint = |fallback| Prediction {
        value: scale.midpoint(),
        fallback: Some(fallback),
    };
    let Some(j) = user.filter(|&j| j < state.n_users) else {
        return Ok(midpoint(Fallback::UnknownUser));
    };
    let Some(k) = item.filter(|&k| k < state.n_items(domain)) else {
        return Ok(midpoint(Fallback::UnknownItem));
    };
    let z = state.score(domain, j, k);
    Ok(match &state.link {
        None => Prediction {
            value: scale.clamp(z),
            fallback: None,
        },
        Some(g) => {
            let (value, saturated) = g.inverse_saturating(z, scale);
            Prediction {
                value,
                fallback: saturated.then_some(Fallback::Saturated),
            }
        }
    })
}

pub(crate) fn heldout_rmse(state: &ModelState, heldout: &HeldOut<'_>) -> Result<f64> {
    let mut sse = 0.0;
    for r in heldout.ratings {
        let p = predict(state, r.user, r.item, r.domain, heldout.scale)?;
        sse += (r.value - p.value).powi(2);
    }
    Ok((sse / heldout.ratings.len().max(1) as f64).sqrt())
}

/// Re-solves every user factor of `domain` in place. Users are independent
/// given the other domains, so the solves run in parallel.
pub fn sweep_user_factors(state: &mut ModelState, targets: &DomainViews, domain: usize) -> Result<()> {
    let psi = state.precision()?.psi;
    let snapshot: &ModelState = state;
    let cols: Vec<DVector<f64>> = (0..snapshot.n_users)
        .into_par_iter()
        .map(|j| update_user_factor(snapshot, &psi, targets, domain, j))
        .collect::<Result<_>>()?;
    for (j, col) in cols.into_iter().enumerate() {
        state.user_factors[domain].set_column(j, &col);
    }
    Ok(())
}

pub fn sweep_item_factors(state: &mut ModelState, targets: &DomainViews, domain: usize) -> Result<()> {
    let snapshot: &ModelState = state;
    let cols: Vec<DVector<f64>> = (0..snapshot.n_items(domain))
        .into_par_iter()
        .map(|k| update_item_factor(snapshot, targets, domain, k))
        .collect::<Result<_>>()?;
    for (k, col) in cols.into_iter().enumerate() {
        state.item_factors[domain].set_column(k, &col);
    }
    Ok(())
}

fn transformed<'a>(views: &'a DomainViews, link: Option<&LinkParams>) -> Result<Cow<'a, DomainViews>> {
    Ok(match link {
        Some(g) => Cow::Owned(views.map_values(|x| g.apply(x))?),
        None => Cow::Borrowed(views),
    })
}

/// One full sweep in the fixed order: users, items, `Ω`, `σ²`, `λ²`, `η²`,
/// then the link step.
pub fn run_sweep(state: &mut ModelState, views: &DomainViews, cfg: &TrainConfig) -> Result<()> {
    let k = state.n_domains();
    let targets = transformed(views, state.link.as_ref())?;
    for i in 0..k {
        sweep_user_factors(state, &targets, i)?;
    }
    for i in 0..k {
        sweep_item_factors(state, &targets, i)?;
    }
    if !cfg.freeze_omega {
        state.omega = update_domain_covariance(state);
    }
    for i in 0..k {
        state.noise_var[i] = update_noise_variance(state, &targets, i, cfg.variance_floor);
    }
    for i in 0..k {
        state.user_prior_var[i] = update_user_prior_variance(state, i, cfg.variance_floor);
    }
    for i in 0..k {
        state.item_prior_var[i] = update_item_prior_variance(state, i, cfg.variance_floor);
    }
    if state.link.is_some() {
        state.link = Some(optimize_link_params(state, views, &cfg.link_step)?);
    }
    Ok(())
}

fn objective_or_diverged(state: &ModelState, views: &DomainViews, sweep: usize, last: &ModelState) -> Result<f64> {
    match negative_log_posterior(state, views) {
        Ok(j) => Ok(j),
        Err(Error::NonFinite { term }) => Err(Error::Diverged {
            sweep,
            term,
            last_state: Box::new(last.clone()),
        }),
        Err(e) => Err(e),
    }
}

pub fn train(
    views: &DomainViews,
    cfg: &TrainConfig,
    heldout: Option<HeldOut<'_>>,
) -> Result<(ModelState, TrainReport)> {
    train_with_progress(views, cfg, heldout, |_| {})
}

/// Trains from the seeded initial state, calling `progress` after every
/// sweep.
pub fn train_with_progress(
    views: &DomainViews,
    cfg: &TrainConfig,
    heldout: Option<HeldOut<'_>>,
    mut progress: impl FnMut(&SweepProgress),
) -> Result<(ModelState, TrainReport)> {
    let started = Instant::now();
    let mut state = init_model(cfg, views)?;
    if let Some(g) = &state.link {
        check_domain(g, views)?;
    }
    let initial_objective = objective_or_diverged(&state, views, 0, &state)?;
    let mut report = TrainReport {
        initial_objective,
        objective_trace: Vec::new(),
        heldout_rmse_trace: heldout.map(|_| Vec::new()),
        sweeps_run: 0,
        converged: false,
        wall_time: 0.0,
    };
    let mut previous = initial_objective;
    for sweep in 1..=cfg.max_sweeps {
        let last = state.clone();
        if let Err(e) = run_sweep(&mut state, views, cfg) {
            return Err(match e {
                Error::NonFinite { term } => Error::Diverged {
                    sweep,
                    term,
                    last_state: Box::new(last),
                },
                other => other,
            });
        }
        let objective = objective_or_diverged(&state, views, sweep, &last)?;
        let rmse = heldout.as_ref().map(|h| heldout_rmse(&state, h)).transpose()?;
        report.objective_trace.push(objective);
        if let (Some(trace), Some(r)) = (report.heldout_rmse_trace.as_mut(), rmse) {
            trace.push(r);
        }
        report.sweeps_run = sweep;
        progress(&SweepProgress {
            sweep,
            objective,
            heldout_rmse: rmse,
        });
        if (objective - previous).abs() / (objective.abs() + 1.0) < cfg.rel_tol {
            report.converged = true;
            break;
        }
        previous = objective;
    }
    canonicalize_signs(&mut state);
    report.wall_time = started.elapsed().as_secs_f64();
    Ok((state, report))
}
