//! RMSE scoring and correlation reporting.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::dataset::RatingDataset;
use crate::error::{Error, Result};
use crate::model_io::TrainedModel;
use crate::trainer::{predict, Fallback};

/// Root mean squared error over `(truth, prediction)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("rmse of an empty list".into()));
    }
    let sse: f64 = pairs.iter().map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainScore {
    pub name: String,
    pub count: usize,
    /// `None` when the domain has no test records.
    pub rmse: Option<f64>,
    /// Predictions that used the cold-start or saturation fallback.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub domains: Vec<DomainScore>,
    pub total_count: usize,
    /// Pooled over every test record (single denominator).
    pub total_rmse: f64,
    pub total_fallbacks: usize,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# mdcf-eval v1\ndomain\tcount\trmse\tfallbacks\n");
        for d in &self.domains {
            let rmse = d.rmse.map(|r| format!("{r:.6}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{}\t{}\t{rmse}\t{}", d.name, d.count, d.fallbacks);
        }
        let _ = writeln!(
            out,
            "TOTAL\t{}\t{:.6}\t{}",
            self.total_count, self.total_rmse, self.total_fallbacks
        );
        out
    }
}

/// Scores `test` against `model`, per domain and pooled. Domains are listed in
/// the model's order; a test domain the model does not know is an error.
pub fn evaluate(model: &TrainedModel, test: &RatingDataset) -> Result<EvalReport> {
    let aligned = model.vocab.align(test)?;
    let k = model.state.n_domains();
    let mut pairs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k];
    let mut fallbacks = vec![0usize; k];
    for r in &aligned {
        let p = predict(&model.state, r.user, r.item, r.domain, model.scale)?;
        if p.fallback.is_some() {
            fallbacks[r.domain] += 1;
        }
        pairs[r.domain].push((r.value, p.value));
    }
    let domains = model
        .vocab
        .domains()
        .iter()
        .zip(&pairs)
        .zip(&fallbacks)
        .map(|((dom, p), &f)| DomainScore {
            name: dom.name.clone(),
            count: p.len(),
            rmse: rmse(p).ok(),
            fallbacks: f,
        })
        .collect();
    let pooled: Vec<(f64, f64)> = pairs.concat();
    Ok(EvalReport {
        domains,
        total_count: pooled.len(),
        total_rmse: rmse(&pooled)?,
        total_fallbacks: fallbacks.iter().sum(),
    })
}

/// Counts of predictions by fallback kind, for diagnostics.
pub fn fallback_counts(model: &TrainedModel, test: &RatingDataset) -> Result<[usize; 3]> {
    let mut counts = [0; 3];
    for r in model.vocab.align(test)? {
        match predict(&model.state, r.user, r.item, r.domain, model.scale)?.fallback {
            Some(Fallback::UnknownUser) => counts[0] += 1,
            Some(Fallback::UnknownItem) => counts[1] += 1,
            Some(Fallback::Saturated) => counts[2] += 1,
            None => {}
        }
    }
    Ok(counts)
}

/// `ρ_ab = Ω_ab / √(Ω_aa Ω_bb)` with an exact unit diagonal.
pub fn correlation_matrix(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = omega.nrows();
    for a in 0..k {
        if !(omega[(a, a)] >= 1e-300) {
            return Err(Error::Numeric(format!(
                "domain {a} has degenerate variance {:e}",
                omega[(a, a)]
            )));
        }
    }
    Ok(DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            1.0
        } else {
            let rho = 0.5 * (omega[(a, b)] + omega[(b, a)]) / (omega[(a, a)] * omega[(b, b)]).sqrt();
            rho.clamp(-1.0, 1.0)
        }
    }))
}

/// Elementwise mean of several same-sized matrices.
pub fn mean_matrix(mats: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Empty("no matrices to average".into()))?;
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    for m in mats {
        if m.shape() != first.shape() {
            return Err(Error::Config("correlation matrices differ in size".into()));
        }
        acc += m;
    }
    Ok(acc / mats.len() as f64)
}

/// Tab-delimited `K × K` block with domain labels on both axes.
pub fn format_correlation(title: &str, labels: &[String], rho: &DMatrix<f64>) -> String {
    let mut out = format!("# {title}\n");
    for l in labels {
        out.push('\t');
        out.push_str(l);
    }
    out.push('\n');
    for (a, l) in labels.iter().enumerate() {
        out.push_str(l);
        for b in 0..rho.ncols() {
            let _ = write!(out, "\t{:.4}", rho[(a, b)]);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[(1.0, 1.0), (4.0, 4.0)]).unwrap(), 0.0);
        assert_eq!(rmse(&[(3.0, 5.0)]).unwrap(), 2.0);
        assert_eq!(rmse(&[(1.0, 0.0), (0.0, 1.0), (2.0, 1.0), (1.0, 2.0)]).unwrap(), 1.0);
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn correlation_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(correlation_matrix(&id).unwrap(), id);
        let om = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0]);
        let rho = correlation_matrix(&om).unwrap();
        assert_eq!(rho, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(correlation_matrix(&bad).is_err());
    }

    #[test]
    fn correlation_block_is_labelled() {
        let rho = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let text = format_correlation("run", &["A".into(), "B".into()], &rho);
        assert_eq!(text, "# run\n\tA\tB\nA\t1.0000\t0.5000\nB\t0.5000\t1.0000\n");
    }

    proptest! {
        #[test]
        fn rmse_properties(pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40), s in 0.1f64..10.0) {
            let self_pairs: Vec<_> = pairs.iter().map(|&(t, _)| (t, t)).collect();
            prop_assert_eq!(rmse(&self_pairs).unwrap(), 0.0);
            let base = rmse(&pairs).unwrap();
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert!((rmse(&rev).unwrap() - base).abs() <= 1e-12 * (1.0 + base));
            let scaled: Vec<_> = pairs.iter().map(|&(t, p)| (t, t + s * (p - t))).collect();
            prop_assert!((rmse(&scaled).unwrap() - s * base).abs() <= 1e-9 * (1.0 + s * base));
        }

        #[test]
        fn correlation_is_bounded_with_unit_diagonal(
            vals in proptest::collection::vec(-3.0f64..3.0, 12), k in 2usize..4
        ) {
            let rows = 12 / k;
            let u = DMatrix::from_column_slice(rows, k, &vals[..rows * k]);
            let omega = u.transpose() * &u;
            prop_assume!((0..k).all(|a| omega[(a, a)] > 1e-6));
            let rho = correlation_matrix(&omega).unwrap();
            for a in 0..k {
                prop_assert_eq!(rho[(a, a)], 1.0);
                for b in 0..k {
                    prop_assert!(rho[(a, b)].abs() <= 1.0);
                    prop_assert_eq!(rho[(a, b)], rho[(b, a)]);
                }
            }
        }
    }
}
