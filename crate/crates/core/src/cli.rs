//! Batch command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::baselines::train_pmf_domains;
use crate::dataset::{build_views, parse_ratings, split_train_test, FormatSpec, RatingDataset};
use crate::error::{Error, Result};
use crate::evaluation::{correlation_matrix, evaluate, format_correlation, mean_matrix};
use crate::model::TrainConfig;
use crate::model_io::TrainedModel;
use crate::prepare::{parse_category_map, prepare_book_crossing, prepare_movielens_files};
use crate::trainer::{predict, train_with_progress, Fallback, HeldOut};

#[derive(Debug, Parser)]
#[command(name = "mdcf", version, about = "Multi-domain collaborative filtering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Canonical,
    Movielens,
    BookCrossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Pmf,
    Mcf,
    #[value(name = "mcf-lf")]
    McfLf,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pmf => "pmf",
            Method::Mcf => "mcf",
            Method::McfLf => "mcf-lf",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raw dump into the canonical user/item/rating/domain file.
    Prepare {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Ratings dump (u.data, BX-Book-Ratings.csv, or a canonical file).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// MovieLens u.item (genre flags).
        #[arg(long)]
        items: Option<PathBuf>,
        /// MovieLens u.genre; the standard 19 genres are assumed if absent.
        #[arg(long)]
        genres: Option<PathBuf>,
        /// Book-Crossing item → category map (`isbn<TAB>category`).
        #[arg(long)]
        categories: Option<PathBuf>,
        /// Number of most popular genres kept as domains (MovieLens).
        #[arg(long, default_value_t = 5)]
        domains: usize,
    },
    /// Seeded per-domain train/test split.
    Split {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        /// Output path for the training part.
        #[arg(long)]
        train: PathBuf,
        /// Output path for the test part.
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "\t")]
        delimiter: char,
    },
    /// Train a model and write it to --model-out.
    Train {
        #[arg(long)]
        train: PathBuf,
        /// Optional held-out file; its RMSE is logged after every sweep.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        max_sweeps: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        model_out: PathBuf,
        /// Per-sweep objective trace.
        #[arg(long)]
        report_out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// JSON file with TrainConfig fields; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "\t")]
        delimiter: char,
    },
    /// Per-domain and pooled RMSE of a model on a test file.
    Eval {
        #[arg(long)]
        model_in: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report_out: Option<PathBuf>,
        #[arg(long, default_value = "\t")]
        delimiter: char,
    },
    /// Predict ratings, either for every row of --test or for one query.
    Predict {
        #[arg(long)]
        model_in: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        item: Option<String>,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        report_out: Option<PathBuf>,
        #[arg(long, default_value = "\t")]
        delimiter: char,
    },
    /// Normalized domain covariance of one or more models, plus their mean.
    Correlation {
        #[arg(long = "model-in", required = true)]
        model_in: Vec<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn write_dataset(ds: &RatingDataset, path: &Path, delimiter: char) -> Result<()> {
    let mut buf = Vec::new();
    ds.write_canonical(&mut buf, delimiter).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn format(delimiter: char) -> FormatSpec {
    FormatSpec {
        delimiter,
        scale: None,
    }
}

/// Resolves the training configuration: defaults, then the JSON file, then
/// explicit flags.
pub fn resolve_config(
    config: Option<&Path>,
    method: Method,
    d: Option<usize>,
    seed: u64,
    max_sweeps: Option<usize>,
    tol: Option<f64>,
) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    cfg.link_enabled = method == Method::McfLf;
    if let Some(d) = d {
        cfg.latent_dim = d;
    }
    if let Some(n) = max_sweeps {
        cfg.max_sweeps = n;
    }
    if let Some(t) = tol {
        cfg.rel_tol = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains `method` on `train`, optionally tracking held-out RMSE on `test`.
/// Returns the model and the trace report text.
pub fn train_model(
    train: &RatingDataset,
    test: Option<&RatingDataset>,
    method: Method,
    cfg: &TrainConfig,
    mut log: impl FnMut(&str),
) -> Result<(TrainedModel, String)> {
    let views = build_views(train)?;
    let scale = cfg.rating_scale.unwrap_or_else(|| train.scale());
    match method {
        Method::Pmf => {
            let (state, reports) = train_pmf_domains(&views, cfg)?;
            let mut text = String::new();
            for (dom, r) in train.vocab().domains().iter().zip(&reports) {
                log(&format!(
                    "domain={} sweeps={} objective={:e} converged={}",
                    dom.name,
                    r.sweeps_run,
                    r.objective_trace.last().copied().unwrap_or(r.initial_objective),
                    r.converged
                ));
                text.push_str(&format!("# domain {}\n", dom.name));
                text.push_str(&r.to_text());
            }
            Ok((TrainedModel::new(method.as_str(), train.vocab().clone(), scale, state)?, text))
        }
        Method::Mcf | Method::McfLf => {
            let aligned = test.map(|t| train.vocab().align(t)).transpose()?;
            let heldout = aligned.as_deref().map(|ratings| HeldOut { ratings, scale });
            let (state, report) = train_with_progress(&views, cfg, heldout, |p| log(&p.to_string()))?;
            let text = report.to_text();
            Ok((TrainedModel::new(method.as_str(), train.vocab().clone(), scale, state)?, text))
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare {
            kind,
            input,
            output,
            items,
            genres,
            categories,
            domains,
        } => match kind {
            Kind::Canonical => {
                let bytes = fs::read(&input).map_err(|e| Error::io(&input, e))?;
                fs::write(&output, bytes).map_err(|e| Error::io(&output, e))
            }
            Kind::Movielens => {
                let items = items.ok_or_else(|| {
                    Error::Config("--kind movielens needs --items <u.item> for genre flags".into())
                })?;
                let ds = prepare_movielens_files(&input, &items, genres.as_deref(), domains)?;
                write_dataset(&ds, &output, '\t')
            }
            Kind::BookCrossing => {
                let cats = categories.ok_or_else(|| {
                    Error::Config("--kind book-crossing needs --categories <isbn<TAB>category file>".into())
                })?;
                let map_text = fs::read_to_string(&cats).map_err(|e| Error::io(&cats, e))?;
                let text = fs::read(&input).map_err(|e| Error::io(&input, e))?;
                let ds = prepare_book_crossing(&String::from_utf8_lossy(&text), &parse_category_map(&map_text)?)?;
                write_dataset(&ds, &output, '\t')
            }
        },
        Command::Split {
            ratings,
            fraction,
            seed,
            train,
            test,
            delimiter,
        } => {
            let ds = parse_ratings(&ratings, &format(delimiter))?;
            let (tr, te) = split_train_test(&ds, fraction, seed)?;
            write_dataset(&tr, &train, delimiter)?;
            write_dataset(&te, &test, delimiter)
        }
        Command::Train {
            train,
            test,
            method,
            d,
            seed,
            max_sweeps,
            tol,
            model_out,
            report_out,
            threads,
            config,
            delimiter,
        } => {
            let cfg = resolve_config(config.as_deref(), method, d, seed, max_sweeps, tol)?;
            let fmt = format(delimiter);
            let train_ds = parse_ratings(&train, &fmt)?;
            let test_ds = test.map(|p| parse_ratings(p, &fmt)).transpose()?;
            let job = || train_model(&train_ds, test_ds.as_ref(), method, &cfg, |l| eprintln!("{l}"));
            let (model, trace) = match threads {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                    .install(job)?,
                None => job()?,
            };
            model.save(&model_out)?;
            if let Some(p) = report_out {
                emit(Some(&p), &trace)?;
            }
            Ok(())
        }
        Command::Eval {
            model_in,
            test,
            report_out,
            delimiter,
        } => {
            let model = TrainedModel::load(&model_in)?;
            let ds = parse_ratings(&test, &format(delimiter))?;
            emit(report_out.as_deref(), &evaluate(&model, &ds)?.to_text())
        }
        Command::Predict {
            model_in,
            test,
            user,
            item,
            domain,
            report_out,
            delimiter,
        } => {
            let model = TrainedModel::load(&model_in)?;
            let text = match (test, user, item, domain) {
                (Some(path), None, None, None) => {
                    let ds = parse_ratings(&path, &format(delimiter))?;
                    predict_rows(&model, &ds)?
                }
                (None, Some(u), Some(i), Some(d)) => predict_one(&model, &u, &i, &d)?,
                _ => {
                    return Err(Error::Config(
                        "predict needs either --test <file> or all of --user, --item, --domain".into(),
                    ))
                }
            };
            emit(report_out.as_deref(), &text)
        }
        Command::Correlation { model_in, report_out } => {
            let mut text = String::from("# mdcf-correlation v1\n");
            let mut mats = Vec::new();
            let mut labels: Option<Vec<String>> = None;
            for p in &model_in {
                let model = TrainedModel::load(p)?;
                let names = model.vocab.domain_names();
                if labels.as_ref().is_some_and(|l| *l != names) {
                    return Err(Error::Config("models have different domains".into()));
                }
                let rho = correlation_matrix(&model.state.omega)?;
                text.push_str(&format_correlation(&format!("run {}", p.display()), &names, &rho));
                mats.push(rho);
                labels = Some(names);
            }
            let mean = mean_matrix(&mats)?;
            text.push_str(&format_correlation(
                &format!("mean of {} run(s)", mats.len()),
                labels.as_deref().unwrap_or_default(),
                &mean,
            ));
            emit(report_out.as_deref(), &text)
        }
    }
}

fn flag_name(f: Option<Fallback>) -> &'static str {
    match f {
        None => "-",
        Some(Fallback::UnknownUser) => "unknown_user",
        Some(Fallback::UnknownItem) => "unknown_item",
        Some(Fallback::Saturated) => "saturated",
    }
}

fn predict_rows(model: &TrainedModel, ds: &RatingDataset) -> Result<String> {
    let mut out = String::from("# mdcf-predictions v1\nuser\titem\tdomain\tprediction\tflag\n");
    for ((u, i, _, d), r) in ds.raw_rows().zip(model.vocab.align(ds)?) {
        let p = predict(&model.state, r.user, r.item, r.domain, model.scale)?;
        out.push_str(&format!("{u}\t{i}\t{d}\t{:.6}\t{}\n", p.value, flag_name(p.fallback)));
    }
    Ok(out)
}

fn predict_one(model: &TrainedModel, user: &str, item: &str, domain: &str) -> Result<String> {
    let di = model
        .vocab
        .domain(domain)
        .ok_or_else(|| Error::UnknownDomain(domain.to_owned()))?;
    let p = predict(
        &model.state,
        model.vocab.user(user),
        model.vocab.domains()[di].item(item),
        di,
        model.scale,
    )?;
    Ok(format!("{:.6}\t{}\n", p.value, flag_name(p.fallback)))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(cli)
}
