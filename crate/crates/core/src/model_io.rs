//! Self-describing text format for trained models.
//!
//! ```text
//! mdcf-model 1
//! method mcf
//! latent_dim <d>
//! users <m>
//! domains <K>
//! scale <min> <max>
//! omega_jitter <x>
//! link none | link <a> <b> <c> <shift>
//! user_ids            # m lines, one raw id each
//! domain <i> <n_i> <name>
//! item_ids            # n_i lines
//! noise_var <σ²>
//! user_prior_var <λ²>
//! item_prior_var <η²>
//! U                   # d rows of m numbers (row-major d × m)
//! V                   # d rows of n_i numbers
//! omega               # K rows of K numbers
//! end
//! ```
//!
//! Numbers are written in shortest round-trip scientific notation, so
//! write → read → write is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::dataset::{RatingScale, Vocabulary};
use crate::error::{Error, Result};
use crate::link::LinkParams;
use crate::model::ModelState;

pub const MODEL_MAGIC: &str = "mdcf-model";
pub const MODEL_VERSION: u32 = 1;

/// A trained state bundled with the ID dictionaries and rating scale needed
/// to predict for raw IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub method: String,
    pub vocab: Vocabulary,
    pub scale: RatingScale,
    pub state: ModelState,
}

impl TrainedModel {
    pub fn new(method: impl Into<String>, vocab: Vocabulary, scale: RatingScale, state: ModelState) -> Result<Self> {
        if vocab.n_users() != state.n_users || vocab.n_domains() != state.n_domains() {
            return Err(Error::Format("vocabulary does not match model dimensions".into()));
        }
        for (i, dom) in vocab.domains().iter().enumerate() {
            if dom.n_items() != state.n_items(i) {
                return Err(Error::Format(format!("item count mismatch in domain '{}'", dom.name)));
            }
        }
        Ok(Self {
            method: method.into(),
            vocab,
            scale,
            state,
        })
    }

    pub fn to_text(&self) -> String {
        let s = &self.state;
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(out, "method {}", self.method);
        let _ = writeln!(out, "latent_dim {}", s.latent_dim);
        let _ = writeln!(out, "users {}", s.n_users);
        let _ = writeln!(out, "domains {}", s.n_domains());
        let _ = writeln!(out, "scale {:e} {:e}", self.scale.min, self.scale.max);
        let _ = writeln!(out, "omega_jitter {:e}", s.omega_jitter);
        match &s.link {
            None => out.push_str("link none\n"),
            Some(g) => {
                let _ = writeln!(out, "link {:e} {:e} {:e} {:e}", g.a, g.b, g.c, g.shift);
            }
        }
        out.push_str("user_ids\n");
        for u in self.vocab.users() {
            let _ = writeln!(out, "{u}");
        }
        for (i, dom) in self.vocab.domains().iter().enumerate() {
            let _ = writeln!(out, "domain {i} {} {}", dom.n_items(), dom.name);
            out.push_str("item_ids\n");
            for it in dom.items() {
                let _ = writeln!(out, "{it}");
            }
            let _ = writeln!(out, "noise_var {:e}", s.noise_var[i]);
            let _ = writeln!(out, "user_prior_var {:e}", s.user_prior_var[i]);
            let _ = writeln!(out, "item_prior_var {:e}", s.item_prior_var[i]);
            out.push_str("U\n");
            write_matrix(&mut out, &s.user_factors[i]);
            out.push_str("V\n");
            write_matrix(&mut out, &s.item_factors[i]);
        }
        out.push_str("omega\n");
        write_matrix(&mut out, &s.omega);
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        let header = r.line()?;
        let version = header
            .strip_prefix(MODEL_MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::Format("missing model header".into()))?;
        if version != MODEL_VERSION.to_string() {
            return Err(Error::Format(format!("unsupported model version '{version}'")));
        }
        let method = r.keyed("method")?.to_owned();
        let d: usize = r.keyed_num("latent_dim")?;
        let m: usize = r.keyed_num("users")?;
        let k: usize = r.keyed_num("domains")?;
        let scale_vals = r.keyed_nums::<f64>("scale")?;
        if scale_vals.len() != 2 {
            return Err(r.err("scale needs two values"));
        }
        let scale = RatingScale::new(scale_vals[0], scale_vals[1])?;
        let omega_jitter: f64 = r.keyed_num("omega_jitter")?;
        let link_line = r.keyed("link")?;
        let link = if link_line == "none" {
            None
        } else {
            let v = parse_nums::<f64>(link_line).map_err(|m| r.err(&m))?;
            if v.len() != 4 {
                return Err(r.err("link needs four values"));
            }
            Some(LinkParams::new(v[0], v[1], v[2], v[3])?)
        };
        r.expect("user_ids")?;
        let users: Vec<String> = (0..m).map(|_| r.line().map(str::to_owned)).collect::<Result<_>>()?;

        let mut domains = Vec::with_capacity(k);
        let mut user_factors = Vec::with_capacity(k);
        let mut item_factors = Vec::with_capacity(k);
        let (mut noise_var, mut user_prior_var, mut item_prior_var) = (vec![], vec![], vec![]);
        for i in 0..k {
            let rest = r.keyed("domain")?;
            let mut parts = rest.splitn(3, ' ');
            let idx: usize = parse_one(parts.next()).map_err(|m| r.err(&m))?;
            let n: usize = parse_one(parts.next()).map_err(|m| r.err(&m))?;
            let name = parts.next().ok_or_else(|| r.err("domain name missing"))?.to_owned();
            if idx != i {
                return Err(r.err("domains out of order"));
            }
            r.expect("item_ids")?;
            let items: Vec<String> = (0..n).map(|_| r.line().map(str::to_owned)).collect::<Result<_>>()?;
            domains.push((name, items));
            noise_var.push(r.keyed_num("noise_var")?);
            user_prior_var.push(r.keyed_num("user_prior_var")?);
            item_prior_var.push(r.keyed_num("item_prior_var")?);
            r.expect("U")?;
            user_factors.push(r.matrix(d, m)?);
            r.expect("V")?;
            item_factors.push(r.matrix(d, n)?);
        }
        r.expect("omega")?;
        let omega = r.matrix(k, k)?;
        r.expect("end")?;
        let vocab = Vocabulary::from_parts(users, domains)?;
        let state = ModelState {
            latent_dim: d,
            n_users: m,
            user_factors,
            item_factors,
            omega,
            noise_var,
            user_prior_var,
            item_prior_var,
            link,
            omega_jitter,
        };
        TrainedModel::new(method, vocab, scale, state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        let mut first = true;
        for c in 0..m.ncols() {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{:e}", m[(r, c)]);
        }
        out.push('\n');
    }
}

fn parse_one<T: FromStr>(s: Option<&str>) -> std::result::Result<T, String> {
    let s = s.ok_or_else(|| "missing value".to_string())?;
    s.parse().map_err(|_| format!("cannot parse '{s}'"))
}

fn parse_nums<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("cannot parse '{t}'")))
        .collect()
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    lineno: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines(),
            lineno: 0,
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Format(format!("line {}: {msg}", self.lineno))
    }

    fn line(&mut self) -> Result<&'a str> {
        self.lineno += 1;
        self.lines.next().ok_or_else(|| self.err("unexpected end of file"))
    }

    fn expect(&mut self, tag: &str) -> Result<()> {
        let l = self.line()?;
        if l == tag {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{tag}', found '{l}'")))
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let l = self.line()?;
        l.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.err(&format!("expected '{key} ...', found '{l}'")))
    }

    fn keyed_num<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.keyed(key)?;
        v.parse().map_err(|_| self.err(&format!("cannot parse {key} '{v}'")))
    }

    fn keyed_nums<T: FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        let v = self.keyed(key)?;
        parse_nums(v).map_err(|m| self.err(&m))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let l = self.line()?;
            let vals: Vec<f64> = if cols == 0 {
                Vec::new()
            } else {
                parse_nums(l).map_err(|e| self.err(&e))?
            };
            if vals.len() != cols {
                return Err(self.err(&format!("expected {cols} values, found {}", vals.len())));
            }
            for (c, v) in vals.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        Ok(m)
    }
}
