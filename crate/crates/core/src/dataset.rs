//! Rating ingestion, dense indexing, the seeded per-domain split and the
//! dual (by-user / by-item) sparse views the solvers iterate over.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header line written at the top of ratings files produced by this crate.
pub const RATINGS_HEADER: &str = "# mdcf-ratings v1";

/// Closed interval of admissible rating values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(Error::Config(format!("invalid rating scale [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

/// One observed rating in dense index space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub domain: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainVocab {
    pub name: String,
    items: Vec<String>,
    item_index: HashMap<String, usize>,
}

impl DomainVocab {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn item(&self, raw: &str) -> Option<usize> {
        self.item_index.get(raw).copied()
    }

    fn intern(&mut self, raw: &str) -> usize {
        if let Some(&k) = self.item_index.get(raw) {
            return k;
        }
        let k = self.items.len();
        self.items.push(raw.to_owned());
        self.item_index.insert(raw.to_owned(), k);
        k
    }
}

/// Raw-ID dictionaries: one user pool shared by every domain, items local
/// to their domain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    users: Vec<String>,
    user_index: HashMap<String, usize>,
    domains: Vec<DomainVocab>,
    domain_index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from ordered ID lists (used when loading models).
    pub fn from_parts(users: Vec<String>, domains: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        for u in &users {
            let before = vocab.users.len();
            if vocab.intern_user(u) != before {
                return Err(Error::Format(format!("duplicate user id '{u}'")));
            }
        }
        for (name, items) in domains {
            let d = vocab.intern_domain(&name);
            if d != vocab.domains.len() - 1 {
                return Err(Error::Format(format!("duplicate domain '{name}'")));
            }
            for it in &items {
                let before = vocab.domains[d].items.len();
                if vocab.domains[d].intern(it) != before {
                    return Err(Error::Format(format!("duplicate item '{it}' in '{name}'")));
                }
            }
        }
        Ok(vocab)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, raw: &str) -> Option<usize> {
        self.user_index.get(raw).copied()
    }

    pub fn domains(&self) -> &[DomainVocab] {
        &self.domains
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domain(&self, name: &str) -> Option<usize> {
        self.domain_index.get(name).copied()
    }

    pub fn domain_names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }

    fn intern_user(&mut self, raw: &str) -> usize {
        if let Some(&j) = self.user_index.get(raw) {
            return j;
        }
        let j = self.users.len();
        self.users.push(raw.to_owned());
        self.user_index.insert(raw.to_owned(), j);
        j
    }

    fn intern_domain(&mut self, name: &str) -> usize {
        if let Some(&i) = self.domain_index.get(name) {
            return i;
        }
        let i = self.domains.len();
        self.domains.push(DomainVocab::new(name));
        self.domain_index.insert(name.to_owned(), i);
        i
    }

    /// Maps every record of `ds` into this vocabulary's index space.
    ///
    /// Users or items this vocabulary has never seen map to `None`; a domain
    /// name it does not know is an error.
    pub fn align(&self, ds: &RatingDataset) -> Result<Vec<AlignedRating>> {
        let domain_map = ds
            .vocab
            .domains
            .iter()
            .map(|d| {
                self.domain(&d.name)
                    .ok_or_else(|| Error::UnknownDomain(d.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ds
            .records
            .iter()
            .map(|r| {
                let domain = domain_map[r.domain];
                let user = self.user(&ds.vocab.users[r.user]);
                let item = self.domains[domain].item(&ds.vocab.domains[r.domain].items[r.item]);
                AlignedRating {
                    domain,
                    user,
                    item,
                    value: r.value,
                }
            })
            .collect())
    }
}

/// A rating mapped into a model's index space; `None` marks an ID unseen in
/// training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedRating {
    pub domain: usize,
    pub user: Option<usize>,
    pub item: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    vocab: Vocabulary,
    records: Vec<Rating>,
    scale: RatingScale,
}

/// Input file layout: columns are always user, item, rating, domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatSpec {
    pub delimiter: char,
    /// Overrides the observed (min, max) range; values outside it are errors.
    pub scale: Option<RatingScale>,
}

impl Default for FormatSpec {
    fn default() -> Self {
        Self {
            delimiter: '\t',
            scale: None,
        }
    }
}

impl RatingDataset {
    /// Builds a dataset from raw `(user, item, value, domain)` rows.
    /// Repeated `(user, item, domain)` keys keep the last value.
    pub fn from_raw<'a, I>(rows: I, scale: Option<RatingScale>) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, f64, &'a str)>,
    {
        let mut b = Builder::default();
        for (n, (u, it, v, d)) in rows.into_iter().enumerate() {
            b.push(n + 1, u, it, v, d, scale)?;
        }
        b.finish(scale)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn records(&self) -> &[Rating] {
        &self.records
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.vocab.n_users()
    }

    pub fn n_domains(&self) -> usize {
        self.vocab.n_domains()
    }

    pub fn domain_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_domains()];
        for r in &self.records {
            counts[r.domain] += 1;
        }
        counts
    }

    /// Records as raw-ID rows, in storage order.
    pub fn raw_rows(&self) -> impl Iterator<Item = (&str, &str, f64, &str)> + '_ {
        self.records.iter().map(move |r| {
            let dom = &self.vocab.domains[r.domain];
            (
                self.vocab.users[r.user].as_str(),
                dom.items[r.item].as_str(),
                r.value,
                dom.name.as_str(),
            )
        })
    }

    /// Writes the canonical four-column format, preceded by the versioned
    /// comment header.
    pub fn write_canonical<W: Write>(&self, mut out: W, delimiter: char) -> std::io::Result<()> {
        writeln!(out, "{RATINGS_HEADER}")?;
        for (u, it, v, d) in self.raw_rows() {
            writeln!(out, "{u}{delimiter}{it}{delimiter}{v}{delimiter}{d}")?;
        }
        Ok(())
    }

    /// Keeps the records at `indices` (in the given order), re-indexing users
    /// and items compactly. All domains of `self` are kept, even empty ones,
    /// so domain order is stable across subsets.
    pub fn subset(&self, indices: &[usize]) -> RatingDataset {
        let mut vocab = Vocabulary::default();
        for d in &self.vocab.domains {
            vocab.intern_domain(&d.name);
        }
        let records = indices
            .iter()
            .map(|&ix| {
                let r = self.records[ix];
                let user = vocab.intern_user(&self.vocab.users[r.user]);
                let item = vocab.domains[r.domain].intern(&self.vocab.domains[r.domain].items[r.item]);
                Rating { user, item, ..r }
            })
            .collect();
        RatingDataset {
            vocab,
            records,
            scale: self.scale,
        }
    }
}

#[derive(Default)]
struct Builder {
    vocab: Vocabulary,
    records: Vec<Rating>,
    seen: HashMap<(usize, usize, usize), usize>,
}

impl Builder {
    fn push(
        &mut self,
        line: usize,
        user: &str,
        item: &str,
        value: f64,
        domain: &str,
        scale: Option<RatingScale>,
    ) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("rating {value} is not finite"),
            });
        }
        if let Some(s) = scale {
            if !s.contains(value) {
                return Err(Error::Parse {
                    line,
                    message: format!("rating {value} outside scale [{}, {}]", s.min, s.max),
                });
            }
        }
        let d = self.vocab.intern_domain(domain);
        let u = self.vocab.intern_user(user);
        let k = self.vocab.domains[d].intern(item);
        match self.seen.get(&(u, k, d)) {
            Some(&pos) => self.records[pos].value = value,
            None => {
                self.seen.insert((u, k, d), self.records.len());
                self.records.push(Rating {
                    user: u,
                    item: k,
                    domain: d,
                    value,
                });
            }
        }
        Ok(())
    }

    fn finish(self, scale: Option<RatingScale>) -> Result<RatingDataset> {
        if self.records.is_empty() {
            return Err(Error::Empty("no rating records".into()));
        }
        let scale = match scale {
            Some(s) => s,
            None => {
                let (lo, hi) = self
                    .records
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                        (lo.min(r.value), hi.max(r.value))
                    });
                RatingScale { min: lo, max: hi }
            }
        };
        Ok(RatingDataset {
            vocab: self.vocab,
            records: self.records,
            scale,
        })
    }
}

/// Parses a delimited ratings file. Blank lines and lines starting with `#`
/// are skipped.
pub fn parse_ratings(path: impl AsRef<Path>, format: &FormatSpec) -> Result<RatingDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(BufReader::new(file), format).map_err(|e| match e {
        Error::Empty(_) => Error::Empty(format!("{} contains no rating records", path.display())),
        other => other,
    })
}

pub fn parse_reader<R: BufRead>(reader: R, format: &FormatSpec) -> Result<RatingDataset> {
    let mut b = Builder::default();
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(format.delimiter).map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                message: format!(
                    "expected 4 fields (user, item, rating, domain), found {}",
                    fields.len()
                ),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                line: lineno,
                message: "empty field".into(),
            });
        }
        let value: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("rating '{}' is not numeric", fields[2]),
        })?;
        b.push(lineno, fields[0], fields[1], value, fields[3], format.scale)?;
    }
    b.finish(format.scale)
}

/// Round-half-up of `fraction * n`.
pub fn train_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) + 0.5).floor() as usize
}

/// Seeded split performed independently inside each domain.
///
/// Domain `i` keeps `round(fraction * |records_i|)` training records. The
/// shuffle for each domain uses its own ChaCha stream, so adding a domain does
/// not change the split of the others.
pub fn split_train_test(
    ds: &RatingDataset,
    fraction: f64,
    seed: u64,
) -> Result<(RatingDataset, RatingDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} not in (0, 1)")));
    }
    let mut per_domain: Vec<Vec<usize>> = vec![Vec::new(); ds.n_domains()];
    for (ix, r) in ds.records.iter().enumerate() {
        per_domain[r.domain].push(ix);
    }
    let mut in_train = vec![false; ds.len()];
    for (d, ixs) in per_domain.iter_mut().enumerate() {
        if ixs.len() < 2 {
            return Err(Error::Split {
                domain: ds.vocab.domains[d].name.clone(),
                count: ixs.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(d as u64);
        ixs.shuffle(&mut rng);
        for &ix in &ixs[..train_size(ixs.len(), fraction)] {
            in_train[ix] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&ix| in_train[ix]);
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Compressed row storage of one orientation of a domain's rating matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    index: Vec<usize>,
    values: Vec<f64>,
}

impl Adjacency {
    /// Entries keep their input order within each row.
    fn from_entries(rows: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut offsets = vec![0usize; rows + 1];
        for &(r, _, _) in entries {
            offsets[r + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        let mut cursor = offsets.clone();
        let mut index = vec![0; entries.len()];
        let mut values = vec![0.0; entries.len()];
        for &(r, c, v) in entries {
            let at = cursor[r];
            index[at] = c;
            values[at] = v;
            cursor[r] += 1;
        }
        Self {
            offsets,
            index,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }

    pub fn row(&self, r: usize) -> impl ExactSizeIterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.index[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Every `(row, col, value)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows()).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    fn map_values(&self, f: &impl Fn(f64) -> Result<f64>) -> Result<Self> {
        Ok(Self {
            offsets: self.offsets.clone(),
            index: self.index.clone(),
            values: self.values.iter().map(|&v| f(v)).collect::<Result<_>>()?,
        })
    }
}

/// Observed entries of one domain, stored both by user and by item.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainView {
    pub by_user: Adjacency,
    pub by_item: Adjacency,
}

impl DomainView {
    /// `entries` are `(user, item, value)` triples.
    pub fn from_entries(n_users: usize, n_items: usize, entries: &[(usize, usize, f64)]) -> Self {
        let transposed: Vec<_> = entries.iter().map(|&(u, i, v)| (i, u, v)).collect();
        Self {
            by_user: Adjacency::from_entries(n_users, entries),
            by_item: Adjacency::from_entries(n_items, &transposed),
        }
    }

    pub fn n_users(&self) -> usize {
        self.by_user.rows()
    }

    pub fn n_items(&self) -> usize {
        self.by_item.rows()
    }

    pub fn count(&self) -> usize {
        self.by_user.nnz()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainViews {
    n_users: usize,
    domains: Vec<DomainView>,
}

impl DomainViews {
    /// `domains[i] = (n_items, entries)`, entries as `(user, item, value)`.
    pub fn from_triplets(n_users: usize, domains: Vec<(usize, Vec<(usize, usize, f64)>)>) -> Self {
        Self {
            n_users,
            domains: domains
                .into_iter()
                .map(|(n_items, e)| DomainView::from_entries(n_users, n_items, &e))
                .collect(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domain(&self, i: usize) -> &DomainView {
        &self.domains[i]
    }

    pub fn domains(&self) -> &[DomainView] {
        &self.domains
    }

    pub fn n_items(&self) -> Vec<usize> {
        self.domains.iter().map(DomainView::n_items).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.domains.iter().map(DomainView::count).collect()
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }

    /// Restricts to a single domain, keeping the full user pool.
    pub fn single(&self, i: usize) -> DomainViews {
        DomainViews {
            n_users: self.n_users,
            domains: vec![self.domains[i].clone()],
        }
    }

    /// Applies `f` to every stored rating (e.g. a link transform).
    pub fn map_values(&self, f: impl Fn(f64) -> Result<f64>) -> Result<DomainViews> {
        let domains = self
            .domains
            .iter()
            .map(|d| {
                Ok(DomainView {
                    by_user: d.by_user.map_values(&f)?,
                    by_item: d.by_item.map_values(&f)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DomainViews {
            n_users: self.n_users,
            domains,
        })
    }
}

pub fn build_views(ds: &RatingDataset) -> Result<DomainViews> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset has no records".into()));
    }
    let mut per_domain: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); ds.n_domains()];
    for r in &ds.records {
        per_domain[r.domain].push((r.user, r.item, r.value));
    }
    Ok(DomainViews::from_triplets(
        ds.n_users(),
        ds.vocab
            .domains
            .iter()
            .map(DomainVocab::n_items)
            .zip(per_domain)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(rows: &[(&str, &str, f64, &str)]) -> RatingDataset {
        RatingDataset::from_raw(rows.iter().copied(), None).unwrap()
    }

    #[test]
    fn counts_users_and_domains() {
        let d = ds(&[("u1", "a", 4.0, "d0"), ("u2", "b", 3.0, "d0"), ("u1", "c", 5.0, "d1")]);
        assert_eq!(d.n_users(), 2);
        assert_eq!(d.n_domains(), 2);
        assert_eq!(d.domain_counts(), vec![2, 1]);
        assert_eq!(d.scale(), RatingScale { min: 3.0, max: 5.0 });
    }

    #[test]
    fn duplicates_keep_last_value() {
        let d = ds(&[("u1", "a", 3.0, "d0"), ("u1", "a", 5.0, "d0")]);
        assert_eq!(d.len(), 1);
        assert_eq!(d.records()[0].value, 5.0);
    }

    #[test]
    fn same_item_id_in_two_domains_is_two_items() {
        let d = ds(&[("u1", "a", 3.0, "d0"), ("u1", "a", 5.0, "d1")]);
        assert_eq!(d.len(), 2);
        assert_eq!(d.vocab().domains()[0].n_items(), 1);
        assert_eq!(d.vocab().domains()[1].n_items(), 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let fmt = FormatSpec::default();
        let err = parse_reader("u\ti\t3\td\nu\ti\n".as_bytes(), &fmt).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_reader("# header\nu\ti\tfive\td\n".as_bytes(), &fmt).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(matches!(
            parse_reader("".as_bytes(), &fmt).unwrap_err(),
            Error::Empty(_)
        ));
    }

    #[test]
    fn scale_override_rejects_out_of_range() {
        let fmt = FormatSpec {
            scale: Some(RatingScale::new(1.0, 5.0).unwrap()),
            ..Default::default()
        };
        let err = parse_reader("u\ti\t6\td\n".as_bytes(), &fmt).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let ok = parse_reader("u\ti\t2\td\n".as_bytes(), &fmt).unwrap();
        assert_eq!(ok.scale(), RatingScale { min: 1.0, max: 5.0 });
    }

    #[test]
    fn custom_delimiter_and_comments() {
        let fmt = FormatSpec {
            delimiter: ',',
            scale: None,
        };
        let d = parse_reader("# c\n\nu1,i1,2.5,x\r\nu2,i1,4,x\n".as_bytes(), &fmt).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.records()[0].value, 2.5);
    }

    #[test]
    fn canonical_write_reparses_to_same_dataset() {
        let d = ds(&[("u1", "a", 3.5, "d0"), ("u2", "b", 1.0, "d1"), ("u1", "b", 2.0, "d1")]);
        let mut buf = Vec::new();
        d.write_canonical(&mut buf, '\t').unwrap();
        let back = parse_reader(buf.as_slice(), &FormatSpec::default()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn split_sizes_round_half_up_per_domain() {
        let mut rows = Vec::new();
        let names: Vec<String> = (0..150).map(|i| format!("x{i}")).collect();
        for (i, n) in names.iter().enumerate() {
            rows.push((n.as_str(), n.as_str(), 1.0, if i < 100 { "big" } else { "small" }));
        }
        let d = ds(&rows);
        let (train, test) = split_train_test(&d, 0.8, 3).unwrap();
        assert_eq!(train.domain_counts(), vec![80, 40]);
        assert_eq!(test.domain_counts(), vec![20, 10]);

        let ten = ds(&rows[..10]);
        let (tr, te) = split_train_test(&ten, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(train_size(5, 0.5), 3);
        assert_eq!(train_size(3, 0.5), 2);
    }

    #[test]
    fn split_is_deterministic_and_rejects_tiny_domains() {
        let rows: Vec<(String, String)> = (0..40).map(|i| (format!("u{}", i % 7), format!("i{i}"))).collect();
        let d = RatingDataset::from_raw(
            rows.iter().map(|(u, i)| (u.as_str(), i.as_str(), 3.0, "d")),
            None,
        )
        .unwrap();
        let a = split_train_test(&d, 0.8, 11).unwrap();
        let b = split_train_test(&d, 0.8, 11).unwrap();
        assert_eq!(a, b);
        let c = split_train_test(&d, 0.8, 12).unwrap();
        assert_ne!(a.0.raw_rows().collect::<Vec<_>>(), c.0.raw_rows().collect::<Vec<_>>());

        let tiny = ds(&[("u", "a", 1.0, "d0"), ("u", "b", 1.0, "d0"), ("u", "c", 1.0, "d1")]);
        assert!(matches!(
            split_train_test(&tiny, 0.8, 0),
            Err(Error::Split { count: 1, .. })
        ));
        assert!(split_train_test(&d, 1.0, 0).is_err());
    }

    #[test]
    fn single_record_view() {
        let d = ds(&[("u0", "i0", 4.0, "d0")]);
        let v = build_views(&d).unwrap();
        assert_eq!(v.domain(0).by_user.row(0).collect::<Vec<_>>(), vec![(0, 4.0)]);
        assert_eq!(v.domain(0).by_item.row(0).collect::<Vec<_>>(), vec![(0, 4.0)]);
    }

    #[test]
    fn empty_domain_view_has_empty_rows() {
        let v = DomainViews::from_triplets(3, vec![(2, vec![])]);
        assert!((0..3).all(|j| v.domain(0).by_user.row_len(j) == 0));
        assert_eq!(v.counts(), vec![0]);
    }

    #[test]
    fn align_maps_unknown_ids_to_none() {
        let train = ds(&[("u1", "a", 3.0, "d0"), ("u2", "b", 4.0, "d1")]);
        let test = ds(&[("u1", "b", 2.0, "d1"), ("u9", "a", 1.0, "d0"), ("u2", "zz", 5.0, "d1")]);
        let aligned = train.vocab().align(&test).unwrap();
        assert_eq!(aligned[0], AlignedRating { domain: 1, user: Some(0), item: Some(0), value: 2.0 });
        assert_eq!(aligned[1].user, None);
        assert_eq!(aligned[2].item, None);
        let other = ds(&[("u1", "a", 3.0, "nope")]);
        assert!(matches!(train.vocab().align(&other), Err(Error::UnknownDomain(_))));
    }

    fn arb_rows() -> impl Strategy<Value = Vec<(u8, u8, u8, u8)>> {
        proptest::collection::vec((0u8..12, 0u8..15, 1u8..6, 0u8..3), 1..80)
    }

    fn to_dataset(rows: &[(u8, u8, u8, u8)]) -> RatingDataset {
        let owned: Vec<(String, String, f64, String)> = rows
            .iter()
            .map(|&(u, i, v, d)| (format!("u{u}"), format!("i{i}"), v as f64, format!("d{d}")))
            .collect();
        RatingDataset::from_raw(
            owned.iter().map(|(u, i, v, d)| (u.as_str(), i.as_str(), *v, d.as_str())),
            None,
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn views_are_transpose_consistent(rows in arb_rows()) {
            let d = to_dataset(&rows);
            let v = build_views(&d).unwrap();
            prop_assert_eq!(v.total(), d.len());
            prop_assert_eq!(v.counts(), d.domain_counts());
            for (i, dom) in v.domains().iter().enumerate() {
                let mut from_users: Vec<(usize, usize, u64)> =
                    dom.by_user.entries().map(|(u, k, x)| (u, k, x.to_bits())).collect();
                let mut from_items: Vec<(usize, usize, u64)> =
                    dom.by_item.entries().map(|(k, u, x)| (u, k, x.to_bits())).collect();
                let mut records: Vec<(usize, usize, u64)> = d.records().iter()
                    .filter(|r| r.domain == i)
                    .map(|r| (r.user, r.item, r.value.to_bits()))
                    .collect();
                from_users.sort_unstable();
                from_items.sort_unstable();
                records.sort_unstable();
                prop_assert_eq!(&from_users, &records);
                prop_assert_eq!(&from_items, &records);
            }
        }

        #[test]
        fn split_partitions_each_domain(rows in arb_rows(), seed in any::<u64>(), f in 0.05f64..0.95) {
            let d = to_dataset(&rows);
            prop_assume!(d.domain_counts().iter().all(|&c| c >= 2));
            let (train, test) = split_train_test(&d, f, seed).unwrap();
            for (i, &n) in d.domain_counts().iter().enumerate() {
                prop_assert_eq!(train.domain_counts()[i] + test.domain_counts()[i], n);
                prop_assert_eq!(train.domain_counts()[i], train_size(n, f));
            }
            let mut all: Vec<_> = train.raw_rows().chain(test.raw_rows())
                .map(|(u, i, v, dm)| (u.to_owned(), i.to_owned(), v.to_bits(), dm.to_owned()))
                .collect();
            let mut orig: Vec<_> = d.raw_rows()
                .map(|(u, i, v, dm)| (u.to_owned(), i.to_owned(), v.to_bits(), dm.to_owned()))
                .collect();
            all.sort();
            orig.sort();
            prop_assert_eq!(all, orig);
        }
    }
}
