//! Converters from public rating dumps to the canonical four-column format.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::dataset::{RatingDataset, RatingScale};
use crate::error::{Error, Result};

/// Genre columns of MovieLens-100K `u.item`, in file order.
pub const MOVIELENS_GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

fn read_lossy(path: &Path) -> Result<String> {
    // u.item is Latin-1; only ASCII fields are used.
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// Genre names from a `u.genre` file (`name|index` per line).
pub fn parse_genre_names(text: &str) -> Result<Vec<String>> {
    let mut named: Vec<(usize, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, idx) = line.rsplit_once('|').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: "expected 'name|index'".into(),
        })?;
        let idx: usize = idx.trim().parse().map_err(|_| Error::Parse {
            line: n + 1,
            message: format!("bad genre index '{idx}'"),
        })?;
        named.push((idx, name.to_owned()));
    }
    named.sort();
    Ok(named.into_iter().map(|(_, n)| n).collect())
}

/// Movie id → genre flags, from `u.item`.
pub fn parse_movie_genres(text: &str, n_genres: usize) -> Result<HashMap<String, Vec<bool>>> {
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 1 + n_genres {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected at least {} '|' fields", 1 + n_genres),
            });
        }
        let flags = fields[fields.len() - n_genres..]
            .iter()
            .map(|f| match f.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse {
                    line: n + 1,
                    message: format!("genre flag '{other}' is not 0/1"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(fields[0].trim().to_owned(), flags);
    }
    if out.is_empty() {
        return Err(Error::Empty("item file lists no movies".into()));
    }
    Ok(out)
}

/// MovieLens → genre domains.
///
/// Genres are ranked by number of ratings; the top `n_domains` become the
/// domains. A movie carrying several of them is assigned to the one ranked
/// highest; movies with none are dropped.
pub fn prepare_movielens(
    ratings_text: &str,
    movie_genres: &HashMap<String, Vec<bool>>,
    genre_names: &[String],
    n_domains: usize,
) -> Result<RatingDataset> {
    let mut rows: Vec<(String, String, f64)> = Vec::new();
    for (n, line) in ratings_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 {
            return Err(Error::Parse {
                line: n + 1,
                message: "expected user, item, rating[, timestamp]".into(),
            });
        }
        let v: f64 = f[2].parse().map_err(|_| Error::Parse {
            line: n + 1,
            message: format!("rating '{}' is not numeric", f[2]),
        })?;
        rows.push((f[0].to_owned(), f[1].to_owned(), v));
    }
    let mut popularity = vec![0usize; genre_names.len()];
    for (_, item, _) in &rows {
        if let Some(flags) = movie_genres.get(item) {
            for (g, &on) in flags.iter().enumerate() {
                if on && g < popularity.len() {
                    popularity[g] += 1;
                }
            }
        }
    }
    let mut ranked: Vec<usize> = (0..genre_names.len()).collect();
    ranked.sort_by(|&a, &b| popularity[b].cmp(&popularity[a]).then(a.cmp(&b)));
    ranked.truncate(n_domains);

    let assigned = rows.iter().filter_map(|(u, item, v)| {
        let flags = movie_genres.get(item)?;
        let g = ranked.iter().copied().find(|&g| flags.get(g).copied().unwrap_or(false))?;
        Some((u.as_str(), item.as_str(), *v, genre_names[g].as_str()))
    });
    RatingDataset::from_raw(assigned, None)
}

pub fn prepare_movielens_files(
    ratings: &Path,
    items: &Path,
    genres: Option<&Path>,
    n_domains: usize,
) -> Result<RatingDataset> {
    let genre_names = match genres {
        Some(p) => parse_genre_names(&read_lossy(p)?)?,
        None => MOVIELENS_GENRES.iter().map(|s| s.to_string()).collect(),
    };
    let movie_genres = parse_movie_genres(&read_lossy(items)?, genre_names.len())?;
    let text = fs::read_to_string(ratings).map_err(|e| Error::io(ratings, e))?;
    prepare_movielens(&text, &movie_genres, &genre_names, n_domains)
}

/// Book-Crossing (`"User-ID";"ISBN";"Book-Rating"`) restricted to books in
/// `categories` (ISBN → category). Zero ratings are implicit feedback in this
/// dump and are dropped; explicit ratings lie on 1–10.
pub fn prepare_book_crossing(ratings_text: &str, categories: &HashMap<String, String>) -> Result<RatingDataset> {
    let unquote = |s: &str| s.trim().trim_matches('"').to_owned();
    let mut rows: Vec<(String, String, f64, String)> = Vec::new();
    for (n, line) in ratings_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<String> = line.split(';').map(unquote).collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                line: n + 1,
                message: "expected 3 ';'-separated fields".into(),
            });
        }
        let Ok(v) = f[2].parse::<f64>() else {
            if n == 0 {
                continue; // header
            }
            return Err(Error::Parse {
                line: n + 1,
                message: format!("rating '{}' is not numeric", f[2]),
            });
        };
        if v == 0.0 {
            continue;
        }
        if let Some(cat) = categories.get(&f[1]) {
            rows.push((f[0].clone(), f[1].clone(), v, cat.clone()));
        }
    }
    RatingDataset::from_raw(
        rows.iter().map(|(u, i, v, c)| (u.as_str(), i.as_str(), *v, c.as_str())),
        Some(RatingScale::new(1.0, 10.0)?),
    )
}

/// `item<TAB>category` lines.
pub fn parse_category_map(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (item, cat) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: "expected 'item<TAB>category'".into(),
        })?;
        out.insert(item.trim().to_owned(), cat.trim().to_owned());
    }
    if out.is_empty() {
        return Err(Error::Empty("category map is empty".into()));
    }
    Ok(out)
}
