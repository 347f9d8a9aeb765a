use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{Catalog, IngestError, RawRating, Result};

/// Genre names of the 19 flag columns in MovieLens-100K `u.item`.
const ML100K_GENRES: [&str; 19] = [
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

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextEncoding {
    #[default]
    Utf8,
    /// ISO-8859-1; every byte maps to one code point, so decoding cannot fail.
    Latin1,
}

/// Non-empty lines with their 1-based line numbers.
fn read_lines<R: Read>(mut input: R, encoding: TextEncoding) -> Result<Vec<(usize, String)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut out = Vec::new();
    for (n, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = match encoding {
            TextEncoding::Utf8 => std::str::from_utf8(raw)
                .map_err(|_| IngestError::Encoding { line: n + 1 })?
                .to_string(),
            TextEncoding::Latin1 => raw.iter().map(|&b| b as char).collect(),
        };
        if !line.trim().is_empty() {
            out.push((n + 1, line));
        }
    }
    Ok(out)
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains("::") {
        line.split("::").collect()
    } else {
        line.split('\t').collect()
    }
}

/// Parses `user item rating timestamp` records separated by `::` or tabs.
pub fn parse_ratings<R: Read>(input: R, encoding: TextEncoding) -> Result<Vec<RawRating>> {
    read_lines(input, encoding)?
        .into_iter()
        .map(|(line, text)| {
            let f = split_fields(&text);
            if f.len() < 4 {
                return Err(IngestError::Parse {
                    line,
                    msg: format!("expected 4 fields, found {}", f.len()),
                });
            }
            let rating: f64 = f[2].trim().parse().map_err(|_| IngestError::Parse {
                line,
                msg: format!("bad rating `{}`", f[2]),
            })?;
            let timestamp: i64 = f[3].trim().parse().map_err(|_| IngestError::Parse {
                line,
                msg: format!("bad timestamp `{}`", f[3]),
            })?;
            if timestamp < 0 {
                return Err(IngestError::Parse {
                    line,
                    msg: "negative timestamp".into(),
                });
            }
            Ok(RawRating {
                user_id: f[0].trim().to_string(),
                item_id: f[1].trim().to_string(),
                rating,
                timestamp,
                line,
            })
        })
        .collect()
}

/// One item with its category names and optional relevance weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemCategoryRecord {
    pub item_id: String,
    pub categories: Vec<(String, Option<f64>)>,
    pub line: usize,
}

fn parse_category_token(token: &str, line: usize) -> Result<(String, Option<f64>)> {
    let token = token.trim();
    match token.rsplit_once(':') {
        Some((name, w)) if !name.is_empty() => {
            let w: f64 = w.parse().map_err(|_| IngestError::Parse {
                line,
                msg: format!("bad category weight in `{token}`"),
            })?;
            Ok((name.to_string(), Some(w)))
        }
        _ => Ok((token.to_string(), None)),
    }
}

/// Parses an item-category file.
///
/// Accepted line shapes:
/// - `item::title::Cat1|Cat2` (MovieLens-1M `movies.dat`),
/// - `item<TAB>Cat1|Cat2`,
/// - MovieLens-100K `u.item` rows ending in 19 genre flags.
///
/// A category token may carry a relevance weight as `name:weight`.
pub fn parse_item_categories<R: Read>(
    input: R,
    encoding: TextEncoding,
) -> Result<Vec<ItemCategoryRecord>> {
    let mut out = Vec::new();
    for (line, text) in read_lines(input, encoding)? {
        let (item_id, categories) = if text.contains("::") {
            let f: Vec<&str> = text.split("::").collect();
            if f.len() < 2 {
                return Err(IngestError::Parse {
                    line,
                    msg: "expected item::…::categories".into(),
                });
            }
            let cats = f[f.len() - 1];
            (f[0].trim().to_string(), cats)
        } else if let Some(rec) = parse_ml100k_item(&text, line)? {
            out.push(rec);
            continue;
        } else {
            let f: Vec<&str> = text.split('\t').collect();
            if f.len() != 2 {
                return Err(IngestError::Parse {
                    line,
                    msg: "expected item<TAB>categories".into(),
                });
            }
            (f[0].trim().to_string(), f[1])
        };
        let categories = categories
            .split('|')
            .filter(|t| !t.trim().is_empty())
            .map(|t| parse_category_token(t, line))
            .collect::<Result<Vec<_>>>()?;
        if categories.is_empty() {
            return Err(IngestError::ItemWithoutCategory(item_id));
        }
        out.push(ItemCategoryRecord {
            item_id,
            categories,
            line,
        });
    }
    Ok(out)
}

fn parse_ml100k_item(text: &str, line: usize) -> Result<Option<ItemCategoryRecord>> {
    let f: Vec<&str> = text.split('|').collect();
    if f.len() < 5 + ML100K_GENRES.len() {
        return Ok(None);
    }
    let flags = &f[f.len() - ML100K_GENRES.len()..];
    if !flags.iter().all(|x| matches!(x.trim(), "0" | "1")) {
        return Ok(None);
    }
    let categories: Vec<(String, Option<f64>)> = flags
        .iter()
        .zip(ML100K_GENRES)
        .filter(|(flag, _)| flag.trim() == "1")
        .map(|(_, g)| (g.to_string(), None))
        .collect();
    if categories.is_empty() {
        return Err(IngestError::ItemWithoutCategory(f[0].trim().to_string()));
    }
    Ok(Some(ItemCategoryRecord {
        item_id: f[0].trim().to_string(),
        categories,
        line,
    }))
}

/// Parses a side-feature file: an id followed by feature columns, separated
/// by `::`, `|` or tabs. Each kept column `j` with value `v` becomes the
/// token `c{j}={v}`. `columns` selects 1-based feature columns (all when `None`).
pub fn parse_feature_file<R: Read>(
    input: R,
    encoding: TextEncoding,
    columns: Option<&[usize]>,
) -> Result<Vec<(String, Vec<String>)>> {
    read_lines(input, encoding)?
        .into_iter()
        .map(|(line, text)| {
            let f: Vec<&str> = if text.contains("::") {
                text.split("::").collect()
            } else if text.contains('|') {
                text.split('|').collect()
            } else {
                text.split('\t').collect()
            };
            if f.is_empty() || f[0].trim().is_empty() {
                return Err(IngestError::Parse {
                    line,
                    msg: "missing id".into(),
                });
            }
            let tokens = f[1..]
                .iter()
                .enumerate()
                .filter(|(j, _)| columns.is_none_or(|c| c.contains(&(j + 1))))
                .map(|(j, v)| format!("c{}={}", j + 1, v.trim()))
                .collect();
            Ok((f[0].trim().to_string(), tokens))
        })
        .collect()
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&i) = index.get(name) {
        return i;
    }
    names.push(name.to_string());
    index.insert(name.to_string(), names.len() - 1);
    names.len() - 1
}

/// Assembles a catalog.
///
/// Items and categories are indexed in item-file order. Users come from the
/// user feature file when one is given, otherwise from the ratings in order
/// of first appearance.
pub fn build_catalog(
    ratings: &[RawRating],
    items: &[ItemCategoryRecord],
    user_features: Option<&[(String, Vec<String>)]>,
    item_features: Option<&[(String, Vec<String>)]>,
) -> Result<Catalog> {
    let mut cat = Catalog::default();
    let mut cat_index = HashMap::new();
    let mut item_index = HashMap::new();
    for rec in items {
        if item_index.contains_key(&rec.item_id) {
            return Err(IngestError::Parse {
                line: rec.line,
                msg: format!("duplicate item `{}`", rec.item_id),
            });
        }
        item_index.insert(rec.item_id.clone(), cat.item_ids.len());
        cat.item_ids.push(rec.item_id.clone());
        let mut pairs: Vec<(usize, Option<f64>)> = rec
            .categories
            .iter()
            .map(|(name, w)| (intern(&mut cat.category_names, &mut cat_index, name), *w))
            .collect();
        pairs.sort_by_key(|p| p.0);
        pairs.dedup_by_key(|p| p.0);
        let weights = if pairs.iter().all(|p| p.1.is_some()) {
            Some(pairs.iter().map(|p| p.1.unwrap_or(1.0)).collect())
        } else {
            None
        };
        cat.item_categories.push(pairs.iter().map(|p| p.0).collect());
        cat.item_category_weights.push(weights);
    }

    match user_features {
        Some(rows) => {
            let mut idx = HashMap::new();
            for (id, tokens) in rows {
                cat.user_ids.push(id.clone());
                let feats = tokens
                    .iter()
                    .map(|t| intern(&mut cat.user_feature_names, &mut idx, t))
                    .collect();
                cat.user_features.push(feats);
            }
        }
        None => {
            let mut seen = HashMap::new();
            for r in ratings {
                if !seen.contains_key(&r.user_id) {
                    seen.insert(r.user_id.clone(), ());
                    cat.user_ids.push(r.user_id.clone());
                }
            }
        }
    }

    if let Some(rows) = item_features {
        let mut idx = HashMap::new();
        let mut per_item = vec![Vec::new(); cat.n_items()];
        for (id, tokens) in rows {
            let Some(&i) = item_index.get(id) else {
                return Err(IngestError::UnknownId {
                    line: 0,
                    kind: "item",
                    id: id.clone(),
                });
            };
            per_item[i] = tokens
                .iter()
                .map(|t| intern(&mut cat.item_feature_names, &mut idx, t))
                .collect();
        }
        cat.item_features = per_item;
    }
    cat.validate()?;
    Ok(cat)
}
