// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Interaction, ItemMeta};
use crate::error::{Error, Result};

/// Rows with a rating below this are dropped; everything else is a positive.
pub const MIN_POSITIVE_RATING: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Tsv,
    Csv,
}

impl InputFormat {
    fn delimiter(self) -> u8 {
        match self {
            InputFormat::Tsv => b'\t',
            InputFormat::Csv => b',',
        }
    }

    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => InputFormat::Tsv,
            _ => InputFormat::Csv,
        }
    }
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(InputFormat::Tsv),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::invalid("format", format!("unknown input format {other:?}"))),
        }
    }
}

/// Bijection between raw string IDs and dense indices (first-seen order).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_raw(raw: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(raw.len());
        for (i, r) in raw.iter().enumerate() {
            if index.insert(r.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate id {r:?} in id map")));
            }
        }
        Ok(Self { raw, index })
    }

    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw.len();
        self.raw.push(raw.to_string());
        self.index.insert(raw.to_string(), i);
        i
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, index: usize) -> Option<&str> {
        self.raw.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Keeps only the given old indices, in order; position = new index.
    pub fn restrict(&self, kept: &[usize]) -> Result<Self> {
        Self::from_raw(kept.iter().map(|&i| self.raw[i].clone()).collect())
    }

    /// One raw ID per line, line number = dense index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.raw {
            out.push_str(r);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_raw(text.lines().map(str::to_string).collect())
    }
}

#[derive(Clone, Debug)]
pub struct LoadedInteractions {
    pub interactions: Vec<Interaction>,
    pub users: IdMap,
    pub items: IdMap,
}

impl LoadedInteractions {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }
}

/// Parses `user,item,timestamp[,rating]` rows (header optional). Raw IDs are
/// interned in first-seen order. Rows with a rating below 1 are dropped.
pub fn load_interactions(path: &Path, format: InputFormat) -> Result<LoadedInteractions> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let parse_err = |line: usize, reason: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        reason,
    };

    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut interactions = Vec::new();
    let mut saw_row = false;
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(n + 1, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(n + 1, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if n == 0 && record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("user")) {
            continue;
        }
        saw_row = true;
        if record.len() < 3 {
            return Err(parse_err(
                line,
                format!("expected user, item, timestamp; got {} field(s)", record.len()),
            ));
        }
        let timestamp: i64 = record[2]
            .parse()
            .map_err(|_| parse_err(line, format!("timestamp {:?} is not an integer", &record[2])))?;
        if let Some(raw_rating) = record.get(3).filter(|r| !r.is_empty()) {
            let rating: f64 = raw_rating
                .parse()
                .map_err(|_| parse_err(line, format!("rating {raw_rating:?} is not numeric")))?;
            if rating < MIN_POSITIVE_RATING {
                continue;
            }
        }
        if record[0].is_empty() || record[1].is_empty() {
            return Err(parse_err(line, "empty user or item id".into()));
        }
        let user = users.intern(&record[0]);
        let item = items.intern(&record[1]);
        interactions.push(Interaction { user, item, timestamp });
    }
    if !saw_row {
        return Err(Error::Data(format!("{}: no interactions", path.display())));
    }
    Ok(LoadedInteractions {
        interactions,
        users,
        items,
    })
}

/// Reads `item_id,title,categories` (categories `|`-separated). Every item in
/// `items` gets an entry; items without a row get a placeholder title.
pub fn load_item_meta(path: &Path, items: &IdMap) -> Result<Vec<ItemMeta>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut meta: Vec<ItemMeta> = (0..items.len()).map(ItemMeta::placeholder).collect();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        if n == 0 && record.get(0).is_some_and(|f| f.trim().eq_ignore_ascii_case("item_id")) {
            continue;
        }
        let Some(item) = record.get(0).and_then(|raw| items.get(raw.trim())) else {
            continue;
        };
        let title = record.get(1).map(flatten_text).unwrap_or_default();
        let categories = record
            .get(2)
            .map(|c| {
                c.split('|')
                    .map(flatten_text)
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default();
        meta[item] = ItemMeta {
            item,
            title: if title.is_empty() { format!("item {item}") } else { title },
            categories,
        };
    }
    Ok(meta)
}

/// Writes metadata for dense item indices in the same CSV layout.
pub fn write_item_meta(path: &Path, meta: &[ItemMeta], items: &IdMap) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["item_id", "title", "categories"]).map_err(io)?;
    for m in meta {
        let raw = items.raw(m.item).unwrap_or_default().to_string();
        w.write_record([raw, m.title.clone(), m.categories.join("|")])
            .map_err(io)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

/// Collapses internal whitespace (including newlines) to single spaces.
pub fn flatten_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
