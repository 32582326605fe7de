//! Corpus model, ingestion, and dataset generators.
//!
//! Corpus JSON schema (normative):
//!
//! ```json
//! {
//!   "dim": 4,
//!   "items": [
//!     {"id": "top-1", "category": "top", "embedding": [0.1, 0.2, 0.3, 0.4],
//!      "color": {"h": 10.0, "s": 0.8, "v": 0.5}}
//!   ],
//!   "outfits": [
//!     {"id": "set-1", "items": ["top-1", "shoe-2"], "label": 1, "style": null}
//!   ],
//!   "split_disjoint": false
//! }
//! ```
//!
//! An outfit may additionally carry `"split": "train" | "test"` (absent
//! means train), which is how one file holds both halves of a benchmark.

mod generate;
mod synth;

pub use generate::{generate_fitb, generate_negative_outfit, oversample_balance, NegativeMode};
pub use synth::{cluster_corpus, synth_corpus, ClusterSpec, SynthSpec};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{NgfError, Result};
use crate::styles::{ColorDescriptor, StyleLabel};

/// One garment: identifier, category, embedding vector, dominant color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: String,
    pub category: String,
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub color: Option<ColorDescriptor>,
}

/// Compatibility bit of a garment set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Incompatible,
    Compatible,
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Incompatible),
            1 => Ok(Label::Compatible),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Incompatible => 0,
            Label::Compatible => 1,
        }
    }
}

/// Which half of the benchmark an outfit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// A labeled garment set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outfit {
    pub id: String,
    pub items: Vec<String>,
    pub label: Label,
    pub style: Option<StyleLabel>,
    #[serde(default)]
    pub split: Split,
}

impl Outfit {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Item table plus labeled garment sets.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub dim: usize,
    pub items: Vec<ItemRecord>,
    pub outfits: Vec<Outfit>,
    /// When set, train and test splits share no garment.
    #[serde(default)]
    pub split_disjoint: bool,
    #[serde(skip)]
    index: OnceLock<HashMap<String, usize>>,
}

impl Clone for Corpus {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            items: self.items.clone(),
            outfits: self.outfits.clone(),
            split_disjoint: self.split_disjoint,
            index: OnceLock::new(),
        }
    }
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.items == other.items
            && self.outfits == other.outfits
            && self.split_disjoint == other.split_disjoint
    }
}

impl Corpus {
    pub fn new(dim: usize, items: Vec<ItemRecord>, outfits: Vec<Outfit>) -> Self {
        Self {
            dim,
            items,
            outfits,
            split_disjoint: false,
            index: OnceLock::new(),
        }
    }

    fn index(&self) -> &HashMap<String, usize> {
        self.index.get_or_init(|| {
            self.items
                .iter()
                .enumerate()
                .map(|(i, it)| (it.id.clone(), i))
                .collect()
        })
    }

    pub fn item(&self, id: &str) -> Result<&ItemRecord> {
        self.index()
            .get(id)
            .map(|&i| &self.items[i])
            .ok_or_else(|| NgfError::Data(format!("unknown item id '{id}'")))
    }

    pub fn contains_item(&self, id: &str) -> bool {
        self.index().contains_key(id)
    }

    /// Position of an item in `items`, if present.
    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.index().get(id).copied()
    }

    /// Item ids of one category, corpus order.
    pub fn category_items(&self, category: &str) -> Vec<&ItemRecord> {
        self.items
            .iter()
            .filter(|it| it.category == category)
            .collect()
    }

    pub fn outfits_in(&self, split: Split) -> impl Iterator<Item = &Outfit> {
        self.outfits.iter().filter(move |o| o.split == split)
    }

    /// Embedding rows for an outfit's items, corpus dim each.
    pub fn outfit_embeddings(&self, outfit: &Outfit) -> Result<Vec<&[f64]>> {
        outfit
            .items
            .iter()
            .map(|id| self.item(id).map(|it| it.embedding.as_slice()))
            .collect()
    }

    /// Pairs of items that appear together in at least one compatible set.
    pub fn cooccurrence(&self) -> HashSet<(String, String)> {
        let mut set = HashSet::new();
        for outfit in &self.outfits {
            if outfit.label != Label::Compatible {
                continue;
            }
            for (i, a) in outfit.items.iter().enumerate() {
                for b in &outfit.items[i + 1..] {
                    set.insert((a.clone(), b.clone()));
                    set.insert((b.clone(), a.clone()));
                }
            }
        }
        set
    }

    /// Verify every structural invariant, reporting offending ids.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(NgfError::Data("corpus dim must be positive".into()));
        }
        let mut seen_items = HashSet::new();
        for item in &self.items {
            if !seen_items.insert(item.id.as_str()) {
                return Err(NgfError::Data(format!("duplicate item id '{}'", item.id)));
            }
            if item.embedding.len() != self.dim {
                return Err(NgfError::Data(format!(
                    "item '{}' embedding has dimension {}, corpus dim is {}",
                    item.id,
                    item.embedding.len(),
                    self.dim
                )));
            }
            if let Some(bad) = item.embedding.iter().find(|v| !v.is_finite()) {
                return Err(NgfError::Data(format!(
                    "item '{}' embedding contains non-finite value {bad}",
                    item.id
                )));
            }
            if let Some(color) = &item.color {
                color
                    .validate()
                    .map_err(|e| NgfError::Data(format!("item '{}' color: {e}", item.id)))?;
            }
        }
        let mut seen_sets = HashSet::new();
        for outfit in &self.outfits {
            if !seen_sets.insert(outfit.id.as_str()) {
                return Err(NgfError::Data(format!("duplicate outfit id '{}'", outfit.id)));
            }
            if outfit.items.len() < 2 {
                return Err(NgfError::Data(format!(
                    "outfit '{}' has {} items, need at least 2",
                    outfit.id,
                    outfit.items.len()
                )));
            }
            let mut members = HashSet::new();
            let mut categories = HashSet::new();
            for id in &outfit.items {
                if !self.contains_item(id) {
                    return Err(NgfError::Data(format!(
                        "outfit '{}' references unknown item '{id}'",
                        outfit.id
                    )));
                }
                if !members.insert(id.as_str()) {
                    return Err(NgfError::Data(format!(
                        "outfit '{}' lists item '{id}' twice",
                        outfit.id
                    )));
                }
                if outfit.label == Label::Compatible {
                    let cat = &self.item(id)?.category;
                    if !categories.insert(cat.clone()) {
                        return Err(NgfError::Data(format!(
                            "compatible outfit '{}' has two items of category '{cat}'",
                            outfit.id
                        )));
                    }
                }
            }
        }
        if self.split_disjoint {
            let used = |split: Split| -> HashSet<&str> {
                self.outfits_in(split)
                    .flat_map(|o| o.items.iter().map(String::as_str))
                    .collect()
            };
            let train = used(Split::Train);
            let test = used(Split::Test);
            if let Some(shared) = train.intersection(&test).next() {
                return Err(NgfError::Data(format!(
                    "split_disjoint corpus has item '{shared}' in both train and test"
                )));
            }
        }
        Ok(())
    }

    /// Per-category item counts, useful for reports.
    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for item in &self.items {
            *counts.entry(item.category.clone()).or_insert(0) += 1;
        }
        counts
    }
}

/// Parse and validate a corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| NgfError::Data(format!("cannot read corpus {}: {e}", path.display())))?;
    let corpus: Corpus = serde_json::from_str(&text)
        .map_err(|e| NgfError::Data(format!("corpus {} is not schema-valid: {e}", path.display())))?;
    corpus.validate()?;
    Ok(corpus)
}

/// Write a corpus as pretty-printed JSON (stable field order, so identical
/// corpora serialize to identical bytes).
pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut text = serde_json::to_string_pretty(corpus)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// One fill-in-the-blank question: a partial outfit plus four same-category
/// candidates, exactly one of which is the held-out ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FITBQuestion {
    /// Outfit the question was generated from.
    pub source_id: String,
    /// The k-1 given items.
    pub given: Vec<String>,
    /// Exactly four candidate item ids sharing the blank's category.
    pub candidates: Vec<String>,
    /// Position of the ground-truth item within `candidates`.
    pub answer_index: usize,
    /// Style of the source outfit, when labeled.
    pub style: Option<StyleLabel>,
}

impl FITBQuestion {
    /// Length of the completed set.
    pub fn set_len(&self) -> usize {
        self.given.len() + 1
    }

    pub fn answer(&self) -> &str {
        &self.candidates[self.answer_index]
    }
}
