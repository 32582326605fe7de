//! Color-theory style labeling for garment sets.
//!
//! A deterministic rule cascade assigns each set of item colors one of the
//! 5+1 styles: analogous, complementary, triadic, same, monochromatic, or
//! other. The cascade order (same -> monochromatic -> analogous ->
//! complementary -> triadic -> other) is part of the contract: the earlier,
//! more specific rules win overlaps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Label};
use crate::error::{NgfError, Result};

/// Dominant color of an item in hue/saturation/value space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorDescriptor {
    /// Hue in degrees, `[0, 360)`. Arithmetic on hues is modular.
    pub h: f64,
    /// Saturation in `[0, 1]`.
    pub s: f64,
    /// Value in `[0, 1]`.
    pub v: f64,
}

impl ColorDescriptor {
    pub fn new(h: f64, s: f64, v: f64) -> Result<Self> {
        if !h.is_finite() || !(0.0..360.0).contains(&h) {
            return Err(NgfError::Domain(format!("hue {h} outside [0, 360)")));
        }
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(NgfError::Domain(format!("saturation {s} outside [0, 1]")));
        }
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(NgfError::Domain(format!("value {v} outside [0, 1]")));
        }
        Ok(Self { h, s, v })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.h, self.s, self.v).map(|_| ())
    }

    /// Same color with the hue rotated by `deg`.
    pub fn rotated(&self, deg: f64) -> Self {
        Self {
            h: wrap_deg(self.h + deg),
            s: self.s,
            v: self.v,
        }
    }
}

/// The 5+1 color-theory styles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleLabel {
    Analogous,
    Complementary,
    Triadic,
    Same,
    Monochromatic,
    Other,
}

impl StyleLabel {
    pub const ALL: [StyleLabel; 6] = [
        StyleLabel::Analogous,
        StyleLabel::Complementary,
        StyleLabel::Triadic,
        StyleLabel::Same,
        StyleLabel::Monochromatic,
        StyleLabel::Other,
    ];

    /// Stable index used for the style head's one-hot targets.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for StyleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StyleLabel::Analogous => "analogous",
            StyleLabel::Complementary => "complementary",
            StyleLabel::Triadic => "triadic",
            StyleLabel::Same => "same",
            StyleLabel::Monochromatic => "monochromatic",
            StyleLabel::Other => "other",
        };
        f.write_str(s)
    }
}

impl FromStr for StyleLabel {
    type Err = NgfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "analogous" => Ok(StyleLabel::Analogous),
            "complementary" => Ok(StyleLabel::Complementary),
            "triadic" => Ok(StyleLabel::Triadic),
            "same" => Ok(StyleLabel::Same),
            "monochromatic" => Ok(StyleLabel::Monochromatic),
            "other" => Ok(StyleLabel::Other),
            other => Err(NgfError::Config(format!("unknown style label '{other}'"))),
        }
    }
}

/// Thresholds for the rule cascade. The defaults are the documented
/// contract; every value is configurable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleRuleConfig {
    /// Max pairwise hue gap (degrees) for `Same`.
    pub delta_same_deg: f64,
    /// Max pairwise saturation/value gap for `Same`.
    pub delta_sv: f64,
    /// Saturation at or below which an item counts as achromatic.
    pub s_mono: f64,
    /// Covering-arc width (degrees) for `Analogous`.
    pub analogous_arc_deg: f64,
    /// Cluster gap threshold and the tolerance around 180/120 degree
    /// separations for `Complementary`/`Triadic`.
    pub cluster_tol_deg: f64,
}

impl Default for StyleRuleConfig {
    fn default() -> Self {
        Self {
            delta_same_deg: 5.0,
            delta_sv: 0.1,
            s_mono: 0.15,
            analogous_arc_deg: 60.0,
            cluster_tol_deg: 15.0,
        }
    }
}

/// Circular distance between two hues, in `[0, 180]`.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn wrap_deg(h: f64) -> f64 {
    let w = h.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Smallest arc (degrees) covering all hues: 360 minus the largest gap
/// between circularly consecutive hues.
fn covering_arc(hues: &[f64]) -> f64 {
    debug_assert!(!hues.is_empty());
    if hues.len() == 1 {
        return 0.0;
    }
    let mut sorted = hues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut max_gap = 360.0 - sorted[sorted.len() - 1] + sorted[0];
    for w in sorted.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    360.0 - max_gap
}

/// Circular single-linkage clustering: hues closer than `gap_tol` (along
/// the sorted circle) merge into one cluster. Returns each cluster's
/// circular mean.
fn cluster_hues(hues: &[f64], gap_tol: f64) -> Vec<f64> {
    let mut sorted = hues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 1 {
        return sorted;
    }
    // Gap after position i (from sorted[i] to its successor, wrapping).
    let gap_after = |i: usize| {
        if i + 1 < n {
            sorted[i + 1] - sorted[i]
        } else {
            360.0 - sorted[n - 1] + sorted[0]
        }
    };
    let split_after: Vec<usize> = (0..n).filter(|&i| gap_after(i) > gap_tol).collect();
    if split_after.is_empty() {
        return vec![circular_mean(&sorted)];
    }
    let mut clusters = Vec::with_capacity(split_after.len());
    for w in 0..split_after.len() {
        let start = (split_after[(w + split_after.len() - 1) % split_after.len()] + 1) % n;
        let end = split_after[w];
        let mut members = Vec::new();
        let mut i = start;
        loop {
            members.push(sorted[i]);
            if i == end {
                break;
            }
            i = (i + 1) % n;
        }
        clusters.push(circular_mean(&members));
    }
    clusters
}

fn circular_mean(hues: &[f64]) -> f64 {
    let (mut sx, mut sy) = (0.0, 0.0);
    for &h in hues {
        let r = h.to_radians();
        sx += r.cos();
        sy += r.sin();
    }
    wrap_deg(sy.atan2(sx).to_degrees())
}

/// Assign one style to a set of at least two colors. First matching rule
/// in the fixed cascade wins; `Other` is the catch-all.
pub fn label_style(colors: &[ColorDescriptor], cfg: &StyleRuleConfig) -> Result<StyleLabel> {
    if colors.len() < 2 {
        return Err(NgfError::Contract(format!(
            "style labeling needs at least 2 colors, got {}",
            colors.len()
        )));
    }

    // Same: every pair agrees in hue, saturation and value.
    let mut same = true;
    'outer: for (i, a) in colors.iter().enumerate() {
        for b in &colors[i + 1..] {
            if hue_distance(a.h, b.h) > cfg.delta_same_deg
                || (a.s - b.s).abs() > cfg.delta_sv
                || (a.v - b.v).abs() > cfg.delta_sv
            {
                same = false;
                break 'outer;
            }
        }
    }
    if same {
        return Ok(StyleLabel::Same);
    }

    // Monochromatic: everything achromatic (whites/grays/blacks).
    if colors.iter().all(|c| c.s <= cfg.s_mono) {
        return Ok(StyleLabel::Monochromatic);
    }

    let chroma: Vec<f64> = colors
        .iter()
        .filter(|c| c.s > cfg.s_mono)
        .map(|c| c.h)
        .collect();
    debug_assert!(!chroma.is_empty());

    if covering_arc(&chroma) <= cfg.analogous_arc_deg {
        return Ok(StyleLabel::Analogous);
    }

    let centers = cluster_hues(&chroma, cfg.cluster_tol_deg);
    if centers.len() == 2
        && (hue_distance(centers[0], centers[1]) - 180.0).abs() <= cfg.cluster_tol_deg
    {
        return Ok(StyleLabel::Complementary);
    }
    if centers.len() == 3 {
        let triadic = [(0, 1), (0, 2), (1, 2)].iter().all(|&(i, j)| {
            (hue_distance(centers[i], centers[j]) - 120.0).abs() <= cfg.cluster_tol_deg
        });
        if triadic {
            return Ok(StyleLabel::Triadic);
        }
    }

    Ok(StyleLabel::Other)
}

/// Per-style counts plus the label of every compatible set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleReport {
    /// `(set_id, label)` for every compatible outfit, corpus order.
    pub labels: Vec<(String, StyleLabel)>,
    pub counts: BTreeMap<StyleLabel, usize>,
}

impl StyleReport {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Aligned count table, one row per style.
    pub fn table(&self) -> String {
        let mut out = String::from("style          count\n");
        for style in StyleLabel::ALL {
            let c = self.counts.get(&style).copied().unwrap_or(0);
            out.push_str(&format!("{:<14} {c}\n", style.to_string()));
        }
        out.push_str(&format!("{:<14} {}\n", "total", self.total()));
        out
    }
}

/// Label every compatible set in the corpus. Incompatible sets are not
/// styled; counts sum to the number of compatible sets.
pub fn split_corpus_by_style(corpus: &Corpus, cfg: &StyleRuleConfig) -> Result<StyleReport> {
    let mut labels = Vec::new();
    let mut counts: BTreeMap<StyleLabel, usize> = BTreeMap::new();
    for outfit in &corpus.outfits {
        if outfit.label != Label::Compatible {
            continue;
        }
        let mut colors = Vec::with_capacity(outfit.items.len());
        for id in &outfit.items {
            let item = corpus.item(id)?;
            let color = item.color.ok_or_else(|| {
                NgfError::Data(format!("item '{id}' has no color, cannot label styles"))
            })?;
            colors.push(color);
        }
        let label = label_style(&colors, cfg)?;
        labels.push((outfit.id.clone(), label));
        *counts.entry(label).or_insert(0) += 1;
    }
    Ok(StyleReport { labels, counts })
}

/// Copy of the corpus with every compatible set's `style` field filled in.
pub fn label_corpus(corpus: &Corpus, cfg: &StyleRuleConfig) -> Result<Corpus> {
    let report = split_corpus_by_style(corpus, cfg)?;
    let by_id: BTreeMap<&str, StyleLabel> = report
        .labels
        .iter()
        .map(|(id, l)| (id.as_str(), *l))
        .collect();
    let mut out = corpus.clone();
    for outfit in &mut out.outfits {
        if let Some(&l) = by_id.get(outfit.id.as_str()) {
            outfit.style = Some(l);
        }
    }
    Ok(out)
}
