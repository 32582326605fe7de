//! Synthetic corpora.
//!
//! Garment embeddings are drawn from per-(category, color-bucket) Gaussian
//! prototypes, so color relations are recoverable from embeddings alone.
//! Compatible sets are constructed to satisfy one of the named color-theory
//! styles (and verified against the labeler); incompatible sets are item
//! combinations whose colors fit no harmony rule.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, ItemRecord, Label, Outfit, Split};
use crate::error::{NgfError, Result};
use crate::styles::{label_style, ColorDescriptor, StyleLabel, StyleRuleConfig};

/// Generator parameters for a harmony-labeled benchmark corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub categories: Vec<String>,
    /// Base pool items generated per category (per split when
    /// `split_disjoint`); these serve as negatives, distractors and
    /// replacement pools.
    pub items_per_category: usize,
    pub dim: usize,
    /// Outfit counts per split, negatives included.
    pub train_sets: usize,
    pub test_sets: usize,
    pub set_size_min: usize,
    pub set_size_max: usize,
    /// Relative weights of the named styles among compatible sets.
    /// Defaults mirror the skew of real outfit data (majority analogous,
    /// rare monochromatic).
    pub style_mix: BTreeMap<StyleLabel, f64>,
    /// Fraction of each split labeled incompatible.
    pub negative_fraction: f64,
    /// Std-dev of the Gaussian noise around each prototype.
    pub noise: f64,
    pub prototype_scale: f64,
    /// Hue quantization for the prototype table.
    pub hue_bins: usize,
    pub split_disjoint: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let mut style_mix = BTreeMap::new();
        style_mix.insert(StyleLabel::Analogous, 0.60);
        style_mix.insert(StyleLabel::Complementary, 0.075);
        style_mix.insert(StyleLabel::Triadic, 0.018);
        style_mix.insert(StyleLabel::Same, 0.012);
        style_mix.insert(StyleLabel::Monochromatic, 0.004);
        Self {
            categories: ["top", "bottom", "shoes", "bag", "hat", "outer"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            items_per_category: 120,
            dim: 16,
            train_sets: 400,
            test_sets: 100,
            set_size_min: 3,
            set_size_max: 5,
            style_mix,
            negative_fraction: 0.5,
            noise: 0.08,
            prototype_scale: 1.0,
            hue_bins: 12,
            split_disjoint: false,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.categories.is_empty() || self.dim == 0 || self.hue_bins == 0 {
            return Err(NgfError::Config(
                "synth spec needs categories, a positive dim and hue_bins".into(),
            ));
        }
        if self.set_size_min < 2 || self.set_size_min > self.set_size_max {
            return Err(NgfError::Config(format!(
                "invalid set size range {}..{}",
                self.set_size_min, self.set_size_max
            )));
        }
        if self.set_size_max > self.categories.len() {
            return Err(NgfError::Config(format!(
                "set_size_max {} exceeds the {} categories (one item per category)",
                self.set_size_max,
                self.categories.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return Err(NgfError::Config("negative_fraction outside [0, 1]".into()));
        }
        let total: f64 = self.style_mix.values().sum();
        if self.style_mix.is_empty() || total <= 0.0 || self.style_mix.values().any(|&w| w < 0.0)
        {
            return Err(NgfError::Config(
                "style_mix needs nonnegative weights with positive total".into(),
            ));
        }
        Ok(())
    }
}

/// Color bucket feeding the prototype table: achromatic, or a
/// (hue bin, saturation band) cell.
fn bucket_of(color: &ColorDescriptor, hue_bins: usize, s_mono: f64) -> usize {
    if color.s <= s_mono {
        return 0;
    }
    let bin = ((color.h / 360.0) * hue_bins as f64) as usize % hue_bins;
    let band = usize::from(color.s >= 0.6);
    1 + bin * 2 + band
}

struct PrototypeTable {
    vectors: Vec<Vec<f64>>,
    buckets: usize,
}

impl PrototypeTable {
    fn new(spec: &SynthSpec, seed: u64) -> Self {
        let buckets = 1 + spec.hue_bins * 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5052_4f54);
        let vectors = (0..spec.categories.len() * buckets)
            .map(|_| {
                (0..spec.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * spec.prototype_scale
                    })
                    .collect()
            })
            .collect();
        Self { vectors, buckets }
    }

    fn get(&self, category_idx: usize, bucket: usize) -> &[f64] {
        &self.vectors[category_idx * self.buckets + bucket]
    }
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rules: StyleRuleConfig,
    protos: PrototypeTable,
    rng: ChaCha8Rng,
    items: Vec<ItemRecord>,
    outfits: Vec<Outfit>,
    /// Pool item indexes per (split tag, category index).
    pools: Vec<Vec<Vec<usize>>>,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SynthSpec, seed: u64) -> Self {
        Self {
            spec,
            rules: StyleRuleConfig::default(),
            protos: PrototypeTable::new(spec, seed),
            rng: ChaCha8Rng::seed_from_u64(seed),
            items: Vec::new(),
            outfits: Vec::new(),
            pools: Vec::new(),
        }
    }

    fn embed(&mut self, category_idx: usize, color: &ColorDescriptor) -> Vec<f64> {
        let bucket = bucket_of(color, self.spec.hue_bins, self.rules.s_mono);
        let proto = self.protos.get(category_idx, bucket).to_vec();
        proto
            .iter()
            .map(|&p| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                p + z * self.spec.noise
            })
            .collect()
    }

    fn add_item(&mut self, id: String, category_idx: usize, color: ColorDescriptor) -> usize {
        let embedding = self.embed(category_idx, &color);
        self.items.push(ItemRecord {
            id,
            category: self.spec.categories[category_idx].clone(),
            embedding,
            color: Some(color),
        });
        self.items.len() - 1
    }

    fn random_pool_color(&mut self) -> ColorDescriptor {
        if self.rng.random::<f64>() < 0.1 {
            ColorDescriptor {
                h: self.rng.random_range(0.0..360.0),
                s: self.rng.random_range(0.0..0.12),
                v: self.rng.random_range(0.05..0.95),
            }
        } else {
            ColorDescriptor {
                h: self.rng.random_range(0.0..360.0),
                s: self.rng.random_range(0.3..1.0),
                v: self.rng.random_range(0.3..1.0),
            }
        }
    }

    fn build_pool(&mut self, tag: &str) -> Vec<Vec<usize>> {
        let mut pool = vec![Vec::new(); self.spec.categories.len()];
        for c in 0..self.spec.categories.len() {
            for n in 0..self.spec.items_per_category {
                let color = self.random_pool_color();
                let id = format!("{}{tag}-{n:04}", self.spec.categories[c]);
                let idx = self.add_item(id, c, color);
                pool[c].push(idx);
            }
        }
        pool
    }

    fn pick_style(&mut self) -> StyleLabel {
        let total: f64 = self.spec.style_mix.values().sum();
        let mut x = self.rng.random::<f64>() * total;
        for (&style, &w) in &self.spec.style_mix {
            if x < w {
                return style;
            }
            x -= w;
        }
        *self.spec.style_mix.keys().next_back().unwrap()
    }

    /// Colors satisfying `style` under the default thresholds, with margin.
    fn draw_style_colors(&mut self, style: StyleLabel, k: usize) -> Result<Vec<ColorDescriptor>> {
        for _attempt in 0..50 {
            let colors = self.draw_style_colors_once(style, k);
            if label_style(&colors, &self.rules)? == style {
                return Ok(colors);
            }
        }
        Err(NgfError::Data(format!(
            "could not realize style '{style}' for a set of {k} items"
        )))
    }

    fn draw_style_colors_once(&mut self, style: StyleLabel, k: usize) -> Vec<ColorDescriptor> {
        let rng = &mut self.rng;
        let wrap = |h: f64| h.rem_euclid(360.0).min(359.999_999);
        match style {
            StyleLabel::Same => {
                let h = rng.random_range(0.0..360.0);
                let s = rng.random_range(0.35..0.95);
                let v = rng.random_range(0.35..0.95);
                (0..k)
                    .map(|_| ColorDescriptor {
                        h: wrap(h + rng.random_range(-2.0..2.0)),
                        s: (s + rng.random_range(-0.04f64..0.04)).clamp(0.0, 1.0),
                        v: (v + rng.random_range(-0.04f64..0.04)).clamp(0.0, 1.0),
                    })
                    .collect()
            }
            StyleLabel::Monochromatic => (0..k)
                .map(|i| ColorDescriptor {
                    h: rng.random_range(0.0..360.0),
                    s: rng.random_range(0.0..0.12),
                    // Force a value spread so the Same rule cannot fire.
                    v: match i {
                        0 => rng.random_range(0.05..0.35),
                        1 => rng.random_range(0.55..0.95),
                        _ => rng.random_range(0.05..0.95),
                    },
                })
                .collect(),
            StyleLabel::Analogous => {
                let center = rng.random_range(0.0..360.0);
                let width = rng.random_range(18.0..46.0);
                (0..k)
                    .map(|i| {
                        let h = match i {
                            0 => center - width / 2.0,
                            1 => center + width / 2.0,
                            _ => center + rng.random_range(-width / 2.0..width / 2.0),
                        };
                        ColorDescriptor {
                            h: wrap(h),
                            s: rng.random_range(0.35..1.0),
                            v: rng.random_range(0.3..1.0),
                        }
                    })
                    .collect()
            }
            StyleLabel::Complementary => {
                let base = rng.random_range(0.0..360.0);
                let offset = 180.0 + rng.random_range(-8.0..8.0);
                (0..k)
                    .map(|i| {
                        let center = if i % 2 == 0 { base } else { base + offset };
                        ColorDescriptor {
                            h: wrap(center + rng.random_range(-2.0..2.0)),
                            s: rng.random_range(0.35..1.0),
                            v: rng.random_range(0.3..1.0),
                        }
                    })
                    .collect()
            }
            StyleLabel::Triadic => {
                let base = rng.random_range(0.0..360.0);
                let offsets = [
                    0.0,
                    120.0 + rng.random_range(-8.0..8.0),
                    240.0 + rng.random_range(-8.0..8.0),
                ];
                (0..k)
                    .map(|i| ColorDescriptor {
                        h: wrap(base + offsets[i % 3] + rng.random_range(-2.0..2.0)),
                        s: rng.random_range(0.35..1.0),
                        v: rng.random_range(0.3..1.0),
                    })
                    .collect()
            }
            StyleLabel::Other => (0..k)
                .map(|_| ColorDescriptor {
                    h: rng.random_range(0.0..360.0),
                    s: rng.random_range(0.35..1.0),
                    v: rng.random_range(0.3..1.0),
                })
                .collect(),
        }
    }

    fn pick_categories(&mut self, k: usize) -> Vec<usize> {
        let mut cats: Vec<usize> = (0..self.spec.categories.len()).collect();
        for i in 0..k {
            let j = self.rng.random_range(i..cats.len());
            cats.swap(i, j);
        }
        cats.truncate(k);
        cats
    }

    fn positive_set(&mut self, split: Split, pool_tag: &str, n: usize) -> Result<()> {
        let style = self.pick_style();
        let mut k = self
            .rng
            .random_range(self.spec.set_size_min..=self.spec.set_size_max);
        if style == StyleLabel::Triadic {
            k = k.max(3);
        }
        let cats = self.pick_categories(k);
        let colors = self.draw_style_colors(style, k)?;
        let prefix = match split {
            Split::Train => "tr",
            Split::Test => "te",
        };
        let mut items = Vec::with_capacity(k);
        for (slot, (&c, color)) in cats.iter().zip(&colors).enumerate() {
            let id = format!(
                "{}{pool_tag}-{prefix}-p{n:04}-{slot}",
                self.spec.categories[c]
            );
            self.add_item(id.clone(), c, *color);
            items.push(id);
        }
        self.outfits.push(Outfit {
            id: format!("{prefix}-p-{n:04}"),
            items,
            label: Label::Compatible,
            style: Some(style),
            split,
        });
        Ok(())
    }

    fn negative_set(&mut self, split: Split, pool: &[Vec<usize>], n: usize) -> Result<()> {
        let k = self
            .rng
            .random_range(self.spec.set_size_min..=self.spec.set_size_max);
        for _attempt in 0..200 {
            let cats = self.pick_categories(k);
            let picks: Vec<usize> = cats
                .iter()
                .map(|&c| pool[c][self.rng.random_range(0..pool[c].len())])
                .collect();
            let colors: Vec<ColorDescriptor> = picks
                .iter()
                .map(|&i| self.items[i].color.expect("pool items are colored"))
                .collect();
            if label_style(&colors, &self.rules)? != StyleLabel::Other {
                continue;
            }
            let prefix = match split {
                Split::Train => "tr",
                Split::Test => "te",
            };
            self.outfits.push(Outfit {
                id: format!("{prefix}-n-{n:04}"),
                items: picks.iter().map(|&i| self.items[i].id.clone()).collect(),
                label: Label::Incompatible,
                style: None,
                split,
            });
            return Ok(());
        }
        Err(NgfError::Data(
            "could not assemble a harmony-violating set from the item pool".into(),
        ))
    }

    fn split(&mut self, split: Split, count: usize, pool_idx: usize) -> Result<()> {
        let n_neg = (count as f64 * self.spec.negative_fraction).round() as usize;
        let n_pos = count - n_neg;
        let tag = if self.spec.split_disjoint {
            match split {
                Split::Train => "-tr",
                Split::Test => "-te",
            }
        } else {
            ""
        };
        for n in 0..n_pos {
            self.positive_set(split, tag, n)?;
        }
        let pool = self.pools[pool_idx].clone();
        for n in 0..n_neg {
            self.negative_set(split, &pool, n)?;
        }
        Ok(())
    }
}

/// Generate a labeled benchmark corpus. Fully deterministic in
/// `(spec, seed)`.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut g = Generator::new(spec, seed);

    if spec.split_disjoint {
        let train_pool = g.build_pool("-tr");
        g.pools.push(train_pool);
        let test_pool = g.build_pool("-te");
        g.pools.push(test_pool);
        g.split(Split::Train, spec.train_sets, 0)?;
        g.split(Split::Test, spec.test_sets, 1)?;
    } else {
        let pool = g.build_pool("");
        g.pools.push(pool);
        g.split(Split::Train, spec.train_sets, 0)?;
        g.split(Split::Test, spec.test_sets, 0)?;
    }

    let mut corpus = Corpus::new(spec.dim, g.items, g.outfits);
    corpus.split_disjoint = spec.split_disjoint;
    corpus.validate()?;
    Ok(corpus)
}

/// Spec for the clustered metric-learning corpus: a few well-separated
/// compatibility groups whose sets mix one item per category.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSpec {
    pub clusters: usize,
    pub categories: Vec<String>,
    /// Items per (cluster, category).
    pub items_per: usize,
    pub dim: usize,
    /// Scale of cluster centers.
    pub center_scale: f64,
    /// Within-cluster noise. Chosen so raw embeddings violate the triplet
    /// margin for a visible fraction of triplets before training.
    pub noise: f64,
    pub test_sets_per_cluster: usize,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            clusters: 3,
            categories: ["top", "bottom", "shoes"].iter().map(|s| s.to_string()).collect(),
            items_per: 6,
            dim: 8,
            center_scale: 1.0,
            noise: 0.35,
            test_sets_per_cluster: 12,
        }
    }
}

/// Build the clustered corpus. Train sets cover every within-cluster item
/// pair (a latin-square design over three categories), so relative
/// negatives are always cross-cluster.
pub fn cluster_corpus(spec: &ClusterSpec, seed: u64) -> Result<Corpus> {
    if spec.categories.len() != 3 {
        return Err(NgfError::Config(
            "cluster corpus uses exactly 3 categories".into(),
        ));
    }
    if spec.clusters == 0 || spec.items_per == 0 || spec.dim == 0 {
        return Err(NgfError::Config("cluster spec extents must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| {
            (0..spec.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * spec.center_scale
                })
                .collect()
        })
        .collect();

    let mut items = Vec::new();
    let id_of = |cluster: usize, cat: &str, n: usize| format!("c{cluster}-{cat}-{n}");
    for cluster in 0..spec.clusters {
        let hue = (cluster as f64 * 360.0 / spec.clusters as f64).min(359.999);
        for cat in &spec.categories {
            for n in 0..spec.items_per {
                let embedding: Vec<f64> = centers[cluster]
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + z * spec.noise
                    })
                    .collect();
                items.push(ItemRecord {
                    id: id_of(cluster, cat, n),
                    category: cat.clone(),
                    embedding,
                    color: Some(ColorDescriptor { h: hue, s: 0.8, v: 0.6 }),
                });
            }
        }
    }

    let mut outfits = Vec::new();
    let m = spec.items_per;
    for cluster in 0..spec.clusters {
        for i in 0..m {
            for j in 0..m {
                let k = (i + j) % m;
                outfits.push(Outfit {
                    id: format!("c{cluster}-set-{i}-{j}"),
                    items: vec![
                        id_of(cluster, &spec.categories[0], i),
                        id_of(cluster, &spec.categories[1], j),
                        id_of(cluster, &spec.categories[2], k),
                    ],
                    label: Label::Compatible,
                    style: None,
                    split: Split::Train,
                });
            }
        }
        for t in 0..spec.test_sets_per_cluster {
            let (i, j) = (rng.random_range(0..m), rng.random_range(0..m));
            let k = rng.random_range(0..m);
            outfits.push(Outfit {
                id: format!("c{cluster}-test-{t}"),
                items: vec![
                    id_of(cluster, &spec.categories[0], i),
                    id_of(cluster, &spec.categories[1], j),
                    id_of(cluster, &spec.categories[2], k),
                ],
                label: Label::Compatible,
                style: None,
                split: Split::Test,
            });
        }
    }

    let corpus = Corpus::new(spec.dim, items, outfits);
    corpus.validate()?;
    Ok(corpus)
}
