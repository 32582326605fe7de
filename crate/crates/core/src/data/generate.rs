//! Negative-set construction, fill-in-the-blank questions, and the
//! oversampling ablation baseline.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, FITBQuestion, Label, Outfit};
use crate::error::{NgfError, Result};
use crate::styles::StyleLabel;

/// How incompatible sets are derived from a compatible one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeMode {
    /// Replace every item with a same-category stranger.
    #[default]
    AllSwap,
    /// Replace a single uniformly chosen item.
    OneSwap,
}

/// Derive an incompatible set from `positive` by same-category replacement.
/// Replacements are sampled uniformly from items outside the positive set;
/// the result never equals its source.
pub fn generate_negative_outfit(
    positive: &Outfit,
    corpus: &Corpus,
    seed: u64,
    mode: NegativeMode,
) -> Result<Outfit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool_for = |item_id: &str| -> Result<Vec<&str>> {
        let category = &corpus.item(item_id)?.category;
        let pool: Vec<&str> = corpus
            .items
            .iter()
            .filter(|it| &it.category == category && !positive.items.contains(&it.id))
            .map(|it| it.id.as_str())
            .collect();
        if pool.is_empty() {
            return Err(NgfError::Sampling(format!(
                "no replacement candidates of category '{category}' outside outfit '{}'",
                positive.id
            )));
        }
        Ok(pool)
    };

    let mut items = positive.items.clone();
    match mode {
        NegativeMode::AllSwap => {
            for slot in items.iter_mut() {
                let pool = pool_for(slot)?;
                *slot = pool[rng.random_range(0..pool.len())].to_string();
            }
        }
        NegativeMode::OneSwap => {
            let pos = rng.random_range(0..items.len());
            let pool = pool_for(&items[pos])?;
            items[pos] = pool[rng.random_range(0..pool.len())].to_string();
        }
    }

    Ok(Outfit {
        id: format!("{}-neg-{seed}", positive.id),
        items,
        label: Label::Incompatible,
        style: None,
        split: positive.split,
    })
}

/// Hold out one uniformly chosen item of a compatible outfit and pose it
/// against three same-category distractors at a uniformly shuffled
/// position.
pub fn generate_fitb(outfit: &Outfit, corpus: &Corpus, seed: u64) -> Result<FITBQuestion> {
    if outfit.label != Label::Compatible {
        return Err(NgfError::Contract(format!(
            "fill-in-the-blank needs a compatible outfit, '{}' is labeled 0",
            outfit.id
        )));
    }
    if outfit.items.len() < 3 {
        return Err(NgfError::Contract(format!(
            "outfit '{}' has {} items; questions need k >= 3",
            outfit.id,
            outfit.items.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hold = rng.random_range(0..outfit.items.len());
    let answer = &outfit.items[hold];
    let category = &corpus.item(answer)?.category;

    let mut pool: Vec<&str> = corpus
        .items
        .iter()
        .filter(|it| &it.category == category && !outfit.items.contains(&it.id))
        .map(|it| it.id.as_str())
        .collect();
    if pool.len() < 3 {
        return Err(NgfError::Sampling(format!(
            "outfit '{}': only {} distractors of category '{category}' exist, need 3",
            outfit.id,
            pool.len()
        )));
    }
    pool.partial_shuffle(&mut rng, 3);
    let distractors = &pool[..3];

    let answer_index = rng.random_range(0..4usize);
    let mut candidates = Vec::with_capacity(4);
    let mut d = distractors.iter();
    for slot in 0..4 {
        if slot == answer_index {
            candidates.push(answer.clone());
        } else {
            candidates.push((*d.next().unwrap()).to_string());
        }
    }

    let given: Vec<String> = outfit
        .items
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != hold)
        .map(|(_, id)| id.clone())
        .collect();

    Ok(FITBQuestion {
        source_id: outfit.id.clone(),
        given,
        candidates,
        answer_index,
        style: outfit.style,
    })
}

/// Duplicate minority-style compatible sets until every nonempty style
/// reaches the majority count. Ablation baseline only.
pub fn oversample_balance(corpus: &Corpus, seed: u64) -> Result<Corpus> {
    let mut by_style: BTreeMap<StyleLabel, Vec<usize>> = BTreeMap::new();
    for (i, outfit) in corpus.outfits.iter().enumerate() {
        if outfit.label == Label::Compatible {
            if let Some(style) = outfit.style {
                by_style.entry(style).or_default().push(i);
            }
        }
    }
    if by_style.is_empty() {
        return Err(NgfError::Data(
            "oversampling needs style-labeled compatible sets, found none".into(),
        ));
    }
    let max_count = by_style.values().map(Vec::len).max().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    let mut copy_counter = 0usize;
    for (_, members) in by_style.iter() {
        let deficit = max_count - members.len();
        for _ in 0..deficit {
            let src = &corpus.outfits[members[rng.random_range(0..members.len())]];
            let mut dup = src.clone();
            dup.id = format!("{}-os{copy_counter}", src.id);
            copy_counter += 1;
            out.outfits.push(dup);
        }
    }
    Ok(out)
}
