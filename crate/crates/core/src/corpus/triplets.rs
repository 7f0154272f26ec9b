//! Constrained triplet sampling. Kinds alternate type1, type2, type1, ... so
//! the ratio is exact; an anchor that cannot complete its kind is redrawn.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, GlyphRecord};
use crate::error::{Result, ShufaError};
use crate::seed;

/// Draws allowed per emitted triplet before giving up.
pub const RETRY_BUDGET: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletKind {
    /// Negative writes the same character as the anchor.
    Type1,
    /// Negative writes a different character.
    Type2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub positive: GlyphRecord,
    pub anchor: GlyphRecord,
    pub negative: GlyphRecord,
    pub kind: TripletKind,
}

/// Checks every triplet constraint, naming the first one violated.
pub fn validate_triplet(t: &Triplet) -> Result<(), &'static str> {
    if t.positive.writer_id != t.anchor.writer_id {
        return Err("positive and anchor must share a writer");
    }
    if t.negative.writer_id == t.anchor.writer_id {
        return Err("negative must come from another writer");
    }
    if t.positive.character_id == t.anchor.character_id {
        return Err("positive and anchor must be different characters");
    }
    if t.positive.record_id == t.anchor.record_id {
        return Err("positive and anchor must be different records");
    }
    match t.kind {
        TripletKind::Type1 if t.negative.character_id != t.anchor.character_id => {
            Err("type1 negative must be the anchor's character")
        }
        TripletKind::Type2 if t.negative.character_id == t.anchor.character_id => {
            Err("type2 negative must be a different character")
        }
        _ => Ok(()),
    }
}

struct Index {
    writer: Vec<usize>,
    character: Vec<usize>,
    by_writer: Vec<Vec<usize>>,
    by_character: Vec<Vec<usize>>,
}

impl Index {
    fn new(m: &DatasetManifest) -> Self {
        let mut writers = HashMap::new();
        let mut chars = HashMap::new();
        let mut idx = Index {
            writer: Vec::with_capacity(m.len()),
            character: Vec::with_capacity(m.len()),
            by_writer: Vec::new(),
            by_character: Vec::new(),
        };
        for (i, r) in m.records.iter().enumerate() {
            let n = writers.len();
            let w = *writers.entry(r.writer_id.as_str()).or_insert(n);
            let n = chars.len();
            let c = *chars.entry(r.character_id.as_str()).or_insert(n);
            if w == idx.by_writer.len() {
                idx.by_writer.push(Vec::new());
            }
            if c == idx.by_character.len() {
                idx.by_character.push(Vec::new());
            }
            idx.by_writer[w].push(i);
            idx.by_character[c].push(i);
            idx.writer.push(w);
            idx.character.push(c);
        }
        idx
    }
}

fn pick(candidates: &[usize], rng: &mut impl Rng) -> Option<usize> {
    (!candidates.is_empty()).then(|| candidates[rng.random_range(0..candidates.len())])
}

fn draw(idx: &Index, kind: TripletKind, rng: &mut impl Rng) -> Result<(usize, usize, usize), &'static str> {
    let a = rng.random_range(0..idx.writer.len());
    let (wa, ca) = (idx.writer[a], idx.character[a]);
    let positives: Vec<usize> = idx.by_writer[wa]
        .iter()
        .copied()
        .filter(|&p| idx.character[p] != ca)
        .collect();
    let p = pick(&positives, rng).ok_or("anchor's writer has no second character")?;
    let n = match kind {
        TripletKind::Type1 => {
            let negatives: Vec<usize> = idx.by_character[ca]
                .iter()
                .copied()
                .filter(|&n| idx.writer[n] != wa)
                .collect();
            pick(&negatives, rng).ok_or("no other writer wrote the anchor's character")?
        }
        TripletKind::Type2 => {
            let n = rng.random_range(0..idx.writer.len());
            if idx.writer[n] == wa || idx.character[n] == ca {
                return Err("no record from another writer with a different character");
            }
            n
        }
    };
    Ok((p, a, n))
}

/// `count` triplets from `s1`, deterministic in `seed_value`.
pub fn sample_triplets(s1: &DatasetManifest, count: usize, seed_value: u64) -> Result<Vec<Triplet>> {
    if s1.is_empty() {
        return Err(ShufaError::EmptyManifest);
    }
    let idx = Index::new(s1);
    if idx.by_writer.len() < 2 {
        return Err(ShufaError::TripletConstraint("need at least two writers".into()));
    }
    let mut rng = seed::rng(seed_value, &[seed::tag("triplets")]);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let kind = if i % 2 == 0 {
            TripletKind::Type1
        } else {
            TripletKind::Type2
        };
        let mut last = "";
        let mut found = None;
        for _ in 0..RETRY_BUDGET {
            match draw(&idx, kind, &mut rng) {
                Ok(t) => {
                    found = Some(t);
                    break;
                }
                Err(why) => last = why,
            }
        }
        let (p, a, n) = found.ok_or_else(|| {
            ShufaError::TripletConstraint(format!("{kind:?} triplet not found in {RETRY_BUDGET} draws: {last}"))
        })?;
        out.push(Triplet {
            positive: s1.records[p].clone(),
            anchor: s1.records[a].clone(),
            negative: s1.records[n].clone(),
            kind,
        });
    }
    Ok(out)
}
