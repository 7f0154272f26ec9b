//! Writer-disjoint query split and the s1/s2 record split of the remainder.

use std::collections::HashSet;

use rand::seq::SliceRandom;

use super::DatasetManifest;
use crate::error::{Result, ShufaError};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    /// Triplet training.
    pub s1: DatasetManifest,
    /// Category-network training.
    pub s2: DatasetManifest,
    /// Few-shot evaluation; its writers appear nowhere else.
    pub s_query: DatasetManifest,
}

pub fn split_dataset(m: &DatasetManifest, seed_value: u64, query_ways: usize, s1_fraction: f64) -> Result<SplitResult> {
    if m.is_empty() {
        return Err(ShufaError::EmptyManifest);
    }
    if !(0.0..=1.0).contains(&s1_fraction) {
        return Err(ShufaError::Invalid(format!(
            "s1_fraction must lie in [0, 1], got {s1_fraction}"
        )));
    }
    let mut writers = m.writers();
    if writers.len() <= query_ways {
        return Err(ShufaError::TooFewWriters {
            writers: writers.len(),
            needed: query_ways,
        });
    }
    let mut rng = seed::rng(seed_value, &[seed::tag("split")]);
    writers.shuffle(&mut rng);
    let query: HashSet<&str> = writers[..query_ways].iter().map(String::as_str).collect();

    let rest: Vec<usize> = (0..m.len())
        .filter(|&i| !query.contains(m.records[i].writer_id.as_str()))
        .collect();
    let mut order = rest.clone();
    order.shuffle(&mut rng);
    let n1 = (s1_fraction * rest.len() as f64).round() as usize;
    let in_s1: HashSet<usize> = order[..n1].iter().copied().collect();

    let pick = |keep: &dyn Fn(usize) -> bool| DatasetManifest {
        records: (0..m.len())
            .filter(|&i| keep(i))
            .map(|i| m.records[i].clone())
            .collect(),
        source: m.source,
    };
    let is_query = |i: usize| query.contains(m.records[i].writer_id.as_str());
    Ok(SplitResult {
        s1: pick(&|i| !is_query(i) && in_s1.contains(&i)),
        s2: pick(&|i| !is_query(i) && !in_s1.contains(&i)),
        s_query: pick(&is_query),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Category, GlyphRecord, ManifestSource};
    use proptest::prelude::*;

    pub(crate) fn toy_manifest(writers: usize, chars: usize) -> DatasetManifest {
        let records = (0..writers)
            .flat_map(|w| {
                (0..chars).map(move |c| GlyphRecord {
                    record_id: format!("w{w}_c{c}"),
                    image_path: format!("w{w}/c{c}.png").into(),
                    writer_id: format!("w{w}"),
                    character_id: format!("c{c}"),
                    category: Category::ALL[w % 5],
                })
            })
            .collect();
        DatasetManifest::new(records, ManifestSource::Synthetic).unwrap()
    }

    fn ids(m: &DatasetManifest) -> HashSet<String> {
        m.records.iter().map(|r| r.record_id.clone()).collect()
    }

    #[test]
    fn ten_query_writers_out_of_a_hundred() {
        let m = toy_manifest(100, 3);
        let s = split_dataset(&m, 1, 10, 0.5).unwrap();
        let q: HashSet<_> = s.s_query.writers().into_iter().collect();
        assert_eq!(q.len(), 10);
        for r in s.s1.records.iter().chain(&s.s2.records) {
            assert!(!q.contains(&r.writer_id));
        }
        assert_eq!(s.s1.len(), 135);
    }

    #[test]
    fn full_fraction_empties_s2() {
        let m = toy_manifest(6, 4);
        let s = split_dataset(&m, 3, 2, 1.0).unwrap();
        assert!(s.s2.is_empty());
        assert_eq!(s.s1.len(), 16);
    }

    #[test]
    fn deterministic_and_error_cases() {
        let m = toy_manifest(12, 5);
        assert_eq!(
            split_dataset(&m, 5, 4, 0.5).unwrap(),
            split_dataset(&m, 5, 4, 0.5).unwrap()
        );
        assert_ne!(
            split_dataset(&m, 5, 4, 0.5).unwrap(),
            split_dataset(&m, 6, 4, 0.5).unwrap()
        );
        assert!(matches!(
            split_dataset(&m, 0, 12, 0.5),
            Err(ShufaError::TooFewWriters { .. })
        ));
        let empty = DatasetManifest::new(vec![], ManifestSource::External).unwrap();
        assert!(matches!(
            split_dataset(&empty, 0, 1, 0.5),
            Err(ShufaError::EmptyManifest)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn split_partitions_the_manifest(
            writers in 2usize..15, chars in 1usize..8, seed in any::<u64>(), frac in 0.0f64..=1.0,
            ways_pick in 0usize..100,
        ) {
            let m = toy_manifest(writers, chars);
            let ways = 1 + ways_pick % (writers - 1);
            let s = split_dataset(&m, seed, ways, frac).unwrap();
            let (a, b, c) = (ids(&s.s1), ids(&s.s2), ids(&s.s_query));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            prop_assert_eq!(a.len() + b.len() + c.len(), m.len());
            prop_assert_eq!(s.s_query.writers().len(), ways);
            let qw: HashSet<_> = s.s_query.writers().into_iter().collect();
            prop_assert!(s.s1.records.iter().chain(&s.s2.records).all(|r| !qw.contains(&r.writer_id)));
        }
    }
}
