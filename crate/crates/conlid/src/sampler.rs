//! Contrastive pool bookkeeping: the FIFO memory bank, positive selection,
//! and negative selection — either unconstrained ("soft") or constrained by
//! script/domain with progressive relaxation ("hard").

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Relaxation level reported when negatives are drawn with no constraint
/// beyond a differing label.
pub const RELAX_UNCONSTRAINED: u8 = 4;

/// Class and grouping metadata attached to a pooled embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemMeta {
    pub class_id: usize,
    pub script: String,
    pub domain: String,
}

/// A detached unit-norm embedding plus its metadata. Bank entries never
/// receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveItem {
    pub embedding: Vec<f32>,
    pub meta: ItemMeta,
}

/// Pair sets selected for one anchor. Indices point into the shared pool
/// (batch entries first, then bank entries); the anchor itself never
/// appears in either set, and the sets are disjoint by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSelection {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Which constraint produced the negatives: 1 = same script and domain,
    /// 2 = same script, 3 = same domain, 4 = any differing label.
    pub relaxation_level: u8,
}

/// FIFO buffer holding the most recent contrastive items. A capacity of
/// zero disables the bank entirely.
#[derive(Debug, Clone, Default)]
pub struct MemoryBank {
    capacity: usize,
    entries: VecDeque<ContrastiveItem>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        MemoryBank {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    /// Appends a batch, evicting the oldest entries once the capacity is
    /// exceeded. After any sequence of pushes the bank holds exactly the
    /// most recent `capacity` items in arrival order.
    pub fn push_batch<I: IntoIterator<Item = ContrastiveItem>>(&mut self, batch: I) {
        for item in batch {
            if self.capacity == 0 {
                return;
            }
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(item);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &ContrastiveItem> {
        self.entries.iter()
    }
}

/// Pool indices sharing the anchor's class, excluding the anchor itself.
pub fn positives(anchor: usize, pool: &[ItemMeta]) -> Vec<usize> {
    let class = pool[anchor].class_id;
    pool.iter()
        .enumerate()
        .filter(|(j, m)| *j != anchor && m.class_id == class)
        .map(|(j, _)| j)
        .collect()
}

/// Negatives under the loosest rule: every pool entry with a different
/// class. Positives always use the same-class rule.
pub fn soft_negatives(anchor: usize, pool: &[ItemMeta]) -> PairSelection {
    let class = pool[anchor].class_id;
    let negatives = pool
        .iter()
        .enumerate()
        .filter(|(j, m)| *j != anchor && m.class_id != class)
        .map(|(j, _)| j)
        .collect();
    PairSelection {
        positives: positives(anchor, pool),
        negatives,
        relaxation_level: RELAX_UNCONSTRAINED,
    }
}

/// Negatives under progressively relaxed constraints. Candidates always
/// have a different class; the conditions then require, in order: (1) same
/// script and same domain, (2) same script, (3) same domain, (4) nothing
/// further. The first condition yielding at least `k` candidates wins and
/// its full candidate set is returned (`k` is a minimum, not a sample
/// size); if none reaches `k`, the unconstrained set is returned.
pub fn hard_negatives(anchor: usize, pool: &[ItemMeta], k: usize) -> Result<PairSelection> {
    if k == 0 {
        return Err(Error::Config(
            "hard-negative minimum k must be at least 1".into(),
        ));
    }
    let a = &pool[anchor];
    let candidates: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(j, m)| *j != anchor && m.class_id != a.class_id)
        .map(|(j, _)| j)
        .collect();

    let matches = |level: u8, m: &ItemMeta| -> bool {
        match level {
            1 => m.script == a.script && m.domain == a.domain,
            2 => m.script == a.script,
            3 => m.domain == a.domain,
            _ => true,
        }
    };

    for level in 1..=RELAX_UNCONSTRAINED {
        let negatives: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&j| matches(level, &pool[j]))
            .collect();
        if negatives.len() >= k || level == RELAX_UNCONSTRAINED {
            return Ok(PairSelection {
                positives: positives(anchor, pool),
                negatives,
                relaxation_level: level,
            });
        }
    }
    unreachable!("level 4 always returns");
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(class_id: usize, script: &str, domain: &str) -> ItemMeta {
        ItemMeta {
            class_id,
            script: script.into(),
            domain: domain.into(),
        }
    }

    fn item(class_id: usize, tag: f32) -> ContrastiveItem {
        ContrastiveItem {
            embedding: vec![tag],
            meta: meta(class_id, "Latn", "web"),
        }
    }

    #[test]
    fn bank_keeps_only_last_capacity_items() {
        let mut bank = MemoryBank::new(3);
        bank.push_batch((0..5).map(|i| item(0, i as f32)));
        assert_eq!(bank.len(), 3);
        let tags: Vec<f32> = bank.iter().map(|it| it.embedding[0]).collect();
        assert_eq!(tags, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_capacity_bank_stays_empty() {
        let mut bank = MemoryBank::new(0);
        bank.push_batch((0..10).map(|i| item(0, i as f32)));
        assert!(bank.is_empty());
    }

    #[test]
    fn positives_share_class_and_exclude_anchor() {
        let pool = vec![
            meta(0, "Latn", "web"),
            meta(1, "Latn", "web"),
            meta(0, "Cyrl", "bible"),
            meta(0, "Latn", "web"),
        ];
        assert_eq!(positives(0, &pool), vec![2, 3]);
        assert_eq!(positives(1, &pool), Vec::<usize>::new());
    }

    #[test]
    fn soft_negatives_take_every_differing_class() {
        let pool = vec![
            meta(0, "Latn", "web"),
            meta(1, "Cyrl", "web"),
            meta(0, "Latn", "web"),
            meta(2, "Latn", "bible"),
        ];
        let sel = soft_negatives(0, &pool);
        assert_eq!(sel.negatives, vec![1, 3]);
        assert_eq!(sel.positives, vec![2]);
        assert_eq!(sel.relaxation_level, RELAX_UNCONSTRAINED);
    }

    /// Anchor (class A, Latn, bible); two (B, Latn, bible); five
    /// (C, Cyrl, bible).
    fn relaxation_pool() -> Vec<ItemMeta> {
        let mut pool = vec![meta(0, "Latn", "bible")];
        pool.push(meta(1, "Latn", "bible"));
        pool.push(meta(1, "Latn", "bible"));
        for _ in 0..5 {
            pool.push(meta(2, "Cyrl", "bible"));
        }
        pool
    }

    #[test]
    fn hard_negatives_stop_at_first_satisfied_condition() {
        let pool = relaxation_pool();
        let sel = hard_negatives(0, &pool, 2).unwrap();
        assert_eq!(sel.relaxation_level, 1);
        assert_eq!(sel.negatives, vec![1, 2]);
    }

    #[test]
    fn hard_negatives_relax_until_enough_candidates() {
        let pool = relaxation_pool();
        // Same script+domain and same script both yield two candidates;
        // same domain yields all seven.
        let sel = hard_negatives(0, &pool, 3).unwrap();
        assert_eq!(sel.relaxation_level, 3);
        assert_eq!(sel.negatives.len(), 7);
    }

    #[test]
    fn hard_negatives_fall_back_to_unconstrained_set() {
        let pool = vec![
            meta(0, "Latn", "web"),
            meta(1, "Cyrl", "bible"),
            meta(2, "Cyrl", "bible"),
        ];
        let sel = hard_negatives(0, &pool, 64).unwrap();
        assert_eq!(sel.relaxation_level, RELAX_UNCONSTRAINED);
        assert_eq!(sel.negatives, vec![1, 2]);
    }

    #[test]
    fn hard_negatives_reject_zero_k() {
        let pool = relaxation_pool();
        assert!(hard_negatives(0, &pool, 0).is_err());
    }

    prop_compose! {
        fn arb_pool()(metas in proptest::collection::vec(
            (0usize..4, 0usize..3, 0usize..3), 2..24,
        )) -> Vec<ItemMeta> {
            metas
                .into_iter()
                .map(|(c, s, d)| meta(c, &format!("S{s}"), &format!("D{d}")))
                .collect()
        }
    }

    proptest! {
        #[test]
        fn hard_negatives_are_subset_of_soft(pool in arb_pool(), k in 1usize..8) {
            let soft: std::collections::HashSet<usize> =
                soft_negatives(0, &pool).negatives.into_iter().collect();
            let hard = hard_negatives(0, &pool, k).unwrap();
            prop_assert!(hard.negatives.iter().all(|j| soft.contains(j)));
        }

        #[test]
        fn relaxation_level_is_monotonic_in_k(pool in arb_pool(), k1 in 1usize..8, k2 in 1usize..8) {
            let (lo, hi) = (k1.min(k2), k1.max(k2));
            let a = hard_negatives(0, &pool, lo).unwrap();
            let b = hard_negatives(0, &pool, hi).unwrap();
            prop_assert!(a.relaxation_level <= b.relaxation_level);
        }

        #[test]
        fn bank_is_exact_suffix_of_push_stream(
            capacity in 0usize..16,
            tags in proptest::collection::vec(0u16..1000, 0..64),
        ) {
            let mut bank = MemoryBank::new(capacity);
            bank.push_batch(tags.iter().map(|&t| item(0, t as f32)));
            let held: Vec<f32> = bank.iter().map(|it| it.embedding[0]).collect();
            let start = tags.len().saturating_sub(capacity);
            let expect: Vec<f32> = tags[start..].iter().map(|&t| t as f32).collect();
            prop_assert_eq!(held, expect);
        }
    }
}
