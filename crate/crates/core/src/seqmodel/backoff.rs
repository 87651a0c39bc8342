//! Interpolated Witten-Bell estimation over a chain of contexts, ordered from
//! the most general level to the most specific one, with a uniform floor.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct ContextCounts {
    pub total: f64,
    pub counts: FxHashMap<TokenId, f64>,
}

impl ContextCounts {
    fn types(&self) -> f64 {
        self.counts.len() as f64
    }
}

/// Per-level context keys laid out in one buffer.
#[derive(Debug, Clone, Default)]
pub(crate) struct ContextKeys {
    buf: Vec<TokenId>,
    ends: Vec<usize>,
}

impl ContextKeys {
    pub fn clear(&mut self) {
        self.buf.clear();
        self.ends.clear();
    }

    pub fn push_token(&mut self, t: TokenId) {
        self.buf.push(t);
    }

    /// Closes the key of the current level.
    pub fn finish_level(&mut self) {
        self.ends.push(self.buf.len());
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn level(&self, i: usize) -> &[TokenId] {
        let start = if i == 0 { 0 } else { self.ends[i - 1] };
        &self.buf[start..self.ends[i]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BackoffTable {
    vocab_size: usize,
    levels: Vec<FxHashMap<Vec<TokenId>, ContextCounts>>,
}

impl BackoffTable {
    pub fn new(vocab_size: usize, num_levels: usize) -> Self {
        Self {
            vocab_size,
            levels: vec![FxHashMap::default(); num_levels],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Total count of the level-0 context (all observed tokens).
    pub fn total_at_root(&self) -> f64 {
        self.levels
            .first()
            .and_then(|l| l.get(&[][..]))
            .map_or(0.0, |cc| cc.total)
    }

    pub fn observe(&mut self, keys: &ContextKeys, token: TokenId, weight: f64) {
        debug_assert_eq!(keys.len(), self.levels.len());
        for (i, level) in self.levels.iter_mut().enumerate() {
            let key = keys.level(i);
            let entry = match level.get_mut(key) {
                Some(e) => e,
                None => level.entry(key.to_vec()).or_default(),
            };
            entry.total += weight;
            *entry.counts.entry(token).or_insert(0.0) += weight;
        }
    }

    pub fn prob(&self, keys: &ContextKeys, token: TokenId) -> f64 {
        let mut p = 1.0 / self.vocab_size as f64;
        for (i, level) in self.levels.iter().enumerate() {
            if let Some(cc) = level.get(keys.level(i)) {
                let t = cc.types();
                let c = cc.counts.get(&token).copied().unwrap_or(0.0);
                p = (c + t * p) / (cc.total + t);
            }
        }
        p
    }

    pub fn distribution(&self, keys: &ContextKeys) -> Vec<f64> {
        let mut dist = vec![1.0 / self.vocab_size as f64; self.vocab_size];
        for (i, level) in self.levels.iter().enumerate() {
            if let Some(cc) = level.get(keys.level(i)) {
                let t = cc.types();
                let denom = cc.total + t;
                let keep = t / denom;
                for d in dist.iter_mut() {
                    *d *= keep;
                }
                for (&tok, &c) in &cc.counts {
                    dist[tok as usize] += c / denom;
                }
            }
        }
        dist
    }

    /// Most probable token; ties go to the lowest id.
    pub fn argmax(&self, keys: &ContextKeys) -> TokenId {
        // Tokens never counted in any active context share the smallest
        // probability, so only the lowest such id can compete.
        let mut candidates: Vec<TokenId> = Vec::new();
        for (i, level) in self.levels.iter().enumerate() {
            if let Some(cc) = level.get(keys.level(i)) {
                candidates.extend(cc.counts.keys().copied());
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        let lowest_unseen =
            (0..self.vocab_size as TokenId).find(|t| candidates.binary_search(t).is_err());
        if let Some(u) = lowest_unseen {
            candidates.push(u);
            candidates.sort_unstable();
        }
        let mut best = (candidates[0], f64::NEG_INFINITY);
        for &tok in &candidates {
            let p = self.prob(keys, tok);
            if p > best.1 {
                best = (tok, p);
            }
        }
        best.0
    }

    /// `self ← a·self + b·other`, level by level.
    pub fn merge_scaled(&mut self, a: f64, other: &BackoffTable, b: f64) {
        assert_eq!(self.levels.len(), other.levels.len());
        for level in &mut self.levels {
            for cc in level.values_mut() {
                cc.total *= a;
                for c in cc.counts.values_mut() {
                    *c *= a;
                }
            }
        }
        for (mine, theirs) in self.levels.iter_mut().zip(&other.levels) {
            for (key, cc) in theirs {
                let entry = mine.entry(key.clone()).or_default();
                entry.total += b * cc.total;
                for (&tok, &c) in &cc.counts {
                    *entry.counts.entry(tok).or_insert(0.0) += b * c;
                }
            }
        }
        for level in &mut self.levels {
            level.retain(|_, cc| {
                cc.counts.retain(|_, c| *c > 0.0);
                cc.total > 0.0 && !cc.counts.is_empty()
            });
        }
    }

    pub fn to_serial(&self) -> Vec<Vec<SerialContext>> {
        self.levels
            .iter()
            .map(|level| {
                let mut rows: Vec<SerialContext> = level
                    .iter()
                    .map(|(key, cc)| {
                        let mut counts: Vec<(TokenId, f64)> =
                            cc.counts.iter().map(|(&t, &c)| (t, c)).collect();
                        counts.sort_unstable_by_key(|e| e.0);
                        SerialContext {
                            context: key.clone(),
                            total: cc.total,
                            counts,
                        }
                    })
                    .collect();
                rows.sort_unstable_by(|a, b| a.context.cmp(&b.context));
                rows
            })
            .collect()
    }

    pub fn from_serial(vocab_size: usize, levels: Vec<Vec<SerialContext>>) -> Self {
        let levels = levels
            .into_iter()
            .map(|rows| {
                rows.into_iter()
                    .map(|row| {
                        let counts = row.counts.into_iter().collect();
                        (
                            row.context,
                            ContextCounts {
                                total: row.total,
                                counts,
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        Self { vocab_size, levels }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SerialContext {
    pub context: Vec<TokenId>,
    pub total: f64,
    pub counts: Vec<(TokenId, f64)>,
}
