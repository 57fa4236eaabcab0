use std::collections::BTreeMap;

use rand::Rng;

use super::history::IOHistoryEntry;
use super::ImitationError;

/// Sparse L2-normalized term-frequency vector, sorted by term id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContextVector {
    pub terms: Vec<(u32, f64)>,
}

impl ContextVector {
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dot(&self, other: &ContextVector) -> f64 {
        let (a, b) = (&self.terms, &other.terms);
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }
}

/// Assigns term ids in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct TermIndex {
    ids: BTreeMap<String, u32>,
}

impl TermIndex {
    pub fn id(&mut self, term: &str) -> u32 {
        let next = self.ids.len() as u32;
        *self.ids.entry(term.to_string()).or_insert(next)
    }
}

pub fn context_embedding(index: &mut TermIndex, context: &[String]) -> ContextVector {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for tok in context {
        *counts.entry(index.id(tok)).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        return ContextVector::default();
    }
    ContextVector {
        terms: counts.into_iter().map(|(k, c)| (k, c / norm)).collect(),
    }
}

/// Cosine similarity of two embeddings; zero vectors score 0.
pub fn cosine(a: &ContextVector, b: &ContextVector) -> f64 {
    a.dot(b)
}

pub fn embed_history(index: &mut TermIndex, history: &[IOHistoryEntry]) -> Vec<ContextVector> {
    history.iter().map(|e| context_embedding(index, &e.context)).collect()
}

/// Ids of the `k` entries most similar to `entry`, excluding itself, ordered
/// by descending similarity then ascending id. Entries with an empty context
/// are candidates only when no other kind exists.
pub fn top_k_similar(embeddings: &[ContextVector], entry: usize, k: usize) -> Vec<usize> {
    let me = &embeddings[entry];
    let any_nonzero = embeddings.iter().enumerate().any(|(id, e)| id != entry && !e.is_zero());
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (id, e) in embeddings.iter().enumerate() {
        if id == entry || (any_nonzero && e.is_zero()) {
            continue;
        }
        let s = cosine(me, e);
        if best.len() == k && !ranks_before((s, id), best[k - 1]) {
            continue;
        }
        let pos = best.partition_point(|&b| ranks_before(b, (s, id)));
        best.insert(pos, (s, id));
        best.truncate(k);
    }
    best.into_iter().map(|(_, id)| id).collect()
}

fn ranks_before(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Id of a negative for `entry`: uniform over the eligible members of its
/// top-`k` similar entries, or over all of them when none is eligible.
pub fn sample_negative<R: Rng, F: Fn(usize) -> bool>(
    embeddings: &[ContextVector],
    entry: usize,
    k: usize,
    eligible: F,
    rng: &mut R,
) -> Result<usize, ImitationError> {
    if embeddings.len() < 2 {
        return Err(ImitationError::HistoryTooSmall(embeddings.len()));
    }
    if k == 0 {
        return Err(ImitationError::Config("k must be positive".into()));
    }
    let top = top_k_similar(embeddings, entry, k);
    let ok: Vec<usize> = top.iter().copied().filter(|&id| eligible(id)).collect();
    let pool = if ok.is_empty() { &top } else { &ok };
    Ok(pool[rng.random_range(0..pool.len())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_and_disjoint() {
        let mut ix = TermIndex::default();
        let a = context_embedding(&mut ix, &toks("want restaurant area north"));
        let b = context_embedding(&mut ix, &toks("want restaurant area north"));
        let c = context_embedding(&mut ix, &toks("bye ?"));
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&a, &c), 0.0);
        assert!(context_embedding(&mut ix, &[]).is_zero());
    }

    #[test]
    fn pair_history_forces_the_other() {
        let mut ix = TermIndex::default();
        let e = vec![
            context_embedding(&mut ix, &toks("a b")),
            context_embedding(&mut ix, &toks("c")),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_negative(&e, 0, 5, |_| true, &mut rng).unwrap(), 1);
        }
        assert!(matches!(
            sample_negative(&e[..1], 0, 5, |_| true, &mut rng),
            Err(ImitationError::HistoryTooSmall(1))
        ));
    }

    #[test]
    fn empty_contexts_are_not_candidates() {
        let mut ix = TermIndex::default();
        let e: Vec<_> = ["", "a", "", "b", "c"]
            .iter()
            .map(|s| context_embedding(&mut ix, &toks(s)))
            .collect();
        assert_eq!(top_k_similar(&e, 0, 5), vec![1, 3, 4]);
        assert_eq!(top_k_similar(&e, 1, 2), vec![3, 4]);
    }

    #[test]
    fn ineligible_neighbours_are_skipped_unless_all_are() {
        let mut ix = TermIndex::default();
        let e: Vec<_> = ["a", "a", "a b", "c"]
            .iter()
            .map(|s| context_embedding(&mut ix, &toks(s)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(sample_negative(&e, 0, 2, |i| i != 1, &mut rng).unwrap(), 2);
            assert!([1, 2].contains(&sample_negative(&e, 0, 2, |_| false, &mut rng).unwrap()));
        }
    }

    #[test]
    fn duplicate_context_ranks_first() {
        let mut ix = TermIndex::default();
        let e: Vec<_> = ["a b c", "x y", "a b", "z", "a b c", "b"]
            .iter()
            .map(|s| context_embedding(&mut ix, &toks(s)))
            .collect();
        assert_eq!(top_k_similar(&e, 0, 5)[0], 4);
        assert_eq!(top_k_similar(&e, 4, 5)[0], 0);
    }

    fn dense(ctx: &[String], vocab: &[&str]) -> Vec<f64> {
        vocab.iter().map(|v| ctx.iter().filter(|t| t == v).count() as f64).collect()
    }

    fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
    }

    const WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

    fn ctx_strategy() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(0..WORDS.len(), 0..8).prop_map(|v| v.into_iter().map(|i| WORDS[i].to_string()).collect())
    }

    proptest! {
        #[test]
        fn cosine_matches_dense_oracle(a in ctx_strategy(), b in ctx_strategy()) {
            let mut ix = TermIndex::default();
            let va = context_embedding(&mut ix, &a);
            let vb = context_embedding(&mut ix, &b);
            let want = oracle_cos(&dense(&a, &WORDS), &dense(&b, &WORDS));
            prop_assert!((cosine(&va, &vb) - want).abs() < 1e-12);
        }

        #[test]
        fn negative_lies_in_brute_force_top_five(
            ctxs in prop::collection::vec(ctx_strategy(), 50),
            mask in prop::collection::vec(any::<bool>(), 50),
            entry in 0usize..50,
            seed: u64,
        ) {
            let mut ix = TermIndex::default();
            let e: Vec<_> = ctxs.iter().map(|c| context_embedding(&mut ix, c)).collect();
            let any = (0..50).any(|i| i != entry && !ctxs[i].is_empty());
            let mut ranked: Vec<(f64, usize)> = (0..50)
                .filter(|&i| i != entry && (!any || !ctxs[i].is_empty()))
                .map(|i| (oracle_cos(&dense(&ctxs[entry], &WORDS), &dense(&ctxs[i], &WORDS)), i))
                .collect();
            ranked.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            let fifth = ranked[4.min(ranked.len() - 1)].0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let neg = sample_negative(&e, entry, 5, |i| mask[i], &mut rng).unwrap();
            prop_assert!(neg != entry);
            let top = top_k_similar(&e, entry, 5);
            prop_assert!(top.contains(&neg));
            prop_assert!(mask[neg] || !top.iter().any(|&i| mask[i]));
            let s = oracle_cos(&dense(&ctxs[entry], &WORDS), &dense(&ctxs[neg], &WORDS));
            prop_assert!(s >= fifth - 1e-12);
        }
    }
}
