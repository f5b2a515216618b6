use super::MetricsError;
use crate::lego::TokenizedExample;
use crate::models::{AttentionRecord, TransformerModel};
use crate::tensor::Element;

/// Head-averaged `[len, len]` attention for one layer.
fn head_mean(rec: &AttentionRecord, layer: usize) -> Vec<f64> {
    let n = rec.len;
    let mut out = vec![0.0; n * n];
    for h in 0..rec.heads {
        for q in 0..n {
            for (o, &w) in out[q * n..(q + 1) * n].iter_mut().zip(rec.row(layer, h, q)) {
                *o += w;
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= rec.heads as f64);
    out
}

fn num_clauses(rec: &AttentionRecord) -> usize {
    rec.clause_index.iter().flatten().max().map_or(0, |&c| c + 1)
}

/// Mean over queries in clause `from` of the mass placed on keys in `onto`.
fn clause_mass(rec: &AttentionRecord, avg: &[f64], from: usize, onto: usize) -> f64 {
    let n = rec.len;
    let keys: Vec<usize> = (0..n).filter(|&k| rec.clause_index[k] == Some(onto)).collect();
    let queries: Vec<usize> = (0..n).filter(|&q| rec.clause_index[q] == Some(from)).collect();
    let total: f64 = queries.iter().map(|&q| keys.iter().map(|&k| avg[q * n + k]).sum::<f64>()).sum();
    total / queries.len() as f64
}

fn check_layers(records: &[AttentionRecord]) -> Result<usize, MetricsError> {
    let first = records.first().ok_or_else(|| MetricsError::Undefined("no attention records".into()))?;
    if records.iter().any(|r| r.layers != first.layers) {
        return Err(MetricsError::Comparability("records differ in layer count".into()));
    }
    Ok(first.layers)
}

/// Per layer: mass from clause `c` queries onto clause `c - 1` keys, averaged
/// over clauses `c >= 2`, heads and examples. Clauses are canonical.
pub fn preceding_clause_attention(records: &[AttentionRecord]) -> Result<Vec<f64>, MetricsError> {
    let layers = check_layers(records)?;
    let mut out = vec![0.0; layers];
    for rec in records {
        let t = num_clauses(rec);
        if t < 2 {
            return Err(MetricsError::Undefined(format!("preceding-clause score needs two clauses, got {t}")));
        }
        for (layer, o) in out.iter_mut().enumerate() {
            let avg = head_mean(rec, layer);
            *o += (1..t).map(|c| clause_mass(rec, &avg, c, c - 1)).sum::<f64>() / (t - 1) as f64;
        }
    }
    out.iter_mut().for_each(|v| *v /= records.len() as f64);
    Ok(out)
}

/// `[layer][clause]`: mass from each canonical clause's queries onto the
/// first clause's keys, averaged over heads and examples.
pub fn first_clause_attention(records: &[AttentionRecord]) -> Result<Vec<Vec<f64>>, MetricsError> {
    let layers = check_layers(records)?;
    let t = num_clauses(&records[0]);
    if records.iter().any(|r| num_clauses(r) != t) {
        return Err(MetricsError::Comparability("records differ in clause count".into()));
    }
    let mut out = vec![vec![0.0; t]; layers];
    for rec in records {
        for (layer, row) in out.iter_mut().enumerate() {
            let avg = head_mean(rec, layer);
            for (c, o) in row.iter_mut().enumerate() {
                *o += clause_mass(rec, &avg, c, 0);
            }
        }
    }
    for v in out.iter_mut().flatten() {
        *v /= records.len() as f64;
    }
    Ok(out)
}

/// Per layer: the `[len, len]` attention averaged over heads and examples,
/// flattened row-major.
pub fn mean_attention_patterns(records: &[AttentionRecord]) -> Result<Vec<Vec<f64>>, MetricsError> {
    let layers = check_layers(records)?;
    let n = records[0].len;
    if records.iter().any(|r| r.len != n) {
        return Err(MetricsError::Comparability("probe sequences differ in length".into()));
    }
    let mut out = vec![vec![0.0; n * n]; layers];
    for rec in records {
        for (layer, acc) in out.iter_mut().enumerate() {
            for (a, v) in acc.iter_mut().zip(head_mean(rec, layer)) {
                *a += v;
            }
        }
    }
    for v in out.iter_mut().flatten() {
        *v /= records.len() as f64;
    }
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine of vectors of different length");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Per-layer cosine similarity between the two models' mean attention
/// patterns on `probe`.
pub fn attention_cosine_similarity<E: Element>(
    before: &TransformerModel<E>,
    after: &TransformerModel<E>,
    probe: &[&TokenizedExample],
) -> Result<Vec<f64>, MetricsError> {
    if before.config() != after.config() {
        return Err(MetricsError::Comparability("checkpoints have different configs".into()));
    }
    let a = mean_attention_patterns(&before.attention(probe)?)?;
    let b = mean_attention_patterns(&after.attention(probe)?)?;
    Ok(a.iter().zip(&b).map(|(x, y)| cosine(x, y)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Clauses of 5 tokens separated by one separator, as in tokenized chains.
    fn layout(t: usize) -> Vec<Option<usize>> {
        let mut v = Vec::new();
        for c in 0..t {
            if c > 0 {
                v.push(None);
            }
            v.extend(std::iter::repeat_n(Some(c), 5));
        }
        v
    }

    fn from_fn(layers: usize, heads: usize, t: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> AttentionRecord {
        let clause_index = layout(t);
        let len = clause_index.len();
        let mut weights = Vec::new();
        for l in 0..layers {
            for h in 0..heads {
                for q in 0..len {
                    weights.extend((0..len).map(|k| f(l, h, q, k)));
                }
            }
        }
        AttentionRecord { layers, heads, len, weights, clause_index }
    }

    fn normalize_rows(rec: &mut AttentionRecord) {
        let n = rec.len;
        for row in rec.weights.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }

    /// Direct loop over (head, query, key) triples.
    fn brute(rec: &AttentionRecord, layer: usize, from: usize, onto: usize) -> f64 {
        let mut total = 0.0;
        let mut rows = 0;
        for q in 0..rec.len {
            if rec.clause_index[q] != Some(from) {
                continue;
            }
            rows += 1;
            for k in 0..rec.len {
                if rec.clause_index[k] == Some(onto) {
                    for h in 0..rec.heads {
                        total += rec.get(layer, h, q, k) / rec.heads as f64;
                    }
                }
            }
        }
        total / rows as f64
    }

    #[test]
    fn identity_pattern() {
        let r = from_fn(2, 1, 4, |_, _, q, k| f64::from(q == k));
        assert_eq!(preceding_clause_attention(std::slice::from_ref(&r)).unwrap(), vec![0.0, 0.0]);
        assert_eq!(first_clause_attention(&[r]).unwrap()[1], vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_pattern() {
        let t = 4;
        let r = from_fn(1, 2, t, |_, _, _, _| 1.0 / 23.0);
        let n = layout(t).len() as f64;
        assert!((preceding_clause_attention(std::slice::from_ref(&r)).unwrap()[0] - 5.0 / n).abs() < 1e-12);
        for v in &first_clause_attention(&[r]).unwrap()[0] {
            assert!((v - 5.0 / n).abs() < 1e-12);
        }
    }

    #[test]
    fn constructed_patterns_score_one() {
        let idx = layout(4);
        let prev = from_fn(1, 1, 4, |_, _, q, k| match idx[q] {
            Some(c) if c > 0 => f64::from(idx[k] == Some(c - 1)) / 5.0,
            _ => 1.0 / 23.0,
        });
        assert!((preceding_clause_attention(&[prev]).unwrap()[0] - 1.0).abs() < 1e-12);
        let first = from_fn(1, 1, 4, |_, _, _, k| f64::from(idx[k] == Some(0)) / 5.0);
        for v in &first_clause_attention(&[first]).unwrap()[0] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_clause_is_undefined() {
        let r = from_fn(1, 1, 1, |_, _, _, _| 0.2);
        assert!(matches!(preceding_clause_attention(&[r]), Err(MetricsError::Undefined(_))));
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
    }

    fn arb_record() -> impl Strategy<Value = AttentionRecord> {
        (1usize..3, 1usize..3, 2usize..6).prop_flat_map(|(layers, heads, t)| {
            let len = layout(t).len();
            prop::collection::vec(0.01f64..1.0, layers * heads * len * len).prop_map(move |w| {
                let mut r = AttentionRecord { layers, heads, len, weights: w, clause_index: layout(t) };
                normalize_rows(&mut r);
                r
            })
        })
    }

    proptest! {
        #[test]
        fn scores_match_brute_force(recs in prop::collection::vec(arb_record(), 1..3)) {
            let layers = recs[0].layers;
            let t = recs[0].clause_index.iter().flatten().max().unwrap() + 1;
            let recs: Vec<_> = recs.into_iter()
                .filter(|r| r.layers == layers && r.clause_index.len() == layout(t).len())
                .collect();
            let prec = preceding_clause_attention(&recs).unwrap();
            let first = first_clause_attention(&recs).unwrap();
            for l in 0..layers {
                let want: f64 = recs.iter()
                    .map(|r| (1..t).map(|c| brute(r, l, c, c - 1)).sum::<f64>() / (t - 1) as f64)
                    .sum::<f64>() / recs.len() as f64;
                prop_assert!((prec[l] - want).abs() < 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&prec[l]));
                for c in 0..t {
                    let want = recs.iter().map(|r| brute(r, l, c, 0)).sum::<f64>() / recs.len() as f64;
                    prop_assert!((first[l][c] - want).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_free(
            a in prop::collection::vec(0.0f64..1.0, 8),
            b in prop::collection::vec(0.0f64..1.0, 8),
            s in 0.1f64..10.0,
        ) {
            prop_assume!(a.iter().sum::<f64>() > 0.1 && b.iter().sum::<f64>() > 0.1);
            let c = cosine(&a, &b);
            prop_assert!((c - cosine(&b, &a)).abs() < 1e-12);
            let (sa, sb): (Vec<f64>, Vec<f64>) = (a.iter().map(|v| v * s).collect(), b.iter().map(|v| v * s).collect());
            prop_assert!((c - cosine(&sa, &sb)).abs() < 1e-12);
        }

        #[test]
        fn small_perturbation_keeps_cosine_near_one(
            a in prop::collection::vec(0.1f64..1.0, 64),
            noise in prop::collection::vec(-1.0f64..1.0, 64),
        ) {
            let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x * (1.0 + 1e-3 * e)).collect();
            prop_assert!(cosine(&a, &b) > 0.999);
        }
    }
}
