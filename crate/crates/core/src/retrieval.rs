//! Similarity functions over fused dictionaries and k-nearest-neighbour
//! search, exhaustive or restricted to the members of relevant boxes.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{BoxModel, BoxPostings, MembershipScope};
use crate::concept::FusedCase;
use crate::error::{Error, Result};
use crate::sparse::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Cosine,
    Dice,
    Jaccard,
    /// Unnormalized dot product.
    Vsm,
    /// Sum over shared concepts of the larger of the two weights.
    #[default]
    Fsf,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 5] = [
        SimilarityKind::Cosine,
        SimilarityKind::Dice,
        SimilarityKind::Jaccard,
        SimilarityKind::Vsm,
        SimilarityKind::Fsf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Dice => "dice",
            SimilarityKind::Jaccard => "jaccard",
            SimilarityKind::Vsm => "vsm",
            SimilarityKind::Fsf => "fsf",
        }
    }

    /// `q_norm_sq` and `d_norm_sq` are the squared L2 norms of `q` and `d`.
    fn score(self, q: &SparseVector, q_norm_sq: f64, d: &SparseVector, d_norm_sq: f64) -> f64 {
        match self {
            SimilarityKind::Fsf => {
                let mut acc = 0.0;
                q.for_each_shared(d, |a, b| acc += a.max(b));
                acc
            }
            SimilarityKind::Vsm => q.dot(d),
            SimilarityKind::Cosine => {
                let den = q_norm_sq.sqrt() * d_norm_sq.sqrt();
                if den > 0.0 {
                    q.dot(d) / den
                } else {
                    0.0
                }
            }
            SimilarityKind::Dice => {
                let den = q_norm_sq + d_norm_sq;
                if den > 0.0 {
                    2.0 * q.dot(d) / den
                } else {
                    0.0
                }
            }
            SimilarityKind::Jaccard => {
                let dot = q.dot(d);
                let den = q_norm_sq + d_norm_sq - dot;
                if den > 0.0 {
                    dot / den
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Domain(format!("unknown similarity {s:?}")))
    }
}

fn check_non_negative(v: &SparseVector) -> Result<()> {
    match v.iter().find(|&(_, x)| !(x >= 0.0 && x.is_finite())) {
        Some((id, x)) => Err(Error::Domain(format!("coordinate {id} = {x} is not a finite non-negative number"))),
        None => Ok(()),
    }
}

pub fn similarity(kind: SimilarityKind, q: &SparseVector, d: &SparseVector) -> Result<f64> {
    check_non_negative(q)?;
    check_non_negative(d)?;
    Ok(kind.score(q, q.norm_sq(), d, d.norm_sq()))
}

/// Hits of one query: scores never increase, ties by ascending case id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<(String, f64)>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub k: usize,
    pub kind: SimilarityKind,
    /// Drop hits scoring exactly 0.
    pub drop_zero: bool,
}

impl SearchParams {
    pub fn new(k: usize, kind: SimilarityKind) -> Self {
        Self { k, kind, drop_zero: false }
    }
}

/// Fused cases prepared for scoring.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    ids: Vec<String>,
    vectors: Vec<SparseVector>,
    norms_sq: Vec<f64>,
}

impl SearchIndex {
    pub fn new(cases: &[FusedCase]) -> Self {
        let vectors: Vec<SparseVector> = cases.iter().map(FusedCase::to_vector).collect();
        Self {
            ids: cases.iter().map(|c| c.case_id().to_owned()).collect(),
            norms_sq: vectors.iter().map(SparseVector::norm_sq).collect(),
            vectors,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn rank(&self, query: &FusedCase, params: SearchParams, positions: impl Iterator<Item = usize>) -> RankedList {
        let q = query.to_vector();
        let q_norm = q.norm_sq();
        let mut scored: Vec<(usize, f64)> = positions
            .map(|i| (i, params.kind.score(&q, q_norm, &self.vectors[i], self.norms_sq[i])))
            .filter(|&(_, s)| !(params.drop_zero && s == 0.0))
            .collect();
        let cmp =
            |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0]));
        if params.k < scored.len() {
            scored.select_nth_unstable_by(params.k, cmp);
            scored.truncate(params.k);
        }
        scored.sort_unstable_by(cmp);
        RankedList {
            query_id: query.case_id().to_owned(),
            hits: scored.into_iter().map(|(i, s)| (self.ids[i].clone(), s)).collect(),
        }
    }

    /// Top-k cases over the whole index.
    pub fn search(&self, query: &FusedCase, params: SearchParams) -> RankedList {
        self.rank(query, params, 0..self.len())
    }

    /// Scores only the given positions.
    pub fn search_subset(&self, query: &FusedCase, params: SearchParams, positions: &[usize]) -> RankedList {
        self.rank(query, params, positions.iter().copied())
    }
}

pub fn knn_query(index: &[FusedCase], query: &FusedCase, k: usize, kind: SimilarityKind) -> RankedList {
    SearchIndex::new(index).search(query, SearchParams::new(k, kind))
}

/// A search index paired with a box model trained on the same cases.
#[derive(Debug)]
pub struct ClusteredIndex<'a> {
    model: &'a BoxModel,
    index: &'a SearchIndex,
    box_positions: Vec<Vec<usize>>,
    postings: BoxPostings,
    scope: MembershipScope,
}

/// Pruned hits with the number of cases that were scored.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedResult {
    pub ranked: RankedList,
    pub candidates: usize,
    pub boxes: usize,
}

impl<'a> ClusteredIndex<'a> {
    pub fn new(model: &'a BoxModel, index: &'a SearchIndex, scope: MembershipScope) -> Result<Self> {
        let position: HashMap<&str, usize> = index.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut seen = vec![false; index.len()];
        let mut box_positions = Vec::with_capacity(model.boxes.len());
        for b in &model.boxes {
            let mut ps = Vec::with_capacity(b.members().len());
            for m in b.members() {
                let &p = position
                    .get(m.as_str())
                    .ok_or_else(|| Error::Consistency(format!("model member {m} is not in the index")))?;
                if std::mem::replace(&mut seen[p], true) {
                    return Err(Error::Consistency(format!("case {m} belongs to several boxes")));
                }
                ps.push(p);
            }
            box_positions.push(ps);
        }
        if let Some(p) = seen.iter().position(|s| !s) {
            return Err(Error::Consistency(format!("index case {} is in no box", index.ids[p])));
        }
        let postings = match scope {
            MembershipScope::Query => BoxPostings::new(&model.boxes),
            MembershipScope::Vocabulary => BoxPostings::default(),
        };
        Ok(Self { model, index, box_positions, postings, scope })
    }

    pub fn search(&self, query: &FusedCase, params: SearchParams) -> PrunedResult {
        let q = query.to_vector();
        let relevant: Vec<usize> = match self.scope {
            MembershipScope::Query => self.postings.query_relevant(&self.model.boxes, &q),
            MembershipScope::Vocabulary => self.model.relevant_boxes(&q, self.scope).iter().map(|r| r.index).collect(),
        };
        let mut positions: Vec<usize> = relevant.iter().flat_map(|&j| self.box_positions[j].iter().copied()).collect();
        positions.sort_unstable();
        PrunedResult {
            candidates: positions.len(),
            boxes: relevant.len(),
            ranked: self.index.search_subset(query, params, &positions),
        }
    }
}

pub fn pruned_query(
    model: &BoxModel,
    index: &[FusedCase],
    query: &FusedCase,
    k: usize,
    kind: SimilarityKind,
    scope: MembershipScope,
) -> Result<RankedList> {
    let search_index = SearchIndex::new(index);
    let clustered = ClusteredIndex::new(model, &search_index, scope)?;
    Ok(clustered.search(query, SearchParams::new(k, kind)).ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{membership, query_membership, train};
    use crate::concept::{ConceptId, FusedEntry, Provenance};
    use SimilarityKind::*;

    fn sv(pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_pairs(pairs.iter().map(|&(n, x)| (ConceptId::from_number(n).unwrap(), x))).unwrap()
    }

    fn fused(case_id: &str, pairs: &[(u32, f64)]) -> FusedCase {
        let entries = pairs
            .iter()
            .map(|&(n, s)| (ConceptId::from_number(n).unwrap(), FusedEntry { score: s, provenance: Provenance::Fused }))
            .collect();
        FusedCase::new(case_id, entries).unwrap()
    }

    #[test]
    fn fsf_example() {
        // A=1, B=2, C=3
        let q = sv(&[(1, 0.8), (2, 0.4)]);
        let d = sv(&[(1, 0.6), (3, 0.9)]);
        assert_eq!(similarity(Fsf, &q, &d).unwrap(), 0.8);
        assert!((similarity(Fsf, &q, &q).unwrap() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn classical_kinds() {
        let q = sv(&[(1, 1.0), (2, 1.0)]);
        let d = sv(&[(1, 1.0)]);
        assert!((similarity(Cosine, &q, &d).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((similarity(Dice, &q, &d).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((similarity(Jaccard, &q, &d).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(similarity(Vsm, &q, &d).unwrap(), 1.0);
    }

    #[test]
    fn zero_cases() {
        let a = sv(&[(1, 0.5)]);
        let b = sv(&[(2, 0.5)]);
        let empty = sv(&[]);
        for kind in SimilarityKind::ALL {
            assert_eq!(similarity(kind, &a, &b).unwrap(), 0.0, "{kind}");
            assert_eq!(similarity(kind, &empty, &empty).unwrap(), 0.0, "{kind}");
            assert_eq!(similarity(kind, &a, &empty).unwrap(), 0.0, "{kind}");
        }
        assert!(similarity(Fsf, &sv(&[(1, -0.1)]), &a).is_err());
    }

    #[test]
    fn exact_copy_ranks_first() {
        let q = fused("q", &[(1, 0.3), (2, 0.6)]);
        let index = vec![fused("a", &[(5, 0.9), (6, 0.9)]), fused("b", &[(1, 0.3), (2, 0.6)]), fused("c", &[(7, 1.0)])];
        for kind in SimilarityKind::ALL {
            let r = knn_query(&index, &q, 1, kind);
            assert_eq!(r.hits, [("b".to_string(), r.hits[0].1)], "{kind}");
            assert!(r.hits[0].1 > 0.0);
        }
        assert!(knn_query(&[], &q, 3, Fsf).is_empty());
    }

    #[test]
    fn ties_break_by_case_id_and_k_truncates() {
        let q = fused("q", &[(1, 0.5)]);
        let index = vec![fused("z", &[(1, 0.5)]), fused("m", &[(1, 0.5)]), fused("a", &[(2, 0.5)])];
        let r = knn_query(&index, &q, 10, Fsf);
        let ids: Vec<_> = r.hits.iter().map(|h| h.0.as_str()).collect();
        assert_eq!(ids, ["m", "z", "a"]);
        assert_eq!(r.hits[2].1, 0.0);
        let r = knn_query(&index, &q, 2, Fsf);
        assert_eq!(r.len(), 2);
        let si = SearchIndex::new(&index);
        let r = si.search(&q, SearchParams { k: 10, kind: Fsf, drop_zero: true });
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn pruned_with_single_box_matches_exhaustive() {
        let index = vec![fused("a", &[(1, 0.9), (2, 0.1)]), fused("b", &[(3, 1.0)]), fused("c", &[(1, 0.2), (4, 0.7)])];
        let model = train(&index, 1.0, 0.01).unwrap();
        let q = fused("q", &[(1, 0.5), (4, 0.1)]);
        for kind in SimilarityKind::ALL {
            for scope in [MembershipScope::Vocabulary, MembershipScope::Query] {
                let pruned = pruned_query(&model, &index, &q, 10, kind, scope).unwrap();
                assert_eq!(pruned, knn_query(&index, &q, 10, kind));
            }
        }
    }

    #[test]
    fn pruned_rejects_mismatched_model() {
        let index = vec![fused("a", &[(1, 0.9)]), fused("b", &[(3, 1.0)])];
        let model = train(&index[..1], 1.0, 0.01).unwrap();
        let q = fused("q", &[(1, 0.5)]);
        assert!(matches!(
            pruned_query(&model, &index, &q, 5, Fsf, MembershipScope::Vocabulary),
            Err(Error::Consistency(_))
        ));
        let other = vec![fused("a", &[(1, 0.9)]), fused("x", &[(3, 1.0)])];
        let model = train(&other, 1.0, 0.01).unwrap();
        assert!(pruned_query(&model, &index, &q, 5, Fsf, MembershipScope::Vocabulary).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scale(v: &[(u32, f64)], c: f64) -> Vec<(u32, f64)> {
            v.iter().map(|&(n, x)| (n, x * c)).collect()
        }

        fn vector() -> impl Strategy<Value = Vec<(u32, f64)>> {
            proptest::collection::btree_map(0u32..15, 0.0f64..=1.0, 0..8).prop_map(|m| m.into_iter().collect())
        }

        proptest! {
            #[test]
            fn symmetric(a in vector(), b in vector()) {
                let (a, b) = (sv(&a), sv(&b));
                for kind in SimilarityKind::ALL {
                    prop_assert_eq!(similarity(kind, &a, &b).unwrap(), similarity(kind, &b, &a).unwrap());
                }
            }

            #[test]
            fn fsf_bounds_and_homogeneity(a in vector(), b in vector(), c in 0.01f64..1.0) {
                let (a, b) = (sv(&a), sv(&b));
                let mut shared = 0usize;
                a.for_each_shared(&b, |_, _| shared += 1);
                let s = similarity(Fsf, &a, &b).unwrap();
                prop_assert!(s <= shared as f64 + 1e-12);
                let scaled = similarity(Fsf, &a.scaled(c), &b.scaled(c)).unwrap();
                prop_assert!((scaled - c * s).abs() <= 1e-12);
            }

            #[test]
            fn pruned_candidates_are_members_of_positive_boxes(
                docs in proptest::collection::vec(vector(), 1..30),
                q in vector(),
                theta in 0.01f64..0.5,
                fallback in 0.001f64..1.0,
            ) {
                let index: Vec<_> = docs.iter().enumerate().map(|(i, d)| fused(&format!("d{i:02}"), d)).collect();
                let model = train(&index, theta, fallback).unwrap();
                let si = SearchIndex::new(&index);
                let qf = fused("q", &q);
                let qv = qf.to_vector();
                for scope in [MembershipScope::Query, MembershipScope::Vocabulary] {
                    let ci = ClusteredIndex::new(&model, &si, scope).unwrap();
                    let got = ci.search(&qf, SearchParams { k: 100, kind: Fsf, drop_zero: false });
                    let mut expected: Vec<&str> = model
                        .boxes
                        .iter()
                        .filter(|b| match scope {
                            MembershipScope::Query => query_membership(b, &qv) > 0.0,
                            MembershipScope::Vocabulary => membership(b, &qv, model.n) > 0.0,
                        })
                        .flat_map(|b| b.members().iter().map(String::as_str))
                        .collect();
                    expected.sort_unstable();
                    let mut hits: Vec<&str> = got.ranked.hits.iter().map(|h| h.0.as_str()).collect();
                    hits.sort_unstable();
                    prop_assert_eq!(got.candidates, expected.len());
                    prop_assert_eq!(hits, expected);
                }
            }

            #[test]
            fn rankings_under_scaling(
                q in vector(), docs in proptest::collection::vec(vector(), 1..12), c in 0.1f64..10.0,
            ) {
                let index: Vec<_> = docs.iter().enumerate().map(|(i, d)| fused(&format!("d{i:02}"), d)).collect();
                let scaled_index: Vec<_> = docs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| fused(&format!("d{i:02}"), &scale(d, c)))
                    .collect();
                let (qf, qs) = (fused("q", &q), fused("q", &scale(&q, c)));
                // Cosine ignores the query norm; Dice and Jaccard only a
                // common scale; Vsm and Fsf are homogeneous.
                let cases = [
                    (Cosine, &index),
                    (Dice, &scaled_index),
                    (Jaccard, &scaled_index),
                    (Vsm, &scaled_index),
                    (Fsf, &scaled_index),
                ];
                for (kind, other) in cases {
                    let a = knn_query(&index, &qf, 100, kind);
                    let b = knn_query(other, &qs, 100, kind);
                    prop_assert_eq!(a.len(), b.len());
                    for (x, y) in a.hits.iter().zip(&b.hits) {
                        if x.0 != y.0 {
                            // Only rounding-level ties may swap.
                            let score = |id: &str| a.hits.iter().find(|h| h.0 == id).unwrap().1;
                            prop_assert!((score(&x.0) - score(&y.0)).abs() < 1e-9, "{kind}");
                        }
                    }
                }
            }
        }
    }
}
