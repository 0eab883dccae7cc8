//! Corpus-level balancing of text and image weights.
//!
//! The two media are rescaled so that
//! `alpha_txt / alpha_img = (avg_img * rp_txt) / (avg_txt * rp_img)`,
//! where `avg_*` is the mean concept weight of a medium and `rp_*` the
//! interpolated precision of single-medium retrieval at a fixed recall
//! level. The image side is pinned to `alpha_img = 1`.

use serde::{Deserialize, Serialize};

use crate::concept::{ElementaryCase, Medium};
use crate::error::{Error, Result};
use crate::evaluation::interpolated_pr;
use crate::fusion::single_medium_corpus;
use crate::ingest::{Corpus, Qrels};
use crate::retrieval::{SearchIndex, SearchParams, SimilarityKind};

pub const DEFAULT_RECALL_LEVEL: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentParams {
    pub avg_txt: f64,
    pub avg_img: f64,
    pub rp_txt: f64,
    pub rp_img: f64,
    pub recall_level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alphas {
    pub alpha_txt: f64,
    pub alpha_img: f64,
}

impl Alphas {
    pub const IDENTITY: Alphas = Alphas { alpha_txt: 1.0, alpha_img: 1.0 };

    pub fn get(self, medium: Medium) -> f64 {
        match medium {
            Medium::Text => self.alpha_txt,
            Medium::Image => self.alpha_img,
        }
    }
}

/// Mean λ over every concept of `medium` in the corpus.
pub fn medium_average(corpus: &Corpus, medium: Medium) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for case in corpus.cases() {
        for c in case.index(medium).concepts() {
            sum += c.lambda();
            count += 1;
        }
    }
    if count == 0 || !(sum > 0.0) {
        return Err(Error::Alignment(format!("corpus has no {medium} concept with positive weight")));
    }
    Ok(sum / count as f64)
}

pub fn compute_alpha(p: &AlignmentParams) -> Result<Alphas> {
    if !(p.avg_txt > 0.0 && p.avg_img > 0.0) {
        return Err(Error::Domain(format!(
            "media averages must be positive (avg_txt = {}, avg_img = {})",
            p.avg_txt, p.avg_img
        )));
    }
    for (medium, rp) in [("text", p.rp_txt), ("image", p.rp_img)] {
        if !(0.0..=1.0).contains(&rp) {
            return Err(Error::Domain(format!("{medium} precision {rp} outside [0, 1]")));
        }
        if rp == 0.0 {
            return Err(Error::DegenerateFeedback { medium, recall_level: p.recall_level });
        }
    }
    Ok(Alphas { alpha_txt: (p.avg_img * p.rp_txt) / (p.avg_txt * p.rp_img), alpha_img: 1.0 })
}

/// Scales each medium's λ by its alpha and clamps to `[0, 1]`.
pub fn apply_alignment(case: &ElementaryCase, alphas: Alphas) -> Result<ElementaryCase> {
    check_alphas(alphas)?;
    Ok(align_case(case, alphas))
}

fn check_alphas(alphas: Alphas) -> Result<()> {
    if !(alphas.alpha_txt > 0.0 && alphas.alpha_img > 0.0)
        || !alphas.alpha_txt.is_finite()
        || !alphas.alpha_img.is_finite()
    {
        return Err(Error::Domain(format!(
            "alphas must be positive (alpha_txt = {}, alpha_img = {})",
            alphas.alpha_txt, alphas.alpha_img
        )));
    }
    Ok(())
}

fn align_case(case: &ElementaryCase, alphas: Alphas) -> ElementaryCase {
    let text = case.text_index().map_lambda(|l| l * alphas.alpha_txt);
    let image = case.image_index().map_lambda(|l| l * alphas.alpha_img);
    case.with_indexes(text, image)
}

pub fn align_corpus(corpus: &Corpus, alphas: Alphas) -> Result<Corpus> {
    check_alphas(alphas)?;
    Ok(corpus.map_cases(|c| align_case(c, alphas)))
}

/// Fraction of concept weights that alignment pushes above 1.
pub fn clamped_fraction(corpus: &Corpus, alphas: Alphas) -> f64 {
    let (mut clamped, mut total) = (0usize, 0usize);
    for case in corpus.cases() {
        for medium in [Medium::Text, Medium::Image] {
            for c in case.index(medium).concepts() {
                total += 1;
                if c.lambda() * alphas.get(medium) > 1.0 {
                    clamped += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        clamped as f64 / total as f64
    }
}

/// Interpolated precision at `recall_level` of retrieval on one medium only.
pub fn partial_feedback(
    corpus: &Corpus,
    queries: &Corpus,
    qrels: &Qrels,
    medium: Medium,
    recall_level: f64,
    params: SearchParams,
) -> Result<f64> {
    let index = SearchIndex::new(&single_medium_corpus(corpus, medium)?);
    let runs: Vec<_> = single_medium_corpus(queries, medium)?.iter().map(|q| index.search(q, params)).collect();
    let curve = interpolated_pr(&runs, qrels, &[recall_level])?;
    Ok(curve[0].1)
}

/// Derives the alignment parameters from partial-media retrieval.
pub fn auto_align(
    corpus: &Corpus,
    queries: &Corpus,
    qrels: &Qrels,
    recall_level: f64,
    kind: SimilarityKind,
    k: usize,
) -> Result<(AlignmentParams, Alphas)> {
    let params = SearchParams::new(k, kind);
    let p = AlignmentParams {
        avg_txt: medium_average(corpus, Medium::Text)?,
        avg_img: medium_average(corpus, Medium::Image)?,
        rp_txt: partial_feedback(corpus, queries, qrels, Medium::Text, recall_level, params)?,
        rp_img: partial_feedback(corpus, queries, qrels, Medium::Image, recall_level, params)?,
        recall_level,
    };
    let alphas = compute_alpha(&p)?;
    Ok((p, alphas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::{ConceptId, MediaIndex, WeightedConcept};

    fn index(medium: Medium, weights: &[(u32, f64)]) -> MediaIndex {
        let cs = weights
            .iter()
            .map(|&(n, w)| WeightedConcept::new(ConceptId::from_number(n).unwrap(), 1.0, w, 1.0, 1.0).unwrap())
            .collect();
        MediaIndex::new(medium, cs).unwrap()
    }

    fn case(id: &str, text: &[(u32, f64)], image: &[(u32, f64)]) -> ElementaryCase {
        ElementaryCase::new(id, index(Medium::Text, text), index(Medium::Image, image), "x.jpg").unwrap()
    }

    fn params(avg_txt: f64, avg_img: f64, rp_txt: f64, rp_img: f64) -> AlignmentParams {
        AlignmentParams { avg_txt, avg_img, rp_txt, rp_img, recall_level: 0.3 }
    }

    #[test]
    fn averages() {
        let corpus = Corpus::new(vec![case("a", &[(1, 0.2)], &[(3, 0.7)]), case("b", &[(2, 0.4)], &[])]).unwrap();
        assert!((medium_average(&corpus, Medium::Text).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(medium_average(&corpus, Medium::Image).unwrap(), 0.7);
        let no_image = Corpus::new(vec![case("a", &[(1, 0.2)], &[])]).unwrap();
        assert!(matches!(medium_average(&no_image, Medium::Image), Err(Error::Alignment(_))));
        let zero = Corpus::new(vec![case("a", &[(1, 0.0)], &[])]).unwrap();
        assert!(medium_average(&zero, Medium::Text).is_err());
    }

    #[test]
    fn alpha_examples() {
        let a = compute_alpha(&params(0.2, 0.1, 0.4, 0.2)).unwrap();
        assert_eq!((a.alpha_txt, a.alpha_img), (1.0, 1.0));
        let a = compute_alpha(&params(0.5, 0.5, 0.6, 0.2)).unwrap();
        assert!((a.alpha_txt - 3.0).abs() < 1e-12);
        assert_eq!(a.alpha_img, 1.0);
        let a = compute_alpha(&params(0.3, 0.3, 0.5, 0.5)).unwrap();
        assert_eq!((a.alpha_txt, a.alpha_img), (1.0, 1.0));
    }

    #[test]
    fn alpha_errors() {
        assert!(matches!(
            compute_alpha(&params(0.2, 0.1, 0.4, 0.0)),
            Err(Error::DegenerateFeedback { medium: "image", .. })
        ));
        assert!(matches!(
            compute_alpha(&params(0.2, 0.1, 0.0, 0.4)),
            Err(Error::DegenerateFeedback { medium: "text", .. })
        ));
        assert!(matches!(compute_alpha(&params(0.0, 0.1, 0.4, 0.4)), Err(Error::Domain(_))));
        assert!(matches!(compute_alpha(&params(0.2, -1.0, 0.4, 0.4)), Err(Error::Domain(_))));
    }

    #[test]
    fn application() {
        let c = case("a", &[(1, 0.2), (2, 0.5)], &[(1, 0.4)]);
        assert_eq!(apply_alignment(&c, Alphas::IDENTITY).unwrap(), c);
        let aligned = apply_alignment(&c, Alphas { alpha_txt: 3.0, alpha_img: 1.0 }).unwrap();
        let t = aligned.text_index().concepts();
        assert!((t[0].lambda() - 0.6).abs() < 1e-12);
        assert_eq!(t[1].lambda(), 1.0);
        assert_eq!(t[1].nu(), 0.5);
        assert_eq!(aligned.image_index(), c.image_index());
        assert!(apply_alignment(&c, Alphas { alpha_txt: 0.0, alpha_img: 1.0 }).is_err());
        let corpus = Corpus::new(vec![c]).unwrap();
        let f = clamped_fraction(&corpus, Alphas { alpha_txt: 3.0, alpha_img: 1.0 });
        assert!((f - 1.0 / 3.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ratio_holds(
                avg_txt in 0.01f64..1.0, avg_img in 0.01f64..1.0,
                rp_txt in 0.01f64..=1.0, rp_img in 0.01f64..=1.0,
            ) {
                let p = params(avg_txt, avg_img, rp_txt, rp_img);
                let a = compute_alpha(&p).unwrap();
                prop_assert_eq!(a.alpha_img, 1.0);
                prop_assert_eq!(a.alpha_txt / a.alpha_img, (avg_img * rp_txt) / (avg_txt * rp_img));
            }

            #[test]
            fn text_scaling_is_undone(
                weights in proptest::collection::vec(0.01f64..0.1, 1..20),
                c in 0.1f64..10.0,
                rp_txt in 0.05f64..=1.0, rp_img in 0.05f64..=1.0,
            ) {
                let cases: Vec<_> = weights
                    .chunks(3)
                    .enumerate()
                    .map(|(i, w)| {
                        let text: Vec<_> = w.iter().enumerate().map(|(j, &x)| (j as u32, x)).collect();
                        case(&format!("c{i}"), &text, &[(0, 0.05)])
                    })
                    .collect();
                let corpus = Corpus::new(cases).unwrap();
                let scaled = corpus.map_cases(|k| k.with_indexes(k.text_index().map_lambda(|l| l * c), k.image_index().clone()));
                let align = |corpus: &Corpus| {
                    let p = AlignmentParams {
                        avg_txt: medium_average(corpus, Medium::Text).unwrap(),
                        avg_img: medium_average(corpus, Medium::Image).unwrap(),
                        rp_txt, rp_img, recall_level: 0.3,
                    };
                    align_corpus(corpus, compute_alpha(&p).unwrap()).unwrap()
                };
                let (a, b) = (align(&corpus), align(&scaled));
                prop_assume!(clamped_fraction(&corpus, Alphas::IDENTITY) == 0.0);
                for (x, y) in a.cases().iter().zip(b.cases()) {
                    for (p, q) in x.text_index().concepts().iter().zip(y.text_index().concepts()) {
                        if p.lambda() < 1.0 && q.lambda() < 1.0 {
                            prop_assert!((p.lambda() - q.lambda()).abs() <= 1e-12);
                        }
                    }
                }
            }
        }
    }
}
