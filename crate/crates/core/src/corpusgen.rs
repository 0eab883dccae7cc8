//! Deterministic synthetic corpus, queries and relevance judgments.
//!
//! Every query has a text profile and an image profile. Its relevant cases
//! are noisy copies of both. Each query also gets *confusers*: cases that
//! copy only the text profile or only the image profile. Neither medium
//! alone can tell relevant cases from confusers; the fused index can.
//! Remaining cases are random background.
//!
//! Randomness comes from xoshiro256** seeded through SplitMix64. Floats take
//! the top 53 bits of a draw and bounded integers use rejection sampling, so
//! the output depends only on those published algorithms.

use std::collections::HashSet;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::concept::{ConceptId, ElementaryCase, MediaIndex, Medium, WeightedConcept};
use crate::error::{Error, Result};
use crate::ingest::{Corpus, Qrels};

/// Lower bound of every generated weighting factor.
pub const MIN_FACTOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub seed: u64,
    pub n_cases: usize,
    pub vocab_size: usize,
    pub concepts_per_text: usize,
    pub concepts_per_image: usize,
    /// Fraction of a case's image concepts also present in its text.
    pub overlap_fraction: f64,
    pub n_queries: usize,
    pub relevant_per_query: usize,
    /// Probability that a copied concept is replaced by a random one.
    pub noise: f64,
}

impl GenSpec {
    /// The reference configuration used by the regression suite.
    pub fn reference() -> Self {
        Self {
            seed: 42,
            n_cases: 500,
            vocab_size: 2000,
            concepts_per_text: 20,
            concepts_per_image: 8,
            overlap_fraction: 0.5,
            n_queries: 20,
            relevant_per_query: 10,
            noise: 0.2,
        }
    }

    fn shared_image_concepts(&self) -> usize {
        (self.concepts_per_image as f64 * self.overlap_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_cases", self.n_cases),
            ("vocab_size", self.vocab_size),
            ("concepts_per_text", self.concepts_per_text),
            ("concepts_per_image", self.concepts_per_image),
            ("n_queries", self.n_queries),
            ("relevant_per_query", self.relevant_per_query),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Spec(format!("{name} must be positive")));
        }
        for (name, v) in [("overlap_fraction", self.overlap_fraction), ("noise", self.noise)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Spec(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.shared_image_concepts() > self.concepts_per_text {
            return Err(Error::Spec(format!(
                "{} shared image concepts exceed {} text concepts",
                self.shared_image_concepts(),
                self.concepts_per_text
            )));
        }
        if self.relevant_per_query >= self.n_cases {
            return Err(Error::Spec("relevant_per_query must be smaller than n_cases".into()));
        }
        if self.n_queries * self.relevant_per_query > self.n_cases {
            return Err(Error::Spec(format!(
                "{} queries x {} relevant cases exceed {} cases",
                self.n_queries, self.relevant_per_query, self.n_cases
            )));
        }
        let needed = self.concepts_per_text + self.concepts_per_image + 1;
        if self.vocab_size < needed {
            return Err(Error::Spec(format!(
                "vocabulary of {} concepts is too small; at least {needed} needed",
                self.vocab_size
            )));
        }
        if self.vocab_size > ConceptId::MAX_NUMBER as usize {
            return Err(Error::Spec(format!("vocabulary of {} concepts exceeds the id space", self.vocab_size)));
        }
        Ok(())
    }

    /// Text and image confusers generated per query.
    pub fn confusers_per_query(&self) -> usize {
        let spare = self.n_cases - self.n_queries * self.relevant_per_query;
        self.relevant_per_query.min(spare / (2 * self.n_queries))
    }
}

struct Rng(Xoshiro256StarStar);

impl Rng {
    fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    /// Uniform in `[0, 1)`.
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n`.
    fn below(&mut self, n: usize) -> usize {
        let n = n as u64;
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let x = self.0.next_u64();
            if x < limit {
                return (x % n) as usize;
            }
        }
    }

    fn factor(&mut self) -> f64 {
        MIN_FACTOR + (1.0 - MIN_FACTOR) * self.unit()
    }

    fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            items.swap(i, self.below(i + 1));
        }
    }
}

/// Concept numbers (vocabulary positions) of one case, before weighting.
#[derive(Debug, Clone)]
struct Profile {
    text: Vec<usize>,
    image: Vec<usize>,
}

struct Generator<'a> {
    spec: &'a GenSpec,
    rng: Rng,
}

impl Generator<'_> {
    /// A concept absent from `taken`; inserts it.
    fn fresh(&mut self, taken: &mut HashSet<usize>) -> usize {
        loop {
            let c = self.rng.below(self.spec.vocab_size);
            if taken.insert(c) {
                return c;
            }
        }
    }

    fn random_text(&mut self, keep: &[usize]) -> Vec<usize> {
        let mut taken: HashSet<usize> = keep.iter().copied().collect();
        let mut text = keep.to_vec();
        while text.len() < self.spec.concepts_per_text {
            let c = self.fresh(&mut taken);
            text.push(c);
        }
        text
    }

    /// Image concepts for a given text: a share picked from the text, the
    /// rest outside it.
    fn image_for(&mut self, text: &[usize]) -> Vec<usize> {
        let mut pool = text.to_vec();
        self.rng.shuffle(&mut pool);
        let mut image: Vec<usize> = pool[..self.spec.shared_image_concepts()].to_vec();
        let mut taken: HashSet<usize> = text.iter().copied().collect();
        while image.len() < self.spec.concepts_per_image {
            let c = self.fresh(&mut taken);
            image.push(c);
        }
        image
    }

    fn random_profile(&mut self) -> Profile {
        let text = self.random_text(&[]);
        let image = self.image_for(&text);
        Profile { text, image }
    }

    /// Replaces each concept with probability `noise` by one not in the list.
    fn perturb(&mut self, concepts: &[usize]) -> Vec<usize> {
        let mut taken: HashSet<usize> = concepts.iter().copied().collect();
        let mut out = concepts.to_vec();
        for slot in out.iter_mut() {
            if self.rng.unit() < self.spec.noise {
                *slot = self.fresh(&mut taken);
            }
        }
        out
    }

    fn media_index(&mut self, medium: Medium, concepts: &[usize]) -> MediaIndex {
        let weighted = concepts
            .iter()
            .map(|&c| {
                let cui = ConceptId::from_number(c as u32 + 1).expect("vocabulary fits the id space");
                let (mu, nu) = match medium {
                    Medium::Text => (1.0, self.rng.factor()),
                    Medium::Image => (self.rng.factor(), 1.0),
                };
                let omega = self.rng.factor();
                let phi = self.rng.factor();
                WeightedConcept::new(cui, mu, nu, omega, phi).expect("factors lie in [0, 1]")
            })
            .collect();
        MediaIndex::new(medium, weighted).expect("profiles hold distinct concepts")
    }

    fn case(&mut self, id: String, image_ref: String, p: &Profile) -> ElementaryCase {
        let text = self.media_index(Medium::Text, &p.text);
        let image = self.media_index(Medium::Image, &p.image);
        ElementaryCase::new(id, text, image, image_ref).expect("generated ids are valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub corpus: Corpus,
    pub queries: Corpus,
    pub qrels: Qrels,
}

enum Role {
    Relevant(usize),
    TextConfuser(usize),
    ImageConfuser(usize),
    Background,
}

fn width(n: usize, min: usize) -> usize {
    n.to_string().len().max(min)
}

pub fn generate(spec: &GenSpec) -> Result<Generated> {
    spec.validate()?;
    let mut g = Generator { spec, rng: Rng::new(spec.seed) };

    let profiles: Vec<Profile> = (0..spec.n_queries).map(|_| g.random_profile()).collect();
    let qw = width(spec.n_queries, 3);
    let query_ids: Vec<String> = (1..=spec.n_queries).map(|i| format!("q{i:0qw$}")).collect();

    let confusers = spec.confusers_per_query();
    let mut roles = Vec::with_capacity(spec.n_cases);
    for q in 0..spec.n_queries {
        roles.extend((0..spec.relevant_per_query).map(|_| Role::Relevant(q)));
        roles.extend((0..confusers).map(|_| Role::TextConfuser(q)));
        roles.extend((0..confusers).map(|_| Role::ImageConfuser(q)));
    }
    while roles.len() < spec.n_cases {
        roles.push(Role::Background);
    }

    // Case numbers are shuffled so that id order says nothing about roles.
    let mut numbers: Vec<usize> = (1..=spec.n_cases).collect();
    g.rng.shuffle(&mut numbers);
    let cw = width(spec.n_cases, 5);

    let mut cases = Vec::with_capacity(spec.n_cases);
    let mut qrels = Qrels::new();
    for (role, number) in roles.iter().zip(&numbers) {
        let id = format!("c{number:0cw$}#1");
        let image_ref = format!("img{number:0cw$}.jpg");
        let profile = match *role {
            Role::Relevant(q) => {
                qrels.insert(query_ids[q].clone(), id.clone(), 1);
                Profile { text: g.perturb(&profiles[q].text), image: g.perturb(&profiles[q].image) }
            }
            Role::TextConfuser(q) => {
                qrels.insert(query_ids[q].clone(), id.clone(), 0);
                let text = g.perturb(&profiles[q].text);
                let image = g.image_for(&text);
                Profile { text, image }
            }
            Role::ImageConfuser(q) => {
                qrels.insert(query_ids[q].clone(), id.clone(), 0);
                let image = g.perturb(&profiles[q].image);
                let shared: Vec<usize> = image.iter().copied().filter(|c| profiles[q].text.contains(c)).collect();
                let text = g.random_text(&shared);
                Profile { text, image }
            }
            Role::Background => g.random_profile(),
        };
        cases.push(g.case(id, image_ref, &profile));
    }

    let queries = profiles.iter().zip(&query_ids).map(|(p, id)| g.case(id.clone(), format!("{id}.jpg"), p)).collect();

    Ok(Generated { corpus: Corpus::new(cases)?, queries: Corpus::new(queries)?, qrels })
}
