//! Domain types shared by every stage: concept identifiers, weighted
//! concepts, per-medium indexes, elementary cases and fused dictionaries.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_unit, Error, Result};
use crate::sparse::SparseVector;

/// UMLS concept unique identifier: `C` followed by exactly seven digits.
///
/// Stored as the numeric part. Because the digit count is fixed, numeric
/// order and lexicographic order of the textual form coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptId(u32);

impl ConceptId {
    pub const MAX_NUMBER: u32 = 9_999_999;

    pub fn from_number(n: u32) -> Result<Self> {
        if n > Self::MAX_NUMBER {
            return Err(Error::Domain(format!("concept number {n} has more than 7 digits")));
        }
        Ok(Self(n))
    }

    pub fn number(self) -> u32 {
        self.0
    }
}

impl FromStr for ConceptId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .strip_prefix('C')
            .filter(|d| d.len() == 7 && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| Error::Domain(format!("{s:?} is not a concept id (C#######)")))?;
        Ok(Self(digits.parse().expect("seven ascii digits fit in u32")))
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{:07}", self.0)
    }
}

impl Serialize for ConceptId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConceptId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Composed concept weight `λ = μ · ν · ω · φ`.
pub fn compute_lambda(mu: f64, nu: f64, omega: f64, phi: f64) -> Result<f64> {
    check_unit("mu", mu)?;
    check_unit("nu", nu)?;
    check_unit("omega", omega)?;
    check_unit("phi", phi)?;
    Ok(mu * nu * omega * phi)
}

/// One concept of a media index with its weighting factors.
///
/// `mu` is the fuzzy confidence degree, `nu` the relative frequency,
/// `omega` the spatial-localization weight and `phi` the feedback
/// confidence. `lambda` is their product until the concept is aligned;
/// afterwards the aligned `lambda` is authoritative and the factors are
/// kept for provenance only.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedConcept {
    cui: ConceptId,
    mu: f64,
    nu: f64,
    omega: f64,
    phi: f64,
    lambda: f64,
}

impl WeightedConcept {
    pub fn new(cui: ConceptId, mu: f64, nu: f64, omega: f64, phi: f64) -> Result<Self> {
        let lambda = compute_lambda(mu, nu, omega, phi)?;
        Ok(Self { cui, mu, nu, omega, phi, lambda })
    }

    pub fn cui(&self) -> ConceptId {
        self.cui
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn phi(&self) -> f64 {
        self.phi
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Replaces the weight with an aligned value, clamped to `[0, 1]`.
    pub fn with_aligned_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda.clamp(0.0, 1.0);
        self
    }

    /// Per-factor maximum of two weightings of the same concept.
    pub(crate) fn merge_max(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cui, other.cui);
        let mu = self.mu.max(other.mu);
        let nu = self.nu.max(other.nu);
        let omega = self.omega.max(other.omega);
        let phi = self.phi.max(other.phi);
        Self { cui: self.cui, mu, nu, omega, phi, lambda: mu * nu * omega * phi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Medium {
    Text,
    Image,
}

impl Medium {
    pub fn as_str(self) -> &'static str {
        match self {
            Medium::Text => "text",
            Medium::Image => "image",
        }
    }
}

impl fmt::Display for Medium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The concept index of one medium. Concept ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct MediaIndex {
    medium: Medium,
    concepts: Vec<WeightedConcept>,
}

impl MediaIndex {
    pub fn empty(medium: Medium) -> Self {
        Self { medium, concepts: Vec::new() }
    }

    /// Builds an index, rejecting duplicate concept ids.
    pub fn new(medium: Medium, concepts: Vec<WeightedConcept>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(concepts.len());
        for c in &concepts {
            if seen.insert(c.cui, ()).is_some() {
                return Err(Error::Data(format!("duplicate concept {} in {medium} index", c.cui)));
            }
        }
        Ok(Self { medium, concepts })
    }

    /// Builds an index, merging duplicate concept ids by per-factor maximum.
    /// The merged concept keeps the position of its first occurrence.
    pub fn merged(medium: Medium, concepts: Vec<WeightedConcept>) -> Self {
        let mut position: HashMap<ConceptId, usize> = HashMap::with_capacity(concepts.len());
        let mut out: Vec<WeightedConcept> = Vec::with_capacity(concepts.len());
        for c in concepts {
            match position.get(&c.cui) {
                Some(&i) => out[i] = out[i].merge_max(&c),
                None => {
                    position.insert(c.cui, out.len());
                    out.push(c);
                }
            }
        }
        Self { medium, concepts: out }
    }

    pub fn medium(&self) -> Medium {
        self.medium
    }

    pub fn concepts(&self) -> &[WeightedConcept] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, cui: ConceptId) -> Option<&WeightedConcept> {
        self.concepts.iter().find(|c| c.cui == cui)
    }

    /// Applies `f` to every λ, keeping the factors.
    pub fn map_lambda(&self, f: impl Fn(f64) -> f64) -> Self {
        let concepts = self.concepts.iter().map(|c| c.clone().with_aligned_lambda(f(c.lambda))).collect();
        Self { medium: self.medium, concepts }
    }

    /// λ values keyed by concept id.
    pub fn to_vector(&self) -> SparseVector {
        SparseVector::from_pairs(self.concepts.iter().map(|c| (c.cui, c.lambda)))
            .expect("media index concept ids are unique")
    }
}

/// Case and query ids end up in whitespace-separated TREC files.
pub(crate) fn validate_case_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(Error::Domain(format!("case id {id:?} is empty or contains whitespace")));
    }
    Ok(())
}

/// One medical report paired with one of its images.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementaryCase {
    case_id: String,
    text_index: MediaIndex,
    image_index: MediaIndex,
    image_ref: String,
}

impl ElementaryCase {
    pub fn new(
        case_id: impl Into<String>,
        text_index: MediaIndex,
        image_index: MediaIndex,
        image_ref: impl Into<String>,
    ) -> Result<Self> {
        let case_id = case_id.into();
        validate_case_id(&case_id)?;
        if text_index.medium != Medium::Text {
            return Err(Error::Domain(format!("case {case_id}: text index has medium {}", text_index.medium)));
        }
        if image_index.medium != Medium::Image {
            return Err(Error::Domain(format!("case {case_id}: image index has medium {}", image_index.medium)));
        }
        Ok(Self { case_id, text_index, image_index, image_ref: image_ref.into() })
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }
    pub fn text_index(&self) -> &MediaIndex {
        &self.text_index
    }
    pub fn image_index(&self) -> &MediaIndex {
        &self.image_index
    }
    pub fn image_ref(&self) -> &str {
        &self.image_ref
    }

    pub fn index(&self, medium: Medium) -> &MediaIndex {
        match medium {
            Medium::Text => &self.text_index,
            Medium::Image => &self.image_index,
        }
    }

    /// Same case with the indexes replaced. Media are not re-checked.
    pub(crate) fn with_indexes(&self, text_index: MediaIndex, image_index: MediaIndex) -> Self {
        Self { case_id: self.case_id.clone(), text_index, image_index, image_ref: self.image_ref.clone() }
    }
}

/// Splits a report with several images into elementary cases `base#1..base#k`.
pub fn decompose_case(
    report_index: &MediaIndex,
    image_indexes: &[(String, MediaIndex)],
    case_id_base: &str,
) -> Result<Vec<ElementaryCase>> {
    if case_id_base.contains('#') {
        return Err(Error::Domain(format!("case id base {case_id_base:?} must not contain '#'")));
    }
    if report_index.medium != Medium::Text {
        return Err(Error::Domain("report index must have medium text".into()));
    }
    image_indexes
        .iter()
        .enumerate()
        .map(|(k, (image_ref, index))| {
            ElementaryCase::new(
                format!("{case_id_base}#{}", k + 1),
                report_index.clone(),
                index.clone(),
                image_ref.clone(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TextOnly,
    ImageOnly,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedEntry {
    pub score: f64,
    pub provenance: Provenance,
}

/// The fused concept dictionary of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedCase {
    case_id: String,
    entries: BTreeMap<ConceptId, FusedEntry>,
}

impl FusedCase {
    pub fn new(case_id: impl Into<String>, entries: BTreeMap<ConceptId, FusedEntry>) -> Result<Self> {
        let case_id = case_id.into();
        validate_case_id(&case_id)?;
        for (cui, e) in &entries {
            if !(e.score.is_finite() && e.score >= 0.0) {
                return Err(Error::Domain(format!(
                    "case {case_id}: score {} for {cui} is not a finite non-negative number",
                    e.score
                )));
            }
        }
        Ok(Self { case_id, entries })
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn entries(&self) -> &BTreeMap<ConceptId, FusedEntry> {
        &self.entries
    }

    pub fn get(&self, cui: ConceptId) -> Option<&FusedEntry> {
        self.entries.get(&cui)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_vector(&self) -> SparseVector {
        SparseVector::from_sorted_unchecked(self.entries.iter().map(|(&c, e)| (c, e.score)).collect())
    }
}
