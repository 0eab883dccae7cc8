//! Fuzzy aggregation of the text and image weights of common concepts.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::concept::{ElementaryCase, FusedCase, FusedEntry, MediaIndex, Medium, Provenance};
use crate::error::{check_unit, Error, Result};
use crate::ingest::Corpus;

/// Inputs of the symmetric sum are clamped to `[SYM_SUM_EPS, 1 - SYM_SUM_EPS]`
/// where the formula is singular.
pub const SYM_SUM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionOperator {
    /// `max(x, y)`, the smallest t-conorm.
    Max,
    /// `min(1, x + y)`.
    BoundedSum,
    /// `min(x, y)`, the largest t-norm.
    Min,
    /// `max(0, x + y - 1)`.
    Lukasiewicz,
    /// `(x + y) / 2`.
    Mean,
    /// The associative symmetric sum `xy / (1 - x - y + 2xy)`.
    SymSumZero,
}

impl FusionOperator {
    pub const ALL: [FusionOperator; 6] = [
        FusionOperator::Max,
        FusionOperator::BoundedSum,
        FusionOperator::Min,
        FusionOperator::Lukasiewicz,
        FusionOperator::Mean,
        FusionOperator::SymSumZero,
    ];

    /// Command-line name.
    pub fn name(self) -> &'static str {
        match self {
            FusionOperator::Max => "max",
            FusionOperator::BoundedSum => "bounded-sum",
            FusionOperator::Min => "min",
            FusionOperator::Lukasiewicz => "lukasiewicz",
            FusionOperator::Mean => "mean",
            FusionOperator::SymSumZero => "sym-sum",
        }
    }

    /// Formula as written in manifests and reports.
    pub fn formula(self) -> &'static str {
        match self {
            FusionOperator::Max => "max(x,y)",
            FusionOperator::BoundedSum => "min(1,x+y)",
            FusionOperator::Min => "min(x,y)",
            FusionOperator::Lukasiewicz => "max(0,x+y-1)",
            FusionOperator::Mean => "(x+y)/2",
            FusionOperator::SymSumZero => "sigma_0",
        }
    }

    /// Evaluates the operator. Inputs must be in `[0, 1]`.
    pub fn apply(self, x: f64, y: f64) -> Result<f64> {
        check_unit("x", x)?;
        check_unit("y", y)?;
        Ok(self.eval(x, y))
    }

    /// Unchecked evaluation; callers guarantee unit-interval inputs.
    pub(crate) fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            FusionOperator::Max => x.max(y),
            FusionOperator::BoundedSum => (x + y).min(1.0),
            FusionOperator::Min => x.min(y),
            FusionOperator::Lukasiewicz => lukasiewicz(x, y),
            FusionOperator::Mean => (x + y) / 2.0,
            FusionOperator::SymSumZero => sym_sum_zero(x, y),
        }
    }
}

/// `max(0, x + y - 1)`, evaluated as `(hi - 1) + lo`. `hi - 1` is exact
/// whenever the result can be positive, so rounding never lifts the result
/// above `min(x, y)` the way `fl(0.1 + 1) - 1` does.
fn lukasiewicz(x: f64, y: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    ((hi - 1.0) + lo).max(0.0)
}

/// `xy / ((1-x)(1-y) + xy)`, which equals `xy / (1 - x - y + 2xy)`.
/// The denominator vanishes only at (0,1) and (1,0); there the inputs are
/// clamped, which yields 1/2.
fn sym_sum_zero(x: f64, y: f64) -> f64 {
    let den = (1.0 - x) * (1.0 - y) + x * y;
    if den > 0.0 {
        (x * y / den).clamp(0.0, 1.0)
    } else {
        let x = x.clamp(SYM_SUM_EPS, 1.0 - SYM_SUM_EPS);
        let y = y.clamp(SYM_SUM_EPS, 1.0 - SYM_SUM_EPS);
        x * y / ((1.0 - x) * (1.0 - y) + x * y)
    }
}

impl fmt::Display for FusionOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown fusion operator {s:?}")))
    }
}

pub fn apply_operator(op: FusionOperator, x: f64, y: f64) -> Result<f64> {
    op.apply(x, y)
}

fn check_lambdas(case: &ElementaryCase) -> Result<()> {
    for c in case.text_index().concepts().iter().chain(case.image_index().concepts()) {
        check_unit(&format!("lambda of {} in case {}", c.cui(), case.case_id()), c.lambda())?;
    }
    Ok(())
}

/// Fuses the (aligned) media of one case. Common concepts get the operator
/// value; the others pass through with their own weight.
pub fn fuse_case(case: &ElementaryCase, op: FusionOperator) -> Result<FusedCase> {
    check_lambdas(case)?;
    let image: HashMap<_, f64> = case.image_index().concepts().iter().map(|c| (c.cui(), c.lambda())).collect();
    let mut entries = BTreeMap::new();
    for c in case.text_index().concepts() {
        let entry = match image.get(&c.cui()) {
            Some(&y) => FusedEntry { score: op.eval(c.lambda(), y), provenance: Provenance::Fused },
            None => FusedEntry { score: c.lambda(), provenance: Provenance::TextOnly },
        };
        entries.insert(c.cui(), entry);
    }
    for c in case.image_index().concepts() {
        entries.entry(c.cui()).or_insert(FusedEntry { score: c.lambda(), provenance: Provenance::ImageOnly });
    }
    FusedCase::new(case.case_id(), entries)
}

pub fn fuse_corpus(corpus: &Corpus, op: FusionOperator) -> Result<Vec<FusedCase>> {
    corpus.cases().iter().map(|c| fuse_case(c, op)).collect()
}

/// A dictionary built from one medium only, for partial-media retrieval.
pub fn single_medium_case(case: &ElementaryCase, medium: Medium) -> Result<FusedCase> {
    check_lambdas(case)?;
    let provenance = match medium {
        Medium::Text => Provenance::TextOnly,
        Medium::Image => Provenance::ImageOnly,
    };
    let index: &MediaIndex = case.index(medium);
    let entries = index.concepts().iter().map(|c| (c.cui(), FusedEntry { score: c.lambda(), provenance })).collect();
    FusedCase::new(case.case_id(), entries)
}

pub fn single_medium_corpus(corpus: &Corpus, medium: Medium) -> Result<Vec<FusedCase>> {
    corpus.cases().iter().map(|c| single_medium_case(c, medium)).collect()
}
