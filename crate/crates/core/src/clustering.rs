//! Fuzzy min-max hyper-box clustering of fused case vectors.
//!
//! Vectors are sparse over the fused vocabulary of size `n`. A dimension
//! that is absent from a box is the degenerate interval `[0, 0]` and an
//! absent point coordinate is 0, so such dimensions add 1 to the membership
//! sum and nothing to the box extent.
//!
//! Training runs the expansion phase only. Boxes may overlap, which costs
//! pruning efficiency but never changes the score of a searched case.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::{fmt, fs};

use serde::{Deserialize, Serialize};

use crate::concept::{ConceptId, FusedCase};
use crate::error::{Error, Result};
use crate::ingest::write_atomic;
use crate::sparse::SparseVector;

pub const DEFAULT_ETA_FALLBACK: f64 = 0.01;

/// Expansion budget tuned on the reference synthetic corpus: about 60% of
/// the cases survive pruning there and MAP is unchanged.
pub const DEFAULT_THETA: f64 = 0.01;

/// Membership ramp: 0 for `z <= 0`, `z / eta` up to `eta`, then 1.
fn ramp(z: f64, eta: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z <= eta {
        z / eta
    } else {
        1.0
    }
}

/// Sensitivity of a point set: the smallest non-zero per-dimension range
/// divided by `2 (N - 1)`. Falls back when `N < 2` or every range is 0.
pub fn sensitivity(points: &[SparseVector], fallback: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Domain("sensitivity of an empty point set".into()));
    }
    if !(fallback > 0.0) {
        return Err(Error::Domain(format!("eta fallback {fallback} must be positive")));
    }
    if points.len() < 2 {
        return Ok(fallback);
    }
    let mut dims: HashMap<ConceptId, (f64, f64, usize)> = HashMap::new();
    for p in points {
        for (id, x) in p.iter() {
            let e = dims.entry(id).or_insert((f64::INFINITY, f64::NEG_INFINITY, 0));
            e.0 = e.0.min(x);
            e.1 = e.1.max(x);
            e.2 += 1;
        }
    }
    let n = points.len();
    let min_range = dims
        .values()
        .map(|&(lo, hi, count)| {
            // Points without the dimension sit at 0.
            let (lo, hi) = if count < n { (lo.min(0.0), hi.max(0.0)) } else { (lo, hi) };
            hi - lo
        })
        .filter(|&r| r > 0.0)
        .fold(f64::INFINITY, f64::min);
    Ok(if min_range.is_finite() { min_range / (2.0 * (n - 1) as f64) } else { fallback })
}

/// An axis-aligned box `[v, u]` with membership sensitivity `eta`.
///
/// `v` and `u` store non-zero coordinates only, so `supp(v) ⊆ supp(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperBox {
    v: SparseVector,
    u: SparseVector,
    eta: f64,
    members: Vec<String>,
    extent: f64,
    v_sum: f64,
    v_ramp: f64,
}

impl HyperBox {
    pub fn new(v: SparseVector, u: SparseVector, eta: f64, members: Vec<String>) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Domain(format!("box sensitivity {eta} must be positive")));
        }
        let (v, u) = (v.pruned_zeros(), u.pruned_zeros());
        for (id, x) in u.iter().chain(v.iter()) {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain(format!("box coordinate {id} = {x} outside [0, 1]")));
            }
        }
        for (id, lo) in v.iter() {
            if lo > u.get(id) {
                return Err(Error::Domain(format!("box minimum {lo} exceeds maximum at {id}")));
            }
        }
        Ok(Self::from_parts(v, u, eta, members))
    }

    fn from_parts(v: SparseVector, u: SparseVector, eta: f64, members: Vec<String>) -> Self {
        let mut b = Self { v, u, eta, members, extent: 0.0, v_sum: 0.0, v_ramp: 0.0 };
        b.refresh();
        b
    }

    fn refresh(&mut self) {
        self.extent = self.u.iter().map(|(id, hi)| hi - self.v.get(id)).sum();
        self.v_sum = self.v.sum();
        self.v_ramp = self.v.iter().map(|(_, lo)| ramp(lo, self.eta)).sum();
    }

    /// Degenerate box around a single point.
    fn seed(point: &SparseVector, member: String, eta: f64) -> Self {
        Self::from_parts(point.clone(), point.clone(), eta, vec![member])
    }

    pub fn v(&self) -> &SparseVector {
        &self.v
    }
    pub fn u(&self) -> &SparseVector {
        &self.u
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn members(&self) -> &[String] {
        &self.members
    }

    /// `Σ_i (u_i - v_i)`.
    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// True when `v <= x <= u` on every explicit dimension of the box.
    pub fn contains(&self, x: &SparseVector) -> bool {
        self.u.iter().all(|(id, hi)| {
            let xi = x.get(id);
            self.v.get(id) <= xi && xi <= hi
        })
    }

    /// Sum of ramp penalties over the dimensions where the box or `x` is non-zero.
    ///
    /// Box dimensions missing from `x` contribute `ramp(v_i)`, taken from the
    /// cached total minus the dimensions `x` does have.
    fn penalty(&self, x: &SparseVector) -> f64 {
        let mut total = 0.0;
        let mut shared = 0.0;
        for (id, xi) in x.iter() {
            let lo = self.v.get(id);
            total += ramp(xi - self.u.get(id), self.eta) + ramp(lo - xi, self.eta);
            shared += ramp(lo, self.eta);
        }
        total + (self.v_ramp - shared).max(0.0)
    }

    /// Box extent after absorbing `x`.
    fn expanded_extent(&self, x: &SparseVector) -> f64 {
        let mut delta = 0.0;
        let mut shared = 0.0;
        for (id, xi) in x.iter() {
            let (lo, hi) = (self.v.get(id), self.u.get(id));
            delta += (hi.max(xi) - lo.min(xi)) - (hi - lo);
            shared += lo;
        }
        self.extent + (delta + (self.v_sum - shared).max(0.0))
    }

    fn absorb(&mut self, x: &SparseVector, member: String, eta_fallback: f64) {
        let u = merge(&self.u, x, f64::max, true);
        let v = merge(&self.v, x, f64::min, false);
        self.u = u;
        self.v = v;
        self.members.push(member);
        let n = self.members.len();
        let min_range =
            self.u.iter().map(|(id, hi)| hi - self.v.get(id)).filter(|&r| r > 0.0).fold(f64::INFINITY, f64::min);
        self.eta = if n >= 2 && min_range.is_finite() { min_range / (2.0 * (n - 1) as f64) } else { eta_fallback };
        self.refresh();
    }
}

/// Merges two sparse vectors with `op`. With `union` false only ids present
/// in both survive (absent ids are 0, and `min(0, x) = 0` for `x >= 0`).
fn merge(a: &SparseVector, b: &SparseVector, op: fn(f64, f64) -> f64, union: bool) -> SparseVector {
    let (a, b) = (a.entries(), b.entries());
    let mut out = Vec::with_capacity(if union { a.len() + b.len() } else { a.len().min(b.len()) });
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let ord = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.0.cmp(&y.0),
            (Some(_), None) => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Greater,
        };
        match ord {
            std::cmp::Ordering::Less => {
                if union {
                    out.push(a[i]);
                }
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                if union {
                    out.push(b[j]);
                }
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, op(a[i].1, b[j].1)));
                i += 1;
                j += 1;
            }
        }
    }
    SparseVector::from_sorted_unchecked(out).pruned_zeros()
}

/// Membership degree of `x` in `hyper_box` within an `n`-dimensional space.
pub fn membership(hyper_box: &HyperBox, x: &SparseVector, n: usize) -> f64 {
    let n = n.max(1) as f64;
    ((n - hyper_box.penalty(&x.pruned_zeros())) / n).clamp(0.0, 1.0)
}

/// Membership averaged over the non-zero coordinates of `x` only.
///
/// Dimensions where the query has no concept carry no evidence about it;
/// leaving them out lets boxes that share nothing with the query score 0.
/// An empty query belongs fully to every box.
pub fn query_membership(hyper_box: &HyperBox, x: &SparseVector) -> f64 {
    let x = x.pruned_zeros();
    if x.is_empty() {
        return 1.0;
    }
    let eta = hyper_box.eta;
    // Summing `1 - t` rather than subtracting the total penalty keeps
    // `H > 0` exactly equivalent to some term being below 1.
    let credit: f64 = x
        .iter()
        .map(|(id, xi)| 1.0 - (ramp(xi - hyper_box.u.get(id), eta) + ramp(hyper_box.v.get(id) - xi, eta)))
        .sum();
    (credit / x.len() as f64).clamp(0.0, 1.0)
}

/// Point coordinates sorted ascending with prefix sums, for summing
/// `ramp(x_i, eta)` over all coordinates in logarithmic time.
struct RampSums {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl RampSums {
    fn new(x: &SparseVector) -> Self {
        let mut sorted: Vec<f64> = x.iter().map(|(_, xi)| xi).collect();
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        for &xi in &sorted {
            prefix.push(prefix.last().copied().unwrap_or_default() + xi);
        }
        Self { sorted, prefix }
    }

    /// `Σ_i ramp(x_i, eta)`.
    fn total(&self, eta: f64) -> f64 {
        let k = self.sorted.partition_point(|&xi| xi <= eta);
        self.prefix[k] / eta + (self.sorted.len() - k) as f64
    }

    /// Number of coordinates with `ramp(x_i, eta) < 1`.
    fn below_one(&self, eta: f64) -> usize {
        self.sorted.partition_point(|&xi| ramp(xi, eta) < 1.0)
    }
}

/// Inverted index from concepts to the boxes holding them, with the box
/// coordinates inline.
#[derive(Debug, Clone, Default)]
pub(crate) struct BoxPostings {
    lists: HashMap<ConceptId, Vec<(usize, f64, f64)>>,
}

impl BoxPostings {
    pub(crate) fn new(boxes: &[HyperBox]) -> Self {
        let mut lists: HashMap<ConceptId, Vec<(usize, f64, f64)>> = HashMap::new();
        for (j, b) in boxes.iter().enumerate() {
            for (id, hi) in b.u.iter() {
                lists.entry(id).or_default().push((j, b.v.get(id), hi));
            }
        }
        Self { lists }
    }

    /// Indices, ascending, of the boxes with positive query-scope
    /// membership. Same set as filtering `query_membership > 0`.
    pub(crate) fn query_relevant(&self, boxes: &[HyperBox], query: &SparseVector) -> Vec<usize> {
        let x = query.pruned_zeros();
        if x.is_empty() {
            return (0..boxes.len()).collect();
        }
        let mut hit = vec![false; boxes.len()];
        let mut shared_below = vec![0usize; boxes.len()];
        for (id, xi) in x.iter() {
            for &(j, lo, hi) in self.lists.get(&id).map(Vec::as_slice).unwrap_or_default() {
                let eta = boxes[j].eta;
                if ramp(xi - hi, eta) + ramp(lo - xi, eta) < 1.0 {
                    hit[j] = true;
                }
                if ramp(xi, eta) < 1.0 {
                    shared_below[j] += 1;
                }
            }
        }
        let sums = RampSums::new(&x);
        (0..boxes.len()).filter(|&j| hit[j] || sums.below_one(boxes[j].eta) > shared_below[j]).collect()
    }
}

/// Whether absorbing `x` keeps the box extent within `n · theta`.
pub fn can_expand(hyper_box: &HyperBox, x: &SparseVector, theta: f64, n: usize) -> bool {
    hyper_box.expanded_extent(&x.pruned_zeros()) <= n as f64 * theta
}

/// Which dimensions the membership used for pruning averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MembershipScope {
    /// All `n` vocabulary dimensions, as in training.
    #[default]
    Vocabulary,
    /// The query's own concepts.
    Query,
}

impl MembershipScope {
    pub fn name(self) -> &'static str {
        match self {
            MembershipScope::Vocabulary => "vocabulary",
            MembershipScope::Query => "query",
        }
    }
}

impl fmt::Display for MembershipScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MembershipScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vocabulary" => Ok(MembershipScope::Vocabulary),
            "query" => Ok(MembershipScope::Query),
            _ => Err(Error::Domain(format!("unknown membership scope {s:?}"))),
        }
    }
}

/// A trained set of boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxModel {
    pub boxes: Vec<HyperBox>,
    pub theta: f64,
    pub n: usize,
    pub presentation_order: Vec<String>,
    /// Digest of the manifest that produced the model, if any.
    pub manifest: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevantBox {
    pub index: usize,
    pub membership: f64,
}

impl BoxModel {
    /// Checks that every case id belongs to exactly one box and that the
    /// presentation order lists the same ids.
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Domain(format!("theta {} outside (0, 1]", self.theta)));
        }
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for (j, b) in self.boxes.iter().enumerate() {
            if b.members.is_empty() {
                return Err(Error::Consistency(format!("box {j} has no members")));
            }
            for m in &b.members {
                if let Some(k) = owner.insert(m, j) {
                    return Err(Error::Consistency(format!("case {m} is in boxes {k} and {j}")));
                }
            }
        }
        let order: BTreeSet<&str> = self.presentation_order.iter().map(String::as_str).collect();
        if order.len() != self.presentation_order.len()
            || order.len() != owner.len()
            || order.iter().any(|id| !owner.contains_key(id))
        {
            return Err(Error::Consistency("presentation order does not match box members".into()));
        }
        Ok(())
    }

    /// Boxes with membership > 0 for `query`, by descending membership,
    /// ties by box index.
    pub fn relevant_boxes(&self, query: &SparseVector, scope: MembershipScope) -> Vec<RelevantBox> {
        let query = query.pruned_zeros();
        let mut out: Vec<RelevantBox> = self
            .boxes
            .iter()
            .enumerate()
            .map(|(index, b)| {
                let membership = match scope {
                    MembershipScope::Vocabulary => membership(b, &query, self.n),
                    MembershipScope::Query => query_membership(b, &query),
                };
                RelevantBox { index, membership }
            })
            .filter(|r| r.membership > 0.0)
            .collect();
        out.sort_by(|a, b| b.membership.total_cmp(&a.membership).then(a.index.cmp(&b.index)));
        out
    }
}

pub fn relevant_boxes<'m>(model: &'m BoxModel, query: &SparseVector, scope: MembershipScope) -> Vec<&'m HyperBox> {
    model.relevant_boxes(query, scope).into_iter().map(|r| &model.boxes[r.index]).collect()
}

/// Corrections accumulated over the concepts a point shares with one box.
#[derive(Debug, Clone, Copy, Default)]
struct Shared {
    touched: bool,
    extent: f64,
    v: f64,
    penalty: f64,
    v_ramp: f64,
}

/// Trains boxes over `fused` in the given order.
///
/// Each point goes to the box of highest membership among those that can
/// absorb it within the `theta` budget (ties: lowest index); when none can,
/// it seeds a new box.
pub fn train(fused: &[FusedCase], theta: f64, eta_fallback: f64) -> Result<BoxModel> {
    if fused.is_empty() {
        return Err(Error::Domain("cannot cluster an empty corpus".into()));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Domain(format!("theta {theta} outside (0, 1]")));
    }
    if !(eta_fallback > 0.0 && eta_fallback.is_finite()) {
        return Err(Error::Domain(format!("eta fallback {eta_fallback} must be positive")));
    }
    let vocabulary: BTreeSet<ConceptId> = fused.iter().flat_map(|c| c.entries().keys().copied()).collect();
    let n = vocabulary.len();
    for case in fused {
        if let Some((id, e)) = case.entries().iter().find(|(_, e)| e.score > 1.0) {
            return Err(Error::Domain(format!("case {}: score {} of {id} outside [0, 1]", case.case_id(), e.score)));
        }
    }
    let budget = n as f64 * theta;
    let mut boxes: Vec<HyperBox> = Vec::new();
    // Boxes by the concepts in their support. Each point walks only the
    // postings of its own concepts and corrects a closed form that assumes
    // the box and the point share nothing.
    // Upper bounds are kept inline; a box's `u` only moves on the concepts
    // of the point it absorbs. Lower bounds shrink to the concepts common to
    // all members, so looking them up stays cheap.
    let mut postings: HashMap<ConceptId, Vec<(usize, f64)>> = HashMap::new();
    let mut slots: HashMap<(usize, ConceptId), usize> = HashMap::new();
    let mut acc: Vec<Shared> = Vec::new();
    let mut touched: Vec<usize> = Vec::new();
    for case in fused {
        let x = case.to_vector().pruned_zeros();
        for (id, xi) in x.iter() {
            for &(j, hi) in postings.get(&id).map(Vec::as_slice).unwrap_or_default() {
                let b = &boxes[j];
                let a = &mut acc[j];
                if !a.touched {
                    a.touched = true;
                    touched.push(j);
                }
                let lo = b.v.get(id);
                a.extent += (hi.max(xi) - lo.min(xi)) - (hi - lo) - xi;
                a.v += lo;
                a.penalty += ramp(xi - hi, b.eta) + ramp(lo - xi, b.eta) - ramp(xi, b.eta);
                a.v_ramp += ramp(lo, b.eta);
            }
        }
        let x_sum: f64 = x.iter().map(|(_, xi)| xi).sum();
        let sums = RampSums::new(&x);
        let mut best: Option<(usize, f64)> = None;
        for (j, b) in boxes.iter().enumerate() {
            let a = &acc[j];
            let extent = b.extent + x_sum + a.extent + (b.v_sum - a.v).max(0.0);
            if extent > budget {
                continue;
            }
            let penalty = sums.total(b.eta) + a.penalty + (b.v_ramp - a.v_ramp).max(0.0);
            let h = ((n as f64 - penalty) / n as f64).clamp(0.0, 1.0);
            if best.is_none_or(|(_, bh)| h > bh) {
                best = Some((j, h));
            }
        }
        for j in touched.drain(..) {
            acc[j] = Shared::default();
        }
        let j = match best {
            Some((j, _)) => {
                boxes[j].absorb(&x, case.case_id().to_owned(), eta_fallback);
                j
            }
            None => {
                boxes.push(HyperBox::seed(&x, case.case_id().to_owned(), eta_fallback));
                acc.push(Shared::default());
                boxes.len() - 1
            }
        };
        for (id, _) in x.iter() {
            let hi = boxes[j].u.get(id);
            let list = postings.entry(id).or_default();
            match slots.get(&(j, id)) {
                Some(&k) => list[k].1 = hi,
                None => {
                    slots.insert((j, id), list.len());
                    list.push((j, hi));
                }
            }
        }
    }
    Ok(BoxModel {
        boxes,
        theta,
        n,
        presentation_order: fused.iter().map(|c| c.case_id().to_owned()).collect(),
        manifest: None,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    theta: f64,
    n: usize,
    boxes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<String>,
    presentation_order: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    eta: f64,
    members: Vec<String>,
    v: Vec<(ConceptId, f64)>,
    u: Vec<(ConceptId, f64)>,
}

/// Writes the model: a header line, then one box per line.
pub fn write_model(mut w: impl Write, model: &BoxModel) -> Result<()> {
    let header = ModelHeader {
        theta: model.theta,
        n: model.n,
        boxes: model.boxes.len(),
        manifest: model.manifest.clone(),
        presentation_order: model.presentation_order.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for b in &model.boxes {
        let rec =
            BoxRecord { eta: b.eta, members: b.members.clone(), v: b.v.entries().to_vec(), u: b.u.entries().to_vec() };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_model(reader: impl Read) -> Result<BoxModel> {
    let mut lines = BufReader::new(reader).lines().enumerate().map(|(i, l)| (i + 1, l));
    let (line, first) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty model file".into() })?;
    let header: ModelHeader = serde_json::from_str(&first?).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
    let mut boxes = Vec::with_capacity(header.boxes);
    for (line, text) in lines {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: BoxRecord = serde_json::from_str(&text).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let at = |e: Error| Error::DomainAt { line, msg: e.to_string() };
        let v = SparseVector::from_pairs(rec.v).map_err(at)?;
        let u = SparseVector::from_pairs(rec.u).map_err(at)?;
        boxes.push(HyperBox::new(v, u, rec.eta, rec.members).map_err(at)?);
    }
    if boxes.len() != header.boxes {
        return Err(Error::Data(format!("header announces {} boxes, found {}", header.boxes, boxes.len())));
    }
    let model = BoxModel {
        boxes,
        theta: header.theta,
        n: header.n,
        presentation_order: header.presentation_order,
        manifest: header.manifest,
    };
    model.validate()?;
    Ok(model)
}

pub fn parse_model_file(path: &Path) -> Result<BoxModel> {
    read_model(fs::File::open(path)?)
}

pub fn write_model_file(path: &Path, model: &BoxModel) -> Result<()> {
    write_atomic(path, |buf| write_model(buf, model))
}
