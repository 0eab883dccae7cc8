//! File formats: corpus index files, fused dictionaries, TREC qrels and
//! TREC run files.
//!
//! Corpus and fused files are JSON Lines, one self-delimiting record per
//! line. A corpus holds one `text` record and one `image` record per
//! elementary case:
//!
//! ```text
//! {"case_id":"3384#1","medium":"text","concepts":[{"cui":"C0003486","mu":1.0,"nu":0.5028841,"omega":1.0,"phi":1.0}]}
//! {"case_id":"3384#1","medium":"image","image_ref":"Image17_1.jpg","concepts":[{"cui":"C0202823","mu":0.305981,"nu":1.0,"omega":1.0,"phi":1.0}]}
//! ```
//!
//! Missing factors default to 1. A concept may instead carry a single
//! `val`, read as `nu` for text and `mu` for images.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::concept::{
    validate_case_id, ConceptId, ElementaryCase, FusedCase, FusedEntry, MediaIndex, Medium, Provenance, WeightedConcept,
};
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

/// A set of elementary cases, sorted by case id, with its concept vocabulary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    cases: Vec<ElementaryCase>,
    vocabulary: Vec<ConceptId>,
}

impl Corpus {
    pub fn new(mut cases: Vec<ElementaryCase>) -> Result<Self> {
        cases.sort_by(|a, b| a.case_id().cmp(b.case_id()));
        if let Some(w) = cases.windows(2).find(|w| w[0].case_id() == w[1].case_id()) {
            return Err(Error::Data(format!("duplicate case id {}", w[0].case_id())));
        }
        let vocabulary: BTreeSet<ConceptId> = cases
            .iter()
            .flat_map(|c| c.text_index().concepts().iter().chain(c.image_index().concepts()))
            .map(WeightedConcept::cui)
            .collect();
        Ok(Self { cases, vocabulary: vocabulary.into_iter().collect() })
    }

    pub fn cases(&self) -> &[ElementaryCase] {
        &self.cases
    }

    pub fn vocabulary(&self) -> &[ConceptId] {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, case_id: &str) -> Option<&ElementaryCase> {
        self.cases.binary_search_by(|c| c.case_id().cmp(case_id)).ok().map(|i| &self.cases[i])
    }

    /// Applies `f` to every case. Ids are kept, so order and uniqueness hold.
    pub fn map_cases(&self, f: impl Fn(&ElementaryCase) -> ElementaryCase) -> Self {
        let cases: Vec<_> = self.cases.iter().map(f).collect();
        debug_assert!(cases.iter().zip(&self.cases).all(|(a, b)| a.case_id() == b.case_id()));
        Self::new(cases).expect("case ids unchanged")
    }
}

#[derive(Serialize, Deserialize)]
struct ConceptRecord {
    cui: ConceptId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    val: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseRecord {
    case_id: String,
    medium: Medium,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_ref: Option<String>,
    concepts: Vec<ConceptRecord>,
}

impl ConceptRecord {
    fn from_concept(c: &WeightedConcept) -> Self {
        Self { cui: c.cui(), mu: Some(c.mu()), nu: Some(c.nu()), omega: Some(c.omega()), phi: Some(c.phi()), val: None }
    }

    fn into_concept(self, medium: Medium, line: usize) -> Result<WeightedConcept> {
        let (mut mu, mut nu) = (self.mu, self.nu);
        if let Some(val) = self.val {
            let slot = match medium {
                Medium::Text => &mut nu,
                Medium::Image => &mut mu,
            };
            if slot.is_some() {
                return Err(Error::Parse {
                    line,
                    msg: format!("{}: `val` given together with the factor it stands for", self.cui),
                });
            }
            *slot = Some(val);
        }
        WeightedConcept::new(
            self.cui,
            mu.unwrap_or(1.0),
            nu.unwrap_or(1.0),
            self.omega.unwrap_or(1.0),
            self.phi.unwrap_or(1.0),
        )
        .map_err(|e| Error::DomainAt { line, msg: format!("{}: {e}", self.cui) })
    }
}

fn lines_of(reader: impl Read) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    BufReader::new(reader).lines().enumerate().map(|(i, l)| (i + 1, l))
}

/// Reads a corpus file. Duplicate concepts within one record are merged by
/// per-factor maximum.
pub fn read_corpus(reader: impl Read) -> Result<Corpus> {
    struct Partial {
        text: Option<MediaIndex>,
        image: Option<(String, MediaIndex)>,
    }
    let mut partial: BTreeMap<String, Partial> = BTreeMap::new();
    for (line, text) in lines_of(reader) {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: CaseRecord = serde_json::from_str(&text).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        validate_case_id(&rec.case_id).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let concepts =
            rec.concepts.into_iter().map(|c| c.into_concept(rec.medium, line)).collect::<Result<Vec<_>>>()?;
        let index = MediaIndex::merged(rec.medium, concepts);
        let entry = partial.entry(rec.case_id.clone()).or_insert(Partial { text: None, image: None });
        let duplicate = match rec.medium {
            Medium::Text => {
                if rec.image_ref.is_some() {
                    return Err(Error::Parse { line, msg: "text record carries an image_ref".into() });
                }
                entry.text.replace(index).is_some()
            }
            Medium::Image => {
                let image_ref =
                    rec.image_ref.ok_or_else(|| Error::Parse { line, msg: "image record without image_ref".into() })?;
                entry.image.replace((image_ref, index)).is_some()
            }
        };
        if duplicate {
            return Err(Error::Data(format!("duplicate {} record for case {} (line {line})", rec.medium, rec.case_id)));
        }
    }
    let cases = partial
        .into_iter()
        .map(|(id, p)| {
            let text = p.text.unwrap_or_else(|| MediaIndex::empty(Medium::Text));
            let (image_ref, image) = p.image.unwrap_or_else(|| (String::new(), MediaIndex::empty(Medium::Image)));
            ElementaryCase::new(id, text, image, image_ref)
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(cases)
}

pub fn write_corpus(mut w: impl Write, corpus: &Corpus) -> Result<()> {
    for case in corpus.cases() {
        for medium in [Medium::Text, Medium::Image] {
            let rec = CaseRecord {
                case_id: case.case_id().to_owned(),
                medium,
                image_ref: (medium == Medium::Image).then(|| case.image_ref().to_owned()),
                concepts: case.index(medium).concepts().iter().map(ConceptRecord::from_concept).collect(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FusedEntryRecord {
    cui: ConceptId,
    score: f64,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FusedRecord {
    case_id: String,
    entries: Vec<FusedEntryRecord>,
}

/// Reads fused dictionaries, one case per line. Output is sorted by case id.
pub fn read_fused(reader: impl Read) -> Result<Vec<FusedCase>> {
    let mut out = Vec::new();
    for (line, text) in lines_of(reader) {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: FusedRecord = serde_json::from_str(&text).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let mut entries = BTreeMap::new();
        for e in rec.entries {
            let entry = FusedEntry { score: e.score, provenance: e.provenance };
            if entries.insert(e.cui, entry).is_some() {
                return Err(Error::Parse { line, msg: format!("duplicate concept {}", e.cui) });
            }
        }
        let case = FusedCase::new(rec.case_id, entries).map_err(|e| match e {
            Error::Domain(msg) => Error::DomainAt { line, msg },
            other => other,
        })?;
        out.push(case);
    }
    out.sort_by(|a, b| a.case_id().cmp(b.case_id()));
    if let Some(w) = out.windows(2).find(|w| w[0].case_id() == w[1].case_id()) {
        return Err(Error::Data(format!("duplicate case id {}", w[0].case_id())));
    }
    Ok(out)
}

pub fn write_fused(mut w: impl Write, cases: &[FusedCase]) -> Result<()> {
    for case in cases {
        let rec = FusedRecord {
            case_id: case.case_id().to_owned(),
            entries: case
                .entries()
                .iter()
                .map(|(&cui, e)| FusedEntryRecord { cui, score: e.score, provenance: e.provenance })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Relevance judgments keyed by (query id, case id).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<(String, String), u32>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, case_id: impl Into<String>, relevance: u32) {
        self.judgments.insert((query_id.into(), case_id.into()), relevance);
    }

    pub fn relevance(&self, query_id: &str, case_id: &str) -> Option<u32> {
        self.judgments.get(&(query_id.to_owned(), case_id.to_owned())).copied()
    }

    pub fn is_relevant(&self, query_id: &str, case_id: &str) -> bool {
        self.relevance(query_id, case_id).is_some_and(|r| r > 0)
    }

    fn query_range<'a>(&'a self, query_id: &'a str) -> impl Iterator<Item = (&'a str, u32)> + 'a {
        self.judgments
            .range((query_id.to_owned(), String::new())..)
            .take_while(move |((q, _), _)| q == query_id)
            .map(|((_, c), &r)| (c.as_str(), r))
    }

    /// Case ids judged relevant (relevance > 0) for a query.
    pub fn relevant_cases<'a>(&'a self, query_id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.query_range(query_id).filter(|&(_, r)| r > 0).map(|(c, _)| c)
    }

    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.relevant_cases(query_id).count()
    }

    pub fn query_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.judgments.keys().map(|(q, _)| q.as_str()).collect();
        ids.dedup();
        ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments.iter().map(|((q, c), &r)| (q.as_str(), c.as_str(), r))
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

/// Reads 4-column TREC qrels. Later lines override earlier ones for the
/// same (query, case) pair.
pub fn read_qrels(reader: impl Read) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (line, text) in lines_of(reader) {
        let text = text?;
        let cols: Vec<&str> = text.split_whitespace().collect();
        match cols.as_slice() {
            [] => continue,
            [q, _iter, case, rel] => {
                let rel: u32 = rel.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("relevance {rel:?} is not a non-negative integer"),
                })?;
                qrels.insert(*q, *case, rel);
            }
            _ => return Err(Error::Parse { line, msg: format!("expected 4 columns, found {}", cols.len()) }),
        }
    }
    Ok(qrels)
}

pub fn write_qrels(mut w: impl Write, qrels: &Qrels) -> Result<()> {
    for (q, c, r) in qrels.iter() {
        writeln!(w, "{q} 0 {c} {r}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub query_id: String,
    pub case_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Ranked output of a system. Within a query, ranks run 1..k and scores
/// never increase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub rows: Vec<RunRow>,
}

impl RunFile {
    pub fn from_ranked(lists: &[RankedList], tag: &str) -> Self {
        let rows = lists
            .iter()
            .flat_map(|l| {
                l.hits.iter().enumerate().map(|(i, (case_id, score))| RunRow {
                    query_id: l.query_id.clone(),
                    case_id: case_id.clone(),
                    rank: i + 1,
                    score: *score,
                    tag: tag.to_owned(),
                })
            })
            .collect();
        Self { rows }
    }

    /// Groups rows by query, in order of first appearance.
    pub fn to_ranked(&self) -> Vec<RankedList> {
        let mut pos: HashMap<&str, usize> = HashMap::new();
        let mut lists: Vec<RankedList> = Vec::new();
        for row in &self.rows {
            let i = *pos.entry(&row.query_id).or_insert_with(|| {
                lists.push(RankedList { query_id: row.query_id.clone(), hits: Vec::new() });
                lists.len() - 1
            });
            lists[i].hits.push((row.case_id.clone(), row.score));
        }
        lists
    }

    pub fn validate(&self) -> Result<()> {
        validate_rows(&self.rows).map_err(|(_, e)| e)
    }
}

/// On failure returns the offending row index with the error.
fn validate_rows(rows: &[RunRow]) -> std::result::Result<(), (usize, Error)> {
    let mut last: HashMap<&str, (usize, f64)> = HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        let fail = |msg: String| Err((i, Error::Contract(msg)));
        for (what, s) in [("query id", &row.query_id), ("case id", &row.case_id), ("tag", &row.tag)] {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return fail(format!("{what} {s:?} is empty or contains whitespace"));
            }
        }
        if !row.score.is_finite() {
            return fail(format!("query {}: non-finite score", row.query_id));
        }
        let (prev_rank, prev_score) = last.get(row.query_id.as_str()).copied().unwrap_or((0, f64::INFINITY));
        if row.rank != prev_rank + 1 {
            return fail(format!("query {}: rank {} follows rank {prev_rank}", row.query_id, row.rank));
        }
        if row.score > prev_score {
            return fail(format!(
                "query {}: score {} at rank {} exceeds {prev_score}",
                row.query_id, row.score, row.rank
            ));
        }
        last.insert(&row.query_id, (row.rank, row.score));
    }
    Ok(())
}

/// Reads a 6-column TREC run file and checks its ordering contract.
pub fn read_run(reader: impl Read) -> Result<RunFile> {
    let mut rows = Vec::new();
    let mut line_of_row = Vec::new();
    for (line, text) in lines_of(reader) {
        let text = text?;
        let cols: Vec<&str> = text.split_whitespace().collect();
        match cols.as_slice() {
            [] => continue,
            [q, _q0, case, rank, score, tag] => {
                let rank =
                    rank.parse().map_err(|_| Error::Parse { line, msg: format!("rank {rank:?} is not an integer") })?;
                let score = score
                    .parse()
                    .map_err(|_| Error::Parse { line, msg: format!("score {score:?} is not a number") })?;
                rows.push(RunRow {
                    query_id: q.to_string(),
                    case_id: case.to_string(),
                    rank,
                    score,
                    tag: tag.to_string(),
                });
                line_of_row.push(line);
            }
            _ => return Err(Error::Parse { line, msg: format!("expected 6 columns, found {}", cols.len()) }),
        }
    }
    validate_rows(&rows).map_err(|(i, e)| Error::Parse { line: line_of_row[i], msg: e.to_string() })?;
    Ok(RunFile { rows })
}

/// Writes `query_id Q0 case_id rank score tag` lines, scores with 6
/// decimals. The whole run is checked before anything is written.
pub fn write_run(mut w: impl Write, run: &RunFile) -> Result<()> {
    run.validate()?;
    for r in &run.rows {
        writeln!(w, "{} Q0 {} {} {:.6} {}", r.query_id, r.case_id, r.rank, r.score, r.tag)?;
    }
    Ok(())
}

/// Serializes with `f` into memory, then replaces `path` via a temporary
/// file in the same directory.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&buf)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn parse_case_file(path: &Path) -> Result<Corpus> {
    read_corpus(fs::File::open(path)?)
}

pub fn parse_fused_file(path: &Path) -> Result<Vec<FusedCase>> {
    read_fused(fs::File::open(path)?)
}

pub fn parse_qrels(path: &Path) -> Result<Qrels> {
    read_qrels(fs::File::open(path)?)
}

pub fn parse_run(path: &Path) -> Result<RunFile> {
    read_run(fs::File::open(path)?)
}

pub fn write_case_file(path: &Path, corpus: &Corpus) -> Result<()> {
    write_atomic(path, |buf| write_corpus(buf, corpus))
}

pub fn write_fused_file(path: &Path, cases: &[FusedCase]) -> Result<()> {
    write_atomic(path, |buf| write_fused(buf, cases))
}

pub fn write_qrels_file(path: &Path, qrels: &Qrels) -> Result<()> {
    write_atomic(path, |buf| write_qrels(buf, qrels))
}

pub fn write_run_file(path: &Path, run: &RunFile) -> Result<()> {
    run.validate()?;
    write_atomic(path, |buf| write_run(buf, run))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = concat!(
        r#"{"case_id":"11","medium":"text","concepts":[{"cui":"C0003486","mu":1.0,"nu":0.5028841,"omega":1.0,"phi":1.0}]}"#,
        "\n",
        r#"{"case_id":"11","medium":"image","image_ref":"Image17_1.jpg","concepts":[{"cui":"C0202823","mu":0.305981,"nu":1.0,"omega":1.0,"phi":1.0}]}"#,
        "\n",
    );

    fn write_to_string(corpus: &Corpus) -> String {
        let mut buf = Vec::new();
        write_corpus(&mut buf, corpus).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn corpus_values_round_trip_exactly() {
        let corpus = read_corpus(FIG.as_bytes()).unwrap();
        let case = corpus.get("11").unwrap();
        assert_eq!(case.text_index().concepts()[0].nu(), 0.5028841);
        assert_eq!(case.text_index().concepts()[0].lambda(), 0.5028841);
        assert_eq!(case.image_index().concepts()[0].mu(), 0.305981);
        assert_eq!(case.image_ref(), "Image17_1.jpg");
        assert_eq!(write_to_string(&corpus), FIG);
        assert_eq!(corpus.vocabulary().len(), 2);
    }

    #[test]
    fn legacy_val_maps_to_medium_factor() {
        let src = concat!(
            r#"{"case_id":"3384#1","medium":"text","concepts":[{"cui":"C0003486","val":0.5028841}]}"#,
            "\n",
            r#"{"case_id":"3384#1","medium":"image","image_ref":"a.jpg","concepts":[{"cui":"C0202823","val":0.305981}]}"#,
        );
        let corpus = read_corpus(src.as_bytes()).unwrap();
        let case = &corpus.cases()[0];
        let t = &case.text_index().concepts()[0];
        assert_eq!((t.mu(), t.nu(), t.omega(), t.phi()), (1.0, 0.5028841, 1.0, 1.0));
        let i = &case.image_index().concepts()[0];
        assert_eq!((i.mu(), i.nu()), (0.305981, 1.0));
    }

    #[test]
    fn empty_corpus() {
        let corpus = read_corpus("".as_bytes()).unwrap();
        assert!(corpus.is_empty());
        assert!(corpus.vocabulary().is_empty());
    }

    #[test]
    fn duplicate_concepts_merge_by_factor_max() {
        let src = r#"{"case_id":"a","medium":"image","image_ref":"x","concepts":[{"cui":"C0000001","mu":0.2,"omega":0.5},{"cui":"C0000001","mu":0.6,"omega":0.25}]}"#;
        let corpus = read_corpus(src.as_bytes()).unwrap();
        let c = &corpus.cases()[0].image_index().concepts()[0];
        assert_eq!((c.mu(), c.omega()), (0.6, 0.5));
        assert_eq!(corpus.cases()[0].image_index().len(), 1);
    }

    #[test]
    fn corpus_errors_carry_line_numbers() {
        let bad_json = format!("{FIG}{{not json\n");
        match read_corpus(bad_json.as_bytes()) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        let bad_factor = r#"{"case_id":"a","medium":"text","concepts":[]}
{"case_id":"b","medium":"text","concepts":[{"cui":"C0000001","nu":1.5}]}"#;
        match read_corpus(bad_factor.as_bytes()) {
            Err(Error::DomainAt { line: 2, msg }) => assert!(msg.contains("nu"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let bad_cui = r#"{"case_id":"a","medium":"text","concepts":[{"cui":"X1"}]}"#;
        assert!(matches!(read_corpus(bad_cui.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let dup = format!("{FIG}{FIG}");
        assert!(matches!(read_corpus(dup.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn records_sorted_and_vocabulary_order_free() {
        let a = r#"{"case_id":"b","medium":"text","concepts":[{"cui":"C0000009"}]}
{"case_id":"a","medium":"text","concepts":[{"cui":"C0000003"},{"cui":"C0000009"}]}"#;
        let b = r#"{"case_id":"a","medium":"text","concepts":[{"cui":"C0000003"},{"cui":"C0000009"}]}
{"case_id":"b","medium":"text","concepts":[{"cui":"C0000009"}]}"#;
        let ca = read_corpus(a.as_bytes()).unwrap();
        let cb = read_corpus(b.as_bytes()).unwrap();
        assert_eq!(ca.cases()[0].case_id(), "a");
        assert_eq!(ca.vocabulary(), cb.vocabulary());
        assert_eq!(ca.vocabulary().len(), 2);
    }

    #[test]
    fn qrels_format() {
        let q = read_qrels("11 0 3384#1 1\n".as_bytes()).unwrap();
        assert_eq!(q.relevance("11", "3384#1"), Some(1));
        let q = read_qrels("11 0 d 0\n11 0 d 1\n".as_bytes()).unwrap();
        assert_eq!(q.relevance("11", "d"), Some(1));
        assert_eq!(q.len(), 1);
        assert!(read_qrels("".as_bytes()).unwrap().is_empty());
        assert!(matches!(read_qrels("1 0 a 1\n1 0 b x\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_qrels("1 0 a -1\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_qrels("1 0 a\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn qrels_relevant_sets() {
        let q = read_qrels("2 0 a 1\n1 0 b 0\n1 0 c 2\n10 0 d 1\n".as_bytes()).unwrap();
        assert_eq!(q.relevant_cases("1").collect::<Vec<_>>(), ["c"]);
        assert_eq!(q.relevant_count("10"), 1);
        assert_eq!(q.relevant_count("3"), 0);
        assert_eq!(q.query_ids(), ["1", "10", "2"]);
    }

    fn row(q: &str, c: &str, rank: usize, score: f64) -> RunRow {
        RunRow { query_id: q.into(), case_id: c.into(), rank, score, tag: "demo".into() }
    }

    #[test]
    fn run_line_format() {
        let run = RunFile { rows: vec![row("11", "3384#1", 1, 0.8)] };
        let mut buf = Vec::new();
        write_run(&mut buf, &run).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "11 Q0 3384#1 1 0.800000 demo\n");
        let mut buf = Vec::new();
        write_run(&mut buf, &RunFile::default()).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn run_parse_then_write_is_byte_identical() {
        let src = "1 Q0 a 1 0.900000 t\n1 Q0 b 2 0.900000 t\n2 Q0 a 1 0.100000 t\n1 Q0 c 3 0.000000 t\n";
        let run = read_run(src.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_run(&mut buf, &run).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), src);
        let lists = run.to_ranked();
        assert_eq!(lists.len(), 2);
        assert_eq!(lists[0].hits.len(), 3);
    }

    #[test]
    fn run_contract_checked_before_writing() {
        let gap = RunFile { rows: vec![row("1", "a", 1, 0.5), row("1", "b", 3, 0.4)] };
        let mut buf = Vec::new();
        assert!(matches!(write_run(&mut buf, &gap), Err(Error::Contract(_))));
        assert!(buf.is_empty());
        let inverted = RunFile { rows: vec![row("1", "a", 1, 0.5), row("1", "b", 2, 0.6)] };
        assert!(matches!(write_run(&mut buf, &inverted), Err(Error::Contract(_))));
        assert!(buf.is_empty());
        assert!(matches!(read_run("1 Q0 a 1 0.5 t\n1 Q0 b 2 0.7 t\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_run("1 Q0 a 2 0.5 t\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn fused_round_trip_and_errors() {
        let src = concat!(
            r#"{"case_id":"a","entries":[{"cui":"C0000001","score":0.6,"provenance":"fused"},{"cui":"C0000002","score":0.4,"provenance":"text_only"}]}"#,
            "\n",
            r#"{"case_id":"b","entries":[{"cui":"C0000003","score":0.3,"provenance":"image_only"}]}"#,
            "\n"
        );
        let cases = read_fused(src.as_bytes()).unwrap();
        assert_eq!(cases[0].get("C0000001".parse().unwrap()).unwrap().provenance, Provenance::Fused);
        let mut buf = Vec::new();
        write_fused(&mut buf, &cases).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), src);
        let neg = r#"{"case_id":"a","entries":[{"cui":"C0000001","score":-0.1,"provenance":"fused"}]}"#;
        assert!(matches!(read_fused(neg.as_bytes()), Err(Error::DomainAt { line: 1, .. })));
    }

    #[test]
    fn fused_scores_parse_to_the_nearest_double() {
        // Shortest decimal of 0x1.f49baa9d5a212p-1; a fast float parser lands one ulp low.
        let score = 0.9777501408653413;
        let entries = [("C0000001".parse().unwrap(), FusedEntry { score, provenance: Provenance::Fused })];
        let cases = vec![FusedCase::new("a", entries.into_iter().collect()).unwrap()];
        let mut buf = Vec::new();
        write_fused(&mut buf, &cases).unwrap();
        let back = read_fused(buf.as_slice()).unwrap();
        assert_eq!(back[0].get("C0000001".parse().unwrap()).unwrap().score.to_bits(), score.to_bits());
    }

    #[test]
    fn atomic_write_replaces_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.txt");
        let mut q = Qrels::new();
        q.insert("1", "a", 1);
        write_qrels_file(&path, &q).unwrap();
        q.insert("1", "b", 0);
        write_qrels_file(&path, &q).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "1 0 a 1\n1 0 b 0\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
