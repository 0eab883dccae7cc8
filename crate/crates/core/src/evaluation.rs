//! Ranked retrieval metrics, computed the way `trec_eval` does.
//!
//! Queries without any relevant judgment are left out of every average.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::Qrels;
use crate::retrieval::RankedList;

/// Recall levels 0.0, 0.1, ..., 1.0.
pub fn default_levels() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Relevance flags of a run, with the number of relevant judgments.
fn judged(run: &RankedList, qrels: &Qrels, query_id: &str) -> Result<(Vec<bool>, usize)> {
    let relevant: HashSet<&str> = qrels.relevant_cases(query_id).collect();
    if relevant.is_empty() {
        return Err(Error::UndefinedQuery(query_id.to_owned()));
    }
    let flags = run.hits.iter().map(|(c, _)| relevant.contains(c.as_str())).collect();
    Ok((flags, relevant.len()))
}

pub fn average_precision(run: &RankedList, qrels: &Qrels, query_id: &str) -> Result<f64> {
    let (flags, r) = judged(run, qrels, query_id)?;
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in flags.iter().enumerate() {
        if rel {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / r as f64)
}

/// Precision at cutoff R, where R is the number of relevant cases.
pub fn r_precision(run: &RankedList, qrels: &Qrels, query_id: &str) -> Result<f64> {
    let (flags, r) = judged(run, qrels, query_id)?;
    let hits = flags.iter().take(r).filter(|&&b| b).count();
    Ok(hits as f64 / r as f64)
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::Domain("recall levels must lie in [0, 1]".into()));
    }
    if levels.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain("recall levels must be sorted ascending".into()));
    }
    Ok(())
}

/// Interpolated precision of one query at each level: the best precision
/// at any cutoff whose recall reaches the level, or 0 if none does.
pub fn interpolated_precision(run: &RankedList, qrels: &Qrels, query_id: &str, levels: &[f64]) -> Result<Vec<f64>> {
    check_levels(levels)?;
    let (flags, r) = judged(run, qrels, query_id)?;
    // (recall, precision) at each relevant cutoff; precision between
    // relevant cutoffs only falls, so these dominate.
    let mut points = Vec::new();
    let mut found = 0usize;
    for (i, &rel) in flags.iter().enumerate() {
        if rel {
            found += 1;
            points.push((found as f64 / r as f64, found as f64 / (i + 1) as f64));
        }
    }
    let mut best_from = vec![0.0f64; points.len() + 1];
    for j in (0..points.len()).rev() {
        best_from[j] = best_from[j + 1].max(points[j].1);
    }
    Ok(levels
        .iter()
        .map(|&level| {
            let first = points.partition_point(|&(recall, _)| recall < level);
            best_from[first]
        })
        .collect())
}

/// Runs of evaluable queries, warning about the others.
fn evaluable<'a>(runs: &'a [RankedList], qrels: &Qrels) -> Result<Vec<&'a RankedList>> {
    let mut out = Vec::with_capacity(runs.len());
    for run in runs {
        if qrels.relevant_count(&run.query_id) == 0 {
            warn!("query {} has no relevant judgments; skipped", run.query_id);
        } else {
            out.push(run);
        }
    }
    if out.is_empty() {
        return Err(Error::Evaluation("no evaluable queries".into()));
    }
    Ok(out)
}

pub fn mean_average_precision(runs: &[RankedList], qrels: &Qrels) -> Result<f64> {
    let runs = evaluable(runs, qrels)?;
    let mut sum = 0.0;
    for run in &runs {
        sum += average_precision(run, qrels, &run.query_id)?;
    }
    Ok(sum / runs.len() as f64)
}

/// Interpolated precision averaged over evaluable queries.
pub fn interpolated_pr(runs: &[RankedList], qrels: &Qrels, levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_levels(levels)?;
    let runs = evaluable(runs, qrels)?;
    let mut sums = vec![0.0; levels.len()];
    for run in &runs {
        for (s, p) in sums.iter_mut().zip(interpolated_precision(run, qrels, &run.query_id, levels)?) {
            *s += p;
        }
    }
    let n = runs.len() as f64;
    Ok(levels.iter().zip(sums).map(|(&l, s)| (l, s / n)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_query_ap: BTreeMap<String, f64>,
    pub per_query_r_precision: BTreeMap<String, f64>,
    pub map: f64,
    pub interpolated: Vec<(f64, f64)>,
    /// Mean R-precision over evaluable queries.
    pub r_precision: f64,
}

pub fn evaluate(runs: &[RankedList], qrels: &Qrels, levels: &[f64]) -> Result<EvalReport> {
    check_levels(levels)?;
    let runs = evaluable(runs, qrels)?;
    let mut per_query_ap = BTreeMap::new();
    let mut per_query_r_precision = BTreeMap::new();
    let mut iprec = vec![0.0; levels.len()];
    let (mut ap_sum, mut rp_sum) = (0.0, 0.0);
    for run in &runs {
        let q = &run.query_id;
        if per_query_ap.contains_key(q) {
            return Err(Error::Evaluation(format!("query {q} appears in several runs")));
        }
        let ap = average_precision(run, qrels, q)?;
        let rp = r_precision(run, qrels, q)?;
        for (s, p) in iprec.iter_mut().zip(interpolated_precision(run, qrels, q, levels)?) {
            *s += p;
        }
        ap_sum += ap;
        rp_sum += rp;
        per_query_ap.insert(q.clone(), ap);
        per_query_r_precision.insert(q.clone(), rp);
    }
    let n = runs.len() as f64;
    Ok(EvalReport {
        per_query_ap,
        per_query_r_precision,
        map: ap_sum / n,
        interpolated: levels.iter().zip(iprec).map(|(&l, s)| (l, s / n)).collect(),
        r_precision: rp_sum / n,
    })
}

impl EvalReport {
    /// Interpolated precision at `level`, if that level was evaluated.
    pub fn precision_at_recall(&self, level: f64) -> Option<f64> {
        self.interpolated.iter().find(|(l, _)| *l == level).map(|&(_, p)| p)
    }

    fn rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::new();
        for (q, ap) in &self.per_query_ap {
            rows.push(("ap".to_owned(), q.clone(), *ap));
            rows.push(("R-prec".to_owned(), q.clone(), self.per_query_r_precision[q]));
        }
        rows.push(("num_q".to_owned(), "all".to_owned(), self.per_query_ap.len() as f64));
        rows.push(("map".to_owned(), "all".to_owned(), self.map));
        rows.push(("R-prec".to_owned(), "all".to_owned(), self.r_precision));
        for (l, p) in &self.interpolated {
            rows.push((format!("iprec_at_recall_{l:.2}"), "all".to_owned(), *p));
        }
        rows
    }

    /// `metric<TAB>query<TAB>value` lines, values with 6 decimals.
    pub fn to_lines(&self, manifest: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(m) = manifest {
            writeln!(out, "# manifest {m}").unwrap();
        }
        for (metric, q, v) in self.rows() {
            writeln!(out, "{metric}\t{q}\t{v:.6}").unwrap();
        }
        out
    }

    /// Aligned columns with a percent rendering of each value.
    pub fn to_table(&self, manifest: Option<&str>) -> String {
        let rows = self.rows();
        let mw = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("metric".len());
        let qw = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("query".len());
        let mut out = String::new();
        if let Some(m) = manifest {
            writeln!(out, "# manifest {m}").unwrap();
        }
        writeln!(out, "{:<mw$}  {:<qw$}  {:>10}  {:>8}", "metric", "query", "value", "percent").unwrap();
        for (metric, q, v) in rows {
            if metric == "num_q" {
                writeln!(out, "{metric:<mw$}  {q:<qw$}  {:>10}  {:>8}", v as usize, "").unwrap();
            } else {
                let pct = format!("{:.2}%", v * 100.0);
                writeln!(out, "{metric:<mw$}  {q:<qw$}  {v:>10.6}  {pct:>8}").unwrap();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(q: &str, ids: &[&str]) -> RankedList {
        let n = ids.len();
        RankedList {
            query_id: q.into(),
            hits: ids.iter().enumerate().map(|(i, c)| (c.to_string(), (n - i) as f64)).collect(),
        }
    }

    fn qrels(entries: &[(&str, &str, u32)]) -> Qrels {
        let mut q = Qrels::new();
        for &(a, b, r) in entries {
            q.insert(a, b, r);
        }
        q
    }

    #[test]
    fn ap_examples() {
        let q = qrels(&[("1", "a", 1), ("1", "c", 1), ("1", "b", 0)]);
        let ap = average_precision(&run("1", &["a", "b", "c"]), &q, "1").unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((ap - 0.833333).abs() < 1e-6);
        assert_eq!(average_precision(&run("1", &["b", "x"]), &q, "1").unwrap(), 0.0);
        assert_eq!(average_precision(&run("1", &["c", "a", "b"]), &q, "1").unwrap(), 1.0);
        assert!(matches!(average_precision(&run("2", &["a"]), &q, "2"), Err(Error::UndefinedQuery(_))));
    }

    #[test]
    fn map_examples() {
        let q = qrels(&[("1", "a", 1), ("1", "b", 1), ("2", "x", 1)]);
        let runs = [run("1", &["a", "z", "b"]), run("2", &["x"])];
        // AP(1) = (1 + 2/3) / 2, AP(2) = 1
        let want = ((1.0 + 2.0 / 3.0) / 2.0 + 1.0) / 2.0;
        assert!((mean_average_precision(&runs, &q).unwrap() - want).abs() < 1e-12);
        let halves = qrels(&[("1", "a", 1), ("1", "b", 1), ("2", "x", 1)]);
        let runs = [run("1", &["z", "a", "y", "b"]), run("2", &["x"])];
        // AP(1) = (1/2 + 2/4) / 2 = 0.5
        assert!((mean_average_precision(&runs, &halves).unwrap() - 0.75).abs() < 1e-12);
        let single = [run("2", &["y", "x"])];
        assert_eq!(mean_average_precision(&single, &q).unwrap(), average_precision(&single[0], &q, "2").unwrap());
    }

    #[test]
    fn map_skips_unjudged_and_fails_when_none_left() {
        let q = qrels(&[("1", "a", 1), ("2", "b", 0)]);
        let runs = [run("1", &["a"]), run("2", &["b"])];
        assert_eq!(mean_average_precision(&runs, &q).unwrap(), 1.0);
        assert!(matches!(mean_average_precision(&runs[1..], &q), Err(Error::Evaluation(_))));
        assert!(mean_average_precision(&[], &q).is_err());
    }

    #[test]
    fn r_precision_examples() {
        let q = qrels(&[("1", "a", 1), ("1", "b", 1)]);
        assert_eq!(r_precision(&run("1", &["a", "x", "b"]), &q, "1").unwrap(), 0.5);
        assert_eq!(r_precision(&run("1", &["b", "a"]), &q, "1").unwrap(), 1.0);
        assert_eq!(r_precision(&run("1", &["a"]), &q, "1").unwrap(), 0.5);
    }

    #[test]
    fn interpolation() {
        let q = qrels(&[("1", "a", 1), ("1", "b", 1)]);
        let perfect = interpolated_precision(&run("1", &["a", "b", "x"]), &q, "1", &default_levels()).unwrap();
        assert!(perfect.iter().all(|&p| p == 1.0));
        // Relevant at 2 and 4: recall 0.5 @ P=0.5, recall 1 @ P=0.5.
        let p = interpolated_precision(&run("1", &["x", "a", "y", "b"]), &q, "1", &[0.0, 0.5, 0.6, 1.0]).unwrap();
        assert_eq!(p, [0.5, 0.5, 0.5, 0.5]);
        // Relevant at 1 and 4: P = 1 up to recall 0.5, then 0.5.
        let p = interpolated_precision(&run("1", &["a", "x", "y", "b"]), &q, "1", &[0.0, 0.5, 0.6]).unwrap();
        assert_eq!(p, [1.0, 1.0, 0.5]);
        // Unreachable recall.
        let p = interpolated_precision(&run("1", &["a"]), &q, "1", &[0.5, 0.51, 1.0]).unwrap();
        assert_eq!(p, [1.0, 0.0, 0.0]);
        assert!(interpolated_precision(&run("1", &["a"]), &q, "1", &[0.5, 0.2]).is_err());
        assert!(interpolated_precision(&run("1", &["a"]), &q, "1", &[1.5]).is_err());
    }

    #[test]
    fn report_formats() {
        let q = qrels(&[("1", "a", 1), ("1", "c", 1)]);
        let report = evaluate(&[run("1", &["a", "b", "c"])], &q, &[0.0, 0.3]).unwrap();
        let lines = report.to_lines(Some("abc"));
        assert!(lines.starts_with("# manifest abc\n"));
        assert!(lines.contains("map\tall\t0.833333\n"), "{lines}");
        assert!(lines.contains("R-prec\tall\t0.500000\n"));
        assert!(lines.contains("iprec_at_recall_0.30\tall\t1.000000\n"));
        let table = report.to_table(None);
        assert!(table.contains("83.33%"), "{table}");
        assert!(table.lines().next().unwrap().starts_with("metric"));
        assert_eq!(report.precision_at_recall(0.3), Some(1.0));
        let dup = [run("1", &["a"]), run("1", &["c"])];
        assert!(evaluate(&dup, &q, &[0.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn metric_invariants(
                flags in proptest::collection::vec(any::<bool>(), 1..40),
                extra_unretrieved in 0usize..4,
                tail in 0usize..10,
            ) {
                prop_assume!(flags.iter().any(|&b| b) || extra_unretrieved > 0);
                let mut q = Qrels::new();
                let ids: Vec<String> = (0..flags.len()).map(|i| format!("d{i}")).collect();
                for (id, &rel) in ids.iter().zip(&flags) {
                    q.insert("q", id.clone(), rel as u32);
                }
                for j in 0..extra_unretrieved {
                    q.insert("q", format!("missing{j}"), 1);
                }
                let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
                let r = run("q", &refs);
                let ap = average_precision(&r, &q, "q").unwrap();
                prop_assert!((0.0..=1.0).contains(&ap));

                // Scores transformed monotonically leave AP unchanged.
                let mut squashed = r.clone();
                for h in &mut squashed.hits { h.1 = h.1.ln(); }
                prop_assert_eq!(average_precision(&squashed, &q, "q").unwrap(), ap);

                // Non-relevant documents appended below the last one.
                let mut longer = r.clone();
                for j in 0..tail { longer.hits.push((format!("junk{j}"), -(j as f64))); }
                prop_assert_eq!(average_precision(&longer, &q, "q").unwrap(), ap);

                let ip = interpolated_precision(&r, &q, "q", &default_levels()).unwrap();
                prop_assert!(ip.windows(2).all(|w| w[0] >= w[1]));
                prop_assert!(ip.iter().all(|&p| p <= ip[0]));
            }
        }
    }
}
