//! Pipeline runs over a grid of one parameter.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use log::{info, warn};
use medfuse_core::alignment::{align_corpus, auto_align, Alphas, DEFAULT_RECALL_LEVEL};
use medfuse_core::clustering::{train, MembershipScope, DEFAULT_ETA_FALLBACK};
use medfuse_core::evaluation::mean_average_precision;
use medfuse_core::fusion::{fuse_corpus, FusionOperator};
use medfuse_core::ingest::{parse_case_file, parse_qrels, write_atomic, Corpus, Qrels};
use medfuse_core::retrieval::{ClusteredIndex, SearchIndex, SearchParams, SimilarityKind};
use medfuse_core::{Error, FusedCase};

use crate::manifest::RunManifest;
use crate::{positive, theta_value, unit_interval, AtPath, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Theta,
    Rp,
    Operator,
    Similarity,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Theta => "theta",
            Axis::Rp => "rp",
            Axis::Operator => "operator",
            Axis::Similarity => "similarity",
        }
    }
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    axis: Axis,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated values. Defaults: theta 0.05..1.0 step 0.05, rp
    /// (the recall level of the alignment feedback) 0.0..0.6 step 0.1,
    /// every operator, every similarity.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value = "bounded-sum")]
    operator: FusionOperator,
    #[arg(long, default_value = "fsf")]
    similarity: SimilarityKind,
    #[arg(long, default_value_t = DEFAULT_RECALL_LEVEL, value_parser = unit_interval)]
    recall_level: f64,
    /// Prune with a model of this theta on the other axes; exhaustive when absent.
    #[arg(long, value_parser = theta_value)]
    theta: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ETA_FALLBACK, value_parser = positive)]
    eta_fallback: f64,
    #[arg(long, default_value = "query")]
    scope: MembershipScope,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy)]
enum Point {
    Theta(f64),
    Rp(f64),
    Operator(FusionOperator),
    Similarity(SimilarityKind),
}

fn default_grid(axis: Axis) -> Vec<(String, Point)> {
    match axis {
        Axis::Theta => (1..=20).map(|i| i as f64 / 20.0).map(|t| (format!("{t:.2}"), Point::Theta(t))).collect(),
        Axis::Rp => (0..=6).map(|i| i as f64 / 10.0).map(|r| (format!("{r:.2}"), Point::Rp(r))).collect(),
        Axis::Operator => FusionOperator::ALL.iter().map(|&op| (op.name().to_owned(), Point::Operator(op))).collect(),
        Axis::Similarity => SimilarityKind::ALL.iter().map(|&s| (s.name().to_owned(), Point::Similarity(s))).collect(),
    }
}

fn parse_grid(axis: Axis, spec: Option<&str>) -> Result<Vec<(String, Point)>, Failure> {
    let Some(spec) = spec else {
        return Ok(default_grid(axis));
    };
    let grid = spec
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let point = match axis {
                Axis::Theta => theta_value(t).map(Point::Theta),
                Axis::Rp => unit_interval(t).map(Point::Rp),
                Axis::Operator => t.parse().map(Point::Operator).map_err(|e: Error| e.to_string()),
                Axis::Similarity => t.parse().map(Point::Similarity).map_err(|e: Error| e.to_string()),
            };
            point.map(|p| (t.to_owned(), p)).map_err(|e| Failure::usage(format!("grid value {t}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if grid.is_empty() {
        return Err(Failure::usage("empty grid"));
    }
    Ok(grid)
}

#[derive(Debug, Clone)]
struct Row {
    label: String,
    boxes: Option<usize>,
    measured: Option<Measured>,
}

#[derive(Debug, Clone, Copy)]
struct Measured {
    map: f64,
    query_ms: f64,
    candidates: f64,
}

/// Fused corpus and fused queries.
type FusedPair = (Vec<FusedCase>, Vec<FusedCase>);

struct Inputs {
    corpus: Corpus,
    queries: Corpus,
    qrels: Qrels,
}

fn measure(
    fused: &[FusedCase],
    queries: &[FusedCase],
    qrels: &Qrels,
    params: SearchParams,
    theta: Option<f64>,
    args: &SweepArgs,
) -> Result<(Option<usize>, Measured), Error> {
    let index = SearchIndex::new(fused);
    let n = queries.len().max(1) as f64;
    let (boxes, lists, seconds, scored) = match theta {
        Some(theta) => {
            let model = train(fused, theta, args.eta_fallback)?;
            let clustered = ClusteredIndex::new(&model, &index, args.scope)?;
            let start = Instant::now();
            let results: Vec<_> = queries.iter().map(|q| clustered.search(q, params)).collect();
            let seconds = start.elapsed().as_secs_f64();
            let scored: usize = results.iter().map(|r| r.candidates).sum();
            let lists: Vec<_> = results.into_iter().map(|r| r.ranked).collect();
            (Some(model.boxes.len()), lists, seconds, scored)
        }
        None => {
            let start = Instant::now();
            let lists: Vec<_> = queries.iter().map(|q| index.search(q, params)).collect();
            (None, lists, start.elapsed().as_secs_f64(), index.len() * queries.len())
        }
    };
    let map = mean_average_precision(&lists, qrels)?;
    Ok((boxes, Measured { map, query_ms: 1000.0 * seconds / n, candidates: scored as f64 / n }))
}

pub fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let grid = parse_grid(args.axis, args.grid.as_deref())?;
    let inputs = Inputs {
        corpus: parse_case_file(&args.corpus).at(&args.corpus)?,
        queries: parse_case_file(&args.queries).at(&args.queries)?,
        qrels: parse_qrels(&args.qrels).at(&args.qrels)?,
    };
    let mut m = RunManifest::new("sweep");
    m.add_input("corpus", &args.corpus).at(&args.corpus)?;
    m.add_input("queries", &args.queries).at(&args.queries)?;
    m.add_input("qrels", &args.qrels).at(&args.qrels)?;
    m.axis = Some(args.axis.name().to_owned());
    m.grid = Some(grid.iter().map(|(l, _)| l.clone()).collect());
    m.k = Some(args.k as usize);
    m.eta_fallback = Some(args.eta_fallback);
    m.scope = Some(args.scope);
    if args.axis != Axis::Operator {
        m.operator = Some(args.operator.formula().to_owned());
        m.operator_name = Some(args.operator.name().to_owned());
    }
    if args.axis != Axis::Similarity {
        m.similarity = Some(args.similarity.name().to_owned());
    }
    if args.axis != Axis::Rp {
        m.recall_level = Some(args.recall_level);
    }
    if args.axis != Axis::Theta {
        m.theta = args.theta;
    }

    let k = args.k as usize;
    let mut alphas: HashMap<u64, Option<Alphas>> = HashMap::new();
    let mut fused: HashMap<(u64, &'static str), FusedPair> = HashMap::new();
    let mut rows = Vec::with_capacity(grid.len());
    for (label, point) in grid {
        let (mut op, mut kind, mut level, mut theta) = (args.operator, args.similarity, args.recall_level, args.theta);
        match point {
            Point::Theta(t) => theta = Some(t),
            Point::Rp(r) => level = r,
            Point::Operator(o) => op = o,
            Point::Similarity(s) => kind = s,
        }
        let key = level.to_bits();
        let cached = match alphas.entry(key) {
            Entry::Occupied(o) => *o.get(),
            Entry::Vacant(slot) => {
                let a = match auto_align(&inputs.corpus, &inputs.queries, &inputs.qrels, level, args.similarity, k) {
                    Ok((_, a)) => Some(a),
                    Err(e @ Error::DegenerateFeedback { .. }) => {
                        warn!("{e}");
                        None
                    }
                    Err(e) => return Err(e.into()),
                };
                *slot.insert(a)
            }
        };
        let Some(a) = cached else {
            rows.push(Row { label, boxes: None, measured: None });
            continue;
        };
        let (fc, fq) = match fused.entry((key, op.name())) {
            Entry::Occupied(o) => o.into_mut(),
            Entry::Vacant(slot) => slot.insert((
                fuse_corpus(&align_corpus(&inputs.corpus, a)?, op)?,
                fuse_corpus(&align_corpus(&inputs.queries, a)?, op)?,
            )),
        };
        let (boxes, measured) = measure(fc, fq, &inputs.qrels, SearchParams::new(k, kind), theta, &args)?;
        info!("{} {label}: map {:.6}", args.axis.name(), measured.map);
        rows.push(Row { label, boxes, measured: Some(measured) });
    }

    let digest = m.digest();
    let table = render(args.axis, &rows, &digest);
    write_atomic(&args.out, |buf| {
        buf.extend_from_slice(table.as_bytes());
        Ok(())
    })
    .at(&args.out)?;
    m.write_for(&args.out)?;
    print!("{table}");
    Ok(())
}

fn render(axis: Axis, rows: &[Row], digest: &str) -> String {
    let mut out = format!("# manifest {digest}\n{}\tboxes\tmap\tmean_query_ms\tmean_candidates\n", axis.name());
    for r in rows {
        let boxes = r.boxes.map_or_else(|| "-".to_owned(), |b| b.to_string());
        let _ = match r.measured {
            Some(x) => writeln!(out, "{}\t{boxes}\t{:.6}\t{:.3}\t{:.1}", r.label, x.map, x.query_ms, x.candidates),
            None => writeln!(out, "{}\t{boxes}\tNA\tNA\tNA", r.label),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        let theta = default_grid(Axis::Theta);
        assert_eq!(theta.len(), 20);
        assert_eq!(theta[0].0, "0.05");
        assert_eq!(theta[19].0, "1.00");
        let rp: Vec<_> = default_grid(Axis::Rp).into_iter().map(|(l, _)| l).collect();
        assert_eq!(rp, ["0.00", "0.10", "0.20", "0.30", "0.40", "0.50", "0.60"]);
        assert_eq!(default_grid(Axis::Operator).len(), 6);
        assert_eq!(default_grid(Axis::Similarity).len(), 5);
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid(Axis::Theta, Some("0.1, 0.5")).unwrap();
        assert_eq!(g.len(), 2);
        assert!(matches!(g[1].1, Point::Theta(t) if t == 0.5));
        for (axis, bad) in [(Axis::Theta, "0"), (Axis::Rp, "1.5"), (Axis::Operator, "median"), (Axis::Theta, " , ")] {
            let e = parse_grid(axis, Some(bad)).unwrap_err();
            assert_eq!(e.code, 2, "{bad}");
        }
    }

    #[test]
    fn render_marks_missing_values() {
        let rows = [
            Row {
                label: "0.10".into(),
                boxes: Some(3),
                measured: Some(Measured { map: 0.5, query_ms: 1.25, candidates: 10.0 }),
            },
            Row { label: "0.00".into(), boxes: None, measured: None },
        ];
        let text = render(Axis::Rp, &rows, "abc");
        assert_eq!(
            text,
            "# manifest abc\nrp\tboxes\tmap\tmean_query_ms\tmean_candidates\n0.10\t3\t0.500000\t1.250\t10.0\n0.00\t-\tNA\tNA\tNA\n"
        );
    }
}
