//! On-disk formats.
//!
//! * Votes: JSON Lines, one query per line, either
//!   `{"query_id": "...", "counts": [..]}` or
//!   `{"query_id": "...", "labels": [..], "num_classes": m}`.
//! * Ledger: JSON Lines, a [`Provenance`] header followed by one
//!   [`QueryMoment`] per line.
//! * Labels: JSON Lines, a [`Provenance`] header followed by
//!   `{"query_id": "...", "label": j}`.
//! * Sweeps: CSV with a `#`-prefixed JSON provenance line.
//!
//! Blank lines are ignored on read. Parse errors carry 1-based line numbers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accountant::{LambdaGrid, LedgerMetadata, PrivacyLedger, QueryMoment};
use crate::error::{Error, Result};
use crate::mechanism::{tally_votes, VoteHistogram};
use crate::simulation::SweepResult;
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum VoteRecord {
    Counts {
        query_id: String,
        counts: Vec<u64>,
    },
    Labels {
        query_id: String,
        labels: Vec<usize>,
        num_classes: usize,
    },
}

/// One query read from a votes file.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteQuery {
    pub query_id: String,
    pub votes: VoteHistogram,
}

/// Header line of ledger and label files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format_version: u32,
    pub seed: u64,
    pub gamma: f64,
    pub lambda_grid: LambdaGrid,
}

impl Provenance {
    pub fn new(seed: u64, gamma: f64, lambda_grid: LambdaGrid) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            seed,
            gamma,
            lambda_grid,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines with their 1-based numbers.
fn numbered_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Reads a votes file, tallying label records. All queries must share one
/// class count.
pub fn read_votes(path: &Path) -> Result<Vec<VoteQuery>> {
    let mut queries = Vec::new();
    let mut classes: Option<(usize, usize)> = None;
    for (line_no, line) in numbered_lines(path)? {
        let record: VoteRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(path, line_no, format!("malformed vote record: {e}")))?;
        let (query_id, votes) = match record {
            VoteRecord::Counts { query_id, counts } => (query_id, VoteHistogram::new(counts)),
            VoteRecord::Labels {
                query_id,
                labels,
                num_classes,
            } => (query_id, tally_votes(&labels, num_classes)),
        };
        let votes = votes.map_err(|e| parse_error(path, line_no, e.to_string()))?;
        match classes {
            None => classes = Some((votes.num_classes(), line_no)),
            Some((m, first)) if m != votes.num_classes() => {
                return Err(parse_error(
                    path,
                    line_no,
                    format!(
                        "query has {} classes but line {first} has {m}",
                        votes.num_classes()
                    ),
                ));
            }
            Some(_) => {}
        }
        queries.push(VoteQuery { query_id, votes });
    }
    Ok(queries)
}

pub fn write_votes(path: &Path, queries: &[VoteQuery]) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        query_id: &'a str,
        counts: &'a [u64],
    }
    let mut w = create(path)?;
    for q in queries {
        serde_json::to_writer(&mut w, &Line {
            query_id: &q.query_id,
            counts: q.votes.counts(),
        })?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn ledger_to_string(ledger: &PrivacyLedger) -> Result<String> {
    let meta = ledger.metadata();
    let mut out = serde_json::to_string(&Provenance::new(meta.seed, meta.gamma, meta.lambda_grid.clone()))?;
    out.push('\n');
    for entry in ledger.entries() {
        out.push_str(&serde_json::to_string(entry)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_ledger(path: &Path, ledger: &PrivacyLedger) -> Result<()> {
    std::fs::write(path, ledger_to_string(ledger)?).map_err(|e| Error::io(path, e))
}

pub fn read_ledger(path: &Path) -> Result<PrivacyLedger> {
    let lines = numbered_lines(path)?;
    let Some(((header_line, header), rest)) = lines.split_first() else {
        return Err(parse_error(path, 1, "ledger is empty; expected a header line"));
    };
    let header: Provenance = serde_json::from_str(header)
        .map_err(|e| parse_error(path, *header_line, format!("malformed ledger header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(parse_error(
            path,
            *header_line,
            format!("unsupported format_version {}", header.format_version),
        ));
    }
    let mut ledger = PrivacyLedger::new(LedgerMetadata {
        gamma: header.gamma,
        lambda_grid: header.lambda_grid,
        seed: header.seed,
    })
    .map_err(|e| parse_error(path, *header_line, e.to_string()))?;
    for (line_no, line) in rest {
        let entry: QueryMoment = serde_json::from_str(line)
            .map_err(|e| parse_error(path, *line_no, format!("malformed ledger entry: {e}")))?;
        if entry.moments.iter().any(|m| !(m.alpha >= 0.0 && m.alpha.is_finite())) {
            return Err(parse_error(path, *line_no, "moments must be finite and non-negative"));
        }
        ledger.push(entry).map_err(|e| parse_error(path, *line_no, e.to_string()))?;
    }
    Ok(ledger)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub query_id: String,
    pub label: usize,
}

pub fn write_labels(path: &Path, provenance: &Provenance, labels: &[LabelRecord]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, provenance)?;
    writeln!(w).map_err(io)?;
    for label in labels {
        serde_json::to_writer(&mut w, label)?;
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_labels(path: &Path) -> Result<(Provenance, Vec<LabelRecord>)> {
    let lines = numbered_lines(path)?;
    let Some(((header_line, header), rest)) = lines.split_first() else {
        return Err(parse_error(path, 1, "labels file is empty; expected a header line"));
    };
    let provenance: Provenance = serde_json::from_str(header)
        .map_err(|e| parse_error(path, *header_line, format!("malformed header: {e}")))?;
    let labels = rest
        .iter()
        .map(|(n, line)| serde_json::from_str(line).map_err(|e| parse_error(path, *n, e.to_string())))
        .collect::<Result<_>>()?;
    Ok((provenance, labels))
}

/// Provenance of a sweep CSV, written as a `#` comment line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepProvenance {
    pub format_version: u32,
    pub seed: u64,
    pub gamma: Vec<f64>,
    pub lambda_grid: LambdaGrid,
    pub n: u64,
    pub m: usize,
    pub teacher_accuracy: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub accuracy: f64,
    pub mean_gap: f64,
    pub mean_normalized_gap: f64,
}

pub fn sweep_rows(result: &SweepResult) -> Vec<SweepRow> {
    result
        .points
        .iter()
        .map(|p| SweepRow {
            gamma: p.gamma,
            accuracy: p.accuracy,
            mean_gap: result.mean_gap,
            mean_normalized_gap: result.mean_normalized_gap,
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, provenance: &SweepProvenance, result: &SweepResult) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# {}", serde_json::to_string(provenance)?).map_err(|e| Error::io(path, e))?;
    let mut csv = csv::Writer::from_writer(w);
    for row in sweep_rows(result) {
        csv.serialize(row)?;
    }
    csv.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<(Option<SweepProvenance>, Vec<SweepRow>)> {
    let mut provenance = None;
    let mut body = String::new();
    for (line_no, line) in numbered_lines(path)? {
        if let Some(comment) = line.strip_prefix('#') {
            if provenance.is_none() {
                provenance = Some(
                    serde_json::from_str(comment.trim())
                        .map_err(|e| parse_error(path, line_no, format!("malformed provenance: {e}")))?,
                );
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let rows = csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()?;
    Ok((provenance, rows))
}
