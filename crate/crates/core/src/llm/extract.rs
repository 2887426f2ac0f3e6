//! Locate CSV blocks in free-form model output and turn them into validated
//! rows. Remote models are untrusted row sources: every cell is re-validated
//! locally and every rejected row carries a machine-readable reason.

use std::sync::Arc;

use serde::Serialize;

use crate::schema::{RowViolation, TableBuilder, TableSchema};

/// Fraction of wanted column names a candidate header must cover.
pub const HEADER_MATCH_THRESHOLD: f64 = 0.8;

/// A row rejected during extraction, with its (1-based) line in the response.
#[derive(Debug, Clone, Serialize)]
pub struct RowReject {
    pub line: usize,
    pub violation: RowViolation,
}

/// Result of scanning one response.
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    /// Schema-valid rows as raw cells in schema order.
    pub rows: Vec<Vec<Option<String>>>,
    pub rejects: Vec<RowReject>,
    /// Why no rows could be extracted at all, when structural.
    pub failure: Option<String>,
}

/// Extract and validate rows against a full schema. The first CSV block
/// (fenced or bare) whose header covers at least 80% of the schema's feature
/// names wins; schema columns absent from the header load as missing cells,
/// extra columns are ignored.
pub fn extract_rows(response_text: &str, schema: &Arc<TableSchema>) -> Extraction {
    let names: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
    let Some(block) = locate_csv(response_text, &names) else {
        return Extraction {
            failure: Some("no CSV block found".to_string()),
            ..Extraction::default()
        };
    };

    let mut out = Extraction::default();
    let mut scratch = TableBuilder::new(Arc::clone(schema));
    for record in block.records {
        if record.cells.len() != block.header_len {
            out.rejects.push(RowReject {
                line: record.line,
                violation: RowViolation::Arity {
                    expected: block.header_len,
                    got: record.cells.len(),
                },
            });
            continue;
        }
        let raw: Vec<Option<String>> = block
            .col_of_name
            .iter()
            .map(|col| {
                col.and_then(|c| {
                    let v = record.cells[c].trim();
                    (!v.is_empty()).then(|| v.to_string())
                })
            })
            .collect();
        match scratch.push_raw(&raw) {
            Ok(()) => out.rows.push(raw),
            Err(violation) => out.rejects.push(RowReject {
                line: record.line,
                violation,
            }),
        }
    }
    out
}

pub(crate) struct LocatedCsv {
    /// For each wanted name, the source column index when present.
    pub col_of_name: Vec<Option<usize>>,
    pub header_len: usize,
    pub records: Vec<RawRecord>,
}

pub(crate) struct RawRecord {
    pub line: usize,
    pub cells: Vec<String>,
}

/// Find the first CSV region whose header covers enough of `names`.
/// Fenced code blocks are searched first in order of appearance, then the
/// bare text.
pub(crate) fn locate_csv(text: &str, names: &[&str]) -> Option<LocatedCsv> {
    for (region, first_line) in candidate_regions(text) {
        if let Some(found) = scan_region(region, first_line, names) {
            return Some(found);
        }
    }
    None
}

/// Fenced blocks (in order), then the whole text. Line numbers are 1-based
/// positions in the original response.
fn candidate_regions(text: &str) -> Vec<(&str, usize)> {
    let mut regions = Vec::new();
    let mut offset = 0;
    let mut fence_count = 0;
    while let Some(start) = text[offset..].find("```") {
        let start = offset + start;
        let content_start = match text[start + 3..].find('\n') {
            Some(nl) => start + 3 + nl + 1,
            None => break,
        };
        let Some(end) = text[content_start..].find("```") else {
            break;
        };
        let end = content_start + end;
        let first_line = text[..content_start].lines().count() + 1;
        regions.push((&text[content_start..end], first_line));
        offset = end + 3;
        fence_count += 1;
    }
    if fence_count == 0 || regions.is_empty() {
        regions.push((text, 1));
    } else {
        // also consider prose outside fences as a last resort
        regions.push((text, 1));
    }
    regions
}

fn scan_region(region: &str, first_line: usize, names: &[&str]) -> Option<LocatedCsv> {
    let lines: Vec<&str> = region.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let header: Vec<String> = split_csv_line(line);
        let matched = names
            .iter()
            .filter(|n| header.iter().any(|h| h == *n))
            .count();
        if (matched as f64) < HEADER_MATCH_THRESHOLD * names.len() as f64 {
            continue;
        }

        // map wanted names to header columns
        let col_of_name: Vec<Option<usize>> = names
            .iter()
            .map(|n| header.iter().position(|h| h == n))
            .collect();

        // data rows: contiguous non-empty lines after the header
        let mut records = Vec::new();
        for (j, data_line) in lines[i + 1..].iter().enumerate() {
            if data_line.trim().is_empty() || data_line.trim_start().starts_with("```") {
                break;
            }
            records.push(RawRecord {
                line: first_line + i + 1 + j,
                cells: split_csv_line(data_line),
            });
        }
        return Some(LocatedCsv {
            col_of_name,
            header_len: header.len(),
            records,
        });
    }
    None
}

/// Minimal RFC-4180 line splitter (double-quote aware).
fn split_csv_line(line: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut cell = String::new();
    let mut in_quotes = false;
    let mut chars = line.trim_end_matches('\r').chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if in_quotes => {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cell.push('"');
                } else {
                    in_quotes = false;
                }
            }
            '"' => in_quotes = true,
            ',' if !in_quotes => {
                cells.push(std::mem::take(&mut cell));
            }
            other => cell.push(other),
        }
    }
    cells.push(cell);
    cells
}
