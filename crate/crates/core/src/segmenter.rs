//! Splits imported documents into ordered data units.
//!
//! Sentence mode cuts after every delimiter match (delimiters stay attached
//! to the preceding sentence, runs such as `?!` or `....` are absorbed into
//! one sentence end). Paragraph mode cuts on the literal two-newline
//! sequence. Nothing is special-cased beyond that: `e.g.` ends a sentence.
//!
//! Every segmentation is lossless. [`Segmentation::pieces`] alternates
//! separators and units, and concatenating them yields the input exactly.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Granularity;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("CSV has no column named `{0}`")]
    MissingColumn(String),
    #[error("document is not valid UTF-8 (first bad byte at offset {0})")]
    UndecodableBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub granularity: Granularity,
    pub sentence_delimiters: Vec<String>,
    pub paragraph_delimiter: String,
    pub symbol_strip_list: Vec<String>,
}

impl SegmentationConfig {
    pub fn new(granularity: Granularity) -> Self {
        Self {
            granularity,
            sentence_delimiters: ["...", ".", "!", "?"].map(String::from).to_vec(),
            paragraph_delimiter: "\n\n".to_owned(),
            symbol_strip_list: ["\\", "<br />"].map(String::from).to_vec(),
        }
    }

    /// Delimiters are tried in list order, so a delimiter that extends
    /// another (`...` extends `.`) must come first.
    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.sentence_delimiters.is_empty() {
            return Err(SegmentError::InvalidConfig("no sentence delimiters".into()));
        }
        if self.sentence_delimiters.iter().any(String::is_empty) {
            return Err(SegmentError::InvalidConfig("empty sentence delimiter".into()));
        }
        if self.paragraph_delimiter.is_empty() {
            return Err(SegmentError::InvalidConfig("empty paragraph delimiter".into()));
        }
        for (i, short) in self.sentence_delimiters.iter().enumerate() {
            if let Some(long) = self.sentence_delimiters[i + 1..]
                .iter()
                .find(|long| long.len() > short.len() && long.starts_with(short.as_str()))
            {
                return Err(SegmentError::InvalidConfig(format!(
                    "delimiter `{long}` must be listed before `{short}`"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceKind {
    Separator,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub kind: PieceKind,
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Segmentation<'a> {
    source: &'a str,
    pieces: Vec<Piece>,
}

impl<'a> Segmentation<'a> {
    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn units(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.pieces
            .iter()
            .filter(|p| p.kind == PieceKind::Unit)
            .map(|p| &self.source[p.range.clone()])
    }

    pub fn separators(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.pieces
            .iter()
            .filter(|p| p.kind == PieceKind::Separator)
            .map(|p| &self.source[p.range.clone()])
    }

    pub fn reconstruct(&self) -> String {
        self.pieces
            .iter()
            .map(|p| &self.source[p.range.clone()])
            .collect()
    }
}

struct PieceBuilder {
    pieces: Vec<Piece>,
}

impl PieceBuilder {
    fn push(&mut self, kind: PieceKind, range: Range<usize>) {
        if range.is_empty() {
            return;
        }
        if kind == PieceKind::Separator {
            if let Some(last) = self.pieces.last_mut() {
                if last.kind == PieceKind::Separator && last.range.end == range.start {
                    last.range.end = range.end;
                    return;
                }
            }
        }
        self.pieces.push(Piece { kind, range });
    }

    /// Emits a candidate unit, moving surrounding whitespace into separators.
    fn push_chunk(&mut self, text: &str, range: Range<usize>) {
        let chunk = &text[range.clone()];
        let trimmed_start = chunk.len() - chunk.trim_start().len();
        let trimmed_end = chunk.trim_end().len();
        if trimmed_end <= trimmed_start {
            self.push(PieceKind::Separator, range);
            return;
        }
        let start = range.start + trimmed_start;
        let end = range.start + trimmed_end;
        self.push(PieceKind::Separator, range.start..start);
        self.push(PieceKind::Unit, start..end);
        self.push(PieceKind::Separator, end..range.end);
    }
}

/// Segments already-cleaned text, keeping the separators.
pub fn segment<'a>(
    text: &'a str,
    config: &SegmentationConfig,
) -> Result<Segmentation<'a>, SegmentError> {
    config.validate()?;
    if text.is_empty() {
        return Err(SegmentError::EmptyInput);
    }
    let mut out = PieceBuilder { pieces: Vec::new() };
    match config.granularity {
        Granularity::Paragraph => {
            let delim = config.paragraph_delimiter.as_str();
            let mut start = 0;
            for (at, _) in text.match_indices(delim) {
                out.push_chunk(text, start..at);
                out.push(PieceKind::Separator, at..at + delim.len());
                start = at + delim.len();
            }
            out.push_chunk(text, start..text.len());
        }
        Granularity::Sentence => {
            let delimiter_at = |pos: usize| {
                config
                    .sentence_delimiters
                    .iter()
                    .find(|d| text[pos..].starts_with(d.as_str()))
                    .map(String::len)
            };
            let mut start = 0;
            let mut pos = 0;
            while pos < text.len() {
                if let Some(len) = delimiter_at(pos) {
                    pos += len;
                    while let Some(len) = delimiter_at(pos) {
                        pos += len;
                    }
                    out.push_chunk(text, start..pos);
                    start = pos;
                } else {
                    pos += text[pos..].chars().next().map_or(1, char::len_utf8);
                }
            }
            out.push_chunk(text, start..text.len());
        }
    }
    Ok(Segmentation {
        source: text,
        pieces: out.pieces,
    })
}

/// Ordered unit texts for `text` at the configured granularity.
pub fn segment_text(text: &str, config: &SegmentationConfig) -> Result<Vec<String>, SegmentError> {
    Ok(segment(text, config)?.units().map(str::to_owned).collect())
}

/// Removes the configured odd symbols and normalizes Windows newlines.
pub fn clean_text(raw: &str, config: &SegmentationConfig) -> String {
    let mut text = raw.replace("\r\n", "\n");
    for symbol in config.symbol_strip_list.iter().filter(|s| !s.is_empty()) {
        text = text.replace(symbol.as_str(), "");
    }
    text
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentFormat {
    Txt,
    Csv,
}

impl std::str::FromStr for DocumentFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "txt" => Ok(DocumentFormat::Txt),
            "csv" => Ok(DocumentFormat::Csv),
            other => Err(format!("unknown document format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImportedDocument {
    /// Cleaned text, still to be segmented.
    Text(String),
    /// One cleaned unit per CSV row.
    Rows(Vec<String>),
}

impl ImportedDocument {
    pub fn into_units(self, config: &SegmentationConfig) -> Result<Vec<String>, SegmentError> {
        match self {
            ImportedDocument::Text(text) => segment_text(&text, config),
            ImportedDocument::Rows(rows) => Ok(rows),
        }
    }
}

/// Decodes and cleans a document. Without `csv_column` the first CSV
/// column is used. Blank CSV cells are skipped.
pub fn import_document(
    bytes: &[u8],
    format: DocumentFormat,
    csv_column: Option<&str>,
    config: &SegmentationConfig,
) -> Result<ImportedDocument, SegmentError> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| SegmentError::UndecodableBytes(e.valid_up_to()))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    match format {
        DocumentFormat::Txt => Ok(ImportedDocument::Text(clean_text(text, config))),
        DocumentFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(text.as_bytes());
            let headers = reader
                .headers()
                .map_err(|e| SegmentError::MalformedCsv(e.to_string()))?
                .clone();
            let column = match csv_column {
                Some(name) => headers
                    .iter()
                    .position(|h| h.trim() == name)
                    .ok_or_else(|| SegmentError::MissingColumn(name.to_owned()))?,
                None if headers.is_empty() => {
                    return Err(SegmentError::MissingColumn("<first>".into()))
                }
                None => 0,
            };
            let mut rows = Vec::new();
            for record in reader.records() {
                let record = record.map_err(|e| SegmentError::MalformedCsv(e.to_string()))?;
                let cell = record.get(column).unwrap_or_default();
                let cleaned = clean_text(cell, config);
                let cleaned = cleaned.trim();
                if !cleaned.is_empty() {
                    rows.push(cleaned.to_owned());
                }
            }
            Ok(ImportedDocument::Rows(rows))
        }
    }
}
