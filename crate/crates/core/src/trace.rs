//! Token-trace data model and its newline-delimited wire format.
//!
//! A trace stream is one `meta` record, zero or more `token` records and an
//! optional `end` record, one JSON object per line:
//!
//! ```text
//! {"type":"meta","mode":"generate","reduction":"max","model_id":"slm"}
//! {"type":"token","i":0,"tok":"Paris","p_max":0.9,"p_real":0.9,"att_recv":0.3}
//! {"type":"end","answer_text":"Paris"}
//! ```
//!
//! Probabilities travel in linear space and `att_recv` is the raw reduced
//! attention, before exponential amplification.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("missing meta record")]
    MissingMeta,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{field} {reason} at index {index}")]
    Validation {
        field: &'static str,
        index: usize,
        reason: String,
    },
    #[error("io error: {0}")]
    Io(String),
}

impl TraceError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        TraceError::Parse {
            line,
            message: message.into(),
        }
    }

    fn invalid(field: &'static str, index: usize, reason: impl Into<String>) -> Self {
        TraceError::Validation {
            field,
            index,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    Generate,
    TeacherForced,
}

/// How the adapter collapsed layers, heads and positions into `att_recv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Max,
    Avg,
    LastToken,
}

/// One generated (or teacher-forced) token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub index: usize,
    pub token_text: String,
    /// Largest probability of the next-token distribution at this step.
    pub p_max: f64,
    /// Probability of the token that was actually emitted or forced.
    pub p_real: f64,
    /// Maximum attention this token receives from later positions.
    pub att_recv: f64,
    pub lse_logits: Option<f64>,
    pub p_min: Option<f64>,
}

impl TokenRecord {
    pub fn new(index: usize, p_max: f64, p_real: f64, att_recv: f64) -> Self {
        TokenRecord {
            index,
            token_text: String::new(),
            p_max,
            p_real,
            att_recv,
            lse_logits: None,
            p_min: None,
        }
    }

    /// Checks the per-token invariants. `index` is only used for error reporting.
    pub fn validate(&self) -> Result<(), TraceError> {
        let i = self.index;
        let in_unit = |x: f64| x.is_finite() && x > 0.0 && x <= 1.0;
        if !in_unit(self.p_max) {
            return Err(TraceError::invalid("p_max", i, "out of range"));
        }
        if !in_unit(self.p_real) {
            return Err(TraceError::invalid("p_real", i, "out of range"));
        }
        if self.p_real > self.p_max {
            return Err(TraceError::invalid("p_real", i, "exceeds p_max"));
        }
        if !(0.0..=1.0).contains(&self.att_recv) {
            return Err(TraceError::invalid("att_recv", i, "out of range"));
        }
        if let Some(lse) = self.lse_logits {
            if !lse.is_finite() {
                return Err(TraceError::invalid("lse", i, "not finite"));
            }
        }
        if let Some(p_min) = self.p_min {
            if !(0.0..=1.0).contains(&p_min) {
                return Err(TraceError::invalid("p_min", i, "out of range"));
            }
            if p_min > self.p_max {
                return Err(TraceError::invalid("p_min", i, "exceeds p_max"));
            }
        }
        Ok(())
    }
}

/// Ordered token records for one decode or teacher-forced pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub mode: TraceMode,
    pub reduction: Reduction,
    pub model_id: String,
    pub tokens: Vec<TokenRecord>,
    pub answer_text: Option<String>,
}

impl GenerationTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_lse(&self) -> bool {
        !self.tokens.is_empty() && self.tokens[0].lse_logits.is_some()
    }

    pub fn has_p_min(&self) -> bool {
        !self.tokens.is_empty() && self.tokens[0].p_min.is_some()
    }

    /// Checks every trace invariant: per-token ranges, contiguous indices,
    /// all-or-nothing optional fields and a zero `att_recv` on the last token.
    pub fn validate(&self) -> Result<(), TraceError> {
        let lse = self.has_lse();
        let p_min = self.has_p_min();
        for (pos, tok) in self.tokens.iter().enumerate() {
            if tok.index != pos {
                return Err(TraceError::invalid(
                    "i",
                    pos,
                    format!("expected {pos}, found {}", tok.index),
                ));
            }
            tok.validate()?;
            if tok.lse_logits.is_some() != lse {
                return Err(TraceError::invalid("lse", pos, "present on some tokens only"));
            }
            if tok.p_min.is_some() != p_min {
                return Err(TraceError::invalid("p_min", pos, "present on some tokens only"));
            }
        }
        if let Some(last) = self.tokens.last() {
            if last.att_recv != 0.0 {
                return Err(TraceError::invalid(
                    "att_recv",
                    last.index,
                    "must be 0 on the final token",
                ));
            }
        }
        Ok(())
    }

    /// Writes the trace in wire format, including a closing `end` record.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let meta = WireRecord::Meta {
            mode: self.mode,
            reduction: self.reduction,
            model_id: self.model_id.clone(),
        };
        write_record(&mut out, &meta)?;
        for tok in &self.tokens {
            let rec = WireRecord::Token {
                i: tok.index,
                tok: tok.token_text.clone(),
                p_max: tok.p_max,
                p_real: tok.p_real,
                att_recv: tok.att_recv,
                lse: tok.lse_logits,
                p_min: tok.p_min,
            };
            write_record(&mut out, &rec)?;
        }
        write_record(
            &mut out,
            &WireRecord::End {
                answer_text: self.answer_text.clone(),
            },
        )
    }
}

/// Serializes a trace to its newline-delimited byte form.
///
/// Floats use the shortest decimal that parses back to the same bits, so
/// [`parse_trace_stream`] reproduces the trace exactly.
pub fn serialize_trace(trace: &GenerationTrace) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + trace.tokens.len() * 96);
    trace
        .write_to(&mut buf)
        .expect("writing to a Vec cannot fail");
    buf
}

fn write_record<W: Write>(out: &mut W, rec: &WireRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, rec)?;
    out.write_all(b"\n")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WireRecord {
    Meta {
        mode: TraceMode,
        reduction: Reduction,
        model_id: String,
    },
    Token {
        i: usize,
        #[serde(default)]
        tok: String,
        p_max: f64,
        p_real: f64,
        att_recv: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lse: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p_min: Option<f64>,
    },
    End {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer_text: Option<String>,
    },
}

/// Incremental parser for trace streams arriving in arbitrary byte chunks.
///
/// Holds at most one partial line; every complete line is decoded and
/// checked as soon as it arrives.
#[derive(Debug, Default)]
pub struct TraceStreamParser {
    line_buf: Vec<u8>,
    line_no: usize,
    meta: Option<(TraceMode, Reduction, String)>,
    tokens: Vec<TokenRecord>,
    answer_text: Option<String>,
    ended: bool,
}

impl TraceStreamParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, data: &[u8]) -> Result<(), TraceError> {
        let mut rest = data;
        while let Some(pos) = rest.iter().position(|&b| b == b'\n') {
            self.line_buf.extend_from_slice(&rest[..pos]);
            let line = std::mem::take(&mut self.line_buf);
            self.line_no += 1;
            self.accept_line(&line)?;
            rest = &rest[pos + 1..];
        }
        self.line_buf.extend_from_slice(rest);
        Ok(())
    }

    /// Number of token records accepted so far.
    pub fn tokens_seen(&self) -> usize {
        self.tokens.len()
    }

    pub fn finish(self) -> Result<GenerationTrace, TraceError> {
        if self.line_buf.iter().any(|b| !b.is_ascii_whitespace()) {
            return Err(TraceError::parse(self.line_no + 1, "truncated record"));
        }
        let (mode, reduction, model_id) = self.meta.ok_or(TraceError::MissingMeta)?;
        let trace = GenerationTrace {
            mode,
            reduction,
            model_id,
            tokens: self.tokens,
            answer_text: self.answer_text,
        };
        trace.validate()?;
        Ok(trace)
    }

    fn accept_line(&mut self, raw: &[u8]) -> Result<(), TraceError> {
        let line_no = self.line_no;
        let text = std::str::from_utf8(raw)
            .map_err(|e| TraceError::parse(line_no, format!("invalid utf-8: {e}")))?;
        if text.trim().is_empty() {
            return Ok(());
        }
        let rec: WireRecord =
            serde_json::from_str(text).map_err(|e| TraceError::parse(line_no, e.to_string()))?;
        if self.ended {
            return Err(TraceError::parse(line_no, "record after end"));
        }
        match rec {
            WireRecord::Meta {
                mode,
                reduction,
                model_id,
            } => {
                if self.meta.is_some() {
                    return Err(TraceError::parse(line_no, "duplicate meta record"));
                }
                self.meta = Some((mode, reduction, model_id));
            }
            WireRecord::Token {
                i,
                tok,
                p_max,
                p_real,
                att_recv,
                lse,
                p_min,
            } => {
                if self.meta.is_none() {
                    return Err(TraceError::MissingMeta);
                }
                let expected = self.tokens.len();
                if i != expected {
                    return Err(TraceError::invalid(
                        "i",
                        expected,
                        format!("expected {expected}, found {i}"),
                    ));
                }
                let rec = TokenRecord {
                    index: i,
                    token_text: tok,
                    p_max,
                    p_real,
                    att_recv,
                    lse_logits: lse,
                    p_min,
                };
                rec.validate()?;
                self.tokens.push(rec);
            }
            WireRecord::End { answer_text } => {
                if self.meta.is_none() {
                    return Err(TraceError::MissingMeta);
                }
                self.answer_text = answer_text;
                self.ended = true;
            }
        }
        Ok(())
    }
}

/// Parses and validates a complete trace stream.
pub fn parse_trace_stream<R: BufRead>(mut reader: R) -> Result<GenerationTrace, TraceError> {
    let mut parser = TraceStreamParser::new();
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader
            .read_until(b'\n', &mut line)
            .map_err(|e| TraceError::Io(e.to_string()))?;
        if n == 0 {
            break;
        }
        parser.feed(&line)?;
    }
    parser.finish()
}

pub fn parse_trace_bytes(bytes: &[u8]) -> Result<GenerationTrace, TraceError> {
    parse_trace_stream(bytes)
}
