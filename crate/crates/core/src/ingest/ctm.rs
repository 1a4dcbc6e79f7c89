use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// One time-aligned word from a CTM transcript.
#[derive(Clone, Debug, PartialEq)]
pub struct CtmToken {
    pub utterance_id: String,
    pub channel: String,
    pub start_s: f64,
    pub dur_s: f64,
    /// Lowercased on ingest.
    pub word: String,
    pub confidence: Option<f64>,
    /// Part-of-speech tag from an optional seventh column.
    pub pos: Option<String>,
}

impl CtmToken {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.dur_s
    }
}

/// Parse a CTM transcript.
///
/// Blank lines and lines starting with `;;` or `#` are skipped. Each other
/// line needs 5 fields, optionally followed by a confidence and a POS tag.
pub fn parse_ctm<R: BufRead>(source: R) -> Result<Vec<CtmToken>> {
    let mut tokens = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(";;") || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if !(5..=7).contains(&fields.len()) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 to 7 fields, found {}", fields.len()),
            });
        }
        let start_s = number(fields[2], line_no, 3)?;
        let dur_s = number(fields[3], line_no, 4)?;
        if start_s < 0.0 {
            return Err(field(line_no, 3, format!("negative start time {start_s}")));
        }
        if dur_s <= 0.0 {
            return Err(field(
                line_no,
                4,
                format!("duration must be positive, got {dur_s}"),
            ));
        }
        let confidence = match fields.get(5) {
            Some(raw) => {
                let c = number(raw, line_no, 6)?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(field(line_no, 6, format!("confidence {c} outside [0, 1]")));
                }
                Some(c)
            }
            None => None,
        };
        tokens.push(CtmToken {
            utterance_id: fields[0].to_string(),
            channel: fields[1].to_string(),
            start_s,
            dur_s,
            word: fields[4].to_lowercase(),
            confidence,
            pos: fields.get(6).map(|p| p.to_string()),
        });
    }
    Ok(tokens)
}

pub fn write_ctm<W: Write>(tokens: &[CtmToken], mut sink: W) -> Result<()> {
    for t in tokens {
        write!(
            sink,
            "{} {} {:.3} {:.3} {}",
            t.utterance_id, t.channel, t.start_s, t.dur_s, t.word
        )?;
        if let Some(c) = t.confidence {
            write!(sink, " {c}")?;
        }
        if let Some(p) = &t.pos {
            write!(sink, " {p}")?;
        }
        writeln!(sink)?;
    }
    Ok(())
}

fn number(raw: &str, line: usize, field_no: usize) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(field(line, field_no, format!("not a number: {raw:?}"))),
    }
}

fn field(line: usize, field: usize, msg: String) -> Error {
    Error::Field { line, field, msg }
}
