//! Aligned sentence pairs and the tab-separated corpus format.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
}

impl SentencePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }
}

/// Number of maximal whitespace-separated runs.
pub fn count_tokens(sentence: &str) -> usize {
    sentence.split_whitespace().count()
}

/// Reads `source<TAB>target` lines. Any line without exactly one tab is
/// rejected with its 1-based line number.
pub fn read_tsv<R: BufRead>(reader: R) -> Result<Vec<SentencePair>> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let tabs = line.matches('\t').count();
        if tabs != 1 {
            return Err(Error::Format {
                line: i + 1,
                reason: format!("expected exactly 1 tab, found {tabs}"),
            });
        }
        let (s, t) = line.split_once('\t').unwrap();
        pairs.push(SentencePair::new(s, t));
    }
    Ok(pairs)
}

pub fn write_tsv<W: Write>(pairs: &[SentencePair], mut w: W) -> Result<()> {
    for p in pairs {
        check_field(&p.source)?;
        check_field(&p.target)?;
        writeln!(w, "{}\t{}", p.source, p.target)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn check_field(s: &str) -> Result<()> {
    if s.contains(['\t', '\n']) {
        return Err(Error::Format {
            line: 0,
            reason: format!("field contains a tab or newline: {s:?}"),
        });
    }
    Ok(())
}
