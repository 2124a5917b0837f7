//! Corpus, alignment and text file formats.
//!
//! * corpus: JSON lines, `{entity_id, properties: [{p, v, class?}],
//!   sentences: [[token, ...], ...], delex_map: {token: surface}}` with an
//!   optional `raw_text`; `p`, `v` and `class` are whitespace-joined tokens.
//! * alignments: `entity_id<TAB>sentence_idx<TAB>word_idx<TAB>property_idx`,
//!   all indices 0-based.
//! * texts: `entity_id<TAB>space-joined tokens`, one document per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::split_tokens;
use super::{AlignmentSet, CorpusError, DelexMap, Document, Example, Link, PropertySet, PropertyValue};

#[derive(Serialize, Deserialize)]
struct PairRecord {
    p: String,
    v: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    entity_id: String,
    properties: Vec<PairRecord>,
    #[serde(default)]
    sentences: Vec<Vec<String>>,
    #[serde(default)]
    delex_map: DelexMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_text: Option<String>,
}

impl From<&Example> for Record {
    fn from(ex: &Example) -> Self {
        Record {
            entity_id: ex.properties.entity_id.clone(),
            properties: ex
                .properties
                .pairs
                .iter()
                .map(|pv| PairRecord {
                    p: pv.property.join(" "),
                    v: pv.value.join(" "),
                    class: pv.class_label.as_ref().map(|c| c.join(" ")),
                })
                .collect(),
            sentences: ex.document.sentences.clone(),
            delex_map: ex.document.delex_map.clone(),
            raw_text: ex.document.raw_text.clone(),
        }
    }
}

impl TryFrom<Record> for Example {
    type Error = CorpusError;

    fn try_from(r: Record) -> Result<Self, CorpusError> {
        let pairs = r
            .properties
            .into_iter()
            .map(|pr| {
                let pv = PropertyValue {
                    property: split_tokens(&pr.p),
                    value: split_tokens(&pr.v),
                    class_label: pr.class.as_deref().map(split_tokens).filter(|c| !c.is_empty()),
                };
                pv.validate().map(|_| pv)
            })
            .collect::<Result<Vec<_>, _>>()?;
        // Records with raw text but no sentences are tokenised here.
        let document = match (&r.raw_text, r.sentences.is_empty()) {
            (Some(raw), true) => Document {
                delex_map: r.delex_map,
                ..Document::from_raw_text(raw)
            },
            _ => Document {
                sentences: r.sentences,
                delex_map: r.delex_map,
                raw_text: r.raw_text,
            },
        };
        Ok(Example::new(PropertySet::new(r.entity_id, pairs), document))
    }
}

pub fn example_to_json(ex: &Example) -> Result<String, CorpusError> {
    Ok(serde_json::to_string(&Record::from(ex))?)
}

pub fn example_from_json(line: &str) -> Result<Example, CorpusError> {
    let r: Record = serde_json::from_str(line)?;
    Example::try_from(r)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Example>, CorpusError> {
    let reader = BufReader::new(File::open(path).map_err(|e| CorpusError::io(path, e))?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(example_from_json(&line).map_err(|e| CorpusError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &[Example]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| CorpusError::io(path, e))?);
    for ex in corpus {
        writeln!(w, "{}", example_to_json(ex)?).map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

/// Alignment sets keyed by entity id.
pub type AlignmentFile = BTreeMap<String, AlignmentSet>;

pub fn parse_alignments(text: &str) -> Result<AlignmentFile, CorpusError> {
    let mut out = AlignmentFile::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |m: &str| CorpusError::Parse {
            line: n + 1,
            message: m.to_string(),
        };
        if fields.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(&format!("bad index {s:?}")));
        let link = Link::new(num(fields[1])?, num(fields[2])?, num(fields[3])?);
        out.entry(fields[0].to_string())
            .or_default()
            .insert(link)
            .map_err(|e| bad(&e.to_string()))?;
    }
    Ok(out)
}

pub fn format_alignments(alignments: &AlignmentFile) -> String {
    let mut s = String::new();
    for (id, set) in alignments {
        for l in set.links() {
            s.push_str(&format!("{id}\t{}\t{}\t{}\n", l.sentence, l.word, l.property));
        }
    }
    s
}

pub fn read_alignments(path: &Path) -> Result<AlignmentFile, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_alignments(&text)
}

pub fn write_alignments(path: &Path, alignments: &AlignmentFile) -> Result<(), CorpusError> {
    std::fs::write(path, format_alignments(alignments)).map_err(|e| CorpusError::io(path, e))
}

/// Entity-prefixed token sequences, in file order.
pub type TextFile = Vec<(String, Vec<String>)>;

pub fn parse_texts(text: &str) -> Result<TextFile, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let (id, body) = l.split_once('\t').ok_or(CorpusError::Parse {
                line: n + 1,
                message: "expected entity_id<TAB>text".into(),
            })?;
            Ok((id.to_string(), split_tokens(body)))
        })
        .collect()
}

pub fn read_texts(path: &Path) -> Result<TextFile, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_texts(&text)
}

pub fn write_texts(path: &Path, texts: &TextFile) -> Result<(), CorpusError> {
    let mut s = String::new();
    for (id, toks) in texts {
        s.push_str(id);
        s.push('\t');
        s.push_str(&toks.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_layout_round_trips() {
        let line = r#"{"entity_id":"e1","properties":[{"p":"spouse","v":"frances h. flaherty","class":"person"},{"p":"birth_date","v":"february DLX_birth_date_2"}],"sentences":[["he","married","frances"]],"delex_map":{"DLX_birth_date_2":"16"}}"#;
        let ex = example_from_json(line).unwrap();
        assert_eq!(ex.properties.pairs[0].class_label.as_deref(), Some(&["person".to_string()][..]));
        assert_eq!(ex.document.delex_map.get("DLX_birth_date_2"), Some("16"));
        assert_eq!(example_to_json(&ex).unwrap(), line);
    }

    #[test]
    fn raw_text_records_are_tokenised() {
        let line = r#"{"entity_id":"e1","properties":[{"p":"a","v":"b"}],"raw_text":"He was born 1884-02-16. He died."}"#;
        let ex = example_from_json(line).unwrap();
        assert_eq!(ex.document.sentences.len(), 2);
        assert_eq!(ex.document.sentences[0], vec!["he", "was", "born", "february", "16", ",", "1884", "."]);
    }

    #[test]
    fn alignment_tsv_round_trip() {
        let text = "e1\t0\t1\t2\ne1\t0\t3\t0\ne2\t1\t0\t1\n";
        let parsed = parse_alignments(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(format_alignments(&parsed), text);
        assert!(parse_alignments("e1\t0\t1").is_err());
    }
}
