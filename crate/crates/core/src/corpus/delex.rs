use std::collections::HashMap;

use super::text::{is_numeric, is_year, normalize_date_token};
use super::{CorpusError, DelexMap, Example, PropertySet};

pub const YEAR: &str = "YEAR";
pub const NUMERIC: &str = "NUMERIC";
pub const DELEX_PREFIX: &str = "DLX_";

/// `DLX_<property>_<position>`, position 1-based over the value tokens.
pub fn delex_token(property: &str, position: usize) -> String {
    format!("{DELEX_PREFIX}{property}_{position}")
}

pub fn is_delex_token(token: &str) -> bool {
    token.starts_with(DELEX_PREFIX)
}

/// Expands numeric date tokens (`1884-02-16`, `02/16/1884`) into their
/// month-name surface tokens, in values and text alike.
pub fn normalize_example_dates(example: &Example) -> Example {
    let expand = |toks: &[String]| -> Vec<String> {
        toks.iter()
            .flat_map(|t| normalize_date_token(t).unwrap_or_else(|| vec![t.clone()]))
            .collect()
    };
    let mut out = example.clone();
    for pv in &mut out.properties.pairs {
        pv.value = expand(&pv.value);
    }
    for s in &mut out.document.sentences {
        *s = expand(s);
    }
    out
}

/// Replaces numerals with property-position tokens.
///
/// Numeric value tokens become `DLX_<property>_<k>` in the property set and
/// wherever the same numeral occurs in the text; the first pair holding a
/// numeral wins. Text numerals absent from every value become `YEAR` or
/// `NUMERIC`. Mappings are recorded in the document's [`DelexMap`].
pub fn delexicalise(example: &Example) -> Result<Example, CorpusError> {
    let mut out = example.clone();
    let mut map = out.document.delex_map.clone();
    let mut numeral_key: HashMap<String, String> = HashMap::new();

    for pv in &mut out.properties.pairs {
        if pv.is_empty_relation() {
            continue;
        }
        let name = pv.property_name();
        for (k, tok) in pv.value.iter_mut().enumerate() {
            if !is_numeric(tok) {
                continue;
            }
            let key = delex_token(&name, k + 1);
            map.insert(key.clone(), tok.clone())?;
            numeral_key.entry(tok.clone()).or_insert_with(|| key.clone());
            *tok = key;
        }
    }

    for sentence in &mut out.document.sentences {
        for tok in sentence.iter_mut() {
            if !is_numeric(tok) {
                continue;
            }
            *tok = match numeral_key.get(tok.as_str()) {
                Some(key) => key.clone(),
                None if is_year(tok) => YEAR.to_string(),
                None => NUMERIC.to_string(),
            };
        }
    }
    out.document.delex_map = map;
    Ok(out)
}

/// Result of mapping delexicalised tokens back to surface forms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relexicalised {
    pub tokens: Vec<String>,
    /// `DLX_*` tokens without a map entry, left verbatim.
    pub unmapped: usize,
}

pub fn relexicalise<S: AsRef<str>>(tokens: &[S], map: &DelexMap) -> Relexicalised {
    let mut unmapped = 0;
    let tokens = tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            match map.get(t) {
                Some(surface) => surface.to_string(),
                None => {
                    if is_delex_token(t) {
                        unmapped += 1;
                    }
                    t.to_string()
                }
            }
        })
        .collect();
    Relexicalised { tokens, unmapped }
}

/// Map from every property-position token of `props` to its surface form,
/// built from the property set alone. Numeral values already replaced by
/// delexicalisation tokens resolve through `numerals`. The first pair of a
/// property wins.
pub fn relexicalisation_map(props: &PropertySet, numerals: &DelexMap) -> DelexMap {
    let mut map = DelexMap::default();
    for pv in &props.pairs {
        if pv.is_empty_relation() {
            continue;
        }
        let name = pv.property_name();
        for (k, t) in pv.value.iter().enumerate() {
            let key = delex_token(&name, k + 1);
            if map.get(&key).is_some() {
                continue;
            }
            let surface = if is_delex_token(t) { numerals.get(t).unwrap_or(t) } else { t.as_str() };
            map.entries.insert(key, surface.to_string());
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, PropertySet, PropertyValue};

    fn example(props: &[(&str, &str)], text: &[&str]) -> Example {
        let pairs = props.iter().map(|(p, v)| PropertyValue::new(p, v).unwrap()).collect();
        let doc = Document::new(vec![text.iter().map(|s| s.to_string()).collect()]);
        Example::new(PropertySet::new("e1", pairs), doc)
    }

    #[test]
    fn birth_date_positions() {
        let ex = example(
            &[("birth_date", "february 16 , 1884")],
            &["robert", "(", "february", "16", ",", "1884", "–"],
        );
        let d = delexicalise(&ex).unwrap();
        assert_eq!(
            d.document.sentences[0],
            vec!["robert", "(", "february", "DLX_birth_date_2", ",", "DLX_birth_date_4", "–"]
        );
        assert_eq!(d.properties.pairs[0].value, vec!["february", "DLX_birth_date_2", ",", "DLX_birth_date_4"]);
        assert_eq!(d.document.delex_map.get("DLX_birth_date_2"), Some("16"));
        assert_eq!(d.document.delex_map.get("DLX_birth_date_4"), Some("1884"));
    }

    #[test]
    fn multi_token_property_names_join_with_underscores() {
        let ex = example(&[("birth date", "16 february 1884")], &["16"]);
        let d = delexicalise(&ex).unwrap();
        assert_eq!(d.document.sentences[0], vec!["DLX_birth_date_1"]);
    }

    #[test]
    fn unmatched_year_and_number() {
        let ex = example(&[("spouse", "frances flaherty")], &["from", "1879", "with", "3", "children"]);
        let d = delexicalise(&ex).unwrap();
        assert_eq!(d.document.sentences[0], vec!["from", "YEAR", "with", "NUMERIC", "children"]);
        assert!(d.document.delex_map.is_empty());
    }

    #[test]
    fn text_without_numerals_unchanged() {
        let ex = example(&[("spouse", "frances flaherty")], &["married", "to", "frances"]);
        let d = delexicalise(&ex).unwrap();
        assert_eq!(d, ex);
    }

    #[test]
    fn same_key_different_surface_collides() {
        let ex = example(&[("spouse", "x 1914"), ("spouse", "y 1920")], &["a"]);
        assert!(matches!(delexicalise(&ex), Err(CorpusError::DelexCollision { .. })));
    }

    #[test]
    fn relexicalise_lookup_and_fallback() {
        let mut map = DelexMap::default();
        map.insert("DLX_birth_date_2".into(), "16".into()).unwrap();
        assert_eq!(relexicalise(&["DLX_birth_date_2"], &map).tokens, vec!["16"]);
        assert_eq!(relexicalise(&["a", "b"], &map).tokens, vec!["a", "b"]);
        let r = relexicalise(&["DLX_spouse_1"], &DelexMap::default());
        assert_eq!(r.tokens, vec!["DLX_spouse_1"]);
        assert_eq!(r.unmapped, 1);
    }

    #[test]
    fn map_from_property_set_alone() {
        let ex = example(&[("spouse", "frances flaherty"), ("birth_date", "16 february 1884")], &["x"]);
        let d = delexicalise(&ex).unwrap();
        let map = relexicalisation_map(&d.properties, &d.document.delex_map);
        assert_eq!(map.get("DLX_spouse_2"), Some("flaherty"));
        assert_eq!(map.get("DLX_birth_date_1"), Some("16"));
        assert_eq!(map.get("DLX_birth_date_2"), Some("february"));
    }

    #[test]
    fn dates_expand_before_delexicalisation() {
        let ex = example(&[("birth_date", "1884-02-16")], &["born", "1884-02-16"]);
        let n = normalize_example_dates(&ex);
        assert_eq!(n.properties.pairs[0].value, vec!["february", "16", ",", "1884"]);
        let d = delexicalise(&n).unwrap();
        assert_eq!(d.document.sentences[0], vec!["born", "february", "DLX_birth_date_2", ",", "DLX_birth_date_4"]);
    }
}
