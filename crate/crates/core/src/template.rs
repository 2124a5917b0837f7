//! Rule-based baseline: one sentence template per property, ordered by
//! priority then property name.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::corpus::{AlignmentSet, CorpusError, Example, PropertySet};
use crate::error::{Error, Result};

pub const NAME_SLOT: &str = "[NAME]";
pub const VALUE_SLOT: &str = "[VALUE]";

/// Rules shipped for the synthetic biography corpus.
pub const DEFAULT_RULES: &str = include_str!("../data/templates.tsv");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateRule {
    pub priority: u32,
    pub property: String,
    pub template: Vec<String>,
}

/// Parses `priority<TAB>property<TAB>template` lines; `#` starts a comment.
pub fn parse_rules(text: &str) -> Result<Vec<TemplateRule>, CorpusError> {
    let mut rules = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| CorpusError::Parse { line: n + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        let [priority, property, template] = fields[..] else {
            return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let priority = priority.trim().parse().map_err(|e| err(format!("priority: {e}")))?;
        let template: Vec<String> = template.split_whitespace().map(str::to_string).collect();
        if !template.iter().any(|t| t == NAME_SLOT || t == VALUE_SLOT) {
            return Err(err("template without a slot".into()));
        }
        if !seen.insert(property.to_string()) {
            return Err(err(format!("second rule for {property}")));
        }
        rules.push(TemplateRule {
            priority,
            property: property.to_string(),
            template,
        });
    }
    rules.sort_by(|a, b| (a.priority, &a.property).cmp(&(b.priority, &b.property)));
    Ok(rules)
}

pub fn read_rules(path: &Path) -> Result<Vec<TemplateRule>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_rules(&text)?)
}

pub fn default_rules() -> Vec<TemplateRule> {
    parse_rules(DEFAULT_RULES).expect("shipped rules parse")
}

fn initials(name: &[String]) -> Vec<String> {
    let s: String = name.iter().filter_map(|w| w.chars().next()).flat_map(char::to_uppercase).collect();
    vec![s]
}

/// One sentence per ruled property-value pair, in rule order. The entity
/// name (the `name` property, else the entity id) is written in full the
/// first time and as initials afterwards.
pub fn realise_template(props: &PropertySet, rules: &[TemplateRule]) -> Vec<Vec<String>> {
    let name: Vec<String> = props
        .pairs
        .iter()
        .find(|pv| pv.property_name() == "name")
        .map(|pv| pv.value.clone())
        .unwrap_or_else(|| vec![props.entity_id.clone()]);
    let mut by_property: HashMap<String, Vec<&Vec<String>>> = HashMap::new();
    for pv in &props.pairs {
        if !pv.is_empty_relation() {
            by_property.entry(pv.property_name()).or_default().push(&pv.value);
        }
    }
    let mut named = false;
    let mut out = Vec::new();
    for rule in rules {
        for value in by_property.get(&rule.property).into_iter().flatten() {
            let mut sentence = Vec::new();
            for t in &rule.template {
                match t.as_str() {
                    NAME_SLOT if named => sentence.extend(initials(&name)),
                    NAME_SLOT => {
                        sentence.extend(name.iter().cloned());
                        named = true;
                    }
                    VALUE_SLOT => sentence.extend(value.iter().cloned()),
                    _ => sentence.push(t.clone()),
                }
            }
            if sentence.last().map(String::as_str) != Some(".") {
                sentence.push(".".into());
            }
            out.push(sentence);
        }
    }
    out
}

/// Properties ordered by mean relative sentence position of their first
/// linked word, over examples with gold links.
pub fn mention_order(corpus: &[(&Example, &AlignmentSet)]) -> Vec<String> {
    let mut positions: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (ex, gold) in corpus {
        let n = ex.document.sentences.len().max(1) as f64;
        let mut first: BTreeMap<usize, usize> = BTreeMap::new();
        for l in gold.links() {
            let e = first.entry(l.property).or_insert(l.sentence);
            *e = (*e).min(l.sentence);
        }
        for (p, s) in first {
            if let Some(pv) = ex.properties.pairs.get(p) {
                positions.entry(pv.property_name()).or_default().push(s as f64 / n);
            }
        }
    }
    let mut order: Vec<(f64, String)> = positions
        .into_iter()
        .map(|(p, xs)| (xs.iter().sum::<f64>() / xs.len() as f64, p))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    order.into_iter().map(|(_, p)| p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PropertyValue;

    #[test]
    fn zanetti() {
        let props = PropertySet::new("zanetti", vec![PropertyValue::new("position", "defender").unwrap()]);
        let out = realise_template(&props, &default_rules());
        assert_eq!(out, vec![vec!["zanetti", "played", "as", "defender", "."]]);
    }

    #[test]
    fn empty_set_gives_empty_text() {
        assert!(realise_template(&PropertySet::new("x", vec![]), &default_rules()).is_empty());
    }

    #[test]
    fn birth_before_death_and_initials() {
        let props = PropertySet::new(
            "e1",
            vec![
                PropertyValue::new("death_date", "23 july 1951").unwrap(),
                PropertyValue::new("name", "robert flaherty").unwrap(),
                PropertyValue::new("birth_date", "16 february 1884").unwrap(),
            ],
        );
        let out = realise_template(&props, &default_rules());
        assert_eq!(out[0][..3], ["robert", "flaherty", "was"]);
        assert_eq!(out[1][0], "RF");
        assert_eq!(out[1][1..3], ["died", "on"]);
    }

    #[test]
    fn malformed_rules() {
        assert!(parse_rules("1\tname\tno slot here").is_err());
        assert!(parse_rules("x\tname\t[NAME] .").is_err());
        assert!(parse_rules("1\ta\t[NAME] .\n2\ta\t[VALUE] .").is_err());
        assert_eq!(default_rules().len(), 15);
    }
}
