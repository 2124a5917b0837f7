use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::text;
use super::CorpusError;

/// Property and value token used for the empty relation.
pub const EMPTY_RELATION: &str = "<empty>";

/// One `property: value [class]` fact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyValue {
    pub property: Vec<String>,
    pub value: Vec<String>,
    pub class_label: Option<Vec<String>>,
}

impl PropertyValue {
    /// Builds a pair from whitespace-separated token strings.
    pub fn new(property: &str, value: &str) -> Result<Self, CorpusError> {
        let pv = PropertyValue {
            property: split_tokens(property),
            value: split_tokens(value),
            class_label: None,
        };
        pv.validate()?;
        Ok(pv)
    }

    pub fn with_class(mut self, class: &str) -> Self {
        let toks = split_tokens(class);
        self.class_label = if toks.is_empty() { None } else { Some(toks) };
        self
    }

    pub fn empty_relation() -> Self {
        PropertyValue {
            property: vec![EMPTY_RELATION.to_string()],
            value: vec![EMPTY_RELATION.to_string()],
            class_label: None,
        }
    }

    pub fn is_empty_relation(&self) -> bool {
        self.property.len() == 1 && self.property[0] == EMPTY_RELATION
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.property.is_empty() || self.value.is_empty() {
            return Err(CorpusError::Invalid(format!(
                "property-value pair needs nonempty property and value: {:?}: {:?}",
                self.property, self.value
            )));
        }
        let all = self.property.iter().chain(&self.value).chain(self.class_label.iter().flatten());
        for t in all {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(CorpusError::Invalid(format!("malformed token {t:?}")));
            }
        }
        Ok(())
    }

    /// Property tokens joined with `_`, as used in delexicalised token names.
    pub fn property_name(&self) -> String {
        self.property.join("_")
    }

    /// The encoder input sequence: property tokens, value tokens, class.
    pub fn input_tokens(&self) -> impl Iterator<Item = &str> {
        self.property
            .iter()
            .chain(&self.value)
            .chain(self.class_label.iter().flatten())
            .map(String::as_str)
    }
}

pub(crate) fn split_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertySet {
    pub entity_id: String,
    pub pairs: Vec<PropertyValue>,
}

impl PropertySet {
    pub fn new(entity_id: impl Into<String>, pairs: Vec<PropertyValue>) -> Self {
        PropertySet {
            entity_id: entity_id.into(),
            pairs,
        }
    }

    /// Appends the empty relation unless one is already present.
    pub fn add_empty_relation(&mut self) {
        if self.empty_relation_index().is_none() {
            self.pairs.push(PropertyValue::empty_relation());
        }
    }

    pub fn empty_relation_index(&self) -> Option<usize> {
        self.pairs.iter().position(PropertyValue::is_empty_relation)
    }

    /// Number of pairs excluding the empty relation.
    pub fn content_len(&self) -> usize {
        self.pairs.iter().filter(|p| !p.is_empty_relation()).count()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Delexicalised token to original surface token.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DelexMap {
    pub entries: BTreeMap<String, String>,
}

impl DelexMap {
    pub fn get(&self, token: &str) -> Option<&str> {
        self.entries.get(token).map(String::as_str)
    }

    /// Inserts `key -> surface`; a different surface under an existing key
    /// is a collision.
    pub fn insert(&mut self, key: String, surface: String) -> Result<(), CorpusError> {
        match self.entries.get(&key) {
            Some(existing) if *existing != surface => Err(CorpusError::DelexCollision {
                key,
                first: existing.clone(),
                second: surface,
            }),
            Some(_) => Ok(()),
            None => {
                self.entries.insert(key, surface);
                Ok(())
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub sentences: Vec<Vec<String>>,
    pub delex_map: DelexMap,
    pub raw_text: Option<String>,
}

impl Document {
    pub fn new(sentences: Vec<Vec<String>>) -> Self {
        Document {
            sentences,
            delex_map: DelexMap::default(),
            raw_text: None,
        }
    }

    /// Normalises dates, splits sentences and tokenises raw abstract text.
    pub fn from_raw_text(raw: &str) -> Self {
        let normalised = text::normalize_dates(raw);
        let sentences = text::split_sentences(&normalised)
            .iter()
            .map(|s| text::tokenize(s))
            .filter(|s| !s.is_empty())
            .collect();
        Document {
            sentences,
            delex_map: DelexMap::default(),
            raw_text: Some(raw.to_string()),
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// All sentences concatenated.
    pub fn tokens(&self) -> Vec<&str> {
        self.sentences.iter().flatten().map(String::as_str).collect()
    }

    /// Position of `(sentence, word)` in the concatenated token sequence.
    pub fn flat_index(&self, sentence: usize, word: usize) -> Option<usize> {
        let s = self.sentences.get(sentence)?;
        if word >= s.len() {
            return None;
        }
        Some(self.sentences[..sentence].iter().map(Vec::len).sum::<usize>() + word)
    }
}

/// A property set paired with its loosely aligned text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub properties: PropertySet,
    pub document: Document,
}

impl Example {
    pub fn new(properties: PropertySet, document: Document) -> Self {
        Example { properties, document }
    }

    pub fn entity_id(&self) -> &str {
        &self.properties.entity_id
    }
}

/// A word-to-property link inside one document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub sentence: usize,
    pub word: usize,
    pub property: usize,
}

impl Link {
    pub fn new(sentence: usize, word: usize, property: usize) -> Self {
        Link { sentence, word, property }
    }
}

/// Word-level links for one property-set/document pair; at most one
/// property per word.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AlignmentSet {
    links: BTreeSet<Link>,
    words: BTreeMap<(usize, usize), usize>,
}

impl AlignmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_links(links: impl IntoIterator<Item = Link>) -> Result<Self, CorpusError> {
        let mut set = AlignmentSet::new();
        for l in links {
            set.insert(l)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, link: Link) -> Result<(), CorpusError> {
        match self.words.get(&(link.sentence, link.word)) {
            Some(&p) if p != link.property => Err(CorpusError::Invalid(format!(
                "word ({}, {}) already linked to property {p}, cannot also link {}",
                link.sentence, link.word, link.property
            ))),
            Some(_) => Ok(()),
            None => {
                self.words.insert((link.sentence, link.word), link.property);
                self.links.insert(link);
                Ok(())
            }
        }
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter()
    }

    pub fn contains(&self, link: &Link) -> bool {
        self.links.contains(link)
    }

    pub fn property_of(&self, sentence: usize, word: usize) -> Option<usize> {
        self.words.get(&(sentence, word)).copied()
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Checks that every link points at an existing word and property.
    pub fn validate(&self, properties: &PropertySet, document: &Document) -> Result<(), CorpusError> {
        for l in &self.links {
            if l.property >= properties.len() || document.flat_index(l.sentence, l.word).is_none() {
                return Err(CorpusError::Invalid(format!(
                    "link {l:?} out of range for entity {}",
                    properties.entity_id
                )));
            }
        }
        Ok(())
    }

    /// Surface forms of all linked words (type-level set).
    pub fn aligned_words(&self, document: &Document) -> BTreeSet<String> {
        self.links
            .iter()
            .filter_map(|l| document.sentences.get(l.sentence)?.get(l.word).cloned())
            .collect()
    }

    /// Links restricted to one sentence.
    pub fn in_sentence(&self, sentence: usize) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(move |l| l.sentence == sentence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_relation_added_once() {
        let mut ps = PropertySet::new("e", vec![PropertyValue::new("spouse", "frances flaherty").unwrap()]);
        ps.add_empty_relation();
        ps.add_empty_relation();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps.content_len(), 1);
        assert_eq!(ps.empty_relation_index(), Some(1));
    }

    #[test]
    fn pairs_reject_empty_fields() {
        assert!(PropertyValue::new("spouse", "").is_err());
        assert!(PropertyValue::new("", "x").is_err());
    }

    #[test]
    fn one_property_per_word() {
        let mut a = AlignmentSet::new();
        a.insert(Link::new(0, 1, 2)).unwrap();
        a.insert(Link::new(0, 1, 2)).unwrap();
        assert!(a.insert(Link::new(0, 1, 3)).is_err());
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn flat_index_spans_sentences() {
        let d = Document::new(vec![vec!["a".into(), "b".into()], vec!["c".into()]]);
        assert_eq!(d.flat_index(1, 0), Some(2));
        assert_eq!(d.flat_index(1, 1), None);
    }
}
