//! Seeded biography-like corpora with planted word-to-property links.
//!
//! Each entity gets a random property set; a random subset of its
//! properties is verbalised through clause templates, generic distractor
//! sentences are interleaved, and every emitted word is either linked to
//! the property whose value it spells out or left unaligned (template
//! wording, pronouns, connectives, distractors).


use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AlignmentSet, CorpusError, Document, Example, Link, PropertySet, PropertyValue};

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september", "october", "november",
    "december",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ValueKind {
    /// One of the listed values (whitespace-separated tokens).
    Pool { values: Vec<String> },
    /// `day month year`.
    Date { first_year: u32, last_year: u32 },
    Year { first_year: u32, last_year: u32 },
    Count { min: u32, max: u32 },
    /// First name plus surname from the spec's name pools.
    PersonName,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub name: String,
    pub kind: ValueKind,
    #[serde(default)]
    pub class: Option<String>,
    /// Probability that an entity has this property.
    pub presence: f64,
    /// Predicate templates; `{v}` marks the value.
    pub clauses: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// In canonical order of mention.
    pub properties: Vec<PropertySpec>,
    /// Generic sentences; `{s}` marks the subject pronoun.
    pub distractors: Vec<String>,
    pub first_names: Vec<String>,
    pub last_names: Vec<String>,
    /// Probability that a sentence slot holds a distractor.
    pub distractor_rate: f64,
    /// Probability that a present property is left unverbalised.
    pub dropout_rate: f64,
    /// Probability that two consecutive clauses share a sentence.
    pub pair_rate: f64,
    /// Probability of swapping two adjacent clauses out of canonical order.
    pub swap_rate: f64,
    /// Entities are topped up to this many pairs, the name included.
    pub min_properties: usize,
}

/// One generated entity.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticExample {
    pub example: Example,
    pub gold: AlignmentSet,
    /// The document without its distractor sentences.
    pub reference: Vec<Vec<String>>,
    /// Indices of distractor sentences in the document.
    pub distractor_sentences: Vec<usize>,
}

fn pool(values: &[&str]) -> ValueKind {
    ValueKind::Pool {
        values: values.iter().map(|s| s.to_string()).collect(),
    }
}

fn prop(name: &str, kind: ValueKind, class: Option<&str>, presence: f64, clauses: &[&str]) -> PropertySpec {
    PropertySpec {
        name: name.to_string(),
        kind,
        class: class.map(str::to_string),
        presence,
        clauses: clauses.iter().map(|s| s.to_string()).collect(),
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl SyntheticSpec {
    /// The built-in biography inventory.
    pub fn biographies() -> Self {
        let cities = [
            "paris", "london", "berlin", "madrid", "rome", "vienna", "dublin", "oslo", "lisbon", "prague", "new york",
            "los angeles", "buenos aires", "rio de janeiro", "cape town", "tokyo", "sydney", "toronto", "chicago",
            "boston", "munich", "milan", "athens", "cairo", "mumbai",
        ];
        let properties = vec![
            prop(
                "birth_date",
                ValueKind::Date { first_year: 1850, last_year: 1960 },
                None,
                0.95,
                &["was born on {v}", "was born {v}"],
            ),
            prop("birth_place", pool(&cities), Some("place"), 0.9, &["is a native of {v}", "grew up in {v}"]),
            prop(
                "nationality",
                pool(&[
                    "french", "english", "german", "spanish", "italian", "austrian", "irish", "norwegian",
                    "portuguese", "czech", "american", "argentine", "brazilian", "canadian", "australian", "japanese",
                ]),
                None,
                0.8,
                &["holds {v} citizenship", "is of {v} nationality"],
            ),
            prop(
                "occupation",
                pool(&[
                    "painter", "novelist", "footballer", "singer", "politician", "actor", "composer", "journalist",
                    "architect", "physicist", "poet", "cyclist", "sculptor", "historian", "guitarist",
                ]),
                None,
                1.0,
                &["works as a {v}", "is known as a {v}", "became a {v}"],
            ),
            prop(
                "education",
                pool(&[
                    "university of oxford", "university of cambridge", "university of vienna", "university of toronto",
                    "university of sydney", "university of chicago", "university of lisbon", "university of tokyo",
                ]),
                Some("organisation"),
                0.5,
                &["studied at the {v}", "graduated from the {v}"],
            ),
            prop(
                "team",
                pool(&[
                    "real madrid", "ac milan", "ajax", "celtic", "benfica", "porto", "juventus", "arsenal",
                    "boca juniors", "santos", "bayern munich", "olympiacos",
                ]),
                Some("organisation"),
                0.35,
                &["joined {v}", "signed with {v}"],
            ),
            prop(
                "position",
                pool(&["defender", "midfielder", "goalkeeper", "striker", "winger", "forward"]),
                None,
                0.35,
                &["played as a {v}", "featured as a {v}"],
            ),
            prop(
                "genre",
                pool(&["jazz", "blues", "folk", "opera", "punk", "reggae", "soul", "techno"]),
                None,
                0.3,
                &["performed {v} music", "is associated with {v}"],
            ),
            prop(
                "instrument",
                pool(&["piano", "violin", "cello", "trumpet", "saxophone", "harp"]),
                None,
                0.25,
                &["plays the {v}", "mastered the {v}"],
            ),
            prop(
                "award",
                pool(&[
                    "nobel prize", "pulitzer prize", "booker prize", "golden globe", "grammy award", "turing award",
                    "fields medal", "olympic medal",
                ]),
                None,
                0.3,
                &["received the {v}", "was awarded the {v}"],
            ),
            prop(
                "years_active",
                ValueKind::Year { first_year: 1870, last_year: 2000 },
                None,
                0.4,
                &["has been active since {v}", "started a career in {v}"],
            ),
            prop("spouse", ValueKind::PersonName, Some("person"), 0.45, &["married {v}", "was the spouse of {v}"]),
            prop("children", ValueKind::Count { min: 1, max: 6 }, None, 0.3, &["raised {v} children", "had {v} children"]),
            prop(
                "death_date",
                ValueKind::Date { first_year: 1900, last_year: 2010 },
                None,
                0.45,
                &["died on {v}", "passed away on {v}"],
            ),
            prop("death_place", pool(&cities), Some("place"), 0.35, &["was buried in {v}", "spent the final years in {v}"]),
        ];
        SyntheticSpec {
            properties,
            distractors: strings(&[
                "{s} was widely regarded as one of the most influential figures of the era .",
                "{s} remained a popular figure throughout the decade .",
                "{s} was known for a generous and modest character .",
                "the work drew considerable attention from critics and the public .",
                "{s} often spoke about the importance of hard work .",
                "many contemporaries admired the dedication shown early on .",
                "{s} gave numerous interviews over the years .",
                "the legacy continues to inspire a new generation .",
                "{s} was regarded as a pioneer in the field .",
                "{s} travelled widely and lived in several countries .",
                "{s} maintained a lifelong interest in literature and history .",
                "{s} was also active in charitable work .",
            ]),
            first_names: strings(&[
                "robert", "frances", "maria", "john", "anna", "pierre", "elena", "carlos", "sofia", "hans", "ingrid",
                "luca", "marta", "james", "helen", "pedro", "yuki", "omar", "clara", "victor", "alice", "tomas",
                "nina", "felix",
            ]),
            last_names: strings(&[
                "flaherty", "garcia", "rossi", "muller", "dubois", "silva", "novak", "jensen", "kowalski", "tanaka",
                "okafor", "larsen", "moreau", "fischer", "costa", "romano", "walsh", "berg", "santos", "ivanova",
                "keller", "lindqvist", "duarte", "hughes",
            ]),
            distractor_rate: 0.3,
            dropout_rate: 0.3,
            pair_rate: 0.4,
            swap_rate: 0.15,
            min_properties: 7,
        }
    }

    pub fn with_rates(mut self, distractor_rate: f64, dropout_rate: f64) -> Self {
        self.distractor_rate = distractor_rate;
        self.dropout_rate = dropout_rate;
        self
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.properties.is_empty() {
            return Err(CorpusError::Invalid("synthetic spec has zero properties".into()));
        }
        for rate in [self.distractor_rate, self.dropout_rate, self.pair_rate, self.swap_rate] {
            if !(0.0..1.0).contains(&rate) {
                return Err(CorpusError::Invalid(format!("rate {rate} outside [0, 1)")));
            }
        }
        for p in &self.properties {
            if p.clauses.is_empty() || p.clauses.iter().any(|c| !c.contains("{v}")) {
                return Err(CorpusError::Invalid(format!("property {} needs clauses with a {{v}} slot", p.name)));
            }
            if let ValueKind::Pool { values } = &p.kind {
                if values.is_empty() {
                    return Err(CorpusError::Invalid(format!("property {} has an empty value pool", p.name)));
                }
            }
        }
        if self.first_names.is_empty() || self.last_names.is_empty() {
            return Err(CorpusError::Invalid("name pools must be nonempty".into()));
        }
        if self.distractor_rate > 0.0 && self.distractors.is_empty() {
            return Err(CorpusError::Invalid("distractor rate > 0 without distractor sentences".into()));
        }
        Ok(())
    }

    fn sample_value(&self, kind: &ValueKind, rng: &mut ChaCha8Rng) -> String {
        match kind {
            ValueKind::Pool { values } => values.choose(rng).expect("validated").clone(),
            ValueKind::Date { first_year, last_year } => {
                let day = rng.gen_range(1..=28);
                let month = MONTHS[rng.gen_range(0..12)];
                format!("{day} {month} {}", rng.gen_range(*first_year..=*last_year))
            }
            ValueKind::Year { first_year, last_year } => rng.gen_range(*first_year..=*last_year).to_string(),
            ValueKind::Count { min, max } => rng.gen_range(*min..=*max).to_string(),
            ValueKind::PersonName => self.person_name(rng),
        }
    }

    fn person_name(&self, rng: &mut ChaCha8Rng) -> String {
        format!(
            "{} {}",
            self.first_names.choose(rng).expect("validated"),
            self.last_names.choose(rng).expect("validated")
        )
    }
}

struct Clause {
    tokens: Vec<String>,
    // property index per token, `None` for unaligned words
    links: Vec<Option<usize>>,
}

/// Generates `n_entities` examples; identical output for identical seed and
/// spec. Property sets do not yet contain the empty relation.
pub fn generate_synthetic_corpus(seed: u64, n_entities: usize, spec: &SyntheticSpec) -> Result<Vec<SyntheticExample>, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_entities)
        .map(|i| generate_entity(i, spec, &mut rng))
        .collect()
}

fn generate_entity(
    index: usize,
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticExample, CorpusError> {
    let entity_id = format!("e{index:05}");
    let pronoun = if rng.gen_bool(0.5) { "he" } else { "she" };

    // which properties this entity has, in canonical order
    let mut present: Vec<usize> = (0..spec.properties.len())
        .filter(|&k| rng.gen_bool(spec.properties[k].presence.clamp(0.0, 1.0)))
        .collect();
    let mut absent: Vec<usize> = (0..spec.properties.len()).filter(|k| !present.contains(k)).collect();
    absent.shuffle(rng);
    while present.len() + 1 < spec.min_properties && !absent.is_empty() {
        present.push(absent.pop().expect("nonempty"));
    }
    present.sort_unstable();

    let name = spec.person_name(rng);
    let mut pairs = vec![PropertyValue::new("name", &name)?];
    let mut pair_of_spec = vec![None; spec.properties.len()];
    for &k in &present {
        let ps = &spec.properties[k];
        let value = spec.sample_value(&ps.kind, rng);
        let mut pv = PropertyValue::new(&ps.name, &value)?;
        if let Some(c) = &ps.class {
            pv = pv.with_class(c);
        }
        pair_of_spec[k] = Some(pairs.len());
        pairs.push(pv);
    }
    // storage order carries no meaning
    let mut perm: Vec<usize> = (0..pairs.len()).collect();
    perm.shuffle(rng);
    let mut position = vec![0; pairs.len()];
    for (new, &old) in perm.iter().enumerate() {
        position[old] = new;
    }
    let stored: Vec<PropertyValue> = perm.iter().map(|&old| pairs[old].clone()).collect();
    let name_index = position[0];

    // verbalised subset, canonical order with occasional adjacent swaps
    let mut spoken: Vec<usize> = present.iter().copied().filter(|_| !rng.gen_bool(spec.dropout_rate)).collect();
    if spoken.is_empty() {
        spoken.push(*present.choose(rng).ok_or_else(|| CorpusError::Invalid("entity without properties".into()))?);
    }
    for j in 1..spoken.len() {
        if rng.gen_bool(spec.swap_rate) {
            spoken.swap(j - 1, j);
        }
    }

    let clauses: Vec<Clause> = spoken
        .iter()
        .map(|&k| {
            let ps = &spec.properties[k];
            let prop_index = position[pair_of_spec[k].expect("present")];
            let template = ps.clauses.choose(rng).expect("validated");
            let value = &pairs[pair_of_spec[k].expect("present")].value;
            let mut clause = Clause { tokens: Vec::new(), links: Vec::new() };
            for w in template.split_whitespace() {
                if w == "{v}" {
                    for t in value {
                        clause.tokens.push(t.clone());
                        clause.links.push(Some(prop_index));
                    }
                } else {
                    clause.tokens.push(w.to_string());
                    clause.links.push(None);
                }
            }
            clause
        })
        .collect();

    // group clauses into content sentences
    let mut groups: Vec<Vec<Clause>> = Vec::new();
    let mut it = clauses.into_iter().peekable();
    while let Some(c) = it.next() {
        let mut group = vec![c];
        if it.peek().is_some() && rng.gen_bool(spec.pair_rate) {
            group.push(it.next().expect("peeked"));
        }
        groups.push(group);
    }

    let name_tokens: Vec<String> = name.split_whitespace().map(str::to_string).collect();
    let mut sentences: Vec<Vec<String>> = Vec::new();
    let mut links: Vec<Link> = Vec::new();
    let mut reference = Vec::new();
    let mut distractor_sentences = Vec::new();
    let mut groups = groups.into_iter().enumerate().peekable();
    while groups.peek().is_some() {
        let s = sentences.len();
        if rng.gen_bool(spec.distractor_rate) {
            let template = spec.distractors.choose(rng).expect("validated");
            let sentence: Vec<String> = template
                .split_whitespace()
                .map(|w| if w == "{s}" { pronoun.to_string() } else { w.to_string() })
                .collect();
            distractor_sentences.push(s);
            sentences.push(sentence);
            continue;
        }
        let (g, group) = groups.next().expect("peeked");
        let mut sentence = Vec::new();
        if g == 0 {
            for t in &name_tokens {
                links.push(Link::new(s, sentence.len(), name_index));
                sentence.push(t.clone());
            }
        } else {
            sentence.push(pronoun.to_string());
        }
        for (c, clause) in group.iter().enumerate() {
            if c > 0 {
                sentence.push("and".to_string());
            }
            for (t, l) in clause.tokens.iter().zip(&clause.links) {
                if let Some(p) = l {
                    links.push(Link::new(s, sentence.len(), *p));
                }
                sentence.push(t.clone());
            }
        }
        sentence.push(".".to_string());
        reference.push(sentence.clone());
        sentences.push(sentence);
    }

    let example = Example::new(PropertySet::new(entity_id, stored), Document::new(sentences));
    let gold = AlignmentSet::from_links(links)?;
    gold.validate(&example.properties, &example.document)?;
    Ok(SyntheticExample {
        example,
        gold,
        reference,
        distractor_sentences,
    })
}
