//! Tokenisation, sentence splitting and date normalisation.
//!
//! One rule set is used everywhere: corpus ingestion, evaluation and the
//! first-sentence protocol.

const LEADING: &[char] = &['(', '[', '{', '"', '\'', '«', '`', '“', '‘'];
const TRAILING: &[char] = &[')', ']', '}', '"', '\'', '»', ',', '.', ';', ':', '!', '?', '”', '’'];
const TERMINATORS: &[char] = &['.', '!', '?'];

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "no", "mt", "ft", "gen", "col", "lt", "sgt", "rev",
    "inc", "ltd", "co", "corp", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

/// True for tokens that end a sentence.
pub fn is_terminator(token: &str) -> bool {
    token.len() == 1 && token.chars().all(|c| TERMINATORS.contains(&c))
}

fn is_abbreviation(word: &str) -> bool {
    let w = word.trim_end_matches('.').to_lowercase();
    let letters: Vec<char> = w.chars().collect();
    // Single-letter initials ("H.") and dotted acronyms ("U.S").
    if letters.len() == 1 && letters[0].is_alphabetic() {
        return true;
    }
    if w.contains('.') && w.split('.').all(|p| p.chars().count() <= 1) {
        return true;
    }
    ABBREVIATIONS.contains(&w.as_str())
}

/// Lowercased tokens: whitespace split, then leading/trailing punctuation
/// peeled off as separate tokens. Word-internal punctuation (hyphens,
/// decimal points, apostrophes) stays; initials and known abbreviations
/// keep their period.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut core = chunk;
        let mut lead = Vec::new();
        while let Some(c) = core.chars().next() {
            if LEADING.contains(&c) && core.len() > c.len_utf8() {
                lead.push(c.to_string());
                core = &core[c.len_utf8()..];
            } else {
                break;
            }
        }
        let mut trail = Vec::new();
        while let Some(c) = core.chars().last() {
            if !TRAILING.contains(&c) || core.len() == c.len_utf8() {
                break;
            }
            if c == '.' && is_abbreviation(core) {
                break;
            }
            trail.push(c.to_string());
            core = &core[..core.len() - c.len_utf8()];
        }
        out.extend(lead);
        out.push(core.to_lowercase());
        out.extend(trail.into_iter().rev());
    }
    out
}

/// Splits at `.`, `!` or `?` (plus closing quotes/brackets) followed by
/// whitespace and an uppercase letter, except after initials and
/// abbreviations.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if TERMINATORS.contains(&c) {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, ')' | ']' | '"' | '\'' | '”' | '’') {
                j += 1;
            }
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let boundary = k > j && k < chars.len() && chars[k].1.is_uppercase();
            let word_start = text[..pos].rfind(char::is_whitespace).map_or(0, |w| w + 1);
            let word = &text[word_start..=pos];
            if boundary && !(c == '.' && is_abbreviation(word)) {
                let end = if j < chars.len() { chars[j].0 } else { text.len() };
                let s = text[start..end].trim();
                if !s.is_empty() {
                    sentences.push(s.to_string());
                }
                start = chars[k].0;
                i = k;
                continue;
            }
        }
        i += 1;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        sentences.push(rest.to_string());
    }
    sentences
}

/// Tokens up to and including the first sentence terminator; the whole
/// sequence when there is none.
pub fn first_sentence<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let end = tokens
        .iter()
        .position(|t| is_terminator(t.as_ref()))
        .map_or(tokens.len(), |i| i + 1);
    tokens[..end].iter().map(|t| t.as_ref().to_string()).collect()
}

fn parse_date(s: &str) -> Option<(u32, u32, u32)> {
    let valid = |y: u32, m: u32, d: u32| (1..=12).contains(&m) && (1..=31).contains(&d) && y > 0;
    let nums = |parts: &[&str]| -> Option<Vec<u32>> { parts.iter().map(|p| p.parse().ok()).collect() };
    if let [y, m, d] = s.split('-').collect::<Vec<_>>()[..] {
        if y.len() == 4 && (1..=2).contains(&m.len()) && (1..=2).contains(&d.len()) {
            let v = nums(&[y, m, d])?;
            return valid(v[0], v[1], v[2]).then_some((v[0], v[1], v[2]));
        }
    }
    if let [m, d, y] = s.split('/').collect::<Vec<_>>()[..] {
        if y.len() == 4 && (1..=2).contains(&m.len()) && (1..=2).contains(&d.len()) {
            let v = nums(&[m, d, y])?;
            return valid(v[2], v[0], v[1]).then_some((v[2], v[0], v[1]));
        }
    }
    None
}

/// `Month d, yyyy` for a `yyyy-mm-dd` or `mm/dd/yyyy` string.
pub fn date_surface(s: &str) -> Option<String> {
    let (y, m, d) = parse_date(s)?;
    Some(format!("{} {}, {}", MONTHS[m as usize - 1], d, y))
}

/// Rewrites numeric dates in running text to their month-name surface
/// form. Other text passes through.
pub fn normalize_dates(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        let ws = rest.find(|c: char| !c.is_whitespace()).unwrap_or(rest.len());
        out.push_str(&rest[..ws]);
        rest = &rest[ws..];
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let word = &rest[..end];
        let lead = word.len() - word.trim_start_matches(LEADING).len();
        let core_end = word.trim_end_matches(TRAILING).len().max(lead);
        match date_surface(&word[lead..core_end]) {
            Some(surface) => {
                out.push_str(&word[..lead]);
                out.push_str(&surface);
                out.push_str(&word[core_end..]);
            }
            None => out.push_str(word),
        }
        rest = &rest[end..];
    }
    out
}

/// Token-level variant: a single date token becomes
/// `[month, day, ",", year]`.
pub fn normalize_date_token(token: &str) -> Option<Vec<String>> {
    date_surface(token).map(|s| tokenize(&s))
}

/// Digits with optional internal `,` or `.` separators.
pub fn is_numeric(token: &str) -> bool {
    let mut digits = 0;
    let chars: Vec<char> = token.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        if c.is_ascii_digit() {
            digits += 1;
        } else if (*c == ',' || *c == '.') && i > 0 && i + 1 < chars.len() {
            continue;
        } else {
            return false;
        }
    }
    digits > 0
}

/// Four-digit numbers read as calendar years.
pub fn is_year(token: &str) -> bool {
    token.len() == 4 && token.chars().all(|c| c.is_ascii_digit()) && {
        let y: u32 = token.parse().unwrap_or(0);
        (1000..=2099).contains(&y)
    }
}
