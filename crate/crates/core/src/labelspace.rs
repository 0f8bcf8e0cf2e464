//! HOI class vocabularies and prompt sentences.
//!
//! A class list is a plain text file with one `verb object` pair per line,
//! e.g. `ride bicycle` or `hop_on motorcycle`. Line order fixes the column
//! order of every label, embedding and weight matrix built against it.
//!
//! Each class compiles to a sentence such as "a person riding a bicycle",
//! which is what a text encoder sees when producing initial classifier
//! weights.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Verb that marks "person present, no interaction with the object".
pub const NO_INTERACTION: &str = "no_interaction";

const BUILTIN_EXCEPTIONS: &str = include_str!("../data/gerund_exceptions.txt");

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HoiLabel {
    pub verb: String,
    pub object: String,
    pub index: usize,
}

impl fmt::Display for HoiLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.verb, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassList {
    labels: Vec<HoiLabel>,
}

impl ClassList {
    /// Parses a class-list document. Indices follow line order.
    pub fn parse(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::EmptyClassList);
        }
        let mut labels = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let [verb, object] = tokens[..] else {
                return Err(Error::MalformedLine {
                    line: lineno + 1,
                    tokens: tokens.len(),
                });
            };
            if !seen.insert((verb, object)) {
                return Err(Error::DuplicateClass {
                    line: lineno + 1,
                    verb: verb.to_string(),
                    object: object.to_string(),
                });
            }
            labels.push(HoiLabel {
                verb: verb.to_string(),
                object: object.to_string(),
                index: labels.len(),
            });
        }
        Ok(Self { labels })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[HoiLabel] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> Option<&HoiLabel> {
        self.labels.get(index)
    }

    /// Canonical LF-terminated rendering, one `verb object` per line.
    pub fn to_text(&self) -> String {
        self.labels.iter().map(|l| format!("{l}\n")).collect()
    }

    /// Hex SHA-256 of [`ClassList::to_text`]; stored in matrix sidecars.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn prompts(&self, table: &GerundTable) -> Vec<Prompt> {
        self.labels.iter().map(|l| table.make_prompt(l)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub source: HoiLabel,
}

/// Irregular present participles, consulted before the spelling rules.
#[derive(Debug, Clone, Default)]
pub struct GerundTable {
    exceptions: HashMap<String, String>,
}

impl GerundTable {
    /// Parses `verb gerund` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut exceptions = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let [verb, gerund] = tokens[..] else {
                return Err(Error::MalformedLine {
                    line: lineno + 1,
                    tokens: tokens.len(),
                });
            };
            exceptions.insert(verb.to_string(), gerund.to_string());
        }
        Ok(Self { exceptions })
    }

    /// The exception table shipped with the crate.
    pub fn builtin() -> &'static GerundTable {
        static TABLE: OnceLock<GerundTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            GerundTable::parse(BUILTIN_EXCEPTIONS).expect("builtin exception table is well formed")
        })
    }

    pub fn len(&self) -> usize {
        self.exceptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exceptions.is_empty()
    }

    /// Present participle of `verb`. Rules are tried in order:
    ///
    /// 1. exception table lookup on the whole token;
    /// 2. multiword tokens (`hop_on`) gerundize the first word only and
    ///    join the rest with spaces;
    /// 3. a final `e` after a non-`e` letter is dropped when the remaining
    ///    stem still has a vowel (`ride` -> `riding`, but `see` -> `seeing`);
    /// 4. one-syllable words ending consonant-vowel-consonant double the
    ///    final consonant unless it is `w`, `x` or `y` (`cut` -> `cutting`);
    /// 5. otherwise append `ing`.
    pub fn gerundize(&self, verb: &str) -> String {
        if let Some(g) = self.exceptions.get(verb) {
            return g.clone();
        }
        if let Some((first, rest)) = verb.split_once('_') {
            let mut out = self.gerundize(first);
            for word in rest.split('_').filter(|w| !w.is_empty()) {
                out.push(' ');
                out.push_str(word);
            }
            return out;
        }
        let chars: Vec<char> = verb.chars().collect();
        let n = chars.len();

        if n >= 2 && chars[n - 1] == 'e' && chars[n - 2] != 'e' {
            let stem: String = chars[..n - 1].iter().collect();
            if stem.chars().any(|c| is_vowel(c) || c == 'y') {
                return stem + "ing";
            }
        }

        if n >= 3 && syllables(&chars) == 1 {
            let (c1, v, c2) = (chars[n - 3], chars[n - 2], chars[n - 1]);
            if !is_vowel(c1) && is_vowel(v) && !is_vowel(c2) && !matches!(c2, 'w' | 'x' | 'y') {
                return format!("{verb}{c2}ing");
            }
        }

        format!("{verb}ing")
    }

    /// "a person <verb-ing> a|an <object>", or "a person and a|an <object>"
    /// for the no-interaction verb.
    pub fn make_prompt(&self, label: &HoiLabel) -> Prompt {
        let object = label.object.replace('_', " ");
        let article = article_for(&object);
        let text = if label.verb == NO_INTERACTION {
            format!("a person and {article} {object}")
        } else {
            format!("a person {} {article} {object}", self.gerundize(&label.verb))
        };
        Prompt {
            text,
            source: label.clone(),
        }
    }
}

pub fn gerundize(verb: &str) -> String {
    GerundTable::builtin().gerundize(verb)
}

pub fn make_prompt(label: &HoiLabel) -> Prompt {
    GerundTable::builtin().make_prompt(label)
}

fn is_vowel(c: char) -> bool {
    matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Number of maximal vowel runs; a rough syllable count.
fn syllables(chars: &[char]) -> usize {
    let mut count = 0;
    let mut prev = false;
    for &c in chars {
        let v = is_vowel(c);
        if v && !prev {
            count += 1;
        }
        prev = v;
    }
    count
}

fn article_for(noun: &str) -> &'static str {
    match noun.chars().next() {
        Some(c) if is_vowel(c) => "an",
        _ => "a",
    }
}
