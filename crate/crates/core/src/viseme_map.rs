//! Text → phoneme → viseme labelling.
//!
//! Words are looked up in a CMU-format pronouncing dictionary, stress digits
//! are dropped, and each phoneme is mapped to one of 13 viseme classes. Four
//! special tokens (space, start, end, padding) complete the 17-class output
//! alphabet of the visual model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const NUM_VISEMES: usize = 13;
pub const NUM_CLASSES: usize = 17;

/// The phrase inventory used by the synthetic corpus.
pub const PHRASES: [&str; 10] = [
    "excuse me",
    "goodbye",
    "hello",
    "how are you",
    "nice to meet you",
    "see you",
    "i am sorry",
    "thank you",
    "have a good time",
    "you are welcome",
];

const BUNDLED_DICTIONARY: &str = include_str!("../data/cmudict-phrases.dict");
const BUNDLED_VISEME_TABLE: &str = include_str!("../data/lee_yook_visemes.csv");

/// ARPAbet symbol without stress digits.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Phoneme(String);

impl Phoneme {
    /// Normalizes a raw dictionary token (`AH0` → `AH`).
    pub fn parse(raw: &str) -> Option<Self> {
        let symbol: String = raw
            .chars()
            .filter(|c| !c.is_ascii_digit())
            .map(|c| c.to_ascii_uppercase())
            .collect();
        let valid = !symbol.is_empty()
            && symbol.chars().all(|c| c.is_ascii_uppercase())
            && raw.chars().all(|c| c.is_ascii_alphanumeric());
        valid.then_some(Self(symbol))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Phoneme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisemeKind {
    Viseme(u8),
    Space,
    StartOfSentence,
    EndOfSentence,
    Pad,
}

/// One of the 17 output classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VisemeClass(u8);

impl VisemeClass {
    pub const SPACE: Self = Self(13);
    pub const SOS: Self = Self(14);
    pub const EOS: Self = Self(15);
    pub const PAD: Self = Self(16);

    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_CLASSES {
            Ok(Self(id as u8))
        } else {
            Err(Error::LabelRange(id))
        }
    }

    pub fn viseme(id: u8) -> Result<Self> {
        if (id as usize) < NUM_VISEMES {
            Ok(Self(id))
        } else {
            Err(Error::LabelRange(id as usize))
        }
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn kind(self) -> VisemeKind {
        match self.0 {
            13 => VisemeKind::Space,
            14 => VisemeKind::StartOfSentence,
            15 => VisemeKind::EndOfSentence,
            16 => VisemeKind::Pad,
            v => VisemeKind::Viseme(v),
        }
    }

    pub fn is_special(self) -> bool {
        self.id() >= NUM_VISEMES
    }
}

/// Ground-truth or decoded label sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VisemeSequence(Vec<VisemeClass>);

impl VisemeSequence {
    pub fn new(labels: Vec<VisemeClass>) -> Self {
        Self(labels)
    }

    pub fn from_ids(ids: &[usize]) -> Result<Self> {
        ids.iter().map(|&i| VisemeClass::new(i)).collect::<Result<_>>().map(Self)
    }

    pub fn labels(&self) -> &[VisemeClass] {
        &self.0
    }

    pub fn ids(&self) -> Vec<usize> {
        self.0.iter().map(|c| c.id()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PronouncingDictionary {
    entries: BTreeMap<String, Vec<Vec<Phoneme>>>,
    checksum: String,
}

impl PronouncingDictionary {
    /// The dictionary subset shipped with the crate.
    pub fn bundled() -> Self {
        parse_dictionary(BUNDLED_DICTIONARY.as_bytes()).expect("bundled dictionary parses")
    }

    /// All pronunciations of a word, in file order.
    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<Phoneme>]> {
        self.entries.get(&word.to_ascii_uppercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Hex SHA-256 of the source text.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn phoneme_inventory(&self) -> BTreeSet<Phoneme> {
        self.entries.values().flatten().flatten().cloned().collect()
    }
}

/// Parses the cmudict text format: `;;;` comments, `WORD  PH1 PH2 ...`
/// entries and `WORD(n)` alternate pronunciations.
pub fn parse_dictionary(reader: impl BufRead) -> Result<PronouncingDictionary> {
    let mut entries: BTreeMap<String, Vec<Vec<Phoneme>>> = BTreeMap::new();
    let mut hasher = Sha256::new();

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
        let lineno = i + 1;
        let content = line.split(" #").next().unwrap_or("").trim();
        if content.is_empty() || content.starts_with(";;;") {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let head = tokens.next().unwrap_or_default();
        let word = base_word(head).ok_or_else(|| Error::DictionaryParse {
            line: lineno,
            reason: format!("malformed headword `{head}`"),
        })?;
        let phonemes = tokens
            .map(|t| {
                Phoneme::parse(t).ok_or_else(|| Error::DictionaryParse {
                    line: lineno,
                    reason: format!("invalid phoneme `{t}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if phonemes.is_empty() {
            return Err(Error::DictionaryParse {
                line: lineno,
                reason: "entry has no phonemes".into(),
            });
        }
        entries.entry(word).or_default().push(phonemes);
    }

    if entries.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let checksum = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(PronouncingDictionary { entries, checksum })
}

/// `HELLO(2)` → `HELLO`.
fn base_word(head: &str) -> Option<String> {
    let word = match head.find('(') {
        Some(open) => {
            let suffix = &head[open..];
            let digits = suffix.strip_prefix('(')?.strip_suffix(')')?;
            if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
                return None;
            }
            &head[..open]
        }
        None => head,
    };
    (!word.is_empty()).then(|| word.to_ascii_uppercase())
}

#[derive(Clone, Debug)]
pub struct VisemeTable {
    map: BTreeMap<Phoneme, VisemeClass>,
}

impl VisemeTable {
    pub fn bundled() -> Self {
        parse_viseme_table(BUNDLED_VISEME_TABLE.as_bytes()).expect("bundled viseme table parses")
    }

    pub fn get(&self, p: &Phoneme) -> Option<VisemeClass> {
        self.map.get(p).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Fails with the first phoneme of `dict` that has no mapping.
    pub fn check_covers(&self, dict: &PronouncingDictionary) -> Result<()> {
        match dict.phoneme_inventory().into_iter().find(|p| !self.map.contains_key(p)) {
            Some(p) => Err(Error::UnmappedPhoneme(p.to_string())),
            None => Ok(()),
        }
    }
}

/// Reads a `phoneme,viseme_id` CSV. Exactly the ids `0..13` must occur.
pub fn parse_viseme_table(reader: impl BufRead) -> Result<VisemeTable> {
    let mut map = BTreeMap::new();
    let mut lines = reader.lines().enumerate();
    let bad = |line: usize, reason: String| Error::VisemeTableParse { line, reason };

    let header = lines.next().map(|(_, h)| h).transpose()?;
    if header.as_deref().map(str::trim) != Some("phoneme,viseme_id") {
        return Err(bad(1, "expected header `phoneme,viseme_id`".into()));
    }
    for (i, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (ph, id) = line
            .split_once(',')
            .ok_or_else(|| bad(i + 1, "expected two columns".into()))?;
        let phoneme = Phoneme::parse(ph.trim()).ok_or_else(|| bad(i + 1, format!("invalid phoneme `{ph}`")))?;
        let id: u8 = id
            .trim()
            .parse()
            .map_err(|_| bad(i + 1, format!("invalid viseme id `{id}`")))?;
        let class = VisemeClass::viseme(id).map_err(|_| bad(i + 1, format!("viseme id {id} outside 0..13")))?;
        if map.insert(phoneme.clone(), class).is_some() {
            return Err(bad(i + 1, format!("duplicate phoneme `{phoneme}`")));
        }
    }

    let distinct: BTreeSet<_> = map.values().collect();
    if distinct.len() != NUM_VISEMES {
        return Err(Error::VisemeTableCoverage {
            found: distinct.len(),
            expected: NUM_VISEMES,
        });
    }
    Ok(VisemeTable { map })
}

/// One phoneme list per whitespace-separated word, using the first listed
/// pronunciation.
pub fn text_to_phonemes(text: &str, dict: &PronouncingDictionary) -> Result<Vec<Vec<Phoneme>>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    text.split_whitespace()
        .map(|word| {
            dict.pronunciations(word)
                .and_then(|p| p.first())
                .cloned()
                .ok_or_else(|| Error::OutOfVocabulary(word.to_string()))
        })
        .collect()
}

pub fn phonemes_to_visemes(phonemes: &[Phoneme], table: &VisemeTable) -> Result<Vec<VisemeClass>> {
    phonemes
        .iter()
        .map(|p| table.get(p).ok_or_else(|| Error::UnmappedPhoneme(p.to_string())))
        .collect()
}

/// `[SoS] visemes(w1) [Space] visemes(w2) ... [EoS]`.
pub fn encode_utterance(text: &str, dict: &PronouncingDictionary, table: &VisemeTable) -> Result<VisemeSequence> {
    let words = text_to_phonemes(text, dict)?;
    let mut labels = vec![VisemeClass::SOS];
    for (i, word) in words.iter().enumerate() {
        if i > 0 {
            labels.push(VisemeClass::SPACE);
        }
        labels.extend(phonemes_to_visemes(word, table)?);
    }
    labels.push(VisemeClass::EOS);
    Ok(VisemeSequence(labels))
}

/// Dictionary and viseme table used together.
#[derive(Clone, Debug)]
pub struct Lexicon {
    pub dictionary: PronouncingDictionary,
    pub table: VisemeTable,
}

impl Lexicon {
    pub fn new(dictionary: PronouncingDictionary, table: VisemeTable) -> Result<Self> {
        table.check_covers(&dictionary)?;
        Ok(Self { dictionary, table })
    }

    pub fn bundled() -> Self {
        Self::new(PronouncingDictionary::bundled(), VisemeTable::bundled()).expect("bundled lexicon is consistent")
    }

    pub fn encode(&self, text: &str) -> Result<VisemeSequence> {
        encode_utterance(text, &self.dictionary, &self.table)
    }
}
