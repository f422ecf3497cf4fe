//! Byte-pair encoding over a joint multilingual corpus, and the shared
//! vocabulary built on top of it.
//!
//! Words are split into characters and the last character carries the
//! end-of-word marker `</w>`, so `"low"` starts life as `l o w</w>`. Learned
//! rules are applied lowest rank first, which makes segmentation reversible:
//! concatenating the subwords and turning each marker into a space restores
//! the input.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

type Pair = (String, String);

/// Ordered merge rules; rank is the position in the list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeTable {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
}

impl MergeTable {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::format(
                    "merge table",
                    format!("duplicate rule {} {} at rank {rank}", pair.0, pair.1),
                ));
            }
        }
        Ok(Self { merges, ranks })
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        self.ranks
            .get(&(left.to_string(), right.to_string()))
            .copied()
    }

    /// Segments one word.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            symbols = merge_pair(&symbols, l, r);
        }
        symbols
    }

    /// Segments a whitespace-separated sentence.
    pub fn apply(&self, sentence: &str) -> Vec<String> {
        let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
        let mut out = Vec::new();
        for word in sentence.split_whitespace() {
            let seg = cache.entry(word).or_insert_with(|| self.apply_word(word));
            out.extend(seg.iter().cloned());
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        for (l, r) in &self.merges {
            text.push_str(l);
            text.push(' ');
            text.push_str(r);
            text.push('\n');
        }
        fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let merges = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, line)| {
                let mut parts = line.split(' ');
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                        Ok((l.to_string(), r.to_string()))
                    }
                    _ => Err(Error::format(
                        "merge table",
                        format!("line {}: expected two space-separated symbols", i + 1),
                    )),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_merges(merges)
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `num_merges` rules from whitespace-tokenized sentences.
///
/// Each round merges the most frequent adjacent pair; ties go to the
/// lexicographically smallest pair. Learning stops early once no pair occurs
/// at least twice.
pub fn learn_bpe<I, T>(corpus: I, num_merges: usize) -> Result<MergeTable>
where
    I: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    for sentence in corpus {
        for w in sentence.as_ref().split_whitespace() {
            *word_freq.entry(w.to_string()).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::Invalid(
            "cannot learn BPE from an empty corpus".into(),
        ));
    }
    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .into_iter()
        .map(|(w, c)| (initial_symbols(&w), c))
        .collect();

    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, freq) in &words {
            for w in syms.windows(2) {
                *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += freq;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (l, r) = (l.to_string(), r.to_string());
        for (syms, _) in words.iter_mut() {
            if syms.windows(2).any(|w| w[0] == l && w[1] == r) {
                *syms = merge_pair(syms, &l, &r);
            }
        }
        merges.push((l, r));
    }
    MergeTable::from_merges(merges)
}

/// Joins subwords back into a sentence: markers become word boundaries.
pub fn detokenize<T: AsRef<str>>(subwords: &[T]) -> String {
    let mut out = String::new();
    for s in subwords {
        let s = s.as_ref();
        match s.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                out.push_str(stem);
                out.push(' ');
            }
            None => out.push_str(s),
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Token ↔ id map shared by encoder and decoder. Ids 0–3 are the specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from the non-special tokens, in id order starting at 4.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let all: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens)
            .collect();
        let mut index = HashMap::with_capacity(all.len());
        for (id, t) in all.iter().enumerate() {
            if index.insert(t.clone(), id).is_some() {
                return Err(Error::format(
                    "vocabulary",
                    format!("duplicate token {t:?}"),
                ));
            }
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<T: AsRef<str>>(&self, subwords: &[T]) -> Vec<usize> {
        subwords.iter().map(|s| self.id(s.as_ref())).collect()
    }

    /// Ids back to subword strings, dropping PAD/BOS/EOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.token(id).unwrap_or(SPECIALS[UNK]).to_string())
            .collect()
    }

    /// Ids straight to a surface sentence.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        detokenize(&self.decode(ids))
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIALS.len() || lines[..SPECIALS.len()] != SPECIALS {
            return Err(Error::format(
                "vocabulary",
                format!("first four lines must be {SPECIALS:?}"),
            ));
        }
        Self::from_tokens(lines[SPECIALS.len()..].iter().map(|s| s.to_string()))
    }
}

/// Keeps the `cap − 4` most frequent subwords (ties broken lexicographically)
/// after the four specials.
pub fn build_vocab<I, T>(segmented: I, cap: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = Vec<T>>,
    T: AsRef<str>,
{
    if cap < SPECIALS.len() + 1 {
        return Err(Error::Invalid(format!("vocabulary cap {cap} is below 5")));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for sentence in segmented {
        for s in sentence {
            *counts.entry(s.as_ref().to_string()).or_default() += 1;
        }
    }
    for s in SPECIALS {
        counts.remove(s);
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    ranked.truncate(cap - SPECIALS.len());
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}
