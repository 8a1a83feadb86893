//! Byte-Pair Encoding over unicode codepoints with an end-of-word marker.
//!
//! Words are whitespace- or separator-delimited; the separator itself is
//! encoded as the dedicated SEP token and never participates in merges, so
//! subwords cannot cross form boundaries. The trainer recounts all adjacent
//! pairs each step and merges the most frequent pair, breaking ties by
//! (left symbol, right symbol) ascending.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::augment::SEPARATOR;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
pub const EOW: usize = 3;
pub const EOW_SYMBOL: &str = "</w>";
const N_SPECIALS: usize = 4;
const FORMAT_MAGIC: &str = "bpe/v1";

/// Minimum weighted occurrence count for a pair to earn a merge.
const MIN_PAIR_FREQ: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    /// Single-codepoint symbols in vocab order (ids 4..4+len).
    alphabet: Vec<String>,
    /// Ordered merge rules; rule i produced vocab id `4 + alphabet.len() + i`.
    merges: Vec<(String, String)>,
    /// id → symbol, including specials.
    vocab: Vec<String>,
    symbol_ids: BTreeMap<String, usize>,
}

impl BpeModel {
    fn build(alphabet: Vec<String>, merges: Vec<(String, String)>) -> BpeModel {
        let mut vocab: Vec<String> =
            vec!["<pad>".into(), "<unk>".into(), "<sep>".into(), EOW_SYMBOL.into()];
        vocab.extend(alphabet.iter().cloned());
        for (l, r) in &merges {
            vocab.push(format!("{l}{r}"));
        }
        let symbol_ids =
            vocab.iter().enumerate().skip(3).map(|(i, s)| (s.clone(), i)).collect();
        BpeModel { alphabet, merges, vocab, symbol_ids }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Tokenize: split into words on whitespace/separator, split words into
    /// codepoints plus the end-of-word marker, then apply the merge rules
    /// in training order. Unknown codepoints map to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for piece in split_text(text) {
            match piece {
                Piece::Separator => ids.push(SEP),
                Piece::Word(word) => {
                    let mut symbols = word_symbols(&word);
                    for (l, r) in &self.merges {
                        apply_merge(&mut symbols, l, r);
                    }
                    for sym in symbols {
                        ids.push(self.symbol_ids.get(&sym).copied().unwrap_or(UNK));
                    }
                }
            }
        }
        ids
    }

    /// Inverse of [`encode`] on UNK-free canonical text (single spaces,
    /// separators directly between words). End-of-word markers become a
    /// pending space that the next word flushes and a SEP absorbs.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        let mut pending_space = false;
        for &id in ids {
            if id >= self.vocab.len() {
                return Err(Error::Lookup(format!(
                    "token id {id} out of range for vocab of {}",
                    self.vocab.len()
                )));
            }
            match id {
                PAD => {}
                UNK => {
                    if pending_space {
                        out.push(' ');
                        pending_space = false;
                    }
                    out.push('\u{FFFD}');
                }
                SEP => {
                    pending_space = false;
                    out.push(SEPARATOR);
                }
                _ => {
                    if pending_space {
                        out.push(' ');
                        pending_space = false;
                    }
                    let sym = &self.vocab[id];
                    if let Some(stem) = sym.strip_suffix(EOW_SYMBOL) {
                        out.push_str(stem);
                        pending_space = true;
                    } else {
                        out.push_str(sym);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Plain-text format: `bpe/v1 <vocab_size>`, one merge per line
    /// (`left<SPACE>right`), then a `#alphabet` section with one symbol per
    /// line. The vocab is rebuilt from alphabet + merges on load.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = format!("{FORMAT_MAGIC} {}\n", self.vocab.len());
        for (l, r) in &self.merges {
            out.push_str(&format!("{l} {r}\n"));
        }
        out.push_str("#alphabet\n");
        for sym in &self.alphabet {
            out.push_str(sym);
            out.push('\n');
        }
        fs::write(path.as_ref(), out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<BpeModel> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<BpeModel> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty BPE file".into()))?;
        let declared: usize = match header.split(' ').collect::<Vec<_>>()[..] {
            [FORMAT_MAGIC, n] => n
                .parse()
                .map_err(|_| Error::Format(format!("bad vocab size in header {header:?}")))?,
            _ => {
                return Err(Error::Format(format!(
                    "expected header `{FORMAT_MAGIC} <vocab_size>`, got {header:?}"
                )))
            }
        };
        let mut merges = Vec::new();
        let mut alphabet = Vec::new();
        let mut in_alphabet = false;
        for line in lines {
            if line == "#alphabet" {
                in_alphabet = true;
                continue;
            }
            if in_alphabet {
                if line.chars().count() != 1 {
                    return Err(Error::Format(format!(
                        "alphabet entry {line:?} is not a single symbol"
                    )));
                }
                alphabet.push(line.to_string());
            } else {
                let (l, r) = line.split_once(' ').ok_or_else(|| {
                    Error::Format(format!("merge line {line:?} is not `left right`"))
                })?;
                merges.push((l.to_string(), r.to_string()));
            }
        }
        if !in_alphabet {
            return Err(Error::Format("missing #alphabet section".into()));
        }
        let actual = N_SPECIALS + alphabet.len() + merges.len();
        if actual != declared {
            return Err(Error::Format(format!(
                "vocab size mismatch: header declares {declared}, contents give {actual} \
                 (truncated file?)"
            )));
        }
        Ok(BpeModel::build(alphabet, merges))
    }
}

enum Piece {
    Word(String),
    Separator,
}

fn split_text(text: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c == SEPARATOR {
            if !word.is_empty() {
                pieces.push(Piece::Word(std::mem::take(&mut word)));
            }
            pieces.push(Piece::Separator);
        } else if c.is_whitespace() {
            if !word.is_empty() {
                pieces.push(Piece::Word(std::mem::take(&mut word)));
            }
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        pieces.push(Piece::Word(word));
    }
    pieces
}

fn word_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    symbols.push(EOW_SYMBOL.to_string());
    symbols
}

/// Replace every adjacent (left, right) occurrence with the concatenated
/// symbol, scanning left to right.
fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            symbols[i] = format!("{left}{right}");
            symbols.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

/// Greedy merge training. Stops at the vocab budget or when no pair occurs
/// at least [`MIN_PAIR_FREQ`] times (weighted by word frequency).
pub fn train_bpe(corpus_lines: &[String], vocab_size: usize) -> Result<BpeModel> {
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus_lines {
        for piece in split_text(line) {
            if let Piece::Word(w) = piece {
                *word_freq.entry(w).or_insert(0) += 1;
            }
        }
    }
    if word_freq.is_empty() {
        return Err(Error::Config("BPE training corpus contains no words".into()));
    }

    let mut chars: Vec<String> =
        word_freq.keys().flat_map(|w| w.chars()).map(|c| c.to_string()).collect();
    chars.sort();
    chars.dedup();

    let base = N_SPECIALS + chars.len();
    if vocab_size < base {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} is below the {base} needed for specials + alphabet"
        )));
    }

    let mut words: Vec<(Vec<String>, u64)> =
        word_freq.iter().map(|(w, &f)| (word_symbols(w), f)).collect();
    let mut merges: Vec<(String, String)> = Vec::new();

    while base + merges.len() < vocab_size {
        let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (symbols, freq) in &words {
            for pair in symbols.windows(2) {
                *pair_counts.entry((pair[0].clone(), pair[1].clone())).or_insert(0) += freq;
            }
        }
        // BTreeMap iterates in (left, right) ascending order, so keeping
        // only strictly greater counts realizes the lexicographic tie-break.
        let mut best: Option<(&(String, String), u64)> = None;
        for (pair, &count) in &pair_counts {
            if best.map_or(true, |(_, c)| count > c) {
                best = Some((pair, count));
            }
        }
        let Some(((left, right), count)) = best else { break };
        if count < MIN_PAIR_FREQ {
            break;
        }
        let (left, right) = (left.clone(), right.clone());
        for (symbols, _) in &mut words {
            apply_merge(symbols, &left, &right);
        }
        merges.push((left, right));
    }

    Ok(BpeModel::build(chars, merges))
}
