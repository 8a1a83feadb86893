//! Brute-force BPE reference. Structurally independent from the library
//! trainer: it keeps one symbol sequence per word *occurrence* (no frequency
//! table), recounts every pair from scratch each step with a HashMap, and
//! picks the winner by an explicit full sort (count descending, then pair
//! ascending). Any mistake in the trainer's frequency weighting, tie-break,
//! or merge application shows up as a diverging merge list.

use std::collections::HashMap;

use morphclass::augment::SEPARATOR;
use morphclass::numerics::Rng;

const EOW: &str = "</w>";
const N_SPECIALS: usize = 4;
const MIN_PAIR_FREQ: u64 = 2;

fn occurrence_symbols(lines: &[String]) -> Vec<Vec<String>> {
    let mut words = Vec::new();
    for line in lines {
        for w in line.split(|c: char| c.is_whitespace() || c == SEPARATOR) {
            if w.is_empty() {
                continue;
            }
            let mut syms: Vec<String> = w.chars().map(String::from).collect();
            syms.push(EOW.to_string());
            words.push(syms);
        }
    }
    words
}

/// Greedy non-overlapping left-to-right replacement, building a fresh vec.
fn replace_pair(word: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == left && word[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(word[i].clone());
            i += 1;
        }
    }
    out
}

/// Merge list the trainer must reproduce for this corpus and budget.
pub fn reference_merges(lines: &[String], vocab_size: usize) -> Vec<(String, String)> {
    let mut words = occurrence_symbols(lines);
    let mut alphabet: Vec<String> = words
        .iter()
        .flatten()
        .filter(|s| s.as_str() != EOW)
        .cloned()
        .collect();
    alphabet.sort();
    alphabet.dedup();
    let base = N_SPECIALS + alphabet.len();

    let mut merges = Vec::new();
    while base + merges.len() < vocab_size {
        let mut counts: HashMap<(String, String), u64> = HashMap::new();
        for w in &words {
            for pair in w.windows(2) {
                *counts.entry((pair[0].clone(), pair[1].clone())).or_insert(0) += 1;
            }
        }
        let mut items: Vec<((String, String), u64)> = counts.into_iter().collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let Some(((left, right), count)) = items.into_iter().next() else { break };
        if count < MIN_PAIR_FREQ {
            break;
        }
        for w in &mut words {
            *w = replace_pair(w, &left, &right);
        }
        merges.push((left, right));
    }
    merges
}

/// Small random corpus: up to 5 distinct characters, words up to 30 chars,
/// repeated words and separators included so ties and weighting are
/// exercised. Returns the lines plus a vocab budget (alternating between a
/// tight cap and run-to-exhaustion).
pub fn random_corpus(seed: u64) -> (Vec<String>, usize) {
    let mut rng = Rng::new(seed).split("bpe-oracle/corpus");
    let alphabet_size = 1 + (rng.next_u64() % 5) as usize;
    let alphabet: Vec<char> = "abcde".chars().take(alphabet_size).collect();

    let n_distinct = 1 + (rng.next_u64() % 8) as usize;
    let mut pool: Vec<String> = (0..n_distinct)
        .map(|_| {
            let len = 1 + (rng.next_u64() % 30) as usize;
            (0..len)
                .map(|_| alphabet[(rng.next_u64() % alphabet.len() as u64) as usize])
                .collect()
        })
        .collect();
    // Repeat some words so pair counts are weighted, not just presence.
    let n_total = n_distinct + (rng.next_u64() % 10) as usize;
    while pool.len() < n_total {
        let pick = (rng.next_u64() % n_distinct as u64) as usize;
        let w = pool[pick].clone();
        pool.push(w);
    }

    let mut lines = vec![String::new()];
    for w in &pool {
        let line = lines.last_mut().unwrap();
        if !line.is_empty() {
            // Mix plain spaces and form separators between words.
            line.push(if rng.next_u64() % 3 == 0 { SEPARATOR } else { ' ' });
        }
        line.push_str(w);
        if rng.next_u64() % 4 == 0 {
            lines.push(String::new());
        }
    }
    lines.retain(|l| !l.trim().is_empty());

    let base = N_SPECIALS
        + pool
            .iter()
            .flat_map(|w| w.chars())
            .collect::<std::collections::BTreeSet<char>>()
            .len();
    let budget = if seed % 2 == 0 {
        base + (rng.next_u64() % 20) as usize
    } else {
        base + 1000
    };
    (lines, budget)
}
