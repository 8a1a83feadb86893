//! Synthetic morphology generator: a desk-scale corpus with a known
//! ground-truth rule system.
//!
//! Construction. Every inflection class is defined by a suffix-rewrite
//! table over a small consonant-vowel alphabet. Classes come in twin
//! pairs that share the same lemma suffix — the lemma alone cannot
//! separate them — and share every form suffix except one designated
//! disambiguation slot. Those slots cycle through form positions 0, 2,
//! 4, 6 across pairs, so classification accuracy rises in steps as more
//! forms become visible. A rule-reading oracle classifier therefore
//! scores 50% per twin pair from lemmas alone and 100% with full
//! paradigms, bounding what a trained model can achieve.

use serde::{Deserialize, Serialize};

use crate::augment::{default_miniparadigms, FORMS_HEADER};
use crate::corpus::{LexemeRecord, LEXEME_HEADER};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes to build an ambiguous corpus, got {}",
                self.classes
            )));
        }
        if self.per_class < 10 {
            return Err(Error::Config(format!(
                "need at least 10 records per class for stratified splitting, got {}",
                self.per_class
            )));
        }
        Ok(())
    }
}

/// Complete rewrite table for one class: a lemma suffix (shared with the
/// twin class) plus one form suffix per miniparadigm slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRule {
    pub name: String,
    pub pos: String,
    pub lemma_suffix: String,
    pub slot_suffixes: Vec<String>,
    /// Form slot where this class differs from its twin.
    pub disamb_slot: usize,
}

/// The generator's ground truth; serialized next to the corpus so tests
/// can run the rule-based oracle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub per_class: usize,
    pub classes: Vec<ClassRule>,
}

pub struct SynthCorpus {
    /// `contlex` carries the raw label (a quarter get a `_XTRA` noise
    /// suffix the cleaning pipeline must strip).
    pub lexemes: Vec<LexemeRecord>,
    /// (lemma, pos, tag, form) rows for the form generator.
    pub forms: Vec<(String, String, String, String)>,
    pub spec: SynthSpec,
}

const CONSONANTS: [char; 6] = ['m', 'n', 'p', 't', 'k', 'l'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
/// Twin-distinguishing syllables appended at the disambiguation slot.
const TWIN_SYLLABLES: [&str; 2] = ["ku", "li"];
const DISAMB_CYCLE: [usize; 4] = [0, 2, 4, 6];

fn pos_marker(pos: &str) -> char {
    if pos == "N" {
        's'
    } else {
        'd'
    }
}

/// One consonant-vowel syllable per index < 30.
fn syllable(i: usize) -> String {
    let mut s = String::new();
    s.push(CONSONANTS[i % CONSONANTS.len()]);
    s.push(VOWELS[(i / CONSONANTS.len()) % VOWELS.len()]);
    s
}

/// Fixed-length (two-syllable) code, unique for i < 900. Fixed length
/// matters: equal-length suffixes can never be suffixes of each other,
/// so a lemma ending identifies exactly one twin pair.
fn code2(i: usize) -> String {
    format!("{}{}", syllable(i % 30), syllable(i / 30))
}

fn build_rules(classes: usize) -> Result<Vec<ClassRule>> {
    if classes / 2 >= 900 {
        return Err(Error::Config(format!("{classes} classes exceed the suffix code space")));
    }
    let mini = default_miniparadigms();
    let mut rules = Vec::with_capacity(classes);
    for c in 0..classes {
        let pair = c / 2;
        let twin = c % 2;
        let pos = if pair % 2 == 0 { "N" } else { "V" };
        let n_slots = mini.tags(pos).expect("default spec covers N and V").len();
        let disamb_slot = DISAMB_CYCLE[pair % DISAMB_CYCLE.len()];
        let slot_suffixes = (0..n_slots)
            .map(|j| {
                let shared = format!("{}{}", syllable(j), code2(pair));
                if j == disamb_slot {
                    format!("{shared}{}", TWIN_SYLLABLES[twin])
                } else {
                    shared
                }
            })
            .collect();
        rules.push(ClassRule {
            name: format!("{pos}_CLS{c}"),
            pos: pos.to_string(),
            lemma_suffix: code2(pair),
            slot_suffixes,
            disamb_slot,
        });
    }
    Ok(rules)
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let rules = build_rules(config.classes)?;
    let mini = default_miniparadigms();
    let mut rng = Rng::new(config.seed).split("synth/stems");
    let mut seen = std::collections::BTreeSet::new();

    let mut lexemes = Vec::new();
    let mut forms = Vec::new();
    let mut record_idx = 0usize;
    for rule in &rules {
        let tags = mini.tags(&rule.pos).expect("default spec covers N and V");
        for _ in 0..config.per_class {
            let mut stem = String::new();
            let mut attempts = 0;
            loop {
                stem.clear();
                let n_syl = 2 + (rng.next_u64() % 2) as usize;
                for _ in 0..n_syl {
                    stem.push(CONSONANTS[(rng.next_u64() % 6) as usize]);
                    stem.push(VOWELS[(rng.next_u64() % 5) as usize]);
                }
                if seen.insert(format!("{stem}{}", rule.lemma_suffix)) {
                    break;
                }
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::Config(
                        "corpus too large for the stem space; reduce per-class".into(),
                    ));
                }
            }
            let lemma = format!("{stem}{}{}", rule.lemma_suffix, pos_marker(&rule.pos));
            let raw_contlex = if record_idx % 4 == 0 {
                format!("{}_XTRA", rule.name)
            } else {
                rule.name.clone()
            };
            record_idx += 1;
            lexemes.push(LexemeRecord {
                lemma: lemma.clone(),
                pos: rule.pos.clone(),
                contlex_raw: raw_contlex.clone(),
                contlex: raw_contlex,
            });
            for (j, tag) in tags.iter().enumerate() {
                forms.push((
                    lemma.clone(),
                    rule.pos.clone(),
                    tag.clone(),
                    format!("{stem}{}", rule.slot_suffixes[j]),
                ));
            }
        }
    }
    Ok(SynthCorpus {
        lexemes,
        forms,
        spec: SynthSpec { seed: config.seed, per_class: config.per_class, classes: rules },
    })
}

impl SynthCorpus {
    pub fn lexemes_tsv(&self) -> String {
        let mut out = String::from(LEXEME_HEADER);
        out.push('\n');
        for r in &self.lexemes {
            out.push_str(&format!("{}\t{}\t{}\n", r.lemma, r.pos, r.contlex));
        }
        out
    }

    pub fn forms_tsv(&self) -> String {
        let mut out = String::from(FORMS_HEADER);
        out.push('\n');
        for (lemma, pos, tag, form) in &self.forms {
            out.push_str(&format!("{lemma}\t{pos}\t{tag}\t{form}\n"));
        }
        out
    }

    pub fn spec_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&self.spec)?;
        text.push('\n');
        Ok(text)
    }
}

impl SynthSpec {
    /// Rule-based oracle: the unique class consistent with the lemma and
    /// every visible form (slot order). Among still-ambiguous candidates
    /// the lowest class id wins, so with no disambiguating form visible
    /// the oracle deterministically picks the first twin.
    pub fn classify(&self, lemma: &str, visible_forms: &[String]) -> Result<(String, String)> {
        for rule in &self.classes {
            let ending = format!("{}{}", rule.lemma_suffix, pos_marker(&rule.pos));
            if !lemma.ends_with(&ending) {
                continue;
            }
            let stem = &lemma[..lemma.len() - ending.len()];
            let consistent = visible_forms.iter().enumerate().all(|(j, form)| {
                rule.slot_suffixes
                    .get(j)
                    .map(|suffix| *form == format!("{stem}{suffix}"))
                    .unwrap_or(false)
            });
            if consistent {
                return Ok((rule.pos.clone(), rule.name.clone()));
            }
        }
        Err(Error::Data(format!("no class rule matches lemma {lemma:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::parse_forms;
    use crate::corpus::{normalize_contlex, parse_lexemes};

    fn small() -> SynthCorpus {
        generate(&SynthConfig { classes: 8, per_class: 10, seed: 7 }).unwrap()
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        assert!(matches!(
            generate(&SynthConfig { classes: 1, per_class: 10, seed: 0 }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            generate(&SynthConfig { classes: 4, per_class: 9, seed: 0 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fixed_seed_gives_byte_identical_corpora() {
        let a = small();
        let b = small();
        assert_eq!(a.lexemes_tsv(), b.lexemes_tsv());
        assert_eq!(a.forms_tsv(), b.forms_tsv());
        assert_eq!(a.spec_json().unwrap(), b.spec_json().unwrap());
        let c = generate(&SynthConfig { classes: 8, per_class: 10, seed: 8 }).unwrap();
        assert_ne!(a.lexemes_tsv(), c.lexemes_tsv(), "different seed, different corpus");
    }

    #[test]
    fn class_sizes_are_exact_and_labels_normalize() {
        let corpus = small();
        assert_eq!(corpus.lexemes.len(), 80);
        let mut counts = std::collections::BTreeMap::new();
        let mut noisy = 0;
        for r in &corpus.lexemes {
            let clean = normalize_contlex(&r.contlex);
            if clean != r.contlex {
                noisy += 1;
                assert!(r.contlex.ends_with("_XTRA"));
            }
            *counts.entry(clean).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        assert!(counts.values().all(|&n| n == 10));
        assert_eq!(noisy, 20, "every fourth record carries label noise");
    }

    #[test]
    fn pos_is_readable_from_the_lemma_marker() {
        let corpus = small();
        for r in &corpus.lexemes {
            let marker = r.lemma.chars().last().unwrap();
            match r.pos.as_str() {
                "N" => assert_eq!(marker, 's'),
                "V" => assert_eq!(marker, 'd'),
                other => panic!("unexpected POS {other}"),
            }
        }
        let n = corpus.lexemes.iter().filter(|r| r.pos == "N").count();
        assert_eq!(n, 40, "pairs alternate between the two POS");
    }

    #[test]
    fn twin_pairs_share_lemma_suffixes_but_not_disamb_forms() {
        let corpus = small();
        let rules = &corpus.spec.classes;
        for pair in 0..4 {
            let a = &rules[2 * pair];
            let b = &rules[2 * pair + 1];
            assert_eq!(a.lemma_suffix, b.lemma_suffix);
            assert_eq!(a.pos, b.pos);
            assert_eq!(a.disamb_slot, b.disamb_slot);
            assert_eq!(a.disamb_slot, DISAMB_CYCLE[pair % 4]);
            for j in 0..a.slot_suffixes.len() {
                if j == a.disamb_slot {
                    assert_ne!(a.slot_suffixes[j], b.slot_suffixes[j]);
                } else {
                    assert_eq!(a.slot_suffixes[j], b.slot_suffixes[j]);
                }
            }
        }
        // Lemma suffixes are unique per pair.
        let mut suffixes: Vec<&String> = rules.iter().step_by(2).map(|r| &r.lemma_suffix).collect();
        suffixes.dedup();
        assert_eq!(suffixes.len(), 4);
    }

    /// Oracle accuracy when the first `visible` forms are shown.
    fn oracle_accuracy(corpus: &SynthCorpus, visible: usize) -> f64 {
        let mut forms_by_lemma: std::collections::BTreeMap<&str, Vec<String>> =
            std::collections::BTreeMap::new();
        for (lemma, _, _, form) in &corpus.forms {
            forms_by_lemma.entry(lemma).or_default().push(form.clone());
        }
        let mut hits = 0;
        for r in &corpus.lexemes {
            let all = &forms_by_lemma[r.lemma.as_str()];
            let shown = &all[..visible.min(all.len())];
            let (_, name) = corpus.spec.classify(&r.lemma, shown).unwrap();
            if name == normalize_contlex(&r.contlex) {
                hits += 1;
            }
        }
        hits as f64 / corpus.lexemes.len() as f64
    }

    #[test]
    fn oracle_resolves_classes_in_steps_as_forms_appear() {
        let corpus = small();
        // 4 pairs with disambiguation slots 0, 2, 4, 6. With no forms
        // visible every pair is a coin flip decided toward the first twin.
        assert_eq!(oracle_accuracy(&corpus, 0), 0.5);
        assert_eq!(oracle_accuracy(&corpus, 1), 5.0 / 8.0);
        assert_eq!(oracle_accuracy(&corpus, 2), 5.0 / 8.0);
        assert_eq!(oracle_accuracy(&corpus, 3), 6.0 / 8.0);
        assert_eq!(oracle_accuracy(&corpus, 5), 7.0 / 8.0);
        assert_eq!(oracle_accuracy(&corpus, 7), 1.0);
        assert_eq!(oracle_accuracy(&corpus, 10), 1.0, "full paradigm is fully decidable");
    }

    #[test]
    fn generated_files_parse_with_the_pipeline_readers() {
        let corpus = small();
        let records = parse_lexemes(&corpus.lexemes_tsv()).unwrap();
        assert_eq!(records.len(), corpus.lexemes.len());
        let generator = parse_forms(&corpus.forms_tsv()).unwrap();
        // Spot-check: the generator returns the recorded form.
        let (lemma, pos, tag, form) = &corpus.forms[0];
        use crate::augment::FormGenerator;
        assert_eq!(generator.generate(lemma, pos, tag), vec![form.clone()]);
        let spec: SynthSpec = serde_json::from_str(&corpus.spec_json().unwrap()).unwrap();
        assert_eq!(spec, corpus.spec);
    }

    #[test]
    fn odd_class_counts_leave_one_unambiguous_class() {
        let corpus = generate(&SynthConfig { classes: 3, per_class: 10, seed: 1 }).unwrap();
        assert_eq!(corpus.spec.classes.len(), 3);
        assert_eq!(corpus.lexemes.len(), 30);
        // The unpaired class is decidable from the lemma alone.
        let lone = &corpus.spec.classes[2];
        let member = corpus
            .lexemes
            .iter()
            .find(|r| normalize_contlex(&r.contlex) == lone.name)
            .unwrap();
        let (_, name) = corpus.spec.classify(&member.lemma, &[]).unwrap();
        assert_eq!(name, lone.name);
    }
}
