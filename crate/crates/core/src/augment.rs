//! Miniparadigm augmentation: expand each lexeme into a fixed set of
//! inflected forms via a pluggable generator, and assemble model input
//! lines from lemma + forms.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LexemeRecord;
use crate::error::{Error, Result};

/// Joins lemma and forms in assembled inputs. Reserved in the tokenizer's
/// alphabet and never merged, so subwords cannot cross form boundaries.
pub const SEPARATOR: char = '\u{241F}'; // ␟ symbol for unit separator

/// Ordered morphological tag inventory per POS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiniparadigmSpec {
    pub per_pos: BTreeMap<String, Vec<String>>,
}

impl MiniparadigmSpec {
    pub fn tags(&self, pos: &str) -> Option<&[String]> {
        self.per_pos.get(pos).map(|v| v.as_slice())
    }

    /// Largest number of forms any entry can have.
    pub fn max_forms_per_entry(&self) -> usize {
        self.per_pos.values().map(|v| v.len()).max().unwrap_or(0)
    }
}

/// The standard ten-tag miniparadigms for verbs and nouns.
pub fn default_miniparadigms() -> MiniparadigmSpec {
    let v = [
        "V+Ind+Prs+ConNeg",
        "V+Ind+Prs+Sg3",
        "V+Ind+Prt+Sg1",
        "V+Ind+Prt+Sg3",
        "V+Inf",
        "V+Ind+Prs+Sg1",
        "V+Pass+PrfPrc",
        "V+Ind+Prs+Pl3",
        "V+Imprt+Sg3",
        "V+Imprt+Pl3",
    ];
    let n = [
        "N+Sg+Loc",
        "N+Sg+Ill",
        "N+Pl+Gen",
        "N+Sg+Nom",
        "N+Sg+Gen",
        "N+Sg+Loc+PxSg3",
        "N+Ess",
        "N+Der/Dimin+N+Sg+Nom",
        "N+Der/Dimin+N+Sg+Gen",
        "N+Sg+Ill+PxSg1",
    ];
    let mut per_pos = BTreeMap::new();
    per_pos.insert("N".to_string(), n.iter().map(|s| s.to_string()).collect());
    per_pos.insert("V".to_string(), v.iter().map(|s| s.to_string()).collect());
    MiniparadigmSpec { per_pos }
}

/// Produces surface forms for (lemma, pos, tag) queries. Implementations
/// must be deterministic.
pub trait FormGenerator {
    fn generate(&self, lemma: &str, pos: &str, tag: &str) -> Vec<String>;
}

/// Generator answering from an in-memory table loaded from a forms TSV.
#[derive(Debug, Clone)]
pub struct FileFormGenerator {
    table: BTreeMap<(String, String, String), Vec<String>>,
}

impl FormGenerator for FileFormGenerator {
    fn generate(&self, lemma: &str, pos: &str, tag: &str) -> Vec<String> {
        self.table
            .get(&(lemma.to_string(), pos.to_string(), tag.to_string()))
            .cloned()
            .unwrap_or_default()
    }
}

pub const FORMS_HEADER: &str = "lemma\tpos\ttag\tform";

/// Load a forms TSV (`lemma<TAB>pos<TAB>tag<TAB>form`). Duplicate keys keep
/// every form in file order.
pub fn file_backed_generator(path: impl AsRef<Path>) -> Result<FileFormGenerator> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_forms(&text)
}

pub fn parse_forms(text: &str) -> Result<FileFormGenerator> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Ok(FileFormGenerator { table: BTreeMap::new() });
    };
    if header.trim_end_matches('\r') != FORMS_HEADER {
        return Err(Error::Format(format!(
            "forms TSV row 1: expected header {FORMS_HEADER:?}, got {header:?}"
        )));
    }
    let mut table: BTreeMap<(String, String, String), Vec<String>> = BTreeMap::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Format(format!(
                "forms TSV row {}: expected 4 non-empty tab-separated columns",
                i + 1
            )));
        }
        table
            .entry((fields[0].to_string(), fields[1].to_string(), fields[2].to_string()))
            .or_default()
            .push(fields[3].to_string());
    }
    Ok(FileFormGenerator { table })
}

/// One lexeme plus its generated (tag, surface form) pairs in spec order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedEntry {
    pub lemma: String,
    pub pos: String,
    pub contlex: String,
    pub forms: Vec<(String, String)>,
}

/// Query the generator for every tag in spec order, keeping the first form
/// per tag and omitting tags with no output.
pub fn generate_forms(
    gen: &dyn FormGenerator,
    record: &LexemeRecord,
    spec: &MiniparadigmSpec,
) -> Result<AugmentedEntry> {
    let tags = spec.tags(&record.pos).ok_or_else(|| {
        Error::Config(format!("POS {:?} has no miniparadigm spec", record.pos))
    })?;
    let mut forms = Vec::new();
    for tag in tags {
        let generated = gen.generate(&record.lemma, &record.pos, tag);
        if let Some(first) = generated.into_iter().next() {
            forms.push((tag.clone(), first));
        }
    }
    Ok(AugmentedEntry {
        lemma: record.lemma.clone(),
        pos: record.pos.clone(),
        contlex: record.contlex.clone(),
        forms,
    })
}

/// Lemma plus the first `max_forms - 1` surface forms, separator-joined.
/// `max_forms = 1` yields the bare lemma.
pub fn assemble_input(entry: &AugmentedEntry, max_forms: usize) -> Result<String> {
    if max_forms < 1 {
        return Err(Error::Usage("max_forms must be at least 1".into()));
    }
    let mut text = entry.lemma.clone();
    for (_, form) in entry.forms.iter().take(max_forms - 1) {
        text.push(SEPARATOR);
        text.push_str(form);
    }
    Ok(text)
}

/// Write entries as JSON lines; [`load_entries`] reads them back.
pub fn save_entries(entries: &[AugmentedEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn load_entries(path: impl AsRef<Path>) -> Result<Vec<AugmentedEntry>> {
    let text = fs::read_to_string(path.as_ref())?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
