//! Lexeme ingestion, cleaning, Contlex normalization, and stratified
//! train/test splitting.
//!
//! The cleaning pipeline runs in a fixed order — load, POS filter, regex
//! filter, Contlex normalization, minimum-support filter — and records the
//! in/out counts of every stage in a filter log.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// One dictionary entry. `contlex` starts equal to `contlex_raw` and is
/// rewritten by [`normalize_contlex`] during cleaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexemeRecord {
    pub lemma: String,
    pub pos: String,
    pub contlex_raw: String,
    pub contlex: String,
}

impl LexemeRecord {
    /// Record whose Contlex is already in normalized form.
    pub fn new(lemma: &str, pos: &str, contlex: &str) -> Self {
        LexemeRecord {
            lemma: lemma.to_string(),
            pos: pos.to_string(),
            contlex_raw: contlex.to_string(),
            contlex: contlex.to_string(),
        }
    }
}

/// Per-stage record counts, serialized into the filter log JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterLogEntry {
    pub stage: String,
    pub in_count: usize,
    pub out_count: usize,
}

/// Cleaned records plus where they came from and what was removed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<LexemeRecord>,
    pub source: String,
    pub filter_log: Vec<FilterLogEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

/// Cleaning knobs; defaults follow the pipeline's standard configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub allowed_pos: Vec<String>,
    pub exclude_patterns: Vec<String>,
    pub min_support: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            allowed_pos: vec!["N".into(), "V".into()],
            // Lemmas with whitespace, digits, or edge hyphens are
            // non-standard dictionary noise.
            exclude_patterns: vec![r"\s".into(), r"\d".into(), "^-".into(), "-$".into()],
            min_support: 50,
        }
    }
}

pub const LEXEME_HEADER: &str = "lemma\tpos\tcontlex";

/// Read a lexeme TSV (`lemma<TAB>pos<TAB>contlex` header). Raw Contlex is
/// preserved; no normalization or filtering happens here.
pub fn load_lexemes(path: impl AsRef<Path>) -> Result<Vec<LexemeRecord>> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_lexemes(&text)
}

pub fn parse_lexemes(text: &str) -> Result<Vec<LexemeRecord>> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    if header.trim_end_matches('\r') != LEXEME_HEADER {
        return Err(Error::Format(format!(
            "lexeme TSV row 1: expected header {LEXEME_HEADER:?}, got {header:?}"
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (lemma, pos, contlex) = match (fields.next(), fields.next(), fields.next(), fields.next())
        {
            (Some(l), Some(p), Some(c), None) => (l, p, c),
            _ => {
                return Err(Error::Format(format!(
                    "lexeme TSV row {}: expected 3 tab-separated columns",
                    i + 1
                )))
            }
        };
        if lemma.is_empty() {
            return Err(Error::Format(format!("lexeme TSV row {}: empty lemma", i + 1)));
        }
        records.push(LexemeRecord {
            lemma: lemma.to_string(),
            pos: pos.to_string(),
            contlex_raw: contlex.to_string(),
            contlex: contlex.to_string(),
        });
    }
    Ok(records)
}

/// Write records back out in the load format (normalized Contlex column).
pub fn save_lexemes(records: &[LexemeRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(LEXEME_HEADER);
    out.push('\n');
    for r in records {
        for field in [&r.lemma, &r.pos, &r.contlex] {
            if field.contains('\t') || field.contains('\n') {
                return Err(Error::Format(format!(
                    "field {field:?} contains a tab or newline; TSV forbids embedded separators"
                )));
            }
        }
        out.push_str(&format!("{}\t{}\t{}\n", r.lemma, r.pos, r.contlex));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Keep only records whose POS is in `allowed`; order preserved.
pub fn filter_pos(records: Vec<LexemeRecord>, allowed: &[String]) -> Vec<LexemeRecord> {
    records.into_iter().filter(|r| allowed.iter().any(|a| a == &r.pos)).collect()
}

/// Remove records whose lemma matches ANY exclusion pattern.
pub fn regex_filter(records: Vec<LexemeRecord>, patterns: &[String]) -> Result<Vec<LexemeRecord>> {
    let compiled: Vec<regex::Regex> = patterns
        .iter()
        .map(|p| {
            regex::Regex::new(p)
                .map_err(|e| Error::Config(format!("exclusion pattern {p:?} does not compile: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(records
        .into_iter()
        .filter(|r| !compiled.iter().any(|re| re.is_match(&r.lemma)))
        .collect())
}

/// Truncate a Contlex label just before its second underscore, collapsing
/// error-annotated variants onto their base class. Idempotent.
pub fn normalize_contlex(label: &str) -> String {
    let mut underscores = label.char_indices().filter(|&(_, c)| c == '_');
    let _first = underscores.next();
    match underscores.next() {
        Some((i, _)) => label[..i].to_string(),
        None => label.to_string(),
    }
}

/// Drop records whose (pos, contlex) class has fewer than `min_support`
/// members. Returns the survivors plus the kept label inventory per POS.
pub fn filter_min_support(
    records: Vec<LexemeRecord>,
    min_support: usize,
) -> (Vec<LexemeRecord>, BTreeMap<String, Vec<String>>) {
    let mut support: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in &records {
        *support.entry((r.pos.clone(), r.contlex.clone())).or_insert(0) += 1;
    }
    let kept: Vec<LexemeRecord> = records
        .into_iter()
        .filter(|r| support[&(r.pos.clone(), r.contlex.clone())] >= min_support)
        .collect();
    let mut inventory: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ((pos, contlex), n) in support {
        if n >= min_support {
            inventory.entry(pos).or_default().push(contlex);
        }
    }
    (kept, inventory)
}

/// Run the full cleaning pipeline in its fixed order, logging every stage.
pub fn clean(
    records: Vec<LexemeRecord>,
    config: &CleaningConfig,
    source: &str,
) -> Result<Dataset> {
    let mut log = Vec::new();
    let mut stage = |name: &str, in_count: usize, out_count: usize| {
        log.push(FilterLogEntry { stage: name.into(), in_count, out_count });
    };

    let n0 = records.len();
    stage("load", n0, n0);

    let records = filter_pos(records, &config.allowed_pos);
    stage("filter_pos", n0, records.len());

    let n1 = records.len();
    let records = regex_filter(records, &config.exclude_patterns)?;
    stage("regex_filter", n1, records.len());

    let n2 = records.len();
    let records: Vec<LexemeRecord> = records
        .into_iter()
        .map(|mut r| {
            r.contlex = normalize_contlex(&r.contlex);
            r
        })
        .collect();
    stage("normalize_contlex", n2, records.len());

    let n3 = records.len();
    let (records, _inventory) = filter_min_support(records, config.min_support);
    stage("min_support", n3, records.len());

    Ok(Dataset { records, source: source.to_string(), filter_log: log })
}

/// Stratified split: per class, `round(test_fraction * size)` test items
/// (at least 1), selected by a per-class seeded shuffle. Output preserves
/// input order within each side.
pub fn stratified_split(
    records: &[LexemeRecord],
    spec: &SplitSpec,
) -> Result<(Vec<LexemeRecord>, Vec<LexemeRecord>)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction {} outside (0,1)",
            spec.test_fraction
        )));
    }
    let mut by_class: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry((r.pos.clone(), r.contlex.clone())).or_default().push(i);
    }
    let mut is_test = vec![false; records.len()];
    for ((pos, contlex), mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class ({pos}, {contlex}) has {} record(s); stratified split needs at least 2",
                idx.len()
            )));
        }
        let n_test = ((spec.test_fraction * idx.len() as f64).round() as usize).max(1);
        let mut rng = Rng::new(spec.seed).split(&format!("split/{pos}/{contlex}"));
        rng.shuffle(&mut idx);
        for &i in idx.iter().take(n_test) {
            is_test[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if is_test[i] {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(lemma: &str, pos: &str, contlex: &str) -> LexemeRecord {
        LexemeRecord {
            lemma: lemma.into(),
            pos: pos.into(),
            contlex_raw: contlex.into(),
            contlex: contlex.into(),
        }
    }

    #[test]
    fn load_preserves_raw_contlex() {
        let recs =
            parse_lexemes("lemma\tpos\tcontlex\njooʹtted\tV\tV_JOAQTTED_ERRORTH\n").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].lemma, "jooʹtted");
        assert_eq!(recs[0].pos, "V");
        assert_eq!(recs[0].contlex_raw, "V_JOAQTTED_ERRORTH");
        assert_eq!(recs[0].contlex, "V_JOAQTTED_ERRORTH");
    }

    #[test]
    fn load_empty_file() {
        assert!(parse_lexemes("").unwrap().is_empty());
        assert!(parse_lexemes("lemma\tpos\tcontlex\n").unwrap().is_empty());
    }

    #[test]
    fn load_keeps_input_order() {
        let recs =
            parse_lexemes("lemma\tpos\tcontlex\na\tN\tN_A\nb\tV\tV_B\nc\tN\tN_C\n").unwrap();
        let lemmas: Vec<&str> = recs.iter().map(|r| r.lemma.as_str()).collect();
        assert_eq!(lemmas, ["a", "b", "c"]);
    }

    #[test]
    fn load_reports_row_number_on_bad_row() {
        let err = parse_lexemes("lemma\tpos\tcontlex\na\tN\tN_A\nmissing_fields\n").unwrap_err();
        match err {
            Error::Format(msg) => assert!(msg.contains("row 3"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_wrong_header() {
        assert!(matches!(parse_lexemes("a\tb\tc\n"), Err(Error::Format(_))));
    }

    #[test]
    fn filter_pos_keeps_allowed_in_order() {
        let recs = vec![rec("a", "N", "N_A"), rec("b", "V", "V_B"), rec("c", "Adv", "ADV_C"),
            rec("d", "N", "N_D")];
        let out = filter_pos(recs, &["N".into(), "V".into()]);
        let pos: Vec<&str> = out.iter().map(|r| r.pos.as_str()).collect();
        assert_eq!(pos, ["N", "V", "N"]);
    }

    #[test]
    fn filter_pos_empty_allowlist() {
        let recs = vec![rec("a", "N", "N_A")];
        assert!(filter_pos(recs, &[]).is_empty());
    }

    #[test]
    fn filter_pos_count() {
        let mut recs = Vec::new();
        for i in 0..6 {
            recs.push(rec(&format!("n{i}"), "N", "N_A"));
        }
        for i in 0..4 {
            recs.push(rec(&format!("a{i}"), "Adj", "ADJ_A"));
        }
        assert_eq!(filter_pos(recs, &["N".into(), "V".into()]).len(), 6);
    }

    #[test]
    fn regex_filter_drops_matching_lemmas() {
        let recs = vec![rec("kuõss kuõss", "N", "N_A"), rec("kuõss", "N", "N_A")];
        let out = regex_filter(recs, &[r"\s".into()]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].lemma, "kuõss");

        let recs = vec![rec("abc1", "N", "N_A"), rec("abc", "N", "N_A")];
        let out = regex_filter(recs, &[r"\d".into()]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].lemma, "abc");
    }

    #[test]
    fn regex_filter_no_patterns_is_identity() {
        let recs = vec![rec("a b", "N", "N_A"), rec("c", "V", "V_C")];
        assert_eq!(regex_filter(recs.clone(), &[]).unwrap(), recs);
    }

    #[test]
    fn regex_filter_names_bad_pattern() {
        let err = regex_filter(vec![], &["[unclosed".into()]).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("[unclosed"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn normalize_truncates_at_second_underscore() {
        assert_eq!(normalize_contlex("V_JOAQTTED_ERRORTH"), "V_JOAQTTED");
        assert_eq!(normalize_contlex("N_SAJOS"), "N_SAJOS");
        assert_eq!(normalize_contlex("N_A_B_C"), "N_A");
    }

    #[test]
    fn normalize_is_idempotent() {
        for label in ["V_JOAQTTED_ERRORTH", "N_SAJOS", "N_A_B_C", "X", "", "_a_b"] {
            let once = normalize_contlex(label);
            assert_eq!(normalize_contlex(&once), once, "label {label:?}");
        }
    }

    #[test]
    fn min_support_one_is_identity() {
        let recs = vec![rec("a", "N", "N_A"), rec("b", "V", "V_B")];
        let (kept, _) = filter_min_support(recs.clone(), 1);
        assert_eq!(kept, recs);
    }

    #[test]
    fn min_support_drops_small_classes() {
        let mut recs = Vec::new();
        for i in 0..60 {
            recs.push(rec(&format!("a{i}"), "N", "N_A"));
        }
        for i in 0..49 {
            recs.push(rec(&format!("b{i}"), "N", "N_B"));
        }
        let (kept, inventory) = filter_min_support(recs, 50);
        assert_eq!(kept.len(), 60);
        assert!(kept.iter().all(|r| r.contlex == "N_A"));
        assert_eq!(inventory["N"], vec!["N_A".to_string()]);
    }

    #[test]
    fn split_exact_proportion_single_class() {
        let recs: Vec<_> = (0..100).map(|i| rec(&format!("w{i}"), "N", "N_A")).collect();
        let (train, test) =
            stratified_split(&recs, &SplitSpec { test_fraction: 0.2, seed: 7 }).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
    }

    #[test]
    fn split_rounds_per_class() {
        let mut recs = Vec::new();
        for i in 0..60 {
            recs.push(rec(&format!("a{i}"), "N", "N_A"));
        }
        for i in 0..40 {
            recs.push(rec(&format!("b{i}"), "V", "V_B"));
        }
        let (_, test) =
            stratified_split(&recs, &SplitSpec { test_fraction: 0.25, seed: 7 }).unwrap();
        let n_a = test.iter().filter(|r| r.contlex == "N_A").count();
        let n_b = test.iter().filter(|r| r.contlex == "V_B").count();
        assert_eq!((n_a, n_b), (15, 10));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let recs: Vec<_> = (0..50)
            .map(|i| rec(&format!("w{i}"), "N", if i % 2 == 0 { "N_A" } else { "N_B" }))
            .collect();
        let spec = SplitSpec { test_fraction: 0.2, seed: 42 };
        let (tr1, te1) = stratified_split(&recs, &spec).unwrap();
        let (tr2, te2) = stratified_split(&recs, &spec).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.len() + te1.len(), recs.len());
        for r in &te1 {
            assert!(!tr1.contains(r));
        }
    }

    #[test]
    fn split_rejects_singleton_class() {
        let recs = vec![rec("a", "N", "N_A"), rec("b", "N", "N_A"), rec("c", "V", "V_ONLY")];
        let err =
            stratified_split(&recs, &SplitSpec { test_fraction: 0.2, seed: 1 }).unwrap_err();
        match err {
            Error::Data(msg) => assert!(msg.contains("V_ONLY"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn clean_logs_every_stage_in_order() {
        let recs = vec![
            rec("good", "N", "N_A_X"),
            rec("also good", "N", "N_A"),
            rec("fine", "Adv", "ADV_A"),
            rec("ok", "N", "N_A"),
        ];
        let config = CleaningConfig {
            allowed_pos: vec!["N".into()],
            exclude_patterns: vec![r"\s".into()],
            min_support: 2,
        };
        let ds = clean(recs, &config, "test").unwrap();
        let stages: Vec<&str> = ds.filter_log.iter().map(|e| e.stage.as_str()).collect();
        assert_eq!(
            stages,
            ["load", "filter_pos", "regex_filter", "normalize_contlex", "min_support"]
        );
        // 4 -> pos 3 -> regex 2 -> normalize 2 -> support 2 ("N_A_X" -> "N_A").
        assert_eq!(ds.filter_log[1].out_count, 3);
        assert_eq!(ds.filter_log[2].out_count, 2);
        assert_eq!(ds.records.len(), 2);
        assert!(ds.records.iter().all(|r| r.contlex == "N_A"));
    }
}
