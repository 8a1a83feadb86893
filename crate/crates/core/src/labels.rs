//! Hierarchical label encoding: one encoder for POS and one per-POS
//! Contlex encoder, flattened into a single global Contlex index so one
//! output head can cover every class. Per-POS masks recover the hierarchy
//! at inference time.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LexemeRecord;
use crate::error::{Error, Result};

/// Fitted label inventory. The global Contlex index is the concatenation
/// of the per-POS sorted lists in POS order; it is always derived from
/// these two fields, never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub pos_labels: Vec<String>,
    pub per_pos_contlex: BTreeMap<String, Vec<String>>,
}

/// Build a [`LabelSpace`] from cleaned records. Sorted label lists make the
/// fit deterministic for any input order.
pub fn fit(records: &[LexemeRecord]) -> Result<LabelSpace> {
    if records.is_empty() {
        return Err(Error::Data("cannot fit a label space on zero records".into()));
    }
    let mut per_pos: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in records {
        let prefix = r.contlex.split('_').next().unwrap_or("");
        if prefix != r.pos {
            return Err(Error::Data(format!(
                "record {:?}: contlex {:?} does not carry POS prefix {:?}",
                r.lemma, r.contlex, r.pos
            )));
        }
        per_pos.entry(r.pos.clone()).or_default().push(r.contlex.clone());
    }
    for labels in per_pos.values_mut() {
        labels.sort();
        labels.dedup();
    }
    let pos_labels = per_pos.keys().cloned().collect();
    Ok(LabelSpace { pos_labels, per_pos_contlex: per_pos })
}

/// Per-(pos, contlex) record counts, for support reporting.
pub fn support_counts(records: &[LexemeRecord]) -> BTreeMap<(String, String), usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry((r.pos.clone(), r.contlex.clone())).or_insert(0) += 1;
    }
    counts
}

impl LabelSpace {
    pub fn n_pos(&self) -> usize {
        self.pos_labels.len()
    }

    pub fn n_contlex(&self) -> usize {
        self.per_pos_contlex.values().map(|v| v.len()).sum()
    }

    pub fn encode_pos(&self, pos: &str) -> Result<usize> {
        self.pos_labels
            .iter()
            .position(|p| p == pos)
            .ok_or_else(|| Error::Lookup(format!("POS {pos:?} not in fitted label space")))
    }

    pub fn decode_pos(&self, id: usize) -> Result<&str> {
        self.pos_labels
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Lookup(format!("POS id {id} out of range")))
    }

    fn block_offset(&self, pos: &str) -> usize {
        self.per_pos_contlex
            .iter()
            .take_while(|(p, _)| p.as_str() != pos)
            .map(|(_, labels)| labels.len())
            .sum()
    }

    pub fn encode_contlex(&self, pos: &str, label: &str) -> Result<usize> {
        let labels = self
            .per_pos_contlex
            .get(pos)
            .ok_or_else(|| Error::Lookup(format!("POS {pos:?} not in fitted label space")))?;
        let within = labels.binary_search_by(|l| l.as_str().cmp(label)).map_err(|_| {
            Error::Lookup(format!("contlex {label:?} not fitted under POS {pos:?}"))
        })?;
        Ok(self.block_offset(pos) + within)
    }

    /// Global id → (owning POS, contlex label).
    pub fn decode_contlex(&self, global_id: usize) -> Result<(&str, &str)> {
        let mut offset = 0;
        for (pos, labels) in &self.per_pos_contlex {
            if global_id < offset + labels.len() {
                return Ok((pos, &labels[global_id - offset]));
            }
            offset += labels.len();
        }
        Err(Error::Lookup(format!("contlex id {global_id} out of range for {offset} labels")))
    }

    /// All contlex labels in global-id order.
    pub fn global_contlex(&self) -> Vec<&str> {
        self.per_pos_contlex.values().flatten().map(String::as_str).collect()
    }

    /// Boolean vector over the global index, true exactly on `pos`'s block.
    pub fn mask_for_pos(&self, pos: &str) -> Result<Vec<bool>> {
        let labels = self
            .per_pos_contlex
            .get(pos)
            .ok_or_else(|| Error::Lookup(format!("POS {pos:?} not in fitted label space")))?;
        let offset = self.block_offset(pos);
        let mut mask = vec![false; self.n_contlex()];
        for slot in &mut mask[offset..offset + labels.len()] {
            *slot = true;
        }
        Ok(mask)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path.as_ref(), json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LabelSpace> {
        let text = fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }
}
