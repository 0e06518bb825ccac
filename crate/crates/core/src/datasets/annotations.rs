//! Tab-separated annotation inputs and the UniProt-keyed label dictionary.

use std::collections::BTreeMap;

use super::labels::{LabelVec, PropertyLabels, SampleLabels};
use crate::error::{Error, Result};
use crate::structio::ComplexRecord;
use crate::tasks::{LabelDims, TaskId};

/// Known property labels per UniProt accession.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UniProtPropertyTable {
    pub dims: LabelDims,
    pub entries: BTreeMap<String, PropertyLabels>,
}

fn tsv_rows(text: &str, source: &str, columns: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::input(format!("{source}: {e}")))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != columns {
            return Err(Error::input(format!(
                "{source} row {line}: expected {columns} tab-separated columns, found {}",
                rec.len()
            )));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn is_header(row: &[String], first: &str) -> bool {
    row[0].eq_ignore_ascii_case(first)
}

impl UniProtPropertyTable {
    pub fn new(dims: LabelDims) -> Self {
        Self {
            dims,
            entries: BTreeMap::new(),
        }
    }

    /// Folds one annotation TSV (`uniprot_id \t task \t index`) into the
    /// table. Repeated bits are idempotent.
    pub fn add_annotations(&mut self, text: &str, source: &str) -> Result<()> {
        for (k, (line, row)) in tsv_rows(text, source, 3)?.into_iter().enumerate() {
            if k == 0 && is_header(&row, "uniprot_id") {
                continue;
            }
            let task: TaskId = row[1]
                .parse()
                .map_err(|e| Error::input(format!("{source} row {line}: {e}")))?;
            if task.is_affinity() {
                return Err(Error::input(format!(
                    "{source} row {line}: {task} is not a property task"
                )));
            }
            let dim = self.dims.dim(task);
            let index: usize = row[2]
                .parse()
                .map_err(|_| Error::input(format!("{source} row {line}: bad index {:?}", row[2])))?;
            if index >= dim {
                return Err(Error::input(format!(
                    "{source} row {line}: {task} index {index} out of range (valid 0..{})",
                    dim - 1
                )));
            }
            let entry = self.entries.entry(row[0].clone()).or_default();
            entry.slot(task).get_or_insert_with(|| LabelVec::zeros(dim)).set(index)?;
        }
        Ok(())
    }

    pub fn get(&self, uniprot_id: &str) -> Option<&PropertyLabels> {
        self.entries.get(uniprot_id)
    }
}

/// Builds the table from any number of annotation files (EC and GO).
pub fn build_uniprot_table<'a>(
    sources: impl IntoIterator<Item = (&'a str, &'a str)>,
    dims: LabelDims,
) -> Result<UniProtPropertyTable> {
    let mut table = UniProtPropertyTable::new(dims);
    for (name, text) in sources {
        table.add_annotations(text, name)?;
    }
    Ok(table)
}

/// Attaches every vector the table holds for each chain's UniProt id.
pub fn annotate_complex(rec: &ComplexRecord, table: &UniProtPropertyTable) -> SampleLabels {
    let chains = rec
        .chains
        .iter()
        .filter_map(|c| {
            let labels = c.uniprot_id.as_deref().and_then(|id| table.get(id))?;
            Some((c.chain_id.clone(), labels.clone()))
        })
        .collect();
    SampleLabels {
        lba: None,
        ppa: None,
        chains,
    }
}

/// Affinity TSV: `complex_id \t lba|ppa \t pK`.
pub fn parse_affinity_table(text: &str, source: &str) -> Result<BTreeMap<String, (TaskId, f64)>> {
    let mut out = BTreeMap::new();
    for (k, (line, row)) in tsv_rows(text, source, 3)?.into_iter().enumerate() {
        if k == 0 && is_header(&row, "complex_id") {
            continue;
        }
        let task: TaskId = row[1]
            .parse()
            .map_err(|e| Error::input(format!("{source} row {line}: {e}")))?;
        if !task.is_affinity() {
            return Err(Error::input(format!(
                "{source} row {line}: {task} is not an affinity task"
            )));
        }
        let value: f64 = row[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::input(format!("{source} row {line}: bad affinity {:?}", row[2])))?;
        if out.insert(row[0].clone(), (task, value)).is_some() {
            return Err(Error::input(format!(
                "{source} row {line}: duplicate affinity for {}",
                row[0]
            )));
        }
    }
    Ok(out)
}

/// Cluster TSV: `chain_key \t cluster_id`, chain keys `{complex_id}_{chain_id}`.
pub fn parse_cluster_table(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, (line, row)) in tsv_rows(text, source, 2)?.into_iter().enumerate() {
        if k == 0 && is_header(&row, "chain_key") {
            continue;
        }
        if out.insert(row[0].clone(), row[1].clone()).is_some() {
            return Err(Error::input(format!("{source} row {line}: duplicate chain key {}", row[0])));
        }
    }
    Ok(out)
}

pub fn chain_key(complex_id: &str, chain_id: &str) -> String {
    format!("{complex_id}_{chain_id}")
}
