//! Label merging, cluster-aware splits and synthetic corpora.

mod annotations;
mod labels;
mod splits;
mod synthetic;

use std::collections::BTreeMap;

pub use annotations::{
    annotate_complex, build_uniprot_table, chain_key, parse_affinity_table, parse_cluster_table, UniProtPropertyTable,
};
pub use labels::{is_fully_labeled, LabelVec, PropertyLabels, SampleLabels};
pub use splits::{assemble_splits, SampleProvenance, Split, SplitAssignment, SplitFractions, SplitProvenance};
pub use synthetic::{generate_synthetic, random_complex, synthetic_tables, SyntheticConfig, SyntheticTables};

use crate::error::{Error, Result};
use crate::structio::{from_json_str, to_canonical_string, ComplexRecord};
use crate::tasks::TaskId;

/// A complex together with every label known for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub record: ComplexRecord,
    pub labels: SampleLabels,
}

/// Writes the `{complex_id: labels}` document.
pub fn write_labels(samples: &[Sample]) -> String {
    let map: BTreeMap<&str, &SampleLabels> = samples
        .iter()
        .map(|s| (s.record.complex_id.as_str(), &s.labels))
        .collect();
    to_canonical_string(&map)
}

pub fn parse_labels(text: &str) -> Result<BTreeMap<String, SampleLabels>> {
    from_json_str(text)
}

/// Pairs records with their labels; records without an entry get none.
pub fn join_samples(records: Vec<ComplexRecord>, labels: &BTreeMap<String, SampleLabels>) -> Result<Vec<Sample>> {
    for id in labels.keys() {
        if !records.iter().any(|r| &r.complex_id == id) {
            return Err(Error::input(format!("labels given for unknown complex {id}")));
        }
    }
    Ok(records
        .into_iter()
        .map(|record| {
            let labels = labels.get(&record.complex_id).cloned().unwrap_or_default();
            Sample { record, labels }
        })
        .collect())
}

/// Combines table-derived chain labels with an affinity entry.
pub fn label_sample(
    rec: &ComplexRecord,
    table: &UniProtPropertyTable,
    affinities: &BTreeMap<String, (TaskId, f64)>,
) -> Result<SampleLabels> {
    let mut labels = annotate_complex(rec, table);
    match affinities.get(&rec.complex_id) {
        Some((TaskId::Lba, v)) => labels.lba = Some(*v),
        Some((TaskId::Ppa, v)) => labels.ppa = Some(*v),
        Some((t, _)) => return Err(Error::input(format!("{t} is not an affinity task"))),
        None => {}
    }
    labels.validate(&table.dims)?;
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structio::{parse_pdb_subset, write_pdb};
    use crate::tasks::LabelDims;

    #[test]
    fn synthetic_tables_reproduce_labels_through_the_pipeline() {
        let cfg = SyntheticConfig::default();
        let samples = generate_synthetic(&cfg).unwrap();
        let tables = synthetic_tables(&samples, cfg.cluster_fraction, cfg.seed);
        let table = build_uniprot_table([("ann", tables.annotations.as_str())], LabelDims::uniform(8)).unwrap();
        let aff = parse_affinity_table(&tables.affinities, "aff").unwrap();
        for s in &samples {
            let parsed = parse_pdb_subset(&write_pdb(&s.record), &s.record.complex_id).unwrap();
            let labels = label_sample(&parsed.record, &table, &aff).unwrap();
            assert_eq!(labels, s.labels, "{}", s.record.complex_id);
        }
        let clusters = parse_cluster_table(&tables.clusters, "clu").unwrap();
        let a = assemble_splits(&samples, &clusters, SplitFractions::default(), 3).unwrap();
        a.check_leakage().unwrap();
    }

    #[test]
    fn labels_document_round_trips() {
        let samples = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let text = write_labels(&samples);
        let back = parse_labels(&text).unwrap();
        let records = samples.iter().map(|s| s.record.clone()).collect();
        assert_eq!(join_samples(records, &back).unwrap(), samples);
    }
}
