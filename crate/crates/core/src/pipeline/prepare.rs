use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::cohort::{
    assign_outcomes, filter_by_prevalence, load_tables, normalize_medication_names, CohortTable, CovariateVector,
};
use crate::tensor::{count_cooccurrences, drop_empty_patients, tensor_stats, truncate_counts, IndicationMap, TensorStats};
use crate::{Correspondence, Error, Result, SparseTensor3};

/// Model-ready data for one correspondence mode. Rows of `labels` and
/// `covariates` follow the tensor's patient axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub correspondence: Correspondence,
    pub tensor: SparseTensor3,
    pub cohort: CohortTable,
    pub labels: Vec<u8>,
    pub covariates: Array2<f64>,
    pub stats: TensorStats,
    pub dropped_patients: Vec<String>,
}

/// Load, normalize medication names, label outcomes, filter by prevalence.
pub fn load_cohort(cfg: &ExperimentConfig) -> Result<CohortTable> {
    let p = &cfg.inputs;
    let table = load_tables(&p.encounters, &p.demographics, &p.income).map_err(|e| e.at_stage("ingest"))?;
    let table = match &p.medication_map {
        Some(map) => normalize_medication_names(table, map).map_err(|e| e.at_stage("normalize"))?,
        None => table,
    };
    let table = assign_outcomes(table, cfg.outcome).map_err(|e| e.at_stage("outcomes"))?;
    Ok(filter_by_prevalence(table, &cfg.prevalence))
}

pub fn load_indications(cfg: &ExperimentConfig) -> Result<Option<IndicationMap>> {
    match &cfg.inputs.indications {
        Some(primary) => IndicationMap::from_paths(primary, cfg.inputs.extra_indications.as_deref())
            .map(Some)
            .map_err(|e| e.at_stage("indications")),
        None => Ok(None),
    }
}

/// Count, truncate, drop empty patients, and align labels and covariates.
pub fn build_data(
    cohort: &CohortTable,
    mode: Correspondence,
    indications: Option<&IndicationMap>,
    percentile: f64,
) -> Result<PreparedData> {
    let counted = count_cooccurrences(cohort, mode, indications).map_err(|e| e.at_stage("count"))?;
    let truncated = truncate_counts(&counted, percentile).map_err(|e| e.at_stage("truncate"))?;
    let (tensor, cohort, dropped) = drop_empty_patients(&truncated, cohort);
    if dropped.all_empty {
        return Err(Error::EmptyTensor.at_stage("drop_empty"));
    }
    let ids = &tensor.labels[crate::tensor::PATIENT];
    let label_map = cohort
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("cohort has no outcome labels".into()).at_stage("align"))?;
    let labels = ids
        .iter()
        .map(|id| {
            label_map
                .get(id)
                .copied()
                .ok_or_else(|| Error::DimensionMismatch(format!("no label for patient `{id}`")).at_stage("align"))
        })
        .collect::<Result<Vec<u8>>>()?;
    let mut covariates = Array2::zeros((ids.len(), CovariateVector::NAMES.len()));
    for (i, id) in ids.iter().enumerate() {
        let c = cohort
            .covariates
            .get(id)
            .ok_or_else(|| Error::DimensionMismatch(format!("no covariates for patient `{id}`")).at_stage("align"))?;
        for (j, v) in c.to_array().into_iter().enumerate() {
            covariates[[i, j]] = v;
        }
    }
    let stats = tensor_stats(&tensor, &cohort);
    Ok(PreparedData {
        correspondence: mode,
        tensor,
        cohort,
        labels,
        covariates,
        stats,
        dropped_patients: dropped.removed,
    })
}

/// All stages for the configured correspondence mode.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let cohort = load_cohort(cfg)?;
    let indications = load_indications(cfg)?;
    build_data(&cohort, cfg.correspondence, indications.as_ref(), cfg.truncation_percentile)
}

/// Tensor characteristics under both correspondence modes, for one cohort.
pub fn stats_both_modes(cfg: &ExperimentConfig) -> Result<(TensorStats, TensorStats)> {
    let cohort = load_cohort(cfg)?;
    let indications = load_indications(cfg)?.ok_or_else(|| Error::MissingIndications.at_stage("indications"))?;
    let stats = |mode| match build_data(&cohort, mode, Some(&indications), cfg.truncation_percentile) {
        Ok(d) => Ok(d.stats),
        Err(e) if matches!(&e, Error::Stage { source, .. } if matches!(**source, Error::EmptyTensor)) => {
            Ok(TensorStats::default())
        }
        Err(e) => Err(e),
    };
    Ok((stats(Correspondence::Equal)?, stats(Correspondence::Indicated)?))
}
