#![allow(dead_code)]

use std::sync::Arc;

use uuscout_core::corpus::{build_search_space, Dataset, DatasetSchema, FeatureKind, FeatureSpec, Instance, SearchSpace, Value};
use uuscout_core::oracle::{GroundTruth, TruthRecord};

pub const CRITICAL: &str = "pos";
pub const OTHER: &str = "neg";

pub fn schema(kind: FeatureKind, width: usize) -> DatasetSchema {
    DatasetSchema::new(
        (0..width).map(|i| FeatureSpec { name: format!("f{i}"), kind }).collect(),
        vec![CRITICAL.into(), OTHER.into()],
    )
    .unwrap()
}

/// Every row is predicted critical; `uu` rows are truly the other class.
pub fn labelled_space(kind: FeatureKind, rows: &[(Vec<f64>, f64, bool)]) -> (SearchSpace, Arc<GroundTruth>) {
    let width = rows.first().map_or(1, |r| r.0.len());
    let instances: Vec<Instance> = rows
        .iter()
        .enumerate()
        .map(|(i, (f, conf, uu))| {
            Instance::new(format!("x{i}"), f.iter().map(|v| Value::Num(*v)).collect(), CRITICAL, *conf)
                .with_true_label(if *uu { OTHER } else { CRITICAL })
        })
        .collect();
    let truth = GroundTruth::from_records(
        CRITICAL,
        instances.iter().map(|i| {
            (i.id.clone(), TruthRecord { true_label: i.hidden_true_label().unwrap().to_string(), cost: 1.0 })
        }),
    );
    let data = Dataset::new(schema(kind, width), instances).unwrap();
    (build_search_space(&data, CRITICAL, 0.5).unwrap(), Arc::new(truth))
}

pub fn space(kind: FeatureKind, rows: &[(Vec<f64>, f64)]) -> SearchSpace {
    let rows: Vec<_> = rows.iter().map(|(f, c)| (f.clone(), *c, false)).collect();
    labelled_space(kind, &rows).0
}

/// Arms of consecutive indices with the given (size, unknown-unknown count).
pub fn urn_arms(arms: &[(usize, usize)]) -> (SearchSpace, Arc<GroundTruth>, Vec<Vec<usize>>) {
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for (a, &(size, uu)) in arms.iter().enumerate() {
        let start = rows.len();
        for k in 0..size {
            rows.push((vec![a as f64], 0.9, k < uu));
        }
        groups.push((start..start + size).collect());
    }
    let (space, truth) = labelled_space(FeatureKind::Numeric, &rows);
    (space, truth, groups)
}
