//! Ingestion of scored predictions and construction of the search space.
//!
//! An instance file is either CSV with a header row or JSON lines (one object
//! per line, detected by a `.jsonl`/`.ndjson` extension). Required columns are
//! `id`, `predicted_label`, `confidence` and one column per schema feature;
//! `true_label` and `cost` are optional. The schema lives in its own TOML file:
//!
//! ```toml
//! classes = ["cat", "dog"]
//!
//! [[features]]
//! name = "black_fur"
//! kind = "binary"
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default confidence threshold.
pub const DEFAULT_TAU: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub classes: Vec<String>,
    pub features: Vec<FeatureSpec>,
}

impl DatasetSchema {
    pub fn new(features: Vec<FeatureSpec>, classes: Vec<String>) -> Result<Self> {
        let schema = Self { classes, features };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Self =
            toml::from_str(text).map_err(|e| Error::validation(format!("schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for f in &self.features {
            if RESERVED_COLUMNS.contains(&f.name.as_str()) {
                return Err(Error::validation(format!(
                    "feature name `{}` collides with a reserved column",
                    f.name
                )));
            }
            if !names.insert(f.name.as_str()) {
                return Err(Error::validation(format!("duplicate feature name `{}`", f.name)));
            }
        }
        let classes: HashSet<_> = self.classes.iter().collect();
        if classes.len() != self.classes.len() {
            return Err(Error::validation("duplicate class identifier"));
        }
        if self.classes.is_empty() {
            return Err(Error::validation("class set is empty"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.classes.iter().any(|c| c == class)
    }
}

const RESERVED_COLUMNS: [&str; 5] = ["id", "predicted_label", "confidence", "true_label", "cost"];

/// A single feature value. Numeric and binary features hold numbers,
/// categorical features hold their level name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Cat(_) => None,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Num(_), Value::Cat(_)) => Ordering::Less,
            (Value::Cat(_), Value::Num(_)) => Ordering::Greater,
            (Value::Cat(a), Value::Cat(b)) => a.cmp(b),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Num(v) => {
                0u8.hash(state);
                // -0.0 and 0.0 compare unequal under total_cmp, so bits are consistent.
                v.to_bits().hash(state);
            }
            Value::Cat(s) => {
                1u8.hash(state);
                s.hash(state);
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

/// One scored test point. The ground-truth label and the labeling cost are
/// carried along but only reachable through the `hidden_*` accessors, which
/// the oracle and the evaluation harness use; policies never see instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub features: Vec<Value>,
    pub predicted_label: String,
    pub confidence: f64,
    true_label: Option<String>,
    cost: Option<f64>,
}

/// What a labeler or a policy may see of an instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceView<'a> {
    pub id: &'a str,
    pub features: &'a [Value],
    pub predicted_label: &'a str,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        features: Vec<Value>,
        predicted_label: impl Into<String>,
        confidence: f64,
    ) -> Self {
        Self {
            id: id.into(),
            features,
            predicted_label: predicted_label.into(),
            confidence,
            true_label: None,
            cost: None,
        }
    }

    pub fn with_true_label(mut self, label: impl Into<String>) -> Self {
        self.true_label = Some(label.into());
        self
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = Some(cost);
        self
    }

    pub fn hidden_true_label(&self) -> Option<&str> {
        self.true_label.as_deref()
    }

    pub fn hidden_cost(&self) -> Option<f64> {
        self.cost
    }

    pub fn view(&self) -> InstanceView<'_> {
        InstanceView {
            id: &self.id,
            features: &self.features,
            predicted_label: &self.predicted_label,
        }
    }
}

/// A validated collection of instances with its schema. `bins[f]` holds the
/// quantile edges of feature `f` once it has been discretized; the feature
/// values are then bin indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: DatasetSchema,
    instances: Vec<Instance>,
    bins: Vec<Option<Vec<f64>>>,
}

impl Dataset {
    pub fn new(schema: DatasetSchema, instances: Vec<Instance>) -> Result<Self> {
        let bins = vec![None; schema.len()];
        Self::with_bins(schema, instances, bins)
    }

    fn with_bins(
        schema: DatasetSchema,
        instances: Vec<Instance>,
        bins: Vec<Option<Vec<f64>>>,
    ) -> Result<Self> {
        schema.validate()?;
        let mut seen = HashSet::new();
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::DuplicateId(inst.id.clone()));
            }
            validate_instance(&schema, inst)?;
        }
        Ok(Self { schema, instances, bins })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn bins(&self) -> &[Option<Vec<f64>>] {
        &self.bins
    }

    pub fn encoder(&self) -> Encoder {
        Encoder::fit(&self.schema, self.instances.iter().map(|i| i.features.as_slice()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let with_truth = self.instances.iter().any(|i| i.true_label.is_some());
        let with_cost = self.instances.iter().any(|i| i.cost.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id", "predicted_label", "confidence"];
        if with_truth {
            header.push("true_label");
        }
        if with_cost {
            header.push("cost");
        }
        header.extend(self.schema.features.iter().map(|f| f.name.as_str()));
        w.write_record(&header).map_err(csv_io)?;
        for inst in &self.instances {
            let mut row = vec![
                inst.id.clone(),
                inst.predicted_label.clone(),
                inst.confidence.to_string(),
            ];
            if with_truth {
                row.push(inst.true_label.clone().unwrap_or_default());
            }
            if with_cost {
                row.push(inst.cost.map(|c| c.to_string()).unwrap_or_default());
            }
            row.extend(inst.features.iter().map(Value::to_string));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn validate_instance(schema: &DatasetSchema, inst: &Instance) -> Result<()> {
    let ctx = |msg: String| Error::validation(format!("instance `{}`: {msg}", inst.id));
    if inst.features.len() != schema.len() {
        return Err(ctx(format!(
            "{} feature values, schema has {}",
            inst.features.len(),
            schema.len()
        )));
    }
    if !(0.0..=1.0).contains(&inst.confidence) {
        return Err(ctx(format!("confidence {} outside [0,1]", inst.confidence)));
    }
    if let Some(c) = inst.cost {
        if !(0.0..=1.0).contains(&c) {
            return Err(ctx(format!("cost {c} outside [0,1]")));
        }
    }
    if !schema.has_class(&inst.predicted_label) {
        return Err(ctx(format!("unknown predicted label `{}`", inst.predicted_label)));
    }
    if let Some(t) = &inst.true_label {
        if !schema.has_class(t) {
            return Err(ctx(format!("unknown true label `{t}`")));
        }
    }
    for (spec, value) in schema.features.iter().zip(&inst.features) {
        let ok = match (spec.kind, value) {
            (FeatureKind::Numeric, Value::Num(v)) => v.is_finite(),
            (FeatureKind::Binary, Value::Num(v)) => *v == 0.0 || *v == 1.0,
            (FeatureKind::Categorical, Value::Cat(s)) => !s.is_empty(),
            _ => false,
        };
        if !ok {
            return Err(ctx(format!("bad value `{value}` for {:?} feature `{}`", spec.kind, spec.name)));
        }
    }
    Ok(())
}

type Row = (u64, HashMap<String, String>);

fn is_json_lines(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}

fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let file = std::fs::File::open(path)?;
    if is_json_lines(path) {
        read_json_rows(file)
    } else {
        read_csv_rows(file)
    }
}

fn read_csv_rows<R: Read>(input: R) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let map = header
            .iter()
            .zip(record.iter())
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        rows.push((line, map));
    }
    Ok(rows)
}

fn read_json_rows<R: Read>(input: R) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line_no = n as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let map = obj
            .into_iter()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Null => String::new(),
                    other => other.to_string(),
                };
                (k, s)
            })
            .collect();
        rows.push((line_no, map));
    }
    Ok(rows)
}

fn parse_feature(spec: &FeatureSpec, raw: Option<&String>, line: u64) -> Result<Value> {
    let raw = match raw {
        Some(r) if !r.is_empty() => r,
        _ => {
            return Err(Error::Parse {
                line,
                message: format!("missing value for feature `{}`", spec.name),
            })
        }
    };
    match spec.kind {
        FeatureKind::Categorical => Ok(Value::Cat(raw.clone())),
        FeatureKind::Numeric | FeatureKind::Binary => raw
            .parse::<f64>()
            .map(Value::Num)
            .map_err(|_| Error::Parse {
                line,
                message: format!("feature `{}`: `{raw}` is not a number", spec.name),
            }),
    }
}

fn parse_instance(schema: &DatasetSchema, (line, row): &Row) -> Result<Instance> {
    let line = *line;
    let required = |key: &str| -> Result<&String> {
        row.get(key).filter(|v| !v.is_empty()).ok_or_else(|| Error::Parse {
            line,
            message: format!("missing column `{key}`"),
        })
    };
    let number = |key: &str, raw: &str| -> Result<f64> {
        raw.parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("`{key}`: `{raw}` is not a number"),
        })
    };
    let id = required("id")?.clone();
    let predicted = required("predicted_label")?.clone();
    let confidence = number("confidence", required("confidence")?)?;
    let features = schema
        .features
        .iter()
        .map(|spec| parse_feature(spec, row.get(&spec.name), line))
        .collect::<Result<Vec<_>>>()?;
    let mut inst = Instance::new(id, features, predicted, confidence);
    if let Some(t) = row.get("true_label").filter(|v| !v.is_empty()) {
        inst.true_label = Some(t.clone());
    }
    if let Some(c) = row.get("cost").filter(|v| !v.is_empty()) {
        inst.cost = Some(number("cost", c)?);
    }
    Ok(inst)
}

/// Reads an instance file. Rows keep their file order.
pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let rows = read_rows(path.as_ref())?;
    instances_from_rows(schema, &rows)
}

/// Same as [`load_dataset`] for in-memory CSV text.
pub fn parse_dataset_csv(text: &str, schema: &DatasetSchema) -> Result<Dataset> {
    let rows = read_csv_rows(text.as_bytes())?;
    instances_from_rows(schema, &rows)
}

fn instances_from_rows(schema: &DatasetSchema, rows: &[Row]) -> Result<Dataset> {
    let instances = rows
        .iter()
        .map(|row| parse_instance(schema, row))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(schema.clone(), instances)
}

/// Feature vectors of the training set, used only by the similarity baselines.
pub fn load_training_features(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Vec<Vec<Value>>> {
    read_rows(path.as_ref())?
        .iter()
        .map(|(line, row)| {
            schema
                .features
                .iter()
                .map(|spec| parse_feature(spec, row.get(&spec.name), *line))
                .collect()
        })
        .collect()
}

pub fn write_training_features<W: Write>(
    out: W,
    schema: &DatasetSchema,
    rows: &[Vec<Value>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(schema.features.iter().map(|f| f.name.as_str()))
        .map_err(csv_io)?;
    for row in rows {
        w.write_record(row.iter().map(Value::to_string)).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Maps feature vectors into real space: numeric and binary features take one
/// coordinate, categorical features are one-hot encoded over the levels seen
/// when the encoder was fitted. Unseen levels encode as all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    slots: Vec<Slot>,
    width: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Scalar,
    OneHot(Vec<String>),
}

impl Encoder {
    pub fn fit<'a>(schema: &DatasetSchema, rows: impl Iterator<Item = &'a [Value]>) -> Self {
        let mut levels: Vec<BTreeSet<String>> = vec![BTreeSet::new(); schema.len()];
        for row in rows {
            for (f, v) in row.iter().enumerate() {
                if let Value::Cat(s) = v {
                    levels[f].insert(s.clone());
                }
            }
        }
        let slots: Vec<Slot> = schema
            .features
            .iter()
            .zip(levels)
            .map(|(spec, lv)| match spec.kind {
                FeatureKind::Categorical => Slot::OneHot(lv.into_iter().collect()),
                _ => Slot::Scalar,
            })
            .collect();
        let width = slots
            .iter()
            .map(|s| match s {
                Slot::Scalar => 1,
                Slot::OneHot(l) => l.len(),
            })
            .sum();
        Self { slots, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn encode(&self, features: &[Value]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width);
        for (slot, v) in self.slots.iter().zip(features) {
            match slot {
                Slot::Scalar => out.push(v.as_f64().unwrap_or(0.0)),
                Slot::OneHot(levels) => {
                    let hit = match v {
                        Value::Cat(s) => levels.binary_search(s).ok(),
                        Value::Num(_) => None,
                    };
                    out.extend((0..levels.len()).map(|i| if Some(i) == hit { 1.0 } else { 0.0 }));
                }
            }
        }
        out
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The high-confidence predictions for the critical class: the set the
/// discovery process searches for mistakes.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    schema: DatasetSchema,
    bins: Vec<Option<Vec<f64>>>,
    encoder: Encoder,
    instances: Vec<Instance>,
    encoded: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    critical_class: String,
    tau: f64,
}

impl SearchSpace {
    fn from_parts(
        schema: DatasetSchema,
        bins: Vec<Option<Vec<f64>>>,
        encoder: Encoder,
        instances: Vec<Instance>,
        critical_class: String,
        tau: f64,
    ) -> Self {
        let encoded = instances.iter().map(|i| encoder.encode(&i.features)).collect();
        let index = instances
            .iter()
            .enumerate()
            .map(|(n, i)| (i.id.clone(), n))
            .collect();
        Self { schema, bins, encoder, instances, encoded, index, critical_class, tau }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn instance(&self, idx: usize) -> &Instance {
        &self.instances[idx]
    }

    pub fn encoded(&self, idx: usize) -> &[f64] {
        &self.encoded[idx]
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn bins(&self) -> &[Option<Vec<f64>>] {
        &self.bins
    }

    pub fn critical_class(&self) -> &str {
        &self.critical_class
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.instances.iter().map(|i| i.id.as_str())
    }

    /// The members as a plain dataset, e.g. to filter again.
    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            instances: self.instances.clone(),
            bins: self.bins.clone(),
        }
    }

    /// A sub-space over the given member indices, sharing this space's encoder.
    pub fn subset(&self, indices: &[usize]) -> SearchSpace {
        let instances = indices.iter().map(|&i| self.instances[i].clone()).collect();
        Self::from_parts(
            self.schema.clone(),
            self.bins.clone(),
            self.encoder.clone(),
            instances,
            self.critical_class.clone(),
            self.tau,
        )
    }

    /// Seeded sample of `round(fraction * N)` members, `None` when that rounds to zero.
    pub fn sample(&self, fraction: f64, seed: u64) -> Option<SearchSpace> {
        let n = (fraction * self.len() as f64).round() as usize;
        if n == 0 {
            return None;
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut chosen = idx[..n.min(self.len())].to_vec();
        chosen.sort_unstable();
        Some(self.subset(&chosen))
    }
}

/// Keeps the instances predicted as `critical_class` with confidence strictly
/// above `tau`.
pub fn build_search_space(dataset: &Dataset, critical_class: &str, tau: f64) -> Result<SearchSpace> {
    if !dataset.schema.has_class(critical_class) {
        return Err(Error::validation(format!(
            "critical class `{critical_class}` not in the class set"
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::validation(format!("tau {tau} outside [0,1]")));
    }
    let members: Vec<Instance> = dataset
        .instances
        .iter()
        .filter(|i| i.predicted_label == critical_class && i.confidence > tau)
        .cloned()
        .collect();
    if members.is_empty() {
        return Err(Error::EmptySearchSpace { class: critical_class.to_string(), tau });
    }
    Ok(SearchSpace::from_parts(
        dataset.schema.clone(),
        dataset.bins.clone(),
        dataset.encoder(),
        members,
        critical_class.to_string(),
        tau,
    ))
}

#[derive(Debug, Clone)]
pub struct Discretized {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Equal-frequency edges; a value `v` falls in bin `#{edges < v}`.
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let Some(&max) = sorted.last() else {
        return Vec::new();
    };
    let mut edges: Vec<f64> = Vec::new();
    for k in 1..bins {
        let e = quantile(&sorted, k as f64 / bins as f64);
        if e < max && edges.last().is_none_or(|&last| e > last) {
            edges.push(e);
        }
    }
    edges
}

pub fn bin_of(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|&e| e < v)
}

/// Replaces every numeric feature by its equal-frequency bin index. Binary and
/// categorical features pass through, as do features that are already binned.
pub fn discretize(dataset: &Dataset, bins_per_feature: usize) -> Result<Discretized> {
    if bins_per_feature < 2 {
        return Err(Error::validation("bins_per_feature must be at least 2"));
    }
    let mut instances = dataset.instances.clone();
    let mut bins = dataset.bins.clone();
    let mut warnings = Vec::new();
    for (f, spec) in dataset.schema.features.iter().enumerate() {
        if spec.kind != FeatureKind::Numeric || bins[f].is_some() {
            continue;
        }
        let column: Vec<f64> = instances
            .iter()
            .filter_map(|i| i.features[f].as_f64())
            .collect();
        let edges = quantile_edges(&column, bins_per_feature);
        if edges.is_empty() {
            let msg = format!("feature `{}` is constant; kept as a single bin", spec.name);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        for inst in &mut instances {
            if let Value::Num(v) = inst.features[f] {
                inst.features[f] = Value::Num(bin_of(&edges, v) as f64);
            }
        }
        bins[f] = Some(edges);
    }
    let dataset = Dataset::with_bins(dataset.schema.clone(), instances, bins)?;
    Ok(Discretized { dataset, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(kinds: &[(&str, FeatureKind)]) -> DatasetSchema {
        DatasetSchema::new(
            kinds
                .iter()
                .map(|(n, k)| FeatureSpec { name: n.to_string(), kind: *k })
                .collect(),
            vec!["c".into(), "d".into()],
        )
        .unwrap()
    }

    fn bin_schema() -> DatasetSchema {
        schema(&[("f", FeatureKind::Binary)])
    }

    #[test]
    fn loads_rows_in_file_order() {
        let text = "id,predicted_label,confidence,f\nb,c,0.9,1\na,d,0.7,0\nz,c,0.66,1\n";
        let ds = parse_dataset_csv(text, &bin_schema()).unwrap();
        let ids: Vec<_> = ds.instances().iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "z"]);
    }

    #[test]
    fn rejects_confidence_out_of_range() {
        let text = "id,predicted_label,confidence,f\na,c,1.2,1\n";
        let err = parse_dataset_csv(text, &bin_schema()).unwrap_err();
        assert!(matches!(err, Error::Validation(m) if m.contains("confidence")));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text = "id,predicted_label,confidence,f\na7,c,0.9,1\na7,c,0.8,0\n";
        let err = parse_dataset_csv(text, &bin_schema()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "a7"));
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = "id,predicted_label,confidence,f\na,c,0.9,1\nb,c,high,1\n";
        match parse_dataset_csv(text, &bin_schema()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_feature_value_is_rejected() {
        let text = "id,predicted_label,confidence,f\na,c,0.9,\n";
        assert!(matches!(
            parse_dataset_csv(text, &bin_schema()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn json_lines_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"predicted_label\":\"c\",\"confidence\":0.9,\"f\":1,\"true_label\":\"d\"}\n",
        )
        .unwrap();
        let ds = load_dataset(&path, &bin_schema()).unwrap();
        assert_eq!(ds.instances()[0].hidden_true_label(), Some("d"));
    }

    #[test]
    fn search_space_threshold_is_strict() {
        let ds = Dataset::new(
            bin_schema(),
            vec![
                Instance::new("in", vec![Value::Num(1.0)], "c", 0.651),
                Instance::new("edge", vec![Value::Num(1.0)], "c", 0.65),
                Instance::new("other", vec![Value::Num(1.0)], "d", 0.99),
            ],
        )
        .unwrap();
        let space = build_search_space(&ds, "c", DEFAULT_TAU).unwrap();
        assert_eq!(space.ids().collect::<Vec<_>>(), ["in"]);
        assert!(matches!(
            build_search_space(&ds, "c", 0.9),
            Err(Error::EmptySearchSpace { .. })
        ));
    }

    #[test]
    fn discretize_leaves_binary_alone() {
        let ds = Dataset::new(
            bin_schema(),
            vec![
                Instance::new("a", vec![Value::Num(1.0)], "c", 0.9),
                Instance::new("b", vec![Value::Num(0.0)], "c", 0.9),
            ],
        )
        .unwrap();
        let out = discretize(&ds, 4).unwrap();
        assert_eq!(out.dataset.instances(), ds.instances());
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn discretize_splits_at_the_median() {
        let s = schema(&[("x", FeatureKind::Numeric)]);
        let insts = (1..=4)
            .map(|v| Instance::new(format!("i{v}"), vec![Value::Num(v as f64)], "c", 0.9))
            .collect();
        let out = discretize(&Dataset::new(s, insts).unwrap(), 2).unwrap();
        assert_eq!(out.dataset.bins()[0], Some(vec![2.5]));
        let binned: Vec<f64> = out
            .dataset
            .instances()
            .iter()
            .map(|i| i.features[0].as_f64().unwrap())
            .collect();
        assert_eq!(binned, [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_column_gets_one_bin_and_a_warning() {
        let s = schema(&[("x", FeatureKind::Numeric)]);
        let insts = (0..3)
            .map(|n| Instance::new(format!("i{n}"), vec![Value::Num(5.0)], "c", 0.9))
            .collect();
        let out = discretize(&Dataset::new(s, insts).unwrap(), 3).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out
            .dataset
            .instances()
            .iter()
            .all(|i| i.features[0] == Value::Num(0.0)));
    }

    #[test]
    fn categorical_one_hot_encoding() {
        let s = schema(&[("color", FeatureKind::Categorical), ("x", FeatureKind::Numeric)]);
        let ds = Dataset::new(
            s,
            vec![
                Instance::new("a", vec![Value::Cat("red".into()), Value::Num(2.0)], "c", 0.9),
                Instance::new("b", vec![Value::Cat("blue".into()), Value::Num(3.0)], "c", 0.9),
            ],
        )
        .unwrap();
        let enc = ds.encoder();
        assert_eq!(enc.width(), 3);
        assert_eq!(enc.encode(&ds.instances()[0].features), [0.0, 1.0, 2.0]);
        assert_eq!(enc.encode(&[Value::Cat("green".into()), Value::Num(1.0)]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn schema_round_trips_through_toml() {
        let s = schema(&[("a", FeatureKind::Numeric), ("b", FeatureKind::Categorical)]);
        assert_eq!(DatasetSchema::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }
}
