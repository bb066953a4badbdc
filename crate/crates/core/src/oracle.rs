//! Truth queries: utility of a discovery, cost models, and the simulated and
//! interactive oracles.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, FeatureKind, Instance, SearchSpace};
use crate::error::{Error, Result};

/// Paper default for the utility tradeoff between discovery and cost.
pub const DEFAULT_GAMMA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub instance_id: String,
    pub true_label: String,
    pub cost: f64,
    pub is_unknown_unknown: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityConfig {
    pub gamma: f64,
    pub critical_class: String,
}

impl UtilityConfig {
    pub fn new(gamma: f64, critical_class: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::validation(format!("gamma {gamma} outside [0,1]")));
        }
        Ok(Self { gamma, critical_class: critical_class.into() })
    }
}

/// `1[unknown unknown] - gamma * cost`
pub fn utility(verdict: &OracleVerdict, config: &UtilityConfig) -> f64 {
    let found = if verdict.is_unknown_unknown { 1.0 } else { 0.0 };
    found - config.gamma * verdict.cost
}

pub fn uniform_cost(_instance: &Instance) -> f64 {
    1.0
}

/// `(length - minlength) / (maxlength - minlength)`, clamped to `[0,1]`.
pub fn variable_cost(length: f64, minlength: f64, maxlength: f64) -> Result<f64> {
    if minlength == maxlength {
        return Err(Error::DegenerateCostRange(minlength));
    }
    if minlength > maxlength {
        return Err(Error::validation("minlength must be below maxlength"));
    }
    Ok(((length - minlength) / (maxlength - minlength)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    /// Every query costs 1.
    #[default]
    Uniform,
    /// Normalized value of a numeric "length" feature. Missing bounds default
    /// to the feature's range over the dataset.
    Variable {
        feature: String,
        #[serde(default)]
        min: Option<f64>,
        #[serde(default)]
        max: Option<f64>,
    },
    /// The `cost` column of the instance file.
    Recorded,
}

impl CostModel {
    /// Cost of every instance of `dataset`, in order. Must run on raw
    /// (undiscretized) data for the variable model.
    pub fn costs(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        match self {
            CostModel::Uniform => Ok(dataset.instances().iter().map(uniform_cost).collect()),
            CostModel::Recorded => dataset
                .instances()
                .iter()
                .map(|i| {
                    i.hidden_cost()
                        .ok_or_else(|| Error::validation(format!("instance `{}` has no cost", i.id)))
                })
                .collect(),
            CostModel::Variable { feature, min, max } => {
                let f = dataset
                    .schema()
                    .feature_index(feature)
                    .ok_or_else(|| Error::config(format!("unknown cost feature `{feature}`")))?;
                if dataset.schema().features[f].kind != FeatureKind::Numeric
                    || dataset.bins()[f].is_some()
                {
                    return Err(Error::config(format!(
                        "cost feature `{feature}` must be a raw numeric feature"
                    )));
                }
                let lengths: Vec<f64> = dataset
                    .instances()
                    .iter()
                    .map(|i| i.features[f].as_f64().unwrap_or(0.0))
                    .collect();
                let lo = min.unwrap_or_else(|| lengths.iter().copied().fold(f64::INFINITY, f64::min));
                let hi = max.unwrap_or_else(|| lengths.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                lengths.iter().map(|&l| variable_cost(l, lo, hi)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub true_label: String,
    pub cost: f64,
}

/// Hidden labels and costs, keyed by instance id. Only oracles and the
/// evaluation harness hold one.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    critical_class: String,
    records: HashMap<String, TruthRecord>,
}

impl GroundTruth {
    /// Instances without a true label are left out.
    pub fn from_dataset(dataset: &Dataset, critical_class: &str, cost_model: &CostModel) -> Result<Self> {
        let costs = cost_model.costs(dataset)?;
        let records = dataset
            .instances()
            .iter()
            .zip(costs)
            .filter_map(|(inst, cost)| {
                inst.hidden_true_label().map(|label| {
                    (inst.id.clone(), TruthRecord { true_label: label.to_string(), cost })
                })
            })
            .collect();
        Ok(Self { critical_class: critical_class.to_string(), records })
    }

    pub fn from_records(
        critical_class: impl Into<String>,
        records: impl IntoIterator<Item = (String, TruthRecord)>,
    ) -> Self {
        Self { critical_class: critical_class.into(), records: records.into_iter().collect() }
    }

    pub fn critical_class(&self) -> &str {
        &self.critical_class
    }

    pub fn verdict(&self, instance_id: &str) -> Result<OracleVerdict> {
        let rec = self
            .records
            .get(instance_id)
            .ok_or_else(|| Error::UnknownInstance(instance_id.to_string()))?;
        Ok(OracleVerdict {
            instance_id: instance_id.to_string(),
            true_label: rec.true_label.clone(),
            cost: rec.cost,
            is_unknown_unknown: rec.true_label != self.critical_class,
        })
    }

    /// Errors unless every member of `space` has a record.
    pub fn check_covers(&self, space: &SearchSpace) -> Result<()> {
        match space.ids().find(|id| !self.records.contains_key(*id)) {
            Some(id) => Err(Error::validation(format!("instance `{id}` has no true label"))),
            None => Ok(()),
        }
    }

    /// Per-member unknown-unknown flags and costs of `space`, by index.
    pub fn flags_and_costs(&self, space: &SearchSpace) -> Result<(Vec<bool>, Vec<f64>)> {
        space
            .ids()
            .map(|id| self.verdict(id).map(|v| (v.is_unknown_unknown, v.cost)))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    }
}

pub trait Oracle {
    fn query(&mut self, instance_id: &str) -> Result<OracleVerdict>;
}

/// Answers from hidden ground truth and refuses queries past its budget.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    truth: Arc<GroundTruth>,
    budget: Option<usize>,
    used: usize,
}

impl SimulatedOracle {
    pub fn new(truth: Arc<GroundTruth>, budget: Option<usize>) -> Self {
        Self { truth, budget, used: 0 }
    }

    pub fn queries(&self) -> usize {
        self.used
    }
}

impl Oracle for SimulatedOracle {
    fn query(&mut self, instance_id: &str) -> Result<OracleVerdict> {
        if let Some(b) = self.budget {
            if self.used >= b {
                return Err(Error::BudgetExhausted(b));
            }
        }
        let v = self.truth.verdict(instance_id)?;
        self.used += 1;
        Ok(v)
    }
}

/// What a human labeler is shown: no confidence, no partition, no tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub step: usize,
    pub instance_id: String,
    pub features: Vec<(String, String)>,
    pub predicted_label: String,
}

impl Question {
    pub fn for_instance(step: usize, space: &SearchSpace, index: usize) -> Self {
        let inst = space.instance(index);
        let features = space
            .schema()
            .features
            .iter()
            .zip(&inst.features)
            .map(|(spec, v)| (spec.name.clone(), v.to_string()))
            .collect();
        Self {
            step,
            instance_id: inst.id.clone(),
            features,
            predicted_label: inst.predicted_label.clone(),
        }
    }
}

/// Oracle backed by a person. At most one question is pending; an answer is
/// accepted only for the pending step, a malformed answer leaves the question
/// pending so it can be asked again.
#[derive(Debug, Clone)]
pub struct InteractiveOracle {
    critical_class: String,
    classes: Vec<String>,
    costs: HashMap<String, f64>,
    pending: Option<Question>,
}

impl InteractiveOracle {
    /// `costs` maps instance ids to query costs; missing ids cost 1.
    pub fn new(critical_class: impl Into<String>, classes: Vec<String>, costs: HashMap<String, f64>) -> Self {
        Self { critical_class: critical_class.into(), classes, costs, pending: None }
    }

    pub fn pending(&self) -> Option<&Question> {
        self.pending.as_ref()
    }

    /// Poses a question. Re-posing the pending question is a no-op.
    pub fn pose(&mut self, question: Question) -> Result<()> {
        match &self.pending {
            Some(p) if *p == question => Ok(()),
            Some(p) => Err(Error::StaleAnswer { expected: Some(p.step), got: question.step }),
            None => {
                self.pending = Some(question);
                Ok(())
            }
        }
    }

    /// Accepts a class identifier, or `critical` / `other` (the latter only
    /// when the class set has exactly two classes).
    pub fn resolve_label(&self, answer: &str) -> Result<String> {
        let answer = answer.trim();
        if self.classes.iter().any(|c| c == answer) {
            return Ok(answer.to_string());
        }
        match answer {
            "critical" => Ok(self.critical_class.clone()),
            "other" => {
                let others: Vec<_> = self.classes.iter().filter(|c| **c != self.critical_class).collect();
                match others.as_slice() {
                    [only] => Ok((*only).clone()),
                    _ => Err(Error::MalformedAnswer("`other` is ambiguous; name a class".into())),
                }
            }
            _ => Err(Error::MalformedAnswer(format!("`{answer}` is not a class"))),
        }
    }

    pub fn answer(&mut self, step: usize, label: &str) -> Result<OracleVerdict> {
        let expected = self.pending.as_ref().map(|p| p.step);
        if expected != Some(step) {
            return Err(Error::StaleAnswer { expected, got: step });
        }
        let true_label = self.resolve_label(label)?;
        let question = self.pending.take().expect("checked above");
        let cost = self.costs.get(&question.instance_id).copied().unwrap_or(1.0);
        Ok(OracleVerdict {
            is_unknown_unknown: true_label != self.critical_class,
            instance_id: question.instance_id,
            true_label,
            cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(uu: bool, cost: f64) -> OracleVerdict {
        OracleVerdict { instance_id: "x".into(), true_label: String::new(), cost, is_unknown_unknown: uu }
    }

    #[test]
    fn utility_examples() {
        let cfg = UtilityConfig::new(DEFAULT_GAMMA, "c").unwrap();
        assert_eq!(utility(&verdict(true, 0.0), &cfg), 1.0);
        assert_eq!(utility(&verdict(false, 1.0), &cfg), -0.2);
        assert_eq!(utility(&verdict(true, 0.5), &cfg), 0.9);
        assert!(UtilityConfig::new(1.5, "c").is_err());
    }

    #[test]
    fn variable_cost_endpoints() {
        assert_eq!(variable_cost(3.0, 3.0, 13.0).unwrap(), 0.0);
        assert_eq!(variable_cost(13.0, 3.0, 13.0).unwrap(), 1.0);
        assert_eq!(variable_cost(8.0, 3.0, 13.0).unwrap(), 0.5);
        assert_eq!(variable_cost(20.0, 3.0, 13.0).unwrap(), 1.0);
        assert!(matches!(variable_cost(1.0, 4.0, 4.0), Err(Error::DegenerateCostRange(_))));
    }

    fn truth() -> Arc<GroundTruth> {
        Arc::new(GroundTruth::from_records(
            "cat",
            [
                ("a".to_string(), TruthRecord { true_label: "cat".into(), cost: 1.0 }),
                ("b".to_string(), TruthRecord { true_label: "dog".into(), cost: 1.0 }),
            ],
        ))
    }

    #[test]
    fn simulated_oracle_flags_and_budget() {
        let mut o = SimulatedOracle::new(truth(), Some(2));
        assert!(!o.query("a").unwrap().is_unknown_unknown);
        assert!(o.query("b").unwrap().is_unknown_unknown);
        assert!(matches!(o.query("a"), Err(Error::BudgetExhausted(2))));
        let mut unlimited = SimulatedOracle::new(truth(), None);
        assert!(matches!(unlimited.query("zz"), Err(Error::UnknownInstance(_))));
        assert_eq!(unlimited.query("b").unwrap(), unlimited.query("b").unwrap());
    }

    fn question(step: usize) -> Question {
        Question { step, instance_id: "a".into(), features: vec![], predicted_label: "cat".into() }
    }

    #[test]
    fn interactive_oracle_protocol() {
        let mut o = InteractiveOracle::new("cat", vec!["cat".into(), "dog".into()], HashMap::new());
        o.pose(question(1)).unwrap();
        o.pose(question(1)).unwrap();
        assert!(o.pose(question(2)).is_err());
        assert!(matches!(o.answer(1, "fish"), Err(Error::MalformedAnswer(_))));
        assert!(o.pending().is_some());
        let v = o.answer(1, "other").unwrap();
        assert!(v.is_unknown_unknown);
        assert_eq!(v.true_label, "dog");
        assert_eq!(v.cost, 1.0);
        // A second answer for the same step is stale.
        assert!(matches!(o.answer(1, "cat"), Err(Error::StaleAnswer { expected: None, got: 1 })));
    }
}
