//! Weight- and age-based dosage rules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::VitalKind;
use crate::store::VitalStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DoseSpec {
    /// `rate` in unit per kg body weight.
    PerKg { rate: f64 },
    Fixed { amount: f64 },
}

/// One age band of a rule. `min_age` is inclusive, `max_age` exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DosageBranch {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_age: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_age: Option<f64>,
    pub dose: DoseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dose: Option<f64>,
}

impl DosageBranch {
    fn is_gated(&self) -> bool {
        self.min_age.is_some() || self.max_age.is_some()
    }

    fn admits(&self, age: Option<f64>) -> bool {
        match age {
            None => !self.is_gated(),
            Some(age) => {
                self.min_age.is_none_or(|lo| age >= lo) && self.max_age.is_none_or(|hi| age < hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DosageRule {
    pub id: String,
    pub drug: String,
    #[serde(default = "default_unit")]
    pub unit: String,
    pub rounding_increment: f64,
    pub branches: Vec<DosageBranch>,
}

fn default_unit() -> String {
    "mg".to_string()
}

impl DosageRule {
    /// Single-branch weight-based rule.
    pub fn per_kg(id: &str, drug: &str, rate: f64, rounding_increment: f64) -> Self {
        DosageRule {
            id: id.into(),
            drug: drug.into(),
            unit: default_unit(),
            rounding_increment,
            branches: vec![DosageBranch {
                name: "default".into(),
                min_age: None,
                max_age: None,
                dose: DoseSpec::PerKg { rate },
                max_dose: None,
            }],
        }
    }

    pub fn check(&self) -> Result<(), DosageError> {
        let bad = |reason: &str| Err(DosageError::InvalidRule { rule: self.id.clone(), reason: reason.into() });
        if !(self.rounding_increment.is_finite() && self.rounding_increment > 0.0) {
            return bad("rounding increment must be positive");
        }
        if self.branches.is_empty() {
            return bad("rule has no branches");
        }
        for branch in &self.branches {
            let amount = match branch.dose {
                DoseSpec::PerKg { rate } => rate,
                DoseSpec::Fixed { amount } => amount,
            };
            if !(amount.is_finite() && amount > 0.0) {
                return bad("dose rate or amount must be positive");
            }
            if let (Some(lo), Some(hi)) = (branch.min_age, branch.max_age) {
                if lo >= hi {
                    return bad("empty age band");
                }
            }
        }
        Ok(())
    }

    fn needs_age(&self) -> bool {
        self.branches.iter().any(DosageBranch::is_gated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosageInput {
    pub kind: VitalKind,
    pub value: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosageResult {
    pub rule_id: String,
    pub drug: String,
    pub branch: String,
    pub dose: f64,
    pub unit: String,
    pub inputs: Vec<DosageInput>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum DosageError {
    #[error("missing dependency: {kind} is unknown")]
    MissingDependency { kind: VitalKind },
    #[error("rule `{rule}`: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error("rule `{rule}` has no branch for age {age}")]
    NoApplicableBranch { rule: String, age: f64 },
    #[error("rule `{rule}` yields a non-positive dose")]
    NonPositiveDose { rule: String },
    #[error("unknown dosage rule `{0}`")]
    UnknownRule(String),
}

/// Rounds half away from zero to a multiple of `increment`. The quotient is
/// snapped to 1e-9 first so that products which are exact ties in decimal
/// arithmetic round the same way despite binary representation error.
pub fn round_to_increment(value: f64, increment: f64) -> f64 {
    let steps = value / increment;
    let snapped = (steps * 1e9).round() / 1e9;
    snapped.round() * increment
}

pub fn compute_dosage(rule: &DosageRule, store: &VitalStore, now: u64) -> Result<DosageResult, DosageError> {
    rule.check()?;
    let mut inputs = Vec::new();
    let mut read = |kind: VitalKind| -> Result<f64, DosageError> {
        let obs = store.latest(kind, now).ok_or(DosageError::MissingDependency { kind })?;
        inputs.push(DosageInput { kind, value: obs.reading.value, timestamp: obs.reading.timestamp });
        Ok(obs.reading.value)
    };

    let age = if rule.needs_age() { Some(read(VitalKind::Age)?) } else { None };
    let branch = rule
        .branches
        .iter()
        .find(|b| b.admits(age))
        .ok_or_else(|| DosageError::NoApplicableBranch {
            rule: rule.id.clone(),
            age: age.unwrap_or(f64::NAN),
        })?;
    let mut raw = match branch.dose {
        DoseSpec::PerKg { rate } => rate * read(VitalKind::Weight)?,
        DoseSpec::Fixed { amount } => amount,
    };
    if let Some(cap) = branch.max_dose {
        raw = raw.min(cap);
    }
    let dose = round_to_increment(raw, rule.rounding_increment);
    if dose <= 0.0 {
        return Err(DosageError::NonPositiveDose { rule: rule.id.clone() });
    }
    Ok(DosageResult {
        rule_id: rule.id.clone(),
        drug: rule.drug.clone(),
        branch: branch.name.clone(),
        dose,
        unit: rule.unit.clone(),
        inputs,
    })
}

/// Rules indexed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DosageRuleSet {
    rules: BTreeMap<String, DosageRule>,
}

impl DosageRuleSet {
    pub fn new(rules: Vec<DosageRule>) -> Result<Self, DosageError> {
        let mut map = BTreeMap::new();
        for rule in rules {
            rule.check()?;
            if map.contains_key(&rule.id) {
                return Err(DosageError::InvalidRule { rule: rule.id, reason: "duplicate rule id".into() });
            }
            map.insert(rule.id.clone(), rule);
        }
        Ok(DosageRuleSet { rules: map })
    }

    pub fn parse(text: &str) -> Result<Self, DosageError> {
        let rules: Vec<DosageRule> = serde_json::from_str(text).map_err(|e| DosageError::InvalidRule {
            rule: "<file>".into(),
            reason: e.to_string(),
        })?;
        Self::new(rules)
    }

    pub fn get(&self, id: &str) -> Option<&DosageRule> {
        self.rules.get(id)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}
