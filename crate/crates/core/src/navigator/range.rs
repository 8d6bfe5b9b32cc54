//! Range evaluation and clearance arithmetic for automated decisions.

use serde::{Deserialize, Serialize};

/// Where a value sits relative to inclusive `[min, max]` bounds. A missing
/// bound leaves that side unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RangeStatus {
    InRange,
    BelowMin { deficit: f64 },
    AboveMax { excess: f64 },
    NoBounds,
}

impl RangeStatus {
    pub fn is_out_of_range(self) -> bool {
        matches!(self, RangeStatus::BelowMin { .. } | RangeStatus::AboveMax { .. })
    }
}

pub fn evaluate_range(value: f64, min: Option<f64>, max: Option<f64>) -> RangeStatus {
    match (min, max) {
        (None, None) => RangeStatus::NoBounds,
        (Some(lo), _) if value < lo => RangeStatus::BelowMin { deficit: lo - value },
        (_, Some(hi)) if value > hi => RangeStatus::AboveMax { excess: value - hi },
        _ => RangeStatus::InRange,
    }
}

/// How far past a bound a value must be before automation may act: the
/// larger of `relative × |bound|` and `absolute_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearMargin {
    pub relative: f64,
    pub absolute_floor: f64,
}

impl Default for ClearMargin {
    fn default() -> Self {
        ClearMargin { relative: 0.10, absolute_floor: 1.0 }
    }
}

impl ClearMargin {
    pub fn relative(relative: f64) -> Self {
        ClearMargin { relative, ..Default::default() }
    }

    pub fn required_for(&self, bound: f64) -> f64 {
        (self.relative * bound.abs()).max(self.absolute_floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    OutOfRange,
    InRange,
}

/// Distance of a value from the bound that decides its direction, and the
/// clearance that bound demands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clearance {
    pub direction: Direction,
    pub bound: f64,
    pub clearance: f64,
    pub required: f64,
}

impl Clearance {
    pub fn is_clear(&self) -> bool {
        self.clearance > self.required
    }
}

/// Returns the deciding clearance for `value`, or `None` without bounds.
///
/// Out of range: distance past the violated bound. In range: the bound with
/// the smallest slack (clearance minus required), so that being clear means
/// clear of every present bound.
pub fn clearance(value: f64, min: Option<f64>, max: Option<f64>, margin: ClearMargin) -> Option<Clearance> {
    let out = |bound: f64, distance: f64| Clearance {
        direction: Direction::OutOfRange,
        bound,
        clearance: distance,
        required: margin.required_for(bound),
    };
    match evaluate_range(value, min, max) {
        RangeStatus::NoBounds => None,
        RangeStatus::BelowMin { deficit } => Some(out(min?, deficit)),
        RangeStatus::AboveMax { excess } => Some(out(max?, excess)),
        RangeStatus::InRange => {
            let candidates = min
                .map(|lo| (lo, value - lo))
                .into_iter()
                .chain(max.map(|hi| (hi, hi - value)));
            candidates
                .map(|(bound, distance)| Clearance {
                    direction: Direction::InRange,
                    bound,
                    clearance: distance,
                    required: margin.required_for(bound),
                })
                .min_by(|a, b| {
                    (a.clearance - a.required).total_cmp(&(b.clearance - b.required))
                })
        }
    }
}
