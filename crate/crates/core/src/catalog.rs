//! Catalog of vital kinds.
//!
//! Every kind has exactly one canonical unit and one source class. Documents
//! never restate units; a value attached to a kind is always in that kind's
//! canonical unit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// How a value reaches the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceClass {
    /// Recorded by a connected medical device.
    Measurement,
    /// Entered by the control center or the crew.
    DatabaseEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VitalKind {
    Age,
    SystolicBloodPressure,
    DiastolicBloodPressure,
    BloodPressureDifference,
    Weight,
    Spo2,
    HeartFrequency,
    HeartPulse,
    BloodGlucose,
    PainNrs,
    Temperature,
    Gcs,
    Etco2,
    Transport,
    CuffPressure,
    TimePassed,
    RespiratoryRate,
    BurnPercentage,
    FallAltitude,
    VoltageClass,
    HypothermiaGrade,
    KruppGrade,
    Qsofa,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown vital kind `{0}`")]
pub struct UnknownKind(pub String);

impl VitalKind {
    pub const ALL: [VitalKind; 23] = [
        VitalKind::Age,
        VitalKind::SystolicBloodPressure,
        VitalKind::DiastolicBloodPressure,
        VitalKind::BloodPressureDifference,
        VitalKind::Weight,
        VitalKind::Spo2,
        VitalKind::HeartFrequency,
        VitalKind::HeartPulse,
        VitalKind::BloodGlucose,
        VitalKind::PainNrs,
        VitalKind::Temperature,
        VitalKind::Gcs,
        VitalKind::Etco2,
        VitalKind::Transport,
        VitalKind::CuffPressure,
        VitalKind::TimePassed,
        VitalKind::RespiratoryRate,
        VitalKind::BurnPercentage,
        VitalKind::FallAltitude,
        VitalKind::VoltageClass,
        VitalKind::HypothermiaGrade,
        VitalKind::KruppGrade,
        VitalKind::Qsofa,
    ];

    pub fn name(self) -> &'static str {
        use VitalKind::*;
        match self {
            Age => "age",
            SystolicBloodPressure => "systolic_blood_pressure",
            DiastolicBloodPressure => "diastolic_blood_pressure",
            BloodPressureDifference => "blood_pressure_difference",
            Weight => "weight",
            Spo2 => "spo2",
            HeartFrequency => "heart_frequency",
            HeartPulse => "heart_pulse",
            BloodGlucose => "blood_glucose",
            PainNrs => "pain_nrs",
            Temperature => "temperature",
            Gcs => "gcs",
            Etco2 => "etco2",
            Transport => "transport",
            CuffPressure => "cuff_pressure",
            TimePassed => "time_passed",
            RespiratoryRate => "respiratory_rate",
            BurnPercentage => "burn_percentage",
            FallAltitude => "fall_altitude",
            VoltageClass => "voltage_class",
            HypothermiaGrade => "hypothermia_grade",
            KruppGrade => "krupp_grade",
            Qsofa => "qsofa",
        }
    }

    pub fn canonical_unit(self) -> &'static str {
        use VitalKind::*;
        match self {
            Age => "years",
            SystolicBloodPressure | DiastolicBloodPressure | BloodPressureDifference => "mmHg",
            CuffPressure | Etco2 => "mmHg",
            Weight => "kg",
            Spo2 | BurnPercentage => "%",
            HeartFrequency | HeartPulse => "bpm",
            RespiratoryRate => "/min",
            BloodGlucose => "mg/dL",
            Temperature => "°C",
            PainNrs | Gcs | Qsofa => "points",
            HypothermiaGrade | KruppGrade => "grade",
            TimePassed => "min",
            FallAltitude => "m",
            // Coded categories: transport destination class, 0 = low / 1 = high voltage.
            Transport | VoltageClass => "code",
        }
    }

    /// Source class as recorded in the manual's vital occurrence table.
    pub fn source_class(self) -> SourceClass {
        use VitalKind::*;
        match self {
            SystolicBloodPressure | DiastolicBloodPressure | BloodPressureDifference | Weight
            | Spo2 | HeartFrequency | HeartPulse | BloodGlucose | Temperature
            | RespiratoryRate => SourceClass::Measurement,
            Age | PainNrs | Gcs | Etco2 | Transport | CuffPressure | TimePassed
            | BurnPercentage | FallAltitude | VoltageClass | HypothermiaGrade | KruppGrade
            | Qsofa => SourceClass::DatabaseEntry,
        }
    }

    /// Physically representable range in the canonical unit, inclusive.
    pub fn physical_range(self) -> (f64, f64) {
        use VitalKind::*;
        match self {
            Age => (0.0, 130.0),
            SystolicBloodPressure => (0.0, 350.0),
            DiastolicBloodPressure => (0.0, 300.0),
            BloodPressureDifference => (0.0, 300.0),
            Weight => (0.0, 500.0),
            Spo2 => (0.0, 100.0),
            HeartFrequency | HeartPulse => (0.0, 400.0),
            BloodGlucose => (0.0, 2000.0),
            PainNrs => (0.0, 10.0),
            Temperature => (10.0, 50.0),
            Gcs => (3.0, 15.0),
            Etco2 => (0.0, 150.0),
            Transport => (0.0, 99.0),
            CuffPressure => (0.0, 400.0),
            TimePassed => (0.0, 100_000.0),
            RespiratoryRate => (0.0, 120.0),
            BurnPercentage => (0.0, 100.0),
            FallAltitude => (0.0, 10_000.0),
            VoltageClass => (0.0, 1.0),
            HypothermiaGrade | KruppGrade => (0.0, 4.0),
            Qsofa => (0.0, 3.0),
        }
    }

    pub fn accepts(self, value: f64) -> bool {
        let (lo, hi) = self.physical_range();
        value.is_finite() && value >= lo && value <= hi
    }

    /// Slowly varying kinds never go stale within a session.
    pub fn is_static(self) -> bool {
        matches!(self, VitalKind::Age | VitalKind::Weight)
    }
}

impl fmt::Display for VitalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VitalKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VitalKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}
