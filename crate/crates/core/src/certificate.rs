//! Pass/fail records produced by the certification routines.

use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateKind {
    Passivity,
    Theorem3,
    PowerSharing,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub pass: bool,
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Named numeric results (spectra, grids, tolerances).
    pub values: BTreeMap<String, Vec<f64>>,
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn new(kind: CertificateKind, pass: bool, margin: f64) -> Self {
        Certificate {
            kind,
            pass,
            margin,
            reason: None,
            values: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn failed(kind: CertificateKind, reason: impl Into<String>) -> Self {
        Certificate {
            reason: Some(reason.into()),
            ..Self::new(kind, false, f64::NEG_INFINITY)
        }
    }

    pub fn with_reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }

    pub fn with_value(mut self, name: &str, value: impl Into<Vec<f64>>) -> Self {
        self.values.insert(name.to_string(), value.into());
        self
    }

    pub fn with_scalar(self, name: &str, value: f64) -> Self {
        self.with_value(name, vec![value])
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn value(&self, name: &str) -> Option<&[f64]> {
        self.values.get(name).map(Vec::as_slice)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.value(name).and_then(|v| v.first().copied())
    }
}
