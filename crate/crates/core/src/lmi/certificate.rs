//! Text export of certificates and synthesis results: one header line with
//! the format version followed by a JSON body.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::problem::rows_of;
use super::{AnalysisCertificate, Controller, LmiError, SynthesisResult};

pub const CERTIFICATE_HEADER: &str = "whrt-certificate 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub gamma: f64,
    pub epsilon: f64,
    pub min_eigenvalue: f64,
    pub s: Vec<Vec<Vec<f64>>>,
    pub g: Vec<Vec<Vec<f64>>>,
    /// Absent for analysis results; one gain for static controllers, one per
    /// node for switched ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub switched: bool,
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, LmiError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(LmiError::CertificateFormat("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl CertificateFile {
    pub fn from_analysis(cert: &AnalysisCertificate) -> Self {
        Self {
            gamma: cert.gamma,
            epsilon: cert.epsilon,
            min_eigenvalue: cert.min_eigenvalue,
            s: cert.s.iter().map(rows_of).collect(),
            g: cert.g.iter().map(rows_of).collect(),
            k: None,
            switched: false,
        }
    }

    pub fn from_synthesis(res: &SynthesisResult) -> Self {
        let (k, switched) = match &res.controller {
            Controller::Static(k) => (vec![rows_of(k)], false),
            Controller::Switched(ks) => (ks.iter().map(rows_of).collect(), true),
        };
        Self {
            k: Some(k),
            switched,
            ..Self::from_analysis(&res.certificate)
        }
    }

    pub fn certificate(&self) -> Result<AnalysisCertificate, LmiError> {
        Ok(AnalysisCertificate {
            gamma: self.gamma,
            s: self.s.iter().map(|m| from_rows(m)).collect::<Result<_, _>>()?,
            g: self.g.iter().map(|m| from_rows(m)).collect::<Result<_, _>>()?,
            epsilon: self.epsilon,
            min_eigenvalue: self.min_eigenvalue,
        })
    }

    pub fn controller(&self) -> Result<Option<Controller>, LmiError> {
        let Some(k) = &self.k else { return Ok(None) };
        let gains: Vec<DMatrix<f64>> = k.iter().map(|m| from_rows(m)).collect::<Result<_, _>>()?;
        if self.switched {
            Ok(Some(Controller::Switched(gains)))
        } else if gains.len() == 1 {
            Ok(Some(Controller::Static(gains.into_iter().next().unwrap())))
        } else {
            Err(LmiError::CertificateFormat(
                "a static controller needs exactly one gain".into(),
            ))
        }
    }

    pub fn to_text(&self) -> String {
        let body = serde_json::to_string_pretty(self).expect("certificate serializes");
        format!("{CERTIFICATE_HEADER}\n{body}\n")
    }

    pub fn from_text(text: &str) -> Result<Self, LmiError> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        if header.trim() != CERTIFICATE_HEADER {
            return Err(LmiError::CertificateFormat(format!(
                "expected header `{CERTIFICATE_HEADER}`"
            )));
        }
        serde_json::from_str(body).map_err(|e| LmiError::CertificateFormat(e.to_string()))
    }
}
