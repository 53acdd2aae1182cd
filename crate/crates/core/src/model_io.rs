//! Versioned JSON documents for fitted models.
//!
//! Matrices are nested row arrays and every float is written in scientific
//! notation with 17 significant digits, so a reloaded model reproduces the
//! original projections bit for bit.

use std::io;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dimred_sup::{GdaModel, LdaModel, NcaModel};
use crate::dimred_unsup::{GplvmModel, IsomapModel, LinearModel};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "palimpsest-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedModel {
    Pca(LinearModel),
    Ppca(LinearModel),
    Gplvm(GplvmModel),
    Isomap(IsomapModel),
    LIsomap(IsomapModel),
    Lda(LdaModel),
    Gda(GdaModel),
    Nca(NcaModel),
}

#[derive(Serialize, Deserialize)]
struct Document<T> {
    format: String,
    version: u32,
    model: T,
}

/// JSON formatter writing `f64` as `d.dddddddddddddddde±x`.
struct SignificantDigits17;

impl serde_json::ser::Formatter for SignificantDigits17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", f64::from(value))
    }
}

/// Serialize any value with the 17-significant-digit float format.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SignificantDigits17);
    value.serialize(&mut ser).map_err(|e| Error::json("serialize", e))?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn model_to_json(model: &FittedModel) -> Result<String> {
    to_json_string(&Document {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        model,
    })
}

pub fn model_from_json(text: &str) -> Result<FittedModel> {
    let doc: Document<FittedModel> = from_json(text, "model document")?;
    if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported model document {} v{}",
            doc.format, doc.version
        )));
    }
    Ok(doc.model)
}

fn from_json<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::json(context, e))
}

/// `DMatrix<f64>` as an array of row arrays.
pub mod mat_serde {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> =
            m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Deserialize::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
    }
}

/// `DVector<f64>` as a flat array.
pub mod vec_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v: Vec<f64> = Deserialize::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}
