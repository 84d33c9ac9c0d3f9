use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{MssError, Result};
use crate::geometry::{Geometry, LocationVec, ScaleVec};
use crate::scalar::Scalar;

/// Where a tensor's values came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Provenance {
    /// Pure noise.
    Null,
    /// Noise plus `mu` times the unit-norm kernel of `pattern` at `(t, h)`.
    Embedded {
        pattern: String,
        mu: f64,
        t: LocationVec,
        h: ScaleVec,
    },
    #[default]
    External,
}

/// Values on the `(2LR)^d` cell grid of `Ω_L`.
#[derive(Clone, Debug)]
pub struct TensorField<T> {
    pub geometry: Geometry,
    pub values: ArrayD<T>,
    pub provenance: Provenance,
}

impl<T: Scalar> TensorField<T> {
    pub fn new(geometry: Geometry, values: ArrayD<T>, provenance: Provenance) -> Result<Self> {
        geometry.validate()?;
        if values.shape() != geometry.shape().as_slice() {
            return Err(MssError::geometry(format!(
                "array shape {:?} does not match (2LR)^d = {:?}",
                values.shape(),
                geometry.shape()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MssError::invalid("tensor contains non-finite values"));
        }
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().to_owned()
        };
        Ok(TensorField {
            geometry,
            values,
            provenance,
        })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        TensorField {
            values: ArrayD::zeros(IxDyn(&geometry.shape())),
            geometry,
            provenance: Provenance::External,
        }
    }

    pub fn as_slice(&self) -> &[T] {
        self.values.as_slice().expect("standard layout")
    }

    pub fn cast<U: Scalar>(&self) -> TensorField<U> {
        TensorField {
            geometry: self.geometry,
            values: self.values.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
            provenance: self.provenance.clone(),
        }
    }
}
