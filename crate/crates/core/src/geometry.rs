//! Domain geometry: the cell grid over `[-L, L]^d`, scales and locations.

use serde::{Deserialize, Serialize};

use crate::error::{MssError, Result};

const FUZZ: f64 = 1e-9;

/// Grid over `Ω_L = [-L, L]^d` with `R` cells per unit length.
///
/// Cell `k` on each axis has center `(k + 0.5)/R − L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub d: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "R")]
    pub resolution: u32,
}

impl Geometry {
    pub fn new(d: usize, half_width: f64, resolution: u32) -> Result<Self> {
        let g = Geometry {
            d,
            half_width,
            resolution,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(MssError::geometry("d must be positive"));
        }
        if !(self.half_width > 1.0) || !self.half_width.is_finite() {
            return Err(MssError::geometry(format!(
                "L must exceed 1, got {}",
                self.half_width
            )));
        }
        if self.resolution == 0 {
            return Err(MssError::geometry(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        let cells = 2.0 * self.half_width * self.resolution as f64;
        if (cells - cells.round()).abs() > FUZZ {
            return Err(MssError::geometry(format!(
                "2·L·R = {cells} is not a whole number of cells"
            )));
        }
        Ok(())
    }

    /// Cells per axis, `2LR`.
    pub fn cells(&self) -> usize {
        (2.0 * self.half_width * self.resolution as f64).round() as usize
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.cells(); self.d]
    }

    pub fn len(&self) -> usize {
        self.cells().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn r(&self) -> f64 {
        self.resolution as f64
    }

    pub fn cell_center(&self, k: i64) -> f64 {
        (k as f64 + 0.5) / self.r() - self.half_width
    }

    pub fn matches(&self, other: &Geometry) -> bool {
        self.d == other.d
            && self.resolution == other.resolution
            && (self.half_width - other.half_width).abs() < FUZZ
    }
}

/// Kernel footprint in cells for scale `h` at resolution `r`: `⌈2hR⌉`.
pub fn footprint(h: f64, r: f64) -> usize {
    (2.0 * h * r - FUZZ).ceil() as usize
}

/// Anisotropic scale `h ∈ ×_j [1, L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScaleVec(pub Vec<f64>);

impl ScaleVec {
    pub fn new(h: Vec<f64>, half_width: f64) -> Result<Self> {
        let s = ScaleVec(h);
        s.validate(half_width)?;
        Ok(s)
    }

    pub fn uniform(h: f64, d: usize) -> Self {
        ScaleVec(vec![h; d])
    }

    pub fn validate(&self, half_width: f64) -> Result<()> {
        for &h in &self.0 {
            if !(h >= 1.0 - FUZZ && h < half_width) {
                return Err(MssError::geometry(format!(
                    "scale {h} outside [1, {half_width})"
                )));
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }

    /// `h_• = ∏_j h_j`.
    pub fn volume(&self) -> f64 {
        self.0.iter().product()
    }

    pub fn footprint(&self, r: f64) -> Vec<usize> {
        self.0.iter().map(|&h| footprint(h, r)).collect()
    }
}

/// Location `t ∈ 𝓣_h = ×_j [-(L − h_j), L − h_j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationVec(pub Vec<f64>);

impl LocationVec {
    pub fn origin(d: usize) -> Self {
        LocationVec(vec![0.0; d])
    }

    pub fn is_admissible(&self, h: &ScaleVec, half_width: f64) -> bool {
        self.0
            .iter()
            .zip(&h.0)
            .all(|(&t, &h)| t.abs() <= half_width - h + FUZZ)
    }
}

/// Kernel start offset (in cells) placing a kernel of `footprint` cells centered as
/// close as possible to `t`, and the realized center. `None` when it would overhang.
pub fn snap(t: f64, footprint: usize, geom: &Geometry) -> Option<(usize, f64)> {
    let r = geom.r();
    let exact = (t + geom.half_width) * r - footprint as f64 / 2.0;
    let s = (exact + 0.5 + FUZZ).floor();
    if s < 0.0 || s as usize + footprint > geom.cells() {
        return None;
    }
    let center = (s + footprint as f64 / 2.0) / r - geom.half_width;
    Some((s as usize, center))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_cells() {
        let g = Geometry::new(1, 256.0, 16).unwrap();
        assert_eq!(g.cells(), 8192);
        assert!(Geometry::new(1, 1.0, 16).is_err());
        assert!(Geometry::new(1, 4.0, 0).is_err());
        assert!(Geometry::new(1, 4.03, 4).is_err());
    }

    #[test]
    fn footprint_is_linear_in_scale() {
        assert_eq!(footprint(1.0, 16.0), 32);
        assert_eq!(footprint(2.0, 16.0), 64);
        assert_eq!(footprint(1.5625, 16.0), 50);
        assert_eq!(footprint(1.01, 16.0), 33);
    }

    #[test]
    fn snap_extremes_fit_exactly() {
        let g = Geometry::new(1, 8.0, 16).unwrap();
        let n = footprint(2.0, 16.0);
        assert_eq!(snap(-6.0, n, &g), Some((0, -6.0)));
        assert_eq!(snap(6.0, n, &g), Some((g.cells() - n, 6.0)));
        assert_eq!(snap(0.0, n, &g), Some((96, 0.0)));
        assert_eq!(snap(6.1, n, &g), None);
    }
}
