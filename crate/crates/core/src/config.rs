//! Engine configuration and the calibrated constants shipped as defaults.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Multipliers in `α = C_α ε^{1/γ}` and `β = 1 + C_β((1 + ε)^{2/d} − 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConstants {
    #[serde(rename = "C_alpha")]
    pub c_alpha: f64,
    #[serde(rename = "C_beta")]
    pub c_beta: f64,
}

/// Constants of the canonical-distance upper bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConstants {
    pub c_tvc: f64,
    pub c_ahc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Cells per unit length.
    pub resolution: u32,
    /// Net constants per dimension; dimensions without an entry use the largest
    /// calibrated one below them.
    pub net: BTreeMap<usize, NetConstants>,
    pub metric: BTreeMap<usize, MetricConstants>,
    pub max_entries: u64,
    /// Kernels with fewer cells than this on every axis use direct correlation.
    pub fft_crossover: usize,
    pub two_sided: bool,
    /// The fine-net surrogate for the continuous scan is at `ε / fine_divisor`.
    pub fine_divisor: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            resolution: 16,
            net: BTreeMap::from([
                (1, NetConstants { c_alpha: 0.20, c_beta: 0.15 }),
                (2, NetConstants { c_alpha: 0.20, c_beta: 0.25 }),
            ]),
            metric: BTreeMap::from([
                (1, MetricConstants { c_tvc: 4.7, c_ahc: 28.4 }),
                (2, MetricConstants { c_tvc: 3.5, c_ahc: 27.5 }),
            ]),
            max_entries: 50_000_000,
            fft_crossover: 64,
            two_sided: false,
            fine_divisor: 4.0,
        }
    }
}

fn lookup<V: Copy>(map: &BTreeMap<usize, V>, d: usize) -> Option<V> {
    map.range(..=d)
        .next_back()
        .or_else(|| map.iter().next())
        .map(|(_, v)| *v)
}

impl EngineConfig {
    pub fn net_constants(&self, d: usize) -> NetConstants {
        lookup(&self.net, d).unwrap_or(NetConstants { c_alpha: 1.0, c_beta: 1.0 })
    }

    pub fn metric_constants(&self, d: usize) -> MetricConstants {
        lookup(&self.metric, d).unwrap_or(MetricConstants { c_tvc: 1.0, c_ahc: 1.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_falls_back() {
        let c = EngineConfig::default();
        assert_eq!(c.net_constants(3), c.net_constants(2));
        assert_eq!(c.net_constants(1), c.net[&1]);
    }

    #[test]
    fn json_roundtrip_with_partial_input() {
        let c: EngineConfig = serde_json::from_str(r#"{"resolution": 8}"#).unwrap();
        assert_eq!(c.resolution, 8);
        assert_eq!(c.net, EngineConfig::default().net);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<EngineConfig>(&text).unwrap(), c);
    }
}
