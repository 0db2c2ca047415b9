use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpaConfig {
    pub n_head: usize,
    /// Total scalar channels across heads.
    pub c: usize,
    pub n_query_points: usize,
    pub n_point_values: usize,
}

impl Default for IpaConfig {
    fn default() -> Self {
        IpaConfig {
            n_head: 8,
            c: 64,
            n_query_points: 8,
            n_point_values: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_v: usize,
    pub d_z: usize,
    pub ipa: IpaConfig,
    pub temporal_heads: usize,
    pub spatial_heads: usize,
    pub s_mot: usize,
    pub s_ref: usize,
    /// Relative-position clipping distance.
    pub r_max: usize,
    /// Width of the raw sinusoidal diffusion-time features.
    pub time_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            d_v: 128,
            d_z: 64,
            ipa: IpaConfig::default(),
            temporal_heads: 4,
            spatial_heads: 4,
            s_mot: 2,
            s_ref: 1,
            r_max: 32,
            time_dim: 32,
        }
    }
}

impl ModelConfig {
    /// A very small configuration for tests and smoke runs.
    pub fn tiny() -> Self {
        ModelConfig {
            layers: 2,
            d_v: 16,
            d_z: 8,
            ipa: IpaConfig {
                n_head: 2,
                c: 8,
                n_query_points: 2,
                n_point_values: 3,
            },
            temporal_heads: 2,
            spatial_heads: 2,
            s_mot: 2,
            s_ref: 1,
            r_max: 4,
            time_dim: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("d_v", self.d_v),
            ("d_z", self.d_z),
            ("ipa.n_head", self.ipa.n_head),
            ("ipa.c", self.ipa.c),
            ("ipa.n_query_points", self.ipa.n_query_points),
            ("ipa.n_point_values", self.ipa.n_point_values),
            ("temporal_heads", self.temporal_heads),
            ("spatial_heads", self.spatial_heads),
            ("r_max", self.r_max),
            ("time_dim", self.time_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.s_ref != 1 {
            return Err(Error::InvalidArgument("exactly one reference step is supported".into()));
        }
        let divides = [
            ("ipa.c", self.ipa.c, self.ipa.n_head),
            ("d_v (temporal heads)", self.d_v, self.temporal_heads),
            ("d_v (spatial heads)", self.d_v, self.spatial_heads),
            ("d_v", self.d_v, 2),
            ("time_dim", self.time_dim, 2),
        ];
        for (name, v, by) in divides {
            if v % by != 0 {
                return Err(Error::InvalidArgument(format!("{name} must be divisible by {by}")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.ipa.c / self.ipa.n_head
    }

    /// Number of clean conditioning steps preceding the noisy ones.
    pub fn n_clean(&self) -> usize {
        self.s_mot + self.s_ref
    }

    /// Width of the concatenated IPA output before the final linear layer.
    pub fn ipa_concat_dim(&self) -> usize {
        let h = self.ipa.n_head;
        let pv = self.ipa.n_point_values;
        h * (self.d_z + self.head_dim() + 2 * (3 * pv + pv))
    }
}
