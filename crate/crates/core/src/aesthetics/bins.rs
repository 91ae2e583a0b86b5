use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::Lab;
use crate::error::{Error, Result};

pub const BIN_COUNT: usize = 12;

const DEFAULT_TABLE: &str = include_str!("../../assets/colorbins.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorBin {
    pub name: String,
    pub representative_lab: Lab,
    pub weight: f64,
}

impl ColorBin {
    pub fn new(name: &str, representative_lab: Lab, weight: f64) -> Self {
        ColorBin {
            name: name.to_string(),
            representative_lab,
            weight,
        }
    }
}

/// Twelve representative colors with fixed importance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorBinTable {
    bins: Vec<ColorBin>,
}

impl ColorBinTable {
    pub fn new(bins: Vec<ColorBin>) -> Result<Self> {
        let table = ColorBinTable { bins };
        table.validate()?;
        Ok(table)
    }

    /// The bundled table.
    pub fn default_table() -> Self {
        Self::from_json(DEFAULT_TABLE).expect("bundled color table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: ColorBinTable =
            serde_json::from_str(text).map_err(|e| Error::parse("color bin table", e))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.bins.len() != BIN_COUNT {
            return Err(Error::InvalidInput(format!(
                "color bin table needs {BIN_COUNT} bins, got {}",
                self.bins.len()
            )));
        }
        for b in &self.bins {
            if !b.representative_lab.is_finite() {
                return Err(Error::InvalidInput(format!("bin {:?} has a non-finite color", b.name)));
            }
            if !(0.0..=1.0).contains(&b.weight) {
                return Err(Error::InvalidInput(format!("bin {:?} weight outside [0, 1]", b.name)));
            }
        }
        Ok(())
    }

    pub fn bins(&self) -> &[ColorBin] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Nearest bin by Euclidean LAB distance (ties to the lowest index) and
    /// its weight.
    pub fn color_weight(&self, lab: &Lab) -> (usize, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, b) in self.bins.iter().enumerate() {
            let d = lab.distance_sq(&b.representative_lab);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        (best, self.bins[best].weight)
    }
}
