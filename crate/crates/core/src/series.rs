//! Training series: paired actual/reference observations on a uniform
//! 5-minute grid, optionally with a temperature column (price data).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds between consecutive observations.
pub const STEP_SECONDS: i64 = 300;

/// Time-of-day slots per day at the 5-minute cadence.
pub const SLOTS_PER_DAY: usize = 288;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSeries {
    /// Unix timestamps, strictly increasing with a constant step.
    pub timestamps: Vec<i64>,
    /// Observed values: kW for wind power, $/MWh for prices.
    pub actual: Vec<f64>,
    /// Reference series: forecast for wind, periodic reference for prices.
    pub reference: Vec<f64>,
    /// Temperature in °F; present for price training data.
    pub temperature: Option<Vec<f64>>,
}

impl TrainingSeries {
    pub fn new(
        timestamps: Vec<i64>,
        actual: Vec<f64>,
        reference: Vec<f64>,
        temperature: Option<Vec<f64>>,
    ) -> Result<Self> {
        let s = Self {
            timestamps,
            actual,
            reference,
            temperature,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.actual.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "training series needs at least 2 points, got {}",
                self.actual.len()
            )));
        }
        if self.actual.len() != self.reference.len() || self.actual.len() != self.timestamps.len()
        {
            return Err(Error::InvalidInput(format!(
                "series length mismatch: {} timestamps, {} actual, {} reference",
                self.timestamps.len(),
                self.actual.len(),
                self.reference.len()
            )));
        }
        if let Some(temp) = &self.temperature {
            if temp.len() != self.actual.len() {
                return Err(Error::InvalidInput(format!(
                    "temperature column length {} does not match series length {}",
                    temp.len(),
                    self.actual.len()
                )));
            }
        }
        let step = self.timestamps[1] - self.timestamps[0];
        if step <= 0 {
            return Err(Error::InvalidInput(
                "timestamps must be strictly increasing".into(),
            ));
        }
        for (i, w) in self.timestamps.windows(2).enumerate() {
            if w[1] - w[0] != step {
                return Err(Error::InvalidInput(format!(
                    "nonuniform cadence at row {}: step {} != {}",
                    i + 1,
                    w[1] - w[0],
                    step
                )));
            }
        }
        Ok(())
    }

    /// Time-of-day slot index for position `t`, assuming 5-minute cadence.
    pub fn slot_of(&self, t: usize) -> usize {
        let secs = self.timestamps[t].rem_euclid(86_400);
        (secs / STEP_SECONDS) as usize % SLOTS_PER_DAY
    }
}
