//! Price-specific model components: the daily periodic reference series and
//! the temperature explanatory variables.
//!
//! The reference for prices is `f_t = p_bar + seasonal[g(t)]` where
//! `seasonal[g]` is the slot-wise mean price at time-of-day slot `g` and
//! `p_bar` is the mean of the seasonality-removed series. Temperature enters
//! through two binned components: a within-day seasonal part `h_s` (peaking
//! vs. not) and a slow trend `h_tr` (cool / average / hot days), both derived
//! from a length-50 moving average split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TrainingSeries;

/// Window length of the moving-average trend filter.
pub const TREND_WINDOW: usize = 50;

/// Seasonal decomposition of a price series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalDecomposition {
    /// Slot-wise mean price, one entry per time-of-day slot.
    pub seasonal: Vec<f64>,
    /// Mean of the seasonality-removed series.
    pub mean_level: f64,
    /// Periodic reference `mean_level + seasonal[g(t)]` per input point.
    pub reference: Vec<f64>,
}

/// Slot-wise means over the series plus the derived periodic reference.
pub fn seasonal_decompose(series: &TrainingSeries, period: usize) -> Result<SeasonalDecomposition> {
    series.validate()?;
    if period == 0 {
        return Err(Error::InvalidInput("seasonal period must be >= 1".into()));
    }
    let mut sums = vec![0.0f64; period];
    let mut counts = vec![0usize; period];
    for (t, p) in series.actual.iter().enumerate() {
        let slot = series.slot_of(t) % period;
        sums[slot] += p;
        counts[slot] += 1;
    }
    let mut seasonal = vec![0.0f64; period];
    let mut fallback = 0.0;
    let mut observed = 0usize;
    for g in 0..period {
        if counts[g] > 0 {
            seasonal[g] = sums[g] / counts[g] as f64;
            fallback += seasonal[g];
            observed += 1;
        }
    }
    if observed == 0 {
        return Err(Error::Training("no observations to decompose".into()));
    }
    fallback /= observed as f64;
    for (g, s) in seasonal.iter_mut().enumerate() {
        if counts[g] == 0 {
            *s = fallback;
        }
    }
    let mean_level = series
        .actual
        .iter()
        .enumerate()
        .map(|(t, p)| p - seasonal[series.slot_of(t) % period])
        .sum::<f64>()
        / series.len() as f64;
    let reference = (0..series.len())
        .map(|t| mean_level + seasonal[series.slot_of(t) % period])
        .collect();
    Ok(SeasonalDecomposition {
        seasonal,
        mean_level,
        reference,
    })
}

/// Binned temperature explanatory variables per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureFeatures {
    /// Seasonal label: 2 during peak periods, else 1.
    pub y_s: Vec<u8>,
    /// Trend label: 1 cool, 2 average, 3 hot.
    pub y_tr: Vec<u8>,
    pub h_s_max: f64,
    pub h_tr_max: f64,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
}

impl TemperatureFeatures {
    /// Flattened class index in `0..6`.
    pub fn classes(&self) -> Vec<usize> {
        self.y_s
            .iter()
            .zip(&self.y_tr)
            .map(|(s, tr)| class_index(*s, *tr))
            .collect()
    }
}

pub fn class_index(y_s: u8, y_tr: u8) -> usize {
    ((y_s as usize - 1) * 3 + (y_tr as usize - 1)).min(5)
}

/// Centered moving average with the window truncated at the series ends.
pub fn moving_average_trend(series: &[f64], window: usize) -> Vec<f64> {
    let half_lo = window / 2;
    let half_hi = window - half_lo - 1;
    let n = series.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half_lo);
            let hi = (t + half_hi).min(n - 1);
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Split a temperature series into trend and seasonal parts and apply the
/// peak/trend threshold rules.
pub fn temperature_features(temperature: &[f64]) -> Result<TemperatureFeatures> {
    if temperature.len() <= TREND_WINDOW {
        return Err(Error::InvalidInput(format!(
            "temperature series needs more than {TREND_WINDOW} points, got {}",
            temperature.len()
        )));
    }
    let trend = moving_average_trend(temperature, TREND_WINDOW);
    let seasonal: Vec<f64> = temperature
        .iter()
        .zip(&trend)
        .map(|(x, tr)| x - tr)
        .collect();
    let h_s_max = seasonal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let h_tr_max = trend.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (y_s, y_tr) = label_components(&seasonal, &trend, h_s_max, h_tr_max);
    Ok(TemperatureFeatures {
        y_s,
        y_tr,
        h_s_max,
        h_tr_max,
        trend,
        seasonal,
    })
}

/// Threshold rules; degenerate series (no positive variation) collapse to the
/// lowest label.
fn label_components(
    seasonal: &[f64],
    trend: &[f64],
    h_s_max: f64,
    h_tr_max: f64,
) -> (Vec<u8>, Vec<u8>) {
    let y_s = seasonal
        .iter()
        .map(|h| {
            if h_s_max > 0.0 && *h >= 0.75 * h_s_max {
                2
            } else {
                1
            }
        })
        .collect();
    let y_tr = trend
        .iter()
        .map(|h| {
            if h_tr_max <= 0.0 {
                1
            } else if *h >= 0.8 * h_tr_max {
                3
            } else if *h >= 0.3 * h_tr_max {
                2
            } else {
                1
            }
        })
        .collect();
    (y_s, y_tr)
}

/// Price-model attachment: periodic reference parameters and the trained
/// temperature thresholds, reused when labeling an evaluation horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceModelExtras {
    pub seasonal: Vec<f64>,
    pub mean_level: f64,
    pub h_s_max: f64,
    pub h_tr_max: f64,
}

impl PriceModelExtras {
    /// Periodic reference at a time-of-day slot.
    pub fn reference_at(&self, slot: usize) -> f64 {
        self.mean_level + self.seasonal[slot % self.seasonal.len()]
    }

    /// Reference series for `len` steps starting at `start_slot`.
    pub fn reference_series(&self, start_slot: usize, len: usize) -> Vec<f64> {
        (0..len).map(|t| self.reference_at(start_slot + t)).collect()
    }

    /// Temperature classes for an evaluation horizon, thresholded with the
    /// maxima recorded at training time.
    pub fn labels_for(&self, temperature: &[f64]) -> Result<Vec<usize>> {
        if temperature.len() <= TREND_WINDOW {
            return Err(Error::InvalidInput(format!(
                "temperature forecast needs more than {TREND_WINDOW} points"
            )));
        }
        let trend = moving_average_trend(temperature, TREND_WINDOW);
        let seasonal: Vec<f64> = temperature
            .iter()
            .zip(&trend)
            .map(|(x, tr)| x - tr)
            .collect();
        let (y_s, y_tr) = label_components(&seasonal, &trend, self.h_s_max, self.h_tr_max);
        Ok(y_s
            .iter()
            .zip(&y_tr)
            .map(|(s, tr)| class_index(*s, *tr))
            .collect())
    }
}
