//! Time-of-day arithmetic. All timestamps in the engine are seconds of the
//! day in `[0, 86400)`; distances between them are circular.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SECONDS_PER_DAY: u32 = 86_400;

/// A second-of-day timestamp in `[0, 86400)`.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeOfDay(u32);

impl TimeOfDay {
    pub fn new(seconds: u32) -> Result<Self> {
        if seconds >= SECONDS_PER_DAY {
            return Err(Error::TimeRange(seconds as i64));
        }
        Ok(TimeOfDay(seconds))
    }

    /// Wraps an arbitrary signed second count into the day.
    pub fn wrapping(seconds: i64) -> Self {
        TimeOfDay(seconds.rem_euclid(SECONDS_PER_DAY as i64) as u32)
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    /// Circular distance: `min(raw, 86400 - raw)`.
    pub fn circular_distance(self, other: TimeOfDay) -> u32 {
        let raw = self.0.abs_diff(other.0);
        raw.min(SECONDS_PER_DAY - raw)
    }

    /// Parses either a bare second count or `HH:MM:SS`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Ok(sec) = s.parse::<u32>() {
            return TimeOfDay::new(sec);
        }
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() == 3 {
            let h: u32 = parts[0].parse().map_err(|_| bad_time(s))?;
            let m: u32 = parts[1].parse().map_err(|_| bad_time(s))?;
            let sec: u32 = parts[2].parse().map_err(|_| bad_time(s))?;
            if h < 24 && m < 60 && sec < 60 {
                return TimeOfDay::new(h * 3600 + m * 60 + sec);
            }
        }
        Err(bad_time(s))
    }
}

fn bad_time(s: &str) -> Error {
    Error::Param {
        name: "time",
        msg: format!("cannot parse `{s}` as seconds-of-day or HH:MM:SS"),
    }
}

impl std::fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:02}:{:02}:{:02}",
            self.0 / 3600,
            (self.0 / 60) % 60,
            self.0 % 60
        )
    }
}

/// Circular distance between fractional seconds-of-day.
pub fn circular_distance_f64(a: f64, b: f64) -> f64 {
    let day = SECONDS_PER_DAY as f64;
    let raw = (a.rem_euclid(day) - b.rem_euclid(day)).abs();
    raw.min(day - raw)
}
