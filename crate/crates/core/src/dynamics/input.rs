use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::num;

/// Scalar input held constant on equidistant segments of `[0, t_f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantInput {
    levels: Vec<f64>,
    t_f: f64,
    bounds: (f64, f64),
}

impl PiecewiseConstantInput {
    pub fn new(levels: Vec<f64>, t_f: f64, bounds: (f64, f64)) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("input.levels", "need at least one segment"));
        }
        if !(t_f.is_finite() && t_f > 0.0) {
            return Err(Error::invalid("input.t_f", format!("horizon must be positive, got {t_f}")));
        }
        let (lo, hi) = bounds;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid("input.bounds", format!("invalid interval [{lo}, {hi}]")));
        }
        if let Some(v) = levels.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::invalid("input.levels", format!("level {v} outside [{lo}, {hi}]")));
        }
        Ok(PiecewiseConstantInput { levels, t_f, bounds })
    }

    /// Constant input over the whole horizon.
    pub fn constant(level: f64, n_seg: usize, t_f: f64, bounds: (f64, f64)) -> Result<Self> {
        Self::new(vec![level; n_seg.max(1)], t_f, bounds)
    }

    /// Same horizon and bounds with levels clipped into the bounds.
    pub fn with_levels_clipped(&self, levels: &[f64]) -> Result<Self> {
        let (lo, hi) = self.bounds;
        if levels.len() != self.levels.len() {
            return Err(Error::DimensionMismatch {
                what: "input levels",
                expected: self.levels.len(),
                got: levels.len(),
            });
        }
        Self::new(levels.iter().map(|v| v.clamp(lo, hi)).collect(), self.t_f, self.bounds)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn n_seg(&self) -> usize {
        self.levels.len()
    }

    pub fn segment_length(&self) -> f64 {
        self.t_f / self.levels.len() as f64
    }

    /// Segment index containing `t`; boundaries belong to the right segment.
    pub fn segment_at(&self, t: f64) -> usize {
        let k = (t / self.segment_length()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.levels.len() - 1)
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.levels[self.segment_at(t)]
    }

    /// Interior segment switching times plus both ends.
    pub fn breakpoints(&self) -> Vec<f64> {
        let n = self.levels.len();
        (0..=n).map(|k| if k == n { self.t_f } else { k as f64 * self.segment_length() }).collect()
    }

    /// Writes `t,u` at every segment start plus a closing row at `t_f`
    /// repeating the last level.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,u")?;
        let n = self.levels.len();
        for (k, t) in self.breakpoints().into_iter().enumerate() {
            writeln!(w, "{},{}", num(t), num(self.levels[k.min(n - 1)]))?;
        }
        Ok(())
    }

    /// Reads the layout written by [`write_csv`](Self::write_csv). Rows must
    /// start at 0, be equidistant and end at the horizon.
    pub fn read_csv<R: Read>(r: R, bounds: (f64, f64)) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = reader.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "u" {
            return Err(Error::invalid("input.csv", "expected header `t,u`"));
        }
        let mut rows = Vec::new();
        for rec in reader.deserialize::<(f64, f64)>() {
            rows.push(rec.map_err(|e| Error::invalid("input.csv", e.to_string()))?);
        }
        if rows.len() < 2 {
            return Err(Error::invalid("input.csv", "need at least one segment and the closing row"));
        }
        let t_f = rows[rows.len() - 1].0;
        let levels: Vec<f64> = rows[..rows.len() - 1].iter().map(|r| r.1).collect();
        let input = Self::new(levels, t_f, bounds)?;
        for (row, t) in rows.iter().zip(input.breakpoints()) {
            if (row.0 - t).abs() > 1e-9 * t_f.max(1.0) {
                return Err(Error::invalid(
                    "input.csv",
                    format!("row at t={} does not match an equidistant segment start {t}", row.0),
                ));
            }
        }
        Ok(input)
    }
}
