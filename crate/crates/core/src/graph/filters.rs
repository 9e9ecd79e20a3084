use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use super::GraphError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    LowPass,
    HighPass,
    BandPass,
    BandRejection,
    Comb,
    CustomTable,
}

/// A spectral response `g: [0, 2] → R`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpec {
    kind: FilterKind,
    table: Vec<(f64, f64)>,
}

impl FilterSpec {
    pub const LOW_PASS: Self = Self::builtin(FilterKind::LowPass);
    pub const HIGH_PASS: Self = Self::builtin(FilterKind::HighPass);
    pub const BAND_PASS: Self = Self::builtin(FilterKind::BandPass);
    pub const BAND_REJECTION: Self = Self::builtin(FilterKind::BandRejection);
    pub const COMB: Self = Self::builtin(FilterKind::Comb);

    const fn builtin(kind: FilterKind) -> Self {
        Self {
            kind,
            table: Vec::new(),
        }
    }

    /// Piecewise-linear response through `(λ, g)` knots, held constant
    /// beyond the first and last knot.
    pub fn table(points: Vec<(f64, f64)>) -> Result<Self, GraphError> {
        let increasing = points.windows(2).all(|w| w[0].0 < w[1].0);
        let finite = points.iter().all(|(x, y)| x.is_finite() && y.is_finite());
        if points.is_empty() || !increasing || !finite {
            return Err(GraphError::BadTable);
        }
        Ok(Self {
            kind: FilterKind::CustomTable,
            table: points,
        })
    }

    /// `g(λ) = value` everywhere.
    pub fn constant(value: f64) -> Self {
        Self {
            kind: FilterKind::CustomTable,
            table: vec![(0.0, value)],
        }
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn evaluate(&self, lambda: f64) -> f64 {
        match self.kind {
            FilterKind::LowPass => (-10.0 * lambda * lambda).exp(),
            FilterKind::HighPass => 1.0 - (-10.0 * lambda * lambda).exp(),
            FilterKind::BandPass => (-10.0 * (lambda - 1.0).powi(2)).exp(),
            FilterKind::BandRejection => 1.0 - (-10.0 * (lambda - 1.0).powi(2)).exp(),
            FilterKind::Comb => (PI * lambda).sin().abs(),
            FilterKind::CustomTable => interpolate(&self.table, lambda),
        }
    }

    pub fn evaluate_all(&self, lambdas: &[f64]) -> Vec<f64> {
        lambdas.iter().map(|&l| self.evaluate(l)).collect()
    }
}

fn interpolate(table: &[(f64, f64)], x: f64) -> f64 {
    let (first, last) = (table[0], table[table.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let k = table.partition_point(|p| p.0 <= x);
    let ((x0, y0), (x1, y1)) = (table[k - 1], table[k]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

impl FromStr for FilterSpec {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_lowercase();
        match key.as_str() {
            "lowpass" | "low" => Ok(Self::LOW_PASS),
            "highpass" | "high" => Ok(Self::HIGH_PASS),
            "bandpass" | "band" => Ok(Self::BAND_PASS),
            "bandrejection" | "bandreject" | "bandstop" => Ok(Self::BAND_REJECTION),
            "comb" => Ok(Self::COMB),
            "identity" | "allpass" => Ok(Self::constant(1.0)),
            "zero" => Ok(Self::constant(0.0)),
            _ => Err(GraphError::UnknownFilter(s.to_string())),
        }
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            FilterKind::LowPass => "lowpass",
            FilterKind::HighPass => "highpass",
            FilterKind::BandPass => "bandpass",
            FilterKind::BandRejection => "bandrejection",
            FilterKind::Comb => "comb",
            FilterKind::CustomTable => "table",
        };
        f.write_str(name)
    }
}
