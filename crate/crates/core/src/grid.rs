use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform collocation grid `{0, dt, 2dt, ..., t_star}`.
///
/// Nodes are computed as `t_star * k / (n - 1)`, so the last node equals
/// `t_star` exactly and nodes that are integer multiples of a representable
/// step come out exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct TimeGrid {
    t_star: f64,
    n: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    t_star: f64,
    dt: f64,
}

impl TryFrom<GridRepr> for TimeGrid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        TimeGrid::new(r.t_star, r.dt)
    }
}

impl From<TimeGrid> for GridRepr {
    fn from(g: TimeGrid) -> Self {
        GridRepr {
            t_star: g.t_star,
            dt: g.dt(),
        }
    }
}

impl TimeGrid {
    /// Builds the grid from horizon and step; `t_star / dt` must be an integer
    /// up to a relative 1e-9.
    pub fn new(t_star: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        if !(t_star > 0.0) || !t_star.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {t_star}")));
        }
        let steps = (t_star / dt).round();
        if steps < 1.0 || ((steps * dt - t_star).abs() > 1e-9 * t_star) {
            return Err(Error::Config(format!(
                "horizon {t_star} is not an integer multiple of dt = {dt}"
            )));
        }
        Ok(TimeGrid {
            t_star,
            n: steps as usize + 1,
        })
    }

    pub fn with_points(t_star: f64, n: usize) -> Result<Self> {
        if n < 2 || !(t_star > 0.0) {
            return Err(Error::Config(format!(
                "grid needs n >= 2 and t_star > 0 (got n = {n}, t_star = {t_star})"
            )));
        }
        Ok(TimeGrid { t_star, n })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn t_star(&self) -> f64 {
        self.t_star
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_star / (self.n - 1) as f64
    }

    #[inline]
    pub fn point(&self, k: usize) -> f64 {
        if k + 1 == self.n {
            self.t_star
        } else {
            self.t_star * k as f64 / (self.n - 1) as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.point(k)).collect()
    }

    /// Locates `t` on the grid: returns the left node index and the
    /// fractional position inside `[T_k, T_{k+1}]`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !(0.0..=self.t_star).contains(&t) {
            return Err(Error::Domain(format!(
                "time {t} outside [0, {}]",
                self.t_star
            )));
        }
        let pos = t * (self.n - 1) as f64 / self.t_star;
        let k = (pos.floor() as usize).min(self.n - 1);
        if k == self.n - 1 {
            return Ok((k, 0.0));
        }
        let (a, b) = (self.point(k), self.point(k + 1));
        if t == a {
            return Ok((k, 0.0));
        }
        if t == b {
            return Ok((k + 1, 0.0));
        }
        Ok((k, (t - a) / (b - a)))
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n == other.n && self.t_star == other.t_star
    }
}
