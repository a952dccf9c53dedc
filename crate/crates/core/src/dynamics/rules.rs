use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::sampling::gaussian;

/// Parameters shared by the built-in drift rules; each rule reads only the
/// fields it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    pub sigma_env: f64,
    pub amplitude: f64,
    pub period: f64,
    pub jumps: Vec<usize>,
    pub magnitude: f64,
    pub values: Vec<f64>,
}

/// Generator of equilibrium offsets d_0..d_T.
pub trait DriftRule: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns `horizon + 1` offsets of dimension `dim`.
    fn path(&self, dim: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>>;
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = gaussian(rng, dim, 1.0);
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

fn nonnegative(name: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Schedule(format!("{name} must be nonnegative, got {v}")))
    }
}

struct Static;

impl DriftRule for Static {
    fn name(&self) -> &'static str {
        "static"
    }
    fn path(&self, dim: usize, horizon: usize, _rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
        Ok(vec![DVector::zeros(dim); horizon + 1])
    }
}

struct RandomWalk {
    sigma: f64,
}

impl DriftRule for RandomWalk {
    fn name(&self) -> &'static str {
        "random-walk"
    }
    fn path(&self, dim: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(horizon + 1);
        let mut d = DVector::zeros(dim);
        out.push(d.clone());
        for _ in 0..horizon {
            // Draw even at σ = 0 so the noise of other cells stays aligned.
            d += gaussian(rng, dim, self.sigma);
            out.push(d.clone());
        }
        Ok(out)
    }
}

struct Sinusoidal {
    amplitude: f64,
    period: f64,
}

impl DriftRule for Sinusoidal {
    fn name(&self) -> &'static str {
        "sinusoidal"
    }
    fn path(&self, dim: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
        let u = unit_direction(rng, dim);
        Ok((0..=horizon)
            .map(|t| &u * (self.amplitude * (2.0 * PI * t as f64 / self.period).sin()))
            .collect())
    }
}

struct Piecewise {
    jumps: Vec<usize>,
    magnitude: f64,
}

impl DriftRule for Piecewise {
    fn name(&self) -> &'static str {
        "piecewise"
    }
    fn path(&self, dim: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
        if let Some(&bad) = self.jumps.iter().find(|&&j| j == 0 || j > horizon) {
            return Err(Error::Schedule(format!(
                "jump time {bad} outside 1..={horizon}"
            )));
        }
        let mut d = DVector::zeros(dim);
        let mut out = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            for _ in self.jumps.iter().filter(|&&j| j == t) {
                d += unit_direction(rng, dim) * self.magnitude;
            }
            out.push(d.clone());
        }
        Ok(out)
    }
}

struct Series {
    values: Vec<f64>,
}

impl DriftRule for Series {
    fn name(&self) -> &'static str {
        "series"
    }
    fn path(&self, dim: usize, horizon: usize, _rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
        if self.values.len() < horizon + 1 {
            return Err(Error::Schedule(format!(
                "series has {} values, horizon {horizon} needs {}",
                self.values.len(),
                horizon + 1
            )));
        }
        Ok(self.values[..=horizon]
            .iter()
            .map(|&x| DVector::from_element(dim, x))
            .collect())
    }
}

pub fn drift_registry() -> Registry<dyn DriftRule, DriftParams> {
    let mut reg: Registry<dyn DriftRule, DriftParams> = Registry::new("drift rule");
    reg.register("static", |_| Ok(Arc::new(Static) as Arc<dyn DriftRule>))
        .register("random-walk", |p: &DriftParams| {
            Ok(Arc::new(RandomWalk {
                sigma: nonnegative("sigma_env", p.sigma_env)?,
            }) as Arc<dyn DriftRule>)
        })
        .register("sinusoidal", |p: &DriftParams| {
            if !(p.period > 0.0 && p.period.is_finite()) {
                return Err(Error::Schedule(format!("period must be positive, got {}", p.period)));
            }
            Ok(Arc::new(Sinusoidal {
                amplitude: nonnegative("amplitude", p.amplitude)?,
                period: p.period,
            }) as Arc<dyn DriftRule>)
        })
        .register("piecewise", |p: &DriftParams| {
            Ok(Arc::new(Piecewise {
                jumps: p.jumps.clone(),
                magnitude: nonnegative("magnitude", p.magnitude)?,
            }) as Arc<dyn DriftRule>)
        })
        .register("series", |p: &DriftParams| {
            if p.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schedule("series contains non-finite values".into()));
            }
            Ok(Arc::new(Series {
                values: p.values.clone(),
            }) as Arc<dyn DriftRule>)
        });
    reg
}
