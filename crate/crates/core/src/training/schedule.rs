use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrShape {
    Cosine,
    Linear,
}

impl std::str::FromStr for LrShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cosine" => Ok(LrShape::Cosine),
            "linear" => Ok(LrShape::Linear),
            other => Err(Error::Config(format!("unknown lr_shape {other:?}; expected cosine or linear"))),
        }
    }
}

impl std::fmt::Display for LrShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LrShape::Cosine => "cosine",
            LrShape::Linear => "linear",
        })
    }
}

/// Learning-rate schedule: optional linear warmup, then decay from `max_lr`
/// to `max_lr / decay_factor` over `horizon_multiplier × total_steps`, flat
/// afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub decay_factor: f64,
    pub horizon_multiplier: f64,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub shape: LrShape,
}

impl LrSchedule {
    pub fn new(max_lr: f64, total_steps: u64) -> Self {
        Self {
            max_lr,
            decay_factor: 10.0,
            horizon_multiplier: 1.1,
            total_steps,
            warmup_steps: 0,
            shape: LrShape::Cosine,
        }
    }

    pub fn min_lr(&self) -> f64 {
        self.max_lr / self.decay_factor
    }

    pub fn horizon(&self) -> f64 {
        self.horizon_multiplier * self.total_steps as f64
    }

    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.max_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let horizon = self.horizon();
        if horizon <= 0.0 {
            return self.min_lr();
        }
        let progress = step as f64 / horizon;
        if progress >= 1.0 - 1e-12 {
            return self.min_lr();
        }
        let (max, min) = (self.max_lr, self.min_lr());
        match self.shape {
            LrShape::Cosine => min + (max - min) * 0.5 * (1.0 + (PI * progress).cos()),
            LrShape::Linear => min + (max - min) * (1.0 - progress),
        }
    }
}

/// Training tokens for a compute-optimal model of `n_params` (20 per parameter).
pub fn chinchilla_tokens(n_params: f64) -> Result<f64> {
    if !(n_params > 0.0) || !n_params.is_finite() {
        return Err(Error::Domain(format!("parameter count must be positive, got {n_params}")));
    }
    Ok(20.0 * n_params)
}

/// Largest compute-optimal model for `n_tokens` training tokens.
pub fn chinchilla_params(n_tokens: f64) -> Result<f64> {
    if !(n_tokens > 0.0) || !n_tokens.is_finite() {
        return Err(Error::Domain(format!("token count must be positive, got {n_tokens}")));
    }
    Ok(n_tokens / 20.0)
}

/// Training emissions in kg CO2-equivalent for `kwh` of energy at a grid
/// carbon intensity in kg CO2eq per kWh.
pub fn emissions(kwh: f64, intensity: f64) -> Result<f64> {
    if !(kwh >= 0.0) || !(intensity >= 0.0) || !kwh.is_finite() || !intensity.is_finite() {
        return Err(Error::Domain(format!(
            "energy and intensity must be non-negative, got {kwh} and {intensity}"
        )));
    }
    Ok(kwh * intensity)
}

pub fn tokens_consumed(total_steps: u64, tokens_per_step: u64) -> Result<u64> {
    total_steps
        .checked_mul(tokens_per_step)
        .ok_or_else(|| Error::Domain("token count overflows u64".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> LrSchedule {
        LrSchedule::new(2e-5, 90_000)
    }

    #[test]
    fn endpoints_and_midpoint() {
        let s = table1();
        assert_eq!(s.at(0), 2e-5);
        assert!((s.at(99_000) - 2e-6).abs() <= 1e-18);
        assert_eq!(s.at(99_000), s.min_lr());
        assert_eq!(s.at(1_000_000), s.min_lr());
        assert!((s.at(49_500) - 1.1e-5).abs() < 1e-15);
    }

    #[test]
    fn monotone() {
        for shape in [LrShape::Cosine, LrShape::Linear] {
            let s = LrSchedule {
                shape,
                ..LrSchedule::new(1e-3, 500)
            };
            let v: Vec<f64> = (0..700).map(|i| s.at(i)).collect();
            assert!(v.windows(2).all(|w| w[1] <= w[0]), "{shape}");
        }
    }

    #[test]
    fn warmup_ramps() {
        let s = LrSchedule {
            warmup_steps: 10,
            ..LrSchedule::new(1e-3, 100)
        };
        assert!((s.at(0) - 1e-4).abs() < 1e-18);
        assert!((s.at(9) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn sizing() {
        assert_eq!(chinchilla_tokens(7e8).unwrap(), 1.4e10);
        assert_eq!(chinchilla_params(1e15).unwrap(), 5e13);
        assert!(matches!(chinchilla_tokens(0.0), Err(Error::Domain(_))));
        assert!(matches!(chinchilla_params(-1.0), Err(Error::Domain(_))));
        assert_eq!(tokens_consumed(90_000, 160_000).unwrap(), 14_400_000_000);
        assert_eq!(tokens_consumed(0, 160_000).unwrap(), 0);
        assert_eq!(tokens_consumed(3_000, 8_192).unwrap(), 24_576_000);
        assert!(tokens_consumed(u64::MAX, 2).is_err());
        assert!((emissions(145.0, 0.193).unwrap() - 27.985).abs() < 1e-12);
        assert_eq!(emissions(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(emissions(1000.0, 0.5).unwrap(), 500.0);
        assert!(emissions(-1.0, 0.5).is_err());
    }
}
