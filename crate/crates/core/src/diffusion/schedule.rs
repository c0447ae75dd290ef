//! Cosine noise schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound applied to the derived per-step `beta_t`. The cosine form drives
/// `alpha_bar_T` to ~1e-33, which would otherwise round `beta_T` to exactly 1.
pub const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub k: f64,
    pub offset: f64,
}

/// `alpha_bar_t = f(t) / f(0)` with `f(t) = cos(((t / T + s) / (1 + s)) * pi / 2)^2`,
/// tabulated for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleParams", into = "ScheduleParams")]
pub struct DiffusionSchedule {
    params: ScheduleParams,
    alpha_bar: Vec<f64>,
}

impl TryFrom<ScheduleParams> for DiffusionSchedule {
    type Error = Error;

    fn try_from(p: ScheduleParams) -> Result<Self> {
        DiffusionSchedule::new(p.timesteps, p.k, p.offset)
    }
}

impl From<DiffusionSchedule> for ScheduleParams {
    fn from(s: DiffusionSchedule) -> Self {
        s.params
    }
}

impl DiffusionSchedule {
    pub fn new(timesteps: usize, k: f64, offset: f64) -> Result<Self> {
        if timesteps < 1 {
            return Err(Error::InvalidConfig(
                "at least one diffusion timestep is required".into(),
            ));
        }
        if !(k > 0.0 && k.is_finite()) || !(offset > 0.0 && offset.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "simplex magnitude ({k}) and schedule offset ({offset}) must be positive"
            )));
        }
        let f = |t: usize| {
            let x = (t as f64 / timesteps as f64 + offset) / (1.0 + offset);
            (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let f0 = f(0);
        let mut alpha_bar: Vec<f64> = (0..=timesteps).map(|t| f(t) / f0).collect();
        alpha_bar[0] = 1.0;
        Ok(Self {
            params: ScheduleParams { timesteps, k, offset },
            alpha_bar,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.params.timesteps
    }

    /// Simplex magnitude `k`.
    pub fn k(&self) -> f64 {
        self.params.k
    }

    pub fn offset(&self) -> f64 {
        self.params.offset
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    fn check(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.params.timesteps {
            return Err(Error::TimestepOutOfRange {
                t,
                min,
                max: self.params.timesteps,
            });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t, 0)?;
        Ok(self.alpha_bar[t])
    }

    /// The full `alpha_bar` table, indexed by timestep.
    pub fn alpha_bar_table(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t, 1)?;
        Ok((1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]).min(MAX_BETA))
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(1.0 - self.beta(t)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_one_and_decreases() {
        let s = DiffusionSchedule::new(500, 5.0, 0.008).unwrap();
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        let table = s.alpha_bar_table();
        assert!(table.windows(2).all(|w| w[1] < w[0]));
        assert!(table.iter().all(|&a| a > 0.0 && a <= 1.0));
    }

    #[test]
    fn betas_stay_inside_the_unit_interval() {
        let s = DiffusionSchedule::new(200, 5.0, 0.008).unwrap();
        for t in 1..=200 {
            let b = s.beta(t).unwrap();
            assert!(b > 0.0 && b < 1.0, "beta_{t} = {b}");
        }
    }

    #[test]
    fn out_of_range_timesteps() {
        let s = DiffusionSchedule::new(10, 5.0, 0.008).unwrap();
        assert!(matches!(s.alpha_bar(11), Err(Error::TimestepOutOfRange { t: 11, .. })));
        assert!(s.beta(0).is_err());
    }

    #[test]
    fn serializes_as_its_parameters() {
        let s = DiffusionSchedule::new(40, 3.0, 0.01).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"timesteps":40,"k":3.0,"offset":0.01}"#);
        let back: DiffusionSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
