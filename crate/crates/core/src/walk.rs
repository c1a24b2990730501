//! Quenched walk paths, first passage into `(−∞, −y]` and the rescaling map.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, StepLaw};
use crate::error::{Error, Result};

/// A trajectory `y + S_k`, `k = 0..=N`, with `S_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub y: f64,
    pub steps: Vec<f64>,
    /// First `n` with `y + S_n ≤ 0`, if it happened within the horizon.
    pub tau: Option<usize>,
}

impl Path {
    pub fn new(y: f64, steps: Vec<f64>) -> Self {
        let mut pos = y;
        let mut tau = None;
        for (k, s) in steps.iter().enumerate() {
            pos += s;
            if pos <= 0.0 {
                tau = Some(k + 1);
                break;
            }
        }
        Path { y, steps, tau }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `y + S_k` for `k = 0..=N`.
    pub fn positions(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut pos = self.y;
        out.push(pos);
        for s in &self.steps {
            pos += s;
            out.push(pos);
        }
        out
    }

    pub fn endpoint(&self) -> f64 {
        self.y + self.steps.iter().sum::<f64>()
    }

    /// `min_{1≤k≤N} (y + S_k)`.
    pub fn min_after_start(&self) -> f64 {
        self.positions().into_iter().skip(1).fold(f64::INFINITY, f64::min)
    }

    /// CSV with columns `k,S_k`, where `S_k` is the position `y + S_k`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k,S_k")?;
        for (k, p) in self.positions().into_iter().enumerate() {
            writeln!(w, "{k},{p}")?;
        }
        Ok(())
    }
}

/// Writes a path ensemble as CSV with columns `sample,k,value`.
pub fn write_ensemble_csv<W: Write>(paths: &[Path], mut w: W) -> io::Result<()> {
    writeln!(w, "sample,k,value")?;
    for (i, path) in paths.iter().enumerate() {
        for (k, p) in path.positions().into_iter().enumerate() {
            writeln!(w, "{i},{k},{p}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Passage {
    /// `τ_y = tau` with `y + S_τ = terminal ≤ 0`.
    Hit { tau: usize, terminal: f64 },
    /// Still alive at `n_max` at position `y + S_{n_max} = surviving > 0`.
    Censored { n_max: usize, surviving: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstPassageSample {
    pub tau: Passage,
}

impl FirstPassageSample {
    pub fn is_censored(&self) -> bool {
        matches!(self.tau, Passage::Censored { .. })
    }
}

/// Step laws of an environment materialized up to a horizon.
pub struct WalkSampler<'a> {
    laws: Vec<&'a StepLaw>,
}

impl<'a> WalkSampler<'a> {
    pub fn new(env: &'a Environment, horizon: usize) -> Self {
        WalkSampler { laws: env.step_laws(horizon) }
    }

    pub fn horizon(&self) -> usize {
        self.laws.len()
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> Path {
        Path::new(y, self.laws.iter().map(|l| l.sample(rng)).collect())
    }

    /// Simulates until `τ_y` or the horizon, whichever comes first.
    pub fn first_passage<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> FirstPassageSample {
        let mut pos = y;
        for (k, law) in self.laws.iter().enumerate() {
            pos += law.sample(rng);
            if pos <= 0.0 {
                return FirstPassageSample { tau: Passage::Hit { tau: k + 1, terminal: pos } };
            }
        }
        FirstPassageSample { tau: Passage::Censored { n_max: self.laws.len(), surviving: pos } }
    }

    /// Whether a fresh path survives the whole horizon, stopping at the
    /// first kill.
    pub fn survives<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> bool {
        !matches!(self.first_passage(y, rng).tau, Passage::Hit { .. })
    }
}

/// Path with `horizon` increments drawn from `step_law(env, 1..=horizon)`.
pub fn sample_path<R: Rng + ?Sized>(env: &Environment, y: f64, horizon: usize, rng: &mut R) -> Path {
    WalkSampler::new(env, horizon).sample_path(y, rng)
}

pub fn first_passage<R: Rng + ?Sized>(env: &Environment, y: f64, n_max: usize, rng: &mut R) -> FirstPassageSample {
    WalkSampler::new(env, n_max).first_passage(y, rng)
}

/// `t ↦ (y + S_{(Nt)}) / (√N σ)` on `[0, 1]`, stored on the grid `k/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledPath {
    values: Vec<f64>,
}

impl RescaledPath {
    /// Values at `t = k/N`, `k = 0..=N`.
    pub fn grid(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation between grid points; `t` is clamped to `[0, 1]`.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.values.len() - 1;
        let u = t.clamp(0.0, 1.0) * n as f64;
        let k = (u.floor() as usize).min(n.saturating_sub(1));
        if n == 0 {
            return self.values[0];
        }
        let frac = u - k as f64;
        self.values[k] + frac * (self.values[k + 1] - self.values[k])
    }
}

pub fn rescale(path: &Path, n: usize, sigma: f64) -> Result<RescaledPath> {
    if n == 0 || !(sigma > 0.0) {
        return Err(Error::InvalidArgument("rescaling needs N ≥ 1 and σ > 0".into()));
    }
    if path.steps.len() < n {
        return Err(Error::HorizonTooShort { have: path.steps.len(), need: n });
    }
    let scale = (n as f64).sqrt() * sigma;
    let values = path.positions().into_iter().take(n + 1).map(|p| p / scale).collect();
    Ok(RescaledPath { values })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::environment::{build_model, ModelSpec};
    use crate::rng::StreamKey;

    fn srw() -> Environment {
        Arc::new(build_model(&ModelSpec::simple_symmetric()).unwrap()).realize(0)
    }

    #[test]
    fn tau_bookkeeping() {
        let p = Path::new(0.0, vec![-1.0, 1.0]);
        assert_eq!(p.tau, Some(1));
        let p = Path::new(2.0, vec![1.0, -1.0, -1.0, -1.0, 5.0]);
        assert_eq!(p.tau, Some(4));
        let p = Path::new(1.0, vec![1.0, -1.0]);
        assert_eq!(p.tau, None);
    }

    #[test]
    fn one_step_kill_from_zero() {
        let env = srw();
        let key = StreamKey::new(0, 0);
        let mut saw_kill = false;
        for i in 0..64 {
            let s = first_passage(&env, 0.0, 1, &mut key.rng(i));
            match s.tau {
                Passage::Hit { tau, terminal } => {
                    assert_eq!((tau, terminal), (1, -1.0));
                    saw_kill = true;
                }
                Passage::Censored { surviving, .. } => assert_eq!(surviving, 1.0),
            }
        }
        assert!(saw_kill);
    }

    #[test]
    fn far_start_never_killed() {
        let env = srw();
        let mut rng = StreamKey::new(1, 1).rng(0);
        assert_eq!(sample_path(&env, 1e12, 10, &mut rng).tau, None);
    }

    #[test]
    fn skip_free_terminal() {
        let env = srw();
        let sampler = WalkSampler::new(&env, 100_000);
        let key = StreamKey::new(2, 0);
        for i in 0..200 {
            if let Passage::Hit { terminal, .. } = sampler.first_passage(3.0, &mut key.rng(i)).tau {
                assert_eq!(terminal, 0.0);
            }
        }
    }

    #[test]
    fn survival_frequency_at_four() {
        let env = srw();
        let sampler = WalkSampler::new(&env, 4);
        let key = StreamKey::new(3, 0);
        let n = 100_000;
        let alive = (0..n).filter(|&i| sampler.survives(0.0, &mut key.rng(i))).count() as f64;
        let p = 3.0 / 16.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((alive / n as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn rescaling() {
        let p = Path::new(0.0, vec![1.0, 1.0, -1.0, 1.0]);
        let r = rescale(&p, 4, 1.0).unwrap();
        assert_eq!(r.grid(), &[0.0, 0.5, 1.0, 0.5, 1.0]);
        assert!((r.at(3.0 / 8.0) - 0.75).abs() < 1e-15);
        assert_eq!(r.at(1.0), 1.0);
        let flat = rescale(&Path::new(2.0, vec![0.0; 9]), 9, 2.0).unwrap();
        assert!(flat.grid().iter().all(|&v| (v - 2.0 / 6.0).abs() < 1e-15));
        assert!(matches!(rescale(&p, 5, 1.0), Err(Error::HorizonTooShort { have: 4, need: 5 })));
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        Path::new(1.0, vec![1.0, -1.0]).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,S_k\n0,1\n1,2\n2,1\n");
    }
}
