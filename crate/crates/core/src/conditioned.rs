//! Walks conditioned to stay positive.
//!
//! Two laws are sampled here. The meander is `P_ξ(· | τ₀ > N)`, drawn either
//! by rejection or exactly from forward transitions reweighted by the
//! survival probabilities `h_m(z) = P_{θ^m ξ}(τ_z > N − m)`. The h-transform
//! walk under `P⁺_{ξ,y}` steps from `z` at time `n` to `z + x` with
//! probability `P(X_{n+1} = x)·U(θ^{n+1}ξ, z + x)/U(θⁿξ, z)`, with `U` read
//! from a [`UTable`].

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::Sweep;
use crate::environment::{Environment, LatticeAtom, LatticeLaw};
use crate::error::{Error, Result};
use crate::lattice::survival_probability_exact;
use crate::rng::{StreamKey, BATCH};
use crate::utable::UTable;
use crate::walk::Path;

/// Proposal cap used by [`meander_sample_rejection`] when the survival
/// probability cannot be computed exactly.
pub const FALLBACK_BUDGET: u64 = 10_000_000;

/// One-step law of the h-transform walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedKernel {
    pub time: usize,
    pub source: f64,
    /// `(destination, probability)`, destinations increasing and positive.
    pub atoms: Vec<(f64, f64)>,
    /// `Σ P(X = x)·U(θ^{n+1}ξ, y + x)`, which should reproduce `U(θⁿξ, y)`.
    pub normalizer: f64,
}

/// Largest atom count handled without allocation.
const SMALL: usize = 8;

/// Draws the next position from `z` with weights `p·V(z + s)` over positive
/// destinations, where `V` is `row` extended by `beyond`; `u` is uniform on
/// `[0, 1)`. `None` when a value is missing or all weights vanish.
#[inline]
fn weighted_step(
    atoms: &[LatticeAtom],
    row: &[f64],
    z: i64,
    u: f64,
    beyond: impl Fn(i64) -> Option<f64>,
) -> Option<i64> {
    if atoms.len() > SMALL {
        return weighted_step_large(atoms, row, z, u, beyond);
    }
    let mut cumulative = [0.0; SMALL];
    let mut total = 0.0;
    for (c, a) in cumulative.iter_mut().zip(atoms) {
        let t = z + a.step;
        if t > 0 {
            let v = match row.get(t as usize) {
                Some(&v) => v,
                None => beyond(t)?,
            };
            total += a.prob * v;
        }
        *c = total;
    }
    if !(total > 0.0) {
        return None;
    }
    // index of the first cumulative weight above the target, without branches
    let target = u * total;
    let mut i = 0;
    for &c in &cumulative[..atoms.len() - 1] {
        i += (c <= target) as usize;
    }
    Some(z + atoms[i].step)
}

fn weighted_step_large(
    atoms: &[LatticeAtom],
    row: &[f64],
    z: i64,
    u: f64,
    beyond: impl Fn(i64) -> Option<f64>,
) -> Option<i64> {
    let mut cumulative = Vec::with_capacity(atoms.len());
    let mut total = 0.0;
    for a in atoms {
        let t = z + a.step;
        if t > 0 {
            let v = match row.get(t as usize) {
                Some(&v) => v,
                None => beyond(t)?,
            };
            total += a.prob * v;
        }
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return None;
    }
    let target = u * total;
    let i = cumulative[..atoms.len() - 1].partition_point(|&c| c <= target);
    Some(z + atoms[i].step)
}

/// One transition rule of a reweighted walk: at time `m` the step law is
/// `atoms(m)` and destinations are weighted by `row(m)` (values after the
/// step) extended by `beyond`.
trait Reweighted: Sync {
    fn atoms(&self, m: usize) -> &[LatticeAtom];
    fn row(&self, m: usize) -> &[f64];
    fn beyond(&self, m: usize, t: i64) -> Option<f64>;
    /// Error for a failed step from `z` at time `m`.
    fn failure(&self, m: usize, z: i64) -> Error;

    #[inline]
    fn step(&self, m: usize, z: i64, u: f64) -> Result<i64> {
        weighted_step(self.atoms(m), self.row(m), z, u, |t| self.beyond(m, t)).ok_or_else(|| self.failure(m, z))
    }

    fn walk<R: Rng + ?Sized>(&self, start: i64, steps: usize, rng: &mut R) -> Result<Vec<i64>> {
        let mut z = start;
        let mut out = Vec::with_capacity(steps + 1);
        out.push(z);
        for m in 0..steps {
            z = self.step(m, z, rng.random::<f64>())?;
            out.push(z);
        }
        Ok(out)
    }

    /// Endpoints of `n_samples` chains of `steps` transitions from `start`,
    /// time-major within batches of [`BATCH`] samples sharing one stream.
    fn batch_endpoints(&self, start: i64, steps: usize, n_samples: usize, key: StreamKey) -> Result<Vec<i64>> {
        let batches = n_samples.div_ceil(BATCH);
        let chunks = (0..batches)
            .into_par_iter()
            .map(|b| {
                let count = BATCH.min(n_samples - b * BATCH);
                let mut rng = key.batch_rng(b as u64);
                let mut pos = vec![start; count];
                for m in 0..steps {
                    let (atoms, row) = (self.atoms(m), self.row(m));
                    for p in pos.iter_mut() {
                        let u = rng.random::<f64>();
                        *p = weighted_step(atoms, row, *p, u, |t| self.beyond(m, t)).ok_or_else(|| self.failure(m, *p))?;
                    }
                }
                Ok(pos)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.concat())
    }
}

fn positions_to_path(y: f64, positions: &[i64], unit: f64) -> Path {
    let steps = positions.windows(2).map(|w| (w[1] - w[0]) as f64 * unit).collect();
    Path::new(y, steps)
}

fn check_source(env: &Environment, n: usize, y: f64) -> Result<i64> {
    let z = env.to_units(y)?;
    if z < 0 || (z == 0 && n > 0) {
        return Err(Error::InvalidArgument(format!("conditioned walk at time {n} needs y > 0, got {y}")));
    }
    Ok(z)
}

/// Reweighted one-step law at time `n` from `y`.
pub fn h_transform_kernel(env: &Environment, utable: &UTable, n: usize, y: f64) -> Result<ConditionedKernel> {
    utable.check_env(env)?;
    let z = check_source(env, n, y)?;
    if n + 1 > utable.shifts {
        return Err(Error::TableMiss { shift: n + 1, position: z });
    }
    let unit = env.lattice()?.unit;
    let law = &env.lattice()?.laws[env.letter(n + 1)];
    let mut atoms = Vec::with_capacity(law.atoms().len());
    let mut total = 0.0;
    for a in law.atoms() {
        let t = z + a.step;
        if t > 0 {
            let w = a.prob * utable.value(n + 1, t)?;
            if w > 0.0 {
                atoms.push((t as f64 * unit, w));
                total += w;
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::ZeroMass { time: n, position: z });
    }
    for a in &mut atoms {
        a.1 /= total;
    }
    Ok(ConditionedKernel { time: n, source: y, atoms, normalizer: total })
}

/// Sampler for the h-transform walk over `N ≤ utable.shifts` steps.
pub struct HTransformSampler<'a> {
    table: &'a UTable,
    laws: Vec<&'a LatticeLaw>,
    unit: f64,
}

impl<'a> HTransformSampler<'a> {
    pub fn new(env: &'a Environment, table: &'a UTable, n: usize) -> Result<Self> {
        table.check_env(env)?;
        if n > table.shifts {
            return Err(Error::TableMiss { shift: n, position: 0 });
        }
        Ok(HTransformSampler { table, laws: env.lattice_laws(n)?, unit: env.lattice()?.unit })
    }

    pub fn len(&self) -> usize {
        self.laws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }

    fn start(&self, y: f64) -> Result<i64> {
        let z = (y / self.unit).round() as i64;
        if (z as f64 * self.unit - y).abs() > 1e-9 * y.abs().max(1.0) {
            return Err(Error::LatticeMismatch { value: y, unit: self.unit });
        }
        if z < 0 {
            return Err(Error::InvalidArgument(format!("conditioned walk needs y ≥ 0, got {y}")));
        }
        Ok(z)
    }

    /// Positions `z_0..=z_N` in lattice units.
    pub fn sample_units<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> Result<Vec<i64>> {
        self.walk(self.start(y)?, self.laws.len(), rng)
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> Result<Path> {
        Ok(positions_to_path(y, &self.sample_units(y, rng)?, self.unit))
    }

    /// Endpoints `y + S_N` of `n_samples` independent walks.
    pub fn endpoints(&self, y: f64, n_samples: usize, key: StreamKey) -> Result<Vec<f64>> {
        let z = self.start(y)?;
        let ends = self.batch_endpoints(z, self.laws.len(), n_samples, key)?;
        Ok(ends.into_iter().map(|z| z as f64 * self.unit).collect())
    }
}

impl Reweighted for HTransformSampler<'_> {
    fn atoms(&self, m: usize) -> &[LatticeAtom] {
        self.laws[m].atoms()
    }

    fn row(&self, m: usize) -> &[f64] {
        self.table.row(m + 1)
    }

    fn beyond(&self, _: usize, _: i64) -> Option<f64> {
        None
    }

    fn failure(&self, m: usize, z: i64) -> Error {
        let row = self.row(m);
        match self.atoms(m).iter().map(|a| z + a.step).find(|&t| t > 0 && t as usize >= row.len()) {
            Some(t) => Error::TableMiss { shift: m + 1, position: t },
            None => Error::ZeroMass { time: m, position: z },
        }
    }
}

/// One h-transform path of `n` steps from `y`.
pub fn conditioned_sample<R: Rng + ?Sized>(
    env: &Environment,
    y: f64,
    n: usize,
    utable: &UTable,
    rng: &mut R,
) -> Result<Path> {
    check_source(env, 0, y)?;
    HTransformSampler::new(env, utable, n)?.sample_path(y, rng)
}

/// Survival table `h_m(z) = P_{θ^m ξ}(τ_z > N − m)` and the exact meander
/// sampler built on it.
pub struct MeanderSampler<'a> {
    laws: Vec<&'a LatticeLaw>,
    rows: Vec<Vec<f64>>,
    unit: f64,
    start: i64,
    max_down: i64,
    /// Largest stored position.
    pub ceiling: i64,
}

impl<'a> MeanderSampler<'a> {
    /// Table for walks of `n` steps from `y`. Positions above a ceiling of
    /// about `12σ√N` take the value stored at the ceiling, except where
    /// survival is certain.
    pub fn new(env: &'a Environment, n: usize, y: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("meander needs N ≥ 1".into()));
        }
        let lattice = env.lattice()?;
        let start = env.to_units(y)?;
        if start < 0 {
            return Err(Error::InvalidArgument(format!("meander needs y ≥ 0, got {y}")));
        }
        let (up, down, unit) = (lattice.max_up, lattice.max_down, lattice.unit);
        let spread = (12.0 * env.model().sigma() * (n as f64).sqrt() / unit).ceil() as i64;
        let ceiling = start + spread.max(1) + up;
        let laws = env.lattice_laws(n)?;
        let terminal = |_: i64| 1.0;
        let width = |m: usize| (start + m as i64 * up).min(ceiling);
        let beyond = |m: usize, z: i64, row: &[f64]| survival_beyond(n, down, m, z, row);
        let rows = Sweep { laws: &laws, terminal: &terminal, width: &width, beyond: &beyond }.run(n);
        Ok(MeanderSampler { laws, rows, unit, start, max_down: down, ceiling })
    }

    pub fn len(&self) -> usize {
        self.laws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }

    /// `P_ξ(τ_y > N)` for the start `y`.
    pub fn survival(&self) -> f64 {
        self.rows[0][self.start as usize]
    }

    fn check(&self) -> Result<()> {
        if !(self.survival() > 0.0) {
            return Err(Error::ZeroMass { time: 0, position: self.start });
        }
        Ok(())
    }

    pub fn sample_units<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<i64>> {
        self.check()?;
        self.walk(self.start, self.laws.len(), rng)
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Path> {
        let y = self.start as f64 * self.unit;
        Ok(positions_to_path(y, &self.sample_units(rng)?, self.unit))
    }

    /// Endpoints `y + S_N` of `n_samples` independent meanders.
    pub fn endpoints(&self, n_samples: usize, key: StreamKey) -> Result<Vec<f64>> {
        self.check()?;
        let ends = self.batch_endpoints(self.start, self.laws.len(), n_samples, key)?;
        Ok(ends.into_iter().map(|z| z as f64 * self.unit).collect())
    }
}

impl Reweighted for MeanderSampler<'_> {
    fn atoms(&self, m: usize) -> &[LatticeAtom] {
        self.laws[m].atoms()
    }

    fn row(&self, m: usize) -> &[f64] {
        &self.rows[m + 1]
    }

    fn beyond(&self, m: usize, t: i64) -> Option<f64> {
        Some(survival_beyond(self.laws.len(), self.max_down, m + 1, t, self.row(m)))
    }

    fn failure(&self, m: usize, z: i64) -> Error {
        Error::ZeroMass { time: m, position: z }
    }
}

fn survival_beyond(n: usize, down: i64, m: usize, z: i64, row: &[f64]) -> f64 {
    if z > (n - m) as i64 * down {
        1.0
    } else {
        row[row.len() - 1]
    }
}

/// Exact meander sample of `n` steps from 0.
pub fn meander_sample_dp<R: Rng + ?Sized>(env: &Environment, n: usize, rng: &mut R) -> Result<Path> {
    MeanderSampler::new(env, n, 0.0)?.sample_path(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionOutcome {
    pub path: Path,
    /// Proposals drawn, the accepted one included.
    pub proposals: u64,
}

/// Default proposal cap `100/P(τ₀ > N)`.
pub fn default_budget(env: &Environment, n: usize) -> u64 {
    match survival_probability_exact::<f64>(env, 0.0, n) {
        Ok(p) if p > 0.0 => (100.0 / p).ceil().min(u64::MAX as f64) as u64,
        _ => FALLBACK_BUDGET,
    }
}

/// Meander by rejection: free paths from 0 are proposed until one survives
/// `n` steps. Proposals are abandoned at the first kill.
pub fn meander_sample_rejection<R: Rng + ?Sized>(
    env: &Environment,
    n: usize,
    budget: Option<u64>,
    rng: &mut R,
) -> Result<RejectionOutcome> {
    if n == 0 {
        return Err(Error::InvalidArgument("meander needs N ≥ 1".into()));
    }
    let budget = budget.unwrap_or_else(|| default_budget(env, n));
    let laws = env.step_laws(n);
    let mut steps = Vec::with_capacity(n);
    for proposals in 1..=budget {
        steps.clear();
        let mut pos = 0.0;
        let mut alive = true;
        for law in &laws {
            let s = law.sample(rng);
            pos += s;
            if pos <= 0.0 {
                alive = false;
                break;
            }
            steps.push(s);
        }
        if alive {
            return Ok(RejectionOutcome { path: Path::new(0.0, steps), proposals });
        }
    }
    Err(Error::RejectionBudgetExceeded(budget))
}
