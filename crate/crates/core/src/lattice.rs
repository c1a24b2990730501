//! Exact distributions of the killed walk on a lattice.
//!
//! Positions are stored in lattice units. A walk started at `y` is alive at
//! time `n` if `y + S_k > 0` for all `1 ≤ k ≤ n`; mass that lands on a
//! position `≤ 0` is absorbed and booked under that terminal position.

use std::collections::BTreeMap;

use crate::environment::{Environment, LatticeAtom, LatticeLaw, StepLaw, MAX_DENOMINATOR};
use crate::error::{Error, Result};
use crate::scalar::{rationalize, Scalar, RATIONAL_TOL};

/// Sub-probability law of the surviving walk at time `n`, plus the mass
/// absorbed at each terminal position up to time `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDistribution<T> {
    time: usize,
    unit: f64,
    /// Lattice index of `alive[0]`.
    origin: i64,
    alive: Vec<T>,
    killed: BTreeMap<i64, T>,
    pruned: T,
}

impl<T: Scalar> LatticeDistribution<T> {
    /// Unit mass at `y` (in units) at time 0. `y = 0` is allowed: the
    /// first-passage time is only checked from time 1 on.
    pub fn point_mass(unit: f64, y: i64) -> Self {
        assert!(y >= 0, "start must be nonnegative");
        LatticeDistribution {
            time: 0,
            unit,
            origin: y,
            alive: vec![T::one()],
            killed: BTreeMap::new(),
            pruned: T::zero(),
        }
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn unit(&self) -> f64 {
        self.unit
    }

    /// Nonzero alive masses as `(position in units, mass)`.
    pub fn alive(&self) -> impl Iterator<Item = (i64, &T)> + '_ {
        self.alive
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_zero())
            .map(move |(i, m)| (self.origin + i as i64, m))
    }

    pub fn alive_mass(&self, position: i64) -> T {
        let i = position - self.origin;
        if i < 0 || i as usize >= self.alive.len() {
            T::zero()
        } else {
            self.alive[i as usize].clone()
        }
    }

    pub fn killed(&self) -> &BTreeMap<i64, T> {
        &self.killed
    }

    /// Mass dropped at the edges by pruning.
    pub fn pruned(&self) -> &T {
        &self.pruned
    }

    /// Smallest and largest alive positions, if any.
    pub fn alive_range(&self) -> Option<(i64, i64)> {
        if self.alive.is_empty() {
            None
        } else {
            Some((self.origin, self.origin + self.alive.len() as i64 - 1))
        }
    }

    /// `P(τ_y > n)`.
    pub fn alive_total(&self) -> T {
        sum(self.alive.iter().cloned())
    }

    pub fn killed_total(&self) -> T {
        sum(self.killed.values().cloned())
    }

    /// `Σ position · mass` over alive positions, in units.
    pub fn alive_first_moment(&self) -> T {
        sum(self.alive().map(|(p, m)| T::from_lattice(p) * m.clone()))
    }

    /// `P(position > x, τ > n)`, `x` in units.
    pub fn alive_above(&self, x: i64) -> T {
        sum(self.alive().filter(|(p, _)| *p > x).map(|(_, m)| m.clone()))
    }

    /// `Σ |terminal| · mass` over absorbed mass, in units.
    pub fn overshoot_moment(&self) -> T {
        sum(self.killed.iter().map(|(&t, m)| T::from_lattice(-t) * m.clone()))
    }

    /// One step of the killed walk under a lattice law.
    pub fn step_lattice(&self, law: &LatticeLaw) -> Self {
        let mut killed = self.killed.clone();
        let Some((lo, hi)) = self.alive_range() else {
            return LatticeDistribution { time: self.time + 1, alive: Vec::new(), killed, ..self.clone() };
        };
        let new_lo = (lo + law.min_step()).max(1);
        let new_hi = hi + law.max_step();
        let mut alive = if new_hi >= new_lo { vec![T::zero(); (new_hi - new_lo + 1) as usize] } else { Vec::new() };
        let probs: Vec<(i64, T)> = law.atoms().iter().map(|a| (a.step, T::from_atom(a))).collect();
        for (i, m) in self.alive.iter().enumerate() {
            if m.is_zero() {
                continue;
            }
            let pos = lo + i as i64;
            for (s, p) in &probs {
                let t = pos + s;
                let mass = m.clone() * p.clone();
                if t <= 0 {
                    *killed.entry(t).or_insert_with(T::zero) += mass;
                } else {
                    alive[(t - new_lo) as usize] += mass;
                }
            }
        }
        let mut next = LatticeDistribution {
            time: self.time + 1,
            unit: self.unit,
            origin: new_lo,
            alive,
            killed,
            pruned: self.pruned.clone(),
        };
        next.prune_edges();
        next
    }

    fn prune_edges(&mut self) {
        if T::PRUNE_BELOW.is_none() {
            return;
        }
        let mut end = self.alive.len();
        while end > 0 && self.alive[end - 1].negligible() {
            end -= 1;
            self.pruned += self.alive[end].clone();
        }
        self.alive.truncate(end);
        let mut start = 0;
        while start < self.alive.len() && self.alive[start].negligible() {
            self.pruned += self.alive[start].clone();
            start += 1;
        }
        if start > 0 {
            self.alive.drain(..start);
            self.origin += start as i64;
        }
    }
}

fn sum<T: Scalar>(it: impl Iterator<Item = T>) -> T {
    it.fold(T::zero(), |acc, x| acc + x)
}

/// Expresses a step law on the lattice of `unit`.
pub fn to_lattice_law(law: &StepLaw, unit: f64) -> Result<LatticeLaw> {
    let atoms = law
        .atoms()
        .iter()
        .map(|a| {
            let k = (a.value / unit).round();
            if (a.value - k * unit).abs() > 1e-9 * a.value.abs().max(1.0) {
                return Err(Error::LatticeMismatch { value: a.value, unit });
            }
            Ok(LatticeAtom { step: k as i64, prob: a.prob, ratio: rationalize(a.prob, MAX_DENOMINATOR, RATIONAL_TOL) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatticeLaw::from_atoms(atoms))
}

/// Pushes the alive mass of `dist` through `law`.
pub fn lattice_dp_step<T: Scalar>(dist: &LatticeDistribution<T>, law: &StepLaw) -> Result<LatticeDistribution<T>> {
    Ok(dist.step_lattice(&to_lattice_law(law, dist.unit)?))
}

/// Killed-walk distribution at time `n` for the walk started at `y` (units).
pub fn evolve<T: Scalar>(env: &Environment, y: i64, n: usize) -> Result<LatticeDistribution<T>> {
    let laws = env.lattice_laws(n)?;
    let mut dist = LatticeDistribution::point_mass(env.lattice()?.unit, y);
    for law in laws {
        dist = dist.step_lattice(law);
    }
    Ok(dist)
}

/// Runs the killed walk from `y` (units) up to time `n`, calling `visit` at
/// every time `0..=n`.
pub fn evolve_visit<T: Scalar>(
    env: &Environment,
    y: i64,
    n: usize,
    mut visit: impl FnMut(&LatticeDistribution<T>),
) -> Result<LatticeDistribution<T>> {
    let laws = env.lattice_laws(n)?;
    let mut dist = LatticeDistribution::point_mass(env.lattice()?.unit, y);
    visit(&dist);
    for law in laws {
        dist = dist.step_lattice(law);
        visit(&dist);
    }
    Ok(dist)
}

/// `P_ξ(τ_y > n)` by `n` exact DP steps.
pub fn survival_probability_exact<T: Scalar>(env: &Environment, y: f64, n: usize) -> Result<T> {
    let y = env.to_units(y)?;
    if y < 0 {
        return Err(Error::InvalidArgument(format!("start {y} is negative")));
    }
    Ok(evolve::<T>(env, y, n)?.alive_total())
}

/// Law of `y + S_n` without killing.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeDistribution<T> {
    origin: i64,
    mass: Vec<T>,
}

impl<T: Scalar> FreeDistribution<T> {
    pub fn point_mass(y: i64) -> Self {
        FreeDistribution { origin: y, mass: vec![T::one()] }
    }

    pub fn step_lattice(&self, law: &LatticeLaw) -> Self {
        let lo = self.origin + law.min_step();
        let hi = self.origin + self.mass.len() as i64 - 1 + law.max_step();
        let mut mass = vec![T::zero(); (hi - lo + 1) as usize];
        let probs: Vec<(i64, T)> = law.atoms().iter().map(|a| (a.step, T::from_atom(a))).collect();
        for (i, m) in self.mass.iter().enumerate() {
            if m.is_zero() {
                continue;
            }
            let pos = self.origin + i as i64;
            for (s, p) in &probs {
                mass[(pos + s - lo) as usize] += m.clone() * p.clone();
            }
        }
        let mut next = FreeDistribution { origin: lo, mass };
        if T::PRUNE_BELOW.is_some() {
            while next.mass.last().is_some_and(|m| m.negligible()) {
                next.mass.pop();
            }
            let start = next.mass.iter().take_while(|m| m.negligible()).count();
            next.mass.drain(..start);
            next.origin += start as i64;
        }
        next
    }

    /// `P(position > x)`.
    pub fn above(&self, x: i64) -> T {
        self.mass
            .iter()
            .enumerate()
            .filter(|(i, _)| self.origin + *i as i64 > x)
            .fold(T::zero(), |acc, (_, m)| acc + m.clone())
    }

    pub fn range(&self) -> (i64, i64) {
        (self.origin, self.origin + self.mass.len() as i64 - 1)
    }

    /// `E (position)⁺`, in units.
    pub fn positive_part_mean(&self) -> T {
        self.mass
            .iter()
            .enumerate()
            .filter(|(i, _)| self.origin + *i as i64 > 0)
            .fold(T::zero(), |acc, (i, m)| acc + T::from_lattice(self.origin + i as i64) * m.clone())
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::environment::{build_model, LawSpec, ModelSpec};
    use crate::scalar::Exact;

    fn srw() -> Environment {
        Arc::new(build_model(&ModelSpec::simple_symmetric()).unwrap()).realize(0)
    }

    fn skewed() -> Environment {
        let spec = ModelSpec::iid(vec![LawSpec::new(&[-2.0, 1.0], &[1.0 / 3.0, 2.0 / 3.0])], vec![1.0]);
        Arc::new(build_model(&spec).unwrap()).realize(0)
    }

    /// Brute-force survival over all sign sequences of the simple walk.
    fn srw_survival_enumerated(y: i64, n: u32) -> f64 {
        let mut alive = 0u64;
        for bits in 0u64..(1 << n) {
            let mut pos = y;
            let mut ok = true;
            for k in 0..n {
                pos += if bits >> k & 1 == 1 { 1 } else { -1 };
                if pos <= 0 {
                    ok = false;
                    break;
                }
            }
            alive += ok as u64;
        }
        alive as f64 / (1u64 << n) as f64
    }

    fn binomial(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn one_step_srw() {
        let d = LatticeDistribution::<f64>::point_mass(1.0, 1);
        let law = StepLaw::new(&[-1.0, 1.0], &[0.5, 0.5], 0).unwrap();
        let next = lattice_dp_step(&d, &law).unwrap();
        assert_eq!(next.alive().map(|(p, m)| (p, *m)).collect::<Vec<_>>(), vec![(2, 0.5)]);
        assert_eq!(next.killed().get(&0), Some(&0.5));
    }

    #[test]
    fn one_step_skewed() {
        let d = LatticeDistribution::<Exact>::point_mass(1.0, 2);
        let law = StepLaw::new(&[-2.0, 1.0], &[1.0 / 3.0, 2.0 / 3.0], 0).unwrap();
        let next = lattice_dp_step(&d, &law).unwrap();
        let third = Exact::new(1.into(), 3.into());
        assert_eq!(next.alive_mass(3), Exact::new(2.into(), 3.into()));
        assert_eq!(next.killed().get(&0), Some(&third));
        assert_eq!(next.alive().count(), 1);
    }

    #[test]
    fn off_lattice_law_is_rejected() {
        let d = LatticeDistribution::<f64>::point_mass(1.0, 1);
        let law = StepLaw::new(&[-0.5, 0.5], &[0.5, 0.5], 0).unwrap();
        assert!(matches!(lattice_dp_step(&d, &law), Err(Error::LatticeMismatch { .. })));
    }

    #[test]
    fn srw_survival_values() {
        let env = srw();
        assert_eq!(survival_probability_exact::<f64>(&env, 0.0, 0).unwrap(), 1.0);
        assert_eq!(srw_survival_enumerated(0, 4), 0.1875);
        assert!((survival_probability_exact::<f64>(&env, 0.0, 4).unwrap() - 0.1875).abs() < 1e-15);
        let exact = survival_probability_exact::<Exact>(&env, 0.0, 4).unwrap();
        assert_eq!(exact, Exact::new(3.into(), 16.into()));
        let oracle = 0.5 * binomial(100, 50) * 0.5f64.powi(100);
        assert!((oracle - 0.0397945).abs() < 1e-6);
        let p = survival_probability_exact::<f64>(&env, 0.0, 100).unwrap();
        assert!((p - oracle).abs() < 1e-12);
    }

    #[test]
    fn survival_matches_enumeration() {
        let env = srw();
        for y in 0..4 {
            for n in 0..12 {
                let p = survival_probability_exact::<f64>(&env, y as f64, n as usize).unwrap();
                assert!((p - srw_survival_enumerated(y, n)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn conservation_long_run() {
        for env in [srw(), skewed()] {
            let d = evolve::<f64>(&env, 3, 10_000).unwrap();
            let total = d.alive_total() + d.killed_total();
            assert!((1.0 - total).abs() < 1e-10, "total {total}");
            assert!(*d.pruned() < 1e-10);
            assert!(d.alive().all(|(p, _)| p > 0));
            assert!(d.killed().keys().all(|&t| t <= 0));
        }
    }

    #[test]
    fn exact_conservation() {
        let d = evolve::<Exact>(&skewed(), 1, 40).unwrap();
        assert_eq!(d.alive_total() + d.killed_total(), Exact::from_integer(1.into()));
    }

    #[test]
    fn skip_free_terminal_is_zero() {
        let env = srw();
        let d = evolve::<f64>(&env, 3, 200).unwrap();
        assert_eq!(d.killed().keys().copied().collect::<Vec<_>>(), vec![0]);
        // the skewed law overshoots
        let d = evolve::<f64>(&skewed(), 3, 200).unwrap();
        assert_eq!(d.killed().keys().copied().collect::<Vec<_>>(), vec![-1, 0]);
    }

    #[test]
    fn free_distribution_mass() {
        let law = &srw().lattice_laws(1).unwrap()[0].clone();
        let mut d = FreeDistribution::<Exact>::point_mass(0);
        for _ in 0..4 {
            d = d.step_lattice(law);
        }
        assert_eq!(d.above(-5), Exact::from_integer(1.into()));
        assert_eq!(d.above(1), Exact::new(5.into(), 16.into()));
        assert_eq!(d.range(), (-4, 4));
    }
}
