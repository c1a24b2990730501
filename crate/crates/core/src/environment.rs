//! Stationary-ergodic environments of step laws.
//!
//! An environment is a sequence of step laws `ξ = (ξ₁, ξ₂, …)`; under the
//! quenched law the increment `X_n` of the walk is drawn from `ξ_n`,
//! independently across `n`. Three concrete stationary and ergodic
//! families are provided: i.i.d. letters from a finite alphabet, an
//! irreducible Markov chain on the alphabet, and a deterministic periodic
//! rotation.

use std::sync::{Arc, RwLock};

use num_integer::Integer;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::scalar::{rationalize, RATIONAL_TOL};

/// Tolerance on probability totals and on the quenched centering.
pub const LAW_TOL: f64 = 1e-12;
/// Means in `(LAW_TOL, NEAR_CENTERED]` are rejected with a re-centering hint.
pub const NEAR_CENTERED: f64 = 1e-6;
/// Tolerance on mixing weights and transition rows.
pub const WEIGHT_TOL: f64 = 1e-9;
/// Largest denominator considered when detecting the lattice unit.
pub const MAX_DENOMINATOR: i64 = 1_000_000;
const LATTICE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSpec {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl LawSpec {
    pub fn new(values: &[f64], probs: &[f64]) -> Self {
        LawSpec { values: values.to_vec(), probs: probs.to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    IidAlphabet,
    MarkovAlphabet,
    Periodic,
}

/// Human-editable description of an environment model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub alphabet: Vec<LawSpec>,
    /// Letter probabilities for `iid-alphabet`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Row-stochastic transition matrix for `markov-alphabet`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Cyclic letter order for `periodic`; defaults to `0, 1, …`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_unit: Option<f64>,
}

impl ModelSpec {
    pub fn iid(alphabet: Vec<LawSpec>, weights: Vec<f64>) -> Self {
        ModelSpec {
            kind: ModelKind::IidAlphabet,
            alphabet,
            weights: Some(weights),
            matrix: None,
            order: None,
            lattice_unit: None,
        }
    }

    pub fn markov(alphabet: Vec<LawSpec>, matrix: Vec<Vec<f64>>) -> Self {
        ModelSpec {
            kind: ModelKind::MarkovAlphabet,
            alphabet,
            weights: None,
            matrix: Some(matrix),
            order: None,
            lattice_unit: None,
        }
    }

    pub fn periodic(alphabet: Vec<LawSpec>, order: Vec<usize>) -> Self {
        ModelSpec {
            kind: ModelKind::Periodic,
            alphabet,
            weights: None,
            matrix: None,
            order: Some(order),
            lattice_unit: None,
        }
    }

    /// Degenerate environment: the simple symmetric walk.
    pub fn simple_symmetric() -> Self {
        ModelSpec::iid(vec![LawSpec::new(&[-1.0, 1.0], &[0.5, 0.5])], vec![1.0])
    }

    /// Stable short hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model spec serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

/// A finite-support law of one increment.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLaw {
    atoms: Vec<Atom>,
    cumulative: Vec<f64>,
}

impl StepLaw {
    /// Builds a law without checking the centering and positivity
    /// conditions. Atoms are sorted and equal values merged.
    pub fn from_atoms(values: &[f64], probs: &[f64]) -> Result<Self> {
        if values.len() != probs.len() {
            return Err(Error::InvalidModel(format!(
                "law has {} values but {} probabilities",
                values.len(),
                probs.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::InvalidModel("law has no atoms".into()));
        }
        let mut atoms: Vec<Atom> = Vec::with_capacity(values.len());
        for (&value, &prob) in values.iter().zip(probs) {
            if !value.is_finite() || !(prob > 0.0 && prob <= 1.0) {
                return Err(Error::InvalidModel(format!(
                    "atom ({value}, {prob}) needs a finite value and a probability in (0, 1]"
                )));
            }
            atoms.push(Atom { value, prob });
        }
        atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
        atoms.dedup_by(|next, kept| {
            if next.value == kept.value {
                kept.prob += next.prob;
                true
            } else {
                false
            }
        });
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.prob;
                acc
            })
            .collect();
        Ok(StepLaw { atoms, cumulative })
    }

    /// Builds a law and enforces total mass 1, quenched centering and a
    /// positive atom. `index` only labels errors.
    pub fn new(values: &[f64], probs: &[f64], index: usize) -> Result<Self> {
        let law = Self::from_atoms(values, probs)?;
        let total = law.total();
        if (total - 1.0).abs() > LAW_TOL {
            return Err(Error::NonStochastic { what: format!("alphabet[{index}].probs"), sum: total });
        }
        let mean = law.mean();
        if mean.abs() > LAW_TOL {
            let hint = if mean.abs() <= NEAR_CENTERED {
                "; re-center the atom values (the mean looks like a rounding artefact)"
            } else {
                ""
            };
            return Err(Error::NonCenteredLaw { index, mean, hint });
        }
        if !law.has_positive_atom() {
            return Err(Error::NoPositiveAtom { index });
        }
        Ok(law)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.value * a.prob).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.abs_moment(2.0)
    }

    pub fn abs_moment(&self, p: f64) -> f64 {
        self.atoms.iter().map(|a| a.value.abs().powf(p) * a.prob).sum()
    }

    pub fn min_value(&self) -> f64 {
        self.atoms[0].value
    }

    pub fn max_value(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].value
    }

    pub fn has_positive_atom(&self) -> bool {
        self.max_value() > 0.0
    }

    /// Inverse-CDF draw from a uniform `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let target = u * self.cumulative[self.cumulative.len() - 1];
        let i = self.cumulative.partition_point(|&c| c <= target);
        self.atoms[i.min(self.atoms.len() - 1)].value
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// One atom of a step law expressed in lattice units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeAtom {
    pub step: i64,
    pub prob: f64,
    /// Exact probability `num/den` when the float has one with a bounded
    /// denominator.
    pub ratio: Option<(i64, i64)>,
}

/// A step law on the lattice `unit · ℤ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeLaw {
    atoms: Vec<LatticeAtom>,
    cumulative: Vec<f64>,
}

impl LatticeLaw {
    pub fn from_atoms(atoms: Vec<LatticeAtom>) -> Self {
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.prob;
                acc
            })
            .collect();
        LatticeLaw { atoms, cumulative }
    }

    pub fn atoms(&self) -> &[LatticeAtom] {
        &self.atoms
    }

    pub fn min_step(&self) -> i64 {
        self.atoms[0].step
    }

    pub fn max_step(&self) -> i64 {
        self.atoms[self.atoms.len() - 1].step
    }

    /// Inverse-CDF draw from a uniform `u ∈ [0, 1)`.
    #[inline]
    pub fn quantile(&self, u: f64) -> i64 {
        let target = u * self.cumulative[self.cumulative.len() - 1];
        for (a, &c) in self.atoms.iter().zip(&self.cumulative) {
            if target < c {
                return a.step;
            }
        }
        self.max_step()
    }

    /// gcd of the differences between atoms.
    pub fn span(&self) -> i64 {
        let first = self.atoms[0].step;
        self.atoms.iter().fold(0i64, |g, a| g.gcd(&(a.step - first)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub unit: f64,
    pub laws: Vec<LatticeLaw>,
    /// Largest upward step over the alphabet, in units.
    pub max_up: i64,
    /// Largest downward step magnitude over the alphabet, in units.
    pub max_down: i64,
}

#[derive(Debug, Clone, PartialEq)]
enum Mixing {
    Iid { cumulative: Vec<f64> },
    Markov { rows: Vec<Vec<f64>>, initial: Vec<f64> },
    Periodic { order: Vec<usize> },
}

/// A validated environment model.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentModel {
    spec: ModelSpec,
    alphabet: Vec<StepLaw>,
    mixing: Mixing,
    stationary: Vec<f64>,
    sigma2: f64,
    lattice: Option<Lattice>,
    hash: String,
}

/// Validates a model description and precomputes the annealed variance
/// and the lattice structure.
pub fn build_model(spec: &ModelSpec) -> Result<EnvironmentModel> {
    if spec.alphabet.is_empty() {
        return Err(Error::EmptyAlphabet);
    }
    let alphabet = spec
        .alphabet
        .iter()
        .enumerate()
        .map(|(i, l)| StepLaw::new(&l.values, &l.probs, i))
        .collect::<Result<Vec<_>>>()?;
    let k = alphabet.len();

    let (mixing, stationary) = match spec.kind {
        ModelKind::IidAlphabet => {
            let w = spec
                .weights
                .clone()
                .ok_or_else(|| Error::InvalidModel("iid-alphabet needs `weights`".into()))?;
            check_distribution(&w, k, "weights")?;
            let mut acc = 0.0;
            let cumulative = w
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
            (Mixing::Iid { cumulative }, w)
        }
        ModelKind::MarkovAlphabet => {
            let m = spec
                .matrix
                .clone()
                .ok_or_else(|| Error::InvalidModel("markov-alphabet needs `matrix`".into()))?;
            if m.len() != k {
                return Err(Error::InvalidModel(format!("matrix has {} rows, alphabet has {k}", m.len())));
            }
            for (i, row) in m.iter().enumerate() {
                check_distribution(row, k, &format!("matrix[{i}]"))?;
            }
            if !irreducible(&m) {
                return Err(Error::Reducible);
            }
            let pi = stationary_distribution(&m);
            let rows = m
                .iter()
                .map(|row| {
                    let mut acc = 0.0;
                    row.iter()
                        .map(|p| {
                            acc += p;
                            acc
                        })
                        .collect()
                })
                .collect();
            let mut acc = 0.0;
            let initial = pi
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
            (Mixing::Markov { rows, initial }, pi)
        }
        ModelKind::Periodic => {
            let order = spec.order.clone().unwrap_or_else(|| (0..k).collect());
            if order.is_empty() {
                return Err(Error::InvalidModel("periodic `order` is empty".into()));
            }
            if let Some(&bad) = order.iter().find(|&&i| i >= k) {
                return Err(Error::InvalidModel(format!("order refers to letter {bad}, alphabet has {k}")));
            }
            let mut freq = vec![0.0; k];
            for &i in &order {
                freq[i] += 1.0 / order.len() as f64;
            }
            (Mixing::Periodic { order }, freq)
        }
    };

    let sigma2 = alphabet.iter().zip(&stationary).map(|(l, p)| p * l.second_moment()).sum();
    let lattice = detect_lattice(&alphabet, spec.lattice_unit)?;
    Ok(EnvironmentModel { hash: spec.hash(), spec: spec.clone(), alphabet, mixing, stationary, sigma2, lattice })
}

fn check_distribution(w: &[f64], k: usize, what: &str) -> Result<()> {
    if w.len() != k {
        return Err(Error::InvalidModel(format!("{what} has {} entries, alphabet has {k}", w.len())));
    }
    if w.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidModel(format!("{what} has an entry outside [0, 1]")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::NonStochastic { what: what.to_string(), sum });
    }
    Ok(())
}

fn irreducible(m: &[Vec<f64>]) -> bool {
    let k = m.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let p = if forward { m[i][j] } else { m[j][i] };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solves `π P = π`, `Σ π = 1` by Gaussian elimination.
fn stationary_distribution(m: &[Vec<f64>]) -> Vec<f64> {
    let k = m.len();
    // rows of (Pᵀ − I), last equation replaced by normalization
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| m[j][i] - if i == j { 1.0 } else { 0.0 }).collect();
            row.push(0.0);
            row
        })
        .collect();
    a[k - 1] = vec![1.0; k + 1];
    for col in 0..k {
        let pivot = (col..k).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap_or(col);
        a.swap(col, pivot);
        let p = a[col][col];
        for c in col..=k {
            a[col][c] /= p;
        }
        for r in 0..k {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in col..=k {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    a.into_iter().map(|row| row[k].max(0.0)).collect()
}

fn detect_lattice(alphabet: &[StepLaw], unit_override: Option<f64>) -> Result<Option<Lattice>> {
    let values: Vec<f64> = alphabet.iter().flat_map(|l| l.atoms().iter().map(|a| a.value)).collect();
    let unit = match unit_override {
        Some(h) => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidModel(format!("lattice_unit {h} must be positive")));
            }
            if let Some(&v) = values.iter().find(|&&v| !on_lattice(v, h)) {
                return Err(Error::LatticeMismatch { value: v, unit: h });
            }
            h
        }
        None => match rational_gcd(&values) {
            Some(h) => h,
            None => return Ok(None),
        },
    };
    let laws: Vec<LatticeLaw> = alphabet
        .iter()
        .map(|l| {
            LatticeLaw::from_atoms(
                l.atoms()
                    .iter()
                    .map(|a| LatticeAtom {
                        step: (a.value / unit).round() as i64,
                        prob: a.prob,
                        ratio: rationalize(a.prob, MAX_DENOMINATOR, RATIONAL_TOL),
                    })
                    .collect(),
            )
        })
        .collect();
    let max_up = laws.iter().map(|l| l.max_step()).max().unwrap_or(0).max(0);
    let max_down = laws.iter().map(|l| -l.min_step()).max().unwrap_or(0).max(0);
    Ok(Some(Lattice { unit, laws, max_up, max_down }))
}

fn on_lattice(v: f64, h: f64) -> bool {
    let k = (v / h).round();
    (v - k * h).abs() <= LATTICE_TOL * v.abs().max(1.0)
}

/// Greatest common divisor of the values over the rationals with bounded
/// denominators, or `None` when some value is not such a rational.
fn rational_gcd(values: &[f64]) -> Option<f64> {
    let fracs: Vec<(i64, i64)> = values
        .iter()
        .map(|&v| rationalize(v, MAX_DENOMINATOR, RATIONAL_TOL))
        .collect::<Option<_>>()?;
    let mut lcm: i128 = 1;
    for &(_, q) in &fracs {
        lcm = lcm.lcm(&(q as i128));
        if lcm > 1_000_000_000_000 {
            return None;
        }
    }
    let g = fracs.iter().fold(0i128, |g, &(p, q)| g.gcd(&(p as i128 * (lcm / q as i128))));
    if g == 0 {
        return None;
    }
    Some(g as f64 / lcm as f64)
}

impl EnvironmentModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn alphabet(&self) -> &[StepLaw] {
        &self.alphabet
    }

    /// Annealed variance `σ² = E X₁²` under the stationary letter law.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    pub fn lattice_unit(&self) -> Option<f64> {
        self.lattice.as_ref().map(|l| l.unit)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn assumptions(&self) -> AssumptionReport {
        validate_assumptions(&self.spec)
    }

    /// Seeded realization of the environment.
    pub fn realize(self: &Arc<Self>, seed: u64) -> Environment {
        realize(self.clone(), seed)
    }

    fn next_letter(&self, prev: Option<usize>, rng: &mut ChaCha8Rng, index: usize) -> usize {
        let pick = |cum: &[f64], u: f64| {
            let target = u * cum[cum.len() - 1];
            cum.partition_point(|&c| c <= target).min(cum.len() - 1)
        };
        match &self.mixing {
            Mixing::Iid { cumulative } => pick(cumulative, rng.random()),
            Mixing::Markov { rows, initial } => match prev {
                None => pick(initial, rng.random()),
                Some(p) => pick(&rows[p], rng.random()),
            },
            Mixing::Periodic { order } => order[index % order.len()],
        }
    }
}

/// Per-condition check of the standing assumptions on a model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub letters: Vec<LetterReport>,
    /// Every law sums to 1.
    pub normalized: bool,
    /// Every law has mean 0 within tolerance.
    pub centered: bool,
    /// Every law puts mass on a positive value.
    pub positive_atoms: bool,
    /// Mixing weights are stochastic.
    pub stochastic: bool,
    /// The letter process is ergodic (irreducible for markov kind).
    pub ergodic: bool,
    /// Finite support makes every moment finite.
    pub finite_moments: bool,
    /// Moment exponent excess reported for `E|X₁|^{2+ε}`.
    pub epsilon: f64,
    pub sigma2: Option<f64>,
    pub annealed_moment_2_plus_eps: Option<f64>,
    pub lattice_unit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterReport {
    pub total: f64,
    pub mean: f64,
    pub second_moment: f64,
    pub third_abs_moment: f64,
    pub has_positive_atom: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.normalized && self.centered && self.positive_atoms && self.stochastic && self.ergodic && self.finite_moments
    }
}

/// Checks the standing assumptions without rejecting the description.
pub fn validate_assumptions(spec: &ModelSpec) -> AssumptionReport {
    let epsilon = 1.0;
    let laws: Vec<Option<StepLaw>> =
        spec.alphabet.iter().map(|l| StepLaw::from_atoms(&l.values, &l.probs).ok()).collect();
    let letters: Vec<LetterReport> = laws
        .iter()
        .map(|l| match l {
            Some(l) => LetterReport {
                total: l.total(),
                mean: l.mean(),
                second_moment: l.second_moment(),
                third_abs_moment: l.abs_moment(2.0 + epsilon),
                has_positive_atom: l.has_positive_atom(),
            },
            None => LetterReport {
                total: f64::NAN,
                mean: f64::NAN,
                second_moment: f64::NAN,
                third_abs_moment: f64::NAN,
                has_positive_atom: false,
            },
        })
        .collect();
    let well_formed = !spec.alphabet.is_empty() && laws.iter().all(Option::is_some);
    let normalized = well_formed && letters.iter().all(|l| (l.total - 1.0).abs() <= LAW_TOL);
    let centered = well_formed && letters.iter().all(|l| l.mean.abs() <= LAW_TOL);
    let positive_atoms = well_formed && letters.iter().all(|l| l.has_positive_atom);
    let k = spec.alphabet.len();

    let (stochastic, ergodic, weights) = match spec.kind {
        ModelKind::IidAlphabet => match &spec.weights {
            Some(w) => {
                let ok = check_distribution(w, k, "weights").is_ok();
                (ok, ok, ok.then(|| w.clone()))
            }
            None => (false, false, None),
        },
        ModelKind::MarkovAlphabet => match &spec.matrix {
            Some(m) => {
                let ok = m.len() == k
                    && m.iter().enumerate().all(|(i, r)| check_distribution(r, k, &format!("matrix[{i}]")).is_ok());
                let erg = ok && k > 0 && irreducible(m);
                (ok, erg, erg.then(|| stationary_distribution(m)))
            }
            None => (false, false, None),
        },
        ModelKind::Periodic => {
            let order = spec.order.clone().unwrap_or_else(|| (0..k).collect());
            let ok = !order.is_empty() && order.iter().all(|&i| i < k);
            let w = ok.then(|| {
                let mut f = vec![0.0; k];
                for &i in &order {
                    f[i] += 1.0 / order.len() as f64;
                }
                f
            });
            (ok, ok, w)
        }
    };
    let (sigma2, annealed) = match (&weights, well_formed) {
        (Some(w), true) => (
            Some(w.iter().zip(&letters).map(|(p, l)| p * l.second_moment).sum()),
            Some(w.iter().zip(&letters).map(|(p, l)| p * l.third_abs_moment).sum()),
        ),
        _ => (None, None),
    };
    let lattice_unit = if well_formed {
        let laws: Vec<StepLaw> = laws.into_iter().flatten().collect();
        detect_lattice(&laws, spec.lattice_unit).ok().flatten().map(|l| l.unit)
    } else {
        None
    };
    AssumptionReport {
        letters,
        normalized,
        centered,
        positive_atoms,
        stochastic,
        ergodic,
        finite_moments: well_formed,
        epsilon,
        sigma2,
        annealed_moment_2_plus_eps: annealed,
        lattice_unit,
    }
}

#[derive(Debug)]
struct Realized {
    letters: Vec<u32>,
    rng: ChaCha8Rng,
}

/// A seeded realization `θ^offset ξ` of an environment model.
///
/// Letters are generated lazily in index order from a single stream, so the
/// realization is a pure function of `(model, seed)` no matter which thread
/// extends it first. Shifts share the realization.
#[derive(Debug, Clone)]
pub struct Environment {
    model: Arc<EnvironmentModel>,
    seed: u64,
    offset: usize,
    realized: Arc<RwLock<Realized>>,
}

pub fn realize(model: Arc<EnvironmentModel>, seed: u64) -> Environment {
    let rng = StreamKey::derive(seed, "environment", &[]).rng(0);
    Environment {
        model,
        seed,
        offset: 0,
        realized: Arc::new(RwLock::new(Realized { letters: Vec::new(), rng })),
    }
}

impl Environment {
    pub fn model(&self) -> &EnvironmentModel {
        &self.model
    }

    pub fn model_arc(&self) -> &Arc<EnvironmentModel> {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// `θⁿ` applied to this environment.
    pub fn shift(&self, n: usize) -> Environment {
        Environment { offset: self.offset + n, ..self.clone() }
    }

    fn ensure(&self, len: usize) {
        if self.realized.read().expect("realization lock").letters.len() >= len {
            return;
        }
        let mut r = self.realized.write().expect("realization lock");
        let target = len.max(2 * r.letters.len()).max(64);
        while r.letters.len() < target {
            let index = r.letters.len();
            let prev = r.letters.last().map(|&l| l as usize);
            let Realized { letters, rng } = &mut *r;
            let next = self.model.next_letter(prev, rng, index);
            letters.push(next as u32);
        }
    }

    /// Alphabet index of letter `n ≥ 1` of this (shifted) environment.
    pub fn letter(&self, n: usize) -> usize {
        assert!(n >= 1, "environment letters are indexed from 1");
        let abs = self.offset + n;
        self.ensure(abs);
        self.realized.read().expect("realization lock").letters[abs - 1] as usize
    }

    /// Alphabet indices of letters `1..=n`.
    pub fn letters(&self, n: usize) -> Vec<usize> {
        self.ensure(self.offset + n);
        let r = self.realized.read().expect("realization lock");
        r.letters[self.offset..self.offset + n].iter().map(|&l| l as usize).collect()
    }

    /// Law of the increment `X_n`, `n ≥ 1`.
    pub fn step_law(&self, n: usize) -> &StepLaw {
        &self.model.alphabet[self.letter(n)]
    }

    /// Laws of `X_1..X_n`.
    pub fn step_laws(&self, n: usize) -> Vec<&StepLaw> {
        self.letters(n).into_iter().map(|i| &self.model.alphabet[i]).collect()
    }

    pub fn lattice(&self) -> Result<&Lattice> {
        self.model.lattice.as_ref().ok_or(Error::NoLattice)
    }

    /// Lattice laws of `X_1..X_n`.
    pub fn lattice_laws(&self, n: usize) -> Result<Vec<&LatticeLaw>> {
        let lattice = self.lattice()?;
        Ok(self.letters(n).into_iter().map(|i| &lattice.laws[i]).collect())
    }

    /// Converts an on-lattice position to lattice units.
    pub fn to_units(&self, y: f64) -> Result<i64> {
        let unit = self.lattice()?.unit;
        if !on_lattice(y, unit) {
            return Err(Error::LatticeMismatch { value: y, unit });
        }
        Ok((y / unit).round() as i64)
    }

    /// Span (in units) of the support of `S_n`: every reachable value lies in
    /// `c + span·ℤ` for a constant `c`.
    pub fn support_span(&self, n: usize) -> Result<i64> {
        let lattice = self.lattice()?;
        let mut seen = vec![false; lattice.laws.len()];
        for l in self.letters(n) {
            seen[l] = true;
        }
        let g = lattice
            .laws
            .iter()
            .zip(&seen)
            .filter(|(_, &s)| s)
            .fold(0i64, |g, (law, _)| g.gcd(&law.span()));
        Ok(g.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed_spec() -> ModelSpec {
        ModelSpec::iid(
            vec![
                LawSpec::new(&[-1.0, 1.0], &[0.5, 0.5]),
                LawSpec::new(&[-2.0, 1.0], &[1.0 / 3.0, 2.0 / 3.0]),
            ],
            vec![0.5, 0.5],
        )
    }

    /// Brute-force annealed moment: enumerate (letter, atom) pairs.
    fn annealed_moment(spec: &ModelSpec, w: &[f64], p: f64) -> f64 {
        let mut m = 0.0;
        for (law, wl) in spec.alphabet.iter().zip(w) {
            for (v, pr) in law.values.iter().zip(&law.probs) {
                m += wl * pr * v.abs().powf(p);
            }
        }
        m
    }

    #[test]
    fn srw_model() {
        let m = build_model(&ModelSpec::simple_symmetric()).unwrap();
        assert_eq!(m.sigma2(), 1.0);
        assert_eq!(m.lattice_unit(), Some(1.0));
        assert!(m.assumptions().passed());
    }

    #[test]
    fn mixed_model_moments() {
        let spec = mixed_spec();
        let m = build_model(&spec).unwrap();
        let oracle = annealed_moment(&spec, &[0.5, 0.5], 2.0);
        assert!((oracle - 1.5).abs() < 1e-15);
        assert!((m.sigma2() - 1.5).abs() < 1e-12);
        assert_eq!(m.lattice_unit(), Some(1.0));
        let rep = m.assumptions();
        let third = annealed_moment(&spec, &[0.5, 0.5], 3.0);
        assert!((third - (0.5 + 0.5 * (8.0 / 3.0 + 2.0 / 3.0))).abs() < 1e-12);
        assert!((rep.annealed_moment_2_plus_eps.unwrap() - third).abs() < 1e-12);
        assert!(rep.passed());
    }

    #[test]
    fn rejects_bad_models() {
        let drift = ModelSpec::iid(vec![LawSpec::new(&[-1.0, 1.0], &[0.4, 0.6])], vec![1.0]);
        assert!(matches!(build_model(&drift), Err(Error::NonCenteredLaw { index: 0, .. })));

        let near = ModelSpec::iid(vec![LawSpec::new(&[-1.0, 1.0 + 2e-7], &[0.5, 0.5])], vec![1.0]);
        match build_model(&near) {
            Err(Error::NonCenteredLaw { hint, .. }) => assert!(hint.contains("re-center")),
            other => panic!("unexpected {other:?}"),
        }

        let mut w = mixed_spec();
        w.weights = Some(vec![0.5, 0.4]);
        assert!(matches!(build_model(&w), Err(Error::NonStochastic { .. })));

        let empty = ModelSpec::iid(vec![], vec![]);
        assert_eq!(build_model(&empty), Err(Error::EmptyAlphabet));

        let reducible = ModelSpec::markov(
            mixed_spec().alphabet,
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
        );
        assert_eq!(build_model(&reducible), Err(Error::Reducible));

        let flat = ModelSpec::iid(vec![LawSpec::new(&[0.0], &[1.0])], vec![1.0]);
        assert_eq!(build_model(&flat), Err(Error::NoPositiveAtom { index: 0 }));
    }

    #[test]
    fn report_flags_missing_positive_atom() {
        let spec = ModelSpec::iid(vec![LawSpec::new(&[-1.0], &[1.0])], vec![1.0]);
        let rep = validate_assumptions(&spec);
        assert!(!rep.positive_atoms);
        assert!(!rep.centered);
        assert!(!rep.passed());
    }

    #[test]
    fn lattice_detection() {
        let half = ModelSpec::iid(vec![LawSpec::new(&[-0.5, 1.5], &[0.75, 0.25])], vec![1.0]);
        assert_eq!(build_model(&half).unwrap().lattice_unit(), Some(0.5));

        let irrational = ModelSpec::iid(
            vec![LawSpec::new(&[-std::f64::consts::SQRT_2, std::f64::consts::SQRT_2], &[0.5, 0.5])],
            vec![1.0],
        );
        assert_eq!(build_model(&irrational).unwrap().lattice_unit(), None);

        let mut wrong = ModelSpec::simple_symmetric();
        wrong.lattice_unit = Some(0.3);
        assert!(matches!(build_model(&wrong), Err(Error::LatticeMismatch { .. })));

        let mut coarse = ModelSpec::simple_symmetric();
        coarse.lattice_unit = Some(0.5);
        let m = build_model(&coarse).unwrap();
        assert_eq!(m.lattice().unwrap().laws[0].atoms()[1].step, 2);
    }

    #[test]
    fn markov_stationary() {
        let m = build_model(&ModelSpec::markov(
            mixed_spec().alphabet,
            vec![vec![0.9, 0.1], vec![0.3, 0.7]],
        ))
        .unwrap();
        let pi = m.stationary();
        assert!((pi[0] - 0.75).abs() < 1e-12 && (pi[1] - 0.25).abs() < 1e-12);
        assert!((m.sigma2() - (0.75 + 0.25 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn periodic_realization_and_shift() {
        let spec = ModelSpec::periodic(mixed_spec().alphabet, vec![0, 1]);
        let model = Arc::new(build_model(&spec).unwrap());
        let a = model.realize(1);
        let b = model.realize(99);
        assert_eq!(a.letters(6), vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(a.letters(50), b.letters(50));
        assert_eq!(a.shift(1).letter(1), 1);
        assert_eq!(a.shift(0).letters(10), a.letters(10));
    }

    #[test]
    fn shift_composes() {
        let model = Arc::new(build_model(&mixed_spec()).unwrap());
        let env = model.realize(42);
        assert_eq!(env.shift(2).shift(3).letter(1), env.letter(6));
        assert_eq!(env.shift(2).shift(3).letters(100), env.shift(5).letters(100));
        assert_eq!(env.step_laws(3).len(), 3);
    }

    #[test]
    fn realization_is_deterministic() {
        let model = Arc::new(build_model(&mixed_spec()).unwrap());
        let a = model.realize(42).letters(1_000_000);
        let b = model.realize(42);
        // extend in a different order
        let _ = b.letter(500_000);
        let _ = b.letter(17);
        assert_eq!(a, b.letters(1_000_000));
        assert_ne!(a, model.realize(43).letters(1_000_000));
    }

    #[test]
    fn iid_letter_frequency() {
        let model = Arc::new(build_model(&mixed_spec()).unwrap());
        let n = 100_000;
        let ones = model.realize(42).letters(n).iter().filter(|&&l| l == 1).count() as f64;
        let se = (0.25f64 / n as f64).sqrt();
        assert!((ones / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn markov_transition_frequencies() {
        let p = [[0.9, 0.1], [0.3, 0.7]];
        let model = Arc::new(
            build_model(&ModelSpec::markov(mixed_spec().alphabet, p.iter().map(|r| r.to_vec()).collect()))
                .unwrap(),
        );
        let letters = model.realize(5).letters(100_000);
        let mut counts = [[0usize; 2]; 2];
        for w in letters.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        for i in 0..2 {
            let from = (counts[i][0] + counts[i][1]) as f64;
            let freq = counts[i][1] as f64 / from;
            let se = (p[i][1] * (1.0 - p[i][1]) / from).sqrt();
            assert!((freq - p[i][1]).abs() < 3.0 * se, "row {i}: {freq}");
        }
    }

    #[test]
    fn step_laws_are_centered() {
        let model = Arc::new(build_model(&mixed_spec()).unwrap());
        let env = model.realize(3);
        for n in 1..=1000 {
            let law = env.step_law(n);
            assert!(law.mean().abs() < 1e-12);
            assert!((law.total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn support_span() {
        let srw = Arc::new(build_model(&ModelSpec::simple_symmetric()).unwrap());
        assert_eq!(srw.realize(0).support_span(10).unwrap(), 2);
        let mixed = Arc::new(build_model(&mixed_spec()).unwrap());
        assert_eq!(mixed.realize(0).support_span(100).unwrap(), 1);
    }

    #[test]
    fn quantile_sampling() {
        let law = StepLaw::new(&[1.0, -2.0], &[2.0 / 3.0, 1.0 / 3.0], 0).unwrap();
        assert_eq!(law.quantile(0.0), -2.0);
        assert_eq!(law.quantile(0.3), -2.0);
        assert_eq!(law.quantile(0.34), 1.0);
        assert_eq!(law.quantile(0.999), 1.0);
    }
}
