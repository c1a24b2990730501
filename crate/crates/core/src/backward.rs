//! Backward recursion for finite-horizon functionals of the killed walk.
//!
//! Row `m` of a table holds `V_m(z)` for `z = 0..=width(m)` (units), where
//!
//! ```text
//! V_T(z) = terminal(z)
//! V_m(z) = Σ_s P(X_{m+1} = s) · V_{m+1}(z + s) · 1{z + s > 0}
//! ```
//!
//! With `terminal(z) = z` this is `V_m(z) = U_{T-m}(θ^m ξ, z)`; with
//! `terminal(z) = 1` it is the survival probability `P_{θ^m ξ}(τ_z > T - m)`.

use crate::environment::LatticeLaw;
use crate::scalar::Scalar;

pub(crate) struct Sweep<'a, T> {
    /// Laws of steps `1..=T`.
    pub laws: &'a [&'a LatticeLaw],
    pub terminal: &'a dyn Fn(i64) -> T,
    /// Largest stored position of row `m`.
    pub width: &'a dyn Fn(usize) -> i64,
    /// Value of row `m` above its width.
    pub beyond: &'a dyn Fn(usize, i64, &[T]) -> T,
}

impl<T: Scalar> Sweep<'_, T> {
    /// Runs the recursion from `T` down to 0 and returns rows `0..=keep`.
    pub fn run(&self, keep: usize) -> Vec<Vec<T>> {
        let horizon = self.laws.len();
        let keep = keep.min(horizon);
        let mut kept: Vec<Vec<T>> = Vec::with_capacity(keep + 1);
        let mut next: Vec<T> = (0..=(self.width)(horizon).max(0)).map(|z| (self.terminal)(z)).collect();
        if horizon <= keep {
            kept.push(next.clone());
        }
        for m in (0..horizon).rev() {
            let law = self.laws[m];
            let probs: Vec<(i64, T)> = law.atoms().iter().map(|a| (a.step, T::from_atom(a))).collect();
            let width = (self.width)(m).max(0);
            let row_above = &next;
            let last = row_above.len() as i64 - 1;
            let row: Vec<T> = (0..=width)
                .map(|z| {
                    let mut acc = T::zero();
                    for (s, p) in &probs {
                        let t = z + s;
                        if t <= 0 {
                            continue;
                        }
                        let v = if t <= last { row_above[t as usize].clone() } else { (self.beyond)(m + 1, t, row_above) };
                        acc += p.clone() * v;
                    }
                    acc
                })
                .collect();
            next = row;
            if m <= keep {
                kept.push(next.clone());
            }
        }
        kept.reverse();
        kept
    }
}
