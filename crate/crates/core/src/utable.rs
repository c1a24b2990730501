//! Precomputed values of `U(θⁿξ, y)` for the h-transform sampler.
//!
//! Rows are built by one backward sweep from the terminal time
//! `T = N + horizon` with terminal values `V_T(z) = z`, so row `n` holds
//! `U_{T−n}(θⁿξ, z)`: every row uses at least `horizon` steps, and the
//! one-step harmonic identity holds exactly between consecutive rows.
//! Positions above the ceiling are treated as `U(z) = z`; the largest
//! deviation from that at the ceiling is reported as `ceiling_gap`.

use std::io::{BufRead, Write};

use crate::backward::Sweep;
use crate::environment::Environment;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "rwre-utable";

#[derive(Debug, Clone, PartialEq)]
pub struct UTable {
    pub model_hash: String,
    pub seed: u64,
    pub offset: usize,
    /// Last shift index `N`; rows cover `n = 0..=N`.
    pub shifts: usize,
    pub horizon: usize,
    pub unit: f64,
    /// Grid is `0..=ceiling` in lattice units.
    pub ceiling: i64,
    pub ceiling_gap: f64,
    rows: Vec<Vec<f64>>,
}

/// Ceiling (units) that a walk started at `y` (units) exceeds within
/// `shifts + horizon` steps with negligible probability.
pub fn default_ceiling(env: &Environment, y: i64, shifts: usize, horizon: usize) -> Result<i64> {
    let lattice = env.lattice()?;
    let spread = 10.0 * env.model().sigma() * ((shifts + horizon) as f64).sqrt() / lattice.unit;
    Ok(y + spread.ceil() as i64 + lattice.max_up)
}

/// Builds rows `n = 0..=shifts` on the grid `0..=ceiling` (units).
pub fn build_utable(env: &Environment, shifts: usize, ceiling: i64, horizon: usize) -> Result<UTable> {
    if ceiling < 1 {
        return Err(Error::InvalidArgument("ceiling must be at least one unit".into()));
    }
    let lattice = env.lattice()?;
    let (up, down, unit) = (lattice.max_up, lattice.max_down, lattice.unit);
    let total = shifts + horizon;
    let laws = env.lattice_laws(total)?;
    let terminal = |z: i64| z as f64;
    // Above (T − m)·down the walk cannot be killed before T, so V_m(z) = z
    // there; between the ceiling and that level z is an approximation.
    let width = |m: usize| {
        let free = (total - m) as i64 * down;
        if m <= shifts {
            ceiling
        } else {
            (ceiling + (m - shifts) as i64 * up).min(free)
        }
    };
    let beyond = |_: usize, z: i64, _: &[f64]| z as f64;
    let rows_units = Sweep { laws: &laws, terminal: &terminal, width: &width, beyond: &beyond }.run(shifts);
    let ceiling_gap = rows_units.iter().map(|r| (r[ceiling as usize] - ceiling as f64).abs()).fold(0.0, f64::max) * unit;
    let rows = rows_units.into_iter().map(|r| r.into_iter().map(|v| v * unit).collect()).collect();
    Ok(UTable {
        model_hash: env.model().hash().to_string(),
        seed: env.seed(),
        offset: env.offset(),
        shifts,
        horizon,
        unit,
        ceiling,
        ceiling_gap,
        rows,
    })
}

impl UTable {
    /// `U(θⁿξ, z)` for `z` in units.
    #[inline]
    pub fn value(&self, n: usize, z: i64) -> Result<f64> {
        if n > self.shifts || z < 0 || z > self.ceiling {
            return Err(Error::TableMiss { shift: n, position: z });
        }
        Ok(self.rows[n][z as usize])
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[n]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Linear interpolation in `y` (real units) along row `n`.
    pub fn interpolate(&self, n: usize, y: f64) -> Result<f64> {
        let u = y / self.unit;
        if n > self.shifts || u < 0.0 || u > self.ceiling as f64 {
            return Err(Error::TableMiss { shift: n, position: u.floor() as i64 });
        }
        let k = (u.floor() as i64).min(self.ceiling - 1).max(0);
        let frac = u - k as f64;
        let row = &self.rows[n];
        Ok(row[k as usize] + frac * (row[k as usize + 1] - row[k as usize]))
    }

    /// Checks that the table was built for this environment.
    pub fn check_env(&self, env: &Environment) -> Result<()> {
        if self.model_hash != env.model().hash() || self.seed != env.seed() || self.offset != env.offset() {
            return Err(Error::InvalidArgument(format!(
                "table built for model {} seed {} offset {}, environment is model {} seed {} offset {}",
                self.model_hash,
                self.seed,
                self.offset,
                env.model().hash(),
                env.seed(),
                env.offset()
            )));
        }
        Ok(())
    }

    /// Text layout: a `key value` header, then one line per shift `n`
    /// holding `U(θⁿξ, k·unit)` for `k = 0..=ceiling`.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC} {FORMAT_VERSION}")?;
        writeln!(w, "model_hash {}", self.model_hash)?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "offset {}", self.offset)?;
        writeln!(w, "shifts {}", self.shifts)?;
        writeln!(w, "horizon {}", self.horizon)?;
        writeln!(w, "unit {}", self.unit)?;
        writeln!(w, "ceiling {}", self.ceiling)?;
        writeln!(w, "ceiling_gap {}", self.ceiling_gap)?;
        writeln!(w, "rows")?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        writeln!(w, "end")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<UTable> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("unexpected end of file".into()))?
                .map_err(|e| Error::Format(e.to_string()))
        };
        let magic = next()?;
        if magic != format!("{MAGIC} {FORMAT_VERSION}") {
            return Err(Error::Format(format!("unsupported header {magic:?}")));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = next()?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(Error::Format(format!("expected `{key}`, found {line:?}"))),
            }
        };
        fn parse<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad value for `{key}`: {v:?}")))
        }
        let model_hash = field("model_hash")?;
        let seed = parse("seed", field("seed")?)?;
        let offset = parse("offset", field("offset")?)?;
        let shifts: usize = parse("shifts", field("shifts")?)?;
        let horizon = parse("horizon", field("horizon")?)?;
        let unit = parse("unit", field("unit")?)?;
        let ceiling: i64 = parse("ceiling", field("ceiling")?)?;
        let ceiling_gap = parse("ceiling_gap", field("ceiling_gap")?)?;
        if next()? != "rows" {
            return Err(Error::Format("expected `rows`".into()));
        }
        let mut rows = Vec::with_capacity(shifts + 1);
        for n in 0..=shifts {
            let row = next()?
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("bad entry {v:?} in row {n}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != ceiling as usize + 1 {
                return Err(Error::Format(format!("row {n} has {} entries, expected {}", row.len(), ceiling + 1)));
            }
            rows.push(row);
        }
        if next()? != "end" {
            return Err(Error::Format("expected `end`".into()));
        }
        Ok(UTable { model_hash, seed, offset, shifts, horizon, unit, ceiling, ceiling_gap, rows })
    }
}
