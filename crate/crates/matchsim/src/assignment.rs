//! Exact random-assignment matrices and the cumulative-probability
//! (surplus) function that every dominance notion is built on.
//!
//! All entries are exact rationals. Event times in the eating algorithm and
//! averages over priority orderings are rationals, so floating point would
//! misclassify dominance relations that hinge on exact ties; `i128`
//! numerators and denominators leave ample headroom at the supported
//! market sizes, and overflow checks are enabled in every build profile.

use std::fmt::Write as _;

use num_rational::Ratio;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::prefs::{AgentId, ObjectId, PrefOrder};

/// Exact probability / mass type used throughout the ordinal layer.
pub type Rational = Ratio<i128>;

/// Shorthand for an exact `p/q`.
pub fn ratio(p: i128, q: i128) -> Rational {
    Ratio::new(p, q)
}

/// An n-by-m matrix of exact probabilities, `rows[i][j]` being the
/// probability that agent `i` receives object `j`.
///
/// Feasibility (every column sums to exactly 1, every entry in `[0, 1]`) is
/// checked on construction; no operation can produce an infeasible value.
/// Row sums are deliberately *not* an invariant: they equal m/n only for
/// the two mechanisms' outputs and are asserted there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    n: usize,
    m: usize,
    entries: Vec<Rational>, // row-major, n*m
}

impl Assignment {
    pub fn new(rows: Vec<Vec<Rational>>) -> Result<Assignment> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Infeasible("no agent rows".into()));
        }
        let m = rows[0].len();
        let mut entries = Vec::with_capacity(n * m);
        for row in &rows {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        let a = Assignment { n, m, entries };
        a.check_feasible()?;
        Ok(a)
    }

    fn check_feasible(&self) -> Result<()> {
        let one = Rational::one();
        for &e in &self.entries {
            if e < Rational::zero() || e > one {
                return Err(Error::Infeasible(format!("entry {e} outside [0, 1]")));
            }
        }
        for j in 0..self.m {
            let col: Rational = (0..self.n).map(|i| self.entries[i * self.m + j]).sum();
            if col != one {
                return Err(Error::Infeasible(format!(
                    "column {} sums to {col}, not 1",
                    ObjectId(j)
                )));
            }
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.n
    }

    pub fn num_objects(&self) -> usize {
        self.m
    }

    /// Agent `i`'s probability row.
    pub fn row(&self, agent: AgentId) -> &[Rational] {
        &self.entries[agent.0 * self.m..(agent.0 + 1) * self.m]
    }

    pub fn entry(&self, agent: AgentId, object: ObjectId) -> Rational {
        self.entries[agent.0 * self.m + object.0]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Rational]> {
        self.entries.chunks_exact(self.m)
    }

    /// Serializes the matrix as a CSV block: a header row of object
    /// letters, then one row per agent with exact `p/q` entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("agent");
        for j in 0..self.m {
            let _ = write!(out, ",{}", ObjectId(j));
        }
        out.push('\n');
        for i in 0..self.n {
            let _ = write!(out, "{}", AgentId(i));
            for j in 0..self.m {
                let _ = write!(out, ",{}", self.entries[i * self.m + j]);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the `to_csv` block format (used by golden-test fixtures).
    pub fn from_csv(text: &str) -> Result<Assignment> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty assignment block".into()))?;
        let m = header.split(',').count().saturating_sub(1);
        if m == 0 {
            return Err(Error::Parse("assignment header has no objects".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != m + 1 {
                return Err(Error::DimensionMismatch {
                    expected: m + 1,
                    got: fields.len(),
                });
            }
            let row = fields[1..]
                .iter()
                .map(|f| parse_rational(f))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Assignment::new(rows)
    }
}

pub fn parse_rational(text: &str) -> Result<Rational> {
    let text = text.trim();
    let (p, q) = match text.split_once('/') {
        Some((p, q)) => (p, q),
        None => (text, "1"),
    };
    let p: i128 = p
        .parse()
        .map_err(|_| Error::Parse(format!("bad rational {text:?}")))?;
    let q: i128 = q
        .parse()
        .map_err(|_| Error::Parse(format!("bad rational {text:?}")))?;
    if q == 0 {
        return Err(Error::Parse(format!("zero denominator in {text:?}")));
    }
    Ok(Ratio::new(p, q))
}

/// `w(order, ell, row)`: the probability mass on objects at least as good
/// as `ell`, inclusive.
pub fn surplus(order: &PrefOrder, ell: ObjectId, row: &[Rational]) -> Result<Rational> {
    if row.len() != order.num_objects() {
        return Err(Error::DimensionMismatch {
            expected: order.num_objects(),
            got: row.len(),
        });
    }
    if ell.0 >= order.num_objects() {
        return Err(Error::UnknownIndex {
            kind: "object",
            index: ell.0,
            bound: order.num_objects(),
        });
    }
    let mut acc = Rational::zero();
    for &obj in order.ranking() {
        acc += row[obj.0];
        if obj == ell {
            break;
        }
    }
    Ok(acc)
}

/// Entry-wise exact equality; errors on dimension mismatch so that a
/// mismatched comparison can never silently read as "different".
pub fn assignments_equal(a: &Assignment, b: &Assignment) -> Result<bool> {
    if a.num_agents() != b.num_agents() {
        return Err(Error::DimensionMismatch {
            expected: a.num_agents(),
            got: b.num_agents(),
        });
    }
    if a.num_objects() != b.num_objects() {
        return Err(Error::DimensionMismatch {
            expected: a.num_objects(),
            got: b.num_objects(),
        });
    }
    Ok(a.entries == b.entries)
}
