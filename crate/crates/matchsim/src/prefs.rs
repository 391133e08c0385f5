//! Strict ordinal preferences: single orders, full profiles, textual I/O,
//! and exhaustive enumeration of the profile space.
//!
//! Objects and agents are identified by dense indices. Textual I/O maps
//! object indices to the letters `a..z`, which caps the *textual* interface
//! at 26 objects; the programmatic API has no such limit.

use std::fmt;

use crate::error::{Error, Result};

/// Index of an object in the market, in `[0, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub usize);

/// Index of an agent, in `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(pub usize);

impl ObjectId {
    pub fn index(self) -> usize {
        self.0
    }

    /// Letter used in textual formats ('a' for index 0), if within `a..z`.
    pub fn letter(self) -> Option<char> {
        if self.0 < 26 {
            Some((b'a' + self.0 as u8) as char)
        } else {
            None
        }
    }

    pub fn from_letter(c: char) -> Option<ObjectId> {
        if c.is_ascii_lowercase() {
            Some(ObjectId(c as usize - 'a' as usize))
        } else {
            None
        }
    }
}

impl AgentId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.letter() {
            Some(c) => write!(f, "{c}"),
            None => write!(f, "#{}", self.0),
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0 + 1)
    }
}

/// One agent's strict, complete ranking of all `m` objects.
///
/// The ranking lists objects best first. Positions are 1-based wherever a
/// rank is exposed, so the top choice has rank 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrefOrder {
    ranking: Vec<ObjectId>,
    // positions[j] = 0-based position of object j in `ranking`
    positions: Vec<usize>,
}

impl PrefOrder {
    /// Builds an order from a best-first object list, validating that it is
    /// a permutation of `0..m`.
    pub fn new(ranking: Vec<ObjectId>) -> Result<PrefOrder> {
        let m = ranking.len();
        if m == 0 {
            return Err(Error::Parse("empty preference order".into()));
        }
        let mut positions = vec![usize::MAX; m];
        for (pos, obj) in ranking.iter().enumerate() {
            if obj.0 >= m {
                return Err(Error::UnknownIndex {
                    kind: "object",
                    index: obj.0,
                    bound: m,
                });
            }
            if positions[obj.0] != usize::MAX {
                return Err(Error::Parse(format!(
                    "duplicate object '{}' in preference order",
                    ObjectId(obj.0)
                )));
            }
            positions[obj.0] = pos;
        }
        Ok(PrefOrder { ranking, positions })
    }

    /// The identity order `(ab...)`: object 0 first.
    pub fn canonical(m: usize) -> PrefOrder {
        PrefOrder::new((0..m).map(ObjectId).collect()).expect("identity is a permutation")
    }

    pub fn num_objects(&self) -> usize {
        self.ranking.len()
    }

    /// Objects best first.
    pub fn ranking(&self) -> &[ObjectId] {
        &self.ranking
    }

    /// 1-based rank of `j`: the top choice has rank 1.
    pub fn rank(&self, j: ObjectId) -> Result<usize> {
        match self.positions.get(j.0) {
            Some(&pos) => Ok(pos + 1),
            None => Err(Error::UnknownIndex {
                kind: "object",
                index: j.0,
                bound: self.ranking.len(),
            }),
        }
    }

    /// True iff this order prefers `a` at least as much as `b`.
    pub fn weakly_prefers(&self, a: ObjectId, b: ObjectId) -> bool {
        self.positions[a.0] <= self.positions[b.0]
    }

    /// Parses a parenthesized letter sequence such as `(acb)`.
    ///
    /// The text must use each of the first `m` lowercase letters exactly
    /// once.
    pub fn parse(text: &str, m: usize) -> Result<PrefOrder> {
        let inner = text
            .trim()
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| Error::Parse(format!("expected parenthesized order, got {text:?}")))?;
        let mut seen = vec![false; m];
        let mut ranking = Vec::with_capacity(m);
        for c in inner.chars() {
            let obj = ObjectId::from_letter(c)
                .filter(|o| o.0 < m)
                .ok_or_else(|| Error::Parse(format!("unknown object letter '{c}'")))?;
            if seen[obj.0] {
                return Err(Error::Parse(format!("duplicate object letter '{c}'")));
            }
            seen[obj.0] = true;
            ranking.push(obj);
        }
        if ranking.len() != m {
            let missing = ObjectId(seen.iter().position(|&s| !s).unwrap_or(0));
            return Err(Error::Parse(format!(
                "missing object letter '{missing}' (expected {m} objects)"
            )));
        }
        PrefOrder::new(ranking)
    }
}

impl fmt::Display for PrefOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for obj in &self.ranking {
            write!(f, "{obj}")?;
        }
        write!(f, ")")
    }
}

/// The `n`-tuple of orders submitted to a mechanism, all over the same
/// object set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Profile {
    orders: Vec<PrefOrder>,
}

impl Profile {
    pub fn new(orders: Vec<PrefOrder>) -> Result<Profile> {
        if orders.is_empty() {
            return Err(Error::Parse("empty profile".into()));
        }
        let m = orders[0].num_objects();
        for o in &orders {
            if o.num_objects() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: o.num_objects(),
                });
            }
        }
        Ok(Profile { orders })
    }

    pub fn num_agents(&self) -> usize {
        self.orders.len()
    }

    pub fn num_objects(&self) -> usize {
        self.orders[0].num_objects()
    }

    pub fn order(&self, agent: AgentId) -> &PrefOrder {
        &self.orders[agent.0]
    }

    pub fn orders(&self) -> &[PrefOrder] {
        &self.orders
    }

    /// A copy of the profile with `agent`'s order replaced, i.e. the
    /// profile `(misreport, rest unchanged)`.
    pub fn with_order(&self, agent: AgentId, order: PrefOrder) -> Profile {
        let mut orders = self.orders.clone();
        orders[agent.0] = order;
        Profile { orders }
    }

    /// In-place order swap for misreport enumeration loops; returns the
    /// displaced order so callers can restore it.
    pub(crate) fn swap_order(&mut self, agent: AgentId, order: PrefOrder) -> PrefOrder {
        std::mem::replace(&mut self.orders[agent.0], order)
    }

    /// Parses the semicolon-separated textual profile format, e.g.
    /// `"(acb);(abc);(bac)"`. The object count is inferred from the first
    /// order.
    pub fn parse(text: &str) -> Result<Profile> {
        let parts: Vec<&str> = text.split(';').map(str::trim).collect();
        if parts.is_empty() || parts[0].is_empty() {
            return Err(Error::Parse("empty profile".into()));
        }
        let m = parts[0].chars().filter(|c| c.is_ascii_lowercase()).count();
        if m == 0 {
            return Err(Error::Parse(format!("no objects in order {:?}", parts[0])));
        }
        let orders = parts
            .iter()
            .map(|p| PrefOrder::parse(p, m))
            .collect::<Result<Vec<_>>>()?;
        Profile::new(orders)
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, o) in self.orders.iter().enumerate() {
            if i > 0 {
                write!(f, ";")?;
            }
            write!(f, "{o}")?;
        }
        Ok(())
    }
}

/// m! as a u128, or a capacity error for m where it overflows.
pub fn factorial(m: usize) -> Result<u128> {
    let mut f: u128 = 1;
    for k in 2..=m as u128 {
        f = f
            .checked_mul(k)
            .ok_or_else(|| Error::Capacity(format!("{m}! overflows the count type")))?;
    }
    Ok(f)
}

/// Number of profiles (m!)^n, or a capacity error when it overflows u128.
pub fn profile_count(n: usize, m: usize) -> Result<u128> {
    let fact = factorial(m)?;
    let mut count: u128 = 1;
    for _ in 0..n {
        count = count.checked_mul(fact).ok_or_else(|| {
            Error::Capacity(format!("({m}!)^{n} overflows the count type"))
        })?;
    }
    Ok(count)
}

/// Lexicographically `rank`-th permutation of `0..m` (Lehmer-code
/// unranking). `rank` must be below m!.
fn nth_permutation(m: usize, mut rank: u128) -> Vec<ObjectId> {
    let mut remaining: Vec<ObjectId> = (0..m).map(ObjectId).collect();
    let mut out = Vec::with_capacity(m);
    // factorials of m-1, m-2, ..., 0
    for k in (0..m).rev() {
        let f = factorial(k).expect("factorial fits: bounded by caller");
        let digit = (rank / f) as usize;
        rank %= f;
        out.push(remaining.remove(digit));
    }
    out
}

/// All m! orders over `m` objects in lexicographic order.
pub fn all_orders(m: usize) -> Result<Vec<PrefOrder>> {
    let count = factorial(m)?;
    if count > (1 << 26) {
        return Err(Error::Capacity(format!(
            "refusing to materialize {count} orders for m={m}"
        )));
    }
    Ok((0..count)
        .map(|r| {
            PrefOrder::new(nth_permutation(m, r)).expect("unranked permutation is valid")
        })
        .collect())
}

/// The profile at `index` in the deterministic enumeration order: the index
/// is read as `n` base-(m!) digits, agent 0 most significant (slowest), and
/// each digit is unranked to the lexicographically corresponding
/// permutation.
pub fn profile_at(n: usize, m: usize, index: u128) -> Result<Profile> {
    let fact = factorial(m)?;
    let count = profile_count(n, m)?;
    if index >= count {
        return Err(Error::Capacity(format!(
            "profile index {index} out of range for ({m}!)^{n} = {count}"
        )));
    }
    let mut digits = vec![0u128; n];
    let mut rest = index;
    for d in digits.iter_mut().rev() {
        *d = rest % fact;
        rest /= fact;
    }
    let orders = digits
        .into_iter()
        .map(|d| PrefOrder::new(nth_permutation(m, d)).expect("valid permutation"))
        .collect();
    Profile::new(orders)
}

/// Streams every profile exactly once in the `profile_at` order.
///
/// Fails up front if (m!)^n overflows the count type. Callers that want to
/// split the space across workers can use [`profile_at`] with disjoint
/// index ranges instead; the two agree index-for-index.
pub fn enumerate_profiles(n: usize, m: usize) -> Result<ProfileIter> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidConfig(
            "profile enumeration needs n >= 1 and m >= 1".into(),
        ));
    }
    let count = profile_count(n, m)?;
    Ok(ProfileIter {
        n,
        m,
        next: 0,
        count,
    })
}

pub struct ProfileIter {
    n: usize,
    m: usize,
    next: u128,
    count: u128,
}

impl ProfileIter {
    pub fn count_total(&self) -> u128 {
        self.count
    }
}

impl Iterator for ProfileIter {
    type Item = Profile;

    fn next(&mut self) -> Option<Profile> {
        if self.next >= self.count {
            return None;
        }
        let p = profile_at(self.n, self.m, self.next).expect("index in range");
        self.next += 1;
        Some(p)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        let as_usize = usize::try_from(left).ok();
        (as_usize.unwrap_or(usize::MAX), as_usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn order(text: &str, m: usize) -> PrefOrder {
        PrefOrder::parse(text, m).unwrap()
    }

    #[test]
    fn rank_is_one_based() {
        let o = order("(abc)", 3);
        assert_eq!(o.rank(ObjectId(0)).unwrap(), 1);
        assert_eq!(o.rank(ObjectId(2)).unwrap(), 3);
    }

    #[test]
    fn rank_single_object() {
        let o = order("(a)", 1);
        assert_eq!(o.rank(ObjectId(0)).unwrap(), 1);
    }

    #[test]
    fn rank_unknown_object_errors() {
        let o = order("(abc)", 3);
        assert!(o.rank(ObjectId(3)).is_err());
    }

    #[test]
    fn parse_matches_listed_order() {
        let o = order("(acb)", 3);
        assert_eq!(
            o.ranking(),
            &[ObjectId(0), ObjectId(2), ObjectId(1)]
        );
    }

    #[test]
    fn parse_rejects_duplicates_missing_and_unknown() {
        let dup = PrefOrder::parse("(aba)", 3).unwrap_err();
        assert!(dup.to_string().contains("duplicate"), "{dup}");
        assert!(dup.to_string().contains('a'), "{dup}");

        let missing = PrefOrder::parse("(ab)", 3).unwrap_err();
        assert!(missing.to_string().contains("missing"), "{missing}");

        let unknown = PrefOrder::parse("(abd)", 3).unwrap_err();
        assert!(unknown.to_string().contains('d'), "{unknown}");
    }

    #[test]
    fn profile_parse_and_display_round_trip() {
        let text = "(acb);(abc);(bac)";
        let p = Profile::parse(text).unwrap();
        assert_eq!(p.num_agents(), 3);
        assert_eq!(p.to_string(), text);
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_profiles(1, 2).unwrap().count(), 2);
        assert_eq!(enumerate_profiles(3, 3).unwrap().count(), 216);
        assert_eq!(enumerate_profiles(2, 3).unwrap().count(), 36);
    }

    #[test]
    fn enumeration_is_distinct_and_agent0_slowest() {
        let profiles: Vec<Profile> = enumerate_profiles(2, 3).unwrap().collect();
        let set: HashSet<String> = profiles.iter().map(|p| p.to_string()).collect();
        assert_eq!(set.len(), 36);
        // agent 0 stays on its first order for the first 3! profiles
        for p in &profiles[..6] {
            assert_eq!(p.order(AgentId(0)).to_string(), "(abc)");
        }
        assert_eq!(profiles[6].order(AgentId(0)).to_string(), "(acb)");
    }

    #[test]
    fn profile_at_agrees_with_iterator() {
        for (i, p) in enumerate_profiles(2, 3).unwrap().enumerate() {
            assert_eq!(profile_at(2, 3, i as u128).unwrap(), p);
        }
    }

    #[test]
    fn count_overflow_is_an_error() {
        // (26!)^26 blows through u128
        assert!(matches!(
            enumerate_profiles(26, 26),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn factorials() {
        assert_eq!(factorial(0).unwrap(), 1);
        assert_eq!(factorial(5).unwrap(), 120);
        assert!(factorial(40).is_err());
    }
}
