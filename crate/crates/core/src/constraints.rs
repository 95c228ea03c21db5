//! Weakly-hard real-time window constraints on binary loss sequences.
//!
//! A loss sequence is a word over `{0, 1}` where `1` marks a successful
//! control attempt and `0` a lost one. A [`WhrtConstraint`] restricts every
//! window of `s` consecutive attempts. Finite words are checked with
//! finite-prefix semantics: only windows that lie fully inside the word are
//! inspected.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph;

/// Upper bound on word length for exhaustive enumeration.
pub const MAX_ENUMERATION_LENGTH: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("invalid constraint parameters r={r}, s={s}: need 1 <= r <= s")]
    InvalidParameters { r: usize, s: usize },
    #[error("cannot parse constraint `{0}`: expected anyhit(r,s), rowhit(r,s), anymiss(r,s) or rowmiss(r,s)")]
    Parse(String),
    #[error("enumeration length {0} exceeds the limit of {MAX_ENUMERATION_LENGTH}")]
    LengthTooLarge(usize),
    #[error("cannot parse loss sequence `{0}`: expected a non-empty string of 0 and 1")]
    SequenceParse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// At least `r` successes in every window.
    AnyHit,
    /// A run of at least `r` consecutive successes in every window.
    RowHit,
    /// At most `r` losses in every window.
    AnyMiss,
    /// No run of more than `r` consecutive losses in any window.
    RowMiss,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 4] = [
        ConstraintKind::AnyHit,
        ConstraintKind::RowHit,
        ConstraintKind::AnyMiss,
        ConstraintKind::RowMiss,
    ];

    fn keyword(self) -> &'static str {
        match self {
            ConstraintKind::AnyHit => "anyhit",
            ConstraintKind::RowHit => "rowhit",
            ConstraintKind::AnyMiss => "anymiss",
            ConstraintKind::RowMiss => "rowmiss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WhrtConstraint {
    kind: ConstraintKind,
    r: usize,
    s: usize,
}

impl WhrtConstraint {
    pub fn new(kind: ConstraintKind, r: usize, s: usize) -> Result<Self, ConstraintError> {
        if r == 0 || r > s {
            return Err(ConstraintError::InvalidParameters { r, s });
        }
        Ok(Self { kind, r, s })
    }

    pub fn any_hit(r: usize, s: usize) -> Result<Self, ConstraintError> {
        Self::new(ConstraintKind::AnyHit, r, s)
    }

    pub fn row_hit(r: usize, s: usize) -> Result<Self, ConstraintError> {
        Self::new(ConstraintKind::RowHit, r, s)
    }

    pub fn any_miss(r: usize, s: usize) -> Result<Self, ConstraintError> {
        Self::new(ConstraintKind::AnyMiss, r, s)
    }

    pub fn row_miss(r: usize, s: usize) -> Result<Self, ConstraintError> {
        Self::new(ConstraintKind::RowMiss, r, s)
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Window length.
    pub fn s(&self) -> usize {
        self.s
    }

    /// Checks a single window of exactly `s` attempts.
    pub fn window_ok(&self, window: &[bool]) -> bool {
        debug_assert_eq!(window.len(), self.s);
        match self.kind {
            ConstraintKind::AnyHit => window.iter().filter(|&&b| b).count() >= self.r,
            ConstraintKind::RowHit => longest_run(window, true) >= self.r,
            ConstraintKind::AnyMiss => window.iter().filter(|&&b| !b).count() <= self.r,
            ConstraintKind::RowMiss => longest_run(window, false) <= self.r,
        }
    }

    /// Start index of the first fully contained window that violates the
    /// constraint, if any.
    pub fn first_violation(&self, seq: &LossSequence) -> Option<usize> {
        let bits = seq.bits();
        if bits.len() < self.s {
            return None;
        }
        (0..=bits.len() - self.s).find(|&start| !self.window_ok(&bits[start..start + self.s]))
    }
}

impl fmt::Display for WhrtConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{})", self.kind.keyword(), self.r, self.s)
    }
}

impl FromStr for WhrtConstraint {
    type Err = ConstraintError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let compact: String = text
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        let parse_err = || ConstraintError::Parse(text.to_string());
        let open = compact.find('(').ok_or_else(parse_err)?;
        let body = compact[open + 1..].strip_suffix(')').ok_or_else(parse_err)?;
        let kind = ConstraintKind::ALL
            .into_iter()
            .find(|k| k.keyword() == &compact[..open])
            .ok_or_else(parse_err)?;
        let (r, s) = body.split_once(',').ok_or_else(parse_err)?;
        let r: usize = r.parse().map_err(|_| parse_err())?;
        let s: usize = s.parse().map_err(|_| parse_err())?;
        WhrtConstraint::new(kind, r, s)
    }
}

fn longest_run(window: &[bool], value: bool) -> usize {
    let mut best = 0;
    let mut current = 0;
    for &b in window {
        if b == value {
            current += 1;
            best = best.max(current);
        } else {
            current = 0;
        }
    }
    best
}

/// Binary loss sequence; index 0 is time `k = 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LossSequence(Vec<bool>);

impl LossSequence {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![true; len])
    }

    /// Repeats `pattern` until `len` attempts are covered.
    pub fn periodic(pattern: &LossSequence, len: usize) -> Self {
        assert!(!pattern.is_empty(), "periodic pattern must be non-empty");
        Self(pattern.0.iter().copied().cycle().take(len).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.0.iter().map(|&b| b as usize).collect()
    }
}

impl fmt::Display for LossSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for LossSequence {
    type Err = ConstraintError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(ConstraintError::SequenceParse(text.to_string()));
        }
        trimmed
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(ConstraintError::SequenceParse(text.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(LossSequence)
    }
}

/// True iff every window of length `s` fully contained in `seq` meets `c`.
pub fn satisfies(seq: &LossSequence, c: &WhrtConstraint) -> bool {
    c.first_violation(seq).is_none()
}

/// All words of the given length that satisfy `c`, in lexicographic order.
pub fn enumerate_admissible(
    c: &WhrtConstraint,
    length: usize,
    require_initial_success: bool,
) -> Result<BTreeSet<LossSequence>, ConstraintError> {
    if length > MAX_ENUMERATION_LENGTH {
        return Err(ConstraintError::LengthTooLarge(length));
    }
    let mut out = BTreeSet::new();
    for code in 0u32..(1u32 << length) {
        let bits: Vec<bool> = (0..length).map(|i| code >> (length - 1 - i) & 1 == 1).collect();
        if require_initial_success && length > 0 && !bits[0] {
            continue;
        }
        let seq = LossSequence(bits);
        if satisfies(&seq, c) {
            out.insert(seq);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hardness {
    Harder,
    NotHarder,
}

/// Decides whether every sequence admissible for `c2` is admissible for `c1`
/// by language inclusion of the constraint automata.
pub fn is_harder(c2: &WhrtConstraint, c1: &WhrtConstraint) -> Hardness {
    let g2 = graph::build_automaton(c2).expect("constraints with 1 <= r <= s are feasible");
    let g1 = graph::build_automaton(c1).expect("constraints with 1 <= r <= s are feasible");
    if graph::language_included(&g2, &g1) {
        Hardness::Harder
    } else {
        Hardness::NotHarder
    }
}

/// Bounded cross-check of [`is_harder`]: compares the generated word sets of
/// both constraint graphs for every length up to `horizon`.
pub fn is_harder_bounded(
    c2: &WhrtConstraint,
    c1: &WhrtConstraint,
    horizon: usize,
) -> Result<Hardness, ConstraintError> {
    if horizon > MAX_ENUMERATION_LENGTH {
        return Err(ConstraintError::LengthTooLarge(horizon));
    }
    let g2 = graph::build_graph(c2).expect("feasible");
    let g1 = graph::build_graph(c1).expect("feasible");
    for len in 1..=horizon {
        let words2 = graph::generated_words(&g2, len);
        let words1 = graph::generated_words(&g1, len);
        if !words2.is_subset(&words1) {
            return Ok(Hardness::NotHarder);
        }
    }
    Ok(Hardness::Harder)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> LossSequence {
        s.parse().unwrap()
    }

    #[test]
    fn figure_two_sequence_meets_any_two_in_four() {
        assert!(satisfies(&seq("1001110"), &WhrtConstraint::any_hit(2, 4).unwrap()));
    }

    #[test]
    fn all_ones_satisfy_everything() {
        for kind in ConstraintKind::ALL {
            for s in 1..=5 {
                for r in 1..=s {
                    let c = WhrtConstraint::new(kind, r, s).unwrap();
                    assert!(satisfies(&LossSequence::ones(9), &c), "{c}");
                }
            }
        }
    }

    #[test]
    fn row_hit_window_scan() {
        // windows: 1011 (run 2), 0110 (run 2), 1101 (run 2)
        let c = WhrtConstraint::row_hit(2, 4).unwrap();
        assert!(satisfies(&seq("101101"), &c));
        // 1010 has no run of two
        assert!(!satisfies(&seq("101011"), &c));
        assert_eq!(c.first_violation(&seq("101011")), Some(0));
    }

    #[test]
    fn short_words_have_no_full_window() {
        let c = WhrtConstraint::any_hit(4, 4).unwrap();
        assert!(satisfies(&seq("000"), &c));
    }

    #[test]
    fn first_violation_reports_window_start() {
        let c = WhrtConstraint::any_hit(2, 4).unwrap();
        assert_eq!(c.first_violation(&seq("1000")), Some(0));
        assert_eq!(c.first_violation(&seq("1101000")), Some(2));
    }

    #[test]
    fn row_miss_forbids_longer_runs_only() {
        let c = WhrtConstraint::row_miss(2, 5).unwrap();
        assert!(satisfies(&seq("1001001"), &c));
        assert!(!satisfies(&seq("1000111"), &c));
    }

    #[test]
    fn parse_is_case_and_space_insensitive() {
        let c: WhrtConstraint = " AnyHit( 4 , 10 ) ".parse().unwrap();
        assert_eq!(c, WhrtConstraint::any_hit(4, 10).unwrap());
        assert_eq!(c.to_string(), "anyhit(4,10)");
        assert!("rowMISS(1,3)".parse::<WhrtConstraint>().is_ok());
        assert!("anyhit(3,2)".parse::<WhrtConstraint>().is_err());
        assert!("anyhit(0,2)".parse::<WhrtConstraint>().is_err());
        assert!("somehit(1,2)".parse::<WhrtConstraint>().is_err());
        assert!("anyhit(1,2".parse::<WhrtConstraint>().is_err());
        assert!("anyhit(1;2)".parse::<WhrtConstraint>().is_err());
    }

    #[test]
    fn sequence_parse() {
        assert_eq!(seq("101").bits(), &[true, false, true]);
        assert!("12x".parse::<LossSequence>().is_err());
        assert!("".parse::<LossSequence>().is_err());
    }

    #[test]
    fn enumerate_examples() {
        let c = WhrtConstraint::any_hit(1, 1).unwrap();
        let words = enumerate_admissible(&c, 3, true).unwrap();
        assert_eq!(words.into_iter().collect::<Vec<_>>(), vec![seq("111")]);

        // 1 x y with >= 2 ones in the single 3-window
        let c = WhrtConstraint::any_hit(2, 3).unwrap();
        let words: Vec<String> = enumerate_admissible(&c, 3, true)
            .unwrap()
            .iter()
            .map(|w| w.to_string())
            .collect();
        assert_eq!(words, vec!["101", "110", "111"]);

        let c = WhrtConstraint::any_miss(4, 4).unwrap();
        assert_eq!(enumerate_admissible(&c, 4, false).unwrap().len(), 16);

        assert_eq!(
            enumerate_admissible(&c, 25, false),
            Err(ConstraintError::LengthTooLarge(25))
        );
    }

    #[test]
    fn hardness_examples() {
        let a34 = WhrtConstraint::any_hit(3, 4).unwrap();
        let a24 = WhrtConstraint::any_hit(2, 4).unwrap();
        let r24 = WhrtConstraint::row_hit(2, 4).unwrap();
        assert_eq!(is_harder(&a34, &a24), Hardness::Harder);
        assert_eq!(is_harder(&a24, &a24), Hardness::Harder);
        assert_eq!(is_harder(&a24, &a34), Hardness::NotHarder);
        // a run of two ones contains two ones
        assert_eq!(is_harder(&r24, &a24), Hardness::Harder);
        assert_eq!(is_harder(&a24, &r24), is_harder_bounded(&a24, &r24, 12).unwrap());
    }
}
