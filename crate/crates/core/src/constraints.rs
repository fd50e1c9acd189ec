//! Kinetic constraint families, per-bond exchange rates and exact
//! Bernoulli-product expectations.
//!
//! Every built-in constraint is a weighted sum, over window offsets `j`, of
//! functions of the particle count in the box `[[-j, -j + L + 1]] \ {0, 1}`
//! relative to the bond `{x, x+1}`. The node sites never enter a count, so
//! constraints are independent of the bond occupations by construction.

use std::fmt;
use std::str::FromStr;

use crate::lattice::{Configuration, Window};
use crate::{Error, Result};

/// Generalized binomial coefficient `m (m-1) ... (m-k+1) / k!`.
///
/// Exactly zero when `m` is a nonnegative integer smaller than `k` (one of
/// the factors vanishes exactly, also in floating point).
pub fn gen_binom(m: f64, k: u32) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out *= (m - i as f64) / (i as f64 + 1.0);
    }
    out
}

/// Precomputed `binom(m, k)` for `k = 0..=cutoff`, built by the recurrence
/// `binom(m,k) = binom(m,k-1) (m-k+1)/k`.
#[derive(Clone, Debug)]
pub struct BinomialTable {
    m: f64,
    coefficients: Vec<f64>,
}

impl BinomialTable {
    pub fn new(m: f64, cutoff: u32) -> Self {
        let mut coefficients = Vec::with_capacity(cutoff as usize + 1);
        coefficients.push(1.0);
        for k in 1..=cutoff {
            let prev = coefficients[k as usize - 1];
            coefficients.push(prev * (m - k as f64 + 1.0) / k as f64);
        }
        Self { m, coefficients }
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn cutoff(&self) -> u32 {
        self.coefficients.len() as u32 - 1
    }

    pub fn coeff(&self, k: u32) -> f64 {
        self.coefficients[k as usize]
    }

    /// `sum_{k=from..=cutoff} |binom(m, k)|`.
    pub fn abs_sum_from(&self, from: u32) -> f64 {
        self.coefficients[from as usize..]
            .iter()
            .map(|c| c.abs())
            .sum()
    }

    /// `delta = 1 - sum_{k=1..=cutoff} |binom(m, k)|`; nonnegative for
    /// `m` in `[0, 1]`, which makes the interpolating constraint a convex
    /// mixture of elementary constraints.
    pub fn delta(&self) -> f64 {
        1.0 - self.abs_sum_from(1)
    }
}

/// Cutoff choice for the interpolating family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EllSpec {
    Fixed(u32),
    /// `ell_N = max(2, min(floor(sqrt(N)), N/2 - 2))`, resolved once the
    /// lattice size is known.
    SqrtN,
}

impl EllSpec {
    pub fn resolve(&self, n_sites: Option<usize>) -> Result<u32> {
        match self {
            EllSpec::Fixed(l) => Ok(*l),
            EllSpec::SqrtN => {
                let n = n_sites.ok_or_else(|| {
                    Error::Config("ell=sqrt needs a lattice size to resolve".into())
                })?;
                Ok(default_ell(n))
            }
        }
    }
}

/// Default interpolating cutoff for a given lattice size.
pub fn default_ell(n_sites: usize) -> u32 {
    let sqrt = (n_sites as f64).sqrt().floor() as u32;
    let cap = (n_sites / 2).saturating_sub(2) as u32;
    sqrt.min(cap).max(2)
}

/// A constraint family with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// Unconstrained symmetric exclusion, `c == 1`.
    Ssep,
    /// Porous-media constraint: full boxes of `n` particles next to the bond.
    Pmm { n: u32 },
    /// Windows of `big_l` sites holding exactly `n` particles.
    Bernstein { n: u32, big_l: u32 },
    /// Mixture interpolating Pmm(n) -> Pmm(n+1) as `m` goes 0 -> 1.
    Interpolating { n: u32, m: f64, ell: EllSpec },
    /// Nonnegative-weighted sum of other families.
    Superposition(Vec<(f64, Family)>),
    /// Hole-window series for diffusivity `rho^m`, `m` in (0, 2]. Convenience
    /// construction; windows count holes instead of particles.
    Monomial { m: f64, ell: u32 },
}

impl Family {
    /// Parameter-domain validation (lattice-independent part).
    pub fn validate(&self) -> Result<()> {
        match self {
            Family::Ssep => Ok(()),
            Family::Pmm { n } => {
                if *n < 1 {
                    return Err(Error::Config("pmm needs n >= 1".into()));
                }
                Ok(())
            }
            Family::Bernstein { n, big_l } => {
                if n > big_l {
                    return Err(Error::Config(format!(
                        "bernstein needs 0 <= n <= L, got n={n}, L={big_l}"
                    )));
                }
                Ok(())
            }
            Family::Interpolating { n, m, ell } => {
                if *n < 1 {
                    return Err(Error::Config("interpolating needs n >= 1".into()));
                }
                if !(0.0..=1.0).contains(m) {
                    return Err(Error::Config(format!(
                        "interpolating needs m in [0,1], got {m}"
                    )));
                }
                if let EllSpec::Fixed(l) = ell {
                    if *l < 2 {
                        return Err(Error::Config("interpolating needs ell >= 2".into()));
                    }
                }
                Ok(())
            }
            Family::Superposition(parts) => {
                if parts.is_empty() {
                    return Err(Error::Config("superposition needs at least one part".into()));
                }
                for (w, fam) in parts {
                    if !w.is_finite() || *w < 0.0 {
                        return Err(Error::Config(format!(
                            "superposition weights must be nonnegative, got {w}"
                        )));
                    }
                    fam.validate()?;
                }
                Ok(())
            }
            Family::Monomial { m, ell } => {
                if !(*m > 0.0 && *m <= 2.0) {
                    return Err(Error::Config(format!(
                        "monomial needs m in (0,2], got {m}"
                    )));
                }
                if !(2..=11).contains(ell) {
                    return Err(Error::Config(
                        "monomial convenience supports 2 <= ell <= 11".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Replace an unresolved `ell=sqrt` by its value for `n_sites`.
    pub fn resolved(&self, n_sites: usize) -> Family {
        match self {
            Family::Interpolating { n, m, ell } => Family::Interpolating {
                n: *n,
                m: *m,
                ell: EllSpec::Fixed(ell.resolve(Some(n_sites)).expect("size given")),
            },
            Family::Superposition(parts) => Family::Superposition(
                parts
                    .iter()
                    .map(|(w, f)| (*w, f.resolved(n_sites)))
                    .collect(),
            ),
            other => other.clone(),
        }
    }
}

/// Strength rule for the symmetric-exclusion admixture `p_N`.
///
/// The perturbed generator is `N^2 L + p_N N^2 L_ssep`; any rule with
/// `p_N -> 0` and `p_N N^2 -> infinity` keeps the macroscopic equation
/// unchanged while restoring irreducibility.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perturbation {
    /// Decide from the regime: `N^-1` in Regime I, zero in Regime II.
    Auto,
    None,
    /// `p_N = N^-gamma` with `0 < gamma < 2`.
    PowerLaw { gamma: f64 },
    Fixed(f64),
}

impl Perturbation {
    /// Numeric value for a concrete lattice size; `Auto` must be resolved by
    /// the caller (it needs the regime classification).
    pub fn value(&self, n_sites: usize) -> Result<f64> {
        match self {
            Perturbation::Auto => Err(Error::Config(
                "auto perturbation must be resolved against the model regime first".into(),
            )),
            Perturbation::None => Ok(0.0),
            Perturbation::PowerLaw { gamma } => {
                if !(*gamma > 0.0 && *gamma < 2.0) {
                    return Err(Error::Config(format!(
                        "perturbation exponent must lie in (0,2), got {gamma}"
                    )));
                }
                Ok((n_sites as f64).powf(-gamma))
            }
            Perturbation::Fixed(v) => {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::Config(format!("perturbation must be >= 0, got {v}")));
                }
                Ok(*v)
            }
        }
    }
}

/// A constraint family plus the admixture rule: everything needed to attach
/// a dynamics to a lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub perturbation: Perturbation,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            perturbation: Perturbation::Auto,
        }
    }

    pub fn with_perturbation(mut self, p: Perturbation) -> Self {
        self.perturbation = p;
        self
    }

    pub fn ssep() -> Self {
        Self::new(Family::Ssep)
    }

    pub fn pmm(n: u32) -> Self {
        Self::new(Family::Pmm { n })
    }

    pub fn bernstein(n: u32, big_l: u32) -> Self {
        Self::new(Family::Bernstein { n, big_l })
    }

    pub fn interpolating(n: u32, m: f64, ell: u32) -> Self {
        Self::new(Family::Interpolating {
            n,
            m,
            ell: EllSpec::Fixed(ell),
        })
    }

    /// Canonical one-line form, reproducing the spec bit-exactly on re-parse.
    pub fn canonical(&self) -> String {
        format!("{} ; perturbation = {}", self.family, self.perturbation)
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Auto => write!(f, "auto"),
            Perturbation::None => write!(f, "0"),
            Perturbation::PowerLaw { gamma } => write!(f, "N^-{gamma}"),
            Perturbation::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Perturbation::Auto);
        }
        if let Some(rest) = s.strip_prefix("N^-").or_else(|| s.strip_prefix("n^-")) {
            let gamma: f64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad perturbation exponent in {s:?}")))?;
            let p = Perturbation::PowerLaw { gamma };
            p.value(16)?; // domain check
            return Ok(p);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Parse(format!("bad perturbation value {s:?}")))?;
        if v == 0.0 {
            Ok(Perturbation::None)
        } else {
            let p = Perturbation::Fixed(v);
            p.value(16)?;
            Ok(p)
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Ssep => write!(f, "ssep"),
            Family::Pmm { n } => write!(f, "pmm(n={n})"),
            Family::Bernstein { n, big_l } => write!(f, "bernstein(n={n},L={big_l})"),
            Family::Interpolating { n, m, ell } => match ell {
                EllSpec::Fixed(l) => write!(f, "interpolating(n={n},m={m},ell={l})"),
                EllSpec::SqrtN => write!(f, "interpolating(n={n},m={m},ell=sqrt)"),
            },
            Family::Superposition(parts) => {
                write!(f, "superposition(")?;
                for (i, (w, fam)) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{w}*{fam}")?;
                }
                write!(f, ")")
            }
            Family::Monomial { m, ell } => write!(f, "monomial(m={m},ell={ell})"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = FamilyParser {
            input: s.as_bytes(),
            pos: 0,
        };
        let fam = p.family(0)?;
        p.skip_ws();
        if p.pos != p.input.len() {
            return Err(Error::Parse(format!(
                "trailing input at byte {} of model string",
                p.pos
            )));
        }
        fam.validate()?;
        Ok(fam)
    }
}

const MAX_PARSE_DEPTH: usize = 16;

struct FamilyParser<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> FamilyParser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.input.len() && self.input[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, ch: u8) -> Result<()> {
        self.skip_ws();
        if self.pos < self.input.len() && self.input[self.pos] == ch {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse(format!(
                "expected {:?} at byte {}",
                ch as char, self.pos
            )))
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.input.get(self.pos).copied()
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.input.len()
            && (self.input[self.pos].is_ascii_alphabetic() || self.input[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.input[start..self.pos]).to_string()
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.input.len()
            && matches!(self.input[self.pos], b'0'..=b'9' | b'.' | b'-' | b'+' | b'e' | b'E')
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.input[start..self.pos])
            .map_err(|_| Error::Parse("non-utf8 number".into()))?;
        text.parse()
            .map_err(|_| Error::Parse(format!("bad number {text:?} at byte {start}")))
    }

    /// `key = value` pairs inside parentheses; returns (key, raw value text).
    fn args(&mut self) -> Result<Vec<(String, String)>> {
        self.eat(b'(')?;
        let mut out = Vec::new();
        loop {
            let key = self.ident();
            if key.is_empty() {
                return Err(Error::Parse(format!("expected parameter at byte {}", self.pos)));
            }
            self.eat(b'=')?;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.input.len() && !matches!(self.input[self.pos], b',' | b')') {
                self.pos += 1;
            }
            let value = String::from_utf8_lossy(&self.input[start..self.pos])
                .trim()
                .to_string();
            out.push((key, value));
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                }
                Some(b')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(Error::Parse(format!("expected ',' or ')' at byte {}", self.pos))),
            }
        }
    }

    fn family(&mut self, depth: usize) -> Result<Family> {
        if depth > MAX_PARSE_DEPTH {
            return Err(Error::Parse("model expression nested too deeply".into()));
        }
        let name = self.ident().to_ascii_lowercase();
        match name.as_str() {
            "ssep" => Ok(Family::Ssep),
            "pmm" => {
                let args = self.args()?;
                let n = take_u32(&args, "n", "pmm")?;
                require_keys(&args, &["n"], "pmm")?;
                Ok(Family::Pmm { n })
            }
            "bernstein" => {
                let args = self.args()?;
                let n = take_u32(&args, "n", "bernstein")?;
                let big_l = take_u32(&args, "L", "bernstein")
                    .or_else(|_| take_u32(&args, "l", "bernstein"))?;
                require_keys(&args, &["n", "L", "l"], "bernstein")?;
                Ok(Family::Bernstein { n, big_l })
            }
            "interpolating" => {
                let args = self.args()?;
                let n = take_u32(&args, "n", "interpolating")?;
                let m = take_f64(&args, "m", "interpolating")?;
                let ell_raw = take_raw(&args, "ell", "interpolating")?;
                let ell = if ell_raw.eq_ignore_ascii_case("sqrt") {
                    EllSpec::SqrtN
                } else {
                    EllSpec::Fixed(parse_u32(&ell_raw, "ell")?)
                };
                require_keys(&args, &["n", "m", "ell"], "interpolating")?;
                Ok(Family::Interpolating { n, m, ell })
            }
            "monomial" => {
                let args = self.args()?;
                let m = take_f64(&args, "m", "monomial")?;
                let ell = take_u32(&args, "ell", "monomial")?;
                require_keys(&args, &["m", "ell"], "monomial")?;
                Ok(Family::Monomial { m, ell })
            }
            "superposition" => {
                self.eat(b'(')?;
                let mut parts = Vec::new();
                loop {
                    let w = self.number()?;
                    self.eat(b'*')?;
                    let fam = self.family(depth + 1)?;
                    parts.push((w, fam));
                    match self.peek() {
                        Some(b',') => {
                            self.pos += 1;
                        }
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        _ => {
                            return Err(Error::Parse(format!(
                                "expected ',' or ')' at byte {}",
                                self.pos
                            )))
                        }
                    }
                }
                Ok(Family::Superposition(parts))
            }
            other => Err(Error::Parse(format!("unknown constraint family {other:?}"))),
        }
    }
}

fn take_raw(args: &[(String, String)], key: &str, fam: &str) -> Result<String> {
    args.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Parse(format!("{fam} is missing parameter {key:?}")))
}

fn parse_u32(text: &str, key: &str) -> Result<u32> {
    text.parse()
        .map_err(|_| Error::Parse(format!("parameter {key} must be a nonnegative integer, got {text:?}")))
}

fn take_u32(args: &[(String, String)], key: &str, fam: &str) -> Result<u32> {
    parse_u32(&take_raw(args, key, fam)?, key)
}

fn take_f64(args: &[(String, String)], key: &str, fam: &str) -> Result<f64> {
    let raw = take_raw(args, key, fam)?;
    raw.parse()
        .map_err(|_| Error::Parse(format!("parameter {key} must be a number, got {raw:?}")))
}

fn require_keys(args: &[(String, String)], allowed: &[&str], fam: &str) -> Result<()> {
    for (k, _) in args {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Parse(format!("unknown parameter {k:?} for {fam}")));
        }
    }
    Ok(())
}

/// One additive piece of a component: a lookup table over the particle count
/// of the box `[[-j, -j + box_len + 1]] \ {0, 1}` (which always holds exactly
/// `box_len` countable sites). `invert` makes the table index count holes.
#[derive(Clone, Debug)]
struct CountTerm {
    box_len: usize,
    by_count: Vec<f64>,
}

/// All terms sharing the window offset `j`; the unit that the gradient
/// telescoping shifts around.
#[derive(Clone, Debug)]
pub(crate) struct Component {
    offset: usize,
    terms: Vec<CountTerm>, // sorted by box_len
}

/// A constraint compiled to count tables for a concrete lattice size.
#[derive(Clone, Debug)]
pub struct Kernel {
    family: Family,
    components: Vec<Component>,
    radius: usize,
    n_sites: usize,
}

impl Kernel {
    /// Compile `family` for a lattice of `n_sites` sites. The interpolating
    /// cutoff rule is resolved here; every window must fit the lattice.
    pub fn new(family: &Family, n_sites: usize) -> Result<Self> {
        family.validate()?;
        let family = family.resolved(n_sites);
        let mut map: Vec<Vec<CountTerm>> = Vec::new();
        collect_terms(&family, 1.0, &mut map)?;
        let mut components = Vec::new();
        for (offset, mut terms) in map.into_iter().enumerate() {
            if terms.is_empty() {
                continue;
            }
            terms.sort_by_key(|t| t.box_len);
            // merge equal box lengths
            let mut merged: Vec<CountTerm> = Vec::new();
            for t in terms {
                match merged.last_mut() {
                    Some(last) if last.box_len == t.box_len => {
                        for (a, b) in last.by_count.iter_mut().zip(&t.by_count) {
                            *a += b;
                        }
                    }
                    _ => merged.push(t),
                }
            }
            components.push(Component {
                offset,
                terms: merged,
            });
        }
        let mut radius = 1usize;
        let mut max_box = 0usize;
        for c in &components {
            for t in &c.terms {
                radius = radius.max(c.offset).max(t.box_len + 1 - c.offset.min(t.box_len + 1));
                max_box = max_box.max(t.box_len);
            }
        }
        if max_box + 2 > n_sites.saturating_sub(2) {
            return Err(Error::Size(format!(
                "constraint window of {} sites does not fit a lattice of {n_sites}",
                max_box + 2
            )));
        }
        Ok(Self {
            family,
            components,
            radius,
            n_sites,
        })
    }

    /// The family this kernel was compiled from (with `ell` resolved).
    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Maximum |offset| of any site the constraint inspects.
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub(crate) fn components(&self) -> &[Component] {
        &self.components
    }

    /// Constraint value `c(tau_x eta)`.
    pub fn value(&self, cfg: &Configuration, x: i64) -> f64 {
        debug_assert_eq!(cfg.n_sites(), self.n_sites);
        let mut total = 0.0;
        for comp in &self.components {
            total += component_value(comp, cfg, x);
        }
        total
    }

    /// Value of the component with window offset `j` (zero if absent).
    pub fn component_value_at(&self, j: usize, cfg: &Configuration, x: i64) -> f64 {
        self.components
            .iter()
            .find(|c| c.offset == j)
            .map_or(0.0, |c| component_value(c, cfg, x))
    }

    /// Window offsets `j` with a nonempty component.
    pub fn component_offsets(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.offset).collect()
    }

    /// Total exchange rate of the bond `{x, x+1}` in microscopic time units:
    /// `(c(tau_x eta) + p) 1{eta(x) != eta(x+1)}`.
    pub fn bond_rate(&self, cfg: &Configuration, x: i64, p: f64) -> f64 {
        if cfg.occ(x) == cfg.occ(x + 1) {
            return 0.0;
        }
        self.value(cfg, x) + p
    }

    /// Sorted relative offsets of every site the constraint can read.
    pub fn support_offsets(&self) -> Vec<i64> {
        let mut set = std::collections::BTreeSet::new();
        for c in &self.components {
            let j = c.offset as i64;
            for t in &c.terms {
                for off in -j..=(t.box_len as i64 + 1 - j) {
                    if off != 0 && off != 1 {
                        set.insert(off);
                    }
                }
            }
        }
        set.into_iter().collect()
    }

    /// True when every count table is nondecreasing in the particle count,
    /// which makes the whole constraint monotone in the occupation variables.
    pub fn is_monotone(&self) -> bool {
        self.components.iter().all(|c| {
            c.terms
                .iter()
                .all(|t| t.by_count.windows(2).all(|w| w[0] <= w[1] + 1e-15))
        })
    }

    /// Exact supremum of the constraint over all configurations: exhaustive
    /// over the support when small, the all-ones value for monotone kernels.
    pub fn sup_value(&self) -> Result<f64> {
        let support = self.support_offsets();
        if support.len() <= 24 {
            let mut best = f64::NEG_INFINITY;
            enumerate_support(self, &support, &mut |k, cfg| {
                best = best.max(k.value(cfg, 0));
            })?;
            Ok(best)
        } else if self.is_monotone() {
            Ok(self.value(&Configuration::ones(self.n_sites), 0))
        } else {
            Err(Error::Size(format!(
                "support of {} sites is too large for an exhaustive supremum \
                 and the kernel is not monotone",
                support.len()
            )))
        }
    }
}

fn component_value(comp: &Component, cfg: &Configuration, x: i64) -> f64 {
    // Terms share the anchor -j; grow the box count incrementally instead of
    // recounting each nested window.
    let j = comp.offset as i64;
    let first = &comp.terms[0];
    let w = Window::node_box(j, first.box_len);
    let mut count = cfg
        .window_count(x, &w)
        .expect("window sizes validated at construction");
    let mut len = first.box_len;
    let mut total = first.by_count[count];
    for t in &comp.terms[1..] {
        while len < t.box_len {
            // growing the box from `len` to `len + 1` adds offset `len+2-j`
            let off = len as i64 + 2 - j;
            if off != 0 && off != 1 {
                count += cfg.occ(x + off) as usize;
            }
            len += 1;
        }
        total += t.by_count[count];
    }
    total
}

/// Enumerate all occupation patterns of `support` (relative offsets around a
/// reference bond), invoking `f` with a scratch kernel and configuration whose
/// reference bond sits at `x = 0`.
fn enumerate_support<F: FnMut(&Kernel, &Configuration)>(
    kernel: &Kernel,
    support: &[i64],
    f: &mut F,
) -> Result<()> {
    let w = support.len();
    if w > 24 {
        return Err(Error::Size(format!(
            "constraint support of {w} sites exceeds the 24-site enumeration cap"
        )));
    }
    let span = if support.is_empty() {
        2
    } else {
        (support[w - 1] - support[0] + 1) as usize
    };
    let scratch_n = span + 4;
    let scratch = Kernel::new(&kernel.family, scratch_n)?;
    let mut cfg = Configuration::zeros(scratch_n);
    for code in 0u64..(1 << w) {
        for (b, &off) in support.iter().enumerate() {
            cfg.set(off, ((code >> b) & 1) as u8);
        }
        f(&scratch, &cfg);
    }
    Ok(())
}

/// Exact expectation of the constraint under the Bernoulli(alpha) product
/// measure, by enumeration over the support window.
pub fn exact_expectation(family: &Family, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0,1], got {alpha}")));
    }
    // Compile on a generous scratch lattice; only the support size matters.
    let probe = Kernel::new(family, scratch_size(family)?)?;
    let support = probe.support_offsets();
    let mut total = 0.0;
    enumerate_support(&probe, &support, &mut |k, cfg| {
        let particles = support.iter().filter(|&&o| cfg.occ(o) == 1).count();
        let weight = alpha.powi(particles as i32) * (1.0 - alpha).powi((support.len() - particles) as i32);
        if weight > 0.0 {
            total += weight * k.value(cfg, 0);
        }
    })?;
    Ok(total)
}

/// A lattice size large enough to host the family's windows without wrap.
pub(crate) fn scratch_size(family: &Family) -> Result<usize> {
    fn max_box(family: &Family) -> Result<usize> {
        Ok(match family {
            Family::Ssep => 0,
            Family::Pmm { n } => *n as usize,
            Family::Bernstein { big_l, .. } => *big_l as usize,
            Family::Interpolating { n, m, ell } => {
                let ell = match ell {
                    EllSpec::Fixed(l) => *l as usize,
                    EllSpec::SqrtN => {
                        return Err(Error::Config(
                            "resolve ell=sqrt against a lattice size before size-free operations"
                                .into(),
                        ))
                    }
                };
                if *m == 0.0 {
                    *n as usize
                } else if *m == 1.0 {
                    *n as usize + 1
                } else {
                    *n as usize + ell
                }
            }
            Family::Superposition(parts) => {
                let mut worst = 0;
                for (_, f) in parts {
                    worst = worst.max(max_box(f)?);
                }
                worst
            }
            Family::Monomial { ell, .. } => *ell as usize,
        })
    }
    Ok(2 * (max_box(family)? + 2) + 4)
}

fn collect_terms(family: &Family, weight: f64, map: &mut Vec<Vec<CountTerm>>) -> Result<()> {
    let mut push = |offset: usize, term: CountTerm| {
        if map.len() <= offset {
            map.resize_with(offset + 1, Vec::new);
        }
        map[offset].push(term);
    };
    match family {
        Family::Ssep => {
            push(
                0,
                CountTerm {
                    box_len: 0,
                    by_count: vec![weight],
                },
            );
        }
        Family::Pmm { n } => bernstein_terms(*n, *n, weight, &mut push),
        Family::Bernstein { n, big_l } => bernstein_terms(*n, *big_l, weight, &mut push),
        Family::Interpolating { n, m, ell } => {
            let n = *n;
            if *m == 0.0 {
                bernstein_terms(n, n, weight, &mut push);
            } else if *m == 1.0 {
                bernstein_terms(n + 1, n + 1, weight, &mut push);
            } else {
                let ell = match ell {
                    EllSpec::Fixed(l) => *l,
                    EllSpec::SqrtN => {
                        return Err(Error::Config("unresolved ell=sqrt in kernel".into()))
                    }
                };
                let table = BinomialTable::new(*m, ell);
                let delta = table.delta();
                // delta * p_n part
                for j in 0..=n as usize {
                    let mut by_count = vec![0.0; n as usize + 1];
                    by_count[n as usize] = weight * delta / (n as f64 + 1.0);
                    push(
                        j,
                        CountTerm {
                            box_len: n as usize,
                            by_count,
                        },
                    );
                }
                // |binom(m,k)| * p_{n,k} parts
                for k in 1..=ell {
                    let wk = weight * table.coeff(k).abs();
                    let len = (n + k) as usize;
                    let norm = wk / (n as f64 + k as f64 + 1.0);
                    let denom = integer_binom(n + k, n);
                    for j in 0..=len {
                        let mut by_count = vec![0.0; len + 1];
                        for (cnt, slot) in by_count.iter_mut().enumerate() {
                            if cnt >= n as usize + 1 {
                                *slot = norm * integer_binom(cnt as u32, n) / denom;
                            }
                        }
                        push(
                            j,
                            CountTerm {
                                box_len: len,
                                by_count,
                            },
                        );
                    }
                }
            }
        }
        Family::Superposition(parts) => {
            for (w, f) in parts {
                collect_terms(f, weight * w, map)?;
            }
        }
        Family::Monomial { m, ell } => {
            // c = sum_{k=0}^{ell} binom(m-1, k) (-1)^k p_k(complement),
            // p_0(complement) = 1 and p_k counts all-hole windows of k sites.
            let table = BinomialTable::new(*m - 1.0, *ell);
            push(
                0,
                CountTerm {
                    box_len: 0,
                    by_count: vec![weight],
                },
            );
            for k in 1..=*ell {
                let wk = weight * table.coeff(k) * if k % 2 == 0 { 1.0 } else { -1.0 };
                if wk == 0.0 {
                    continue;
                }
                for j in 0..=k as usize {
                    let mut by_count = vec![0.0; k as usize + 1];
                    by_count[0] = wk / (k as f64 + 1.0); // all-hole window
                    push(
                        j,
                        CountTerm {
                            box_len: k as usize,
                            by_count,
                        },
                    );
                }
            }
        }
    }
    Ok(())
}

fn bernstein_terms<F: FnMut(usize, CountTerm)>(n: u32, big_l: u32, weight: f64, push: &mut F) {
    let len = big_l as usize;
    for j in 0..=len {
        let mut by_count = vec![0.0; len + 1];
        by_count[n as usize] = weight / (big_l as f64 + 1.0);
        push(
            j,
            CountTerm {
                box_len: len,
                by_count,
            },
        );
    }
}

/// `binom(n, k)` for small integers, in floating point.
pub(crate) fn integer_binom(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut out = 1.0;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

// ---------------------------------------------------------------------------
// Reference evaluators: direct transcriptions of the defining sums, used by
// the table kernel's tests and available for one-off evaluation.
// ---------------------------------------------------------------------------

/// `b_{n,L}` at the bond `{x, x+1}`: the fraction of the `L+1` windows
/// `[[-j, -j+L+1]] \ {0,1}` holding exactly `n` particles.
pub fn bernstein_constraint(cfg: &Configuration, x: i64, n: u32, big_l: u32) -> Result<f64> {
    if n > big_l {
        return Err(Error::Config(format!("need n <= L, got n={n}, L={big_l}")));
    }
    let mut hits = 0usize;
    for j in 0..=big_l as i64 {
        let w = Window::node_box(j, big_l as usize);
        if cfg.window_count(x, &w)? == n as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / (big_l as f64 + 1.0))
}

/// Porous-media constraint `p_n = b_{n,n}`: the (normalized) number of fully
/// occupied boxes of `n` sites adjacent to the bond.
pub fn pmm_constraint(cfg: &Configuration, x: i64, n: u32) -> Result<f64> {
    if n < 1 {
        return Err(Error::Config("pmm needs n >= 1".into()));
    }
    bernstein_constraint(cfg, x, n, n)
}

/// Auxiliary constraint `p_{n,k}` of the interpolating family.
pub fn interp_aux_constraint(cfg: &Configuration, x: i64, n: u32, k: u32) -> Result<f64> {
    if k < 1 {
        return Err(Error::Config("auxiliary constraint needs k >= 1".into()));
    }
    let len = (n + k) as usize;
    let denom = integer_binom(n + k, n);
    let mut total = 0.0;
    for j in 0..=len as i64 {
        let w = Window::node_box(j, len);
        let cnt = cfg.window_count(x, &w)? as u32;
        if cnt >= n + 1 {
            total += integer_binom(cnt, n) / denom;
        }
    }
    Ok(total / (n as f64 + k as f64 + 1.0))
}

/// The interpolating constraint
/// `c = p_n + sum_k binom(m,k) (-1)^k (p_n - p_{n,k})`, reducing exactly to
/// `pmm(n)` at `m = 0` and `pmm(n+1)` at `m = 1`.
pub fn interp_constraint(cfg: &Configuration, x: i64, n: u32, m: f64, ell: u32) -> Result<f64> {
    Family::Interpolating {
        n,
        m,
        ell: EllSpec::Fixed(ell),
    }
    .validate()?;
    if m == 0.0 {
        return pmm_constraint(cfg, x, n);
    }
    if m == 1.0 {
        return pmm_constraint(cfg, x, n + 1);
    }
    let table = BinomialTable::new(m, ell);
    let mut total = table.delta() * pmm_constraint(cfg, x, n)?;
    for k in 1..=ell {
        total += table.coeff(k).abs() * interp_aux_constraint(cfg, x, n, k)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(bits: &[u8]) -> Configuration {
        Configuration::from_bits(bits.iter().copied())
    }

    #[test]
    fn gen_binom_basics() {
        assert_eq!(gen_binom(0.5, 2), -0.125);
        assert_eq!(gen_binom(123.456, 0), 1.0);
        assert_eq!(gen_binom(1.0, 2), 0.0);
        assert_eq!(gen_binom(3.0, 5), 0.0);
        // recurrence consistency
        let t = BinomialTable::new(0.37, 20);
        for k in 1..=20u32 {
            let direct = gen_binom(0.37, k);
            assert!((t.coeff(k) - direct).abs() <= 1e-15 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn binomial_table_signs_and_mass() {
        for &m in &[0.1, 0.25, 0.5, 0.75, 0.9] {
            let t = BinomialTable::new(m, 40);
            for k in 1..=40u32 {
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                assert!(sign * t.coeff(k) >= 0.0, "sign pattern broken at m={m}, k={k}");
            }
            assert!(t.abs_sum_from(1) <= 1.0 + 1e-12, "mass exceeds 1 at m={m}");
            assert!(t.delta() >= -1e-12);
        }
    }

    #[test]
    fn bernstein_examples() {
        // n=1, L=1: windows {x+2} and {x-1}; one of them holds a particle.
        let c = cfg(&[0, 0, 0, 1, 0, 0, 0, 0]); // bond {4,5}: eta(3)=1, eta(6)=0
        assert_eq!(bernstein_constraint(&c, 4, 1, 1).unwrap(), 0.5);
        assert_eq!(bernstein_constraint(&Configuration::ones(10), 0, 0, 2).unwrap(), 0.0);
        // n = L: every window is full on the full lattice
        for n in 0..3u32 {
            assert_eq!(bernstein_constraint(&Configuration::ones(12), 3, n, n).unwrap(), 1.0);
        }
    }

    #[test]
    fn pmm_examples() {
        // both neighbours occupied -> both windows full
        let c = cfg(&[0, 1, 0, 0, 1, 0, 0, 0]); // bond {2,3}: eta(1)=1, eta(4)=1
        assert_eq!(pmm_constraint(&c, 2, 1).unwrap(), 1.0);
        let blocked = cfg(&[0, 0, 1, 0, 0, 0, 0, 0, 1, 0]);
        assert_eq!(pmm_constraint(&blocked, 4, 2).unwrap(), 0.0);
        assert_eq!(pmm_constraint(&Configuration::ones(10), 0, 2).unwrap(), 1.0);
        assert!(pmm_constraint(&blocked, 0, 0).is_err());
    }

    #[test]
    fn interp_aux_examples() {
        assert_eq!(
            interp_aux_constraint(&Configuration::ones(12), 5, 1, 2).unwrap(),
            1.0
        );
        assert_eq!(
            interp_aux_constraint(&Configuration::zeros(12), 5, 1, 2).unwrap(),
            0.0
        );
    }

    /// The identity p_{n,1} = p_{n+1}, exhaustively at N = 12.
    #[test]
    fn aux_k1_equals_next_pmm() {
        for n in 1..=2u32 {
            for code in 0u64..(1 << 12) {
                let c = Configuration::from_code(code, 12);
                let lhs = interp_aux_constraint(&c, 0, n, 1).unwrap();
                let rhs = pmm_constraint(&c, 0, n + 1).unwrap();
                assert!(
                    (lhs - rhs).abs() <= 1e-14,
                    "p_{{{n},1}} != p_{}, code {code}",
                    n + 1
                );
            }
        }
    }

    #[test]
    fn interp_endpoints_and_full_lattice() {
        let ones = Configuration::ones(14);
        assert!((interp_constraint(&ones, 0, 1, 0.5, 4).unwrap() - 1.0).abs() <= 1e-12);
        for code in [0u64, 0b101011010011, 0b111000111000] {
            let c = Configuration::from_code(code, 14);
            for x in 0..14 {
                assert_eq!(
                    interp_constraint(&c, x, 1, 0.0, 4).unwrap(),
                    pmm_constraint(&c, x, 1).unwrap()
                );
                assert_eq!(
                    interp_constraint(&c, x, 1, 1.0, 4).unwrap(),
                    pmm_constraint(&c, x, 2).unwrap()
                );
            }
        }
    }

    /// Table kernel agrees with the direct reference evaluators.
    #[test]
    fn kernel_matches_reference() {
        let n_sites = 14;
        let fams: Vec<(Family, Box<dyn Fn(&Configuration, i64) -> f64>)> = vec![
            (Family::Ssep, Box::new(|_c, _x| 1.0)),
            (
                Family::Pmm { n: 2 },
                Box::new(|c, x| pmm_constraint(c, x, 2).unwrap()),
            ),
            (
                Family::Bernstein { n: 1, big_l: 3 },
                Box::new(|c, x| bernstein_constraint(c, x, 1, 3).unwrap()),
            ),
            (
                Family::Interpolating {
                    n: 1,
                    m: 0.3,
                    ell: EllSpec::Fixed(4),
                },
                Box::new(|c, x| interp_constraint(c, x, 1, 0.3, 4).unwrap()),
            ),
            (
                Family::Superposition(vec![
                    (0.25, Family::Ssep),
                    (0.75, Family::Pmm { n: 1 }),
                ]),
                Box::new(|c, x| {
                    0.25 + 0.75 * pmm_constraint(c, x, 1).unwrap()
                }),
            ),
        ];
        let mut state = 0x9e3779b97f4a7c15u64;
        for (fam, reference) in fams {
            let kernel = Kernel::new(&fam, n_sites).unwrap();
            for _ in 0..400 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                let c = Configuration::from_code(state >> 20, n_sites);
                let x = (state % 29) as i64 - 14;
                let got = kernel.value(&c, x);
                let want = reference(&c, x);
                assert!(
                    (got - want).abs() <= 1e-12,
                    "kernel mismatch for {fam}: got {got}, want {want}"
                );
            }
        }
    }

    /// Flipping either node occupation never changes the constraint.
    #[test]
    fn node_independence_exhaustive() {
        let fams = [
            Family::Pmm { n: 2 },
            Family::Bernstein { n: 1, big_l: 2 },
            Family::Interpolating {
                n: 1,
                m: 0.5,
                ell: EllSpec::Fixed(4),
            },
        ];
        for fam in &fams {
            let kernel = Kernel::new(fam, 12).unwrap();
            for code in 0u64..(1 << 12) {
                let c = Configuration::from_code(code, 12);
                let v = kernel.value(&c, 3);
                for site in [3i64, 4] {
                    let mut flipped = c.clone();
                    flipped.set(site, 1 - flipped.occ(site));
                    assert_eq!(kernel.value(&flipped, 3), v, "node dependence in {fam}");
                }
            }
        }
    }

    /// Nonnegativity of the interpolating constraint on an m-grid at N = 12.
    #[test]
    fn interp_nonnegative_exhaustive() {
        for im in 0..=10 {
            let m = im as f64 / 10.0;
            let kernel = Kernel::new(
                &Family::Interpolating {
                    n: 1,
                    m,
                    ell: EllSpec::Fixed(4),
                },
                12,
            )
            .unwrap();
            let mut min = f64::INFINITY;
            for code in 0u64..(1 << 12) {
                let c = Configuration::from_code(code, 12);
                min = min.min(kernel.value(&c, 0));
            }
            assert!(min >= 0.0, "negative rate at m={m}: {min}");
        }
    }

    /// |c|_inf <= 1 + 2 sum |binom(m,k)| <= 3 for the interpolating family.
    #[test]
    fn interp_sup_bound() {
        for &m in &[0.25, 0.5, 0.75] {
            let fam = Family::Interpolating {
                n: 1,
                m,
                ell: EllSpec::Fixed(4),
            };
            let kernel = Kernel::new(&fam, 16).unwrap();
            let sup = kernel.sup_value().unwrap();
            let bound = 1.0 + 2.0 * BinomialTable::new(m, 4).abs_sum_from(1);
            assert!(sup <= bound + 1e-12 && bound <= 3.0);
        }
    }

    #[test]
    fn shift_covariance() {
        let kernel = Kernel::new(&Family::Pmm { n: 2 }, 12).unwrap();
        for code in [0b1011_0110_1001u64, 0b0110_1100_0011] {
            let c = Configuration::from_code(code, 12);
            for x in 0..12i64 {
                let rotated = c.shifted(x);
                assert!((kernel.value(&c, x) - kernel.value(&rotated, 0)).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn bond_rate_examples() {
        let kernel = Kernel::new(&Family::Pmm { n: 1 }, 10).unwrap();
        // concordant node -> rate 0
        let c = cfg(&[1, 1, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(kernel.bond_rate(&c, 0, 0.0), 0.0);
        // ...1 1 0 0...: node at {1,2}, eta(0)=1, eta(3)=0 -> one full window
        assert_eq!(kernel.bond_rate(&c, 1, 0.0), 0.5);
        let ssep = Kernel::new(&Family::Ssep, 10).unwrap();
        assert_eq!(ssep.bond_rate(&c, 1, 0.0), 1.0);
        assert_eq!(ssep.bond_rate(&c, 0, 0.25), 0.0);
    }

    #[test]
    fn expectation_matches_bernstein_basis() {
        for &(n, l) in &[(0u32, 2u32), (1, 2), (1, 3), (2, 3)] {
            for ia in 0..=10 {
                let a = ia as f64 / 10.0;
                let got = exact_expectation(&Family::Bernstein { n, big_l: l }, a).unwrap();
                let want =
                    integer_binom(l, n) * a.powi(n as i32) * (1.0 - a).powi((l - n) as i32);
                assert!(
                    (got - want).abs() <= 1e-12,
                    "B({n},{l}) at alpha={a}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn expectation_ssep_is_one() {
        for ia in 0..=4 {
            let a = ia as f64 / 4.0;
            assert!((exact_expectation(&Family::Ssep, a).unwrap() - 1.0).abs() <= 1e-15);
        }
    }

    /// Interpolating expectation approaches alpha^(n+m); the truncation error
    /// is controlled by the binomial tail.
    #[test]
    fn expectation_interp_tail() {
        let fam = Family::Interpolating {
            n: 1,
            m: 0.5,
            ell: EllSpec::Fixed(8),
        };
        let got = exact_expectation(&fam, 0.7).unwrap();
        let tail = BinomialTable::new(0.5, 60).abs_sum_from(9);
        assert!((got - 0.7f64.powf(1.5)).abs() <= tail);
        // series form: alpha^n sum_k (-1)^k binom(m,k) (1-alpha)^k
        let t = BinomialTable::new(0.5, 8);
        let series: f64 = (0..=8u32)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * t.coeff(k) * 0.3f64.powi(k as i32)
            })
            .sum::<f64>()
            * 0.7;
        assert!((got - series).abs() <= 1e-12, "got {got}, series {series}");
    }

    #[test]
    fn expectation_rejects_large_support() {
        let fam = Family::Interpolating {
            n: 1,
            m: 0.5,
            ell: EllSpec::Fixed(14),
        };
        assert!(matches!(exact_expectation(&fam, 0.5), Err(Error::Size(_))));
    }

    #[test]
    fn family_string_round_trip() {
        let fams = [
            "ssep",
            "pmm(n=2)",
            "bernstein(n=1,L=3)",
            "interpolating(n=1,m=0.5,ell=4)",
            "interpolating(n=2,m=0.25,ell=sqrt)",
            "superposition(0.25*ssep,0.75*pmm(n=1))",
            "monomial(m=1.5,ell=6)",
        ];
        for s in fams {
            let fam: Family = s.parse().unwrap();
            assert_eq!(fam.to_string(), s);
            let again: Family = fam.to_string().parse().unwrap();
            assert_eq!(again, fam);
        }
        for bad in [
            "pm(n=2)",
            "pmm(n=-1)",
            "pmm(n=2,junk=3)",
            "interpolating(n=1,m=1.5,ell=4)",
            "superposition()",
            "superposition(-1*ssep)",
            "pmm(n=2) trailing",
            "",
        ] {
            assert!(bad.parse::<Family>().is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn perturbation_round_trip() {
        for s in ["auto", "0", "N^-1", "N^-0.5", "0.01"] {
            let p: Perturbation = s.parse().unwrap();
            let printed = p.to_string();
            let again: Perturbation = printed.parse().unwrap();
            assert_eq!(again, p);
        }
        assert_eq!(
            "N^-1".parse::<Perturbation>().unwrap().value(256).unwrap(),
            1.0 / 256.0
        );
        assert!("N^-3".parse::<Perturbation>().is_err());
    }

    /// Monomial convenience: reduces to SSEP at m = 1 and PMM(1)-like
    /// complement behaviour stays nonnegative on its domain.
    #[test]
    fn monomial_convenience() {
        let ssep_like = Kernel::new(&Family::Monomial { m: 1.0, ell: 6 }, 20).unwrap();
        for code in [0u64, 77, 1023, 0b1010101] {
            let c = Configuration::from_code(code, 20);
            assert!((ssep_like.value(&c, 0) - 1.0).abs() <= 1e-12);
        }
        let k = Kernel::new(&Family::Monomial { m: 1.5, ell: 6 }, 20).unwrap();
        let mut min = f64::INFINITY;
        for code in 0u64..(1 << 14) {
            let c = Configuration::from_code(code, 20);
            min = min.min(k.value(&c, 6));
        }
        assert!(min >= -1e-12, "monomial rate went negative: {min}");
    }
}
