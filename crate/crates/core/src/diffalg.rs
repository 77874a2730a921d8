//! Differential polynomials with exact rational coefficients.
//!
//! A generator is a `GenId` (family name plus a short integer multi-index).
//! Variables are generators together with a derivative order; monomials are
//! sorted lists of variables with exponents. Families named in
//! [`CONSTANT_FAMILIES`] are constants of the derivation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rustc_hash::FxHashMap;
use std::fmt;
use std::sync::OnceLock;

use smallvec::SmallVec;

use crate::rational::Rational;

/// Families whose generators have zero derivative.
pub const CONSTANT_FAMILIES: &[&str] = &["eps"];

const NAME_LEN: usize = 5;
const NAME_ALPHABET: &[u8] = b"+-0123456789_abcdefghijklmnopqrstuvwxyz";

/// Family name packed order-preservingly in base 40 (at most five characters).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Family(u32);

impl Family {
    pub fn new(name: &str) -> Self {
        let bytes = name.as_bytes();
        assert!(!bytes.is_empty() && bytes.len() <= NAME_LEN, "family name {name:?} must have 1..=5 characters");
        let mut code = 0u32;
        for k in 0..NAME_LEN {
            let digit = match bytes.get(k) {
                None => 0,
                Some(c) => {
                    let pos = NAME_ALPHABET.iter().position(|a| a == c);
                    1 + pos.unwrap_or_else(|| panic!("family name {name:?} uses an unsupported character")) as u32
                }
            };
            code = code * 40 + digit;
        }
        Family(code)
    }

    pub fn name(&self) -> String {
        let mut digits = [0u32; NAME_LEN];
        let mut code = self.0;
        for k in (0..NAME_LEN).rev() {
            digits[k] = code % 40;
            code /= 40;
        }
        digits.iter().take_while(|&&d| d != 0).map(|&d| NAME_ALPHABET[d as usize - 1] as char).collect()
    }

    pub fn is_constant(&self) -> bool {
        static CONSTANT: OnceLock<Vec<Family>> = OnceLock::new();
        CONSTANT.get_or_init(|| CONSTANT_FAMILIES.iter().map(|f| Family::new(f)).collect()).contains(self)
    }
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

const ORDER_BITS: u32 = 11;
const IDX_SHIFT: u32 = 0;
const ARITY_SHIFT: u32 = 24;
const FAMILY_SHIFT: u32 = 26;

/// Generator id: family and up to three indices in −128..=127, packed into
/// one word whose integer order is (family, arity, indices).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GenId(u64);

impl GenId {
    pub fn new(family: &str, index: &[i32]) -> Self {
        assert!(index.len() <= 3, "at most three indices");
        let mut idx = 0u64;
        for k in 0..3 {
            let v = index.get(k).copied().unwrap_or(0);
            assert!((-128..=127).contains(&v), "index out of range");
            idx = (idx << 8) | (v + 128) as u64;
        }
        if index.is_empty() {
            idx = 0;
        }
        let fam = Family::new(family).0 as u64;
        GenId((fam << FAMILY_SHIFT) | ((index.len() as u64) << ARITY_SHIFT) | (idx << IDX_SHIFT))
    }

    pub fn family(&self) -> Family {
        Family((self.0 >> FAMILY_SHIFT) as u32)
    }

    fn arity(&self) -> usize {
        ((self.0 >> ARITY_SHIFT) & 3) as usize
    }

    pub fn index(&self) -> Vec<i32> {
        let n = self.arity();
        (0..n).map(|k| (((self.0 >> (16 - 8 * k)) & 0xff) as i32) - 128).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.family().is_constant()
    }

    /// Plain-text name, e.g. `w_12`, `w_1,10`, `x`.
    pub fn text(&self) -> String {
        let ix = self.index();
        if ix.is_empty() {
            return self.family().name();
        }
        let compact = ix.iter().all(|&v| (0..10).contains(&v));
        let sep = if compact { "" } else { "," };
        let body: Vec<String> = ix.iter().map(|v| v.to_string()).collect();
        format!("{}_{}", self.family().name(), body.join(sep))
    }

    pub fn latex(&self) -> String {
        let fam = self.family().name();
        let name = match fam.as_str() {
            "eps" => "\\epsilon".to_string(),
            other => {
                let (base, sign) = match other.strip_suffix('+') {
                    Some(b) => (b, Some("+")),
                    None => match other.strip_suffix('-') {
                        Some(b) => (b, Some("-")),
                        None => match other.strip_suffix('0') {
                            Some(b) if !b.is_empty() => (b, Some("0")),
                            _ => (other, None),
                        },
                    },
                };
                match sign {
                    Some(s) => format!("{base}_{{{s},"),
                    None => base.to_string(),
                }
            }
        };
        let ix = self.index();
        let body: Vec<String> = ix.iter().map(|v| v.to_string()).collect();
        if name.ends_with(',') {
            format!("{name}{}}}", body.join(""))
        } else if ix.is_empty() {
            name
        } else {
            format!("{name}_{{{}}}", body.join(""))
        }
    }
}

impl fmt::Debug for GenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl fmt::Display for GenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// A generator together with a derivative order, packed into one word.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(u64);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl Var {
    pub fn new(gen: GenId, order: u16) -> Self {
        assert!((order as u32) < (1 << ORDER_BITS), "derivative order too large");
        Var((gen.0 << ORDER_BITS) | order as u64)
    }

    pub fn gen(&self) -> GenId {
        GenId(self.0 >> ORDER_BITS)
    }

    pub fn order(&self) -> u16 {
        (self.0 & ((1 << ORDER_BITS) - 1)) as u16
    }

    /// Same generator, one derivative higher.
    fn bumped(&self) -> Var {
        Var::new(self.gen(), self.order() + 1)
    }

    fn text(&self) -> String {
        let base = self.gen().text();
        match self.order() {
            0 => base,
            1..=3 => format!("{base}{}", "'".repeat(self.order() as usize)),
            n => format!("{base}^({n})"),
        }
    }

    fn latex(&self) -> String {
        let base = self.gen().latex();
        match self.order() {
            0 => base,
            1..=3 => format!("{base}{}", "'".repeat(self.order() as usize)),
            n => format!("{base}^{{({n})}}"),
        }
    }
}

/// Sorted list of (variable, exponent) with positive exponents.
pub type Monomial = SmallVec<[(Var, u16); 4]>;

fn mono_mul(a: &Monomial, b: &Monomial) -> Monomial {
    let mut out = Monomial::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn mono_degree(m: &Monomial) -> u32 {
    m.iter().filter(|(v, _)| !v.gen().is_constant()).map(|&(_, e)| e as u32).sum()
}

/// Unordered sum of terms, turned into a `DiffPoly` once at the end.
#[derive(Default)]
pub struct PolyAcc {
    terms: FxHashMap<Monomial, Rational>,
}

impl PolyAcc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn push(&mut self, m: Monomial, c: Rational) {
        match self.terms.get_mut(&m) {
            Some(v) => *v += &c,
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    /// `self += c * p`.
    pub fn add_scaled(&mut self, p: &DiffPoly, c: &Rational) {
        if c.is_zero() {
            return;
        }
        for (m, v) in &p.terms {
            self.push(m.clone(), v * c);
        }
    }

    /// `self += c * a * b`.
    pub fn add_product(&mut self, a: &DiffPoly, b: &DiffPoly, c: &Rational) {
        if c.is_zero() {
            return;
        }
        for (ma, ca) in &a.terms {
            let cac = ca * c;
            for (mb, cb) in &b.terms {
                self.push(mono_mul(ma, mb), &cac * cb);
            }
        }
    }

    #[doc(hidden)]
    pub fn bench_mono(a: &DiffPoly, b: &DiffPoly) -> (usize, u128, u128) {
        let t = std::time::Instant::now();
        let mut n = 0usize;
        for (ma, _) in &a.terms {
            for (mb, _) in &b.terms {
                n += mono_mul(ma, mb).len();
            }
        }
        let t1 = t.elapsed().as_millis();
        let mut r = Rational::zero();
        for (_, ca) in &a.terms {
            for (_, cb) in &b.terms {
                r += &(ca * cb);
            }
        }
        let _ = r;
        (n, t1, t.elapsed().as_millis() - t1)
    }

    pub fn finish(self) -> DiffPoly {
        let mut v: Vec<(Monomial, Rational)> = self.terms.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        v.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        DiffPoly { terms: v.into_iter().collect() }
    }
}

/// Exact differential polynomial in canonical form.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct DiffPoly {
    terms: BTreeMap<Monomial, Rational>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiffAlgError {
    #[error("polynomial is not a total derivative")]
    NotExact,
}

impl DiffPoly {
    pub fn zero() -> Self {
        DiffPoly { terms: BTreeMap::new() }
    }

    pub fn one() -> Self {
        Self::constant(Rational::one())
    }

    pub fn constant(c: Rational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Monomial::new(), c);
        }
        DiffPoly { terms }
    }

    pub fn int(n: i64) -> Self {
        Self::constant(Rational::from_int(n))
    }

    pub fn var(v: Var) -> Self {
        let mut m = Monomial::new();
        m.push((v, 1));
        let mut terms = BTreeMap::new();
        terms.insert(m, Rational::one());
        DiffPoly { terms }
    }

    /// The generator itself (derivative order 0).
    pub fn gen(g: GenId) -> Self {
        Self::var(Var::new(g, 0))
    }

    /// Shorthand for a generator by family and indices.
    pub fn g(family: &str, index: &[i32]) -> Self {
        Self::gen(GenId::new(family, index))
    }

    /// Builds from (coefficient, monomial) pairs, merging like terms.
    pub fn from_terms<I: IntoIterator<Item = (Monomial, Rational)>>(it: I) -> Self {
        let mut p = DiffPoly::zero();
        for (m, c) in it {
            p.add_term(m, &c);
        }
        p
    }

    fn add_term(&mut self, m: Monomial, c: &Rational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c.clone());
            }
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn as_constant(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => {
                let (m, c) = self.terms.iter().next().unwrap();
                m.is_empty().then(|| c.clone())
            }
            _ => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.as_constant().is_some()
    }

    pub fn constant_term(&self) -> Rational {
        self.terms.get(&Monomial::new()).cloned().unwrap_or_default()
    }

    pub fn scale(&self, c: &Rational) -> DiffPoly {
        if c.is_zero() {
            return DiffPoly::zero();
        }
        DiffPoly { terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect() }
    }

    pub fn add(&self, other: &DiffPoly) -> DiffPoly {
        let (big, small) = if self.terms.len() >= other.terms.len() { (self, other) } else { (other, self) };
        let mut out = big.clone();
        for (m, c) in &small.terms {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn add_assign(&mut self, other: &DiffPoly) {
        for (m, c) in &other.terms {
            self.add_term(m.clone(), c);
        }
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &DiffPoly, c: &Rational) {
        if c.is_zero() {
            return;
        }
        for (m, v) in &other.terms {
            self.add_term(m.clone(), &(v * c));
        }
    }

    pub fn sub(&self, other: &DiffPoly) -> DiffPoly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), &-c);
        }
        out
    }

    pub fn neg(&self) -> DiffPoly {
        self.scale(&-Rational::one())
    }

    pub fn mul(&self, other: &DiffPoly) -> DiffPoly {
        if self.is_zero() || other.is_zero() {
            return DiffPoly::zero();
        }
        if let Some(c) = self.as_constant() {
            return other.scale(&c);
        }
        if let Some(c) = other.as_constant() {
            return self.scale(&c);
        }
        let mut acc = PolyAcc::new();
        acc.add_product(self, other, &Rational::one());
        acc.finish()
    }

    pub fn pow(&self, e: u32) -> DiffPoly {
        let mut acc = DiffPoly::one();
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    /// Total derivative ∂.
    pub fn derivative(&self) -> DiffPoly {
        let mut acc: FxHashMap<Monomial, Rational> = FxHashMap::default();
        for (m, c) in &self.terms {
            for (pos, &(v, e)) in m.iter().enumerate() {
                if v.gen().is_constant() {
                    continue;
                }
                let dv = v.bumped();
                let mut nm = Monomial::with_capacity(m.len() + 1);
                for (q, &(w, f)) in m.iter().enumerate() {
                    if q == pos {
                        if e > 1 {
                            nm.push((w, e - 1));
                        }
                    } else {
                        nm.push((w, f));
                    }
                }
                let nm = mono_mul(&nm, &smallvec::smallvec![(dv, 1)]);
                let coeff = c * &Rational::from_int(e as i64);
                match acc.get_mut(&nm) {
                    Some(x) => *x += &coeff,
                    None => {
                        acc.insert(nm, coeff);
                    }
                }
            }
        }
        DiffPoly { terms: acc.into_iter().filter(|(_, c)| !c.is_zero()).collect() }
    }

    pub fn nth_derivative(&self, n: u32) -> DiffPoly {
        let mut p = self.clone();
        for _ in 0..n {
            if p.is_zero() {
                break;
            }
            p = p.derivative();
        }
        p
    }

    /// Partial derivative with respect to a variable.
    pub fn partial(&self, v: Var) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (m, c) in &self.terms {
            if let Some(pos) = m.iter().position(|(w, _)| *w == v) {
                let e = m[pos].1;
                let mut nm = m.clone();
                if e == 1 {
                    nm.remove(pos);
                } else {
                    nm[pos].1 = e - 1;
                }
                out.add_term(nm, &(c * &Rational::from_int(e as i64)));
            }
        }
        out
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.terms.keys().flat_map(|m| m.iter().map(|(v, _)| *v)).collect()
    }

    pub fn gens(&self) -> BTreeSet<GenId> {
        self.terms.keys().flat_map(|m| m.iter().map(|(v, _)| v.gen())).collect()
    }

    /// Terms of total degree `d` in the jet variables of `g`.
    pub fn homogeneous_in(&self, g: GenId, d: u32) -> DiffPoly {
        DiffPoly {
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.iter().filter(|(v, _)| v.gen() == g).map(|&(_, e)| e as u32).sum::<u32>() == d)
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn max_order(&self, g: GenId) -> Option<u16> {
        self.vars().into_iter().filter(|v| v.gen() == g).map(|v| v.order()).max()
    }

    /// Polynomial degree counting only non-constant generators.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(mono_degree).max().unwrap_or(0)
    }

    /// Variational derivative δp/δg = Σ (−∂)ⁿ ∂p/∂g⁽ⁿ⁾.
    pub fn euler(&self, g: GenId) -> DiffPoly {
        if g.is_constant() {
            return DiffPoly::zero();
        }
        let mut out = DiffPoly::zero();
        for v in self.vars().into_iter().filter(|v| v.gen() == g) {
            let mut t = self.partial(v).nth_derivative(v.order() as u32);
            if v.order() % 2 == 1 {
                t = t.neg();
            }
            out.add_assign(&t);
        }
        out
    }

    /// True iff every variational derivative vanishes, i.e. p ∈ ∂𝒱 ⊕ 𝔽.
    pub fn is_total_derivative_mod_constants(&self) -> bool {
        self.gens().into_iter().filter(|g| !g.is_constant()).all(|g| self.euler(g).is_zero())
    }

    /// Returns q with ∂q = p and no constant term.
    pub fn antiderivative(&self) -> Result<DiffPoly, DiffAlgError> {
        let mut by_degree: BTreeMap<u32, DiffPoly> = BTreeMap::new();
        for (m, c) in &self.terms {
            by_degree.entry(mono_degree(m)).or_default().add_term(m.clone(), c);
        }
        let mut q = DiffPoly::zero();
        for (d, part) in by_degree {
            if d == 0 {
                return Err(DiffAlgError::NotExact);
            }
            // d·p = ∂H + Σ_g g·E_g(p) with H = Σ g^{(j)} (−∂)^{k−1−j} ∂p/∂g^{(k)}.
            let mut h = DiffPoly::zero();
            for v in part.vars() {
                if v.gen().is_constant() || v.order() == 0 {
                    continue;
                }
                let dp = part.partial(v);
                let k = v.order() as u32;
                for j in 0..k {
                    let mut t = dp.nth_derivative(k - 1 - j);
                    if (k - 1 - j) % 2 == 1 {
                        t = t.neg();
                    }
                    h.add_assign(&DiffPoly::var(Var::new(v.gen(), j as u16)).mul(&t));
                }
            }
            q.add_assign(&h.scale(&Rational::new(1, d as i64)));
        }
        if q.derivative() != *self {
            return Err(DiffAlgError::NotExact);
        }
        Ok(q)
    }

    /// Homomorphic substitution g ↦ map(g); generators absent from the map are kept.
    pub fn substitute(&self, map: &BTreeMap<GenId, DiffPoly>) -> DiffPoly {
        if !self.gens().iter().any(|g| map.contains_key(g)) {
            return self.clone();
        }
        let mut images: HashMap<Var, Vec<DiffPoly>> = HashMap::new();
        let mut out = PolyAcc::new();
        for (m, c) in &self.terms {
            let mut acc = DiffPoly::constant(c.clone());
            let mut kept = Monomial::new();
            for &(v, e) in m.iter() {
                match map.get(&v.gen()) {
                    None => kept.push((v, e)),
                    Some(img) => {
                        let powers = images.entry(v).or_insert_with(|| vec![DiffPoly::one(), img.nth_derivative(v.order() as u32)]);
                        while powers.len() <= e as usize {
                            let next = powers.last().unwrap().mul(&powers[1]);
                            powers.push(next);
                        }
                        acc = acc.mul(&powers[e as usize]);
                    }
                }
                if acc.is_zero() {
                    break;
                }
            }
            if acc.is_zero() {
                continue;
            }
            if !kept.is_empty() {
                acc = acc.mul(&DiffPoly { terms: std::iter::once((kept, Rational::one())).collect() });
            }
            out.add_scaled(&acc, &Rational::one());
        }
        out.finish()
    }

    /// Σ_{g,n} ∂p/∂g⁽ⁿ⁾ · ∂ⁿ(dir(g)); generators missing from `dir` have zero direction.
    pub fn frechet(&self, dir: &BTreeMap<GenId, DiffPoly>) -> DiffPoly {
        let mut out = DiffPoly::zero();
        let mut derivs: HashMap<(GenId, u16), DiffPoly> = HashMap::new();
        for v in self.vars() {
            let Some(d) = dir.get(&v.gen()) else { continue };
            let dn = derivs.entry((v.gen(), v.order())).or_insert_with(|| d.nth_derivative(v.order() as u32)).clone();
            if dn.is_zero() {
                continue;
            }
            out.add_assign(&self.partial(v).mul(&dn));
        }
        out
    }

    /// Terms of a given polynomial degree.
    pub fn homogeneous_part(&self, d: u32) -> DiffPoly {
        DiffPoly { terms: self.terms.iter().filter(|(m, _)| mono_degree(m) == d).map(|(m, c)| (m.clone(), c.clone())).collect() }
    }

    fn display_order(&self) -> Vec<(&Monomial, &Rational)> {
        let mut v: Vec<_> = self.terms.iter().collect();
        v.sort_by(|a, b| {
            let wa: u32 = a.0.iter().map(|(v, e)| (v.order() as u32 + 1) * *e as u32).sum();
            let wb: u32 = b.0.iter().map(|(v, e)| (v.order() as u32 + 1) * *e as u32).sum();
            mono_degree(b.0).cmp(&mono_degree(a.0)).then(wb.cmp(&wa)).then(a.0.cmp(b.0))
        });
        v
    }

    fn render(&self, latex: bool) -> String {
        if self.is_zero() {
            return "0".into();
        }
        let mut s = String::new();
        for (i, (m, c)) in self.display_order().into_iter().enumerate() {
            let neg = c.is_negative();
            let a = c.abs();
            if i == 0 {
                if neg {
                    s.push('-');
                }
            } else {
                s.push_str(if neg { " - " } else { " + " });
            }
            let body: Vec<String> = m
                .iter()
                .map(|(v, e)| {
                    let base = if latex { v.latex() } else { v.text() };
                    match (*e, latex) {
                        (1, _) => base,
                        (e, false) => format!("{base}^{e}"),
                        (e, true) => {
                            if v.order() > 0 {
                                format!("({base})^{{{e}}}")
                            } else {
                                format!("{base}^{{{e}}}")
                            }
                        }
                    }
                })
                .collect();
            let coeff = if latex && !a.is_integer() {
                format!("\\frac{{{}}}{{{}}}", a.numer(), a.denom())
            } else {
                a.to_string()
            };
            if body.is_empty() {
                s.push_str(&coeff);
            } else {
                if !a.is_one() {
                    s.push_str(&coeff);
                    s.push_str(if latex { " " } else { "*" });
                }
                s.push_str(&body.join(if latex { " " } else { "*" }));
            }
        }
        s
    }

    pub fn to_latex(&self) -> String {
        self.render(true)
    }
}

impl fmt::Display for DiffPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(false))
    }
}

impl fmt::Debug for DiffPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(false))
    }
}

impl From<Rational> for DiffPoly {
    fn from(c: Rational) -> Self {
        DiffPoly::constant(c)
    }
}

macro_rules! poly_ops {
    ($tr:ident, $m:ident, $f:ident) => {
        impl std::ops::$tr<&DiffPoly> for &DiffPoly {
            type Output = DiffPoly;
            fn $m(self, rhs: &DiffPoly) -> DiffPoly {
                DiffPoly::$f(self, rhs)
            }
        }
        impl std::ops::$tr<DiffPoly> for DiffPoly {
            type Output = DiffPoly;
            fn $m(self, rhs: DiffPoly) -> DiffPoly {
                DiffPoly::$f(&self, &rhs)
            }
        }
    };
}
poly_ops!(Add, add, add);
poly_ops!(Sub, sub, sub);
poly_ops!(Mul, mul, mul);

impl std::ops::Neg for &DiffPoly {
    type Output = DiffPoly;
    fn neg(self) -> DiffPoly {
        DiffPoly::neg(self)
    }
}

/// Single-generator substitution map.
pub fn subst_map<I: IntoIterator<Item = (GenId, DiffPoly)>>(it: I) -> BTreeMap<GenId, DiffPoly> {
    it.into_iter().collect()
}

// --- JSON -----------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct MonoJson {
    c: Rational,
    vars: Vec<(String, Vec<i32>, u16, u16)>,
}

impl serde::Serialize for DiffPoly {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<MonoJson> = self
            .terms
            .iter()
            .map(|(m, c)| MonoJson {
                c: c.clone(),
                vars: m.iter().map(|(v, e)| (v.gen().family().name(), v.gen().index(), v.order(), *e)).collect(),
            })
            .collect();
        list.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for DiffPoly {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let list = Vec::<MonoJson>::deserialize(d)?;
        let mut p = DiffPoly::zero();
        for mj in list {
            let mut m = Monomial::new();
            for (fam, ix, ord, e) in mj.vars {
                if fam.is_empty() || fam.len() > NAME_LEN || ix.len() > 3 || e == 0 {
                    return Err(serde::de::Error::custom("malformed variable"));
                }
                m = mono_mul(&m, &smallvec::smallvec![(Var::new(GenId::new(&fam, &ix), ord), e)]);
            }
            p.add_term(m, &mj.c);
        }
        Ok(p)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rational::q;
    use proptest::prelude::*;

    pub fn w() -> GenId {
        GenId::new("w", &[])
    }
    pub fn wv(n: u16) -> DiffPoly {
        DiffPoly::var(Var::new(w(), n))
    }
    fn x() -> GenId {
        GenId::new("x", &[])
    }
    fn xv(n: u16) -> DiffPoly {
        DiffPoly::var(Var::new(x(), n))
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(wv(0).pow(2).derivative(), wv(0).mul(&wv(1)).scale(&q(2, 1)));
        assert!(DiffPoly::int(5).derivative().is_zero());
        assert_eq!(wv(0).mul(&wv(1)).derivative(), wv(1).pow(2).add(&wv(0).mul(&wv(2))));
        let eps = DiffPoly::g("eps", &[]);
        assert!(eps.derivative().is_zero());
    }

    #[test]
    fn euler_examples() {
        assert!(wv(0).mul(&wv(1)).euler(w()).is_zero());
        assert_eq!(wv(0).pow(2).euler(w()), wv(0).scale(&q(2, 1)));
        // E(w w'') = w'' + ∂²(w) = 2w''.
        assert_eq!(wv(0).mul(&wv(2)).euler(w()), wv(2).scale(&q(2, 1)));
    }

    #[test]
    fn antiderivative_examples() {
        assert_eq!(wv(0).mul(&wv(1)).scale(&q(2, 1)).antiderivative().unwrap(), wv(0).pow(2));
        assert_eq!(wv(3).antiderivative().unwrap(), wv(2));
        assert_eq!(wv(0).antiderivative(), Err(DiffAlgError::NotExact));
        assert_eq!(DiffPoly::int(1).antiderivative(), Err(DiffAlgError::NotExact));
        let eps = DiffPoly::g("eps", &[]);
        assert_eq!(eps.mul(&wv(1)).antiderivative().unwrap(), eps.mul(&wv(0)));
    }

    #[test]
    fn substitute_examples() {
        let img = xv(0).pow(2).add(&xv(1));
        let out = wv(2).substitute(&subst_map([(w(), img)]));
        let expect = xv(1).pow(2).scale(&q(2, 1)).add(&xv(0).mul(&xv(2)).scale(&q(2, 1))).add(&xv(3));
        assert_eq!(out, expect);
        assert_eq!(wv(0).substitute(&subst_map([(w(), wv(0))])), wv(0));
        assert!(wv(0).pow(2).substitute(&subst_map([(w(), DiffPoly::zero())])).is_zero());
    }

    #[test]
    fn frechet_examples() {
        let v = GenId::new("v", &[]);
        assert_eq!(wv(0).pow(2).frechet(&subst_map([(w(), wv(1))])), wv(0).mul(&wv(1)).scale(&q(2, 1)));
        assert_eq!(wv(2).frechet(&subst_map([(w(), DiffPoly::gen(v))])), DiffPoly::var(Var::new(v, 2)));
        let p = wv(0).mul(&wv(2));
        assert_eq!(p.frechet(&subst_map([(w(), wv(1))])), wv(1).mul(&wv(2)).add(&wv(0).mul(&wv(3))));
    }

    #[test]
    fn json_roundtrip_and_text() {
        let p = wv(0).pow(2).scale(&q(-1, 4)).add(&DiffPoly::g("w", &[1, 2]).mul(&wv(5))).add(&DiffPoly::int(3));
        let s = serde_json::to_string(&p).unwrap();
        let back: DiffPoly = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert_eq!(wv(0).pow(2).scale(&q(-1, 4)).to_string(), "-1/4*w^2");
        assert_eq!(DiffPoly::g("w", &[1, 12]).to_string(), "w_1,12");
    }

    pub fn arb_poly() -> impl Strategy<Value = DiffPoly> {
        let var = (0usize..2, 0u16..3);
        let mono = (prop::collection::vec((var, 1u16..3), 0..3), -5i64..6, 1i64..4);
        prop::collection::vec(mono, 0..5).prop_map(|terms| {
            let mut p = DiffPoly::zero();
            for (vars, n, d) in terms {
                let mut t = DiffPoly::constant(q(n, d));
                for ((g, o), e) in vars {
                    let gen = if g == 0 { w() } else { x() };
                    t = t.mul(&DiffPoly::var(Var::new(gen, o)).pow(e as u32));
                }
                p.add_assign(&t);
            }
            p
        })
    }

    proptest! {
        #[test]
        fn euler_kills_derivatives(p in arb_poly()) {
            let dp = p.derivative();
            prop_assert!(dp.euler(w()).is_zero());
            prop_assert!(dp.euler(x()).is_zero());
        }

        #[test]
        fn antiderivative_inverts_derivative(p in arb_poly()) {
            let p0 = p.sub(&DiffPoly::constant(p.constant_term()));
            prop_assert_eq!(p0.derivative().antiderivative().unwrap(), p0);
        }

        #[test]
        fn leibniz(p in arb_poly(), r in arb_poly()) {
            prop_assert_eq!(p.mul(&r).derivative(), p.derivative().mul(&r).add(&p.mul(&r.derivative())));
        }

        #[test]
        fn frechet_along_derivative(p in arb_poly()) {
            let dir = subst_map([(w(), wv(1)), (x(), xv(1))]);
            prop_assert_eq!(p.frechet(&dir), p.derivative());
        }

        #[test]
        fn substitution_is_differential_homomorphism(p in arb_poly(), r in arb_poly(), img in arb_poly()) {
            let map = subst_map([(w(), img)]);
            prop_assert_eq!(p.mul(&r).substitute(&map), p.substitute(&map).mul(&r.substitute(&map)));
            prop_assert_eq!(p.derivative().substitute(&map), p.substitute(&map).derivative());
        }

        #[test]
        fn json_roundtrip(p in arb_poly()) {
            let s = serde_json::to_string(&p).unwrap();
            let back: DiffPoly = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
