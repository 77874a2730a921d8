//! Scalar pseudodifferential operators Σ aₙ∂ⁿ with differential-polynomial
//! coefficients, truncated below a certified floor.
//!
//! `floor == None` marks an exact operator: every coefficient not stored is
//! zero. Otherwise coefficients below the floor are unknown and every
//! operation propagates the floor it can certify.

use std::collections::{BTreeMap, HashMap};

use crate::diffalg::PolyAcc;
use std::fmt;

use crate::diffalg::DiffPoly;
use crate::rational::Rational;

/// Depth used when an exact product would otherwise be an infinite series.
pub const DEFAULT_DEPTH: i32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PdoError {
    #[error("coefficient of ∂^{needed} requested below certified floor {floor}")]
    FloorTooHigh { needed: i32, floor: i32 },
    #[error("no coefficient survives the requested window")]
    EmptyWindow,
    #[error("leading coefficient is not a constant")]
    NonConstantLeading,
    #[error("operator is zero")]
    ZeroOperator,
    #[error("operator is not monic of the requested order")]
    NotMonic,
}

impl PdoError {
    /// True when the failure comes from a truncation window that is too shallow.
    pub fn is_window(&self) -> bool {
        matches!(self, PdoError::FloorTooHigh { .. } | PdoError::EmptyWindow)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct ScalarPDO {
    coeffs: BTreeMap<i32, DiffPoly>,
    floor: Option<i32>,
}

fn max_floor(a: Option<i32>, b: Option<i32>) -> Option<i32> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Lazily extended list of derivatives of one polynomial.
struct Derivs(Vec<DiffPoly>);

impl Derivs {
    fn new(p: &DiffPoly) -> Self {
        Derivs(vec![p.clone()])
    }
    fn get(&mut self, k: usize) -> &DiffPoly {
        while self.0.len() <= k {
            let next = self.0.last().unwrap().derivative();
            self.0.push(next);
        }
        &self.0[k]
    }
    fn vanishes_from(&mut self, k: usize) -> bool {
        self.get(k).is_zero()
    }
}

impl ScalarPDO {
    pub fn zero() -> Self {
        ScalarPDO { coeffs: BTreeMap::new(), floor: None }
    }

    pub fn one() -> Self {
        Self::from_poly(DiffPoly::one())
    }

    /// Builds an operator from coefficients; `floor == None` means exact.
    pub fn new(coeffs: BTreeMap<i32, DiffPoly>, floor: Option<i32>) -> Self {
        let coeffs = coeffs.into_iter().filter(|(p, c)| !c.is_zero() && floor.map_or(true, |f| *p >= f)).collect();
        ScalarPDO { coeffs, floor }
    }

    pub fn exact<I: IntoIterator<Item = (i32, DiffPoly)>>(terms: I) -> Self {
        let mut coeffs: BTreeMap<i32, DiffPoly> = BTreeMap::new();
        for (p, c) in terms {
            let e = coeffs.entry(p).or_default();
            e.add_assign(&c);
        }
        Self::new(coeffs, None)
    }

    /// Multiplication operator by a function.
    pub fn from_poly(p: DiffPoly) -> Self {
        Self::exact([(0, p)])
    }

    pub fn constant(c: Rational) -> Self {
        Self::from_poly(DiffPoly::constant(c))
    }

    /// ∂ⁿ for any integer n, exact.
    pub fn d_pow(n: i32) -> Self {
        Self::exact([(n, DiffPoly::one())])
    }

    pub fn d() -> Self {
        Self::d_pow(1)
    }

    /// c·∂ⁿ.
    pub fn monomial(c: DiffPoly, n: i32) -> Self {
        Self::exact([(n, c)])
    }

    pub fn floor(&self) -> Option<i32> {
        self.floor
    }

    pub fn is_exact(&self) -> bool {
        self.floor.is_none()
    }

    /// Highest power with a nonzero stored coefficient.
    pub fn top(&self) -> Option<i32> {
        self.coeffs.keys().next_back().copied()
    }

    /// Lowest stored power.
    pub fn bottom(&self) -> Option<i32> {
        self.coeffs.keys().next().copied()
    }

    pub fn is_zero_known(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty() && self.floor.is_none()
    }

    pub fn has_negative_powers(&self) -> bool {
        self.bottom().map_or(false, |b| b < 0)
    }

    pub fn is_differential(&self) -> bool {
        !self.has_negative_powers()
    }

    pub fn coeffs(&self) -> &BTreeMap<i32, DiffPoly> {
        &self.coeffs
    }

    /// Coefficient of ∂ⁿ, erroring below the certified floor.
    pub fn coeff(&self, n: i32) -> Result<DiffPoly, PdoError> {
        if let Some(f) = self.floor {
            if n < f {
                return Err(PdoError::FloorTooHigh { needed: n, floor: f });
            }
        }
        Ok(self.coeffs.get(&n).cloned().unwrap_or_default())
    }

    /// Coefficient of ∂ⁿ ignoring certification (zero if absent).
    pub fn raw_coeff(&self, n: i32) -> DiffPoly {
        self.coeffs.get(&n).cloned().unwrap_or_default()
    }

    pub fn leading(&self) -> Option<(i32, &DiffPoly)> {
        self.coeffs.iter().next_back().map(|(p, c)| (*p, c))
    }

    /// Raises the floor, discarding coefficients below it.
    pub fn truncate(&self, floor: i32) -> Self {
        let f = max_floor(self.floor, Some(floor));
        Self::new(self.coeffs.clone(), f)
    }

    /// Declares an exact operator as known only down to `floor`.
    pub fn with_floor(&self, floor: Option<i32>) -> Self {
        Self::new(self.coeffs.clone(), floor)
    }

    pub fn map_coeffs<F: Fn(&DiffPoly) -> DiffPoly>(&self, f: F) -> Self {
        Self::new(self.coeffs.iter().map(|(p, c)| (*p, f(c))).collect(), self.floor)
    }

    pub fn add(&self, o: &ScalarPDO) -> ScalarPDO {
        let floor = max_floor(self.floor, o.floor);
        let mut coeffs = self.coeffs.clone();
        for (p, c) in &o.coeffs {
            coeffs.entry(*p).or_default().add_assign(c);
        }
        Self::new(coeffs, floor)
    }

    pub fn sub(&self, o: &ScalarPDO) -> ScalarPDO {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> ScalarPDO {
        self.scale(&-Rational::one())
    }

    pub fn scale(&self, c: &Rational) -> ScalarPDO {
        self.map_coeffs(|p| p.scale(c))
    }

    /// Left multiplication by a function (no derivatives involved).
    pub fn lmul_poly(&self, p: &DiffPoly) -> ScalarPDO {
        self.map_coeffs(|c| p.mul(c))
    }

    fn natural_floor(&self, o: &ScalarPDO) -> Option<Option<i32>> {
        // Outer None: product is exactly zero.
        let ta = self.top().or(self.floor.map(|f| f - 1));
        let tb = o.top().or(o.floor.map(|f| f - 1));
        let (ta, tb) = match (ta, tb) {
            (Some(a), Some(b)) => (a, b),
            _ => return None,
        };
        let fa = self.floor.map(|f| f + tb);
        let fb = o.floor.map(|f| ta + f);
        Some(max_floor(fa, fb))
    }

    /// Product truncated at `limit` (in addition to the certified floor).
    pub fn mul_to(&self, o: &ScalarPDO, limit: Option<i32>) -> ScalarPDO {
        let Some(natural) = self.natural_floor(o) else { return ScalarPDO::zero() };
        let mut floor = max_floor(natural, limit);
        if floor.is_none() && self.has_negative_powers() && o.coeffs.values().any(|c| !c.is_constant()) {
            let t = self.top().unwrap_or(0) + o.top().unwrap_or(0);
            floor = Some(t - DEFAULT_DEPTH);
        }
        let mut acc: BTreeMap<i32, PolyAcc> = BTreeMap::new();
        let mut derivs: HashMap<i32, Derivs> = HashMap::new();
        for (&i, ai) in self.coeffs.iter().rev() {
            for (&j, bj) in o.coeffs.iter().rev() {
                let dj = derivs.entry(j).or_insert_with(|| Derivs::new(bj));
                let mut k: u32 = 0;
                loop {
                    let p = i + j - k as i32;
                    if floor.map_or(false, |f| p < f) {
                        break;
                    }
                    if i >= 0 && k as i32 > i {
                        break;
                    }
                    if dj.vanishes_from(k as usize) {
                        break;
                    }
                    let c = Rational::binomial(i as i64, k);
                    acc.entry(p).or_default().add_product(ai, dj.get(k as usize), &c);
                    k += 1;
                }
            }
        }
        Self::new(acc.into_iter().map(|(p, a)| (p, a.finish())).collect(), floor)
    }

    pub fn mul(&self, o: &ScalarPDO) -> ScalarPDO {
        self.mul_to(o, None)
    }

    /// Formal adjoint Σ (−∂)ⁿ ∘ aₙ.
    pub fn star(&self) -> ScalarPDO {
        let mut floor = self.floor;
        if floor.is_none() && self.has_negative_powers() && self.coeffs.values().any(|c| !c.is_constant()) {
            floor = Some(self.top().unwrap_or(0) - DEFAULT_DEPTH);
        }
        let mut acc: BTreeMap<i32, DiffPoly> = BTreeMap::new();
        for (&n, an) in &self.coeffs {
            let mut d = Derivs::new(an);
            let sign = if n.rem_euclid(2) == 1 { -Rational::one() } else { Rational::one() };
            let mut k: u32 = 0;
            loop {
                let p = n - k as i32;
                if floor.map_or(false, |f| p < f) || (n >= 0 && k as i32 > n) || d.vanishes_from(k as usize) {
                    break;
                }
                let c = &Rational::binomial(n as i64, k) * &sign;
                acc.entry(p).or_default().add_assign(&d.get(k as usize).scale(&c));
                k += 1;
            }
        }
        Self::new(acc, floor)
    }

    /// Differential part; requires every nonnegative coefficient to be certified.
    pub fn plus(&self) -> Result<ScalarPDO, PdoError> {
        if let Some(f) = self.floor {
            if f > 0 {
                return Err(PdoError::FloorTooHigh { needed: 0, floor: f });
            }
        }
        Ok(Self::new(self.coeffs.range(0..).map(|(p, c)| (*p, c.clone())).collect(), None))
    }

    pub fn minus(&self) -> Result<ScalarPDO, PdoError> {
        if let Some(f) = self.floor {
            if f > -1 {
                return Err(PdoError::FloorTooHigh { needed: -1, floor: f });
            }
        }
        Ok(Self::new(self.coeffs.range(..0).map(|(p, c)| (*p, c.clone())).collect(), self.floor))
    }

    pub fn residue(&self) -> Result<DiffPoly, PdoError> {
        self.coeff(-1)
    }

    /// Inverse for an operator with constant leading coefficient.
    pub fn invert(&self, want_floor: i32) -> Result<ScalarPDO, PdoError> {
        let Some((t, lead)) = self.leading() else { return Err(PdoError::ZeroOperator) };
        let c = lead.as_constant().ok_or(PdoError::NonConstantLeading)?;
        if c.is_zero() {
            return Err(PdoError::ZeroOperator);
        }
        let cinv = c.recip();
        let mut floor = want_floor;
        if let Some(fa) = self.floor {
            floor = floor.max(fa - 2 * t);
        }
        if floor > -t {
            return Err(PdoError::EmptyWindow);
        }
        if self.coeffs.len() == 1 && lead.is_constant() {
            let fl = if self.is_exact() { None } else { Some(floor) };
            return Ok(Self::new([(-t, DiffPoly::constant(cinv))].into_iter().collect(), fl));
        }
        let mut b: BTreeMap<i32, DiffPoly> = BTreeMap::new();
        let mut derivs: BTreeMap<i32, Derivs> = BTreeMap::new();
        b.insert(-t, DiffPoly::constant(cinv.clone()));
        derivs.insert(-t, Derivs::new(&DiffPoly::constant(cinv.clone())));
        let mut m = 1;
        while -t - m >= floor {
            let target = -m;
            let mut s = PolyAcc::new();
            for (&i, ai) in &self.coeffs {
                for (&j, dj) in derivs.iter_mut() {
                    let k = i + j - target;
                    if k < 0 || (i >= 0 && k > i) {
                        continue;
                    }
                    if (i, j) == (t, -t - m) {
                        continue;
                    }
                    let bd = dj.get(k as usize);
                    if bd.is_zero() {
                        continue;
                    }
                    s.add_product(ai, bd, &(Rational::binomial(i as i64, k as u32) * -&cinv));
                }
            }
            let bj = s.finish();
            derivs.insert(-t - m, Derivs::new(&bj));
            b.insert(-t - m, bj);
            m += 1;
        }
        Ok(Self::new(b, Some(floor)))
    }

    /// Monic K-th root ∂ + Σ_{j≤0} b_j∂^j.
    pub fn kth_root(&self, k: u32, want_floor: i32) -> Result<ScalarPDO, PdoError> {
        let kk = k as i32;
        match self.leading() {
            Some((t, c)) if t == kk && c.as_constant().map_or(false, |v| v.is_one()) => {}
            _ => return Err(PdoError::NotMonic),
        }
        let mut floor = want_floor;
        if let Some(fa) = self.floor {
            floor = floor.max(fa - kk + 1);
        }
        if floor > 1 {
            return Err(PdoError::EmptyWindow);
        }
        let mut b = ScalarPDO::d();
        let mut m = 0;
        while -m >= floor {
            let target = kk - 1 - m;
            let pk = b.power_exact_window(k, target);
            let known = pk.raw_coeff(target);
            let bm = self.raw_coeff(target).sub(&known).scale(&Rational::new(1, kk as i64));
            let mut coeffs = b.coeffs.clone();
            if !bm.is_zero() {
                coeffs.insert(-m, bm);
            }
            b = ScalarPDO::new(coeffs, None);
            m += 1;
        }
        Ok(b.with_floor(Some(floor)))
    }

    /// self^n computed with every stored coefficient treated as exact, keeping powers ≥ limit.
    fn power_exact_window(&self, n: u32, limit: i32) -> ScalarPDO {
        let base = self.with_floor(None);
        let top = base.top().unwrap_or(0).max(0);
        let mut acc = ScalarPDO::one();
        for step in 0..n {
            let remaining = (n - step - 1) as i32;
            acc = acc.mul_to(&base, Some(limit - remaining * top));
        }
        acc
    }

    /// aⁿ for integer n; negative n goes through `invert`.
    pub fn power(&self, n: i32, want_floor: i32) -> Result<ScalarPDO, PdoError> {
        if n == 0 {
            return Ok(ScalarPDO::one());
        }
        let base = if n < 0 {
            let t = self.top().ok_or(PdoError::ZeroOperator)?;
            self.invert(want_floor + (n.abs() - 1) * t)?
        } else {
            self.clone()
        };
        let e = n.unsigned_abs();
        let top = base.top().unwrap_or(0).max(0);
        let mut acc = base.clone();
        for step in 1..e {
            let remaining = (e - step - 1) as i32;
            acc = acc.mul_to(&base, Some(want_floor - remaining * top));
        }
        Ok(acc.truncate_if_lower(want_floor))
    }

    fn truncate_if_lower(self, want: i32) -> ScalarPDO {
        match self.floor {
            Some(f) if f >= want => self,
            _ => {
                if self.is_exact() && self.is_differential() {
                    self
                } else {
                    self.truncate(want)
                }
            }
        }
    }

    /// Commutator [a, b] = ab − ba.
    pub fn commutator(&self, o: &ScalarPDO) -> ScalarPDO {
        self.mul(o).sub(&o.mul(self))
    }

    /// Equality on the common certified window.
    pub fn eq_within(&self, o: &ScalarPDO) -> bool {
        let f = max_floor(self.floor, o.floor);
        let keys: std::collections::BTreeSet<i32> = self.coeffs.keys().chain(o.coeffs.keys()).copied().collect();
        keys.into_iter().filter(|p| f.map_or(true, |fl| *p >= fl)).all(|p| self.raw_coeff(p) == o.raw_coeff(p))
    }

    /// Powers where the two operators differ on their common window.
    pub fn diff_powers(&self, o: &ScalarPDO) -> Vec<i32> {
        let f = max_floor(self.floor, o.floor);
        let keys: std::collections::BTreeSet<i32> = self.coeffs.keys().chain(o.coeffs.keys()).copied().collect();
        keys.into_iter().filter(|p| f.map_or(true, |fl| *p >= fl)).filter(|&p| self.raw_coeff(p) != o.raw_coeff(p)).collect()
    }

    pub fn substitute(&self, map: &BTreeMap<crate::diffalg::GenId, DiffPoly>) -> ScalarPDO {
        self.map_coeffs(|c| c.substitute(map))
    }

    fn render(&self, latex: bool) -> String {
        let dsym = if latex { "\\partial" } else { "∂" };
        let mut parts: Vec<(bool, String)> = Vec::new();
        for (&p, c) in self.coeffs.iter().rev() {
            let dpart = match (p, latex) {
                (0, _) => String::new(),
                (1, _) => dsym.to_string(),
                (p, false) => format!("{dsym}^{p}"),
                (p, true) => format!("{dsym}^{{{p}}}"),
            };
            let body = if latex { c.to_latex() } else { c.to_string() };
            let single = c.len() == 1;
            let (neg, body) = if single && body.starts_with('-') { (true, body[1..].to_string()) } else { (false, body) };
            let text = if p == 0 {
                if single {
                    body
                } else {
                    format!("({body})")
                }
            } else if body == "1" {
                dpart
            } else if single {
                format!("{body}{}{dpart}", if latex { " " } else { "" })
            } else {
                format!("({body}){dpart}")
            };
            parts.push((neg, text));
        }
        let mut s = String::new();
        for (i, (neg, t)) in parts.iter().enumerate() {
            if i == 0 {
                if *neg {
                    s.push('-');
                }
            } else {
                s.push_str(if *neg { " - " } else { " + " });
            }
            s.push_str(t);
        }
        if s.is_empty() {
            s.push('0');
        }
        if let Some(f) = self.floor {
            let o = f - 1;
            if latex {
                s.push_str(&format!(" + O({dsym}^{{{o}}})"));
            } else {
                s.push_str(&format!(" + O({dsym}^{o})"));
            }
        }
        s
    }

    pub fn to_latex(&self) -> String {
        self.render(true)
    }
}

impl fmt::Display for ScalarPDO {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(false))
    }
}

impl fmt::Debug for ScalarPDO {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(false))
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct PdoJson {
    top: Option<i32>,
    floor: Option<i32>,
    coeffs: BTreeMap<i32, DiffPoly>,
}

impl serde::Serialize for ScalarPDO {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PdoJson { top: self.top(), floor: self.floor, coeffs: self.coeffs.clone() }.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for ScalarPDO {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = PdoJson::deserialize(d)?;
        Ok(ScalarPDO::new(j.coeffs, j.floor))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::diffalg::tests::wv;
    use crate::diffalg::{GenId, Var};
    use crate::rational::q;
    use proptest::prelude::*;

    fn p(c: DiffPoly) -> ScalarPDO {
        ScalarPDO::from_poly(c)
    }

    pub fn kdv_l() -> ScalarPDO {
        ScalarPDO::d_pow(2).sub(&p(wv(0)))
    }

    #[test]
    fn leibniz_examples() {
        let r = ScalarPDO::d().mul(&p(wv(0)));
        assert_eq!(r, ScalarPDO::exact([(1, wv(0)), (0, wv(1))]));
        let r = ScalarPDO::d_pow(-1).mul_to(&p(wv(0)), Some(-4));
        let expect = ScalarPDO::new([(-1, wv(0)), (-2, wv(1).neg()), (-3, wv(2)), (-4, wv(3).neg())].into_iter().collect(), Some(-4));
        assert_eq!(r, expect);
        let sq = kdv_l().mul(&kdv_l());
        let expect = ScalarPDO::exact([
            (4, DiffPoly::one()),
            (2, wv(0).scale(&q(-2, 1))),
            (1, wv(1).scale(&q(-2, 1))),
            (0, wv(0).pow(2).sub(&wv(2))),
        ]);
        assert_eq!(sq, expect);
    }

    #[test]
    fn star_examples() {
        assert_eq!(kdv_l().star(), kdv_l());
        let a = ScalarPDO::monomial(wv(0), 1);
        assert_eq!(a.star(), ScalarPDO::exact([(1, wv(0).neg()), (0, wv(1).neg())]));
        let kk = ScalarPDO::exact([(3, DiffPoly::one()), (1, wv(0).neg()), (0, wv(1).scale(&q(-1, 2)))]);
        assert_eq!(kk.star(), kk.neg());
    }

    #[test]
    fn parts_and_residue() {
        let l = ScalarPDO::exact([(2, DiffPoly::one()), (0, wv(0).neg()), (-1, wv(1).scale(&q(-1, 2)))]);
        assert_eq!(l.plus().unwrap(), kdv_l());
        assert_eq!(l.residue().unwrap(), wv(1).scale(&q(-1, 2)));
        assert_eq!(ScalarPDO::d().residue().unwrap(), DiffPoly::zero());
        assert!(ScalarPDO::d().minus().unwrap().is_zero());
        assert_eq!(ScalarPDO::monomial(wv(0), -1).residue().unwrap(), wv(0));
        let trunc = l.truncate(0);
        assert_eq!(trunc.residue(), Err(PdoError::FloorTooHigh { needed: -1, floor: 0 }));
    }

    #[test]
    fn invert_examples() {
        assert_eq!(ScalarPDO::d().invert(-10).unwrap().raw_coeff(-1), DiffPoly::one());
        let x = DiffPoly::g("x", &[]);
        let xv = |n| DiffPoly::var(Var::new(GenId::new("x", &[]), n));
        let a = ScalarPDO::d().add(&p(x.clone()));
        let inv = a.invert(-8).unwrap();
        assert_eq!(inv.raw_coeff(-1), DiffPoly::one());
        assert_eq!(inv.raw_coeff(-2), x.neg());
        assert_eq!(inv.raw_coeff(-3), x.pow(2).add(&xv(1)));
        let prod = a.mul(&inv);
        assert!(prod.eq_within(&ScalarPDO::one()));
        assert_eq!(prod.floor(), Some(-7));
        assert_eq!(ScalarPDO::constant(q(2, 1)).invert(-3).unwrap().raw_coeff(0), DiffPoly::constant(q(1, 2)));
        assert_eq!(ScalarPDO::monomial(x, 1).invert(-3), Err(PdoError::NonConstantLeading));
        assert_eq!(ScalarPDO::zero().invert(-3), Err(PdoError::ZeroOperator));
    }

    #[test]
    fn kdv_root() {
        let b = kdv_l().kth_root(2, -6).unwrap();
        assert_eq!(b.raw_coeff(1), DiffPoly::one());
        assert!(b.raw_coeff(0).is_zero());
        assert_eq!(b.raw_coeff(-1), wv(0).scale(&q(-1, 2)));
        assert_eq!(b.raw_coeff(-2), wv(1).scale(&q(1, 4)));
        assert_eq!(b.raw_coeff(-3), wv(0).pow(2).add(&wv(2)).scale(&q(-1, 8)));
        let b2 = b.power(2, -6).unwrap();
        assert!(b2.eq_within(&kdv_l()));
        let b3 = b.power(3, -3).unwrap();
        assert_eq!(b3.raw_coeff(3), DiffPoly::one());
        assert_eq!(b3.raw_coeff(1), wv(0).scale(&q(-3, 2)));
        assert_eq!(b3.raw_coeff(0), wv(1).scale(&q(-3, 4)));
        assert_eq!(b3.residue().unwrap(), wv(0).pow(2).scale(&q(3, 8)).sub(&wv(2).scale(&q(1, 8))));
    }

    #[test]
    fn trivial_roots_and_powers() {
        let b = ScalarPDO::d_pow(3).kth_root(3, -5).unwrap();
        assert!(b.eq_within(&ScalarPDO::d()));
        let inv2 = ScalarPDO::d().power(-2, -6).unwrap();
        assert!(inv2.eq_within(&ScalarPDO::d_pow(-2)));
        assert_eq!(kdv_l().neg().kth_root(2, -3), Err(PdoError::NotMonic));
    }

    pub fn arb_pdo() -> impl Strategy<Value = ScalarPDO> {
        let coeff = crate::diffalg::tests::arb_poly();
        (prop::collection::vec(coeff, 1..4), -1i32..3).prop_map(|(cs, top)| {
            let n = cs.len() as i32;
            ScalarPDO::new(cs.into_iter().enumerate().map(|(i, c)| (top - i as i32, c)).collect(), Some(top - n - 2))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn star_is_involutive_antihomomorphism(a in arb_pdo(), b in arb_pdo()) {
            prop_assert!(a.star().star().eq_within(&a));
            let lhs = a.mul(&b).star();
            let rhs = b.star().mul(&a.star());
            prop_assert!(lhs.eq_within(&rhs));
        }

        #[test]
        fn associativity(a in arb_pdo(), b in arb_pdo(), c in arb_pdo()) {
            prop_assert!(a.mul(&b).mul(&c).eq_within(&a.mul(&b.mul(&c))));
        }

        #[test]
        fn residue_trace_symmetry(a in arb_pdo(), b in arb_pdo()) {
            let ab = a.mul(&b);
            let ba = b.mul(&a);
            if let (Ok(r1), Ok(r2)) = (ab.residue(), ba.residue()) {
                prop_assert!(r1.sub(&r2).is_total_derivative_mod_constants());
            }
        }

        #[test]
        fn root_roundtrip(cs in prop::collection::vec(crate::diffalg::tests::arb_poly(), 1..3), k in 1u32..4) {
            let mut l = ScalarPDO::d_pow(k as i32);
            for (i, c) in cs.into_iter().enumerate() {
                l = l.add(&ScalarPDO::monomial(c, k as i32 - 2 - i as i32));
            }
            let b = l.kth_root(k, -4).unwrap();
            prop_assert!(b.power(k as i32, -4).unwrap().eq_within(&l));
        }
    }
}
