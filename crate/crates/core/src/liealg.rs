//! Classical Lie algebras in their defining representations, sl₂-triples,
//! gradings and the nilpotent catalog used by the Lax constructions.

use std::fmt;

use crate::diffalg::GenId;
use crate::matpsdo::{t_condition, t_sign, BilinearForm};
use crate::qmat::QMat;
use crate::rational::{q, Rational};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LieError {
    #[error("unsupported dimension {0} for this algebra")]
    UnsupportedDimension(usize),
    #[error("unsupported orbit: {0}")]
    UnsupportedOrbit(String),
    #[error("catalog data failed validation: {0}")]
    InvalidData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gl,
    Sl,
    So,
    Sp,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gl => "gl",
            Family::Sl => "sl",
            Family::So => "so",
            Family::Sp => "sp",
        })
    }
}

/// Index involution and sign table used to realize so/sp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    Plain,
    /// i′ = N+1−i, ε_i = (−1)^i.
    BC,
    /// i′ = N−i (i < N), N′ = N.
    D,
    /// i′ = N+1−i, signs mirrored around the middle.
    SoMinimal,
    /// Two chains of lengths 2n+1 and 2n−1.
    So4n,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasisElt {
    pub label: GenId,
    pub mat: QMat,
    pub dual: QMat,
}

/// Parameters (α, β, γ) of the generalized Adler identity, with the adjoint sign η.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdlerParams {
    pub alpha: Rational,
    pub beta: Rational,
    pub gamma: Rational,
    pub eta: Option<i8>,
}

impl AdlerParams {
    pub fn new(alpha: Rational, beta: Rational, gamma: Rational, eta: Option<i8>) -> Self {
        AdlerParams { alpha, beta, gamma, eta }
    }

    pub fn for_family(family: Family, n: usize) -> Self {
        match family {
            Family::Gl => Self::new(Rational::one(), Rational::zero(), Rational::zero(), None),
            Family::Sl => Self::new(Rational::one(), Rational::zero(), q(1, n as i64), None),
            Family::So | Family::Sp => Self::new(q(1, 2), q(1, 2), Rational::zero(), Some(-1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassicalAlgebra {
    pub family: Family,
    pub n: usize,
    pub convention: Convention,
    pub form: Option<BilinearForm>,
    /// ε_i and i′, 0-based storage of 1-based data.
    pub eps: Vec<i8>,
    pub prime: Vec<usize>,
    pub basis: Vec<BasisElt>,
}

fn unit(n: usize, i: usize, j: usize) -> QMat {
    QMat::unit(n, i, j)
}

fn sign(k: i64) -> i8 {
    if k.rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

fn with_duals(mut basis: Vec<BasisElt>) -> Vec<BasisElt> {
    let m = basis.len();
    let mut g = QMat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            g.set(i, j, basis[i].mat.trace_form(&basis[j].mat));
        }
    }
    let gi = g.inverse().expect("trace form is nondegenerate on the basis");
    let n = basis.first().map_or(0, |b| b.mat.rows());
    for j in 0..m {
        let mut d = QMat::zeros(n, n);
        for k in 0..m {
            let c = gi.get(j, k);
            if !c.is_zero() {
                d = d.add(&basis[k].mat.scale(c));
            }
        }
        basis[j].dual = d;
    }
    basis
}

impl ClassicalAlgebra {
    pub fn gl(n: usize) -> Result<Self, LieError> {
        if n == 0 {
            return Err(LieError::UnsupportedDimension(n));
        }
        let mut basis = Vec::new();
        for i in 1..=n {
            for j in 1..=n {
                basis.push(BasisElt { label: GenId::new("e", &[i as i32, j as i32]), mat: unit(n, i, j), dual: unit(n, j, i) });
            }
        }
        Ok(ClassicalAlgebra { family: Family::Gl, n, convention: Convention::Plain, form: None, eps: vec![], prime: vec![], basis })
    }

    /// sl_N with off-diagonal units and e♯_kk = E_kk − 𝟙/N for k < N.
    pub fn sl(n: usize) -> Result<Self, LieError> {
        if n < 2 {
            return Err(LieError::UnsupportedDimension(n));
        }
        let mut basis = Vec::new();
        let inv_n = q(1, n as i64);
        for i in 1..=n {
            for j in 1..=n {
                if i == j {
                    if i < n {
                        let m = unit(n, i, i).sub(&QMat::identity(n).scale(&inv_n));
                        basis.push(BasisElt { label: GenId::new("e", &[i as i32, i as i32]), mat: m, dual: QMat::zeros(n, n) });
                    }
                } else {
                    basis.push(BasisElt { label: GenId::new("e", &[i as i32, j as i32]), mat: unit(n, i, j), dual: QMat::zeros(n, n) });
                }
            }
        }
        Ok(ClassicalAlgebra { family: Family::Sl, n, convention: Convention::Plain, form: None, eps: vec![], prime: vec![], basis: with_duals(basis) })
    }

    fn with_convention(n: usize, convention: Convention) -> Result<Self, LieError> {
        let (eps, prime): (Vec<i8>, Vec<usize>) = match convention {
            Convention::Plain => unreachable!(),
            Convention::BC => ((1..=n).map(|i| sign(i as i64)).collect(), (1..=n).map(|i| n + 1 - i).collect()),
            Convention::D => {
                if n % 2 != 0 || n < 4 {
                    return Err(LieError::UnsupportedDimension(n));
                }
                let h = n / 2;
                let eps = (1..=n).map(|i| if i < n { sign(i as i64) } else { sign(h as i64 + 1) }).collect();
                let prime = (1..=n).map(|i| if i < n { n - i } else { n }).collect();
                (eps, prime)
            }
            Convention::SoMinimal => {
                let h = n / 2;
                let eps = (1..=n).map(|i| if i <= h { sign(i as i64) } else { sign((n + 1 - i) as i64) }).collect();
                (eps, (1..=n).map(|i| n + 1 - i).collect())
            }
            Convention::So4n => {
                if n % 4 != 0 || n == 0 {
                    return Err(LieError::UnsupportedDimension(n));
                }
                let qq = n / 2 + 1;
                let eps = (1..=n).map(|i| if i <= qq { sign(i as i64) } else { sign(i as i64 + 1) }).collect();
                let prime = (1..=n).map(|i| if i <= qq { qq + 1 - i } else { n + 1 + qq - i }).collect();
                (eps, prime)
            }
        };
        let form = BilinearForm::from_signs(&eps, &prime).ok_or(LieError::UnsupportedDimension(n))?;
        let family = if form.parity() == 1 { Family::So } else { Family::Sp };
        let mut alg = ClassicalAlgebra { family, n, convention, form: Some(form), eps, prime, basis: vec![] };
        let pairs: Vec<(usize, usize)> = match convention {
            Convention::BC => {
                let mut v = Vec::new();
                for i in 1..=n {
                    for j in 1..=n {
                        let ip = alg.p(i);
                        if j < ip || (j == ip && n % 2 == 0) {
                            v.push((i, j));
                        }
                    }
                }
                v
            }
            Convention::D => {
                let mut v = Vec::new();
                for i in 1..=n - 2 {
                    for j in 1..alg.p(i) {
                        v.push((i, j));
                    }
                }
                for i in 1..n {
                    v.push((n, i));
                }
                v
            }
            Convention::SoMinimal => {
                let mut v = Vec::new();
                for i in 1..=n {
                    for j in 1..alg.p(i) {
                        v.push((i, j));
                    }
                }
                v
            }
            Convention::So4n => {
                let mut v = Vec::new();
                for i in 1..=n {
                    for j in 1..=n {
                        if !alg.f_elem(i, j).is_zero() && (i, j) <= (alg.p(j), alg.p(i)) {
                            v.push((i, j));
                        }
                    }
                }
                v
            }
            Convention::Plain => unreachable!(),
        };
        let mut basis = Vec::new();
        for (i, j) in pairs {
            let mut m = alg.f_elem(i, j);
            if j == alg.p(i) {
                m = m.scale(&q(1, 2));
            }
            basis.push(BasisElt { label: GenId::new("f", &[i as i32, j as i32]), mat: m, dual: QMat::zeros(n, n) });
        }
        alg.basis = with_duals(basis);
        if alg.basis.len() != alg.expected_dim() {
            return Err(LieError::InvalidData(format!("basis has {} elements", alg.basis.len())));
        }
        Ok(alg)
    }

    /// sp_N (N even) or so_N (N odd) with i′ = N+1−i, ε_i = (−1)^i.
    pub fn bc(n: usize) -> Result<Self, LieError> {
        if n < 2 {
            return Err(LieError::UnsupportedDimension(n));
        }
        Self::with_convention(n, Convention::BC)
    }

    /// so_N, N = 2n ≥ 4, in the principal-nilpotent convention.
    pub fn d(n: usize) -> Result<Self, LieError> {
        Self::with_convention(n, Convention::D)
    }

    pub fn so_minimal(n: usize) -> Result<Self, LieError> {
        if n < 4 {
            return Err(LieError::UnsupportedDimension(n));
        }
        Self::with_convention(n, Convention::SoMinimal)
    }

    /// so_{4m} in the convention adapted to the partition (2m+1, 2m−1).
    pub fn so4n(m: usize) -> Result<Self, LieError> {
        Self::with_convention(4 * m, Convention::So4n)
    }

    pub fn build(family: Family, n: usize) -> Result<Self, LieError> {
        match family {
            Family::Gl => Self::gl(n),
            Family::Sl => Self::sl(n),
            Family::Sp if n % 2 == 0 => Self::bc(n),
            Family::Sp => Err(LieError::UnsupportedDimension(n)),
            Family::So if n % 2 == 1 => Self::bc(n),
            Family::So => Self::d(n),
        }
    }

    fn expected_dim(&self) -> usize {
        let n = self.n;
        match self.family {
            Family::Gl => n * n,
            Family::Sl => n * n - 1,
            Family::So => n * (n - 1) / 2,
            Family::Sp => n * (n + 1) / 2,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// i′ (1-based).
    pub fn p(&self, i: usize) -> usize {
        self.prime[i - 1]
    }

    pub fn epsilon(&self, i: usize) -> i8 {
        self.eps[i - 1]
    }

    /// F_ij = E_ij − ε_iε_j E_{j′i′} (1-based).
    pub fn f_elem(&self, i: usize, j: usize) -> QMat {
        let s = (self.epsilon(i) * self.epsilon(j)) as i64;
        unit(self.n, i, j).sub(&unit(self.n, self.p(j), self.p(i)).scale(&Rational::from_int(s)))
    }

    pub fn dagger(&self, a: &QMat) -> QMat {
        match &self.form {
            Some(f) => f.dagger_const(a),
            None => a.transpose(),
        }
    }

    pub fn contains(&self, m: &QMat) -> bool {
        match self.family {
            Family::Gl => true,
            Family::Sl => m.trace().is_zero(),
            Family::So | Family::Sp => self.dagger(m) == m.scale(&-Rational::one()),
        }
    }

    /// Coordinates of m in the basis: (m|u^j).
    pub fn coords(&self, m: &QMat) -> Vec<Rational> {
        self.basis.iter().map(|b| m.trace_form(&b.dual)).collect()
    }

    pub fn adler_params(&self) -> AdlerParams {
        AdlerParams::for_family(self.family, self.n)
    }

    /// Σ_i U_i ⊗ U^i as an N²×N² matrix.
    pub fn casimir(&self) -> QMat {
        let n = self.n;
        let mut acc = QMat::zeros(n * n, n * n);
        for b in &self.basis {
            acc = acc.add(&b.mat.kron(&b.dual));
        }
        acc
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.family, self.n)
    }
}

/// Ω = Σ E_ij ⊗ E_ji.
pub fn omega(n: usize) -> QMat {
    let mut acc = QMat::zeros(n * n, n * n);
    for i in 1..=n {
        for j in 1..=n {
            acc = acc.add(&unit(n, i, j).kron(&unit(n, j, i)));
        }
    }
    acc
}

/// Ω† = Σ E_ij† ⊗ E_ji.
pub fn omega_dagger(form: &BilinearForm) -> QMat {
    let n = form.dim();
    let mut acc = QMat::zeros(n * n, n * n);
    for i in 1..=n {
        for j in 1..=n {
            acc = acc.add(&form.dagger_const(&unit(n, i, j)).kron(&unit(n, j, i)));
        }
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Orbit {
    Principal,
    Minimal,
    DistinguishedSo4n { a: Rational, b: Rational },
    Partition(Vec<usize>),
}

/// Catalog tags of the closed-form Lax operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CatalogTag {
    GlPrincipal,
    SlPrincipal,
    BcPrincipal,
    DPrincipal,
    GlMinimal,
    SlMinimal,
    SpMinimal,
    SoMinimal,
    So4nDistinguished,
}

impl CatalogTag {
    pub const ALL: [CatalogTag; 9] = [
        CatalogTag::GlPrincipal,
        CatalogTag::SlPrincipal,
        CatalogTag::BcPrincipal,
        CatalogTag::DPrincipal,
        CatalogTag::GlMinimal,
        CatalogTag::SlMinimal,
        CatalogTag::SpMinimal,
        CatalogTag::SoMinimal,
        CatalogTag::So4nDistinguished,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CatalogTag::GlPrincipal => "gl-principal",
            CatalogTag::SlPrincipal => "sl-principal",
            CatalogTag::BcPrincipal => "bc-principal",
            CatalogTag::DPrincipal => "d-principal",
            CatalogTag::GlMinimal => "gl-minimal",
            CatalogTag::SlMinimal => "sl-minimal",
            CatalogTag::SpMinimal => "sp-minimal",
            CatalogTag::SoMinimal => "so-minimal",
            CatalogTag::So4nDistinguished => "so4n-distinguished",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.name() == s)
    }

    /// The two smallest sizes used for cross-validation.
    pub fn small_sizes(&self) -> [usize; 2] {
        match self {
            CatalogTag::GlPrincipal | CatalogTag::SlPrincipal | CatalogTag::BcPrincipal => [2, 3],
            CatalogTag::DPrincipal => [4, 6],
            CatalogTag::GlMinimal | CatalogTag::SlMinimal => [3, 4],
            CatalogTag::SpMinimal => [4, 6],
            CatalogTag::SoMinimal => [5, 6],
            CatalogTag::So4nDistinguished => [1, 2],
        }
    }

    pub fn orbit(&self) -> Orbit {
        match self {
            CatalogTag::GlPrincipal | CatalogTag::SlPrincipal | CatalogTag::BcPrincipal | CatalogTag::DPrincipal => Orbit::Principal,
            CatalogTag::So4nDistinguished => Orbit::DistinguishedSo4n { a: Rational::one(), b: Rational::zero() },
            _ => Orbit::Minimal,
        }
    }

    /// Builds the algebra for a size parameter (N, or n for so₄ₙ).
    pub fn algebra(&self, size: usize) -> Result<ClassicalAlgebra, LieError> {
        match self {
            CatalogTag::GlPrincipal | CatalogTag::GlMinimal => ClassicalAlgebra::gl(size),
            CatalogTag::SlPrincipal | CatalogTag::SlMinimal => ClassicalAlgebra::sl(size),
            CatalogTag::BcPrincipal => ClassicalAlgebra::bc(size),
            CatalogTag::DPrincipal => ClassicalAlgebra::d(size),
            CatalogTag::SpMinimal => {
                if size % 2 != 0 {
                    return Err(LieError::UnsupportedDimension(size));
                }
                ClassicalAlgebra::bc(size)
            }
            CatalogTag::SoMinimal => ClassicalAlgebra::so_minimal(size),
            CatalogTag::So4nDistinguished => {
                if size == 0 {
                    return Err(LieError::UnsupportedDimension(size));
                }
                ClassicalAlgebra::so4n(size)
            }
        }
    }

    pub fn build(&self, size: usize) -> Result<NilpotentData, LieError> {
        let alg = self.algebra(size)?;
        if *self == CatalogTag::SlMinimal && size < 3 {
            return Err(LieError::UnsupportedDimension(size));
        }
        nilpotent_catalog(&alg, &self.orbit())
    }
}

impl fmt::Display for CatalogTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Element of the g^f basis: u_i, its dual U^i ∈ U, and the generator label w_i.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GfElt {
    pub label: GenId,
    pub u: QMat,
    pub dual: QMat,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NilpotentData {
    pub algebra: ClassicalAlgebra,
    pub orbit: Orbit,
    pub partition: Vec<usize>,
    pub f: QMat,
    pub x: QMat,
    pub e: QMat,
    /// Depth of the grading of g.
    pub d: Rational,
    /// Depth of the grading of End V.
    pub depth_v: u32,
    pub t: QMat,
    pub delta: Option<i8>,
    pub s: QMat,
    pub gf: Vec<GfElt>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GradingReport {
    pub d: Rational,
    pub depth_v: u32,
    pub d_matches: bool,
    pub depth_v_matches: bool,
    pub top_multiplicity: usize,
    pub r1: usize,
    pub d_equals_depth_v: bool,
    pub failures: Vec<String>,
}

impl GradingReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn partition_of(f: &QMat) -> Vec<usize> {
    let n = f.rows();
    let mut ranks = vec![n];
    let mut p = QMat::identity(n);
    loop {
        p = p.mul(f);
        let r = p.rank();
        ranks.push(r);
        if r == 0 {
            break;
        }
    }
    // blocks of size ≥ k: rank(F^{k−1}) − rank(F^k)
    let mut parts = Vec::new();
    for k in (1..ranks.len()).rev() {
        let at_least_k = ranks[k - 1] - ranks[k];
        let at_least_k1 = if k + 1 < ranks.len() { ranks[k] - ranks[k + 1] } else { 0 };
        for _ in 0..(at_least_k - at_least_k1) {
            parts.push(k);
        }
    }
    parts
}

impl NilpotentData {
    pub fn n(&self) -> usize {
        self.algebra.n
    }

    pub fn xdiag(&self) -> Vec<Rational> {
        (0..self.n()).map(|i| self.x.get(i, i).clone()).collect()
    }

    /// ad X-degree of a matrix, if homogeneous.
    pub fn degree(&self, m: &QMat) -> Option<Rational> {
        let xd = self.xdiag();
        let mut deg: Option<Rational> = None;
        for (a, b, _) in m.nonzero_entries() {
            let k = &xd[a] - &xd[b];
            match &deg {
                None => deg = Some(k),
                Some(d) if *d != k => return None,
                _ => {}
            }
        }
        deg
    }

    /// Component of m in ad X-degree k.
    pub fn project(&self, m: &QMat, k: &Rational) -> QMat {
        let xd = self.xdiag();
        let mut out = QMat::zeros(m.rows(), m.cols());
        for (a, b, v) in m.nonzero_entries() {
            if &(&xd[a] - &xd[b]) == k {
                out.set(a, b, v);
            }
        }
        out
    }

    /// Basis indices of the algebra lying in g_{≤½}.
    pub fn low_basis(&self) -> Vec<usize> {
        let half = q(1, 2);
        (0..self.algebra.basis.len())
            .filter(|&i| self.degree(&self.algebra.basis[i].mat).map_or(true, |k| k <= half))
            .collect()
    }

    /// Basis indices of the algebra lying in g_k.
    pub fn basis_in_degree(&self, k: &Rational) -> Vec<usize> {
        (0..self.algebra.basis.len()).filter(|&i| self.degree(&self.algebra.basis[i].mat).as_ref() == Some(k)).collect()
    }

    /// Sorted list of the degrees occurring in g.
    pub fn degrees(&self) -> Vec<Rational> {
        let mut v: Vec<Rational> = self.algebra.basis.iter().filter_map(|b| self.degree(&b.mat)).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn is_even_grading(&self) -> bool {
        self.degrees().iter().all(Rational::is_integer)
    }

    pub fn gf_labels(&self) -> Vec<GenId> {
        self.gf.iter().map(|g| g.label).collect()
    }

    pub fn adler_params(&self) -> AdlerParams {
        self.algebra.adler_params()
    }

    /// Dimension of g^f computed from ad f.
    pub fn centralizer_dim(&self) -> usize {
        let cols: Vec<Vec<Rational>> = self.algebra.basis.iter().map(|b| self.f.commutator(&b.mat).vectorize()).collect();
        self.algebra.dim() - QMat::from_columns(&cols).rank()
    }

    pub fn validate(&self) -> Result<(), LieError> {
        let bad = |m: &str| Err(LieError::InvalidData(m.to_string()));
        let alg = &self.algebra;
        if self.x.commutator(&self.f) != self.f.scale(&-Rational::one()) {
            return bad("[x,f] ≠ −f");
        }
        if self.x.commutator(&self.e) != self.e {
            return bad("[x,e] ≠ e");
        }
        if self.e.commutator(&self.f) != self.x.scale(&q(2, 1)) {
            return bad("[e,f] ≠ 2x");
        }
        if !self.x.is_diagonal() {
            return bad("x is not diagonal");
        }
        for (m, name) in [(&self.f, "f"), (&self.e, "e"), (&self.x, "x"), (&self.s, "s")] {
            if !alg.contains(m) {
                return Err(LieError::InvalidData(format!("{name} ∉ g")));
            }
        }
        let p1 = self.partition[0];
        if !self.f.pow(p1 as u32).is_zero() || (p1 > 0 && self.f.pow(p1 as u32 - 1).is_zero()) {
            return bad("nilpotency order of F");
        }
        let rep = grading_check(self);
        if !rep.ok() {
            return Err(LieError::InvalidData(rep.failures.join("; ")));
        }
        let dv = Rational::from_int(self.depth_v as i64);
        if self.degree(&self.t) != Some(dv) {
            return bad("T ∉ (End V)[D]");
        }
        if !self.s.is_zero() && self.degree(&self.s).as_ref() != Some(&self.d) {
            return bad("s ∉ g_d");
        }
        if !t_condition(&self.t, &self.f, self.depth_v) {
            return bad("V ≠ ker T ⊕ F^D(im T)");
        }
        if let Some(form) = &alg.form {
            if t_sign(form, &self.t) != self.delta {
                return bad("T† ≠ δT");
            }
        }
        let m = self.gf.len();
        if m != self.centralizer_dim() {
            return Err(LieError::InvalidData(format!("|I_f| = {m}, dim g^f = {}", self.centralizer_dim())));
        }
        for g in &self.gf {
            if !alg.contains(&g.u) || !alg.contains(&g.dual) {
                return Err(LieError::InvalidData(format!("{} ∉ g", g.label.text())));
            }
            if !self.f.commutator(&g.u).is_zero() {
                return Err(LieError::InvalidData(format!("u for {} does not commute with f", g.label.text())));
            }
            match self.degree(&g.dual) {
                Some(k) if k >= q(-1, 2) => {}
                _ => return Err(LieError::InvalidData(format!("U for {} is not homogeneous of degree ≥ −½", g.label.text()))),
            }
        }
        for a in 0..m {
            for b in 0..m {
                let v = self.gf[a].u.trace_form(&self.gf[b].dual);
                let want = if a == b { Rational::one() } else { Rational::zero() };
                if v != want {
                    return Err(LieError::InvalidData(format!("(u|U) pairing fails at ({}, {})", self.gf[a].label.text(), self.gf[b].label.text())));
                }
            }
        }
        let mut cols: Vec<Vec<Rational>> = self.gf.iter().map(|g| g.dual.vectorize()).collect();
        cols.extend(alg.basis.iter().map(|b| self.f.commutator(&b.mat).vectorize()));
        if QMat::from_columns(&cols).rank() != alg.dim() {
            return bad("U is not complementary to [f,g]");
        }
        Ok(())
    }
}

/// Recomputes d, D and dim V[D/2] from x and f.
pub fn grading_check(nd: &NilpotentData) -> GradingReport {
    let degs = nd.degrees();
    let d = degs.last().cloned().unwrap_or_else(Rational::zero);
    let xd = nd.xdiag();
    let max = xd.iter().max().cloned().unwrap_or_else(Rational::zero);
    let min = xd.iter().min().cloned().unwrap_or_else(Rational::zero);
    let dv = &max - &min;
    let depth_v = dv.numer().to_string().parse::<u32>().unwrap_or(0);
    let top_multiplicity = xd.iter().filter(|v| **v == max).count();
    let r1 = nd.partition.iter().filter(|&&p| p == nd.partition[0]).count();
    let mut failures = Vec::new();
    if !dv.is_integer() {
        failures.push("D is not an integer".to_string());
    }
    if d != nd.d {
        failures.push(format!("stored d = {}, recomputed {}", nd.d, d));
    }
    if depth_v != nd.depth_v {
        failures.push(format!("stored D = {}, recomputed {}", nd.depth_v, depth_v));
    }
    if depth_v as usize + 1 != nd.partition[0] {
        failures.push("D ≠ p₁ − 1".to_string());
    }
    if top_multiplicity != r1 {
        failures.push(format!("dim V[D/2] = {top_multiplicity}, r₁ = {r1}"));
    }
    GradingReport {
        d_matches: d == nd.d,
        depth_v_matches: depth_v == nd.depth_v,
        d_equals_depth_v: d == Rational::from_int(depth_v as i64),
        d,
        depth_v,
        top_multiplicity,
        r1,
        failures,
    }
}

fn wid(i: i32) -> GenId {
    GenId::new("w", &[i])
}

fn wid2(i: usize, j: usize) -> GenId {
    GenId::new("w", &[i as i32, j as i32])
}

fn sum(n: usize, items: impl IntoIterator<Item = QMat>) -> QMat {
    items.into_iter().fold(QMat::zeros(n, n), |a, b| a.add(&b))
}

fn half() -> Rational {
    q(1, 2)
}

/// Assembles and validates catalog data for an algebra and orbit.
pub fn nilpotent_catalog(alg: &ClassicalAlgebra, orbit: &Orbit) -> Result<NilpotentData, LieError> {
    let n = alg.n;
    let fe = |i: usize, j: usize| alg.f_elem(i, j);
    let (f, x, e, t, s, gf): (QMat, QMat, QMat, QMat, QMat, Vec<GfElt>) = match (alg.convention, orbit) {
        (Convention::Plain, Orbit::Principal) => {
            let f = sum(n, (1..n).map(|k| unit(n, k + 1, k)));
            let x = sum(n, (1..=n).map(|k| unit(n, k, k).scale(&q(n as i64 + 1 - 2 * k as i64, 2))));
            let e = sum(n, (1..n).map(|k| unit(n, k, k + 1).scale(&Rational::from_int((k * (n - k)) as i64))));
            let t = unit(n, 1, n);
            let top = if alg.family == Family::Gl { n } else { n - 1 };
            let gf = (0..top)
                .map(|i| GfElt { label: wid(i as i32), u: sum(n, (1..=i + 1).map(|k| unit(n, n + k - i - 1, k))), dual: unit(n, 1, n - i) })
                .collect();
            (f, x, e, t.clone(), t, gf)
        }
        (Convention::Plain, Orbit::Minimal) => {
            if n < 2 {
                return Err(LieError::UnsupportedDimension(n));
            }
            let f = unit(n, n, 1);
            let e = unit(n, 1, n);
            let x = unit(n, 1, 1).sub(&unit(n, n, n)).scale(&half());
            let t = unit(n, 1, n);
            let mut idx: Vec<(usize, usize)> = vec![(1, 1), (n, 1)];
            for k in 2..n {
                idx.push((n, k));
                idx.push((k, 1));
            }
            for h in 2..n {
                for k in 2..n {
                    idx.push((h, k));
                }
            }
            let mut gf = Vec::new();
            for (i, j) in idx {
                if alg.family == Family::Sl && (i, j) == (1, 1) {
                    continue;
                }
                let (u, dual) = if (i, j) == (1, 1) {
                    (unit(n, 1, 1).add(&unit(n, n, n)), unit(n, 1, 1))
                } else if alg.family == Family::Sl && i == j {
                    (unit(n, i, i).sub(&QMat::identity(n).scale(&q(1, n as i64))), unit(n, i, i).sub(&unit(n, 1, 1)))
                } else {
                    (unit(n, i, j), unit(n, j, i))
                };
                gf.push(GfElt { label: wid2(i, j), u, dual });
            }
            (f, x, e, t.clone(), t, gf)
        }
        (Convention::Plain, Orbit::Partition(p)) => partition_data(alg, p)?,
        (Convention::BC, Orbit::Principal) => {
            let h = n / 2;
            let f = sum(n, (1..n).map(|k| unit(n, k + 1, k)));
            let x = sum(n, (1..=h).map(|k| fe(k, k).scale(&q(n as i64 + 1 - 2 * k as i64, 2))));
            let mut e = sum(n, (1..h).map(|k| fe(k, k + 1).scale(&Rational::from_int((k * (n - k)) as i64))));
            let last = if n % 2 == 0 { q((h * h) as i64, 2) } else { Rational::from_int((h * (h + 1)) as i64) };
            e = e.add(&fe(h, h + 1).scale(&last));
            let t = unit(n, 1, n);
            let s = fe(1, 2 * h).scale(&half());
            let gf = (1..=h)
                .map(|i| GfElt {
                    label: wid(i as i32),
                    u: sum(n, (1..=n - 1 - 2 * (h - i)).map(|k| unit(n, k + 1 + 2 * (h - i), k))),
                    dual: fe(1, 2 * (h + 1 - i)).scale(&half()),
                })
                .collect();
            (f, x, e, t, s, gf)
        }
        (Convention::D, Orbit::Principal) => {
            let h = n / 2;
            let f = sum(n, (1..h).map(|k| fe(k + 1, k)));
            let x = sum(n, (1..h).map(|k| fe(k, k).scale(&q(n as i64 - 2 * k as i64, 2))));
            let e = sum(n, (1..h).map(|k| fe(k, k + 1).scale(&Rational::from_int((k * (n - 1 - k)) as i64))));
            let t = unit(n, 1, n - 1);
            let s = fe(1, n - 2).scale(&half());
            let mut gf = vec![GfElt { label: wid(0), u: fe(n, 1), dual: fe(1, n).scale(&half()) }];
            for i in 1..h {
                gf.push(GfElt { label: wid(i as i32), u: sum(n, (1..=i).map(|k| fe(n + k - 2 * i - 1, k))), dual: fe(1, n - 2 * i).scale(&half()) });
            }
            (f, x, e, t, s, gf)
        }
        (Convention::BC, Orbit::Minimal) if n % 2 == 0 => {
            let f = fe(n, 1).scale(&half());
            let e = fe(1, n).scale(&half());
            let x = fe(1, 1).scale(&half());
            let t = unit(n, 1, n);
            let mut idx: Vec<(usize, usize)> = (2..=n).map(|k| (k, 1)).collect();
            for hh in 2..n {
                for k in 2..=alg.p(hh) {
                    idx.push((hh, k));
                }
            }
            let gf = idx
                .into_iter()
                .map(|(i, j)| {
                    let u = if j == alg.p(i) { fe(i, j).scale(&half()) } else { fe(i, j) };
                    GfElt { label: wid2(i, j), u, dual: fe(j, i).scale(&half()) }
                })
                .collect();
            (f, x, e, t.clone(), t, gf)
        }
        (Convention::SoMinimal, Orbit::Minimal) => {
            let f = fe(n - 1, 1);
            let e = fe(1, n - 1);
            let x = fe(1, 1).add(&fe(2, 2)).scale(&half());
            let t = unit(n, 1, n - 1).add(&unit(n, 2, n));
            let mut idx: Vec<(usize, usize)> = vec![(1, 1), (1, 2), (2, 1), (n - 1, 1)];
            for hh in 3..=n - 2 {
                for k in 1..alg.p(hh) {
                    idx.push((hh, k));
                }
            }
            let gf = idx
                .into_iter()
                .map(|(i, j)| {
                    let u = if (i, j) == (1, 1) { fe(1, 1).sub(&fe(2, 2)) } else { fe(i, j) };
                    GfElt { label: wid2(i, j), u, dual: fe(j, i).scale(&half()) }
                })
                .collect();
            (f, x, e, t.clone(), t, gf)
        }
        (Convention::So4n, Orbit::DistinguishedSo4n { a, b }) => {
            let m = n / 4;
            let qq = 2 * m + 1;
            let f = sum(n, (1..=m).map(|k| fe(k + 1, k)).chain((1..m).map(|k| fe(qq + k + 1, qq + k))));
            let x = sum(
                n,
                (1..=m)
                    .map(|k| fe(k, k).scale(&q(qq as i64 + 1 - 2 * k as i64, 2)))
                    .chain((1..m).map(|k| fe(qq + k, qq + k).scale(&q(qq as i64 - 1 - 2 * k as i64, 2)))),
            );
            let e = sum(
                n,
                (1..=m)
                    .map(|k| fe(k, k + 1).scale(&Rational::from_int((k * (qq - k)) as i64)))
                    .chain((1..m).map(|k| fe(qq + k, qq + k + 1).scale(&Rational::from_int((k * (qq - 2 - k)) as i64)))),
            );
            let t = unit(n, 1, qq);
            let s = fe(1, qq - 1).scale(&(a * &half())).add(&fe(1, n).scale(b));
            let mut gf = Vec::new();
            for i in 1..=m {
                gf.push(GfElt {
                    label: GenId::new("w+", &[i as i32]),
                    u: sum(n, (1..=i).map(|k| fe(qq + k - 2 * i, k))),
                    dual: fe(1, qq + 1 - 2 * i).scale(&half()),
                });
            }
            for i in 1..=qq - 2 {
                gf.push(GfElt {
                    label: GenId::new("w0", &[i as i32]),
                    u: sum(n, (1..=qq - 1 - i).map(|k| fe(qq - 1 + k + i, k))),
                    dual: fe(1, qq + i).scale(&half()),
                });
            }
            for i in 1..m {
                gf.push(GfElt {
                    label: GenId::new("w-", &[i as i32]),
                    u: sum(n, (1..=i).map(|k| fe(n + k - 2 * i, qq + k))),
                    dual: fe(qq + 1, n + 1 - 2 * i).scale(&half()),
                });
            }
            (f, x, e, t, s, gf)
        }
        (conv, o) => return Err(LieError::UnsupportedOrbit(format!("{o:?} in convention {conv:?}"))),
    };
    let partition = partition_of(&f);
    let mut nd = NilpotentData {
        algebra: alg.clone(),
        orbit: orbit.clone(),
        partition,
        f,
        x,
        e,
        d: Rational::zero(),
        depth_v: 0,
        t,
        delta: None,
        s,
        gf,
    };
    let rep = grading_check(&nd);
    nd.d = rep.d;
    nd.depth_v = rep.depth_v;
    nd.delta = alg.form.as_ref().and_then(|form| t_sign(form, &nd.t));
    nd.validate()?;
    Ok(nd)
}

/// gl/sl data for an arbitrary partition: Jordan blocks in order, U = g^e.
fn partition_data(alg: &ClassicalAlgebra, p: &[usize]) -> Result<(QMat, QMat, QMat, QMat, QMat, Vec<GfElt>), LieError> {
    let n = alg.n;
    let mut parts = p.to_vec();
    parts.sort_unstable_by(|a, b| b.cmp(a));
    if parts.iter().sum::<usize>() != n || parts.iter().any(|&v| v == 0) {
        return Err(LieError::UnsupportedOrbit(format!("partition {p:?} of {n}")));
    }
    if parts[0] < 2 {
        return Err(LieError::UnsupportedOrbit("zero nilpotent".into()));
    }
    let mut f = QMat::zeros(n, n);
    let mut x = QMat::zeros(n, n);
    let mut e = QMat::zeros(n, n);
    let mut t = QMat::zeros(n, n);
    let mut start = 1;
    for &b in &parts {
        for k in 1..=b {
            x.set(start + k - 2, start + k - 2, q(b as i64 + 1 - 2 * k as i64, 2));
            if k < b {
                f.set(start + k - 1, start + k - 2, Rational::one());
                e.set(start + k - 2, start + k - 1, Rational::from_int((k * (b - k)) as i64));
            }
        }
        if b == parts[0] {
            t.set(start - 1, start + b - 2, Rational::one());
        }
        start += b;
    }
    let tmp = NilpotentData {
        algebra: alg.clone(),
        orbit: Orbit::Partition(parts.clone()),
        partition: parts.clone(),
        f: f.clone(),
        x: x.clone(),
        e: e.clone(),
        d: Rational::zero(),
        depth_v: 0,
        t: t.clone(),
        delta: None,
        s: t.clone(),
        gf: vec![],
    };
    // g^e and g^f, degree by degree, paired by the trace form
    let mut gf = Vec::new();
    let mut counter = 0;
    for k in tmp.degrees() {
        let idx = tmp.basis_in_degree(&k);
        let idx_neg = tmp.basis_in_degree(&-k.clone());
        let ge = centralizer_in(alg, &idx, &e);
        if ge.is_empty() {
            continue;
        }
        let gfk = centralizer_in(alg, &idx_neg, &f);
        if gfk.len() != ge.len() {
            return Err(LieError::InvalidData("g^e and g^f dimensions differ".into()));
        }
        let m = ge.len();
        let mut pair = QMat::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                pair.set(a, b, gfk[a].trace_form(&ge[b]));
            }
        }
        let inv = pair.inverse().ok_or_else(|| LieError::InvalidData("degenerate pairing".into()))?;
        for a in 0..m {
            let mut u = QMat::zeros(n, n);
            for c in 0..m {
                let coef = inv.get(a, c).clone();
                if !coef.is_zero() {
                    u = u.add(&gfk[c].scale(&coef));
                }
            }
            gf.push(GfElt { label: wid(counter), u, dual: ge[a].clone() });
            counter += 1;
        }
    }
    Ok((f, x, e, t.clone(), t, gf))
}

/// Basis of {m ∈ span(basis[idx]) : [c, m] = 0}.
fn centralizer_in(alg: &ClassicalAlgebra, idx: &[usize], c: &QMat) -> Vec<QMat> {
    if idx.is_empty() {
        return vec![];
    }
    let cols: Vec<Vec<Rational>> = idx.iter().map(|&i| c.commutator(&alg.basis[i].mat).vectorize()).collect();
    let ker = QMat::from_columns(&cols).kernel();
    let n = alg.n;
    ker.into_iter()
        .map(|v| {
            let mut m = QMat::zeros(n, n);
            for (k, &i) in idx.iter().enumerate() {
                if !v[k].is_zero() {
                    m = m.add(&alg.basis[i].mat.scale(&v[k]));
                }
            }
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_completeness(alg: &ClassicalAlgebra) {
        for b in &alg.basis {
            let mut acc = QMat::zeros(alg.n, alg.n);
            for (c, u) in alg.coords(&b.mat).iter().zip(&alg.basis) {
                acc = acc.add(&u.mat.scale(c));
            }
            assert_eq!(acc, b.mat);
            assert!(alg.contains(&b.mat), "{}", b.label.text());
        }
        for i in 0..alg.dim() {
            for j in 0..alg.dim() {
                let v = alg.basis[i].mat.trace_form(&alg.basis[j].dual);
                assert_eq!(v, if i == j { Rational::one() } else { Rational::zero() });
            }
        }
    }

    #[test]
    fn bases_and_duals() {
        for n in 1..=4 {
            check_completeness(&ClassicalAlgebra::gl(n).unwrap());
        }
        for n in 2..=4 {
            check_completeness(&ClassicalAlgebra::sl(n).unwrap());
        }
        for n in 2..=6 {
            let a = ClassicalAlgebra::bc(n).unwrap();
            assert_eq!(a.family, if n % 2 == 0 { Family::Sp } else { Family::So });
            check_completeness(&a);
            // dual of F_ij/(1+δ) is ½F_ji
            for b in &a.basis {
                let (i, j) = (b.label.index()[0] as usize, b.label.index()[1] as usize);
                assert_eq!(b.dual, a.f_elem(j, i).scale(&q(1, 2)));
            }
        }
        for n in [4, 6, 8] {
            check_completeness(&ClassicalAlgebra::d(n).unwrap());
        }
        for n in 4..=7 {
            check_completeness(&ClassicalAlgebra::so_minimal(n).unwrap());
        }
        for m in 1..=2 {
            check_completeness(&ClassicalAlgebra::so4n(m).unwrap());
        }
        assert!(matches!(ClassicalAlgebra::build(Family::Sp, 3), Err(LieError::UnsupportedDimension(3))));
        let gl2 = ClassicalAlgebra::gl(2).unwrap();
        assert_eq!(gl2.basis[1].dual, unit(2, 2, 1));
    }

    #[test]
    fn bc_commutation_relations() {
        for n in [2, 3, 4] {
            let a = ClassicalAlgebra::bc(n).unwrap();
            let d = |x: usize, y: usize| if x == y { Rational::one() } else { Rational::zero() };
            for i in 1..=n {
                for j in 1..=n {
                    for h in 1..=n {
                        for k in 1..=n {
                            let lhs = a.f_elem(i, j).commutator(&a.f_elem(h, k));
                            let eij = Rational::from_int((a.epsilon(i) * a.epsilon(j)) as i64);
                            let rhs = a
                                .f_elem(i, k)
                                .scale(&d(j, h))
                                .sub(&a.f_elem(h, j).scale(&d(k, i)))
                                .sub(&a.f_elem(a.p(j), k).scale(&(&eij * &d(a.p(i), h))))
                                .add(&a.f_elem(h, a.p(i)).scale(&(&eij * &d(k, a.p(j)))));
                            assert_eq!(lhs, rhs);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn casimir_matches_omega() {
        for n in 2..=3 {
            let gl = ClassicalAlgebra::gl(n).unwrap();
            assert_eq!(gl.casimir(), omega(n));
            let sl = ClassicalAlgebra::sl(n).unwrap();
            let id = QMat::identity(n * n).scale(&q(1, n as i64));
            assert_eq!(sl.casimir(), omega(n).sub(&id));
        }
        for alg in [ClassicalAlgebra::bc(2).unwrap(), ClassicalAlgebra::bc(3).unwrap(), ClassicalAlgebra::d(4).unwrap(), ClassicalAlgebra::so4n(1).unwrap()] {
            let form = alg.form.clone().unwrap();
            assert_eq!(alg.casimir(), omega(alg.n).sub(&omega_dagger(&form)).scale(&q(1, 2)));
        }
    }

    #[test]
    fn invariance_of_trace_form() {
        let alg = ClassicalAlgebra::bc(4).unwrap();
        let b = &alg.basis;
        for i in (0..b.len()).step_by(3) {
            for j in (0..b.len()).step_by(2) {
                for k in (0..b.len()).step_by(5) {
                    let l = b[i].mat.trace_form(&b[j].mat.commutator(&b[k].mat));
                    let r = b[i].mat.commutator(&b[j].mat).trace_form(&b[k].mat);
                    assert_eq!(l, r);
                }
            }
        }
    }

    #[test]
    fn catalog_entries_validate() {
        for tag in CatalogTag::ALL {
            for size in tag.small_sizes() {
                let nd = tag.build(size).unwrap_or_else(|e| panic!("{tag} {size}: {e}"));
                assert!(grading_check(&nd).ok());
            }
        }
    }

    #[test]
    fn grading_depths() {
        let so3 = CatalogTag::BcPrincipal.build(3).unwrap();
        let rep = grading_check(&so3);
        assert_eq!((rep.d.clone(), rep.depth_v), (Rational::one(), 2));
        assert!(!rep.d_equals_depth_v);
        let sp2 = CatalogTag::BcPrincipal.build(2).unwrap();
        let rep = grading_check(&sp2);
        assert_eq!((rep.d, rep.depth_v), (Rational::one(), 1));
        let d4 = CatalogTag::DPrincipal.build(4).unwrap();
        assert_eq!((d4.d.clone(), d4.depth_v), (Rational::one(), 2));
        assert_eq!(d4.partition, vec![3, 1]);
        let so8 = CatalogTag::So4nDistinguished.build(2).unwrap();
        assert_eq!(so8.partition, vec![5, 3]);
        assert_eq!((so8.d.clone(), so8.depth_v), (Rational::from_int(3), 4));
        let som = CatalogTag::SoMinimal.build(6).unwrap();
        assert_eq!(som.partition, vec![2, 2, 1, 1]);
        assert_eq!(som.delta, Some(-1));
    }

    #[test]
    fn gl_partitions_have_equal_depths() {
        let parts: Vec<Vec<usize>> =
            vec![vec![2], vec![3], vec![2, 1], vec![4], vec![3, 1], vec![2, 2], vec![2, 1, 1], vec![5], vec![4, 1], vec![3, 2], vec![3, 1, 1], vec![2, 2, 1], vec![2, 1, 1, 1]];
        for p in parts {
            let n: usize = p.iter().sum();
            for alg in [ClassicalAlgebra::gl(n).unwrap(), ClassicalAlgebra::sl(n).unwrap()] {
                let nd = nilpotent_catalog(&alg, &Orbit::Partition(p.clone())).unwrap_or_else(|e| panic!("{p:?}: {e}"));
                let rep = grading_check(&nd);
                assert!(rep.ok() && rep.d_equals_depth_v, "{p:?}");
            }
        }
        let gl3 = ClassicalAlgebra::gl(3).unwrap();
        assert!(nilpotent_catalog(&gl3, &Orbit::Partition(vec![1, 1, 1])).is_err());
        let so5 = ClassicalAlgebra::bc(5).unwrap();
        assert!(matches!(nilpotent_catalog(&so5, &Orbit::Partition(vec![3, 1, 1])), Err(LieError::UnsupportedOrbit(_))));
    }

    #[test]
    fn adler_table() {
        assert_eq!(AdlerParams::for_family(Family::Sl, 3).gamma, q(1, 3));
        assert_eq!(AdlerParams::for_family(Family::Sp, 2).beta, q(1, 2));
    }
}
