//! Worked examples: closed-form densities and flows of the classical
//! hierarchies (KdV, Sawada–Kotera, Kaup–Kupershmidt, their modified forms,
//! minimal-orbit systems), each checked exactly against the engine.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::diffalg::{DiffPoly, GenId};
use crate::hierarchy::{self, conservation_check, constrain, miura_compatible, rescale_flow, verify_flow, BuiltExample, Example, Flow};
use crate::liealg::CatalogTag;
use crate::par;
use crate::psdo::ScalarPDO;
use crate::rational::{q, Rational};
use crate::wlax;

pub type Outcome = Result<(), String>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Kdv,
    SawadaKotera,
    KaupKupershmidt,
    KdvVariants,
    Miura,
    MinimalGl,
    MinimalSp,
    Conservation,
}

impl Group {
    pub fn name(&self) -> &'static str {
        match self {
            Group::Kdv => "kdv",
            Group::SawadaKotera => "sawada-kotera",
            Group::KaupKupershmidt => "kaup-kupershmidt",
            Group::KdvVariants => "kdv-variants",
            Group::Miura => "miura",
            Group::MinimalGl => "minimal-gl",
            Group::MinimalSp => "minimal-sp",
            Group::Conservation => "conservation",
        }
    }
}

#[derive(Clone, Copy)]
pub struct Check {
    pub id: &'static str,
    pub group: Group,
    pub run: fn() -> Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct CheckReport {
    pub id: String,
    pub group: String,
    pub passed: bool,
    pub detail: String,
    #[serde(skip)]
    pub millis: u128,
}

pub fn run(checks: &[Check]) -> Vec<CheckReport> {
    par::map(checks, |c| {
        let t = Instant::now();
        let r = (c.run)();
        CheckReport {
            id: c.id.to_string(),
            group: c.group.name().to_string(),
            passed: r.is_ok(),
            detail: r.err().unwrap_or_default(),
            millis: t.elapsed().as_millis(),
        }
    })
}

pub fn checks() -> Vec<Check> {
    use Group::*;
    vec![
        Check { id: "kdv-densities", group: Kdv, run: kdv_densities },
        Check { id: "kdv-flows", group: Kdv, run: kdv_flows },
        Check { id: "sk-densities", group: SawadaKotera, run: sk_densities },
        Check { id: "sk-flows", group: SawadaKotera, run: sk_flows },
        Check { id: "sk-root-twist", group: SawadaKotera, run: sk_root_twist },
        Check { id: "kk-densities", group: KaupKupershmidt, run: kk_densities },
        Check { id: "kk-flows", group: KaupKupershmidt, run: kk_flows },
        Check { id: "kk-root-skew", group: KaupKupershmidt, run: kk_root_skew },
        Check { id: "sp2-dinv-kdv", group: KdvVariants, run: sp2_dinv },
        Check { id: "so3-dinv-kdv", group: KdvVariants, run: so3_dinv },
        Check { id: "so3-d-kdv", group: KdvVariants, run: so3_d },
        Check { id: "miura-maps", group: Miura, run: miura_maps },
        Check { id: "mkdv", group: Miura, run: mkdv },
        Check { id: "modified-sk", group: Miura, run: modified_sk },
        Check { id: "modified-kk", group: Miura, run: modified_kk },
        Check { id: "modified-rescaling", group: Miura, run: modified_rescaling },
        Check { id: "gl-min-3", group: MinimalGl, run: || minimal_gl(3, false) },
        Check { id: "gl-min-4", group: MinimalGl, run: || minimal_gl(4, false) },
        Check { id: "sl-min-3", group: MinimalGl, run: || minimal_gl(3, true) },
        Check { id: "sl-min-4", group: MinimalGl, run: || minimal_gl(4, true) },
        Check { id: "sp-min-4-densities", group: MinimalSp, run: sp_min_densities },
        Check { id: "sp-min-4-d-reduced", group: MinimalSp, run: || sp_min_reduced(1) },
        Check { id: "sp-min-4-dinv-reduced", group: MinimalSp, run: || sp_min_reduced(-1) },
        Check { id: "conservation-principal", group: Conservation, run: conservation_principal },
        Check { id: "conservation-minimal", group: Conservation, run: conservation_minimal },
    ]
}

// --- helpers ------------------------------------------------------------------

fn build(id: &str) -> Result<BuiltExample, String> {
    let ex = Example::parse(id).ok_or_else(|| format!("unknown example {id}"))?;
    ex.build(ex.floor).map_err(|e| format!("{id}: {e}"))
}

fn build_modified(id: &str) -> Result<BuiltExample, String> {
    let ex = Example::parse(id).ok_or_else(|| format!("unknown example {id}"))?;
    ex.build_modified(ex.floor).map_err(|e| format!("{id}: {e}"))
}

fn flow(b: &BuiltExample, n: i32) -> Result<Flow, String> {
    b.flow(n).map(|f| f.0).map_err(|e| format!("{} t{n}: {e}", b.example.id))
}

fn density_is(b: &BuiltExample, n: i32, want: &DiffPoly) -> Outcome {
    let d = b.density(n).map_err(|e| e.to_string())?;
    if d.equals_functional(want) {
        Ok(())
    } else {
        Err(format!("{} h{n} = {} is not ∫{}", b.example.id, d.h, want))
    }
}

fn poly_is(label: &str, got: &DiffPoly, want: &DiffPoly) -> Outcome {
    if got == want {
        Ok(())
    } else {
        Err(format!("{label}: got {got}, expected {want}"))
    }
}

/// Equality on the generators named in `want`.
fn flow_is(label: &str, got: &Flow, want: &Flow) -> Outcome {
    for (g, p) in want {
        let z = DiffPoly::zero();
        poly_is(&format!("{label} d{}/dt", g.text()), got.get(g).unwrap_or(&z), p)?;
    }
    Ok(())
}

fn all(items: impl IntoIterator<Item = Outcome>) -> Outcome {
    items.into_iter().collect::<Result<Vec<()>, String>>().map(|_| ())
}

fn c(n: i64, d: i64) -> Rational {
    q(n, d)
}

/// Σ cᵢ·pᵢ.
fn lin(terms: &[(Rational, DiffPoly)]) -> DiffPoly {
    let mut out = DiffPoly::zero();
    for (k, p) in terms {
        out.add_scaled(p, k);
    }
    out
}

fn dn(p: &DiffPoly, k: u32) -> DiffPoly {
    p.nth_derivative(k)
}

fn one_flow(g: GenId, p: DiffPoly) -> Flow {
    [(g, p)].into_iter().collect()
}

fn w(i: i32) -> (GenId, DiffPoly) {
    (GenId::new("w", &[i]), DiffPoly::g("w", &[i]))
}

fn w2(i: usize, j: usize) -> DiffPoly {
    DiffPoly::g("w", &[i as i32, j as i32])
}

fn w2id(i: usize, j: usize) -> GenId {
    GenId::new("w", &[i as i32, j as i32])
}

fn zero_flows(b: &BuiltExample, ns: &[i32]) -> Outcome {
    for &n in ns {
        let f = flow(b, n)?;
        if let Some((g, p)) = f.iter().find(|(_, p)| !p.is_zero()) {
            return Err(format!("{} t{n}: d{}/dt = {p} should vanish", b.example.id, g.text()));
        }
    }
    Ok(())
}

// --- KdV ----------------------------------------------------------------------

fn kdv_densities() -> Outcome {
    let b = build("sl2")?;
    let (_, w) = w(0);
    all([
        density_is(&b, 1, &w),
        density_is(&b, 2, &DiffPoly::zero()),
        density_is(&b, 3, &w.mul(&w).scale(&c(-1, 4))),
    ])
}

fn kdv_rhs(w: &DiffPoly) -> DiffPoly {
    lin(&[(c(1, 4), dn(w, 3)), (c(-3, 2), w.mul(&dn(w, 1)))])
}

fn kdv_flows() -> Outcome {
    let b = build("sl2")?;
    let (g, w) = w(0);
    let t3 = one_flow(g, kdv_rhs(&w));
    let rhs = b.rhs(3).map_err(|e| e.to_string())?;
    if !verify_flow(&b.op, &t3, &rhs) {
        return Err("KdV display fails D_L(ẇ) = [P, L]".into());
    }
    all([
        flow_is("sl2 t1", &flow(&b, 1)?, &one_flow(g, dn(&w, 1))),
        zero_flows(&b, &[2]),
        flow_is("sl2 t3", &flow(&b, 3)?, &t3),
    ])
}

// --- Sawada–Kotera --------------------------------------------------------------

fn sk_densities() -> Outcome {
    let b = build("sp2-d")?;
    let (_, w) = w(1);
    all([
        density_is(&b, 1, &w),
        density_is(&b, 2, &DiffPoly::zero()),
        density_is(&b, 3, &DiffPoly::zero()),
        density_is(&b, 4, &DiffPoly::zero()),
        density_is(&b, 5, &lin(&[(c(-1, 27), w.pow(3)), (c(1, 9), w.mul(&dn(&w, 2)))])),
    ])
}

fn sk_rhs(w: &DiffPoly) -> DiffPoly {
    lin(&[
        (c(-1, 9), dn(w, 5)),
        (c(5, 9), dn(w, 1).mul(&dn(w, 2))),
        (c(5, 9), w.mul(&dn(w, 3))),
        (c(-5, 9), w.mul(w).mul(&dn(w, 1))),
    ])
}

fn sk_flows() -> Outcome {
    let b = build("sp2-d")?;
    let (g, w) = w(1);
    all([
        flow_is("sp2-d t1", &flow(&b, 1)?, &one_flow(g, dn(&w, 1))),
        zero_flows(&b, &[2, 3, 4]),
        flow_is("sp2-d t5", &flow(&b, 5)?, &one_flow(g, sk_rhs(&w))),
    ])
}

fn sk_root_twist() -> Outcome {
    let b = build("sp2-d")?;
    let root = b.root(8).map_err(|e| e.to_string())?;
    let r = root.scalar().unwrap();
    let twisted = ScalarPDO::d_pow(-1).mul_to(&r.star(), Some(-9)).mul_to(&ScalarPDO::d(), Some(-8)).neg();
    if r.truncate(-8).eq_within(&twisted) {
        Ok(())
    } else {
        Err("B ≠ −∂⁻¹B*∂".into())
    }
}

// --- Kaup–Kupershmidt -----------------------------------------------------------

fn kk_densities() -> Outcome {
    let b = build("so3")?;
    let (_, w) = w(1);
    all([
        density_is(&b, 1, &w),
        density_is(&b, 2, &DiffPoly::zero()),
        density_is(&b, 3, &DiffPoly::zero()),
        density_is(&b, 4, &DiffPoly::zero()),
        density_is(&b, 5, &lin(&[(c(-1, 27), w.pow(3)), (c(1, 36), w.mul(&dn(&w, 2)))])),
    ])
}

fn kk_rhs(w: &DiffPoly) -> DiffPoly {
    lin(&[
        (c(-1, 9), dn(w, 5)),
        (c(25, 18), dn(w, 1).mul(&dn(w, 2))),
        (c(5, 9), w.mul(&dn(w, 3))),
        (c(-5, 9), w.mul(w).mul(&dn(w, 1))),
    ])
}

fn kk_flows() -> Outcome {
    let b = build("so3")?;
    let (g, w) = w(1);
    all([
        flow_is("so3 t1", &flow(&b, 1)?, &one_flow(g, dn(&w, 1))),
        zero_flows(&b, &[2, 3, 4]),
        flow_is("so3 t5", &flow(&b, 5)?, &one_flow(g, kk_rhs(&w))),
    ])
}

fn kk_root_skew() -> Outcome {
    let b = build("so3")?;
    let root = b.root(8).map_err(|e| e.to_string())?;
    let r = root.scalar().unwrap();
    for n in 1..=5 {
        let bn = r.power(n, -4).map_err(|e| e.to_string())?;
        let sign = if n % 2 == 0 { Rational::one() } else { -Rational::one() };
        if !bn.star().scale(&sign).eq_within(&bn) {
            return Err(format!("(Bⁿ)* ≠ (−1)ⁿBⁿ at n = {n}"));
        }
    }
    Ok(())
}

// --- KdV from decorated operators ---------------------------------------------

fn kdv_variant(id: &str, h3: DiffPoly, t3: DiffPoly) -> Outcome {
    let b = build(id)?;
    let (g, w) = w(1);
    all([
        density_is(&b, 1, &w),
        density_is(&b, 2, &DiffPoly::zero()),
        density_is(&b, 3, &h3),
        flow_is(&format!("{id} t1"), &flow(&b, 1)?, &one_flow(g, dn(&w, 1))),
        zero_flows(&b, &[2]),
        flow_is(&format!("{id} t3"), &flow(&b, 3)?, &one_flow(g, t3)),
    ])
}

fn sp2_dinv() -> Outcome {
    let (_, w) = w(1);
    kdv_variant("sp2-dinv", w.mul(&w).neg(), lin(&[(c(1, 1), dn(&w, 3)), (c(-6, 1), w.mul(&dn(&w, 1)))]))
}

fn so3_dinv() -> Outcome {
    let (_, w) = w(1);
    kdv_variant("so3-dinv", w.mul(&w).scale(&c(-1, 4)), lin(&[(c(1, 1), dn(&w, 3)), (c(-3, 2), w.mul(&dn(&w, 1)))]))
}

fn so3_d() -> Outcome {
    let (_, w) = w(1);
    kdv_variant("so3-d", w.mul(&w).scale(&c(1, 8)), lin(&[(c(-1, 2), dn(&w, 3)), (c(3, 4), w.mul(&dn(&w, 1)))]))
}

// --- Miura ----------------------------------------------------------------------

fn x_sl() -> (GenId, DiffPoly) {
    (GenId::new("e", &[1, 1]), DiffPoly::g("e", &[1, 1]))
}

fn x_so() -> (GenId, DiffPoly) {
    (GenId::new("f", &[1, 1]), DiffPoly::g("f", &[1, 1]))
}

fn miura_maps() -> Outcome {
    let mut out = Vec::new();
    for (tag, size, gen, want) in [
        (CatalogTag::SlPrincipal, 2, w(0).0, {
            let x = x_sl().1;
            x.mul(&x).add(&dn(&x, 1))
        }),
        (CatalogTag::BcPrincipal, 3, w(1).0, {
            let x = x_so().1;
            x.mul(&x).scale(&c(1, 4)).add(&dn(&x, 1))
        }),
    ] {
        let nd = tag.build(size).map_err(|e| e.to_string())?;
        let mu = wlax::miura_generators(&nd).map_err(|e| e.to_string())?;
        out.push(poly_is(&format!("μ for {tag} {size}"), &mu[&gen], &want));
        let m = wlax::miura(&nd, false, -8).map_err(|e| e.to_string())?;
        let fac = wlax::miura_factorized(&nd, -8).map_err(|e| e.to_string())?;
        if !m.scalar().unwrap().eq_within(&fac) {
            out.push(Err(format!("{tag} {size}: Miura quasideterminant is not the factorized product")));
        }
    }
    all(out)
}

fn mkdv() -> Outcome {
    let m = build_modified("sl2")?;
    let (gx, x) = x_sl();
    let t3 = lin(&[(c(1, 4), dn(&x, 3)), (c(-3, 2), x.mul(&x).mul(&dn(&x, 1)))]);
    let got = flow(&m, 3)?;
    flow_is("mKdV t3", &got, &one_flow(gx, t3))?;
    flow_is("mKdV t1", &flow(&m, 1)?, &one_flow(gx, dn(&x, 1)))?;
    let mu: Flow = one_flow(w(0).0, x.mul(&x).add(&dn(&x, 1)));
    let kdv = flow(&build("sl2")?, 3)?;
    if miura_compatible(&mu, &kdv, &got) {
        Ok(())
    } else {
        Err("μ does not carry mKdV to KdV".into())
    }
}

fn msk_rhs(x: &DiffPoly) -> DiffPoly {
    let x1 = dn(x, 1);
    let x2 = dn(x, 2);
    let x3 = dn(x, 3);
    lin(&[
        (c(-1, 9), dn(x, 5)),
        (c(-5, 9), x1.mul(&x3)),
        (c(5, 9), x.mul(x).mul(&x3)),
        (c(-5, 9), x2.mul(&x2)),
        (c(20, 9), x.mul(&x1).mul(&x2)),
        (c(5, 9), x1.pow(3)),
        (c(-5, 9), x.pow(4).mul(&x1)),
    ])
}

fn mkk_rhs(x: &DiffPoly) -> DiffPoly {
    let x1 = dn(x, 1);
    let x2 = dn(x, 2);
    let x3 = dn(x, 3);
    lin(&[
        (c(-1, 9), dn(x, 5)),
        (c(5, 18), x1.mul(&x3)),
        (c(5, 36), x.mul(x).mul(&x3)),
        (c(5, 18), x2.mul(&x2)),
        (c(5, 9), x.mul(&x1).mul(&x2)),
        (c(5, 36), x1.pow(3)),
        (c(-5, 144), x.pow(4).mul(&x1)),
    ])
}

fn modified_sk() -> Outcome {
    let m = build_modified("sp2-d")?;
    let (gx, x) = x_sl();
    let got = flow(&m, 5)?;
    flow_is("modified SK t5", &got, &one_flow(gx, msk_rhs(&x)))?;
    let mu = one_flow(w(1).0, x.mul(&x).add(&dn(&x, 1)));
    let sk = flow(&build("sp2-d")?, 5)?;
    if miura_compatible(&mu, &sk, &got) {
        Ok(())
    } else {
        Err("μ does not carry modified SK to SK".into())
    }
}

fn modified_kk() -> Outcome {
    let m = build_modified("so3")?;
    let (gx, x) = x_so();
    let got = flow(&m, 5)?;
    flow_is("modified KK t5", &got, &one_flow(gx, mkk_rhs(&x)))?;
    let nd = CatalogTag::BcPrincipal.build(3).map_err(|e| e.to_string())?;
    let mu = wlax::miura_generators(&nd).map_err(|e| e.to_string())?;
    let kk = flow(&build("so3")?, 5)?;
    if miura_compatible(&mu, &kk, &got) {
        Ok(())
    } else {
        Err("μ does not carry modified KK to KK".into())
    }
}

/// With x = −2y the modified KK flow in y is the modified SK flow.
fn modified_rescaling() -> Outcome {
    let (gx, x) = x_so();
    let (gy, y) = x_sl();
    let kk = one_flow(gx, mkk_rhs(&x));
    let rescaled = rescale_flow(&kk, gx, &c(-2, 1));
    let rename: Flow = one_flow(gx, y.clone());
    let in_y = rescaled[&gx].substitute(&rename);
    poly_is("rescaled modified KK", &in_y, &msk_rhs(&y))?;
    let _ = gy;
    Ok(())
}

// --- minimal gl_N / sl_N ----------------------------------------------------------

type PolyMat = Vec<Vec<DiffPoly>>;

fn mat_mul(a: &PolyMat, b: &PolyMat) -> PolyMat {
    let (r, k, s) = (a.len(), b.len(), b.first().map_or(0, |x| x.len()));
    (0..r)
        .map(|i| {
            (0..s)
                .map(|j| (0..k).fold(DiffPoly::zero(), |acc, t| acc.add(&a[i][t].mul(&b[t][j]))))
                .collect()
        })
        .collect()
}

fn mat_map(a: &PolyMat, f: impl Fn(&DiffPoly) -> DiffPoly) -> PolyMat {
    a.iter().map(|r| r.iter().map(&f).collect()).collect()
}

fn mat_add(a: &PolyMat, b: &PolyMat) -> PolyMat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p.add(q)).collect()).collect()
}

fn mat_scale(a: &PolyMat, k: &Rational) -> PolyMat {
    mat_map(a, |p| p.scale(k))
}

fn mat_d(a: &PolyMat, k: u32) -> PolyMat {
    mat_map(a, |p| dn(p, k))
}

fn scalar_mat(p: &DiffPoly, n: usize) -> PolyMat {
    (0..n).map(|i| (0..n).map(|j| if i == j { p.clone() } else { DiffPoly::zero() }).collect()).collect()
}

struct MinimalData {
    n: usize,
    w11: DiffPoly,
    wn1: DiffPoly,
    /// 1×(N−2)
    row: PolyMat,
    /// (N−2)×(N−2), entry (a, b) = w_{b,a}
    wpp: PolyMat,
    /// (N−2)×1
    col: PolyMat,
}

impl MinimalData {
    fn new(n: usize, sl: bool) -> Self {
        let k = n - 2;
        let w11 = if sl { (2..n).fold(DiffPoly::zero(), |a, i| a.sub(&w2(i, i))) } else { w2(1, 1) };
        MinimalData {
            n,
            w11,
            wn1: w2(n, 1),
            row: vec![(2..n).map(|i| w2(i, 1)).collect()],
            wpp: (0..k).map(|a| (0..k).map(|b| w2(b + 2, a + 2)).collect()).collect(),
            col: (2..n).map(|i| vec![w2(n, i)]).collect(),
        }
    }

    fn flow_from(&self, wn1: DiffPoly, wpp: Option<PolyMat>, row: PolyMat, col: PolyMat) -> Flow {
        let n = self.n;
        let mut f = Flow::new();
        f.insert(w2id(n, 1), wn1);
        if let Some(m) = wpp {
            for a in 0..n - 2 {
                for b in 0..n - 2 {
                    f.insert(w2id(b + 2, a + 2), m[a][b].clone());
                }
            }
        }
        for i in 0..n - 2 {
            f.insert(w2id(i + 2, 1), row[0][i].clone());
            f.insert(w2id(n, i + 2), col[i][0].clone());
        }
        f
    }

    fn t1(&self) -> Flow {
        let k = self.n - 2;
        let w11 = &self.w11;
        let wn1 = lin(&[(c(1, 1), dn(&self.wn1, 1)), (c(1, 2), w11.mul(&dn(w11, 1))), (c(1, 2), dn(w11, 2))]);
        let shifted = mat_add(&self.wpp, &scalar_mat(&w11.scale(&c(-1, 2)), k));
        let row = mat_add(&mat_d(&self.row, 1), &mat_scale(&mat_mul(&self.row, &shifted), &c(-1, 1)));
        let col = mat_add(&mat_d(&self.col, 1), &mat_mul(&shifted, &self.col));
        self.flow_from(wn1, Some(mat_scale(&self.wpp, &Rational::zero())), row, col)
    }

    fn t2(&self) -> Flow {
        let k = self.n - 2;
        let w11 = &self.w11;
        let rc = mat_mul(&self.row, &self.col)[0][0].clone();
        let wn1 = dn(&rc, 1).scale(&c(-2, 1));
        let shifted = mat_add(&self.wpp, &scalar_mat(&w11.scale(&c(-1, 2)), k));
        let wmw11 = mat_add(&self.wpp, &scalar_mat(&w11.neg(), k));
        let row = [
            mat_d(&self.row, 2),
            mat_scale(&mat_mul(&mat_d(&self.row, 1), &shifted), &c(-2, 1)),
            mat_scale(&mat_mul(&self.row, &mat_d(&self.wpp, 1)), &c(-1, 1)),
            mat_mul(&mat_mul(&self.row, &self.wpp), &wmw11),
            mat_scale(&mat_mul(&self.row, &scalar_mat(&self.wn1, k)), &c(-1, 1)),
        ]
        .into_iter()
        .reduce(|a, b| mat_add(&a, &b))
        .unwrap();
        let dwmw11 = mat_add(&mat_d(&self.wpp, 1), &scalar_mat(&dn(w11, 1).neg(), k));
        let col = [
            mat_scale(&mat_d(&self.col, 2), &c(-1, 1)),
            mat_scale(&mat_mul(&shifted, &mat_d(&self.col, 1)), &c(-2, 1)),
            mat_scale(&mat_mul(&dwmw11, &self.col), &c(-1, 1)),
            mat_scale(&mat_mul(&mat_mul(&wmw11, &self.wpp), &self.col), &c(-1, 1)),
            mat_mul(&scalar_mat(&self.wn1, k), &self.col),
        ]
        .into_iter()
        .reduce(|a, b| mat_add(&a, &b))
        .unwrap();
        self.flow_from(wn1, Some(mat_scale(&self.wpp, &Rational::zero())), row, col)
    }

    fn reduced(&self, n: i32) -> Flow {
        let rc = mat_mul(&self.row, &self.col)[0][0].clone();
        let k = self.n - 2;
        if n == 1 {
            return self.flow_from(dn(&self.wn1, 1), None, mat_d(&self.row, 1), mat_d(&self.col, 1));
        }
        let row = mat_add(&mat_d(&self.row, 2), &mat_scale(&mat_mul(&self.row, &scalar_mat(&self.wn1, k)), &c(-1, 1)));
        let col = mat_add(&mat_scale(&mat_d(&self.col, 2), &c(-1, 1)), &mat_mul(&scalar_mat(&self.wn1, k), &self.col));
        self.flow_from(dn(&rc, 1).scale(&c(-2, 1)), None, row, col)
    }

    fn constraints(&self, with_w11: bool) -> BTreeMap<GenId, Rational> {
        let mut m: BTreeMap<GenId, Rational> = (2..self.n).flat_map(|i| (2..self.n).map(move |j| (w2id(i, j), Rational::zero()))).collect();
        if with_w11 {
            m.insert(w2id(1, 1), Rational::zero());
        }
        m
    }
}

fn minimal_gl(n: usize, sl: bool) -> Outcome {
    let id = format!("{}-min-{n}", if sl { "sl" } else { "gl" });
    let b = build(&id)?;
    let data = MinimalData::new(n, sl);
    let mut out = Vec::new();
    for (t, want) in [(1, data.t1()), (2, data.t2())] {
        let got = flow(&b, t)?;
        out.push(flow_is(&format!("{id} t{t}"), &got, &want));
        let rhs = b.rhs(t).map_err(|e| e.to_string())?;
        let mut claim = want.clone();
        if !sl {
            claim.insert(w2id(1, 1), got.get(&w2id(1, 1)).cloned().unwrap_or_default());
        }
        if !verify_flow(&b.op, &claim, &rhs) {
            out.push(Err(format!("{id} t{t}: display fails D_L(ẇ) = [P, L]")));
        }
        let reduced = constrain(&got, &data.constraints(!sl)).map_err(|e| format!("{id} t{t}: {e}"))?;
        let zero: Flow = data.constraints(!sl).keys().map(|g| (*g, DiffPoly::zero())).collect();
        let want_reduced: Flow = data.reduced(t).into_iter().map(|(g, p)| (g, p.substitute(&zero))).collect();
        out.push(flow_is(&format!("{id} t{t} reduced"), &reduced, &want_reduced));
    }
    all(out)
}

// --- minimal sp_N ---------------------------------------------------------------

/// (w₊₁ W₊₊ w̃₊₁, w₊₁ w̃₊₁′) for sp₄ with W₊₊ = Σ w_{kh} F̄_{hk}.
fn sp4_invariants() -> Result<(DiffPoly, DiffPoly), String> {
    let alg = crate::liealg::ClassicalAlgebra::build(crate::liealg::Family::Sp, 4).map_err(|e| e.to_string())?;
    let n = 4;
    let mut wpp: PolyMat = vec![vec![DiffPoly::zero(); 2]; 2];
    for h in 2..n {
        for k in 2..=alg.p(h) {
            for (a, b, v) in alg.f_elem(h, k).nonzero_entries() {
                if (1..n - 1).contains(&a) && (1..n - 1).contains(&b) {
                    wpp[a - 1][b - 1].add_scaled(&w2(k, h), &v);
                }
            }
        }
    }
    let row: PolyMat = vec![vec![w2(2, 1), w2(3, 1)]];
    let tilde: PolyMat = vec![vec![w2(3, 1).neg()], vec![w2(2, 1)]];
    let a = mat_mul(&mat_mul(&row, &wpp), &tilde)[0][0].clone();
    let b = mat_mul(&row, &mat_d(&tilde, 1))[0][0].clone();
    Ok((a, b))
}

fn sp_min_densities() -> Outcome {
    let (a, bq) = sp4_invariants()?;
    let u = w2(4, 1);
    let b = build("sp-min-4")?;
    let bd = build("sp-min-4-d")?;
    let bi = build("sp-min-4-dinv")?;
    all([
        density_is(&b, 1, &u),
        density_is(&b, 2, &DiffPoly::zero()),
        density_is(&b, 3, &lin(&[(c(-1, 4), u.mul(&u)), (c(1, 8), a.clone()), (c(1, 4), bq.clone())])),
        density_is(&bd, 1, &u),
        density_is(&bd, 2, &DiffPoly::zero()),
        density_is(&bd, 3, &lin(&[(c(1, 8), a.clone()), (c(1, 4), bq.clone())])),
        density_is(&bi, 1, &u),
        density_is(&bi, 2, &DiffPoly::zero()),
        density_is(&bi, 3, &lin(&[(c(-1, 1), u.mul(&u)), (c(1, 8), a), (c(1, 4), bq)])),
    ])
}

fn sp_min_reduced(side: i32) -> Outcome {
    let id = if side > 0 { "sp-min-4-d" } else { "sp-min-4-dinv" };
    let b = build(id)?;
    let got = flow(&b, 3)?;
    let cons: BTreeMap<GenId, Rational> = b.stationary.iter().map(|g| (*g, Rational::zero())).collect();
    let reduced = constrain(&got, &cons).map_err(|e| format!("{id}: {e}"))?;
    let u = w2(4, 1);
    let (v1, v2) = (w2(2, 1), w2(3, 1));
    let cross = lin(&[(c(-3, 4), v1.mul(&dn(&v2, 2))), (c(3, 4), v2.mul(&dn(&v1, 2)))]);
    let want: Flow = if side > 0 {
        [(w2id(4, 1), cross), (w2id(2, 1), dn(&v1, 3).sub(&u.mul(&dn(&v1, 1)))), (w2id(3, 1), dn(&v2, 3).sub(&u.mul(&dn(&v2, 1))))]
            .into_iter()
            .collect()
    } else {
        [
            (w2id(4, 1), lin(&[(c(1, 1), dn(&u, 3)), (c(-6, 1), u.mul(&dn(&u, 1))), (c(1, 1), cross)])),
            (w2id(2, 1), dn(&v1, 3).sub(&dn(&u.mul(&v1), 1).scale(&c(3, 1)))),
            (w2id(3, 1), dn(&v2, 3).sub(&dn(&u.mul(&v2), 1).scale(&c(3, 1)))),
        ]
        .into_iter()
        .collect()
    };
    if reduced.len() != want.len() {
        return Err(format!("{id}: reduced system has {} unknowns", reduced.len()));
    }
    flow_is(&format!("{id} reduced t3"), &reduced, &want)
}

// --- conservation ---------------------------------------------------------------

fn conserved(id: &str, ns: &[i32], ms: &[i32]) -> Outcome {
    let b = build(id)?;
    let flows: Vec<(i32, Flow)> = ns.iter().map(|&n| flow(&b, n).map(|f| (n, f))).collect::<Result<_, _>>()?;
    for &m in ms {
        let h = b.density(m).map_err(|e| e.to_string())?;
        for (n, f) in &flows {
            if !conservation_check(&h, f) {
                return Err(format!("{id}: d h{m}/dt{n} is not a total derivative"));
            }
        }
    }
    Ok(())
}

fn conservation_principal() -> Outcome {
    let set = [1, 2, 3, 5];
    all(["sl2", "sp2-d", "sp2-dinv", "so3", "so3-d", "so3-dinv"].iter().map(|id| conserved(id, &set, &set)))
}

fn conservation_minimal() -> Outcome {
    all(["gl-min-3", "sl-min-3", "sl-min-4", "sp-min-4", "sp-min-4-d", "sp-min-4-dinv"].iter().map(|id| conserved(id, &[1, 2, 3], &[1, 2, 3])))
}

/// Flow and density payload for one example and time, for serialization.
pub fn example_flow(id: &str, n: i32, floor: Option<i32>) -> Result<hierarchy::FlowResult, String> {
    let ex = Example::parse(id).ok_or_else(|| format!("unknown example {id}"))?;
    hierarchy::run_flow(&ex, n, floor, false).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let reports = run(&checks());
        let failed: Vec<_> = reports.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }

    #[test]
    fn perturbed_display_is_rejected() {
        let b = build("sl2").unwrap();
        let (g, w) = w(0);
        let rhs = b.rhs(3).unwrap();
        let bad = one_flow(g, kdv_rhs(&w).add(&w.mul(&dn(&w, 1)).scale(&c(1, 7))));
        assert!(!verify_flow(&b.op, &bad, &rhs));
    }
}
