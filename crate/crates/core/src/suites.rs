//! Batch verification runs shared by the command line and the test suites.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::liealg::{AdlerParams, CatalogTag, ClassicalAlgebra, Family};
use crate::par;
use crate::pva::{adler_check, iota_consistency, scalar_table_check, AffinePva, Cutoffs, ScalarRowReport};
use crate::qmat::QMat;
use crate::rational::{q, Rational};
use crate::wlax::{ancestor, crosscheck_deepening, slice_check};

/// Algebras whose ancestor operators are checked against the Adler identity.
pub const ADLER_ALGEBRAS: [(Family, usize); 6] = [
    (Family::Gl, 2),
    (Family::Gl, 3),
    (Family::Sl, 2),
    (Family::Sl, 3),
    (Family::Sp, 2),
    (Family::So, 3),
];

#[derive(Clone, Debug, Serialize)]
pub struct AdlerCase {
    pub label: String,
    pub params: (Rational, Rational, Rational),
    pub compared: usize,
    pub identity_holds: bool,
    /// Each perturbed parameter set, and whether the identity rejected it.
    pub controls: Vec<(String, bool)>,
    pub expansions_agree: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub millis: u128,
}

impl AdlerCase {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.identity_holds && self.expansions_agree && self.controls.iter().all(|c| c.1)
    }
}

fn perturbations(p: &AdlerParams) -> Vec<(String, AdlerParams)> {
    let half = q(1, 2);
    vec![
        ("γ+½".to_string(), AdlerParams::new(p.alpha.clone(), p.beta.clone(), &p.gamma + &half, p.eta)),
        ("α+½".to_string(), AdlerParams::new(&p.alpha + &half, p.beta.clone(), p.gamma.clone(), p.eta)),
    ]
}

fn adler_case(family: Family, n: usize, cut: Cutoffs) -> AdlerCase {
    let t = Instant::now();
    let mut case = AdlerCase {
        label: format!("{family}_{n}"),
        params: (Rational::zero(), Rational::zero(), Rational::zero()),
        compared: 0,
        identity_holds: false,
        controls: Vec::new(),
        expansions_agree: false,
        error: None,
        millis: 0,
    };
    let run = |case: &mut AdlerCase| -> Result<(), String> {
        let alg = ClassicalAlgebra::build(family, n).map_err(|e| e.to_string())?;
        let s = QMat::zeros(n, n);
        let a = ancestor(&alg, &s, true).op;
        let pva = AffinePva::new(alg.clone(), s, true);
        let p = alg.adler_params();
        case.params = (p.alpha.clone(), p.beta.clone(), p.gamma.clone());
        let r = adler_check(&pva, &a, &p, cut).map_err(|e| e.to_string())?;
        case.compared = r.compared;
        case.identity_holds = r.ok() && r.compared > 0;
        for (name, bad) in perturbations(&p) {
            let rejected = !adler_check(&pva, &a, &bad, cut).map_err(|e| e.to_string())?.ok();
            case.controls.push((name, rejected));
        }
        case.expansions_agree = iota_consistency(&a, &p, alg.form.as_ref(), cut).map_err(|e| e.to_string())?.ok();
        Ok(())
    };
    if let Err(e) = run(&mut case) {
        case.error = Some(e);
    }
    case.millis = t.elapsed().as_millis();
    case
}

/// Adler identity for every listed algebra of size at most `max_n`, with
/// negative controls and the large-z / large-w expansion comparison.
pub fn adler_suite(cut: Cutoffs, max_n: usize) -> Vec<AdlerCase> {
    let list: Vec<(Family, usize)> = ADLER_ALGEBRAS.iter().copied().filter(|&(_, n)| n <= max_n).collect();
    par::map(&list, |&(f, n)| adler_case(f, n, cut))
}

#[derive(Clone, Debug, Serialize)]
pub struct CrosscheckCase {
    pub tag: String,
    pub size: usize,
    pub target_floor: i32,
    pub verified_floor: Option<i32>,
    pub stopped_by_budget: bool,
    pub mismatch: bool,
    pub slice_floor: i32,
    pub slice_ok: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub millis: u128,
}

impl CrosscheckCase {
    pub fn ok(&self) -> bool {
        self.error.is_none() && !self.mismatch && self.verified_floor == Some(self.target_floor) && self.slice_ok
    }
}

/// Generic pipeline against template for each catalog tag at its two smallest
/// sizes, deepening towards `target` until the per-case `budget` runs out.
/// The W-slice comparison runs at `slice_floor`.
pub fn crosscheck_suite(target: i32, slice_floor: i32, budget: Duration) -> Vec<CrosscheckCase> {
    let list: Vec<(CatalogTag, usize)> = CatalogTag::ALL.iter().flat_map(|t| t.small_sizes().map(|n| (*t, n))).collect();
    par::map(&list, |&(tag, size)| {
        let t = Instant::now();
        let mut c = CrosscheckCase {
            tag: tag.name().to_string(),
            size,
            target_floor: target,
            verified_floor: None,
            stopped_by_budget: false,
            mismatch: false,
            slice_floor,
            slice_ok: false,
            error: None,
            millis: 0,
        };
        match crosscheck_deepening(tag, size, target, budget) {
            Ok(r) => {
                c.verified_floor = r.verified_floor;
                c.stopped_by_budget = r.stopped_by_budget;
                c.mismatch = r.failure.is_some();
            }
            Err(e) => c.error = Some(e.to_string()),
        }
        match slice_check(tag, size, slice_floor) {
            Ok(ok) => c.slice_ok = ok,
            Err(e) => c.error = Some(e.to_string()),
        }
        c.millis = t.elapsed().as_millis();
        c
    })
}

pub fn scalar_table_suite(cut: Cutoffs) -> Vec<ScalarRowReport> {
    scalar_table_check(cut)
}
