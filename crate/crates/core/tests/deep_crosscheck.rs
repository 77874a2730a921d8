//! Deep generic-against-template comparisons that take minutes each.
//! Run with `cargo test --release -- --ignored`.

use wlax::liealg::CatalogTag;
use wlax::wlax::crosscheck;

fn deep(tag: CatalogTag, size: usize, floor: i32) {
    let r = crosscheck(tag, size, floor).unwrap();
    assert!(r.ok(), "{tag} {size} at {floor}: {:?}", r.mismatches);
}

#[test]
#[ignore]
fn gl_minimal_3_to_floor_16() {
    deep(CatalogTag::GlMinimal, 3, -16);
}

#[test]
#[ignore]
fn sl_minimal_3_to_floor_16() {
    deep(CatalogTag::SlMinimal, 3, -16);
}

#[test]
#[ignore]
fn sp_minimal_4_to_floor_10() {
    deep(CatalogTag::SpMinimal, 4, -10);
}

#[test]
#[ignore]
fn so4n_distinguished_2_to_floor_8() {
    deep(CatalogTag::So4nDistinguished, 2, -8);
}
