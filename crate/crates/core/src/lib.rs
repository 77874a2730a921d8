//! Classical W-algebra Lax operators over exact rationals.

pub mod diffalg;
pub mod hierarchy;
pub mod liealg;
pub mod matpsdo;
pub mod par;
pub mod psdo;
pub mod pva;
pub mod qmat;
pub mod rational;
pub mod suites;
pub mod wlax;
pub mod worked;

pub use diffalg::{DiffPoly, GenId, Var};
pub use rational::{q, Rational};
