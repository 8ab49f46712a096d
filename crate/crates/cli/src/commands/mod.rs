pub mod enhance;
pub mod eval;
pub mod train;
pub mod validate;
pub mod vote;
