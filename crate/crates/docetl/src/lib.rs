pub mod dsl;
pub mod gateway;
pub mod model;
pub mod ops;
pub mod optimizer;
pub mod rewrite;
