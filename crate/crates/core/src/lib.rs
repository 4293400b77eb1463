pub mod ir;
pub mod vm;
pub mod xform;
pub mod corpus;
pub mod inject;
pub mod cost;
pub mod testgen;
