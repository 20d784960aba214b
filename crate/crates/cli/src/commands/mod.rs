pub mod aggregate;
pub mod annotate;
pub mod evaluate;
pub mod report;
pub mod split;
