pub mod corpus;
pub mod diversity;
pub mod fsutil;
pub mod memory;
pub mod par;
pub mod quality;
pub mod report;
pub mod rng;
pub mod scores;
pub mod select;
