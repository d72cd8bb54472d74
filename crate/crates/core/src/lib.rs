pub mod chains;
pub mod dynamics;
pub mod experiments;
pub mod horton;
pub mod io;
pub mod level_set;
pub mod rng;
pub mod stats;
pub mod tree;
