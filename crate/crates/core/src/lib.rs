pub mod globality;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod scratchpad;
pub mod tasks;
