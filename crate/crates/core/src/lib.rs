pub mod alda;
pub mod data;
pub mod harness;
pub mod io;
pub mod nn;
pub mod tensor;
