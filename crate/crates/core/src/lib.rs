pub mod control;
pub mod frame;
pub mod geometry;
pub mod handpose;
pub mod pipeline;
pub mod session;
pub mod simarm;
pub mod tracking;
