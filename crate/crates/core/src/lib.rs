pub mod cli;
pub mod dynamics;
pub mod geometry;
pub mod linstab;
pub mod lyapunov;
pub mod starry_transform;
