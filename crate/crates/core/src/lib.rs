pub mod chain;
pub mod driver;
pub mod exec;
pub mod geometry;
pub mod kernel;
pub mod quadrature;
pub mod rk45;
pub mod skle;
pub mod slit_ode;
pub mod transform;
