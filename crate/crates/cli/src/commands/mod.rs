pub mod conc;
pub mod cpe;
pub mod elbo;
pub mod rpb;
pub mod transforms;
