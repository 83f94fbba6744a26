pub mod boxfit;
pub mod cluster;
pub mod evalmetrics;
pub mod exec;
pub mod geom;
pub mod pipeline;
pub mod triangulate;
