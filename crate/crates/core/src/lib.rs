//! Maximum-entropy ranking of teams in fragmented leagues with bonus points.

pub mod domain;
pub mod estimate;
pub mod ingest;
pub mod model;
pub mod rank;
pub mod simulate;
