pub mod corpus;
pub mod diffcore;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod prototypes;
pub mod training;
