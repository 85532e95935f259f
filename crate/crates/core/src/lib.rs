//! Numerical construction of Monge-Ampere exhaustions on bounded circular
//! domains by flowing a deformation tensor along special vector fields.

pub mod cli;
pub mod deformation_flow;
pub mod diagnostics;
pub mod domain_profile;
pub mod jet;
pub mod polar_geometry;
pub mod special_fields;
pub mod transport;
