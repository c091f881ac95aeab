//! Desk-scale laboratory for shape-bias training of small convolutional
//! networks: stylized-data, mixed and domain-adversarial regimes on
//! procedurally generated shape/texture images.

pub mod data;
pub mod gradcheck;
pub mod harness;
pub mod models;
pub mod optim;
pub mod seed;
pub mod stylize;
pub mod tensor;
