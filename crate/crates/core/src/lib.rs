pub mod dataset;
pub mod diff;
pub mod dsl;
pub mod model;
pub mod motion;
pub mod oracle;
pub mod train;
pub mod vocab;

pub type Tensor32 = diff::Tensor<f32>;
pub type Tensor64 = diff::Tensor<f64>;
pub type Graph32 = diff::Graph<f32>;
pub type Graph64 = diff::Graph<f64>;
pub type Params32 = diff::ParamRegistry<f32>;
pub type Params64 = diff::ParamRegistry<f64>;
pub type Model32 = model::ImoreModel<f32>;
pub type Model64 = model::ImoreModel<f64>;
