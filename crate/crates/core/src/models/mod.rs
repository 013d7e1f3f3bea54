//! Datasets, the trainable MLP, and explicit interpolating constructions.

pub mod construction;
pub mod dataset;
pub mod mlp;

pub use construction::{
    build_fourier_solution, build_lookup_solution, build_lookup_with, ConstructionKind, LinearConstruction,
    ModularLogits, Pairing,
};
pub use dataset::{
    gen_modular_dataset, gen_parity_dataset, parity_label, ModExample, ModOp, ModularDataset, ParityDataset,
    ParityExample,
};
pub use mlp::{backward, evaluate, forward, grad_check, Activation, ForwardCache, Inputs, MlpModel, MlpShape};
