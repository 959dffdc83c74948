//! Layer graph, parameters and the forward pass of the classifiers.

pub mod checkpoint;
mod forward;
mod params;
mod spec;

pub use forward::{
    argmax, check_input, forward_on_tape, reshape_for_head, reshape_for_head_on_tape, windows_to_batch,
    Classifier, Evaluation, Head,
};
pub use params::{build_model, parameter_count, ParameterSet};
pub use spec::{Activation, FeatureShape, InputDims, LayerSpec, ModelSpec};
