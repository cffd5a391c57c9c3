//! From-scratch neural network stack: dense tensors, a recording autodiff
//! tape, a pre-norm decoder Transformer, AdamW, attention probes and
//! checkpoints.

pub mod adamw;
pub mod checkpoint;
pub mod graph;
pub mod probe;
pub mod tensor;
pub mod transformer;

pub use adamw::{AdamW, OptimizerConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, NodeId, ParamId, ParamStore};
pub use probe::{attention_cv, attention_entropy, AttentionProbe, CvWeighting, ProbeRow};
pub use tensor::{Scalar, Tensor};
pub use transformer::{ForwardPass, LogitRows, NormScope, ProbeMode, Transformer, TransformerConfig};
