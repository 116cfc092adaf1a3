//! Maskable transformer encoder, its gradients and the trainer.

mod checkpoint;
mod config;
mod gemm;
mod params;
mod train;
mod transformer;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{check_schema, init_params, MetricOrientation, ModelConfig, TrainConfig};
pub use params::{flatten, layer_index, probe_coordinates, schema_digest, Grads, ParamEntry, ParamSet};
pub use train::{eval_metric, train, HistoryPoint, TrainOutcome};
pub use transformer::{encode, evaluate, forward, loss_and_grad, predict_proba, EvalCounts, ForwardOutput};
