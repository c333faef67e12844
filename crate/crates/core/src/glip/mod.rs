//! Label propagation over query-choice nodes with a trained graph attention
//! network.

pub mod adam;
pub mod dump;
pub mod gat;
pub mod graph;
pub mod loss;
pub mod train;

pub use gat::{gat_forward, GatModel, GatParams};
pub use graph::{build_glip_graph, GlipGraph};
pub use loss::{mean_neg_edge_cosine, mec_loss};
pub use train::{loss_and_gradients, predict_labels, train_glip, GlipConfig, LossParts, TrainState, Trainable};
