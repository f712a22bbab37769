//! Loss terms, their analytic gradients and the learnable semantic heads.

mod color;
mod heads;
mod inter;
mod intra;
mod local;
mod semantic;
mod spc3d;
pub mod ssim;
mod total;

pub use color::{loss_color, ColorLoss, LAMBDA_SSIM};
pub use heads::{
    HeadGrads, LinearGrad, LinearMap, SemanticHeads, TextBank, CONTRASTIVE_DIM, EMBED_DIM,
    RELEVANCY_INIT_GAIN,
};
pub use inter::{loss_inter, InterLoss};
pub use intra::{loss_intra, supcon, IntraConfig, IntraLoss, SupConOutput};
pub use local::{loss_local_adaptive, LocalConfig, LocalLoss};
pub use semantic::{
    logits_backward, loss_generated_semantic, loss_semantic, phi_uniform, segmentation_logits,
    SegmentationLogits, SemanticLoss, SupervisionMaps, IGNORE_LABEL, ZERO_NORM_EPS,
};
pub use spc3d::{kl_softmax, loss_spc3d, Spc3dLoss};
pub use total::{lambda, LossBreakdown, DEFAULT_LAMBDA_WARMUP};
pub(crate) use local::nearest_neighbors;
