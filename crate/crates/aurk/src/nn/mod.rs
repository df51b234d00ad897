//! From-scratch neural network kernels with hand-derived gradients.

pub mod conv;
pub mod fc;
pub mod fpn;
pub mod loss;
pub mod optim;
pub mod preprocess;
pub mod roi_pool;

pub use conv::{conv2d_backward, conv2d_forward};
pub use fc::{linear_backward, linear_forward, relu_backward, relu_forward};
pub use fpn::fpn_level;
pub use loss::{sigmoid, sigmoid_ce_loss};
pub use optim::{lr_schedule, SgdMomentum};
pub use preprocess::{mirror_boxes, mirror_image, preprocess, subtract_mean};
pub use roi_pool::{roi_pool_backward, roi_pool_forward, RoiPoolOutput, RoiSpec};
