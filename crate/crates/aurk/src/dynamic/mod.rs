//! Dynamic extensions: RoI timelines, the ConvLSTM head and two-stream
//! channel fusion.

pub mod convlstm;
pub mod timeline;
pub mod two_stream;

pub use convlstm::{
    cell_backward, cell_forward, sequence_backward, sequence_forward, CellCache, CellGrads,
    ConvLstmParams, ConvLstmState,
};
pub use timeline::{build_timelines, window_frames, window_span, window_starts};
pub use two_stream::{concat_channels, fuse_backward, fuse_forward, identity_fuse_weight};
