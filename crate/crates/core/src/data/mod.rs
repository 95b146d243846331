//! Trajectory datasets: the VQBD file format, action normalization and
//! windowing into training samples.

pub mod dataset;
pub mod normalize;
pub mod window;

pub use dataset::{read_dataset, write_dataset, Manifest, Trajectory, TrajectoryDataset};
pub use normalize::{denormalize, normalize_actions, ActionStats};
pub use window::{make_sample, window_indices, window_iter, GoalMode, WindowIndex, WindowSample, WindowSpec};
