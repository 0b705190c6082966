//! Metrics: masked geodesic reports, autoencoder-feature FID and the
//! blending-window and ablation comparisons.

pub mod autoencoder;
pub mod fid;
pub mod report;
pub mod sweep;

pub use autoencoder::{train_autoencoder, AeTraining, Autoencoder, AutoencoderConfig};
pub use fid::{fid, fit_gaussian, GaussianStats};
pub use report::{geodesic_report, junction_cases};
pub use sweep::{ablation, fid_minimum, format_sweep, window_sweep, AblationRow, Method, SweepRow};
