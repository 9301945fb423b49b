//! Dense array types, file codecs and resolution transforms.

mod gst;
pub mod io;
pub mod pfm;
mod plane;
mod resample;
mod tensor;

pub use gst::{gst_decode, gst_encode, GST_MAGIC};
pub use pfm::{pfm_read, pfm_write};
pub use plane::{DisparityMap, ImagePlane, ValidityMask};
pub use resample::{disparity_rescale, normalize_and_scale, resize_bilinear};
pub use tensor::TensorF32;
