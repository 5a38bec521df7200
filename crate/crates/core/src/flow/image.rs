use crate::error::{Error, Result};
use crate::image::{crop_to_mask, GrayImage, Mask};
use crate::nn::{Mat, Real};

/// Square padding around the object crop, relative to its larger side.
pub const IMAGE_PAD_RATIO: f64 = 1.15;

/// Object-centred square crop resized to `size × size`. Pixels outside the
/// mask are whitened; an empty mask falls back to the full frame.
pub fn prepare_image(image: &GrayImage, mask: Option<&Mask>, size: usize) -> Result<GrayImage> {
    let square = match mask {
        Some(m) if m.count() > 0 => crop_to_mask(image, m, IMAGE_PAD_RATIO)?,
        _ => image.pad_to_square(1.0, 1.0),
    };
    if size == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    Ok(square.resize(size, size))
}

/// Non-overlapping `patch × patch` tiles of a square image as rows, with
/// intensities flipped so the white background is 0.
pub fn image_patches<T: Real>(image: &GrayImage, patch: usize) -> Result<Mat<T>> {
    if patch == 0 || image.width != image.height || image.width % patch != 0 {
        return Err(Error::Shape(format!(
            "{}×{} image cannot be tiled by {patch}×{patch} patches",
            image.width, image.height
        )));
    }
    let per_side = image.width / patch;
    let mut out = Mat::zeros(per_side * per_side, patch * patch);
    for py in 0..per_side {
        for px in 0..per_side {
            let row = out.row_mut(py * per_side + px);
            for y in 0..patch {
                for x in 0..patch {
                    row[y * patch + x] = T::c(1.0 - image.get(px * patch + x, py * patch + y) as f64);
                }
            }
        }
    }
    Ok(out)
}
