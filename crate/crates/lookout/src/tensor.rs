//! Conversions between host images and NCHW tensors.

use candle_core::{DType, Device, Tensor};
use lookout_core::image::CHANNELS;
use lookout_core::{Image, Mask};

use crate::error::{Error, Result};

/// Stacks equally sized images into a (B, 3, H, W) tensor.
pub fn images_to_tensor(images: &[&Image], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("cannot stack zero images".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * CHANNELS * h * w);
    for img in images {
        img.ensure_dims(h, w)?;
        chw_into(img, &mut data);
    }
    Ok(Tensor::from_vec(data, (images.len(), CHANNELS, h, w), device)?.to_dtype(dtype)?)
}

/// Appends the channel-first layout of `img` to `out`.
pub fn chw_into(img: &Image, out: &mut Vec<f32>) {
    let (h, w) = img.dims();
    let src = img.as_slice();
    for c in 0..CHANNELS {
        out.extend((0..h * w).map(|i| src[i * CHANNELS + c]));
    }
}

/// Stacks masks into a (B, 1, H, W) tensor of zeros and ones.
pub fn masks_to_tensor(masks: &[&Mask], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Invalid("cannot stack zero masks".into()))?;
    let (h, w) = (first.height(), first.width());
    let data: Vec<f32> = masks
        .iter()
        .flat_map(|m| m.as_slice().iter().map(|&b| b as u8 as f32))
        .collect();
    Ok(Tensor::from_vec(data, (masks.len(), 1, h, w), device)?.to_dtype(dtype)?)
}

/// Splits a (B, 3, H, W) tensor into host images.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (b, c, h, w) = t.dims4()?;
    if c != CHANNELS {
        return Err(Error::Invalid(format!("expected {CHANNELS} channels, got {c}")));
    }
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = h * w;
    (0..b)
        .map(|i| {
            let base = i * c * plane;
            let mut data = vec![0f32; plane * CHANNELS];
            for ch in 0..CHANNELS {
                for p in 0..plane {
                    data[p * CHANNELS + ch] = flat[base + ch * plane + p];
                }
            }
            Ok(Image::from_vec(h, w, data)?)
        })
        .collect()
}

/// Host copy of a tensor as f64 values.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let a = Image::from_fn(3, 5, |y, x, c| (y * 100 + x * 10 + c) as f32);
        let b = a.map(|v| -v);
        let t = images_to_tensor(&[&a, &b], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[2, 3, 3, 5]);
        assert_eq!(
            t.get(0)
                .unwrap()
                .get(2)
                .unwrap()
                .get(1)
                .unwrap()
                .get(4)
                .unwrap()
                .to_scalar::<f32>()
                .unwrap(),
            142.0
        );
        let back = tensor_to_images(&t).unwrap();
        assert_eq!(back, vec![a, b]);
    }
}
