use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::par;
use crate::raster::Image;
use crate::tensor::Tensor;

use super::NetParams;

fn crop_into(
    image: &Image,
    bbox: &BBox,
    side: usize,
    means: [f32; 3],
    context_pad: usize,
    out: &mut [f32],
) -> Result<()> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    if !bbox.is_inside(w + 1e-6, h + 1e-6) || bbox.x_min() < -1e-6 || bbox.y_min() < -1e-6 {
        return Err(Error::DegenerateBox(format!(
            "{:?} is not inside the {}x{} image",
            bbox.to_array(),
            image.width(),
            image.height()
        )));
    }
    let region = if context_pad == 0 {
        *bbox
    } else {
        // grow the box so that it maps onto the central (side - 2 * pad) pixels
        let f = side as f64 / (side - 2 * context_pad) as f64;
        let (cx, cy) = (
            0.5 * (bbox.x_min() + bbox.x_max()),
            0.5 * (bbox.y_min() + bbox.y_max()),
        );
        let (hw, hh) = (0.5 * bbox.width() * f, 0.5 * bbox.height() * f);
        BBox::new(cx - hw, cy - hh, cx + hw, cy + hh)?
    };
    let warped = image.warp_region(&region, side, side);
    let plane = side * side;
    for c in 0..3 {
        let m = means[c];
        for (o, &v) in out[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(&warped[c * plane..(c + 1) * plane])
        {
            *o = v - m;
        }
    }
    Ok(())
}

/// Crop `bbox` out of `image`, warp it bilinearly to `S x S` (ignoring aspect
/// ratio), and subtract the per-channel means. Returns `1 x 3 x S x S`.
pub fn preprocess_crop(params: &NetParams<f32>, image: &Image, bbox: &BBox) -> Result<Tensor<f32>> {
    let s = params.config.input_side;
    let mut out = vec![0.0f32; 3 * s * s];
    crop_into(
        image,
        bbox,
        s,
        params.means,
        params.config.context_pad,
        &mut out,
    )?;
    Tensor::from_vec(&[1, 3, s, s], out)
}

/// Preprocess many `(image, box)` pairs into one `n x 3 x S x S` batch.
/// Errors name the offending item index.
pub fn crop_batch(params: &NetParams<f32>, items: &[(&Image, BBox)]) -> Result<Tensor<f32>> {
    let s = params.config.input_side;
    let per = 3 * s * s;
    let mut data = vec![0.0f32; items.len() * per];
    let mut slots: Vec<&mut [f32]> = data.chunks_mut(per).collect();
    let errors = std::sync::Mutex::new(Vec::new());
    par::for_each_mut(&mut slots, |i, out| {
        let (img, b) = items[i];
        if let Err(e) = crop_into(img, &b, s, params.means, params.config.context_pad, out) {
            errors.lock().expect("poisoned").push((i, e));
        }
    });
    let mut errors = errors.into_inner().expect("poisoned");
    errors.sort_by_key(|(i, _)| *i);
    if let Some((i, e)) = errors.into_iter().next() {
        return Err(Error::at_box(i, e));
    }
    Tensor::from_vec(&[items.len(), 3, s, s], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdef::{build_net, NetConfig};

    fn params_with_side(side: usize) -> NetParams<f32> {
        let mut cfg = NetConfig::small();
        cfg.input_side = side;
        let mut p = build_net(&NetConfig::small()).unwrap();
        p.config = cfg;
        p
    }

    #[test]
    fn full_image_box_is_identity() {
        let s = 140;
        let data: Vec<f32> = (0..3 * s * s).map(|i| (i % 251) as f32).collect();
        let img = Image::new(s, s, data.clone()).unwrap();
        let p = params_with_side(s);
        let t = preprocess_crop(&p, &img, &img.full_box()).unwrap();
        assert_eq!(t.shape(), &[1, 3, s, s]);
        assert_eq!(t.data(), data.as_slice());
    }

    #[test]
    fn mean_subtraction_zeroes_constant_image() {
        let img = Image::filled(50, 40, [120.0, 80.0, 30.0]);
        let mut p = params_with_side(140);
        p.means = [120.0, 80.0, 30.0];
        let b = BBox::new(5.0, 5.0, 30.0, 25.0).unwrap();
        let t = preprocess_crop(&p, &img, &b).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn box_outside_image_rejected() {
        let img = Image::filled(50, 40, [0.0; 3]);
        let p = params_with_side(140);
        let b = BBox::new(30.0, 5.0, 60.0, 25.0).unwrap();
        assert!(matches!(preprocess_crop(&p, &img, &b), Err(Error::DegenerateBox(_))));
        let good = BBox::new(1.0, 1.0, 5.0, 5.0).unwrap();
        match crop_batch(&p, &[(&img, good), (&img, b)]) {
            Err(Error::AtBox { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected AtBox error, got {other:?}"),
        }
    }
}
