use crate::error::{Error, Result};

/// Area-average pooling of a row-major `height × width` mask down to
/// `out_height × out_width`. Both sizes must divide evenly.
pub fn prepare_mask(
    mask: &[f64],
    height: usize,
    width: usize,
    out_height: usize,
    out_width: usize,
) -> Result<Vec<f64>> {
    if mask.len() != height * width {
        return Err(Error::Precondition(format!(
            "mask has {} values, expected {height}x{width}",
            mask.len()
        )));
    }
    if out_height == 0 || out_width == 0 || height % out_height != 0 || width % out_width != 0 {
        return Err(Error::Precondition(format!(
            "mask {height}x{width} cannot be pooled to {out_height}x{out_width}"
        )));
    }
    let (bh, bw) = (height / out_height, width / out_width);
    let area = (bh * bw) as f64;
    let mut out = vec![0.0; out_height * out_width];
    for r in 0..height {
        let row = &mask[r * width..(r + 1) * width];
        let out_row = &mut out[(r / bh) * out_width..(r / bh + 1) * out_width];
        for (c, v) in row.iter().enumerate() {
            out_row[c / bw] += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}
