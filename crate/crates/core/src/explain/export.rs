//! Attention export: space maps as 8-bit PGM images, time attention as CSV
//! and the full space-time attention as an AVTF tensor.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, StanError};
use crate::io::{write_feature_file, ClipRecord};
use crate::model::Stan;
use crate::tensor::Tensor;

/// Bilinear resize of a row-major `h x w` image with half-pixel centres and
/// edge clamping.
pub fn bilinear_upsample(img: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if img.len() != h * w || h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(StanError::dim("bilinear_upsample", &[h, w], &[out_h, out_w]));
    }
    let axis = |i: usize, n_in: usize, n_out: usize| {
        let x = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (x.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (r0, r1, fr) = axis(r, h, out_h);
        for c in 0..out_w {
            let (c0, c1, fc) = axis(c, w, out_w);
            let top = img[r0 * w + c0] * (1.0 - fc) + img[r0 * w + c1] * fc;
            let bot = img[r1 * w + c0] * (1.0 - fc) + img[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bot * fr);
        }
    }
    Ok(out)
}

/// Binary PGM (P5) with pixels `round(clamp(v, 0, 1) * 255)`.
pub fn encode_pgm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(StanError::dim("encode_pgm", &[values.len()], &[height, width]));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Files written by [`export_attention`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportedFiles {
    pub space_maps: Vec<PathBuf>,
    pub time_csv: PathBuf,
    pub space_time: PathBuf,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| StanError::io(path, e))
}

/// Write the attention of `clip` under `dir`:
/// `{id}_space_t{t}.pgm` per step (models with a space path only),
/// `{id}_time.csv` and `{id}_spacetime.avtf`.
pub fn export_attention(model: &Stan<f32>, clip: &ClipRecord, dir: impl AsRef<Path>, size: usize) -> Result<ExportedFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| StanError::io(dir, e))?;
    let att = model.forward(clip)?.attention;
    let (t, h, w) = (model.config.t, model.config.h, model.config.w);

    let mut files = ExportedFiles::default();
    if let Some(space) = &att.space {
        let v = space.to_f64_vec();
        for step in 0..t {
            let img = bilinear_upsample(&v[step * h * w..(step + 1) * h * w], h, w, size, size)?;
            let path = dir.join(format!("{}_space_t{step:02}.pgm", clip.id));
            write(&path, &encode_pgm(&img, size, size)?)?;
            files.space_maps.push(path);
        }
    }

    let line: Vec<String> = att.time.data().iter().map(|a| format!("{a:.6}")).collect();
    files.time_csv = dir.join(format!("{}_time.csv", clip.id));
    write(&files.time_csv, format!("{}\n", line.join(",")).as_bytes())?;

    files.space_time = dir.join(format!("{}_spacetime.avtf", clip.id));
    let st: Tensor<f32> = att.space_time;
    write_feature_file(&st, &files.space_time)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsampling_constant_stays_constant() {
        let out = bilinear_upsample(&[0.3; 49], 7, 7, 224, 224).unwrap();
        assert_eq!(out.len(), 224 * 224);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn upsampling_identity_size() {
        let img: Vec<f64> = (0..6).map(|i| i as f64).collect();
        assert_eq!(bilinear_upsample(&img, 2, 3, 2, 3).unwrap(), img);
    }

    #[test]
    fn upsampling_interpolates_between_pixels() {
        // 1x2 -> 1x4: centres at 0.25 and 0.75 of the way between inputs.
        let out = bilinear_upsample(&[0.0, 1.0], 1, 2, 1, 4).unwrap();
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn pgm_layout() {
        let b = encode_pgm(&[0.0, 0.5, 1.0, 2.0], 2, 2).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&b[..header.len()], header);
        assert_eq!(&b[header.len()..], &[0, 128, 255, 255]);
    }
}
