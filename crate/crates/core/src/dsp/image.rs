use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::mel::MelSpectrogram;
use crate::{Error, Result};

/// 8-bit grayscale PNG: one column per frame, highest mel band on the top row.
pub fn write_image(mel: &MelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (mel.frames(), mel.n_mels());
    let mut pixels = vec![0u8; w * h];
    for row in 0..h {
        let band = h - 1 - row;
        for col in 0..w {
            pixels[row * w + col] = (mel.at(col, band) * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| png_error(path, e))?;
    writer.write_image_data(&pixels).map_err(|e| png_error(path, e))?;
    writer.finish().map_err(|e| png_error(path, e))
}

fn png_error(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::NormStats;

    fn decode(path: &Path) -> (u32, u32, Vec<u8>) {
        let decoder = png::Decoder::new(File::open(path).unwrap());
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    #[test]
    fn pixel_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut mel =
            MelSpectrogram::new(128, 128, vec![0.0; 128 * 128], Some(NormStats { min: 0.0, max: 1.0 })).unwrap();
        write_image(&mel, &path).unwrap();
        let (w, h, px) = decode(&path);
        assert_eq!((w, h), (128, 128));
        assert!(px.iter().all(|&p| p == 0));

        mel.set(3, 0, 1.0);
        mel.set(5, 127, 0.5);
        write_image(&mel, &path).unwrap();
        let (_, _, px) = decode(&path);
        // lowest band at the bottom row
        assert_eq!(px[127 * 128 + 3], 255);
        assert_eq!(px[5], 128);
    }

    #[test]
    fn unwritable_path_has_context() {
        let mel = MelSpectrogram::new(1, 128, vec![0.0; 128], None).unwrap();
        let err = write_image(&mel, "/nonexistent/dir/x.png").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.png"));
    }
}
