//! PNG encoding of rendered RGB frames for protocol messages.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use epilogue::model::{DType, Tensor, TensorData};

use crate::{CollectError, Result};

/// Encodes a u8 `[H, W, 3]` tensor as PNG.
pub fn encode_png(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match (image.dtype(), image.shape()) {
        (DType::U8, &[h, w, 3]) => (h, w),
        (dtype, shape) => {
            return Err(CollectError::InvalidArgument(format!("expected u8 [H, W, 3] image, got {dtype} {shape:?}")))
        }
    };
    let TensorData::U8(pixels) = image.data() else {
        unreachable!("dtype checked above");
    };
    let mut out = Vec::with_capacity(pixels.len() / 4);
    let mut encoder = png::Encoder::new(&mut out, w as u32, h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Fast);
    let png_err = |e: png::EncodingError| CollectError::InvalidArgument(format!("png encoding: {e}"));
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}

/// Decodes an RGB PNG back into a u8 `[H, W, 3]` tensor.
pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let bad = |e: png::DecodingError| CollectError::InvalidArgument(format!("png decoding: {e}"));
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| CollectError::InvalidArgument("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(CollectError::InvalidArgument("expected 8-bit RGB png".into()));
    }
    buf.truncate(info.buffer_size());
    Ok(Tensor::new(vec![info.height as usize, info.width as usize, 3], TensorData::U8(buf))?)
}

/// PNG frame as base64 text.
pub fn encode_frame(image: &Tensor) -> Result<String> {
    Ok(STANDARD.encode(encode_png(image)?))
}

pub fn decode_frame(text: &str) -> Result<Tensor> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| CollectError::InvalidArgument(format!("base64: {e}")))?;
    decode_png(&bytes)
}
