use std::io::Write;

use super::EvalError;
use crate::data::LabelRaster;

/// Colour of class `i` at index `i`; class 0 (unlabeled) is black.
pub const PALETTE: [[u8; 3]; 17] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

/// Binary P6 pixmap bytes for a label raster.
pub fn render_map(raster: &LabelRaster) -> Result<Vec<u8>, EvalError> {
    if let Some(&l) = raster.labels.iter().find(|&&l| l as usize >= PALETTE.len()) {
        return Err(EvalError::Contract(format!("class {l} has no palette colour (max {})", PALETTE.len() - 1)));
    }
    let mut out = format!("P6\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.reserve(raster.labels.len() * 3);
    for &l in &raster.labels {
        out.extend_from_slice(&PALETTE[l as usize]);
    }
    Ok(out)
}

pub fn write_map(mut w: impl Write, raster: &LabelRaster) -> std::io::Result<()> {
    let bytes = render_map(raster).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    w.write_all(&bytes)
}

/// Inverse of [`render_map`]: reads a P6 image whose pixels are all palette
/// colours.
pub fn parse_map(bytes: &[u8]) -> Result<LabelRaster, EvalError> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(EvalError::Image("truncated header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| EvalError::Image("header is not ASCII".into()))?);
    }
    if fields[0] != "P6" {
        return Err(EvalError::Image(format!("magic {:?} is not P6", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| EvalError::Image(format!("bad header field {s:?}")));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(EvalError::Image(format!("max value {max} is not 255")));
    }
    let body = &bytes[pos + 1..];
    if body.len() != w * h * 3 {
        return Err(EvalError::Image(format!("expected {} pixel bytes, found {}", w * h * 3, body.len())));
    }
    let labels = body
        .chunks_exact(3)
        .map(|px| {
            PALETTE
                .iter()
                .position(|c| c == px)
                .map(|i| i as u16)
                .ok_or_else(|| EvalError::Image(format!("colour {px:?} is not in the palette")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    LabelRaster::new(h, w, labels).map_err(|e| EvalError::Image(e.to_string()))
}
