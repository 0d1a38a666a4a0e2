//! Image, float-field, curve and report files.
//!
//! Grayscale images (PGM P2/P5, PNG) are normalised to `[0, 1]` on read by
//! their maximum sample value and written as 16-bit. Float fields use the
//! SF2D layout: `b"SF2D"`, width and height as `u32` LE, four zero bytes,
//! then row-major `f32` LE samples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ImageBuffer, ImageFormat, ImageReader, Luma, Rgb, RgbImage};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::crease::{CreaseKind, CurveSet, Polyline};
use crate::error::{Error, Result};
use crate::grid::ScalarField2D;

const SF2D_MAGIC: &[u8; 4] = b"SF2D";

/// How float samples are mapped to the 16-bit range when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantize {
    /// Clamp to `[0, 1]`.
    Clamp,
    /// Stretch `[min, max]` to `[0, 1]`.
    MinMax,
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open_file(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| with_path(path, e))
}

fn create_file(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| with_path(path, e))
}

/// Reads PNG, PGM/PNM or SF2D, chosen by file extension.
pub fn read_field(path: impl AsRef<Path>) -> Result<ScalarField2D> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "sf2d" => read_sf2d(path),
        "png" | "pgm" | "pnm" => read_image(path),
        other => Err(Error::Format(format!(
            "{}: unsupported extension {other:?} (expected png, pgm or sf2d)",
            path.display()
        ))),
    }
}

/// Writes PNG, PGM (binary P5) or SF2D, chosen by file extension. Image
/// formats are quantised with `q`; SF2D stores the samples as `f32`.
pub fn write_field(path: impl AsRef<Path>, u: &ScalarField2D, q: Quantize) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "sf2d" => write_sf2d(path, u),
        "png" => write_png(path, u, q),
        "pgm" | "pnm" => write_pgm(path, u, q, false),
        other => Err(Error::Format(format!(
            "{}: unsupported extension {other:?} (expected png, pgm or sf2d)",
            path.display()
        ))),
    }
}

/// Decodes a grayscale PNG or PGM (P2/P5, 8 or 16 bit). Colour images are
/// converted to luma.
pub fn read_image(path: impl AsRef<Path>) -> Result<ScalarField2D> {
    let img = ImageReader::new(BufReader::new(open_file(path.as_ref())?)).with_guessed_format()?.decode()?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    ScalarField2D::new(w as usize, h as usize, data)
}

fn quantize(u: &ScalarField2D, q: Quantize) -> Vec<u16> {
    let (lo, hi) = match q {
        Quantize::Clamp => (0.0, 1.0),
        Quantize::MinMax => u.min_max(),
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    u.as_slice()
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect()
}

fn gray16(u: &ScalarField2D, q: Quantize) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    ImageBuffer::from_raw(u.width() as u32, u.height() as u32, quantize(u, q))
        .expect("buffer length matches dimensions")
}

pub fn write_png(path: impl AsRef<Path>, u: &ScalarField2D, q: Quantize) -> Result<()> {
    gray16(u, q).save_with_format(path.as_ref(), ImageFormat::Png)?;
    Ok(())
}

/// 16-bit PGM, binary (P5, big-endian samples) or ASCII (P2).
pub fn write_pgm(path: impl AsRef<Path>, u: &ScalarField2D, q: Quantize, ascii: bool) -> Result<()> {
    let mut out = BufWriter::new(create_file(path.as_ref())?);
    let magic = if ascii { "P2" } else { "P5" };
    write!(out, "{magic}\n{} {}\n65535\n", u.width(), u.height())?;
    let samples = quantize(u, q);
    if ascii {
        for row in samples.chunks(u.width()) {
            let line: Vec<String> = row.iter().map(u16::to_string).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    } else {
        for v in samples {
            out.write_all(&v.to_be_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_sf2d(path: impl AsRef<Path>, u: &ScalarField2D) -> Result<()> {
    let mut out = BufWriter::new(create_file(path.as_ref())?);
    write_sf2d_to(&mut out, u)?;
    out.flush()?;
    Ok(())
}

pub fn write_sf2d_to(out: &mut impl Write, u: &ScalarField2D) -> Result<()> {
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| Error::param(format!("dimension {n} exceeds the SF2D range")))
    };
    out.write_all(SF2D_MAGIC)?;
    out.write_all(&dim(u.width())?.to_le_bytes())?;
    out.write_all(&dim(u.height())?.to_le_bytes())?;
    out.write_all(&[0u8; 4])?;
    for &v in u.as_slice() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_sf2d(path: impl AsRef<Path>) -> Result<ScalarField2D> {
    let mut input = BufReader::new(open_file(path.as_ref())?);
    read_sf2d_from(&mut input)
}

pub fn read_sf2d_from(input: &mut impl Read) -> Result<ScalarField2D> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("SF2D header shorter than 16 bytes".into()))?;
    if &header[..4] != SF2D_MAGIC {
        return Err(Error::Format("missing SF2D magic".into()));
    }
    let w = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("SF2D dimensions {w}x{h} overflow")))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "SF2D body holds {} bytes, {w}x{h} needs {expected}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ScalarField2D::new(w, h, data)
}

/// Piecewise-linear approximation of the viridis colour map.
const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

fn viridis(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    Rgb(std::array::from_fn(|c| {
        (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8
    }))
}

/// Colour-mapped rendering of a scalar field, stretched over `range` or
/// over the field's own min/max.
pub fn write_colormap_png(path: impl AsRef<Path>, u: &ScalarField2D, range: Option<(f64, f64)>) -> Result<()> {
    let (lo, hi) = range.unwrap_or_else(|| u.min_max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = RgbImage::from_fn(u.width() as u32, u.height() as u32, |x, y| {
        viridis((u.get(x as usize, y as usize) - lo) / span)
    });
    img.save_with_format(path.as_ref(), ImageFormat::Png)?;
    Ok(())
}

const GT_COLOR: Rgb<u8> = Rgb([230, 30, 30]);
const REC_COLOR: Rgb<u8> = Rgb([40, 90, 255]);

fn draw_curves(img: &mut RgbImage, curves: &CurveSet, zoom: u32, color: Rgb<u8>) {
    let z = zoom as f64;
    let (w, h) = img.dimensions();
    let mut plot = |p: [f64; 2]| {
        let px = ((p[0] + 0.5) * z).floor();
        let py = ((p[1] + 0.5) * z).floor();
        if px >= 0.0 && py >= 0.0 && (px as u32) < w && (py as u32) < h {
            img.put_pixel(px as u32, py as u32, color);
        }
    };
    for c in &curves.curves {
        if let [only] = c.vertices.as_slice() {
            plot(*only);
        }
        for s in c.vertices.windows(2) {
            let len = (s[1][0] - s[0][0]).hypot(s[1][1] - s[0][1]);
            let n = ((len * z * 2.0).ceil() as usize).max(1);
            for k in 0..=n {
                let t = k as f64 / n as f64;
                plot([s[0][0] + t * (s[1][0] - s[0][0]), s[0][1] + t * (s[1][1] - s[0][1])]);
            }
        }
    }
}

/// Grayscale background (min/max stretched, upscaled by `zoom`) with the
/// ground truth in red and the reconstruction in blue drawn on top.
pub fn write_overlay_png(
    path: impl AsRef<Path>,
    background: &ScalarField2D,
    ground_truth: Option<&CurveSet>,
    reconstruction: Option<&CurveSet>,
    zoom: u32,
) -> Result<()> {
    if zoom == 0 {
        return Err(Error::param("overlay zoom must be at least 1"));
    }
    let (lo, hi) = background.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::from_fn(background.width() as u32 * zoom, background.height() as u32 * zoom, |x, y| {
        let v = (background.get((x / zoom) as usize, (y / zoom) as usize) - lo) / span;
        let g = (v * 255.0).round() as u8;
        Rgb([g, g, g])
    });
    if let Some(gt) = ground_truth {
        draw_curves(&mut img, gt, zoom, GT_COLOR);
    }
    if let Some(rec) = reconstruction {
        draw_curves(&mut img, rec, zoom, REC_COLOR);
    }
    img.save_with_format(path.as_ref(), ImageFormat::Png)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut out = BufWriter::new(create_file(path.as_ref())?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let input = BufReader::new(open_file(path.as_ref())?);
    Ok(serde_json::from_reader(input)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    curve_id: usize,
    kind: CreaseKind,
    x: f64,
    y: f64,
}

/// Curves as CSV rows `curve_id,kind,x,y`.
pub fn write_curves_csv(path: impl AsRef<Path>, curves: &CurveSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path.as_ref())?);
    for (id, c) in curves.curves.iter().enumerate() {
        for p in &c.vertices {
            w.serialize(CurveRow {
                curve_id: id,
                kind: c.kind,
                x: p[0],
                y: p[1],
            })
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_curves_csv`]; rows of one curve must be
/// contiguous.
pub fn read_curves_csv(path: impl AsRef<Path>) -> Result<CurveSet> {
    let mut r = csv::Reader::from_reader(open_file(path.as_ref())?);
    let mut curves: Vec<Polyline> = Vec::new();
    let mut last: Option<usize> = None;
    for row in r.deserialize::<CurveRow>() {
        let row = row.map_err(csv_error)?;
        if last != Some(row.curve_id) {
            curves.push(Polyline::new(row.kind, Vec::new()));
            last = Some(row.curve_id);
        }
        curves.last_mut().unwrap().vertices.push([row.x, row.y]);
    }
    Ok(CurveSet { curves })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Curves from JSON or CSV, chosen by file extension.
pub fn read_curves(path: impl AsRef<Path>) -> Result<CurveSet> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "csv" => read_curves_csv(path),
        _ => read_json(path),
    }
}

pub fn write_curves(path: impl AsRef<Path>, curves: &CurveSet) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "csv" => write_curves_csv(path, curves),
        _ => write_json(path, curves),
    }
}
