//! PNG + JSON sidecar storage. Images are 16-bit grayscale PNGs whose sidecar
//! holds `{"spacing_mm": f, "origin_mm": [x, y]}`; masks are 8-bit PNGs with
//! values {0, 255}.

use super::{Image2D, Mask2D};
use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::scalar::Scalar;
use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::path::{Path, PathBuf};

thread_local! {
    static READ_LOG: RefCell<Option<Vec<PathBuf>>> = const { RefCell::new(None) };
}

/// Reads a whole file. Every file the library opens for reading goes through
/// here, which is what [`record_reads`] observes.
pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    READ_LOG.with(|l| {
        if let Some(log) = l.borrow_mut().as_mut() {
            log.push(path.to_path_buf());
        }
    });
    Ok(std::fs::read(path)?)
}

pub fn read_to_string(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e).into())
}

/// Runs `f` and returns the files it read on this thread, in order.
pub fn record_reads<R>(f: impl FnOnce() -> R) -> (R, Vec<PathBuf>) {
    let outer = READ_LOG.with(|l| l.borrow_mut().replace(Vec::new()));
    let out = f();
    let log = READ_LOG.with(|l| std::mem::replace(&mut *l.borrow_mut(), outer)).unwrap_or_default();
    if !log.is_empty() {
        READ_LOG.with(|l| {
            if let Some(o) = l.borrow_mut().as_mut() {
                o.extend(log.iter().cloned());
            }
        });
    }
    (out, log)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spacing_mm: f64,
    pub origin_mm: [f64; 2],
}

/// `fixed.png` -> `fixed.json`
pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

/// Loads a grayscale PNG and its sidecar; intensities are min-max normalized to `[0, 1]`.
pub fn read_image<T: Scalar>(png: &Path) -> Result<Image2D<T>> {
    let side = read_sidecar(&sidecar_path(png))?;
    let raw = image::load_from_memory(&read_file(png)?)?.into_luma16();
    let (w, h) = raw.dimensions();
    let grid = Grid::new(w as usize, h as usize, T::lit(side.spacing_mm), Point::from_array_f64(side.origin_mm))?;
    let vals: Vec<u16> = raw.into_raw();
    let lo = *vals.iter().min().unwrap_or(&0);
    let hi = *vals.iter().max().unwrap_or(&0);
    let data = if hi > lo {
        let span = f64::from(hi - lo);
        vals.iter().map(|v| T::lit(f64::from(v - lo) / span)).collect()
    } else {
        vals.iter().map(|v| T::lit(f64::from(*v) / 65535.0)).collect()
    };
    Image2D::new(grid, data)
}

/// Writes a 16-bit PNG plus sidecar.
pub fn write_image<T: Scalar>(png: &Path, img: &Image2D<T>) -> Result<()> {
    let g = img.grid();
    let buf: Vec<u16> = img
        .data()
        .iter()
        .map(|v| (v.to_f64_lossy() * 65535.0).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let out: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(g.width as u32, g.height as u32, buf).expect("buffer size matches grid");
    out.save(png)?;
    let side = Sidecar { spacing_mm: g.spacing.to_f64_lossy(), origin_mm: g.origin.to_array_f64() };
    std::fs::write(sidecar_path(png), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Loads a {0,255} mask onto the grid of its companion image.
pub fn read_mask<T: Scalar>(png: &Path, grid: &Grid<T>) -> Result<Mask2D<T>> {
    let raw = image::load_from_memory(&read_file(png)?)?.into_luma8();
    let (w, h) = raw.dimensions();
    if (w as usize, h as usize) != (grid.width, grid.height) {
        return Err(Error::GridMismatch(format!(
            "mask {} is {w}x{h}, companion image is {}x{}",
            png.display(),
            grid.width,
            grid.height
        )));
    }
    Mask2D::new(*grid, raw.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect())
}

pub fn write_mask<T: Scalar>(png: &Path, mask: &Mask2D<T>) -> Result<()> {
    let g = mask.grid();
    let buf: Vec<u8> = mask.data().iter().map(|v| if *v != 0 { 255 } else { 0 }).collect();
    let out: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(g.width as u32, g.height as u32, buf).expect("buffer size matches grid");
    out.save(png)?;
    Ok(())
}
