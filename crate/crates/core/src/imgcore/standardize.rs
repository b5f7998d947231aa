use super::Image2D;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Decile landmarks (0th, 10th, ..., 100th percentile) of a reference intensity
/// distribution. Images are standardized by a piecewise-linear map that sends
/// their own deciles onto these.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramStandard<T> {
    landmarks: [T; 11],
}

#[derive(Serialize, Deserialize)]
struct StandardFile {
    decile_landmarks: Vec<f64>,
}

impl<T: Scalar> HistogramStandard<T> {
    pub fn new(landmarks: [T; 11]) -> Result<Self> {
        let in_range = landmarks.iter().all(|v| v.is_finite() && *v >= T::zero() && *v <= T::one());
        let monotone = landmarks.windows(2).all(|w| w[0] <= w[1]);
        if in_range && monotone {
            Ok(Self { landmarks })
        } else {
            Err(Error::NonMonotoneStandard)
        }
    }

    /// The deciles of an image, usable as a standard for other images.
    pub fn from_image(img: &Image2D<T>) -> Self {
        Self { landmarks: deciles(img.data()) }
    }

    pub fn landmarks(&self) -> &[T; 11] {
        &self.landmarks
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: StandardFile = serde_json::from_str(s)?;
        let arr: [f64; 11] = f
            .decile_landmarks
            .try_into()
            .map_err(|v: Vec<f64>| Error::InvalidImage(format!("expected 11 landmarks, got {}", v.len())))?;
        Self::new(arr.map(T::lit))
    }

    pub fn to_json(&self) -> String {
        let f = StandardFile { decile_landmarks: self.landmarks.iter().map(|v| v.to_f64_lossy()).collect() };
        serde_json::to_string_pretty(&f).expect("serializable")
    }
}

/// Percentiles at 0, 10, ..., 100 with linear interpolation between order statistics.
pub(crate) fn deciles<T: Scalar>(data: &[T]) -> [T; 11] {
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite intensities"));
    let n = sorted.len();
    std::array::from_fn(|k| {
        let rank = T::from_usize_lossy(k) / T::lit(10.0) * T::from_usize_lossy(n - 1);
        let lo = rank.floor().to_usize().unwrap_or(0).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        let t = rank - T::from_usize_lossy(lo);
        sorted[lo] + (sorted[hi] - sorted[lo]) * t
    })
}

/// Piecewise-linear map sending the image's decile landmarks onto `std`'s,
/// clamped to `[0, 1]`. Constant images are returned unchanged.
pub fn standardize_intensity<T: Scalar>(img: &Image2D<T>, std: &HistogramStandard<T>) -> Image2D<T> {
    let src = deciles(img.data());
    if src[10] <= src[0] {
        return img.clone();
    }
    let dst = std.landmarks();
    let map = |v: T| -> T {
        // segments with zero width (tied deciles) are skipped
        let mut k = 0;
        while k < 9 && (v > src[k + 1] || src[k + 1] <= src[k]) {
            k += 1;
        }
        let (a, b) = (src[k], src[k + 1]);
        let out = if b > a { dst[k] + (v - a) / (b - a) * (dst[k + 1] - dst[k]) } else { dst[k + 1] };
        out.max(T::zero()).min(T::one())
    };
    let data = img.data().iter().map(|v| map(*v)).collect();
    Image2D::from_vec_unchecked(*img.grid(), data)
}
