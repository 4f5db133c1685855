//! Isotropic undecimated ("starlet", à trous) wavelet transform.
//!
//! Each scale smooths the previous approximation with the separable B3-spline
//! kernel `(1, 4, 6, 4, 1) / 16`, dilated by inserting `2^j - 1` zeros between
//! taps. Detail `j` is the difference of consecutive approximations, so the
//! image is recovered by summing every detail plane and the coarse plane.
//! Borders use mirror extension without repeating the edge sample.

use crate::error::{Result, SbssError};
use crate::mat::Mat;
use serde::{Deserialize, Serialize};

const B3: [f64; 5] = [1.0 / 16.0, 1.0 / 4.0, 3.0 / 8.0, 1.0 / 4.0, 1.0 / 16.0];

/// Image dimensions plus the number of detail scales. Sources are stored as
/// row-major vectorised images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    pub n_scales: usize,
}

impl Geometry {
    pub fn new(width: usize, height: usize, n_scales: usize) -> Result<Self> {
        let g = Self {
            width,
            height,
            n_scales,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scales == 0 {
            return Err(SbssError::invalid("n_scales", "must be at least 1"));
        }
        let min = 1usize.checked_shl(self.n_scales as u32).unwrap_or(usize::MAX);
        if self.width < min || self.height < min {
            return Err(SbssError::ImageTooSmall {
                width: self.width,
                height: self.height,
                n_scales: self.n_scales,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Number of detail coefficients per source.
    #[inline]
    pub fn detail_len(&self) -> usize {
        self.n_scales * self.pixels()
    }

    pub(crate) fn check_sources(&self, s: &Mat) -> Result<()> {
        if s.cols() != self.pixels() {
            return Err(SbssError::shape(format!(
                "{} samples per source but geometry is {}x{}",
                s.cols(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

/// Multiscale decomposition of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct StarletPyramid {
    pub width: usize,
    pub height: usize,
    /// Finest scale first.
    pub details: Vec<Vec<f64>>,
    pub coarse: Vec<f64>,
}

impl StarletPyramid {
    pub fn n_scales(&self) -> usize {
        self.details.len()
    }

    /// All detail coefficients, finest scale first.
    pub fn detail_coefficients(&self) -> impl Iterator<Item = &f64> {
        self.details.iter().flatten()
    }

    pub fn scale(&self, alpha: f64) -> StarletPyramid {
        StarletPyramid {
            width: self.width,
            height: self.height,
            details: self
                .details
                .iter()
                .map(|d| d.iter().map(|v| alpha * v).collect())
                .collect(),
            coarse: self.coarse.iter().map(|v| alpha * v).collect(),
        }
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let k = i.rem_euclid(period);
    if k >= n as isize {
        (period - k) as usize
    } else {
        k as usize
    }
}

/// Source index for each (position, tap) of a dilated 1-D convolution.
fn tap_table(n: usize, step: usize) -> Vec<[usize; 5]> {
    (0..n)
        .map(|i| {
            let mut taps = [0; 5];
            for (t, slot) in taps.iter_mut().enumerate() {
                let offset = (t as isize - 2) * step as isize;
                *slot = reflect(i as isize + offset, n);
            }
            taps
        })
        .collect()
}

/// Dilated B3 smoothing at one scale, rows then columns.
struct Smoother {
    width: usize,
    height: usize,
    row_taps: Vec<[usize; 5]>,
    col_taps: Vec<[usize; 5]>,
}

impl Smoother {
    fn new(width: usize, height: usize, scale: usize) -> Self {
        let step = 1 << scale;
        Self {
            width,
            height,
            row_taps: tap_table(width, step),
            col_taps: tap_table(height, step),
        }
    }

    fn apply(&self, input: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        let w = self.width;
        for y in 0..self.height {
            let row = &input[y * w..(y + 1) * w];
            let dst = &mut tmp[y * w..(y + 1) * w];
            for (x, taps) in self.row_taps.iter().enumerate() {
                dst[x] = B3[0] * row[taps[0]]
                    + B3[1] * row[taps[1]]
                    + B3[2] * row[taps[2]]
                    + B3[3] * row[taps[3]]
                    + B3[4] * row[taps[4]];
            }
        }
        for (y, taps) in self.col_taps.iter().enumerate() {
            let rows = taps.map(|t| &tmp[t * w..(t + 1) * w]);
            let dst = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] = B3[0] * rows[0][x]
                    + B3[1] * rows[1][x]
                    + B3[2] * rows[2][x]
                    + B3[3] * rows[3][x]
                    + B3[4] * rows[4][x];
            }
        }
    }

    /// Adjoint of [`Smoother::apply`] (the mirror extension makes the
    /// operator non-symmetric near borders).
    fn apply_adjoint(&self, input: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        let w = self.width;
        tmp.iter_mut().for_each(|v| *v = 0.0);
        for (y, taps) in self.col_taps.iter().enumerate() {
            let src = &input[y * w..(y + 1) * w];
            for (t, &ty) in taps.iter().enumerate() {
                let dst = &mut tmp[ty * w..(ty + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += B3[t] * s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for y in 0..self.height {
            let src = &tmp[y * w..(y + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (x, taps) in self.row_taps.iter().enumerate() {
                for (t, &tx) in taps.iter().enumerate() {
                    dst[tx] += B3[t] * src[x];
                }
            }
        }
    }
}

/// Precomputed transform for one geometry. Reusing it across calls avoids
/// rebuilding the tap tables.
pub struct Starlet {
    geometry: Geometry,
    smoothers: Vec<Smoother>,
}

impl Starlet {
    pub fn new(geometry: Geometry) -> Result<Self> {
        geometry.validate()?;
        let smoothers = (0..geometry.n_scales)
            .map(|j| Smoother::new(geometry.width, geometry.height, j))
            .collect();
        Ok(Self {
            geometry,
            smoothers,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn forward(&self, image: &[f64]) -> Result<StarletPyramid> {
        let g = self.geometry;
        if image.len() != g.pixels() {
            return Err(SbssError::shape(format!(
                "image has {} pixels, expected {}x{}",
                image.len(),
                g.width,
                g.height
            )));
        }
        let mut current = image.to_vec();
        let mut tmp = vec![0.0; g.pixels()];
        let mut details = Vec::with_capacity(g.n_scales);
        for smoother in &self.smoothers {
            let mut smooth = vec![0.0; g.pixels()];
            smoother.apply(&current, &mut tmp, &mut smooth);
            let detail = current.iter().zip(&smooth).map(|(c, s)| c - s).collect();
            details.push(detail);
            current = smooth;
        }
        Ok(StarletPyramid {
            width: g.width,
            height: g.height,
            details,
            coarse: current,
        })
    }

    /// Detail planes only, concatenated finest first into `out`
    /// (length `n_scales · pixels`).
    pub(crate) fn details_into(&self, image: &[f64], out: &mut [f64]) {
        let p = self.geometry.pixels();
        debug_assert_eq!(out.len(), self.geometry.detail_len());
        let mut current = image.to_vec();
        let mut smooth = vec![0.0; p];
        let mut tmp = vec![0.0; p];
        for (j, smoother) in self.smoothers.iter().enumerate() {
            smoother.apply(&current, &mut tmp, &mut smooth);
            for ((o, c), s) in out[j * p..(j + 1) * p].iter_mut().zip(&current).zip(&smooth) {
                *o = c - s;
            }
            std::mem::swap(&mut current, &mut smooth);
        }
    }

    /// Adjoint of the detail map `x ↦ (d_1, …, d_J)`, writing into `out`.
    pub(crate) fn details_adjoint_into(&self, coefs: &[f64], out: &mut [f64]) {
        let p = self.geometry.pixels();
        debug_assert_eq!(coefs.len(), self.geometry.detail_len());
        // d_j = (I - H_j) c_{j-1}, c_j = H_j c_{j-1}; back-propagate from the
        // coarsest scale (the coarse plane itself carries no coefficient).
        let mut grad_c = vec![0.0; p];
        let mut tmp = vec![0.0; p];
        let mut buf = vec![0.0; p];
        for j in (0..self.smoothers.len()).rev() {
            let u = &coefs[j * p..(j + 1) * p];
            // grad_{c_{j-1}} = u - H_jᵀ u + H_jᵀ grad_{c_j}
            let lifted: Vec<f64> = grad_c.iter().zip(u).map(|(g, u)| g - u).collect();
            self.smoothers[j].apply_adjoint(&lifted, &mut tmp, &mut buf);
            for ((g, b), u) in grad_c.iter_mut().zip(&buf).zip(u) {
                *g = u + b;
            }
        }
        out.copy_from_slice(&grad_c);
    }
}

pub fn starlet_forward(image: &[f64], width: usize, height: usize, n_scales: usize) -> Result<StarletPyramid> {
    Starlet::new(Geometry::new(width, height, n_scales)?)?.forward(image)
}

/// Sum of the coarse plane and every detail plane.
pub fn starlet_inverse(p: &StarletPyramid) -> Vec<f64> {
    let mut out = p.coarse.clone();
    for d in &p.details {
        for (o, v) in out.iter_mut().zip(d) {
            *o += v;
        }
    }
    out
}

/// Transforms every row of `s`, each row being one vectorised image.
pub fn analyze_sources(s: &Mat, geometry: Geometry) -> Result<Vec<StarletPyramid>> {
    geometry.check_sources(s)?;
    let t = Starlet::new(geometry)?;
    (0..s.rows()).map(|i| t.forward(s.row(i))).collect()
}

/// Inverse of [`analyze_sources`].
pub fn synthesize_sources(pyramids: &[StarletPyramid]) -> Result<Mat> {
    let Some(first) = pyramids.first() else {
        return Err(SbssError::EmptyInput);
    };
    let pixels = first.width * first.height;
    let mut data = Vec::with_capacity(pyramids.len() * pixels);
    for p in pyramids {
        if p.width != first.width
            || p.height != first.height
            || p.coarse.len() != pixels
            || p.details.iter().any(|d| d.len() != pixels)
        {
            return Err(SbssError::shape("pyramids with inconsistent dimensions"));
        }
        data.extend(starlet_inverse(p));
    }
    Ok(Mat::from_raw(pyramids.len(), pixels, data))
}

/// Detail coefficients of every source row: an `n × (n_scales · pixels)`
/// matrix laid out finest scale first.
pub fn detail_matrix(s: &Mat, transform: &Starlet) -> Result<Mat> {
    transform.geometry().check_sources(s)?;
    let len = transform.geometry().detail_len();
    let mut out = Mat::zeros(s.rows(), len);
    for i in 0..s.rows() {
        transform.details_into(s.row(i), out.row_mut(i));
    }
    Ok(out)
}
