//! Vanilla and flexible patch embedding.
//!
//! Images are cut into a ceiling grid of non-overlapping `P×P` patches with
//! zero padding on the bottom/right edge, each patch is flattened in
//! `(row, col, channel)` order and linearly projected. Kernels for patch sizes
//! other than the 16 px base are obtained by pseudo-inverse resizing of the
//! base kernel, so a single set of weights serves every patch size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::numerics::{matmul, pseudo_inverse, Matrix};

/// Patch size of the fine (vanilla) embedding.
pub const BASE_PATCH: usize = 16;

/// Ceiling patch grid over an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGridSpec {
    pub image_h: usize,
    pub image_w: usize,
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGridSpec {
    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }

    pub fn same_image(&self, other: &PatchGridSpec) -> bool {
        self.image_h == other.image_h && self.image_w == other.image_w
    }
}

/// Grid of `ceil(h / P) × ceil(w / P)` patches.
pub fn grid_for(image_h: usize, image_w: usize, patch_size: usize) -> PatchGridSpec {
    assert!(patch_size >= 1 && image_h >= 1 && image_w >= 1, "degenerate grid request");
    PatchGridSpec {
        image_h,
        image_w,
        patch_size,
        rows: image_h.div_ceil(patch_size),
        cols: image_w.div_ceil(patch_size),
    }
}

/// Linear patch projection: `token = flatten(patch) · proj + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedKernel {
    pub patch_size: usize,
    pub channels: usize,
    /// `(patch_size² · channels) × dim`
    pub proj: Matrix,
    pub bias: Vec<f64>,
}

impl EmbedKernel {
    pub fn new(patch_size: usize, channels: usize, proj: Matrix, bias: Vec<f64>) -> Result<Self> {
        if proj.rows() != patch_size * patch_size * channels {
            return Err(Error::invalid(
                "EmbedKernel::new",
                format!(
                    "projection has {} rows, expected {}",
                    proj.rows(),
                    patch_size * patch_size * channels
                ),
            ));
        }
        if bias.len() != proj.cols() {
            return Err(Error::invalid("EmbedKernel::new", "bias length differs from feature dim"));
        }
        Ok(Self {
            patch_size,
            channels,
            proj,
            bias,
        })
    }

    /// Uniform init in `±1/√fan_in`, zero bias.
    pub fn random<R: Rng + ?Sized>(patch_size: usize, channels: usize, dim: usize, rng: &mut R) -> Self {
        let fan_in = patch_size * patch_size * channels;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            patch_size,
            channels,
            proj: Matrix::random_uniform(fan_in, dim, -bound, bound, rng),
            bias: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.proj.cols()
    }
}

/// Linear bilinear-resize operator for one axis, `to × from`, using
/// half-pixel centers and edge clamping (no antialiasing).
pub fn bilinear_resize_matrix(from: usize, to: usize) -> Matrix {
    let mut m = Matrix::zeros(to, from);
    let scale = from as f64 / to as f64;
    for i in 0..to {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (from - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(from - 1);
        let frac = src - i0 as f64;
        m[(i, i0)] += 1.0 - frac;
        m[(i, i1)] += frac;
    }
    m
}

/// Bilinearly resizes a square single-channel patch (row-major `from × from`)
/// to `to × to`, sampling the source directly.
pub fn resize_patch_bilinear(patch: &[f64], from: usize, to: usize) -> Vec<f64> {
    let scale = from as f64 / to as f64;
    let coord = |i: usize| {
        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (from - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(from - 1), s - i0 as f64)
    };
    let mut out = Vec::with_capacity(to * to);
    for r in 0..to {
        let (r0, r1, fr) = coord(r);
        for c in 0..to {
            let (c0, c1, fc) = coord(c);
            let top = patch[r0 * from + c0] * (1.0 - fc) + patch[r0 * from + c1] * fc;
            let bottom = patch[r1 * from + c0] * (1.0 - fc) + patch[r1 * from + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Pseudo-inverse resize of a kernel to `target_p`.
///
/// With `B` the bilinear resize from the base grid to the target grid, the
/// new weights solve `min ‖Bᵀ ŵ − w‖` per channel and output feature, so
/// `⟨resize(x), ŵ⟩ ≈ ⟨x, w⟩`, exactly when `B` has full column rank
/// (upsampling). `B` is separable, so `pinv(Bᵀ) = pinv(rᵀ) ⊗ pinv(rᵀ)` for
/// the one-axis operator `r`.
pub fn pi_resize_kernel(base: &EmbedKernel, target_p: usize) -> Result<EmbedKernel> {
    if target_p < 2 {
        return Err(Error::invalid("pi_resize_kernel", "target patch size must be >= 2"));
    }
    let from = base.patch_size;
    if target_p == from {
        return Ok(base.clone());
    }
    let axis = bilinear_resize_matrix(from, target_p);
    // (target × from)
    let pinv_t = pseudo_inverse(&axis.transpose(), 1e-12)?;
    let ch = base.channels;
    let dim = base.dim();
    let mut proj = Matrix::zeros(target_p * target_p * ch, dim);
    let mut w = Matrix::zeros(from, from);
    for out in 0..dim {
        for k in 0..ch {
            for r in 0..from {
                for c in 0..from {
                    w[(r, c)] = base.proj[((r * from + c) * ch + k, out)];
                }
            }
            let left = matmul(&pinv_t, &w)?;
            let resized = crate::numerics::matmul_bt(&left, &pinv_t)?;
            for r in 0..target_p {
                for c in 0..target_p {
                    proj[((r * target_p + c) * ch + k, out)] = resized[(r, c)];
                }
            }
        }
    }
    if !proj.is_finite() {
        return Err(Error::NonFinite { op: "pi_resize_kernel" });
    }
    EmbedKernel::new(target_p, ch, proj, base.bias.clone())
}

/// Patch tokens of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub features: Matrix,
    pub grid: PatchGridSpec,
}

impl TokenSet {
    pub fn new(features: Matrix, grid: PatchGridSpec) -> Result<Self> {
        if features.rows() != grid.tokens() {
            return Err(Error::invalid(
                "TokenSet::new",
                format!("{} rows for a grid of {} tokens", features.rows(), grid.tokens()),
            ));
        }
        Ok(Self { features, grid })
    }

    pub fn patch_size(&self) -> usize {
        self.grid.patch_size
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Flattened patches, one row per grid cell in row-major grid order.
pub fn extract_patches(image: &Image, grid: &PatchGridSpec) -> Matrix {
    let p = grid.patch_size;
    let ch = image.channels();
    let mut out = Matrix::zeros(grid.tokens(), p * p * ch);
    for gr in 0..grid.rows {
        for gc in 0..grid.cols {
            let row = out.row_mut(gr * grid.cols + gc);
            let mut k = 0;
            for r in 0..p {
                for c in 0..p {
                    for channel in 0..ch {
                        row[k] = image.get_padded(gr * p + r, gc * p + c, channel);
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

/// Projects every patch of `image` through `kernel`.
pub fn embed(image: &Image, kernel: &EmbedKernel) -> Result<TokenSet> {
    if image.channels() != kernel.channels {
        return Err(Error::invalid(
            "embed",
            format!(
                "image has {} channels, kernel expects {}",
                image.channels(),
                kernel.channels
            ),
        ));
    }
    let grid = grid_for(image.height(), image.width(), kernel.patch_size);
    let patches = extract_patches(image, &grid);
    let mut features = matmul(&patches, &kernel.proj)?;
    for r in 0..features.rows() {
        for (v, b) in features.row_mut(r).iter_mut().zip(&kernel.bias) {
            *v += b;
        }
    }
    TokenSet::new(features, grid)
}

/// Fixed 2D sinusoidal encoding on normalized grid coordinates.
///
/// Channel layout: `[sin(row), cos(row), sin(col), cos(col)]`, each block
/// `C/4` wide with frequencies `10000^(-k/(C/4))`. Positions are
/// `2π · row/rows` and `2π · col/cols`.
pub fn positional_encoding(grid: &PatchGridSpec, dim: usize) -> Result<Matrix> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::invalid(
            "positional_encoding",
            format!("feature dim {dim} is not a positive multiple of 4"),
        ));
    }
    let quarter = dim / 4;
    let freqs: Vec<f64> = (0..quarter)
        .map(|k| 10000f64.powf(-(k as f64) / quarter as f64))
        .collect();
    let tau = std::f64::consts::TAU;
    Ok(Matrix::from_fn(grid.tokens(), dim, |t, c| {
        let (r, col) = (t / grid.cols, t % grid.cols);
        let block = c / quarter;
        let f = freqs[c % quarter];
        let pos = if block < 2 {
            tau * r as f64 / grid.rows as f64
        } else {
            tau * col as f64 / grid.cols as f64
        };
        if block % 2 == 0 {
            (pos * f).sin()
        } else {
            (pos * f).cos()
        }
    }))
}

/// Coarse token containing the pixel center of fine token `fine_idx`.
pub fn project_fine_to_coarse(
    fine_idx: usize,
    fine: &PatchGridSpec,
    coarse: &PatchGridSpec,
) -> Result<usize> {
    if !fine.same_image(coarse) {
        return Err(Error::invalid(
            "project_fine_to_coarse",
            "grids describe different image sizes",
        ));
    }
    if fine_idx >= fine.tokens() {
        return Err(Error::OutOfRange {
            op: "project_fine_to_coarse",
            index: fine_idx,
            len: fine.tokens(),
        });
    }
    let (r, c) = (fine_idx / fine.cols, fine_idx % fine.cols);
    let pf = fine.patch_size as f64;
    let pc = coarse.patch_size as f64;
    let cy = (r as f64 + 0.5) * pf;
    let cx = (c as f64 + 0.5) * pf;
    let cr = ((cy / pc).floor() as usize).min(coarse.rows - 1);
    let cc = ((cx / pc).floor() as usize).min(coarse.cols - 1);
    Ok(cr * coarse.cols + cc)
}
