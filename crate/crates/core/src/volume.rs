//! Voxel grids, interpolation, backward warping and shape resampling.
//!
//! All grids are stored x-fastest: `index = x + w * (y + h * z)`. Samplers
//! clamp coordinates to `[0, n - 1]` per axis, so they are total functions.
//! Warping is backward: `out(x) = in(x + disp(x))`, with displacements in
//! voxels of the field's own grid.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub w: usize,
    pub h: usize,
    pub z: usize,
}

impl Dims {
    pub const fn new(w: usize, h: usize, z: usize) -> Self {
        Self { w, h, z }
    }

    pub const fn len(&self) -> usize {
        self.w * self.h * self.z
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.w, self.h, self.z]
    }

    pub const fn from_array(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.w * (y + self.h * z)
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.w;
        let r = i / self.w;
        [x, r % self.h, r / self.h]
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.z == 0 {
            return Err(Error::InvalidDims(*self));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.w, self.h, self.z)
    }
}

/// Millimeters per voxel along x, y and z.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(sx) && ok(sy) && ok(sz) {
            Ok(Self { sx, sy, sz })
        } else {
            Err(Error::InvalidSpacing(sx, sy, sz))
        }
    }

    pub const fn unit() -> Self {
        Self {
            sx: 1.0,
            sy: 1.0,
            sz: 1.0,
        }
    }

    pub const fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.sx * factor, self.sy * factor, self.sz * factor)
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::unit()
    }
}

/// Element types that can live in a [`Grid`].
pub trait Voxel: Clone + Send + Sync {
    fn is_finite_value(&self) -> bool;
}

impl Voxel for f64 {
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Voxel for u32 {
    fn is_finite_value(&self) -> bool {
        true
    }
}

impl Voxel for [f64; 3] {
    fn is_finite_value(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// A dense 3D grid of voxels with physical spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
}

/// Scalar intensity volume.
pub type Volume3D = Grid<f64>;
/// Integer label volume; label 0 is background.
pub type LabelVolume = Grid<u32>;
/// Dense displacement field, one `[dx, dy, dz]` vector per voxel (voxel units).
pub type DisplacementField = Grid<[f64; 3]>;

impl<T: Voxel> Grid<T> {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: T) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            spacing,
            data: vec![value; dims.len()],
        })
    }

    /// Builds a grid from a per-voxel function of `(x, y, z)`.
    pub fn from_fn<F>(dims: Dims, spacing: Spacing, f: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize) -> T + Sync + Send,
    {
        dims.validate()?;
        let data = par::map_slices(dims.z, |z| {
            let mut row = Vec::with_capacity(dims.w * dims.h);
            for y in 0..dims.h {
                for x in 0..dims.w {
                    row.push(f(x, y, z));
                }
            }
            row
        });
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.dims.index(x, y, z)]
    }

    /// Nearest-node lookup after per-axis clamping; exact `.5` rounds up.
    pub fn sample_nearest(&self, p: [f64; 3]) -> T {
        let d = self.dims.as_array();
        let i = nearest_index(p[0], d[0]);
        let j = nearest_index(p[1], d[1]);
        let k = nearest_index(p[2], d[2]);
        self.data[self.dims.index(i, j, k)].clone()
    }
}

impl Volume3D {
    /// Trilinear interpolation with clamp-to-edge borders.
    pub fn sample_linear(&self, p: [f64; 3]) -> f64 {
        let cell = Cell::new(self.dims, p);
        let mut acc = 0.0;
        for c in 0..8 {
            acc += cell.weight[c] * self.data[cell.index[c]];
        }
        acc
    }
}

impl DisplacementField {
    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::filled(dims, spacing, [0.0; 3])
    }

    pub fn sample_linear(&self, p: [f64; 3]) -> [f64; 3] {
        let cell = Cell::new(self.dims, p);
        let mut acc = [0.0; 3];
        for c in 0..8 {
            let v = self.data[cell.index[c]];
            for (a, vi) in acc.iter_mut().zip(v) {
                *a += cell.weight[c] * vi;
            }
        }
        acc
    }

    /// Mean Euclidean vector length, in voxels.
    pub fn mean_magnitude(&self) -> f64 {
        let sum: f64 = self
            .data
            .iter()
            .map(|v| libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum();
        sum / self.data.len() as f64
    }

    /// Resamples the field to `dims` and rescales each vector component by the
    /// grid ratio of its axis, so displacements stay in voxels of the new grid.
    pub fn resize(&self, dims: Dims) -> Result<Self> {
        let resampled = self.resample_to_shape(dims, Interp::Linear)?;
        let src = self.dims.as_array();
        let dst = dims.as_array();
        let mut ratio = [0.0; 3];
        for a in 0..3 {
            ratio[a] = grid_ratio(src[a], dst[a]);
        }
        let data = resampled
            .data
            .iter()
            .map(|v| [v[0] * ratio[0], v[1] * ratio[1], v[2] * ratio[2]])
            .collect();
        Self::new(dims, resampled.spacing, data)
    }
}

/// Ratio of destination to source voxel counts under endpoint alignment.
pub(crate) fn grid_ratio(n_src: usize, n_dst: usize) -> f64 {
    if n_src > 1 && n_dst > 1 {
        (n_dst - 1) as f64 / (n_src - 1) as f64
    } else {
        n_dst as f64 / n_src as f64
    }
}

/// A multi-channel feature volume; channels are interleaved per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    dims: Dims,
    spacing: Spacing,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureVolume {
    pub fn new(dims: Dims, spacing: Spacing, channels: usize, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if channels == 0 {
            return Err(Error::ChannelMismatch {
                expected: 1,
                found: 0,
            });
        }
        let expected = dims.len() * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            dims,
            spacing,
            channels,
            data,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn voxel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Extracts one channel as a scalar volume.
    pub fn channel(&self, c: usize) -> Result<Volume3D> {
        if c >= self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                found: c,
            });
        }
        let data = (0..self.dims.len())
            .map(|i| self.data[i * self.channels + c])
            .collect();
        Grid::new(self.dims, self.spacing, data)
    }

    /// Trilinear interpolation of every channel at `p`, written into `out`.
    pub fn sample_linear_into(&self, p: [f64; 3], out: &mut [f64]) {
        let cell = Cell::new(self.dims, p);
        self.sample_cell_into(&cell, out);
    }

    #[inline]
    pub(crate) fn sample_cell_into(&self, cell: &Cell, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for c in 0..8 {
            let w = cell.weight[c];
            let v = self.voxel(cell.index[c]);
            for (o, vi) in out.iter_mut().zip(v) {
                *o += w * vi;
            }
        }
    }

    pub(crate) fn sample_nearest_into(&self, p: [f64; 3], out: &mut [f64]) {
        let d = self.dims.as_array();
        let i = self.dims.index(
            nearest_index(p[0], d[0]),
            nearest_index(p[1], d[1]),
            nearest_index(p[2], d[2]),
        );
        out.copy_from_slice(self.voxel(i));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Interp {
    Linear,
    Nearest,
}

/// One axis of a trilinear cell: lower/upper node, fractional offset, and the
/// derivative of the offset w.r.t. the coordinate (0 where clamped).
#[derive(Clone, Copy, Debug)]
struct AxisCell {
    lo: usize,
    hi: usize,
    t: f64,
    dt: f64,
}

impl AxisCell {
    #[inline]
    fn new(p: f64, n: usize) -> Self {
        if n == 1 {
            return Self {
                lo: 0,
                hi: 0,
                t: 0.0,
                dt: 0.0,
            };
        }
        let max = (n - 1) as f64;
        if p < 0.0 {
            Self {
                lo: 0,
                hi: 1,
                t: 0.0,
                dt: 0.0,
            }
        } else if p > max {
            Self {
                lo: n - 2,
                hi: n - 1,
                t: 1.0,
                dt: 0.0,
            }
        } else {
            // Right-sided cell on exact nodes, except the last node.
            let lo = (libm::floor(p) as usize).min(n - 2);
            Self {
                lo,
                hi: lo + 1,
                t: p - lo as f64,
                dt: 1.0,
            }
        }
    }
}

/// The eight corners of a trilinear cell with their weights and the weight
/// derivatives with respect to the sample point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell {
    pub index: [usize; 8],
    pub weight: [f64; 8],
    pub dweight: [[f64; 3]; 8],
}

impl Cell {
    #[inline]
    pub(crate) fn new(dims: Dims, p: [f64; 3]) -> Self {
        let ax = AxisCell::new(p[0], dims.w);
        let ay = AxisCell::new(p[1], dims.h);
        let az = AxisCell::new(p[2], dims.z);
        let mut index = [0; 8];
        let mut weight = [0.0; 8];
        let mut dweight = [[0.0; 3]; 8];
        for c in 0..8 {
            let (bx, by, bz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let pick = |a: &AxisCell, b: usize| -> (usize, f64, f64) {
                if b == 0 {
                    (a.lo, 1.0 - a.t, -a.dt)
                } else {
                    (a.hi, a.t, a.dt)
                }
            };
            let (ix, wx, dx) = pick(&ax, bx);
            let (iy, wy, dy) = pick(&ay, by);
            let (iz, wz, dz) = pick(&az, bz);
            index[c] = dims.index(ix, iy, iz);
            weight[c] = wx * wy * wz;
            dweight[c] = [dx * wy * wz, wx * dy * wz, wx * wy * dz];
        }
        Self {
            index,
            weight,
            dweight,
        }
    }
}

#[inline]
fn nearest_index(p: f64, n: usize) -> usize {
    let max = (n - 1) as f64;
    let c = if p < 0.0 {
        0.0
    } else if p > max {
        max
    } else {
        p
    };
    (libm::floor(c + 0.5) as usize).min(n - 1)
}

/// Source coordinate for output index `i` under endpoint-aligned resampling.
#[inline]
pub(crate) fn source_coord(i: usize, n_src: usize, n_dst: usize) -> f64 {
    if n_dst > 1 {
        (i * (n_src - 1)) as f64 / (n_dst - 1) as f64
    } else {
        (n_src - 1) as f64 / 2.0
    }
}

fn resampled_spacing(s: Spacing, src: Dims, dst: Dims) -> Result<Spacing> {
    let (a, b) = (src.as_array(), dst.as_array());
    let sp = s.as_array();
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = sp[i] / grid_ratio(a[i], b[i]);
    }
    Spacing::new(out[0], out[1], out[2])
}

fn check_same(expected: Dims, found: Dims) -> Result<()> {
    if expected != found {
        return Err(Error::DimsMismatch { expected, found });
    }
    Ok(())
}

/// Backward warping and shape resampling, shared by all volume kinds.
pub trait Resample: Sized {
    /// `out(x) = self(x + disp(x))` on the same grid.
    fn warp(&self, disp: &DisplacementField, interp: Interp) -> Result<Self>;

    /// Endpoint-aligned resampling to `dims`; spacing is rescaled so the
    /// physical extent is preserved.
    fn resample_to_shape(&self, dims: Dims, interp: Interp) -> Result<Self>;
}

/// Per-voxel sample points of a backward warp.
fn warp_points(disp: &DisplacementField) -> impl Fn(usize) -> [f64; 3] + Sync + '_ {
    move |i| {
        let [x, y, z] = disp.dims.coords(i);
        let v = disp.data[i];
        [x as f64 + v[0], y as f64 + v[1], z as f64 + v[2]]
    }
}

fn resample_points(src: Dims, dst: Dims) -> impl Fn(usize) -> [f64; 3] + Sync {
    move |i| {
        let [x, y, z] = dst.coords(i);
        [
            source_coord(x, src.w, dst.w),
            source_coord(y, src.h, dst.h),
            source_coord(z, src.z, dst.z),
        ]
    }
}

fn sample_grid<T, S>(dims: Dims, sample: S) -> Vec<T>
where
    T: Send,
    S: Fn(usize) -> T + Sync + Send,
{
    let plane = dims.w * dims.h;
    par::map_slices(dims.z, |z| (z * plane..(z + 1) * plane).map(&sample).collect())
}

impl Resample for Volume3D {
    fn warp(&self, disp: &DisplacementField, interp: Interp) -> Result<Self> {
        check_same(self.dims, disp.dims)?;
        let pt = warp_points(disp);
        let data = match interp {
            Interp::Linear => sample_grid(self.dims, |i| self.sample_linear(pt(i))),
            Interp::Nearest => sample_grid(self.dims, |i| self.sample_nearest(pt(i))),
        };
        Grid::new(self.dims, self.spacing, data)
    }

    fn resample_to_shape(&self, dims: Dims, interp: Interp) -> Result<Self> {
        dims.validate()?;
        if dims == self.dims {
            return Ok(self.clone());
        }
        let pt = resample_points(self.dims, dims);
        let data = match interp {
            Interp::Linear => sample_grid(dims, |i| self.sample_linear(pt(i))),
            Interp::Nearest => sample_grid(dims, |i| self.sample_nearest(pt(i))),
        };
        Grid::new(dims, resampled_spacing(self.spacing, self.dims, dims)?, data)
    }
}

/// Labels are always resampled with nearest-neighbour lookup; `Interp::Linear`
/// is accepted and treated as nearest.
impl Resample for LabelVolume {
    fn warp(&self, disp: &DisplacementField, _interp: Interp) -> Result<Self> {
        check_same(self.dims, disp.dims)?;
        let pt = warp_points(disp);
        let data = sample_grid(self.dims, |i| self.sample_nearest(pt(i)));
        Grid::new(self.dims, self.spacing, data)
    }

    fn resample_to_shape(&self, dims: Dims, _interp: Interp) -> Result<Self> {
        dims.validate()?;
        if dims == self.dims {
            return Ok(self.clone());
        }
        let pt = resample_points(self.dims, dims);
        let data = sample_grid(dims, |i| self.sample_nearest(pt(i)));
        Grid::new(dims, resampled_spacing(self.spacing, self.dims, dims)?, data)
    }
}

/// Component-wise resampling; vectors are not rescaled (see
/// [`DisplacementField::resize`] for that).
impl Resample for DisplacementField {
    fn warp(&self, disp: &DisplacementField, interp: Interp) -> Result<Self> {
        check_same(self.dims, disp.dims)?;
        let pt = warp_points(disp);
        let data = match interp {
            Interp::Linear => sample_grid(self.dims, |i| self.sample_linear(pt(i))),
            Interp::Nearest => sample_grid(self.dims, |i| self.sample_nearest(pt(i))),
        };
        Grid::new(self.dims, self.spacing, data)
    }

    fn resample_to_shape(&self, dims: Dims, interp: Interp) -> Result<Self> {
        dims.validate()?;
        if dims == self.dims {
            return Ok(self.clone());
        }
        let pt = resample_points(self.dims, dims);
        let data = match interp {
            Interp::Linear => sample_grid(dims, |i| self.sample_linear(pt(i))),
            Interp::Nearest => sample_grid(dims, |i| self.sample_nearest(pt(i))),
        };
        Grid::new(dims, resampled_spacing(self.spacing, self.dims, dims)?, data)
    }
}

impl FeatureVolume {
    fn sample_all<P>(&self, dims: Dims, interp: Interp, pt: P) -> Vec<f64>
    where
        P: Fn(usize) -> [f64; 3] + Sync,
    {
        let ch = self.channels;
        let plane = dims.w * dims.h;
        par::map_slices(dims.z, |z| {
            let mut row = vec![0.0; plane * ch];
            for (k, out) in row.chunks_exact_mut(ch).enumerate() {
                let p = pt(z * plane + k);
                match interp {
                    Interp::Linear => self.sample_linear_into(p, out),
                    Interp::Nearest => self.sample_nearest_into(p, out),
                }
            }
            row
        })
    }
}

/// Every channel is warped with the same field.
impl Resample for FeatureVolume {
    fn warp(&self, disp: &DisplacementField, interp: Interp) -> Result<Self> {
        check_same(self.dims, disp.dims)?;
        let data = self.sample_all(self.dims, interp, warp_points(disp));
        Self::new(self.dims, self.spacing, self.channels, data)
    }

    fn resample_to_shape(&self, dims: Dims, interp: Interp) -> Result<Self> {
        dims.validate()?;
        if dims == self.dims {
            return Ok(self.clone());
        }
        let data = self.sample_all(dims, interp, resample_points(self.dims, dims));
        Self::new(
            dims,
            resampled_spacing(self.spacing, self.dims, dims)?,
            self.channels,
            data,
        )
    }
}

pub fn warp_volume<V: Resample>(vol: &V, disp: &DisplacementField, interp: Interp) -> Result<V> {
    vol.warp(disp, interp)
}

pub fn resample_to_shape<V: Resample>(vol: &V, dims: Dims, interp: Interp) -> Result<V> {
    vol.resample_to_shape(dims, interp)
}
