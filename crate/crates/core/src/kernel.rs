//! Kernels, kernel bases, per-pixel mixing fields and segment maps.
//!
//! Kernels are odd-sized squares stored row-major; tap `(K/2, K/2)` is the
//! zero-displacement tap, so a delta there is the identity.

use rayon::prelude::*;

use crate::error::{invalid, mismatch, Location, Result, Validate, Violation};
use crate::image::{Encoding, Image};

/// Unit-sum tolerance for kernels and mixing coefficients.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// A single non-negative, unit-sum `K x K` kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    /// Validates the taps and renormalizes them to exact unit mass.
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        let kernel = Self::from_stored(size, taps)?;
        Ok(kernel.renormalized())
    }

    /// Validates without renormalizing, keeping the taps bit-exact.
    pub fn from_stored(size: usize, taps: Vec<f64>) -> Result<Self> {
        check_size(size)?;
        if taps.len() != size * size {
            return Err(mismatch(format!(
                "kernel has {} taps, expected {size}x{size}",
                taps.len()
            )));
        }
        let kernel = Self { size, taps };
        kernel.validate()?;
        Ok(kernel)
    }

    /// Scales arbitrary non-negative mass to unit sum.
    pub fn from_mass(size: usize, mut taps: Vec<f64>) -> Result<Self> {
        let s: f64 = taps.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid(format!(
                "kernel mass must be positive and finite, got {s}"
            )));
        }
        taps.iter_mut().for_each(|t| *t /= s);
        Self::new(size, taps)
    }

    pub(crate) fn from_parts(size: usize, taps: Vec<f64>) -> Self {
        Self { size, taps }
    }

    pub fn delta(size: usize) -> Result<Self> {
        check_size(size)?;
        let mut taps = vec![0.0; size * size];
        taps[(size / 2) * size + size / 2] = 1.0;
        Ok(Self { size, taps })
    }

    /// Uniform box kernel of side `side` (odd, `<= size`) centered in a `size` support.
    pub fn boxed(size: usize, side: usize) -> Result<Self> {
        check_size(size)?;
        if side.is_multiple_of(2) || side > size {
            return Err(invalid(format!(
                "box side {side} must be odd and <= {size}"
            )));
        }
        let c = size / 2;
        let r = side / 2;
        let w = 1.0 / (side * side) as f64;
        let mut taps = vec![0.0; size * size];
        for y in c - r..=c + r {
            for x in c - r..=c + r {
                taps[y * size + x] = w;
            }
        }
        Ok(Self { size, taps })
    }

    /// Delta displaced by `(dy, dx)` from the center.
    pub fn shifted_delta(size: usize, dy: isize, dx: isize) -> Result<Self> {
        check_size(size)?;
        let c = (size / 2) as isize;
        let (y, x) = (c + dy, c + dx);
        if y < 0 || x < 0 || y >= size as isize || x >= size as isize {
            return Err(invalid(format!(
                "shift ({dy}, {dx}) leaves the {size}x{size} support"
            )));
        }
        let mut taps = vec![0.0; size * size];
        taps[y as usize * size + x as usize] = 1.0;
        Ok(Self { size, taps })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn into_taps(self) -> Vec<f64> {
        self.taps
    }

    #[inline]
    pub fn tap(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.taps)
    }

    /// Side of the square bounding box of the non-zero taps (0 for an all-zero kernel).
    pub fn support_extent(&self) -> usize {
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for (i, &t) in self.taps.iter().enumerate() {
            if t > 0.0 {
                let (r, c) = (i / self.size, i % self.size);
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
        if r0 == usize::MAX {
            0
        } else {
            (r1 - r0 + 1).max(c1 - c0 + 1)
        }
    }

    /// Rounds taps to `f32` and validates the result without renormalizing.
    pub fn quantize_f32(&self) -> Result<Self> {
        Self::from_stored(
            self.size,
            self.taps.iter().map(|&t| t as f32 as f64).collect(),
        )
    }

    fn renormalized(mut self) -> Self {
        let s = self.sum();
        self.taps.iter_mut().for_each(|t| *t /= s);
        self
    }
}

impl Validate for Kernel {
    fn validate(&self) -> Result<(), Violation> {
        validate_kernel_taps("Kernel", 0, self.size, &self.taps)
    }
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(invalid(format!("kernel size must be odd, got {size}")));
    }
    Ok(())
}

fn validate_kernel_taps(
    subject: &'static str,
    basis: usize,
    size: usize,
    taps: &[f64],
) -> Result<(), Violation> {
    for (i, &t) in taps.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(Violation::new(
                subject,
                format!("tap value {t} is not a finite non-negative number"),
                Location::Tap {
                    basis,
                    row: i / size,
                    col: i % size,
                },
            ));
        }
    }
    let s: f64 = taps.iter().sum();
    if (s - 1.0).abs() > MASS_TOLERANCE {
        return Err(Violation::new(
            subject,
            format!("kernel sums to {s}, expected 1 within {MASS_TOLERANCE:e}"),
            Location::Kernel(basis),
        ));
    }
    Ok(())
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum::<f64>().sqrt()
}

/// `B` kernels of a common odd size `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    count: usize,
    size: usize,
    data: Vec<f64>,
}

impl KernelBasis {
    /// Validates and renormalizes every element.
    pub fn new(count: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        let mut basis = Self::from_stored(count, size, data)?;
        let k2 = size * size;
        for chunk in basis.data.chunks_exact_mut(k2) {
            let s: f64 = chunk.iter().sum();
            chunk.iter_mut().for_each(|t| *t /= s);
        }
        Ok(basis)
    }

    /// Validates without renormalizing (used for deserialized, already normalized data).
    pub fn from_stored(count: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        check_size(size)?;
        if count == 0 {
            return Err(invalid("kernel basis must have at least one element"));
        }
        if data.len() != count * size * size {
            return Err(mismatch(format!(
                "kernel basis data has {} values, expected {count}x{size}x{size}",
                data.len()
            )));
        }
        let basis = Self { count, size, data };
        basis.validate()?;
        Ok(basis)
    }

    pub fn from_kernels(kernels: &[Kernel]) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| invalid("kernel basis must have at least one element"))?;
        let size = first.size();
        let mut data = Vec::with_capacity(kernels.len() * size * size);
        for k in kernels {
            if k.size() != size {
                return Err(mismatch(format!(
                    "kernel sizes differ within basis: {size} vs {}",
                    k.size()
                )));
            }
            data.extend_from_slice(k.taps());
        }
        Self::from_stored(kernels.len(), size, data)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn kernel_taps(&self, b: usize) -> &[f64] {
        let k2 = self.size * self.size;
        &self.data[b * k2..(b + 1) * k2]
    }

    pub fn kernel(&self, b: usize) -> Kernel {
        Kernel::from_parts(self.size, self.kernel_taps(b).to_vec())
    }

    pub fn kernels(&self) -> impl Iterator<Item = Kernel> + '_ {
        (0..self.count).map(|b| self.kernel(b))
    }

    /// Reorders the basis elements; `order[i]` is the source index of element `i`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.count)?;
        let data = order
            .iter()
            .flat_map(|&b| self.kernel_taps(b).iter().copied())
            .collect();
        Ok(Self {
            count: self.count,
            size: self.size,
            data,
        })
    }
}

impl Validate for KernelBasis {
    fn validate(&self) -> Result<(), Violation> {
        if self.size.is_multiple_of(2) {
            return Err(Violation::new(
                "KernelBasis",
                format!("kernel size {} is not odd", self.size),
                Location::Whole,
            ));
        }
        let k2 = self.size * self.size;
        for (b, chunk) in self.data.chunks_exact(k2).enumerate() {
            validate_kernel_taps("KernelBasis", b, self.size, chunk)?;
        }
        Ok(())
    }
}

fn check_permutation(order: &[usize], count: usize) -> Result<()> {
    let mut seen = vec![false; count];
    if order.len() != count {
        return Err(mismatch("permutation length differs from basis count"));
    }
    for &b in order {
        if b >= count || std::mem::replace(&mut seen[b], true) {
            return Err(invalid("not a permutation"));
        }
    }
    Ok(())
}

/// Per-pixel convex weights over `B` basis elements, stored plane by plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingField {
    count: usize,
    height: usize,
    width: usize,
    coeffs: Vec<f64>,
}

impl MixingField {
    /// Validates and renormalizes each pixel's weights to exact unit sum.
    pub fn new(count: usize, height: usize, width: usize, coeffs: Vec<f64>) -> Result<Self> {
        let mut field = Self::from_stored(count, height, width, coeffs)?;
        let n = height * width;
        for i in 0..n {
            let s: f64 = (0..count).map(|b| field.coeffs[b * n + i]).sum();
            for b in 0..count {
                field.coeffs[b * n + i] /= s;
            }
        }
        Ok(field)
    }

    /// Validates without renormalizing.
    pub fn from_stored(
        count: usize,
        height: usize,
        width: usize,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        if count == 0 || height == 0 || width == 0 {
            return Err(invalid("mixing field dimensions must be non-zero"));
        }
        if coeffs.len() != count * height * width {
            return Err(mismatch(format!(
                "mixing field has {} coefficients, expected {count}x{height}x{width}",
                coeffs.len()
            )));
        }
        let field = Self {
            count,
            height,
            width,
            coeffs,
        };
        field.validate()?;
        Ok(field)
    }

    /// Single-element field with weight 1 everywhere.
    pub fn single(height: usize, width: usize) -> Result<Self> {
        Self::from_stored(1, height, width, vec![1.0; height * width])
    }

    /// Field selecting element `labels[i]` at each pixel.
    pub fn one_hot(count: usize, height: usize, width: usize, labels: &[usize]) -> Result<Self> {
        let n = height * width;
        if labels.len() != n {
            return Err(mismatch("label count differs from pixel count"));
        }
        let mut coeffs = vec![0.0; count * n];
        for (i, &l) in labels.iter().enumerate() {
            if l >= count {
                return Err(invalid(format!(
                    "label {l} out of range for {count} elements"
                )));
            }
            coeffs[l * n + i] = 1.0;
        }
        Self::from_stored(count, height, width, coeffs)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn plane(&self, b: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.coeffs[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn coeff(&self, b: usize, row: usize, col: usize) -> f64 {
        self.coeffs[(b * self.height + row) * self.width + col]
    }

    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.count)?;
        let coeffs = order
            .iter()
            .flat_map(|&b| self.plane(b).iter().copied())
            .collect();
        Ok(Self {
            count: self.count,
            height: self.height,
            width: self.width,
            coeffs,
        })
    }

    /// Rounds coefficients to `f32` and validates the result without renormalizing.
    pub fn quantize_f32(&self) -> Result<Self> {
        Self::from_stored(
            self.count,
            self.height,
            self.width,
            self.coeffs.iter().map(|&c| c as f32 as f64).collect(),
        )
    }
}

impl Validate for MixingField {
    fn validate(&self) -> Result<(), Violation> {
        let n = self.height * self.width;
        for (j, &c) in self.coeffs.iter().enumerate() {
            if !c.is_finite() || c < 0.0 {
                let i = j % n;
                return Err(Violation::new(
                    "MixingField",
                    format!("coefficient {c} is not a finite non-negative number"),
                    Location::Coefficient {
                        basis: j / n,
                        row: i / self.width,
                        col: i % self.width,
                    },
                ));
            }
        }
        for i in 0..n {
            let s: f64 = (0..self.count).map(|b| self.coeffs[b * n + i]).sum();
            if (s - 1.0).abs() > MASS_TOLERANCE {
                return Err(Violation::new(
                    "MixingField",
                    format!("coefficients sum to {s}, expected 1 within {MASS_TOLERANCE:e}"),
                    Location::Pixel {
                        row: i / self.width,
                        col: i % self.width,
                    },
                ));
            }
        }
        Ok(())
    }
}

/// Integer segment labels with cached per-label pixel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl SegmentMap {
    /// Label count is `max(label) + 1`.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("segment map dimensions must be non-zero"));
        }
        if labels.len() != height * width {
            return Err(mismatch(format!(
                "segment map has {} labels, expected {height}x{width}",
                labels.len()
            )));
        }
        let count = labels.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut sizes = vec![0; count];
        for &l in &labels {
            sizes[l as usize] += 1;
        }
        Ok(Self {
            height,
            width,
            labels,
            sizes,
        })
    }

    pub fn uniform(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn segment_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn segment_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Binary mask of one segment.
    pub fn mask(&self, s: usize) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&l| if l as usize == s { 1.0 } else { 0.0 })
            .collect()
    }
}

impl Validate for SegmentMap {
    fn validate(&self) -> Result<(), Violation> {
        let count = self.sizes.len();
        let mut sizes = vec![0usize; count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l as usize >= count {
                return Err(Violation::new(
                    "SegmentMap",
                    format!("label {l} >= segment count {count}"),
                    Location::Pixel {
                        row: i / self.width,
                        col: i % self.width,
                    },
                ));
            }
            sizes[l as usize] += 1;
        }
        for (s, (&have, &want)) in self.sizes.iter().zip(&sizes).enumerate() {
            if have != want {
                return Err(Violation::new(
                    "SegmentMap",
                    format!("cached size {have} differs from pixel count {want}"),
                    Location::Label(s),
                ));
            }
        }
        Ok(())
    }
}

fn check_compatible(basis: &KernelBasis, field: &MixingField) -> Result<()> {
    if basis.count() != field.count() {
        return Err(mismatch(format!(
            "basis has {} elements but mixing field has {}",
            basis.count(),
            field.count()
        )));
    }
    Ok(())
}

/// Writes `sum_b m^b_i k^b` for pixel `(row, col)` into `out`.
fn synth_into(basis: &KernelBasis, field: &MixingField, row: usize, col: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|t| *t = 0.0);
    for b in 0..basis.count() {
        let m = field.coeff(b, row, col);
        for (o, &k) in out.iter_mut().zip(basis.kernel_taps(b)) {
            *o += m * k;
        }
    }
}

/// The kernel acting at pixel `(row, col)`: the convex combination of the
/// basis elements under that pixel's mixing weights.
pub fn synth_pixel_kernel(
    basis: &KernelBasis,
    field: &MixingField,
    row: usize,
    col: usize,
) -> Result<Kernel> {
    check_compatible(basis, field)?;
    if row >= field.height() || col >= field.width() {
        return Err(invalid(format!(
            "pixel ({row}, {col}) outside {}x{} field",
            field.height(),
            field.width()
        )));
    }
    let k = basis.size();
    let mut taps = vec![0.0; k * k];
    synth_into(basis, field, row, col, &mut taps);
    Ok(Kernel::from_parts(k, taps))
}

/// Per-pixel L2 norm of the synthesized kernel, as a single-channel image.
/// A delta gives 1; spread kernels give smaller values.
pub fn kernel_norm_map(basis: &KernelBasis, field: &MixingField) -> Result<Image> {
    check_compatible(basis, field)?;
    let (h, w, k) = (field.height(), field.width(), basis.size());
    let mut data = vec![0.0; h * w];
    data.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        let mut taps = vec![0.0; k * k];
        for (col, o) in out.iter_mut().enumerate() {
            synth_into(basis, field, row, col, &mut taps);
            *o = l2_norm(&taps);
        }
    });
    Ok(Image::from_parts(h, w, 1, data, Encoding::Linear))
}

/// A dense field of per-pixel kernels (ground truth for the kernel loss).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelKernels {
    height: usize,
    width: usize,
    size: usize,
    data: Vec<f64>,
}

impl PixelKernels {
    pub fn new(height: usize, width: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        check_size(size)?;
        if data.len() != height * width * size * size {
            return Err(mismatch("per-pixel kernel data has the wrong length"));
        }
        for i in 0..height * width {
            let taps = &data[i * size * size..(i + 1) * size * size];
            validate_kernel_taps("PixelKernels", i, size, taps)?;
        }
        Ok(Self {
            height,
            width,
            size,
            data,
        })
    }

    /// Materializes every per-pixel kernel of a basis/field pair.
    pub fn from_basis(basis: &KernelBasis, field: &MixingField) -> Result<Self> {
        check_compatible(basis, field)?;
        let (h, w, k) = (field.height(), field.width(), basis.size());
        let mut data = vec![0.0; h * w * k * k];
        for (i, chunk) in data.chunks_exact_mut(k * k).enumerate() {
            synth_into(basis, field, i / w, i % w, chunk);
        }
        Ok(Self {
            height: h,
            width: w,
            size: k,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kernel_taps(&self, row: usize, col: usize) -> &[f64] {
        let k2 = self.size * self.size;
        let i = row * self.width + col;
        &self.data[i * k2..(i + 1) * k2]
    }
}
