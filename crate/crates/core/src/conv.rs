//! Valid-region cross-correlation of a tensor with a kernel.
//!
//! Output index `o` holds `Σ_k K[k]·X[o + k]` for every `o` with the kernel fully
//! inside the tensor, i.e. `N_j − n_j + 1` offsets per axis. The FFT path uses a
//! circular correlation of size `N`; its first `N − n + 1` outputs never wrap.

use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{MssError, Result};
use crate::field::TensorField;
use crate::pattern::Kernel;
use crate::scalar::Scalar;

/// Kernels with every axis shorter than this use direct summation by default.
pub const DEFAULT_CROSSOVER: usize = 64;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for j in (0..shape.len().saturating_sub(1)).rev() {
        s[j] = s[j + 1] * shape[j + 1];
    }
    s
}

fn check_fit(tensor: &[usize], kernel: &[usize]) -> Result<()> {
    if tensor.len() != kernel.len() || kernel.iter().zip(tensor).any(|(k, n)| k > n) {
        return Err(MssError::KernelTooLarge {
            kernel: kernel.to_vec(),
            tensor: tensor.to_vec(),
        });
    }
    Ok(())
}

fn valid_shape(tensor: &[usize], kernel: &[usize]) -> Vec<usize> {
    tensor.iter().zip(kernel).map(|(n, k)| n - k + 1).collect()
}

/// Flat tensor offsets of every kernel cell relative to the window origin.
fn kernel_offsets(tensor: &[usize], kernel: &[usize]) -> Vec<usize> {
    let ts = strides(tensor);
    let total: usize = kernel.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; kernel.len()];
    for _ in 0..total {
        out.push(idx.iter().zip(&ts).map(|(i, s)| i * s).sum());
        for j in (0..kernel.len()).rev() {
            idx[j] += 1;
            if idx[j] < kernel[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    out
}

/// Correlation value at the window whose first cell has flat index `base`.
#[inline]
fn window_dot<T: Scalar>(x: &[T], base: usize, kernel: &[T], offsets: &[usize]) -> T {
    let mut acc = T::zero();
    for (k, &o) in kernel.iter().zip(offsets) {
        acc = acc + *k * x[base + o];
    }
    acc
}

/// Direct correlation evaluated only at the product of per-axis window starts.
pub fn correlate_direct_at<T: Scalar>(
    x: &ArrayD<T>,
    kernel: &ArrayD<T>,
    starts: &[Vec<usize>],
) -> Result<ArrayD<T>> {
    check_fit(x.shape(), kernel.shape())?;
    let xs = x.as_standard_layout();
    let ks = kernel.as_standard_layout();
    let xsl = xs.as_slice().expect("standard layout");
    let ksl = ks.as_slice().expect("standard layout");
    let offsets = kernel_offsets(x.shape(), kernel.shape());
    let tstrides = strides(x.shape());
    let out_shape: Vec<usize> = starts.iter().map(Vec::len).collect();
    let total: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..total {
        let base: usize = (0..idx.len()).map(|j| starts[j][idx[j]] * tstrides[j]).sum();
        out.push(window_dot(xsl, base, ksl, &offsets));
        for j in (0..idx.len()).rev() {
            idx[j] += 1;
            if idx[j] < out_shape[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(ArrayD::from_shape_vec(IxDyn(&out_shape), out).expect("shape"))
}

/// Direct valid-region correlation.
pub fn correlate_direct<T: Scalar>(x: &ArrayD<T>, kernel: &ArrayD<T>) -> Result<ArrayD<T>> {
    check_fit(x.shape(), kernel.shape())?;
    let starts: Vec<Vec<usize>> = valid_shape(x.shape(), kernel.shape())
        .into_iter()
        .map(|m| (0..m).collect())
        .collect();
    correlate_direct_at(x, kernel, &starts)
}

/// FFT machinery for tensors of one shape (equal length on every axis).
pub struct Correlator<T: Scalar> {
    shape: Vec<usize>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

/// Spectrum of a tensor or (conjugated) kernel on the full grid.
pub type Spectrum<T> = Vec<Complex<T>>;

impl<T: Scalar> Correlator<T> {
    pub fn new(shape: &[usize]) -> Result<Self> {
        let n = *shape.first().ok_or_else(|| MssError::geometry("empty shape"))?;
        if shape.iter().any(|&m| m != n) {
            return Err(MssError::geometry(format!("non-isotropic shape {shape:?}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Correlator {
            shape: shape.to_vec(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn transform(&self, data: &mut [Complex<T>], fft: &Arc<dyn Fft<T>>) {
        let n = self.shape[0];
        let d = self.shape.len();
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
        // Last axis is contiguous.
        fft.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex::new(T::zero(), T::zero()); n];
        let st = strides(&self.shape);
        for &stride in &st[..d.saturating_sub(1)] {
            let block = stride * n;
            for outer in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[base + k * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
    }

    pub fn tensor_spectrum(&self, x: &[T]) -> Spectrum<T> {
        let mut data: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    /// Conjugated spectrum of the zero-padded kernel.
    pub fn kernel_spectrum(&self, kernel: &ArrayD<T>) -> Result<Spectrum<T>> {
        check_fit(&self.shape, kernel.shape())?;
        let total: usize = self.shape.iter().product();
        let mut data = vec![Complex::new(T::zero(), T::zero()); total];
        let st = strides(&self.shape);
        for (idx, &v) in kernel.indexed_iter() {
            let flat: usize = (0..st.len()).map(|j| idx[j] * st[j]).sum();
            data[flat] = Complex::new(v, T::zero());
        }
        self.transform(&mut data, &self.forward);
        data.iter_mut().for_each(|c| *c = c.conj());
        Ok(data)
    }

    /// Full circular correlation; entries at valid offsets equal the direct result.
    pub fn correlate_spectra(&self, x: &Spectrum<T>, k: &Spectrum<T>) -> Vec<T> {
        let mut prod: Vec<Complex<T>> = x.iter().zip(k).map(|(a, b)| a * b).collect();
        self.transform(&mut prod, &self.inverse);
        let scale = T::from_f64_lossy(1.0 / prod.len() as f64);
        prod.into_iter().map(|c| c.re * scale).collect()
    }

    /// Valid region of [`Correlator::correlate_spectra`].
    pub fn correlate(&self, x: &[T], kernel: &ArrayD<T>) -> Result<ArrayD<T>> {
        let ks = self.kernel_spectrum(kernel)?;
        let full = self.correlate_spectra(&self.tensor_spectrum(x), &ks);
        let valid = valid_shape(&self.shape, kernel.shape());
        let starts: Vec<Vec<usize>> = valid.iter().map(|&m| (0..m).collect()).collect();
        Ok(gather(&full, &self.shape, &starts))
    }
}

/// Picks the entries of a full-grid array at the product of per-axis indices.
pub fn gather<T: Copy>(full: &[T], shape: &[usize], starts: &[Vec<usize>]) -> ArrayD<T> {
    let st = strides(shape);
    let out_shape: Vec<usize> = starts.iter().map(Vec::len).collect();
    let total: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..total {
        let flat: usize = (0..idx.len()).map(|j| starts[j][idx[j]] * st[j]).sum();
        out.push(full[flat]);
        for j in (0..idx.len()).rev() {
            idx[j] += 1;
            if idx[j] < out_shape[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    ArrayD::from_shape_vec(IxDyn(&out_shape), out).expect("shape")
}

/// Valid-region correlation of `x` with `kernel`; direct when every kernel axis is
/// shorter than `crossover` cells, FFT otherwise.
pub fn convolve_at_scale_with<T: Scalar>(
    x: &TensorField<T>,
    kernel: &Kernel<T>,
    crossover: usize,
) -> Result<ArrayD<T>> {
    check_fit(x.values.shape(), kernel.values.shape())?;
    if kernel.footprint.iter().all(|&n| n < crossover) {
        correlate_direct(&x.values, &kernel.values)
    } else {
        Correlator::new(x.values.shape())?.correlate(x.as_slice(), &kernel.values)
    }
}

pub fn convolve_at_scale<T: Scalar>(x: &TensorField<T>, kernel: &Kernel<T>) -> Result<ArrayD<T>> {
    convolve_at_scale_with(x, kernel, DEFAULT_CROSSOVER)
}
