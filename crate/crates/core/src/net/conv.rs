//! Stride-1, zero-padded ("same") convolution over channel-last maps.
//!
//! The forward pass visits, for every kernel offset, only the (output cell,
//! input cell) pairs whose input row is non-zero. Empty grid cells carry
//! all-zero input rows, so skipping them is exact and saves most of the work
//! on sparse detection grids.

use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor3};
use crate::error::{Error, Result};

/// Weights are laid out `[ky][kx][in][out]`: every kernel offset owns a
/// contiguous `in x out` row-major block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvLayer {
            kernel,
            in_channels,
            out_channels,
            weights: vec![T::zero(); kernel * kernel * in_channels * out_channels],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    fn block(&self, offset: usize) -> &[T] {
        let n = self.in_channels * self.out_channels;
        &self.weights[offset * n..(offset + 1) * n]
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Shape(alloc::format!("kernel size {} is not odd", self.kernel)));
        }
        let expected = self.kernel * self.kernel * self.in_channels * self.out_channels;
        if self.weights.len() != expected || self.bias.len() != self.out_channels {
            return Err(Error::Shape(alloc::format!(
                "layer holds {} weights / {} biases, expected {} / {}",
                self.weights.len(),
                self.bias.len(),
                expected,
                self.out_channels
            )));
        }
        Ok(())
    }
}

/// For each kernel offset, the `(output row, input cell)` pairs that
/// contribute to the result.
#[derive(Debug, Clone)]
pub(crate) struct Taps {
    per_offset: Vec<Vec<(u32, u32)>>,
}

impl Taps {
    pub(crate) fn build(
        width: usize,
        height: usize,
        kernel: usize,
        out_cells: &[usize],
        input_nonzero: &[bool],
    ) -> Self {
        let r = (kernel / 2) as isize;
        let (w, h) = (width as isize, height as isize);
        let mut per_offset = Vec::with_capacity(kernel * kernel);
        for dy in -r..=r {
            for dx in -r..=r {
                let mut pairs = Vec::new();
                for (row, &cell) in out_cells.iter().enumerate() {
                    let x = (cell % width) as isize + dx;
                    let y = (cell / width) as isize + dy;
                    if x < 0 || y < 0 || x >= w || y >= h {
                        continue;
                    }
                    let src = (y * w + x) as usize;
                    if input_nonzero[src] {
                        pairs.push((row as u32, src as u32));
                    }
                }
                per_offset.push(pairs);
            }
        }
        Taps { per_offset }
    }
}

/// Pre-activation outputs at `n_out` cells (`n_out x out_channels`).
pub(crate) fn forward_rows<T: Real>(layer: &ConvLayer<T>, input: &Tensor3<T>, taps: &Taps, n_out: usize) -> Vec<T> {
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let mut out = Vec::with_capacity(n_out * cout);
    for _ in 0..n_out {
        out.extend_from_slice(&layer.bias);
    }
    let mut gathered = Vec::new();
    let mut product = Vec::new();
    for (offset, pairs) in taps.per_offset.iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let np = pairs.len();
        gathered.clear();
        for &(_, src) in pairs {
            gathered.extend_from_slice(input.row(src as usize));
        }
        product.clear();
        product.resize(np * cout, T::zero());
        T::gemm(np, cin, cout, &gathered, (cin, 1), layer.block(offset), (cout, 1), T::zero(), &mut product, (cout, 1));
        for (i, &(row, _)) in pairs.iter().enumerate() {
            let dst = &mut out[row as usize * cout..(row as usize + 1) * cout];
            for (d, &p) in dst.iter_mut().zip(&product[i * cout..(i + 1) * cout]) {
                *d += p;
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients given `d_out` (`n_out x out_channels`).
pub(crate) fn weight_grad_rows<T: Real>(
    layer: &ConvLayer<T>,
    input: &Tensor3<T>,
    taps: &Taps,
    d_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let live: Vec<bool> = d_out.chunks_exact(cout).map(|r| r.iter().any(|v| !v.is_zero())).collect();
    for (row, r) in d_out.chunks_exact(cout).enumerate() {
        if live[row] {
            for (g, &v) in grad_b.iter_mut().zip(r) {
                *g += v;
            }
        }
    }
    let block = cin * cout;
    let mut gathered_in = Vec::new();
    let mut gathered_grad = Vec::new();
    for (offset, pairs) in taps.per_offset.iter().enumerate() {
        gathered_in.clear();
        gathered_grad.clear();
        let mut np = 0;
        for &(row, src) in pairs {
            if live[row as usize] {
                gathered_in.extend_from_slice(input.row(src as usize));
                gathered_grad.extend_from_slice(&d_out[row as usize * cout..(row as usize + 1) * cout]);
                np += 1;
            }
        }
        if np == 0 {
            continue;
        }
        T::gemm(
            cin,
            np,
            cout,
            &gathered_in,
            (1, cin),
            &gathered_grad,
            (cout, 1),
            T::one(),
            &mut grad_w[offset * block..(offset + 1) * block],
            (cout, 1),
        );
    }
}

/// Stride-1 zero-padded cross-correlation; output has the input's spatial size.
pub fn conv2d_same<T: Real>(input: &Tensor3<T>, layer: &ConvLayer<T>) -> Result<Tensor3<T>> {
    layer.check()?;
    if input.channels != layer.in_channels {
        return Err(Error::Shape(alloc::format!(
            "input has {} channels, layer expects {}",
            input.channels, layer.in_channels
        )));
    }
    let cells: Vec<usize> = (0..input.cells()).collect();
    let taps = Taps::build(input.width, input.height, layer.kernel, &cells, &input.nonzero_cells());
    let data = forward_rows(layer, input, &taps, cells.len());
    Ok(Tensor3 {
        width: input.width,
        height: input.height,
        channels: layer.out_channels,
        data,
    })
}
