//! In-place radix-2 complex FFT.
//!
//! Only power-of-two lengths are supported. Every caller in this crate
//! zero-pads to the next power of two anyway (ramp filtering, linear
//! correlation), so a mixed-radix planner would buy nothing here.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // inherent when a dependency links std
use num_traits::Float as _;

/// Minimal complex number; kept local so the core has no numerics dependency
/// beyond `num-traits`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

impl core::ops::Add for Complex {
    type Output = Complex;
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl core::ops::Sub for Complex {
    type Output = Complex;
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

impl core::ops::Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

impl core::ops::Mul<f64> for Complex {
    type Output = Complex;
    fn mul(self, s: f64) -> Complex {
        Complex::new(self.re * s, self.im * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Smallest power of two that is `>= n` (and at least 1).
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Precomputed twiddles and bit-reversal table for one transform length.
#[derive(Debug, Clone)]
pub struct Fft {
    len: usize,
    twiddles: Vec<Complex>,
    reversed: Vec<usize>,
}

impl Fft {
    /// Panics if `len` is not a power of two.
    pub fn new(len: usize) -> Self {
        assert!(len.is_power_of_two(), "FFT length {len} is not a power of two");
        let twiddles = (0..len / 2)
            .map(|k| {
                let phase = -2.0 * PI * k as f64 / len as f64;
                Complex::new(phase.cos(), phase.sin())
            })
            .collect();
        let bits = len.trailing_zeros();
        let reversed = (0..len).map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) }).collect();
        Self { len, twiddles, reversed }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized transform; the inverse divides by `len`.
    pub fn process(&self, data: &mut [Complex], direction: Direction) {
        assert_eq!(data.len(), self.len);
        let n = self.len;
        for i in 0..n {
            let j = self.reversed[i];
            if j > i {
                data.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if direction == Direction::Inverse {
                        w = w.conj();
                    }
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
        if direction == Direction::Inverse {
            let scale = 1.0 / n as f64;
            for v in data.iter_mut() {
                *v = *v * scale;
            }
        }
    }
}

/// 2-D transform of a row-major `rows x cols` buffer; both sides must be
/// powers of two.
pub fn fft2(data: &mut [Complex], rows: usize, cols: usize, direction: Direction) {
    assert_eq!(data.len(), rows * cols);
    let row_fft = Fft::new(cols);
    for row in data.chunks_exact_mut(cols) {
        row_fft.process(row, direction);
    }
    let col_fft = Fft::new(rows);
    let mut column = alloc::vec![Complex::ZERO; rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_fft.process(&mut column, direction);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
}
