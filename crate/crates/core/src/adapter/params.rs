use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::KernelKind;

/// Logit used when a mixing weight of exactly 0 or 1 is requested; the
/// sigmoid rounds to exactly 0 or 1 there.
pub const SATURATED_LOGIT: f64 = 1000.0;

/// Positions of each parameter block inside the flat vector, in the order
/// `w1, b1, W2 (row-major h × 2d), b2, w3, b3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub d: usize,
    pub h: usize,
}

impl Layout {
    pub fn new(d: usize, h: usize) -> Self {
        Self { d, h }
    }

    /// `(2d + 1) + (h·2d + h) + (h + 1)`
    pub fn count(&self) -> usize {
        let (d, h) = (self.d, self.h);
        (2 * d + 1) + (h * 2 * d + h) + (h + 1)
    }

    pub fn w1(&self) -> Range<usize> {
        0..2 * self.d
    }

    pub fn b1(&self) -> usize {
        2 * self.d
    }

    pub fn w2(&self) -> Range<usize> {
        let s = 2 * self.d + 1;
        s..s + self.h * 2 * self.d
    }

    pub fn b2(&self) -> Range<usize> {
        let s = self.w2().end;
        s..s + self.h
    }

    pub fn w3(&self) -> Range<usize> {
        let s = self.b2().end;
        s..s + self.h
    }

    pub fn b3(&self) -> usize {
        self.w3().end
    }

    /// Bandwidth network parameters.
    pub fn kernel(&self) -> Range<usize> {
        0..2 * self.d + 1
    }

    /// Mixing-weight MLP parameters.
    pub fn weight(&self) -> Range<usize> {
        self.w2().start..self.count()
    }
}

/// Which halves of the adapter are trained. Both off is plain kNN-MT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Learnable {
    pub kernel: bool,
    pub weight: bool,
}

impl Learnable {
    pub const BOTH: Learnable = Learnable { kernel: true, weight: true };
    pub const NONE: Learnable = Learnable { kernel: false, weight: false };
    pub const KERNEL: Learnable = Learnable { kernel: true, weight: false };
    pub const WEIGHT: Learnable = Learnable { kernel: false, weight: true };

    pub fn ranges(&self, layout: &Layout) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        if self.kernel {
            out.push(layout.kernel());
        }
        if self.weight {
            out.push(layout.weight());
        }
        out
    }

    pub fn name(&self) -> &'static str {
        match (self.kernel, self.weight) {
            (true, true) => "both",
            (true, false) => "kernel",
            (false, true) => "weight",
            (false, false) => "none",
        }
    }
}

/// Trainable parameters of the bandwidth network and the mixing MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub kind: KernelKind,
    pub layout: Layout,
    pub data: Vec<f64>,
}

/// Same shape as [`AdapterParams::data`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad {
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl AdapterGrad {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            layout,
            data: vec![0.0; layout.count()],
        }
    }

    pub fn add_assign(&mut self, other: &AdapterGrad) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl AdapterParams {
    pub fn zeros(d: usize, h: usize, kind: KernelKind) -> Self {
        let layout = Layout::new(d, h);
        Self {
            kind,
            layout,
            data: vec![0.0; layout.count()],
        }
    }

    /// Xavier-uniform weights, zero MLP biases, and a bandwidth bias taken
    /// from the mean kernel exponent term of `calibration` distances
    /// (`ln mean d²` for Gaussian, `ln mean d` for Laplacian, `0` without data).
    pub fn init(d: usize, h: usize, kind: KernelKind, seed: u64, calibration: Option<&[f64]>) -> Result<Self> {
        if d == 0 || h == 0 {
            return Err(invalid("adapter dimensions must be positive"));
        }
        let mut p = Self::zeros(d, h, kind);
        let lay = p.layout;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xavier = |range: Range<usize>, fan_in: usize, fan_out: usize, data: &mut [f64]| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut data[range] {
                *x = rng.random_range(-limit..limit) as f32 as f64;
            }
        };
        xavier(lay.w1(), 2 * d, 1, &mut p.data);
        xavier(lay.w2(), 2 * d, h, &mut p.data);
        xavier(lay.w3(), h, 1, &mut p.data);

        let b1 = match calibration.filter(|c| !c.is_empty()) {
            Some(ds) => {
                let mean = ds.iter().map(|&x| kind.exponent_term(x)).sum::<f64>() / ds.len() as f64;
                if mean > 0.0 {
                    mean.ln()
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        p.data[lay.b1()] = b1 as f32 as f64;
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.layout.d
    }

    pub fn h(&self) -> usize {
        self.layout.h
    }

    pub fn parameter_count(&self) -> usize {
        self.layout.count()
    }

    pub fn w1(&self) -> &[f64] {
        &self.data[self.layout.w1()]
    }

    pub fn b1(&self) -> f64 {
        self.data[self.layout.b1()]
    }

    /// Row `r` of `W2`.
    pub fn w2_row(&self, r: usize) -> &[f64] {
        let s = self.layout.w2().start + r * 2 * self.layout.d;
        &self.data[s..s + 2 * self.layout.d]
    }

    pub fn b2(&self) -> &[f64] {
        &self.data[self.layout.b2()]
    }

    pub fn w3(&self) -> &[f64] {
        &self.data[self.layout.w3()]
    }

    pub fn b3(&self) -> f64 {
        self.data[self.layout.b3()]
    }

    /// Pins the bandwidth to `sigma` for every input: `w1 = 0`, `b1 = ln σ`.
    pub fn force_bandwidth(&mut self, sigma: f64) -> Result<()> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("bandwidth must be positive, got {sigma}")));
        }
        let lay = self.layout;
        self.data[lay.w1()].fill(0.0);
        self.data[lay.b1()] = sigma.ln();
        Ok(())
    }

    /// Pins the mixing weight to `lambda` for every input by zeroing the MLP
    /// and setting `b3 = logit(λ)`; 0 and 1 saturate at [`SATURATED_LOGIT`].
    pub fn force_mixing(&mut self, lambda: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid(format!("mixing weight {lambda} outside [0, 1]")));
        }
        let lay = self.layout;
        self.data[lay.w2()].fill(0.0);
        self.data[lay.b2()].fill(0.0);
        self.data[lay.w3()].fill(0.0);
        let logit = (lambda / (1.0 - lambda)).ln();
        self.data[lay.b3()] = logit.clamp(-SATURATED_LOGIT, SATURATED_LOGIT);
        Ok(())
    }

    /// Rounds every parameter to the nearest single-precision value.
    pub fn round_to_f32(&mut self) {
        for x in &mut self.data {
            *x = *x as f32 as f64;
        }
    }
}
