//! Two-dimensional discrete Fourier analysis of image planes.
//!
//! The forward transform follows the unnormalized convention
//! `F(u,v) = sum_{x,y} f(x,y) exp(-j 2 pi (ux/M + vy/N))`; the `1/(MN)`
//! factor lives entirely in the inverse. Rows of a plane are indexed by
//! `x`/`u` and columns by `y`/`v`.
//!
//! Power-of-two sizes go through an iterative radix-2 FFT; every other
//! size falls back to a direct evaluation, so arbitrary plane sizes work.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;

use crate::types::{ComplexMatrix, RealMatrix};
use crate::{Error, Result};

/// Index convention for the frequency weight `w(u,v)`.
///
/// `Raw` applies `sqrt(u^2 + v^2)` literally on DFT indices, which assigns
/// large weights to high-index bins even though those alias low spatial
/// frequencies. `Centered` folds each index to `min(u, M-u)` first so the
/// weight grows with the true spatial frequency. `None` disables weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Centered,
    Raw,
    None,
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(WeightMode::Centered),
            "raw" => Ok(WeightMode::Raw),
            "none" => Ok(WeightMode::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown weight mode '{other}' (expected centered|raw|none)"
            ))),
        }
    }
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightMode::Centered => "centered",
            WeightMode::Raw => "raw",
            WeightMode::None => "none",
        })
    }
}

/// Pass band selector for [`radial_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    LowPass,
    HighPass,
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" | "low_pass" | "lowpass" => Ok(FilterMode::LowPass),
            "high" | "high_pass" | "highpass" => Ok(FilterMode::HighPass),
            other => Err(Error::InvalidArgument(format!(
                "unknown filter mode '{other}' (expected low|high)"
            ))),
        }
    }
}

/// A radial filter: keep or drop bins by their centered radial frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub mode: FilterMode,
    pub cutoff: f64,
}

impl FilterSpec {
    pub fn new(mode: FilterMode, cutoff: f64) -> Result<Self> {
        if !cutoff.is_finite() || cutoff < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "filter cutoff must be finite and >= 0, got {cutoff}"
            )));
        }
        Ok(FilterSpec { mode, cutoff })
    }

    pub fn low_pass(cutoff: f64) -> Result<Self> {
        FilterSpec::new(FilterMode::LowPass, cutoff)
    }

    pub fn high_pass(cutoff: f64) -> Result<Self> {
        FilterSpec::new(FilterMode::HighPass, cutoff)
    }
}

/// Forward 2-D DFT of a real plane (no normalization factor).
pub fn dft2(plane: &RealMatrix) -> ComplexMatrix {
    let mut spectrum = plane.mapv(|v| Complex64::new(v, 0.0));
    transform2(&mut spectrum, -1.0);
    spectrum
}

/// Inverse 2-D DFT with the `1/(MN)` factor, real part taken.
///
/// The input is expected to be the spectrum of a real plane (conjugate
/// symmetric up to numerical noise). A significant imaginary residue
/// means the input was not such a spectrum; it is logged as a warning
/// and the real part is still returned.
pub fn idft2(spectrum: &ComplexMatrix) -> RealMatrix {
    let full = idft2_complex(spectrum);
    let mut max_re = 0.0f64;
    let mut max_im = 0.0f64;
    for z in full.iter() {
        max_re = max_re.max(z.re.abs());
        max_im = max_im.max(z.im.abs());
    }
    if max_im > 1e-3 * (1.0 + max_re) {
        log::warn!(
            "idft2: imaginary residue {:.3e} vs signal magnitude {:.3e}; \
             input spectrum is not conjugate symmetric",
            max_im,
            max_re
        );
    }
    full.mapv(|z| z.re)
}

/// Inverse 2-D DFT with the `1/(MN)` factor, complex result kept.
///
/// Used where the input is deliberately not conjugate symmetric, e.g. the
/// adjoint pass of the frequency-weighted loss gradient.
pub fn idft2_complex(spectrum: &ComplexMatrix) -> ComplexMatrix {
    let (m, n) = spectrum.dim();
    let mut out = spectrum.clone();
    transform2(&mut out, 1.0);
    let scale = 1.0 / (m as f64 * n as f64);
    out.mapv_inplace(|z| z * scale);
    out
}

/// Per-bin complex magnitude `sqrt(Re^2 + Im^2)`.
pub fn magnitude(spectrum: &ComplexMatrix) -> RealMatrix {
    spectrum.mapv(|z| z.norm())
}

/// The frequency weight matrix `w(u,v)`.
pub fn weight_matrix(rows: usize, cols: usize, mode: WeightMode) -> RealMatrix {
    RealMatrix::from_shape_fn((rows, cols), |(u, v)| match mode {
        WeightMode::None => 1.0,
        WeightMode::Raw => ((u * u + v * v) as f64).sqrt(),
        WeightMode::Centered => {
            let uc = u.min(rows - u);
            let vc = v.min(cols - v);
            ((uc * uc + vc * vc) as f64).sqrt()
        }
    })
}

/// Centered radial frequency of bin `(u, v)` in an `M x N` spectrum.
pub fn centered_radius(u: usize, v: usize, rows: usize, cols: usize) -> f64 {
    let uc = u.min(rows - u);
    let vc = v.min(cols - v);
    ((uc * uc + vc * vc) as f64).sqrt()
}

/// Quadrant swap placing the DC bin at `(floor(M/2), floor(N/2))`.
///
/// Self-inverse for even dimensions.
pub fn shift_spectrum(spectrum: &ComplexMatrix) -> ComplexMatrix {
    let (m, n) = spectrum.dim();
    let mut out = ComplexMatrix::zeros((m, n));
    for u in 0..m {
        for v in 0..n {
            out[((u + m / 2) % m, (v + n / 2) % n)] = spectrum[(u, v)];
        }
    }
    out
}

/// Zero out bins by centered radial frequency.
///
/// Low pass keeps bins with radius `<= cutoff`; high pass keeps bins with
/// radius `> cutoff`. The two outputs at the same cutoff partition the
/// input exactly.
pub fn radial_filter(spectrum: &ComplexMatrix, spec: &FilterSpec) -> ComplexMatrix {
    let (m, n) = spectrum.dim();
    let mut out = spectrum.clone();
    for u in 0..m {
        for v in 0..n {
            let r = centered_radius(u, v, m, n);
            let keep = match spec.mode {
                FilterMode::LowPass => r <= spec.cutoff,
                FilterMode::HighPass => r > spec.cutoff,
            };
            if !keep {
                out[(u, v)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    out
}

/// Display rendering of a spectrum: centering shift, then `log(1 + |F|)`
/// rescaled to `[0, 1]`. A constant spectrum renders as all zeros.
pub fn spectrum_image(spectrum: &ComplexMatrix) -> RealMatrix {
    let shifted = shift_spectrum(spectrum);
    let logmag = shifted.mapv(|z| (1.0 + z.norm()).ln());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in logmag.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        logmag.mapv(|v| (v - lo) / (hi - lo))
    } else {
        RealMatrix::zeros(logmag.dim())
    }
}

/// In-place 2-D transform by rows then columns. `sign` is the sign of the
/// exponent: -1 forward, +1 inverse (unnormalized either way).
fn transform2(data: &mut ComplexMatrix, sign: f64) {
    let (m, n) = data.dim();
    let mut buf = vec![Complex64::new(0.0, 0.0); n.max(m)];
    for x in 0..m {
        let row = &mut buf[..n];
        for y in 0..n {
            row[y] = data[(x, y)];
        }
        transform1(row, sign);
        for y in 0..n {
            data[(x, y)] = row[y];
        }
    }
    for y in 0..n {
        let col = &mut buf[..m];
        for x in 0..m {
            col[x] = data[(x, y)];
        }
        transform1(col, sign);
        for x in 0..m {
            data[(x, y)] = col[x];
        }
    }
}

fn transform1(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_pow2(buf, sign);
    } else {
        dft_direct(buf, sign);
    }
}

/// Iterative radix-2 Cooley-Tukey, decimation in time.
fn fft_pow2(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = Complex64::from_polar(1.0, sign * 2.0 * PI / len as f64);
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = buf[start + k];
                let t = buf[start + k + len / 2] * w;
                buf[start + k] = u + t;
                buf[start + k + len / 2] = u - t;
                w *= step;
            }
        }
        len <<= 1;
    }
}

/// Direct O(n^2) transform for sizes without a radix-2 decomposition.
fn dft_direct(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    let twiddle: Vec<Complex64> = (0..n)
        .map(|t| Complex64::from_polar(1.0, sign * 2.0 * PI * t as f64 / n as f64))
        .collect();
    let input = buf.to_vec();
    for (k, out) in buf.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, &v) in input.iter().enumerate() {
            acc += v * twiddle[(k * x) % n];
        }
        *out = acc;
    }
}
