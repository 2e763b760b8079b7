//! Python bindings: the spectral operations, the reconstruction losses,
//! anomaly scoring, and the autoencoder itself.
//!
//! Matrices cross the boundary as nested lists (`list[list[float]]`),
//! complex matrices as `(re, im)` pairs of such lists, and images as one
//! plane per channel (`list[list[list[float]]]`). Build and import:
//!
//! ```text
//! cargo build -p wfdl-py --release
//! python python/smoke_test.py
//! ```

use ndarray::Array2;
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use wfdl::loss::{LossConfig, LossKind};
use wfdl::model::AutoencoderParams;
use wfdl::scoring::{self, ScoredSample};
use wfdl::spectral::{self, FilterSpec};
use wfdl::types::{ComplexMatrix, Image, Label, RealMatrix};

type Plane = Vec<Vec<f64>>;
type Planes = Vec<Plane>;

fn err_to_py(err: wfdl::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn to_matrix(data: &Plane) -> PyResult<RealMatrix> {
    if data.is_empty() || data[0].is_empty() {
        return Err(PyValueError::new_err("matrix must be nonempty"));
    }
    let cols = data[0].len();
    if data.iter().any(|row| row.len() != cols) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(Array2::from_shape_fn((data.len(), cols), |(i, j)| {
        data[i][j]
    }))
}

fn from_matrix(m: &RealMatrix) -> Plane {
    m.rows().into_iter().map(|row| row.to_vec()).collect()
}

fn to_complex(re: &Plane, im: &Plane) -> PyResult<ComplexMatrix> {
    let re = to_matrix(re)?;
    let im = to_matrix(im)?;
    if re.dim() != im.dim() {
        return Err(PyValueError::new_err(
            "real and imaginary parts must have equal shape",
        ));
    }
    Ok(ComplexMatrix::from_shape_fn(re.dim(), |idx| {
        Complex64::new(re[idx], im[idx])
    }))
}

fn from_complex(m: &ComplexMatrix) -> (Plane, Plane) {
    (
        from_matrix(&m.mapv(|z| z.re)),
        from_matrix(&m.mapv(|z| z.im)),
    )
}

fn to_image(planes: &Planes) -> PyResult<Image> {
    let planes = planes
        .iter()
        .map(to_matrix)
        .collect::<PyResult<Vec<RealMatrix>>>()?;
    Image::new(planes).map_err(err_to_py)
}

fn from_image(img: &Image) -> Planes {
    img.planes().iter().map(from_matrix).collect()
}

fn parse_weight_mode(mode: &str) -> PyResult<spectral::WeightMode> {
    mode.parse().map_err(err_to_py)
}

fn loss_config(weight_mode: &str) -> PyResult<LossConfig> {
    Ok(LossConfig {
        kind: LossKind::Wfdl,
        weight_mode: parse_weight_mode(weight_mode)?,
    })
}

/// Forward 2-D DFT of a real plane; returns (re, im).
#[pyfunction]
fn dft2(plane: Plane) -> PyResult<(Plane, Plane)> {
    Ok(from_complex(&spectral::dft2(&to_matrix(&plane)?)))
}

/// Inverse 2-D DFT (with the 1/MN factor), real part.
#[pyfunction]
fn idft2(re: Plane, im: Plane) -> PyResult<Plane> {
    Ok(from_matrix(&spectral::idft2(&to_complex(&re, &im)?)))
}

/// Per-bin complex magnitude.
#[pyfunction]
fn magnitude(re: Plane, im: Plane) -> PyResult<Plane> {
    Ok(from_matrix(&spectral::magnitude(&to_complex(&re, &im)?)))
}

/// Frequency weight matrix; mode is "centered", "raw", or "none".
#[pyfunction]
fn weight_matrix(rows: usize, cols: usize, mode: &str) -> PyResult<Plane> {
    if rows == 0 || cols == 0 {
        return Err(PyValueError::new_err("matrix must be nonempty"));
    }
    Ok(from_matrix(&spectral::weight_matrix(
        rows,
        cols,
        parse_weight_mode(mode)?,
    )))
}

/// Quadrant swap placing DC at the center.
#[pyfunction]
fn shift_spectrum(re: Plane, im: Plane) -> PyResult<(Plane, Plane)> {
    Ok(from_complex(&spectral::shift_spectrum(&to_complex(
        &re, &im,
    )?)))
}

/// Zero bins by centered radial frequency; mode is "low" or "high".
#[pyfunction]
fn radial_filter(re: Plane, im: Plane, mode: &str, cutoff: f64) -> PyResult<(Plane, Plane)> {
    let spec = FilterSpec::new(mode.parse().map_err(err_to_py)?, cutoff).map_err(err_to_py)?;
    Ok(from_complex(&spectral::radial_filter(
        &to_complex(&re, &im)?,
        &spec,
    )))
}

/// Display rendering of a spectrum: shifted log magnitude in [0, 1].
#[pyfunction]
fn spectrum_image(re: Plane, im: Plane) -> PyResult<Plane> {
    Ok(from_matrix(&spectral::spectrum_image(&to_complex(
        &re, &im,
    )?)))
}

/// Spatial MSE (summed over pixels, averaged over channels).
#[pyfunction]
fn mse_loss(f: Planes, f_hat: Planes) -> PyResult<f64> {
    wfdl::loss::mse_loss(&to_image(&f)?, &to_image(&f_hat)?).map_err(err_to_py)
}

/// Mean complex distance between two spectra.
#[pyfunction]
fn frequency_distance(
    f_re: Plane,
    f_im: Plane,
    g_re: Plane,
    g_im: Plane,
) -> PyResult<f64> {
    wfdl::loss::frequency_distance(&to_complex(&f_re, &f_im)?, &to_complex(&g_re, &g_im)?)
        .map_err(err_to_py)
}

/// Frequency-weighted reconstruction loss.
#[pyfunction]
#[pyo3(signature = (f, f_hat, weight_mode = "centered"))]
fn wfdl_loss(f: Planes, f_hat: Planes, weight_mode: &str) -> PyResult<f64> {
    wfdl::loss::wfdl_loss(&to_image(&f)?, &to_image(&f_hat)?, &loss_config(weight_mode)?)
        .map_err(err_to_py)
}

/// Analytic gradient of the weighted loss with respect to the
/// reconstruction.
#[pyfunction]
#[pyo3(signature = (f, f_hat, weight_mode = "centered"))]
fn wfdl_gradient(f: Planes, f_hat: Planes, weight_mode: &str) -> PyResult<Planes> {
    let grad = wfdl::loss::wfdl_gradient(
        &to_image(&f)?,
        &to_image(&f_hat)?,
        &loss_config(weight_mode)?,
    )
    .map_err(err_to_py)?;
    Ok(grad.planes().iter().map(from_matrix).collect())
}

/// Squared reconstruction error summed over pixels and channels.
#[pyfunction]
fn anomaly_score(f: Planes, f_hat: Planes) -> PyResult<f64> {
    scoring::anomaly_score(&to_image(&f)?, &to_image(&f_hat)?).map_err(err_to_py)
}

/// Per-pixel squared difference averaged over channels.
#[pyfunction]
fn residual_map(f: Planes, f_hat: Planes) -> PyResult<Plane> {
    Ok(from_matrix(
        &scoring::residual_map(&to_image(&f)?, &to_image(&f_hat)?).map_err(err_to_py)?,
    ))
}

/// AUROC with half-credit ties; `anomalous[i]` labels `scores[i]`.
#[pyfunction]
fn auroc(scores: Vec<f64>, anomalous: Vec<bool>) -> PyResult<f64> {
    if scores.len() != anomalous.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    let samples: Vec<ScoredSample> = scores
        .into_iter()
        .zip(anomalous)
        .enumerate()
        .map(|(i, (score, is_anomalous))| ScoredSample {
            identifier: format!("sample-{i}"),
            score,
            label: if is_anomalous {
                Label::Anomalous
            } else {
                Label::Normal
            },
        })
        .collect();
    scoring::auroc(&samples).map_err(err_to_py)
}

/// The residual convolutional autoencoder.
#[pyclass]
struct Autoencoder {
    params: AutoencoderParams,
}

#[pymethods]
impl Autoencoder {
    /// Fresh model for a square input size, deterministically initialized
    /// from the seed.
    #[new]
    fn new(seed: u64, input_size: usize) -> PyResult<Self> {
        Ok(Autoencoder {
            params: AutoencoderParams::init_for_size(seed, input_size).map_err(err_to_py)?,
        })
    }

    fn input_size(&self) -> usize {
        self.params.config.input_size
    }

    fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// (height, width, channels) of the innermost representation.
    fn bottleneck_shape(&self) -> (usize, usize, usize) {
        self.params.config.bottleneck_shape()
    }

    /// Reconstruct one image (one plane per channel, values in [0, 1]).
    fn reconstruct(&self, image: Planes) -> PyResult<Planes> {
        let out = self.params.reconstruct(&to_image(&image)?).map_err(err_to_py)?;
        Ok(from_image(&out))
    }

    /// Write a checkpoint file.
    fn save(&self, path: &str) -> PyResult<()> {
        wfdl::checkpoint::Checkpoint::new(
            &self.params,
            LossConfig::default(),
            wfdl::optim::RAdamHyper::default(),
            0,
            None,
        )
        .save(std::path::Path::new(path))
        .map_err(err_to_py)
    }

    /// Load a model from a checkpoint file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt =
            wfdl::checkpoint::Checkpoint::load(std::path::Path::new(path)).map_err(err_to_py)?;
        Ok(Autoencoder {
            params: ckpt.to_model().map_err(err_to_py)?,
        })
    }
}

#[pymodule]
fn wfdl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dft2, m)?)?;
    m.add_function(wrap_pyfunction!(idft2, m)?)?;
    m.add_function(wrap_pyfunction!(magnitude, m)?)?;
    m.add_function(wrap_pyfunction!(weight_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(shift_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(radial_filter, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum_image, m)?)?;
    m.add_function(wrap_pyfunction!(mse_loss, m)?)?;
    m.add_function(wrap_pyfunction!(frequency_distance, m)?)?;
    m.add_function(wrap_pyfunction!(wfdl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(wfdl_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(anomaly_score, m)?)?;
    m.add_function(wrap_pyfunction!(residual_map, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_class::<Autoencoder>()?;
    Ok(())
}
