//! Residual convolutional autoencoder with exact hand-rolled
//! backpropagation.
//!
//! The encoder is a chain of residual blocks; each block is
//! `y = relu(conv_b(relu(conv_a(x))) + skip(x))` with 3x3 convolutions.
//! A block that changes resolution or channel count carries a 1x1
//! projection (stride matching `conv_a`) on the skip path; otherwise the
//! skip is the identity. The decoder mirrors the encoder: a nearest
//! neighbor 2x upsample undoes each stride-2 downsample, channel counts
//! run in reverse, and a final 3x3 convolution with a logistic squashing
//! activation maps back to the input channels, so reconstructions always
//! land in `(0, 1)`.
//!
//! Convolutions run as im2col plus a matrix product in both directions,
//! which keeps the arithmetic identical between the forward pass and the
//! finite-difference checks in the test suite.

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::types::{GradientImage, Image};
use crate::{Error, Result};

/// Static model architecture: input geometry plus the per-block output
/// channels and strides of the encoder. The decoder layout and the
/// output layer are derived from it.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_strides: Vec<usize>,
}

impl ModelConfig {
    /// Standard configuration for a given square input size.
    ///
    /// Sizes divisible by 128 get the full eight-block encoder
    /// (seven stride-2 blocks, channels 32/32/64/64/128/128/256, then a
    /// stride-1 block at 256). Other power-of-two sizes get a reduced
    /// depth variant that downsamples in every block until the spatial
    /// size reaches 2, doubling channels up to a 256 cap; a 64 px input
    /// reaches a 2x2x256 bottleneck in five blocks.
    pub fn for_input_size(size: usize) -> Result<ModelConfig> {
        if size > 0 && size.is_multiple_of(128) {
            return Ok(ModelConfig {
                input_size: size,
                in_channels: 3,
                encoder_channels: vec![32, 32, 64, 64, 128, 128, 256, 256],
                encoder_strides: vec![2, 2, 2, 2, 2, 2, 2, 1],
            });
        }
        if !size.is_power_of_two() || size < 8 {
            return Err(Error::UnsupportedInputSize(size));
        }
        let n_down = size.trailing_zeros() as usize - 1;
        let encoder_channels = (0..n_down)
            .map(|i| (32usize << i.saturating_sub(1)).min(256))
            .collect();
        Ok(ModelConfig {
            input_size: size,
            in_channels: 3,
            encoder_channels,
            encoder_strides: vec![2; n_down],
        })
    }

    /// Miniature single-channel configuration used by the gradient checks:
    /// 8x8x1 input, two encoder and two decoder blocks, 4 channels.
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            input_size: 8,
            in_channels: 1,
            encoder_channels: vec![4, 4],
            encoder_strides: vec![2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "model input channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.encoder_channels.is_empty()
            || self.encoder_channels.len() != self.encoder_strides.len()
        {
            return Err(Error::InvalidArgument(
                "encoder channel and stride lists must be nonempty and equal length".into(),
            ));
        }
        let mut size = self.input_size;
        for (&ch, &stride) in self.encoder_channels.iter().zip(&self.encoder_strides) {
            if ch == 0 || !(stride == 1 || stride == 2) {
                return Err(Error::InvalidArgument(format!(
                    "bad block spec: {ch} channels, stride {stride}"
                )));
            }
            if stride == 2 {
                if !size.is_multiple_of(2) || size < 2 {
                    return Err(Error::UnsupportedInputSize(self.input_size));
                }
                size /= 2;
            }
        }
        Ok(())
    }

    /// (height, width, channels) after each encoder block.
    pub fn encoder_output_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut size = self.input_size;
        self.encoder_channels
            .iter()
            .zip(&self.encoder_strides)
            .map(|(&ch, &stride)| {
                if stride == 2 {
                    size /= 2;
                }
                (size, size, ch)
            })
            .collect()
    }

    /// Shape of the innermost representation.
    pub fn bottleneck_shape(&self) -> (usize, usize, usize) {
        *self
            .encoder_output_shapes()
            .last()
            .expect("validated config has blocks")
    }

    /// Decoder stage layout `(upsample, in_channels, out_channels)`,
    /// mirroring the encoder back to front.
    fn decoder_layout(&self) -> Vec<(bool, usize, usize)> {
        let n = self.encoder_channels.len();
        (0..n)
            .map(|i| {
                let e = n - 1 - i;
                let upsample = self.encoder_strides[e] == 2;
                let in_ch = self.encoder_channels[e];
                let out_ch = self.encoder_channels[e.saturating_sub(1)];
                (upsample, in_ch, out_ch)
            })
            .collect()
    }
}

/// One convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// (out_channels, in_channels, kernel_h, kernel_w)
    pub kernel: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    /// Fan-in-scaled zero-mean kernels (`std = gain / sqrt(fan_in)`),
    /// zero biases. The gain is per-role: without normalization layers,
    /// the residual branches and the output layer need damping or the
    /// skip accumulation saturates the logistic output at depth.
    fn init(
        rng: &mut ChaCha8Rng,
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        gain: f64,
    ) -> ConvLayer {
        let fan_in = (in_ch * k * k) as f64;
        let normal = Normal::new(0.0, gain / fan_in.sqrt()).expect("positive std");
        let kernel = Array4::from_shape_fn((out_ch, in_ch, k, k), |_| normal.sample(rng));
        ConvLayer {
            kernel,
            bias: Array1::zeros(out_ch),
            stride,
            padding,
        }
    }

    fn zeros_like(&self) -> ConvLayer {
        ConvLayer {
            kernel: Array4::zeros(self.kernel.dim()),
            bias: Array1::zeros(self.bias.dim()),
            stride: self.stride,
            padding: self.padding,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel.dim().2;
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (out_c, in_c, kh, kw) = self.kernel.dim();
        debug_assert_eq!(x.dim().0, in_c);
        let (h, w) = (x.dim().1, x.dim().2);
        let (oh, ow) = self.out_hw(h, w);
        let cols = im2col(x, kh, kw, self.stride, self.padding, oh, ow);
        let kernel_mat = self
            .kernel
            .view()
            .into_shape_with_order((out_c, in_c * kh * kw))
            .expect("kernel is contiguous");
        let mut y = kernel_mat.dot(&cols);
        for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        y.into_shape_with_order((out_c, oh, ow))
            .expect("gemm output is contiguous")
    }

    /// Gradients with respect to input, kernel, and bias, given the
    /// forward input and the upstream gradient.
    fn backward(&self, x: &Array3<f64>, dy: &Array3<f64>) -> (Array3<f64>, Array4<f64>, Array1<f64>) {
        let (out_c, in_c, kh, kw) = self.kernel.dim();
        let (h, w) = (x.dim().1, x.dim().2);
        let (_, oh, ow) = dy.dim();
        let cols = im2col(x, kh, kw, self.stride, self.padding, oh, ow);
        let dy_mat = dy
            .view()
            .into_shape_with_order((out_c, oh * ow))
            .expect("gradient is contiguous");

        let dk = dy_mat
            .dot(&cols.t())
            .into_shape_with_order((out_c, in_c, kh, kw))
            .expect("kernel gradient is contiguous");
        let db = dy_mat.sum_axis(Axis(1));

        let kernel_mat = self
            .kernel
            .view()
            .into_shape_with_order((out_c, in_c * kh * kw))
            .expect("kernel is contiguous");
        let dcols = kernel_mat.t().dot(&dy_mat);
        let dx = col2im(
            &dcols,
            (in_c, h, w),
            kh,
            kw,
            self.stride,
            self.padding,
            oh,
            ow,
        );
        (dx, dk, db)
    }
}

/// Output-column range with in-bounds source pixels for one kernel
/// column: returns `(ox_start, ox_end, ix_start)` such that
/// `ix = ox * stride + kx - padding` stays in `[0, w)` exactly for
/// `ox in ox_start..ox_end`, with `ix_start` the source index at
/// `ox_start`.
fn valid_span(ow: usize, w: usize, stride: usize, k: usize, padding: usize) -> (usize, usize, usize) {
    let start = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let end = if w + padding > k {
        ow.min((w + padding - k - 1) / stride + 1)
    } else {
        0
    };
    if start >= end {
        return (0, 0, 0);
    }
    (start, end, start * stride + k - padding)
}

/// Patch matrix: rows index (channel, ky, kx), columns index output pixels.
fn im2col(
    x: &Array3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (in_c, h, w) = x.dim();
    let xs = x.as_slice().expect("activation tensors are contiguous");
    let mut cols = Array2::zeros((in_c * kh * kw, oh * ow));
    let cs = cols.as_slice_mut().expect("freshly allocated");
    let spans: Vec<(usize, usize, usize)> = (0..kw)
        .map(|kx| valid_span(ow, w, stride, kx, padding))
        .collect();
    for c in 0..in_c {
        let x_plane = &xs[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for (kx, &(o0, o1, i0)) in spans.iter().enumerate() {
                let row = (c * kh + ky) * kw + kx;
                let out_row = &mut cs[row * oh * ow..(row + 1) * oh * ow];
                if o0 >= o1 {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x_plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut out_row[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        dst[o0..o1].copy_from_slice(&src[i0..i0 + (o1 - o0)]);
                    } else {
                        for (d, s) in dst[o0..o1]
                            .iter_mut()
                            .zip(src[i0..].iter().step_by(stride))
                        {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back into the input.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &Array2<f64>,
    x_dim: (usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array3<f64> {
    let (in_c, h, w) = x_dim;
    let mut dx = Array3::zeros(x_dim);
    let dxs = dx.as_slice_mut().expect("freshly allocated");
    let dcs = dcols.as_slice().expect("gemm output is contiguous");
    for c in 0..in_c {
        let dx_plane = &mut dxs[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let in_row = &dcs[row * oh * ow..(row + 1) * oh * ow];
                let (o0, o1, i0) = valid_span(ow, w, stride, kx, padding);
                if o0 >= o1 {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut dx_plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &in_row[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        for (d, s) in dst[i0..i0 + (o1 - o0)].iter_mut().zip(&src[o0..o1]) {
                            *d += *s;
                        }
                    } else {
                        for (d, s) in dst[i0..]
                            .iter_mut()
                            .step_by(stride)
                            .zip(&src[o0..o1])
                        {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Upstream gradient gated by the stored post-activation values.
fn relu_backward(dy: &Array3<f64>, activated: &Array3<f64>) -> Array3<f64> {
    let mut out = dy.clone();
    out.zip_mut_with(activated, |d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
    out
}

fn upsample_nearest2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, h * 2, w * 2));
    let xs = x.as_slice().expect("activation tensors are contiguous");
    let os = out.as_slice_mut().expect("freshly allocated");
    for ci in 0..c {
        for y in 0..h {
            let src = &xs[(ci * h + y) * w..][..w];
            for rep in 0..2 {
                let dst = &mut os[((ci * h + y) * 2 + rep) * 2 * w..][..2 * w];
                for (i, &v) in src.iter().enumerate() {
                    dst[2 * i] = v;
                    dst[2 * i + 1] = v;
                }
            }
        }
    }
    out
}

fn upsample_nearest2_backward(dy: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array3::zeros((c, h, w));
    let ds = dy.as_slice().expect("gradient tensors are contiguous");
    let os = dx.as_slice_mut().expect("freshly allocated");
    for ci in 0..c {
        for y in 0..h {
            let dst = &mut os[(ci * h + y) * w..][..w];
            for rep in 0..2 {
                let src = &ds[((ci * h + y) * 2 + rep) * w2..][..w2];
                for (i, d) in dst.iter_mut().enumerate() {
                    *d += src[2 * i] + src[2 * i + 1];
                }
            }
        }
    }
    dx
}

fn sigmoid(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Residual block: two 3x3 convolutions with an optional 1x1 projection
/// on the skip path. Without a projection the block preserves shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv_a: ConvLayer,
    pub conv_b: ConvLayer,
    pub projection: Option<ConvLayer>,
}

/// ReLU-feeding convolutions keep the He gain; the residual-branch tail
/// and the logistic output layer start small so a deep unnormalized
/// stack neither saturates nor explodes at initialization.
const GAIN_RELU: f64 = std::f64::consts::SQRT_2;
const GAIN_RESIDUAL_TAIL: f64 = 0.25;
const GAIN_PROJECTION: f64 = 1.0;
const GAIN_OUTPUT: f64 = 0.25;

impl ResidualBlock {
    fn init(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, stride: usize) -> ResidualBlock {
        let conv_a = ConvLayer::init(rng, out_ch, in_ch, 3, stride, 1, GAIN_RELU);
        let conv_b = ConvLayer::init(rng, out_ch, out_ch, 3, 1, 1, GAIN_RESIDUAL_TAIL);
        let projection = if stride != 1 || in_ch != out_ch {
            Some(ConvLayer::init(rng, out_ch, in_ch, 1, stride, 0, GAIN_PROJECTION))
        } else {
            None
        };
        ResidualBlock {
            conv_a,
            conv_b,
            projection,
        }
    }

    fn zeros_like(&self) -> ResidualBlock {
        ResidualBlock {
            conv_a: self.conv_a.zeros_like(),
            conv_b: self.conv_b.zeros_like(),
            projection: self.projection.as_ref().map(ConvLayer::zeros_like),
        }
    }

    fn forward(&self, x: Array3<f64>) -> (Array3<f64>, BlockCache) {
        let mid = relu(&self.conv_a.forward(&x));
        let main = self.conv_b.forward(&mid);
        let skip = match &self.projection {
            Some(proj) => proj.forward(&x),
            None => x.clone(),
        };
        let output = relu(&(main + skip));
        (
            output.clone(),
            BlockCache {
                input: x,
                mid,
                output,
            },
        )
    }

    /// Returns the gradient with respect to the block input plus this
    /// block's parameter gradients.
    fn backward(&self, cache: &BlockCache, dy: &Array3<f64>) -> (Array3<f64>, ResidualBlock) {
        let d_sum = relu_backward(dy, &cache.output);
        let (d_mid_raw, dk_b, db_b) = self.conv_b.backward(&cache.mid, &d_sum);
        let d_mid = relu_backward(&d_mid_raw, &cache.mid);
        let (dx_main, dk_a, db_a) = self.conv_a.backward(&cache.input, &d_mid);
        let (dx, proj_grad) = match &self.projection {
            Some(proj) => {
                let (dx_skip, dk_p, db_p) = proj.backward(&cache.input, &d_sum);
                (
                    dx_main + dx_skip,
                    Some(ConvLayer {
                        kernel: dk_p,
                        bias: db_p,
                        stride: proj.stride,
                        padding: proj.padding,
                    }),
                )
            }
            None => (dx_main + &d_sum, None),
        };
        let grads = ResidualBlock {
            conv_a: ConvLayer {
                kernel: dk_a,
                bias: db_a,
                stride: self.conv_a.stride,
                padding: self.conv_a.padding,
            },
            conv_b: ConvLayer {
                kernel: dk_b,
                bias: db_b,
                stride: self.conv_b.stride,
                padding: self.conv_b.padding,
            },
            projection: proj_grad,
        };
        (dx, grads)
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array3<f64>,
    /// post-activation output of `conv_a`
    mid: Array3<f64>,
    /// post-activation block output
    output: Array3<f64>,
}

/// One decoder stage: optional 2x nearest-neighbor upsample, then a block.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStage {
    pub upsample: bool,
    pub block: ResidualBlock,
}

/// All parameters of the autoencoder. Doubles as the container for
/// parameter *gradients*, which mirror the parameter structure exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub config: ModelConfig,
    pub encoder: Vec<ResidualBlock>,
    pub decoder: Vec<DecoderStage>,
    pub output_layer: ConvLayer,
}

/// Per-layer activations retained by [`AutoencoderParams::forward`] for
/// the matching [`AutoencoderParams::backward`] call.
pub struct ForwardCache {
    images: Vec<ImageCache>,
}

struct ImageCache {
    encoder: Vec<BlockCache>,
    decoder: Vec<BlockCache>,
    /// logistic output of the final layer (= the reconstruction, CHW)
    reconstruction: Array3<f64>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// (height, width, channels) produced by each encoder block for the
    /// given image; used to check the architecture against its contract.
    pub fn encoder_shapes(&self, image_index: usize) -> Vec<(usize, usize, usize)> {
        self.images[image_index]
            .encoder
            .iter()
            .map(|b| {
                let (c, h, w) = b.output.dim();
                (h, w, c)
            })
            .collect()
    }
}

impl AutoencoderParams {
    /// Deterministic initialization: kernels are zero-mean normal with
    /// fan-in scaling, biases zero. The same seed always produces
    /// bit-identical parameters.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<AutoencoderParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::with_capacity(config.encoder_channels.len());
        let mut in_ch = config.in_channels;
        for (&out_ch, &stride) in config.encoder_channels.iter().zip(&config.encoder_strides) {
            encoder.push(ResidualBlock::init(&mut rng, in_ch, out_ch, stride));
            in_ch = out_ch;
        }
        let decoder = config
            .decoder_layout()
            .into_iter()
            .map(|(upsample, in_ch, out_ch)| DecoderStage {
                upsample,
                block: ResidualBlock::init(&mut rng, in_ch, out_ch, 1),
            })
            .collect();
        let output_layer = ConvLayer::init(
            &mut rng,
            config.in_channels,
            config.encoder_channels[0],
            3,
            1,
            1,
            GAIN_OUTPUT,
        );
        Ok(AutoencoderParams {
            config: config.clone(),
            encoder,
            decoder,
            output_layer,
        })
    }

    /// Standard model for a square input size (see
    /// [`ModelConfig::for_input_size`]).
    pub fn init_for_size(seed: u64, input_size: usize) -> Result<AutoencoderParams> {
        AutoencoderParams::init(&ModelConfig::for_input_size(input_size)?, seed)
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let ok = image.channels() == self.config.in_channels
            && image.height() == self.config.input_size
            && image.width() == self.config.input_size;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                format!(
                    "{}x{}x{}",
                    self.config.input_size, self.config.input_size, self.config.in_channels
                ),
                image.shape_string(),
            ))
        }
    }

    fn forward_single(&self, image: &Image) -> (Image, ImageCache) {
        let mut x = image.to_chw();
        let mut encoder_caches = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let (y, cache) = block.forward(x);
            encoder_caches.push(cache);
            x = y;
        }
        let mut decoder_caches = Vec::with_capacity(self.decoder.len());
        for stage in &self.decoder {
            if stage.upsample {
                x = upsample_nearest2(&x);
            }
            let (y, cache) = stage.block.forward(x);
            decoder_caches.push(cache);
            x = y;
        }
        let z = self.output_layer.forward(&x);
        let reconstruction = sigmoid(&z);
        let image_out = Image::from_chw(&reconstruction).expect("reconstruction shape is valid");
        (
            image_out,
            ImageCache {
                encoder: encoder_caches,
                decoder: decoder_caches,
                reconstruction,
            },
        )
    }

    /// Forward pass over a batch, retaining activations for [`Self::backward`].
    pub fn forward(&self, batch: &[Image]) -> Result<(Vec<Image>, ForwardCache)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for image in batch {
            self.check_input(image)?;
        }
        let results: Vec<(Image, ImageCache)> = batch
            .par_iter()
            .map(|image| self.forward_single(image))
            .collect();
        let mut reconstructions = Vec::with_capacity(results.len());
        let mut caches = Vec::with_capacity(results.len());
        for (recon, cache) in results {
            reconstructions.push(recon);
            caches.push(cache);
        }
        Ok((reconstructions, ForwardCache { images: caches }))
    }

    /// Single-image forward without cache retention.
    pub fn reconstruct(&self, image: &Image) -> Result<Image> {
        self.check_input(image)?;
        Ok(self.forward_single(image).0)
    }

    fn backward_single(&self, cache: &ImageCache, upstream: &GradientImage) -> AutoencoderParams {
        let mut grads = self.zeros_like();
        // logistic output layer: dz = dy * s * (1 - s)
        let mut dz = upstream.to_chw();
        dz.zip_mut_with(&cache.reconstruction, |d, &s| *d *= s * (1.0 - s));
        let last_input = cache
            .decoder
            .last()
            .map(|c| &c.output)
            .expect("decoder has at least one stage");
        let (mut dx, dk_out, db_out) = self.output_layer.backward(last_input, &dz);
        grads.output_layer.kernel = dk_out;
        grads.output_layer.bias = db_out;

        for (stage_idx, stage) in self.decoder.iter().enumerate().rev() {
            let (dx_block, block_grads) = stage
                .block
                .backward(&cache.decoder[stage_idx], &dx);
            grads.decoder[stage_idx].block = block_grads;
            dx = if stage.upsample {
                upsample_nearest2_backward(&dx_block)
            } else {
                dx_block
            };
        }
        for (block_idx, block) in self.encoder.iter().enumerate().rev() {
            let (dx_block, block_grads) = block.backward(&cache.encoder[block_idx], &dx);
            grads.encoder[block_idx] = block_grads;
            dx = dx_block;
        }
        grads
    }

    /// Exact reverse-mode gradients of every parameter, given the cache of
    /// the matching forward call and the per-image loss gradients.
    /// Contributions are summed over the batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[GradientImage],
    ) -> Result<AutoencoderParams> {
        if cache.images.len() != upstream.len() {
            return Err(Error::shape(
                format!("{} cached images", cache.images.len()),
                format!("{} gradients", upstream.len()),
            ));
        }
        for (img_cache, grad) in cache.images.iter().zip(upstream) {
            let (c, h, w) = img_cache.reconstruction.dim();
            let g = grad.to_chw();
            if g.dim() != (c, h, w) {
                return Err(Error::shape(
                    format!("{h}x{w}x{c}"),
                    format!("{}x{}x{}", g.dim().1, g.dim().2, g.dim().0),
                ));
            }
        }
        let per_image: Vec<AutoencoderParams> = cache
            .images
            .par_iter()
            .zip(upstream.par_iter())
            .map(|(img_cache, grad)| self.backward_single(img_cache, grad))
            .collect();
        // Sum sequentially in batch order so accumulation is bit-reproducible.
        let mut total = self.zeros_like();
        for grads in &per_image {
            total.accumulate(grads);
        }
        Ok(total)
    }

    /// Same structure with all tensors zeroed; the additive identity for
    /// gradient accumulation.
    pub fn zeros_like(&self) -> AutoencoderParams {
        AutoencoderParams {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(ResidualBlock::zeros_like).collect(),
            decoder: self
                .decoder
                .iter()
                .map(|s| DecoderStage {
                    upsample: s.upsample,
                    block: s.block.zeros_like(),
                })
                .collect(),
            output_layer: self.output_layer.zeros_like(),
        }
    }

    /// Element-wise add another parameter set (used for gradient sums).
    pub fn accumulate(&mut self, other: &AutoencoderParams) {
        let acc = |a: &mut ConvLayer, b: &ConvLayer| {
            a.kernel.zip_mut_with(&b.kernel, |x, &y| *x += y);
            a.bias.zip_mut_with(&b.bias, |x, &y| *x += y);
        };
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            acc(&mut a.conv_a, &b.conv_a);
            acc(&mut a.conv_b, &b.conv_b);
            if let (Some(pa), Some(pb)) = (a.projection.as_mut(), b.projection.as_ref()) {
                acc(pa, pb);
            }
        }
        for (a, b) in self.decoder.iter_mut().zip(&other.decoder) {
            acc(&mut a.block.conv_a, &b.block.conv_a);
            acc(&mut a.block.conv_b, &b.block.conv_b);
            if let (Some(pa), Some(pb)) =
                (a.block.projection.as_mut(), b.block.projection.as_ref())
            {
                acc(pa, pb);
            }
        }
        acc(&mut self.output_layer, &other.output_layer);
    }

    /// Visit every parameter tensor in the documented checkpoint order:
    /// encoder blocks front to back, then decoder stages, then the output
    /// layer; within a block `conv_a` kernel/bias, `conv_b` kernel/bias,
    /// projection kernel/bias when present.
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a ConvLayer)) {
        for block in &self.encoder {
            f(&block.conv_a);
            f(&block.conv_b);
            if let Some(p) = &block.projection {
                f(p);
            }
        }
        for stage in &self.decoder {
            f(&stage.block.conv_a);
            f(&stage.block.conv_b);
            if let Some(p) = &stage.block.projection {
                f(p);
            }
        }
        f(&self.output_layer);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut ConvLayer)) {
        for block in &mut self.encoder {
            f(&mut block.conv_a);
            f(&mut block.conv_b);
            if let Some(p) = &mut block.projection {
                f(p);
            }
        }
        for stage in &mut self.decoder {
            f(&mut stage.block.conv_a);
            f(&mut stage.block.conv_b);
            if let Some(p) = &mut stage.block.projection {
                f(p);
            }
        }
        f(&mut self.output_layer);
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |layer| {
            count += layer.kernel.len() + layer.bias.len();
        });
        count
    }

    /// All parameters as one flat vector, in the documented order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |layer| {
            out.extend(layer.kernel.iter());
            out.extend(layer.bias.iter());
        });
        out
    }

    /// Overwrite all parameters from a flat vector (inverse of
    /// [`Self::flatten`]).
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(
                format!("{} parameters", self.param_count()),
                format!("{} values", flat.len()),
            ));
        }
        let mut offset = 0;
        self.visit_mut(&mut |layer| {
            for v in layer.kernel.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
            for v in layer.bias.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RealMatrix;
    use rand::Rng;

    fn random_input(config: &ModelConfig, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = config.input_size;
        let planes = (0..config.in_channels)
            .map(|_| RealMatrix::from_shape_fn((s, s), |_| rng.random::<f64>()))
            .collect();
        Image::new(planes).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let config = ModelConfig::tiny();
        let a = AutoencoderParams::init(&config, 0).unwrap();
        let b = AutoencoderParams::init(&config, 0).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = AutoencoderParams::init(&config, 1).unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn full_config_matches_published_ladder() {
        let config = ModelConfig::for_input_size(256).unwrap();
        assert_eq!(
            config.encoder_output_shapes(),
            vec![
                (128, 128, 32),
                (64, 64, 32),
                (32, 32, 64),
                (16, 16, 64),
                (8, 8, 128),
                (4, 4, 128),
                (2, 2, 256),
                (2, 2, 256),
            ]
        );
        assert_eq!(config.bottleneck_shape(), (2, 2, 256));
    }

    #[test]
    fn desk_config_downsamples_in_five_blocks_to_256() {
        let config = ModelConfig::for_input_size(64).unwrap();
        assert_eq!(config.encoder_strides, vec![2, 2, 2, 2, 2]);
        assert_eq!(config.encoder_channels, vec![32, 32, 64, 128, 256]);
        assert_eq!(config.bottleneck_shape(), (2, 2, 256));
    }

    #[test]
    fn tiny_config_bottleneck() {
        assert_eq!(ModelConfig::tiny().bottleneck_shape(), (2, 2, 4));
    }

    #[test]
    fn unsupported_sizes_are_rejected() {
        assert!(ModelConfig::for_input_size(100).is_err());
        assert!(ModelConfig::for_input_size(4).is_err());
        assert!(AutoencoderParams::init_for_size(0, 100).is_err());
    }

    #[test]
    fn forward_preserves_shape_and_range() {
        let config = ModelConfig::for_input_size(16).unwrap();
        let params = AutoencoderParams::init(&config, 3).unwrap();
        let input = random_input(&config, 5);
        let (recons, cache) = params.forward(std::slice::from_ref(&input)).unwrap();
        assert_eq!(recons.len(), 1);
        assert!(input.same_shape(&recons[0]));
        assert!(recons[0]
            .planes()
            .iter()
            .flat_map(|p| p.iter())
            .all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn forward_is_pure() {
        let config = ModelConfig::tiny();
        let params = AutoencoderParams::init(&config, 7).unwrap();
        let input = random_input(&config, 9);
        let a = params.reconstruct(&input).unwrap();
        let b = params.reconstruct(&input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reconstruct_equals_forward_head() {
        let config = ModelConfig::tiny();
        let params = AutoencoderParams::init(&config, 11).unwrap();
        let input = random_input(&config, 13);
        let (recons, _) = params.forward(std::slice::from_ref(&input)).unwrap();
        assert_eq!(params.reconstruct(&input).unwrap(), recons[0]);
    }

    #[test]
    fn encoder_shape_ladder_from_actual_forward() {
        let config = ModelConfig::for_input_size(64).unwrap();
        let params = AutoencoderParams::init(&config, 1).unwrap();
        let input = random_input(&config, 2);
        let (_, cache) = params.forward(std::slice::from_ref(&input)).unwrap();
        assert_eq!(cache.encoder_shapes(0), config.encoder_output_shapes());
    }

    #[test]
    fn block_without_projection_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let block = ResidualBlock::init(&mut rng, 4, 4, 1);
        assert!(block.projection.is_none());
        let x = Array3::from_shape_fn((4, 6, 6), |_| rng.random::<f64>());
        let (y, _) = block.forward(x.clone());
        assert_eq!(y.dim(), x.dim());
    }

    #[test]
    fn zero_upstream_gives_zero_grads_and_doubling_doubles() {
        let config = ModelConfig::tiny();
        let params = AutoencoderParams::init(&config, 17).unwrap();
        let input = random_input(&config, 19);
        let (recons, cache) = params.forward(std::slice::from_ref(&input)).unwrap();

        let zero = GradientImage::zeros_like(&recons[0]);
        let grads = params.backward(&cache, &[zero]).unwrap();
        assert!(grads.flatten().iter().all(|&g| g == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g_planes: Vec<RealMatrix> = (0..recons[0].channels())
            .map(|_| {
                RealMatrix::from_shape_fn((recons[0].height(), recons[0].width()), |_| {
                    rng.random::<f64>() - 0.5
                })
            })
            .collect();
        let g1 = GradientImage::new(g_planes.clone()).unwrap();
        let g2 = GradientImage::new(g_planes.iter().map(|p| p * 2.0).collect()).unwrap();
        let grads1 = params.backward(&cache, &[g1]).unwrap().flatten();
        let grads2 = params.backward(&cache, &[g2]).unwrap().flatten();
        for (a, b) in grads1.iter().zip(&grads2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn flat_round_trip() {
        let config = ModelConfig::tiny();
        let params = AutoencoderParams::init(&config, 29).unwrap();
        let flat = params.flatten();
        assert_eq!(flat.len(), params.param_count());
        let mut other = AutoencoderParams::init(&config, 31).unwrap();
        other.load_flat(&flat).unwrap();
        assert_eq!(other.flatten(), flat);
        assert_eq!(other, params);
        assert!(other.load_flat(&flat[1..]).is_err());
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let params = AutoencoderParams::init(&ModelConfig::tiny(), 1).unwrap();
        let config16 = ModelConfig {
            input_size: 16,
            ..ModelConfig::tiny()
        };
        let wrong = random_input(&config16, 1);
        assert!(params.reconstruct(&wrong).is_err());
        assert!(params.forward(&[]).is_err());
    }

    /// Finite-difference spot check on a random subset of parameters; the
    /// exhaustive sweep lives in the acceptance suite.
    #[test]
    fn backward_matches_finite_differences_spot() {
        let config = ModelConfig::tiny();
        let params = AutoencoderParams::init(&config, 37).unwrap();
        let input = random_input(&config, 41);
        let loss_cfg = crate::loss::LossConfig::default();

        let loss_of = |p: &AutoencoderParams| -> f64 {
            let recon = p.reconstruct(&input).unwrap();
            crate::loss::loss_value(&input, &recon, &loss_cfg).unwrap()
        };

        let (recons, cache) = params.forward(std::slice::from_ref(&input)).unwrap();
        let upstream = crate::loss::loss_and_gradient(&input, &recons[0], &loss_cfg)
            .unwrap()
            .1;
        let analytic = params.backward(&cache, &[upstream]).unwrap().flatten();

        let flat = params.flatten();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let h = 1e-5;
        let max_analytic = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for _ in 0..24 {
            let idx = rng.random_range(0..flat.len());
            let mut probe = params.clone();
            let mut values = flat.clone();
            values[idx] = flat[idx] + h;
            probe.load_flat(&values).unwrap();
            let plus = loss_of(&probe);
            values[idx] = flat[idx] - h;
            probe.load_flat(&values).unwrap();
            let minus = loss_of(&probe);
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic[idx] - numeric).abs() / max_analytic.max(1e-12);
            assert!(
                err < 1e-3,
                "param {idx}: analytic {} vs numeric {numeric} (rel {err})",
                analytic[idx]
            );
        }
    }
}
