//! The five convolution operator families and their gradients.
//!
//! All operators compute cross-correlation (no kernel flip) over zero-padded
//! inputs, with no bias terms. Forward paths lower onto im2col + GEMM where
//! the structure allows; [`reference::reference_direct`] is the independent
//! nested-loop ground truth used by the verification suites.

mod backward;
mod forward;
mod io;
mod reference;

pub use backward::backward;
pub use forward::{
    forward, forward_depthwise_separable, forward_dual, forward_dual_branches, forward_group,
    forward_het, forward_pointwise, forward_standard,
};
pub use io::{load_filter_bank, read_filter_bank, save_filter_bank, write_filter_bank};
pub use reference::{reference_direct, reference_direct_counted};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Element;
use crate::tensor::{conv_out_extent, Shape4, Tensor};

/// Operator family of one convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvKind {
    Standard,
    DepthwiseSeparable,
    Group,
    Het,
    Dual,
}

impl ConvKind {
    pub fn tag(self) -> u64 {
        match self {
            ConvKind::Standard => 0,
            ConvKind::DepthwiseSeparable => 1,
            ConvKind::Group => 2,
            ConvKind::Het => 3,
            ConvKind::Dual => 4,
        }
    }

    pub fn from_tag(tag: u64) -> Result<Self> {
        Ok(match tag {
            0 => ConvKind::Standard,
            1 => ConvKind::DepthwiseSeparable,
            2 => ConvKind::Group,
            3 => ConvKind::Het,
            4 => ConvKind::Dual,
            t => return Err(Error::Format(format!("unknown conv kind tag {t}"))),
        })
    }

    pub fn token(self) -> &'static str {
        match self {
            ConvKind::Standard => "std",
            ConvKind::DepthwiseSeparable => "dsc",
            ConvKind::Group => "group",
            ConvKind::Het => "het",
            ConvKind::Dual => "dual",
        }
    }
}

/// Full static description of one convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kind: ConvKind,
    /// Input channel count (M).
    pub in_channels: usize,
    /// Output channel / filter count (N).
    pub out_channels: usize,
    /// Kernel extent (K); kernels are K x K.
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Group count (G); meaningful for Group and Dual, 1 otherwise.
    pub groups: usize,
    /// Part ratio (P); meaningful for Het, 1 otherwise.
    pub part: usize,
}

impl ConvSpec {
    pub fn standard(m: usize, n: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::new(ConvKind::Standard, m, n, k, stride, padding, 1, 1)
    }

    pub fn group(m: usize, n: usize, k: usize, stride: usize, padding: usize, g: usize) -> Result<Self> {
        Self::new(ConvKind::Group, m, n, k, stride, padding, g, 1)
    }

    pub fn dual(m: usize, n: usize, k: usize, stride: usize, padding: usize, g: usize) -> Result<Self> {
        Self::new(ConvKind::Dual, m, n, k, stride, padding, g, 1)
    }

    pub fn het(m: usize, n: usize, k: usize, stride: usize, padding: usize, p: usize) -> Result<Self> {
        Self::new(ConvKind::Het, m, n, k, stride, padding, 1, p)
    }

    pub fn depthwise_separable(
        m: usize,
        n: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Self::new(ConvKind::DepthwiseSeparable, m, n, k, stride, padding, 1, 1)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: ConvKind,
        m: usize,
        n: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        part: usize,
    ) -> Result<Self> {
        let spec = ConvSpec {
            kind,
            in_channels: m,
            out_channels: n,
            kernel: k,
            stride,
            padding,
            groups,
            part,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Spec(format!("extents must be >= 1 in {self:?}")));
        }
        if self.groups == 0 || self.part == 0 {
            return Err(Error::Spec("group count and part ratio must be >= 1".into()));
        }
        match self.kind {
            ConvKind::Group | ConvKind::Dual => {
                if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
                    return Err(Error::Spec(format!(
                        "G={} must divide both M={} and N={}",
                        self.groups, self.in_channels, self.out_channels
                    )));
                }
            }
            ConvKind::Het => {
                if self.in_channels % self.part != 0 {
                    return Err(Error::Spec(format!(
                        "P={} must divide M={}",
                        self.part, self.in_channels
                    )));
                }
            }
            ConvKind::Standard | ConvKind::DepthwiseSeparable => {}
        }
        Ok(())
    }

    /// Output shape for a given input shape.
    pub fn out_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.channels != self.in_channels {
            return Err(Error::Spec(format!(
                "input has {} channels, spec expects {}",
                input.channels, self.in_channels
            )));
        }
        let h = conv_out_extent(input.height, self.kernel, self.stride, self.padding)?;
        let w = conv_out_extent(input.width, self.kernel, self.stride, self.padding)?;
        Shape4::new(input.batch, self.out_channels, h, w)
    }

    /// Channels of the K x K branch per filter.
    pub fn spatial_channels_per_filter(&self) -> usize {
        match self.kind {
            ConvKind::Standard => self.in_channels,
            ConvKind::Group | ConvKind::Dual => self.in_channels / self.groups,
            ConvKind::Het => self.in_channels / self.part,
            ConvKind::DepthwiseSeparable => 1,
        }
    }

    /// Width of the 1 x 1 branch weight block, 0 when the branch is absent.
    pub fn pointwise_width(&self) -> usize {
        match self.kind {
            ConvKind::Standard | ConvKind::Group => 0,
            ConvKind::Dual | ConvKind::DepthwiseSeparable => self.in_channels,
            ConvKind::Het => self.in_channels - self.in_channels / self.part,
        }
    }

    /// Shape of the spatial (K x K) weight block.
    pub fn spatial_shape(&self) -> Shape4 {
        let filters = match self.kind {
            ConvKind::DepthwiseSeparable => self.in_channels,
            _ => self.out_channels,
        };
        Shape4 {
            batch: filters,
            channels: self.spatial_channels_per_filter(),
            height: self.kernel,
            width: self.kernel,
        }
    }

    /// Number of learnable weight scalars (bias-free).
    pub fn weight_count(&self) -> u128 {
        let s = self.spatial_shape();
        let spatial = (s.batch * s.channels * s.height * s.width) as u128;
        let pw_rows = if self.pointwise_width() > 0 { self.out_channels } else { 0 };
        spatial + (pw_rows * self.pointwise_width()) as u128
    }
}

/// Learnable weights of one layer, stored per branch so the dual structure
/// (K x K branch plus 1 x 1 branch) stays explicit. No bias terms.
///
/// Spatial block layouts by kind:
/// - Standard: N x M x K x K
/// - Group:    N x (M/G) x K x K, filter n in group floor(n / (N/G)) reads
///   input channels [g*M/G, (g+1)*M/G)
/// - Dual:     N x (M/G) x K x K, same grouping; pointwise block N x M
/// - Het:      N x (M/P) x K x K; slot j of filter n covers input channel
///   j*P + (n mod P); pointwise block N x (M - M/P) covers the remaining
///   channels in ascending order
/// - DepthwiseSeparable: M x 1 x K x K (channel c -> channel c); pointwise
///   block N x M
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<E: Element> {
    pub spatial: Tensor<E>,
    pub pointwise: Option<Matrix<E>>,
}

impl<E: Element> FilterBank<E> {
    /// All-zero weights with the block shapes the spec requires.
    pub fn zeros(spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        let spatial = Tensor::zeros(spec.spatial_shape())?;
        let pw = spec.pointwise_width();
        let pointwise = if pw > 0 { Some(Matrix::zeros(spec.out_channels, pw)?) } else { None };
        Ok(FilterBank { spatial, pointwise })
    }

    /// Deterministic initialization: each branch uniform in
    /// +-sqrt(1 / fan_in) where fan_in counts that branch's incoming
    /// connections per output element.
    pub fn seeded(spec: &ConvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let k2 = spec.kernel * spec.kernel;
        let fan_spatial = match spec.kind {
            ConvKind::DepthwiseSeparable => k2,
            _ => spec.spatial_channels_per_filter() * k2,
        };
        let bound = E::from_f64((1.0 / fan_spatial as f64).sqrt());
        let spatial = Tensor::seeded_random(spec.spatial_shape(), seed)?.scale(bound);

        let pw = spec.pointwise_width();
        let pointwise = if pw > 0 {
            let fan_pw = pw.max(1);
            let bound = E::from_f64((1.0 / fan_pw as f64).sqrt());
            let t = Tensor::seeded_random(Shape4::new(1, 1, spec.out_channels, pw)?, seed ^ 0x517c_c1b7_2722_0a95)?
                .scale(bound);
            Some(Matrix::from_vec(spec.out_channels, pw, t.data().to_vec())?)
        } else {
            None
        };
        Ok(FilterBank { spatial, pointwise })
    }

    /// Check the block shapes against a spec.
    pub fn validate_for(&self, spec: &ConvSpec) -> Result<()> {
        spec.validate()?;
        if self.spatial.shape() != spec.spatial_shape() {
            return Err(Error::Spec(format!(
                "spatial block {} does not match spec (expected {})",
                self.spatial.shape(),
                spec.spatial_shape()
            )));
        }
        let pw = spec.pointwise_width();
        match (&self.pointwise, pw) {
            (None, 0) => {}
            (None, _) => return Err(Error::Spec("missing pointwise block".into())),
            (Some(_), 0) => return Err(Error::Spec("unexpected pointwise block".into())),
            (Some(m), w) => {
                if m.rows() != spec.out_channels || m.cols() != w {
                    return Err(Error::Spec(format!(
                        "pointwise block {}x{} does not match spec (expected {}x{})",
                        m.rows(),
                        m.cols(),
                        spec.out_channels,
                        w
                    )));
                }
            }
        }
        Ok(())
    }

    /// Total weight scalars actually stored.
    pub fn param_count(&self) -> u128 {
        let s = self.spatial.shape();
        let spatial = (s.batch * s.channels * s.height * s.width) as u128;
        let pw = self
            .pointwise
            .as_ref()
            .map(|m| (m.rows() * m.cols()) as u128)
            .unwrap_or(0);
        spatial + pw
    }
}

/// Gradients of one forward call with respect to input and both weight blocks.
#[derive(Debug, Clone)]
pub struct ConvGradients<E: Element> {
    pub d_input: Tensor<E>,
    pub d_spatial: Tensor<E>,
    pub d_pointwise: Option<Matrix<E>>,
}

/// Center-tap column offset of the 1 x 1 branch inside a K x K receptive
/// field: the 1 x 1 kernel reads the receptive field's center position
/// (lower center for even K), which keeps the two branches of a dual layer
/// pixel-aligned for every stride and padding.
#[inline]
pub(crate) fn center_tap(kernel: usize) -> usize {
    (kernel - 1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_divisibility_is_enforced() {
        assert!(ConvSpec::group(8, 8, 3, 1, 1, 4).is_ok());
        assert!(matches!(ConvSpec::group(9, 8, 3, 1, 1, 4), Err(Error::Spec(_))));
        assert!(matches!(ConvSpec::dual(8, 6, 3, 1, 1, 4), Err(Error::Spec(_))));
        assert!(matches!(ConvSpec::het(9, 8, 3, 1, 1, 4), Err(Error::Spec(_))));
    }

    #[test]
    fn filter_bank_shapes_per_kind() {
        let dual = ConvSpec::dual(8, 4, 3, 1, 1, 2).unwrap();
        let fb = FilterBank::<f32>::zeros(&dual).unwrap();
        assert_eq!(fb.spatial.shape(), Shape4::new(4, 4, 3, 3).unwrap());
        assert_eq!(fb.pointwise.as_ref().map(|m| (m.rows(), m.cols())), Some((4, 8)));
        assert_eq!(fb.param_count(), dual.weight_count());

        let het = ConvSpec::het(8, 4, 3, 1, 1, 4).unwrap();
        let fb = FilterBank::<f32>::zeros(&het).unwrap();
        assert_eq!(fb.spatial.shape(), Shape4::new(4, 2, 3, 3).unwrap());
        assert_eq!(fb.pointwise.as_ref().map(|m| (m.rows(), m.cols())), Some((4, 6)));

        // P = 1 degenerates to standard: no pointwise block at all.
        let het1 = ConvSpec::het(8, 4, 3, 1, 1, 1).unwrap();
        let fb = FilterBank::<f32>::zeros(&het1).unwrap();
        assert!(fb.pointwise.is_none());

        let dsc = ConvSpec::depthwise_separable(8, 4, 3, 1, 1).unwrap();
        let fb = FilterBank::<f32>::zeros(&dsc).unwrap();
        assert_eq!(fb.spatial.shape(), Shape4::new(8, 1, 3, 3).unwrap());
        assert_eq!(fb.pointwise.as_ref().map(|m| (m.rows(), m.cols())), Some((4, 8)));
    }

    #[test]
    fn seeded_weights_are_deterministic_and_bounded() {
        let spec = ConvSpec::dual(8, 8, 3, 1, 1, 4).unwrap();
        let a = FilterBank::<f64>::seeded(&spec, 11).unwrap();
        let b = FilterBank::<f64>::seeded(&spec, 11).unwrap();
        assert_eq!(a, b);
        let bound = (1.0f64 / (2.0 * 9.0)).sqrt();
        assert!(a.spatial.data().iter().all(|v| v.abs() <= bound));
        let pw_bound = (1.0 / 8.0f64).sqrt();
        assert!(a.pointwise.unwrap().data().iter().all(|v| v.abs() <= pw_bound));
    }
}
