//! Flat parameter vectors with a layer layout, and the dataset container.
//!
//! All predictors store their parameters in a single flat `f64` vector so the
//! meta-learners can treat adaptation as plain vector algebra. The
//! [`LayerLayout`] records where each weight matrix / bias sits inside that
//! vector and lets callers slice out the parameters of one network layer.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{Array1, ArrayView1, ArrayView2, ArrayViewMut1};

use crate::error::{Error, Result};

/// What a contiguous segment of the flat vector holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SegmentRole {
    /// Row-major `rows x cols` weight matrix.
    Weight { rows: usize, cols: usize },
    /// Bias vector; always follows the weight matrix it belongs to.
    Bias,
}

/// One contiguous segment of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
    pub role: SegmentRole,
}

/// Ordered, contiguous segmentation of a flat parameter vector.
///
/// A "layer" is one weight segment together with its optional trailing bias
/// segment; `layer_range(l)` returns the flat range covering both.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    segments: Vec<Segment>,
    layers: Vec<Range<usize>>,
    total_dim: usize,
}

impl LayerLayout {
    /// Build a layout from raw segments, checking contiguity and that every
    /// bias directly follows a weight matrix with a matching row count.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("layout must contain at least one segment"));
        }
        let mut offset = 0usize;
        let mut layers: Vec<Range<usize>> = Vec::new();
        let mut prev_weight_rows: Option<usize> = None;
        for seg in &segments {
            if seg.offset != offset {
                return Err(Error::invalid(format!(
                    "segment at offset {} is not contiguous (expected {offset})",
                    seg.offset
                )));
            }
            match seg.role {
                SegmentRole::Weight { rows, cols } => {
                    if rows * cols != seg.len {
                        return Err(Error::invalid(format!(
                            "weight segment length {} does not match {rows}x{cols}",
                            seg.len
                        )));
                    }
                    layers.push(seg.offset..seg.offset + seg.len);
                    prev_weight_rows = Some(rows);
                }
                SegmentRole::Bias => {
                    let rows = prev_weight_rows.take().ok_or_else(|| {
                        Error::invalid("bias segment does not follow a weight segment")
                    })?;
                    if seg.len != rows {
                        return Err(Error::invalid(format!(
                            "bias length {} does not match weight rows {rows}",
                            seg.len
                        )));
                    }
                    let last = layers.last_mut().expect("bias follows weight");
                    last.end += seg.len;
                }
            }
            offset += seg.len;
        }
        Ok(LayerLayout {
            segments,
            layers,
            total_dim: offset,
        })
    }

    /// Layout for a bias-free linear predictor `y = theta . x`.
    pub fn linear(input_dim: usize) -> Result<Arc<Self>> {
        if input_dim == 0 {
            return Err(Error::invalid("linear layout needs input_dim >= 1"));
        }
        Ok(Arc::new(Self::new(vec![Segment {
            offset: 0,
            len: input_dim,
            role: SegmentRole::Weight {
                rows: 1,
                cols: input_dim,
            },
        }])?))
    }

    /// Layout for a dense feed-forward network; `widths` lists the unit
    /// counts of every layer including input and output, so `[1, 16, 16, 1]`
    /// gives three weight/bias pairs.
    pub fn mlp(widths: &[usize]) -> Result<Arc<Self>> {
        if widths.len() < 2 {
            return Err(Error::invalid("mlp needs at least input and output widths"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("mlp widths must all be >= 1"));
        }
        let mut segments = Vec::new();
        let mut offset = 0usize;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            segments.push(Segment {
                offset,
                len: fan_out * fan_in,
                role: SegmentRole::Weight {
                    rows: fan_out,
                    cols: fan_in,
                },
            });
            offset += fan_out * fan_in;
            segments.push(Segment {
                offset,
                len: fan_out,
                role: SegmentRole::Bias,
            });
            offset += fan_out;
        }
        Ok(Arc::new(Self::new(segments)?))
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Number of (weight, bias) layer groups.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Flat index range of layer `l` (its weight matrix plus bias).
    pub fn layer_range(&self, layer: usize) -> Result<Range<usize>> {
        self.layers
            .get(layer)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("layer {layer} out of range")))
    }
}

/// Flat 64-bit float parameter vector tied to a [`LayerLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Array1<f64>,
    layout: Arc<LayerLayout>,
}

impl ParamVector {
    /// Construct with validation: length must match the layout and every
    /// entry must be finite.
    pub fn new(values: Array1<f64>, layout: Arc<LayerLayout>) -> Result<Self> {
        if values.len() != layout.total_dim() {
            return Err(Error::invalid(format!(
                "parameter vector length {} does not match layout dim {}",
                values.len(),
                layout.total_dim()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("parameter vector contains non-finite entries"));
        }
        Ok(ParamVector { values, layout })
    }

    /// Internal constructor for values produced by our own arithmetic.
    pub(crate) fn from_parts(values: Array1<f64>, layout: Arc<LayerLayout>) -> Self {
        debug_assert_eq!(values.len(), layout.total_dim());
        ParamVector { values, layout }
    }

    pub fn zeros(layout: Arc<LayerLayout>) -> Self {
        let values = Array1::zeros(layout.total_dim());
        ParamVector { values, layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn view_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        self.values.view_mut()
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    /// View of the parameters belonging to one layer.
    pub fn layer_slice(&self, layer: usize) -> Result<ArrayView1<'_, f64>> {
        let range = self.layout.layer_range(layer)?;
        Ok(self.values.slice(ndarray::s![range]))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.values.dot(&self.values).sqrt()
    }
}

/// A fixed-size batch of `(x, y)` pairs stored row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: ndarray::Array2<f64>,
    targets: ndarray::Array2<f64>,
}

impl Dataset {
    /// `inputs` is `K x n_x`, `targets` is `K x n_y`, `K >= 1`.
    pub fn new(inputs: ndarray::Array2<f64>, targets: ndarray::Array2<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::invalid("dataset must contain at least one pair"));
        }
        if inputs.nrows() != targets.nrows() {
            return Err(Error::invalid(format!(
                "dataset has {} inputs but {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn from_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::invalid("dataset rows empty or mismatched"));
        }
        let n_x = inputs[0].len();
        let n_y = targets[0].len();
        let mut xs = ndarray::Array2::zeros((inputs.len(), n_x));
        let mut ys = ndarray::Array2::zeros((targets.len(), n_y));
        for (k, row) in inputs.iter().enumerate() {
            if row.len() != n_x {
                return Err(Error::invalid("ragged input rows in dataset"));
            }
            for (j, v) in row.iter().enumerate() {
                xs[[k, j]] = *v;
            }
        }
        for (k, row) in targets.iter().enumerate() {
            if row.len() != n_y {
                return Err(Error::invalid("ragged target rows in dataset"));
            }
            for (j, v) in row.iter().enumerate() {
                ys[[k, j]] = *v;
            }
        }
        Dataset::new(xs, ys)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.targets.view()
    }

    pub fn input_row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(k)
    }

    pub fn target_row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.targets.row(k)
    }

    /// New dataset with rows reordered by `perm` (a permutation of 0..K).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::invalid("permutation length mismatch"));
        }
        let inputs = self.inputs.select(ndarray::Axis(0), perm);
        let targets = self.targets.select(ndarray::Axis(0), perm);
        Dataset::new(inputs, targets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_layout_single_segment() {
        let layout = LayerLayout::linear(16).unwrap();
        assert_eq!(layout.total_dim(), 16);
        assert_eq!(layout.layer_count(), 1);
        assert_eq!(layout.layer_range(0).unwrap(), 0..16);
    }

    #[test]
    fn mlp_layout_dimensions() {
        let layout = LayerLayout::mlp(&[1, 16, 16, 1]).unwrap();
        // 16 + 16 + 256 + 16 + 16 + 1
        assert_eq!(layout.total_dim(), 321);
        assert_eq!(layout.layer_count(), 3);
        assert_eq!(layout.layer_range(0).unwrap(), 0..32);
        assert_eq!(layout.layer_range(1).unwrap(), 32..304);
        assert_eq!(layout.layer_range(2).unwrap(), 304..321);
    }

    #[test]
    fn layout_rejects_gaps() {
        let err = LayerLayout::new(vec![Segment {
            offset: 1,
            len: 4,
            role: SegmentRole::Weight { rows: 2, cols: 2 },
        }]);
        assert!(err.is_err());
    }

    #[test]
    fn layout_rejects_orphan_bias() {
        let err = LayerLayout::new(vec![Segment {
            offset: 0,
            len: 3,
            role: SegmentRole::Bias,
        }]);
        assert!(err.is_err());
    }

    #[test]
    fn param_vector_validates_length_and_finiteness() {
        let layout = LayerLayout::linear(3).unwrap();
        assert!(ParamVector::new(array![1.0, 2.0], layout.clone()).is_err());
        assert!(ParamVector::new(array![1.0, f64::NAN, 0.0], layout.clone()).is_err());
        let ok = ParamVector::new(array![1.0, 2.0, 3.0], layout).unwrap();
        assert_eq!(ok.len(), 3);
    }

    #[test]
    fn dataset_rejects_empty_and_mismatched() {
        assert!(Dataset::new(
            ndarray::Array2::zeros((0, 2)),
            ndarray::Array2::zeros((0, 1))
        )
        .is_err());
        assert!(Dataset::new(
            ndarray::Array2::zeros((2, 2)),
            ndarray::Array2::zeros((3, 1))
        )
        .is_err());
    }
}
