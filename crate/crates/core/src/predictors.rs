//! Predictor families: a bias-free linear model and a small ReLU MLP.
//!
//! Both expose the same surface: `forward`, the un-normalized sum-of-squares
//! loss over a dataset, its analytic gradient, and a finite-difference
//! Hessian-vector product. Everything is a pure function of its inputs.

use std::sync::Arc;

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::params::{Dataset, LayerLayout, ParamVector, SegmentRole};

/// Which predictor family a model belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// `f(x, theta) = theta . x`, no bias, scalar output.
    Linear { input_dim: usize },
    /// Dense feed-forward net with ReLU hidden layers and identity output;
    /// `widths` includes the input and output widths.
    Mlp { widths: Vec<usize> },
}

/// A predictor family together with its parameter layout.
#[derive(Clone, Debug)]
pub struct Model {
    kind: ModelKind,
    layout: Arc<LayerLayout>,
}

impl Model {
    pub fn new(kind: ModelKind) -> Result<Self> {
        let layout = match &kind {
            ModelKind::Linear { input_dim } => LayerLayout::linear(*input_dim)?,
            ModelKind::Mlp { widths } => LayerLayout::mlp(widths)?,
        };
        Ok(Model { kind, layout })
    }

    pub fn linear(input_dim: usize) -> Result<Self> {
        Model::new(ModelKind::Linear { input_dim })
    }

    pub fn mlp(widths: Vec<usize>) -> Result<Self> {
        Model::new(ModelKind::Mlp { widths })
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn param_dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            ModelKind::Linear { input_dim } => *input_dim,
            ModelKind::Mlp { widths } => widths[0],
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            ModelKind::Linear { .. } => 1,
            ModelKind::Mlp { widths } => *widths.last().unwrap(),
        }
    }

    /// Fresh all-zero parameter vector for this model.
    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.layout.clone())
    }

    pub fn params_from(&self, values: Array1<f64>) -> Result<ParamVector> {
        ParamVector::new(values, self.layout.clone())
    }

    fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        if !Arc::ptr_eq(theta.layout(), &self.layout) && **theta.layout() != *self.layout {
            return Err(Error::invalid("parameter vector layout does not match model"));
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::invalid("dataset must contain at least one pair"));
        }
        if data.input_dim() != self.input_dim() {
            return Err(Error::invalid(format!(
                "dataset input dim {} does not match model input dim {}",
                data.input_dim(),
                self.input_dim()
            )));
        }
        if data.target_dim() != self.output_dim() {
            return Err(Error::invalid(format!(
                "dataset target dim {} does not match model output dim {}",
                data.target_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Evaluate the predictor at a single input.
    pub fn forward(&self, theta: &ParamVector, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_theta(theta)?;
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input dim {} does not match model input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        match &self.kind {
            ModelKind::Linear { .. } => {
                let y = theta.view().dot(&x);
                Ok(Array1::from_elem(1, y))
            }
            ModelKind::Mlp { .. } => {
                let mut activation = x.to_owned();
                let n_layers = self.layout.layer_count();
                for l in 0..n_layers {
                    let (w, b) = self.layer_views(theta, l);
                    let mut z = w.dot(&activation);
                    z += &b;
                    if l + 1 < n_layers {
                        z.mapv_inplace(relu);
                    }
                    activation = z;
                }
                Ok(activation)
            }
        }
    }

    /// Sum of squared errors over the dataset.
    pub fn loss(&self, data: &Dataset, theta: &ParamVector) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_data(data)?;
        let mut total = 0.0;
        for k in 0..data.len() {
            let pred = self.forward(theta, data.input_row(k))?;
            let target = data.target_row(k);
            for j in 0..pred.len() {
                let d = target[j] - pred[j];
                total += d * d;
            }
        }
        Ok(total)
    }

    /// Analytic gradient of [`Model::loss`] with respect to `theta`.
    pub fn grad_loss(&self, data: &Dataset, theta: &ParamVector) -> Result<ParamVector> {
        self.check_theta(theta)?;
        self.check_data(data)?;
        match &self.kind {
            ModelKind::Linear { .. } => Ok(self.grad_linear(data, theta)),
            ModelKind::Mlp { .. } => Ok(self.grad_mlp(data, theta)),
        }
    }

    /// Hessian-vector product of the loss, by central differences of the
    /// analytic gradient. The ReLU derivative at exactly zero is taken as
    /// zero, so points straddling a kink inherit finite-difference noise.
    pub fn hvp_loss(
        &self,
        data: &Dataset,
        theta: &ParamVector,
        v: &ParamVector,
    ) -> Result<ParamVector> {
        self.check_theta(theta)?;
        self.check_theta(v)?;
        self.check_data(data)?;
        let eps = 1e-4 * (1.0 + theta.max_abs()) / (1.0 + v.max_abs());
        let plus = ParamVector::from_parts(theta.values() + &(v.values() * eps), theta.layout().clone());
        let minus = ParamVector::from_parts(theta.values() - &(v.values() * eps), theta.layout().clone());
        let g_plus = self.grad_loss(data, &plus)?;
        let g_minus = self.grad_loss(data, &minus)?;
        let values = (g_plus.into_values() - g_minus.into_values()) / (2.0 * eps);
        Ok(ParamVector::from_parts(values, theta.layout().clone()))
    }

    /// 2 * sum_k x_k (theta . x_k - y_k)
    fn grad_linear(&self, data: &Dataset, theta: &ParamVector) -> ParamVector {
        let mut grad = Array1::<f64>::zeros(theta.len());
        for k in 0..data.len() {
            let x = data.input_row(k);
            let residual = theta.view().dot(&x) - data.target_row(k)[0];
            grad.scaled_add(2.0 * residual, &x);
        }
        ParamVector::from_parts(grad, theta.layout().clone())
    }

    fn grad_mlp(&self, data: &Dataset, theta: &ParamVector) -> ParamVector {
        let n_layers = self.layout.layer_count();
        let mut grad = Array1::<f64>::zeros(theta.len());
        // Reusable per-sample forward storage.
        let mut pre: Vec<Array1<f64>> = Vec::with_capacity(n_layers);
        let mut post: Vec<Array1<f64>> = Vec::with_capacity(n_layers);
        for k in 0..data.len() {
            pre.clear();
            post.clear();
            let mut activation = data.input_row(k).to_owned();
            for l in 0..n_layers {
                let (w, b) = self.layer_views(theta, l);
                let mut z = w.dot(&activation);
                z += &b;
                pre.push(z.clone());
                if l + 1 < n_layers {
                    z.mapv_inplace(relu);
                }
                post.push(z.clone());
                activation = z;
            }
            // delta = dL/dz for the output layer (identity activation).
            let mut delta = &post[n_layers - 1] - &data.target_row(k);
            delta.mapv_inplace(|d| 2.0 * d);
            for l in (0..n_layers).rev() {
                let below: ArrayView1<'_, f64> = if l == 0 {
                    data.input_row(k)
                } else {
                    post[l - 1].view()
                };
                {
                    let range = self.layout.layer_range(l).expect("valid layer");
                    let seg = grad.slice_mut(ndarray::s![range]);
                    let (rows, cols) = (delta.len(), below.len());
                    let (w_grad_flat, b_grad) = seg.split_at(ndarray::Axis(0), rows * cols);
                    let mut w_grad = w_grad_flat
                        .into_shape_with_order((rows, cols))
                        .expect("weight grad shape");
                    for r in 0..rows {
                        let mut row = w_grad.row_mut(r);
                        row.scaled_add(delta[r], &below);
                    }
                    let mut b_grad = b_grad;
                    b_grad += &delta;
                }
                if l > 0 {
                    let (w, _) = self.layer_views(theta, l);
                    let mut next = w.t().dot(&delta);
                    for (d, z) in next.iter_mut().zip(pre[l - 1].iter()) {
                        if *z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    delta = next;
                }
            }
        }
        ParamVector::from_parts(grad, theta.layout().clone())
    }

    /// Weight matrix and bias views of layer `l`. The linear model has a
    /// single weight row and no bias; callers must not request its bias.
    fn layer_views<'a>(
        &self,
        theta: &'a ParamVector,
        layer: usize,
    ) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let segs = self.layout.segments();
        // Layers own two consecutive segments (weight, bias) in MLPs.
        let seg_idx = match self.kind {
            ModelKind::Linear { .. } => layer,
            ModelKind::Mlp { .. } => 2 * layer,
        };
        let w_seg = &segs[seg_idx];
        let SegmentRole::Weight { rows, cols } = w_seg.role else {
            panic!("layer segment is not a weight matrix");
        };
        let values = theta.values().as_slice().expect("contiguous params");
        let w = ArrayView2::from_shape((rows, cols), &values[w_seg.offset..w_seg.offset + w_seg.len])
            .expect("weight view");
        let b = match self.kind {
            ModelKind::Linear { .. } => ArrayView1::from(&values[0..0]),
            ModelKind::Mlp { .. } => {
                let b_seg = &segs[seg_idx + 1];
                ArrayView1::from(&values[b_seg.offset..b_seg.offset + b_seg.len])
            }
        };
        (w, b)
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}
