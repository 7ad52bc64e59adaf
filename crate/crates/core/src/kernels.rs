//! Task descriptors, the Gaussian and cosine kernels over them, and the
//! descriptor bank a trained kernel meta-learner carries around.
//!
//! A task's descriptor stacks the shared initialization with the gradient of
//! the task's training loss at that initialization; the kernels then turn
//! descriptor distance/angle into a task-similarity score.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::predictors::Model;
use crate::taskgen::Task;

/// The kernel input: `[theta0; grad of the task training loss at theta0]`,
/// optionally restricted to a single network layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDescriptor {
    values: Array1<f64>,
    source_layer: Option<usize>,
}

impl TaskDescriptor {
    pub fn new(values: Array1<f64>, source_layer: Option<usize>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(Error::invalid("descriptor length must be even and nonzero"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("descriptor contains non-finite entries"));
        }
        Ok(TaskDescriptor {
            values,
            source_layer,
        })
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

    pub fn source_layer(&self) -> Option<usize> {
        self.source_layer
    }
}

/// Kernel family plus its hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    /// `exp(-||z - z'||^2 / sigma2)`
    Gaussian { sigma2: f64 },
    /// `z.z' / (||z|| ||z'||)`
    Cosine,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::Gaussian { sigma2 } = self {
            if !(*sigma2 > 0.0) || !sigma2.is_finite() {
                return Err(Error::domain("sigma2", "must be a positive finite number"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Cosine => "cosine",
        }
    }
}

/// Build one task's descriptor at `theta0`, optionally sliced to `layer`.
pub fn build_descriptor(
    model: &Model,
    theta0: &ParamVector,
    task_train: &crate::params::Dataset,
    layer: Option<usize>,
) -> Result<TaskDescriptor> {
    let grad = model.grad_loss(task_train, theta0)?;
    descriptor_from_grad(theta0, &grad, layer)
}

/// Assemble a descriptor from an already-computed training gradient.
pub fn descriptor_from_grad(
    theta0: &ParamVector,
    grad: &ParamVector,
    layer: Option<usize>,
) -> Result<TaskDescriptor> {
    let (theta_part, grad_part) = match layer {
        None => (theta0.view(), grad.view()),
        Some(l) => (theta0.layer_slice(l)?, grad.layer_slice(l)?),
    };
    let mut values = Array1::zeros(theta_part.len() * 2);
    values
        .slice_mut(ndarray::s![..theta_part.len()])
        .assign(&theta_part);
    values
        .slice_mut(ndarray::s![theta_part.len()..])
        .assign(&grad_part);
    TaskDescriptor::new(values, layer)
}

fn check_same_len(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "descriptor lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Kernel evaluation on raw coordinate vectors.
///
/// Both kernels are evaluated so that `k(a, b)` and `k(b, a)` perform the
/// exact same float operations, and `k(z, z) == 1.0` exactly.
pub(crate) fn kernel_eval_raw(
    spec: &KernelSpec,
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_same_len(a, b)?;
    spec.validate()?;
    match spec {
        KernelSpec::Gaussian { sigma2 } => {
            let mut sq = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                let d = x - y;
                sq += d * d;
            }
            Ok((-sq / sigma2).exp())
        }
        KernelSpec::Cosine => {
            let dot = a.dot(&b);
            let na2 = a.dot(&a);
            let nb2 = b.dot(&b);
            if na2 == 0.0 || nb2 == 0.0 {
                return Err(Error::degenerate(
                    "cosine kernel on a zero-norm descriptor",
                ));
            }
            // sqrt(na2 * nb2) == ||a|| ||b|| to working precision and keeps
            // the evaluation exactly symmetric; clamp kills <=1-ulp overshoot.
            Ok((dot / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
        }
    }
}

/// Kernel value between two descriptors.
pub fn kernel_eval(spec: &KernelSpec, z: &TaskDescriptor, z_other: &TaskDescriptor) -> Result<f64> {
    kernel_eval_raw(spec, z.view(), z_other.view())
}

/// Gradients of the kernel value with respect to each raw input vector.
pub fn kernel_input_grads(
    spec: &KernelSpec,
    z: &TaskDescriptor,
    z_other: &TaskDescriptor,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let (a, b) = (z.view(), z_other.view());
    check_same_len(a, b)?;
    spec.validate()?;
    match spec {
        KernelSpec::Gaussian { sigma2 } => {
            let k = kernel_eval_raw(spec, a, b)?;
            let diff = &a.to_owned() - &b;
            let ga = diff.mapv(|d| -2.0 * d * k / sigma2);
            let gb = ga.mapv(|g| -g);
            Ok((ga, gb))
        }
        KernelSpec::Cosine => {
            let dot = a.dot(&b);
            let na2 = a.dot(&a);
            let nb2 = b.dot(&b);
            if na2 == 0.0 || nb2 == 0.0 {
                return Err(Error::degenerate(
                    "cosine kernel on a zero-norm descriptor",
                ));
            }
            let denom = (na2 * nb2).sqrt();
            // d/da [a.b / (|a||b|)] = b/(|a||b|) - (a.b) a / (|a|^3 |b|)
            let ga = b.mapv(|bv| bv / denom) - a.mapv(|av| av * dot / (na2 * denom));
            let gb = a.mapv(|av| av / denom) - b.mapv(|bv| bv * dot / (nb2 * denom));
            Ok((ga, gb))
        }
    }
}

/// Per-coordinate affine transform fitted on a bank's descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    /// Population mean/std per coordinate; coordinates with (near-)zero
    /// spread keep their mean-centering but a unit scale.
    fn fit(rows: &[TaskDescriptor]) -> Self {
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = Array1::<f64>::zeros(dim);
        for r in rows {
            mean += r.values();
        }
        mean /= n;
        let mut var = Array1::<f64>::zeros(dim);
        for r in rows {
            for (j, v) in r.values().iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        var /= n;
        let scale = var.mapv(|v| {
            let s = v.sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Standardizer { mean, scale }
    }

    pub fn apply(&self, values: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = values.to_owned();
        out -= &self.mean;
        out /= &self.scale;
        out
    }

    pub fn scale(&self) -> &Array1<f64> {
        &self.scale
    }
}

/// The stored descriptors of all training tasks, frozen at one `theta0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorBank {
    descriptors: Vec<TaskDescriptor>,
    theta0_snapshot: ParamVector,
    layer: Option<usize>,
    standardizer: Option<Standardizer>,
}

impl DescriptorBank {
    pub fn new(
        descriptors: Vec<TaskDescriptor>,
        theta0_snapshot: ParamVector,
        standardize: bool,
    ) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::invalid("descriptor bank must not be empty"));
        }
        let layer = descriptors[0].source_layer();
        let dim = descriptors[0].len();
        if descriptors
            .iter()
            .any(|d| d.len() != dim || d.source_layer() != layer)
        {
            return Err(Error::invalid(
                "bank descriptors must share length and source layer",
            ));
        }
        let standardizer = standardize.then(|| Standardizer::fit(&descriptors));
        Ok(DescriptorBank {
            descriptors,
            theta0_snapshot,
            layer,
            standardizer,
        })
    }

    /// Build a bank over `tasks` from scratch (one gradient per task).
    pub fn build(
        model: &Model,
        theta0: &ParamVector,
        tasks: &[Task],
        layer: Option<usize>,
        standardize: bool,
    ) -> Result<Self> {
        let descriptors = tasks
            .iter()
            .map(|t| build_descriptor(model, theta0, &t.train, layer))
            .collect::<Result<Vec<_>>>()?;
        DescriptorBank::new(descriptors, theta0.clone(), standardize)
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &TaskDescriptor {
        &self.descriptors[i]
    }

    pub fn descriptors(&self) -> &[TaskDescriptor] {
        &self.descriptors
    }

    pub fn theta0_snapshot(&self) -> &ParamVector {
        &self.theta0_snapshot
    }

    pub fn layer(&self) -> Option<usize> {
        self.layer
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptors[0].len()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardizer.is_some()
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    /// Descriptor `i` in the coordinates kernels are evaluated in.
    pub fn effective(&self, i: usize) -> Array1<f64> {
        match &self.standardizer {
            Some(s) => s.apply(self.descriptors[i].view()),
            None => self.descriptors[i].values().clone(),
        }
    }

    /// Map an arbitrary query descriptor into the bank's kernel coordinates.
    pub fn effective_query(&self, z: &TaskDescriptor) -> Result<Array1<f64>> {
        if z.len() != self.descriptor_dim() {
            return Err(Error::invalid(format!(
                "query descriptor length {} does not match bank dim {}",
                z.len(),
                self.descriptor_dim()
            )));
        }
        Ok(match &self.standardizer {
            Some(s) => s.apply(z.view()),
            None => z.values().clone(),
        })
    }

    /// All effective descriptors stacked as the rows of a matrix.
    pub fn effective_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), self.descriptor_dim()));
        for i in 0..self.len() {
            m.row_mut(i).assign(&self.effective(i));
        }
        m
    }
}

/// Kernel values between `z` and every descriptor in the bank, in bank order.
pub fn kernel_vector(
    spec: &KernelSpec,
    bank: &DescriptorBank,
    z: &TaskDescriptor,
) -> Result<Array1<f64>> {
    let zq = bank.effective_query(z)?;
    let mut out = Array1::zeros(bank.len());
    for j in 0..bank.len() {
        out[j] = kernel_eval_raw(spec, zq.view(), bank.effective(j).view())?;
    }
    Ok(out)
}

/// Kernel matrix over all bank descriptors; symmetric with unit diagonal.
pub fn kernel_matrix(spec: &KernelSpec, bank: &DescriptorBank) -> Result<Array2<f64>> {
    let n = bank.len();
    let rows: Vec<Array1<f64>> = (0..n).map(|i| bank.effective(i)).collect();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = kernel_eval_raw(spec, rows[i].view(), rows[j].view())?;
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Dataset;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn descriptor(values: Array1<f64>) -> TaskDescriptor {
        TaskDescriptor::new(values, None).unwrap()
    }

    fn random_descriptor(dim: usize, rng: &mut impl Rng) -> TaskDescriptor {
        descriptor(Array1::from_iter(
            (0..dim).map(|_| rng.random_range(-2.0..2.0)),
        ))
    }

    #[test]
    fn descriptor_at_stationary_point_has_zero_gradient_half() {
        let model = Model::linear(2).unwrap();
        let beta = model.params_from(array![1.0, -1.0]).unwrap();
        let xs = array![[1.0, 0.0], [0.0, 1.0]];
        let mut ys = ndarray::Array2::zeros((2, 1));
        for k in 0..2 {
            ys[[k, 0]] = beta.view().dot(&xs.row(k));
        }
        let data = Dataset::new(xs, ys).unwrap();
        let z = build_descriptor(&model, &beta, &data, None).unwrap();
        assert_eq!(z.len(), 4);
        assert_eq!(z.values()[0], 1.0);
        assert_eq!(z.values()[1], -1.0);
        assert!(z.values()[2].abs() < 1e-12);
        assert!(z.values()[3].abs() < 1e-12);
    }

    #[test]
    fn descriptor_gradient_half_hand_case() {
        let model = Model::linear(3).unwrap();
        let data = Dataset::new(array![[1.0, 0.0, 0.0]], array![[1.0]]).unwrap();
        let z = build_descriptor(&model, &model.zero_params(), &data, None).unwrap();
        assert_eq!(z.values().to_vec(), vec![0.0, 0.0, 0.0, -2.0, 0.0, 0.0]);
    }

    #[test]
    fn descriptor_is_deterministic() {
        let model = Model::mlp(vec![1, 4, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = model
            .params_from(Array1::from_iter(
                (0..model.param_dim()).map(|_| rng.random_range(-1.0..1.0)),
            ))
            .unwrap();
        let data = Dataset::new(array![[0.3], [-0.5]], array![[0.1], [0.9]]).unwrap();
        let a = build_descriptor(&model, &theta, &data, None).unwrap();
        let b = build_descriptor(&model, &theta, &data, None).unwrap();
        let bits = |d: &TaskDescriptor| -> Vec<u64> {
            d.values().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn kernel_self_similarity_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_descriptor(6, &mut rng);
        for spec in [KernelSpec::Gaussian { sigma2: 0.5 }, KernelSpec::Cosine] {
            assert_eq!(kernel_eval(&spec, &z, &z).unwrap(), 1.0);
        }
    }

    #[test]
    fn cosine_orthogonal_descriptors() {
        let a = descriptor(array![1.0, 0.0]);
        let b = descriptor(array![0.0, 2.0]);
        assert_eq!(kernel_eval(&KernelSpec::Cosine, &a, &b).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_half_sigma_distance() {
        // ||z - z'||^2 = 0.5 with sigma2 = 0.5 gives exp(-1).
        let a = descriptor(array![0.0, 0.0]);
        let b = descriptor(array![0.5, 0.5]);
        let k = kernel_eval(&KernelSpec::Gaussian { sigma2: 0.5 }, &a, &b).unwrap();
        let expected = 0.367_879_441_171_442_33_f64; // exp(-1)
        assert!((k - expected).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_descriptor_is_an_error() {
        let a = descriptor(array![0.0, 0.0]);
        let b = descriptor(array![1.0, 1.0]);
        assert!(matches!(
            kernel_eval(&KernelSpec::Cosine, &a, &b),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn gaussian_rejects_bad_sigma2() {
        let a = descriptor(array![0.0, 0.0]);
        assert!(kernel_eval(&KernelSpec::Gaussian { sigma2: 0.0 }, &a, &a).is_err());
        assert!(kernel_eval(&KernelSpec::Gaussian { sigma2: -1.0 }, &a, &a).is_err());
    }

    #[test]
    fn kernel_symmetry_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = random_descriptor(8, &mut rng);
            let b = random_descriptor(8, &mut rng);
            for spec in [KernelSpec::Gaussian { sigma2: 1.3 }, KernelSpec::Cosine] {
                let ab = kernel_eval(&spec, &a, &b).unwrap();
                let ba = kernel_eval(&spec, &b, &a).unwrap();
                assert_eq!(ab.to_bits(), ba.to_bits());
            }
        }
    }

    #[test]
    fn cosine_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_descriptor(6, &mut rng);
            let b = random_descriptor(6, &mut rng);
            let c: f64 = rng.random_range(0.1..10.0);
            let scaled = descriptor(a.values() * c);
            let k1 = kernel_eval(&KernelSpec::Cosine, &a, &b).unwrap();
            let k2 = kernel_eval(&KernelSpec::Cosine, &scaled, &b).unwrap();
            assert!((k1 - k2).abs() <= 1e-12 * k1.abs().max(1.0));
        }
    }

    fn toy_bank(descriptors: Vec<TaskDescriptor>) -> DescriptorBank {
        let model = Model::linear(descriptors[0].len() / 2).unwrap();
        DescriptorBank::new(descriptors, model.zero_params(), false).unwrap()
    }

    #[test]
    fn kernel_vector_self_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let descs: Vec<_> = (0..4).map(|_| random_descriptor(6, &mut rng)).collect();
        let bank = toy_bank(descs.clone());
        let spec = KernelSpec::Gaussian { sigma2: 2.0 };
        let v = kernel_vector(&spec, &bank, &descs[2]).unwrap();
        assert_eq!(v[2], 1.0);
        assert!(v.iter().all(|&k| k <= 1.0));
    }

    #[test]
    fn kernel_vector_singleton_bank() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let z = random_descriptor(4, &mut rng);
        let bank = toy_bank(vec![z.clone()]);
        let v = kernel_vector(&KernelSpec::Cosine, &bank, &z).unwrap();
        assert_eq!(v.to_vec(), vec![1.0]);
    }

    #[test]
    fn kernel_vector_matches_elementwise_evals() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let descs: Vec<_> = (0..4).map(|_| random_descriptor(6, &mut rng)).collect();
        let z = random_descriptor(6, &mut rng);
        let bank = toy_bank(descs.clone());
        for spec in [KernelSpec::Gaussian { sigma2: 0.7 }, KernelSpec::Cosine] {
            let v = kernel_vector(&spec, &bank, &z).unwrap();
            for j in 0..4 {
                let expected = kernel_eval(&spec, &z, &descs[j]).unwrap();
                assert_eq!(v[j].to_bits(), expected.to_bits());
            }
        }
    }

    #[test]
    fn kernel_matrix_identical_bank_is_all_ones() {
        let z = descriptor(array![1.0, 2.0, 3.0, 4.0]);
        let bank = toy_bank(vec![z.clone(), z.clone(), z]);
        let k = kernel_matrix(&KernelSpec::Gaussian { sigma2: 1.0 }, &bank).unwrap();
        assert!(k.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn kernel_matrix_far_apart_is_identity() {
        let a = descriptor(array![0.0, 0.0]);
        let b = descriptor(array![100.0, 100.0]);
        let bank = toy_bank(vec![a, b]);
        let k = kernel_matrix(&KernelSpec::Gaussian { sigma2: 0.5 }, &bank).unwrap();
        assert_eq!(k[[0, 0]], 1.0);
        assert_eq!(k[[1, 1]], 1.0);
        assert!(k[[0, 1]].abs() < 1e-300);
    }

    #[test]
    fn kernel_matrix_symmetric_unit_diagonal_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..5 {
            let descs: Vec<_> = (0..8).map(|_| random_descriptor(10, &mut rng)).collect();
            let bank = toy_bank(descs);
            let spec = KernelSpec::Gaussian {
                sigma2: 0.5 + trial as f64,
            };
            let k = kernel_matrix(&spec, &bank).unwrap();
            for i in 0..8 {
                assert_eq!(k[[i, i]], 1.0);
                for j in 0..8 {
                    assert_eq!(k[[i, j]].to_bits(), k[[j, i]].to_bits());
                }
            }
            let m = nalgebra::DMatrix::from_fn(8, 8, |i, j| k[[i, j]]);
            let eig = m.symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l >= -1e-10), "min eig {:?}", eig.min());
        }
    }

    #[test]
    fn input_grads_vanish_at_gaussian_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let z = random_descriptor(6, &mut rng);
        let (ga, gb) =
            kernel_input_grads(&KernelSpec::Gaussian { sigma2: 0.5 }, &z, &z).unwrap();
        assert!(ga.iter().all(|&g| g == 0.0));
        assert!(gb.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cosine_gradient_orthogonal_to_input() {
        // Scale invariance: the directional derivative along z itself is zero.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let z = random_descriptor(6, &mut rng);
        let other = random_descriptor(6, &mut rng);
        let (ga, _) = kernel_input_grads(&KernelSpec::Cosine, &z, &other).unwrap();
        let dir = ga.dot(z.values());
        assert!(dir.abs() < 1e-12);
    }

    #[test]
    fn input_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let h = 1e-6;
        for spec in [KernelSpec::Gaussian { sigma2: 0.8 }, KernelSpec::Cosine] {
            let a = random_descriptor(6, &mut rng);
            let b = random_descriptor(6, &mut rng);
            let (ga, gb) = kernel_input_grads(&spec, &a, &b).unwrap();
            for i in 0..6 {
                let mut ap = a.values().clone();
                ap[i] += h;
                let mut am = a.values().clone();
                am[i] -= h;
                let fd = (kernel_eval(&spec, &descriptor(ap), &b).unwrap()
                    - kernel_eval(&spec, &descriptor(am), &b).unwrap())
                    / (2.0 * h);
                assert!(
                    (ga[i] - fd).abs() <= 1e-6 * fd.abs().max(1e-3),
                    "{} d/da[{i}]: {} vs fd {}",
                    spec.name(),
                    ga[i],
                    fd
                );
                let mut bp = b.values().clone();
                bp[i] += h;
                let mut bm = b.values().clone();
                bm[i] -= h;
                let fd = (kernel_eval(&spec, &a, &descriptor(bp)).unwrap()
                    - kernel_eval(&spec, &a, &descriptor(bm)).unwrap())
                    / (2.0 * h);
                assert!((gb[i] - fd).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn standardized_bank_centers_coordinates() {
        let a = descriptor(array![1.0, 5.0]);
        let b = descriptor(array![3.0, 9.0]);
        let model = Model::linear(1).unwrap();
        let bank =
            DescriptorBank::new(vec![a, b], model.zero_params(), true).unwrap();
        let ea = bank.effective(0);
        let eb = bank.effective(1);
        assert!((ea[0] + 1.0).abs() < 1e-12 && (eb[0] - 1.0).abs() < 1e-12);
        assert!((ea[1] + 1.0).abs() < 1e-12 && (eb[1] - 1.0).abs() < 1e-12);
    }
}
