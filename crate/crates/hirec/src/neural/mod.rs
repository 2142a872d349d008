//! Differentiable substrate for the two value networks: dense layers, the
//! graph-convolution propagation rule, global max pooling, reverse-mode
//! gradients, Adam, target copies, and checkpointing.
//!
//! Only the fixed network shapes used here are differentiated; this is not a
//! general autodiff. Everything runs on small dense matrices in the scalar
//! type `F`, and training code pins `F = f64` so gradient checks and
//! determinism hold at full precision.

mod replay;

pub use replay::ReplayBuffer;

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub bias: bool,
}

impl LayerSpec {
    pub fn relu(in_dim: usize, out_dim: usize, bias: bool) -> Self {
        LayerSpec { in_dim, out_dim, activation: Activation::Relu, bias }
    }

    pub fn linear(in_dim: usize, out_dim: usize, bias: bool) -> Self {
        LayerSpec { in_dim, out_dim, activation: Activation::Identity, bias }
    }

    fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias { self.out_dim } else { 0 }
    }
}

#[derive(Debug, Clone)]
struct Layer<F> {
    spec: LayerSpec,
    w: Array2<F>,
    b: Array1<F>,
    dw: Array2<F>,
    db: Array1<F>,
    mw: Array2<F>,
    vw: Array2<F>,
    mb: Array1<F>,
    vb: Array1<F>,
}

impl<F: Scalar> Layer<F> {
    fn new(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        // Uniform fan-in scaling; biases start at zero.
        let bound = 1.0 / (spec.in_dim as f64).sqrt();
        let data: Vec<F> = (0..spec.in_dim * spec.out_dim)
            .map(|_| F::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound))
            .collect();
        let w = Array2::from_shape_vec((spec.in_dim, spec.out_dim), data)
            .expect("shape matches data length");
        Layer {
            spec,
            w,
            b: Array1::zeros(spec.out_dim),
            dw: Array2::zeros((spec.in_dim, spec.out_dim)),
            db: Array1::zeros(spec.out_dim),
            mw: Array2::zeros((spec.in_dim, spec.out_dim)),
            vw: Array2::zeros((spec.in_dim, spec.out_dim)),
            mb: Array1::zeros(spec.out_dim),
            vb: Array1::zeros(spec.out_dim),
        }
    }
}

/// The propagation matrix `D^{-1/2} (G + I) D^{-1/2}`. The added self-loop
/// keeps every diagonal degree at least 1, so the normalization never
/// divides by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<F>(Array2<F>);

impl<F: Scalar> NormalizedAdjacency<F> {
    pub fn new(g: ArrayView2<'_, F>) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: "square adjacency".into(),
                got: format!("{}x{}", g.nrows(), g.ncols()),
            });
        }
        for i in 0..n {
            for j in 0..n {
                if g[(i, j)] != g[(j, i)] {
                    return Err(Error::Config(format!("adjacency not symmetric at ({i}, {j})")));
                }
            }
        }
        let mut a = g.to_owned();
        for i in 0..n {
            a[(i, i)] = a[(i, i)] + F::one();
        }
        let inv_sqrt_deg: Vec<F> = (0..n)
            .map(|i| F::one() / a.row(i).iter().copied().sum::<F>().sqrt())
            .collect();
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = a[(i, j)] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
        Ok(NormalizedAdjacency(a))
    }

    pub fn matrix(&self) -> ArrayView2<'_, F> {
        self.0.view()
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }
}

/// Activations recorded during a forward pass, consumed by `backward`.
pub struct ForwardCache<F> {
    /// Propagation matrix if the pass used one (it is symmetric).
    prop: Option<Array2<F>>,
    /// Per layer, the matrix that actually multiplied the weights.
    propagated_inputs: Vec<Array2<F>>,
    /// Per layer, the pre-activation output.
    preacts: Vec<Array2<F>>,
}

/// A feed-forward stack. Rows of the input are independent samples for a
/// plain dense pass, or graph nodes when a propagation matrix is supplied
/// (each layer then computes `act(P · X · W + b)`).
#[derive(Debug, Clone)]
pub struct ValueNet<F> {
    layers: Vec<Layer<F>>,
    adam_t: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Scalar> Default for AdamConfig<F> {
    fn default() -> Self {
        AdamConfig {
            lr: F::from_f64(1e-3),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
        }
    }
}

impl<F: Scalar> ValueNet<F> {
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for w in specs.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Config(format!(
                    "layer dims do not chain: {} out vs {} in",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        if specs.iter().any(|s| s.in_dim == 0 || s.out_dim == 0) {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs.iter().map(|&s| Layer::new(s, &mut rng)).collect();
        Ok(ValueNet { layers, adam_t: 0 })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").spec.out_dim
    }

    fn check_input(&self, x: ArrayView2<'_, F>, prop: Option<ArrayView2<'_, F>>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} input columns", self.in_dim()),
                got: format!("{}", x.ncols()),
            });
        }
        if let Some(p) = prop {
            if p.nrows() != x.nrows() || p.ncols() != x.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{n}x{n} propagation matrix", n = x.nrows()),
                    got: format!("{}x{}", p.nrows(), p.ncols()),
                });
            }
        }
        Ok(())
    }

    fn run_forward(
        &self,
        x: ArrayView2<'_, F>,
        prop: Option<ArrayView2<'_, F>>,
        mut cache: Option<&mut ForwardCache<F>>,
    ) -> Array2<F> {
        let mut cur = x.to_owned();
        for layer in &self.layers {
            let propagated = match prop {
                Some(p) => p.dot(&cur),
                None => cur,
            };
            let mut z = propagated.dot(&layer.w);
            if layer.spec.bias {
                z = z + &layer.b;
            }
            if let Some(c) = cache.as_deref_mut() {
                c.propagated_inputs.push(propagated);
                c.preacts.push(z.clone());
            }
            cur = match layer.spec.activation {
                Activation::Relu => z.mapv(|v| if v > F::zero() { v } else { F::zero() }),
                Activation::Identity => z,
            };
        }
        cur
    }

    /// Dense forward pass; rows are samples.
    pub fn forward(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.check_input(x, None)?;
        Ok(self.run_forward(x, None, None))
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, F>) -> Result<(Array2<F>, ForwardCache<F>)> {
        self.check_input(x, None)?;
        let mut cache =
            ForwardCache { prop: None, propagated_inputs: Vec::new(), preacts: Vec::new() };
        let y = self.run_forward(x, None, Some(&mut cache));
        Ok((y, cache))
    }

    /// Graph forward pass: every layer left-multiplies by the propagation
    /// matrix. Rows are nodes.
    pub fn forward_prop(&self, a: &NormalizedAdjacency<F>, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.check_input(x, Some(a.matrix()))?;
        Ok(self.run_forward(x, Some(a.matrix()), None))
    }

    pub fn forward_prop_cached(
        &self,
        a: &NormalizedAdjacency<F>,
        x: ArrayView2<'_, F>,
    ) -> Result<(Array2<F>, ForwardCache<F>)> {
        self.check_input(x, Some(a.matrix()))?;
        let mut cache = ForwardCache {
            prop: Some(a.matrix().to_owned()),
            propagated_inputs: Vec::new(),
            preacts: Vec::new(),
        };
        let y = self.run_forward(x, Some(a.matrix()), Some(&mut cache));
        Ok((y, cache))
    }

    /// Scalar convenience for single-sample value heads.
    pub fn value(&self, x: ArrayView1<'_, F>) -> Result<F> {
        let y = self.forward(x.insert_axis(Axis(0)))?;
        if y.ncols() != 1 {
            return Err(Error::DimensionMismatch {
                expected: "1 output column".into(),
                got: format!("{}", y.ncols()),
            });
        }
        Ok(y[(0, 0)])
    }

    /// Reverse accumulation from `d_out` (gradient of the loss in the
    /// network output). Accumulates into the stored parameter gradients and
    /// returns the gradient in the network input.
    pub fn backward(&mut self, cache: &ForwardCache<F>, d_out: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if cache.preacts.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("cache with {} layers", self.layers.len()),
                got: format!("{}", cache.preacts.len()),
            });
        }
        let mut d_cur = d_out.to_owned();
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            let z = &cache.preacts[idx];
            if d_cur.dim() != z.dim() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{:?} gradient", z.dim()),
                    got: format!("{:?}", d_cur.dim()),
                });
            }
            // d/dz relu(z) is 1 for z > 0 and 0 elsewhere, including at 0.
            let dz = match layer.spec.activation {
                Activation::Relu => {
                    let mut dz = d_cur;
                    dz.zip_mut_with(z, |g, &v| {
                        if v <= F::zero() {
                            *g = F::zero();
                        }
                    });
                    dz
                }
                Activation::Identity => d_cur,
            };
            let propagated = &cache.propagated_inputs[idx];
            layer.dw = &layer.dw + &propagated.t().dot(&dz);
            if layer.spec.bias {
                layer.db = &layer.db + &dz.sum_axis(Axis(0));
            }
            let dx = dz.dot(&layer.w.t());
            d_cur = match &cache.prop {
                // The propagation matrix is symmetric, so P^T = P.
                Some(p) => p.dot(&dx),
                None => dx,
            };
        }
        Ok(d_cur)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.dw.fill(F::zero());
            layer.db.fill(F::zero());
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.dw.iter().all(|v| v.is_finite()) && l.db.iter().all(|v| v.is_finite()))
    }

    /// One Adam update from the accumulated gradients. A non-finite gradient
    /// aborts before any state is touched.
    pub fn adam_step(&mut self, cfg: &AdamConfig<F>) -> Result<()> {
        if !self.grads_finite() {
            log::warn!("skipping optimizer step: non-finite gradient");
            return Err(Error::NonFiniteGradient);
        }
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let bc1 = F::one() - cfg.beta1.powi(t);
        let bc2 = F::one() - cfg.beta2.powi(t);
        for layer in &mut self.layers {
            let one = F::one();
            layer.mw = &layer.mw * cfg.beta1 + &(&layer.dw * (one - cfg.beta1));
            layer.vw = &layer.vw * cfg.beta2 + &(layer.dw.mapv(|g| g * g) * (one - cfg.beta2));
            let update = ndarray::Zip::from(&layer.mw).and(&layer.vw).map_collect(|&m, &v| {
                cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps)
            });
            layer.w = &layer.w - &update;
            if layer.spec.bias {
                layer.mb = &layer.mb * cfg.beta1 + &(&layer.db * (one - cfg.beta1));
                layer.vb = &layer.vb * cfg.beta2 + &(layer.db.mapv(|g| g * g) * (one - cfg.beta2));
                let upd_b = ndarray::Zip::from(&layer.mb).and(&layer.vb).map_collect(|&m, &v| {
                    cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps)
                });
                layer.b = &layer.b - &upd_b;
            }
        }
        Ok(())
    }

    /// Hard copy of all parameters from `other` (the target-network sync).
    pub fn sync_from(&mut self, other: &ValueNet<F>) -> Result<()> {
        if self.specs() != other.specs() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.specs()),
                got: format!("{:?}", other.specs()),
            });
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.w.assign(&src.w);
            dst.b.assign(&src.b);
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// All parameters in layer order, weights row-major then bias per layer.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.w.iter().map(|v| v.into_f64()));
            if layer.spec.bias {
                out.extend(layer.b.iter().map(|v| v.into_f64()));
            }
        }
        out
    }

    /// Accumulated gradients in the same order as [`Self::params_flat`].
    pub fn grads_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.dw.iter().map(|v| v.into_f64()));
            if layer.spec.bias {
                out.extend(layer.db.iter().map(|v| v.into_f64()));
            }
        }
        out
    }

    pub fn load_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                data.len()
            )));
        }
        let mut it = data.iter().copied().map(F::from_f64);
        for layer in &mut self.layers {
            for v in layer.w.iter_mut() {
                *v = it.next().expect("length checked");
            }
            if layer.spec.bias {
                for v in layer.b.iter_mut() {
                    *v = it.next().expect("length checked");
                }
            }
        }
        Ok(())
    }
}

/// Columnwise max over rows plus the winning row per column (first row on
/// ties). The winners are where pooled gradients route back.
pub fn global_max_pool<F: Scalar>(emb: ArrayView2<'_, F>) -> Result<(Array1<F>, Vec<usize>)> {
    if emb.nrows() == 0 {
        return Err(Error::Config("cannot pool an empty embedding".into()));
    }
    let (n, d) = emb.dim();
    let mut pooled = Array1::zeros(d);
    let mut argmax = vec![0usize; d];
    for c in 0..d {
        let mut best = emb[(0, c)];
        let mut row = 0;
        for r in 1..n {
            if emb[(r, c)] > best {
                best = emb[(r, c)];
                row = r;
            }
        }
        pooled[c] = best;
        argmax[c] = row;
    }
    Ok((pooled, argmax))
}

/// Scatter a pooled gradient back to the rows picked by the pool.
pub fn max_pool_backward<F: Scalar>(
    d_pooled: ArrayView1<'_, F>,
    argmax: &[usize],
    n_rows: usize,
) -> Array2<F> {
    let d = d_pooled.len();
    let mut out = Array2::zeros((n_rows, d));
    for c in 0..d {
        out[(argmax[c], c)] = out[(argmax[c], c)] + d_pooled[c];
    }
    out
}

/// Sidecar naming for the parameter blob next to a JSON manifest.
pub fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetManifest {
    pub name: String,
    pub specs: Vec<LayerSpec>,
    pub param_count: usize,
}

/// Checkpoint header: everything needed to rebuild the nets and validate the
/// parameter blob, plus bookkeeping the training loop wants back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: String,
    pub seed: u64,
    pub learner_steps: u64,
    pub episodes: u64,
    pub hyper: serde_json::Value,
    pub nets: Vec<NetManifest>,
    pub blob_len_bytes: u64,
}

/// Write manifest JSON at `path` and all parameters as little-endian f64 in
/// net order to the `.bin` sidecar.
pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    mut manifest: CheckpointManifest,
    nets: &[(&str, &ValueNet<F>)],
) -> Result<()> {
    let mut blob: Vec<u8> = Vec::new();
    manifest.nets.clear();
    for (name, net) in nets {
        manifest.nets.push(NetManifest {
            name: (*name).to_string(),
            specs: net.specs(),
            param_count: net.param_count(),
        });
        for v in net.params_flat() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    manifest.blob_len_bytes = blob.len() as u64;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
    std::fs::write(path, json)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", path.display())))?;
    let bp = blob_path(path);
    std::fs::write(&bp, blob)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", bp.display())))?;
    Ok(())
}

/// Read a manifest and its blob, returning per-net parameter vectors in
/// manifest order. Validates the blob length against the manifest.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointManifest, Vec<Vec<f64>>)> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&json)
        .map_err(|e| Error::Checkpoint(format!("manifest decode: {e}")))?;
    let bp = blob_path(path);
    let blob = std::fs::read(&bp)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", bp.display())))?;
    let expected: usize = manifest.nets.iter().map(|n| n.param_count * 8).sum();
    if blob.len() != expected || manifest.blob_len_bytes as usize != blob.len() {
        return Err(Error::Checkpoint(format!(
            "blob length {} does not match manifest ({} expected)",
            blob.len(),
            expected
        )));
    }
    let mut params = Vec::new();
    let mut offset = 0;
    for net in &manifest.nets {
        let mut vals = Vec::with_capacity(net.param_count);
        for _ in 0..net.param_count {
            let mut bytes = [0u8; 8];
            bytes.copy_from_slice(&blob[offset..offset + 8]);
            vals.push(f64::from_le_bytes(bytes));
            offset += 8;
        }
        params.push(vals);
    }
    Ok((manifest, params))
}
