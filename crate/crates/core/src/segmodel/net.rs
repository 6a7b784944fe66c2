use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{self, Feat};
use crate::error::{Error, Result};
use crate::volume::dims_of;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Channel width per resolution level, finest first.
    pub channels: Vec<usize>,
    /// Dropout rate applied to the last feature map before the output layer.
    pub dropout: f64,
    pub seed: u64,
    /// Start the output layer at zero so every voxel predicts 0.5.
    pub zero_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32],
            dropout: 0.1,
            seed: 0,
            zero_head: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return Err(Error::invalid("channels", "need at least two levels of nonzero width"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    /// Every patch side must be a multiple of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.levels()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvSpec {
    offset: usize,
    c_out: usize,
    c_in: usize,
    /// Kernel taps: 27 for 3×3×3, 1 for the output layer.
    taps: usize,
}

impl ConvSpec {
    fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.taps
    }

    fn len(&self) -> usize {
        self.weight_len() + self.c_out
    }
}

fn layout(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let ch = &cfg.channels;
    let l = ch.len();
    let mut shapes = Vec::new();
    let mut c_in = 1;
    for &c in &ch[..l - 1] {
        shapes.push((c, c_in, 27));
        c_in = c;
    }
    shapes.push((ch[l - 1], c_in, 27));
    shapes.push((ch[l - 1], ch[l - 1], 27));
    let mut below = ch[l - 1];
    for &c in ch[..l - 1].iter().rev() {
        shapes.push((c, below + c, 27));
        below = c;
    }
    shapes.push((1, ch[0], 1));
    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(c_out, c_in, taps)| {
            let s = ConvSpec {
                offset,
                c_out,
                c_in,
                taps,
            };
            offset += s.len();
            s
        })
        .collect()
}

/// A small 3D encoder-decoder with skip connections and a sigmoid output.
/// All parameters live in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    cfg: ModelConfig,
    layout: Vec<ConvSpec>,
    params: Vec<f32>,
}

/// Activations kept from the deterministic part of a forward pass.
#[derive(Debug, Clone)]
pub struct Trunk {
    dims: [usize; 3],
    /// Unfolded inputs of every 3×3×3 convolution, in layer order.
    cols: Vec<Array2<f32>>,
    /// Post-activation outputs of every 3×3×3 convolution, in layer order.
    outs: Vec<Feat>,
    pool_args: Vec<Vec<u32>>,
    level_dims: Vec<[usize; 3]>,
}

impl Trunk {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn features(&self) -> &Array2<f32> {
        &self.outs.last().expect("nonempty").data
    }
}

/// Per-voxel multiplicative dropout mask on the final features (already
/// scaled by `1 / (1 - rate)`).
pub type DropoutMask = Array2<f32>;

impl SegNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = layout(&cfg);
        let total = layout.last().map(|s| s.offset + s.len()).unwrap_or(0);
        let mut params = vec![0.0f32; total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let head = layout.len() - 1;
        for (i, spec) in layout.iter().enumerate() {
            if i == head && cfg.zero_head {
                continue;
            }
            let std = (2.0 / (spec.c_in * spec.taps) as f64).sqrt();
            let std = if i == head { 0.1 * std } else { std };
            for v in &mut params[spec.offset..spec.offset + spec.weight_len()] {
                *v = (std * rng.sample::<f64, _>(StandardNormal)) as f32;
            }
        }
        Ok(Self { cfg, layout, params })
    }

    pub(crate) fn from_parts(cfg: ModelConfig, params: Vec<f32>) -> Result<Self> {
        cfg.validate()?;
        let layout = layout(&cfg);
        let total = layout.last().map(|s| s.offset + s.len()).unwrap_or(0);
        if params.len() != total {
            return Err(Error::ShapeMismatch {
                expected: vec![total],
                got: vec![params.len()],
            });
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn weights(&self, spec: &ConvSpec) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((spec.c_out, spec.c_in * spec.taps), &self.params[spec.offset..spec.offset + spec.weight_len()])
            .expect("layout sizes")
    }

    fn bias(&self, spec: &ConvSpec) -> &[f32] {
        &self.params[spec.offset + spec.weight_len()..spec.offset + spec.len()]
    }

    pub fn check_patch(&self, dims: [usize; 3]) -> Result<()> {
        let k = self.cfg.size_multiple();
        if dims.iter().any(|&d| d == 0 || d % k != 0) {
            return Err(Error::invalid(
                "patch",
                format!("shape {dims:?} must be a positive multiple of {k} on every axis"),
            ));
        }
        Ok(())
    }

    fn conv_relu(&self, spec: &ConvSpec, input: &Feat, trunk: &mut Trunk) -> Feat {
        let cols = layers::im2col3(input);
        let mut out = layers::affine(self.weights(spec), self.bias(spec), &cols);
        layers::relu_inplace(&mut out);
        trunk.cols.push(cols);
        let feat = Feat { data: out, dims: input.dims };
        trunk.outs.push(feat.clone());
        feat
    }

    /// Runs everything up to (not including) dropout and the output layer.
    pub fn trunk(&self, patch: &Array3<f32>) -> Result<Trunk> {
        let dims = dims_of(patch);
        self.check_patch(dims)?;
        let l = self.cfg.levels();
        let mut trunk = Trunk {
            dims,
            cols: Vec::new(),
            outs: Vec::new(),
            pool_args: Vec::new(),
            level_dims: vec![dims],
        };
        let mut x = Feat {
            data: patch
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((1, dims.iter().product::<usize>()))
                .expect("contiguous"),
            dims,
        };
        let mut skips = Vec::new();
        for spec in &self.layout[..l - 1] {
            let e = self.conv_relu(spec, &x, &mut trunk);
            let (p, arg) = layers::maxpool2(&e);
            trunk.pool_args.push(arg);
            trunk.level_dims.push(p.dims);
            skips.push(e);
            x = p;
        }
        x = self.conv_relu(&self.layout[l - 1], &x, &mut trunk);
        x = self.conv_relu(&self.layout[l], &x, &mut trunk);
        for (spec, skip) in self.layout[l + 1..2 * l].iter().zip(skips.iter().rev()) {
            let up = layers::upsample2(&x);
            x = self.conv_relu(spec, &layers::concat(&up, skip), &mut trunk);
        }
        Ok(trunk)
    }

    /// Fresh dropout mask for the final features, or `None` when the rate is 0.
    pub fn sample_dropout(&self, trunk: &Trunk, rng: &mut impl Rng) -> Option<DropoutMask> {
        let rate = self.cfg.dropout;
        if rate == 0.0 {
            return None;
        }
        let keep = (1.0 / (1.0 - rate)) as f32;
        Some(Array2::from_shape_fn(trunk.features().raw_dim(), |_| {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                keep
            }
        }))
    }

    /// Output probabilities from cached trunk activations.
    pub fn head(&self, trunk: &Trunk, mask: Option<&DropoutMask>) -> Array3<f32> {
        let spec = &self.layout[self.layout.len() - 1];
        let feats = match mask {
            Some(m) => trunk.features() * m,
            None => trunk.features().clone(),
        };
        let z = layers::affine(self.weights(spec), self.bias(spec), &feats);
        Array3::from_shape_vec(trunk.dims, z.iter().map(|&v| layers::sigmoid(v)).collect()).expect("voxel count")
    }

    /// Foreground probability for every voxel of `patch`. Dropout is applied
    /// only when `rng` is given.
    pub fn forward(&self, patch: &Array3<f32>, rng: Option<&mut ChaCha8Rng>) -> Result<Array3<f32>> {
        let trunk = self.trunk(patch)?;
        let mask = rng.and_then(|r| self.sample_dropout(&trunk, r));
        Ok(self.head(&trunk, mask.as_ref()))
    }

    /// Gradient of a loss with respect to all parameters, given `dloss/dp`
    /// for the probabilities `p` that `head(trunk, mask)` produced.
    pub fn backward(&self, trunk: &Trunk, mask: Option<&DropoutMask>, p: &Array3<f32>, dloss_dp: &Array3<f32>) -> Vec<f32> {
        let mut grads = vec![0.0f32; self.params.len()];
        let l = self.cfg.levels();
        let n = trunk.dims.iter().product::<usize>();

        let dz: Array2<f32> = Array2::from_shape_vec(
            (1, n),
            p.iter().zip(dloss_dp.iter()).map(|(&p, &g)| g * p * (1.0 - p)).collect(),
        )
        .expect("voxel count");
        let head = &self.layout[self.layout.len() - 1];
        let feats = match mask {
            Some(m) => trunk.features() * m,
            None => trunk.features().clone(),
        };
        self.accumulate(&mut grads, head, &dz, &feats);
        let mut g = self.weights(head).t().dot(&dz);
        if let Some(m) = mask {
            g *= m;
        }

        // Walk the convolutions backwards. Layer i's unfolded input is cols[i]
        // and its output outs[i].
        let conv_count = 2 * l;
        let mut skip_grads: Vec<Option<Array2<f32>>> = vec![None; l - 1];
        for i in (0..conv_count).rev() {
            let spec = &self.layout[i];
            let out = &trunk.outs[i];
            if i < l - 1 {
                if let Some(sg) = skip_grads[i].take() {
                    g += &sg;
                }
            }
            layers::relu_backward(&mut g, &out.data);
            self.accumulate(&mut grads, spec, &g, &trunk.cols[i]);
            if i == 0 {
                break;
            }
            let gcols = self.weights(spec).t().dot(&g);
            let in_dims = out.dims;
            let gin = layers::col2im3(&gcols, spec.c_in, in_dims).data;
            if i > l {
                // Decoder: input was concat(upsampled coarser output, skip).
                let level = 2 * l - 1 - i;
                let c_up = spec.c_in - self.cfg.channels[level];
                let (g_up, g_skip) = layers::split_rows(&gin, c_up);
                skip_grads[level] = Some(g_skip);
                g = layers::upsample2_backward(&g_up, trunk.level_dims[level + 1]);
            } else if i == l {
                g = gin;
            } else {
                // Encoder conv i (or the first bottom conv) read the pooled
                // output of encoder conv i - 1.
                let level = i - 1;
                g = layers::maxpool2_backward(&gin, &trunk.pool_args[level], trunk.level_dims[level]);
            }
        }
        grads
    }

    fn accumulate(&self, grads: &mut [f32], spec: &ConvSpec, g_out: &Array2<f32>, input: &Array2<f32>) {
        let gw = g_out.dot(&input.t());
        let wl = spec.weight_len();
        for (dst, &v) in grads[spec.offset..spec.offset + wl].iter_mut().zip(gw.iter()) {
            *dst += v;
        }
        for (dst, row) in grads[spec.offset + wl..spec.offset + spec.len()].iter_mut().zip(g_out.axis_iter(Axis(0))) {
            *dst += row.sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(dims: [usize; 3], seed: u64) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn layout_counts() {
        let cfg = ModelConfig::default();
        let l = layout(&cfg);
        assert_eq!(l.len(), 7);
        let shapes: Vec<_> = l.iter().map(|s| (s.c_out, s.c_in, s.taps)).collect();
        assert_eq!(
            shapes,
            vec![(8, 1, 27), (16, 8, 27), (32, 16, 27), (32, 32, 27), (16, 48, 27), (8, 24, 27), (1, 8, 1)]
        );
    }

    #[test]
    fn zero_head_predicts_half() {
        let net = SegNet::new(ModelConfig {
            zero_head: true,
            ..Default::default()
        })
        .unwrap();
        let p = net.forward(&patch([16, 16, 8], 1), None).unwrap();
        assert_eq!(p.dim(), (16, 16, 8));
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn deterministic_without_dropout() {
        let net = SegNet::new(ModelConfig::default()).unwrap();
        let x = patch([32, 32, 16], 2);
        let a = net.forward(&x, None).unwrap();
        assert_eq!(a.dim(), (32, 32, 16));
        assert_eq!(a, net.forward(&x, None).unwrap());
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn seeds_give_different_parameters() {
        let a = SegNet::new(ModelConfig { seed: 1, ..Default::default() }).unwrap();
        let b = SegNet::new(ModelConfig { seed: 2, ..Default::default() }).unwrap();
        assert_ne!(a.params(), b.params());
    }

    #[test]
    fn rejects_incompatible_patch() {
        let net = SegNet::new(ModelConfig::default()).unwrap();
        assert!(net.forward(&patch([16, 16, 12], 1), None).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = SegNet::new(ModelConfig {
            channels: vec![2, 3, 4],
            dropout: 0.2,
            seed: 5,
            zero_head: false,
        })
        .unwrap();
        let x = patch([8, 8, 8], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trunk = net.trunk(&x).unwrap();
        let mask = net.sample_dropout(&trunk, &mut rng);
        let target = patch([8, 8, 8], 4);
        // loss = Σ target * p
        let p = net.head(&trunk, mask.as_ref());
        let grads = net.backward(&trunk, mask.as_ref(), &p, &target);
        let loss = |n: &SegNet| -> f64 {
            let t = n.trunk(&x).unwrap();
            n.head(&t, mask.as_ref()).iter().zip(target.iter()).map(|(&p, &t)| p as f64 * t as f64).sum()
        };
        // ReLU and max-pool kinks can sit inside the finite-difference
        // interval, so a small share of mismatches is tolerated.
        let step = (net.num_params() / 80).max(1);
        let mut checked = 0;
        let mut close = 0;
        for i in (0..net.num_params()).step_by(step) {
            let h = 1e-2f32;
            let mut hi = net.clone();
            hi.params_mut()[i] += h;
            let mut lo = net.clone();
            lo.params_mut()[i] -= h;
            let fd = (loss(&hi) - loss(&lo)) / (2.0 * h as f64);
            let an = grads[i] as f64;
            if (fd - an).abs() <= 2e-2 * fd.abs().max(an.abs()) + 1e-4 {
                close += 1;
            }
            checked += 1;
        }
        assert!(close * 10 >= checked * 9, "{close} of {checked} within tolerance");
    }
}
