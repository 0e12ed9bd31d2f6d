//! Multi-scale temporal encoder.
//!
//! Level 1 is the input projection followed by one residual temporal block at
//! full length `n`. Each further level average-pools the previous one with
//! stride 2 and applies its own residual block, so level `i` has `n / 2^(i-1)`
//! rows. A block is `x + relu(dwconv3(x) + b_dw) · W_pw + b_pw`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{interpolate_rows, Graph, Matrix, Padding, ParamId, ParamSet, Real, Var};
use crate::error::{Error, Result};

/// Per-level outputs of the encoder or of a branch head. Level `i` (0-based
/// here) has `n >> i` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePyramid<T> {
    pub levels: Vec<Matrix<T>>,
}

impl<T: Real> ScorePyramid<T> {
    pub fn new(levels: Vec<Matrix<T>>) -> Result<Self> {
        let p = Self { levels };
        p.validate()?;
        Ok(p)
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.levels.iter().map(Matrix::rows).collect()
    }

    /// Lengths halve level to level, widths agree and entries are finite.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.levels.first() else {
            return Err(Error::shape("pyramid", "no levels"));
        };
        for (i, w) in self.levels.windows(2).enumerate() {
            if w[0].rows() != 2 * w[1].rows() {
                return Err(Error::shape(
                    "pyramid",
                    format!(
                        "level {} has {} rows after {}",
                        i + 2,
                        w[1].rows(),
                        w[0].rows()
                    ),
                ));
            }
        }
        if self.levels.iter().any(|l| l.cols() != first.cols()) {
            return Err(Error::shape("pyramid", "levels differ in width"));
        }
        if self.levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite {
                op: "pyramid".into(),
            });
        }
        Ok(())
    }
}

/// `[n, n/2, …, n/2^(levels-1)]`
pub fn level_lengths(n: usize, levels: usize) -> Vec<usize> {
    (0..levels).map(|i| n >> i).collect()
}

/// Checks that `n` is a positive multiple of `2^(levels-1)`.
pub fn check_length(n: usize, levels: usize) -> Result<()> {
    let stride = 1usize << levels.saturating_sub(1);
    if levels == 0 || n == 0 || !n.is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "sequence length {n} must be a positive multiple of {stride} for {levels} levels"
        )));
    }
    Ok(())
}

/// Linear interpolation of a variable-length sequence onto `n` snippets.
pub fn resample_to_n<T: Real>(seq: &Matrix<T>, n: usize, levels: usize) -> Result<Matrix<T>> {
    check_length(n, levels)?;
    if seq.rows() == 0 {
        return Err(Error::shape("resample_to_n", "empty sequence"));
    }
    Ok(interpolate_rows(seq, n))
}

#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub dw_kernel: ParamId,
    pub dw_bias: ParamId,
    pub pw_weight: ParamId,
    pub pw_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub input_dim: usize,
    pub width: usize,
    pub proj_weight: ParamId,
    pub proj_bias: ParamId,
    pub blocks: Vec<BlockParams>,
    pub padding: Padding,
}

/// How freshly created blocks are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockInit {
    Random,
    /// Residual branch zeroed, so every block is the identity map.
    Identity,
}

fn normal<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * scale
}

impl EncoderParams {
    pub fn init<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        input_dim: usize,
        width: usize,
        levels: usize,
        block_init: BlockInit,
    ) -> Self {
        let lit = T::lit;
        let proj_scale = 1.0 / (input_dim as f64).sqrt();
        let proj_weight = params.add(
            "encoder.proj.weight",
            vec![input_dim, width],
            (0..input_dim * width)
                .map(|_| lit(normal(rng, proj_scale)))
                .collect(),
        );
        let proj_bias = params.add("encoder.proj.bias", vec![width], vec![T::zero(); width]);
        let pw_scale = 0.5 / (width as f64).sqrt();
        let blocks = (1..=levels)
            .map(|i| {
                let kernel: Vec<T> = (0..3 * width)
                    .map(|_| lit(1.0 / 3.0 + normal(rng, 0.1)))
                    .collect();
                let pw: Vec<T> = (0..width * width)
                    .map(|_| match block_init {
                        BlockInit::Random => lit(normal(rng, pw_scale)),
                        BlockInit::Identity => T::zero(),
                    })
                    .collect();
                BlockParams {
                    dw_kernel: params.add(
                        format!("encoder.level{i}.dw_kernel"),
                        vec![3, width],
                        kernel,
                    ),
                    dw_bias: params.add(
                        format!("encoder.level{i}.dw_bias"),
                        vec![width],
                        vec![T::zero(); width],
                    ),
                    pw_weight: params.add(
                        format!("encoder.level{i}.pw_weight"),
                        vec![width, width],
                        pw,
                    ),
                    pw_bias: params.add(
                        format!("encoder.level{i}.pw_bias"),
                        vec![width],
                        vec![T::zero(); width],
                    ),
                }
            })
            .collect();
        Self {
            input_dim,
            width,
            proj_weight,
            proj_bias,
            blocks,
            padding: Padding::Replicate,
        }
    }

    /// Re-binds handles by name, e.g. after loading a checkpoint.
    pub fn bind<T: Real>(params: &ParamSet<T>, levels: usize) -> Result<Self> {
        let proj_weight = params.require("encoder.proj.weight")?;
        let shape = &params.get(proj_weight).shape;
        if shape.len() != 2 {
            return Err(Error::Validation(
                "encoder.proj.weight must be rank 2".into(),
            ));
        }
        let (input_dim, width) = (shape[0], shape[1]);
        let blocks = (1..=levels)
            .map(|i| {
                Ok(BlockParams {
                    dw_kernel: params.require(&format!("encoder.level{i}.dw_kernel"))?,
                    dw_bias: params.require(&format!("encoder.level{i}.dw_bias"))?,
                    pw_weight: params.require(&format!("encoder.level{i}.pw_weight"))?,
                    pw_bias: params.require(&format!("encoder.level{i}.pw_bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_dim,
            width,
            proj_weight,
            proj_bias: params.require("encoder.proj.bias")?,
            blocks,
            padding: Padding::Replicate,
        })
    }

    pub fn levels(&self) -> usize {
        self.blocks.len()
    }

    fn block<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        b: &BlockParams,
        x: Var,
    ) -> Result<Var> {
        let k = g.param(params, b.dw_kernel);
        let conv = g.dwconv3(x, k, self.padding)?;
        let bias = g.param(params, b.dw_bias);
        let conv = g.add_row_bias(conv, bias)?;
        let h = g.relu(conv);
        let w = g.param(params, b.pw_weight);
        let mixed = g.matmul(h, w)?;
        let pb = g.param(params, b.pw_bias);
        let mixed = g.add_row_bias(mixed, pb)?;
        g.add(x, mixed)
    }

    /// Records the encoder on `g` for an `n × input_dim` input; returns one
    /// var per level.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        x: Var,
    ) -> Result<Vec<Var>> {
        let (n, d_in) = g.shape(x);
        if d_in != self.input_dim {
            return Err(Error::shape(
                "encode_pyramid",
                format!("input width {d_in}, encoder expects {}", self.input_dim),
            ));
        }
        check_length(n, self.levels())?;
        let w = g.param(params, self.proj_weight);
        let projected = g.matmul(x, w)?;
        let b = g.param(params, self.proj_bias);
        let projected = g.add_row_bias(projected, b)?;
        let mut levels = Vec::with_capacity(self.levels());
        let mut cur = self.block(g, params, &self.blocks[0], projected)?;
        levels.push(cur);
        for blk in &self.blocks[1..] {
            let pooled = g.avg_pool2(cur)?;
            cur = self.block(g, params, blk, pooled)?;
            levels.push(cur);
        }
        Ok(levels)
    }
}

/// Evaluates the encoder without keeping the tape.
pub fn encode_pyramid<T: Real>(
    features: &Matrix<T>,
    enc: &EncoderParams,
    params: &ParamSet<T>,
) -> Result<ScorePyramid<T>> {
    let mut g = Graph::new();
    let x = g.input(features.clone());
    let levels = enc.encode(&mut g, params, x)?;
    g.check_finite()?;
    ScorePyramid::new(levels.into_iter().map(|v| g.value(v).clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_vec(r, c, (0..r * c).map(|_| normal(rng, 1.0)).collect())
    }

    #[test]
    fn level_lengths_halve() {
        assert_eq!(level_lengths(192, 6), vec![192, 96, 48, 24, 12, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::<f64>::new();
        let enc = EncoderParams::init(&mut p, &mut rng, 5, 4, 6, BlockInit::Random);
        let x = random_matrix(&mut rng, 192, 5);
        let pyr = encode_pyramid(&x, &enc, &p).unwrap();
        assert_eq!(pyr.lengths(), vec![192, 96, 48, 24, 12, 6]);
        assert!(pyr.levels.iter().all(|l| l.cols() == 4));
    }

    #[test]
    fn resample_rules() {
        let m = Matrix::from_rows(&[vec![0.0f64, 3.0], vec![3.0, 0.0]]);
        let r = resample_to_n(&m, 4, 2).unwrap();
        for (j, want) in [[0.0, 3.0], [1.0, 2.0], [2.0, 1.0], [3.0, 0.0]]
            .iter()
            .enumerate()
        {
            assert!((r.get(j, 0) - want[0]).abs() < 1e-12);
            assert!((r.get(j, 1) - want[1]).abs() < 1e-12);
        }
        let same = Matrix::from_rows(&[vec![1.0f64], vec![2.0], vec![5.0], vec![-1.0]]);
        assert_eq!(resample_to_n(&same, 4, 3).unwrap(), same);
        assert!(resample_to_n(&same, 6, 3).is_err());
        assert!(resample_to_n(&same, 0, 1).is_err());
        let c = Matrix::filled(7, 2, 1.25f64);
        assert_eq!(
            resample_to_n(&c, 16, 4).unwrap(),
            Matrix::filled(16, 2, 1.25)
        );
    }

    #[test]
    fn identity_blocks_preserve_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::<f64>::new();
        let enc = EncoderParams::init(&mut p, &mut rng, 3, 3, 4, BlockInit::Identity);
        // identity projection
        let w = p.get_mut(enc.proj_weight);
        w.values = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = Matrix::from_vec(16, 3, [0.5, -2.0, 4.0].repeat(16));
        let pyr = encode_pyramid(&x, &enc, &p).unwrap();
        for level in &pyr.levels {
            for r in 0..level.rows() {
                assert_eq!(level.row(r), &[0.5, -2.0, 4.0]);
            }
        }
    }

    #[test]
    fn random_blocks_keep_constant_inputs_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::<f64>::new();
        let enc = EncoderParams::init(&mut p, &mut rng, 3, 5, 3, BlockInit::Random);
        let x = Matrix::from_vec(8, 3, [1.0, 2.0, 3.0].repeat(8));
        let pyr = encode_pyramid(&x, &enc, &p).unwrap();
        for level in &pyr.levels {
            for r in 1..level.rows() {
                for c in 0..level.cols() {
                    assert!((level.get(r, c) - level.get(0, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn circular_padding_is_shift_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ParamSet::<f64>::new();
        let mut enc = EncoderParams::init(&mut p, &mut rng, 4, 4, 2, BlockInit::Random);
        enc.padding = Padding::Circular;
        let x = random_matrix(&mut rng, 12, 4);
        let k = 5;
        let mut shifted = Matrix::zeros(12, 4);
        for r in 0..12 {
            shifted.row_mut((r + k) % 12).copy_from_slice(x.row(r));
        }
        let a = encode_pyramid(&x, &enc, &p).unwrap();
        let b = encode_pyramid(&shifted, &enc, &p).unwrap();
        for r in 0..12 {
            for c in 0..4 {
                let diff = a.levels[0].get(r, c) - b.levels[0].get((r + k) % 12, c);
                assert!(diff.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParamSet::<f64>::new();
        let enc = EncoderParams::init(&mut p, &mut rng, 4, 4, 2, BlockInit::Random);
        let x = Matrix::zeros(8, 3);
        assert!(matches!(
            encode_pyramid(&x, &enc, &p),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn level_three_readout_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = ParamSet::<f64>::new();
        let enc = EncoderParams::init(&mut p, &mut rng, 3, 4, 3, BlockInit::Random);
        let x = random_matrix(&mut rng, 16, 3);
        let readout = random_matrix(&mut rng, 4, 4);
        let err = grad_check(&p, 1e-5, |g, p| {
            let xv = g.input(x.clone());
            let levels = enc.encode(g, p, xv)?;
            let r = g.input(readout.clone());
            let prod = g.mul(levels[2], r)?;
            Ok(g.sum(prod))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
