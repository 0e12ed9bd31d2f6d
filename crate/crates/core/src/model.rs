//! The dual-branch scorer shared by both training stages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::branches::{b_branch, c_branch, BranchParams};
use crate::diffcore::{Graph, Matrix, ParamSet, Real, Var};
use crate::error::{Error, Result};
use crate::pyramid::{BlockInit, EncoderParams, ScorePyramid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub width: usize,
    pub levels: usize,
    pub num_categories: usize,
}

/// Encoder plus binary and category heads over one parameter set.
#[derive(Clone, Debug)]
pub struct DualBranchModel<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    pub encoder: EncoderParams,
    pub branches: BranchParams,
}

/// Graph handles for one forward pass.
#[derive(Clone, Debug)]
pub struct Outputs {
    /// Per level, `t_i × 1` anomaly logits.
    pub binary: Vec<Var>,
    /// Per level, `t_i × M` category logits.
    pub category: Vec<Var>,
}

/// Materialized logits for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchLogits<T> {
    pub binary: ScorePyramid<T>,
    pub category: ScorePyramid<T>,
}

impl<T: Real> DualBranchModel<T> {
    /// Fresh seeded initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        Self::init_with(config, seed, BlockInit::Random)
    }

    pub fn init_with(config: ModelConfig, seed: u64, block_init: BlockInit) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = EncoderParams::init(
            &mut params,
            &mut rng,
            config.input_dim,
            config.width,
            config.levels,
            block_init,
        );
        let branches = BranchParams::init(
            &mut params,
            &mut rng,
            config.width,
            config.levels,
            config.num_categories,
        );
        Self {
            config,
            params,
            encoder,
            branches,
        }
    }

    /// Rebuilds a model around an existing parameter set (e.g. a checkpoint),
    /// inferring the configuration from parameter shapes.
    pub fn from_params(params: ParamSet<T>) -> Result<Self> {
        let levels = (1..)
            .take_while(|i| {
                params
                    .find(&format!("encoder.level{i}.dw_kernel"))
                    .is_some()
            })
            .count();
        if levels == 0 {
            return Err(Error::Validation("checkpoint has no encoder levels".into()));
        }
        let encoder = EncoderParams::bind(&params, levels)?;
        let branches = BranchParams::bind(&params, levels)?;
        let config = ModelConfig {
            input_dim: encoder.input_dim,
            width: encoder.width,
            levels,
            num_categories: branches.prompts.num_categories,
        };
        let reference = Self::init(config, 0);
        if !reference.params.same_layout(&params) {
            return Err(Error::Validation(
                "checkpoint parameter layout does not match the model architecture".into(),
            ));
        }
        Ok(Self {
            config,
            params,
            encoder,
            branches,
        })
    }

    pub fn cast<U: Real>(&self) -> DualBranchModel<U> {
        DualBranchModel {
            config: self.config,
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            branches: self.branches.clone(),
        }
    }

    /// Records a forward pass for an `n × input_dim` feature matrix.
    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        features: Var,
    ) -> Result<Outputs> {
        let levels = self.encoder.encode(g, params, features)?;
        let binary = b_branch(g, params, &self.branches.binary_heads, &levels)?;
        let prompts = self.branches.prompts.compose(g, params)?;
        let inv_temp = self.branches.prompts.inverse_temperature(g, params);
        let category = c_branch(g, &prompts, &levels, inv_temp)?;
        Ok(Outputs { binary, category })
    }

    pub fn forward(&self, g: &mut Graph<T>, features: Var) -> Result<Outputs> {
        self.forward_with(g, &self.params, features)
    }

    /// Evaluates both heads on an already resampled `n × input_dim` matrix.
    pub fn logits(&self, features: &Matrix<T>) -> Result<BranchLogits<T>> {
        let mut g = Graph::new();
        let x = g.input(features.clone());
        let out = self.forward(&mut g, x)?;
        g.check_finite()?;
        let collect =
            |vars: &[Var]| ScorePyramid::new(vars.iter().map(|&v| g.value(v).clone()).collect());
        Ok(BranchLogits {
            binary: collect(&out.binary)?,
            category: collect(&out.category)?,
        })
    }
}
