//! Branch heads on top of the encoder pyramid.
//!
//! The binary head is a per-level `d → d/2 → 1` MLP producing one anomaly
//! logit per snippet. The category head scores each snippet against composed
//! prompt embeddings: for category `m` at level `i` the prompt is
//! `normalize(e_cat[m] + state(m) + level[i])` where `state(0)` is the shared
//! normal token and every other category shares the abnormal token. Logits are
//! cosine similarities divided by a learnable temperature.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{Graph, Matrix, ParamId, ParamSet, Real, Var};
use crate::error::{Error, Result};
use crate::pyramid::ScorePyramid;

pub const INITIAL_TEMPERATURE: f64 = 0.07;

#[derive(Clone, Copy, Debug)]
pub struct MlpHead {
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
}

/// Learnable prompt pieces. `log_temperature` stores `ln τ`, which keeps τ
/// positive under unconstrained updates.
#[derive(Clone, Debug)]
pub struct PromptBank {
    pub num_categories: usize,
    pub category: ParamId,
    pub normal_state: ParamId,
    pub abnormal_state: ParamId,
    pub level: Vec<ParamId>,
    pub log_temperature: ParamId,
}

#[derive(Clone, Debug)]
pub struct BranchParams {
    pub binary_heads: Vec<MlpHead>,
    pub prompts: PromptBank,
}

fn gauss<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * scale
}

pub fn hidden_width(width: usize) -> usize {
    (width / 2).max(1)
}

impl BranchParams {
    pub fn init<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        width: usize,
        levels: usize,
        num_categories: usize,
    ) -> Self {
        let hidden = hidden_width(width);
        let lit = T::lit;
        let binary_heads = (1..=levels)
            .map(|i| {
                let s1 = (2.0 / width as f64).sqrt();
                let s2 = (1.0 / hidden as f64).sqrt();
                MlpHead {
                    fc1_weight: params.add(
                        format!("branch_b.level{i}.fc1.weight"),
                        vec![width, hidden],
                        (0..width * hidden).map(|_| lit(gauss(rng, s1))).collect(),
                    ),
                    fc1_bias: params.add(
                        format!("branch_b.level{i}.fc1.bias"),
                        vec![hidden],
                        vec![T::zero(); hidden],
                    ),
                    fc2_weight: params.add(
                        format!("branch_b.level{i}.fc2.weight"),
                        vec![hidden, 1],
                        (0..hidden).map(|_| lit(gauss(rng, s2))).collect(),
                    ),
                    fc2_bias: params.add(
                        format!("branch_b.level{i}.fc2.bias"),
                        vec![1],
                        vec![T::zero()],
                    ),
                }
            })
            .collect();
        let cat_scale = 1.0 / (width as f64).sqrt();
        let prompts = PromptBank {
            num_categories,
            category: params.add(
                "prompt.category",
                vec![num_categories, width],
                (0..num_categories * width)
                    .map(|_| lit(gauss(rng, cat_scale)))
                    .collect(),
            ),
            normal_state: params.add("prompt.normal", vec![width], vec![T::zero(); width]),
            abnormal_state: params.add("prompt.abnormal", vec![width], vec![T::zero(); width]),
            level: (1..=levels)
                .map(|i| {
                    params.add(
                        format!("prompt.level{i}"),
                        vec![width],
                        vec![T::zero(); width],
                    )
                })
                .collect(),
            log_temperature: params.add(
                "prompt.log_temperature",
                vec![],
                vec![lit(INITIAL_TEMPERATURE.ln())],
            ),
        };
        Self {
            binary_heads,
            prompts,
        }
    }

    pub fn bind<T: Real>(params: &ParamSet<T>, levels: usize) -> Result<Self> {
        let binary_heads = (1..=levels)
            .map(|i| {
                Ok(MlpHead {
                    fc1_weight: params.require(&format!("branch_b.level{i}.fc1.weight"))?,
                    fc1_bias: params.require(&format!("branch_b.level{i}.fc1.bias"))?,
                    fc2_weight: params.require(&format!("branch_b.level{i}.fc2.weight"))?,
                    fc2_bias: params.require(&format!("branch_b.level{i}.fc2.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let category = params.require("prompt.category")?;
        let num_categories = params.get(category).shape[0];
        let prompts = PromptBank {
            num_categories,
            category,
            normal_state: params.require("prompt.normal")?,
            abnormal_state: params.require("prompt.abnormal")?,
            level: (1..=levels)
                .map(|i| params.require(&format!("prompt.level{i}")))
                .collect::<Result<Vec<_>>>()?,
            log_temperature: params.require("prompt.log_temperature")?,
        };
        Ok(Self {
            binary_heads,
            prompts,
        })
    }
}

impl MlpHead {
    pub fn apply<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let w1 = g.param(params, self.fc1_weight);
        let h = g.matmul(x, w1)?;
        let b1 = g.param(params, self.fc1_bias);
        let h = g.add_row_bias(h, b1)?;
        let h = g.relu(h);
        let w2 = g.param(params, self.fc2_weight);
        let o = g.matmul(h, w2)?;
        let b2 = g.param(params, self.fc2_bias);
        g.add_row_bias(o, b2)
    }
}

/// Raw binary logits (`t_i × 1`) for every level.
pub fn b_branch<T: Real>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    heads: &[MlpHead],
    levels: &[Var],
) -> Result<Vec<Var>> {
    if heads.len() != levels.len() {
        return Err(Error::shape(
            "b_branch_scores",
            format!("{} heads for {} levels", heads.len(), levels.len()),
        ));
    }
    heads
        .iter()
        .zip(levels)
        .map(|(h, &x)| h.apply(g, params, x))
        .collect()
}

impl PromptBank {
    pub fn levels(&self) -> usize {
        self.level.len()
    }

    /// Composed prompt rows before normalization, one `M × d` var per level.
    pub fn compose_raw<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>) -> Result<Vec<Var>> {
        let m = self.num_categories;
        let mut is_normal = Matrix::zeros(m, 1);
        is_normal.set(0, 0, T::one());
        let is_abnormal = is_normal.map(|v| T::one() - v);
        let cat = g.param(params, self.category);
        let n_tok = g.param(params, self.normal_state);
        let a_tok = g.param(params, self.abnormal_state);
        let nm = g.input(is_normal);
        let am = g.input(is_abnormal);
        let normal_rows = g.matmul(nm, n_tok)?;
        let abnormal_rows = g.matmul(am, a_tok)?;
        let with_state = g.add(cat, normal_rows)?;
        let with_state = g.add(with_state, abnormal_rows)?;
        self.level
            .iter()
            .map(|&q| {
                let q = g.param(params, q);
                g.add_row_bias(with_state, q)
            })
            .collect()
    }

    /// Unit-normalized prompt embeddings per level. A composed row with zero
    /// norm is an error.
    pub fn compose<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>) -> Result<Vec<Var>> {
        let raw = self.compose_raw(g, params)?;
        let before = g.zero_norm_rows();
        let out = raw.into_iter().map(|r| g.normalize_rows(r)).collect();
        if g.zero_norm_rows() != before {
            return Err(Error::Validation(
                "composed prompt embedding has zero norm".into(),
            ));
        }
        Ok(out)
    }

    /// `1 / τ` recorded on the graph.
    pub fn inverse_temperature<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>) -> Var {
        let log_t = g.param(params, self.log_temperature);
        let neg = g.scale(log_t, -T::one());
        g.exp(neg)
    }

    pub fn temperature<T: Real>(&self, params: &ParamSet<T>) -> T {
        params.get(self.log_temperature).values[0].exp()
    }
}

/// Category logits `cos(F_v[t], F_T[m]) · inv_temp` (`t_i × M`) for every
/// level. Zero-norm feature rows score 0 and are counted by
/// [`Graph::zero_norm_rows`].
pub fn c_branch<T: Real>(
    g: &mut Graph<T>,
    prompts: &[Var],
    levels: &[Var],
    inv_temp: Var,
) -> Result<Vec<Var>> {
    if prompts.len() != levels.len() {
        return Err(Error::shape(
            "c_branch_scores",
            format!(
                "{} prompt levels for {} video levels",
                prompts.len(),
                levels.len()
            ),
        ));
    }
    levels
        .iter()
        .zip(prompts)
        .map(|(&v, &p)| {
            if g.shape(v).1 != g.shape(p).1 {
                return Err(Error::shape(
                    "c_branch_scores",
                    format!(
                        "feature width {} vs prompt width {}",
                        g.shape(v).1,
                        g.shape(p).1
                    ),
                ));
            }
            let vn = g.normalize_rows(v);
            let sim = g.matmul_bt(vn, p)?;
            g.mul_scalar_var(sim, inv_temp)
        })
        .collect()
}

/// Evaluates the binary head on a feature pyramid.
pub fn b_branch_scores<T: Real>(
    pyramid: &ScorePyramid<T>,
    heads: &[MlpHead],
    params: &ParamSet<T>,
) -> Result<ScorePyramid<T>> {
    let mut g = Graph::new();
    let levels: Vec<Var> = pyramid.levels.iter().map(|l| g.input(l.clone())).collect();
    let out = b_branch(&mut g, params, heads, &levels)?;
    g.check_finite()?;
    ScorePyramid::new(out.into_iter().map(|v| g.value(v).clone()).collect())
}

/// Evaluates prompt composition, one unit-row `M × d` matrix per level.
pub fn compose_prompt_embeddings<T: Real>(
    bank: &PromptBank,
    params: &ParamSet<T>,
) -> Result<Vec<Matrix<T>>> {
    let mut g = Graph::new();
    let out = bank.compose(&mut g, params)?;
    Ok(out.into_iter().map(|v| g.value(v).clone()).collect())
}

/// Composed prompt rows before normalization.
pub fn compose_prompt_embeddings_raw<T: Real>(
    bank: &PromptBank,
    params: &ParamSet<T>,
) -> Result<Vec<Matrix<T>>> {
    let mut g = Graph::new();
    let out = bank.compose_raw(&mut g, params)?;
    Ok(out.into_iter().map(|v| g.value(v).clone()).collect())
}

/// Category logits for fixed prompt embeddings and temperature. Returns the
/// pyramid together with the number of zero-norm feature rows encountered.
pub fn c_branch_scores<T: Real>(
    pyramid: &ScorePyramid<T>,
    prompts: &[Matrix<T>],
    temperature: T,
) -> Result<(ScorePyramid<T>, usize)> {
    if !(temperature > T::zero() && temperature.is_finite()) {
        return Err(Error::Validation(
            "temperature must be finite and positive".into(),
        ));
    }
    let mut g = Graph::new();
    let levels: Vec<Var> = pyramid.levels.iter().map(|l| g.input(l.clone())).collect();
    let pvars: Vec<Var> = prompts.iter().map(|p| g.input(p.clone())).collect();
    let inv_temp = g.constant_scalar(T::one() / temperature);
    let out = c_branch(&mut g, &pvars, &levels, inv_temp)?;
    g.check_finite()?;
    let zero_rows = g.zero_norm_rows();
    let pyr = ScorePyramid::new(out.into_iter().map(|v| g.value(v).clone()).collect())?;
    Ok((pyr, zero_rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(width: usize, levels: usize, m: usize, seed: u64) -> (ParamSet<f64>, BranchParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let b = BranchParams::init(&mut p, &mut rng, width, levels, m);
        (p, b)
    }

    #[test]
    fn zero_final_layer_gives_zero_logits() {
        let (mut p, b) = setup(4, 2, 3, 1);
        for h in &b.binary_heads {
            p.get_mut(h.fc2_weight)
                .values
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let pyr =
            ScorePyramid::new(vec![Matrix::filled(4, 4, 0.3), Matrix::filled(2, 4, -1.0)]).unwrap();
        let out = b_branch_scores(&pyr, &b.binary_heads, &p).unwrap();
        assert!(out
            .levels
            .iter()
            .all(|l| l.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn constant_pyramid_gives_constant_logits() {
        let (p, b) = setup(4, 2, 3, 2);
        let pyr = ScorePyramid::new(vec![
            Matrix::from_vec(4, 4, [0.1, 0.2, -0.3, 0.9].repeat(4)),
            Matrix::from_vec(2, 4, [1.0, -0.2, 0.3, 0.5].repeat(2)),
        ])
        .unwrap();
        let out = b_branch_scores(&pyr, &b.binary_heads, &p).unwrap();
        for l in &out.levels {
            assert_eq!(l.cols(), 1);
            assert!(l.data().iter().all(|&v| v == l.get(0, 0)));
        }
    }

    #[test]
    fn prompt_rows_are_unit_norm() {
        let (mut p, b) = setup(5, 3, 4, 3);
        for id in [b.prompts.normal_state, b.prompts.abnormal_state] {
            p.get_mut(id).values.iter_mut().for_each(|v| *v = 0.3);
        }
        for l in compose_prompt_embeddings(&b.prompts, &p).unwrap() {
            for r in 0..l.rows() {
                let norm: f64 = l.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_norm_prompt_is_an_error() {
        let (mut p, b) = setup(3, 1, 2, 4);
        p.get_mut(b.prompts.category)
            .values
            .iter_mut()
            .for_each(|v| *v = 0.0);
        assert!(compose_prompt_embeddings(&b.prompts, &p).is_err());
    }

    #[test]
    fn identical_feature_scores_one() {
        let prompt = Matrix::<f64>::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]]);
        let pyr = ScorePyramid::new(vec![Matrix::from_rows(&[
            vec![0.0, 0.6, 0.8],
            vec![0.0, 0.0, 0.0],
        ])])
        .unwrap();
        let (out, zero_rows) = c_branch_scores(&pyr, &[prompt], 1.0).unwrap();
        assert!((out.levels[0].get(0, 1) - 1.0).abs() < 1e-12);
        assert!(out.levels[0].get(0, 0).abs() < 1e-12);
        assert_eq!(out.levels[0].row(1), &[0.0, 0.0]);
        assert_eq!(zero_rows, 1);
    }

    #[test]
    fn orthogonal_feature_scores_zero() {
        let prompt = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let pyr = ScorePyramid::new(vec![Matrix::from_rows(&[vec![0.0, 0.0, 2.5]])]).unwrap();
        let (out, _) = c_branch_scores(&pyr, &[prompt], 0.07).unwrap();
        assert_eq!(out.levels[0].row(0), &[0.0, 0.0]);
    }
}
