//! Inspects the learnable prompt embeddings of an initialized model: shared
//! state tokens, per-level offsets and the resulting cosine structure.

use cross_pseudo_vad::branches::{compose_prompt_embeddings, compose_prompt_embeddings_raw};
use cross_pseudo_vad::model::{DualBranchModel, ModelConfig};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn main() -> anyhow::Result<()> {
    let model = DualBranchModel::<f64>::init(
        ModelConfig {
            input_dim: 16,
            width: 8,
            levels: 3,
            num_categories: 5,
        },
        4,
    );
    let bank = &model.branches.prompts;
    let p = &model.params;
    let raw = compose_prompt_embeddings_raw(bank, p)?;
    let unit = compose_prompt_embeddings(bank, p)?;
    println!("temperature {:.4}", bank.temperature(p));

    // raw row = category token + state token + level offset
    let cat = &p.get(bank.category).values;
    let abn = &p.get(bank.abnormal_state).values;
    let width = model.config.width;
    for (l, m) in raw.iter().enumerate() {
        let q = &p.get(bank.level[l]).values;
        let row = m.row(3);
        let worst = (0..width)
            .map(|j| (row[j] - (cat[3 * width + j] + abn[j] + q[j])).abs())
            .fold(0.0, f64::max);
        println!("level {l}: category 3 decomposes with residual {worst:.1e}");
    }

    println!("\nlevel 0 cosine similarities");
    let u = &unit[0];
    for i in 0..u.rows() {
        let cells: Vec<String> = (0..u.rows())
            .map(|j| format!("{:+.2}", cosine(u.row(i), u.row(j))))
            .collect();
        println!("  {}", cells.join(" "));
    }
    Ok(())
}
