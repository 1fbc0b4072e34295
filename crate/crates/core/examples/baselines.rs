//! Keyword baselines on a three-document corpus, then SIM and MAP over
//! vectors where responses are a fixed rotation of their inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsel::baselines::{
    bm25_rank, keyword_tokens, map_score, sim_rank, train_map, Bm25Params, KeywordIndexStats,
    MapParams, MapTrainConfig,
};

fn main() -> rsel::Result<()> {
    let docs: Vec<Vec<String>> = [
        "the cat sat on the mat",
        "the dog sat down",
        "a cat and a dog played in the park today",
    ]
    .iter()
    .map(|d| keyword_tokens(d))
    .collect();
    let query = keyword_tokens("the cat sat");
    let stats = KeywordIndexStats::from_docs(&docs);
    println!("BM25 for {query:?}");
    for (doc, score) in bm25_rank(&query, &docs, &stats, Bm25Params::default())? {
        println!("  d{doc}: {score:.6}");
    }

    // Responses are inputs under a fixed orthogonal map plus noise, so plain
    // cosine is uninformative and MAP must learn the rotation.
    let dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let perm: Vec<usize> = {
        let mut p: Vec<usize> = (0..dim).collect();
        p.rotate_left(5);
        p
    };
    let mut sample = |n: usize| -> Vec<(Vec<f32>, Vec<f32>)> {
        (0..n)
            .map(|_| {
                let x: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y = (0..dim).map(|i| x[perm[i]] + rng.gen_range(-0.1..0.1)).collect();
                (x, y)
            })
            .collect()
    };
    let train = sample(2000);
    let test = sample(200);
    let params = train_map(&train, &MapTrainConfig::default())?;

    let n_cands = 20;
    let mut sim_hits = 0;
    let mut map_hits = 0;
    for (i, (x, _)) in test.iter().enumerate() {
        let cands: Vec<&[f32]> = (0..n_cands).map(|j| test[(i + j) % test.len()].1.as_slice()).collect();
        sim_hits += usize::from(sim_rank(x, &cands)?[0].0 == 0);
        let best = (0..n_cands)
            .map(|j| (j, map_score(x, cands[j], &params).unwrap()))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        map_hits += usize::from(best.0 == 0);
    }
    let identity = MapParams::identity(dim);
    println!(
        "\nR_{n_cands}@1 on rotated vectors: SIM {:.3}, MAP {:.3} (identity map alpha {})",
        sim_hits as f64 / test.len() as f64,
        map_hits as f64 / test.len() as f64,
        identity.alpha
    );
    Ok(())
}
