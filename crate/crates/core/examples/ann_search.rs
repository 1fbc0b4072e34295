//! Exact scan versus the HNSW graph on random unit vectors: top-30 recall
//! and per-query latency across search beam widths.
//!
//! `cargo run --release --example ann_search -- [n] [dim]`

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rsel::retrieval::{AnnConfig, ResponseIndex};

fn main() -> rsel::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(20_000);
    let dim = args.get(1).copied().unwrap_or(64);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut gaussian = |count: usize| -> Vec<Vec<f32>> {
        (0..count)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    };
    let vectors = gaussian(n);
    let queries = gaussian(200);

    let started = Instant::now();
    let payloads = (0..n).map(|i| format!("response {i}")).collect();
    let index = ResponseIndex::from_vectors(vectors, payloads, true, AnnConfig::default(), 0, 1.0)?;
    println!("built {n} x {dim} index in {:.1?}", started.elapsed());

    let k = 30;
    let normalized: Vec<Vec<f32>> = queries
        .iter()
        .map(|q| {
            let norm = q.iter().map(|v| v * v).sum::<f32>().sqrt();
            q.iter().map(|v| v / norm).collect()
        })
        .collect();
    let mut exact_time = 0.0;
    let truth: Vec<Vec<usize>> = normalized
        .iter()
        .map(|q| {
            let r = index.search_exact(q, k).expect("exact search");
            exact_time += r.query_time.as_secs_f64();
            r.ids()
        })
        .collect();
    println!("exact: {:.3} ms/query", 1e3 * exact_time / queries.len() as f64);

    for ef in [50, 100, 200, 400, 600, 800] {
        let mut time = 0.0;
        let mut hits = 0;
        for (q, t) in normalized.iter().zip(&truth) {
            let r = index.search_ann(q, k, ef)?;
            time += r.query_time.as_secs_f64();
            hits += r.ids().iter().filter(|id| t.contains(id)).count();
        }
        println!(
            "ef {ef:>4}: recall@{k} {:.4}, {:.3} ms/query",
            hits as f64 / (k * queries.len()) as f64,
            1e3 * time / queries.len() as f64
        );
    }
    Ok(())
}
