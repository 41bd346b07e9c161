//! ROUGE-L against a full-table LCS recomputation.

use dualfuse_eval::{rouge_l, rouge_l_tokens};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lcs_table(a: &[u32], b: &[u32]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

fn oracle(c: &[u32], r: &[u32]) -> f64 {
    let l = lcs_table(c, r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
    let beta: f64 = 1.2;
    (1.0 + beta.powi(2)) * p * rec / (rec + beta.powi(2) * p)
}

#[test]
fn random_pairs_match_table_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(1..30);
        let m = rng.random_range(1..30);
        let vocab = rng.random_range(2..12);
        let c: Vec<u32> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        let r: Vec<u32> = (0..m).map(|_| rng.random_range(0..vocab)).collect();
        assert!((rouge_l_tokens(&c, &r) - oracle(&c, &r)).abs() < 1e-9);
    }
}

#[test]
fn text_level_exact_matches() {
    assert_eq!(
        rouge_l(
            "The light is GREEN.",
            &["nothing here", "the light is green"]
        ),
        1.0
    );
}
