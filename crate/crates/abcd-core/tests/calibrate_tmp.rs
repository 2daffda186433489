use abcd_core::simlab::*;
use abcd_core::edgecount::DEFAULT_BOUNDARY_FRAC;

fn design(l2: f64, trials: usize) -> PowerDesign {
    PowerDesign {
        n: 150,
        shape: vec![300],
        tau: 75,
        trials,
        accuracy_radius: 10,
        noise: NoiseSpec::Gaussian,
        change: ChangeDesign {
            kind: "mean".to_string(),
            total_l2: Some(l2),
            per_component: None,
            var_scale: None,
            sparsity: vec![300, 60, 15],
            prop_in_region: vec![1.0],
            post_noise_scale: Some(1.05),
        },
        detector: DetectorDesign {
            blocks: "1,4,10,20,40".to_string(),
            k: 40,
            permutations: 200,
            alphas: vec![0.05],
            methods: vec![DetectMethod::Abcd, DetectMethod::Gseg],
            boundary_frac: DEFAULT_BOUNDARY_FRAC,
        },
    }
}

#[test]
fn probe() {
    for l2 in [1.5f64, 2.0] {
        let d = design(l2, 20);
        let t0 = std::time::Instant::now();
        let table = power_study(&d, 20260810, true).unwrap();
        println!("=== l2 = {l2} ({:?}) ===", t0.elapsed());
        for c in &table.cells {
            println!("{} D={} sig={}/{} acc={}", c.method, c.d_changed, c.significant, c.trials, c.significant_and_accurate);
        }
    }
    panic!("probe done");
}
