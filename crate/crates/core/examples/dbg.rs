use kem::pipeline::{fit, ExperimentConfig, FitOptions};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let preset = args.get(1).map(|s| s.as_str()).unwrap_or("even-process");
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let xi: Option<f64> = args.get(3).and_then(|s| s.parse().ok());
    let eps: Option<f64> = args.get(4).and_then(|s| s.parse().ok());
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.n_pairs = n;
    if let Some(x) = xi { cfg.xi_x = x; cfg.xi_y = x; }
    if let Some(e) = eps { cfg.epsilon = e; }
    let t0 = std::time::Instant::now();
    let model = fit(&cfg, &FitOptions::default()).unwrap();
    println!("fit took {:.1}s", t0.elapsed().as_secs_f64());
    println!("eigenvalues: {:?}", model.basis.eigenvalues);
    println!("dropped head: {:?}", model.basis.dropped.iter().take(4).collect::<Vec<_>>());
    println!("fixed point err: {:.3e}", model.diagnostics.fixed_point_error);
    if model.basis.m() >= 2 {
        let ev = &model.basis.eigenvalues;
        println!("l1/l2 = {:.1}", ev[1] / ev[2]);
    }
    if cfg.process.is_discrete() {
        let (labels, graph) = model.graph(cfg.cluster_radius, cfg.cluster_min_pts, cfg.cluster_dims).unwrap();
        let mut by_count = graph.clusters.clone();
        by_count.sort_by_key(|c| std::cmp::Reverse(c.count));
        println!("clusters: {} noise: {}", graph.clusters.len(), graph.noise_count);
        for c in by_count.iter().take(6) {
            println!("  cluster {}: p={:.4} count={} centroid={:?}", c.id, c.probability, c.count, c.centroid.iter().take(2).collect::<Vec<_>>());
        }
        for e in &graph.edges {
            if e.probability > 0.005 {
                println!("  edge s{} -> s{} sym {} p={:.3}", e.from, e.to, e.symbol, e.probability);
            }
        }
        let _ = labels;
        // psi1 range for radius sanity
        let psi = model.basis.psi_coords();
        let c0: Vec<f64> = psi.column(0).to_vec();
        let (lo, hi) = c0.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        println!("psi1 range [{lo:.3}, {hi:.3}]");
    }
}
