// temporary tuning probe, removed later
use smalltrack::cli::{cmd_simulate, cmd_sweep, read_sweep_csv, PipelineConfig};
use std::fs;

fn main() {
    for (label, dataset_seed) in [("A", 21u64), ("B", 99u64), ("C", 5u64)] {
        let root = std::path::PathBuf::from(format!("/tmp/sweepm_{label}"));
        let _ = fs::remove_dir_all(&root);
        fs::create_dir_all(&root).unwrap();
        let sim_cfg = r#"{
          "template": {
            "num_frames": 120, "image_size": 384.0, "target_size": 12.0, "speed": 0.8,
            "num_distractors": 6, "distractor_spawn_rate": 0.02, "occlusion_probability": 0.0,
            "noise_sigma": 0.01, "feature_width": 32, "high_feature_cluster_count": 2, "seed": 0
          },
          "count": 24
        }"#;
        fs::write(root.join("sim.json"), sim_cfg).unwrap();
        cmd_simulate(&root.join("sim.json"), &root.join("data"), dataset_seed).unwrap();
        let pipeline = PipelineConfig::default();
        let omegas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let t0 = std::time::Instant::now();
        cmd_sweep(&root.join("data"), &omegas, &root.join("sweep"), 3, 4, &pipeline).unwrap();
        let rows = read_sweep_csv(&root.join("sweep/sweep.csv")).unwrap();
        let best = rows.iter().cloned().reduce(|a, b| if b.auc > a.auc { b } else { a }).unwrap();
        let last = rows.last().unwrap();
        println!("== dataset {label}: best omega {:.1} (auc {:.3}) vs omega 1.0 auc {:.3}; gap {:.3} [{:.0}s]",
                 best.omega, best.auc, last.auc, best.auc - last.auc, t0.elapsed().as_secs_f64());
        let line: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.auc)).collect();
        println!("   auc by omega: {}", line.join(" "));
    }
}
