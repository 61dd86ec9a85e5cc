use std::path::Path;

use archprune::baselines::{read_mask_file, write_mask_file};
use archprune::data::synthetic_blobs;
use archprune::harness::{self, Command, ExperimentSpec};
use archprune::model::MaskedMlp;
use archprune::optimizer::{run_ap, TwoTempConfig};
use archprune::transfer::{transfer_experiment, MaskEntry, MaskSource, TransferConfig};

fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn ap_mask_survives_disk_and_transfers() {
    let source = synthetic_blobs(4, 60, 10, 0.3, 1);
    let target = synthetic_blobs(4, 40, 10, 0.3, 2);
    let parent = MaskedMlp::mlp(&[10, 12, 4]).unwrap();
    let cfg = TwoTempConfig {
        gamma: 0.05,
        target_sparsity: 0.6,
        iterations: 1500,
        c: 0.5,
        seed: 3,
        ..TwoTempConfig::default()
    };
    let out = run_ap(&parent, &source, &cfg, 1.0).unwrap();
    assert!(out.target_reached(0.6));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ours_0.6.txt");
    write_mask_file(&path, &out.mask).unwrap();
    let mask = read_mask_file(&path).unwrap();
    assert_eq!(mask, out.mask);

    let entries = [MaskEntry { source: MaskSource::Ours, sparsity: 0.6, mask }];
    let tc = TransferConfig { retrain_iters: 300, n_seeds: 3, ..TransferConfig::default() };
    let grid = transfer_experiment(&parent, &entries, &target, &target, &[40, 8], &tc, 0, 1).unwrap();
    assert!(grid.skipped.is_empty());
    assert_eq!(grid.reports.len(), 2);
    for r in &grid.reports {
        assert_eq!(r.accuracies.len(), 3);
        assert!(r.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    }
    assert!(grid.reports[0].mean > 0.5, "{}", grid.reports[0].mean);
}

#[test]
fn transfer_grid_command_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::new(Command::TransferGrid, dir.path())
        .with_override("dataset=synthetic")
        .with_override("hidden=16")
        .with_override("gamma=0.05")
        .with_override("T=1500")
        .with_override("sparsities=0.5,0.8")
        .with_override("sizes=100,50")
        .with_override("n_seeds=2")
        .with_override("retrain_iters=200")
        .with_override("imp_iters=600");
    let summary = harness::run(&spec).unwrap();
    assert_eq!(summary.exit_code(), 0, "{:?}", summary.failed);
    assert_eq!(summary.completed, 3 * 2 * 2);

    let (header, rows) = csv_rows(&dir.path().join("results.csv"));
    assert_eq!(header, "source,sparsity,new_size,seed,accuracy");
    assert_eq!(rows.len(), 3 * 2 * 2 * 2);
    let (header, rows) = csv_rows(&dir.path().join("summary.csv"));
    assert!(header.starts_with("source,sparsity"));
    assert_eq!(rows.len(), 12);
    for size in [100, 50] {
        let (header, rows) = csv_rows(&dir.path().join(format!("summary_size{size}.csv")));
        assert_eq!(header, "source,sparsity,mean,std,n_seeds");
        assert_eq!(rows.len(), 6);
        assert!(dir.path().join(format!("transfer_size{size}.gp")).exists());
    }
    for tag in ["ours", "rnd", "imp"] {
        for s in ["0.5", "0.8"] {
            assert!(dir.path().join("masks").join(format!("{tag}_{s}.txt")).exists());
        }
    }

    // A second run reuses the saved masks and reproduces the tables.
    let again = tempfile::tempdir().unwrap();
    let masks = dir.path().join("masks");
    let spec2 = ExperimentSpec { out_dir: again.path().to_path_buf(), ..spec }
        .with_override(&format!("masks_dir={}", masks.display()));
    harness::run(&spec2).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("results.csv")).unwrap(),
        std::fs::read(again.path().join("results.csv")).unwrap()
    );
}

#[test]
fn convergence_demo_command_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::new(Command::ConvergenceDemo, dir.path())
        .with_override("dataset=synthetic")
        .with_override("T=300");
    assert_eq!(harness::run(&spec).unwrap().exit_code(), 0);
    let (header, rows) = csv_rows(&dir.path().join("convergence_summary.csv"));
    assert_eq!(header, "t_s,final_loss,final_objective,surviving");
    assert_eq!(rows.len(), 3);
    for t in ["1000", "10", "1"] {
        let (header, rows) = csv_rows(&dir.path().join(format!("convergence_ts{t}.csv")));
        assert_eq!(header, "iter,loss,objective,surviving");
        assert!(!rows.is_empty());
    }
    assert!(dir.path().join("convergence.gp").exists());
}

#[test]
fn bound_check_command_reports_each_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::new(Command::BoundCheck, dir.path())
        .with_override("bound_T=50,200")
        .with_override("bound_seeds=4")
        .with_override("reference_steps=5000");
    assert_eq!(harness::run(&spec).unwrap().exit_code(), 0);
    let (header, rows) = csv_rows(&dir.path().join("bound_check.csv"));
    assert_eq!(header, "T,n_seeds,mean_gap,max_gap,reference_loss,G,M,C,bound,satisfied");
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let gap: f64 = r[2].parse().unwrap();
        let bound: f64 = r[8].parse().unwrap();
        assert!(gap.is_finite() && bound.is_finite());
        assert_eq!(r[9] == "1" || r[9] == "true", gap <= bound);
    }
}
