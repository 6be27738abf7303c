//! Regression comparison of two run directories: per-grid max relative
//! deviation against a tolerance, with strict shape checking.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use crate::artifacts::read_grid;
use crate::run::{EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_TOLERANCE};

#[derive(Serialize)]
struct GridComparison {
    name: String,
    shape: Vec<usize>,
    max_rel_dev: f64,
    passed: bool,
}

#[derive(Serialize)]
struct CompareReport {
    run_a: String,
    run_b: String,
    tolerance: f64,
    max_rel_dev: f64,
    passed: bool,
    grids: Vec<GridComparison>,
}

fn grid_names(dir: &Path) -> std::io::Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let file = entry.file_name();
        let file = file.to_string_lossy();
        if let Some(stem) = file.strip_suffix(".f64") {
            names.insert(stem.to_string());
        }
    }
    Ok(names)
}

fn rel_dev(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Compare every binary grid present in the two run directories; prints a
/// JSON report to stdout. Exit 0 when all grids pass, 3 on tolerance
/// failure, 2 on missing grids or shape mismatch.
pub fn compare_runs(dir_a: &Path, dir_b: &Path, tolerance: f64) -> i32 {
    let (names_a, names_b) = match (grid_names(dir_a), grid_names(dir_b)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("io error: {e}");
            return EXIT_IO;
        }
    };
    if names_a != names_b {
        let only_a: Vec<_> = names_a.difference(&names_b).cloned().collect();
        let only_b: Vec<_> = names_b.difference(&names_a).cloned().collect();
        eprintln!(
            "grid set mismatch: only in {}: {:?}; only in {}: {:?}",
            dir_a.display(),
            only_a,
            dir_b.display(),
            only_b
        );
        return EXIT_CONFIG;
    }
    if names_a.is_empty() {
        eprintln!("no binary grids found in {}", dir_a.display());
        return EXIT_CONFIG;
    }

    let mut grids = Vec::new();
    let mut max_dev = 0.0f64;
    for name in &names_a {
        let ((meta_a, vals_a), (meta_b, vals_b)) =
            match (read_grid(dir_a, name), read_grid(dir_b, name)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("io error reading grid {name}: {e}");
                    return EXIT_IO;
                }
            };
        let shape_a: Vec<usize> = meta_a.axes.iter().map(|a| a.count).collect();
        let shape_b: Vec<usize> = meta_b.axes.iter().map(|a| a.count).collect();
        if shape_a != shape_b || vals_a.len() != vals_b.len() {
            eprintln!("grid {name}: shape mismatch {shape_a:?} vs {shape_b:?}");
            return EXIT_CONFIG;
        }
        let dev = vals_a.iter().zip(&vals_b).map(|(&a, &b)| rel_dev(a, b)).fold(0.0f64, f64::max);
        max_dev = max_dev.max(dev);
        grids.push(GridComparison {
            name: name.clone(),
            shape: shape_a,
            max_rel_dev: dev,
            passed: dev <= tolerance,
        });
    }

    let passed = grids.iter().all(|g| g.passed);
    let report = CompareReport {
        run_a: dir_a.display().to_string(),
        run_b: dir_b.display().to_string(),
        tolerance,
        max_rel_dev: max_dev,
        passed,
        grids,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serialization"));
    if passed {
        EXIT_OK
    } else {
        EXIT_TOLERANCE
    }
}
