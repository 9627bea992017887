//! Measure the safety boundary from approach curves and draw seed points
//! inside it.

use tapmobo::params::ParameterGrid;
use tapmobo::seeding::{default_drive_samples, measure_thresholds, sample_safe_seeds, DEFAULT_DRIVE_SAMPLES, DEFAULT_SAFETY_MARGIN};
use tapmobo::sim::CantileverModel;

fn main() -> tapmobo::Result<()> {
    let grid = ParameterGrid::spm_default();
    let model = CantileverModel::default();
    let drives = default_drive_samples(&grid, DEFAULT_DRIVE_SAMPLES);
    let boundary = measure_thresholds(&model, &drives, DEFAULT_SAFETY_MARGIN)?;
    for (d, t) in boundary.drive_samples.iter().zip(&boundary.threshold_setpoints) {
        println!("drive {d:6.1} nm  threshold {t:.4}  admissible from {:.4}", boundary.threshold_at(*d));
    }
    let safe = boundary.safe_indices(&grid);
    println!("{} of {} grid points admissible", safe.len(), grid.len());
    for p in sample_safe_seeds(10, &grid, &boundary, 0)? {
        println!("  seed {p}");
    }
    Ok(())
}
