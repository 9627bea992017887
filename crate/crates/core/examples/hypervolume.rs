//! Exact hypervolume, per-point contributions and a Monte Carlo cross-check.

use tapmobo::pareto::{hypervolume, hypervolume_contribution, hypervolume_mc, non_dominated, ReferencePoint};

fn main() -> tapmobo::Result<()> {
    let points = vec![
        vec![1.0, 0.5],
        vec![0.5, 1.0],
        vec![0.8, 0.8],
        vec![0.4, 0.4],
    ];
    let reference = ReferencePoint::new(vec![0.0, 0.0]);
    let front = non_dominated(&points)?;
    println!("non-dominated: {front:?}");
    println!("hypervolume: {}", hypervolume(&points, &reference)?);
    for i in 0..points.len() {
        println!("  contribution of {:?}: {:.4}", points[i], hypervolume_contribution(&points, &reference, i)?);
    }

    let cube = vec![vec![0.9, 0.2, 0.6], vec![0.3, 0.8, 0.5], vec![0.5, 0.5, 0.9]];
    let r3 = ReferencePoint::new(vec![0.0; 3]);
    let exact = hypervolume(&cube, &r3)?;
    let (est, se) = hypervolume_mc(&cube, &r3, 1_000_000, 1)?;
    println!("3-D exact {exact:.5}, sampled {est:.5} +/- {se:.5}");
    Ok(())
}
