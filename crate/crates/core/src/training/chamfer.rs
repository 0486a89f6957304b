use ndarray::{Array2, ArrayView2};

use super::{Result, TrainingError};
use crate::network::Real;

/// Index of the nearest row of `set` to `q` (lowest index on ties) and the
/// squared distance.
fn nearest<F: Real>(q: [F; 3], set: &ArrayView2<F>) -> (usize, F) {
    let mut best = (0, F::infinity());
    for (j, row) in set.rows().into_iter().enumerate() {
        let dx = q[0] - row[0];
        let dy = q[1] - row[1];
        let dz = q[2] - row[2];
        let d = dx * dx + dy * dy + dz * dz;
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check<F>(a: &ArrayView2<F>, b: &ArrayView2<F>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(TrainingError::EmptySet);
    }
    if a.ncols() != 3 || b.ncols() != 3 {
        return Err(TrainingError::Config("point sets must be n x 3".into()));
    }
    Ok(())
}

/// Mean squared nearest-neighbor distance from `a` to `b` plus the reverse.
pub fn chamfer<F: Real>(a: ArrayView2<F>, b: ArrayView2<F>) -> Result<F> {
    check(&a, &b)?;
    let dir = |x: &ArrayView2<F>, y: &ArrayView2<F>| {
        let s: F = x
            .rows()
            .into_iter()
            .map(|r| nearest([r[0], r[1], r[2]], y).1)
            .sum();
        s * (F::one() / F::of(x.nrows() as f64))
    };
    Ok(dir(&a, &b) + dir(&b, &a))
}

fn directional<F: Real>(
    x: &ArrayView2<F>,
    y: &ArrayView2<F>,
    gx: &mut Array2<F>,
    gy: &mut Array2<F>,
) -> F {
    let w = F::one() / F::of(x.nrows() as f64);
    let two = F::of(2.0);
    let mut sum = F::zero();
    for (i, r) in x.rows().into_iter().enumerate() {
        let (j, d) = nearest([r[0], r[1], r[2]], y);
        sum += d;
        for k in 0..3 {
            let g = two * w * (r[k] - y[[j, k]]);
            gx[[i, k]] += g;
            gy[[j, k]] -= g;
        }
    }
    sum * w
}

/// Chamfer distance and its gradients w.r.t. `a` and `b`. Each term's
/// gradient flows through its matched pair only.
pub fn chamfer_with_grad<F: Real>(
    a: ArrayView2<F>,
    b: ArrayView2<F>,
) -> Result<(F, Array2<F>, Array2<F>)> {
    check(&a, &b)?;
    let mut ga = Array2::zeros(a.dim());
    let mut gb = Array2::zeros(b.dim());
    let total = directional(&a, &b, &mut ga, &mut gb) + directional(&b, &a, &mut gb, &mut ga);
    Ok((total, ga, gb))
}
