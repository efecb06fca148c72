use super::collocation::hermite_eval;
use super::{BvpError, MeshFunction, SegmentMesh, SolveOptions};

fn refine_points(s: &[f64], est: &[f64], tol: f64, merge_below: Option<f64>) -> Vec<f64> {
    if est.iter().all(|&e| e <= tol) {
        return s.to_vec();
    }
    let mut out = vec![s[0]];
    let mut j = 0;
    while j < est.len() {
        let (a, b) = (s[j], s[j + 1]);
        if est[j] > tol {
            let pieces = if est[j] > 100.0 * tol { 3 } else { 2 };
            for q in 1..pieces {
                out.push(a + (b - a) * q as f64 / pieces as f64);
            }
            out.push(b);
            j += 1;
        } else if merge_below.is_some_and(|m| j + 1 < est.len() && est[j] < m && est[j + 1] < m) {
            out.push(s[j + 2]);
            j += 2;
        } else {
            out.push(b);
            j += 1;
        }
    }
    out
}

/// New normalized meshes: subintervals above `tol` get one interior point, or
/// two when the estimate overshoots by more than a factor 100. Segment ends
/// never move. Nothing changes when every estimate is within tolerance.
pub fn refine_mesh(mesh: &MeshFunction, estimates: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    mesh.segments.iter().zip(estimates).map(|(seg, est)| refine_points(&seg.s, est, tol, None)).collect()
}

pub(crate) fn refine_with(
    mesh: &MeshFunction,
    yp: &[Vec<f64>],
    est: &[Vec<f64>],
    opts: &SolveOptions,
) -> Result<MeshFunction, BvpError> {
    let grids: Vec<Vec<f64>> = mesh
        .segments
        .iter()
        .zip(est)
        .map(|(seg, e)| refine_points(&seg.s, e, opts.tol, opts.merge_below))
        .collect();
    let nodes: usize = grids.iter().map(|g| g.len()).sum();
    if nodes > opts.max_nodes {
        return Err(BvpError::MeshLimit { nodes, limit: opts.max_nodes });
    }
    let segments = mesh
        .segments
        .iter()
        .zip(yp)
        .zip(grids)
        .map(|((seg, f), s)| {
            let mut y = Vec::with_capacity(s.len() * seg.dim);
            for &x in &s {
                y.extend(hermite_eval(seg, f, x).0);
            }
            SegmentMesh { dim: seg.dim, s, y }
        })
        .collect();
    Ok(MeshFunction { segments, params: mesh.params.clone() })
}
