use faer::sparse::Triplet;

use super::linsolve::Entry;
use super::{BvpError, EvalError, MeshFunction, SegmentMesh, SegmentedBvp};

/// Interior Gauss-Lobatto-5 abscissae, where the cubic does not interpolate the ODE.
const SAMPLE: [f64; 2] = [0.5 - 0.327_326_835_353_988_6, 0.5 + 0.327_326_835_353_988_6];

/// Forward-difference step: a power of two near `sqrt(eps) max(|v|, scale)`,
/// then trimmed so that `v + h` is exact.
pub(crate) fn fd_step(v: f64, scale: f64) -> f64 {
    let h = (f64::EPSILON.sqrt() * v.abs().max(scale)).log2().round().exp2();
    (v + h) - v
}

pub(crate) fn node_derivatives(bvp: &dyn SegmentedBvp, mesh: &MeshFunction) -> Result<Vec<Vec<f64>>, EvalError> {
    let p = &mesh.params;
    mesh.segments
        .iter()
        .enumerate()
        .map(|(k, seg)| {
            let d = seg.dim;
            let mut f = vec![0.0; seg.y.len()];
            for j in 0..seg.n_nodes() {
                bvp.rhs(k, seg.s[j], seg.node(j), p, &mut f[j * d..(j + 1) * d])?;
            }
            Ok(f)
        })
        .collect()
}

fn seek(s: &[f64], x: f64) -> usize {
    match s.binary_search_by(|v| v.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Less)) {
        Ok(i) => i.min(s.len() - 2),
        Err(i) => i.saturating_sub(1).min(s.len() - 2),
    }
}

/// Cubic Hermite value and slope on the interval containing `x`.
pub(crate) fn hermite_eval(seg: &SegmentMesh, yp: &[f64], x: f64) -> (Vec<f64>, Vec<f64>) {
    let j = seek(&seg.s, x);
    hermite_on(seg, yp, j, x)
}

fn hermite_on(seg: &SegmentMesh, yp: &[f64], j: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let d = seg.dim;
    let (x0, x1) = (seg.s[j], seg.s[j + 1]);
    let h = x1 - x0;
    let t = (x - x0) / h;
    let (t2, t3) = (t * t, t * t * t);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let d00 = (6.0 * t2 - 6.0 * t) / h;
    let d10 = 3.0 * t2 - 4.0 * t + 1.0;
    let d01 = (-6.0 * t2 + 6.0 * t) / h;
    let d11 = 3.0 * t2 - 2.0 * t;
    let (y0, y1) = (seg.node(j), seg.node(j + 1));
    let (f0, f1) = (&yp[j * d..(j + 1) * d], &yp[(j + 1) * d..(j + 2) * d]);
    let mut v = vec![0.0; d];
    let mut dv = vec![0.0; d];
    for i in 0..d {
        v[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
        dv[i] = d00 * y0[i] + d10 * f0[i] + d01 * y1[i] + d11 * f1[i];
    }
    (v, dv)
}

fn midpoint(y0: &[f64], y1: &[f64], f0: &[f64], f1: &[f64], h: f64, out: &mut [f64]) {
    for i in 0..y0.len() {
        out[i] = 0.5 * (y0[i] + y1[i]) - h / 8.0 * (f1[i] - f0[i]);
    }
}

pub(crate) struct Layout {
    pub row_off: Vec<usize>,
    pub col_off: Vec<usize>,
    pub bc_row: usize,
    pub param_col: usize,
    pub n: usize,
}

impl Layout {
    pub fn new(mesh: &MeshFunction) -> Self {
        let (mut r, mut c) = (0, 0);
        let mut row_off = Vec::new();
        let mut col_off = Vec::new();
        for seg in &mesh.segments {
            row_off.push(r);
            col_off.push(c);
            r += (seg.n_nodes() - 1) * seg.dim;
            c += seg.n_nodes() * seg.dim;
        }
        Layout { row_off, col_off, bc_row: r, param_col: c, n: c + mesh.params.len() }
    }
}

/// Full scaled residual: collocation rows of every segment, then boundary rows.
pub fn residual(bvp: &dyn SegmentedBvp, mesh: &MeshFunction) -> Result<Vec<f64>, EvalError> {
    let lay = Layout::new(mesh);
    let yp = node_derivatives(bvp, mesh)?;
    let mut out = vec![0.0; lay.bc_row + bvp.n_bc()];
    let p = &mesh.params;
    for (k, seg) in mesh.segments.iter().enumerate() {
        let d = seg.dim;
        let f = &yp[k];
        let mut ym = vec![0.0; d];
        let mut fm = vec![0.0; d];
        let inv: Vec<f64> = (0..d).map(|i| 1.0 / bvp.y_scale(k, i)).collect();
        for j in 0..seg.n_nodes() - 1 {
            let h = seg.s[j + 1] - seg.s[j];
            let (y0, y1) = (seg.node(j), seg.node(j + 1));
            let (f0, f1) = (&f[j * d..(j + 1) * d], &f[(j + 1) * d..(j + 2) * d]);
            midpoint(y0, y1, f0, f1, h, &mut ym);
            bvp.rhs(k, 0.5 * (seg.s[j] + seg.s[j + 1]), &ym, p, &mut fm)?;
            let row = &mut out[lay.row_off[k] + j * d..lay.row_off[k] + (j + 1) * d];
            for i in 0..d {
                row[i] = (y1[i] - y0[i] - h / 6.0 * (f0[i] + 4.0 * fm[i] + f1[i])) * inv[i];
            }
        }
    }
    bvp.bc(&mesh.edges(), p, &mut out[lay.bc_row..])?;
    Ok(out)
}

/// Per-subinterval residual estimate of the collocation cubic:
/// `h * max |S' - f| / (1 + |f|)` in scaled components at the two interior
/// Lobatto-5 points. It is `O(h^4)` on smooth problems.
pub fn collocation_residual(bvp: &dyn SegmentedBvp, mesh: &MeshFunction) -> Result<Vec<Vec<f64>>, EvalError> {
    let yp = node_derivatives(bvp, mesh)?;
    estimates_with(bvp, mesh, &yp)
}

pub(crate) fn estimates_with(
    bvp: &dyn SegmentedBvp,
    mesh: &MeshFunction,
    yp: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, EvalError> {
    let p = &mesh.params;
    let mut all = Vec::with_capacity(mesh.segments.len());
    for (k, seg) in mesh.segments.iter().enumerate() {
        let d = seg.dim;
        let inv: Vec<f64> = (0..d).map(|i| 1.0 / bvp.y_scale(k, i)).collect();
        let mut f = vec![0.0; d];
        let mut est = Vec::with_capacity(seg.n_nodes() - 1);
        for j in 0..seg.n_nodes() - 1 {
            let h = seg.s[j + 1] - seg.s[j];
            let mut worst = 0.0f64;
            for a in SAMPLE {
                let x = seg.s[j] + a * h;
                let (v, dv) = hermite_on(seg, &yp[k], j, x);
                bvp.rhs(k, x, &v, p, &mut f)?;
                for i in 0..d {
                    let r = ((dv[i] - f[i]) * inv[i]).abs() / (1.0 + (f[i] * inv[i]).abs());
                    worst = worst.max(r);
                }
            }
            est.push(h * worst);
        }
        all.push(est);
    }
    Ok(all)
}

/// Sparse finite-difference Jacobian of [`residual`] in triplet form.
#[derive(Clone, Debug)]
pub struct GlobalJacobian {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<Entry>,
}

impl GlobalJacobian {
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n_cols]; self.n_rows];
        for e in &self.entries {
            m[e.row][e.col] += e.val;
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        for e in &self.entries {
            y[e.row] += e.val * x[e.col];
        }
        y
    }
}

struct Dense {
    n: usize,
    m: usize,
    a: Vec<f64>,
}

impl Dense {
    fn zeros(n: usize, m: usize) -> Self {
        Dense { n, m, a: vec![0.0; n * m] }
    }
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.m + j]
    }
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.m + j] = v;
    }
    /// self * other
    fn mul(&self, o: &Dense) -> Dense {
        let mut r = Dense::zeros(self.n, o.m);
        for i in 0..self.n {
            for k in 0..self.m {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..o.m {
                    r.a[i * o.m + j] += a * o.a[k * o.m + j];
                }
            }
        }
        r
    }
}

struct RhsEval<'a> {
    bvp: &'a dyn SegmentedBvp,
    seg: usize,
    dim: usize,
    pdeps: Vec<usize>,
    scales: Vec<f64>,
}

impl RhsEval<'_> {
    /// `df/dy` by forward differences around `(y, f0)`.
    fn jac_y(&self, s: f64, y: &[f64], f0: &[f64], p: &[f64]) -> Result<Dense, EvalError> {
        let d = self.dim;
        let mut jm = Dense::zeros(d, d);
        let mut yt = y.to_vec();
        let mut ft = vec![0.0; d];
        for c in 0..d {
            let h = fd_step(y[c], self.scales[c]);
            yt[c] = y[c] + h;
            self.bvp.rhs(self.seg, s, &yt, p, &mut ft)?;
            yt[c] = y[c];
            for i in 0..d {
                jm.set(i, c, (ft[i] - f0[i]) / h);
            }
        }
        Ok(jm)
    }

    /// `df/dp` over the parameters this segment reads, columns in `pdeps` order.
    fn jac_p(&self, s: f64, y: &[f64], f0: &[f64], p: &[f64]) -> Result<Dense, EvalError> {
        let d = self.dim;
        let mut jm = Dense::zeros(d, self.pdeps.len());
        let mut pt = p.to_vec();
        let mut ft = vec![0.0; d];
        for (c, &pi) in self.pdeps.iter().enumerate() {
            let h = fd_step(p[pi], self.bvp.param_scale(pi));
            pt[pi] = p[pi] + h;
            self.bvp.rhs(self.seg, s, y, &pt, &mut ft)?;
            pt[pi] = p[pi];
            for i in 0..d {
                jm.set(i, c, (ft[i] - f0[i]) / h);
            }
        }
        Ok(jm)
    }
}

pub fn jacobian(bvp: &dyn SegmentedBvp, mesh: &MeshFunction) -> Result<GlobalJacobian, BvpError> {
    let lay = Layout::new(mesh);
    let yp = node_derivatives(bvp, mesh)?;
    let p = &mesh.params;
    let np = p.len();
    let mut entries: Vec<Entry> = Vec::new();
    let push = |row: usize, col: usize, v: f64, entries: &mut Vec<Entry>| -> Result<(), BvpError> {
        if !v.is_finite() {
            return Err(BvpError::NonFiniteJacobian { row, col });
        }
        if v != 0.0 {
            entries.push(Triplet::new(row, col, v));
        }
        Ok(())
    };

    for (k, seg) in mesh.segments.iter().enumerate() {
        let d = seg.dim;
        let ev = RhsEval {
            bvp,
            seg: k,
            dim: d,
            pdeps: (0..np).filter(|&i| bvp.rhs_uses_param(k, i)).collect(),
            scales: (0..d).map(|i| bvp.y_scale(k, i)).collect(),
        };
        let inv: Vec<f64> = ev.scales.iter().map(|s| 1.0 / s).collect();
        let f = &yp[k];
        let nn = seg.n_nodes();
        let mut jy: Vec<Dense> = Vec::with_capacity(nn);
        let mut jp: Vec<Dense> = Vec::with_capacity(nn);
        for j in 0..nn {
            let fj = &f[j * d..(j + 1) * d];
            jy.push(ev.jac_y(seg.s[j], seg.node(j), fj, p)?);
            jp.push(ev.jac_p(seg.s[j], seg.node(j), fj, p)?);
        }
        let mut ym = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for j in 0..nn - 1 {
            let h = seg.s[j + 1] - seg.s[j];
            let sm = 0.5 * (seg.s[j] + seg.s[j + 1]);
            let (f0, f1) = (&f[j * d..(j + 1) * d], &f[(j + 1) * d..(j + 2) * d]);
            midpoint(seg.node(j), seg.node(j + 1), f0, f1, h, &mut ym);
            bvp.rhs(k, sm, &ym, p, &mut fm)?;
            let jm = ev.jac_y(sm, &ym, &fm, p)?;
            let jpm = ev.jac_p(sm, &ym, &fm, p)?;
            // dy_m/dy_j = I/2 + h/8 J_j, dy_m/dy_{j+1} = I/2 - h/8 J_{j+1}
            let mut dl = Dense::zeros(d, d);
            let mut dr = Dense::zeros(d, d);
            for r in 0..d {
                for c in 0..d {
                    let id = if r == c { 0.5 } else { 0.0 };
                    dl.set(r, c, id + h / 8.0 * jy[j].at(r, c));
                    dr.set(r, c, id - h / 8.0 * jy[j + 1].at(r, c));
                }
            }
            let ml = jm.mul(&dl);
            let mr = jm.mul(&dr);
            let row0 = lay.row_off[k] + j * d;
            let cl = lay.col_off[k] + j * d;
            let cr = cl + d;
            for r in 0..d {
                for c in 0..d {
                    let id = if r == c { 1.0 } else { 0.0 };
                    let a = -id - h / 6.0 * jy[j].at(r, c) - 2.0 * h / 3.0 * ml.at(r, c);
                    let b = id - h / 6.0 * jy[j + 1].at(r, c) - 2.0 * h / 3.0 * mr.at(r, c);
                    push(row0 + r, cl + c, a * inv[r], &mut entries)?;
                    push(row0 + r, cr + c, b * inv[r], &mut entries)?;
                }
            }
            if !ev.pdeps.is_empty() {
                // dy_m/dp = -h/8 (fp_{j+1} - fp_j)
                let npd = ev.pdeps.len();
                let mut dym = Dense::zeros(d, npd);
                for r in 0..d {
                    for c in 0..npd {
                        dym.set(r, c, -h / 8.0 * (jp[j + 1].at(r, c) - jp[j].at(r, c)));
                    }
                }
                let chain = jm.mul(&dym);
                for r in 0..d {
                    for (c, &pi) in ev.pdeps.iter().enumerate() {
                        let v = -h / 6.0 * (jp[j].at(r, c) + jp[j + 1].at(r, c))
                            - 2.0 * h / 3.0 * (jpm.at(r, c) + chain.at(r, c));
                        push(row0 + r, lay.param_col + pi, v * inv[r], &mut entries)?;
                    }
                }
            }
        }
    }

    // boundary rows: differences over segment-edge values and parameters
    let nbc = bvp.n_bc();
    let mut base = vec![0.0; nbc];
    bvp.bc(&mesh.edges(), p, &mut base)?;
    let mut work = mesh.clone();
    let mut rt = vec![0.0; nbc];
    for k in 0..mesh.segments.len() {
        let seg = &mesh.segments[k];
        let d = seg.dim;
        let last = seg.n_nodes() - 1;
        for node in [0, last] {
            for i in 0..d {
                let v = seg.node(node)[i];
                let h = fd_step(v, bvp.y_scale(k, i));
                work.segments[k].node_mut(node)[i] = v + h;
                bvp.bc(&work.edges(), p, &mut rt)?;
                work.segments[k].node_mut(node)[i] = v;
                let col = lay.col_off[k] + node * d + i;
                for r in 0..nbc {
                    push(lay.bc_row + r, col, (rt[r] - base[r]) / h, &mut entries)?;
                }
            }
        }
    }
    let mut pt = p.clone();
    for pi in 0..np {
        let h = fd_step(p[pi], bvp.param_scale(pi));
        pt[pi] = p[pi] + h;
        bvp.bc(&mesh.edges(), &pt, &mut rt)?;
        pt[pi] = p[pi];
        for r in 0..nbc {
            push(lay.bc_row + r, lay.param_col + pi, (rt[r] - base[r]) / h, &mut entries)?;
        }
    }
    Ok(GlobalJacobian { n_rows: lay.bc_row + nbc, n_cols: lay.n, entries })
}
