//! Time grids, discretized paths and weighted ensembles of paths.
//!
//! All laws in the crate are carried by [`Ensemble`]s on a uniform
//! [`TimeGrid`]. Time arguments are snapped to grid nodes; nothing is
//! interpolated.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const WEIGHT_TOL: f64 = 1e-12;

/// Uniform grid on `[0, T]` with `n_steps` cells. Node `k` sits at `k * dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::domain("time grid needs at least one step"));
        }
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::domain(format!("time horizon must be positive, got {t_end}")));
        }
        Ok(TimeGrid { t_end, n_steps, dt: t_end / n_steps as f64 })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, node: usize) -> f64 {
        node as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.time(k))
    }

    /// Nearest node to `t`; `t` must lie in `[0, T]`.
    pub fn snap(&self, t: f64) -> Result<usize> {
        let slack = 1e-9 * self.dt;
        if !t.is_finite() || t < -slack || t > self.t_end + slack {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.t_end)));
        }
        Ok(((t / self.dt).round() as usize).min(self.n_steps))
    }

    /// Node index of `t`, which must coincide with a node.
    pub fn node_of(&self, t: f64) -> Result<usize> {
        let k = self.snap(t)?;
        if (self.time(k) - t).abs() > 1e-9 * self.dt.max(t.abs()) {
            return Err(Error::domain(format!("time {t} is not a grid node (dt = {})", self.dt)));
        }
        Ok(k)
    }

    /// The grid on `[0, t_k]` with the same spacing.
    pub fn truncated(&self, node: usize) -> Result<Self> {
        if node == 0 || node > self.n_steps {
            return Err(Error::domain(format!("cannot truncate a {}-step grid at node {node}", self.n_steps)));
        }
        Ok(TimeGrid { t_end: self.time(node), n_steps: node, dt: self.dt })
    }

    /// Number of fine steps per coarse step when `self` refines `coarse`.
    pub fn refinement_of(&self, coarse: &TimeGrid) -> Option<usize> {
        if self.n_steps % coarse.n_steps != 0 {
            return None;
        }
        let ratio = self.n_steps / coarse.n_steps;
        let same_horizon = (self.t_end - coarse.t_end).abs() <= 1e-12 * coarse.t_end;
        same_horizon.then_some(ratio)
    }
}

/// A `d`-dimensional discretized trajectory, one value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl Path {
    /// `values` is node-major: node `k` occupies `values[k*dim..(k+1)*dim]`.
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("path dimension must be positive"));
        }
        if values.len() != grid.n_nodes() * dim {
            return Err(Error::domain(format!(
                "path has {} values, expected {} nodes x {dim}",
                values.len(),
                grid.n_nodes()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite path value at node {}", pos / dim)));
        }
        Ok(Path { grid, dim, values })
    }

    pub fn from_fn(grid: TimeGrid, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Result<Self> {
        let mut values = vec![0.0; grid.n_nodes() * dim];
        for (k, chunk) in values.chunks_mut(dim).enumerate() {
            f(grid.time(k), chunk);
        }
        Path::new(grid, dim, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    /// Read-only view of the path restricted to nodes `0..=node`.
    pub fn prefix(&self, node: usize) -> PathView<'_> {
        PathView::new(self.grid, self.dim, &self.values[..(node + 1) * self.dim])
    }

    pub fn view(&self) -> PathView<'_> {
        self.prefix(self.grid.n_steps())
    }
}

/// A path prefix `x|_{[0, t_k]}`. Kernels only ever see these, so they
/// cannot read the future of a trajectory.
#[derive(Clone, Copy, Debug)]
pub struct PathView<'a> {
    grid: TimeGrid,
    dim: usize,
    values: &'a [f64],
}

impl<'a> PathView<'a> {
    pub fn new(grid: TimeGrid, dim: usize, values: &'a [f64]) -> Self {
        debug_assert!(values.len() % dim == 0 && !values.is_empty());
        PathView { grid, dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index of the last visible node.
    pub fn node(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn time(&self) -> f64 {
        self.grid.time(self.node())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn at(&self, node: usize) -> &'a [f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    /// The value at the last visible node.
    pub fn current(&self) -> &'a [f64] {
        &self.values[self.values.len() - self.dim..]
    }

    /// `sup_{s <= t} |x_s|` over the visible prefix.
    pub fn running_sup(&self) -> f64 {
        self.values.chunks(self.dim).map(euclid).fold(0.0, f64::max)
    }
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sup_{0<=s<=t} |x_s|` with `t` snapped to the nearest node.
pub fn sup_norm(path: &Path, t: f64) -> Result<f64> {
    let node = path.grid.snap(t)?;
    Ok(path.prefix(node).running_sup())
}

/// γ-Hölder seminorm of `path` over node pairs in `[a, b]`.
pub fn holder_norm(path: &Path, gamma: f64, a: f64, b: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::domain(format!("Hölder exponent must lie in (0, 1], got {gamma}")));
    }
    let grid = path.grid;
    let (ia, ib) = (grid.node_of(a)?, grid.node_of(b)?);
    if ia >= ib {
        return Err(Error::domain(format!("empty interval [{a}, {b}]")));
    }
    let mut best = 0.0f64;
    for j in ia + 1..=ib {
        let xj = path.at(j);
        for i in ia..j {
            let diff = xj.iter().zip(path.at(i)).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let q = diff / (grid.time(j) - grid.time(i)).powf(gamma);
            best = best.max(q);
        }
    }
    Ok(best)
}

/// Weighted point cloud in `R^d`: the time-`t` marginal of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedCloud {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedCloud {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != weights.len() * dim {
            return Err(Error::domain("point/weight count mismatch"));
        }
        if weights.is_empty() {
            return Err(Error::domain("empty measure"));
        }
        check_weights(&weights)?;
        Ok(WeightedCloud { dim, points, weights })
    }

    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let m = points.len() / dim.max(1);
        WeightedCloud::new(dim, points, vec![1.0 / m.max(1) as f64; m])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - w0).abs() <= 1e-15)
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::domain("weights must be finite and nonnegative"));
    }
    // compensated sum, so large uniform ensembles do not drift past the tolerance
    let (mut total, mut carry) = (0.0f64, 0.0f64);
    for w in weights {
        let y = w - carry;
        let t = total + y;
        carry = (t - total) - y;
        total = t;
    }
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::domain(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// A weighted collection of paths sharing one grid and dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    grid: TimeGrid,
    dim: usize,
    paths: Vec<Path>,
    weights: Vec<f64>,
}

/// Empirical law on path space.
pub type EmpiricalMeasure = Ensemble;

impl Ensemble {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        let m = paths.len();
        Ensemble::with_weights(paths, vec![1.0 / m.max(1) as f64; m])
    }

    pub fn with_weights(paths: Vec<Path>, weights: Vec<f64>) -> Result<Self> {
        let first = paths.first().ok_or_else(|| Error::domain("empty ensemble"))?;
        let (grid, dim) = (first.grid, first.dim);
        if paths.iter().any(|p| p.grid != grid || p.dim != dim) {
            return Err(Error::domain("ensemble paths must share grid and dimension"));
        }
        if weights.len() != paths.len() {
            return Err(Error::domain("one weight per path required"));
        }
        check_weights(&weights)?;
        Ok(Ensemble { grid, dim, paths, weights })
    }

    /// The mixture `alpha * a + (1 - alpha) * b`.
    pub fn mixture(a: &Ensemble, alpha: f64, b: &Ensemble) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::domain("mixture weight must lie in [0, 1]"));
        }
        let paths = a.paths.iter().chain(&b.paths).cloned().collect();
        let weights =
            a.weights.iter().map(|w| alpha * w).chain(b.weights.iter().map(|w| (1.0 - alpha) * w)).collect::<Vec<_>>();
        let total: f64 = weights.iter().sum();
        Ensemble::with_weights(paths, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn path(&self, i: usize) -> &Path {
        &self.paths[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Time-`t` values with the ensemble weights. `t` must be a node.
    pub fn marginal(&self, t: f64) -> Result<WeightedCloud> {
        Ok(self.marginal_at(self.grid.node_of(t)?))
    }

    pub fn marginal_at(&self, node: usize) -> WeightedCloud {
        let points = self.paths.iter().flat_map(|p| p.at(node).iter().copied()).collect();
        WeightedCloud { dim: self.dim, points, weights: self.weights.clone() }
    }

    /// Every path truncated at node `t`, weights preserved.
    pub fn project(&self, t: f64) -> Result<Ensemble> {
        let node = self.grid.node_of(t)?;
        let grid = self.grid.truncated(node)?;
        let paths = self
            .paths
            .iter()
            .map(|p| Path { grid, dim: self.dim, values: p.values[..(node + 1) * self.dim].to_vec() })
            .collect();
        Ok(Ensemble { grid, dim: self.dim, paths, weights: self.weights.clone() })
    }

    /// CSV with header `path_id,t,x1,...,xd`, one row per (path, node).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path_id".to_string(), "t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (id, p) in self.paths.iter().enumerate() {
            for k in 0..self.grid.n_nodes() {
                let mut row = vec![id.to_string(), self.grid.time(k).to_string()];
                row.extend(p.at(k).iter().map(|v| (v + 0.0).to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`Ensemble::write_csv`]; weights are uniform.
    pub fn read_csv<R: Read>(input: R) -> Result<Ensemble> {
        let mut r = csv::Reader::from_reader(input);
        let dim = r
            .headers()?
            .len()
            .checked_sub(2)
            .filter(|d| *d > 0)
            .ok_or_else(|| Error::domain("ensemble CSV needs columns path_id,t,x1,..."))?;
        let mut rows: Vec<(usize, f64, Vec<f64>)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::domain(format!("bad number {s:?}: {e}")));
            let id = rec[0].trim().parse::<usize>().map_err(|e| Error::domain(format!("bad path_id: {e}")))?;
            let t = parse(&rec[1])?;
            let x = (2..2 + dim).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?;
            rows.push((id, t, x));
        }
        let n_paths = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
        if n_paths == 0 || rows.len() % n_paths != 0 {
            return Err(Error::domain("ensemble CSV has ragged paths"));
        }
        let n_nodes = rows.len() / n_paths;
        let t_end = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        let grid = TimeGrid::new(t_end, n_nodes - 1)?;
        let mut values = vec![Vec::with_capacity(n_nodes * dim); n_paths];
        for (id, _, x) in rows {
            values[id].extend(x);
        }
        let paths = values.into_iter().map(|v| Path::new(grid, dim, v)).collect::<Result<Vec<_>>>()?;
        Ensemble::new(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn sup_norm_examples() {
        let g = grid(10);
        let c = Path::from_fn(g, 1, |_, x| x[0] = 3.0).unwrap();
        assert_eq!(sup_norm(&c, 1.0).unwrap(), 3.0);
        let lin = Path::from_fn(g, 1, |t, x| x[0] = t).unwrap();
        assert_abs_diff_eq!(sup_norm(&lin, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        let zero = Path::from_fn(g, 2, |_, x| x.fill(0.0)).unwrap();
        assert_eq!(sup_norm(&zero, 0.3).unwrap(), 0.0);
        assert!(matches!(sup_norm(&lin, 1.5), Err(Error::Domain(_))));
        assert!(sup_norm(&lin, -0.1).is_err());
    }

    #[test]
    fn holder_norm_examples() {
        let g = grid(64);
        let lin = Path::from_fn(g, 1, |t, x| x[0] = -2.5 * t).unwrap();
        for gamma in [0.2, 0.5, 1.0] {
            assert_abs_diff_eq!(holder_norm(&lin, gamma, 0.0, 1.0).unwrap(), 2.5, epsilon = 1e-12);
        }
        let c = Path::from_fn(g, 1, |_, x| x[0] = 4.0).unwrap();
        assert_eq!(holder_norm(&c, 0.5, 0.0, 1.0).unwrap(), 0.0);
        let root = Path::from_fn(g, 1, |t, x| x[0] = t.sqrt()).unwrap();
        assert_abs_diff_eq!(holder_norm(&root, 0.5, 0.0, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert!(holder_norm(&lin, 0.5, 0.5, 0.5).is_err());
        assert!(holder_norm(&lin, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn marginal_and_project() {
        let g = grid(4);
        let p1 = Path::from_fn(g, 1, |t, x| x[0] = t).unwrap();
        let p2 = Path::from_fn(g, 1, |t, x| x[0] = 1.0 + t).unwrap();
        let e = Ensemble::new(vec![p1.clone(), p2]).unwrap();
        assert_eq!(e.project(1.0).unwrap(), e);
        let m0 = e.marginal(0.0).unwrap();
        assert_eq!(m0.points(), &[0.0, 1.0]);
        assert_eq!(m0.weights(), &[0.5, 0.5]);
        let single = Ensemble::new(vec![p1]).unwrap();
        let m = single.marginal(0.75).unwrap();
        assert_eq!((m.points(), m.weights()), (&[0.75][..], &[1.0][..]));
        assert!(e.marginal(0.3).is_err());
        assert!(e.project(0.0).is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let g = grid(2);
        let p = Path::from_fn(g, 1, |_, x| x[0] = 0.0).unwrap();
        assert!(Ensemble::with_weights(vec![p.clone(), p.clone()], vec![0.5, 0.6]).is_err());
        assert!(Ensemble::with_weights(vec![p.clone(), p], vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn path_rejects_bad_values() {
        let g = grid(2);
        assert!(Path::new(g, 1, vec![0.0, 1.0]).is_err());
        assert!(Path::new(g, 1, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = TimeGrid::new(0.5, 3).unwrap();
        let paths = (0..3)
            .map(|i| Path::from_fn(g, 2, |t, x| x.copy_from_slice(&[t * i as f64, -0.1 * i as f64])).unwrap())
            .collect();
        let e = Ensemble::new(paths).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("path_id,t,x1,x2\n0,0,0,0\n"));
        let back = Ensemble::read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.paths().iter().zip(e.paths()) {
            assert_eq!(a.values(), b.values());
        }
    }

    fn arb_path() -> impl Strategy<Value = Path> {
        (1usize..24, prop::collection::vec(-5.0f64..5.0, 25)).prop_map(|(n, v)| {
            let g = TimeGrid::new(1.0, n).unwrap();
            Path::new(g, 1, v[..=n].to_vec()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn sup_norm_is_nondecreasing(p in arb_path()) {
            let g = *p.grid();
            let mut prev = 0.0;
            for k in 0..g.n_nodes() {
                let s = sup_norm(&p, g.time(k)).unwrap();
                prop_assert!(s >= prev);
                prev = s;
            }
        }

        #[test]
        fn holder_quotients_order_on_unit_interval(p in arb_path(), g1 in 0.05f64..1.0, dg in 0.0f64..0.5) {
            let g2 = (g1 + dg).min(1.0);
            if p.grid().n_steps() >= 1 {
                let lo = holder_norm(&p, g1, 0.0, 1.0).unwrap();
                let hi = holder_norm(&p, g2, 0.0, 1.0).unwrap();
                prop_assert!(lo <= hi + 1e-12);
            }
        }

        #[test]
        fn project_is_prefix_idempotent(p in arb_path(), a in 0usize..24, b in 0usize..24) {
            let g = *p.grid();
            let n = g.n_steps();
            let (s, t) = (1 + a.min(b) % n, 1 + a.max(b) % n);
            let (s, t) = (s.min(t), s.max(t));
            let e = Ensemble::new(vec![p.clone()]).unwrap();
            let twice = e.project(g.time(t)).unwrap().project(g.time(s)).unwrap();
            let once = e.project(g.time(s)).unwrap();
            prop_assert_eq!(twice.path(0).values(), once.path(0).values());
            prop_assert_eq!(twice.grid(), once.grid());
        }
    }
}
