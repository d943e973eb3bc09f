//! Rectangle-union approximations of encoder cells, for blocklengths 1 and 2.
//!
//! Each encoder of a base code is replaced by one whose cells are finite
//! unions of bounded axis-aligned rectangles. Inputs outside every cell map to
//! the erasure index 0, and any decoder receiving an erasure outputs the zero
//! vector. The modified encoders are discontinuous only on rectangle edges.
//!
//! Cells are built by labeling a uniform grid over a high-probability box with
//! the base encoder's value at each grid-cell center and merging equal
//! neighbors.

use std::fmt::Write as _;

use crate::codecs::{check_dims, squared_error, FiniteCode, MultiterminalCode};
use crate::error::{Error, Result};
use crate::montecarlo::{run_trials, Estimate};
use crate::sources::{Family, SourceSpec};

/// Largest supported input dimension.
pub const MAX_DIM: usize = 2;

/// Half-open axis-aligned rectangle `[lo, hi)` assigned to cell `cell`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    pub cell: u64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo && v < hi)
    }

    fn overlaps(&self, other: &Rect) -> bool {
        (0..self.lo.len()).all(|d| self.lo[d] < other.hi[d] && other.lo[d] < self.hi[d])
    }
}

/// Cells `1..=J` as finite unions of disjoint bounded rectangles; everything
/// else is the erasure region, label 0.
///
/// Lookup runs on the elementary grid induced by all rectangle edges, which
/// represents exactly the same partition as the rectangle list.
#[derive(Debug, Clone, PartialEq)]
pub struct RectPartition {
    dim: usize,
    rects: Vec<Rect>,
    /// Sorted breakpoints per axis.
    axes: Vec<Vec<f64>>,
    /// Label of each elementary cell; axis 0 varies fastest.
    labels: Vec<u64>,
}

impl RectPartition {
    /// Builds a partition from rectangles. Rectangles of the same cell must
    /// be disjoint; where rectangles of different cells overlap, the region
    /// belongs to neither and maps to 0.
    pub fn from_rects(dim: usize, rects: Vec<Rect>) -> Result<Self> {
        check_dim(dim)?;
        for r in &rects {
            if r.cell == 0 {
                return Err(Error::invalid("cell id 0 is reserved for erasure"));
            }
            if r.lo.len() != dim || r.hi.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    actual: r.lo.len().min(r.hi.len()),
                });
            }
            if r.lo.iter().chain(&r.hi).any(|v| !v.is_finite())
                || r.lo.iter().zip(&r.hi).any(|(a, b)| a >= b)
            {
                return Err(Error::invalid(format!(
                    "rectangle {r:?} is empty or unbounded"
                )));
            }
        }
        for (i, a) in rects.iter().enumerate() {
            if let Some(b) = rects[i + 1..]
                .iter()
                .find(|b| b.cell == a.cell && a.overlaps(b))
            {
                return Err(Error::invalid(format!(
                    "rectangles {a:?} and {b:?} of the same cell overlap"
                )));
            }
        }
        let axes: Vec<Vec<f64>> = (0..dim)
            .map(|d| {
                let mut pts: Vec<f64> = rects.iter().flat_map(|r| [r.lo[d], r.hi[d]]).collect();
                pts.sort_by(f64::total_cmp);
                pts.dedup();
                pts
            })
            .collect();
        let shape: Vec<usize> = axes.iter().map(|a| a.len().saturating_sub(1)).collect();
        let total: usize = shape.iter().product();
        let mut labels = vec![0u64; total];
        let mut owners = vec![0u8; total];
        for r in &rects {
            let ranges: Vec<(usize, usize)> = (0..dim)
                .map(|d| (locate(&axes[d], r.lo[d]), locate(&axes[d], r.hi[d])))
                .collect();
            for_each_index(&ranges, &shape, |flat| {
                if owners[flat] == 0 || labels[flat] != r.cell {
                    owners[flat] = owners[flat].saturating_add(1);
                }
                labels[flat] = r.cell;
            });
        }
        for (label, owner) in labels.iter_mut().zip(&owners) {
            if *owner > 1 {
                *label = 0;
            }
        }
        Ok(Self {
            dim,
            rects,
            axes,
            labels,
        })
    }

    /// Labels a uniform grid of `resolution` cells per axis over
    /// `[-half_width, half_width)^dim` by `label(center)` and merges
    /// equal-label neighbors into rectangles.
    pub fn from_grid<F>(dim: usize, half_width: f64, resolution: usize, label: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> u64,
    {
        check_dim(dim)?;
        if resolution == 0 || !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid(
                "grid needs positive resolution and half width",
            ));
        }
        let step = 2.0 * half_width / resolution as f64;
        let line: Vec<f64> = (0..=resolution)
            .map(|i| -half_width + i as f64 * step)
            .collect();
        let axes = vec![line; dim];
        let shape = vec![resolution; dim];
        let total: usize = shape.iter().product();
        let mut labels = Vec::with_capacity(total);
        let mut center = vec![0.0; dim];
        for flat in 0..total {
            let mut rest = flat;
            for (d, c) in center.iter_mut().enumerate() {
                let i = rest % shape[d];
                rest /= shape[d];
                *c = 0.5 * (axes[d][i] + axes[d][i + 1]);
            }
            let j = label(&center);
            if j == 0 {
                return Err(Error::invalid("encoder labels must start at 1"));
            }
            labels.push(j);
        }
        let rects = merge_runs(&axes, &shape, &labels);
        Ok(Self {
            dim,
            rects,
            axes,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    /// Rectangles of cell `j`.
    pub fn cell_rects(&self, j: u64) -> impl Iterator<Item = &Rect> {
        self.rects.iter().filter(move |r| r.cell == j)
    }

    /// Largest cell id present.
    pub fn num_cells(&self) -> u64 {
        self.rects.iter().map(|r| r.cell).max().unwrap_or(0)
    }

    /// The modified encoder: `j` inside cell `j`'s rectangles only, else 0.
    pub fn lookup(&self, x: &[f64]) -> u64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut flat = 0;
        let mut stride = 1;
        for (d, &v) in x.iter().enumerate() {
            let axis = &self.axes[d];
            if axis.len() < 2 || !(v >= axis[0] && v < axis[axis.len() - 1]) {
                return 0;
            }
            let i = axis.partition_point(|&a| a <= v) - 1;
            flat += i * stride;
            stride *= axis.len() - 1;
        }
        self.labels[flat]
    }

    /// Lookup by scanning the rectangle list; agrees with [`lookup`](Self::lookup).
    pub fn lookup_by_scan(&self, x: &[f64]) -> u64 {
        let mut hits = self.rects.iter().filter(|r| r.contains(x));
        match (hits.next(), hits.next()) {
            (Some(r), None) => r.cell,
            (Some(a), Some(b)) if a.cell == b.cell => a.cell,
            _ => 0,
        }
    }

    /// One rectangle per line: `cell_id xmin xmax [ymin ymax]`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rects {
            let _ = write!(out, "{}", r.cell);
            for d in 0..self.dim {
                let _ = write!(out, " {} {}", r.lo[d], r.hi[d]);
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output; the dimension is inferred
    /// from the first line (3 fields: 1-d, 5 fields: 2-d).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut rects = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let d = match fields.len() {
                3 => 1,
                5 => 2,
                n => return Err(parse_err(format!("expected 3 or 5 fields, got {n}"))),
            };
            if *dim.get_or_insert(d) != d {
                return Err(parse_err("mixed rectangle dimensions".into()));
            }
            let cell: u64 = fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad cell id `{}`", fields[0])))?;
            let coords = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| parse_err(format!("bad coordinate `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rects.push(Rect {
                cell,
                lo: coords.iter().step_by(2).copied().collect(),
                hi: coords.iter().skip(1).step_by(2).copied().collect(),
            });
        }
        Self::from_rects(dim.unwrap_or(1), rects)
    }

    /// Labels of the elementary grid padded with one erasure cell on every side.
    fn padded(&self) -> (Vec<usize>, Vec<u64>) {
        let shape: Vec<usize> = self
            .axes
            .iter()
            .map(|a| a.len().saturating_sub(1) + 2)
            .collect();
        let total: usize = shape.iter().product();
        let mut out = vec![0u64; total];
        let inner: Vec<usize> = shape.iter().map(|s| s - 2).collect();
        let ranges: Vec<(usize, usize)> = inner.iter().map(|&s| (0, s)).collect();
        let mut src = 0;
        for_each_index(&ranges, &inner, |flat| {
            let mut rest = flat;
            let mut dst = 0;
            let mut stride = 1;
            for d in 0..self.dim {
                dst += (rest % inner[d] + 1) * stride;
                rest /= inner[d];
                stride *= shape[d];
            }
            out[dst] = self.labels[src];
            src += 1;
        });
        (shape, out)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::invalid(format!(
            "rectangularization supports dimension 1 or 2, got {dim}"
        )));
    }
    Ok(())
}

fn locate(axis: &[f64], v: f64) -> usize {
    axis.partition_point(|&a| a < v)
}

/// Calls `f(flat)` for every multi-index in the half-open `ranges`.
fn for_each_index<F: FnMut(usize)>(ranges: &[(usize, usize)], shape: &[usize], mut f: F) {
    match ranges.len() {
        1 => (ranges[0].0..ranges[0].1).for_each(f),
        2 => {
            for j in ranges[1].0..ranges[1].1 {
                for i in ranges[0].0..ranges[0].1 {
                    f(i + j * shape[0]);
                }
            }
        }
        _ => unreachable!("dimension is checked"),
    }
}

/// Merges equal labels along axis 0, then stacks identical runs along axis 1.
fn merge_runs(axes: &[Vec<f64>], shape: &[usize], labels: &[u64]) -> Vec<Rect> {
    let width = shape[0];
    let rows = if shape.len() == 2 { shape[1] } else { 1 };
    let mut done = Vec::new();
    // open runs: (label, i_start, i_end, j_start)
    let mut open: Vec<(u64, usize, usize, usize)> = Vec::new();
    for j in 0..rows {
        let row = &labels[j * width..(j + 1) * width];
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..=width {
            if i == width || row[i] != row[start] {
                if row[start] != 0 {
                    runs.push((row[start], start, i));
                }
                start = i;
            }
        }
        let mut next_open = Vec::with_capacity(runs.len());
        for (label, a, b) in runs {
            match open
                .iter()
                .position(|&(l, s, e, _)| l == label && s == a && e == b)
            {
                Some(p) => next_open.push(open.swap_remove(p)),
                None => next_open.push((label, a, b, j)),
            }
        }
        for (label, a, b, j0) in open.drain(..) {
            done.push(make_rect(axes, label, a, b, j0, j));
        }
        open = next_open;
    }
    for (label, a, b, j0) in open {
        done.push(make_rect(axes, label, a, b, j0, rows));
    }
    done.sort_by(|x, y| {
        x.cell
            .cmp(&y.cell)
            .then(x.lo.iter().rev().partial_cmp(y.lo.iter().rev()).unwrap())
    });
    done
}

fn make_rect(axes: &[Vec<f64>], cell: u64, a: usize, b: usize, j0: usize, j1: usize) -> Rect {
    let mut lo = vec![axes[0][a]];
    let mut hi = vec![axes[0][b]];
    if axes.len() == 2 {
        lo.push(axes[1][j0]);
        hi.push(axes[1][j1]);
    }
    Rect { cell, lo, hi }
}

/// Half width of a box `[-h, h)^dim` holding all but `delta/2` of the
/// probability of `dim` consecutive samples of component `m`.
///
/// Bounded families use 1.25 times their support, keeping atoms away from the
/// box edge; Gaussian uses the exact marginal quantile; otherwise a
/// fourth-moment Markov bound.
pub fn high_probability_half_width(spec: &SourceSpec, m: usize, dim: usize, delta: f64) -> f64 {
    // per coordinate tail budget delta / (2 dim), split over both tails for the Gaussian
    let per_coord = delta / (2.0 * dim as f64);
    if let Some(bound) = spec.component_support_bound(m) {
        return 1.25 * bound;
    }
    let var = spec.covariance().get(m, m);
    if spec.family() == Family::Gaussian {
        use statrs::distribution::{ContinuousCDF, Normal};
        let q = Normal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(1.0 - per_coord / 2.0);
        return var.sqrt() * q;
    }
    (spec.component_fourth_moment(m) / per_coord).powf(0.25)
}

/// Tuning for [`rectangularize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectOptions {
    /// Per-cell symmetric-difference budget.
    pub delta: f64,
    /// Grid cells per axis.
    pub resolution: usize,
    /// Monte Carlo samples for the symmetric-difference check.
    pub trials: usize,
}

impl Default for RectOptions {
    fn default() -> Self {
        Self {
            delta: 1e-2,
            resolution: 256,
            trials: 1_000_000,
        }
    }
}

/// Per-cell symmetric-difference estimates of a rectangularized encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricDifference {
    /// Index `j - 1` holds `Pr[x in B_j (sym. diff.) B~_j]`.
    pub per_cell: Vec<Estimate>,
    pub trials: usize,
}

impl SymmetricDifference {
    /// Estimate plus three standard errors, floored at the rule-of-three bound `3/N`.
    pub fn upper(&self) -> Vec<f64> {
        let floor = 3.0 / self.trials as f64;
        self.per_cell
            .iter()
            .map(|e| (e.mean + 3.0 * e.stderr).max(floor))
            .collect()
    }
}

/// Measures `Pr[x in B_j (sym. diff.) B~_j]` for `j = 1..=cells`.
pub fn symmetric_difference<F>(
    encoder: F,
    cells: u64,
    partition: &RectPartition,
    spec: &SourceSpec,
    m: usize,
    trials: usize,
) -> SymmetricDifference
where
    F: Fn(&[f64]) -> u64 + Sync,
{
    let cells = cells as usize;
    let dim = partition.dim();
    let moments = run_trials(spec, trials, dim, cells, |rows, out| {
        let x = rows[m];
        out.fill(0.0);
        let (a, b) = (encoder(x), partition.lookup(x));
        if a != b {
            for j in [a, b] {
                if (1..=cells as u64).contains(&j) {
                    out[j as usize - 1] = 1.0;
                }
            }
        }
    });
    SymmetricDifference {
        per_cell: moments.into_iter().map(Estimate::from).collect(),
        trials,
    }
}

/// Approximates the cells of `encoder` (labels `1..=cells`) by rectangle
/// unions for `dim` consecutive samples of source component `m`.
///
/// Fails with [`Error::BudgetNotMet`] when some cell's symmetric difference
/// is not certifiably below `delta`; the caller should raise the resolution.
pub fn rectangularize<F>(
    encoder: F,
    cells: u64,
    spec: &SourceSpec,
    m: usize,
    dim: usize,
    options: &RectOptions,
) -> Result<RectPartition>
where
    F: Fn(&[f64]) -> u64 + Sync,
{
    let delta = options.delta;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if m >= spec.k() {
        return Err(Error::invalid(format!("component {m} out of range")));
    }
    let half_width = high_probability_half_width(spec, m, dim, delta);
    let partition = RectPartition::from_grid(dim, half_width, options.resolution, &encoder)?;
    let diff = symmetric_difference(&encoder, cells, &partition, spec, m, options.trials);
    let upper = diff.upper();
    if upper.iter().any(|&u| u >= delta) {
        return Err(Error::BudgetNotMet {
            delta,
            measured: upper,
        });
    }
    Ok(partition)
}

/// Fraction of samples within `eta` (sup-norm) of a cell boundary, including
/// the boundary with the erasure region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryMassRow {
    pub eta: f64,
    pub fraction: Estimate,
}

struct BoundaryIndex<'a> {
    partition: &'a RectPartition,
    shape: Vec<usize>,
    /// Prefix sums of label changes between neighbors along each axis.
    edges: Vec<Vec<u32>>,
}

impl<'a> BoundaryIndex<'a> {
    fn new(partition: &'a RectPartition) -> Self {
        let (shape, labels) = partition.padded();
        let dim = shape.len();
        let n0 = shape[0];
        let n1 = if dim == 2 { shape[1] } else { 1 };
        let at = |i: usize, j: usize| labels[i + j * n0];
        let mut edges = Vec::with_capacity(dim);
        for axis in 0..dim {
            // prefix[(i+1) + (j+1)*(n0+1)] = changes in [0, i] x [0, j]
            let stride = n0 + 1;
            let mut prefix = vec![0u32; stride * (n1 + 1)];
            for j in 0..n1 {
                for i in 0..n0 {
                    let change = match axis {
                        0 => i + 1 < n0 && at(i, j) != at(i + 1, j),
                        _ => j + 1 < n1 && at(i, j) != at(i, j + 1),
                    } as u32;
                    prefix[(i + 1) + (j + 1) * stride] =
                        change + prefix[i + (j + 1) * stride] + prefix[(i + 1) + j * stride]
                            - prefix[i + j * stride];
                }
            }
            edges.push(prefix);
        }
        Self {
            partition,
            shape,
            edges,
        }
    }

    /// Padded index of the elementary cell containing `v` on axis `d`.
    fn cell(&self, d: usize, v: f64) -> usize {
        let axis = &self.partition.axes[d];
        if axis.is_empty() || v < axis[0] {
            0
        } else if v >= axis[axis.len() - 1] {
            self.shape[d] - 1
        } else {
            axis.partition_point(|&a| a <= v)
        }
    }

    fn changes(&self, axis: usize, lo: [usize; 2], hi: [usize; 2]) -> u32 {
        // inclusive box [lo, hi]
        let stride = self.shape[0] + 1;
        let p = &self.edges[axis];
        let get = |i: usize, j: usize| p[i + j * stride];
        get(hi[0] + 1, hi[1] + 1) + get(lo[0], lo[1])
            - get(lo[0], hi[1] + 1)
            - get(hi[0] + 1, lo[1])
    }

    fn near_boundary(&self, x: &[f64], eta: f64) -> bool {
        let dim = x.len();
        let mut lo = [0usize; 2];
        let mut hi = [0usize; 2];
        for d in 0..dim {
            lo[d] = self.cell(d, x[d] - eta);
            hi[d] = self.cell(d, x[d] + eta);
        }
        // edges along axis a inside the box connect cells [lo_a, hi_a - 1] to their +1 neighbor
        (0..dim).any(|a| {
            if hi[a] == lo[a] {
                return false;
            }
            let mut top = hi;
            top[a] -= 1;
            self.changes(a, lo, top) > 0
        })
    }
}

/// For each `eta`, the fraction of `dim`-sample inputs of component `m` lying
/// within sup-norm distance `eta` of a boundary of `partition`.
pub fn boundary_mass_scan(
    partition: &RectPartition,
    spec: &SourceSpec,
    m: usize,
    eta_list: &[f64],
    trials: usize,
) -> Result<Vec<BoundaryMassRow>> {
    if eta_list.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::invalid("eta values must be nonnegative"));
    }
    if eta_list.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::invalid("eta values must be descending"));
    }
    let index = BoundaryIndex::new(partition);
    let moments = run_trials(
        spec,
        trials,
        partition.dim(),
        eta_list.len(),
        |rows, out| {
            let x = rows[m];
            for (o, &eta) in out.iter_mut().zip(eta_list) {
                *o = (eta > 0.0 && index.near_boundary(x, eta)) as u8 as f64;
            }
        },
    );
    Ok(eta_list
        .iter()
        .zip(moments)
        .map(|(&eta, mo)| BoundaryMassRow {
            eta,
            fraction: mo.into(),
        })
        .collect())
}

/// Paired check that boundary mass is linear at small `eta`: returns the
/// estimate of `fraction(eta) - 2 fraction(eta / 2)` from the same samples.
pub fn boundary_halving(
    partition: &RectPartition,
    spec: &SourceSpec,
    m: usize,
    eta: f64,
    trials: usize,
) -> Result<Estimate> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    let index = BoundaryIndex::new(partition);
    let moments = run_trials(spec, trials, partition.dim(), 1, |rows, out| {
        let x = rows[m];
        let full = index.near_boundary(x, eta) as u8 as f64;
        let half = index.near_boundary(x, eta / 2.0) as u8 as f64;
        out[0] = full - 2.0 * half;
    });
    Ok(moments[0].into())
}

/// A base code whose encoders are replaced by rectangle partitions, with an
/// erasure index 0 that forces every decoder to output zeros.
#[derive(Debug, Clone)]
pub struct RobustCode<C> {
    base: C,
    partitions: Vec<RectPartition>,
    delta: f64,
    bounds: Vec<DistortionBound>,
}

/// Terms of the inflation bound `M sqrt(delta) / n` for one encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionBound {
    /// Sampled `E||x_m||^4` over a block.
    pub fourth_moment: f64,
    /// `max ||g~_m||^2` over index tuples.
    pub max_decoder_energy: f64,
    /// `(2 sqrt(E||x||^4) + 2 max||g~||^2) sqrt(sum_m 2^{nR_m})`.
    pub m_constant: f64,
    /// `M sqrt(delta) / n`, per-symbol distortion inflation bound.
    pub per_symbol: f64,
}

/// Options for [`build_robust_code`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustOptions {
    pub delta: f64,
    /// Allowed per-symbol distortion slack.
    pub epsilon_prime: f64,
    /// Starting grid resolution; doubled on budget failure.
    pub resolution: usize,
    pub max_resolution: usize,
    /// Samples for each symmetric-difference check and moment estimate.
    pub trials: usize,
}

impl Default for RobustOptions {
    fn default() -> Self {
        Self {
            delta: 1e-4,
            epsilon_prime: 0.1,
            resolution: 256,
            max_resolution: 4096,
            trials: 1_000_000,
        }
    }
}

/// Rectangularizes every encoder of `base` at budget `delta` and records the
/// distortion-inflation bound per encoder.
pub fn build_robust_code<C: FiniteCode>(
    base: C,
    spec: &SourceSpec,
    options: &RobustOptions,
) -> Result<RobustCode<C>> {
    let (k, n) = (base.num_encoders(), base.blocklength());
    check_dims(k, spec.k())?;
    check_dim(n)?;
    if !(options.epsilon_prime > 0.0) {
        return Err(Error::invalid("epsilon' must be positive"));
    }
    let mut partitions = Vec::with_capacity(k);
    for m in 0..k {
        let cells = base.index_set_size(m);
        let encoder = |x: &[f64]| base.encode(m, x) + 1;
        let mut resolution = options.resolution;
        let partition = loop {
            let rect = RectOptions {
                delta: options.delta,
                resolution,
                trials: options.trials,
            };
            match rectangularize(&encoder, cells, spec, m, n, &rect) {
                Ok(p) => break p,
                Err(Error::BudgetNotMet { .. }) if resolution * 2 <= options.max_resolution => {
                    resolution *= 2;
                }
                Err(e) => return Err(e),
            }
        };
        partitions.push(partition);
    }
    let total_size: f64 = (0..k).map(|m| base.index_set_size(m) as f64).sum();
    let fourth = run_trials(spec, options.trials, n, k, |rows, out| {
        for m in 0..k {
            let e: f64 = rows[m].iter().map(|v| v * v).sum();
            out[m] = e * e;
        }
    });
    let mut bounds = Vec::with_capacity(k);
    for m in 0..k {
        let fourth_moment = fourth[m].mean();
        // the erasure output is the zero vector, so the max is the base max
        let max_decoder_energy = base.max_decoder_energy(m);
        let m_constant =
            (2.0 * fourth_moment.sqrt() + 2.0 * max_decoder_energy) * total_size.sqrt();
        let inflation = m_constant * options.delta.sqrt();
        let allowed = n as f64 * options.epsilon_prime;
        if inflation > allowed {
            return Err(Error::DeltaTooLarge {
                bound: inflation,
                allowed,
            });
        }
        bounds.push(DistortionBound {
            fourth_moment,
            max_decoder_energy,
            m_constant,
            per_symbol: inflation / n as f64,
        });
    }
    Ok(RobustCode {
        base,
        partitions,
        delta: options.delta,
        bounds,
    })
}

impl<C: FiniteCode> RobustCode<C> {
    pub fn base(&self) -> &C {
        &self.base
    }

    pub fn partition(&self, m: usize) -> &RectPartition {
        &self.partitions[m]
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn bound(&self, m: usize) -> &DistortionBound {
        &self.bounds[m]
    }

    /// `delta * sum_m 2^{nR_m}`, the union bound on the event that any
    /// decoder output differs from the base code's.
    pub fn event_a_bound(&self) -> f64 {
        self.delta
            * (0..self.base.num_encoders())
                .map(|m| self.base.index_set_size(m) as f64)
                .sum::<f64>()
    }

    /// Whether `2^{nR_m} + 1 <= 2^{n(R_m + epsilon)}` holds for every encoder.
    pub fn rate_slack_holds(&self, epsilon: f64) -> bool {
        let n = self.base.blocklength() as f64;
        (0..self.base.num_encoders()).all(|m| {
            let size = self.base.index_set_size(m) as f64;
            (size + 1.0).log2() <= size.log2() + n * epsilon
        })
    }
}

impl<C: FiniteCode> MultiterminalCode for RobustCode<C> {
    type Index = u64;

    fn num_encoders(&self) -> usize {
        self.base.num_encoders()
    }

    fn blocklength(&self) -> usize {
        self.base.blocklength()
    }

    fn rate(&self, m: usize) -> f64 {
        (self.index_set_size(m) as f64).log2() / self.blocklength() as f64
    }

    fn encode(&self, m: usize, x: &[f64]) -> u64 {
        self.partitions[m].lookup(x)
    }

    fn decode(&self, m: usize, indices: &[u64]) -> Vec<f64> {
        if indices.contains(&0) {
            return vec![0.0; self.blocklength()];
        }
        let shifted: Vec<u64> = indices.iter().map(|j| j - 1).collect();
        self.base.decode(m, &shifted)
    }

    fn decode_all(&self, indices: &[u64]) -> Vec<Vec<f64>> {
        if indices.contains(&0) {
            return vec![vec![0.0; self.blocklength()]; self.num_encoders()];
        }
        let shifted: Vec<u64> = indices.iter().map(|j| j - 1).collect();
        self.base.decode_all(&shifted)
    }

    fn max_decoder_energy(&self, m: usize) -> f64 {
        self.base.max_decoder_energy(m)
    }
}

impl<C: FiniteCode> FiniteCode for RobustCode<C> {
    fn index_set_size(&self, m: usize) -> u64 {
        self.base.index_set_size(m) + 1
    }
}

/// Monte Carlo frequency of the event that some decoder output of the robust
/// code differs from the base code's, with its union bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventAEstimate {
    pub probability: Estimate,
    pub union_bound: f64,
}

pub fn estimate_event_a<C: FiniteCode>(
    robust: &RobustCode<C>,
    spec: &SourceSpec,
    trials: usize,
) -> Result<EventAEstimate> {
    if trials < 10_000 {
        return Err(Error::TooFewSamples {
            needed: 10_000,
            got: trials,
        });
    }
    let base = robust.base();
    let k = base.num_encoders();
    check_dims(k, spec.k())?;
    let moments = run_trials(spec, trials, base.blocklength(), 1, |rows, out| {
        let idx: Vec<u64> = (0..k).map(|m| base.encode(m, rows[m])).collect();
        let ridx: Vec<u64> = (0..k).map(|m| robust.encode(m, rows[m])).collect();
        out[0] = (base.decode_all(&idx) != robust.decode_all(&ridx)) as u8 as f64;
    });
    Ok(EventAEstimate {
        probability: moments[0].into(),
        union_bound: robust.event_a_bound(),
    })
}

/// Paired base and robust distortions for one encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InflationEstimate {
    pub base: Estimate,
    pub robust: Estimate,
    /// `D_robust - D_base` from the same samples.
    pub inflation: Estimate,
    pub bound: f64,
}

/// Measures the per-symbol distortion added by rectangularization.
pub fn distortion_inflation<C: FiniteCode>(
    robust: &RobustCode<C>,
    spec: &SourceSpec,
    trials: usize,
) -> Result<Vec<InflationEstimate>> {
    crate::codecs::check_trials(trials)?;
    let base = robust.base();
    let (k, n) = (base.num_encoders(), base.blocklength());
    check_dims(k, spec.k())?;
    let moments = run_trials(spec, trials, n, 3 * k, |rows, out| {
        let idx: Vec<u64> = (0..k).map(|m| base.encode(m, rows[m])).collect();
        let ridx: Vec<u64> = (0..k).map(|m| robust.encode(m, rows[m])).collect();
        let b = base.decode_all(&idx);
        let r = robust.decode_all(&ridx);
        for m in 0..k {
            let db = squared_error(rows[m], &b[m]) / n as f64;
            let dr = squared_error(rows[m], &r[m]) / n as f64;
            out[3 * m] = db;
            out[3 * m + 1] = dr;
            out[3 * m + 2] = dr - db;
        }
    });
    Ok((0..k)
        .map(|m| InflationEstimate {
            base: moments[3 * m].into(),
            robust: moments[3 * m + 1].into(),
            inflation: moments[3 * m + 2].into(),
            bound: robust.bound(m).per_symbol,
        })
        .collect())
}
