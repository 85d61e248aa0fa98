//! Minimum entropy coupling.
//!
//! [`greedy_mec`] is the approximate coupling used by the codec: repeatedly
//! match the largest remaining mass on each side and emit the smaller of the
//! two. The result is always a valid coupling and is within one bit of the
//! optimum. [`exact_mec`] enumerates the vertices of the transportation
//! polytope and is only meant for tiny reference instances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{Categorical, PRUNE_THRESHOLD};

/// Largest support size on either side accepted by [`exact_mec`].
pub const EXACT_MAX_SUPPORT: usize = 4;

/// One nonzero cell of a coupling. `row` and `col` index into the supports
/// of the left and right marginals, not token ids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub mass: f64,
}

/// A joint distribution stored as its nonzero cells together with the two
/// marginals it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCoupling {
    entries: Vec<Entry>,
    left: Categorical,
    right: Categorical,
}

#[derive(Serialize, Deserialize)]
struct CouplingDump {
    entries: Vec<(usize, usize, f64)>,
}

impl SparseCoupling {
    /// Wraps raw cells without checking marginals. Used by the exact solver
    /// and by audit tests that need a deliberately broken coupling.
    pub fn from_parts(entries: Vec<Entry>, left: Categorical, right: Categorical) -> Self {
        SparseCoupling {
            entries,
            left,
            right,
        }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn left(&self) -> &Categorical {
        &self.left
    }

    pub fn right(&self) -> &Categorical {
        &self.right
    }

    /// Joint entropy in bits.
    pub fn entropy(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| -e.mass * e.mass.log2())
            .sum::<f64>()
            .max(0.0)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.left.len()];
        for e in &self.entries {
            sums[e.row] += e.mass;
        }
        sums
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.right.len()];
        for e in &self.entries {
            sums[e.col] += e.mass;
        }
        sums
    }

    /// Largest absolute deviation of either marginal from its target.
    pub fn marginal_error(&self) -> f64 {
        let rows = self
            .row_sums()
            .iter()
            .zip(self.left.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let cols = self
            .col_sums()
            .iter()
            .zip(self.right.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rows.max(cols)
    }

    /// `{"entries": [[row, col, mass], ...]}`
    pub fn to_json(&self) -> String {
        let dump = CouplingDump {
            entries: self
                .entries
                .iter()
                .map(|e| (e.row, e.col, e.mass))
                .collect(),
        };
        serde_json::to_string(&dump).expect("plain data serializes")
    }

    /// Rebuilds a coupling from its JSON dump and the two marginals.
    pub fn from_json(json: &str, left: Categorical, right: Categorical) -> Result<Self> {
        let dump: CouplingDump = serde_json::from_str(json)?;
        let entries = dump
            .entries
            .into_iter()
            .map(|(row, col, mass)| Entry { row, col, mass })
            .collect::<Vec<_>>();
        if entries.iter().any(|e| {
            e.row >= left.len() || e.col >= right.len() || e.mass.is_nan() || e.mass <= 0.0
        }) {
            return Err(Error::InvalidDistribution(
                "coupling entry out of range".into(),
            ));
        }
        Ok(Self::from_parts(entries, left, right))
    }
}

/// Heap key: larger mass first, lower index on ties.
#[derive(Clone, Copy)]
struct Residual {
    mass: f64,
    idx: usize,
}

impl PartialEq for Residual {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Residual {}

impl PartialOrd for Residual {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Residual {
    fn cmp(&self, other: &Self) -> Ordering {
        self.mass
            .total_cmp(&other.mass)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Residual masses in heap order: the initial masses sorted once, plus a
/// heap for the (always smaller) residuals pushed back during the greedy pass.
struct Residuals {
    sorted: Vec<Residual>,
    next: usize,
    heap: BinaryHeap<Residual>,
}

impl Residuals {
    fn new(d: &Categorical) -> Self {
        let mut sorted: Vec<Residual> = d
            .probs()
            .iter()
            .enumerate()
            .map(|(idx, &mass)| Residual { mass, idx })
            .collect();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        Residuals {
            sorted,
            next: 0,
            heap: BinaryHeap::new(),
        }
    }

    fn pop(&mut self) -> Option<Residual> {
        let front = self.sorted.get(self.next);
        match (front, self.heap.peek()) {
            (Some(a), Some(b)) if b > a => self.heap.pop(),
            (Some(&a), _) => {
                self.next += 1;
                Some(a)
            }
            (None, _) => self.heap.pop(),
        }
    }

    fn push(&mut self, r: Residual) {
        self.heap.push(r);
    }
}

/// Greedy approximate minimum entropy coupling of `p` (rows) and `q` (columns).
pub fn greedy_mec(p: &Categorical, q: &Categorical) -> SparseCoupling {
    let mut rows = Residuals::new(p);
    let mut cols = Residuals::new(q);
    let mut entries = Vec::with_capacity(p.len() + q.len() - 1);

    while let (Some(mut r), Some(mut c)) = (rows.pop(), cols.pop()) {
        let w = r.mass.min(c.mass);
        entries.push(Entry {
            row: r.idx,
            col: c.idx,
            mass: w,
        });
        r.mass = (r.mass - w).max(0.0);
        c.mass = (c.mass - w).max(0.0);
        if r.mass >= PRUNE_THRESHOLD {
            rows.push(r);
        }
        if c.mass >= PRUNE_THRESHOLD {
            cols.push(c);
        }
    }

    SparseCoupling {
        entries,
        left: p.clone(),
        right: q.clone(),
    }
}

/// Distribution of the column given `row`, over the right marginal's token ids.
pub fn row_conditional(g: &SparseCoupling, row: usize) -> Result<Categorical> {
    let (ids, masses): (Vec<u32>, Vec<f64>) = g
        .entries
        .iter()
        .filter(|e| e.row == row)
        .map(|e| (g.right.ids()[e.col], e.mass))
        .unzip();
    if ids.is_empty() {
        return Err(Error::ZeroRow(row));
    }
    Categorical::from_weights(ids, masses).map_err(|_| Error::ZeroRow(row))
}

/// Distribution of the row given `col`, over the left marginal's token ids.
pub fn col_conditional(g: &SparseCoupling, col: usize) -> Result<Categorical> {
    let (ids, masses): (Vec<u32>, Vec<f64>) = g
        .entries
        .iter()
        .filter(|e| e.col == col)
        .map(|e| (g.left.ids()[e.row], e.mass))
        .unzip();
    if ids.is_empty() {
        return Err(Error::ZeroCol(col));
    }
    Categorical::from_weights(ids, masses).map_err(|_| Error::ZeroCol(col))
}

/// Minimum entropy coupling by enumerating every basic feasible solution
/// of the transportation polytope.
///
/// Entropy is concave, so its minimum sits at a vertex, and every vertex is
/// the unique solution supported on some spanning tree of the complete
/// bipartite graph between the two supports.
pub fn exact_mec(p: &Categorical, q: &Categorical) -> Result<SparseCoupling> {
    let (n, m) = (p.len(), q.len());
    if n > EXACT_MAX_SUPPORT || m > EXACT_MAX_SUPPORT {
        return Err(Error::InstanceTooLarge {
            left: n,
            right: m,
            max: EXACT_MAX_SUPPORT,
        });
    }

    let cells = n * m;
    let edges = n + m - 1;
    let mut best: Option<(f64, Vec<Entry>)> = None;
    let mut chosen = Vec::with_capacity(edges);
    for_each_subset(cells, edges, 0, &mut chosen, &mut |subset| {
        if let Some(sol) = solve_tree(subset, p.probs(), q.probs(), m) {
            let h: f64 = sol.iter().map(|e| -e.mass * e.mass.log2()).sum();
            if best.as_ref().is_none_or(|(bh, _)| h < *bh) {
                best = Some((h, sol));
            }
        }
    });

    let (_, entries) = best.expect("the transportation polytope is never empty");
    Ok(SparseCoupling::from_parts(entries, p.clone(), q.clone()))
}

fn for_each_subset(
    n: usize,
    k: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if chosen.len() == k {
        f(chosen);
        return;
    }
    for i in start..n {
        if n - i < k - chosen.len() {
            break;
        }
        chosen.push(i);
        for_each_subset(n, k, i + 1, chosen, f);
        chosen.pop();
    }
}

/// Solves the marginal constraints on a spanning tree by peeling leaves.
/// Returns `None` when the cells contain a cycle or the solution is negative.
fn solve_tree(cells: &[usize], p: &[f64], q: &[f64], m: usize) -> Option<Vec<Entry>> {
    let n = p.len();
    // union-find over n row nodes followed by m column nodes
    let mut parent: Vec<usize> = (0..n + m).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &cell in cells {
        let (a, b) = (find(&mut parent, cell / m), find(&mut parent, n + cell % m));
        if a == b {
            return None;
        }
        parent[a] = b;
    }

    let mut rest_row = p.to_vec();
    let mut rest_col = q.to_vec();
    let mut alive: Vec<(usize, usize)> = cells.iter().map(|&c| (c / m, c % m)).collect();
    let mut out = Vec::with_capacity(cells.len());
    while !alive.is_empty() {
        let mut deg = vec![0usize; n + m];
        for &(r, c) in &alive {
            deg[r] += 1;
            deg[n + c] += 1;
        }
        let pos = alive
            .iter()
            .position(|&(r, c)| deg[r] == 1 || deg[n + c] == 1)
            .expect("a forest always has a leaf");
        let (r, c) = alive.swap_remove(pos);
        let mass = if deg[r] == 1 {
            rest_row[r]
        } else {
            rest_col[c]
        };
        rest_row[r] -= mass;
        rest_col[c] -= mass;
        if mass < -1e-12 {
            return None;
        }
        if mass >= PRUNE_THRESHOLD {
            out.push(Entry {
                row: r,
                col: c,
                mass,
            });
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cat(probs: &[f64]) -> Categorical {
        Categorical::new((0..probs.len() as u32).collect(), probs.to_vec()).unwrap()
    }

    fn cells(g: &SparseCoupling) -> Vec<(usize, usize, f64)> {
        g.entries().iter().map(|e| (e.row, e.col, e.mass)).collect()
    }

    #[test]
    fn greedy_point_masses() {
        let g = greedy_mec(&Categorical::point(3), &Categorical::point(9));
        assert_eq!(cells(&g), vec![(0, 0, 1.0)]);
        assert_eq!(g.entropy(), 0.0);
    }

    #[test]
    fn greedy_hand_trace() {
        // rp=(.5,.5) rq=(.5,.25,.25): (0,0,.5) then (1,1,.25) then (1,2,.25)
        let g = greedy_mec(&cat(&[0.5, 0.5]), &cat(&[0.5, 0.25, 0.25]));
        assert_eq!(cells(&g), vec![(0, 0, 0.5), (1, 1, 0.25), (1, 2, 0.25)]);
        assert_abs_diff_eq!(g.entropy(), 1.5);
    }

    #[test]
    fn greedy_tie_rule_gives_diagonal() {
        let u = cat(&[0.5, 0.5]);
        let g = greedy_mec(&u, &u);
        assert_eq!(cells(&g), vec![(0, 0, 0.5), (1, 1, 0.5)]);
        assert_abs_diff_eq!(g.entropy(), 1.0);
    }

    #[test]
    fn conditionals() {
        let g = greedy_mec(&cat(&[0.5, 0.5]), &cat(&[0.5, 0.25, 0.25]));
        let row1 = row_conditional(&g, 1).unwrap();
        assert_eq!(row1.ids(), &[1, 2]);
        assert_eq!(row1.probs(), &[0.5, 0.5]);
        assert_eq!(col_conditional(&g, 0).unwrap(), Categorical::point(0));
        assert_eq!(col_conditional(&g, 1).unwrap(), Categorical::point(1));

        let single = greedy_mec(&Categorical::point(4), &Categorical::point(6));
        assert_eq!(row_conditional(&single, 0).unwrap(), Categorical::point(6));
        assert_eq!(col_conditional(&single, 0).unwrap(), Categorical::point(4));

        let lone = SparseCoupling::from_parts(
            vec![Entry {
                row: 0,
                col: 1,
                mass: 0.3,
            }],
            cat(&[0.3, 0.7]),
            cat(&[0.7, 0.3]),
        );
        assert_eq!(row_conditional(&lone, 0).unwrap(), Categorical::point(1));
        assert!(matches!(row_conditional(&lone, 1), Err(Error::ZeroRow(1))));
        assert!(matches!(col_conditional(&lone, 0), Err(Error::ZeroCol(0))));
    }

    #[test]
    fn conditionals_map_token_ids() {
        let p = Categorical::new(vec![10, 20], vec![0.5, 0.5]).unwrap();
        let q = Categorical::new(vec![3, 8], vec![0.5, 0.5]).unwrap();
        let g = greedy_mec(&p, &q);
        assert_eq!(row_conditional(&g, 1).unwrap(), Categorical::point(8));
        assert_eq!(col_conditional(&g, 0).unwrap(), Categorical::point(10));
    }

    #[test]
    fn exact_small_cases() {
        let pm = exact_mec(&Categorical::point(0), &Categorical::point(0)).unwrap();
        assert_eq!(pm.entropy(), 0.0);
        let u = cat(&[0.5, 0.5]);
        assert_abs_diff_eq!(exact_mec(&u, &u).unwrap().entropy(), 1.0, epsilon = 1e-12);
        let g = exact_mec(&cat(&[0.6, 0.4]), &u).unwrap();
        let expected = -(0.5f64 * 0.5f64.log2() + 0.1 * 0.1f64.log2() + 0.4 * 0.4f64.log2());
        assert_abs_diff_eq!(g.entropy(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 1.361, epsilon = 1e-3);
        assert!(g.marginal_error() < 1e-12);
    }

    #[test]
    fn exact_rejects_large() {
        let big = Categorical::uniform(5).unwrap();
        assert!(matches!(
            exact_mec(&big, &big),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn json_dump_round_trip() {
        let (p, q) = (cat(&[0.5, 0.5]), cat(&[0.5, 0.25, 0.25]));
        let g = greedy_mec(&p, &q);
        let json = g.to_json();
        assert_eq!(json, r#"{"entries":[[0,0,0.5],[1,1,0.25],[1,2,0.25]]}"#);
        assert_eq!(
            SparseCoupling::from_json(&json, p.clone(), q.clone()).unwrap(),
            g
        );
        assert!(SparseCoupling::from_json(r#"{"entries":[[5,0,0.5]]}"#, p, q).is_err());
    }
}
