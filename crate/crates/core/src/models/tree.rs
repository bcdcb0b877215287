use serde::{Deserialize, Serialize};

/// Growth limits and leaf regularisation for one regression tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 6,
            min_samples_leaf: 1,
            min_child_weight: 1.0,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// `x[feature] <= threshold` goes left; missing values follow `default_left`.
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: Node,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let v = x[*feature];
                    let go_left = if v.is_nan() {
                        *default_left
                    } else {
                        v <= *threshold
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    pub fn n_leaves(&self) -> usize {
        fn c(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => c(left) + c(right),
            }
        }
        c(&self.root)
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        fn s(n: &mut Node, f: f64) {
            match n {
                Node::Leaf { value } => *value *= f,
                Node::Split { left, right, .. } => {
                    s(left, f);
                    s(right, f);
                }
            }
        }
        s(&mut self.root, factor);
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> Vec<usize> {
        fn walk(n: &Node, out: &mut Vec<usize>) {
            if let Node::Split {
                feature,
                left,
                right,
                ..
            } = n
            {
                out.push(*feature);
                walk(left, out);
                walk(right, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Column-major feature matrix with each column's non-missing rows presorted
/// by value.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
    missing: Vec<Vec<u32>>,
}

impl FeatureMatrix {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], n_features: usize) -> Self {
        let columns = (0..n_features)
            .map(|j| rows.iter().map(|r| r.as_ref()[j]).collect())
            .collect();
        Self::from_columns(columns)
    }

    pub fn from_columns(columns: Vec<Vec<f64>>) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        let mut order = Vec::with_capacity(columns.len());
        let mut missing = Vec::with_capacity(columns.len());
        for col in &columns {
            assert_eq!(col.len(), n_rows, "ragged feature matrix");
            let mut o: Vec<u32> = (0..n_rows as u32)
                .filter(|&i| !col[i as usize].is_nan())
                .collect();
            o.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            missing.push(
                (0..n_rows as u32)
                    .filter(|&i| col[i as usize].is_nan())
                    .collect(),
            );
            order.push(o);
        }
        FeatureMatrix {
            n_rows,
            columns,
            order,
            missing,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }
}

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn plus(self, o: Stats) -> Stats {
        Stats {
            g: self.g + o.g,
            h: self.h + o.h,
            n: self.n + o.n,
        }
    }

    fn minus(self, o: Stats) -> Stats {
        Stats {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }

    fn score(self, lambda: f64) -> f64 {
        self.g * self.g / (self.h + lambda)
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
    left: Stats,
}

enum Arena {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
    },
}

const GAIN_TOL: f64 = 1e-12;

/// Grows one tree on gradients and hessians by exact greedy, level-wise search.
///
/// Leaves take the Newton value `-G / (H + lambda)`. Splits with zero gain are
/// accepted so that interactions invisible to a single split (XOR) can still be
/// found one level down. Returns the tree and every row's leaf value.
pub fn fit_tree(
    x: &FeatureMatrix,
    grad: &[f64],
    hess: &[f64],
    params: &TreeParams,
) -> (RegressionTree, Vec<f64>) {
    let n = x.n_rows();
    assert!(grad.len() == n && hess.len() == n);
    let lambda = params.lambda;
    let msl = params.min_samples_leaf.max(1);

    let mut arena: Vec<Arena> = vec![Arena::Leaf(0.0)];
    let mut root = Stats::default();
    for i in 0..n {
        root.add(grad[i], hess[i]);
    }
    // Active nodes at the current level: (arena id, stats).
    let mut active: Vec<(usize, Stats)> = vec![(0, root)];
    // Position of each row's node in `active`, or NONE once its leaf is final.
    const NONE: u32 = u32::MAX;
    let mut slot: Vec<u32> = vec![0; n];
    let mut leaf_of: Vec<usize> = vec![0; n];

    for _depth in 0..params.max_depth {
        if active.is_empty() {
            break;
        }
        let k = active.len();
        let mut best: Vec<Option<Candidate>> = vec![None; k];
        let mut cum = vec![Stats::default(); k];
        let mut last = vec![f64::NAN; k];
        let mut miss = vec![Stats::default(); k];

        for j in 0..x.n_features() {
            let col = &x.columns[j];
            miss.iter_mut().for_each(|m| *m = Stats::default());
            for &r in &x.missing[j] {
                let a = slot[r as usize];
                if a != NONE {
                    miss[a as usize].add(grad[r as usize], hess[r as usize]);
                }
            }
            cum.iter_mut().for_each(|c| *c = Stats::default());
            last.iter_mut().for_each(|l| *l = f64::NAN);
            for &r in &x.order[j] {
                let r = r as usize;
                let a = slot[r];
                if a == NONE {
                    continue;
                }
                let a = a as usize;
                let v = col[r];
                if cum[a].n > 0 && v > last[a] {
                    let total = active[a].1;
                    let dirs: &[bool] = if miss[a].n > 0 {
                        &[false, true]
                    } else {
                        &[true]
                    };
                    for &dl in dirs {
                        let left = if dl { cum[a].plus(miss[a]) } else { cum[a] };
                        let right = total.minus(left);
                        if left.n < msl
                            || right.n < msl
                            || left.h < params.min_child_weight
                            || right.h < params.min_child_weight
                        {
                            continue;
                        }
                        let gain = left.score(lambda) + right.score(lambda) - total.score(lambda);
                        if best[a].is_none_or(|b| gain > b.gain) {
                            best[a] = Some(Candidate {
                                gain,
                                feature: j,
                                threshold: last[a],
                                default_left: dl,
                                left,
                            });
                        }
                    }
                }
                cum[a].add(grad[r], hess[r]);
                last[a] = v;
            }
        }

        let mut next: Vec<(usize, Stats)> = Vec::new();
        // For split nodes: (left slot, right slot, candidate); u32::MAX = finalised.
        let mut route: Vec<Option<(u32, u32, Candidate)>> = Vec::with_capacity(k);
        for (a, &(id, total)) in active.iter().enumerate() {
            match best[a] {
                Some(c) if c.gain >= -GAIN_TOL * total.score(lambda).max(1.0) => {
                    let (l, r) = (arena.len(), arena.len() + 1);
                    arena.push(Arena::Leaf(0.0));
                    arena.push(Arena::Leaf(0.0));
                    arena[id] = Arena::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        default_left: c.default_left,
                        left: l,
                        right: r,
                    };
                    next.push((l, c.left));
                    next.push((r, total.minus(c.left)));
                    route.push(Some(((next.len() - 2) as u32, (next.len() - 1) as u32, c)));
                }
                _ => {
                    arena[id] = Arena::Leaf(leaf_value(total, lambda));
                    route.push(None);
                }
            }
        }
        for r in 0..n {
            let a = slot[r];
            if a == NONE {
                continue;
            }
            match route[a as usize] {
                None => {
                    leaf_of[r] = active[a as usize].0;
                    slot[r] = NONE;
                }
                Some((ls, rs, c)) => {
                    let v = x.columns[c.feature][r];
                    let go_left = if v.is_nan() {
                        c.default_left
                    } else {
                        v <= c.threshold
                    };
                    slot[r] = if go_left { ls } else { rs };
                }
            }
        }
        active = next;
    }
    for &(id, total) in &active {
        arena[id] = Arena::Leaf(leaf_value(total, lambda));
    }
    for r in 0..n {
        if slot[r] != NONE {
            leaf_of[r] = active[slot[r] as usize].0;
        }
    }

    let row_values = leaf_of
        .iter()
        .map(|&id| match arena[id] {
            Arena::Leaf(v) => v,
            Arena::Split { .. } => unreachable!("rows end in leaves"),
        })
        .collect();
    (
        RegressionTree {
            root: build(&arena, 0),
        },
        row_values,
    )
}

fn leaf_value(s: Stats, lambda: f64) -> f64 {
    if s.h + lambda > 0.0 {
        -s.g / (s.h + lambda)
    } else {
        0.0
    }
}

fn build(arena: &[Arena], id: usize) -> Node {
    match arena[id] {
        Arena::Leaf(value) => Node::Leaf { value },
        Arena::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
        } => Node::Split {
            feature,
            threshold,
            default_left,
            left: Box::new(build(arena, left)),
            right: Box::new(build(arena, right)),
        },
    }
}
