//! Tree edit distance by exhaustive search over ordered-tree mappings.
//!
//! A mapping pairs nodes one-to-one while preserving ancestry and sibling
//! order; under unit costs the cheapest mapping has the cost of the cheapest
//! edit script. Exponential, so only for small trees.

use srevo_core::expr::{Node, Primitive};

struct Flat {
    labels: Vec<Primitive>,
    /// Preorder index of the last node in each subtree.
    last: Vec<usize>,
}

fn flatten(root: &Node) -> Flat {
    fn go(n: &Node, labels: &mut Vec<Primitive>, last: &mut Vec<usize>) {
        let me = labels.len();
        labels.push(n.prim);
        last.push(me);
        for c in &n.children {
            go(c, labels, last);
        }
        last[me] = labels.len() - 1;
    }
    let mut labels = Vec::new();
    let mut last = Vec::new();
    go(root, &mut labels, &mut last);
    Flat { labels, last }
}

fn ancestor(t: &Flat, a: usize, b: usize) -> bool {
    a < b && b <= t.last[a]
}

fn left_of(t: &Flat, a: usize, b: usize) -> bool {
    t.last[a] < b
}

fn compatible(t1: &Flat, t2: &Flat, (i1, j1): (usize, usize), (i2, j2): (usize, usize)) -> bool {
    ancestor(t1, i1, i2) == ancestor(t2, j1, j2)
        && ancestor(t1, i2, i1) == ancestor(t2, j2, j1)
        && left_of(t1, i1, i2) == left_of(t2, j1, j2)
        && left_of(t1, i2, i1) == left_of(t2, j2, j1)
}

pub fn brute_force_ted(a: &Node, b: &Node) -> usize {
    let t1 = flatten(a);
    let t2 = flatten(b);
    let (n1, n2) = (t1.labels.len(), t2.labels.len());
    let mut best = n1 + n2;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut used = vec![false; n2];

    fn search(
        i: usize,
        t1: &Flat,
        t2: &Flat,
        pairs: &mut Vec<(usize, usize)>,
        used: &mut [bool],
        relabels: usize,
        best: &mut usize,
    ) {
        let (n1, n2) = (t1.labels.len(), t2.labels.len());
        let cost = n1 + n2 - 2 * pairs.len() + relabels;
        // Mapping every remaining node cannot go below this bound.
        let remaining = (n1 - i).min(n2 - pairs.len());
        if cost.saturating_sub(2 * remaining) >= *best {
            return;
        }
        if i == n1 {
            *best = cost;
            return;
        }
        search(i + 1, t1, t2, pairs, used, relabels, best);
        for j in 0..n2 {
            if used[j] || !pairs.iter().all(|&p| compatible(t1, t2, p, (i, j))) {
                continue;
            }
            used[j] = true;
            pairs.push((i, j));
            let r = relabels + usize::from(t1.labels[i] != t2.labels[j]);
            search(i + 1, t1, t2, pairs, used, r, best);
            pairs.pop();
            used[j] = false;
        }
    }

    search(0, &t1, &t2, &mut pairs, &mut used, 0, &mut best);
    best
}
