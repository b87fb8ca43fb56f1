//! Irreducibility criteria on the grid: the semigroup condition with its
//! `R` function, strong connectivity of the positivity pattern of `L`, and
//! the sufficient row-integral condition.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::spectral::{build_l_lambda, KernelMatrix};
use crate::transport::Discretization;

/// Relative positivity threshold (times the largest entry).
pub const RELATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IrreducibilityReport {
    pub semigroup_irreducible: bool,
    pub l_irreducible_grid: bool,
    pub l_sufficient: bool,
    /// First grid `α` at which the semigroup condition fails.
    pub witness_alpha: Option<f64>,
    /// A closed strongly connected block of the positivity graph.
    pub witness_component: Option<Vec<usize>>,
    /// `x₀ = 1 - Δs, R(x₀), R(R(x₀)), …`
    pub r_trace: Vec<f64>,
}

impl IrreducibilityReport {
    /// `L_sufficient ⇒ L_irreducible_grid ⇒ semigroup_irreducible`.
    pub fn chain_holds(&self) -> bool {
        (!self.l_sufficient || self.l_irreducible_grid) && (!self.l_irreducible_grid || self.semigroup_irreducible)
    }
}

/// Default threshold for fertility values: `1e-12 · max β`.
pub fn default_beta_tol(disc: &Discretization) -> f64 {
    RELATIVE_TOL * disc.beta_matrix().iter().fold(0.0f64, |m, v| m.max(*v))
}

/// Default threshold for kernel entries: `1e-12 · max entry`.
pub fn default_kernel_tol(k: &KernelMatrix) -> f64 {
    RELATIVE_TOL * k.entries.iter().fold(0.0f64, |m, v| m.max(*v))
}

/// Checks, for every interior node `α = s_k`, that `β(s_i, s_j) > tol` for
/// some `s_i ≤ α ≤ s_j`. Returns the verdict and the first failing `α`.
pub fn semigroup_irreducible(disc: &Discretization, tol: f64) -> (bool, Option<f64>) {
    let beta = disc.beta_matrix();
    let n = beta.nrows();
    // colmax[j] = max_{i ≤ k} β(s_i, s_j), updated as k grows
    let mut colmax: Vec<f64> = (0..n).map(|j| beta[(0, j)]).collect();
    for k in 1..n - 1 {
        for (j, c) in colmax.iter_mut().enumerate() {
            *c = c.max(beta[(k, j)]);
        }
        let best = colmax[k..].iter().fold(0.0f64, |m, v| m.max(*v));
        if !(best > tol) {
            return (false, Some(disc.grid().node(k)));
        }
    }
    (true, None)
}

/// `R(x)`: smallest node `s_i` with `β(s_i, τ) > tol` for some grid `τ ≥ x`;
/// 1 when no such node exists.
pub fn compute_r(disc: &Discretization, x: f64, tol: f64) -> f64 {
    let beta = disc.beta_matrix();
    let nodes = disc.grid().nodes();
    let first = nodes.partition_point(|&t| t < x - 1e-12);
    for (i, s) in nodes.iter().enumerate() {
        if (first..nodes.len()).any(|j| beta[(i, j)] > tol) {
            return *s;
        }
    }
    1.0
}

/// Iterates `x_{n+1} = R(x_n)` until the sequence stops decreasing or
/// `max_n` steps have been taken.
pub fn r_iteration(disc: &Discretization, x0: f64, max_n: usize, tol: f64) -> Vec<f64> {
    let mut trace = vec![x0];
    let mut x = x0;
    for _ in 0..max_n {
        let next = compute_r(disc, x, tol);
        trace.push(next);
        if next >= x {
            break;
        }
        x = next;
    }
    trace
}

/// Strong connectivity of the graph with an edge `j → i` whenever
/// `entry(i, j) > tol`. The node `s = 1` is left out: its column is zero
/// for every kernel because nobody is born at a size they never grow past.
/// On failure returns a closed strongly connected block.
pub fn l_irreducible_grid(k: &KernelMatrix, tol: f64) -> (bool, Option<Vec<usize>>) {
    let n = k.dim() - 1;
    let mut graph = DiGraph::<usize, ()>::with_capacity(n, n * n);
    let idx: Vec<_> = (0..n).map(|i| graph.add_node(i)).collect();
    for i in 0..n {
        for j in 0..n {
            if k.entries[(i, j)] > tol {
                graph.add_edge(idx[j], idx[i], ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    if sccs.len() == 1 {
        return (true, None);
    }
    let mut component_of = vec![0usize; n];
    for (c, comp) in sccs.iter().enumerate() {
        for node in comp {
            component_of[graph[*node]] = c;
        }
    }
    let closed = sccs
        .iter()
        .enumerate()
        .find(|(c, comp)| comp.iter().all(|node| graph.neighbors(*node).all(|m| component_of[graph[m]] == *c)));
    let mut witness: Vec<usize> =
        closed.map(|(_, comp)| comp.iter().map(|node| graph[*node]).collect()).unwrap_or_default();
    witness.sort_unstable();
    (false, Some(witness))
}

/// `Σ_{j > i} w_j β(s_i, s_j) > tol` for every node `s_i < 1`.
pub fn l_sufficient(disc: &Discretization, tol: f64) -> bool {
    let beta = disc.beta_matrix();
    let w = disc.grid().weights();
    let n = beta.nrows();
    (0..n - 1).all(|i| ((i + 1)..n).map(|j| w[j] * beta[(i, j)]).sum::<f64>() > tol)
}

/// All three verdicts with default thresholds.
pub fn analyze(disc: &Discretization) -> IrreducibilityReport {
    let tol = default_beta_tol(disc);
    let (semigroup, witness_alpha) = semigroup_irreducible(disc, tol);
    let k = build_l_lambda(disc, 0.0);
    let (grid_ok, witness_component) = l_irreducible_grid(&k, default_kernel_tol(&k));
    let x0 = 1.0 - disc.grid().spacing();
    IrreducibilityReport {
        semigroup_irreducible: semigroup,
        l_irreducible_grid: grid_ok,
        l_sufficient: l_sufficient(disc, tol),
        witness_alpha,
        witness_component,
        r_trace: r_iteration(disc, x0, disc.grid().len(), tol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_model, ModelSpec, VitalRates};

    fn disc(model: VitalRates, n: usize) -> Discretization {
        Discretization::new(model, n).unwrap()
    }

    fn builtin(name: &str) -> Discretization {
        disc(load_model(&ModelSpec::builtin(name, &[])).unwrap(), 200)
    }

    fn ones() -> Discretization {
        disc(VitalRates::new("ones", |_, _| 1.0, |_| 0.0, |_| 1.0, None).unwrap(), 100)
    }

    fn brute_force_r(disc: &Discretization, x: f64, tol: f64) -> f64 {
        let nodes = disc.grid().nodes();
        let mut best = 1.0f64;
        for (i, s) in nodes.iter().enumerate() {
            for (j, t) in nodes.iter().enumerate() {
                if *t >= x - 1e-12 && disc.beta_matrix()[(i, j)] > tol {
                    best = best.min(*s);
                }
            }
        }
        best
    }

    #[test]
    fn constant_kernel_is_irreducible_everywhere() {
        let r = analyze(&ones());
        assert!(r.semigroup_irreducible && r.l_irreducible_grid && r.l_sufficient);
        assert_eq!(r.witness_alpha, None);
        let d = ones();
        assert_eq!(compute_r(&d, 0.7, 0.0), 0.0);
        assert_eq!(r_iteration(&d, 0.9, 10, 0.0), vec![0.9, 0.0, 0.0]);
    }

    #[test]
    fn rectangle_separates_the_criteria() {
        let d = builtin("rectangle");
        let r = analyze(&d);
        assert!(r.semigroup_irreducible);
        assert!(!r.l_irreducible_grid);
        assert!(!r.l_sufficient);
        let tol = default_beta_tol(&d);
        for x in [0.0, 0.3, 0.9, 0.995] {
            assert!(compute_r(&d, x, tol) <= d.grid().spacing());
        }
    }

    #[test]
    fn block_is_reducible() {
        let d = builtin("block");
        let r = analyze(&d);
        assert!(!r.semigroup_irreducible && !r.l_irreducible_grid && !r.l_sufficient);
        let alpha = r.witness_alpha.unwrap();
        assert!((alpha - 0.5).abs() <= d.grid().spacing());
        let last = *r.r_trace.last().unwrap();
        assert!(last >= 0.5, "{:?}", r.r_trace);
        assert!(r.witness_component.is_some());
    }

    #[test]
    fn corner_satisfies_semigroup_condition() {
        let d = builtin("corner");
        let (ok, _) = semigroup_irreducible(&d, default_beta_tol(&d));
        assert!(ok);
    }

    #[test]
    fn ramp_kernel_is_sufficient() {
        let d = disc(VitalRates::new("ramp", |s, y| (y - s).max(0.0), |_| 0.0, |_| 1.0, None).unwrap(), 100);
        assert!(l_sufficient(&d, default_beta_tol(&d)));
    }

    #[test]
    fn r_matches_brute_force_and_decreases() {
        for name in ["constant", "corner", "rectangle", "block"] {
            let d = disc(load_model(&ModelSpec::builtin(name, &[])).unwrap(), 50);
            let tol = default_beta_tol(&d);
            for x in d.grid().nodes().iter().take(50) {
                assert_eq!(compute_r(&d, *x, tol), brute_force_r(&d, *x, tol), "{name} x={x}");
            }
            let trace = r_iteration(&d, 0.98, 100, tol);
            assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn semigroup_verdict_matches_r_iteration() {
        for name in ["constant", "corner", "rectangle", "block"] {
            let d = builtin(name);
            let r = analyze(&d);
            let reaches_bottom = *r.r_trace.last().unwrap() <= d.grid().spacing();
            assert_eq!(r.semigroup_irreducible, reaches_bottom, "{name}");
        }
    }
}
