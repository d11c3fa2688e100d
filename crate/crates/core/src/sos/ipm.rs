//! Primal-dual interior-point method for the conic form produced by
//! [`compile`](super::compile()).
//!
//! Primal: `min cᵀu  s.t.  A_f u + 𝒜(X) = b,  X_k ⪰ 0`, `u` free.
//! Dual:   `max bᵀy  s.t.  A_fᵀ y = c,  Z_k = −𝒜_kᵀ(y) ⪰ 0`.
//!
//! Search direction is HKM with Mehrotra's predictor-corrector. The Newton
//! system is solved in augmented form `[M A_f; A_fᵀ 0]` so free variables need
//! no splitting. Rows are scaled to unit norm first.

use std::collections::HashMap;

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::compile::ConicProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    /// Relative primal/dual infeasibility, and the Gram eigenvalue floor.
    pub feas: f64,
    /// Relative duality gap.
    pub gap: f64,
    /// Post-hoc coefficient residual accepted by the certificate check.
    pub residual: f64,
    pub max_iterations: usize,
    /// Gram margin a feasibility solve must reach to count as feasible.
    #[serde(default)]
    pub min_margin: f64,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        SolverTolerances { feas: 1e-8, gap: 1e-8, residual: 1e-6, max_iterations: 100, min_margin: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub free: Vec<f64>,
    pub blocks: Vec<DMatrix<f64>>,
    /// Multipliers of the (unscaled) equality rows.
    pub dual: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
}

/// Narrow backend contract: a conic problem in, a status and point out.
/// Failures are reported through the status, never by panicking.
pub trait ConicBackend {
    fn solve(&self, problem: &ConicProblem, tol: &SolverTolerances) -> ConicSolution;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct InteriorPoint;

/// Entry `(a, b, w)` of a scaled constraint matrix: `w·(E_ab + E_ba)`.
type Entry = (usize, usize, f64);

struct Prepared {
    m: usize,
    nf: usize,
    dims: Vec<usize>,
    af: DMatrix<f64>,
    block_rows: Vec<Vec<(usize, Vec<Entry>)>>,
    b: DVector<f64>,
    c: DVector<f64>,
    scale: Vec<f64>,
}

impl Prepared {
    fn new(p: &ConicProblem) -> Self {
        let m = p.rows.len();
        let nf = p.n_free;
        let dims: Vec<usize> = p.blocks.iter().map(|b| b.dim).collect();
        let mut af = DMatrix::zeros(m, nf);
        let mut block_rows: Vec<Vec<(usize, Vec<Entry>)>> = vec![Vec::new(); dims.len()];
        let mut b = DVector::zeros(m);
        let mut scale = vec![1.0; m];
        for (i, row) in p.rows.iter().enumerate() {
            let mut norm2: f64 = row.free.iter().map(|(_, v)| v * v).sum();
            norm2 += row.psd.iter().map(|&(_, a, bb, v)| if a == bb { v * v } else { 0.5 * v * v }).sum::<f64>();
            let s = if norm2 > 0.0 { 1.0 / norm2.sqrt() } else { 1.0 };
            scale[i] = s;
            for &(j, v) in &row.free {
                af[(i, j)] += v * s;
            }
            let mut per_block: Vec<(usize, Vec<Entry>)> = Vec::new();
            for &(k, a, bb, v) in &row.psd {
                let (a, bb) = if a <= bb { (a, bb) } else { (bb, a) };
                let e = (a, bb, 0.5 * v * s);
                match per_block.iter_mut().find(|(kk, _)| *kk == k) {
                    Some((_, list)) => list.push(e),
                    None => per_block.push((k, vec![e])),
                }
            }
            for (k, mut list) in per_block {
                list.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
                list.dedup_by(|later, earlier| {
                    if (later.0, later.1) == (earlier.0, earlier.1) {
                        earlier.2 += later.2;
                        true
                    } else {
                        false
                    }
                });
                block_rows[k].push((i, list));
            }
            b[i] = row.rhs * s;
        }
        let mut c = DVector::zeros(nf);
        for &(j, v) in &p.objective {
            c[j] += v;
        }
        Prepared { m, nf, dims, af, block_rows, b, c, scale }
    }

    /// Cholesky factor of `𝒜𝒜ᵀ + A_f A_fᵀ`, used to pull Newton directions back
    /// onto the primal equality constraints.
    fn row_gram(&self) -> Option<Cholesky<f64, nalgebra::Dyn>> {
        let mut by_entry: HashMap<(usize, usize, usize), Vec<(usize, f64)>> = HashMap::new();
        for (k, rows) in self.block_rows.iter().enumerate() {
            for (i, entries) in rows {
                for &(a, b, w) in entries {
                    let w = if a == b { 2.0 * w } else { std::f64::consts::SQRT_2 * w };
                    by_entry.entry((k, a, b)).or_default().push((*i, w));
                }
            }
        }
        let mut g = &self.af * self.af.transpose();
        for list in by_entry.values() {
            for &(i, wi) in list {
                for &(j, wj) in list {
                    g[(i, j)] += wi * wj;
                }
            }
        }
        let diag_max = (0..self.m).map(|i| g[(i, i)]).fold(0.0, f64::max).max(1.0);
        for i in 0..self.m {
            g[(i, i)] += 1e-12 * diag_max;
        }
        Cholesky::new(g)
    }

    /// 𝒜(X) for symmetric `X`.
    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (k, rows) in self.block_rows.iter().enumerate() {
            let xk = &x[k];
            for (i, entries) in rows {
                out[*i] += entries.iter().map(|&(a, b, w)| 2.0 * w * xk[(a, b)]).sum::<f64>();
            }
        }
        out
    }

    /// 𝒜ᵀ(y), one matrix per block.
    fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.block_rows
            .iter()
            .zip(&self.dims)
            .map(|(rows, &n)| {
                let mut s = DMatrix::zeros(n, n);
                for (i, entries) in rows {
                    let yi = y[*i];
                    for &(a, b, w) in entries {
                        s[(a, b)] += w * yi;
                        s[(b, a)] += w * yi;
                    }
                }
                s
            })
            .collect()
    }

    /// Schur complement `M_ij = Σ_k ⟨A_ik, X_k A_jk Z_k⁻¹⟩`.
    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut mm = DMatrix::zeros(self.m, self.m);
        for (k, rows) in self.block_rows.iter().enumerate() {
            let n = self.dims[k];
            let xs = x[k].as_slice();
            let ys = zinv[k].as_slice();
            let xa = |r: usize, c: usize| xs[c * n + r];
            let ya = |r: usize, c: usize| ys[c * n + r];
            for (p, (i, ei)) in rows.iter().enumerate() {
                for (j, ej) in &rows[p..] {
                    let mut acc = 0.0;
                    for &(a, b, wi) in ei {
                        let mut inner = 0.0;
                        for &(c, d, wj) in ej {
                            inner += wj
                                * (xa(b, c) * ya(d, a) + xa(b, d) * ya(c, a) + xa(a, c) * ya(d, b) + xa(a, d) * ya(c, b));
                        }
                        acc += wi * inner;
                    }
                    mm[(*i, *j)] += acc;
                    if i != j {
                        mm[(*j, *i)] += acc;
                    }
                }
            }
        }
        mm
    }
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Largest `α` keeping `X + α ΔX ⪰ 0`, given the Cholesky factor of `X`.
fn max_step(chol: &Cholesky<f64, nalgebra::Dyn>, dx: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let Some(t) = l.solve_lower_triangular(dx) else { return 0.0 };
    let Some(s) = l.solve_lower_triangular(&t.transpose()) else { return 0.0 };
    let lam = SymmetricEigen::new(sym(&s)).eigenvalues.min();
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

struct Iterate {
    u: DVector<f64>,
    y: DVector<f64>,
    x: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
}

#[derive(Clone, Copy)]
struct Measures {
    pobj: f64,
    dobj: f64,
    pinf: f64,
    dinf: f64,
    gap: f64,
}

impl InteriorPoint {
    fn measures(pr: &Prepared, it: &Iterate) -> (Measures, DVector<f64>, Vec<DMatrix<f64>>, DVector<f64>) {
        let rp = &pr.b - &pr.af * &it.u - pr.apply(&it.x);
        let aty = pr.adjoint(&it.y);
        let rd: Vec<DMatrix<f64>> = it.z.iter().zip(&aty).map(|(z, a)| -(z + a)).collect();
        let rf = &pr.c - pr.af.transpose() * &it.y;
        let pobj = pr.c.dot(&it.u);
        let dobj = pr.b.dot(&it.y);
        let rd_norm = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt();
        let meas = Measures {
            pobj,
            dobj,
            pinf: rp.norm() / (1.0 + pr.b.norm()),
            dinf: (rd_norm + rf.norm()) / (1.0 + pr.c.norm()),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        };
        (meas, rp, rd, rf)
    }

    fn finish(pr: &Prepared, it: &Iterate, status: SolveStatus, meas: Measures, iterations: usize) -> ConicSolution {
        ConicSolution {
            status,
            free: it.u.iter().copied().collect(),
            blocks: it.x.clone(),
            dual: it.y.iter().zip(&pr.scale).map(|(y, s)| y * s).collect(),
            primal_objective: meas.pobj,
            dual_objective: meas.dobj,
            primal_infeasibility: meas.pinf,
            dual_infeasibility: meas.dinf,
            iterations,
        }
    }
}

impl ConicBackend for InteriorPoint {
    fn solve(&self, problem: &ConicProblem, tol: &SolverTolerances) -> ConicSolution {
        let pr = Prepared::new(problem);
        let (m, nf) = (pr.m, pr.nf);
        let ntot: usize = pr.dims.iter().sum::<usize>().max(1);

        let mut it = Iterate {
            u: DVector::zeros(nf),
            y: DVector::zeros(m),
            x: Vec::with_capacity(pr.dims.len()),
            z: Vec::with_capacity(pr.dims.len()),
        };
        for (k, &n) in pr.dims.iter().enumerate() {
            let mut xi: f64 = 10f64.max((n as f64).sqrt());
            let mut eta: f64 = 10f64.max((n as f64).sqrt());
            for (i, entries) in &pr.block_rows[k] {
                let fro = entries.iter().map(|&(a, b, w)| if a == b { 4.0 * w * w } else { 2.0 * w * w }).sum::<f64>().sqrt();
                xi = xi.max(n as f64 * (1.0 + pr.b[*i].abs()) / (1.0 + fro));
                eta = eta.max(fro);
            }
            it.x.push(DMatrix::identity(n, n) * xi);
            it.z.push(DMatrix::identity(n, n) * eta);
        }

        let row_gram = pr.row_gram();
        let mu0 = inner(&it.x, &it.z) / ntot as f64;
        for iter in 0..tol.max_iterations {
            let (meas, rp, rd, rf) = Self::measures(&pr, &it);
            let mu = inner(&it.x, &it.z) / ntot as f64;
            debug!(
                "ipm {iter:3} pobj {:+.6e} dobj {:+.6e} pinf {:.1e} dinf {:.1e} gap {:.1e} mu {:.1e}",
                meas.pobj, meas.dobj, meas.pinf, meas.dinf, meas.gap, mu
            );
            if !(meas.pobj.is_finite() && meas.dobj.is_finite() && mu.is_finite()) {
                return Self::finish(&pr, &it, SolveStatus::NumericalFailure, meas, iter);
            }
            if meas.pinf <= tol.feas && meas.dinf <= tol.feas && meas.gap <= tol.gap {
                return Self::finish(&pr, &it, SolveStatus::Optimal, meas, iter);
            }
            if let Some(t) = problem.feasibility_margin {
                // A positive margin at a nearly feasible point settles
                // feasibility; the certificate layer projects the Gram
                // matrices onto the equality constraints and re-checks them.
                if meas.pinf <= 1e2 * tol.feas && it.u[t] > tol.min_margin {
                    return Self::finish(&pr, &it, SolveStatus::Optimal, meas, iter);
                }
                // The dual objective bounds the margin from above: `t ≤ −dobj`.
                if meas.dinf <= tol.feas && -meas.dobj < tol.min_margin - 1e3 * tol.feas {
                    return Self::finish(&pr, &it, SolveStatus::Infeasible, meas, iter);
                }
            }

            if iter > 0 && mu < 1e-14 * mu0 {
                let near = meas.pinf <= 1e2 * tol.feas && meas.dinf <= 1e2 * tol.feas && meas.gap <= 1e3 * tol.gap;
                let status = if near { SolveStatus::Optimal } else { SolveStatus::NumericalFailure };
                return Self::finish(&pr, &it, status, meas, iter);
            }

            let failed = |it: &Iterate| {
                let near = meas.pinf <= 1e2 * tol.feas && meas.dinf <= 1e2 * tol.feas && meas.gap <= 1e3 * tol.gap;
                let status = if near { SolveStatus::Optimal } else { SolveStatus::NumericalFailure };
                Self::finish(&pr, it, status, meas, iter)
            };

            let mut zinv = Vec::with_capacity(it.z.len());
            let mut xchol = Vec::with_capacity(it.x.len());
            let mut zchol = Vec::with_capacity(it.z.len());
            for (x, z) in it.x.iter().zip(&it.z) {
                let (Some(cx), Some(cz)) = (Cholesky::new(x.clone()), Cholesky::new(z.clone())) else {
                    return failed(&it);
                };
                zinv.push(sym(&cz.inverse()));
                xchol.push(cx);
                zchol.push(cz);
            }

            let mut kkt = DMatrix::zeros(m + nf, m + nf);
            let schur = pr.schur(&it.x, &zinv);
            let diag_max = (0..m).map(|i| schur[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
            kkt.view_mut((0, 0), (m, m)).copy_from(&schur);
            kkt.view_mut((0, m), (m, nf)).copy_from(&pr.af);
            kkt.view_mut((m, 0), (nf, m)).copy_from(&pr.af.transpose());
            // Tiny quasi-definite shift guards against dependent rows; refinement
            // below undoes its effect on the solution.
            let mut shifted = kkt.clone();
            for i in 0..m {
                shifted[(i, i)] += 1e-14 * diag_max;
            }
            for j in 0..nf {
                shifted[(m + j, m + j)] -= 1e-14 * diag_max;
            }
            let lu = shifted.lu();

            // Solve for (Δy, Δu, ΔZ, ΔX) given the complementarity target
            // `XZ + ΔX Z + X ΔZ = σμI − corr`.
            let direction = |sigma_mu: f64, corr: Option<&[DMatrix<f64>]>| -> Option<(DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
                let base: Vec<DMatrix<f64>> = (0..it.x.len())
                    .map(|k| {
                        let mut g = &zinv[k] * sigma_mu - &it.x[k];
                        if let Some(cr) = corr {
                            g -= &cr[k] * &zinv[k];
                        }
                        g
                    })
                    .collect();
                let g: Vec<DMatrix<f64>> =
                    (0..it.x.len()).map(|k| sym(&(&base[k] - &it.x[k] * &rd[k] * &zinv[k]))).collect();
                let h = &rp - pr.apply(&g);
                let mut rhs = DVector::zeros(m + nf);
                rhs.rows_mut(0, m).copy_from(&h);
                rhs.rows_mut(m, nf).copy_from(&rf);
                let mut sol = lu.solve(&rhs)?;
                let rnorm = rhs.amax().max(1e-300);
                for _ in 0..5 {
                    let resid = &rhs - &kkt * &sol;
                    if resid.amax() <= 1e-15 * rnorm {
                        break;
                    }
                    match lu.solve(&resid) {
                        Some(fix) => sol += fix,
                        None => break,
                    }
                }
                if sol.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                let dy = sol.rows(0, m).into_owned();
                let du = sol.rows(m, nf).into_owned();
                let atdy = pr.adjoint(&dy);
                let dz: Vec<DMatrix<f64>> = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
                let mut dx: Vec<DMatrix<f64>> =
                    (0..it.x.len()).map(|k| sym(&(&base[k] - &it.x[k] * &dz[k] * &zinv[k]))).collect();
                let mut du = du;
                if let Some(g) = &row_gram {
                    let r = &rp - pr.apply(&dx) - &pr.af * &du;
                    let lam = g.solve(&r);
                    if lam.iter().all(|v| v.is_finite()) {
                        for (d, a) in dx.iter_mut().zip(pr.adjoint(&lam)) {
                            *d += a;
                        }
                        du += pr.af.transpose() * &lam;
                    }
                }
                Some((dy, du, dz, dx))
            };

            let steps = |dx: &[DMatrix<f64>], dz: &[DMatrix<f64>]| -> (f64, f64) {
                let ap = xchol.iter().zip(dx).map(|(c, d)| max_step(c, d)).fold(f64::INFINITY, f64::min);
                let ad = zchol.iter().zip(dz).map(|(c, d)| max_step(c, d)).fold(f64::INFINITY, f64::min);
                (ap, ad)
            };

            let Some((_, _, dz_a, dx_a)) = direction(0.0, None) else { return failed(&it) };
            let (ap_a, ad_a) = steps(&dx_a, &dz_a);
            let (ap_a, ad_a) = (ap_a.min(1.0), ad_a.min(1.0));
            let xa: Vec<DMatrix<f64>> = it.x.iter().zip(&dx_a).map(|(x, d)| x + d * ap_a).collect();
            let za: Vec<DMatrix<f64>> = it.z.iter().zip(&dz_a).map(|(z, d)| z + d * ad_a).collect();
            let mu_aff = inner(&xa, &za) / ntot as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let corr: Vec<DMatrix<f64>> = dx_a.iter().zip(&dz_a).map(|(a, b)| a * b).collect();

            let Some((dy, du, dz, dx)) = direction(sigma * mu, Some(&corr)) else { return failed(&it) };
            let (ap, ad) = steps(&dx, &dz);
            let gamma = 0.9;
            let ap = (gamma * ap).min(1.0);
            let ad = (gamma * ad).min(1.0);
            if ap < 1e-12 && ad < 1e-12 {
                return failed(&it);
            }
            for (x, d) in it.x.iter_mut().zip(&dx) {
                *x += d * ap;
            }
            it.u += du * ap;
            for (z, d) in it.z.iter_mut().zip(&dz) {
                *z += d * ad;
            }
            it.y += dy * ad;
        }
        let (meas, ..) = Self::measures(&pr, &it);
        let near = meas.pinf <= 1e2 * tol.feas && meas.dinf <= 1e2 * tol.feas && meas.gap <= 1e3 * tol.gap;
        let status = if near { SolveStatus::Optimal } else { SolveStatus::MaxIterations };
        Self::finish(&pr, &it, status, meas, tol.max_iterations)
    }
}
