//! Coarse grid stage: scans of the concentrated objective and candidate target sets.

use itertools::Itertools;
use rayon::prelude::*;

use crate::error::Result;
use crate::scenario::TargetState;
use crate::signal::{ColumnModel, SteeringContext};

use super::{residual, stats_from_columns, GridSpec, Observation};

/// Columns of already placed targets on one path.
struct FixedPath {
    cols: Vec<ColumnModel>,
}

/// Concentrated objective (mean squared residual) over the grid for one added target,
/// with the `fixed` targets held in place. Index `ix * ny + iy`; infeasible points give `+inf`.
pub(crate) fn scan(
    ctx: &SteeringContext<'_>,
    obs: &[Observation<'_>],
    grid: &GridSpec,
    fixed: &[TargetState],
    template: &TargetState,
) -> Result<Vec<f64>> {
    let xs = grid.axis(0);
    let ys = grid.axis(1);
    let fixed_paths = obs
        .iter()
        .map(|o| {
            Ok(FixedPath {
                cols: ctx.columns(o.k, o.l, fixed, false)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = ctx.samples();
    let total = (ctx.snapshot_len() * obs.len()) as f64;
    let points: Vec<(f64, f64)> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect();
    Ok(points
        .par_iter()
        .map(|&(x, y)| {
            let mut t = *template;
            t.position = [x, y];
            let mut acc = 0.0;
            for (o, fp) in obs.iter().zip(&fixed_paths) {
                let Ok(col) = ctx.column(o.k, o.l, &t, false) else {
                    return f64::INFINITY;
                };
                let mut cols = fp.cols.clone();
                cols.push(col);
                match residual(&stats_from_columns(o, &cols, n)) {
                    Ok(r) => acc += r,
                    Err(_) => return f64::INFINITY,
                }
            }
            acc / total
        })
        .collect())
}

/// Local minima of a scan (8-neighborhood), best first; equal values resolve to the lower index.
pub fn local_minima(values: &[f64], nx: usize, ny: usize, count: usize) -> Vec<usize> {
    let at = |ix: usize, iy: usize| values[ix * ny + iy];
    let mut minima: Vec<usize> = Vec::new();
    for ix in 0..nx {
        for iy in 0..ny {
            let v = at(ix, iy);
            if !v.is_finite() {
                continue;
            }
            let idx = ix * ny + iy;
            let mut is_min = true;
            'nb: for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                    if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                        continue;
                    }
                    let j = jx as usize * ny + jy as usize;
                    let w = values[j];
                    if w < v || (w == v && j < idx) {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if is_min {
                minima.push(idx);
            }
        }
    }
    minima.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    minima.truncate(count);
    minima
}

fn point(grid: &GridSpec, ny: usize, idx: usize) -> [f64; 2] {
    let c = grid.center;
    [
        c[0] - grid.half_width + (idx / ny) as f64 * grid.step,
        c[1] - grid.half_width + (idx % ny) as f64 * grid.step,
    ]
}

/// Candidate position sets: every combination of the best single-target minima, plus a
/// greedy pass that places targets one at a time with the earlier ones held fixed.
pub(crate) fn candidate_sets(
    ctx: &SteeringContext<'_>,
    obs: &[Observation<'_>],
    grid: &GridSpec,
    base: &[TargetState],
    peaks: usize,
) -> Result<Vec<Vec<[f64; 2]>>> {
    let q = base.len();
    let nx = grid.axis(0).len();
    let ny = grid.axis(1).len();
    let first = scan(ctx, obs, grid, &[], &base[0])?;
    let mut minima = local_minima(&first, nx, ny, peaks.max(q));
    if minima.len() < q {
        // too few distinct minima: pad with the best remaining grid points
        let mut order: Vec<usize> = (0..first.len()).filter(|i| first[*i].is_finite()).collect();
        order.sort_by(|&a, &b| first[a].total_cmp(&first[b]).then(a.cmp(&b)));
        for i in order {
            if minima.len() >= q {
                break;
            }
            if !minima.contains(&i) {
                minima.push(i);
            }
        }
    }
    let mut sets: Vec<Vec<[f64; 2]>> = minima
        .iter()
        .combinations(q.min(minima.len()))
        .map(|c| c.into_iter().map(|&i| point(grid, ny, i)).collect())
        .collect();

    let mut greedy: Vec<TargetState> = Vec::with_capacity(q);
    for (t, template) in base.iter().enumerate() {
        let vals = if t == 0 {
            first.clone()
        } else {
            scan(ctx, obs, grid, &greedy, template)?
        };
        let best = (0..vals.len())
            .filter(|i| vals[*i].is_finite())
            .min_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        let Some(best) = best else { break };
        let mut placed = *template;
        placed.position = point(grid, ny, best);
        greedy.push(placed);
    }
    if greedy.len() == q {
        sets.push(greedy.iter().map(|t| t.position).collect());
    }
    Ok(sets)
}
